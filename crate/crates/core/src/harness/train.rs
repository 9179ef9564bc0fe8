use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{load_data, Split, TrainConfig};
use super::optim::Sgd;
use crate::data::{ConceptGraph, FeaturePanel};
use crate::error::{MtmdError, Result};
use crate::metrics::{aggregate, DailyScore, MetricReport};
use crate::model::{MemoryBanks, Mode, Model};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_ic: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters and banks of the best validation epoch.
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
}

/// One pass over `dates` in the given order. Returns the mean loss.
pub fn run_epoch(
    model: &mut Model,
    opt: &mut Sgd,
    panel: &FeaturePanel,
    graph: &ConceptGraph,
    dates: &[usize],
) -> Result<f64> {
    let mut total = 0.0;
    for &d in dates {
        let slice = &panel.dates[d];
        let step = model.train_step(slice, &graph.dates[d], true)?;
        if !step.loss.is_finite() {
            return Err(MtmdError::Numeric(format!("non-finite loss on {}", slice.date)));
        }
        let grads = step.gradients.into_params();
        if grads.values().any(|g| g.data().iter().any(|x| !x.is_finite())) {
            return Err(MtmdError::Numeric(format!("non-finite gradient on {}", slice.date)));
        }
        opt.step(&mut model.params, &grads)?;
        total += step.loss;
    }
    Ok(if dates.is_empty() { 0.0 } else { total / dates.len() as f64 })
}

/// Scores every date in `range`. With `write_memory` the banks of `model`
/// keep updating as the dates are scored.
pub fn score_range(
    model: &mut Model,
    panel: &FeaturePanel,
    graph: &ConceptGraph,
    range: Range<usize>,
    write_memory: bool,
) -> Result<MetricReport> {
    let mut daily = Vec::with_capacity(range.len());
    for d in range {
        let slice = &panel.dates[d];
        let pred = if write_memory {
            model.forward(slice, &graph.dates[d], Mode::Train)?.predictions
        } else {
            model.predict(slice, &graph.dates[d])?
        };
        if pred.iter().any(|p| !p.is_finite()) {
            return Err(MtmdError::Numeric(format!("non-finite prediction on {}", slice.date)));
        }
        daily.push(DailyScore::score(slice.date, &pred, &slice.labels, &slice.raw_returns)?);
    }
    aggregate(&daily)
}

/// Full training run on an already loaded panel.
pub fn train_on(cfg: &TrainConfig, panel: &FeaturePanel, graph: &ConceptGraph) -> Result<TrainOutcome> {
    cfg.validate()?;
    let split = cfg.split.resolve(panel)?;
    if split.train.is_empty() {
        return Err(MtmdError::Config("training split is empty".into()));
    }
    let model_cfg = cfg.model_config();
    let mut model = Model::new(model_cfg.clone())?;
    let mut opt = Sgd::new(cfg.learning_rate, cfg.momentum);
    let order: Vec<usize> = split.train.clone().collect();

    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    for epoch in 0..cfg.epochs {
        if cfg.reset_banks_each_epoch {
            model.banks = MemoryBanks::init(&model_cfg)?;
        }
        let train_loss = run_epoch(&mut model, &mut opt, panel, graph, &order)?;
        let valid_ic = if split.valid.is_empty() {
            None
        } else {
            let mut probe = model.clone();
            let report = score_range(&mut probe, panel, graph, split.valid.clone(), cfg.memory_writes_in_eval)?;
            Some(report.ic.mean)
        };
        log.push(EpochLog {
            epoch,
            train_loss,
            valid_ic,
        });

        // Without a validation split the last epoch wins.
        let score = valid_ic.unwrap_or(f64::NEG_INFINITY);
        match &best {
            Some((b, _, _)) if score <= *b && valid_ic.is_some() => {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
            _ => {
                best = Some((score, epoch, model.clone()));
                stale = 0;
            }
        }
    }

    let (score, epoch, best_model) = match best {
        Some(b) => b,
        None => (f64::NEG_INFINITY, 0, model),
    };
    let mut checkpoint = Checkpoint::new(best_model, Some(cfg.clone()));
    checkpoint.meta.epoch = Some(epoch);
    checkpoint.meta.valid_ic = score.is_finite().then_some(score);
    Ok(TrainOutcome { checkpoint, log })
}

pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    let (panel, graph) = load_data(&cfg.data)?;
    train_on(cfg, &panel, &graph)
}

/// Scores one split of the checkpoint's own data. Banks stay frozen unless
/// the run was configured to write them during evaluation.
pub fn evaluate(checkpoint: &Checkpoint, split: Split) -> Result<MetricReport> {
    let cfg = checkpoint
        .meta
        .train
        .as_ref()
        .ok_or_else(|| MtmdError::Checkpoint("checkpoint carries no training config".into()))?;
    let (panel, graph) = load_data(&cfg.data)?;
    evaluate_on(checkpoint, cfg, &panel, &graph, split)
}

pub fn evaluate_on(
    checkpoint: &Checkpoint,
    cfg: &TrainConfig,
    panel: &FeaturePanel,
    graph: &ConceptGraph,
    split: Split,
) -> Result<MetricReport> {
    let range = cfg.split.resolve(panel)?.get(split);
    if range.is_empty() {
        return Err(MtmdError::Data(format!("split {split:?} has no dates")));
    }
    let mut model = checkpoint.model.clone();
    score_range(&mut model, panel, graph, range, cfg.memory_writes_in_eval)
}
