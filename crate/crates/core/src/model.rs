//! The doubly residual forward pass, regressor and loss.
//!
//! ```text
//! h1 = GRU(x)
//! ĥ1 = predefined stage(h1)      q1 = memory(ĥ1) or ĥ1     h2 = h1 − q1
//! ĥ2 = hidden stage(h2)          q2 = memory(ĥ2) or ĥ2     h3 = h2 − q2
//! ĥ3 = individual(h3)
//! yθ = LeakyReLU(ĥθ·W_f + b_f)   p̂ = (y1 + y2 + y3)·W_p + b_p
//! ```
//!
//! Memory writes happen after the date's forward pass and outside the tape.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::concepts::{
    self, assign_hidden, correct_predefined, hidden_embeddings, init_linear, init_predefined,
    local_aggregate, predefined_stock_links, Linear, Stage,
};
use crate::data::{DateGraph, DateSlice, FIELDS};
use crate::encoder::{encode_panel, init_encoder_params};
use crate::error::{MtmdError, Result};
use crate::memory::{global_aggregate, memorize, MemoryBank, RetrievalState};
use crate::numerics::{Gradients, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::params::{ParamVars, ParameterSet};

/// Which concept stages route through a memory bank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MemorySwitches {
    pub predefined: bool,
    pub hidden: bool,
}

/// The four ablation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Ablation {
    /// No memory (baseline).
    B,
    /// Predefined stage only.
    P,
    /// Hidden stage only.
    H,
    /// Both stages.
    A,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::B, Ablation::P, Ablation::H, Ablation::A];

    pub fn switches(self) -> MemorySwitches {
        match self {
            Ablation::B => MemorySwitches { predefined: false, hidden: false },
            Ablation::P => MemorySwitches { predefined: true, hidden: false },
            Ablation::H => MemorySwitches { predefined: false, hidden: true },
            Ablation::A => MemorySwitches { predefined: true, hidden: true },
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Ablation::B => "B",
            Ablation::P => "P",
            Ablation::H => "H",
            Ablation::A => "A",
        }
    }
}

fn default_layers() -> usize {
    2
}

fn default_slope() -> f64 {
    LEAKY_SLOPE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Embedding width `L`.
    pub width: usize,
    /// Memory items `K`.
    pub memory_items: usize,
    /// Expected concept count; checked against each date's graph when set.
    #[serde(default)]
    pub n_concepts: Option<usize>,
    #[serde(default = "default_layers")]
    pub layers: usize,
    #[serde(default)]
    pub memory: MemorySwitches,
    #[serde(default = "default_slope")]
    pub leaky_slope: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            width: 64,
            memory_items: 16,
            n_concepts: None,
            layers: 2,
            memory: Ablation::A.switches(),
            leaky_slope: LEAKY_SLOPE,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Full-scale setting: `L = 128`, 64 memory items.
    pub fn full_scale() -> Self {
        ModelConfig {
            width: 128,
            memory_items: 64,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.memory_items == 0 || self.layers == 0 {
            return Err(MtmdError::Config("width, memory_items and layers must be >= 1".into()));
        }
        if !(self.leaky_slope.is_finite()) {
            return Err(MtmdError::Config("leaky_slope must be finite".into()));
        }
        Ok(())
    }
}

/// Names under which banks appear in checkpoints.
pub const BANK_PREDEFINED: &str = "memory.predefined";
pub const BANK_HIDDEN: &str = "memory.hidden";

/// One bank per concept stage. Both always exist so that switching a stage
/// on or off never changes the random draws of the other.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBanks {
    pub predefined: MemoryBank,
    pub hidden: MemoryBank,
}

impl MemoryBanks {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        Ok(MemoryBanks {
            predefined: MemoryBank::init(
                config.memory_items,
                config.width,
                config.seed.wrapping_add(1),
                Stage::Predefined,
            )?,
            hidden: MemoryBank::init(
                config.memory_items,
                config.width,
                config.seed.wrapping_add(2),
                Stage::Hidden,
            )?,
        })
    }
}

/// Every learnable tensor of the model, deterministic per `config.seed`.
pub fn init_params(config: &ModelConfig) -> ParameterSet {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let l = config.width;
    let mut set = init_encoder_params(&mut rng, FIELDS, l, config.layers);
    set.extend(concepts::init_module_params(&mut rng, l));
    init_linear(&mut set, &mut rng, "regressor.forecast", l, l);
    init_linear(&mut set, &mut rng, "regressor.output", l, 1);
    set
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardVars {
    pub h1: Var,
    pub h2: Var,
    pub h3: Var,
    pub hhat1: Var,
    pub hhat2: Var,
    pub hhat3: Var,
    pub q1: Var,
    pub q2: Var,
    pub y: [Var; 3],
    pub predictions: Var,
    /// Soft-link weights of the predefined correction, `[N_s × N_c]`.
    pub soft_links: Var,
    pub gamma1: Var,
    pub gamma2: Var,
    pub retrieval1: Option<RetrievalState>,
    pub retrieval2: Option<RetrievalState>,
    pub hidden_argmax: Vec<usize>,
    pub hidden_members: Vec<Vec<usize>>,
    pub links1: Vec<Vec<usize>>,
}

/// Banks as tape leaves. Constants for training; variables when a test wants
/// their gradients.
#[derive(Debug, Clone, Copy)]
pub struct BankVars {
    pub predefined: Var,
    pub hidden: Var,
}

impl BankVars {
    pub fn constants(tape: &mut Tape, banks: &MemoryBanks) -> Self {
        BankVars {
            predefined: banks.predefined.on_tape(tape),
            hidden: banks.hidden.on_tape(tape),
        }
    }
}

/// Builds the forward graph of one date on `tape`.
pub fn forward_graph(
    tape: &mut Tape,
    vars: &ParamVars,
    banks: BankVars,
    slice: &DateSlice,
    graph: &DateGraph,
    config: &ModelConfig,
) -> Result<ForwardVars> {
    let n = slice.n_stocks();
    let nc = graph.n_concepts();
    if nc == 0 {
        return Err(MtmdError::Contract(format!(
            "date {} has no concepts; the concept stages need N_c >= 1",
            slice.date
        )));
    }
    if let Some(expected) = config.n_concepts {
        if expected != nc {
            return Err(MtmdError::Contract(format!(
                "date {} has {nc} concepts, config expects {expected}",
                slice.date
            )));
        }
    }
    if let Some(&(s, c)) = graph.links.iter().find(|&&(s, c)| s >= n || c >= nc) {
        return Err(MtmdError::Contract(format!("link ({s},{c}) out of range")));
    }
    let slope = config.leaky_slope;

    let x = tape.constant(slice.features.clone());
    let h1 = encode_panel(tape, x, vars, config.width, config.layers)?;

    // Predefined concepts.
    let e_init = init_predefined(tape, h1, graph, &slice.market_caps)?;
    let correct1 = Linear::from_vars(vars, "predefined.correct")?;
    let (e1, soft_links) = correct_predefined(tape, h1, &e_init, &correct1, slope)?;
    let links1 = predefined_stock_links(graph, n);
    let local1 = Linear::from_vars(vars, "predefined.local")?;
    let stage1 = local_aggregate(tape, h1, &e1, &links1, &local1, slope)?;
    let hhat1 = stage1.stock_concept;
    let (q1, retrieval1) = if config.memory.predefined {
        let r = global_aggregate(tape, hhat1, banks.predefined)?;
        (r.refined, Some(r))
    } else {
        (hhat1, None)
    };
    let h2 = tape.sub(h1, q1)?;

    // Hidden concepts, initialized from the corrected predefined embeddings.
    let assignment = assign_hidden(tape, h2, &e1, graph)?;
    let correct2 = Linear::from_vars(vars, "hidden.correct")?;
    let e2 = hidden_embeddings(tape, h2, &assignment, &correct2, slope)?;
    let local2 = Linear::from_vars(vars, "hidden.local")?;
    let stage2 = local_aggregate(tape, h2, &e2, &assignment.stock_links(), &local2, slope)?;
    let hhat2 = stage2.stock_concept;
    let (q2, retrieval2) = if config.memory.hidden {
        let r = global_aggregate(tape, hhat2, banks.hidden)?;
        (r.refined, Some(r))
    } else {
        (hhat2, None)
    };
    let h3 = tape.sub(h2, q2)?;

    let individual = Linear::from_vars(vars, "individual")?;
    let hhat3 = concepts::individual_features(tape, h3, &individual, slope)?;

    let forecast = Linear::from_vars(vars, "regressor.forecast")?;
    let y1 = forecast.apply_leaky(tape, hhat1, slope)?;
    let y2 = forecast.apply_leaky(tape, hhat2, slope)?;
    let y3 = forecast.apply_leaky(tape, hhat3, slope)?;
    let y12 = tape.add(y1, y2)?;
    let y = tape.add(y12, y3)?;
    let output = Linear::from_vars(vars, "regressor.output")?;
    let predictions = output.apply(tape, y)?;

    Ok(ForwardVars {
        h1,
        h2,
        h3,
        hhat1,
        hhat2,
        hhat3,
        q1,
        q2,
        y: [y1, y2, y3],
        predictions,
        soft_links,
        gamma1: stage1.weights,
        gamma2: stage2.weights,
        retrieval1,
        retrieval2,
        hidden_argmax: assignment.argmax,
        hidden_members: assignment.members,
        links1,
    })
}

/// Materialized values of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub h1: Tensor,
    pub h2: Tensor,
    pub h3: Tensor,
    pub hhat1: Tensor,
    pub hhat2: Tensor,
    pub hhat3: Tensor,
    pub q1: Tensor,
    pub q2: Tensor,
    pub y: [Tensor; 3],
    pub predictions: Vec<f64>,
    pub soft_links: Tensor,
    pub gamma1: Tensor,
    pub gamma2: Tensor,
    /// Match probabilities of each enabled bank.
    pub v1: Option<Tensor>,
    pub v2: Option<Tensor>,
    pub hidden_argmax: Vec<usize>,
    pub hidden_members: Vec<Vec<usize>>,
}

impl ForwardTrace {
    fn collect(tape: &Tape, f: &ForwardVars) -> Self {
        let val = |v: Var| tape.value(v).clone();
        ForwardTrace {
            h1: val(f.h1),
            h2: val(f.h2),
            h3: val(f.h3),
            hhat1: val(f.hhat1),
            hhat2: val(f.hhat2),
            hhat3: val(f.hhat3),
            q1: val(f.q1),
            q2: val(f.q2),
            y: [val(f.y[0]), val(f.y[1]), val(f.y[2])],
            predictions: tape.value(f.predictions).data().to_vec(),
            soft_links: val(f.soft_links),
            gamma1: val(f.gamma1),
            gamma2: val(f.gamma2),
            v1: f.retrieval1.map(|r| val(r.match_probs)),
            v2: f.retrieval2.map(|r| val(r.match_probs)),
            hidden_argmax: f.hidden_argmax.clone(),
            hidden_members: f.hidden_members.clone(),
        }
    }
}

/// `Σ (p̂ − p)² / N`.
pub fn mse_loss(predictions: &[f64], labels: &[f64]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(MtmdError::shape("mse_loss", &[predictions.len()], &[labels.len()]));
    }
    let n = predictions.len().max(1) as f64;
    Ok(predictions
        .iter()
        .zip(labels)
        .map(|(p, y)| (p - y) * (p - y))
        .sum::<f64>()
        / n)
}

/// Parameters, banks and configuration of one model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParameterSet,
    pub banks: MemoryBanks,
}

/// Outcome of a training step on one date.
#[derive(Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub gradients: Gradients,
    pub trace: ForwardTrace,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(Model {
            params: init_params(&config),
            banks: MemoryBanks::init(&config)?,
            config,
        })
    }

    /// Applies the rule-based memory writes for every enabled bank.
    fn write_memory(&mut self, trace: &ForwardTrace) -> Result<()> {
        if let Some(v) = &trace.v1 {
            memorize(&mut self.banks.predefined, &trace.hhat1, v)?;
        }
        if let Some(v) = &trace.v2 {
            memorize(&mut self.banks.hidden, &trace.hhat2, v)?;
        }
        Ok(())
    }

    /// Forward pass of one date; in train mode the banks are written after
    /// retrieval.
    pub fn forward(&mut self, slice: &DateSlice, graph: &DateGraph, mode: Mode) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let banks = BankVars::constants(&mut tape, &self.banks);
        let f = forward_graph(&mut tape, &vars, banks, slice, graph, &self.config)?;
        let trace = ForwardTrace::collect(&tape, &f);
        if mode == Mode::Train {
            self.write_memory(&trace)?;
        }
        Ok(trace)
    }

    /// Eval-mode predictions; never touches the banks.
    pub fn predict(&self, slice: &DateSlice, graph: &DateGraph) -> Result<Vec<f64>> {
        Ok(self.trace_eval(slice, graph)?.predictions)
    }

    pub fn trace_eval(&self, slice: &DateSlice, graph: &DateGraph) -> Result<ForwardTrace> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let banks = BankVars::constants(&mut tape, &self.banks);
        let f = forward_graph(&mut tape, &vars, banks, slice, graph, &self.config)?;
        Ok(ForwardTrace::collect(&tape, &f))
    }

    /// Retrieve → predict → loss → write → backprop. The returned gradients
    /// are those of the pre-write forward pass; parameters are not updated.
    pub fn train_step(&mut self, slice: &DateSlice, graph: &DateGraph, write: bool) -> Result<StepOutput> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let banks = BankVars::constants(&mut tape, &self.banks);
        let f = forward_graph(&mut tape, &vars, banks, slice, graph, &self.config)?;
        let labels = Tensor::new(vec![slice.n_stocks(), 1], slice.labels.clone())?;
        let loss_var = tape.mse(f.predictions, &labels)?;
        let loss = tape.value(loss_var).item();
        let trace = ForwardTrace::collect(&tape, &f);
        if write {
            self.write_memory(&trace)?;
        }
        let gradients = tape.backward(loss_var)?;
        Ok(StepOutput {
            loss,
            gradients,
            trace,
        })
    }

    /// Loss of one date under arbitrary parameters, no writes.
    pub fn loss_with(&self, params: &ParameterSet, slice: &DateSlice, graph: &DateGraph) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let banks = BankVars::constants(&mut tape, &self.banks);
        let f = forward_graph(&mut tape, &vars, banks, slice, graph, &self.config)?;
        mse_loss(tape.value(f.predictions).data(), &slice.labels)
    }
}
