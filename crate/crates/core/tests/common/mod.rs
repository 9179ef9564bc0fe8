#![allow(dead_code)]

use std::collections::BTreeMap;

use mtmd::data::{generate_synthetic, ConceptGraph, FeaturePanel, SyntheticSpec};
use mtmd::encoder::{encode_panel, init_encoder_params};
use mtmd::memory::global_aggregate;
use mtmd::model::{init_params, BankVars, MemoryBanks, Model, ModelConfig};
use mtmd::numerics::gradcheck::{check_gradients, GradCheckReport};
use mtmd::numerics::{Tape, Tensor, Var, EPS};
use mtmd::params::ParameterSet;
use mtmd::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Synthetic panel with `n_dates` usable dates.
pub fn market(n_stocks: usize, n_concepts: usize, n_dates: usize, seed: u64) -> (FeaturePanel, ConceptGraph) {
    let m = generate_synthetic(&SyntheticSpec {
        n_stocks,
        n_concepts,
        n_dates: n_dates + 61,
        membership_density: 0.5,
        seed,
        ..SyntheticSpec::default()
    })
    .unwrap();
    (m.panel, m.graph)
}

/// `N_s = 6, N_c = 3, L = 4, K = 4`.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        width: 4,
        memory_items: 4,
        seed: 5,
        ..ModelConfig::default()
    }
}

fn map(pairs: Vec<(&str, Tensor)>) -> BTreeMap<String, Tensor> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// `Σ op(inputs) ⊙ R` for a fixed random `R`, plus its analytic gradients.
fn check_op<F>(label: &str, inputs: BTreeMap<String, Tensor>, seed: u64, op: F) -> (String, GradCheckReport)
where
    F: Fn(&mut Tape, &BTreeMap<String, Var>) -> Result<Var>,
{
    let weights = std::cell::RefCell::new(None::<Tensor>);
    let eval = |x: &BTreeMap<String, Tensor>| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let vars: BTreeMap<String, Var> = x.iter().map(|(k, v)| (k.clone(), tape.param(k.clone(), v.clone()))).collect();
        let out = op(&mut tape, &vars)?;
        let shape = tape.value(out).shape().to_vec();
        let r = weights
            .borrow_mut()
            .get_or_insert_with(|| random(&mut rng(seed), &shape))
            .clone();
        let weighted = tape.mul_const(out, r)?;
        let loss = tape.sum(weighted);
        Ok((tape, loss))
    };
    let (tape, loss) = eval(&inputs).unwrap();
    let grads = tape.backward(loss).unwrap().into_params();
    let report = check_gradients(&inputs, &grads, |x| {
        let (t, l) = eval(x)?;
        Ok(t.value(l).item())
    })
    .unwrap();
    (label.to_string(), report)
}

pub fn per_op_checks() -> Vec<(String, GradCheckReport)> {
    let mut r = rng(42);
    let a = random(&mut r, &[3, 4]);
    let b = random(&mut r, &[3, 4]);
    let c = random(&mut r, &[4, 2]);
    let bias = random(&mut r, &[1, 4]);
    let mask = vec![true, false, true, true, false, true, true, true, true, false, false, true];
    let g = |m: &BTreeMap<String, Var>, k: &str| m[k];

    vec![
        check_op("matmul", map(vec![("a", a.clone()), ("c", c.clone())]), 1, |t, v| {
            t.matmul(g(v, "a"), g(v, "c"))
        }),
        check_op("transpose", map(vec![("a", a.clone())]), 2, |t, v| t.transpose(g(v, "a"))),
        check_op("add", map(vec![("a", a.clone()), ("b", b.clone())]), 3, |t, v| t.add(g(v, "a"), g(v, "b"))),
        check_op("sub", map(vec![("a", a.clone()), ("b", b.clone())]), 4, |t, v| t.sub(g(v, "a"), g(v, "b"))),
        check_op("mul", map(vec![("a", a.clone()), ("b", b.clone())]), 5, |t, v| t.mul(g(v, "a"), g(v, "b"))),
        check_op("mul_const", map(vec![("a", a.clone())]), 6, {
            let k = b.clone();
            move |t, v| t.mul_const(g(v, "a"), k.clone())
        }),
        check_op("add_row", map(vec![("a", a.clone()), ("bias", bias.clone())]), 7, |t, v| {
            t.add_row(g(v, "a"), g(v, "bias"))
        }),
        check_op("scale", map(vec![("a", a.clone())]), 8, |t, v| Ok(t.scale(g(v, "a"), -2.5))),
        check_op("sigmoid", map(vec![("a", a.clone())]), 9, |t, v| Ok(t.sigmoid(g(v, "a")))),
        check_op("tanh", map(vec![("a", a.clone())]), 10, |t, v| Ok(t.tanh(g(v, "a")))),
        check_op("leaky_relu", map(vec![("a", a.clone())]), 11, |t, v| Ok(t.leaky_relu(g(v, "a"), 0.01))),
        check_op("softmax axis 0", map(vec![("a", a.clone())]), 12, |t, v| t.softmax(g(v, "a"), 0)),
        check_op("softmax axis 1", map(vec![("a", a.clone())]), 13, |t, v| t.softmax(g(v, "a"), 1)),
        check_op("masked_softmax_rows", map(vec![("a", a.clone())]), 14, {
            let m = mask.clone();
            move |t, v| t.masked_softmax_rows(g(v, "a"), m.clone())
        }),
        check_op("cosine_rows", map(vec![("a", a.clone()), ("b", b.clone())]), 15, |t, v| {
            t.cosine_rows(g(v, "a"), g(v, "b"), EPS)
        }),
        check_op("l2_normalize_rows", map(vec![("a", a.clone())]), 16, |t, v| {
            t.l2_normalize_rows(g(v, "a"), EPS)
        }),
        check_op("slice_cols", map(vec![("a", a.clone())]), 17, |t, v| t.slice_cols(g(v, "a"), 1, 2)),
        check_op("sum", map(vec![("a", a.clone())]), 18, |t, v| Ok(t.sum(g(v, "a")))),
        check_op("mse", map(vec![("a", a.clone())]), 19, {
            let target = b.clone();
            move |t, v| t.mse(g(v, "a"), &target)
        }),
        check_op("memory retrieval", map(vec![("h", a.clone()), ("m", b.clone())]), 20, |t, v| {
            Ok(global_aggregate(t, g(v, "h"), g(v, "m"))?.refined)
        }),
    ]
}

pub fn encoder_check() -> (String, GradCheckReport) {
    let (panel, _) = market(6, 3, 1, 3);
    let x = panel.dates[0].features.clone();
    let params = init_encoder_params(&mut rng(8), 6, 4, 2);
    let eval = |p: &BTreeMap<String, Tensor>| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let vars = ParameterSet::from_map(p.clone()).register(&mut tape);
        let xv = tape.constant(x.clone());
        let h = encode_panel(&mut tape, xv, &vars, 4, 2)?;
        let r = random(&mut rng(77), tape.value(h).shape());
        let w = tape.mul_const(h, r)?;
        let loss = tape.sum(w);
        Ok((tape, loss))
    };
    let inputs = params.into_map();
    let (tape, loss) = eval(&inputs).unwrap();
    let grads = tape.backward(loss).unwrap().into_params();
    let report = check_gradients(&inputs, &grads, |p| {
        let (t, l) = eval(p)?;
        Ok(t.value(l).item())
    })
    .unwrap();
    ("encoder (2-layer GRU)".to_string(), report)
}

/// MSE loss of the full model on one date with respect to every parameter.
pub fn end_to_end_check(config: &ModelConfig, label: &str) -> (String, GradCheckReport) {
    let (panel, graph) = market(6, 3, 1, 3);
    let slice = &panel.dates[0];
    let g = &graph.dates[0];
    let mut model = Model::new(config.clone()).unwrap();
    // Move the banks off their initial draw so retrieval sees written items.
    model.forward(slice, g, mtmd::model::Mode::Train).unwrap();
    let step = model.clone().train_step(slice, g, false).unwrap();
    let grads = step.gradients.into_params();
    let inputs = model.params.as_map().clone();
    let report = check_gradients(&inputs, &grads, |p| model.loss_with(&ParameterSet::from_map(p.clone()), slice, g)).unwrap();
    (label.to_string(), report)
}

/// Gradient w.r.t. the banks themselves, which training keeps constant.
pub fn bank_gradient_check() -> (String, GradCheckReport) {
    let (panel, graph) = market(6, 3, 1, 3);
    let slice = &panel.dates[0];
    let g = &graph.dates[0];
    let config = small_config();
    let params = init_params(&config);
    let banks = MemoryBanks::init(&config).unwrap();
    let eval = |b: &BTreeMap<String, Tensor>| -> Result<(Tape, Var)> {
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let bv = BankVars {
            predefined: tape.param("bank.predefined", b["bank.predefined"].clone()),
            hidden: tape.param("bank.hidden", b["bank.hidden"].clone()),
        };
        let f = mtmd::model::forward_graph(&mut tape, &vars, bv, slice, g, &config)?;
        let labels = Tensor::new(vec![slice.n_stocks(), 1], slice.labels.clone())?;
        let loss = tape.mse(f.predictions, &labels)?;
        Ok((tape, loss))
    };
    let inputs = map(vec![
        ("bank.predefined", banks.predefined.items().clone()),
        ("bank.hidden", banks.hidden.items().clone()),
    ]);
    let (tape, loss) = eval(&inputs).unwrap();
    let mut grads = tape.backward(loss).unwrap().into_params();
    grads.retain(|k, _| k.starts_with("bank."));
    let report = check_gradients(&inputs, &grads, |b| {
        let (t, l) = eval(b)?;
        Ok(t.value(l).item())
    })
    .unwrap();
    ("memory banks (end-to-end)".to_string(), report)
}

pub fn gradient_suite() -> Vec<(String, GradCheckReport)> {
    let mut out = per_op_checks();
    out.push(encoder_check());
    for a in mtmd::model::Ablation::ALL {
        let cfg = ModelConfig {
            memory: a.switches(),
            ..small_config()
        };
        out.push(end_to_end_check(&cfg, &format!("end-to-end config {}", a.label())));
    }
    out.push(bank_gradient_check());
    out
}

// ---- independent oracles and fuzz drivers ----

/// Textbook Pearson from raw sums.
pub fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    if x.len() < 2 {
        return None;
    }
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|a| (a - sx / n).powi(2)).sum();
    let syy: f64 = y.iter().map(|a| (a - sy / n).powi(2)).sum();
    if sxx / n < 1e-12 || syy / n < 1e-12 {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - sx / n) * (b - sy / n)).sum();
    Some(sxy / (sxx * syy).sqrt())
}

/// Rank by counting: #smaller + (#equal + 1) / 2.
pub fn rank_oracle(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&a| {
            let less = x.iter().filter(|&&b| b < a).count() as f64;
            let eq = x.iter().filter(|&&b| b == a).count() as f64;
            less + (eq + 1.0) / 2.0
        })
        .collect()
}

pub fn spearman_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    pearson_oracle(&rank_oracle(x), &rank_oracle(y))
}

/// Repeatedly takes the best remaining stock, lowest index on ties.
pub fn precision_oracle(pred: &[f64], positive: &[bool], n: usize) -> f64 {
    let take = n.min(pred.len());
    let mut used = vec![false; pred.len()];
    let mut hits = 0;
    for _ in 0..take {
        let mut best: Option<usize> = None;
        for i in 0..pred.len() {
            if !used[i] && best.is_none_or(|b| pred[i] > pred[b]) {
                best = Some(i);
            }
        }
        let b = best.unwrap();
        used[b] = true;
        hits += positive[b] as usize;
    }
    100.0 * hits as f64 / take as f64
}

/// Vector with frequent ties: values from a small grid half the time.
pub fn tied_values(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let grid = rng.gen_bool(0.5);
    (0..n)
        .map(|_| if grid { rng.gen_range(0..4) as f64 } else { rng.gen_range(-1.0..1.0) })
        .collect()
}

#[derive(Debug, Default)]
pub struct MetricFuzz {
    pub instances: usize,
    pub with_ties: usize,
    pub max_ic_err: f64,
    pub max_rank_ic_err: f64,
    pub none_mismatches: usize,
    pub precision_mismatches: usize,
}

pub fn metric_fuzz(instances: usize, seed: u64) -> MetricFuzz {
    use mtmd::metrics::{ic, precision_at_n, rank_ic};
    let mut r = rng(seed);
    let mut out = MetricFuzz::default();
    for _ in 0..instances {
        let n = r.gen_range(2..40);
        let x = tied_values(&mut r, n);
        let y = tied_values(&mut r, n);
        out.instances += 1;
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            out.with_ties += 1;
        }
        for (got, want, slot) in [
            (ic(&x, &y), pearson_oracle(&x, &y), &mut out.max_ic_err),
            (rank_ic(&x, &y), spearman_oracle(&x, &y), &mut out.max_rank_ic_err),
        ] {
            match (got, want) {
                (Some(a), Some(b)) => *slot = slot.max((a - b).abs()),
                (None, None) => {}
                _ => out.none_mismatches += 1,
            }
        }
        let positive: Vec<bool> = y.iter().map(|&v| v > 0.5).collect();
        for k in [1, 3, 5, 10, 30, 50] {
            if precision_at_n(&x, &positive, k).unwrap() != precision_oracle(&x, &positive, k) {
                out.precision_mismatches += 1;
            }
        }
    }
    out
}

#[derive(Debug, Default)]
pub struct MemoryFuzz {
    pub calls: usize,
    pub max_norm_dev: f64,
    pub max_v_col_err: f64,
    pub short_calls: usize,
    pub trailing_changed: usize,
}

/// Randomized retrieve-then-write calls against a handful of persistent banks.
pub fn memory_fuzz(calls: usize, seed: u64) -> MemoryFuzz {
    use mtmd::concepts::Stage;
    use mtmd::memory::{memorize, MemoryBank};
    let mut r = rng(seed);
    let mut banks: Vec<MemoryBank> = (0..10)
        .map(|b| MemoryBank::init(r.gen_range(1..=8), r.gen_range(1..=6), seed + b, Stage::Hidden).unwrap())
        .collect();
    let mut out = MemoryFuzz::default();
    for c in 0..calls {
        let bank = &mut banks[c % 10];
        let n = r.gen_range(1..=12);
        let scale = [1e-6, 1e-2, 1.0, 1e2, 1e3][r.gen_range(0..5)];
        let mut q = random(&mut r, &[n, bank.width()]);
        q.data_mut().iter_mut().for_each(|v| *v *= scale);

        let mut tape = Tape::new();
        let qv = tape.constant(q.clone());
        let mv = bank.on_tape(&mut tape);
        let ret = global_aggregate(&mut tape, qv, mv).unwrap();
        let v = tape.value(ret.match_probs).clone();
        for k in 0..v.cols() {
            let s: f64 = (0..v.rows()).map(|i| v.get2(i, k)).sum();
            out.max_v_col_err = out.max_v_col_err.max((s - 1.0).abs());
        }

        let before = bank.items().clone();
        memorize(bank, &q, &v).unwrap();
        out.calls += 1;
        out.max_norm_dev = out.max_norm_dev.max(bank.max_norm_deviation());
        if n < bank.k() {
            out.short_calls += 1;
            for row in n..bank.k() {
                let same = before.row(row).iter().zip(bank.items().row(row)).all(|(a, b)| a.to_bits() == b.to_bits());
                if !same {
                    out.trailing_changed += 1;
                }
            }
        }
    }
    out
}

/// Largest |h1 − (h2 + q1)| and |h2 − (h3 + q2)| over a run of `n_dates`
/// training-mode forward passes, cycling through the four configs.
pub fn residual_fuzz(n_dates: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < n_dates {
        let n_s = r.gen_range(2..=12);
        let n_c = r.gen_range(1..=4);
        let chunk = (n_dates - done).min(10);
        let (panel, graph) = market(n_s, n_c, chunk, r.gen());
        let a = mtmd::model::Ablation::ALL[done / 10 % 4];
        let mut model = Model::new(ModelConfig {
            width: r.gen_range(2..=8),
            memory_items: r.gen_range(1..=8),
            seed: r.gen(),
            memory: a.switches(),
            ..ModelConfig::default()
        })
        .unwrap();
        for (s, g) in panel.dates.iter().zip(&graph.dates) {
            if g.n_concepts() == 0 {
                continue;
            }
            let t = model.forward(s, g, mtmd::model::Mode::Train).unwrap();
            for i in 0..t.h1.len() {
                worst = worst.max((t.h1.data()[i] - (t.h2.data()[i] + t.q1.data()[i])).abs());
                worst = worst.max((t.h2.data()[i] - (t.h3.data()[i] + t.q2.data()[i])).abs());
            }
            done += 1;
        }
    }
    worst
}

#[derive(Debug, Default)]
pub struct StochasticityFuzz {
    pub passes: usize,
    pub max_alpha_err: f64,
    pub max_cap_err: f64,
    pub max_gamma_err: f64,
    pub max_v_err: f64,
}

/// Column sums of α̂ and v, and per-stock sums of γ, across fuzzed shapes.
pub fn stochasticity_fuzz(passes: usize, seed: u64) -> StochasticityFuzz {
    let mut r = rng(seed);
    let mut out = StochasticityFuzz::default();
    while out.passes < passes {
        let (panel, graph) = market(r.gen_range(2..=15), r.gen_range(1..=5), 3, r.gen());
        let model = Model::new(ModelConfig {
            width: r.gen_range(2..=8),
            memory_items: r.gen_range(1..=8),
            seed: r.gen(),
            ..ModelConfig::default()
        })
        .unwrap();
        for (s, g) in panel.dates.iter().zip(&graph.dates) {
            if g.n_concepts() == 0 {
                continue;
            }
            let t = model.trace_eval(s, g).unwrap();
            let col_err = |m: &Tensor| {
                (0..m.cols())
                    .map(|c| ((0..m.rows()).map(|i| m.get2(i, c)).sum::<f64>() - 1.0).abs())
                    .fold(0.0, f64::max)
            };
            out.max_alpha_err = out.max_alpha_err.max(col_err(&t.soft_links));
            // Market-cap weights: only concepts with members carry mass.
            let (cap, empty) = mtmd::concepts::market_cap_weights(g, &s.market_caps).unwrap();
            for c in 0..cap.cols() {
                if !empty[c] {
                    let s: f64 = (0..cap.rows()).map(|i| cap.get2(i, c)).sum();
                    out.max_cap_err = out.max_cap_err.max((s - 1.0).abs());
                }
            }
            for gamma in [&t.gamma1, &t.gamma2] {
                for i in 0..gamma.rows() {
                    out.max_gamma_err = out.max_gamma_err.max((gamma.row(i).iter().sum::<f64>() - 1.0).abs());
                }
            }
            for v in [t.v1.as_ref().unwrap(), t.v2.as_ref().unwrap()] {
                out.max_v_err = out.max_v_err.max(col_err(v));
            }
            out.passes += 1;
        }
    }
    out
}
