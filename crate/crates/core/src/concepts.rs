//! Predefined-concept, hidden-concept and individual-information modules,
//! plus the local (within-date) aggregation shared by the two concept stages.

use rand::Rng;

use crate::data::DateGraph;
use crate::error::{MtmdError, Result};
use crate::numerics::{Tape, Tensor, Var, EPS};
use crate::params::{uniform, ParamVars, ParameterSet};

/// Concept stage tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Predefined,
    Hidden,
}

impl Stage {
    pub fn prefix(self) -> &'static str {
        match self {
            Stage::Predefined => "predefined",
            Stage::Hidden => "hidden",
        }
    }
}

/// Affine map `x·W + b` over rows.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub w: Var,
    pub b: Var,
}

impl Linear {
    pub fn from_vars(vars: &ParamVars, prefix: &str) -> Result<Self> {
        Ok(Linear {
            w: vars.get(&format!("{prefix}.w"))?,
            b: vars.get(&format!("{prefix}.b"))?,
        })
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let xw = tape.matmul(x, self.w)?;
        tape.add_row(xw, self.b)
    }

    /// `LeakyReLU(x·W + b)`.
    pub fn apply_leaky(&self, tape: &mut Tape, x: Var, slope: f64) -> Result<Var> {
        let y = self.apply(tape, x)?;
        Ok(tape.leaky_relu(y, slope))
    }
}

/// Inserts `{prefix}.w` (`[in×out]`) and `{prefix}.b` (`[out]`),
/// uniform(−1/√in, 1/√in).
pub fn init_linear<R: Rng>(set: &mut ParameterSet, rng: &mut R, prefix: &str, d_in: usize, d_out: usize) {
    let bound = 1.0 / (d_in as f64).sqrt();
    set.insert(format!("{prefix}.w"), uniform(rng, &[d_in, d_out], bound));
    set.insert(format!("{prefix}.b"), uniform(rng, &[d_out], bound));
}

/// Correction, local-aggregation and individual maps, all `L×L`.
pub fn init_module_params<R: Rng>(rng: &mut R, width: usize) -> ParameterSet {
    let mut set = ParameterSet::new();
    for stage in [Stage::Predefined, Stage::Hidden] {
        init_linear(&mut set, rng, &format!("{}.correct", stage.prefix()), width, width);
        init_linear(&mut set, rng, &format!("{}.local", stage.prefix()), width, width);
    }
    init_linear(&mut set, rng, "individual", width, width);
    set
}

/// `[N_c × L]` concept embedding matrix of one stage.
#[derive(Debug, Clone)]
pub struct ConceptEmbeddings {
    pub stage: Stage,
    pub matrix: Var,
    /// Concepts without any member stock.
    pub empty: Vec<bool>,
}

/// Result of a local aggregation.
#[derive(Debug, Clone)]
pub struct StageOutput {
    /// `[N_s × L]` stock-concept features.
    pub stock_concept: Var,
    /// `[N_s × N_c]` per-stock concept weights, zero outside `links_used`.
    pub weights: Var,
    pub links_used: Vec<Vec<usize>>,
}

/// Market-cap weights `α[i,j] = δ_i / Σ_{i'∈D_j} δ_i'` as an `[N_s × N_c]`
/// matrix, plus the flags of concepts with no members.
pub fn market_cap_weights(graph: &DateGraph, caps: &[f64]) -> Result<(Tensor, Vec<bool>)> {
    let n = caps.len();
    let nc = graph.n_concepts();
    if let Some(bad) = caps.iter().find(|c| !(**c > 0.0)) {
        return Err(MtmdError::Domain(format!("market cap must be positive, got {bad}")));
    }
    let members = graph.members();
    let mut alpha = Tensor::zeros(&[n, nc]);
    let mut empty = vec![false; nc];
    for (j, stocks) in members.iter().enumerate() {
        if stocks.is_empty() {
            empty[j] = true;
            continue;
        }
        let total: f64 = stocks.iter().map(|&i| caps[i]).sum();
        for &i in stocks {
            alpha.data_mut()[i * nc + j] = caps[i] / total;
        }
    }
    Ok((alpha, empty))
}

/// Initial predefined concept embeddings: market-cap weighted mean of member
/// stock features. Empty concepts get zero rows and are flagged.
pub fn init_predefined(
    tape: &mut Tape,
    h1: Var,
    graph: &DateGraph,
    caps: &[f64],
) -> Result<ConceptEmbeddings> {
    let n = tape.value(h1).rows();
    if caps.len() != n {
        return Err(MtmdError::shape("init_predefined", &[n], &[caps.len()]));
    }
    let (alpha, empty) = market_cap_weights(graph, caps)?;
    let alpha_t = tape.constant(alpha.transpose()?);
    let matrix = tape.matmul(alpha_t, h1)?;
    Ok(ConceptEmbeddings {
        stage: Stage::Predefined,
        matrix,
        empty,
    })
}

/// Soft-link correction over the fully connected stock/concept graph:
/// cosine scores are softmaxed over stocks for each concept, the weighted
/// stock mean goes through `LeakyReLU(·W' + b')`. Returns the corrected
/// embeddings and the `[N_s × N_c]` soft-link weights.
pub fn correct_predefined(
    tape: &mut Tape,
    h1: Var,
    e_init: &ConceptEmbeddings,
    correction: &Linear,
    slope: f64,
) -> Result<(ConceptEmbeddings, Var)> {
    let beta = tape.cosine_rows(h1, e_init.matrix, EPS)?;
    let soft = tape.softmax(beta, 0)?;
    let soft_t = tape.transpose(soft)?;
    let pooled = tape.matmul(soft_t, h1)?;
    let matrix = correction.apply_leaky(tape, pooled, slope)?;
    let nc = e_init.empty.len();
    Ok((
        ConceptEmbeddings {
            stage: Stage::Predefined,
            matrix,
            empty: vec![false; nc],
        },
        soft,
    ))
}

/// Per-stock predefined link sets; stocks without links fall back to every
/// concept.
pub fn predefined_stock_links(graph: &DateGraph, n_stocks: usize) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..graph.n_concepts()).collect();
    graph
        .stock_links(n_stocks)
        .into_iter()
        .map(|l| if l.is_empty() { all.clone() } else { l })
        .collect()
}

/// Hidden-concept assignment of one date.
#[derive(Debug, Clone)]
pub struct HiddenAssignment {
    /// `[N_s × N_c]` cosine scores between stocks and initial hidden concepts.
    pub beta: Var,
    /// Argmax concept of each stock before pruning.
    pub argmax: Vec<usize>,
    /// Member stocks of each hidden concept after removing predefined pairs.
    pub members: Vec<Vec<usize>>,
}

impl HiddenAssignment {
    /// Per-stock link sets: the argmax concept, kept even when pruning removed
    /// the pair, so no stock is left without a link.
    pub fn stock_links(&self) -> Vec<Vec<usize>> {
        self.argmax.iter().map(|&j| vec![j]).collect()
    }

    /// Membership mask `[N_s × N_c]`.
    pub fn mask(&self, n_stocks: usize) -> Tensor {
        let nc = self.members.len();
        let mut m = Tensor::zeros(&[n_stocks, nc]);
        for (j, stocks) in self.members.iter().enumerate() {
            for &i in stocks {
                m.data_mut()[i * nc + j] = 1.0;
            }
        }
        m
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// Assigns each stock to its most similar hidden concept (initialized from
/// the predefined embeddings), then removes pairs already in the predefined
/// graph.
pub fn assign_hidden(
    tape: &mut Tape,
    h2: Var,
    e_init: &ConceptEmbeddings,
    predefined: &DateGraph,
) -> Result<HiddenAssignment> {
    let nc = e_init.empty.len();
    if nc == 0 {
        return Err(MtmdError::Contract("hidden concepts need N_c >= 1".into()));
    }
    let beta = tape.cosine_rows(h2, e_init.matrix, EPS)?;
    let scores = tape.value(beta);
    let n = scores.rows();
    let mut argmax = Vec::with_capacity(n);
    let mut members = vec![Vec::new(); nc];
    for i in 0..n {
        let row = scores.row(i);
        // Flagged concepts are never candidates.
        let candidates: Vec<f64> = row
            .iter()
            .zip(&e_init.empty)
            .map(|(&v, &e)| if e { f64::NEG_INFINITY } else { v })
            .collect();
        let j = argmax_lowest(&candidates);
        argmax.push(j);
        if !predefined.contains(i, j) {
            members[j].push(i);
        }
    }
    Ok(HiddenAssignment {
        beta,
        argmax,
        members,
    })
}

/// `e2_j = LeakyReLU((Σ_{i∈D2_j} β_ij h2_i)·W' + b')`; an empty member set
/// contributes the zero vector.
pub fn hidden_embeddings(
    tape: &mut Tape,
    h2: Var,
    assignment: &HiddenAssignment,
    correction: &Linear,
    slope: f64,
) -> Result<ConceptEmbeddings> {
    let n = tape.value(h2).rows();
    let masked = tape.mul_const(assignment.beta, assignment.mask(n))?;
    let masked_t = tape.transpose(masked)?;
    let pooled = tape.matmul(masked_t, h2)?;
    let matrix = correction.apply_leaky(tape, pooled, slope)?;
    Ok(ConceptEmbeddings {
        stage: Stage::Hidden,
        matrix,
        empty: assignment.members.iter().map(Vec::is_empty).collect(),
    })
}

/// Fuses concept embeddings into stock features: cosine scores softmaxed over
/// each stock's link set, then `LeakyReLU((Σ γ_ij e_j)·W + b)`.
pub fn local_aggregate(
    tape: &mut Tape,
    h: Var,
    e: &ConceptEmbeddings,
    links: &[Vec<usize>],
    aggregation: &Linear,
    slope: f64,
) -> Result<StageOutput> {
    let n = tape.value(h).rows();
    let nc = tape.value(e.matrix).rows();
    if links.len() != n {
        return Err(MtmdError::shape("local_aggregate", &[n], &[links.len()]));
    }
    let mut mask = vec![false; n * nc];
    for (i, set) in links.iter().enumerate() {
        if set.is_empty() {
            return Err(MtmdError::Contract(format!("stock {i} has no concept links")));
        }
        for &j in set {
            if j >= nc {
                return Err(MtmdError::Contract(format!(
                    "stock {i} links to concept {j} but only {nc} exist"
                )));
            }
            mask[i * nc + j] = true;
        }
    }
    let beta = tape.cosine_rows(h, e.matrix, EPS)?;
    let weights = tape.masked_softmax_rows(beta, mask)?;
    let pooled = tape.matmul(weights, e.matrix)?;
    let stock_concept = aggregation.apply_leaky(tape, pooled, slope)?;
    Ok(StageOutput {
        stock_concept,
        weights,
        links_used: links.to_vec(),
    })
}

/// `LeakyReLU(h3·W_3 + b_3)`.
pub fn individual_features(tape: &mut Tape, h3: Var, map: &Linear, slope: f64) -> Result<Var> {
    map.apply_leaky(tape, h3, slope)
}
