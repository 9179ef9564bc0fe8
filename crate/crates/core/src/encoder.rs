//! Two-layer GRU stock feature encoder.
//!
//! Each 360-wide feature row is read as 60 chronological steps of 6 fields
//! (oldest step first). All stocks of a date are processed as one batch; rows
//! never interact, so the output is row-permutation equivariant.
//!
//! Gate equations per layer (weights stored input-major, `x·W`):
//!
//! ```text
//! r  = σ(x·W_r + b_r + h·U_r + c_r)
//! z  = σ(x·W_z + b_z + h·U_z + c_z)
//! n  = tanh(x·W_n + b_n + r ⊙ (h·U_n + c_n))
//! h' = (1 − z) ⊙ n + z ⊙ h
//! ```

use rand::Rng;

use crate::data::{FIELDS, LOOKBACK};
use crate::error::{MtmdError, Result};
use crate::numerics::{Tape, Tensor, Var};
use crate::params::{uniform, ParamVars, ParameterSet};

const GATES: [&str; 3] = ["r", "z", "n"];

fn layer_prefix(layer: usize) -> String {
    format!("encoder.l{layer}")
}

/// Parameters for `layers` stacked cells, uniform(−1/√L, 1/√L).
pub fn init_encoder_params<R: Rng>(
    rng: &mut R,
    input_width: usize,
    hidden: usize,
    layers: usize,
) -> ParameterSet {
    let bound = 1.0 / (hidden as f64).sqrt();
    let mut set = ParameterSet::new();
    for layer in 0..layers {
        let p = layer_prefix(layer);
        let d_in = if layer == 0 { input_width } else { hidden };
        for g in GATES {
            set.insert(format!("{p}.w_{g}"), uniform(rng, &[d_in, hidden], bound));
            set.insert(format!("{p}.u_{g}"), uniform(rng, &[hidden, hidden], bound));
            set.insert(format!("{p}.b_{g}"), uniform(rng, &[hidden], bound));
            set.insert(format!("{p}.c_{g}"), uniform(rng, &[hidden], bound));
        }
    }
    set
}

/// Tape handles of one recurrent layer.
#[derive(Debug, Clone, Copy)]
pub struct GruLayer {
    w: [Var; 3],
    u: [Var; 3],
    b: [Var; 3],
    c: [Var; 3],
}

impl GruLayer {
    pub fn from_vars(vars: &ParamVars, layer: usize) -> Result<Self> {
        let p = layer_prefix(layer);
        let pick = |kind: &str| -> Result<[Var; 3]> {
            Ok([
                vars.get(&format!("{p}.{kind}_r"))?,
                vars.get(&format!("{p}.{kind}_z"))?,
                vars.get(&format!("{p}.{kind}_n"))?,
            ])
        };
        Ok(GruLayer {
            w: pick("w")?,
            u: pick("u")?,
            b: pick("b")?,
            c: pick("c")?,
        })
    }
}

/// One recurrence step for a batch: `x` is `[N×d_in]`, `h` is `[N×L]`.
pub fn gru_cell(tape: &mut Tape, x: Var, h: Var, layer: &GruLayer) -> Result<Var> {
    let mut proj_x = [x; 3];
    let mut proj_h = [h; 3];
    for g in 0..3 {
        let xw = tape.matmul(x, layer.w[g])?;
        proj_x[g] = tape.add_row(xw, layer.b[g])?;
        let hu = tape.matmul(h, layer.u[g])?;
        proj_h[g] = tape.add_row(hu, layer.c[g])?;
    }
    let r_pre = tape.add(proj_x[0], proj_h[0])?;
    let r = tape.sigmoid(r_pre);
    let z_pre = tape.add(proj_x[1], proj_h[1])?;
    let z = tape.sigmoid(z_pre);
    let gated = tape.mul(r, proj_h[2])?;
    let n_pre = tape.add(proj_x[2], gated)?;
    let n = tape.tanh(n_pre);
    // (1 − z)⊙n + z⊙h = n + z⊙(h − n)
    let diff = tape.sub(h, n)?;
    let kept = tape.mul(z, diff)?;
    tape.add(n, kept)
}

/// Encodes `[N×360]` raw features into `[N×L]` temporal embeddings, the last
/// hidden state of the top layer.
pub fn encode_panel(
    tape: &mut Tape,
    features: Var,
    vars: &ParamVars,
    hidden: usize,
    layers: usize,
) -> Result<Var> {
    let (n, width) = tape.value(features).dims2()?;
    if width != LOOKBACK * FIELDS {
        return Err(MtmdError::shape(
            "encode_panel",
            &[n, width],
            &[n, LOOKBACK * FIELDS],
        ));
    }
    let cells = (0..layers)
        .map(|l| GruLayer::from_vars(vars, l))
        .collect::<Result<Vec<_>>>()?;
    let mut states: Vec<Var> = (0..layers)
        .map(|_| tape.constant(Tensor::zeros(&[n, hidden])))
        .collect();
    for step in 0..LOOKBACK {
        let mut input = tape.slice_cols(features, step * FIELDS, FIELDS)?;
        for (l, cell) in cells.iter().enumerate() {
            states[l] = gru_cell(tape, input, states[l], cell)?;
            input = states[l];
        }
    }
    Ok(*states.last().expect("at least one layer"))
}
