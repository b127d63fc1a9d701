//! The recurrent core: an LSTM cell driven by visit vectors, prefix pooling
//! of the hidden-state sequence, and two regularizers that penalize erratic
//! state trajectories.

use serde::{Deserialize, Serialize};

use crate::diffcore::{Activation, DiffError, NodeId, ParamId, ParamSet, Tape, Tensor};
use crate::rng;

/// Parameters of one LSTM cell: for each of the forget/input/output gates
/// and the candidate, an input matrix (H×m), a recurrent matrix (H×H), and a
/// bias (H).
#[derive(Debug, Clone)]
pub struct LstmParams {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_f: ParamId,
    pub u_f: ParamId,
    pub b_f: ParamId,
    pub w_i: ParamId,
    pub u_i: ParamId,
    pub b_i: ParamId,
    pub w_o: ParamId,
    pub u_o: ParamId,
    pub b_o: ParamId,
    pub w_c: ParamId,
    pub u_c: ParamId,
    pub b_c: ParamId,
}

impl LstmParams {
    /// Register freshly initialized cell parameters.
    ///
    /// Matrices draw uniformly from ±sqrt(6/(fan_in+fan_out)); biases start
    /// at zero except the forget gate's, which starts at 1.0 so early
    /// training retains memory across visits.
    pub fn init(params: &mut ParamSet, input_dim: usize, hidden_dim: usize, seed: u64) -> Self {
        use rand::Rng;
        assert!(input_dim > 0 && hidden_dim > 0, "dimensions must be positive");
        let mut r = rng::derive_rng(seed, rng::purpose::PARAM_INIT, 1);
        let (m, h) = (input_dim, hidden_dim);
        let mut matrix = |name: &str, rows: usize, cols: usize, fan_in: usize, fan_out: usize| {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-bound..=bound)).collect();
            params.add(name, Tensor::matrix(rows, cols, data).expect("finite init"))
        };
        let w_f = matrix("lstm.w_f", h, m, m, h);
        let u_f = matrix("lstm.u_f", h, h, h, h);
        let w_i = matrix("lstm.w_i", h, m, m, h);
        let u_i = matrix("lstm.u_i", h, h, h, h);
        let w_o = matrix("lstm.w_o", h, m, m, h);
        let u_o = matrix("lstm.u_o", h, h, h, h);
        let w_c = matrix("lstm.w_c", h, m, m, h);
        let u_c = matrix("lstm.u_c", h, h, h, h);
        let b_f = params.add("lstm.b_f", Tensor::vector(vec![1.0; h]).expect("finite"));
        let b_i = params.add("lstm.b_i", Tensor::zeros(vec![h]));
        let b_o = params.add("lstm.b_o", Tensor::zeros(vec![h]));
        let b_c = params.add("lstm.b_c", Tensor::zeros(vec![h]));
        Self {
            input_dim,
            hidden_dim,
            w_f,
            u_f,
            b_f,
            w_i,
            u_i,
            b_i,
            w_o,
            u_o,
            b_o,
            w_c,
            u_c,
            b_c,
        }
    }
}

/// The cell's pair of vectors after a step: internal memory `c` and the
/// emitted illness state `h`. Both live on the tape that produced them.
#[derive(Debug, Clone, Copy)]
pub struct LstmState {
    pub c: NodeId,
    pub h: NodeId,
}

/// The all-zero initial state.
pub fn zero_state(tape: &mut Tape, hidden_dim: usize) -> Result<LstmState, DiffError> {
    let c = tape.constant(Tensor::zeros(vec![hidden_dim]))?;
    let h = tape.constant(Tensor::zeros(vec![hidden_dim]))?;
    Ok(LstmState { c, h })
}

/// Returns the new state plus the [f, i, o] gate nodes for inspection.
fn step_parts(
    tape: &mut Tape,
    params: &ParamSet,
    cell: &LstmParams,
    v: NodeId,
    prev: &LstmState,
) -> Result<(LstmState, [NodeId; 3]), DiffError> {
    let mut affine = |w: ParamId, u: ParamId, b: ParamId| -> Result<NodeId, DiffError> {
        let wn = tape.param(params, w)?;
        let un = tape.param(params, u)?;
        let bn = tape.param(params, b)?;
        let wv = tape.matvec(wn, v)?;
        let uh = tape.matvec(un, prev.h)?;
        tape.sum(&[wv, uh, bn])
    };
    let f_pre = affine(cell.w_f, cell.u_f, cell.b_f)?;
    let i_pre = affine(cell.w_i, cell.u_i, cell.b_i)?;
    let o_pre = affine(cell.w_o, cell.u_o, cell.b_o)?;
    let c_pre = affine(cell.w_c, cell.u_c, cell.b_c)?;
    let f = tape.apply(Activation::Sigmoid, f_pre)?;
    let i = tape.apply(Activation::Sigmoid, i_pre)?;
    let o = tape.apply(Activation::Sigmoid, o_pre)?;
    let candidate = tape.apply(Activation::Tanh, c_pre)?;
    let keep = tape.mul(f, prev.c)?;
    let write = tape.mul(i, candidate)?;
    let c = tape.add(keep, write)?;
    let c_squashed = tape.apply(Activation::Tanh, c)?;
    let h = tape.mul(o, c_squashed)?;
    Ok((LstmState { c, h }, [f, i, o]))
}

/// One cell update: gates f, i, o = σ(W·v + U·h_prev + b), candidate
/// c̃ = tanh(·), memory c = f∗c_prev + i∗c̃, state h = o∗tanh(c).
pub fn lstm_step(
    tape: &mut Tape,
    params: &ParamSet,
    cell: &LstmParams,
    v: NodeId,
    prev: &LstmState,
) -> Result<LstmState, DiffError> {
    Ok(step_parts(tape, params, cell, v, prev)?.0)
}

/// Run the cell across a visit sequence. Returns one state per input; an
/// empty input yields an empty sequence. State t depends only on inputs
/// 1..=t, so prefixes of the output are exactly the outputs on prefixes.
pub fn unroll(
    tape: &mut Tape,
    params: &ParamSet,
    cell: &LstmParams,
    inputs: &[NodeId],
    initial: &LstmState,
) -> Result<Vec<LstmState>, DiffError> {
    let mut states = Vec::with_capacity(inputs.len());
    let mut prev = *initial;
    for &v in inputs {
        prev = lstm_step(tape, params, cell, v, &prev)?;
        states.push(prev);
    }
    Ok(states)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Mean,
    #[default]
    Last,
    Expsmooth,
}

/// How the state sequence h_1..h_t collapses to one vector before the
/// classifier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolingConfig {
    pub kind: PoolKind,
    /// Smoothing weight on the running average; only `expsmooth` reads it.
    pub alpha: f64,
}

impl Default for PoolingConfig {
    fn default() -> Self {
        Self { kind: PoolKind::Last, alpha: 0.5 }
    }
}

impl PoolingConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(format!("pooling alpha must lie in [0,1], got {}", self.alpha));
        }
        Ok(())
    }
}

/// Collapse states h_1..h_T to one vector: the mean, the last state, or the
/// exponentially smoothed average h̄_T with h̄_1 = h_1 and
/// h̄_t = α·h̄_{t−1} + (1−α)·h_t.
pub fn pool(tape: &mut Tape, states: &[NodeId], cfg: &PoolingConfig) -> Result<NodeId, DiffError> {
    let (&first, rest) = states
        .split_first()
        .ok_or(DiffError::EmptySequence { op: "pool" })?;
    match cfg.kind {
        PoolKind::Last => Ok(*states.last().expect("nonempty")),
        PoolKind::Mean => {
            let total = tape.sum(states)?;
            tape.scale(total, 1.0 / states.len() as f64)
        }
        PoolKind::Expsmooth => {
            let mut smoothed = first;
            for &h in rest {
                let carry = tape.scale(smoothed, cfg.alpha)?;
                let fresh = tape.scale(h, 1.0 - cfg.alpha)?;
                smoothed = tape.add(carry, fresh)?;
            }
            Ok(smoothed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegularizerKind {
    NormStabilizer,
    Coherence,
    #[default]
    None,
}

/// Which state-trajectory penalty the loss adds, and with what weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerConfig {
    pub kind: RegularizerKind,
    pub beta: f64,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        Self { kind: RegularizerKind::None, beta: 0.0 }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(format!("regularizer beta must be nonnegative, got {}", self.beta));
        }
        Ok(())
    }
}

/// Evaluate the configured penalty over a state sequence; `None` contributes
/// a constant zero.
pub fn apply_regularizer(
    tape: &mut Tape,
    states: &[NodeId],
    cfg: &RegularizerConfig,
) -> Result<NodeId, DiffError> {
    match cfg.kind {
        RegularizerKind::NormStabilizer => norm_stabilizer(tape, states, cfg.beta),
        RegularizerKind::Coherence => coherence_penalty(tape, states, cfg.beta),
        RegularizerKind::None => tape.scalar(0.0),
    }
}

/// Penalize drift in the state magnitude: (β/T)·Σ_{t≥2}(‖h_t‖−‖h_{t−1}‖)².
/// Zero exactly when all state norms are equal (or T = 1 or β = 0).
pub fn norm_stabilizer(tape: &mut Tape, states: &[NodeId], beta: f64) -> Result<NodeId, DiffError> {
    penalty(tape, states, beta, |tape, prev, cur| {
        let np = tape.norm2(prev)?;
        let nc = tape.norm2(cur)?;
        let d = tape.sub(nc, np)?;
        tape.mul(d, d)
    })
}

/// Penalize movement of the state itself: (β/T)·Σ_{t≥2}‖h_t − h_{t−1}‖².
/// Always at least as large as the norm stabilizer for the same states.
pub fn coherence_penalty(
    tape: &mut Tape,
    states: &[NodeId],
    beta: f64,
) -> Result<NodeId, DiffError> {
    penalty(tape, states, beta, |tape, prev, cur| {
        let d = tape.sub(cur, prev)?;
        tape.dot(d, d)
    })
}

fn penalty(
    tape: &mut Tape,
    states: &[NodeId],
    beta: f64,
    term: impl Fn(&mut Tape, NodeId, NodeId) -> Result<NodeId, DiffError>,
) -> Result<NodeId, DiffError> {
    if states.is_empty() {
        return Err(DiffError::EmptySequence { op: "regularizer" });
    }
    if beta == 0.0 || states.len() < 2 {
        return tape.scalar(0.0);
    }
    let mut terms = Vec::with_capacity(states.len() - 1);
    for pair in states.windows(2) {
        terms.push(term(tape, pair[0], pair[1])?);
    }
    let total = tape.sum(&terms)?;
    tape.scale(total, beta / states.len() as f64)
}
