//! Forward passes for the three recurrent cells: vanilla LSTM, vanilla
//! GRU, and LITT (an LSTM whose cell state is rescaled by `exp(-gamma)`
//! each step, with `gamma = w_gamma * t + b_gamma` computed from the raw
//! absolute timestamp).
//!
//! Gamma is a scalar per individual per step, broadcast across hidden
//! dimensions; that is what makes the per-step relative timestamp
//! `tau_i = exp(-sum gamma)` well defined. Traces carry everything the
//! backward pass and the timeline reconstruction need.

use crate::numkit::{sigmoid, tanh_act, Matrix, NumKitError, Rng};
use thiserror::Error;

/// Clamp for |gamma| in a single step: exp(30) overflows nothing but
/// erases the signal either way, so clamp and surface a flag instead of
/// silently saturating during early training.
pub const GAMMA_MAX: f64 = 30.0;

#[derive(Debug, Error)]
pub enum CellError {
    #[error(transparent)]
    NumKit(#[from] NumKitError),
    #[error("input length {got} does not match input_dim {want}")]
    InputDim { want: usize, got: usize },
    #[error("state length {got} does not match hidden_dim {want}")]
    StateDim { want: usize, got: usize },
    #[error("timestamp must be finite and non-negative, got {0}")]
    BadTimestamp(f64),
    #[error("empty sequence")]
    EmptySequence,
    #[error("sequence lengths differ: {xs} inputs vs {ts} timestamps")]
    SequenceLength { xs: usize, ts: usize },
}

/// Weights for one gate: recurrent matrix `u` (hidden x hidden), input
/// matrix `w` (hidden x input), bias `b` (hidden).
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub u: Matrix,
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl GateParams {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        GateParams {
            u: Matrix::zeros(hidden, hidden),
            w: Matrix::zeros(hidden, input),
            b: vec![0.0; hidden],
        }
    }

    /// Uniform init in +-1/sqrt(hidden).
    pub fn init(hidden: usize, input: usize, rng: &mut Rng) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        GateParams {
            u: Matrix::from_fn(hidden, hidden, |_, _| rng.range(-bound, bound)),
            w: Matrix::from_fn(hidden, input, |_, _| rng.range(-bound, bound)),
            b: vec![0.0; hidden],
        }
    }

    fn preactivation(&self, h_prev: &[f64], x: &[f64]) -> Result<Vec<f64>, CellError> {
        let mut a = self.u.matvec(h_prev)?;
        let wx = self.w.matvec(x)?;
        for ((av, wv), bv) in a.iter_mut().zip(&wx).zip(&self.b) {
            *av += wv + bv;
        }
        Ok(a)
    }
}

/// Group-level LSTM weights; also the backbone of the LITT cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub forget: GateParams,
    pub input: GateParams,
    pub output: GateParams,
    pub candidate: GateParams,
    pub hidden_dim: usize,
    pub input_dim: usize,
}

impl LstmParams {
    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Self {
        LstmParams {
            forget: GateParams::zeros(hidden_dim, input_dim),
            input: GateParams::zeros(hidden_dim, input_dim),
            output: GateParams::zeros(hidden_dim, input_dim),
            candidate: GateParams::zeros(hidden_dim, input_dim),
            hidden_dim,
            input_dim,
        }
    }

    /// Standard init: uniform +-1/sqrt(hidden), forget-gate bias +1.
    pub fn init(hidden_dim: usize, input_dim: usize, rng: &mut Rng) -> Self {
        let mut p = LstmParams {
            forget: GateParams::init(hidden_dim, input_dim, rng),
            input: GateParams::init(hidden_dim, input_dim, rng),
            output: GateParams::init(hidden_dim, input_dim, rng),
            candidate: GateParams::init(hidden_dim, input_dim, rng),
            hidden_dim,
            input_dim,
        };
        for b in &mut p.forget.b {
            *b = 1.0;
        }
        p
    }
}

/// Group-level GRU weights.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub update: GateParams,
    pub reset: GateParams,
    pub candidate: GateParams,
    pub hidden_dim: usize,
    pub input_dim: usize,
}

impl GruParams {
    pub fn zeros(hidden_dim: usize, input_dim: usize) -> Self {
        GruParams {
            update: GateParams::zeros(hidden_dim, input_dim),
            reset: GateParams::zeros(hidden_dim, input_dim),
            candidate: GateParams::zeros(hidden_dim, input_dim),
            hidden_dim,
            input_dim,
        }
    }

    pub fn init(hidden_dim: usize, input_dim: usize, rng: &mut Rng) -> Self {
        GruParams {
            update: GateParams::init(hidden_dim, input_dim, rng),
            reset: GateParams::init(hidden_dim, input_dim, rng),
            candidate: GateParams::init(hidden_dim, input_dim, rng),
            hidden_dim,
            input_dim,
        }
    }
}

/// Individual-level time-scaling parameters: `gamma = w_gamma * t + b_gamma`
/// with `t` in days. One instance per individual when individualization is
/// on, one shared identity instance otherwise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub w_gamma: f64,
    pub b_gamma: f64,
}

impl GammaParams {
    /// Identity gate: gamma == 0, scale == 1, LITT reduces to the LSTM.
    pub fn identity() -> Self {
        GammaParams {
            w_gamma: 0.0,
            b_gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden_dim: usize) -> Self {
        CellState {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }
}

/// Everything one LSTM/LITT step produced. `c_post = scale * c_pre`
/// elementwise (scalar broadcast); for a plain LSTM step `gamma = 0` and
/// `scale = 1` so `c_post == c_pre`.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub f: Vec<f64>,
    pub i: Vec<f64>,
    pub o: Vec<f64>,
    /// Candidate pre-activation (before tanh).
    pub y: Vec<f64>,
    /// Cell state before the time gate.
    pub c_pre: Vec<f64>,
    pub gamma: f64,
    /// `exp(-gamma)`, always > 0.
    pub scale: f64,
    /// Set when |gamma| hit the GAMMA_MAX guard.
    pub clamped: bool,
    pub c_post: Vec<f64>,
    pub h: Vec<f64>,
}

/// Internals of one GRU step needed by backprop and the Jacobian
/// diagnostics.
#[derive(Debug, Clone)]
pub struct GruStepTrace {
    pub z: Vec<f64>,
    pub r: Vec<f64>,
    /// Candidate activation tanh(a_h).
    pub h_cand: Vec<f64>,
    pub h: Vec<f64>,
}

fn check_dims_lstm(p: &LstmParams, s: &CellState, x: &[f64]) -> Result<(), CellError> {
    if x.len() != p.input_dim {
        return Err(CellError::InputDim {
            want: p.input_dim,
            got: x.len(),
        });
    }
    if s.h.len() != p.hidden_dim || s.c.len() != p.hidden_dim {
        return Err(CellError::StateDim {
            want: p.hidden_dim,
            got: s.h.len(),
        });
    }
    Ok(())
}

/// Standard LSTM update: `c' = f.c + i.tanh(y)`, `h' = o.tanh(c')`.
pub fn lstm_step(
    p: &LstmParams,
    s: &CellState,
    x: &[f64],
) -> Result<(CellState, StepTrace), CellError> {
    check_dims_lstm(p, s, x)?;
    let f: Vec<f64> = p.forget.preactivation(&s.h, x)?.iter().map(|&a| sigmoid(a)).collect();
    let i: Vec<f64> = p.input.preactivation(&s.h, x)?.iter().map(|&a| sigmoid(a)).collect();
    let o: Vec<f64> = p.output.preactivation(&s.h, x)?.iter().map(|&a| sigmoid(a)).collect();
    let y = p.candidate.preactivation(&s.h, x)?;
    let c_pre: Vec<f64> = (0..p.hidden_dim)
        .map(|k| f[k] * s.c[k] + i[k] * tanh_act(y[k]))
        .collect();
    let h: Vec<f64> = (0..p.hidden_dim).map(|k| o[k] * tanh_act(c_pre[k])).collect();
    let state = CellState {
        h: h.clone(),
        c: c_pre.clone(),
    };
    let trace = StepTrace {
        f,
        i,
        o,
        y,
        c_post: c_pre.clone(),
        c_pre,
        gamma: 0.0,
        scale: 1.0,
        clamped: false,
        h,
    };
    Ok((state, trace))
}

/// LITT step: LSTM candidate state, then `gamma = w_gamma*t + b_gamma`,
/// `c_post = exp(-gamma) * c_pre`, and `h = o . tanh(c_post)`.
pub fn litt_step(
    p: &LstmParams,
    g: &GammaParams,
    s: &CellState,
    x: &[f64],
    t_days: f64,
) -> Result<(CellState, StepTrace), CellError> {
    if !t_days.is_finite() || t_days < 0.0 {
        return Err(CellError::BadTimestamp(t_days));
    }
    check_dims_lstm(p, s, x)?;
    let f: Vec<f64> = p.forget.preactivation(&s.h, x)?.iter().map(|&a| sigmoid(a)).collect();
    let i: Vec<f64> = p.input.preactivation(&s.h, x)?.iter().map(|&a| sigmoid(a)).collect();
    let o: Vec<f64> = p.output.preactivation(&s.h, x)?.iter().map(|&a| sigmoid(a)).collect();
    let y = p.candidate.preactivation(&s.h, x)?;
    let c_pre: Vec<f64> = (0..p.hidden_dim)
        .map(|k| f[k] * s.c[k] + i[k] * tanh_act(y[k]))
        .collect();

    let raw_gamma = g.w_gamma * t_days + g.b_gamma;
    let clamped = raw_gamma.abs() > GAMMA_MAX;
    let gamma = raw_gamma.clamp(-GAMMA_MAX, GAMMA_MAX);
    let scale = (-gamma).exp();

    let c_post: Vec<f64> = c_pre.iter().map(|&c| scale * c).collect();
    let h: Vec<f64> = (0..p.hidden_dim).map(|k| o[k] * tanh_act(c_post[k])).collect();
    let state = CellState {
        h: h.clone(),
        c: c_post.clone(),
    };
    let trace = StepTrace {
        f,
        i,
        o,
        y,
        c_pre,
        gamma,
        scale,
        clamped,
        c_post,
        h,
    };
    Ok((state, trace))
}

/// Standard GRU update: `h' = (1-z).h + z.h_cand`.
pub fn gru_step(
    p: &GruParams,
    h_prev: &[f64],
    x: &[f64],
) -> Result<(Vec<f64>, GruStepTrace), CellError> {
    if x.len() != p.input_dim {
        return Err(CellError::InputDim {
            want: p.input_dim,
            got: x.len(),
        });
    }
    if h_prev.len() != p.hidden_dim {
        return Err(CellError::StateDim {
            want: p.hidden_dim,
            got: h_prev.len(),
        });
    }
    let z: Vec<f64> = p.update.preactivation(h_prev, x)?.iter().map(|&a| sigmoid(a)).collect();
    let r: Vec<f64> = p.reset.preactivation(h_prev, x)?.iter().map(|&a| sigmoid(a)).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(rv, hv)| rv * hv).collect();
    let h_cand: Vec<f64> = p
        .candidate
        .preactivation(&rh, x)?
        .iter()
        .map(|&a| tanh_act(a))
        .collect();
    let h: Vec<f64> = (0..p.hidden_dim)
        .map(|k| (1.0 - z[k]) * h_prev[k] + z[k] * h_cand[k])
        .collect();
    let trace = GruStepTrace {
        z,
        r,
        h_cand,
        h: h.clone(),
    };
    Ok((h, trace))
}

/// Which recurrent cell a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellKind {
    Lstm,
    Gru,
    Litt,
}

impl CellKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellKind::Lstm => "lstm",
            CellKind::Gru => "gru",
            CellKind::Litt => "litt",
        }
    }

    pub fn parse(s: &str) -> Option<CellKind> {
        match s {
            "lstm" => Some(CellKind::Lstm),
            "gru" => Some(CellKind::Gru),
            "litt" => Some(CellKind::Litt),
            _ => None,
        }
    }
}

/// Borrowed view of one cell plus the per-individual gamma it needs.
#[derive(Debug, Clone, Copy)]
pub enum CellSpec<'a> {
    Lstm(&'a LstmParams),
    Gru(&'a GruParams),
    Litt {
        params: &'a LstmParams,
        gamma: &'a GammaParams,
    },
}

impl CellSpec<'_> {
    pub fn kind(&self) -> CellKind {
        match self {
            CellSpec::Lstm(_) => CellKind::Lstm,
            CellSpec::Gru(_) => CellKind::Gru,
            CellSpec::Litt { .. } => CellKind::Litt,
        }
    }

    pub fn hidden_dim(&self) -> usize {
        match self {
            CellSpec::Lstm(p) | CellSpec::Litt { params: p, .. } => p.hidden_dim,
            CellSpec::Gru(p) => p.hidden_dim,
        }
    }
}

/// Per-step traces of one sequence evaluation.
#[derive(Debug, Clone)]
pub enum RunTraces {
    Recurrent(Vec<StepTrace>),
    Gru(Vec<GruStepTrace>),
}

impl RunTraces {
    pub fn len(&self) -> usize {
        match self {
            RunTraces::Recurrent(t) => t.len(),
            RunTraces::Gru(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-step gammas (zero for LSTM steps; absent for GRU).
    pub fn gammas(&self) -> Option<Vec<f64>> {
        match self {
            RunTraces::Recurrent(t) => Some(t.iter().map(|s| s.gamma).collect()),
            RunTraces::Gru(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SequenceRun {
    pub final_state: CellState,
    pub traces: RunTraces,
}

/// Runs a full sequence from the zero state. Timestamps may repeat
/// (same-day events) but must be finite and non-negative; the GRU and
/// plain LSTM ignore them.
pub fn run_sequence(
    cell: CellSpec,
    xs: &[Vec<f64>],
    ts: &[f64],
) -> Result<SequenceRun, CellError> {
    if xs.is_empty() {
        return Err(CellError::EmptySequence);
    }
    if xs.len() != ts.len() {
        return Err(CellError::SequenceLength {
            xs: xs.len(),
            ts: ts.len(),
        });
    }
    match cell {
        CellSpec::Lstm(p) => {
            let mut state = CellState::zeros(p.hidden_dim);
            let mut traces = Vec::with_capacity(xs.len());
            for x in xs {
                let (next, tr) = lstm_step(p, &state, x)?;
                state = next;
                traces.push(tr);
            }
            Ok(SequenceRun {
                final_state: state,
                traces: RunTraces::Recurrent(traces),
            })
        }
        CellSpec::Litt { params, gamma } => {
            let mut state = CellState::zeros(params.hidden_dim);
            let mut traces = Vec::with_capacity(xs.len());
            for (x, &t) in xs.iter().zip(ts) {
                let (next, tr) = litt_step(params, gamma, &state, x, t)?;
                state = next;
                traces.push(tr);
            }
            Ok(SequenceRun {
                final_state: state,
                traces: RunTraces::Recurrent(traces),
            })
        }
        CellSpec::Gru(p) => {
            let mut h = vec![0.0; p.hidden_dim];
            let mut traces = Vec::with_capacity(xs.len());
            for x in xs {
                let (next, tr) = gru_step(p, &h, x)?;
                h = next;
                traces.push(tr);
            }
            Ok(SequenceRun {
                final_state: CellState { h, c: Vec::new() },
                traces: RunTraces::Gru(traces),
            })
        }
    }
}
