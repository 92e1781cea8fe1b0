//! Hand-derived backpropagation-through-time for the three cells plus the
//! readout head, a central-difference gradient verifier, timing losses,
//! and an adaptive-moment optimizer.
//!
//! There is no autodiff here on purpose: gradients are written out from
//! the cell equations and every path is checked against finite
//! differences at 1e-5 relative tolerance (which is why everything is
//! f64). The LITT gamma path flows through `exp(-gamma)` into every
//! subsequent step.

use crate::cells::{
    run_sequence, CellError, CellKind, CellSpec, GammaParams, GateParams, GruParams, GruStepTrace,
    LstmParams, RunTraces, StepTrace,
};
use crate::cohort::CohortBatch;
use crate::numkit::{dot, Rng};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GradError {
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Diverged { epoch: usize },
    #[error("cohort has no individuals")]
    EmptyCohort,
    #[error("no uncensored individuals: timing RMSE undefined")]
    NoUncensored,
    #[error("config error: {0}")]
    Config(String),
}

/// Affine readout from the final hidden state to a predicted event day.
#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub w: Vec<f64>,
    pub b: f64,
}

impl Readout {
    pub fn zeros(hidden: usize) -> Self {
        Readout {
            w: vec![0.0; hidden],
            b: 0.0,
        }
    }
}

/// Maps the final hidden state to a predicted event day.
pub fn readout(h_final: &[f64], w_out: &[f64], b_out: f64) -> f64 {
    dot(h_final, w_out) + b_out
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Lstm(LstmParams),
    Gru(GruParams),
}

impl Backbone {
    pub fn hidden_dim(&self) -> usize {
        match self {
            Backbone::Lstm(p) => p.hidden_dim,
            Backbone::Gru(p) => p.hidden_dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Backbone::Lstm(p) => p.input_dim,
            Backbone::Gru(p) => p.input_dim,
        }
    }
}

/// Group-level parameters of one model: recurrent backbone plus readout.
/// Per-individual gamma parameters live outside (they are not group
/// state) and are passed alongside wherever a LITT forward pass happens.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub kind: CellKind,
    pub backbone: Backbone,
    pub readout: Readout,
}

impl ModelParams {
    pub fn init(kind: CellKind, hidden_dim: usize, input_dim: usize, rng: &mut Rng) -> Self {
        let backbone = match kind {
            CellKind::Gru => Backbone::Gru(GruParams::init(hidden_dim, input_dim, rng)),
            CellKind::Lstm | CellKind::Litt => {
                Backbone::Lstm(LstmParams::init(hidden_dim, input_dim, rng))
            }
        };
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let readout = Readout {
            w: (0..hidden_dim).map(|_| rng.range(-bound, bound)).collect(),
            b: 0.0,
        };
        ModelParams {
            kind,
            backbone,
            readout,
        }
    }

    /// Zero-valued mirror used as a gradient accumulator.
    pub fn zeros_like(&self) -> ModelParams {
        let backbone = match &self.backbone {
            Backbone::Lstm(p) => Backbone::Lstm(LstmParams::zeros(p.hidden_dim, p.input_dim)),
            Backbone::Gru(p) => Backbone::Gru(GruParams::zeros(p.hidden_dim, p.input_dim)),
        };
        ModelParams {
            kind: self.kind,
            backbone,
            readout: Readout::zeros(self.readout.w.len()),
        }
    }

    pub fn cell_spec<'a>(&'a self, gamma: Option<&'a GammaParams>) -> CellSpec<'a> {
        match (&self.backbone, self.kind) {
            (Backbone::Gru(p), _) => CellSpec::Gru(p),
            (Backbone::Lstm(p), CellKind::Litt) => CellSpec::Litt {
                params: p,
                gamma: gamma.unwrap_or(&IDENTITY_GAMMA),
            },
            (Backbone::Lstm(p), _) => CellSpec::Lstm(p),
        }
    }

    fn gates(&self) -> Vec<(&'static str, &GateParams)> {
        match &self.backbone {
            Backbone::Lstm(p) => vec![
                ("forget", &p.forget),
                ("input", &p.input),
                ("output", &p.output),
                ("candidate", &p.candidate),
            ],
            Backbone::Gru(p) => vec![
                ("update", &p.update),
                ("reset", &p.reset),
                ("candidate", &p.candidate),
            ],
        }
    }

    fn gates_mut(&mut self) -> Vec<(&'static str, &mut GateParams)> {
        match &mut self.backbone {
            Backbone::Lstm(p) => vec![
                ("forget", &mut p.forget),
                ("input", &mut p.input),
                ("output", &mut p.output),
                ("candidate", &mut p.candidate),
            ],
            Backbone::Gru(p) => vec![
                ("update", &mut p.update),
                ("reset", &mut p.reset),
                ("candidate", &mut p.candidate),
            ],
        }
    }

    pub fn n_params(&self) -> usize {
        let gate: usize = self
            .gates()
            .iter()
            .map(|(_, g)| g.u.rows() * g.u.cols() + g.w.rows() * g.w.cols() + g.b.len())
            .sum();
        gate + self.readout.w.len() + 1
    }

    /// Flattens all group parameters in a fixed order: per gate u, w, b;
    /// then readout w, b.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (_, g) in self.gates() {
            out.extend_from_slice(g.u.data());
            out.extend_from_slice(g.w.data());
            out.extend_from_slice(&g.b);
        }
        out.extend_from_slice(&self.readout.w);
        out.push(self.readout.b);
        out
    }

    pub fn from_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.n_params());
        let mut pos = 0usize;
        for (_, g) in self.gates_mut() {
            let nu = g.u.rows() * g.u.cols();
            g.u.data_mut().copy_from_slice(&flat[pos..pos + nu]);
            pos += nu;
            let nw = g.w.rows() * g.w.cols();
            g.w.data_mut().copy_from_slice(&flat[pos..pos + nw]);
            pos += nw;
            let nb = g.b.len();
            g.b.copy_from_slice(&flat[pos..pos + nb]);
            pos += nb;
        }
        let h = self.readout.w.len();
        self.readout.w.copy_from_slice(&flat[pos..pos + h]);
        pos += h;
        self.readout.b = flat[pos];
    }

    /// Human-readable name of a flat coordinate, for gradient-check
    /// reports.
    pub fn coord_name(&self, idx: usize) -> String {
        let mut pos = 0usize;
        for (name, g) in self.gates() {
            let (hu, wu) = (g.u.rows(), g.u.cols());
            if idx < pos + hu * wu {
                let off = idx - pos;
                return format!("{name}.u[{},{}]", off / wu, off % wu);
            }
            pos += hu * wu;
            let (hw, ww) = (g.w.rows(), g.w.cols());
            if idx < pos + hw * ww {
                let off = idx - pos;
                return format!("{name}.w[{},{}]", off / ww, off % ww);
            }
            pos += hw * ww;
            if idx < pos + g.b.len() {
                return format!("{name}.b[{}]", idx - pos);
            }
            pos += g.b.len();
        }
        if idx < pos + self.readout.w.len() {
            return format!("readout.w[{}]", idx - pos);
        }
        if idx == pos + self.readout.w.len() {
            return "readout.b".into();
        }
        format!("coord[{idx}]")
    }
}

static IDENTITY_GAMMA: GammaParams = GammaParams {
    w_gamma: 0.0,
    b_gamma: 0.0,
};

/// Timing regression target for one individual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingTarget {
    pub label_day: f64,
    pub censored: bool,
    pub last_obs_day: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    /// Plain squared error on the label day for everyone (synthetic
    /// cohorts where the censored label is still ground truth).
    TimingMse,
    /// Squared error for uncensored individuals; censored ones contribute
    /// through the hinge below, or nothing.
    MaskedTimingMse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSpec {
    pub kind: LossKind,
    /// When set, right-censored individuals are penalized one-sidedly:
    /// max(0, last_obs - prediction)^2 — predicting before the last
    /// observed day contradicts the record, predicting after it does not.
    pub censor_hinge: bool,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            kind: LossKind::MaskedTimingMse,
            censor_hinge: true,
        }
    }
}

/// Loss value and d(loss)/d(prediction) for one individual.
pub fn timing_loss(pred: f64, target: &TimingTarget, spec: &LossSpec) -> (f64, f64) {
    match spec.kind {
        LossKind::TimingMse => {
            let d = pred - target.label_day;
            (d * d, 2.0 * d)
        }
        LossKind::MaskedTimingMse => {
            if !target.censored {
                let d = pred - target.label_day;
                (d * d, 2.0 * d)
            } else if spec.censor_hinge && pred < target.last_obs_day {
                let d = target.last_obs_day - pred;
                (d * d, -2.0 * d)
            } else {
                (0.0, 0.0)
            }
        }
    }
}

/// Gradients of one sequence's loss with respect to every parameter.
#[derive(Debug, Clone)]
pub struct BpttResult {
    pub prediction: f64,
    pub loss: f64,
    /// Group-parameter gradients, mirroring [`ModelParams`].
    pub grads: ModelParams,
    /// (d/d w_gamma, d/d b_gamma); zero unless the cell is LITT.
    pub gamma_grad: [f64; 2],
}

/// Forward pass plus prediction, without gradients.
pub fn predict(
    model: &ModelParams,
    gamma: Option<&GammaParams>,
    xs: &[Vec<f64>],
    ts: &[f64],
) -> Result<f64, GradError> {
    let run = run_sequence(model.cell_spec(gamma), xs, ts)?;
    Ok(readout(&run.final_state.h, &model.readout.w, model.readout.b))
}

/// Full backpropagation through time for one sequence.
///
/// `horizon` truncates the backward recursion: gradients stop flowing
/// more than `horizon` steps back from the end of the sequence. `None`
/// is a full unroll.
pub fn bptt(
    model: &ModelParams,
    gamma: Option<&GammaParams>,
    xs: &[Vec<f64>],
    ts: &[f64],
    target: &TimingTarget,
    loss_spec: &LossSpec,
    horizon: Option<usize>,
) -> Result<BpttResult, GradError> {
    let run = run_sequence(model.cell_spec(gamma), xs, ts)?;
    let h_final = &run.final_state.h;
    let prediction = readout(h_final, &model.readout.w, model.readout.b);
    let (loss, dpred) = timing_loss(prediction, target, loss_spec);
    if !loss.is_finite() {
        return Err(GradError::Diverged { epoch: 0 });
    }

    let mut grads = model.zeros_like();
    let mut gamma_grad = [0.0, 0.0];

    // Readout head.
    for (gw, hv) in grads.readout.w.iter_mut().zip(h_final) {
        *gw = dpred * hv;
    }
    grads.readout.b = dpred;

    let hidden = model.backbone.hidden_dim();
    let mut d_h: Vec<f64> = model.readout.w.iter().map(|w| dpred * w).collect();

    match (&model.backbone, &run.traces, &mut grads.backbone) {
        (Backbone::Lstm(p), RunTraces::Recurrent(traces), Backbone::Lstm(g)) => {
            let mut d_c = vec![0.0; hidden];
            for i in (0..traces.len()).rev() {
                let tr = &traces[i];
                let (h_prev, c_prev): (&[f64], &[f64]) = if i > 0 {
                    (&traces[i - 1].h, &traces[i - 1].c_post)
                } else {
                    (&ZERO_STATE[..0], &ZERO_STATE[..0])
                };
                let zeros = vec![0.0; hidden];
                let h_prev = if h_prev.is_empty() { &zeros } else { h_prev };
                let c_prev = if c_prev.is_empty() { &zeros } else { c_prev };

                let step = backward_recurrent_step(
                    tr,
                    h_prev,
                    c_prev,
                    &xs[i],
                    ts[i],
                    &d_h,
                    &d_c,
                    p,
                    g,
                    model.kind == CellKind::Litt,
                );
                d_h = step.d_h_prev;
                d_c = step.d_c_prev;
                gamma_grad[0] += step.d_gamma * ts[i];
                gamma_grad[1] += step.d_gamma;

                if let Some(k) = horizon {
                    if traces.len() - i >= k {
                        break;
                    }
                }
            }
        }
        (Backbone::Gru(p), RunTraces::Gru(traces), Backbone::Gru(g)) => {
            for i in (0..traces.len()).rev() {
                let tr = &traces[i];
                let zeros = vec![0.0; hidden];
                let h_prev: &[f64] = if i > 0 { &traces[i - 1].h } else { &zeros };
                d_h = backward_gru_step(tr, h_prev, &xs[i], &d_h, p, g);
                if let Some(k) = horizon {
                    if traces.len() - i >= k {
                        break;
                    }
                }
            }
        }
        _ => unreachable!("trace kind always matches backbone"),
    }

    Ok(BpttResult {
        prediction,
        loss,
        grads,
        gamma_grad,
    })
}

static ZERO_STATE: [f64; 0] = [];

struct RecurrentStepGrads {
    d_h_prev: Vec<f64>,
    d_c_prev: Vec<f64>,
    d_gamma: f64,
}

#[allow(clippy::too_many_arguments)]
fn backward_recurrent_step(
    tr: &StepTrace,
    h_prev: &[f64],
    c_prev: &[f64],
    x: &[f64],
    _t: f64,
    d_h: &[f64],
    d_c_carry: &[f64],
    p: &LstmParams,
    g: &mut LstmParams,
    is_litt: bool,
) -> RecurrentStepGrads {
    let hidden = p.hidden_dim;
    // h = o . tanh(c_post)
    let mut d_o = vec![0.0; hidden];
    let mut d_c_post = d_c_carry.to_vec();
    for k in 0..hidden {
        let tc = tr.c_post[k].tanh();
        d_o[k] = d_h[k] * tc;
        d_c_post[k] += d_h[k] * tr.o[k] * (1.0 - tc * tc);
    }
    // Time gate: c_post = scale * c_pre, scale = exp(-gamma).
    let (d_c_pre, d_gamma) = if is_litt {
        let d_scale: f64 = d_c_post
            .iter()
            .zip(&tr.c_pre)
            .map(|(d, c)| d * c)
            .sum();
        // Clamped gamma is flat: no gradient through the guard.
        let d_gamma = if tr.clamped { 0.0 } else { -tr.scale * d_scale };
        let d_c_pre: Vec<f64> = d_c_post.iter().map(|d| d * tr.scale).collect();
        (d_c_pre, d_gamma)
    } else {
        (d_c_post, 0.0)
    };
    // c_pre = f . c_prev + i . tanh(y)
    let mut d_f = vec![0.0; hidden];
    let mut d_i = vec![0.0; hidden];
    let mut d_y = vec![0.0; hidden];
    let mut d_c_prev = vec![0.0; hidden];
    for k in 0..hidden {
        let ty = tr.y[k].tanh();
        d_f[k] = d_c_pre[k] * c_prev[k];
        d_i[k] = d_c_pre[k] * ty;
        d_y[k] = d_c_pre[k] * tr.i[k] * (1.0 - ty * ty);
        d_c_prev[k] = d_c_pre[k] * tr.f[k];
    }
    // Through the gate nonlinearities to pre-activations.
    let da_f: Vec<f64> = (0..hidden).map(|k| d_f[k] * tr.f[k] * (1.0 - tr.f[k])).collect();
    let da_i: Vec<f64> = (0..hidden).map(|k| d_i[k] * tr.i[k] * (1.0 - tr.i[k])).collect();
    let da_o: Vec<f64> = (0..hidden).map(|k| d_o[k] * tr.o[k] * (1.0 - tr.o[k])).collect();
    let da_y = d_y;

    accumulate_gate(&mut g.forget, &da_f, h_prev, x);
    accumulate_gate(&mut g.input, &da_i, h_prev, x);
    accumulate_gate(&mut g.output, &da_o, h_prev, x);
    accumulate_gate(&mut g.candidate, &da_y, h_prev, x);

    let mut d_h_prev = p.forget.u.matvec_t(&da_f).expect("shape");
    add_assign(&mut d_h_prev, &p.input.u.matvec_t(&da_i).expect("shape"));
    add_assign(&mut d_h_prev, &p.output.u.matvec_t(&da_o).expect("shape"));
    add_assign(&mut d_h_prev, &p.candidate.u.matvec_t(&da_y).expect("shape"));

    RecurrentStepGrads {
        d_h_prev,
        d_c_prev,
        d_gamma,
    }
}

fn backward_gru_step(
    tr: &GruStepTrace,
    h_prev: &[f64],
    x: &[f64],
    d_h: &[f64],
    p: &GruParams,
    g: &mut GruParams,
) -> Vec<f64> {
    let hidden = p.hidden_dim;
    // h = (1-z) . h_prev + z . h_cand
    let mut d_z = vec![0.0; hidden];
    let mut d_hc = vec![0.0; hidden];
    let mut d_h_prev = vec![0.0; hidden];
    for k in 0..hidden {
        d_z[k] = d_h[k] * (tr.h_cand[k] - h_prev[k]);
        d_hc[k] = d_h[k] * tr.z[k];
        d_h_prev[k] = d_h[k] * (1.0 - tr.z[k]);
    }
    // h_cand = tanh(a_h), a_h = W x + U (r . h_prev) + b
    let da_h: Vec<f64> = (0..hidden)
        .map(|k| d_hc[k] * (1.0 - tr.h_cand[k] * tr.h_cand[k]))
        .collect();
    let d_rh = p.candidate.u.matvec_t(&da_h).expect("shape");
    let d_r: Vec<f64> = (0..hidden).map(|k| d_rh[k] * h_prev[k]).collect();
    let da_r: Vec<f64> = (0..hidden).map(|k| d_r[k] * tr.r[k] * (1.0 - tr.r[k])).collect();
    let da_z: Vec<f64> = (0..hidden).map(|k| d_z[k] * tr.z[k] * (1.0 - tr.z[k])).collect();

    let rh: Vec<f64> = tr.r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    accumulate_gate(&mut g.update, &da_z, h_prev, x);
    accumulate_gate(&mut g.reset, &da_r, h_prev, x);
    accumulate_gate_with_recurrent_input(&mut g.candidate, &da_h, &rh, x);

    for k in 0..hidden {
        d_h_prev[k] += d_rh[k] * tr.r[k];
    }
    add_assign(&mut d_h_prev, &p.update.u.matvec_t(&da_z).expect("shape"));
    add_assign(&mut d_h_prev, &p.reset.u.matvec_t(&da_r).expect("shape"));
    d_h_prev
}

fn accumulate_gate(g: &mut GateParams, da: &[f64], h_prev: &[f64], x: &[f64]) {
    g.u.add_outer(da, h_prev, 1.0);
    g.w.add_outer(da, x, 1.0);
    for (b, d) in g.b.iter_mut().zip(da) {
        *b += d;
    }
}

/// Same as [`accumulate_gate`] but the recurrent input is an arbitrary
/// vector (the GRU candidate sees `r . h_prev`, not `h_prev`).
fn accumulate_gate_with_recurrent_input(g: &mut GateParams, da: &[f64], rec: &[f64], x: &[f64]) {
    g.u.add_outer(da, rec, 1.0);
    g.w.add_outer(da, x, 1.0);
    for (b, d) in g.b.iter_mut().zip(da) {
        *b += d;
    }
}

fn add_assign(a: &mut [f64], b: &[f64]) {
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
}

// ---------------------------------------------------------------------------
// Finite-difference verification
// ---------------------------------------------------------------------------

/// Worst coordinate report from a finite-difference check.
#[derive(Debug, Clone)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub worst_coord: String,
    pub n_coords: usize,
}

/// Relative-error floor: coordinates whose analytic and numeric gradients
/// are both below this magnitude are compared absolutely against it, so
/// roundoff in near-zero gradients cannot dominate the report.
pub const FD_REL_FLOOR: f64 = 1e-2;

/// Central-difference check of [`bptt`] over every parameter coordinate
/// (group parameters plus, for LITT, the two gamma coordinates).
pub fn finite_diff_check(
    model: &ModelParams,
    gamma: Option<&GammaParams>,
    xs: &[Vec<f64>],
    ts: &[f64],
    target: &TimingTarget,
    loss_spec: &LossSpec,
    epsilon: f64,
) -> Result<FdReport, GradError> {
    if !(1e-8..=1e-4).contains(&epsilon) {
        return Err(GradError::Config(format!(
            "epsilon {epsilon} outside [1e-8, 1e-4]"
        )));
    }
    let analytic = bptt(model, gamma, xs, ts, target, loss_spec, None)?;
    let flat_grads = analytic.grads.to_flat();

    let loss_at = |m: &ModelParams, g: Option<&GammaParams>| -> Result<f64, GradError> {
        let run = run_sequence(m.cell_spec(g), xs, ts)?;
        let pred = readout(&run.final_state.h, &m.readout.w, m.readout.b);
        Ok(timing_loss(pred, target, loss_spec).0)
    };

    let mut max_rel = 0.0f64;
    let mut worst = String::from("-");
    let flat = model.to_flat();
    let mut scratch = model.clone();
    let record = |idx_name: String, a: f64, n: f64, max_rel: &mut f64, worst: &mut String| {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(FD_REL_FLOOR);
        if rel > *max_rel {
            *max_rel = rel;
            *worst = idx_name;
        }
    };

    for idx in 0..flat.len() {
        let mut bumped = flat.clone();
        bumped[idx] += epsilon;
        scratch.from_flat(&bumped);
        let up = loss_at(&scratch, gamma)?;
        bumped[idx] = flat[idx] - epsilon;
        scratch.from_flat(&bumped);
        let down = loss_at(&scratch, gamma)?;
        let numeric = (up - down) / (2.0 * epsilon);
        record(
            model.coord_name(idx),
            flat_grads[idx],
            numeric,
            &mut max_rel,
            &mut worst,
        );
    }
    scratch.from_flat(&flat);

    let mut n_coords = flat.len();
    if model.kind == CellKind::Litt {
        let base = gamma.copied().unwrap_or(GammaParams::identity());
        for (ci, name) in [(0usize, "gamma.w"), (1usize, "gamma.b")] {
            let mut up_g = base;
            let mut dn_g = base;
            match ci {
                0 => {
                    up_g.w_gamma += epsilon;
                    dn_g.w_gamma -= epsilon;
                }
                _ => {
                    up_g.b_gamma += epsilon;
                    dn_g.b_gamma -= epsilon;
                }
            }
            let up = loss_at(model, Some(&up_g))?;
            let down = loss_at(model, Some(&dn_g))?;
            let numeric = (up - down) / (2.0 * epsilon);
            record(
                name.to_string(),
                analytic.gamma_grad[ci],
                numeric,
                &mut max_rel,
                &mut worst,
            );
            n_coords += 1;
        }
    }

    Ok(FdReport {
        max_rel_err: max_rel,
        worst_coord: worst,
        n_coords,
    })
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm clip threshold applied to the gradient before the
    /// moment update; non-finite disables clipping.
    pub clip: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, clip: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip,
        }
    }
}

/// First/second moment accumulators for one flat parameter vector.
#[derive(Debug, Clone)]
pub struct OptState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub cfg: AdamConfig,
}

impl OptState {
    pub fn new(n: usize, cfg: AdamConfig) -> Self {
        OptState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            cfg,
        }
    }
}

/// Scales `grads` in place so its global L2 norm is at most `threshold`;
/// returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut [f64], threshold: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if threshold.is_finite() && norm > threshold && norm > 0.0 {
        let s = threshold / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

/// One adaptive-moment update with bias correction. Clipping happens
/// first; `params` and `grads` must match the state's length.
pub fn optimizer_step(opt: &mut OptState, params: &mut [f64], grads: &[f64]) {
    assert_eq!(params.len(), opt.m.len());
    assert_eq!(grads.len(), opt.m.len());
    let mut g = grads.to_vec();
    clip_global_norm(&mut g, opt.cfg.clip);
    opt.step += 1;
    let t = opt.step as i32;
    let b1 = opt.cfg.beta1;
    let b2 = opt.cfg.beta2;
    let bias1 = 1.0 - b1.powi(t);
    let bias2 = 1.0 - b2.powi(t);
    for k in 0..params.len() {
        opt.m[k] = b1 * opt.m[k] + (1.0 - b1) * g[k];
        opt.v[k] = b2 * opt.v[k] + (1.0 - b2) * g[k] * g[k];
        let m_hat = opt.m[k] / bias1;
        let v_hat = opt.v[k] / bias2;
        params[k] -= opt.cfg.lr * m_hat / (v_hat.sqrt() + opt.cfg.epsilon);
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Training configuration; serializable as a flat key=value file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Learning rate for the individual-level gamma group; defaults to
    /// `lr` when absent.
    pub lr_gamma: Option<f64>,
    pub hidden_dim: usize,
    pub clip: f64,
    pub seed: u64,
    /// `true` = "ind" mode (per-individual gamma trained); `false` =
    /// "no_ind" (gamma frozen at identity).
    pub individualize: bool,
    /// BPTT horizon; None = full unroll.
    pub truncation: Option<usize>,
    pub loss: LossSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            lr: 0.02,
            lr_gamma: None,
            hidden_dim: 8,
            clip: 5.0,
            seed: 1,
            individualize: true,
            truncation: None,
            loss: LossSpec::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_kv(text: &str) -> Result<Self, GradError> {
        let mut cfg = TrainConfig::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                GradError::Config(format!("line {}: expected key=value", lineno + 1))
            })?;
            let value = value.trim();
            let bad = |what: &str| GradError::Config(format!("bad {what}: `{value}`"));
            match key.trim() {
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "lr" => cfg.lr = value.parse().map_err(|_| bad("lr"))?,
                "lr_gamma" => cfg.lr_gamma = Some(value.parse().map_err(|_| bad("lr_gamma"))?),
                "hidden_dim" => cfg.hidden_dim = value.parse().map_err(|_| bad("hidden_dim"))?,
                "clip" => cfg.clip = value.parse().map_err(|_| bad("clip"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                "mode" => {
                    cfg.individualize = match value {
                        "ind" => true,
                        "no_ind" => false,
                        _ => return Err(bad("mode (ind|no_ind)")),
                    }
                }
                "truncation" => {
                    let k: usize = value.parse().map_err(|_| bad("truncation"))?;
                    cfg.truncation = if k == 0 { None } else { Some(k) };
                }
                "censor_hinge" => {
                    cfg.loss.censor_hinge = match value {
                        "1" | "true" => true,
                        "0" | "false" => false,
                        _ => return Err(bad("censor_hinge")),
                    }
                }
                other => return Err(GradError::Config(format!("unknown key `{other}`"))),
            }
        }
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        format!(
            "epochs={}\nlr={}\nlr_gamma={}\nhidden_dim={}\nclip={}\nseed={}\nmode={}\ntruncation={}\ncensor_hinge={}\n",
            self.epochs,
            self.lr,
            self.lr_gamma.unwrap_or(self.lr),
            self.hidden_dim,
            self.clip,
            self.seed,
            if self.individualize { "ind" } else { "no_ind" },
            self.truncation.unwrap_or(0),
            if self.loss.censor_hinge { 1 } else { 0 },
        )
    }
}

/// Trained model plus the per-epoch RMSE trace.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ModelParams,
    /// Per-individual gamma parameters, aligned with cohort order;
    /// identity when individualization was off or the cell is not LITT.
    pub gammas: Vec<GammaParams>,
    /// RMSE (days, uncensored individuals) after e updates; entry 0 is
    /// the initial model.
    pub epoch_rmse: Vec<f64>,
}

fn cohort_rmse(
    model: &ModelParams,
    gammas: &[GammaParams],
    cohort: &CohortBatch,
) -> Result<f64, GradError> {
    let mut sq = 0.0;
    let mut n = 0usize;
    for (ind, g) in cohort.individuals.iter().zip(gammas) {
        if ind.censored {
            continue;
        }
        let pred = predict(model, Some(g), &ind.features, &ind.times)?;
        sq += (pred - ind.label_day) * (pred - ind.label_day);
        n += 1;
    }
    if n == 0 {
        return Err(GradError::NoUncensored);
    }
    Ok((sq / n as f64).sqrt())
}

/// Full-batch training loop. Group parameters take one adaptive-moment
/// step per epoch from the cohort-mean gradient; each individual's gamma
/// pair has its own optimizer state fed only by that individual's loss
/// term, clipped per individual so updates stay isolated.
pub fn train(
    cohort: &CohortBatch,
    kind: CellKind,
    cfg: &TrainConfig,
) -> Result<TrainOutcome, GradError> {
    if cohort.individuals.is_empty() {
        return Err(GradError::EmptyCohort);
    }
    if cohort.individuals.iter().all(|i| i.censored) {
        return Err(GradError::NoUncensored);
    }
    let n = cohort.n();
    let input_dim = cohort.feature_names.len();
    let mut rng = Rng::from_seed(cfg.seed);
    let mut model = ModelParams::init(kind, cfg.hidden_dim, input_dim, &mut rng);
    // Start the readout at the mean uncensored label so the first epochs
    // fit structure rather than the offset.
    let labels: Vec<f64> = cohort
        .individuals
        .iter()
        .filter(|i| !i.censored)
        .map(|i| i.label_day)
        .collect();
    model.readout.b = labels.iter().sum::<f64>() / labels.len() as f64;

    let mut gammas = vec![GammaParams::identity(); n];
    let train_gamma = kind == CellKind::Litt && cfg.individualize;

    let group_cfg = AdamConfig::new(cfg.lr, cfg.clip);
    let gamma_cfg = AdamConfig::new(cfg.lr_gamma.unwrap_or(cfg.lr), cfg.clip);
    let mut group_opt = OptState::new(model.n_params(), group_cfg);
    let mut gamma_opts: Vec<OptState> = (0..n).map(|_| OptState::new(2, gamma_cfg)).collect();

    let mut epoch_rmse = Vec::with_capacity(cfg.epochs + 1);
    epoch_rmse.push(cohort_rmse(&model, &gammas, cohort)?);

    for epoch in 0..cfg.epochs {
        let mut group_acc = vec![0.0; model.n_params()];
        let mut gamma_accs = vec![[0.0f64; 2]; n];
        let mut total_loss = 0.0;
        for (j, ind) in cohort.individuals.iter().enumerate() {
            let target = TimingTarget {
                label_day: ind.label_day,
                censored: ind.censored,
                last_obs_day: ind.last_obs_day,
            };
            let out = bptt(
                &model,
                Some(&gammas[j]),
                &ind.features,
                &ind.times,
                &target,
                &cfg.loss,
                cfg.truncation,
            )?;
            total_loss += out.loss;
            let flat = out.grads.to_flat();
            for (a, g) in group_acc.iter_mut().zip(&flat) {
                *a += g / n as f64;
            }
            gamma_accs[j] = [out.gamma_grad[0] / n as f64, out.gamma_grad[1] / n as f64];
        }
        if !total_loss.is_finite() {
            return Err(GradError::Diverged { epoch });
        }
        let mut flat = model.to_flat();
        optimizer_step(&mut group_opt, &mut flat, &group_acc);
        model.from_flat(&flat);
        if train_gamma {
            for j in 0..n {
                let mut pair = [gammas[j].w_gamma, gammas[j].b_gamma];
                optimizer_step(&mut gamma_opts[j], &mut pair, &gamma_accs[j]);
                gammas[j] = GammaParams {
                    w_gamma: pair[0],
                    b_gamma: pair[1],
                };
            }
        }
        epoch_rmse.push(cohort_rmse(&model, &gammas, cohort)?);
    }

    Ok(TrainOutcome {
        model,
        gammas,
        epoch_rmse,
    })
}

/// Fits a gamma pair for one sequence with the group weights frozen, by
/// adaptive-moment descent on that sequence's own timing loss. This is
/// the same update rule training applies to its per-individual gamma
/// group, exposed for held-out individuals.
pub fn fit_gamma_for_sequence(
    model: &ModelParams,
    xs: &[Vec<f64>],
    ts: &[f64],
    target: &TimingTarget,
    loss_spec: &LossSpec,
    iters: usize,
    lr: f64,
) -> Result<(GammaParams, f64), GradError> {
    let mut gamma = GammaParams::identity();
    let mut opt = OptState::new(2, AdamConfig::new(lr, 5.0));
    let mut last_loss = 0.0;
    for _ in 0..iters {
        let out = bptt(model, Some(&gamma), xs, ts, target, loss_spec, None)?;
        last_loss = out.loss;
        let mut pair = [gamma.w_gamma, gamma.b_gamma];
        optimizer_step(&mut opt, &mut pair, &out.gamma_grad);
        gamma = GammaParams {
            w_gamma: pair[0],
            b_gamma: pair[1],
        };
    }
    Ok((gamma, last_loss))
}

/// Epoch trace serialized as `epoch,rmse_days` CSV.
pub fn epoch_trace_csv(rmse: &[f64]) -> String {
    let mut out = String::from("epoch,rmse_days\n");
    for (e, r) in rmse.iter().enumerate() {
        out.push_str(&format!("{e},{r}\n"));
    }
    out
}
