//! Discrete-time comparison models: the recurrent ResNet
//! `h_{t+1} = h_t + f([h_t; input_t])` and autoregressive RNN/GRU/LSTM cells
//! with a residual linear readout, trained by full backpropagation through
//! time.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::Waveform;
use crate::error::{check_dim, Error, Result};
use crate::eval::SplitScores;
use crate::metrics::l1_slices;
use crate::nn::{glorot_fill, init_params, LayerRecord, MlpCache, MlpParams, NetShape, ParamsFile, PARAMS_FORMAT_VERSION};
use crate::rng;
use crate::training::{column_std, fit, report, shooting_objective, window_starts, Lorenz96TwinSetup, TrainConfig, TrainReport};
use crate::trajectory::Trajectory;

/// `h + f([h; input])`.
pub fn resnet_step(params: &MlpParams, h: &[f64], input: &[f64]) -> Result<Vec<f64>> {
    let n = params.shape().output_dim();
    check_dim(n, h.len())?;
    check_dim(params.shape().input_dim(), n + input.len())?;
    let x = [h, input].concat();
    let f = params.forward(&x)?;
    Ok(h.iter().zip(&f).map(|(a, b)| a + b).collect())
}

/// Iterate [`resnet_step`] with `inputs[k]` (row-major, `k < times.len()-1`)
/// and emit the states on `times`.
pub fn resnet_rollout(params: &MlpParams, h0: &[f64], inputs: &[f64], times: &[f64]) -> Result<Trajectory> {
    let steps = times.len().saturating_sub(1);
    if steps == 0 {
        return Err(Error::Baseline("rollout needs at least one step".into()));
    }
    let n = h0.len();
    let m = params.shape().input_dim().saturating_sub(n);
    check_dim(steps * m, inputs.len())?;
    let mut states = h0.to_vec();
    let mut h = h0.to_vec();
    for k in 0..steps {
        h = resnet_step(params, &h, &inputs[k * m..(k + 1) * m])?;
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: times[k + 1] });
        }
        states.extend_from_slice(&h);
    }
    Trajectory::new(times.to_vec(), n, states)
}

/// Drive samples at every grid time except the last, one column.
pub fn drive_inputs(drive: &Waveform, times: &[f64]) -> Vec<f64> {
    times[..times.len().saturating_sub(1)].iter().map(|t| drive.eval(*t)).collect()
}

/// Loss and gradient of a ResNet rollout, by backpropagation through time.
pub fn resnet_loss_grad(
    params: &MlpParams,
    h0: &[f64],
    inputs: &[f64],
    truth: &[f64],
    loss: crate::training::LossSpec,
) -> Result<(f64, Vec<f64>)> {
    let n = h0.len();
    let m = params.shape().input_dim() - n;
    let steps = truth.len() / n - 1;
    check_dim(steps * m, inputs.len())?;
    let mut caches = Vec::with_capacity(steps);
    let mut states = h0.to_vec();
    let mut x = vec![0.0; n + m];
    for k in 0..steps {
        x[..n].copy_from_slice(&states[k * n..(k + 1) * n]);
        x[n..].copy_from_slice(&inputs[k * m..(k + 1) * m]);
        let mut c = MlpCache::new(params.shape());
        let f = params.forward_cached(&x, &mut c).to_vec();
        for i in 0..n {
            let v = states[k * n + i] + f[i];
            states.push(v);
        }
        caches.push(c);
    }
    if states.iter().any(|v| !v.is_finite()) {
        return Err(Error::Baseline("ResNet rollout diverged".into()));
    }
    let (value, dl) = loss.value_and_grad(&states, truth, n)?;
    let mut grad = vec![0.0; params.param_count()];
    let mut a = dl[steps * n..].to_vec();
    let mut gin = vec![0.0; n + m];
    for k in (0..steps).rev() {
        params.backward_cached(&mut caches[k], &a, &mut grad, &mut gin);
        for i in 0..n {
            a[i] += gin[i] + dl[k * n + i];
        }
    }
    Ok((value, grad))
}

/// Train the recurrent ResNet on the HP reference with the same loss and
/// optimizer as the neural ODE.
pub fn train_resnet_hp(
    reference: &Trajectory,
    drive: &Waveform,
    shape: &NetShape,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    shape.validate()?;
    if shape.input_dim() != reference.dim() + 1 || shape.output_dim() != reference.dim() {
        return Err(Error::Baseline(format!("net {:?} does not fit a driven 1-D state", shape.0)));
    }
    let start = Instant::now();
    let mut params = init_params(shape, cfg.seed)?;
    let inputs = drive_inputs(drive, reference.times());
    let h0 = reference.row(0).to_vec();
    let outcome = fit(params.data_mut(), cfg, |theta, _| {
        let p = MlpParams::from_flat(shape.clone(), theta.to_vec())?;
        resnet_loss_grad(&p, &h0, &inputs, reference.states(), cfg.loss)
    });
    let count = params.param_count();
    Ok(report("hp-resnet", params, count, cfg, outcome, Some((0, reference.len() - 1)), None, start))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Rnn,
    Gru,
    Lstm,
}

impl CellKind {
    pub const ALL: [CellKind; 3] = [CellKind::Rnn, CellKind::Gru, CellKind::Lstm];

    pub fn name(self) -> &'static str {
        match self {
            CellKind::Rnn => "rnn",
            CellKind::Gru => "gru",
            CellKind::Lstm => "lstm",
        }
    }

    pub fn gates(self) -> usize {
        match self {
            CellKind::Rnn => 1,
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }

    fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown cell kind `{s}`")))
    }
}

/// Recurrent cell with residual readout `x_{k+1} = x_k + W_o h_{k+1} + b_o`.
///
/// Flat layout: `W_x (G*H x I)`, `b_x (G*H)`, `W_h (G*H x H)`, `b_h (G*H)`,
/// `W_o (I x H)`, `b_o (I)`. Gate blocks are ordered `r, z, n` for the GRU
/// and `i, f, g, o` for the LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentCellParams {
    pub kind: CellKind,
    pub input: usize,
    pub hidden: usize,
    pub data: Vec<f64>,
}

struct Layout {
    wx: usize,
    bx: usize,
    wh: usize,
    bh: usize,
    wo: usize,
    bo: usize,
    end: usize,
}

impl RecurrentCellParams {
    fn layout(kind: CellKind, input: usize, hidden: usize) -> Layout {
        let gh = kind.gates() * hidden;
        let wx = 0;
        let bx = wx + gh * input;
        let wh = bx + gh;
        let bh = wh + gh * hidden;
        let wo = bh + gh;
        let bo = wo + input * hidden;
        Layout { wx, bx, wh, bh, wo, bo, end: bo + input }
    }

    pub fn param_count_for(kind: CellKind, input: usize, hidden: usize) -> usize {
        Self::layout(kind, input, hidden).end
    }

    pub fn zeros(kind: CellKind, input: usize, hidden: usize) -> Result<Self> {
        if input == 0 || hidden == 0 {
            return Err(Error::Baseline("cell sizes must be positive".into()));
        }
        Ok(Self { kind, input, hidden, data: vec![0.0; Self::param_count_for(kind, input, hidden)] })
    }

    /// Glorot-uniform matrices, zero biases; the readout starts at zero so
    /// the untrained model predicts persistence.
    pub fn init(kind: CellKind, input: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(kind, input, hidden)?;
        let l = p.lay();
        let gh = kind.gates() * hidden;
        let mut r = rng::stream(seed, "cell-init");
        glorot_fill(&mut p.data[l.wx..l.bx], input, gh, &mut r);
        glorot_fill(&mut p.data[l.wh..l.bh], hidden, gh, &mut r);
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        self.data.len()
    }

    fn lay(&self) -> Layout {
        Self::layout(self.kind, self.input, self.hidden)
    }

    pub fn to_file(&self) -> ParamsFile {
        let l = self.lay();
        let gh = self.kind.gates() * self.hidden;
        let rec = |name: &str, rows, cols, w: &[f64], b: &[f64]| LayerRecord {
            name: Some(name.into()),
            rows,
            cols,
            weights: w.to_vec(),
            bias: b.to_vec(),
        };
        ParamsFile {
            format_version: PARAMS_FORMAT_VERSION,
            cell_kind: Some(self.kind.name().into()),
            shape: vec![self.input, self.hidden, self.input],
            layers: vec![
                rec("input", gh, self.input, &self.data[l.wx..l.bx], &self.data[l.bx..l.wh]),
                rec("recurrent", gh, self.hidden, &self.data[l.wh..l.bh], &self.data[l.bh..l.wo]),
                rec("readout", self.input, self.hidden, &self.data[l.wo..l.bo], &self.data[l.bo..l.end]),
            ],
        }
    }

    pub fn from_file(file: &ParamsFile) -> Result<Self> {
        let kind = CellKind::parse(
            file.cell_kind.as_deref().ok_or_else(|| Error::Format("missing cell_kind".into()))?,
        )?;
        if file.format_version != PARAMS_FORMAT_VERSION || file.shape.len() != 3 || file.layers.len() != 3 {
            return Err(Error::Format("malformed recurrent cell parameters".into()));
        }
        let (input, hidden) = (file.shape[0], file.shape[1]);
        let mut p = Self::zeros(kind, input, hidden)?;
        let data: Vec<f64> = file.layers.iter().flat_map(|r| r.weights.iter().chain(&r.bias).copied()).collect();
        check_dim(p.data.len(), data.len())?;
        p.data = data;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("params serialize")
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn matvec_acc(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `out += W^T d`, with `W` row-major `d.len() x out.len()`.
fn matvec_t_acc(w: &[f64], d: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr != 0.0 {
            for (o, a) in out.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *o += dr * a;
            }
        }
    }
}

fn outer_acc(g: &mut [f64], d: &[f64], x: &[f64]) {
    let cols = x.len();
    for (r, dr) in d.iter().enumerate() {
        if *dr != 0.0 {
            for (o, xv) in g[r * cols..(r + 1) * cols].iter_mut().zip(x) {
                *o += dr * xv;
            }
        }
    }
}

/// Everything one cell step needs for its reverse pass.
#[derive(Debug, Clone)]
struct StepTape {
    x: Vec<f64>,
    h: Vec<f64>,
    c: Vec<f64>,
    /// Post-nonlinearity gate values.
    gates: Vec<f64>,
    /// Recurrent pre-activations (needed by the GRU candidate).
    ah: Vec<f64>,
    h_next: Vec<f64>,
    c_next: Vec<f64>,
}

impl RecurrentCellParams {
    /// One step: `(h, c)` to `(h', c')` given input `x`. `c` is unused
    /// except by the LSTM.
    fn cell_forward(&self, x: &[f64], h: &[f64], c: &[f64]) -> StepTape {
        let l = self.lay();
        let hd = self.hidden;
        let gh = self.kind.gates() * hd;
        let mut ax = self.data[l.bx..l.wh].to_vec();
        matvec_acc(&self.data[l.wx..l.bx], x, &mut ax);
        let mut ah = self.data[l.bh..l.wo].to_vec();
        matvec_acc(&self.data[l.wh..l.bh], h, &mut ah);
        let mut gates = vec![0.0; gh];
        let mut h_next = vec![0.0; hd];
        let mut c_next = vec![0.0; if self.kind == CellKind::Lstm { hd } else { 0 }];
        match self.kind {
            CellKind::Rnn => {
                for j in 0..hd {
                    gates[j] = (ax[j] + ah[j]).tanh();
                    h_next[j] = gates[j];
                }
            }
            CellKind::Gru => {
                for j in 0..hd {
                    let r = sigmoid(ax[j] + ah[j]);
                    let z = sigmoid(ax[hd + j] + ah[hd + j]);
                    let n = (ax[2 * hd + j] + r * ah[2 * hd + j]).tanh();
                    gates[j] = r;
                    gates[hd + j] = z;
                    gates[2 * hd + j] = n;
                    h_next[j] = (1.0 - z) * n + z * h[j];
                }
            }
            CellKind::Lstm => {
                for j in 0..hd {
                    let i = sigmoid(ax[j] + ah[j]);
                    let f = sigmoid(ax[hd + j] + ah[hd + j]);
                    let g = (ax[2 * hd + j] + ah[2 * hd + j]).tanh();
                    let o = sigmoid(ax[3 * hd + j] + ah[3 * hd + j]);
                    gates[j] = i;
                    gates[hd + j] = f;
                    gates[2 * hd + j] = g;
                    gates[3 * hd + j] = o;
                    c_next[j] = f * c[j] + i * g;
                    h_next[j] = o * c_next[j].tanh();
                }
            }
        }
        StepTape { x: x.to_vec(), h: h.to_vec(), c: c.to_vec(), gates, ah, h_next, c_next }
    }

    /// Reverse of [`cell_forward`]: given `dh'` and `dc'`, accumulate the
    /// parameter gradient and return `(dx, dh, dc)`.
    fn cell_backward(&self, t: &StepTape, dh_next: &[f64], dc_next: &[f64], grad: &mut [f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.lay();
        let hd = self.hidden;
        let gh = self.kind.gates() * hd;
        let mut dax = vec![0.0; gh];
        let mut dah = vec![0.0; gh];
        let mut dh = vec![0.0; hd];
        let mut dc = vec![0.0; t.c.len()];
        match self.kind {
            CellKind::Rnn => {
                for j in 0..hd {
                    let d = dh_next[j] * (1.0 - t.gates[j] * t.gates[j]);
                    dax[j] = d;
                    dah[j] = d;
                }
            }
            CellKind::Gru => {
                for j in 0..hd {
                    let (r, z, n) = (t.gates[j], t.gates[hd + j], t.gates[2 * hd + j]);
                    let dn = dh_next[j] * (1.0 - z);
                    let dz = dh_next[j] * (t.h[j] - n);
                    dh[j] += dh_next[j] * z;
                    let dpn = dn * (1.0 - n * n);
                    dax[2 * hd + j] = dpn;
                    dah[2 * hd + j] = dpn * r;
                    let dr = dpn * t.ah[2 * hd + j];
                    let dpr = dr * r * (1.0 - r);
                    dax[j] = dpr;
                    dah[j] = dpr;
                    let dpz = dz * z * (1.0 - z);
                    dax[hd + j] = dpz;
                    dah[hd + j] = dpz;
                }
            }
            CellKind::Lstm => {
                for j in 0..hd {
                    let (i, f, g, o) = (t.gates[j], t.gates[hd + j], t.gates[2 * hd + j], t.gates[3 * hd + j]);
                    let tc = t.c_next[j].tanh();
                    let dout = dh_next[j] * tc;
                    let dcn = dc_next[j] + dh_next[j] * o * (1.0 - tc * tc);
                    dc[j] = dcn * f;
                    let di = dcn * g;
                    let df = dcn * t.c[j];
                    let dg = dcn * i;
                    let ps = [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), dout * o * (1.0 - o)];
                    for (b, p) in ps.iter().enumerate() {
                        dax[b * hd + j] = *p;
                        dah[b * hd + j] = *p;
                    }
                }
            }
        }
        outer_acc(&mut grad[l.wx..l.bx], &dax, &t.x);
        for (g, d) in grad[l.bx..l.wh].iter_mut().zip(&dax) {
            *g += d;
        }
        outer_acc(&mut grad[l.wh..l.bh], &dah, &t.h);
        for (g, d) in grad[l.bh..l.wo].iter_mut().zip(&dah) {
            *g += d;
        }
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(&self.data[l.wx..l.bx], &dax, &mut dx);
        matvec_t_acc(&self.data[l.wh..l.bh], &dah, &mut dh);
        (dx, dh, dc)
    }

    fn readout(&self, x: &[f64], h: &[f64]) -> Vec<f64> {
        let l = self.lay();
        let mut out: Vec<f64> = x.iter().zip(&self.data[l.bo..l.end]).map(|(a, b)| a + b).collect();
        matvec_acc(&self.data[l.wo..l.bo], h, &mut out);
        out
    }

    /// Autoregressive rollout from `x0` with zero hidden state; row-major
    /// states for `steps + 1` rows.
    pub fn rollout_states(&self, x0: &[f64], steps: usize) -> Result<Vec<f64>> {
        Ok(self.rollout_tape(x0, steps)?.0)
    }

    fn rollout_tape(&self, x0: &[f64], steps: usize) -> Result<(Vec<f64>, Vec<StepTape>)> {
        check_dim(self.input, x0.len())?;
        let n = self.input;
        let mut states = x0.to_vec();
        let mut h = vec![0.0; self.hidden];
        let mut c = vec![0.0; if self.kind == CellKind::Lstm { self.hidden } else { 0 }];
        let mut tapes = Vec::with_capacity(steps);
        for k in 0..steps {
            let x = states[k * n..(k + 1) * n].to_vec();
            let tape = self.cell_forward(&x, &h, &c);
            let next = self.readout(&x, &tape.h_next);
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Baseline(format!("{} rollout diverged at step {}", self.kind.name(), k + 1)));
            }
            states.extend_from_slice(&next);
            h.clone_from(&tape.h_next);
            c.clone_from(&tape.c_next);
            tapes.push(tape);
        }
        Ok((states, tapes))
    }

    /// Loss of a rollout against `truth` (rows = steps + 1) and its gradient.
    pub fn loss_grad(&self, x0: &[f64], truth: &[f64], loss: crate::training::LossSpec) -> Result<(f64, Vec<f64>)> {
        let n = self.input;
        let steps = truth.len() / n - 1;
        let (states, tapes) = self.rollout_tape(x0, steps)?;
        let (value, dl) = loss.value_and_grad(&states, truth, n)?;
        let l = self.lay();
        let mut grad = vec![0.0; self.data.len()];
        let mut dx = dl[steps * n..].to_vec();
        let mut dh = vec![0.0; self.hidden];
        let mut dc = vec![0.0; if self.kind == CellKind::Lstm { self.hidden } else { 0 }];
        for k in (0..steps).rev() {
            let t = &tapes[k];
            // Readout: x_{k+1} = x_k + W_o h_{k+1} + b_o.
            outer_acc(&mut grad[l.wo..l.bo], &dx, &t.h_next);
            for (g, d) in grad[l.bo..l.end].iter_mut().zip(&dx) {
                *g += d;
            }
            matvec_t_acc(&self.data[l.wo..l.bo], &dx, &mut dh);
            let (cx, ch, cc) = self.cell_backward(t, &dh, &dc, &mut grad);
            for i in 0..n {
                dx[i] += cx[i] + dl[k * n + i];
            }
            dh = ch;
            dc = cc;
        }
        Ok((value, grad))
    }
}

/// Rows `start..=end` of an autoregressive forecast restarted from the
/// observed state (and a zero hidden state) every `horizon` rows; returns
/// the L1 over rows `start+1..=end`.
pub fn cell_restart_forecast_l1(
    params: &RecurrentCellParams,
    reference: &Trajectory,
    start: usize,
    end: usize,
    horizon: usize,
) -> Result<f64> {
    check_dim(params.input, reference.dim())?;
    if horizon == 0 || start >= end || end >= reference.len() {
        return Err(Error::Baseline(format!("bad forecast window {start}..={end}")));
    }
    let n = reference.dim();
    let mut pred = Vec::with_capacity((end - start) * n);
    let mut anchor = start;
    while anchor < end {
        let stop = (anchor + horizon).min(end);
        let s = params.rollout_states(reference.row(anchor), stop - anchor)?;
        pred.extend_from_slice(&s[n..]);
        anchor = stop;
    }
    l1_slices(&pred, &reference.states()[(start + 1) * n..(end + 1) * n])
}

/// Train a recurrent cell on the same shooting windows as the Lorenz96 twin.
pub fn train_cell_lorenz96(
    reference: &Trajectory,
    kind: CellKind,
    hidden: usize,
    setup: &Lorenz96TwinSetup,
    cfg: &TrainConfig,
) -> Result<TrainReport<RecurrentCellParams>> {
    cfg.validate()?;
    setup.validate(reference)?;
    let start = Instant::now();
    let n = reference.dim();
    let mut params = RecurrentCellParams::init(kind, n, hidden, cfg.seed)?;
    let noise_scale = column_std(reference, setup.train_points);
    let mut r = rng::stream(cfg.seed, "train-windows");
    let mut rows_used: Option<(usize, usize)> = None;
    let template = params.clone();
    let outcome = fit(&mut params.data, cfg, |theta, _| {
        let p = RecurrentCellParams { data: theta.to_vec(), ..template.clone() };
        let phase = rand::Rng::random_range(&mut r, 0..setup.segment_len);
        let starts = window_starts(setup.train_points, setup.segment_len, phase);
        shooting_objective(
            reference,
            &starts,
            setup.segment_len,
            cfg,
            &noise_scale,
            setup.cyclic_shift,
            &mut r,
            p.param_count(),
            |h0, _times, truth| p.loss_grad(h0, truth, cfg.loss),
            |a, b| rows_used = Some(rows_used.map_or((a, b), |(lo, hi)| (lo.min(a), hi.max(b)))),
        )
    });
    let scores = if reference.len() > setup.train_points {
        let last = setup.train_points - 1;
        Some(SplitScores {
            interpolation_l1: cell_restart_forecast_l1(&params, reference, 0, last, setup.eval_horizon)?,
            extrapolation_l1: cell_restart_forecast_l1(&params, reference, last, reference.len() - 1, setup.eval_horizon)?,
        })
    } else {
        None
    };
    let count = params.param_count();
    Ok(report(kind.name(), params, count, cfg, outcome, rows_used, scores, start))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::FieldInput;
    use crate::odesolve::{step_euler, FnField};
    use crate::training::LossSpec;
    use crate::trajectory::uniform_grid;
    use rand::Rng;

    #[test]
    fn resnet_examples() {
        let shape = NetShape(vec![2, 4, 1]);
        let zero = MlpParams::zeros(shape.clone()).unwrap();
        assert_eq!(resnet_step(&zero, &[0.7], &[1.0]).unwrap(), vec![0.7]);
        // Constant output c = 0.25 from the last bias.
        let mut p = zero.clone();
        p.bias_mut(1)[0] = 0.25;
        let times = uniform_grid(0.0, 1.0, 11);
        let tr = resnet_rollout(&p, &[1.0], &[0.0; 10], &times).unwrap();
        assert_eq!(tr.row(10)[0], 1.0 + 10.0 * 0.25);
        let one = resnet_rollout(&p, &[1.0], &[0.0], &times[..2]).unwrap();
        assert_eq!(one.row(1), resnet_step(&p, &[1.0], &[0.0]).unwrap().as_slice());
    }

    #[test]
    fn resnet_step_is_unit_euler_step() {
        let p = init_params(&NetShape(vec![3, 5, 2]), 4).unwrap();
        let drive = 0.3;
        let field = FnField::new(2, |_t, h: &[f64], out: &mut [f64]| {
            let f = p.forward(&[h[0], h[1], drive]).unwrap();
            out.copy_from_slice(&f);
        });
        let h = [0.4, -1.1];
        assert_eq!(resnet_step(&p, &h, &[drive]).unwrap(), step_euler(&field, &h, 0.0, 1.0).unwrap());
        let _ = FieldInput::Autonomous;
    }

    fn fd<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], g: &[f64]) {
        let eps = 1e-6;
        let mut xs = x.to_vec();
        for i in 0..x.len() {
            xs[i] = x[i] + eps;
            let up = f(&xs);
            xs[i] = x[i] - eps;
            let dn = f(&xs);
            xs[i] = x[i];
            let num = (up - dn) / (2.0 * eps);
            let scale = num.abs().max(g[i].abs()).max(1e-4);
            assert!((num - g[i]).abs() / scale < 1e-4, "param {i}: {} vs {num}", g[i]);
        }
    }

    #[test]
    fn resnet_bptt_matches_finite_differences() {
        let shape = NetShape(vec![2, 6, 1]);
        let p = init_params(&shape, 2).unwrap();
        let times = uniform_grid(0.0, 0.1, 8);
        let inputs = drive_inputs(&Waveform::sine(1.0, 1.0), &times);
        let truth: Vec<f64> = (0..8).map(|k| 0.2 + 0.05 * k as f64).collect();
        for loss in [LossSpec::L1, LossSpec::SoftDtw { gamma: 0.5 }] {
            let (_, g) = resnet_loss_grad(&p, &[0.2], &inputs, &truth, loss).unwrap();
            fd(
                |th| {
                    let q = MlpParams::from_flat(shape.clone(), th.to_vec()).unwrap();
                    resnet_loss_grad(&q, &[0.2], &inputs, &truth, loss).unwrap().0
                },
                p.data(),
                &g,
            );
        }
    }

    #[test]
    fn cell_bptt_matches_finite_differences() {
        let mut r = rng::stream(11, "cell-fd");
        let truth: Vec<f64> = (0..3 * 6).map(|_| r.random_range(-1.0..1.0)).collect();
        for kind in CellKind::ALL {
            let mut p = RecurrentCellParams::init(kind, 3, 4, 5).unwrap();
            for v in p.data.iter_mut() {
                *v += r.random_range(-0.3..0.3);
            }
            let (_, g) = p.loss_grad(&truth[..3], &truth, LossSpec::SoftDtw { gamma: 1.0 }).unwrap();
            fd(
                |th| {
                    let q = RecurrentCellParams { data: th.to_vec(), ..p.clone() };
                    q.loss_grad(&truth[..3], &truth, LossSpec::SoftDtw { gamma: 1.0 }).unwrap().0
                },
                &p.data,
                &g,
            );
        }
    }

    #[test]
    fn zero_gru_stays_at_zero() {
        let p = RecurrentCellParams::zeros(CellKind::Gru, 6, 8).unwrap();
        let s = p.rollout_states(&[0.0; 6], 20).unwrap();
        assert!(s.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn cell_params_round_trip_and_count() {
        assert_eq!(RecurrentCellParams::param_count_for(CellKind::Gru, 6, 64), 3 * 64 * (6 + 64 + 2) + 6 * 64 + 6);
        for kind in CellKind::ALL {
            let p = RecurrentCellParams::init(kind, 6, 5, 1).unwrap();
            let file = p.to_file();
            assert_eq!(file.cell_kind.as_deref(), Some(kind.name()));
            let back: ParamsFile = serde_json::from_str(&p.to_json()).unwrap();
            assert_eq!(RecurrentCellParams::from_file(&back).unwrap(), p);
            assert!(MlpParams::from_file(&back).is_err());
        }
    }

    #[test]
    fn cell_teacher_student_and_echo() {
        // Memoryless teacher (zero recurrent matrix), so hidden-state resets
        // at window starts lose nothing.
        let teacher = {
            let mut t = RecurrentCellParams::init(CellKind::Rnn, 6, 12, 40).unwrap();
            let l = t.lay();
            t.data[l.wh..l.bh].fill(0.0);
            let mut r = rng::stream(41, "teacher-readout");
            for v in &mut t.data[l.wo..l.end] {
                *v = r.random_range(-0.1..0.1);
            }
            t
        };
        let x0 = [0.5, -0.2, 0.1, 0.8, -0.6, 0.3];
        let times = uniform_grid(0.0, 0.02, 161);
        let states = teacher.rollout_states(&x0, 160).unwrap();
        let reference = Trajectory::new(times, 6, states).unwrap();
        let setup = Lorenz96TwinSetup { shape: NetShape(vec![6, 12, 6]), train_points: 161, segment_len: 10, eval_horizon: 10, cyclic_shift: false, weight_noise: 0.0 };
        let cfg = TrainConfig { epochs: 500, early_stop: None, seed: 2, ..Default::default() };
        let rep = train_cell_lorenz96(&reference, CellKind::Rnn, 12, &setup, &cfg).unwrap();
        let first = rep.loss_curve[0];
        let tail = rep.loss_curve[490..].iter().sum::<f64>() / 10.0;
        assert!(tail < 0.1 * first, "{first} -> {tail}");

        let cfg0 = TrainConfig { epochs: 0, seed: 2, ..Default::default() };
        let rep0 = train_cell_lorenz96(&reference, CellKind::Lstm, 12, &setup, &cfg0).unwrap();
        assert!(rep0.loss_curve.is_empty());
        assert_eq!(rep0.params, RecurrentCellParams::init(CellKind::Lstm, 6, 12, 2).unwrap());
    }

    #[test]
    fn resnet_training_echo_and_determinism() {
        let drive = Waveform::sine(3.0, 2.0);
        let times = uniform_grid(0.0, 1e-3, 21);
        let reference = Trajectory::new(times, 1, (0..21).map(|k| 0.1 + 1e-3 * k as f64).collect()).unwrap();
        let shape = NetShape(vec![2, 6, 1]);
        let cfg = TrainConfig { epochs: 0, seed: 3, ..Default::default() };
        let rep = train_resnet_hp(&reference, &drive, &shape, &cfg).unwrap();
        assert_eq!(rep.params, init_params(&shape, 3).unwrap());
        let cfg = TrainConfig { epochs: 20, seed: 3, ..Default::default() };
        let a = train_resnet_hp(&reference, &drive, &shape, &cfg).unwrap();
        let b = train_resnet_hp(&reference, &drive, &shape, &cfg).unwrap();
        assert_eq!(a.loss_curve, b.loss_curve);
    }
}
