//! Behavioral model of neural-ODE inference on memristor crossbars.
//!
//! Each signed weight is a differential pair of conductances. Programming
//! lands on one of `levels` states with multiplicative error; a fraction of
//! devices are stuck. Every read multiplies each conductance by fresh noise.
//! Hidden activations are voltages passed through a clamped ReLU, and the
//! final layer output is integrated by the solver.

use std::cell::{Cell, RefCell};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::Waveform;
use crate::error::{check_dim, Error, Result};
use crate::nn::{FieldInput, MlpParams, NetShape};
use crate::odesolve::{solve_grid, SolverSpec, VectorField};
use crate::par::{self, Parallelism};
use crate::rng::{self, StreamRng};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareSpec {
    /// Siemens.
    pub g_min: f64,
    /// Siemens.
    pub g_max: f64,
    /// Programmable states per device; `None` is continuous.
    pub levels: Option<u32>,
    pub prog_noise_rel_std: f64,
    pub read_noise_rel_std: f64,
    pub yield_fraction: f64,
    /// Volt; `None` disables the clamp.
    pub clamp_limit: Option<f64>,
    pub seed: u64,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        Self {
            g_min: 20e-6,
            g_max: 100e-6,
            levels: Some(64),
            prog_noise_rel_std: 0.0436,
            read_noise_rel_std: 0.0,
            yield_fraction: 0.972,
            clamp_limit: Some(1.0),
            seed: 0,
        }
    }
}

impl HardwareSpec {
    /// Continuous, noiseless, fault-free and unclamped.
    pub fn ideal() -> Self {
        Self {
            levels: None,
            prog_noise_rel_std: 0.0,
            read_noise_rel_std: 0.0,
            yield_fraction: 1.0,
            clamp_limit: None,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Analogue(m));
        if !(self.g_min > 0.0 && self.g_min < self.g_max && self.g_max.is_finite()) {
            return bad(format!("need 0 < g_min < g_max, got {} and {}", self.g_min, self.g_max));
        }
        if matches!(self.levels, Some(l) if l < 2) {
            return bad("levels must be at least 2".into());
        }
        if !(self.prog_noise_rel_std >= 0.0) || !(self.read_noise_rel_std >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.yield_fraction > 0.0 && self.yield_fraction <= 1.0) {
            return bad(format!("yield must be in (0, 1], got {}", self.yield_fraction));
        }
        if matches!(self.clamp_limit, Some(c) if !(c > 0.0)) {
            return bad("clamp_limit must be positive".into());
        }
        Ok(())
    }

    fn g_mid(&self) -> f64 {
        0.5 * (self.g_min + self.g_max)
    }

    /// Distance between adjacent levels, or 0 when continuous.
    pub fn level_step(&self) -> f64 {
        self.levels.map_or(0.0, |l| (self.g_max - self.g_min) / (l - 1) as f64)
    }
}

/// Nearest programmable level; ties go to the lower level.
pub fn quantize_conductance(g: f64, spec: &HardwareSpec) -> Result<f64> {
    let tol = 1e-12 * spec.g_max;
    if !(g >= spec.g_min - tol && g <= spec.g_max + tol) {
        return Err(Error::Analogue(format!("conductance {g} outside [{}, {}]", spec.g_min, spec.g_max)));
    }
    let Some(levels) = spec.levels else {
        return Ok(g.clamp(spec.g_min, spec.g_max));
    };
    let step = spec.level_step();
    let k = ((g - spec.g_min) / step - 0.5).ceil().clamp(0.0, (levels - 1) as f64);
    if k as u32 == levels - 1 {
        return Ok(spec.g_max);
    }
    Ok(spec.g_min + k * step)
}

pub fn clamped_relu(x: f64, clamp_limit: f64) -> f64 {
    x.max(0.0).min(clamp_limit)
}

/// Per-layer input voltage gains. Layer `l` receives `a_l / gain[l]`, where
/// `a_l` is the software activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationRanges {
    pub gains: Vec<f64>,
}

impl ActivationRanges {
    /// Voltages equal to software activations.
    pub fn unit(shape: &NetShape) -> Self {
        Self { gains: vec![1.0; shape.n_layers()] }
    }

    /// Gains so that the largest |activation| seen over `inputs` maps to
    /// `clamp_limit / headroom`.
    pub fn measure<'a>(
        params: &MlpParams,
        inputs: impl IntoIterator<Item = &'a [f64]>,
        clamp_limit: f64,
        headroom: f64,
    ) -> Result<Self> {
        let n = params.n_layers();
        let mut peak = vec![0.0f64; n];
        let mut count = 0usize;
        for x in inputs {
            check_dim(params.shape().input_dim(), x.len())?;
            count += 1;
            let mut a = x.to_vec();
            for l in 0..n {
                peak[l] = a.iter().fold(peak[l], |m, v| m.max(v.abs()));
                let (o, _) = params.layer_dims(l);
                let mut z = vec![0.0; o];
                crate::nn::affine(params.weights(l), params.bias(l), &a, &mut z);
                if l + 1 < n {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                a = z;
            }
        }
        if count == 0 {
            return Err(Error::Analogue("activation calibration needs at least one input".into()));
        }
        let target = clamp_limit / headroom;
        Ok(Self { gains: peak.into_iter().map(|p| if p > 0.0 { p / target } else { 1.0 }).collect() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarLayer {
    pub rows: usize,
    /// Input columns plus one bias column.
    pub cols: usize,
    /// Siemens, row-major `rows x cols`.
    pub g_plus: Vec<f64>,
    pub g_minus: Vec<f64>,
    pub stuck_plus: Vec<bool>,
    pub stuck_minus: Vec<bool>,
    /// Siemens per unit weight.
    pub scale: f64,
    /// Input voltage gain (see [`ActivationRanges`]).
    pub gain: f64,
    /// Voltage on the bias column, at most 1 V.
    pub bias_voltage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossbarProgram {
    pub spec: HardwareSpec,
    pub shape: NetShape,
    pub layers: Vec<CrossbarLayer>,
}

/// Program with unit voltage gains.
pub fn map_weights(params: &MlpParams, spec: &HardwareSpec) -> Result<CrossbarProgram> {
    map_weights_with_ranges(params, spec, &ActivationRanges::unit(params.shape()))
}

/// Differential-pair programming of every layer, bias column included.
pub fn map_weights_with_ranges(
    params: &MlpParams,
    spec: &HardwareSpec,
    ranges: &ActivationRanges,
) -> Result<CrossbarProgram> {
    spec.validate()?;
    check_dim(params.n_layers(), ranges.gains.len())?;
    if params.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Analogue("non-finite weights cannot be programmed".into()));
    }
    let mut prog_rng = rng::stream(spec.seed, "program");
    let mut fault_rng = rng::stream(spec.seed, "fault");
    let g_mid = spec.g_mid();
    let span = spec.g_max - spec.g_min;
    let mut layers = Vec::with_capacity(params.n_layers());
    for l in 0..params.n_layers() {
        let (rows, inputs) = params.layer_dims(l);
        let cols = inputs + 1;
        let gain = ranges.gains[l];
        let w = params.weights(l);
        let b = params.bias(l);
        // The bias line is lowered until the largest bias needs the same
        // conductance difference as the largest weight, so bias programming
        // error is not amplified by the gain. Its column sees bias_voltage
        // rather than a / gain.
        let w_max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let b_max = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let bias_voltage = if w_max > 0.0 && b_max > 0.0 { (b_max / (gain * w_max)).min(1.0) } else { 1.0 };
        let eff = |r: usize, c: usize| if c < inputs { w[r * inputs + c] } else { b[r] / (gain * bias_voltage) };
        let mut max = 0.0f64;
        for r in 0..rows {
            for c in 0..cols {
                max = max.max(eff(r, c).abs());
            }
        }
        let scale = span / max.max(1e-12);
        let n = rows * cols;
        let mut layer = CrossbarLayer {
            rows,
            cols,
            g_plus: vec![0.0; n],
            g_minus: vec![0.0; n],
            stuck_plus: vec![false; n],
            stuck_minus: vec![false; n],
            scale,
            gain,
            bias_voltage,
        };
        for r in 0..rows {
            for c in 0..cols {
                let k = r * cols + c;
                let half = 0.5 * scale * eff(r, c);
                let targets = [(g_mid + half).clamp(spec.g_min, spec.g_max), (g_mid - half).clamp(spec.g_min, spec.g_max)];
                let mut out = [0.0; 2];
                let mut stuck = [false; 2];
                for d in 0..2 {
                    let mut g = quantize_conductance(targets[d], spec)?;
                    if spec.prog_noise_rel_std > 0.0 {
                        let z: f64 = StandardNormal.sample(&mut prog_rng);
                        g = (g * (1.0 + spec.prog_noise_rel_std * z)).clamp(spec.g_min, spec.g_max);
                    }
                    if spec.yield_fraction < 1.0 && fault_rng.random::<f64>() >= spec.yield_fraction {
                        g = fault_rng.random_range(spec.g_min..=spec.g_max);
                        stuck[d] = true;
                    }
                    out[d] = g;
                }
                layer.g_plus[k] = out[0];
                layer.g_minus[k] = out[1];
                layer.stuck_plus[k] = stuck[0];
                layer.stuck_minus[k] = stuck[1];
            }
        }
        layers.push(layer);
    }
    Ok(CrossbarProgram { spec: *spec, shape: params.shape().clone(), layers })
}

impl CrossbarProgram {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("program serializes")
    }

    pub fn fault_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.stuck_plus.iter().chain(&l.stuck_minus).filter(|s| **s).count())
            .sum()
    }

    pub fn device_count(&self) -> usize {
        self.layers.iter().map(|l| 2 * l.rows * l.cols).sum()
    }

    /// Decoded weights `(g+ - g-) / scale` of layer `l` without read noise,
    /// bias column last.
    pub fn decoded(&self, l: usize) -> Vec<f64> {
        let layer = &self.layers[l];
        layer.g_plus.iter().zip(&layer.g_minus).map(|(p, m)| (p - m) / layer.scale).collect()
    }
}

/// Decoded matvec of layer `l` for input voltages `v` (bias column excluded
/// from `v`): `sum_j (g+ - g-) v_j / scale`, with a fresh read-noise draw
/// per device when `read` is given.
pub fn crossbar_matvec(
    prog: &CrossbarProgram,
    l: usize,
    v: &[f64],
    read: Option<&mut StreamRng>,
    out: &mut [f64],
) -> Result<()> {
    let layer = prog.layers.get(l).ok_or_else(|| Error::Analogue(format!("no layer {l}")))?;
    check_dim(layer.cols - 1, v.len())?;
    check_dim(layer.rows, out.len())?;
    matvec_raw(layer, v, read, prog.spec.read_noise_rel_std, out);
    Ok(())
}

fn matvec_raw(layer: &CrossbarLayer, v: &[f64], read: Option<&mut StreamRng>, sigma: f64, out: &mut [f64]) {
    let cols = layer.cols;
    let inputs = cols - 1;
    match read {
        Some(rng) if sigma > 0.0 => {
            for (r, o) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for c in 0..cols {
                    let k = r * cols + c;
                    let vc = if c < inputs { v[c] } else { layer.bias_voltage };
                    let zp: f64 = StandardNormal.sample(rng);
                    let zm: f64 = StandardNormal.sample(rng);
                    let g = layer.g_plus[k] * (1.0 + sigma * zp) - layer.g_minus[k] * (1.0 + sigma * zm);
                    acc += g * vc;
                }
                *o = acc / layer.scale;
            }
        }
        _ => {
            for (r, o) in out.iter_mut().enumerate() {
                let row = r * cols;
                let mut acc = (layer.g_plus[row + inputs] - layer.g_minus[row + inputs]) * layer.bias_voltage;
                for c in 0..inputs {
                    acc += (layer.g_plus[row + c] - layer.g_minus[row + c]) * v[c];
                }
                *o = acc / layer.scale;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HwInferenceSpec {
    /// RK4 steps per output interval emulating the continuous integrator.
    pub substeps: usize,
    /// Headroom between the calibrated activation peak and the clamp.
    pub activation_headroom: f64,
}

impl Default for HwInferenceSpec {
    fn default() -> Self {
        Self { substeps: 1, activation_headroom: 1.25 }
    }
}

/// The network evaluated through the crossbars, as a vector field.
pub struct HwField<'p> {
    prog: &'p CrossbarProgram,
    input: FieldInput,
    read: RefCell<StreamRng>,
    clamped: Cell<u64>,
    activations: Cell<u64>,
}

impl<'p> HwField<'p> {
    pub fn new(prog: &'p CrossbarProgram, input: FieldInput, read_seed: u64) -> Result<Self> {
        let extra = usize::from(matches!(input, FieldInput::Driven(_)));
        if prog.shape.input_dim() != prog.shape.output_dim() + extra {
            return Err(Error::Analogue(format!("program {:?} cannot act as a vector field", prog.shape.0)));
        }
        Ok(Self {
            prog,
            input,
            read: RefCell::new(rng::stream(read_seed, "read")),
            clamped: Cell::new(0),
            activations: Cell::new(0),
        })
    }

    /// Fraction of hidden activations that hit the clamp so far.
    pub fn clamp_saturation(&self) -> f64 {
        let n = self.activations.get();
        if n == 0 {
            0.0
        } else {
            self.clamped.get() as f64 / n as f64
        }
    }
}

impl VectorField for HwField<'_> {
    fn dim(&self) -> usize {
        self.prog.shape.output_dim()
    }

    fn eval(&self, t: f64, h: &[f64], out: &mut [f64]) {
        let spec = &self.prog.spec;
        let mut a: Vec<f64> = match self.input {
            FieldInput::Autonomous => h.to_vec(),
            FieldInput::Driven(w) => std::iter::once(w.eval(t)).chain(h.iter().copied()).collect(),
        };
        let mut rng = self.read.borrow_mut();
        let n = self.prog.layers.len();
        let (mut clamped, mut total) = (0u64, 0u64);
        for (l, layer) in self.prog.layers.iter().enumerate() {
            let v: Vec<f64> = a.iter().map(|x| x / layer.gain).collect();
            let mut z = vec![0.0; layer.rows];
            let read = (spec.read_noise_rel_std > 0.0).then_some(&mut *rng);
            matvec_raw(layer, &v, read, spec.read_noise_rel_std, &mut z);
            // Back to software units.
            z.iter_mut().for_each(|x| *x *= layer.gain);
            if l + 1 < n {
                let next_gain = self.prog.layers[l + 1].gain;
                for x in z.iter_mut() {
                    let volt = *x / next_gain;
                    let y = match spec.clamp_limit {
                        Some(c) => {
                            total += 1;
                            if volt > c {
                                clamped += 1;
                            }
                            clamped_relu(volt, c)
                        }
                        None => volt.max(0.0),
                    };
                    *x = y * next_gain;
                }
            }
            a = z;
        }
        self.clamped.set(self.clamped.get() + clamped);
        self.activations.set(self.activations.get() + total);
        out.copy_from_slice(&a);
    }
}

/// Trajectory from the emulated hardware plus run metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HwRun {
    #[serde(skip)]
    pub trajectory: Trajectory,
    pub clamp_saturation: f64,
    pub levels: Option<u32>,
    pub faults: usize,
    pub devices: usize,
}

/// Solve the neural ODE through the crossbars from the pre-charge state `h0`.
pub fn hw_infer(
    prog: &CrossbarProgram,
    inf: &HwInferenceSpec,
    drive: Option<Waveform>,
    h0: &[f64],
    time_grid: &[f64],
    read_seed: u64,
) -> Result<HwRun> {
    if inf.substeps == 0 {
        return Err(Error::Analogue("substeps must be at least 1".into()));
    }
    let input = drive.map_or(FieldInput::Autonomous, FieldInput::Driven);
    let field = HwField::new(prog, input, read_seed)?;
    check_dim(field.dim(), h0.len())?;
    crate::trajectory::check_grid(time_grid)?;
    let states = solve_grid(&field, h0, time_grid, SolverSpec::rk4(inf.substeps))?;
    Ok(HwRun {
        trajectory: Trajectory::new(time_grid.to_vec(), h0.len(), states)?,
        clamp_saturation: field.clamp_saturation(),
        levels: prog.spec.levels,
        faults: prog.fault_count(),
        devices: prog.device_count(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSweepSpec {
    pub read_noise: Vec<f64>,
    pub prog_noise: Vec<f64>,
    pub repeats: usize,
}

impl Default for NoiseSweepSpec {
    fn default() -> Self {
        Self { read_noise: vec![0.0, 0.01, 0.02], prog_noise: vec![0.0, 0.02, 0.0436], repeats: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub read_noise: f64,
    pub prog_noise: f64,
    pub mean: f64,
    pub std: f64,
    pub repeats: usize,
    /// Per-repeat values in repeat order; failed repeats are left out.
    pub values: Vec<f64>,
    pub errors: Vec<String>,
}

/// Seed of repeat `r`; shared by every cell so cells differ only in noise
/// level.
pub fn sweep_seed(base: u64, repeat: usize) -> u64 {
    rng::derive_indexed(base, "sweep-repeat", repeat as u64)
}

/// Mean and population std of `values`, summed in sorted order so the
/// result does not depend on the order the values were produced in.
/// Deviations are taken from the smallest value, so equal values give a std
/// of exactly zero.
pub fn keyed_mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let shift = v[0];
    let d: Vec<f64> = v.iter().map(|x| x - shift).collect();
    let dm = d.iter().sum::<f64>() / n;
    let mut sq: Vec<f64> = d.iter().map(|x| (x - dm) * (x - dm)).collect();
    sq.sort_by(f64::total_cmp);
    (shift + dm, (sq.iter().sum::<f64>() / n).sqrt())
}

/// Re-program and re-run `metric` for every (read, prog) cell and repeat.
/// `metric(program, read_seed)` scores one programmed instance.
pub fn noise_sweep<M>(
    base: &HardwareSpec,
    sweep: &NoiseSweepSpec,
    mode: Parallelism,
    program: impl Fn(&HardwareSpec) -> Result<CrossbarProgram> + Sync,
    metric: M,
) -> Result<Vec<SweepCell>>
where
    M: Fn(&CrossbarProgram, u64) -> Result<f64> + Sync,
{
    base.validate()?;
    if sweep.repeats == 0 {
        return Err(Error::Analogue("noise sweep needs at least one repeat".into()));
    }
    let cells: Vec<(f64, f64)> = sweep
        .read_noise
        .iter()
        .flat_map(|r| sweep.prog_noise.iter().map(move |p| (*r, *p)))
        .collect();
    let jobs = cells.len() * sweep.repeats;
    let results = par::map_range(jobs, mode, |j| {
        let (read, prog) = cells[j / sweep.repeats];
        let seed = sweep_seed(base.seed, j % sweep.repeats);
        let spec = HardwareSpec { read_noise_rel_std: read, prog_noise_rel_std: prog, seed, ..*base };
        program(&spec).and_then(|p| metric(&p, seed))
    });
    Ok(cells
        .iter()
        .enumerate()
        .map(|(i, &(read, prog))| {
            let mut values = Vec::new();
            let mut errors = Vec::new();
            for (r, res) in results[i * sweep.repeats..(i + 1) * sweep.repeats].iter().enumerate() {
                match res {
                    Ok(v) if v.is_finite() => values.push(*v),
                    Ok(v) => errors.push(format!("repeat {r}: non-finite metric {v}")),
                    Err(e) => errors.push(format!("repeat {r}: {e}")),
                }
            }
            let (mean, std) = keyed_mean_std(&values);
            SweepCell { read_noise: read, prog_noise: prog, mean, std, repeats: sweep.repeats, values, errors }
        })
        .collect())
}

/// `read_noise,prog_noise,mean,std,repeats` rows.
pub fn sweep_csv(cells: &[SweepCell]) -> String {
    use crate::trajectory::fmt_f64;
    let mut s = String::from("read_noise,prog_noise,mean,std,repeats\n");
    for c in cells {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            fmt_f64(c.read_noise),
            fmt_f64(c.prog_noise),
            fmt_f64(c.mean),
            fmt_f64(c.std),
            c.repeats
        ));
    }
    s
}
