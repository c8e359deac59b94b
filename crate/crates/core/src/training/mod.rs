//! Training of neural-ODE twins: gradients through the solver, Adam, the two
//! dataset recipes, and state-noise regularization.

mod adam;
mod adjoint;

pub use adam::{Adam, AdamConfig};
pub use adjoint::{
    adjoint_grad, backprop_trajectory, field_loss_grad, AdjointState, DiffField, GradResult, LossSpec,
};

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dynamics::Waveform;
use crate::error::{Error, Result};
use crate::eval::{restart_forecast_l1, SplitScores};
use crate::nn::{init_params, FieldInput, MlpParams, NetShape, NeuralField};
use crate::odesolve::SolverSpec;
use crate::rng;
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EarlyStop {
    /// Window length in epochs.
    pub patience: usize,
    /// Minimum drop of the best loss over the window.
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self { patience: 50, min_delta: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub loss: LossSpec,
    pub optimizer: AdamConfig,
    /// Maximum number of epochs.
    pub epochs: usize,
    pub solver: SolverSpec,
    /// Relative std of the state perturbation (times the per-dimension std
    /// of the training data).
    pub noise_reg_sigma: f64,
    /// `None` disables early stopping.
    pub early_stop: Option<EarlyStop>,
    /// Set by the caller; reports carry it separately.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossSpec::L1,
            optimizer: AdamConfig::default(),
            epochs: 2000,
            solver: SolverSpec::rk4(1),
            noise_reg_sigma: 0.0,
            early_stop: Some(EarlyStop::default()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.solver.validate()?;
        if !(self.noise_reg_sigma >= 0.0) || !self.noise_reg_sigma.is_finite() {
            return Err(Error::Training(format!("noise_reg_sigma must be >= 0, got {}", self.noise_reg_sigma)));
        }
        if let Some(es) = self.early_stop {
            if es.patience == 0 || !(es.min_delta >= 0.0) {
                return Err(Error::Training(format!("invalid early stop {es:?}")));
            }
        }
        Ok(())
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(bound(serialize = ""))]
pub struct TrainReport<P = MlpParams> {
    pub task: String,
    pub seed: u64,
    pub config: TrainConfig,
    /// Loss before the update of each completed epoch.
    pub loss_curve: Vec<f64>,
    pub epochs_completed: usize,
    pub stopped_early: bool,
    /// Set when training aborted on a non-finite loss or gradient.
    pub diverged: Option<String>,
    pub param_count: usize,
    /// First and last reference rows that entered the training loss.
    pub loss_rows: Option<(usize, usize)>,
    pub scores: Option<SplitScores>,
    #[serde(skip)]
    pub params: P,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl<P> TrainReport<P> {
    /// `epoch,loss` rows.
    pub fn loss_curve_csv(&self) -> String {
        let mut s = String::from("epoch,loss\n");
        for (e, l) in self.loss_curve.iter().enumerate() {
            s.push_str(&format!("{},{}\n", e + 1, crate::trajectory::fmt_f64(*l)));
        }
        s
    }
}

pub(crate) struct FitOutcome {
    pub loss_curve: Vec<f64>,
    pub stopped_early: bool,
    pub diverged: Option<String>,
}

/// Adam loop over flat parameters. `objective(params, epoch)` returns the
/// loss and its gradient.
pub(crate) fn fit<O>(params: &mut [f64], cfg: &TrainConfig, mut objective: O) -> FitOutcome
where
    O: FnMut(&[f64], usize) -> Result<(f64, Vec<f64>)>,
{
    let mut adam = Adam::new(cfg.optimizer, params.len());
    let mut out = FitOutcome { loss_curve: Vec::new(), stopped_early: false, diverged: None };
    let mut best = Vec::new();
    for epoch in 0..cfg.epochs {
        let (loss, grad) = match objective(params, epoch) {
            Ok(v) => v,
            Err(e) => {
                out.diverged = Some(format!("epoch {}: {e}", epoch + 1));
                break;
            }
        };
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            out.diverged = Some(format!("epoch {}: non-finite loss or gradient", epoch + 1));
            break;
        }
        adam.step(params, &grad).expect("gradient length matches params");
        out.loss_curve.push(loss);
        let b = best.last().map_or(loss, |p: &f64| p.min(loss));
        best.push(b);
        if let Some(es) = cfg.early_stop {
            if best.len() > es.patience && best[best.len() - 1 - es.patience] - b < es.min_delta {
                out.stopped_early = true;
                break;
            }
        }
    }
    out
}

/// HP twin: `du/dt = net([v(t), u])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpTwinSetup {
    pub shape: NetShape,
    /// Drive used to generate the training reference.
    pub drive: Waveform,
}

/// Train on the full reference trajectory from its first state.
pub fn train_hp_twin(reference: &Trajectory, setup: &HpTwinSetup, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    setup.shape.validate()?;
    if reference.dim() != 1 || setup.shape.input_dim() != 2 || setup.shape.output_dim() != 1 {
        return Err(Error::Training("HP twin needs a 1-D reference and a [2, .., 1] net".into()));
    }
    let start = Instant::now();
    let mut params = init_params(&setup.shape, cfg.seed)?;
    let shape = setup.shape.clone();
    let h0 = reference.row(0).to_vec();
    let times = reference.times().to_vec();
    let truth = reference.states().to_vec();
    let input = FieldInput::Driven(setup.drive);
    let outcome = fit(params.data_mut(), cfg, |theta, _| {
        let p = MlpParams::from_flat(shape.clone(), theta.to_vec())?;
        let field = NeuralField::new(&p, input)?;
        let r = field_loss_grad(&field, &h0, &times, cfg.solver, cfg.loss, &truth)?;
        Ok((r.loss, r.theta_grad))
    });
    let count = params.param_count();
    Ok(report("hp", params, count, cfg, outcome, Some((0, reference.len() - 1)), None, start))
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn report<P>(
    task: &str,
    params: P,
    param_count: usize,
    cfg: &TrainConfig,
    outcome: FitOutcome,
    loss_rows: Option<(usize, usize)>,
    scores: Option<SplitScores>,
    start: Instant,
) -> TrainReport<P> {
    TrainReport {
        task: task.into(),
        seed: cfg.seed,
        config: *cfg,
        epochs_completed: outcome.loss_curve.len(),
        loss_curve: outcome.loss_curve,
        stopped_early: outcome.stopped_early,
        diverged: outcome.diverged,
        param_count,
        loss_rows,
        scores,
        params,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    }
}

/// Lorenz96 twin trained by multiple shooting on short windows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lorenz96TwinSetup {
    pub shape: NetShape,
    /// Leading reference rows available to training.
    pub train_points: usize,
    /// Grid intervals per training window.
    pub segment_len: usize,
    /// Grid intervals between restarts from observed states in evaluation.
    pub eval_horizon: usize,
    /// Rotate each training window's coordinates by a random cyclic shift.
    /// Valid for systems equivariant under index rotation, such as Lorenz96.
    #[serde(default)]
    pub cyclic_shift: bool,
    /// Std of the additive weight noise drawn once per epoch, relative to
    /// each layer's largest |weight|; see [`perturb_weights`].
    #[serde(default)]
    pub weight_noise: f64,
}

impl Default for Lorenz96TwinSetup {
    fn default() -> Self {
        Self {
            shape: NetShape(vec![6, 64, 64, 6]),
            train_points: 1800,
            segment_len: 10,
            eval_horizon: 50,
            cyclic_shift: false,
            weight_noise: 0.0,
        }
    }
}

impl Lorenz96TwinSetup {
    pub fn validate(&self, reference: &Trajectory) -> Result<()> {
        self.shape.validate()?;
        let n = reference.dim();
        if self.shape.input_dim() != n || self.shape.output_dim() != n {
            return Err(Error::Training(format!("net {:?} does not match state dimension {n}", self.shape.0)));
        }
        if self.segment_len == 0 || self.eval_horizon == 0 {
            return Err(Error::Training("segment_len and eval_horizon must be positive".into()));
        }
        if !(self.weight_noise >= 0.0 && self.weight_noise.is_finite()) {
            return Err(Error::Training(format!("weight_noise must be >= 0, got {}", self.weight_noise)));
        }
        if self.train_points < self.segment_len + 1 || self.train_points > reference.len() {
            return Err(Error::Training(format!(
                "train_points {} incompatible with {} reference rows",
                self.train_points,
                reference.len()
            )));
        }
        Ok(())
    }
}

/// Window start rows for one epoch: a random phase, then back-to-back
/// windows that end no later than row `train_points - 1`.
pub(crate) fn window_starts(train_points: usize, len: usize, phase: usize) -> Vec<usize> {
    let mut starts = Vec::new();
    let mut s = phase;
    while s + len < train_points {
        starts.push(s);
        s += len;
    }
    starts
}

pub(crate) fn column_std(tr: &Trajectory, rows: usize) -> Vec<f64> {
    let n = tr.dim();
    let mut mean = vec![0.0; n];
    for k in 0..rows {
        for (m, v) in mean.iter_mut().zip(tr.row(k)) {
            *m += v / rows as f64;
        }
    }
    let mut var = vec![0.0; n];
    for k in 0..rows {
        for ((s, v), m) in var.iter_mut().zip(tr.row(k)).zip(&mean) {
            *s += (v - m) * (v - m) / rows as f64;
        }
    }
    var.into_iter().map(f64::sqrt).collect()
}

/// Peak |input| seen by each layer over `rows`.
pub fn layer_input_peaks<'a>(p: &MlpParams, rows: impl IntoIterator<Item = &'a [f64]>) -> Vec<f64> {
    let n = p.n_layers();
    let mut peak = vec![0.0f64; n];
    for x in rows {
        let mut a = x.to_vec();
        for l in 0..n {
            peak[l] = a.iter().fold(peak[l], |m, v| m.max(v.abs()));
            let mut z = vec![0.0; p.layer_dims(l).0];
            crate::nn::affine(p.weights(l), p.bias(l), &a, &mut z);
            if l + 1 < n {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            a = z;
        }
    }
    peak
}

/// Copy of `p` with additive Gaussian noise of std `sigma * max|W_l|` on the
/// weights of layer `l` and `sigma * min(max|b_l|, max|W_l| * input_scale[l])`
/// on its biases. With `input_scale` set to the layer's full-scale input this
/// matches programming error on a differential-pair crossbar.
pub fn perturb_weights(p: &MlpParams, sigma: f64, input_scale: &[f64], rng: &mut rng::StreamRng) -> MlpParams {
    let mut out = p.clone();
    for l in 0..p.n_layers() {
        let m = p.weights(l).iter().fold(0.0f64, |a, w| a.max(w.abs()));
        let mb = p.bias(l).iter().fold(0.0f64, |a, w| a.max(w.abs()));
        let sb = sigma * mb.min(m * input_scale[l]);
        for w in out.weights_mut(l) {
            let z: f64 = StandardNormal.sample(&mut *rng);
            *w += sigma * m * z;
        }
        for b in out.bias_mut(l) {
            let z: f64 = StandardNormal.sample(&mut *rng);
            *b += sb * z;
        }
    }
    out
}

/// Mean window loss and gradient over one epoch of shooting windows.
/// `on_rows` sees every reference row that enters the loss.
pub(crate) fn shooting_objective<F, G>(
    reference: &Trajectory,
    starts: &[usize],
    len: usize,
    cfg: &TrainConfig,
    noise_scale: &[f64],
    cyclic_shift: bool,
    rng: &mut rng::StreamRng,
    n_params: usize,
    mut window_grad: F,
    mut on_rows: G,
) -> Result<(f64, Vec<f64>)>
where
    F: FnMut(&[f64], &[f64], &[f64]) -> Result<(f64, Vec<f64>)>,
    G: FnMut(usize, usize),
{
    let n = reference.dim();
    let mut total = 0.0;
    let mut grad = vec![0.0; n_params];
    let mut h0 = vec![0.0; n];
    let mut rotated = Vec::new();
    for &s in starts {
        let rows = s..s + len + 1;
        on_rows(rows.start, rows.end - 1);
        let shift = if cyclic_shift { rand::Rng::random_range(&mut *rng, 0..n) } else { 0 };
        let mut truth = &reference.states()[rows.start * n..rows.end * n];
        if shift > 0 {
            rotated.clear();
            for row in truth.chunks_exact(n) {
                rotated.extend((0..n).map(|i| row[(i + shift) % n]));
            }
            truth = &rotated;
        }
        h0.copy_from_slice(&truth[..n]);
        if cfg.noise_reg_sigma > 0.0 {
            for (i, h) in h0.iter_mut().enumerate() {
                let z: f64 = StandardNormal.sample(rng);
                *h += cfg.noise_reg_sigma * noise_scale[(i + shift) % n] * z;
            }
        }
        let times = &reference.times()[rows.clone()];
        let (l, g) = window_grad(&h0, times, truth)?;
        total += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    let k = starts.len() as f64;
    grad.iter_mut().for_each(|g| *g /= k);
    Ok((total / k, grad))
}

const WEIGHT_NOISE_HEADROOM: f64 = 1.25;

/// Train on windows inside the first `train_points` rows and score the
/// interpolation and extrapolation splits by restarted forecasts.
pub fn train_lorenz96_twin(
    reference: &Trajectory,
    setup: &Lorenz96TwinSetup,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    setup.validate(reference)?;
    let start = Instant::now();
    let mut params = init_params(&setup.shape, cfg.seed)?;
    let shape = setup.shape.clone();
    let noise_scale = column_std(reference, setup.train_points);
    let mut r = rng::stream(cfg.seed, "train-windows");
    let mut noise_rng = rng::stream(cfg.seed, "weight-noise");
    let mut rows_used: Option<(usize, usize)> = None;
    let outcome = fit(params.data_mut(), cfg, |theta, _| {
        let p = MlpParams::from_flat(shape.clone(), theta.to_vec())?;
        let field = NeuralField::autonomous(&p)?;
        let scale: Vec<f64> = if setup.weight_noise > 0.0 {
            let sample = reference.rows().take(setup.train_points).step_by(10);
            layer_input_peaks(&p, sample).iter().map(|v| WEIGHT_NOISE_HEADROOM * v).collect()
        } else {
            Vec::new()
        };
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
            |h0, times, truth| {
                let g = if setup.weight_noise > 0.0 {
                    let noisy = perturb_weights(&p, setup.weight_noise, &scale, &mut noise_rng);
                    field_loss_grad(&NeuralField::autonomous(&noisy)?, h0, times, cfg.solver, cfg.loss, truth)?
                } else {
                    field_loss_grad(&field, h0, times, cfg.solver, cfg.loss, truth)?
                };
                Ok((g.loss, g.theta_grad))
            },
            |a, b| {
                rows_used = Some(rows_used.map_or((a, b), |(lo, hi)| (lo.min(a), hi.max(b))));
            },
        )
    });
    let scores = if reference.len() > setup.train_points {
        let field = NeuralField::autonomous(&params)?;
        Some(lorenz96_scores(&field, reference, setup, cfg.solver)?)
    } else {
        None
    };
    let count = params.param_count();
    Ok(report("lorenz96", params, count, cfg, outcome, rows_used, scores, start))
}

/// Interpolation L1 over rows `1..train_points` and extrapolation L1 over
/// the rows after, both forecast with restarts every `eval_horizon` rows.
pub fn lorenz96_scores<F: crate::odesolve::VectorField + ?Sized>(
    field: &F,
    reference: &Trajectory,
    setup: &Lorenz96TwinSetup,
    solver: SolverSpec,
) -> Result<SplitScores> {
    let last_train = setup.train_points - 1;
    let interp = restart_forecast_l1(field, reference, 0, last_train, setup.eval_horizon, solver)?;
    let extrap = restart_forecast_l1(field, reference, last_train, reference.len() - 1, setup.eval_horizon, solver)?;
    Ok(SplitScores { interpolation_l1: interp, extrapolation_l1: extrap })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_reference, HpParams, ReferenceGrid, System};
    use crate::odesolve::{solve_grid, OdeProblem};
    use crate::trajectory::uniform_grid;

    fn hp_reference(drive: Waveform, points: usize) -> Trajectory {
        let sys = System::Hp { params: HpParams::default(), drive, u0: 0.1 };
        generate_reference(&sys, &ReferenceGrid { points, dt: 1e-3, substeps: 4 }).unwrap()
    }

    #[test]
    fn window_starts_stay_inside() {
        assert_eq!(window_starts(25, 10, 0), vec![0, 10]);
        assert_eq!(window_starts(25, 10, 4), vec![4, 14]);
        assert_eq!(window_starts(24, 10, 4), vec![4]);
        assert_eq!(window_starts(21, 10, 0), vec![0, 10]);
        for phase in 0..10 {
            for s in window_starts(1800, 10, phase) {
                assert!(s + 10 <= 1799);
            }
        }
    }

    #[test]
    fn zero_drive_learns_constant() {
        let drive = Waveform::sine(0.0, 2.0);
        let reference = hp_reference(drive, 101);
        let setup = HpTwinSetup { shape: NetShape(vec![2, 14, 14, 1]), drive };
        let cfg = TrainConfig { epochs: 300, seed: 1, ..Default::default() };
        let rep = train_hp_twin(&reference, &setup, &cfg).unwrap();
        assert!(rep.loss_curve.iter().all(|l| l.is_finite()));
        assert!(*rep.loss_curve.last().unwrap() < 1e-3, "{:?}", rep.loss_curve.last());
        let again = train_hp_twin(&reference, &setup, &cfg).unwrap();
        assert_eq!(rep.loss_curve, again.loss_curve);
        assert_eq!(rep.params, again.params);
    }

    #[test]
    fn zero_epochs_echo_init() {
        let drive = Waveform::sine(3.0, 2.0);
        let reference = hp_reference(drive, 21);
        let setup = HpTwinSetup { shape: NetShape(vec![2, 14, 14, 1]), drive };
        let cfg = TrainConfig { epochs: 0, seed: 7, ..Default::default() };
        let rep = train_hp_twin(&reference, &setup, &cfg).unwrap();
        assert!(rep.loss_curve.is_empty());
        assert_eq!(rep.params, init_params(&setup.shape, 7).unwrap());
    }

    fn teacher_reference(points: usize) -> (Trajectory, MlpParams) {
        let shape = NetShape(vec![6, 16, 16, 6]);
        let teacher = init_params(&shape, 99).unwrap();
        let field = NeuralField::autonomous(&teacher).unwrap();
        let grid = uniform_grid(0.0, 0.02, points);
        let h0 = [0.5, -0.2, 0.1, 0.8, -0.6, 0.3];
        let states = solve_grid(&field, &h0, &grid, SolverSpec::rk4(1)).unwrap();
        (Trajectory::new(grid, 6, states).unwrap(), teacher)
    }

    #[test]
    fn teacher_student_fits() {
        let (reference, _) = teacher_reference(241);
        let setup = Lorenz96TwinSetup {
            shape: NetShape(vec![6, 16, 16, 6]),
            train_points: 181,
            segment_len: 10,
            eval_horizon: 20,
            cyclic_shift: false,
            weight_noise: 0.0,
        };
        let cfg = TrainConfig {
            loss: LossSpec::SoftDtw { gamma: 0.1 },
            epochs: 500,
            noise_reg_sigma: 0.0,
            early_stop: None,
            seed: 3,
            ..Default::default()
        };
        let rep = train_lorenz96_twin(&reference, &setup, &cfg).unwrap();
        let first = rep.loss_curve[0];
        let tail = rep.loss_curve[rep.loss_curve.len() - 10..].iter().sum::<f64>() / 10.0;
        assert!(tail < 0.1 * first, "{first} -> {tail}");
        let (lo, hi) = rep.loss_rows.unwrap();
        assert!(lo < 10 && hi <= 180 && hi >= 170);
        assert!(rep.scores.is_some());
    }

    #[test]
    fn weight_noise_matches_crossbar_scales() {
        let mut p = init_params(&NetShape(vec![3, 5, 2]), 4).unwrap();
        p.bias_mut(0).copy_from_slice(&[0.5, -0.1, 0.0, 0.2, 0.3]);
        p.bias_mut(1).copy_from_slice(&[100.0, 0.0]);
        let mut r = rng::stream(1, "t");
        let q = perturb_weights(&p, 0.0, &[1.0, 1.0], &mut r);
        assert_eq!(p.data(), q.data());
        let n = 4000;
        let (mut wacc, mut bacc) = ([0.0; 2], [0.0; 2]);
        for _ in 0..n {
            let q = perturb_weights(&p, 0.1, &[1.0, 2.0], &mut r);
            for l in 0..2 {
                wacc[l] += (q.weights(l)[0] - p.weights(l)[0]).powi(2);
                bacc[l] += (q.bias(l)[1] - p.bias(l)[1]).powi(2);
            }
        }
        for l in 0..2 {
            let m = p.weights(l).iter().fold(0.0f64, |a, w| a.max(w.abs()));
            // Layer 0 biases are below the weight scale; layer 1 biases are capped by it.
            let want = [0.1 * m, 0.1 * if l == 0 { 0.5 } else { m * 2.0 }];
            let got = [(wacc[l] / n as f64).sqrt(), (bacc[l] / n as f64).sqrt()];
            for k in 0..2 {
                assert!((got[k] / want[k] - 1.0).abs() < 0.06, "layer {l}: {got:?} vs {want:?}");
            }
        }
    }

    #[test]
    fn extrapolation_rows_never_enter_the_loss() {
        let (reference, _) = teacher_reference(121);
        let setup = Lorenz96TwinSetup {
            shape: NetShape(vec![6, 8, 6]),
            train_points: 90,
            segment_len: 7,
            eval_horizon: 10,
            cyclic_shift: false,
            weight_noise: 0.05,
        };
        let cfg = TrainConfig { epochs: 40, noise_reg_sigma: 0.01, early_stop: None, ..Default::default() };
        let rep = train_lorenz96_twin(&reference, &setup, &cfg).unwrap();
        assert!(rep.loss_rows.unwrap().1 <= 89);
    }

    #[test]
    fn substep_doubling_barely_moves_the_gradient() {
        let (reference, _) = teacher_reference(11);
        let student = init_params(&NetShape(vec![6, 16, 16, 6]), 5).unwrap();
        let grad = |substeps| {
            let field = NeuralField::autonomous(&student).unwrap();
            let problem = OdeProblem::new(field, reference.row(0).to_vec(), reference.times().to_vec()).unwrap();
            adjoint_grad(&problem, SolverSpec::rk4(substeps), LossSpec::L1, &reference).unwrap().1
        };
        let (a, b) = (grad(1), grad(2));
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = a.data().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-5, "{}", diff / norm);
    }
}
