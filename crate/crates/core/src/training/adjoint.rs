//! Reverse-mode gradients through the fixed-step solver.
//!
//! States are checkpointed at grid points. Inside each grid interval the
//! substep states are recomputed from the checkpoint and the cotangent is
//! pulled back through every Runge-Kutta stage, so the result is the exact
//! gradient of the discrete forward map.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metrics::soft_dtw_divergence;
use crate::nn::{MlpParams, NeuralCache, NeuralField};
use crate::odesolve::{solve_grid, Method, OdeProblem, SolverSpec, VectorField};
use crate::trajectory::Trajectory;

/// A vector field that can pull cotangents back to its state and parameters.
pub trait DiffField: VectorField {
    type Cache;

    fn n_params(&self) -> usize;
    fn new_cache(&self) -> Self::Cache;
    fn eval_cached(&self, t: f64, h: &[f64], out: &mut [f64], cache: &mut Self::Cache);
    /// After `eval_cached` at some point, accumulate `cot^T df/dh` into
    /// `h_bar` and `cot^T df/dtheta` into `theta_bar`.
    fn vjp_cached(&self, cache: &mut Self::Cache, cot: &[f64], h_bar: &mut [f64], theta_bar: &mut [f64]);
}

impl DiffField for NeuralField<'_> {
    type Cache = NeuralCache;

    fn n_params(&self) -> usize {
        self.params.param_count()
    }

    fn new_cache(&self) -> NeuralCache {
        NeuralField::new_cache(self)
    }

    fn eval_cached(&self, t: f64, h: &[f64], out: &mut [f64], cache: &mut NeuralCache) {
        self.eval_with(t, h, out, cache);
    }

    fn vjp_cached(&self, cache: &mut NeuralCache, cot: &[f64], h_bar: &mut [f64], theta_bar: &mut [f64]) {
        let k = self.drive_count();
        let NeuralCache { mlp, input_grad, .. } = cache;
        self.params.backward_cached(mlp, cot, theta_bar, input_grad);
        for (hb, g) in h_bar.iter_mut().zip(&input_grad[k..]) {
            *hb += g;
        }
    }
}

/// Running reverse-pass state: the cotangent `a = dL/dh` and the parameter
/// gradient accumulated so far.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState {
    pub a: Vec<f64>,
    pub theta_grad: Vec<f64>,
}

struct StageCaches<C> {
    caches: [C; 4],
    k: [Vec<f64>; 4],
    y: Vec<f64>,
    ybar: Vec<f64>,
    kbar: Vec<f64>,
    abar: Vec<f64>,
}

/// Pull `a` (the cotangent of the post-step state) back through one solver
/// step taken from `h` at `t`. Afterwards `a` is the cotangent of `h`.
fn step_backward<F: DiffField + ?Sized>(
    field: &F,
    method: Method,
    h: &[f64],
    t: f64,
    dt: f64,
    st: &mut AdjointState,
    sc: &mut StageCaches<F::Cache>,
) {
    let n = h.len();
    match method {
        Method::Euler => {
            field.eval_cached(t, h, &mut sc.k[0], &mut sc.caches[0]);
            sc.kbar.iter_mut().zip(&st.a).for_each(|(kb, a)| *kb = dt * a);
            field.vjp_cached(&mut sc.caches[0], &sc.kbar, &mut st.a, &mut st.theta_grad);
        }
        Method::Rk4 => {
            let half = 0.5 * dt;
            // Forward stages, keeping each cache.
            let [c1, c2, c3, c4] = &mut sc.caches;
            let [k1, k2, k3, k4] = &mut sc.k;
            field.eval_cached(t, h, k1, c1);
            for i in 0..n {
                sc.y[i] = h[i] + half * k1[i];
            }
            field.eval_cached(t + half, &sc.y, k2, c2);
            for i in 0..n {
                sc.y[i] = h[i] + half * k2[i];
            }
            field.eval_cached(t + half, &sc.y, k3, c3);
            for i in 0..n {
                sc.y[i] = h[i] + dt * k3[i];
            }
            field.eval_cached(t + dt, &sc.y, k4, c4);

            sc.abar.copy_from_slice(&st.a);
            let abar = &sc.abar;
            let sixth = dt / 6.0;
            let third = dt / 3.0;
            // Stage 4: y4 = h + dt k3.
            for i in 0..n {
                sc.kbar[i] = sixth * abar[i];
            }
            sc.ybar.fill(0.0);
            field.vjp_cached(c4, &sc.kbar, &mut sc.ybar, &mut st.theta_grad);
            for i in 0..n {
                st.a[i] += sc.ybar[i];
                sc.kbar[i] = third * abar[i] + dt * sc.ybar[i];
            }
            // Stage 3: y3 = h + dt/2 k2.
            sc.ybar.fill(0.0);
            field.vjp_cached(c3, &sc.kbar, &mut sc.ybar, &mut st.theta_grad);
            for i in 0..n {
                st.a[i] += sc.ybar[i];
                sc.kbar[i] = third * abar[i] + half * sc.ybar[i];
            }
            // Stage 2: y2 = h + dt/2 k1.
            sc.ybar.fill(0.0);
            field.vjp_cached(c2, &sc.kbar, &mut sc.ybar, &mut st.theta_grad);
            for i in 0..n {
                st.a[i] += sc.ybar[i];
                sc.kbar[i] = sixth * abar[i] + half * sc.ybar[i];
            }
            // Stage 1 at h itself.
            field.vjp_cached(c1, &sc.kbar, &mut st.a, &mut st.theta_grad);
        }
    }
}

/// Gradient of a loss on grid states given the states from the forward pass
/// and the per-observation cotangents `dl_dh` (same row-major layout).
pub fn backprop_trajectory<F: DiffField + ?Sized>(
    field: &F,
    grid: &[f64],
    spec: SolverSpec,
    states: &[f64],
    dl_dh: &[f64],
) -> Result<AdjointState> {
    let n = field.dim();
    check_dim(grid.len() * n, states.len())?;
    check_dim(states.len(), dl_dh.len())?;
    let last = grid.len() - 1;
    let mut st = AdjointState { a: dl_dh[last * n..].to_vec(), theta_grad: vec![0.0; field.n_params()] };
    let mut sc = StageCaches {
        caches: [field.new_cache(), field.new_cache(), field.new_cache(), field.new_cache()],
        k: [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        y: vec![0.0; n],
        ybar: vec![0.0; n],
        kbar: vec![0.0; n],
        abar: vec![0.0; n],
    };
    let mut buf = crate::odesolve::StepBuffers::new(n);
    let mut sub = vec![0.0; spec.substeps * n];
    for k in (0..last).rev() {
        let dt = (grid[k + 1] - grid[k]) / spec.substeps as f64;
        // Recompute substep start states from the checkpoint.
        sub[..n].copy_from_slice(&states[k * n..(k + 1) * n]);
        for s in 1..spec.substeps {
            let (prev, cur) = sub.split_at_mut(s * n);
            cur[..n].copy_from_slice(&prev[(s - 1) * n..]);
            let t = grid[k] + (s - 1) as f64 * dt;
            crate::odesolve::step_in_place(spec.method, field, &mut cur[..n], t, dt, &mut buf);
        }
        for s in (0..spec.substeps).rev() {
            let t = grid[k] + s as f64 * dt;
            step_backward(field, spec.method, &sub[s * n..(s + 1) * n], t, dt, &mut st, &mut sc);
        }
        for (a, g) in st.a.iter_mut().zip(&dl_dh[k * n..(k + 1) * n]) {
            *a += g;
        }
        if st.a.iter().chain(&st.theta_grad).any(|v| !v.is_finite()) {
            return Err(Error::AdjointBlowUp { time: grid[k] });
        }
    }
    Ok(st)
}

/// Training losses on predicted vs observed grid states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossSpec {
    /// Mean absolute error over every (time, dimension) entry.
    L1,
    /// Soft-DTW divergence between the predicted and observed series.
    SoftDtw { gamma: f64 },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            LossSpec::L1 => Ok(()),
            LossSpec::SoftDtw { gamma } if *gamma > 0.0 && gamma.is_finite() => Ok(()),
            LossSpec::SoftDtw { gamma } => Err(Error::Training(format!("soft-DTW gamma must be positive, got {gamma}"))),
        }
    }

    /// Loss value and `dL/dpred`.
    pub fn value_and_grad(&self, pred: &[f64], truth: &[f64], dim: usize) -> Result<(f64, Vec<f64>)> {
        check_dim(truth.len(), pred.len())?;
        match *self {
            LossSpec::L1 => {
                let n = pred.len() as f64;
                let mut grad = vec![0.0; pred.len()];
                let mut sum = 0.0;
                for ((g, p), y) in grad.iter_mut().zip(pred).zip(truth) {
                    let d = p - y;
                    sum += d.abs();
                    *g = if d > 0.0 {
                        1.0 / n
                    } else if d < 0.0 {
                        -1.0 / n
                    } else {
                        0.0
                    };
                }
                Ok((sum / n, grad))
            }
            LossSpec::SoftDtw { gamma } => {
                let d = soft_dtw_divergence(pred, truth, dim, gamma)?;
                Ok((d.value, d.grad_x))
            }
        }
    }
}

/// Loss and parameter gradient for one solve of a differentiable field.
#[derive(Debug, Clone, PartialEq)]
pub struct GradResult {
    pub loss: f64,
    pub theta_grad: Vec<f64>,
    pub h0_grad: Vec<f64>,
    /// Forward grid states, row-major.
    pub states: Vec<f64>,
}

/// Forward solve, loss against `truth` on the same grid, and reverse pass.
pub fn field_loss_grad<F: DiffField + ?Sized>(
    field: &F,
    h0: &[f64],
    grid: &[f64],
    spec: SolverSpec,
    loss: LossSpec,
    truth: &[f64],
) -> Result<GradResult> {
    let n = field.dim();
    check_dim(n, h0.len())?;
    check_dim(grid.len() * n, truth.len())?;
    let states = solve_grid(field, h0, grid, spec)?;
    let (value, dl) = loss.value_and_grad(&states, truth, n)?;
    let st = backprop_trajectory(field, grid, spec, &states, &dl)?;
    Ok(GradResult { loss: value, theta_grad: st.theta_grad, h0_grad: st.a, states })
}

/// Loss and `dL/dtheta` for a neural ODE on the truth trajectory's grid.
pub fn adjoint_grad(
    problem: &OdeProblem<NeuralField<'_>>,
    solver: SolverSpec,
    loss: LossSpec,
    truth: &Trajectory,
) -> Result<(f64, MlpParams)> {
    problem.validate()?;
    solver.validate()?;
    loss.validate()?;
    if truth.times() != problem.time_grid.as_slice() || truth.dim() != problem.h0.len() {
        return Err(Error::Training("truth grid differs from the problem grid".into()));
    }
    let r = field_loss_grad(&problem.field, &problem.h0, &problem.time_grid, solver, loss, truth.states())?;
    let grad = MlpParams::from_flat(problem.field.params.shape().clone(), r.theta_grad)?;
    Ok((r.loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{init_params, FieldInput, NetShape};
    use crate::rng;
    use crate::trajectory::uniform_grid;
    use rand::Rng;

    /// `dh/dt = theta h`.
    struct Scalar(f64);

    impl VectorField for Scalar {
        fn dim(&self) -> usize {
            1
        }
        fn eval(&self, _t: f64, h: &[f64], out: &mut [f64]) {
            out[0] = self.0 * h[0];
        }
    }

    impl DiffField for Scalar {
        type Cache = f64;
        fn n_params(&self) -> usize {
            1
        }
        fn new_cache(&self) -> f64 {
            0.0
        }
        fn eval_cached(&self, _t: f64, h: &[f64], out: &mut [f64], cache: &mut f64) {
            *cache = h[0];
            out[0] = self.0 * h[0];
        }
        fn vjp_cached(&self, cache: &mut f64, cot: &[f64], h_bar: &mut [f64], theta_bar: &mut [f64]) {
            h_bar[0] += cot[0] * self.0;
            theta_bar[0] += cot[0] * *cache;
        }
    }

    #[test]
    fn scalar_linear_matches_closed_form() {
        let (theta, h0, t_end) = (0.7, 1.3, 1.0);
        let grid = [0.0, t_end];
        let spec = SolverSpec::rk4(100);
        let states = solve_grid(&Scalar(theta), &[h0], &grid, spec).unwrap();
        // L = h(T): cotangent 1 at the last point only.
        let st = backprop_trajectory(&Scalar(theta), &grid, spec, &states, &[0.0, 1.0]).unwrap();
        let exact = h0 * t_end * (theta * t_end).exp();
        assert!((st.theta_grad[0] - exact).abs() < 1e-6);
        assert!((st.a[0] - (theta * t_end).exp()).abs() < 1e-6);
        let euler = SolverSpec::euler(20_000);
        let states = solve_grid(&Scalar(theta), &[h0], &grid, euler).unwrap();
        let st = backprop_trajectory(&Scalar(theta), &grid, euler, &states, &[0.0, 1.0]).unwrap();
        assert!((st.theta_grad[0] - exact).abs() < 1e-3);
    }

    #[test]
    fn zero_field_gives_zero_gradient() {
        let shape = NetShape::new([2, 8, 2]).unwrap();
        let params = MlpParams::zeros(shape).unwrap();
        let field = NeuralField::autonomous(&params).unwrap();
        let grid = uniform_grid(0.0, 0.1, 5);
        let h0 = [0.5, -0.5];
        let truth: Vec<f64> = (0..5).flat_map(|_| h0).collect();
        let r = field_loss_grad(&field, &h0, &grid, SolverSpec::rk4(2), LossSpec::L1, &truth).unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.theta_grad.iter().all(|g| *g == 0.0));
    }

    fn fd_check(loss: LossSpec, method: Method, seed: u64) {
        let shape = NetShape::new([2, 8, 2]).unwrap();
        let mut params = init_params(&shape, seed).unwrap();
        let mut r = rng::stream(seed, "fd-biases");
        for l in 0..params.n_layers() {
            for b in params.bias_mut(l) {
                *b = r.random_range(-0.5..0.5);
            }
        }
        let grid = uniform_grid(0.0, 0.1, 10);
        let h0 = [0.4, -0.3];
        let truth: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let spec = SolverSpec { method, substeps: 2 };
        let value = |p: &MlpParams| {
            let f = NeuralField::autonomous(p).unwrap();
            field_loss_grad(&f, &h0, &grid, spec, loss, &truth).unwrap()
        };
        let g = value(&params).theta_grad;
        let eps = 1e-5;
        for i in 0..params.param_count() {
            let orig = params.data()[i];
            params.data_mut()[i] = orig + eps;
            let up = value(&params).loss;
            params.data_mut()[i] = orig - eps;
            let dn = value(&params).loss;
            params.data_mut()[i] = orig;
            let fd = (up - dn) / (2.0 * eps);
            let scale = fd.abs().max(g[i].abs()).max(1e-3);
            assert!((g[i] - fd).abs() / scale < 1e-4, "param {i}: adjoint {} vs fd {fd} ({loss:?})", g[i]);
        }
    }

    #[test]
    fn matches_finite_differences() {
        fd_check(LossSpec::L1, Method::Rk4, 3);
        fd_check(LossSpec::SoftDtw { gamma: 1.0 }, Method::Rk4, 4);
        fd_check(LossSpec::L1, Method::Euler, 5);
    }

    #[test]
    fn soft_dtw_gradient_vanishes_on_exact_fit() {
        let shape = NetShape::new([2, 8, 2]).unwrap();
        let params = init_params(&shape, 9).unwrap();
        let field = NeuralField::autonomous(&params).unwrap();
        let grid = uniform_grid(0.0, 0.1, 8);
        let h0 = [0.2, 0.9];
        let truth = solve_grid(&field, &h0, &grid, SolverSpec::rk4(1)).unwrap();
        let r = field_loss_grad(&field, &h0, &grid, SolverSpec::rk4(1), LossSpec::SoftDtw { gamma: 1.0 }, &truth)
            .unwrap();
        assert_eq!(r.loss, 0.0);
        assert!(r.theta_grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn adjoint_grad_checks_grids() {
        let shape = NetShape::new([2, 4, 1]).unwrap();
        let params = init_params(&shape, 1).unwrap();
        let drive = crate::dynamics::Waveform::sine(1.0, 1.0);
        let field = NeuralField::new(&params, FieldInput::Driven(drive)).unwrap();
        let grid = uniform_grid(0.0, 0.01, 6);
        let problem = OdeProblem::new(field, vec![0.3], grid.clone()).unwrap();
        let truth = Trajectory::new(grid, 1, vec![0.3; 6]).unwrap();
        let (loss, grad) = adjoint_grad(&problem, SolverSpec::rk4(1), LossSpec::L1, &truth).unwrap();
        assert!(loss.is_finite());
        assert_eq!(grad.param_count(), params.param_count());
        let other = Trajectory::new(uniform_grid(0.0, 0.02, 6), 1, vec![0.3; 6]).unwrap();
        assert!(adjoint_grad(&problem, SolverSpec::rk4(1), LossSpec::L1, &other).is_err());
    }
}
