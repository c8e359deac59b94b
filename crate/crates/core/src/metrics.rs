//! Figures of merit: L1, mean relative error, DTW, soft-DTW and maximal
//! Lyapunov exponents.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::odesolve::{rk4_in_place, StepBuffers, TangentField, VectorField};
use crate::rng;
use crate::trajectory::Trajectory;

/// Truth entries with magnitude below this are left out of the MRE mean.
pub const MRE_ZERO_GUARD: f64 = 1e-9;

fn check_same_grid(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    if pred.len() != truth.len() || pred.dim() != truth.dim() {
        return Err(Error::Metric(format!(
            "grid mismatch: {}x{} vs {}x{}",
            pred.len(),
            pred.dim(),
            truth.len(),
            truth.dim()
        )));
    }
    let scale = truth.times().iter().fold(1.0f64, |m, t| m.max(t.abs()));
    if pred.times().iter().zip(truth.times()).any(|(a, b)| (a - b).abs() > 1e-12 * scale) {
        return Err(Error::Metric("time stamps differ".into()));
    }
    Ok(())
}

/// Mean absolute difference over every (time, dimension) entry.
pub fn l1_error(pred: &Trajectory, truth: &Trajectory) -> Result<f64> {
    check_same_grid(pred, truth)?;
    l1_slices(pred.states(), truth.states())
}

pub fn l1_slices(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_dim(truth.len(), pred.len())?;
    if pred.is_empty() {
        return Err(Error::Metric("L1 of empty series".into()));
    }
    Ok(pred.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / pred.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MreResult {
    pub value: f64,
    pub included: usize,
    /// Indices skipped because the reference value was below the zero guard.
    pub excluded: Vec<usize>,
}

/// Mean of `|x_i - y_i| / |y_i|`, skipping indices where `|y_i|` is below
/// [`MRE_ZERO_GUARD`].
pub fn mre(pred: &[f64], truth: &[f64]) -> Result<MreResult> {
    check_dim(truth.len(), pred.len())?;
    let mut sum = 0.0;
    let mut excluded = Vec::new();
    for (i, (x, y)) in pred.iter().zip(truth).enumerate() {
        if y.abs() < MRE_ZERO_GUARD {
            excluded.push(i);
        } else {
            sum += ((x - y) / y).abs();
        }
    }
    let included = pred.len() - excluded.len();
    if included == 0 {
        return Err(Error::UndefinedMre);
    }
    Ok(MreResult { value: sum / included as f64, included, excluded })
}

/// Cost and cumulative tables for an `n x m` alignment, stored with a
/// padding row/column: `cumulative[(i, j)]` for `0 <= i <= n, 0 <= j <= m`.
#[derive(Debug, Clone, PartialEq)]
pub struct DtwMatrix {
    pub n: usize,
    pub m: usize,
    /// `n x m`, row-major.
    pub cost: Vec<f64>,
    /// `(n + 1) x (m + 1)`, row-major.
    pub cumulative: Vec<f64>,
}

impl DtwMatrix {
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.m + j]
    }

    #[allow(non_snake_case)]
    pub fn D(&self, i: usize, j: usize) -> f64 {
        self.cumulative[i * (self.m + 1) + j]
    }

    pub fn total(&self) -> f64 {
        self.D(self.n, self.m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DtwScore {
    pub total: f64,
    /// `total / (n + m)`.
    pub normalized: f64,
    pub n: usize,
    pub m: usize,
}

/// Euclidean distance between row `i` of `x` and row `j` of `y`.
#[inline]
fn point_dist(x: &[f64], y: &[f64], dim: usize, i: usize, j: usize) -> f64 {
    if dim == 1 {
        return (x[i] - y[j]).abs();
    }
    let a = &x[i * dim..(i + 1) * dim];
    let b = &y[j * dim..(j + 1) * dim];
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

fn check_series(x: &[f64], y: &[f64], dim: usize) -> Result<(usize, usize)> {
    if dim == 0 || x.len() % dim != 0 || y.len() % dim != 0 {
        return Err(Error::Metric(format!("series lengths are not multiples of dimension {dim}")));
    }
    let (n, m) = (x.len() / dim, y.len() / dim);
    if n == 0 || m == 0 {
        return Err(Error::Metric("DTW of an empty series".into()));
    }
    Ok((n, m))
}

/// Full DTW tables for row-major multivariate series of dimension `dim`.
pub fn dtw_matrix(x: &[f64], y: &[f64], dim: usize) -> Result<DtwMatrix> {
    let (n, m) = check_series(x, y, dim)?;
    let mut cost = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            cost[i * m + j] = point_dist(x, y, dim, i, j);
        }
    }
    let w = m + 1;
    let mut cum = vec![f64::INFINITY; (n + 1) * w];
    cum[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            let best = cum[(i - 1) * w + j].min(cum[i * w + j - 1]).min(cum[(i - 1) * w + j - 1]);
            cum[i * w + j] = cost[(i - 1) * m + j - 1] + best;
        }
    }
    Ok(DtwMatrix { n, m, cost, cumulative: cum })
}

/// DTW distance between two scalar series.
pub fn dtw(x: &[f64], y: &[f64]) -> Result<f64> {
    Ok(dtw_matrix(x, y, 1)?.total())
}

/// DTW between trajectories using the per-time Euclidean norm.
pub fn dtw_trajectories(a: &Trajectory, b: &Trajectory) -> Result<DtwScore> {
    check_dim(a.dim(), b.dim())?;
    let mat = dtw_matrix(a.states(), b.states(), a.dim())?;
    let total = mat.total();
    Ok(DtwScore { total, normalized: total / (mat.n + mat.m) as f64, n: mat.n, m: mat.m })
}

#[inline]
fn softmin3(a: f64, b: f64, c: f64, gamma: f64) -> f64 {
    let lo = a.min(b).min(c);
    if lo == f64::INFINITY {
        return f64::INFINITY;
    }
    let s = (-(a - lo) / gamma).exp() + (-(b - lo) / gamma).exp() + (-(c - lo) / gamma).exp();
    lo - gamma * s.ln()
}

/// Soft-DTW value and its gradient with respect to `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftDtw {
    pub value: f64,
    /// Same layout as `x`.
    pub grad_x: Vec<f64>,
}

/// Soft-DTW with the min of the DTW recursion replaced by
/// `-gamma log sum exp(-v / gamma)`. The gradient comes from the reverse
/// pass over the cumulative table.
pub fn soft_dtw(x: &[f64], y: &[f64], dim: usize, gamma: f64) -> Result<SoftDtw> {
    if !(gamma > 0.0) {
        return Err(Error::Metric(format!("soft-DTW smoothing must be positive, got {gamma}")));
    }
    let (n, m) = check_series(x, y, dim)?;
    let w = m + 2;
    let mut cost = vec![0.0; (n + 2) * w];
    for i in 0..n {
        for j in 0..m {
            cost[(i + 1) * w + j + 1] = point_dist(x, y, dim, i, j);
        }
    }
    let mut r = vec![f64::INFINITY; (n + 2) * w];
    r[0] = 0.0;
    for i in 1..=n {
        for j in 1..=m {
            r[i * w + j] =
                cost[i * w + j] + softmin3(r[(i - 1) * w + j], r[i * w + j - 1], r[(i - 1) * w + j - 1], gamma);
        }
    }
    let value = r[n * w + m];

    // Reverse pass (Cuturi & Blondel): e[i][j] = d value / d r[i][j].
    let mut e = vec![0.0; (n + 2) * w];
    e[n * w + m] = 1.0;
    for i in (1..=n).rev() {
        for j in (1..=m).rev() {
            if i == n && j == m {
                continue;
            }
            let rij = r[i * w + j];
            let mut acc = 0.0;
            if i < n {
                let k = (i + 1) * w + j;
                acc += e[k] * ((r[k] - rij - cost[k]) / gamma).exp();
            }
            if j < m {
                let k = i * w + j + 1;
                acc += e[k] * ((r[k] - rij - cost[k]) / gamma).exp();
            }
            if i < n && j < m {
                let k = (i + 1) * w + j + 1;
                acc += e[k] * ((r[k] - rij - cost[k]) / gamma).exp();
            }
            e[i * w + j] = acc;
        }
    }

    let mut grad_x = vec![0.0; x.len()];
    for i in 0..n {
        for j in 0..m {
            let eij = e[(i + 1) * w + j + 1];
            let dij = cost[(i + 1) * w + j + 1];
            if eij == 0.0 || dij == 0.0 {
                continue;
            }
            for k in 0..dim {
                grad_x[i * dim + k] += eij * (x[i * dim + k] - y[j * dim + k]) / dij;
            }
        }
    }
    Ok(SoftDtw { value, grad_x })
}

/// `sdtw(x, y) - (sdtw(x, x) + sdtw(y, y)) / 2`: non-negative, zero at
/// `x == y`, and with an exactly zero gradient there.
pub fn soft_dtw_divergence(x: &[f64], y: &[f64], dim: usize, gamma: f64) -> Result<SoftDtw> {
    let xy = soft_dtw(x, y, dim, gamma)?;
    let xx = soft_dtw(x, x, dim, gamma)?;
    let yy = soft_dtw(y, y, dim, gamma)?;
    // sdtw is symmetric, so d/dx sdtw(x, x) is twice the first-argument gradient.
    let grad_x = xy.grad_x.iter().zip(&xx.grad_x).map(|(a, b)| a - b).collect();
    Ok(SoftDtw { value: xy.value - 0.5 * (xx.value + yy.value), grad_x })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleEstimate {
    /// Per second for flows, per step for maps.
    pub lambda: f64,
    /// `1 / lambda`; `None` when `lambda <= 0` (infinite).
    pub lyapunov_time: Option<f64>,
    pub sample_count: usize,
}

impl MleEstimate {
    fn from_lambda(lambda: f64, sample_count: usize) -> Self {
        let lyapunov_time = (lambda > 0.0).then(|| 1.0 / lambda);
        Self { lambda, lyapunov_time, sample_count }
    }

    pub fn lyapunov_time_or_inf(&self) -> f64 {
        self.lyapunov_time.unwrap_or(f64::INFINITY)
    }
}

/// `(1/n) sum ln |f'(x_i)|` along the orbit of a 1-D map.
pub fn mle_map<F, D>(f: F, fprime: D, x0: f64, n_steps: usize) -> Result<MleEstimate>
where
    F: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    if n_steps == 0 {
        return Err(Error::Metric("MLE needs at least one step".into()));
    }
    let mut x = x0;
    let mut sum = 0.0;
    for _ in 0..n_steps {
        sum += fprime(x).abs().ln();
        x = f(x);
    }
    let lambda = sum / n_steps as f64;
    if lambda.is_nan() {
        return Err(Error::Metric("MLE orbit produced NaN".into()));
    }
    Ok(MleEstimate::from_lambda(lambda, n_steps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MleFlowSpec {
    /// RK4 step, seconds.
    pub dt: f64,
    /// Steps averaged into the estimate.
    pub n_steps: usize,
    /// Steps discarded before averaging.
    pub transient_steps: usize,
    /// Seed for the initial tangent direction.
    pub seed: u64,
}

struct Variational<'a, F: ?Sized> {
    field: &'a F,
    n: usize,
}

impl<F: TangentField + ?Sized> VectorField for Variational<'_, F> {
    fn dim(&self) -> usize {
        2 * self.n
    }
    fn eval(&self, t: f64, h: &[f64], out: &mut [f64]) {
        let (x, v) = h.split_at(self.n);
        let (fx, jv) = out.split_at_mut(self.n);
        self.field.eval(t, x, fx);
        self.field.jvp(t, x, v, jv);
    }
}

/// Maximal Lyapunov exponent of a flow by tangent renormalization after
/// every RK4 step of the joint state/tangent system.
pub fn mle_flow<F: TangentField + ?Sized>(field: &F, x0: &[f64], spec: &MleFlowSpec) -> Result<MleEstimate> {
    let n = field.dim();
    check_dim(n, x0.len())?;
    if spec.n_steps == 0 || !(spec.dt > 0.0) {
        return Err(Error::Metric("MLE needs a positive step and at least one step".into()));
    }
    let var = Variational { field, n };
    let mut h = vec![0.0; 2 * n];
    h[..n].copy_from_slice(x0);
    let mut r = rng::stream(spec.seed, "mle-tangent");
    for v in &mut h[n..] {
        *v = r.random_range(-1.0..1.0);
    }
    normalize(&mut h[n..]);
    let mut buf = StepBuffers::new(2 * n);
    let mut sum = 0.0;
    let mut t = 0.0;
    for k in 0..spec.transient_steps + spec.n_steps {
        rk4_in_place(&var, &mut h, t, spec.dt, &mut buf);
        t += spec.dt;
        let norm = normalize(&mut h[n..]);
        if !norm.is_finite() || norm == 0.0 || h[..n].iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: t });
        }
        if k >= spec.transient_steps {
            sum += norm.ln();
        }
    }
    Ok(MleEstimate::from_lambda(sum / (spec.n_steps as f64 * spec.dt), spec.n_steps))
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    if norm > 0.0 {
        for a in v.iter_mut() {
            *a /= norm;
        }
    }
    norm
}


#[cfg(test)]
mod tests {
    use super::oracle::*;
    use super::*;
    use crate::odesolve::FnField;
    use crate::trajectory::uniform_grid;
    use proptest::prelude::*;
    use rand::Rng;

    fn tr(vals: &[f64]) -> Trajectory {
        Trajectory::new(uniform_grid(0.0, 1.0, vals.len()), 1, vals.to_vec()).unwrap()
    }

    #[test]
    fn l1_examples() {
        let t = tr(&[1.0, -2.0, 3.5]);
        assert_eq!(l1_error(&t, &t).unwrap(), 0.0);
        let shifted = tr(&[1.5, -1.5, 4.0]);
        assert_eq!(l1_error(&shifted, &t).unwrap(), 0.5);
        assert_eq!(l1_error(&tr(&[1.0, 2.0]), &tr(&[2.0, 4.0])).unwrap(), 1.5);
        assert!(l1_error(&tr(&[1.0, 2.0]), &t).is_err());
    }

    #[test]
    fn mre_examples() {
        assert_eq!(mre(&[1.0, 2.0], &[1.0, 2.0]).unwrap().value, 0.0);
        assert_eq!(mre(&[1.0, 2.0], &[2.0, 4.0]).unwrap().value, 0.5);
        let r = mre(&[1.0, 5.0, 2.0], &[2.0, 0.0, 4.0]).unwrap();
        assert_eq!(r.value, 0.5);
        assert_eq!(r.excluded, vec![1]);
        assert_eq!(r.included, 2);
        assert_eq!(mre(&[1.0], &[0.0]), Err(Error::UndefinedMre));
    }

    #[test]
    fn dtw_examples() {
        assert_eq!(dtw(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(dtw(&[1.0, 2.0, 3.0], &[1.0, 3.0]).unwrap(), 1.0);
        assert_eq!(dtw(&[1.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 1.0);
        assert!(dtw(&[], &[1.0]).is_err());
        let m = dtw_matrix(&[1.0, 2.0, 3.0], &[1.0, 3.0], 1).unwrap();
        assert_eq!(m.D(0, 0), 0.0);
        assert_eq!(m.D(0, 1), f64::INFINITY);
        assert_eq!(m.D(1, 0), f64::INFINITY);
        assert_eq!(m.d(1, 1), 1.0);
    }

    #[test]
    fn dtw_multivariate_uses_euclidean_norm() {
        let a = [0.0, 0.0];
        let b = [3.0, 4.0];
        assert_eq!(dtw_matrix(&a, &b, 2).unwrap().total(), 5.0);
        let ta = Trajectory::new(vec![0.0, 1.0], 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let tb = Trajectory::new(vec![0.0, 1.0], 2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let s = dtw_trajectories(&ta, &tb).unwrap();
        assert_eq!(s.total, 0.0);
        assert_eq!(s.n + s.m, 4);
    }

    #[test]
    fn soft_dtw_examples() {
        for g in [0.01, 1.0, 10.0] {
            let s = soft_dtw(&[2.0], &[-1.5], 1, g).unwrap();
            assert!((s.value - 3.5).abs() < 1e-12);
        }
        let x = [0.1, 1.3, -0.4, 2.2, 0.7];
        let y = [0.0, 1.0, 0.2, 1.9, 1.1];
        let hard = dtw(&x, &y).unwrap();
        assert!((soft_dtw(&x, &y, 1, 1e-4).unwrap().value - hard).abs() < 1e-3);
        let a = [0.3, -1.2, 0.8];
        let b = [1.0, 0.1, -0.5];
        let v = soft_dtw(&a, &b, 1, 0.7).unwrap().value;
        assert!((v - brute_soft_dtw(&a, &b, 0.7)).abs() < 1e-12);
        assert!(soft_dtw(&a, &b, 1, 0.0).is_err());
    }

    #[test]
    fn soft_dtw_gradient_matches_central_differences() {
        let mut r = rng::stream(8, "sdtw-fd");
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| r.random_range(-2.0..2.0)).collect();
            let g = soft_dtw(&x, &y, 1, 1.0).unwrap().grad_x;
            let h = 1e-6;
            for i in 0..6 {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (soft_dtw(&xp, &y, 1, 1.0).unwrap().value - soft_dtw(&xm, &y, 1, 1.0).unwrap().value) / (2.0 * h);
                assert!((g[i] - fd).abs() <= 1e-4 * fd.abs().max(1e-2), "{} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn divergence_is_zero_with_zero_gradient_at_identity() {
        let x = [0.3, 1.2, -0.7, 0.9, 0.0, 2.0];
        let d = soft_dtw_divergence(&x, &x, 2, 0.5).unwrap();
        assert_eq!(d.value, 0.0);
        assert!(d.grad_x.iter().all(|g| *g == 0.0));
        let y = [0.5, 1.0, -0.2, 0.4, 0.3, 1.5];
        assert!(soft_dtw_divergence(&x, &y, 2, 0.5).unwrap().value > 0.0);
    }

    #[test]
    fn mle_examples() {
        let doubling = mle_map(|x| 2.0 * x, |_| 2.0, 0.1, 50).unwrap();
        assert!((doubling.lambda - 2f64.ln()).abs() < 1e-12);
        let contracting = mle_map(|x| x / 2.0, |_| 0.5, 1.0, 50).unwrap();
        assert!((contracting.lambda + 2f64.ln()).abs() < 1e-12);
        assert_eq!(contracting.lyapunov_time, None);
        assert_eq!(contracting.lyapunov_time_or_inf(), f64::INFINITY);
        assert!(mle_map(|x| x, |_| 1.0, 0.0, 0).is_err());

        struct Growth;
        impl VectorField for Growth {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, _t: f64, h: &[f64], out: &mut [f64]) {
                out[0] = h[0];
            }
        }
        impl TangentField for Growth {
            fn jvp(&self, _t: f64, _h: &[f64], v: &[f64], out: &mut [f64]) {
                out[0] = v[0];
            }
        }
        let spec = MleFlowSpec { dt: 0.01, n_steps: 100, transient_steps: 0, seed: 1 };
        let est = mle_flow(&Growth, &[1e-3], &spec).unwrap();
        assert!((est.lambda - 1.0).abs() < 1e-8);
        assert!((est.lyapunov_time.unwrap() * est.lambda - 1.0).abs() < 1e-12);
        let _ = FnField::new(1, |_t, _h: &[f64], _o: &mut [f64]| {});
    }

    #[test]
    fn doubling_map_orbit_converges() {
        // Doubling map mod 1; |f'| = 2 everywhere except the measure-zero break.
        let est = mle_map(|x: f64| (2.0 * x).fract(), |_| 2.0, 0.123_456, 1000).unwrap();
        assert!((est.lambda - 2f64.ln()).abs() / 2f64.ln() < 0.01);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn dtw_matches_path_enumeration(
            x in prop::collection::vec(-5.0f64..5.0, 1..=6),
            y in prop::collection::vec(-5.0f64..5.0, 1..=6),
        ) {
            let v = dtw(&x, &y).unwrap();
            prop_assert!((v - brute_dtw(&x, &y)).abs() <= 1e-12);
            prop_assert_eq!(v, dtw(&y, &x).unwrap());
            prop_assert!(v >= 0.0);
            if x.len() == y.len() {
                let diag: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
                prop_assert!(v <= diag + 1e-12);
            }
        }
    }
}
