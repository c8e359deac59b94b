//! Scoring of trained twins against reference trajectories.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metrics::{dtw_trajectories, l1_error, mre, MreResult};
use crate::odesolve::{solve_grid, SolverSpec, VectorField};
use crate::trajectory::{fmt_f64, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub interpolation_l1: f64,
    pub extrapolation_l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesScores {
    pub l1: f64,
    /// `None` when every reference entry is below the zero guard.
    pub mre: Option<MreResult>,
    pub dtw_total: f64,
    pub dtw_normalized: f64,
}

/// L1, MRE and DTW of a prediction on the reference grid.
pub fn score_series(pred: &Trajectory, truth: &Trajectory) -> Result<SeriesScores> {
    let l1 = l1_error(pred, truth)?;
    let mre = match mre(pred.states(), truth.states()) {
        Ok(m) => Some(m),
        Err(Error::UndefinedMre) => None,
        Err(e) => return Err(e),
    };
    let d = dtw_trajectories(pred, truth)?;
    Ok(SeriesScores { l1, mre, dtw_total: d.total, dtw_normalized: d.normalized })
}

/// Free-running solve of `field` on the reference grid from its first row.
pub fn free_run<F: VectorField + ?Sized>(field: &F, reference: &Trajectory, solver: SolverSpec) -> Result<Trajectory> {
    check_dim(field.dim(), reference.dim())?;
    let states = solve_grid(field, reference.row(0), reference.times(), solver)?;
    Trajectory::new(reference.times().to_vec(), reference.dim(), states)
}

/// Forecast rows `start..=end`, restarting from the observed reference
/// state every `horizon` rows. Row `start` is the observed state; every
/// later row is predicted exactly once.
pub fn restart_forecast<F: VectorField + ?Sized>(
    field: &F,
    reference: &Trajectory,
    start: usize,
    end: usize,
    horizon: usize,
    solver: SolverSpec,
) -> Result<Trajectory> {
    check_dim(field.dim(), reference.dim())?;
    if horizon == 0 || start >= end || end >= reference.len() {
        return Err(Error::Metric(format!("bad forecast window {start}..={end} (horizon {horizon})")));
    }
    let n = reference.dim();
    let mut states = reference.row(start).to_vec();
    let mut anchor = start;
    while anchor < end {
        let stop = (anchor + horizon).min(end);
        let grid = &reference.times()[anchor..=stop];
        let seg = solve_grid(field, reference.row(anchor), grid, solver)?;
        states.extend_from_slice(&seg[n..]);
        anchor = stop;
    }
    Trajectory::new(reference.times()[start..=end].to_vec(), n, states)
}

/// L1 of [`restart_forecast`] over the predicted rows `start+1..=end`.
pub fn restart_forecast_l1<F: VectorField + ?Sized>(
    field: &F,
    reference: &Trajectory,
    start: usize,
    end: usize,
    horizon: usize,
    solver: SolverSpec,
) -> Result<f64> {
    let pred = restart_forecast(field, reference, start, end, horizon, solver)?;
    let n = reference.dim();
    crate::metrics::l1_slices(&pred.states()[n..], &reference.states()[(start + 1) * n..(end + 1) * n])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthPoint {
    /// Seconds since the forecast start.
    pub time: f64,
    /// `time` in units of the Lyapunov time.
    pub lyapunov_times: f64,
    /// Mean absolute error over dimensions at this time.
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorGrowth {
    pub label: String,
    pub lyapunov_time: f64,
    pub start_time: f64,
    /// Requested span, in Lyapunov times.
    pub span_lyapunov_times: f64,
    /// False when the reference ended before the requested span.
    pub complete: bool,
    pub points: Vec<GrowthPoint>,
}

impl ErrorGrowth {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,lyapunov_times,l1\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", fmt_f64(p.time), fmt_f64(p.lyapunov_times), fmt_f64(p.l1)));
        }
        s
    }
}

/// Free-run forecast from reference row `start` and its per-time error,
/// covering `span` Lyapunov times.
pub fn error_growth<F: VectorField + ?Sized>(
    field: &F,
    reference: &Trajectory,
    start: usize,
    lyapunov_time: f64,
    span: f64,
    solver: SolverSpec,
) -> Result<ErrorGrowth> {
    check_dim(field.dim(), reference.dim())?;
    if !(lyapunov_time > 0.0) || !lyapunov_time.is_finite() || !(span > 0.0) || start + 1 >= reference.len() {
        return Err(Error::Metric("error growth needs a finite positive Lyapunov time and span".into()));
    }
    let t0 = reference.times()[start];
    let horizon_end = t0 + span * lyapunov_time;
    let mut end = start + 1;
    while end + 1 < reference.len() && reference.times()[end] < horizon_end {
        end += 1;
    }
    let complete = reference.times()[end] >= horizon_end - 1e-12;
    let grid = &reference.times()[start..=end];
    let n = reference.dim();
    let pred = solve_grid(field, reference.row(start), grid, solver)?;
    let points = (0..grid.len())
        .map(|k| {
            let truth = reference.row(start + k);
            let l1 = pred[k * n..(k + 1) * n].iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / n as f64;
            let time = grid[k] - t0;
            GrowthPoint { time, lyapunov_times: time / lyapunov_time, l1 }
        })
        .collect();
    Ok(ErrorGrowth {
        label: format!("forecast error over {span} Lyapunov times"),
        lyapunov_time,
        start_time: t0,
        span_lyapunov_times: span,
        complete,
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{generate_reference, Lorenz96Field, Lorenz96Params, ReferenceGrid, System, LORENZ96_DEFAULT_X0};

    fn l96() -> (Lorenz96Field, Trajectory) {
        let params = Lorenz96Params::default();
        let sys = System::Lorenz96 { params, x0: LORENZ96_DEFAULT_X0.to_vec() };
        let grid = ReferenceGrid { points: 300, dt: 0.02, substeps: 4 };
        (Lorenz96Field { params }, generate_reference(&sys, &grid).unwrap())
    }

    #[test]
    fn exact_field_forecasts_have_tiny_error() {
        let (field, reference) = l96();
        let fc = restart_forecast(&field, &reference, 10, 250, 30, SolverSpec::rk4(4)).unwrap();
        assert_eq!(fc.len(), 241);
        assert_eq!(fc.row(0), reference.row(10));
        let l1 = restart_forecast_l1(&field, &reference, 10, 250, 30, SolverSpec::rk4(4)).unwrap();
        assert!(l1 < 1e-9, "{l1}");
        assert!(restart_forecast_l1(&field, &reference, 10, 250, 30, SolverSpec::euler(1)).unwrap() > l1);
    }

    #[test]
    fn error_growth_spans_requested_lyapunov_times() {
        let (field, reference) = l96();
        let g = error_growth(&field, &reference, 0, 0.5, 7.0, SolverSpec::rk4(4)).unwrap();
        assert!(g.complete);
        let last = g.points.last().unwrap();
        assert!(last.lyapunov_times >= 7.0 - 1e-9 && last.lyapunov_times < 7.1);
        assert!(g.points.iter().all(|p| p.l1 < 1e-9));
        assert_eq!(g.to_csv().lines().count(), g.points.len() + 1);
        let short = error_growth(&field, &reference, 250, 1.0, 7.0, SolverSpec::rk4(4)).unwrap();
        assert!(!short.complete);
    }

    #[test]
    fn series_scores_on_identical_inputs() {
        let (_, reference) = l96();
        let s = score_series(&reference, &reference).unwrap();
        assert_eq!((s.l1, s.dtw_total), (0.0, 0.0));
        assert_eq!(s.mre.unwrap().value, 0.0);
    }
}
