//! Fixed-step initial value problem solvers.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::trajectory::{check_grid, Trajectory};

/// Right-hand side `dh/dt = f(h, t)`.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, h: &[f64], out: &mut [f64]);
}

/// A vector field that can also push tangent vectors: `out = (df/dh) v`.
pub trait TangentField: VectorField {
    fn jvp(&self, t: f64, h: &[f64], v: &[f64], out: &mut [f64]);
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64, h: &[f64], out: &mut [f64]) {
        (**self).eval(t, h, out)
    }
}

impl<F: TangentField + ?Sized> TangentField for &F {
    fn jvp(&self, t: f64, h: &[f64], v: &[f64], out: &mut [f64]) {
        (**self).jvp(t, h, v, out)
    }
}

/// Adapts a closure `(t, h, out)` into a [`VectorField`].
pub struct FnField<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(f64, &[f64], &mut [f64])> FnField<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(f64, &[f64], &mut [f64])> VectorField for FnField<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, t: f64, h: &[f64], out: &mut [f64]) {
        (self.f)(t, h, out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    pub method: Method,
    pub substeps: usize,
}

impl Default for SolverSpec {
    fn default() -> Self {
        Self { method: Method::Rk4, substeps: 1 }
    }
}

impl SolverSpec {
    pub fn rk4(substeps: usize) -> Self {
        Self { method: Method::Rk4, substeps }
    }

    pub fn euler(substeps: usize) -> Self {
        Self { method: Method::Euler, substeps }
    }

    pub fn validate(&self) -> Result<()> {
        if self.substeps == 0 {
            return Err(Error::Solver("substeps must be at least 1".into()));
        }
        Ok(())
    }
}

/// Vector field, initial state and observation grid.
pub struct OdeProblem<F> {
    pub field: F,
    pub h0: Vec<f64>,
    pub time_grid: Vec<f64>,
}

impl<F: VectorField> OdeProblem<F> {
    pub fn new(field: F, h0: Vec<f64>, time_grid: Vec<f64>) -> Result<Self> {
        let p = Self { field, h0, time_grid };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.time_grid.len() < 2 {
            return Err(Error::Solver("time grid needs at least two points".into()));
        }
        check_grid(&self.time_grid).map_err(|e| Error::Solver(e.to_string()))?;
        check_dim(self.field.dim(), self.h0.len())
    }
}

/// Scratch buffers for in-place stepping.
#[derive(Debug, Clone)]
pub struct StepBuffers {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl StepBuffers {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }
}

pub fn euler_in_place<F: VectorField + ?Sized>(
    field: &F,
    h: &mut [f64],
    t: f64,
    dt: f64,
    buf: &mut StepBuffers,
) {
    field.eval(t, h, &mut buf.k1);
    for (hi, ki) in h.iter_mut().zip(&buf.k1) {
        *hi += dt * ki;
    }
}

pub fn rk4_in_place<F: VectorField + ?Sized>(
    field: &F,
    h: &mut [f64],
    t: f64,
    dt: f64,
    buf: &mut StepBuffers,
) {
    let half = 0.5 * dt;
    let StepBuffers { k1, k2, k3, k4, tmp } = buf;
    field.eval(t, h, k1);
    for i in 0..h.len() {
        tmp[i] = h[i] + half * k1[i];
    }
    field.eval(t + half, tmp, k2);
    for i in 0..h.len() {
        tmp[i] = h[i] + half * k2[i];
    }
    field.eval(t + half, tmp, k3);
    for i in 0..h.len() {
        tmp[i] = h[i] + dt * k3[i];
    }
    field.eval(t + dt, tmp, k4);
    let sixth = dt / 6.0;
    for i in 0..h.len() {
        h[i] += sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

pub(crate) fn step_in_place<F: VectorField + ?Sized>(
    method: Method,
    field: &F,
    h: &mut [f64],
    t: f64,
    dt: f64,
    buf: &mut StepBuffers,
) {
    match method {
        Method::Euler => euler_in_place(field, h, t, dt, buf),
        Method::Rk4 => rk4_in_place(field, h, t, dt, buf),
    }
}

fn checked_step<F: VectorField + ?Sized>(
    method: Method,
    field: &F,
    h: &[f64],
    t: f64,
    dt: f64,
) -> Result<Vec<f64>> {
    check_dim(field.dim(), h.len())?;
    if !(dt > 0.0) {
        return Err(Error::Solver(format!("step size must be positive, got {dt}")));
    }
    let mut out = h.to_vec();
    let mut buf = StepBuffers::new(h.len());
    step_in_place(method, field, &mut out, t, dt, &mut buf);
    if out.iter().all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::BlowUp { time: t + dt })
    }
}

/// One explicit Euler step: `h + dt f(h, t)`.
pub fn step_euler<F: VectorField + ?Sized>(field: &F, h: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    checked_step(Method::Euler, field, h, t, dt)
}

/// One classical fourth-order Runge-Kutta step.
pub fn step_rk4<F: VectorField + ?Sized>(field: &F, h: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
    checked_step(Method::Rk4, field, h, t, dt)
}

/// Integrate across every grid interval, splitting each into `spec.substeps`
/// equal steps, and return the states at the grid times. The first row is
/// `h0` bit-exactly.
pub fn ode_solve<F: VectorField>(problem: &OdeProblem<F>, spec: SolverSpec) -> Result<Trajectory> {
    problem.validate()?;
    spec.validate()?;
    let states = solve_grid(&problem.field, &problem.h0, &problem.time_grid, spec)?;
    Trajectory::new(problem.time_grid.clone(), problem.h0.len(), states)
}

/// Flat row-major states at each grid time, without trajectory validation.
pub(crate) fn solve_grid<F: VectorField + ?Sized>(
    field: &F,
    h0: &[f64],
    grid: &[f64],
    spec: SolverSpec,
) -> Result<Vec<f64>> {
    let dim = h0.len();
    let mut states = Vec::with_capacity(grid.len() * dim);
    states.extend_from_slice(h0);
    let mut h = h0.to_vec();
    let mut buf = StepBuffers::new(dim);
    for w in grid.windows(2) {
        let dt = (w[1] - w[0]) / spec.substeps as f64;
        for s in 0..spec.substeps {
            let t = w[0] + s as f64 * dt;
            step_in_place(spec.method, field, &mut h, t, dt, &mut buf);
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { time: w[1] });
        }
        states.extend_from_slice(&h);
    }
    Ok(states)
}
