//! Ground-truth oracles: the HP memristor, Lorenz96 and drive waveforms.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::odesolve::{solve_grid, SolverSpec, TangentField, VectorField};
use crate::trajectory::{uniform_grid, Trajectory};

/// Initial condition used for the Lorenz96 reference runs.
pub const LORENZ96_DEFAULT_X0: [f64; 6] = [-1.2061, 0.0617, 1.1632, -1.5008, -1.5944, -0.0187];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HpParams {
    /// Ohm.
    pub r_on: f64,
    /// Ohm.
    pub r_off: f64,
    /// Device thickness, metres.
    pub depth_d: f64,
    /// Ion mobility, m^2 s^-1 V^-1.
    pub mobility_mu_v: f64,
}

impl Default for HpParams {
    fn default() -> Self {
        Self { r_on: 100.0, r_off: 16_000.0, depth_d: 1e-8, mobility_mu_v: 1e-14 }
    }
}

impl HpParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.r_on > 0.0
            && self.r_off > self.r_on
            && self.depth_d > 0.0
            && self.mobility_mu_v > 0.0
            && [self.r_on, self.r_off, self.depth_d, self.mobility_mu_v].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Dynamics(format!("invalid HP parameters {self:?}")))
        }
    }

    /// Drift coefficient `mu_v R_on / D^2` for the normalized state.
    pub fn drift_gain(&self) -> f64 {
        self.mobility_mu_v * self.r_on / (self.depth_d * self.depth_d)
    }
}

fn check_unit(u: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) {
        Ok(())
    } else {
        Err(Error::Dynamics(format!("normalized HP state {u} outside [0, 1]")))
    }
}

/// Ohmic current through the device for normalized boundary position `u`.
pub fn hp_current(p: &HpParams, u: f64, v: f64) -> Result<f64> {
    check_unit(u)?;
    Ok(current_unchecked(p, u, v))
}

fn current_unchecked(p: &HpParams, u: f64, v: f64) -> f64 {
    v / (p.r_on * u + p.r_off * (1.0 - u))
}

/// `du/dt` with the boundary clamp: outward drift at a pinned boundary is zero.
pub fn hp_state_deriv(p: &HpParams, u: f64, v: f64) -> Result<f64> {
    check_unit(u)?;
    Ok(deriv_unchecked(p, u, v))
}

fn deriv_unchecked(p: &HpParams, u: f64, v: f64) -> f64 {
    let du = p.drift_gain() * current_unchecked(p, u, v);
    if (u >= 1.0 && du > 0.0) || (u <= 0.0 && du < 0.0) {
        0.0
    } else {
        du
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WaveformKind {
    Sine,
    Triangular,
    Rectangular,
    ModulatedSine,
}

impl WaveformKind {
    pub const ALL: [WaveformKind; 4] = [
        WaveformKind::Sine,
        WaveformKind::Triangular,
        WaveformKind::Rectangular,
        WaveformKind::ModulatedSine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WaveformKind::Sine => "sine",
            WaveformKind::Triangular => "triangular",
            WaveformKind::Rectangular => "rectangular",
            WaveformKind::ModulatedSine => "modulated-sine",
        }
    }
}

/// Periodic drive voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waveform {
    pub kind: WaveformKind,
    /// Volt.
    pub amplitude: f64,
    /// Hertz.
    pub frequency: f64,
    /// Radian.
    #[serde(default)]
    pub phase: f64,
    /// Envelope frequency for the modulated sine, hertz.
    #[serde(default = "default_envelope_frequency")]
    pub envelope_frequency: f64,
    /// Envelope depth for the modulated sine, in [0, 1].
    #[serde(default = "default_envelope_depth")]
    pub envelope_depth: f64,
}

fn default_envelope_frequency() -> f64 {
    0.5
}

fn default_envelope_depth() -> f64 {
    0.5
}

impl Waveform {
    pub fn new(kind: WaveformKind, amplitude: f64, frequency: f64) -> Self {
        Self {
            kind,
            amplitude,
            frequency,
            phase: 0.0,
            envelope_frequency: default_envelope_frequency(),
            envelope_depth: default_envelope_depth(),
        }
    }

    pub fn sine(amplitude: f64, frequency: f64) -> Self {
        Self::new(WaveformKind::Sine, amplitude, frequency)
    }

    pub fn with_kind(self, kind: WaveformKind) -> Self {
        Self { kind, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitude >= 0.0
            && self.frequency > 0.0
            && self.phase.is_finite()
            && self.amplitude.is_finite()
            && self.frequency.is_finite()
            && self.envelope_frequency > 0.0
            && (0.0..=1.0).contains(&self.envelope_depth)
        {
            Ok(())
        } else {
            Err(Error::Dynamics(format!("invalid waveform {self:?}")))
        }
    }

    /// Voltage at time `t`.
    pub fn eval(&self, t: f64) -> f64 {
        waveform_eval(self, t)
    }
}

pub fn waveform_eval(w: &Waveform, t: f64) -> f64 {
    let arg = 2.0 * PI * w.frequency * t + w.phase;
    match w.kind {
        WaveformKind::Sine => w.amplitude * arg.sin(),
        WaveformKind::Triangular => {
            // Same zero crossings and peaks as the sine of equal phase.
            let cycle = (arg / (2.0 * PI)).rem_euclid(1.0);
            let shape = if cycle < 0.25 {
                4.0 * cycle
            } else if cycle < 0.75 {
                2.0 - 4.0 * cycle
            } else {
                4.0 * cycle - 4.0
            };
            w.amplitude * shape
        }
        WaveformKind::Rectangular => {
            let cycle = (arg / (2.0 * PI)).rem_euclid(1.0);
            if cycle < 0.5 {
                w.amplitude
            } else {
                -w.amplitude
            }
        }
        WaveformKind::ModulatedSine => {
            let envelope = 1.0 - w.envelope_depth * (2.0 * PI * w.envelope_frequency * t).sin();
            w.amplitude * envelope * arg.sin()
        }
    }
}

/// HP memristor driven by a waveform; stage inputs are clamped into [0, 1].
#[derive(Debug, Clone, Copy)]
pub struct HpField {
    pub params: HpParams,
    pub drive: Waveform,
}

impl VectorField for HpField {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, t: f64, h: &[f64], out: &mut [f64]) {
        let u = h[0].clamp(0.0, 1.0);
        out[0] = deriv_unchecked(&self.params, u, self.drive.eval(t));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Lorenz96Params {
    pub n: usize,
    pub forcing_f: f64,
}

impl Default for Lorenz96Params {
    fn default() -> Self {
        Self { n: 6, forcing_f: 8.0 }
    }
}

impl Lorenz96Params {
    pub fn validate(&self) -> Result<()> {
        if self.n <= 3 {
            return Err(Error::Dynamics(format!("Lorenz96 needs n > 3, got {}", self.n)));
        }
        if !self.forcing_f.is_finite() {
            return Err(Error::Dynamics("non-finite Lorenz96 forcing".into()));
        }
        Ok(())
    }
}

/// `dx_i/dt = (x_{i+1} - x_{i-2}) x_{i-1} - x_i + F` with cyclic indices.
pub fn lorenz96_deriv(p: &Lorenz96Params, x: &[f64]) -> Result<Vec<f64>> {
    p.validate()?;
    if x.len() != p.n {
        return Err(Error::Dynamics(format!("state has length {}, expected {}", x.len(), p.n)));
    }
    let mut out = vec![0.0; p.n];
    lorenz96_into(p.forcing_f, x, &mut out);
    Ok(out)
}

fn lorenz96_into(forcing: f64, x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let ip1 = x[(i + 1) % n];
        let im1 = x[(i + n - 1) % n];
        let im2 = x[(i + n - 2) % n];
        out[i] = (ip1 - im2) * im1 - x[i] + forcing;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Lorenz96Field {
    pub params: Lorenz96Params,
}

impl VectorField for Lorenz96Field {
    fn dim(&self) -> usize {
        self.params.n
    }
    fn eval(&self, _t: f64, h: &[f64], out: &mut [f64]) {
        lorenz96_into(self.params.forcing_f, h, out);
    }
}

impl TangentField for Lorenz96Field {
    fn jvp(&self, _t: f64, x: &[f64], v: &[f64], out: &mut [f64]) {
        let n = x.len();
        for i in 0..n {
            let (p1, m1, m2) = ((i + 1) % n, (i + n - 1) % n, (i + n - 2) % n);
            out[i] = (v[p1] - v[m2]) * x[m1] + (x[p1] - x[m2]) * v[m1] - v[i];
        }
    }
}

/// Which oracle to sample, with its own parameters and initial state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum System {
    Hp { params: HpParams, drive: Waveform, u0: f64 },
    Lorenz96 { params: Lorenz96Params, x0: Vec<f64> },
}

/// Output grid and integration density for a reference run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceGrid {
    /// Number of output rows, including `t0`.
    pub points: usize,
    /// Output spacing, seconds.
    pub dt: f64,
    /// RK4 steps per output interval; at least 4.
    pub substeps: usize,
}

impl ReferenceGrid {
    /// 500 sampled points at 1 ms after the initial state.
    pub fn hp_default() -> Self {
        Self { points: 501, dt: 1e-3, substeps: 4 }
    }

    /// 2400 rows spanning 48 s.
    pub fn lorenz96_default() -> Self {
        Self { points: 2400, dt: 0.02, substeps: 4 }
    }

    pub fn times(&self) -> Vec<f64> {
        uniform_grid(0.0, self.dt, self.points)
    }
}

/// Integrate an oracle with RK4 at `grid.substeps` internal steps per output
/// interval and return the output-grid samples.
pub fn generate_reference(system: &System, grid: &ReferenceGrid) -> Result<Trajectory> {
    if grid.points < 2 || !(grid.dt > 0.0) || !grid.dt.is_finite() {
        return Err(Error::Dynamics(format!("invalid reference grid {grid:?}")));
    }
    if grid.substeps < 4 {
        return Err(Error::Dynamics("reference integration must be at least 4x finer than the output grid".into()));
    }
    let times = grid.times();
    let spec = SolverSpec::rk4(grid.substeps);
    match system {
        System::Hp { params, drive, u0 } => {
            params.validate()?;
            drive.validate()?;
            check_unit(*u0)?;
            let field = HpField { params: *params, drive: *drive };
            let states = integrate_clamped(&field, *u0, &times, grid.substeps)?;
            Trajectory::new(times, 1, states)?.with_labels(vec!["u".into()])
        }
        System::Lorenz96 { params, x0 } => {
            params.validate()?;
            if x0.len() != params.n {
                return Err(Error::Dynamics(format!(
                    "initial condition has length {}, expected {}",
                    x0.len(),
                    params.n
                )));
            }
            let field = Lorenz96Field { params: *params };
            let states = solve_grid(&field, x0, &times, spec)?;
            Trajectory::new(times, params.n, states)
        }
    }
}

fn integrate_clamped(field: &HpField, u0: f64, times: &[f64], substeps: usize) -> Result<Vec<f64>> {
    use crate::odesolve::{rk4_in_place, StepBuffers};
    let mut out = Vec::with_capacity(times.len());
    out.push(u0);
    let mut h = [u0];
    let mut buf = StepBuffers::new(1);
    for w in times.windows(2) {
        let dt = (w[1] - w[0]) / substeps as f64;
        for s in 0..substeps {
            rk4_in_place(field, &mut h, w[0] + s as f64 * dt, dt, &mut buf);
            h[0] = h[0].clamp(0.0, 1.0);
        }
        if !h[0].is_finite() {
            return Err(Error::BlowUp { time: w[1] });
        }
        out.push(h[0]);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn waveform_examples() {
        let s = Waveform::sine(1.0, 1.0);
        assert_eq!(s.eval(0.0), 0.0);
        assert_relative_eq!(s.eval(0.25), 1.0, epsilon = 1e-15);
        let r = Waveform::new(WaveformKind::Rectangular, 2.0, 1.0);
        assert_eq!(r.eval(0.1), 2.0);
        assert_eq!(r.eval(0.6), -2.0);
        let tri = Waveform::new(WaveformKind::Triangular, 1.5, 2.0);
        assert_relative_eq!(tri.eval(0.125), 1.5, epsilon = 1e-12);
        assert_relative_eq!(tri.eval(0.375), -1.5, epsilon = 1e-12);
        assert_relative_eq!(tri.eval(0.0625), 0.75, epsilon = 1e-12);
    }

    #[test]
    fn waveforms_are_periodic() {
        for kind in [WaveformKind::Sine, WaveformKind::Triangular, WaveformKind::Rectangular] {
            let w = Waveform::new(kind, 1.3, 4.0);
            for k in 0..20 {
                let t = 0.0137 * k as f64;
                assert!((w.eval(t) - w.eval(t + 0.25)).abs() < 1e-9, "{kind:?} at {t}");
            }
        }
    }

    #[test]
    fn hp_current_examples() {
        let p = HpParams::default();
        assert_eq!(hp_current(&p, 0.3, 0.0).unwrap(), 0.0);
        assert_relative_eq!(hp_current(&p, 1.0, 1.0).unwrap(), 0.01, epsilon = 1e-15);
        assert_relative_eq!(hp_current(&p, 0.0, 1.0).unwrap(), 6.25e-5, epsilon = 1e-18);
        assert!(hp_current(&p, 1.2, 1.0).is_err());
        assert!(hp_current(&p, -0.1, 1.0).is_err());
    }

    #[test]
    fn hp_deriv_examples() {
        let p = HpParams::default();
        assert_eq!(hp_state_deriv(&p, 0.4, 0.0).unwrap(), 0.0);
        // 1e-14 * 100 / 1e-16
        assert_relative_eq!(p.drift_gain(), 1e4, epsilon = 1e-8);
        // Outward drift at a pinned boundary is clamped to zero.
        assert_eq!(hp_state_deriv(&p, 1.0, 0.1).unwrap(), 0.0);
        assert!(hp_state_deriv(&p, 1.0, -0.1).unwrap() < 0.0);
        assert_eq!(hp_state_deriv(&p, 0.0, -1.0).unwrap(), 0.0);
        // Interior point where the current is 1 mA: R = 1000 ohm.
        let u = (16_000.0 - 1000.0) / (16_000.0 - 100.0);
        assert_relative_eq!(hp_state_deriv(&p, u, 1.0).unwrap(), 10.0, epsilon = 1e-9);
        assert!(hp_state_deriv(&p, 2.0, 1.0).is_err());
    }

    #[test]
    fn lorenz96_examples() {
        let p = Lorenz96Params { n: 6, forcing_f: 8.0 };
        assert!(lorenz96_deriv(&p, &[8.0; 6]).unwrap().iter().all(|v| *v == 0.0));
        assert_eq!(
            lorenz96_deriv(&p, &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap(),
            vec![7.0, 8.0, 8.0, 8.0, 8.0, 8.0]
        );
        let p0 = Lorenz96Params { n: 6, forcing_f: 0.0 };
        assert!(lorenz96_deriv(&p0, &[0.0; 6]).unwrap().iter().all(|v| *v == 0.0));
        assert!(lorenz96_deriv(&Lorenz96Params { n: 3, forcing_f: 8.0 }, &[0.0; 3]).is_err());
        assert!(lorenz96_deriv(&p, &[0.0; 5]).is_err());
    }

    #[test]
    fn lorenz96_jvp_matches_finite_differences() {
        let f = Lorenz96Field { params: Lorenz96Params::default() };
        let x = LORENZ96_DEFAULT_X0;
        let v = [0.3, -0.1, 0.7, 0.2, -0.5, 0.05];
        let mut jv = [0.0; 6];
        f.jvp(0.0, &x, &v, &mut jv);
        let eps = 1e-6;
        let (mut fp, mut fm) = ([0.0; 6], [0.0; 6]);
        let xp: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + eps * b).collect();
        let xm: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a - eps * b).collect();
        f.eval(0.0, &xp, &mut fp);
        f.eval(0.0, &xm, &mut fm);
        for i in 0..6 {
            assert!((jv[i] - (fp[i] - fm[i]) / (2.0 * eps)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn lorenz96_rotation_equivariance(x in prop::collection::vec(-10.0f64..10.0, 7), k in 0usize..7) {
            let p = Lorenz96Params { n: 7, forcing_f: 8.0 };
            let d = lorenz96_deriv(&p, &x).unwrap();
            let mut xr = x.clone();
            xr.rotate_right(k);
            let mut dr = d.clone();
            dr.rotate_right(k);
            prop_assert_eq!(lorenz96_deriv(&p, &xr).unwrap(), dr);
        }

        #[test]
        fn hp_state_stays_in_unit_interval(amp in 0.0f64..50.0, freq in 0.5f64..20.0, u0 in 0.0f64..=1.0) {
            let sys = System::Hp {
                params: HpParams { mobility_mu_v: 1e-10, ..HpParams::default() },
                drive: Waveform::new(WaveformKind::Rectangular, amp, freq),
                u0,
            };
            let tr = generate_reference(&sys, &ReferenceGrid { points: 200, dt: 1e-3, substeps: 4 }).unwrap();
            prop_assert!(tr.states().iter().all(|u| (0.0..=1.0).contains(u)));
        }
    }

    #[test]
    fn reference_examples() {
        let hp = System::Hp {
            params: HpParams::default(),
            drive: Waveform::sine(0.0, 1.0),
            u0: 0.37,
        };
        let tr = generate_reference(&hp, &ReferenceGrid::hp_default()).unwrap();
        assert_eq!(tr.len(), 501);
        assert!(tr.states().iter().all(|u| *u == 0.37));

        let fixed = System::Lorenz96 { params: Lorenz96Params::default(), x0: vec![8.0; 6] };
        let tr = generate_reference(&fixed, &ReferenceGrid::lorenz96_default()).unwrap();
        assert!(tr.states().iter().all(|x| *x == 8.0));

        let default_sys = System::Lorenz96 { params: Lorenz96Params::default(), x0: LORENZ96_DEFAULT_X0.to_vec() };
        let tr = generate_reference(&default_sys, &ReferenceGrid::lorenz96_default()).unwrap();
        assert_eq!(tr.len(), 2400);
        assert_eq!(tr.row(0), &LORENZ96_DEFAULT_X0);
        assert_relative_eq!(tr.times()[2399], 47.98, epsilon = 1e-12);
        assert_eq!(tr, generate_reference(&default_sys, &ReferenceGrid::lorenz96_default()).unwrap());

        let coarse = ReferenceGrid { substeps: 2, ..ReferenceGrid::hp_default() };
        assert!(generate_reference(&hp, &coarse).is_err());
    }

    #[test]
    fn halving_the_internal_step_is_converged() {
        let hp = System::Hp {
            params: HpParams::default(),
            drive: Waveform::sine(1.0, 2.0),
            u0: 0.1,
        };
        let g = ReferenceGrid::hp_default();
        let a = generate_reference(&hp, &g).unwrap();
        let b = generate_reference(&hp, &ReferenceGrid { substeps: 8, ..g }).unwrap();
        for (x, y) in a.states().iter().zip(b.states()) {
            assert!((x - y).abs() <= 1e-6 * y.abs());
        }
        // Lorenz96 is chaotic, so the comparison is limited to the first five seconds.
        let l = System::Lorenz96 { params: Lorenz96Params::default(), x0: LORENZ96_DEFAULT_X0.to_vec() };
        let g = ReferenceGrid { points: 251, ..ReferenceGrid::lorenz96_default() };
        let a = generate_reference(&l, &g).unwrap();
        let b = generate_reference(&l, &ReferenceGrid { substeps: 8, ..g }).unwrap();
        let scale = a.states().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in a.states().iter().zip(b.states()) {
            assert!((x - y).abs() <= 1e-6 * scale);
        }
    }
}
