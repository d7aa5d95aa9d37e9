use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use super::master::{Liouvillian, MasterEquation, Workspace};
use crate::error::{Error, Result};
use crate::hilbert::{expectation, DensityMatrix, Operator};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Method {
    /// Fixed-step classical Runge–Kutta. `None` picks `0.02 / ν_max`.
    Rk4 { dt: Option<f64> },
    /// Dormand–Prince 5(4) with error-per-step control.
    Rk45 { rtol: f64, atol: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct IntegratorConfig {
    pub method: Method,
    pub record_snapshots: bool,
    /// Diagonalize the state at every recorded time to track its smallest eigenvalue.
    pub monitor_positivity: bool,
    pub max_steps: u64,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { method: Method::Rk4 { dt: None }, record_snapshots: false, monitor_positivity: true, max_steps: u64::MAX }
    }
}

impl IntegratorConfig {
    pub fn rk4(dt: f64) -> Self {
        Self { method: Method::Rk4 { dt: Some(dt) }, ..Self::default() }
    }

    pub fn rk45() -> Self {
        Self { method: Method::Rk45 { rtol: 1e-8, atol: 1e-10 }, ..Self::default() }
    }

    pub fn with_snapshots(mut self) -> Self {
        self.record_snapshots = true;
        self
    }

    pub fn without_positivity(mut self) -> Self {
        self.monitor_positivity = false;
        self
    }
}

pub const DT_FACTOR: f64 = 0.02;

/// Step size used by the fixed-step path when none is given.
pub fn default_dt(me: &MasterEquation) -> f64 {
    let nu = me.nu_max();
    if nu > 0.0 {
        DT_FACTOR / nu
    } else {
        DT_FACTOR
    }
}

#[derive(Clone, Debug)]
pub struct Observable {
    pub name: String,
    pub op: Operator,
}

impl Observable {
    pub fn new(name: impl Into<String>, op: Operator) -> Self {
        Self { name: name.into(), op }
    }
}

/// Worst-case health figures over every recorded state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub max_trace_error: f64,
    pub max_hermiticity_error: f64,
    /// `+∞` when positivity was not monitored.
    pub min_eigenvalue: f64,
    pub steps: u64,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Self { max_trace_error: 0.0, max_hermiticity_error: 0.0, min_eigenvalue: f64::INFINITY, steps: 0 }
    }
}

impl Diagnostics {
    pub fn merge(&mut self, other: &Diagnostics) {
        self.max_trace_error = self.max_trace_error.max(other.max_trace_error);
        self.max_hermiticity_error = self.max_hermiticity_error.max(other.max_hermiticity_error);
        self.min_eigenvalue = self.min_eigenvalue.min(other.min_eigenvalue);
        self.steps += other.steps;
    }

    fn observe(&mut self, rho: &DMatrix<C64>, positivity: bool) {
        self.max_trace_error = self.max_trace_error.max((rho.trace() - C64::new(1.0, 0.0)).norm());
        self.max_hermiticity_error = self.max_hermiticity_error.max(hermiticity_error(rho));
        if positivity {
            let ev = rho.clone().symmetric_eigenvalues();
            self.min_eigenvalue = self.min_eigenvalue.min(ev.min());
        }
    }
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub observables: BTreeMap<String, Vec<C64>>,
    pub snapshots: Vec<DensityMatrix>,
    pub diagnostics: Diagnostics,
}

impl Trajectory {
    pub fn series(&self, name: &str) -> Option<&[C64]> {
        self.observables.get(name).map(|v| v.as_slice())
    }

    pub fn real_series(&self, name: &str) -> Option<Vec<f64>> {
        self.series(name).map(|v| v.iter().map(|z| z.re).collect())
    }

    pub fn final_state(&self) -> Option<&DensityMatrix> {
        self.snapshots.last()
    }
}

fn hermiticity_error(m: &DMatrix<C64>) -> f64 {
    let n = m.nrows();
    let mut e: f64 = 0.0;
    for j in 0..n {
        for i in 0..j {
            e = e.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
        e = e.max(m[(j, j)].im.abs());
    }
    e
}

fn symmetrize(m: &mut DMatrix<C64>) {
    let n = m.nrows();
    let s = m.as_mut_slice();
    for j in 0..n {
        for i in 0..j {
            let a = s[j * n + i];
            let b = s[i * n + j];
            let avg = (a + b.conj()) * 0.5;
            s[j * n + i] = avg;
            s[i * n + j] = avg.conj();
        }
        s[j * n + j].im = 0.0;
    }
}

fn check_grid(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("empty time grid".into()));
    }
    if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("time grid must be finite and strictly increasing".into()));
    }
    Ok(())
}

/// `y ← a + h·b` elementwise.
fn axpy_into(y: &mut DMatrix<C64>, a: &DMatrix<C64>, h: f64, b: &DMatrix<C64>) {
    for ((yi, ai), bi) in y.as_mut_slice().iter_mut().zip(a.as_slice()).zip(b.as_slice()) {
        *yi = ai + bi * h;
    }
}

fn all_finite(m: &DMatrix<C64>) -> bool {
    m.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

struct Stepper<'a> {
    l: &'a Liouvillian,
    ws: Workspace,
    k: Vec<DMatrix<C64>>,
    tmp: DMatrix<C64>,
    steps: u64,
    max_steps: u64,
}

impl<'a> Stepper<'a> {
    fn new(l: &'a Liouvillian, stages: usize, max_steps: u64) -> Self {
        let n = l.dim();
        Self {
            l,
            ws: Workspace::new(n),
            k: (0..stages).map(|_| DMatrix::zeros(n, n)).collect(),
            tmp: DMatrix::zeros(n, n),
            steps: 0,
            max_steps,
        }
    }

    fn tick(&mut self, t: f64) -> Result<()> {
        self.steps += 1;
        if self.steps > self.max_steps {
            return Err(Error::NumericalFailure { t, what: format!("step budget {} exhausted", self.max_steps) });
        }
        Ok(())
    }

    fn rk4(&mut self, rho: &mut DMatrix<C64>, t: f64, h: f64) -> Result<()> {
        self.tick(t)?;
        let [k1, k2, k3, k4] = &mut self.k[..] else { unreachable!() };
        self.l.apply_into(rho, t, &mut self.ws, k1);
        axpy_into(&mut self.tmp, rho, 0.5 * h, k1);
        self.l.apply_into(&self.tmp, t + 0.5 * h, &mut self.ws, k2);
        axpy_into(&mut self.tmp, rho, 0.5 * h, k2);
        self.l.apply_into(&self.tmp, t + 0.5 * h, &mut self.ws, k3);
        axpy_into(&mut self.tmp, rho, h, k3);
        self.l.apply_into(&self.tmp, t + h, &mut self.ws, k4);
        let w = h / 6.0;
        for (i, r) in rho.as_mut_slice().iter_mut().enumerate() {
            *r += (k1.as_slice()[i] + (k2.as_slice()[i] + k3.as_slice()[i]) * 2.0 + k4.as_slice()[i]) * w;
        }
        symmetrize(rho);
        let tr = rho.trace();
        if !(tr.re.is_finite() && tr.im.is_finite()) {
            return Err(Error::NumericalFailure { t: t + h, what: "non-finite trace".into() });
        }
        Ok(())
    }

    /// One Dormand–Prince attempt. Returns the scaled error norm; on
    /// acceptance (`≤ 1`) `rho` holds the fifth-order solution.
    fn dopri(&mut self, rho: &mut DMatrix<C64>, t: f64, h: f64, rtol: f64, atol: f64, fsal: bool) -> Result<f64> {
        const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const E: [f64; 7] = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        self.tick(t)?;
        if !fsal {
            let (k0, _) = self.k.split_at_mut(1);
            self.l.apply_into(rho, t, &mut self.ws, &mut k0[0]);
        }
        for s in 1..7 {
            {
                let tmp = self.tmp.as_mut_slice();
                tmp.copy_from_slice(rho.as_slice());
                for (j, a) in A[s].iter().enumerate().take(s) {
                    if *a != 0.0 {
                        let kj = self.k[j].as_slice();
                        let ha = h * a;
                        for (x, kv) in tmp.iter_mut().zip(kj) {
                            *x += kv * ha;
                        }
                    }
                }
            }
            let (_, rest) = self.k.split_at_mut(s);
            self.l.apply_into(&self.tmp, t + C[s] * h, &mut self.ws, &mut rest[0]);
        }
        // tmp now holds the 5th-order solution (stage 7 input equals it).
        let mut err: f64 = 0.0;
        for (i, (y0, y1)) in rho.as_slice().iter().zip(self.tmp.as_slice()).enumerate() {
            let mut e = C64::new(0.0, 0.0);
            for (s, w) in E.iter().enumerate() {
                if *w != 0.0 {
                    e += self.k[s].as_slice()[i] * w;
                }
            }
            let scale = atol + rtol * y0.norm().max(y1.norm());
            err = err.max((e * h).norm() / scale);
        }
        if !err.is_finite() {
            return Err(Error::NumericalFailure { t, what: "non-finite error estimate".into() });
        }
        if err <= 1.0 {
            rho.copy_from(&self.tmp);
            symmetrize(rho);
            self.k.swap(0, 6);
        }
        Ok(err)
    }
}

/// Integrates `me` from `rho0` at `times[0]`, calling `record(t, ρ)` at every grid time.
pub fn evolve_with<F>(
    me: &MasterEquation,
    rho0: &DensityMatrix,
    times: &[f64],
    config: &IntegratorConfig,
    mut record: F,
) -> Result<Diagnostics>
where
    F: FnMut(f64, &DMatrix<C64>) -> Result<()>,
{
    if rho0.space() != me.space() {
        return Err(Error::SpaceMismatch);
    }
    check_grid(times)?;
    let l = me.liouvillian();
    let mut rho = rho0.matrix().clone();
    let mut diag = Diagnostics::default();
    diag.observe(&rho, config.monitor_positivity);
    record(times[0], &rho)?;
    match config.method {
        Method::Rk4 { dt } => {
            let dt = dt.unwrap_or_else(|| default_dt(me));
            if !(dt > 0.0) || !dt.is_finite() {
                return Err(Error::InvalidParameter(format!("step size {dt} must be positive")));
            }
            let mut st = Stepper::new(&l, 4, config.max_steps);
            for w in times.windows(2) {
                let span = w[1] - w[0];
                let n = (span / dt).ceil().max(1.0) as u64;
                let h = span / n as f64;
                for i in 0..n {
                    st.rk4(&mut rho, w[0] + i as f64 * h, h)?;
                }
                finish_point(&rho, w[1], config, &mut diag, &mut record)?;
            }
            diag.steps = st.steps;
        }
        Method::Rk45 { rtol, atol } => {
            if !(rtol > 0.0 && atol > 0.0) {
                return Err(Error::InvalidParameter("rk45 tolerances must be positive".into()));
            }
            let mut st = Stepper::new(&l, 7, config.max_steps);
            let mut h = default_dt(me) * 5.0;
            let mut t = times[0];
            let mut fsal = false;
            for &target in &times[1..] {
                while t < target {
                    let remaining = target - t;
                    let last = h >= remaining;
                    let step = if last { remaining } else { h };
                    if step < 1e-14 * t.abs().max(1.0) {
                        return Err(Error::StepUnderflow(t));
                    }
                    let err = st.dopri(&mut rho, t, step, rtol, atol, fsal)?;
                    let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                    fsal = true;
                    if err <= 1.0 {
                        t = if last { target } else { t + step };
                        if !last || factor < 1.0 {
                            h = step * factor;
                        }
                    } else {
                        h = step * factor.min(1.0);
                    }
                }
                finish_point(&rho, target, config, &mut diag, &mut record)?;
            }
            diag.steps = st.steps;
        }
    }
    Ok(diag)
}

fn finish_point<F>(rho: &DMatrix<C64>, t: f64, config: &IntegratorConfig, diag: &mut Diagnostics, record: &mut F) -> Result<()>
where
    F: FnMut(f64, &DMatrix<C64>) -> Result<()>,
{
    if !all_finite(rho) {
        return Err(Error::NumericalFailure { t, what: "non-finite density matrix".into() });
    }
    diag.observe(rho, config.monitor_positivity);
    record(t, rho)
}

/// Integrates and records `Tr[O ρ(t)]` for every observable.
pub fn evolve(
    me: &MasterEquation,
    rho0: &DensityMatrix,
    times: &[f64],
    config: &IntegratorConfig,
    observables: &[Observable],
) -> Result<Trajectory> {
    for o in observables {
        if o.op.space() != me.space() {
            return Err(Error::SpaceMismatch);
        }
    }
    let mut series: Vec<Vec<C64>> = vec![Vec::with_capacity(times.len()); observables.len()];
    let mut snapshots = Vec::new();
    let space = me.space().clone();
    let diagnostics = evolve_with(me, rho0, times, config, |_, rho| {
        let state = DensityMatrix::new_unchecked(&space, rho.clone())?;
        for (o, s) in observables.iter().zip(series.iter_mut()) {
            s.push(expectation(&state, &o.op)?);
        }
        if config.record_snapshots {
            snapshots.push(state);
        }
        Ok(())
    })?;
    let observables = observables.iter().map(|o| o.name.clone()).zip(series).collect();
    Ok(Trajectory { times: times.to_vec(), observables, snapshots, diagnostics })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SteadyStateConfig {
    pub integrator: IntegratorConfig,
    /// Interval between convergence checks; defaults to `1 / slowest rate`.
    pub check_interval: Option<f64>,
    pub max_time: Option<f64>,
    pub change_tol: f64,
    pub residual_tol: f64,
}

impl Default for SteadyStateConfig {
    fn default() -> Self {
        Self {
            integrator: IntegratorConfig::default().without_positivity(),
            check_interval: None,
            max_time: None,
            change_tol: 1e-10,
            residual_tol: 1e-9,
        }
    }
}

/// Relaxes `rho0` under `me` by long-time integration until the state stops
/// changing. The result depends on `rho0` whenever the stationary set is degenerate.
pub fn steady_state(me: &MasterEquation, rho0: &DensityMatrix, config: &SteadyStateConfig) -> Result<DensityMatrix> {
    let rate = me
        .slowest_rate()
        .ok_or_else(|| Error::InvalidParameter("steady state needs at least one collapse term".into()))?;
    let interval = config.check_interval.unwrap_or(1.0 / rate);
    let max_time = config.max_time.unwrap_or(2000.0 / rate);
    let l = me.liouvillian();
    let mut ws = Workspace::new(me.space().dim());
    let mut drho = DMatrix::zeros(me.space().dim(), me.space().dim());
    let mut t = 0.0;
    let mut current = rho0.clone();
    while t < max_time {
        let times = [t, t + interval];
        let mut next = None;
        evolve_with(me, &current, &times, &config.integrator, |tt, rho| {
            if tt > t {
                next = Some(rho.clone());
            }
            Ok(())
        })?;
        let next = next.expect("grid has two points");
        let change = crate::hilbert::max_abs(&(&next - current.matrix()));
        t += interval;
        current = DensityMatrix::new_unchecked(me.space(), next)?;
        if change < config.change_tol {
            l.apply_into(current.matrix(), t, &mut ws, &mut drho);
            if crate::hilbert::max_abs(&drho) <= config.residual_tol {
                return Ok(current);
            }
        }
    }
    Err(Error::NotConverged(max_time))
}
