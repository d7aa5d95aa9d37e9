//! Reduced descriptions of the ensemble dynamics: pump-mode elimination, the
//! generic effective-operator reduction for a decaying excited manifold, and
//! experiments comparing the model tiers on a shared time grid.

use std::collections::BTreeMap;

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::dynamics::{evolve_with, fidelity, partial_trace, CollapseTerm, Diagnostics, IntegratorConfig, MasterEquation};
use crate::error::{Error, Result};
use crate::hilbert::{coherent_state, number, DensityMatrix, HilbertSpace, Operator, StateVector};
use crate::manifold::coherent_coeffs;
use crate::model::{build, derive, ModelParams, ModelTier, ENSEMBLE, PUMP};

/// Below this `κ_p/χ` the pump cannot be eliminated.
pub const KAPPA_P_MIN_RATIO: f64 = 3.0;
/// Below this `κ_p/χ` elimination is allowed but flagged.
pub const KAPPA_P_WARN_RATIO: f64 = 5.0;
/// Above this `Ω_d/κ₂ₐₜ` the weak-drive reduction is flagged.
pub const WEAK_DRIVE_RATIO: f64 = 0.3;

/// Adiabatic equation obtained from a pump + ensemble equation.
#[derive(Clone, Debug)]
pub struct PumpElimination {
    pub me: MasterEquation,
    pub chi: f64,
    pub kappa_p: f64,
    pub kappa_2at: f64,
    /// Largest `⟨a_p†a_p⟩` seen while probing the source equation.
    pub max_pump_population: f64,
}

/// Replaces the damped pump mode by two-excitation decay of the ensemble at
/// `4χ²/κ_p`. The source must act on a pump and an ensemble mode only, with a
/// single pair-exchange Hamiltonian and pump loss.
pub fn eliminate_pump(me: &MasterEquation) -> Result<PumpElimination> {
    let sp = me.space();
    if sp.modes().len() != 2 || !sp.has_mode(PUMP) || !sp.has_mode(ENSEMBLE) {
        return Err(Error::InvalidParameter("pump elimination needs a pump + ensemble equation".into()));
    }
    let (dim_p, dim_b) = (sp.mode_dim(PUMP)?, sp.mode_dim(ENSEMBLE)?);
    if dim_p < 2 || dim_b < 3 {
        return Err(Error::InvalidParameter("pump elimination needs dim_p >= 2 and dim_b >= 3".into()));
    }
    let occ = |p: usize, b: usize| {
        let mut o = vec![0; 2];
        o[sp.mode_position(PUMP).unwrap()] = p;
        o[sp.mode_position(ENSEMBLE).unwrap()] = b;
        sp.index_of(&o)
    };
    let h = me.hamiltonian_at(0.0)?;
    let chi = h.get(occ(0, 2), occ(1, 0)).norm() / 2f64.sqrt();

    let ap = crate::hilbert::annihilation(sp, PUMP)?;
    let mut kappa_p = 0.0;
    for c in me.c_terms() {
        if c.op.max_diff(&ap)? < 1e-12 {
            kappa_p += c.rate;
        }
    }
    if kappa_p == 0.0 {
        return Err(Error::InvalidParameter("kappa_p = 0: pump is not damped".into()));
    }
    if kappa_p < KAPPA_P_MIN_RATIO * chi {
        return Err(Error::InvalidParameter(format!(
            "kappa_p = {:.3} chi is below the elimination limit {KAPPA_P_MIN_RATIO} chi",
            kappa_p / chi
        )));
    }
    if kappa_p < KAPPA_P_WARN_RATIO * chi {
        warn!("kappa_p = {:.3} chi: pump elimination is marginal", kappa_p / chi);
    }
    let kappa_2at = 4.0 * chi * chi / kappa_p;

    let b_space = HilbertSpace::new(&[(ENSEMBLE, dim_b)])?;
    let s = crate::hilbert::annihilation(&b_space, ENSEMBLE)?;
    let adiabatic = MasterEquation::new(&b_space, vec![], vec![CollapseTerm { rate: kappa_2at, op: s.powi(2)? }])?;

    let mut fock = vec![0; 2];
    fock[sp.mode_position(ENSEMBLE)?] = 3.min(dim_b - 1);
    let rho0 = DensityMatrix::fock(sp, &fock)?;
    let t_probe = 20.0 / kappa_p;
    let times: Vec<f64> = (0..=400).map(|i| t_probe * i as f64 / 400.0).collect();
    let np = number(sp, PUMP)?.to_dense();
    let mut max_pump_population: f64 = 0.0;
    evolve_with(me, &rho0, &times, &IntegratorConfig::default(), |_, rho| {
        max_pump_population = max_pump_population.max((&np * rho).trace().re);
        Ok(())
    })?;
    Ok(PumpElimination { me: adiabatic, chi, kappa_p, kappa_2at, max_pump_population })
}

/// Ground-manifold description produced by [`effective_operator_reduction`].
#[derive(Clone, Debug)]
pub struct EffectiveReduction {
    pub h_eff: Operator,
    /// Effective jump operators, scaled so the largest entry has modulus one.
    pub lindblad: Vec<CollapseTerm>,
}

/// Second-order elimination of a decaying excited manifold.
///
/// `h_nh` is the non-Hermitian excited-state Hamiltonian, `v` the perturbation
/// taking ground states to excited states, `ground` a diagonal 0/1 projector
/// and `jumps` the decay channels of the excited manifold. The ground block of
/// `h_nh` passes through into `h_eff`.
pub fn effective_operator_reduction(
    h_nh: &Operator,
    v: &Operator,
    ground: &Operator,
    jumps: &[CollapseTerm],
) -> Result<EffectiveReduction> {
    let sp = h_nh.space();
    if v.space() != sp || ground.space() != sp || jumps.iter().any(|c| c.op.space() != sp) {
        return Err(Error::SpaceMismatch);
    }
    let n = sp.dim();
    let pg = ground.to_dense();
    let mut is_ground = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            let x = pg[(i, j)];
            let want = if i == j { x.re.round() } else { 0.0 };
            if (x - C64::new(want, 0.0)).norm() > 1e-12 || !(want == 0.0 || want == 1.0) {
                return Err(Error::InvalidParameter("ground projector must be diagonal with 0/1 entries".into()));
            }
        }
        is_ground[i] = pg[(i, i)].re > 0.5;
    }
    let excited: Vec<usize> = (0..n).filter(|&i| !is_ground[i]).collect();
    let h = h_nh.to_dense();
    let m = excited.len();
    let block = DMatrix::from_fn(m, m, |a, b| h[(excited[a], excited[b])]);
    let scale = block.iter().map(|x| x.norm()).fold(0.0, f64::max);
    let inv_block = if m == 0 {
        DMatrix::zeros(0, 0)
    } else {
        let lu = block.clone().lu();
        let inv = lu.try_inverse().ok_or(Error::Singular)?;
        let growth = inv.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if scale == 0.0 || !growth.is_finite() || growth * scale > 1e14 {
            return Err(Error::Singular);
        }
        inv
    };
    let mut inv = DMatrix::<C64>::zeros(n, n);
    for a in 0..m {
        for b in 0..m {
            inv[(excited[a], excited[b])] = inv_block[(a, b)];
        }
    }
    let vd = v.to_dense();
    let v_up = &vd * &pg;
    let v_down = v_up.adjoint();
    let sym = &inv + inv.adjoint();
    let mut h_eff = (&v_down * sym * &v_up) * C64::new(-0.5, 0.0);
    h_eff += &pg * &h * &pg;
    let mut lindblad = Vec::new();
    for c in jumps {
        let l = c.op.to_dense() * &inv * &v_up;
        let amp = l.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if amp > 1e-300 && c.rate > 0.0 {
            let op = Operator::from_dense(sp, l / C64::new(amp, 0.0))?;
            lindblad.push(CollapseTerm { rate: c.rate * amp * amp, op });
        }
    }
    Ok(EffectiveReduction { h_eff: Operator::from_dense(sp, h_eff)?, lindblad })
}

/// `⟨n|ρ|n⟩`.
pub fn population(rho: &DensityMatrix, n: usize) -> Result<f64> {
    if n >= rho.dim() {
        return Err(Error::IndexOutOfRange { index: n, dim: rho.dim() });
    }
    Ok(rho.get(n, n).re)
}

/// Removes the rotation `e^{i rate (m−n) t}` from the coherences of `m`.
pub fn align_frame(m: &mut DMatrix<C64>, rate: f64, t: f64) {
    if rate == 0.0 {
        return;
    }
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= C64::from_polar(1.0, -rate * (i as f64 - j as f64) * t);
        }
    }
}

/// Ensemble observables of one tier on the shared grid.
#[derive(Clone, Debug, Default)]
pub struct TierSeries {
    /// Fidelity to the ideal stationary state; empty when no target applies.
    pub fidelity: Vec<f64>,
    pub eta: Vec<f64>,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    /// `⟨exp(iπ s†s)⟩` of the ensemble.
    pub parity: Vec<f64>,
    /// Trace of the reduced ensemble state.
    pub trace: Vec<f64>,
    /// `ρ₀₁` of the reduced state after frame alignment.
    pub coherence: Vec<C64>,
    pub diagnostics: Diagnostics,
}

#[derive(Clone, Debug)]
pub struct TierComparison {
    /// Times in units of `1/ω_q`.
    pub times: Vec<f64>,
    pub params: ModelParams,
    pub series: BTreeMap<ModelTier, TierSeries>,
}

impl TierComparison {
    pub fn tiers(&self) -> Vec<ModelTier> {
        self.series.keys().copied().collect()
    }

    pub fn get(&self, tier: ModelTier) -> Option<&TierSeries> {
        self.series.get(&tier)
    }
}

/// Rotation rate of ensemble coherences in a tier's frame relative to the
/// frame of the reduced tiers.
pub fn frame_rate(params: &ModelParams, tier: ModelTier) -> Result<f64> {
    Ok(match tier {
        ModelTier::Full => derive(params)?.delta_q_shift,
        _ => 0.0,
    })
}

fn initial_state(params: &ModelParams, tier: ModelTier, alpha: C64) -> Result<DensityMatrix> {
    let sp = tier.space(&params.truncations)?;
    let label = tier.ensemble_label();
    let local_space = HilbertSpace::new(&[(label, sp.mode_dim(label)?)])?;
    let local = coherent_state(&local_space, label, alpha)?;
    let factors: Vec<_> = sp
        .modes()
        .iter()
        .map(|m| {
            if m.label == label {
                local.amplitudes().clone()
            } else {
                StateVector::fock(&HilbertSpace::new(&[(m.label.as_str(), m.dim)]).unwrap(), &[0]).unwrap().amplitudes().clone()
            }
        })
        .collect();
    Ok(StateVector::product(&sp, &factors)?.to_density())
}

fn run_tier(
    params: &ModelParams,
    tier: ModelTier,
    driven: bool,
    alpha: C64,
    times: &[f64],
    target: Option<&DensityMatrix>,
    config: &IntegratorConfig,
) -> Result<TierSeries> {
    let me = build(params, tier, driven)?;
    let rho0 = initial_state(params, tier, alpha)?;
    let label = tier.ensemble_label();
    let reduce = me.space().modes().len() > 1;
    let rate = frame_rate(params, tier)?;
    let mut out = TierSeries::default();
    let diagnostics = evolve_with(&me, &rho0, times, config, |t, rho| {
        let full = DensityMatrix::new_unchecked(me.space(), rho.clone())?;
        let reduced = if reduce { partial_trace(&full, &[label])? } else { full };
        let mut m = reduced.into_matrix();
        align_frame(&mut m, rate, t);
        let n = m.nrows();
        out.p0.push(m[(0, 0)].re);
        out.p1.push(if n > 1 { m[(1, 1)].re } else { 0.0 });
        out.parity.push((0..n).map(|k| if k % 2 == 0 { m[(k, k)].re } else { -m[(k, k)].re }).sum());
        out.trace.push(m.trace().re);
        out.coherence.push(if n > 1 { m[(0, 1)] } else { C64::new(0.0, 0.0) });
        if let Some(target) = target {
            let sp = target.space().clone();
            let f = fidelity(&DensityMatrix::new_unchecked(&sp, m)?, target)?;
            out.fidelity.push(f);
            out.eta.push(1.0 - f);
        }
        Ok(())
    })?;
    out.diagnostics = diagnostics;
    Ok(out)
}

fn run_tiers(
    params: &ModelParams,
    tiers: &[ModelTier],
    driven: bool,
    alpha: C64,
    times: Vec<f64>,
    target: Option<&DensityMatrix>,
    config: &IntegratorConfig,
) -> Result<TierComparison> {
    let mut unique = tiers.to_vec();
    unique.sort();
    unique.dedup();
    let results: Vec<(ModelTier, TierSeries)> = unique
        .par_iter()
        .map(|&tier| run_tier(params, tier, driven, alpha, &times, target, config).map(|s| (tier, s)))
        .collect::<Result<_>>()?;
    Ok(TierComparison { times, params: params.clone(), series: results.into_iter().collect() })
}

fn grid(t_end: f64, points: usize) -> Result<Vec<f64>> {
    if !(t_end > 0.0) || !t_end.is_finite() || points < 2 {
        return Err(Error::InvalidParameter("time grid needs t_end > 0 and at least 2 points".into()));
    }
    Ok((0..points).map(|i| t_end * i as f64 / (points - 1) as f64).collect())
}

/// Relaxation of an ensemble coherent state `alpha` with pump and signal in
/// vacuum, tracked as the error `η = 1 − F` against the ideal stationary state.
pub fn stabilization_experiment(
    params: &ModelParams,
    alpha: C64,
    tiers: &[ModelTier],
    t_end_chi: f64,
    points: usize,
    config: &IntegratorConfig,
) -> Result<TierComparison> {
    if tiers.contains(&ModelTier::Qubit) {
        return Err(Error::InvalidParameter("the qubit tier has no coherent-state relaxation".into()));
    }
    let d = derive(params)?;
    if d.chi == 0.0 {
        return Err(Error::InvalidParameter("chi = 0: no two-excitation decay".into()));
    }
    let dim_b = params.truncations.dim_b;
    let target = coherent_coeffs(alpha).state(dim_b)?;
    // fails early on an undersized ensemble mode
    coherent_state(&HilbertSpace::new(&[(ENSEMBLE, dim_b)])?, ENSEMBLE, alpha)?;
    let times = grid(t_end_chi / d.chi, points)?;
    run_tiers(params, tiers, false, alpha, times, Some(&target), config)
}

/// Driven evolution from the ensemble ground state.
pub fn rabi_experiment(
    params: &ModelParams,
    tiers: &[ModelTier],
    t_end_k2at: f64,
    points: usize,
    config: &IntegratorConfig,
) -> Result<TierComparison> {
    let d = derive(params)?;
    if d.kappa_2at == 0.0 {
        return Err(Error::InvalidParameter("kappa_2at = 0: no two-excitation decay".into()));
    }
    if d.drive_amplitude > WEAK_DRIVE_RATIO * d.kappa_2at {
        warn!("Omega_d = {:.3} kappa_2at is outside the weak-drive regime", d.drive_amplitude / d.kappa_2at);
    }
    let times = grid(t_end_k2at / d.kappa_2at, points)?;
    run_tiers(params, tiers, true, C64::new(0.0, 0.0), times, None, config)
}

/// Frequency and decay extracted from a damped Rabi signal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RabiFit {
    /// Angular oscillation frequency.
    pub frequency: f64,
    /// Decay rate of the envelope of the maxima.
    pub envelope_rate: f64,
    /// Lowering-operator decay rate, `4/3` of the envelope rate.
    pub gamma: f64,
    /// Asymptote of the envelope.
    pub offset: f64,
    pub maxima: usize,
}

fn local_maxima(times: &[f64], y: &[f64]) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for i in 1..y.len().saturating_sub(1) {
        if y[i] > y[i - 1] && y[i] >= y[i + 1] {
            let (a, b, c) = (y[i - 1], y[i], y[i + 1]);
            let denom = a - 2.0 * b + c;
            let h = times[i + 1] - times[i];
            let shift = if denom != 0.0 { 0.5 * (a - c) / denom } else { 0.0 };
            out.push((times[i] + shift * h, b - 0.25 * (a - c) * shift));
        }
    }
    out
}

fn envelope_residual(pts: &[(f64, f64)], lambda: f64) -> (f64, f64, f64) {
    // linear least squares for A e^{−λt} + c
    let n = pts.len() as f64;
    let (mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0);
    for &(t, y) in pts {
        let e = (-lambda * t).exp();
        se += e;
        see += e * e;
        sy += y;
        sey += e * y;
    }
    let det = n * see - se * se;
    let a = (n * sey - se * sy) / det;
    let c = (see * sy - se * sey) / det;
    let r = pts.iter().map(|&(t, y)| (a * (-lambda * t).exp() + c - y).powi(2)).sum();
    (r, a, c)
}

/// Fits the maxima of `p1` to `A e^{−λt} + c`. For a two-level system damped
/// at `γ` the oscillations decay at `3γ/4`, so `γ = 4λ/3`.
pub fn fit_rabi(times: &[f64], p1: &[f64]) -> Result<RabiFit> {
    if times.len() != p1.len() {
        return Err(Error::InvalidParameter("series length mismatch".into()));
    }
    let pts = local_maxima(times, p1);
    if pts.len() < 3 {
        return Err(Error::InvalidParameter(format!("{} maxima found, at least 3 needed for a fit", pts.len())));
    }
    let span = pts.last().unwrap().0 - pts[0].0;
    let frequency = 2.0 * std::f64::consts::PI * (pts.len() - 1) as f64 / span;
    let (mut lo, mut hi) = ((1e-4 / span).ln(), (50.0 / span).ln());
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |u: f64| envelope_residual(&pts, u.exp()).0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-12 {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    let lambda = (0.5 * (lo + hi)).exp();
    let (_, _, offset) = envelope_residual(&pts, lambda);
    Ok(RabiFit { frequency, envelope_rate: lambda, gamma: 4.0 * lambda / 3.0, offset, maxima: pts.len() })
}

/// Tier used for the reported Rabi fit: the most microscopic one present
/// other than the qubit tier, which is the reference.
pub fn rabi_fit_tier(comparison: &TierComparison) -> Option<ModelTier> {
    [ModelTier::Adiabatic, ModelTier::TimeAveraged, ModelTier::Full, ModelTier::Qubit]
        .into_iter()
        .find(|t| comparison.series.contains_key(t))
}

/// Eliminates level `|2⟩` of the driven adiabatic tier, leaving the
/// effective decay of the `{|0⟩, |1⟩}` qubit.
pub fn adiabatic_drive_reduction(params: &ModelParams) -> Result<EffectiveReduction> {
    let d = derive(params)?;
    let sp = HilbertSpace::new(&[(ENSEMBLE, 3)])?;
    let s = crate::hilbert::annihilation(&sp, ENSEMBLE)?;
    let jumps = [CollapseTerm { rate: d.kappa_2at, op: s.powi(2)? }];
    let h_nh = Operator::outer_basis(&sp, 2, 2)?.scale(C64::new(0.0, -d.kappa_2at));
    let v = Operator::outer_basis(&sp, 2, 1)?.scale(C64::from_polar(2f64.sqrt() * d.drive_amplitude, params.theta_d));
    let ground = Operator::outer_basis(&sp, 0, 0)?.add(&Operator::outer_basis(&sp, 1, 1)?)?;
    effective_operator_reduction(&h_nh, &v, &ground, &jumps)
}
