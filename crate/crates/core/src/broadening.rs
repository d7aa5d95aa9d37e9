//! Inhomogeneously broadened ensemble: `N` atoms as hard-core bosonic modes
//! with random detunings, two-excitation decay of the collective mode, and the
//! energy gap of the collective mode that protects its coherence.

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dynamics::{evolve_with, CollapseTerm, Diagnostics, HamiltonianTerm, IntegratorConfig, MasterEquation};
use crate::error::{Error, Result};
use crate::hilbert::{annihilation, number, HilbertSpace, Operator, StateVector};
use crate::model::{derive, ModelParams};

/// Largest many-atom space that will be built.
pub const SPACE_BUDGET: usize = 4096;
/// Above this `|α|/√N` the product state is a poor spin coherent state.
pub const PRODUCT_AMPLITUDE_LIMIT: f64 = 0.5;
pub const MIN_PHASE_POINTS: usize = 20;

fn atom_label(j: usize) -> String {
    format!("b{j}")
}

/// `n` Gaussian detunings shifted to zero mean and scaled to root-mean-square
/// `delta_inh`.
pub fn sample_detunings(n: usize, delta_inh: f64, seed: u64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::InvalidParameter("at least 2 atoms are needed".into()));
    }
    if !(delta_inh >= 0.0) || !delta_inh.is_finite() {
        return Err(Error::InvalidParameter(format!("delta_inh = {delta_inh} must be finite and >= 0")));
    }
    if delta_inh == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    x.iter_mut().for_each(|v| *v -= mean);
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    Ok(x.into_iter().map(|v| v * delta_inh / rms).collect())
}

/// Space of `n` atoms truncated to `atom_dim` levels each.
pub fn atom_space(n: usize, atom_dim: usize) -> Result<HilbertSpace> {
    let dim = (atom_dim as f64).powi(n as i32);
    if dim > SPACE_BUDGET as f64 {
        return Err(Error::SpaceTooLarge { dim: dim.min(usize::MAX as f64) as usize, budget: SPACE_BUDGET });
    }
    let specs: Vec<(String, usize)> = (0..n).map(|j| (atom_label(j), atom_dim)).collect();
    HilbertSpace::new(&specs)
}

/// Collective lowering operator `(1/√N) Σ b_j`.
pub fn collective_mode(space: &HilbertSpace) -> Result<Operator> {
    let n = space.modes().len();
    let mut s = Operator::zeros(space);
    for m in space.modes() {
        s = s.add(&annihilation(space, &m.label)?)?;
    }
    Ok(s.scale_re(1.0 / (n as f64).sqrt()))
}

/// How the energy gap of the collective mode enters the equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protection {
    None,
    /// Disorder written in the frame rotating at `δ_q s†s`: with
    /// `b_j = s/√N + r_j`, the `s ↔ r_j` exchange rotates at `δ_q`.
    RotatingFrame,
    /// Static `δ_q s†s`. For hard-core atoms its levels `n(N−n+1)/N` are
    /// not equally spaced.
    StaticShift,
}

/// Broadened two-excitation-decay equation with `atom_dim` levels per atom.
pub fn build_broadened_me_with(params: &ModelParams, deltas: &[f64], protection: Protection, atom_dim: usize) -> Result<MasterEquation> {
    let d = derive(params)?;
    let sp = atom_space(deltas.len(), atom_dim)?;
    let n = deltas.len() as f64;
    let s = collective_mode(&sp)?;
    let mut h_terms = Vec::new();
    match protection {
        Protection::None | Protection::StaticShift => {
            let mut h = Operator::zeros(&sp);
            for (j, &dj) in deltas.iter().enumerate() {
                if dj != 0.0 {
                    h = h.add(&number(&sp, &atom_label(j))?.scale_re(dj))?;
                }
            }
            if protection == Protection::StaticShift {
                h = h.add(&s.dagger().mul(&s)?.scale_re(d.delta_q_shift))?;
            }
            h_terms.push(HamiltonianTerm::constant(h));
        }
        Protection::RotatingFrame => {
            let mean = deltas.iter().sum::<f64>() / n;
            let s_part = s.scale_re(1.0 / n.sqrt());
            let mut exchange = Operator::zeros(&sp);
            let mut inner = s.dagger().mul(&s)?.scale_re(mean);
            for (j, &dj) in deltas.iter().enumerate() {
                if dj != 0.0 {
                    let r = annihilation(&sp, &atom_label(j))?.sub(&s_part)?;
                    exchange = exchange.add(&r.scale_re(dj))?;
                    inner = inner.add(&r.dagger().mul(&r)?.scale_re(dj))?;
                }
            }
            let a = s.dagger().mul(&exchange)?.scale_re(1.0 / n.sqrt());
            h_terms.push(HamiltonianTerm::constant(inner));
            h_terms.push(HamiltonianTerm::rotating(a.dagger(), -d.delta_q_shift));
            h_terms.push(HamiltonianTerm::rotating(a, d.delta_q_shift));
        }
    }
    MasterEquation::new(&sp, h_terms, vec![CollapseTerm { rate: d.kappa_2at, op: s.powi(2)? }])
}

/// Two-level atoms; `protected` selects [`Protection::RotatingFrame`].
pub fn build_broadened_me(params: &ModelParams, deltas: &[f64], protected: bool) -> Result<MasterEquation> {
    let protection = if protected { Protection::RotatingFrame } else { Protection::None };
    build_broadened_me_with(params, deltas, protection, 2)
}

/// Collective mode, first subradiant mode and their coupling.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition {
    pub s_vector: Vec<f64>,
    pub d_vector: Vec<f64>,
    /// `⟨s|Σ δ_j b_j†b_j|d⟩`, equal to the rms detuning for centered deltas.
    pub coupling: f64,
}

pub fn superradiant_decomposition(deltas: &[f64]) -> Result<Decomposition> {
    let n = deltas.len();
    if n == 0 || deltas.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidParameter("detunings are all zero".into()));
    }
    let rms = (deltas.iter().map(|x| x * x).sum::<f64>() / n as f64).sqrt();
    let sn = (n as f64).sqrt();
    let s_vector = vec![1.0 / sn; n];
    let d_vector: Vec<f64> = deltas.iter().map(|x| x / (sn * rms)).collect();
    let coupling = (0..n).map(|j| s_vector[j] * deltas[j] * d_vector[j]).sum();
    Ok(Decomposition { s_vector, d_vector, coupling })
}

/// Coherence of the collective qubit `⟨σ₋⟩ = ⟨1_s|ρ|vac⟩` over time.
#[derive(Clone, Debug)]
pub struct BroadeningRun {
    pub deltas: Vec<f64>,
    pub seed: Option<u64>,
    pub protected: bool,
    /// Times in units of `1/ω_q`.
    pub times: Vec<f64>,
    pub coherence: Vec<C64>,
    pub modulus: Vec<f64>,
    /// Unwrapped, radians.
    pub phase: Vec<f64>,
    /// `δ_q` of the run, the unit of the phase slope.
    pub delta_q_shift: f64,
    pub diagnostics: Diagnostics,
}

/// Adds multiples of 2π so consecutive samples differ by at most π.
pub fn unwrap_phase(raw: &[f64]) -> Vec<f64> {
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = Vec::with_capacity(raw.len());
    let mut offset = 0.0;
    for (i, &p) in raw.iter().enumerate() {
        if i > 0 {
            let prev = raw[i - 1];
            offset -= tau * ((p - prev) / tau).round();
        }
        out.push(p + offset);
    }
    out
}

fn product_state(space: &HilbertSpace, alpha: C64) -> Result<StateVector> {
    let n = space.modes().len();
    let beta = alpha / (n as f64).sqrt();
    if beta.norm() > PRODUCT_AMPLITUDE_LIMIT {
        log::warn!("per-atom amplitude {:.3} exceeds {PRODUCT_AMPLITUDE_LIMIT}", beta.norm());
    }
    let norm = (1.0 + beta.norm_sqr()).sqrt();
    let factors: Vec<DVector<C64>> = space
        .modes()
        .iter()
        .map(|m| {
            let mut v = DVector::zeros(m.dim);
            v[0] = C64::new(1.0 / norm, 0.0);
            v[1] = beta / norm;
            v
        })
        .collect();
    StateVector::product(space, &factors)
}

/// Evolves the product approximation of a spin coherent state of amplitude
/// `alpha` and records the collective coherence. Protected runs are reported
/// in the frame where the coherence winds at `δ_q`.
pub fn broadened_coherence(
    params: &ModelParams,
    deltas: &[f64],
    protected: bool,
    times: &[f64],
    alpha: C64,
    config: &IntegratorConfig,
) -> Result<BroadeningRun> {
    let protection = if protected { Protection::RotatingFrame } else { Protection::None };
    broadened_coherence_with(params, deltas, protection, times, alpha, config)
}

pub fn broadened_coherence_with(
    params: &ModelParams,
    deltas: &[f64],
    protection: Protection,
    times: &[f64],
    alpha: C64,
    config: &IntegratorConfig,
) -> Result<BroadeningRun> {
    let d = derive(params)?;
    let me = build_broadened_me_with(params, deltas, protection, 2)?;
    let sp = me.space().clone();
    let rho0 = product_state(&sp, alpha)?.to_density();
    let vac = sp.index_of(&vec![0; deltas.len()]);
    // ⟨1_s| = (1/√N) Σ_j ⟨1_j|
    let ones: Vec<usize> = (0..deltas.len())
        .map(|j| {
            let mut o = vec![0; deltas.len()];
            o[j] = 1;
            sp.index_of(&o)
        })
        .collect();
    let w = 1.0 / (deltas.len() as f64).sqrt();
    let rate = if protection == Protection::RotatingFrame { d.delta_q_shift } else { 0.0 };
    let mut coherence = Vec::with_capacity(times.len());
    let diagnostics = evolve_with(&me, &rho0, times, config, |t, rho| {
        let c = ones.iter().map(|&k| rho[(k, vac)]).sum::<C64>() * w;
        coherence.push(c * C64::from_polar(1.0, -rate * t));
        Ok(())
    })?;
    let modulus = coherence.iter().map(|c| c.norm()).collect();
    let raw: Vec<f64> = coherence.iter().map(|c| c.arg()).collect();
    Ok(BroadeningRun {
        deltas: deltas.to_vec(),
        seed: None,
        protected: protection != Protection::None,
        times: times.to_vec(),
        coherence,
        modulus,
        phase: unwrap_phase(&raw),
        delta_q_shift: d.delta_q_shift,
        diagnostics,
    })
}

/// Protected and unprotected runs for one disorder draw.
#[derive(Clone, Debug)]
pub struct SeedRuns {
    pub seed: u64,
    pub protected: BroadeningRun,
    pub unprotected: BroadeningRun,
}

/// Runs every seed with and without protection, in parallel, ordered by seed.
pub fn run_seeds(
    params: &ModelParams,
    seeds: &[u64],
    times: &[f64],
    alpha: C64,
    config: &IntegratorConfig,
) -> Result<Vec<SeedRuns>> {
    let d = derive(params)?;
    seeds
        .par_iter()
        .map(|&seed| {
            let deltas = sample_detunings(params.n_atoms, d.delta_inh, seed)?;
            let mut protected = broadened_coherence(params, &deltas, true, times, alpha, config)?;
            let mut unprotected = broadened_coherence(params, &deltas, false, times, alpha, config)?;
            protected.seed = Some(seed);
            unprotected.seed = Some(seed);
            Ok(SeedRuns { seed, protected, unprotected })
        })
        .collect()
}

/// Sample mean and standard deviation (`n − 1` normalization).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhaseFit {
    /// In units of `δ_q`.
    pub slope: f64,
    pub r_squared: f64,
}

/// Least-squares line through the unwrapped phase.
pub fn phase_linearity(run: &BroadeningRun) -> Result<PhaseFit> {
    let n = run.times.len();
    if n < MIN_PHASE_POINTS {
        return Err(Error::InvalidParameter(format!("{n} points; phase fit needs at least {MIN_PHASE_POINTS}")));
    }
    let nf = n as f64;
    let tm = run.times.iter().sum::<f64>() / nf;
    let pm = run.phase.iter().sum::<f64>() / nf;
    let (mut stt, mut stp, mut spp) = (0.0, 0.0, 0.0);
    for (&t, &p) in run.times.iter().zip(&run.phase) {
        stt += (t - tm) * (t - tm);
        stp += (t - tm) * (p - pm);
        spp += (p - pm) * (p - pm);
    }
    let slope = stp / stt;
    let r_squared = if spp == 0.0 { 1.0 } else { stp * stp / (stt * spp) };
    Ok(PhaseFit { slope: slope / run.delta_q_shift, r_squared })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective::stabilization_experiment;
    use crate::manifold::coherent_coeffs;
    use crate::model::{ModelTier, Truncations};
    use proptest::prelude::*;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    fn k2at_grid(t_end: f64, points: usize) -> Vec<f64> {
        let k = derive(&ModelParams::default()).unwrap().kappa_2at;
        (0..points).map(|i| t_end / k * i as f64 / (points - 1) as f64).collect()
    }

    #[test]
    fn detunings_are_centered_and_scaled() {
        let x = sample_detunings(6, 0.25, 7).unwrap();
        let mean = x.iter().sum::<f64>() / 6.0;
        let rms = (x.iter().map(|v| v * v).sum::<f64>() / 6.0).sqrt();
        assert!(mean.abs() < 1e-12 && (rms - 0.25).abs() < 1e-12);
        assert_eq!(sample_detunings(6, 0.0, 7).unwrap(), vec![0.0; 6]);
        assert_ne!(x, sample_detunings(6, 0.25, 8).unwrap());
        assert_eq!(x, sample_detunings(6, 0.25, 7).unwrap());
        assert!(sample_detunings(1, 0.1, 0).is_err());
    }

    #[test]
    fn two_atom_pair_operator() {
        let p = ModelParams::default();
        let me = build_broadened_me(&p, &[0.0, 0.0], false).unwrap();
        let sp = me.space();
        let b1b2 = annihilation(sp, "b0").unwrap().mul(&annihilation(sp, "b1").unwrap()).unwrap();
        assert!(me.c_terms()[0].op.max_diff(&b1b2).unwrap() < 1e-15);
    }

    #[test]
    fn protection_term_couples_all_atoms() {
        let p = ModelParams::default();
        let d = derive(&p).unwrap();
        let me = build_broadened_me_with(&p, &[0.0; 3], Protection::StaticShift, 2).unwrap();
        let h = me.hamiltonian_at(0.0).unwrap();
        let sp = me.space();
        let one = |j: usize| {
            let mut o = vec![0; 3];
            o[j] = 1;
            sp.index_of(&o)
        };
        for i in 0..3 {
            for j in 0..3 {
                assert!((h.get(one(i), one(j)) - c(d.delta_q_shift / 3.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn budget_guard() {
        assert!(matches!(atom_space(13, 2), Err(Error::SpaceTooLarge { .. })));
        assert_eq!(atom_space(12, 2).unwrap().dim(), 4096);
        assert_eq!(atom_space(6, 2).unwrap().dim(), 64);
    }

    #[test]
    fn decomposition_of_centered_detunings() {
        let x = sample_detunings(6, 0.3, 11).unwrap();
        let dec = superradiant_decomposition(&x).unwrap();
        assert!((dec.coupling - 0.3).abs() < 1e-12);
        let sd: f64 = dec.s_vector.iter().zip(&dec.d_vector).map(|(a, b)| a * b).sum();
        assert!(sd.abs() < 1e-12);
        let ss: f64 = dec.s_vector.iter().zip(&x).map(|(a, d)| a * a * d).sum();
        assert!(ss.abs() < 1e-12);
        let dd: f64 = dec.d_vector.iter().map(|v| v * v).sum();
        assert!((dd - 1.0).abs() < 1e-12);
        assert!(superradiant_decomposition(&[0.0; 6]).is_err());
    }

    #[test]
    fn unwrap_keeps_jumps_below_pi() {
        let raw: Vec<f64> = (0..100).map(|i| (-0.4 * i as f64).sin().atan2((-0.4 * i as f64).cos())).collect();
        let u = unwrap_phase(&raw);
        for i in 1..u.len() {
            assert!((u[i] - u[i - 1]).abs() < std::f64::consts::PI);
            assert!((u[i] + 0.4 * i as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn clean_ensemble_keeps_its_coherence() {
        let p = ModelParams::default();
        let times = k2at_grid(20.0, 41);
        let cfg = IntegratorConfig::default();
        let run = broadened_coherence(&p, &[0.0; 6], false, &times, c(1.0), &cfg).unwrap();
        let ideal = coherent_coeffs(c(1.0)).c01.norm();
        assert!((run.modulus.last().unwrap() - ideal).abs() < 0.03, "{}", run.modulus.last().unwrap());
        let tail = &run.modulus[30..];
        assert!(tail.iter().all(|m| (m - tail[0]).abs() < 1e-3));
        let fit = phase_linearity(&run).unwrap();
        assert!(fit.slope.abs() < 1e-12);
        assert!(run.diagnostics.max_trace_error < 1e-8 && run.diagnostics.max_hermiticity_error < 1e-10);
        assert!(run.diagnostics.min_eigenvalue >= -1e-6);

        // collective single-mode reference
        let q = ModelParams::default().with_truncations(Truncations::for_alpha(1.0));
        let chi = derive(&q).unwrap().chi;
        let cmp = stabilization_experiment(&q, c(1.0), &[ModelTier::Adiabatic], times[40] * chi, 41, &cfg).unwrap();
        let reference = &cmp.get(ModelTier::Adiabatic).unwrap().coherence;
        for (a, b) in run.coherence.iter().zip(reference) {
            // ⟨σ₋⟩ = ρ₁₀ = conj(ρ₀₁)
            assert!((a - b.conj()).norm() <= 0.03, "{a} vs {b}");
        }
    }

    #[test]
    fn protected_phase_winds_at_the_gap() {
        let p = ModelParams::default();
        // δ_q Δt must stay below π for the unwrap to follow the winding
        let times = k2at_grid(20.0, 201);
        let d = derive(&p).unwrap();
        assert!(d.delta_q_shift * times[1] < std::f64::consts::PI);
        let run = broadened_coherence(&p, &[0.0; 6], true, &times, c(1.0), &IntegratorConfig::default()).unwrap();
        let fit = phase_linearity(&run).unwrap();
        // hard-core levels of s†s are n(N−n+1)/N, so the transient is not an exact multiple of δ_q
        assert!((fit.slope + 1.0).abs() < 1e-3, "{fit:?}");
        assert!(fit.r_squared > 0.9999);
        assert!(phase_linearity(&BroadeningRun { times: times[..10].to_vec(), ..run }).is_err());
    }

    #[test]
    fn rotating_frame_form_matches_disorder_at_time_zero() {
        let p = ModelParams::default();
        let x = sample_detunings(4, 0.01, 3).unwrap();
        let rot = build_broadened_me_with(&p, &x, Protection::RotatingFrame, 2).unwrap();
        let plain = build_broadened_me_with(&p, &x, Protection::None, 2).unwrap();
        let diff = rot.hamiltonian_at(0.0).unwrap().max_diff(&plain.hamiltonian_at(0.0).unwrap()).unwrap();
        assert!(diff < 1e-15);
        assert!(rot.is_time_dependent() && !plain.is_time_dependent());
        // Σ δ_j b_j†b_j leaves the one-excitation collective state with ⟨s|H|d⟩ = δ_inh
        let h = plain.hamiltonian_at(0.0).unwrap().to_dense();
        let sp = plain.space();
        let one = |j: usize| {
            let mut o = vec![0; 4];
            o[j] = 1;
            sp.index_of(&o)
        };
        let dec = superradiant_decomposition(&x).unwrap();
        let mut sd = C64::new(0.0, 0.0);
        for i in 0..4 {
            for j in 0..4 {
                sd += h[(one(i), one(j))] * dec.s_vector[i] * dec.d_vector[j];
            }
        }
        assert!((sd.re - dec.coupling).abs() < 1e-15);
    }

    #[test]
    fn static_shift_distorts_clean_hard_core_ensembles() {
        let p = ModelParams::default();
        let times = k2at_grid(20.0, 201);
        let cfg = IntegratorConfig::default();
        let rot = broadened_coherence_with(&p, &[0.0; 6], Protection::RotatingFrame, &times, c(1.0), &cfg).unwrap();
        let plain = broadened_coherence_with(&p, &[0.0; 6], Protection::None, &times, c(1.0), &cfg).unwrap();
        let stat = broadened_coherence_with(&p, &[0.0; 6], Protection::StaticShift, &times, c(1.0), &cfg).unwrap();
        let last = times.len() - 1;
        assert!((rot.modulus[last] - plain.modulus[last]).abs() < 1e-9);
        assert!(stat.modulus[last] < 0.95 * plain.modulus[last]);
        // both protected forms wind at −δ_q
        assert!((phase_linearity(&stat).unwrap().slope + 1.0).abs() < 1e-3);
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(4))]
        #[test]
        fn permuting_atoms_changes_nothing(seed in 0u64..1000, shift in 1usize..4) {
            let p = ModelParams::default();
            let d = derive(&p).unwrap();
            let x = sample_detunings(4, d.delta_inh, seed).unwrap();
            let mut y = x.clone();
            y.rotate_left(shift);
            let times = k2at_grid(3.0, 7);
            let p4 = ModelParams { n_atoms: 4, ..p };
            let cfg = IntegratorConfig::default();
            let a = broadened_coherence(&p4, &x, false, &times, c(0.8), &cfg).unwrap();
            let b = broadened_coherence(&p4, &y, false, &times, c(0.8), &cfg).unwrap();
            for (u, v) in a.coherence.iter().zip(&b.coherence) {
                prop_assert!((u - v).norm() < 1e-9);
            }
        }

        #[test]
        fn broadened_rhs_is_traceless_and_hermitian(seed in 0u64..1000) {
            let p = ModelParams::default();
            let d = derive(&p).unwrap();
            let x = sample_detunings(6, d.delta_inh, seed).unwrap();
            let me = build_broadened_me(&p, &x, seed % 2 == 0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rho = crate::manifold::random_state(me.space(), &mut rng).unwrap();
            let r = me.apply(&rho, 0.0).unwrap();
            let scale = crate::hilbert::max_abs(&r).max(1e-300);
            prop_assert!(r.trace().norm() < 1e-12 * scale * 64.0);
            prop_assert!(crate::hilbert::max_abs(&(&r - r.adjoint())) < 1e-12 * scale);
        }
    }
}
