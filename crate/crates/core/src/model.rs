//! Physical parameters, derived rates and the master-equation builders for
//! each level of description.
//!
//! All frequencies are angular and expressed in units of the mean atomic
//! transition frequency `ω_q`.

use log::warn;
use num_complex::Complex64 as C64;

use crate::dynamics::{CollapseTerm, HamiltonianTerm, MasterEquation};
use crate::error::{Error, Result};
use crate::hilbert::{annihilation, min_coherent_dim, number, HilbertSpace, Operator};

pub const PUMP: &str = "p";
pub const SIGNAL: &str = "s";
pub const ENSEMBLE: &str = "b";
pub const QUBIT: &str = "q";

/// Ratio above which a coupling no longer counts as largely detuned.
pub const REGIME_RATIO: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Truncations {
    pub dim_p: usize,
    pub dim_s: usize,
    pub dim_b: usize,
}

impl Default for Truncations {
    fn default() -> Self {
        Self { dim_p: 3, dim_s: 4, dim_b: 8 }
    }
}

impl Truncations {
    /// Ensemble dimension for a coherent state of amplitude `alpha`:
    /// `max(8, ⌈|α|² + 4|α| + 3⌉)`, enlarged if needed until the Poisson
    /// tail beyond the cutoff is within the coherent-state bound.
    pub fn ensemble_dim_for(alpha: f64) -> usize {
        let a = alpha.abs();
        let rule = (a * a + 4.0 * a + 3.0).ceil() as usize;
        rule.max(8).max(min_coherent_dim(C64::new(a, 0.0)))
    }

    pub fn for_alpha(alpha: f64) -> Self {
        Self { dim_b: Self::ensemble_dim_for(alpha), ..Self::default() }
    }
}

/// User-facing parameters. `None` entries take the defaults quoted in the
/// field docs, which depend on derived rates.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub omega_q: f64,
    pub g_col: f64,
    pub j: f64,
    pub delta_q: f64,
    /// Default `5χ`.
    pub kappa_p: Option<f64>,
    /// Default `0.3 κ_p`.
    pub kappa_s: Option<f64>,
    /// Drive amplitude `Ω_d`, default `0.1 κ₂ₐₜ`.
    pub drive_amplitude: Option<f64>,
    pub theta_d: f64,
    pub n_atoms: usize,
    /// Default `0.1 δ_q`.
    pub delta_inh: Option<f64>,
    pub truncations: Truncations,
}

impl Default for ModelParams {
    fn default() -> Self {
        let g = 0.03;
        Self {
            omega_q: 1.0,
            g_col: g,
            j: 3.0 * g,
            delta_q: 20.0 * g,
            kappa_p: None,
            kappa_s: None,
            drive_amplitude: None,
            theta_d: 0.0,
            n_atoms: 6,
            delta_inh: None,
            truncations: Truncations::default(),
        }
    }
}

impl ModelParams {
    pub fn with_truncations(mut self, t: Truncations) -> Self {
        self.truncations = t;
        self
    }

    /// Multiplies every frequency and rate (including explicitly set optional ones) by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            omega_q: self.omega_q * lambda,
            g_col: self.g_col * lambda,
            j: self.j * lambda,
            delta_q: self.delta_q * lambda,
            kappa_p: self.kappa_p.map(|x| x * lambda),
            kappa_s: self.kappa_s.map(|x| x * lambda),
            drive_amplitude: self.drive_amplitude.map(|x| x * lambda),
            delta_inh: self.delta_inh.map(|x| x * lambda),
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        let named = [
            ("omega_q", Some(self.omega_q)),
            ("g_col", Some(self.g_col)),
            ("J", Some(self.j)),
            ("Delta_q", Some(self.delta_q)),
            ("kappa_p", self.kappa_p),
            ("kappa_s", self.kappa_s),
            ("Omega_d", self.drive_amplitude),
            ("delta_inh", self.delta_inh),
        ];
        for (name, v) in named {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidParameter(format!("{name} = {v} must be finite and ≥ 0")));
                }
            }
        }
        if !self.theta_d.is_finite() {
            return Err(Error::InvalidParameter("theta_d must be finite".into()));
        }
        if !(self.delta_q > 0.0) {
            return Err(Error::InvalidParameter("Delta_q must be > 0".into()));
        }
        if self.n_atoms == 0 {
            return Err(Error::InvalidParameter("N_atoms must be ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DerivedParams {
    pub chi: f64,
    pub kappa_p: f64,
    pub kappa_s: f64,
    pub kappa_2at: f64,
    /// Ensemble resonance shift `g_col²/Δ_q`.
    pub delta_q_shift: f64,
    /// Pump detuning from `2ω_q` that cancels the second-order shifts.
    pub delta: f64,
    pub delta_p: f64,
    pub omega_s: f64,
    pub omega_p: f64,
    pub drive_amplitude: f64,
    pub gamma: f64,
    /// Drive frequency `ω_q + δ_q`.
    pub omega_d: f64,
    pub delta_inh: f64,
}

/// Number of substitution rounds in the δ ↔ Δ_p fixed point.
pub const FIXED_POINT_ROUNDS: usize = 2;

pub fn derive(params: &ModelParams) -> Result<DerivedParams> {
    params.validate()?;
    let ModelParams { omega_q, g_col: g, j, delta_q: dq, .. } = *params;
    let chi = g * g * j / (dq * dq);
    let delta_q_shift = g * g / dq;
    let mut delta_p = 2.0 * dq;
    let mut delta = 0.0;
    for _ in 0..FIXED_POINT_ROUNDS {
        delta = 2.0 * j * j / delta_p - 2.0 * delta_q_shift;
        delta_p = 2.0 * dq - delta;
        if !(delta_p > 0.0) {
            return Err(Error::InvalidParameter(format!("pump detuning Delta_p = {delta_p} is not positive")));
        }
    }
    let kappa_p = params.kappa_p.unwrap_or(5.0 * chi);
    let kappa_s = params.kappa_s.unwrap_or(0.3 * kappa_p);
    let kappa_2at = match (chi, kappa_p) {
        (c, _) if c == 0.0 => 0.0,
        (_, k) if k > 0.0 => 4.0 * chi * chi / k,
        _ => return Err(Error::InvalidParameter("kappa_p must be > 0 when chi is nonzero".into())),
    };
    let drive_amplitude = params.drive_amplitude.unwrap_or(0.1 * kappa_2at);
    let gamma = if kappa_2at > 0.0 { 4.0 * drive_amplitude * drive_amplitude / kappa_2at } else { 0.0 };
    let omega_s = omega_q + dq;
    Ok(DerivedParams {
        chi,
        kappa_p,
        kappa_s,
        kappa_2at,
        delta_q_shift,
        delta,
        delta_p,
        omega_s,
        omega_p: 2.0 * omega_q + delta,
        drive_amplitude,
        gamma,
        omega_d: omega_q + delta_q_shift,
        delta_inh: params.delta_inh.unwrap_or(0.1 * delta_q_shift),
    })
}

/// Human-readable warnings for parameters outside the largely-detuned regime.
pub fn regime_warnings(params: &ModelParams) -> Result<Vec<String>> {
    let d = derive(params)?;
    let mut out = Vec::new();
    if params.g_col / params.delta_q > REGIME_RATIO {
        out.push(format!("g_col/Delta_q = {:.3} exceeds {REGIME_RATIO}", params.g_col / params.delta_q));
    }
    if params.j / d.delta_p > REGIME_RATIO {
        out.push(format!("J/Delta_p = {:.3} exceeds {REGIME_RATIO}", params.j / d.delta_p));
    }
    for w in &out {
        warn!("{w}");
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelTier {
    Full,
    TimeAveraged,
    Adiabatic,
    Qubit,
}

impl ModelTier {
    pub const ALL: [ModelTier; 4] = [ModelTier::Full, ModelTier::TimeAveraged, ModelTier::Adiabatic, ModelTier::Qubit];

    pub fn name(&self) -> &'static str {
        match self {
            ModelTier::Full => "full",
            ModelTier::TimeAveraged => "timeaveraged",
            ModelTier::Adiabatic => "adiabatic",
            ModelTier::Qubit => "qubit",
        }
    }

    /// Space the tier's master equation acts on.
    pub fn space(&self, t: &Truncations) -> Result<HilbertSpace> {
        match self {
            ModelTier::Full => HilbertSpace::new(&[(PUMP, t.dim_p), (SIGNAL, t.dim_s), (ENSEMBLE, t.dim_b)]),
            ModelTier::TimeAveraged => HilbertSpace::new(&[(PUMP, t.dim_p), (ENSEMBLE, t.dim_b)]),
            ModelTier::Adiabatic => HilbertSpace::new(&[(ENSEMBLE, t.dim_b)]),
            ModelTier::Qubit => HilbertSpace::new(&[(QUBIT, 2)]),
        }
    }

    /// Label of the mode carrying the ensemble excitations.
    pub fn ensemble_label(&self) -> &'static str {
        match self {
            ModelTier::Qubit => QUBIT,
            _ => ENSEMBLE,
        }
    }
}

impl std::fmt::Display for ModelTier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "full" => Ok(ModelTier::Full),
            "timeaveraged" => Ok(ModelTier::TimeAveraged),
            "adiabatic" => Ok(ModelTier::Adiabatic),
            "qubit" => Ok(ModelTier::Qubit),
            other => Err(Error::InvalidParameter(format!("unknown tier '{other}'"))),
        }
    }
}

/// Rotating-frame Hamiltonian of the complete pump + signal + ensemble system.
pub fn full_hamiltonian(params: &ModelParams) -> Result<Operator> {
    let d = derive(params)?;
    let sp = ModelTier::Full.space(&params.truncations)?;
    let ap = annihilation(&sp, PUMP)?;
    let a_s = annihilation(&sp, SIGNAL)?;
    let s = annihilation(&sp, ENSEMBLE)?;
    let exchange = a_s.dagger().mul(&s)?;
    let pair = ap.mul(&a_s.dagger().powi(2)?)?;
    number(&sp, SIGNAL)?
        .scale_re(params.delta_q)
        .add(&number(&sp, PUMP)?.scale_re(d.delta))?
        .add(&exchange.add(&exchange.dagger())?.scale_re(params.g_col))?
        .add(&pair.add(&pair.dagger())?.scale_re(params.j))
}

/// Lab-frame Hamiltonian at pump frequency `omega_p`.
pub fn lab_hamiltonian(params: &ModelParams, omega_p: f64, truncations: &Truncations) -> Result<Operator> {
    params.validate()?;
    let sp = ModelTier::Full.space(truncations)?;
    let ap = annihilation(&sp, PUMP)?;
    let a_s = annihilation(&sp, SIGNAL)?;
    let s = annihilation(&sp, ENSEMBLE)?;
    let exchange = a_s.dagger().mul(&s)?;
    let pair = ap.mul(&a_s.dagger().powi(2)?)?;
    number(&sp, ENSEMBLE)?
        .scale_re(params.omega_q)
        .add(&number(&sp, SIGNAL)?.scale_re(params.omega_q + params.delta_q))?
        .add(&number(&sp, PUMP)?.scale_re(omega_p))?
        .add(&exchange.add(&exchange.dagger())?.scale_re(params.g_col))?
        .add(&pair.add(&pair.dagger())?.scale_re(params.j))
}

fn frequency_hint(params: &ModelParams, d: &DerivedParams, c_terms: &[CollapseTerm]) -> Result<f64> {
    let mut nu = [params.delta_q, d.delta.abs(), params.g_col, params.j].into_iter().fold(0.0, f64::max);
    for c in c_terms {
        nu = nu.max(c.rate * c.op.dagger().mul(&c.op)?.norm_bound());
    }
    Ok(nu)
}

pub fn build_full(params: &ModelParams) -> Result<MasterEquation> {
    let d = derive(params)?;
    let h = full_hamiltonian(params)?;
    let sp = h.space().clone();
    let c_terms = vec![
        CollapseTerm { rate: d.kappa_p, op: annihilation(&sp, PUMP)? },
        CollapseTerm { rate: d.kappa_s, op: annihilation(&sp, SIGNAL)? },
    ];
    let nu = frequency_hint(params, &d, &c_terms)?;
    Ok(MasterEquation::new(&sp, vec![HamiltonianTerm::constant(h)], c_terms)?.with_frequency_scale(nu))
}

pub fn time_averaged_hamiltonian(params: &ModelParams) -> Result<Operator> {
    let d = derive(params)?;
    let sp = ModelTier::TimeAveraged.space(&params.truncations)?;
    let ap = annihilation(&sp, PUMP)?;
    let s = annihilation(&sp, ENSEMBLE)?;
    let x = ap.mul(&s.dagger().powi(2)?)?;
    Ok(x.add(&x.dagger())?.scale_re(d.chi))
}

pub fn build_time_averaged(params: &ModelParams) -> Result<MasterEquation> {
    let d = derive(params)?;
    let h = time_averaged_hamiltonian(params)?;
    let sp = h.space().clone();
    let c_terms = vec![CollapseTerm { rate: d.kappa_p, op: annihilation(&sp, PUMP)? }];
    MasterEquation::new(&sp, vec![HamiltonianTerm::constant(h)], c_terms)
}

pub fn build_adiabatic(params: &ModelParams) -> Result<MasterEquation> {
    let d = derive(params)?;
    let sp = ModelTier::Adiabatic.space(&params.truncations)?;
    let s = annihilation(&sp, ENSEMBLE)?;
    MasterEquation::new(&sp, vec![], vec![CollapseTerm { rate: d.kappa_2at, op: s.powi(2)? }])
}

/// Drive on the ensemble mode of `space` as seen in `frame`. In the full
/// frame the lowering part rotates as `e^{+iδ_q t}`.
pub fn build_drive(params: &ModelParams, frame: ModelTier, space: &HilbertSpace) -> Result<Vec<HamiltonianTerm>> {
    let d = derive(params)?;
    let s = annihilation(space, frame.ensemble_label())?;
    let lower = s.scale(C64::from_polar(d.drive_amplitude, -params.theta_d));
    let raise = lower.dagger();
    Ok(match frame {
        ModelTier::Full => vec![
            HamiltonianTerm::rotating(lower, d.delta_q_shift),
            HamiltonianTerm::rotating(raise, -d.delta_q_shift),
        ],
        _ => vec![HamiltonianTerm::constant(lower.add(&raise)?)],
    })
}

pub fn build_qubit(params: &ModelParams) -> Result<MasterEquation> {
    let d = derive(params)?;
    let sp = ModelTier::Qubit.space(&params.truncations)?;
    let sm = annihilation(&sp, QUBIT)?;
    let drive = build_drive(params, ModelTier::Qubit, &sp)?;
    MasterEquation::new(&sp, drive, vec![CollapseTerm { rate: d.gamma, op: sm }])
}

/// Master equation for `tier`, optionally with the coherent drive added.
/// The qubit tier always includes the drive.
pub fn build(params: &ModelParams, tier: ModelTier, driven: bool) -> Result<MasterEquation> {
    let mut me = match tier {
        ModelTier::Full => build_full(params)?,
        ModelTier::TimeAveraged => build_time_averaged(params)?,
        ModelTier::Adiabatic => build_adiabatic(params)?,
        ModelTier::Qubit => return build_qubit(params),
    };
    if driven {
        let terms = build_drive(params, tier, &me.space().clone())?;
        me.push_h_terms(terms)?;
    }
    Ok(me)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SecondOrderShifts {
    /// Per ensemble excitation.
    pub lamb_shift_ensemble: f64,
    /// Per pump photon.
    pub pump_shift: f64,
}

pub fn second_order_shifts(params: &ModelParams) -> Result<SecondOrderShifts> {
    let d = derive(params)?;
    Ok(SecondOrderShifts {
        lamb_shift_ensemble: -params.g_col * params.g_col / params.delta_q,
        pump_shift: -2.0 * params.j * params.j / d.delta_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{parity_operator, StateVector};
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn derived_values_at_defaults() {
        let d = derive(&ModelParams::default()).unwrap();
        assert!(close(d.chi, 2.25e-4, 1e-15));
        assert!(close(d.kappa_p, 1.125e-3, 1e-15));
        assert!(close(d.kappa_2at, 1.8e-4, 1e-15));
        assert!(close(d.kappa_2at / d.chi, 0.8, 1e-12));
        assert!(close(d.delta_q_shift, 1.5e-3, 1e-15));
        // first round: 2·0.0081/1.2 − 0.003 = 0.0105; second uses Δ_p = 1.1895
        assert!(close(d.delta, 0.0162 / 1.1895 - 0.003, 1e-15));
        assert!(close(d.delta, 0.0105, 2e-4));
        assert!(close(d.delta_p, 1.2 - d.delta, 1e-15));
        assert!(close(d.omega_p, 2.0 + d.delta, 1e-15));
        assert!(close(d.omega_s, 1.6, 1e-15));
        assert!(close(d.kappa_s, 0.3 * d.kappa_p, 1e-18));
        assert!(close(d.drive_amplitude, 1.8e-5, 1e-18));
        assert!(close(d.gamma / d.kappa_2at, 0.04, 1e-12));
        assert!(close(d.omega_d, 1.0015, 1e-15));
        assert!(close(d.delta_inh, 1.5e-4, 1e-18));
    }

    #[test]
    fn derive_rejects_bad_input() {
        let p = ModelParams { delta_q: 0.0, ..Default::default() };
        assert!(derive(&p).is_err());
        let p = ModelParams { kappa_p: Some(-1.0), ..Default::default() };
        assert!(derive(&p).is_err());
        let p = ModelParams { kappa_p: Some(0.0), ..Default::default() };
        assert!(derive(&p).is_err());
        let p = ModelParams { j: 0.0, ..Default::default() };
        assert_eq!(derive(&p).unwrap().kappa_2at, 0.0);
        let p = ModelParams { j: 2.0, ..Default::default() };
        assert!(derive(&p).is_err());
    }

    #[test]
    fn regime_flags() {
        assert!(regime_warnings(&ModelParams::default()).unwrap().is_empty());
        let p = ModelParams { g_col: 0.1, ..Default::default() };
        assert_eq!(regime_warnings(&p).unwrap().len(), 1);
    }

    #[test]
    fn truncation_rule() {
        assert_eq!(Truncations::ensemble_dim_for(0.0), 8);
        // the polynomial rule alone leaves a 1e-5 tail at |α| = 1
        assert_eq!(Truncations::ensemble_dim_for(1.0), 10);
        assert_eq!(Truncations::ensemble_dim_for(0.5), 8);
        for a in [0.5, 1.0, 2.0, 3.0] {
            let d = Truncations::ensemble_dim_for(a);
            assert!(d >= (a * a + 4.0 * a + 3.0).ceil() as usize);
            assert!(crate::hilbert::coherent_tail(C64::new(a, 0.0), d) <= crate::hilbert::COHERENT_TAIL_BOUND);
        }
    }

    #[test]
    fn full_hamiltonian_structure() {
        let p = ModelParams::default();
        let h = full_hamiltonian(&p).unwrap();
        assert!(h.hermiticity_error() < 1e-12);
        let sp = h.space().clone();
        let i = sp.index_of(&[1, 0, 0]);
        let j = sp.index_of(&[0, 2, 0]);
        assert!((h.get(i, j) - C64::new(2f64.sqrt() * p.j, 0.0)).norm() < 1e-15);

        let free = ModelParams { g_col: 0.0, j: 0.0, ..Default::default() };
        let d = derive(&free).unwrap();
        let h0 = full_hamiltonian(&free).unwrap();
        for k in 0..sp.dim() {
            let o = sp.occupations(k);
            assert!((h0.get(k, k).re - (o[1] as f64 * free.delta_q + o[0] as f64 * d.delta)).abs() < 1e-15);
            for l in 0..sp.dim() {
                if l != k {
                    assert_eq!(h0.get(k, l), C64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn tavis_cummings_single_excitation_block() {
        let p = ModelParams { j: 0.0, ..Default::default() };
        let h = full_hamiltonian(&p).unwrap();
        let sp = h.space().clone();
        let a = sp.index_of(&[0, 1, 0]);
        let b = sp.index_of(&[0, 0, 1]);
        let block = DMatrix::from_fn(2, 2, |r, c| h.get([a, b][r], [a, b][c]));
        let mut ev: Vec<f64> = block.symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        let root = (p.delta_q * p.delta_q + 4.0 * p.g_col * p.g_col).sqrt();
        assert!(close(ev[0], (p.delta_q - root) / 2.0, 1e-14));
        assert!(close(ev[1], (p.delta_q + root) / 2.0, 1e-14));
    }

    #[test]
    fn time_averaged_structure() {
        let p = ModelParams::default();
        let d = derive(&p).unwrap();
        let h = time_averaged_hamiltonian(&p).unwrap();
        let sp = h.space().clone();
        let i = sp.index_of(&[1, 0]);
        let j = sp.index_of(&[0, 2]);
        assert!((h.get(i, j).re - 2f64.sqrt() * d.chi).abs() < 1e-18);
        for occ in [[0, 0], [0, 1]] {
            let v = h.apply(&StateVector::fock(&sp, &occ).unwrap()).unwrap();
            assert!(v.amplitudes().iter().all(|z| z.norm() == 0.0));
        }
        // pump photons count as two ensemble excitations
        let pp = parity_operator(&sp, PUMP).unwrap();
        let pb = parity_operator(&sp, ENSEMBLE).unwrap();
        let sym = Operator::from_dense(&sp, DMatrix::from_fn(sp.dim(), sp.dim(), |r, c| {
            if r == c {
                let o = sp.occupations(r);
                C64::new(if (o[1] % 2) == 0 { 1.0 } else { -1.0 }, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        }))
        .unwrap();
        assert!(h.commutator(&pb).unwrap().max_abs() < 1e-18);
        assert!(h.commutator(&sym).unwrap().max_abs() < 1e-18);
        assert!(h.commutator(&pp).unwrap().max_abs() > 0.0);
    }

    #[test]
    fn adiabatic_structure() {
        let p = ModelParams { truncations: Truncations { dim_b: 4, ..Default::default() }, ..Default::default() };
        let me = build_adiabatic(&p).unwrap();
        assert!(me.h_terms().is_empty());
        let c = &me.c_terms()[0];
        assert_eq!(c.rate, derive(&p).unwrap().kappa_2at);
        assert!((c.op.get(0, 2).re - 2f64.sqrt()).abs() < 1e-15);
        assert!((c.op.get(1, 3).re - 6f64.sqrt()).abs() < 1e-15);
        assert_eq!(c.op.to_sparse().nnz(), 2);
        let vac = crate::hilbert::DensityMatrix::fock(me.space(), &[0]).unwrap();
        assert_eq!(crate::hilbert::max_abs(&me.apply(&vac, 0.0).unwrap()), 0.0);
    }

    #[test]
    fn drive_matrix_elements() {
        let theta = 0.7;
        let p = ModelParams { theta_d: theta, ..Default::default() };
        let d = derive(&p).unwrap();
        let sp = ModelTier::Adiabatic.space(&p.truncations).unwrap();
        let terms = build_drive(&p, ModelTier::Adiabatic, &sp).unwrap();
        assert_eq!(terms.len(), 1);
        let h = &terms[0].op;
        assert!(h.hermiticity_error() < 1e-15);
        let e = C64::from_polar(d.drive_amplitude, theta);
        assert!((h.get(1, 0) - e).norm() < 1e-18);
        assert!((h.get(2, 1) - e * 2f64.sqrt()).norm() < 1e-18);

        let full = ModelTier::Full.space(&p.truncations).unwrap();
        let ft = build_drive(&p, ModelTier::Full, &full).unwrap();
        let static_full = build_drive(&p, ModelTier::TimeAveraged, &full).unwrap();
        let at0 = ft[0].op.scale(ft[0].profile.at(0.0)).add(&ft[1].op.scale(ft[1].profile.at(0.0))).unwrap();
        assert!(at0.max_diff(&static_full[0].op).unwrap() < 1e-18);
        for t in [0.0, 1.3, 1e4] {
            let z = ft[0].profile.at(t);
            assert!(((z * z.conj()).re - 1.0).abs() < 1e-15);
        }
        assert!(build(&p, ModelTier::Full, true).is_ok());
    }

    #[test]
    fn qubit_tier() {
        let p = ModelParams::default();
        let d = derive(&p).unwrap();
        let me = build_qubit(&p).unwrap();
        let c = &me.c_terms()[0];
        assert!(close(c.rate / d.kappa_2at, 0.04, 1e-12));
        assert_eq!(c.op.get(0, 1), C64::new(1.0, 0.0));
        assert_eq!(c.op.to_sparse().nnz(), 1);
        let h = me.hamiltonian_at(0.0).unwrap().to_dense();
        let ev = h.symmetric_eigenvalues();
        assert!(close(ev.max(), d.drive_amplitude, 1e-18));
        assert!(close(ev.min(), -d.drive_amplitude, 1e-18));
    }

    #[test]
    fn shifts() {
        let s = second_order_shifts(&ModelParams::default()).unwrap();
        assert!(close(s.lamb_shift_ensemble, -1.5e-3, 1e-15));
        let s0 = second_order_shifts(&ModelParams { j: 0.0, ..Default::default() }).unwrap();
        assert_eq!(s0.pump_shift, 0.0);
        // residual of the cancellation is the fixed-point truncation error
        for p in [ModelParams::default(), ModelParams { j: 0.05, g_col: 0.02, ..Default::default() }] {
            let d = derive(&p).unwrap();
            let sh = second_order_shifts(&p).unwrap();
            let residual = d.delta - 2.0 * sh.lamb_shift_ensemble + sh.pump_shift;
            assert!(residual.abs() < 1e-3 * d.delta.abs().max(1e-6), "residual {residual}");
        }
    }

    #[test]
    fn tier_names_round_trip() {
        for t in ModelTier::ALL {
            assert_eq!(t.name().parse::<ModelTier>().unwrap(), t);
        }
        assert_eq!("Time-Averaged".parse::<ModelTier>().unwrap(), ModelTier::TimeAveraged);
        assert!("bogus".parse::<ModelTier>().is_err());
    }

    proptest! {
        #[test]
        fn derive_is_scale_covariant(lambda in 0.1f64..10.0, g in 0.005f64..0.05, jr in 0.5f64..4.0, dr in 10.0f64..40.0) {
            let p = ModelParams { g_col: g, j: jr * g, delta_q: dr * g, ..Default::default() };
            let a = derive(&p).unwrap();
            let b = derive(&p.scaled(lambda)).unwrap();
            for (x, y) in [
                (a.chi, b.chi), (a.kappa_2at, b.kappa_2at), (a.delta_q_shift, b.delta_q_shift),
                (a.delta, b.delta), (a.gamma, b.gamma), (a.delta_p, b.delta_p), (a.omega_d, b.omega_d),
            ] {
                prop_assert!((y - lambda * x).abs() <= 1e-12 * (lambda * x).abs().max(1e-300));
            }
        }

        #[test]
        fn built_hamiltonians_are_hermitian(g in 0.0f64..0.05, j in 0.0f64..0.1, theta in -3.0f64..3.0, t in 0.0f64..1e4) {
            let p = ModelParams { g_col: g, j, theta_d: theta, truncations: Truncations { dim_p: 2, dim_s: 3, dim_b: 4 }, ..Default::default() };
            for tier in ModelTier::ALL {
                let me = build(&p, tier, true).unwrap();
                prop_assert!(me.hamiltonian_at(t).unwrap().hermiticity_error() < 1e-12);
            }
        }
    }
}
