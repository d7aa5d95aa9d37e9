//! Stationary manifold of pairwise ensemble decay: the conserved
//! operators that fix the final qubit state, its coefficients for arbitrary
//! and coherent initial states, and the modified Bessel function they need.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{evolve_with, IntegratorConfig, MasterEquation};
use crate::error::{Error, Result};
use crate::hilbert::{expectation, DensityMatrix, HilbertSpace, Operator};
use crate::model::ENSEMBLE;

fn single_mode(dim: usize) -> Result<HilbertSpace> {
    HilbertSpace::new(&[(ENSEMBLE, dim)])
}

/// `w_n = √(2n+1) (2n−1)!!/(2n)!!` with `(−1)!! = 0!! = 1`.
pub fn pi01_weight(n: usize) -> f64 {
    let mut ratio = 1.0;
    for k in 1..=n {
        ratio *= (2 * k - 1) as f64 / (2 * k) as f64;
    }
    ((2 * n + 1) as f64).sqrt() * ratio
}

/// Projector on even Fock states.
pub fn pi00(dim: usize) -> Result<Operator> {
    let sp = single_mode(dim)?;
    let t = (0..dim).step_by(2).map(|n| (n, n, C64::new(1.0, 0.0))).collect();
    Operator::from_triplets(&sp, t)
}

/// `Σ_n w_n |2n⟩⟨2n+1|`.
pub fn pi01(dim: usize) -> Result<Operator> {
    let sp = single_mode(dim)?;
    let t = (0..)
        .take_while(|n| 2 * n + 1 < dim)
        .map(|n| (2 * n, 2 * n + 1, C64::new(pi01_weight(n), 0.0)))
        .collect();
    Operator::from_triplets(&sp, t)
}

/// Coefficients of the stationary qubit state `Σ c_ij |i⟩⟨j|`, `i, j ∈ {0, 1}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SteadyCoeffs {
    pub c00: f64,
    pub c01: C64,
}

impl SteadyCoeffs {
    pub fn c11(&self) -> f64 {
        1.0 - self.c00
    }

    pub fn c10(&self) -> C64 {
        self.c01.conj()
    }

    pub fn matrix(&self) -> DMatrix<C64> {
        DMatrix::from_row_slice(2, 2, &[C64::new(self.c00, 0.0), self.c01, self.c10(), C64::new(self.c11(), 0.0)])
    }

    /// `|c01|² ≤ c00 c11` up to `tol`.
    pub fn is_physical(&self, tol: f64) -> bool {
        self.c00 >= -tol && self.c11() >= -tol && self.c01.norm_sqr() <= self.c00 * self.c11() + tol
    }

    /// The stationary state embedded in a single mode of dimension `dim`.
    pub fn state(&self, dim: usize) -> Result<DensityMatrix> {
        let sp = single_mode(dim)?;
        let mut m = DMatrix::zeros(dim, dim);
        m.view_mut((0, 0), (2, 2)).copy_from(&self.matrix());
        DensityMatrix::new_unchecked(&sp, m)
    }
}

/// Steady-state coefficients reached from `rho0` under pairwise decay,
/// `c00 = Tr[Π₀₀ρ₀]`, `c01 = Tr[Π₀₁†ρ₀]`.
pub fn steady_coeffs(rho0: &DensityMatrix) -> Result<SteadyCoeffs> {
    if rho0.space().modes().len() != 1 {
        return Err(Error::InvalidState("steady coefficients need a single-mode state".into()));
    }
    let dim = rho0.dim();
    let local = DensityMatrix::new_unchecked(&single_mode(dim)?, rho0.matrix().clone())?;
    let c00 = expectation(&local, &pi00(dim)?)?.re;
    let c01 = expectation(&local, &pi01(dim)?.dagger())?;
    Ok(SteadyCoeffs { c00, c01 })
}

/// Closed-form coefficients for a coherent initial state of amplitude `alpha`.
pub fn coherent_coeffs(alpha: C64) -> SteadyCoeffs {
    let x = alpha.norm_sqr();
    SteadyCoeffs { c00: 0.5 * (1.0 + (-2.0 * x).exp()), c01: alpha.conj() * bessel_i0_scaled(x) }
}

const SERIES_LIMIT: f64 = 15.0;

/// Modified Bessel function of the first kind, order zero, for `x ≥ 0`.
pub fn bessel_i0(x: f64) -> f64 {
    if x <= SERIES_LIMIT {
        i0_series(x)
    } else {
        bessel_i0_scaled(x) * x.exp()
    }
}

/// `e^{−x} I₀(x)`, finite for all `x ≥ 0`.
pub fn bessel_i0_scaled(x: f64) -> f64 {
    if x <= SERIES_LIMIT {
        return i0_series(x) * (-x).exp();
    }
    // e^x/√(2πx) Σ ((2k−1)!!)² / (k! (8x)^k), cut at the smallest term
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        let next = term * ((2 * k - 1) as f64).powi(2) / (8.0 * x * k as f64);
        if next >= term || next < 1e-17 * sum {
            break;
        }
        term = next;
        sum += term;
    }
    sum / (2.0 * std::f64::consts::PI * x).sqrt()
}

fn i0_series(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-17 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

/// Random full-rank density matrix (normalized `GG†` with Gaussian `G`).
pub fn random_state<R: Rng>(space: &HilbertSpace, rng: &mut R) -> Result<DensityMatrix> {
    let n = space.dim();
    let g = DMatrix::from_fn(n, n, |_, _| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let m = &g * g.adjoint();
    let tr = m.trace();
    DensityMatrix::new(space, m / tr)
}

/// Evolves `n_states` random states under `me` up to `t_end` and returns the
/// largest excursion of `Tr[op ρ(t)]` from its initial value over `points` samples.
pub fn conserved_check(
    me: &MasterEquation,
    op: &Operator,
    n_states: usize,
    seed: u64,
    t_end: f64,
    points: usize,
    config: &IntegratorConfig,
) -> Result<f64> {
    if op.space() != me.space() {
        return Err(Error::SpaceMismatch);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let times: Vec<f64> = (0..points.max(2)).map(|i| t_end * i as f64 / (points.max(2) - 1) as f64).collect();
    let opd = op.to_dense();
    let mut worst: f64 = 0.0;
    for _ in 0..n_states {
        let rho0 = random_state(me.space(), &mut rng)?;
        let v0 = (&opd * rho0.matrix()).trace();
        evolve_with(me, &rho0, &times, config, |_, rho| {
            worst = worst.max(((&opd * rho).trace() - v0).norm());
            Ok(())
        })?;
    }
    Ok(worst)
}
