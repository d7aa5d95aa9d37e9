use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert::{CsrMatrix, DensityMatrix, HilbertSpace, Operator};

/// Time dependence multiplying a Hamiltonian term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TimeProfile {
    Constant(C64),
    /// `e^{iωt}`
    Exp { freq: f64 },
}

impl TimeProfile {
    pub fn at(&self, t: f64) -> C64 {
        match *self {
            TimeProfile::Constant(c) => c,
            TimeProfile::Exp { freq } => C64::from_polar(1.0, freq * t),
        }
    }

    fn conj(&self) -> Self {
        match *self {
            TimeProfile::Constant(c) => TimeProfile::Constant(c.conj()),
            TimeProfile::Exp { freq } => TimeProfile::Exp { freq: -freq },
        }
    }

    fn magnitude(&self) -> f64 {
        match *self {
            TimeProfile::Constant(c) => c.norm(),
            TimeProfile::Exp { .. } => 1.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HamiltonianTerm {
    pub op: Operator,
    pub profile: TimeProfile,
}

impl HamiltonianTerm {
    pub fn constant(op: Operator) -> Self {
        Self { op, profile: TimeProfile::Constant(C64::new(1.0, 0.0)) }
    }

    pub fn rotating(op: Operator, freq: f64) -> Self {
        Self { op, profile: TimeProfile::Exp { freq } }
    }
}

#[derive(Clone, Debug)]
pub struct CollapseTerm {
    pub rate: f64,
    pub op: Operator,
}

/// `dρ/dt = −i[H(t), ρ] + Σ κ L(o)ρ` with `L(o)ρ = (2oρo† − o†oρ − ρo†o)/2`.
#[derive(Clone, Debug)]
pub struct MasterEquation {
    space: HilbertSpace,
    h_terms: Vec<HamiltonianTerm>,
    c_terms: Vec<CollapseTerm>,
    frequency_scale: Option<f64>,
}

const PAIR_TOL: f64 = 1e-12;

impl MasterEquation {
    pub fn new(space: &HilbertSpace, h_terms: Vec<HamiltonianTerm>, c_terms: Vec<CollapseTerm>) -> Result<Self> {
        for t in &h_terms {
            if t.op.space() != space {
                return Err(Error::SpaceMismatch);
            }
        }
        for t in &c_terms {
            if t.op.space() != space {
                return Err(Error::SpaceMismatch);
            }
            if !(t.rate >= 0.0) || !t.rate.is_finite() {
                return Err(Error::InvalidParameter(format!("collapse rate {} must be finite and ≥ 0", t.rate)));
            }
        }
        let me = Self { space: space.clone(), h_terms, c_terms, frequency_scale: None };
        me.check_hermitian()?;
        Ok(me)
    }

    /// Static constant part must be Hermitian; every rotating term needs its
    /// conjugate partner so that `H(t)` is Hermitian at all times.
    fn check_hermitian(&self) -> Result<()> {
        let mut constant = Operator::zeros(&self.space);
        for t in &self.h_terms {
            match t.profile {
                TimeProfile::Constant(c) => constant = constant.add(&t.op.scale(c))?,
                TimeProfile::Exp { .. } => {
                    let want_op = t.op.dagger();
                    let want_profile = t.profile.conj();
                    let found = self.h_terms.iter().any(|u| {
                        u.profile == want_profile && u.op.max_diff(&want_op).map(|d| d <= PAIR_TOL).unwrap_or(false)
                    });
                    if !found {
                        return Err(Error::NonHermitian(f64::INFINITY));
                    }
                }
            }
        }
        let err = constant.hermiticity_error();
        if err > PAIR_TOL * constant.max_abs().max(1.0) {
            return Err(Error::NonHermitian(err));
        }
        Ok(())
    }

    /// Overrides the characteristic frequency used to pick the default step.
    pub fn with_frequency_scale(mut self, nu: f64) -> Self {
        self.frequency_scale = Some(nu);
        self
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn h_terms(&self) -> &[HamiltonianTerm] {
        &self.h_terms
    }

    pub fn c_terms(&self) -> &[CollapseTerm] {
        &self.c_terms
    }

    pub fn push_h_term(&mut self, term: HamiltonianTerm) -> Result<()> {
        if term.op.space() != &self.space {
            return Err(Error::SpaceMismatch);
        }
        self.h_terms.push(term);
        self.check_hermitian()
    }

    pub fn push_h_terms(&mut self, terms: Vec<HamiltonianTerm>) -> Result<()> {
        for t in &terms {
            if t.op.space() != &self.space {
                return Err(Error::SpaceMismatch);
            }
        }
        self.h_terms.extend(terms);
        self.check_hermitian()
    }

    pub fn is_time_dependent(&self) -> bool {
        self.h_terms.iter().any(|t| matches!(t.profile, TimeProfile::Exp { .. }))
    }

    /// `H(t)` as a single operator.
    pub fn hamiltonian_at(&self, t: f64) -> Result<Operator> {
        let mut h = Operator::zeros(&self.space);
        for term in &self.h_terms {
            h = h.add(&term.op.scale(term.profile.at(t)))?;
        }
        Ok(h)
    }

    /// Largest frequency or rate magnitude: the builder-supplied scale when
    /// present, otherwise a norm bound on the Hamiltonian and dissipators.
    pub fn nu_max(&self) -> f64 {
        if let Some(nu) = self.frequency_scale {
            return nu;
        }
        let mut nu: f64 = 0.0;
        let mut h_bound = 0.0;
        for t in &self.h_terms {
            h_bound += t.profile.magnitude() * t.op.norm_bound();
            if let TimeProfile::Exp { freq } = t.profile {
                nu = nu.max(freq.abs());
            }
        }
        nu = nu.max(h_bound);
        for c in &self.c_terms {
            let oo = c.op.dagger().mul(&c.op).map(|x| x.norm_bound()).unwrap_or(0.0);
            nu = nu.max(c.rate * oo);
        }
        nu
    }

    /// Smallest nonzero collapse rate, or `None` for closed dynamics.
    pub fn slowest_rate(&self) -> Option<f64> {
        self.c_terms.iter().map(|c| c.rate).filter(|&r| r > 0.0).reduce(f64::min)
    }

    pub fn liouvillian(&self) -> Liouvillian {
        Liouvillian::new(self)
    }

    /// `dρ/dt` at time `t`.
    pub fn apply(&self, rho: &DensityMatrix, t: f64) -> Result<DMatrix<C64>> {
        if rho.space() != &self.space {
            return Err(Error::SpaceMismatch);
        }
        let mut out = DMatrix::zeros(self.space.dim(), self.space.dim());
        self.liouvillian().apply_into(rho.matrix(), t, &mut Workspace::new(self.space.dim()), &mut out);
        Ok(out)
    }
}

/// Prepared right-hand side. The static Hamiltonian and the anti-Hermitian
/// dissipative part are folded into one sparse matrix
/// `K = −i(H₀ − (i/2) Σ κ o†o)`, so that `dρ/dt = Kρ + (Kρ)† + …`.
pub struct Liouvillian {
    dim: usize,
    k_static: CsrMatrix,
    rotating: Vec<(CsrMatrix, TimeProfile)>,
    jumps: Vec<(f64, CsrMatrix)>,
}

/// Scratch buffers reused across right-hand-side evaluations.
pub struct Workspace {
    x: DMatrix<C64>,
    y: DMatrix<C64>,
}

impl Workspace {
    pub fn new(dim: usize) -> Self {
        Self { x: DMatrix::zeros(dim, dim), y: DMatrix::zeros(dim, dim) }
    }
}

impl Liouvillian {
    pub fn new(me: &MasterEquation) -> Self {
        let dim = me.space.dim();
        let minus_i = C64::new(0.0, -1.0);
        let mut k = CsrMatrix::zeros(dim, dim);
        let mut rotating = Vec::new();
        for t in &me.h_terms {
            match t.profile {
                TimeProfile::Constant(c) => k = k.add(&t.op.to_sparse().scale(minus_i * c)),
                TimeProfile::Exp { .. } => rotating.push((t.op.to_sparse().scale(minus_i), t.profile)),
            }
        }
        let mut jumps = Vec::new();
        for c in &me.c_terms {
            if c.rate == 0.0 {
                continue;
            }
            let o = c.op.to_sparse();
            let oo = o.adjoint().matmul(&o);
            k = k.add(&oo.scale(C64::new(-0.5 * c.rate, 0.0)));
            jumps.push((c.rate, o));
        }
        Self { dim, k_static: k, rotating, jumps }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `dρ/dt` into `out`. `rho` must be Hermitian.
    pub fn apply_into(&self, rho: &DMatrix<C64>, t: f64, ws: &mut Workspace, out: &mut DMatrix<C64>) {
        let one = C64::new(1.0, 0.0);
        let n = self.dim;
        // ws.x accumulates Tᵀ with T = Kρ + ½ Σ κ oρo†, so that dρ/dt = T + T†.
        ws.x.fill(C64::new(0.0, 0.0));
        self.k_static.mul_hermitian_transposed_acc(one, rho, &mut ws.x);
        for (op, profile) in &self.rotating {
            op.mul_hermitian_transposed_acc(profile.at(t), rho, &mut ws.x);
        }
        for (rate, op) in &self.jumps {
            // (oρo†)ᵀ = conj(o) (oρ)ᵀ
            ws.y.fill(C64::new(0.0, 0.0));
            op.mul_hermitian_transposed_acc(one, rho, &mut ws.y);
            op.conj_mul_dense_acc(C64::new(0.5 * rate, 0.0), &ws.y, &mut ws.x);
        }
        let x = ws.x.as_slice();
        let o = out.as_mut_slice();
        const TILE: usize = 16;
        for jb in (0..n).step_by(TILE) {
            for ib in (0..n).step_by(TILE) {
                for j in jb..(jb + TILE).min(n) {
                    for i in ib..(ib + TILE).min(n) {
                        o[j * n + i] = x[i * n + j] + x[j * n + i].conj();
                    }
                }
            }
        }
    }
}
