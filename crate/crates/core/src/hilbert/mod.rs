//! Truncated bosonic Fock spaces: composite spaces, operators and states.
//!
//! Basis indexing is row-major over the declaration order of the modes, so
//! the last declared mode varies fastest.

mod sparse;

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

pub use sparse::CsrMatrix;

use crate::error::{Error, Result};

/// Poisson mass allowed above the truncation of a coherent state.
pub const COHERENT_TAIL_BOUND: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mode {
    pub label: String,
    pub dim: usize,
}

/// Ordered list of truncated bosonic modes.
#[derive(Clone, PartialEq, Eq)]
pub struct HilbertSpace {
    modes: Arc<[Mode]>,
}

impl fmt::Debug for HilbertSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.modes.iter().map(|m| format!("{}:{}", m.label, m.dim)).collect();
        write!(f, "HilbertSpace[{}]", parts.join(" ⊗ "))
    }
}

impl HilbertSpace {
    /// Builds a composite space from `(label, dim)` pairs, in tensor order.
    pub fn new<S: AsRef<str>>(specs: &[(S, usize)]) -> Result<Self> {
        let mut modes: Vec<Mode> = Vec::with_capacity(specs.len());
        for (label, dim) in specs {
            let label = label.as_ref();
            if modes.iter().any(|m| m.label == label) {
                return Err(Error::DuplicateLabel(label.to_string()));
            }
            if *dim < 2 {
                return Err(Error::DimensionTooSmall { label: label.to_string(), dim: *dim });
            }
            modes.push(Mode { label: label.to_string(), dim: *dim });
        }
        if modes.is_empty() {
            return Err(Error::InvalidParameter("a Hilbert space needs at least one mode".into()));
        }
        Ok(Self { modes: modes.into() })
    }

    pub fn dim(&self) -> usize {
        self.modes.iter().map(|m| m.dim).product()
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode_position(&self, label: &str) -> Result<usize> {
        self.modes
            .iter()
            .position(|m| m.label == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn mode_dim(&self, label: &str) -> Result<usize> {
        Ok(self.modes[self.mode_position(label)?].dim)
    }

    pub fn has_mode(&self, label: &str) -> bool {
        self.modes.iter().any(|m| m.label == label)
    }

    /// Flat basis index of an occupation-number tuple.
    pub fn index_of(&self, occupations: &[usize]) -> usize {
        assert_eq!(occupations.len(), self.modes.len());
        occupations.iter().zip(self.modes.iter()).fold(0, |acc, (&n, m)| {
            assert!(n < m.dim, "occupation {n} exceeds truncation of mode `{}`", m.label);
            acc * m.dim + n
        })
    }

    /// Occupation-number tuple of a flat basis index.
    pub fn occupations(&self, mut index: usize) -> Vec<usize> {
        let mut occ = vec![0; self.modes.len()];
        for (slot, m) in occ.iter_mut().zip(self.modes.iter()).rev() {
            *slot = index % m.dim;
            index /= m.dim;
        }
        occ
    }

    /// Sub-space made of the listed modes, kept in this space's order.
    pub fn subspace(&self, labels: &[&str]) -> Result<Self> {
        for l in labels {
            self.mode_position(l)?;
        }
        let kept: Vec<(String, usize)> = self
            .modes
            .iter()
            .filter(|m| labels.contains(&m.label.as_str()))
            .map(|m| (m.label.clone(), m.dim))
            .collect();
        Self::new(&kept)
    }

    /// Lifts a single-mode matrix to the full space by identity-tensoring.
    fn embed(&self, label: &str, local: &CsrMatrix) -> Result<CsrMatrix> {
        let pos = self.mode_position(label)?;
        let left: usize = self.modes[..pos].iter().map(|m| m.dim).product();
        let right: usize = self.modes[pos + 1..].iter().map(|m| m.dim).product();
        Ok(CsrMatrix::identity(left).kron(local).kron(&CsrMatrix::identity(right)))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Storage {
    Sparse(CsrMatrix),
    Dense(DMatrix<C64>),
}

/// Complex matrix on a [`HilbertSpace`].
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: HilbertSpace,
    storage: Storage,
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

impl Operator {
    pub fn from_sparse(space: &HilbertSpace, m: CsrMatrix) -> Result<Self> {
        let d = space.dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::InvalidParameter(format!(
                "operator shape {}x{} does not match space dimension {d}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self { space: space.clone(), storage: Storage::Sparse(m) })
    }

    pub fn from_dense(space: &HilbertSpace, m: DMatrix<C64>) -> Result<Self> {
        let d = space.dim();
        if m.nrows() != d || m.ncols() != d {
            return Err(Error::InvalidParameter(format!(
                "operator shape {}x{} does not match space dimension {d}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Self { space: space.clone(), storage: Storage::Dense(m) })
    }

    pub fn from_triplets(space: &HilbertSpace, triplets: Vec<(usize, usize, C64)>) -> Result<Self> {
        let d = space.dim();
        if let Some(&(r, col, _)) = triplets.iter().find(|t| t.0 >= d || t.1 >= d) {
            return Err(Error::IndexOutOfRange { index: r.max(col), dim: d });
        }
        Self::from_sparse(space, CsrMatrix::from_triplets(d, d, triplets))
    }

    pub fn zeros(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Self { space: space.clone(), storage: Storage::Sparse(CsrMatrix::zeros(d, d)) }
    }

    pub fn identity(space: &HilbertSpace) -> Self {
        Self { space: space.clone(), storage: Storage::Sparse(CsrMatrix::identity(space.dim())) }
    }

    /// `|i⟩⟨j|` in the flat basis.
    pub fn outer_basis(space: &HilbertSpace, i: usize, j: usize) -> Result<Self> {
        Self::from_triplets(space, vec![(i, j, c(1.0))])
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self.storage, Storage::Sparse(_))
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        match &self.storage {
            Storage::Sparse(m) => m.get(i, j),
            Storage::Dense(m) => m[(i, j)],
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match &self.storage {
            Storage::Sparse(m) => m.to_dense(),
            Storage::Dense(m) => m.clone(),
        }
    }

    pub fn to_sparse(&self) -> CsrMatrix {
        match &self.storage {
            Storage::Sparse(m) => m.clone(),
            Storage::Dense(m) => CsrMatrix::from_dense(m),
        }
    }

    /// Same operator with the other storage layout.
    pub fn densified(&self) -> Self {
        Self { space: self.space.clone(), storage: Storage::Dense(self.to_dense()) }
    }

    fn check(&self, other: &Self) -> Result<()> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(())
    }

    pub fn dagger(&self) -> Self {
        let storage = match &self.storage {
            Storage::Sparse(m) => Storage::Sparse(m.adjoint()),
            Storage::Dense(m) => Storage::Dense(m.adjoint()),
        };
        Self { space: self.space.clone(), storage }
    }

    pub fn scale(&self, s: C64) -> Self {
        let storage = match &self.storage {
            Storage::Sparse(m) => Storage::Sparse(m.scale(s)),
            Storage::Dense(m) => Storage::Dense(m * s),
        };
        Self { space: self.space.clone(), storage }
    }

    pub fn scale_re(&self, s: f64) -> Self {
        self.scale(c(s))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let storage = match (&self.storage, &other.storage) {
            (Storage::Sparse(a), Storage::Sparse(b)) => Storage::Sparse(a.add(b)),
            _ => Storage::Dense(self.to_dense() + other.to_dense()),
        };
        Ok(Self { space: self.space.clone(), storage })
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add(&other.scale_re(-1.0))
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.check(other)?;
        let storage = match (&self.storage, &other.storage) {
            (Storage::Sparse(a), Storage::Sparse(b)) => Storage::Sparse(a.matmul(b)),
            _ => Storage::Dense(self.to_dense() * other.to_dense()),
        };
        Ok(Self { space: self.space.clone(), storage })
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &Self) -> Result<Self> {
        self.mul(other)?.sub(&other.mul(self)?)
    }

    pub fn powi(&self, n: u32) -> Result<Self> {
        let mut out = Self::identity(&self.space);
        for _ in 0..n {
            out = out.mul(self)?;
        }
        Ok(out)
    }

    /// Largest elementwise modulus.
    pub fn max_abs(&self) -> f64 {
        match &self.storage {
            Storage::Sparse(m) => m.max_abs(),
            Storage::Dense(m) => m.iter().map(|v| v.norm()).fold(0.0, f64::max),
        }
    }

    /// Elementwise max deviation from another operator.
    pub fn max_diff(&self, other: &Self) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn hermiticity_error(&self) -> f64 {
        self.sub(&self.dagger()).map(|d| d.max_abs()).unwrap_or(f64::INFINITY)
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        self.hermiticity_error() <= tol
    }

    pub fn apply(&self, psi: &StateVector) -> Result<StateVector> {
        if self.space != psi.space {
            return Err(Error::SpaceMismatch);
        }
        let out = match &self.storage {
            Storage::Sparse(m) => DVector::from_vec(m.mul_vec(psi.amplitudes.as_slice())),
            Storage::Dense(m) => m * &psi.amplitudes,
        };
        Ok(StateVector { space: self.space.clone(), amplitudes: out })
    }

    /// Bound on the spectral radius (largest absolute row sum).
    pub fn norm_bound(&self) -> f64 {
        match &self.storage {
            Storage::Sparse(m) => m.max_row_sum(),
            Storage::Dense(m) => {
                (0..m.nrows()).map(|r| m.row(r).iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
            }
        }
    }
}

/// Lowering operator of mode `label`, `⟨n−1|a|n⟩ = √n`.
pub fn annihilation(space: &HilbertSpace, label: &str) -> Result<Operator> {
    let d = space.mode_dim(label)?;
    let local = CsrMatrix::from_triplets(d, d, (1..d).map(|n| (n - 1, n, c((n as f64).sqrt()))).collect());
    Operator::from_sparse(space, space.embed(label, &local)?)
}

pub fn creation(space: &HilbertSpace, label: &str) -> Result<Operator> {
    Ok(annihilation(space, label)?.dagger())
}

pub fn number(space: &HilbertSpace, label: &str) -> Result<Operator> {
    let d = space.mode_dim(label)?;
    let local = CsrMatrix::from_triplets(d, d, (0..d).map(|n| (n, n, c(n as f64))).collect());
    Operator::from_sparse(space, space.embed(label, &local)?)
}

/// `exp(iπ n̂)` on mode `label`: `(−1)^n` on the diagonal.
pub fn parity_operator(space: &HilbertSpace, label: &str) -> Result<Operator> {
    let d = space.mode_dim(label)?;
    let local = CsrMatrix::from_triplets(
        d,
        d,
        (0..d).map(|n| (n, n, c(if n % 2 == 0 { 1.0 } else { -1.0 }))).collect(),
    );
    Operator::from_sparse(space, space.embed(label, &local)?)
}

/// Embeds an arbitrary single-mode matrix on mode `label`.
pub fn local_operator(space: &HilbertSpace, label: &str, local: &DMatrix<C64>) -> Result<Operator> {
    let d = space.mode_dim(label)?;
    if local.nrows() != d || local.ncols() != d {
        return Err(Error::InvalidParameter(format!("local matrix must be {d}x{d}")));
    }
    Operator::from_sparse(space, space.embed(label, &CsrMatrix::from_dense(local))?)
}

/// Normalized pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    space: HilbertSpace,
    amplitudes: DVector<C64>,
}

impl StateVector {
    /// Normalizes the given amplitudes; fails on a zero vector.
    pub fn new(space: &HilbertSpace, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != space.dim() {
            return Err(Error::InvalidState(format!(
                "{} amplitudes for a space of dimension {}",
                amplitudes.len(),
                space.dim()
            )));
        }
        let norm = amplitudes.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::InvalidState("state vector has zero or non-finite norm".into()));
        }
        Ok(Self { space: space.clone(), amplitudes: amplitudes / c(norm) })
    }

    pub fn basis(space: &HilbertSpace, index: usize) -> Result<Self> {
        let d = space.dim();
        if index >= d {
            return Err(Error::IndexOutOfRange { index, dim: d });
        }
        let mut v = DVector::zeros(d);
        v[index] = c(1.0);
        Ok(Self { space: space.clone(), amplitudes: v })
    }

    /// Fock state given by per-mode occupations.
    pub fn fock(space: &HilbertSpace, occupations: &[usize]) -> Result<Self> {
        if occupations.len() != space.modes().len() {
            return Err(Error::InvalidState("one occupation per mode required".into()));
        }
        for (n, m) in occupations.iter().zip(space.modes()) {
            if *n >= m.dim {
                return Err(Error::IndexOutOfRange { index: *n, dim: m.dim });
            }
        }
        Self::basis(space, space.index_of(occupations))
    }

    /// Tensor product of per-mode amplitude vectors, in the space's mode order.
    pub fn product(space: &HilbertSpace, factors: &[DVector<C64>]) -> Result<Self> {
        if factors.len() != space.modes().len() {
            return Err(Error::InvalidState("one factor per mode required".into()));
        }
        let mut v = DVector::from_element(1, c(1.0));
        for (f, m) in factors.iter().zip(space.modes()) {
            if f.len() != m.dim {
                return Err(Error::InvalidState(format!("factor for `{}` has wrong length", m.label)));
            }
            v = v.kronecker(f);
        }
        Self::new(space, v)
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    pub fn inner(&self, other: &Self) -> Result<C64> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch);
        }
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }

    pub fn to_density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix { space: self.space.clone(), matrix: m }
    }
}

/// Truncated coherent-state amplitudes `e^{−|α|²/2} αⁿ/√(n!)`, not renormalized.
pub fn coherent_amplitudes(alpha: C64, dim: usize) -> Vec<C64> {
    let pref = (-alpha.norm_sqr() / 2.0).exp();
    let mut out = Vec::with_capacity(dim);
    let mut term = c(pref);
    for n in 0..dim {
        if n > 0 {
            term = term * alpha / c((n as f64).sqrt());
        }
        out.push(term);
    }
    out
}

/// Poisson weight of occupations `≥ dim` for mean `|α|²`.
pub fn coherent_tail(alpha: C64, dim: usize) -> f64 {
    let lam = alpha.norm_sqr();
    if lam == 0.0 {
        return 0.0;
    }
    // log p_n = -lam + n ln lam - ln n!
    let mut log_p = -lam;
    for n in 1..=dim {
        log_p += lam.ln() - (n as f64).ln();
    }
    let mut tail = 0.0;
    let mut n = dim;
    loop {
        let p = log_p.exp();
        tail += p;
        n += 1;
        log_p += lam.ln() - (n as f64).ln();
        if (n as f64) > lam && p < 1e-18 * tail.max(1e-300) {
            break;
        }
        if n > dim + 10_000 {
            break;
        }
    }
    tail
}

/// Smallest truncation holding `coherent(alpha)` within the tail bound.
pub fn min_coherent_dim(alpha: C64) -> usize {
    let mut d = 2;
    while coherent_tail(alpha, d) > COHERENT_TAIL_BOUND {
        d += 1;
    }
    d
}

/// Coherent state `|α⟩` on mode `label`, vacuum on every other mode.
pub fn coherent_state(space: &HilbertSpace, label: &str, alpha: C64) -> Result<StateVector> {
    let pos = space.mode_position(label)?;
    let d = space.modes()[pos].dim;
    let tail = coherent_tail(alpha, d);
    if tail > COHERENT_TAIL_BOUND {
        return Err(Error::TruncationTooSmall { alpha: alpha.norm(), dim: d, tail });
    }
    let factors: Vec<DVector<C64>> = space
        .modes()
        .iter()
        .enumerate()
        .map(|(i, m)| {
            if i == pos {
                DVector::from_vec(coherent_amplitudes(alpha, d))
            } else {
                let mut v = DVector::zeros(m.dim);
                v[0] = c(1.0);
                v
            }
        })
        .collect();
    StateVector::product(space, &factors)
}

/// Tolerances for [`DensityMatrix::new`].
pub const TRACE_TOL: f64 = 1e-10;
pub const HERMITIAN_TOL: f64 = 1e-12;
pub const PSD_TOL: f64 = 1e-8;

/// Hermitian, unit-trace, positive semidefinite state.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    space: HilbertSpace,
    matrix: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validates trace, Hermiticity and positivity.
    pub fn new(space: &HilbertSpace, matrix: DMatrix<C64>) -> Result<Self> {
        let rho = Self::new_unchecked(space, matrix)?;
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let herm = rho.hermiticity_error();
        if herm > HERMITIAN_TOL {
            return Err(Error::InvalidState(format!("not Hermitian (deviation {herm:.3e})")));
        }
        let min = rho.min_eigenvalue();
        if min < -PSD_TOL {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:.3e}")));
        }
        Ok(rho)
    }

    /// Only checks the shape. Used for intermediate integrator states whose
    /// trace and positivity are diagnostics rather than preconditions.
    pub fn new_unchecked(space: &HilbertSpace, matrix: DMatrix<C64>) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::InvalidState(format!(
                "matrix {}x{} does not match space dimension {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { space: space.clone(), matrix })
    }

    pub fn basis(space: &HilbertSpace, index: usize) -> Result<Self> {
        Ok(StateVector::basis(space, index)?.to_density())
    }

    pub fn fock(space: &HilbertSpace, occupations: &[usize]) -> Result<Self> {
        Ok(StateVector::fock(space, occupations)?.to_density())
    }

    pub fn maximally_mixed(space: &HilbertSpace) -> Self {
        let d = space.dim();
        Self { space: space.clone(), matrix: DMatrix::identity(d, d) * c(1.0 / d as f64) }
    }

    /// `ρ_a ⊗ ρ_b ⊗ …` over the modes of `space`, in order.
    pub fn product(space: &HilbertSpace, factors: &[&DensityMatrix]) -> Result<Self> {
        if factors.len() != space.modes().len() {
            return Err(Error::InvalidState("one factor per mode required".into()));
        }
        let mut m = DMatrix::from_element(1, 1, c(1.0));
        for (f, mode) in factors.iter().zip(space.modes()) {
            if f.dim() != mode.dim {
                return Err(Error::InvalidState(format!("factor for `{}` has wrong dimension", mode.label)));
            }
            m = m.kronecker(&f.matrix);
        }
        Self::new_unchecked(space, m)
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn get(&self, i: usize, j: usize) -> C64 {
        self.matrix[(i, j)]
    }

    pub fn trace(&self) -> C64 {
        self.matrix.trace()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst: f64 = 0.0;
        for j in 0..d {
            for i in 0..=j {
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the Hermitian part.
    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().into_iter().fold(f64::INFINITY, f64::min)
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.matrix + self.matrix.adjoint()) * c(0.5);
        h.symmetric_eigenvalues().iter().copied().collect()
    }

    pub fn purity(&self) -> f64 {
        (&self.matrix * &self.matrix).trace().re
    }
}

/// Largest elementwise modulus of a dense matrix.
pub fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|v| v.norm()).fold(0.0, f64::max)
}

/// `Tr[op · ρ]`.
pub fn expectation(rho: &DensityMatrix, op: &Operator) -> Result<C64> {
    if rho.space != op.space {
        return Err(Error::SpaceMismatch);
    }
    let m = &rho.matrix;
    Ok(match &op.storage {
        Storage::Sparse(s) => s.iter().map(|(i, j, v)| v * m[(j, i)]).sum(),
        Storage::Dense(d) => (d * m).trace(),
    })
}
