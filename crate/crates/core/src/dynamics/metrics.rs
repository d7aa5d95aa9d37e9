use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::hilbert::DensityMatrix;

/// Eigenvalues below this are treated as an invalid (non-PSD) input.
pub const FIDELITY_PSD_TOL: f64 = 1e-6;

/// Relative size below which eigenvalues are rounding noise.
const NOISE_FLOOR: f64 = 1e-14;

fn checked_eigen(m: &DMatrix<C64>) -> Result<SymmetricEigen<C64, nalgebra::Dyn>> {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.min();
    if min < -FIDELITY_PSD_TOL {
        return Err(Error::InvalidState(format!("matrix not positive semidefinite (min eigenvalue {min:.3e})")));
    }
    Ok(eig)
}

fn root_sum(eigenvalues: &nalgebra::DVector<f64>) -> f64 {
    let floor = NOISE_FLOOR * eigenvalues.max().max(0.0);
    eigenvalues.iter().filter(|&&x| x > floor).map(|x| x.sqrt()).sum()
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`. A pure argument reduces this to `⟨ψ|σ|ψ⟩`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    if rho.space() != sigma.space() {
        return Err(Error::SpaceMismatch);
    }
    let er = checked_eigen(rho.matrix())?;
    let es = checked_eigen(sigma.matrix())?;
    for (eig, other) in [(&er, sigma.matrix()), (&es, rho.matrix())] {
        let k = eig.eigenvalues.imax();
        if eig.eigenvalues[k] > 1.0 - 1e-12 {
            let v = eig.eigenvectors.column(k);
            let f = (v.adjoint() * other * v)[(0, 0)].re;
            return Ok(f.clamp(0.0, 1.0));
        }
    }
    let u = &er.eigenvectors;
    let d = DMatrix::from_diagonal(&er.eigenvalues.map(|x| C64::new(x.max(0.0).sqrt(), 0.0)));
    let sr = u * d * u.adjoint();
    let mut m = &sr * sigma.matrix() * &sr;
    m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let root = root_sum(&m.symmetric_eigenvalues());
    Ok((root * root).clamp(0.0, 1.0))
}

/// Traces out every mode not listed in `keep`. The kept modes stay in
/// declaration order regardless of the order of `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: &[&str]) -> Result<DensityMatrix> {
    let space = rho.space();
    for l in keep {
        space.mode_position(l)?;
    }
    let kept_pos: Vec<usize> = (0..space.modes().len()).filter(|&i| keep.contains(&space.modes()[i].label.as_str())).collect();
    let labels: Vec<&str> = kept_pos.iter().map(|&i| space.modes()[i].label.as_str()).collect();
    let sub = space.subspace(&labels)?;
    let n = space.dim();
    let mut out = DMatrix::<C64>::zeros(sub.dim(), sub.dim());
    let occ: Vec<Vec<usize>> = (0..n).map(|i| space.occupations(i)).collect();
    let kept_index = |o: &[usize]| sub.index_of(&kept_pos.iter().map(|&p| o[p]).collect::<Vec<_>>());
    let traced_equal = |a: &[usize], b: &[usize]| (0..a.len()).all(|p| kept_pos.contains(&p) || a[p] == b[p]);
    let m = rho.matrix();
    for i in 0..n {
        let ki = kept_index(&occ[i]);
        for j in 0..n {
            if traced_equal(&occ[i], &occ[j]) {
                out[(ki, kept_index(&occ[j]))] += m[(i, j)];
            }
        }
    }
    DensityMatrix::new_unchecked(&sub, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{coherent_state, HilbertSpace, StateVector};
    use nalgebra::DVector;

    fn c(x: f64) -> C64 {
        C64::new(x, 0.0)
    }

    #[test]
    fn fidelity_of_identical_and_orthogonal_states() {
        let sp = HilbertSpace::new(&[("b", 4)]).unwrap();
        let a = DensityMatrix::fock(&sp, &[0]).unwrap();
        let b = DensityMatrix::fock(&sp, &[1]).unwrap();
        assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-10);
        assert!(fidelity(&a, &b).unwrap().abs() < 1e-10);
        let mixed = DensityMatrix::maximally_mixed(&sp);
        assert!((fidelity(&mixed, &mixed).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn fidelity_vacuum_against_coherent() {
        let sp = HilbertSpace::new(&[("b", 14)]).unwrap();
        let vac = DensityMatrix::fock(&sp, &[0]).unwrap();
        let coh = coherent_state(&sp, "b", c(1.0)).unwrap().to_density();
        let f = fidelity(&vac, &coh).unwrap();
        let overlap = coh.get(0, 0).re;
        assert!((f - overlap).abs() < 1e-10);
        assert!((f - (-1.0f64).exp()).abs() < 1e-6);
        assert!((fidelity(&coh, &vac).unwrap() - f).abs() < 1e-10);
    }

    #[test]
    fn fidelity_pure_versus_mixed_is_overlap() {
        let sp = HilbertSpace::new(&[("q", 2)]).unwrap();
        let plus = StateVector::new(&sp, DVector::from_vec(vec![c(1.0), c(1.0)])).unwrap().to_density();
        let m = DensityMatrix::new(&sp, DMatrix::from_row_slice(2, 2, &[c(0.7), c(0.1), c(0.1), c(0.3)])).unwrap();
        // <+|σ|+> = (0.7 + 0.3 + 0.2)/2
        assert!((fidelity(&plus, &m).unwrap() - 0.6).abs() < 1e-9);
    }

    #[test]
    fn fidelity_rejects_non_psd() {
        let sp = HilbertSpace::new(&[("q", 2)]).unwrap();
        let bad = DensityMatrix::new_unchecked(&sp, DMatrix::from_row_slice(2, 2, &[c(1.1), c(0.0), c(0.0), c(-0.1)])).unwrap();
        let ok = DensityMatrix::fock(&sp, &[0]).unwrap();
        assert!(fidelity(&bad, &ok).is_err());
    }

    #[test]
    fn partial_trace_of_product_and_bell_states() {
        let sp = HilbertSpace::new(&[("p", 2), ("b", 3)]).unwrap();
        let pb = DensityMatrix::new(
            &HilbertSpace::new(&[("b", 3)]).unwrap(),
            DMatrix::from_row_slice(3, 3, &[c(0.5), c(0.1), c(0.0), c(0.1), c(0.3), c(0.0), c(0.0), c(0.0), c(0.2)]),
        )
        .unwrap();
        let p0 = DensityMatrix::fock(&HilbertSpace::new(&[("p", 2)]).unwrap(), &[0]).unwrap();
        let prod = DensityMatrix::product(&sp, &[&p0, &pb]).unwrap();
        let red = partial_trace(&prod, &["b"]).unwrap();
        assert!(crate::hilbert::max_abs(&(red.matrix() - pb.matrix())) < 1e-14);
        assert!((red.trace().re - 1.0).abs() < 1e-10);

        let q2 = HilbertSpace::new(&[("x", 2), ("y", 2)]).unwrap();
        let bell = StateVector::new(&q2, DVector::from_vec(vec![c(1.0), c(0.0), c(0.0), c(1.0)])).unwrap().to_density();
        let r = partial_trace(&bell, &["y"]).unwrap();
        let want = DMatrix::from_diagonal_element(2, 2, c(0.5));
        assert!(crate::hilbert::max_abs(&(r.matrix() - want)) < 1e-14);
        assert!(partial_trace(&bell, &["z"]).is_err());
    }
}
