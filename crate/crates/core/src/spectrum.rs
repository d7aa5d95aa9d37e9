//! Lab-frame level diagrams versus pump frequency and avoided-crossing
//! extraction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{derive, lab_hamiltonian, ModelParams, Truncations};
use crate::hilbert::Operator;

/// Relative Hermiticity tolerance accepted by the eigensolver.
pub const HERMITIAN_INPUT_TOL: f64 = 1e-10;

/// Truncations used for level scans.
pub const SCAN_TRUNCATIONS: Truncations = Truncations { dim_p: 2, dim_s: 4, dim_b: 4 };

/// Sorted indices of the hybridizing pair `|10⟩|0⟩`, `|00⟩|2⟩` near `ω_p = 2ω_q`.
pub const CROSSING_PAIR: (usize, usize) = (3, 4);

fn check_hermitian(h: &Operator) -> Result<()> {
    let err = h.hermiticity_error();
    if err > HERMITIAN_INPUT_TOL * h.max_abs().max(1.0) {
        return Err(Error::NonHermitian(err));
    }
    Ok(())
}

/// Full eigendecomposition with eigenvalues ascending and eigenvectors as
/// matching columns.
pub fn eigensystem(h: &Operator) -> Result<(Vec<f64>, DMatrix<C64>)> {
    check_hermitian(h)?;
    let d = h.to_dense();
    let d = (&d + d.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(d);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    Ok((values, vectors))
}

/// The `k` smallest eigenvalues, ascending.
pub fn eigenenergies(h: &Operator, k: usize) -> Result<Vec<f64>> {
    if k > h.dim() {
        return Err(Error::InvalidParameter(format!("{k} levels requested from a {}-dimensional space", h.dim())));
    }
    let (mut v, _) = eigensystem(h)?;
    v.truncate(k);
    Ok(v)
}

#[derive(Clone, Debug)]
pub struct SpectrumScan {
    pub omega_p_values: Vec<f64>,
    /// `levels[point][i]`: i-th lowest level relative to the ground level.
    pub levels: Vec<Vec<f64>>,
    /// Level curves continued through crossings by eigenvector overlap;
    /// `tracked[point][c]` is the energy of curve `c`.
    pub tracked: Vec<Vec<f64>>,
    pub params: ModelParams,
    pub truncations: Truncations,
}

impl SpectrumScan {
    pub fn points(&self) -> usize {
        self.omega_p_values.len()
    }

    pub fn gap_series(&self, pair: (usize, usize)) -> Vec<f64> {
        self.levels.iter().map(|l| l[pair.1] - l[pair.0]).collect()
    }
}

struct PointResult {
    levels: Vec<f64>,
    vectors: DMatrix<C64>,
}

fn diagonalize_at(params: &ModelParams, wp: f64, t: &Truncations, k: usize) -> Result<PointResult> {
    let h = lab_hamiltonian(params, wp, t)?;
    let (v, vecs) = eigensystem(&h)?;
    let e0 = v[0];
    Ok(PointResult { levels: v[..k].iter().map(|e| e - e0).collect(), vectors: vecs.columns(0, k).into_owned() })
}

/// Diagonalizes the lab-frame Hamiltonian at `points` evenly spaced pump
/// frequencies in `[wp_min, wp_max]` and keeps the `k` lowest levels.
pub fn scan_pump_frequency(
    params: &ModelParams,
    wp_min: f64,
    wp_max: f64,
    points: usize,
    k: usize,
    truncations: &Truncations,
) -> Result<SpectrumScan> {
    if !(wp_min < wp_max) || !wp_min.is_finite() || !wp_max.is_finite() {
        return Err(Error::InvalidParameter(format!("empty pump window [{wp_min}, {wp_max}]")));
    }
    if points < 2 {
        return Err(Error::InvalidParameter("a scan needs at least 2 points".into()));
    }
    if k < 4 {
        return Err(Error::InvalidParameter("a scan needs at least 4 levels".into()));
    }
    let dim = truncations.dim_p * truncations.dim_s * truncations.dim_b;
    if k > dim {
        return Err(Error::InvalidParameter(format!("{k} levels exceed the truncated dimension {dim}")));
    }
    let grid: Vec<f64> = (0..points).map(|i| wp_min + (wp_max - wp_min) * i as f64 / (points - 1) as f64).collect();
    let results: Vec<PointResult> =
        grid.par_iter().map(|&wp| diagonalize_at(params, wp, truncations, k)).collect::<Result<_>>()?;
    let tracked = track(&results);
    Ok(SpectrumScan {
        omega_p_values: grid,
        levels: results.iter().map(|r| r.levels.clone()).collect(),
        tracked,
        params: params.clone(),
        truncations: *truncations,
    })
}

/// Greedy maximum-overlap assignment of each new eigenvector to a curve.
fn track(results: &[PointResult]) -> Vec<Vec<f64>> {
    let k = results[0].levels.len();
    let mut out = vec![results[0].levels.clone()];
    let mut prev_vecs: Vec<DVector<C64>> = (0..k).map(|c| results[0].vectors.column(c).into_owned()).collect();
    for r in &results[1..] {
        let mut overlaps = Vec::with_capacity(k * k);
        for (c, pv) in prev_vecs.iter().enumerate() {
            for i in 0..k {
                overlaps.push((pv.dotc(&r.vectors.column(i)).norm_sqr(), c, i));
            }
        }
        overlaps.sort_by(|a, b| b.0.total_cmp(&a.0));
        let mut curve_of = vec![usize::MAX; k];
        let mut taken = vec![false; k];
        for (_, c, i) in overlaps {
            if curve_of[i] == usize::MAX && !taken[c] {
                curve_of[i] = c;
                taken[c] = true;
            }
        }
        let mut row = vec![0.0; k];
        for i in 0..k {
            row[curve_of[i]] = r.levels[i];
            prev_vecs[curve_of[i]] = r.vectors.column(i).into_owned();
        }
        out.push(row);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crossing {
    pub omega_p_star: f64,
    pub gap: f64,
    /// `|⟨10,0|ψ⟩|²` and `|⟨00,2|ψ⟩|²` for each member of the pair at the minimum.
    pub overlaps: [[f64; 2]; 2],
}

const GOLDEN_TOL: f64 = 1e-12;

/// Locates the minimum separation of the sorted level pair `pair` and
/// refines it on the continuous pump axis by golden-section search.
pub fn avoided_crossing(scan: &SpectrumScan, pair: (usize, usize)) -> Result<Crossing> {
    let k = scan.levels[0].len();
    if pair.1 != pair.0 + 1 || pair.1 >= k {
        return Err(Error::InvalidParameter(format!("level pair {pair:?} must be adjacent and below {k}")));
    }
    let gaps = scan.gap_series(pair);
    let (m, _) = gaps.iter().enumerate().fold((0, f64::INFINITY), |acc, (i, &g)| if g < acc.1 { (i, g) } else { acc });
    if m == 0 || m == gaps.len() - 1 {
        return Err(Error::NoCrossing);
    }
    let t = scan.truncations;
    let gap_at = |wp: f64| -> Result<f64> {
        let r = diagonalize_at(&scan.params, wp, &t, pair.1 + 1)?;
        Ok(r.levels[pair.1] - r.levels[pair.0])
    };
    let invphi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (scan.omega_p_values[m - 1], scan.omega_p_values[m + 1]);
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut fc, mut fd) = (gap_at(c)?, gap_at(d)?);
    while (b - a).abs() > GOLDEN_TOL {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = gap_at(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = gap_at(d)?;
        }
    }
    let star = 0.5 * (a + b);
    let r = diagonalize_at(&scan.params, star, &t, pair.1 + 1)?;
    let sp = crate::model::ModelTier::Full.space(&t)?;
    let pump = sp.index_of(&[1, 0, 0]);
    let two = sp.index_of(&[0, 0, 2]);
    let mut overlaps = [[0.0; 2]; 2];
    for (row, lvl) in [pair.0, pair.1].into_iter().enumerate() {
        overlaps[row] = [r.vectors[(pump, lvl)].norm_sqr(), r.vectors[(two, lvl)].norm_sqr()];
    }
    Ok(Crossing { omega_p_star: star, gap: r.levels[pair.1] - r.levels[pair.0], overlaps })
}

/// Scan window of half-width `half_width` centred on the predicted crossing `2ω_q + δ`.
pub fn predicted_window(params: &ModelParams, half_width: f64) -> Result<(f64, f64)> {
    let d = derive(params)?;
    let centre = 2.0 * params.omega_q + d.delta;
    Ok((centre - half_width, centre + half_width))
}

/// Scan plus refinement around the predicted crossing of [`CROSSING_PAIR`].
pub fn find_crossing(params: &ModelParams, half_width: f64, points: usize) -> Result<Crossing> {
    let (lo, hi) = predicted_window(params, half_width)?;
    let scan = scan_pump_frequency(params, lo, hi, points, CROSSING_PAIR.1 + 1, &SCAN_TRUNCATIONS)?;
    avoided_crossing(&scan, CROSSING_PAIR)
}
