//! End-to-end checks of the stabilization scheme. Each criterion prints one
//! PASS/FAIL line; the process fails if any criterion fails.

use std::time::Instant;

use ensq::broadening::{mean_std, phase_linearity, run_seeds};
use ensq::dynamics::{evolve_with, CollapseTerm, Diagnostics, HamiltonianTerm, IntegratorConfig, MasterEquation};
use ensq::effective::{fit_rabi, rabi_experiment, stabilization_experiment};
use ensq::hilbert::{annihilation, coherent_state, number, HilbertSpace};
use ensq::manifold::{coherent_coeffs, pi00, pi01, random_state, steady_coeffs};
use ensq::model::{build_adiabatic, derive, ModelParams, ModelTier, Truncations, ENSEMBLE};
use ensq::spectrum::find_crossing;
use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn grid(t_end: f64, points: usize) -> Vec<f64> {
    (0..points).map(|i| t_end * i as f64 / (points - 1) as f64).collect()
}

struct Hygiene {
    runs: Vec<(String, Diagnostics)>,
}

impl Hygiene {
    fn record(&mut self, label: impl Into<String>, d: &Diagnostics) {
        self.runs.push((label.into(), d.clone()));
    }
}

fn conserved_quantities(h: &mut Hygiene) -> Outcome {
    let dim = 12;
    let p = ModelParams::default().with_truncations(Truncations { dim_b: dim, ..Truncations::default() });
    let d = derive(&p).unwrap();
    let me = build_adiabatic(&p).unwrap();
    let ops = [pi00(dim).unwrap().to_dense(), pi01(dim).unwrap().to_dense()];
    let times = grid(20.0 / d.kappa_2at, 41);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut drift: f64 = 0.0;
    let mut diag = Diagnostics::default();
    for _ in 0..20 {
        let rho0 = random_state(me.space(), &mut rng).unwrap();
        let v0: Vec<C64> = ops.iter().map(|o| (o * rho0.matrix()).trace()).collect();
        let dg = evolve_with(&me, &rho0, &times, &IntegratorConfig::rk45(), |_, rho| {
            for (o, v) in ops.iter().zip(&v0) {
                drift = drift.max(((o * rho).trace() - v).norm());
            }
            Ok(())
        })
        .unwrap();
        diag.merge(&dg);
    }
    h.record("conserved", &diag);
    (drift <= 1e-6, format!("max drift of <Pi00>, <Pi01> over 20 states = {drift:.2e} (<= 1e-6)"))
}

fn steady_states(h: &mut Hygiene) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for alpha in [0.5, 1.0, 2.0] {
        let t = Truncations::for_alpha(alpha);
        let p = ModelParams::default().with_truncations(t);
        let d = derive(&p).unwrap();
        let me = build_adiabatic(&p).unwrap();
        let rho0 = coherent_state(me.space(), ENSEMBLE, c(alpha)).unwrap().to_density();
        let mut last = None;
        let dg = evolve_with(&me, &rho0, &[0.0, 40.0 / d.kappa_2at], &IntegratorConfig::rk45(), |_, rho| {
            last = Some(rho.clone());
            Ok(())
        })
        .unwrap();
        h.record(format!("steady alpha={alpha}"), &dg);
        let fin = last.unwrap();
        let predicted = coherent_coeffs(c(alpha)).state(t.dim_b).unwrap();
        let err = (&fin - predicted.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        ok &= err <= 1e-3;
        if alpha == 1.0 {
            let sc = steady_coeffs(&ensq::hilbert::DensityMatrix::new(me.space(), fin).unwrap()).unwrap();
            let c00_ok = (sc.c00 - 0.567668).abs() <= 1e-3;
            let c01_ok = (sc.c01.norm() - 0.46576).abs() <= 1e-3;
            ok &= c00_ok && c01_ok;
            parts.push(format!("c00(1) = {:.6}, |c01(1)| = {:.6}", sc.c00, sc.c01.norm()));
        }
        parts.push(format!("alpha={alpha}: max entry error {err:.1e}"));
    }
    (ok, format!("{} (<= 1e-3)", parts.join("; ")))
}

fn avoided_crossing() -> Outcome {
    let p = ModelParams::default();
    let d = derive(&p).unwrap();
    let x = find_crossing(&p, 0.05, 201).unwrap();
    let gap = x.gap / d.chi;
    let target = 2.0 * 2f64.sqrt();
    let predicted = 2.0 * p.omega_q + d.delta;
    let gap_ok = (gap - target).abs() <= 0.05 * target;
    let pos_ok = (x.omega_p_star - predicted).abs() <= 0.002 * p.omega_q;
    (
        gap_ok && pos_ok,
        format!(
            "gap = {gap:.4} chi (2 sqrt2 = {target:.4}, 5%); omega_p* = {:.6} vs {predicted:.6} (0.002)",
            x.omega_p_star
        ),
    )
}

fn monotone_after(eta: &[f64], start: usize) -> bool {
    eta[start..].windows(2).all(|w| w[1] <= w[0] + 1e-9)
}

fn stabilization(h: &mut Hygiene) -> Outcome {
    let cfg = IntegratorConfig::default();
    let full_t = Truncations::for_alpha(1.0);
    let full_t_ok = full_t == Truncations { dim_p: 3, dim_s: 4, dim_b: 10 };
    let p = ModelParams::default().with_truncations(full_t);
    let start = Instant::now();
    let full = stabilization_experiment(&p, c(1.0), &[ModelTier::Full], 2.0, 21, &cfg).unwrap();
    let fs = full.get(ModelTier::Full).unwrap();
    h.record("stabilize full alpha=1", &fs.diagnostics);
    let full_eta = *fs.eta.last().unwrap();
    let full_secs = start.elapsed().as_secs_f64();
    let mut ok = full_t_ok && full_eta < 0.1;
    let mut parts = vec![format!("full alpha=1 {:?}: eta = {full_eta:.4} ({full_secs:.0} s)", (full_t.dim_p, full_t.dim_s, full_t.dim_b))];

    let start = Instant::now();
    for (alpha, dim_p) in [(1.0, 4), (2.0, 6), (3.0, 8)] {
        let t = Truncations { dim_p, ..Truncations::for_alpha(alpha) };
        let p = ModelParams::default().with_truncations(t);
        let r = stabilization_experiment(&p, c(alpha), &[ModelTier::TimeAveraged], 2.0, 101, &cfg).unwrap();
        let s = r.get(ModelTier::TimeAveraged).unwrap();
        h.record(format!("stabilize timeaveraged alpha={alpha}"), &s.diagnostics);
        let eta = *s.eta.last().unwrap();
        // transient: first 0.2/chi
        let mono = monotone_after(&s.eta, 10);
        ok &= eta < 0.1 && mono;
        parts.push(format!("timeaveraged alpha={alpha}: eta = {eta:.4}{}", if mono { "" } else { " not monotone" }));
    }
    parts.push(format!("({:.0} s)", start.elapsed().as_secs_f64()));
    (ok, format!("{} (< 0.1)", parts.join("; ")))
}

fn rabi(h: &mut Hygiene) -> Outcome {
    let p = ModelParams::default();
    let d = derive(&p).unwrap();
    let r = rabi_experiment(&p, &[ModelTier::Adiabatic, ModelTier::Qubit], 200.0, 2001, &IntegratorConfig::default()).unwrap();
    let a = r.get(ModelTier::Adiabatic).unwrap();
    let q = r.get(ModelTier::Qubit).unwrap();
    h.record("rabi adiabatic", &a.diagnostics);
    h.record("rabi qubit", &q.diagnostics);
    let dev = a.p1.iter().zip(&q.p1).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let fit = fit_rabi(&r.times, &a.p1).unwrap();
    let gamma = fit.gamma / d.kappa_2at;
    let ok = dev <= 0.05 && (gamma - 0.04).abs() <= 0.15 * 0.04;
    (ok, format!("max |P1_adiabatic - P1_qubit| = {dev:.4} (<= 0.05); fitted gamma = {gamma:.4} k2at (0.04 +- 15%)"))
}

fn broadening(h: &mut Hygiene) -> Outcome {
    let p = ModelParams::default();
    let d = derive(&p).unwrap();
    let seeds: Vec<u64> = (0..10).collect();
    let times = grid(20.0 / d.kappa_2at, 401);
    let runs = run_seeds(&p, &seeds, &times, c(1.0), &IntegratorConfig::default()).unwrap();
    let ideal = coherent_coeffs(c(1.0)).c01.norm();
    let last = times.len() - 1;
    let prot: Vec<f64> = runs.iter().map(|r| r.protected.modulus[last]).collect();
    let unprot: Vec<f64> = runs.iter().map(|r| r.unprotected.modulus[last]).collect();
    let (mp, _) = mean_std(&prot);
    let (mu, _) = mean_std(&unprot);
    let mut fits_ok = true;
    let (mut worst_r2, mut worst_slope): (f64, f64) = (1.0, -1.0);
    for r in &runs {
        h.record(format!("broadening seed {} protected", r.seed), &r.protected.diagnostics);
        h.record(format!("broadening seed {} unprotected", r.seed), &r.unprotected.diagnostics);
        let f = phase_linearity(&r.protected).unwrap();
        fits_ok &= f.r_squared >= 0.99 && (f.slope.abs() - 1.0).abs() <= 0.2;
        worst_r2 = worst_r2.min(f.r_squared);
        if (f.slope.abs() - 1.0).abs() > (worst_slope.abs() - 1.0).abs() {
            worst_slope = f.slope;
        }
    }
    let prot_ok = (mp - ideal).abs() <= 0.1 * ideal;
    let unprot_ok = mu < 0.7 * ideal;
    (
        prot_ok && unprot_ok && fits_ok,
        format!(
            "protected mean = {mp:.4}, unprotected mean = {mu:.4}, ideal = {ideal:.4}; min r2 = {worst_r2:.5}, worst slope = {worst_slope:.4} delta_q"
        ),
    )
}

fn rk4_order() -> Outcome {
    let sp = HilbertSpace::new(&[("a", 12)]).unwrap();
    let (omega, kappa) = (0.5, 0.1);
    let a = annihilation(&sp, "a").unwrap();
    let me = MasterEquation::new(
        &sp,
        vec![HamiltonianTerm::constant(number(&sp, "a").unwrap().scale_re(omega))],
        vec![CollapseTerm { rate: kappa, op: a.clone() }],
    )
    .unwrap();
    let rho0 = coherent_state(&sp, "a", c(1.0)).unwrap().to_density();
    let ad = a.to_dense();
    let a0 = (&ad * rho0.matrix()).trace();
    let t_end = 5.0;
    let exact = a0 * (C64::new(-kappa / 2.0, -omega) * t_end).exp();
    let err = |dt: f64| {
        let mut v = C64::new(0.0, 0.0);
        evolve_with(&me, &rho0, &[0.0, t_end], &IntegratorConfig::rk4(dt), |_, rho| {
            v = (&ad * rho).trace();
            Ok(())
        })
        .unwrap();
        (v - exact).norm()
    };
    let e = [err(0.1), err(0.05), err(0.025)];
    let ratios = [e[0] / e[1], e[1] / e[2]];
    let ok = ratios.iter().all(|r| (r - 16.0).abs() <= 3.0);
    (ok, format!("RK4 error ratios under dt halving = {:.2}, {:.2} (16 +- 3)", ratios[0], ratios[1]))
}

fn hygiene(h: &Hygiene) -> Outcome {
    let mut ok = true;
    let (mut tr, mut herm, mut mineig): (f64, f64, f64) = (0.0, 0.0, 0.0);
    let mut bad = Vec::new();
    for (label, d) in &h.runs {
        let good = d.max_trace_error <= 1e-8 && d.max_hermiticity_error <= 1e-10 && d.min_eigenvalue >= -1e-6;
        if !good {
            bad.push(label.as_str());
        }
        ok &= good;
        tr = tr.max(d.max_trace_error);
        herm = herm.max(d.max_hermiticity_error);
        mineig = mineig.min(d.min_eigenvalue);
    }
    let mut msg = format!(
        "{} trajectories: max |Tr-1| = {tr:.1e}, max hermiticity = {herm:.1e}, min eigenvalue = {mineig:.1e}",
        h.runs.len()
    );
    if !bad.is_empty() {
        msg.push_str(&format!("; violations in {}", bad.join(", ")));
    }
    (ok, msg)
}

fn main() {
    let mut h = Hygiene { runs: Vec::new() };
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut run = |name: &'static str, f: &mut dyn FnMut(&mut Hygiene) -> Outcome| {
        let start = Instant::now();
        let out = f(&mut h);
        let secs = start.elapsed().as_secs_f64();
        println!("{} {name}: {} [{secs:.1} s]", if out.0 { "PASS" } else { "FAIL" }, out.1);
        results.push((name, out, secs));
    };
    run("1 conserved quantities", &mut conserved_quantities);
    run("2 steady-state coefficients", &mut steady_states);
    run("3 avoided crossing", &mut |_| avoided_crossing());
    run("4 stabilization threshold", &mut stabilization);
    run("5 rabi agreement and decay law", &mut rabi);
    run("6 cavity protection", &mut broadening);
    let rk4 = rk4_order();
    let (hy_ok, hy_msg) = hygiene(&h);
    let ok7 = rk4.0 && hy_ok;
    println!("{} 7 numerical hygiene: {hy_msg}; {}", if ok7 { "PASS" } else { "FAIL" }, rk4.1);
    let failed: Vec<&str> = results.iter().filter(|r| !r.1 .0).map(|r| r.0).chain((!ok7).then_some("7 numerical hygiene")).collect();
    if failed.is_empty() {
        println!("acceptance: all 7 criteria pass");
    } else {
        println!("acceptance: {} of 7 criteria fail: {}", failed.len(), failed.join(", "));
        std::process::exit(1);
    }
}
