//! The five subcommands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ensq::broadening::{mean_std, phase_linearity, run_seeds};
use ensq::dynamics::IntegratorConfig;
use ensq::effective::{fit_rabi, rabi_experiment, rabi_fit_tier, stabilization_experiment};
use ensq::manifold::coherent_coeffs;
use ensq::model::{derive, regime_warnings, ModelParams, ModelTier, Truncations};
use ensq::spectrum::{avoided_crossing, scan_pump_frequency, CROSSING_PAIR, SCAN_TRUNCATIONS};
use log::warn;
use num_complex::Complex64 as C64;

use crate::config::{Command, ConfigError, RunConfig};
use crate::output::{fmt9, Table};

/// Full-tier spaces above this are refused.
pub const FULL_TIER_BUDGET: usize = 200;

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Guard(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Guard(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Guard(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<ensq::Error> for CliError {
    fn from(e: ensq::Error) -> Self {
        match e {
            ensq::Error::NumericalFailure { .. } | ensq::Error::StepUnderflow(_) | ensq::Error::NotConverged(_) => {
                CliError::Numerical(e.to_string())
            }
            _ => CliError::Guard(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Guard(format!("cannot write output: {e}"))
    }
}

type Res<T> = std::result::Result<T, CliError>;

pub fn run(cfg: &RunConfig, stdout: &mut String) -> Res<Vec<PathBuf>> {
    match cfg.command {
        Command::Params => cmd_params(cfg, stdout).map(|_| vec![]),
        Command::Spectrum => cmd_spectrum(cfg),
        Command::Stabilize => cmd_stabilize(cfg),
        Command::Rabi => cmd_rabi(cfg),
        Command::Broadening => cmd_broadening(cfg),
    }
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    PathBuf::from(cfg.raw("out"))
}

fn integrator(cfg: &RunConfig) -> Res<IntegratorConfig> {
    Ok(IntegratorConfig { method: cfg.method()?, ..Default::default() })
}

/// Microseconds per unit of model time, if `gcol_mhz` is set.
fn time_scale_us(cfg: &RunConfig, params: &ModelParams) -> Res<Option<f64>> {
    Ok(match cfg.opt_f64("gcol_mhz")? {
        Some(mhz) if mhz > 0.0 => Some(params.g_col / (2.0 * std::f64::consts::PI * mhz)),
        Some(_) => return Err(CliError::Config("key `gcol_mhz` must be > 0".into())),
        None => None,
    })
}

fn physical_time_note(table: &mut Table, scale: Option<f64>) {
    if scale.is_some() {
        table.note("t_us = t / (2 pi gcol_mhz / g_col); dimensionless time is authoritative");
        warn!("physical time axis requested; published microsecond values for this setup are inconsistent by about 10x with this conversion");
    }
}

fn cmd_params(cfg: &RunConfig, out: &mut String) -> Res<()> {
    let p = cfg.model_params()?;
    let d = derive(&p)?;
    let note = |explicit: bool, default: &str| if explicit { String::new() } else { format!(" (default {default})") };
    let mut line = |name: &str, v: f64, extra: String| writeln!(out, "{name} = {} omega_q{extra}", fmt9(v)).unwrap();
    line("chi", d.chi, String::new());
    line("kappa_p", d.kappa_p, note(cfg.is_explicit("kappa_p"), "5 chi"));
    line("kappa_s", d.kappa_s, note(cfg.is_explicit("kappa_s"), "0.3 kappa_p"));
    line("kappa_2at", d.kappa_2at, String::new());
    line("delta_q", d.delta_q_shift, String::new());
    line("delta", d.delta, String::new());
    line("Delta_p", d.delta_p, String::new());
    line("omega_p", d.omega_p, String::new());
    line("omega_s", d.omega_s, String::new());
    line("Omega_d", d.drive_amplitude, format!(" ({} kappa_2at)", fmt9(cfg.f64("omega_d")?)));
    line("gamma", d.gamma, format!(" ({} kappa_2at)", fmt9(if d.kappa_2at > 0.0 { d.gamma / d.kappa_2at } else { 0.0 })));
    line("omega_d", d.omega_d, String::new());
    line("delta_inh", d.delta_inh, format!(" ({} delta_q)", fmt9(cfg.f64("delta_inh")?)));
    if let Some(scale) = time_scale_us(cfg, &p)? {
        writeln!(out, "t(chi t = 2) = {} us", fmt9(2.0 / d.chi * scale)).unwrap();
        writeln!(out, "note: dimensionless time is authoritative; published microsecond values for this setup differ by about 10x").unwrap();
    }
    for w in regime_warnings(&p)? {
        writeln!(out, "warning: {w}").unwrap();
    }
    Ok(())
}

fn cmd_spectrum(cfg: &RunConfig) -> Res<Vec<PathBuf>> {
    let p = cfg.model_params()?;
    let d = derive(&p)?;
    let t = cfg.truncations(SCAN_TRUNCATIONS)?;
    let levels = cfg.usize("levels")?;
    if levels == 0 {
        return Err(CliError::Config("key `levels` must be >= 1".into()));
    }
    let k = levels.max(CROSSING_PAIR.1 + 1);
    let (lo, hi) = (cfg.f64("wp_min")? * p.omega_q, cfg.f64("wp_max")? * p.omega_q);
    let scan = scan_pump_frequency(&p, lo, hi, cfg.usize("points")?, k, &t)?;
    let crossing = avoided_crossing(&scan, CROSSING_PAIR)?;
    let mut table = Table::new(cfg, None);
    table.note("levels in units of omega_q, relative to the ground level at each omega_p");
    table.columns.push("omega_p_over_omega_q".into());
    table.columns.extend((0..levels).map(|i| format!("level_{i}")));
    for (wp, lv) in scan.omega_p_values.iter().zip(&scan.levels) {
        let mut row = vec![wp / p.omega_q];
        row.extend(lv[..levels].iter().map(|e| e / p.omega_q));
        table.rows.push(row);
    }
    table.footer("gap_over_chi", fmt9(crossing.gap / d.chi));
    table.footer("gap_over_omega_q", fmt9(crossing.gap / p.omega_q));
    table.footer("omega_p_star_over_omega_q", fmt9(crossing.omega_p_star / p.omega_q));
    table.footer("predicted_omega_p_over_omega_q", fmt9((2.0 * p.omega_q + d.delta) / p.omega_q));
    table.footer("predicted_gap_over_chi", fmt9(2.0 * 2f64.sqrt()));
    let path = out_dir(cfg).join("spectrum.csv");
    table.write(&path)?;
    Ok(vec![path])
}

fn tier_dim(t: &Truncations, tier: ModelTier) -> usize {
    match tier {
        ModelTier::Full => t.dim_p * t.dim_s * t.dim_b,
        ModelTier::TimeAveraged => t.dim_p * t.dim_b,
        ModelTier::Adiabatic => t.dim_b,
        ModelTier::Qubit => 2,
    }
}

fn guard_full(t: &Truncations, tiers: &[ModelTier]) -> Res<()> {
    let dim = tier_dim(t, ModelTier::Full);
    if tiers.contains(&ModelTier::Full) && dim > FULL_TIER_BUDGET {
        return Err(CliError::Guard(format!(
            "full tier would need dimension {dim} (> {FULL_TIER_BUDGET}); use --tiers timeaveraged,adiabatic for this amplitude"
        )));
    }
    Ok(())
}

fn cmd_stabilize(cfg: &RunConfig) -> Res<Vec<PathBuf>> {
    let base = cfg.model_params()?;
    let d = derive(&base)?;
    let tiers = cfg.tiers()?;
    if tiers.contains(&ModelTier::Qubit) {
        return Err(CliError::Config("key `tiers`: the qubit tier has no stabilization run".into()));
    }
    let scale = time_scale_us(cfg, &base)?;
    let mut written = Vec::new();
    for alpha in cfg.f64_list("alpha")? {
        let t = cfg.truncations(Truncations::for_alpha(alpha))?;
        guard_full(&t, &tiers)?;
        let p = base.clone().with_truncations(t);
        let cmp = stabilization_experiment(&p, C64::new(alpha, 0.0), &tiers, cfg.f64("t_end")?, cfg.usize("points")?, &integrator(cfg)?)?;
        let mut table = Table::new(cfg, None);
        table.note(format!("alpha = {}", fmt9(alpha)));
        table.note(format!("truncations = {},{},{}", t.dim_p, t.dim_s, t.dim_b));
        physical_time_note(&mut table, scale);
        table.columns.push("t_chi".into());
        if scale.is_some() {
            table.columns.push("t_us".into());
        }
        let order = cmp.tiers();
        for tier in &order {
            table.columns.extend([format!("eta_{tier}"), format!("trace_err_{tier}"), format!("parity_{tier}")]);
        }
        for (i, &time) in cmp.times.iter().enumerate() {
            let mut row = vec![time * d.chi];
            if let Some(s) = scale {
                row.push(time * s);
            }
            for tier in &order {
                let s = cmp.get(*tier).unwrap();
                row.extend([s.eta[i], (s.trace[i] - 1.0).abs(), s.parity[i]]);
            }
            table.rows.push(row);
        }
        for tier in &order {
            let s = cmp.get(*tier).unwrap();
            table.footer(&format!("final_eta_{tier}"), fmt9(*s.eta.last().unwrap()));
            table.footer(&format!("max_trace_error_{tier}"), fmt9(s.diagnostics.max_trace_error));
            table.footer(&format!("min_eigenvalue_{tier}"), fmt9(s.diagnostics.min_eigenvalue));
        }
        let path = out_dir(cfg).join(format!("stabilize_alpha_{}.csv", fmt9(alpha)));
        table.write(&path)?;
        written.push(path);
    }
    Ok(written)
}

fn cmd_rabi(cfg: &RunConfig) -> Res<Vec<PathBuf>> {
    let p = cfg.model_params()?;
    let d = derive(&p)?;
    let tiers = cfg.tiers()?;
    guard_full(&p.truncations, &tiers)?;
    let scale = time_scale_us(cfg, &p)?;
    let cmp = rabi_experiment(&p, &tiers, cfg.f64("t_end")?, cfg.usize("points")?, &integrator(cfg)?)?;
    let mut table = Table::new(cfg, None);
    physical_time_note(&mut table, scale);
    table.columns.push("t_k2at".into());
    if scale.is_some() {
        table.columns.push("t_us".into());
    }
    let order = cmp.tiers();
    for tier in &order {
        table.columns.extend([format!("P0_{tier}"), format!("P1_{tier}")]);
    }
    for (i, &time) in cmp.times.iter().enumerate() {
        let mut row = vec![time * d.kappa_2at];
        if let Some(s) = scale {
            row.push(time * s);
        }
        for tier in &order {
            let s = cmp.get(*tier).unwrap();
            row.extend([s.p0[i], s.p1[i]]);
        }
        table.rows.push(row);
    }
    if let Some(fit_tier) = rabi_fit_tier(&cmp) {
        table.footer("fit_tier", fit_tier);
        match fit_rabi(&cmp.times, &cmp.get(fit_tier).unwrap().p1) {
            Ok(fit) => {
                table.footer("gamma_over_k2at", fmt9(fit.gamma / d.kappa_2at));
                table.footer("rabi_frequency_over_k2at", fmt9(fit.frequency / d.kappa_2at));
            }
            Err(e) => {
                warn!("Rabi fit unavailable: {e}");
                table.footer("gamma_over_k2at", "nan");
            }
        }
    }
    table.footer("expected_gamma_over_k2at", fmt9(d.gamma / d.kappa_2at));
    if let Some(q) = cmp.get(ModelTier::Qubit) {
        for tier in order.iter().filter(|t| **t != ModelTier::Qubit) {
            let s = cmp.get(*tier).unwrap();
            let dev = s.p1.iter().zip(&q.p1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            table.footer(&format!("max_abs_P1_{tier}_minus_qubit"), fmt9(dev));
        }
    }
    let path = out_dir(cfg).join("rabi.csv");
    table.write(&path)?;
    Ok(vec![path])
}

fn cmd_broadening(cfg: &RunConfig) -> Res<Vec<PathBuf>> {
    let p = cfg.model_params()?;
    let d = derive(&p)?;
    let alphas = cfg.f64_list("alpha")?;
    if alphas.len() != 1 {
        return Err(CliError::Config("key `alpha`: broadening takes a single amplitude".into()));
    }
    let alpha = C64::new(alphas[0], 0.0);
    let n_seeds = cfg.usize("seeds")?;
    if n_seeds == 0 {
        return Err(CliError::Config("key `seeds` must be >= 1".into()));
    }
    let base = cfg.u64("seed_base")?;
    let seeds: Vec<u64> = (0..n_seeds as u64).map(|i| base + i).collect();
    let points = cfg.usize("points")?;
    if points < 2 {
        return Err(CliError::Config("key `points` must be >= 2".into()));
    }
    let t_end = cfg.f64("t_end")? / d.kappa_2at;
    let times: Vec<f64> = (0..points).map(|i| t_end * i as f64 / (points - 1) as f64).collect();
    if d.delta_q_shift * times[1] >= std::f64::consts::PI {
        warn!("delta_q * dt >= pi: the protected phase cannot be unwrapped on this grid");
    }
    let runs = run_seeds(&p, &seeds, &times, alpha, &integrator(cfg)?)?;
    let ideal = coherent_coeffs(alpha).c01.norm();
    let dir = out_dir(cfg);
    let mut written = Vec::new();
    for r in &runs {
        let mut table = Table::new(cfg, Some(r.seed));
        let deltas: Vec<String> = r.protected.deltas.iter().map(|x| fmt9(x / d.delta_q_shift)).collect();
        table.note(format!("deltas_over_delta_q = {}", deltas.join(",")));
        table.columns = ["t_k2at", "modulus_protected", "phase_protected", "modulus_unprotected", "phase_unprotected"]
            .map(String::from)
            .to_vec();
        for i in 0..times.len() {
            table.rows.push(vec![
                times[i] * d.kappa_2at,
                r.protected.modulus[i],
                r.protected.phase[i],
                r.unprotected.modulus[i],
                r.unprotected.phase[i],
            ]);
        }
        table.footer("ideal_modulus", format!("{ideal:.4}"));
        if let Ok(fit) = phase_linearity(&r.protected) {
            table.footer("phase_slope_over_delta_q_protected", fmt9(fit.slope));
            table.footer("phase_r_squared_protected", fmt9(fit.r_squared));
        }
        let path = dir.join(format!("broadening_seed_{}.csv", r.seed));
        table.write(&path)?;
        written.push(path);
    }

    let mut table = Table::new(cfg, Some(base));
    table.note(format!("seeds = {}", seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")));
    table.columns = [
        "t_k2at",
        "modulus_protected_mean",
        "modulus_protected_std",
        "phase_protected_mean",
        "phase_protected_std",
        "modulus_unprotected_mean",
        "modulus_unprotected_std",
        "phase_unprotected_mean",
        "phase_unprotected_std",
    ]
    .map(String::from)
    .to_vec();
    let stat = |i: usize, f: &dyn Fn(&ensq::broadening::SeedRuns, usize) -> f64| {
        let xs: Vec<f64> = runs.iter().map(|r| f(r, i)).collect();
        mean_std(&xs)
    };
    for i in 0..times.len() {
        let (mp, sp) = stat(i, &|r, i| r.protected.modulus[i]);
        let (pp, spp) = stat(i, &|r, i| r.protected.phase[i]);
        let (mu, su) = stat(i, &|r, i| r.unprotected.modulus[i]);
        let (pu, spu) = stat(i, &|r, i| r.unprotected.phase[i]);
        table.rows.push(vec![times[i] * d.kappa_2at, mp, sp, pp, spp, mu, su, pu, spu]);
    }
    let last = times.len() - 1;
    let (mp, sp) = stat(last, &|r, i| r.protected.modulus[i]);
    let (mu, su) = stat(last, &|r, i| r.unprotected.modulus[i]);
    table.footer("ideal_modulus", format!("{ideal:.4}"));
    table.footer("ideal_modulus_exact", fmt9(ideal));
    table.footer("final_modulus_protected_mean", fmt9(mp));
    table.footer("final_modulus_protected_std", fmt9(sp));
    table.footer("final_modulus_unprotected_mean", fmt9(mu));
    table.footer("final_modulus_unprotected_std", fmt9(su));
    let fits: Vec<_> = runs.iter().filter_map(|r| phase_linearity(&r.protected).ok()).collect();
    if !fits.is_empty() {
        let slopes: Vec<f64> = fits.iter().map(|f| f.slope).collect();
        table.footer("phase_slope_over_delta_q_protected_mean", fmt9(mean_std(&slopes).0));
        table.footer("phase_r_squared_protected_min", fmt9(fits.iter().map(|f| f.r_squared).fold(1.0, f64::min)));
    }
    let path = dir.join("broadening_aggregate.csv");
    table.write(&path)?;
    written.push(path);
    Ok(written)
}

/// Writes nothing; used by `main` for path display.
pub fn display(paths: &[PathBuf]) -> String {
    paths.iter().map(|p| Path::new(p).display().to_string()).collect::<Vec<_>>().join("\n")
}
