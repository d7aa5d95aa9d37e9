//! Flat `key = value` configuration with flag overrides.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use ensq::model::{derive, ModelParams, ModelTier, Truncations};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

type Res<T> = std::result::Result<T, ConfigError>;

fn err<T>(msg: impl Into<String>) -> Res<T> {
    Err(ConfigError(msg.into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Params,
    Spectrum,
    Stabilize,
    Rabi,
    Broadening,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Params => "params",
            Command::Spectrum => "spectrum",
            Command::Stabilize => "stabilize",
            Command::Rabi => "rabi",
            Command::Broadening => "broadening",
        }
    }
}

const COMMON: &[(&str, &str)] = &[
    ("omega_q", "1"),
    ("g_col", "0.03"),
    ("j", "0.09"),
    ("delta_q", "0.6"),
    ("kappa_p", ""),
    ("kappa_s", ""),
    ("omega_d", "0.1"),
    ("theta_d", "0"),
    ("n_atoms", "6"),
    ("delta_inh", "0.1"),
    ("dim_p", ""),
    ("dim_s", ""),
    ("dim_b", ""),
    ("method", "rk4"),
    ("dt", ""),
    ("out", "."),
    ("seed_base", "0"),
    ("threads", "0"),
    ("gcol_mhz", ""),
];

fn command_keys(cmd: Command) -> &'static [(&'static str, &'static str)] {
    match cmd {
        Command::Params => &[],
        Command::Spectrum => &[("wp_min", "1.96"), ("wp_max", "2.06"), ("points", "201"), ("levels", "6")],
        Command::Stabilize => &[("alpha", "1"), ("tiers", "adiabatic,timeaveraged"), ("t_end", "2"), ("points", "101")],
        Command::Rabi => &[("tiers", "adiabatic,qubit"), ("t_end", "200"), ("points", "2001")],
        Command::Broadening => &[("alpha", "1"), ("seeds", "10"), ("t_end", "20"), ("points", "401")],
    }
}

/// Resolved key/value configuration for one command. Empty values mean
/// "derived default".
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    values: BTreeMap<String, String>,
    explicit: BTreeSet<String>,
}

fn normalize_key(k: &str) -> String {
    k.trim().trim_start_matches("--").replace('-', "_").to_ascii_lowercase()
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_file_text(text: &str) -> Res<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) if !k.trim().is_empty() => out.push((normalize_key(k), v.trim().to_string())),
            _ => return err(format!("config line {}: expected `key = value`, got `{line}`", n + 1)),
        }
    }
    Ok(out)
}

/// Splits `--key value` pairs.
pub fn parse_flags(args: &[String]) -> Res<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        if !a.starts_with("--") || a.len() < 3 {
            return err(format!("expected a `--key` flag, got `{a}`"));
        }
        let (k, v) = match a.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => match it.next() {
                Some(v) => (a.clone(), v.clone()),
                None => return err(format!("flag `{a}` is missing its value")),
            },
        };
        out.push((normalize_key(&k), v));
    }
    Ok(out)
}

impl RunConfig {
    /// Defaults, then the file named by `--config` (if any), then the flags.
    pub fn resolve(command: Command, args: &[String]) -> Res<Self> {
        let flags = parse_flags(args)?;
        let mut cfg = Self { command, values: BTreeMap::new(), explicit: BTreeSet::new() };
        for (k, v) in COMMON.iter().chain(command_keys(command)) {
            cfg.values.insert(k.to_string(), v.to_string());
        }
        let mut layers = Vec::new();
        if let Some((_, path)) = flags.iter().rev().find(|(k, _)| k == "config") {
            let text = std::fs::read_to_string(Path::new(path))
                .map_err(|e| ConfigError(format!("cannot read config file `{path}`: {e}")))?;
            layers.push(parse_file_text(&text)?);
        }
        layers.push(flags.into_iter().filter(|(k, _)| k != "config").collect());
        for layer in layers {
            for (k, v) in layer {
                if !cfg.values.contains_key(&k) {
                    return err(format!("unknown key `{k}` for `{}`", command.name()));
                }
                cfg.values.insert(k.clone(), v);
                cfg.explicit.insert(k);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Res<()> {
        let params = self.model_params()?;
        derive(&params).map_err(|e| ConfigError(e.to_string()))?;
        self.method()?;
        self.opt_f64("gcol_mhz")?;
        self.usize("threads")?;
        self.u64("seed_base")?;
        for k in ["points", "levels", "seeds"] {
            if self.values.contains_key(k) {
                self.usize(k)?;
            }
        }
        for k in ["wp_min", "wp_max", "t_end"] {
            if self.values.contains_key(k) {
                self.f64(k)?;
            }
        }
        if self.values.contains_key("alpha") {
            self.f64_list("alpha")?;
        }
        if self.values.contains_key("tiers") {
            self.tiers()?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values.get(key).map(|s| s.as_str()).unwrap_or("")
    }

    pub fn is_explicit(&self, key: &str) -> bool {
        self.explicit.contains(key)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&String, &String)> {
        self.values.iter()
    }

    pub fn opt_f64(&self, key: &str) -> Res<Option<f64>> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(None);
        }
        match v.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Some(x)),
            _ => err(format!("key `{key}`: `{v}` is not a finite number")),
        }
    }

    pub fn f64(&self, key: &str) -> Res<f64> {
        self.opt_f64(key)?.ok_or_else(|| ConfigError(format!("key `{key}` needs a value")))
    }

    pub fn opt_usize(&self, key: &str) -> Res<Option<usize>> {
        let v = self.raw(key);
        if v.is_empty() {
            return Ok(None);
        }
        v.parse::<usize>().map(Some).map_err(|_| ConfigError(format!("key `{key}`: `{v}` is not a non-negative integer")))
    }

    pub fn usize(&self, key: &str) -> Res<usize> {
        self.opt_usize(key)?.ok_or_else(|| ConfigError(format!("key `{key}` needs a value")))
    }

    pub fn u64(&self, key: &str) -> Res<u64> {
        let v = self.raw(key);
        v.parse::<u64>().map_err(|_| ConfigError(format!("key `{key}`: `{v}` is not a non-negative integer")))
    }

    pub fn f64_list(&self, key: &str) -> Res<Vec<f64>> {
        let v = self.raw(key);
        let items: Res<Vec<f64>> = v
            .split(',')
            .map(|s| match s.trim().parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => err(format!("key `{key}`: `{s}` is not a finite number")),
            })
            .collect();
        let items = items?;
        if items.is_empty() {
            return err(format!("key `{key}` is empty"));
        }
        Ok(items)
    }

    pub fn tiers(&self) -> Res<Vec<ModelTier>> {
        let mut out = Vec::new();
        for s in self.raw("tiers").split(',') {
            let t: ModelTier = s.parse().map_err(|_| ConfigError(format!("key `tiers`: unknown tier `{}`", s.trim())))?;
            if !out.contains(&t) {
                out.push(t);
            }
        }
        Ok(out)
    }

    pub fn method(&self) -> Res<ensq::dynamics::Method> {
        let dt = self.opt_f64("dt")?;
        if let Some(dt) = dt {
            if !(dt > 0.0) {
                return err("key `dt` must be > 0");
            }
        }
        match self.raw("method").to_ascii_lowercase().as_str() {
            "rk4" => Ok(ensq::dynamics::Method::Rk4 { dt }),
            "rk45" | "dopri" => Ok(ensq::dynamics::IntegratorConfig::rk45().method),
            other => err(format!("key `method`: unknown integrator `{other}` (rk4 or rk45)")),
        }
    }

    /// Truncations with the explicit `dim_*` keys applied over `base`.
    pub fn truncations(&self, base: Truncations) -> Res<Truncations> {
        let pick = |key: &str, d: usize| -> Res<usize> {
            match self.opt_usize(key)? {
                Some(v) if v < 2 => err(format!("key `{key}` must be >= 2")),
                Some(v) => Ok(v),
                None => Ok(d),
            }
        };
        Ok(Truncations { dim_p: pick("dim_p", base.dim_p)?, dim_s: pick("dim_s", base.dim_s)?, dim_b: pick("dim_b", base.dim_b)? })
    }

    /// Model parameters. `omega_d` is read in units of `κ₂ₐₜ` and
    /// `delta_inh` in units of `δ_q`.
    pub fn model_params(&self) -> Res<ModelParams> {
        let mut p = ModelParams {
            omega_q: self.f64("omega_q")?,
            g_col: self.f64("g_col")?,
            j: self.f64("j")?,
            delta_q: self.f64("delta_q")?,
            kappa_p: self.opt_f64("kappa_p")?,
            kappa_s: self.opt_f64("kappa_s")?,
            drive_amplitude: None,
            theta_d: self.f64("theta_d")?,
            n_atoms: self.usize("n_atoms")?,
            delta_inh: None,
            truncations: self.truncations(Truncations::default())?,
        };
        let d = derive(&p).map_err(|e| ConfigError(e.to_string()))?;
        let omega_d = self.f64("omega_d")?;
        let delta_inh = self.f64("delta_inh")?;
        if omega_d < 0.0 || delta_inh < 0.0 {
            return err("keys `omega_d` and `delta_inh` must be >= 0");
        }
        p.drive_amplitude = Some(omega_d * d.kappa_2at);
        p.delta_inh = Some(delta_inh * d.delta_q_shift);
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn defaults_resolve() {
        let c = RunConfig::resolve(Command::Rabi, &[]).unwrap();
        assert_eq!(c.raw("t_end"), "200");
        assert_eq!(c.tiers().unwrap(), vec![ModelTier::Adiabatic, ModelTier::Qubit]);
        let p = c.model_params().unwrap();
        let d = derive(&p).unwrap();
        assert!((d.drive_amplitude / d.kappa_2at - 0.1).abs() < 1e-12);
        assert!((d.delta_inh / d.delta_q_shift - 0.1).abs() < 1e-12);
    }

    #[test]
    fn flags_override_and_normalize() {
        let c = RunConfig::resolve(Command::Rabi, &args(&["--omega-d", "0.05", "--t_end=50"])).unwrap();
        assert_eq!(c.raw("omega_d"), "0.05");
        assert_eq!(c.raw("t_end"), "50");
        assert!(c.is_explicit("omega_d") && !c.is_explicit("points"));
    }

    #[test]
    fn file_then_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "# comment\nt_end = 30\npoints = 11\n\nomega-d = 0.2\n").unwrap();
        let c = RunConfig::resolve(Command::Rabi, &args(&["--config", path.to_str().unwrap(), "--points", "21"])).unwrap();
        assert_eq!((c.raw("t_end"), c.raw("points"), c.raw("omega_d")), ("30", "21", "0.2"));
    }

    #[test]
    fn rejections() {
        assert!(RunConfig::resolve(Command::Rabi, &args(&["--bogus", "1"])).unwrap_err().0.contains("bogus"));
        assert!(RunConfig::resolve(Command::Params, &args(&["--alpha", "1"])).is_err());
        assert!(RunConfig::resolve(Command::Params, &args(&["--g-col", "abc"])).unwrap_err().0.contains("g_col"));
        assert!(RunConfig::resolve(Command::Params, &args(&["--g-col"])).is_err());
        assert!(RunConfig::resolve(Command::Params, &args(&["g_col", "1"])).is_err());
        assert!(RunConfig::resolve(Command::Stabilize, &args(&["--tiers", "adiabatic,nope"])).is_err());
        assert!(RunConfig::resolve(Command::Params, &args(&["--method", "euler"])).is_err());
        assert!(RunConfig::resolve(Command::Params, &args(&["--dim-b", "1"])).is_err());
        assert!(parse_file_text("just words").is_err());
    }

    #[test]
    fn lists() {
        let c = RunConfig::resolve(Command::Stabilize, &args(&["--alpha", "1, 2,3"])).unwrap();
        assert_eq!(c.f64_list("alpha").unwrap(), vec![1.0, 2.0, 3.0]);
    }
}
