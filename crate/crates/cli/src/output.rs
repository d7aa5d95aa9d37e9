//! Self-describing CSV output.

use std::fmt::Write as _;
use std::io;
use std::path::Path;

use crate::config::RunConfig;

/// Decimal rendering with 9 significant digits, switching to exponent form
/// outside `[1e-5, 1e9)`.
pub fn fmt9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mant, exp) = sci.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    if !(-5..9).contains(&exp) {
        let mant = trim_zeros(mant);
        return format!("{mant}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    trim_zeros(&format!("{x:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Column-oriented table with `#` header and footer lines.
#[derive(Clone, Debug, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub footer: Vec<String>,
}

impl Table {
    pub fn new(cfg: &RunConfig, seed: Option<u64>) -> Self {
        let mut header = vec![format!("ensq {} {}", env!("CARGO_PKG_VERSION"), cfg.command.name())];
        header.push(match seed {
            Some(s) => format!("seed = {s}"),
            None => "seed = none".into(),
        });
        for (k, v) in cfg.entries() {
            header.push(format!("{k} = {v}"));
        }
        Self { header, ..Default::default() }
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.header.push(line.into());
    }

    pub fn footer(&mut self, key: &str, value: impl std::fmt::Display) {
        self.footer.push(format!("{key} = {value}"));
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        for h in &self.header {
            writeln!(s, "# {h}").unwrap();
        }
        writeln!(s, "{}", self.columns.join(",")).unwrap();
        for r in &self.rows {
            let cells: Vec<String> = r.iter().map(|&x| fmt9(x)).collect();
            writeln!(s, "{}", cells.join(",")).unwrap();
        }
        for f in &self.footer {
            writeln!(s, "# {f}").unwrap();
        }
        s
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.render())
    }
}
