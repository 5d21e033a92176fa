//! Report rendering: aligned human-readable text or `key=value` records.

use std::fmt::Write as _;

use clap::ValueEnum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Human,
    Kv,
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub note: Option<String>,
}

impl Check {
    /// Passes when `value <= tolerance`.
    pub fn at_most(name: &str, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            value,
            tolerance,
            pass: value <= tolerance,
            note: None,
        }
    }

    pub fn with_note(mut self, note: String) -> Self {
        self.note = Some(note);
        self
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    command: String,
    config: Vec<(String, String)>,
    values: Vec<(String, String)>,
    checks: Vec<Check>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            config: Vec::new(),
            values: Vec::new(),
            checks: Vec::new(),
        }
    }

    pub fn config(&mut self, key: &str, value: impl ToString) {
        self.config.push((key.into(), value.to_string()));
    }

    pub fn value(&mut self, key: &str, value: impl ToString) {
        self.values.push((key.into(), value.to_string()));
    }

    pub fn number(&mut self, key: &str, value: f64) {
        self.value(key, fmt_number(value));
    }

    pub fn check(&mut self, check: Check) {
        self.checks.push(check);
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Human => self.human(),
            Format::Kv => self.kv(),
        }
    }

    fn human(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.command);
        let width = self
            .config
            .iter()
            .chain(&self.values)
            .map(|(k, _)| k.len())
            .chain(self.checks.iter().map(|c| c.name.len()))
            .max()
            .unwrap_or(0);
        if !self.config.is_empty() {
            let _ = writeln!(out, "config");
            for (k, v) in &self.config {
                let _ = writeln!(out, "  {k:<width$}  {v}");
            }
        }
        if !self.values.is_empty() {
            let _ = writeln!(out, "results");
            for (k, v) in &self.values {
                let _ = writeln!(out, "  {k:<width$}  {v}");
            }
        }
        if !self.checks.is_empty() {
            let _ = writeln!(out, "checks");
            for c in &self.checks {
                let status = if c.pass { "PASS" } else { "FAIL" };
                let _ = write!(
                    out,
                    "  {:<width$}  {:>10} <= {:<8}  {status}",
                    c.name,
                    sci(c.value),
                    sci(c.tolerance)
                );
                if let Some(note) = &c.note {
                    let _ = write!(out, "  ({note})");
                }
                out.push('\n');
            }
            let _ = writeln!(out, "status  {}", if self.all_pass() { "pass" } else { "fail" });
        }
        out
    }

    fn kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "command={}", self.command);
        for (k, v) in &self.config {
            let _ = writeln!(out, "config.{k}={v}");
        }
        for (k, v) in &self.values {
            let _ = writeln!(out, "{k}={v}");
        }
        for c in &self.checks {
            let _ = writeln!(out, "check.{}.value={:e}", c.name, c.value);
            let _ = writeln!(out, "check.{}.tolerance={:e}", c.name, c.tolerance);
            let _ = writeln!(out, "check.{}.status={}", c.name, if c.pass { "pass" } else { "fail" });
            if let Some(note) = &c.note {
                let _ = writeln!(out, "check.{}.note={note}", c.name);
            }
        }
        if !self.checks.is_empty() {
            let _ = writeln!(out, "status={}", if self.all_pass() { "pass" } else { "fail" });
        }
        out
    }
}

/// Fixed notation for moderate magnitudes, scientific otherwise.
pub fn fmt_number(x: f64) -> String {
    if x == 0.0 || (1e-3..1e6).contains(&x.abs()) {
        format!("{x:.6}")
    } else {
        format!("{x:.6e}")
    }
}

fn sci(x: f64) -> String {
    format!("{x:.2e}")
}
