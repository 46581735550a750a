use std::fs;
use std::io;
use std::path::Path;

use crate::metrics::MetricsReport;

/// Ordered `key = value` record of one run.
///
/// Keys under `timing.` hold wall-clock durations and are the only entries
/// expected to differ between reruns of the same config and seed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl ToString) {
        let value = value.to_string().replace('\n', " ");
        self.entries.push((key.into(), value));
    }

    pub fn extend(&mut self, kv: impl IntoIterator<Item = (String, String)>) {
        for (k, v) in kv {
            self.push(k, v);
        }
    }

    pub fn push_metrics(&mut self, prefix: &str, report: &MetricsReport) {
        for (label, p) in &report.per_class {
            self.push(format!("{prefix}.class.{label}.precision"), p.precision);
            self.push(format!("{prefix}.class.{label}.recall"), p.recall);
            self.push(format!("{prefix}.class.{label}.f1"), p.f1);
        }
        for (name, p) in [("macro", &report.macro_avg), ("micro", &report.micro)] {
            self.push(format!("{prefix}.{name}.precision"), p.precision);
            self.push(format!("{prefix}.{name}.recall"), p.recall);
            self.push(format!("{prefix}.{name}.f1"), p.f1);
        }
        self.push(format!("{prefix}.accuracy"), report.accuracy);
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.get(key).and_then(|v| v.parse().ok())
    }

    pub fn without_timings(&self) -> RunManifest {
        RunManifest {
            entries: self.entries.iter().filter(|(k, _)| !k.starts_with("timing.")).cloned().collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("# run manifest\n");
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut m = RunManifest::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| format!("manifest line {}: expected `key = value`", i + 1))?;
            m.entries.push((k.to_owned(), v.to_owned()));
        }
        Ok(m)
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, format!("{}: {e}", path.display())))
    }

    /// Writes to a sibling temp file and renames it into place.
    pub fn write_atomic(&self, path: &Path) -> io::Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_text())?;
        fs::rename(tmp, path)
    }
}
