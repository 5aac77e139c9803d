//! Serialization helpers shared by the CSV and JSON writers.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;
use serde_json::value::RawValue;

/// Formats a float with 17 significant digits, enough to round-trip.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// JSON number with 17 significant digits; `null` when not finite.
pub fn json_f64(x: f64) -> Box<RawValue> {
    let text = if x.is_finite() { fmt_f64(x) } else { "null".to_string() };
    RawValue::from_string(text).expect("formatted float is valid JSON")
}

/// Everything that determines the bytes of a run's outputs.
///
/// The worker count is deliberately absent: outputs do not depend on it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: String,
    pub params: BTreeMap<String, String>,
    pub out: String,
    pub seed: u64,
}

impl RunManifest {
    pub fn new(command: &str, config: &str, out: &str, seed: u64) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.to_string(),
            params: BTreeMap::new(),
            out: out.to_string(),
            seed,
        }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    /// `# key: value` lines preceding the CSV header.
    pub fn write_comments<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# {} {}", self.tool, self.version)?;
        writeln!(out, "# command: {}", self.command)?;
        writeln!(out, "# config: {}", self.config)?;
        for (k, v) in &self.params {
            writeln!(out, "# {k}: {v}")?;
        }
        writeln!(out, "# out: {}", self.out)?;
        writeln!(out, "# seed: {}", self.seed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.0, 1.0, -2.5e-300, std::f64::consts::PI, 1558.5454565440389, f64::MAX] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap(), x);
            let j: f64 = serde_json::from_str(json_f64(x).get()).unwrap();
            assert_eq!(j, x);
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(json_f64(f64::NAN).get(), "null");
    }

    #[test]
    fn manifest_comments_are_sorted_and_prefixed() {
        let m = RunManifest::new("bands", "free.toml", "out", 7).param("grid", 257).param("ceiling", 3e4);
        let mut buf = Vec::new();
        m.write_comments(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().all(|l| l.starts_with("# ")));
        let ceiling = text.find("ceiling").unwrap();
        assert!(ceiling < text.find("grid").unwrap());
        assert!(text.ends_with("# seed: 7\n"));
    }
}
