//! Named residual norms produced by the identity and transport audits.

use std::collections::BTreeMap;

use serde::Serialize;

/// Named per-term norms and per-variant residuals from an identity audit.
///
/// Entries are kept in a sorted map so serialized reports are byte-stable.
#[derive(Debug, Clone, Default, Serialize)]
pub struct ResidualReport {
    /// Named residual or term norms.
    pub entries: BTreeMap<String, f64>,
    /// Name of the variant found machine-exact, if the audit identifies one.
    pub exact: Option<String>,
    /// Groups of variants that could not be told apart on the supplied data.
    pub degenerate: Vec<String>,
    /// Free-form diagnostics (boundary magnitudes, masked rows, warnings).
    pub notes: Vec<String>,
}

impl ResidualReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: &str, value: f64) {
        self.entries.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.get(name).copied()
    }

    pub fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Entry with the smallest value among those whose name starts with `prefix`.
    pub fn min_entry(&self, prefix: &str) -> Option<(&str, f64)> {
        self.entries
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .map(|(k, v)| (k.as_str(), *v))
    }
}
