//! Row-level diagnostics and the shared percentage rule used by all reports.

use std::fmt;

/// A non-fatal problem attached to an input row or an indexing step.
///
/// Malformed rows are reported, never silently dropped; messages avoid
/// commas so diagnostics stay representable in the quote-free CSV exports.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    /// 1-based line number in the source file, when one applies.
    pub line: Option<u64>,
    pub message: String,
}

impl Diagnostic {
    pub fn at_line(line: u64, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    pub fn general(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {}: {}", line, self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// `100·part/total` rounded half-up to one decimal place, computed in
/// integer arithmetic so ties never depend on floating-point noise.
/// A zero total yields 0.0.
pub fn percentage(part: u64, total: u64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let tenths = (2 * 1000 * part as u128 + total as u128) / (2 * total as u128);
    tenths as f64 / 10.0
}

/// Formats a percentage with exactly one decimal place.
pub fn format_percentage(part: u64, total: u64) -> String {
    format!("{:.1}%", percentage(part, total))
}
