use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values of the match-count moment constant `α(M, q)`.
///
/// `q = 1` always uses the closed form `M(2M+1)/2`; other dimensions must be
/// supplied by the user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AlphaTable {
    entries: BTreeMap<(usize, usize), f64>,
}

impl AlphaTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add `α(m, q)`. Entries must satisfy `α/M² − 1 ≥ 0`.
    pub fn insert(&mut self, m: usize, q: usize, value: f64) -> Result<()> {
        if m == 0 || q == 0 {
            return Err(Error::invalid("alpha table keys must be positive"));
        }
        if q == 1 {
            return Err(Error::invalid("alpha(M, 1) has a closed form and cannot be overridden"));
        }
        let m2 = (m * m) as f64;
        if !value.is_finite() || value / m2 - 1.0 < 0.0 {
            return Err(Error::invalid(format!(
                "alpha({m}, {q}) = {value} violates alpha / M^2 - 1 >= 0"
            )));
        }
        self.entries.insert((m, q), value);
        Ok(())
    }

    /// Parse whitespace-separated `M q value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut table = Self::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let err = |column: &str, message: String| Error::ParseError {
                line: lineno as u64 + 1,
                column: column.into(),
                message,
            };
            if fields.len() != 3 {
                return Err(err("*", format!("expected `M q value`, got `{line}`")));
            }
            let m = fields[0].parse::<usize>().map_err(|e| err("M", e.to_string()))?;
            let q = fields[1].parse::<usize>().map_err(|e| err("q", e.to_string()))?;
            let v = fields[2].parse::<f64>().map_err(|e| err("value", e.to_string()))?;
            table.insert(m, q, v)?;
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn get(&self, m: usize, q: usize) -> Option<f64> {
        self.entries.get(&(m, q)).copied()
    }
}

/// `α(M, q)`: the closed form for `q = 1`, a table lookup otherwise.
pub fn alpha(m: usize, q: usize, table: &AlphaTable) -> Result<f64> {
    if m == 0 || q == 0 {
        return Err(Error::invalid("alpha needs M >= 1 and q >= 1"));
    }
    if q == 1 {
        return Ok((m * (2 * m + 1)) as f64 / 2.0);
    }
    table.get(m, q).ok_or(Error::AlphaUnavailable { m, q })
}
