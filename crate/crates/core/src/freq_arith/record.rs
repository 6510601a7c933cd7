//! Structured-text records and CSV tables for frequency data.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::extended::{format_decimal, parse_decimal};
use super::{ArithmeticProfile, DivisorRecord, FrequencyKind, FrequencyVector};
use crate::error::{KamError, Result};

/// Significant digits written for each component.
pub const RECORD_DIGITS: usize = 34;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyRecord {
    pub n: usize,
    pub components: Vec<String>,
    pub kind: FrequencyKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbolic: Option<String>,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scales: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partial_quotients: Option<Vec<f64>>,
}

impl From<&FrequencyVector> for FrequencyRecord {
    fn from(w: &FrequencyVector) -> Self {
        Self {
            n: w.n(),
            components: w
                .components()
                .iter()
                .map(|&c| format_decimal(c, RECORD_DIGITS))
                .collect(),
            kind: w.kind.clone(),
            symbolic: w.symbolic.clone(),
            metadata: w.metadata.clone(),
            scales: w.scales.clone(),
            partial_quotients: w.partial_quotients.clone(),
        }
    }
}

impl FrequencyRecord {
    pub fn to_frequency(&self) -> Result<FrequencyVector> {
        if self.components.len() != self.n {
            return Err(KamError::Parse(format!(
                "record declares n = {} but lists {} components",
                self.n,
                self.components.len()
            )));
        }
        let values = self
            .components
            .iter()
            .map(|s| parse_decimal(s))
            .collect::<Result<Vec<_>>>()?;
        let mut w = FrequencyVector::from_components(&values, self.kind.clone())?;
        w.symbolic = self.symbolic.clone();
        w.metadata = self.metadata.clone();
        w.scales = self.scales.clone();
        match &self.partial_quotients {
            Some(a) => w.with_continued_fraction(a.clone()),
            None => Ok(w),
        }
    }
}

/// Shortest decimal that reads back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:?}")
    }
}

pub fn fmt_k(k: &[i64]) -> String {
    k.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(";")
}

pub fn psi_csv(rows: &[DivisorRecord]) -> String {
    let mut out = String::from("Q,psi,kmin\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.q, fmt_f64(r.psi), fmt_k(&r.argmin_k));
    }
    out
}

pub fn profile_csv(rows: &[ArithmeticProfile]) -> String {
    let mut out = String::from("eps,Delta,mu,nu\n");
    for r in rows {
        let nu = r.nu.map(fmt_f64).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            fmt_f64(r.epsilon),
            r.delta,
            fmt_f64(r.mu),
            nu
        );
    }
    out
}
