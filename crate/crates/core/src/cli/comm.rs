//! Per-client uplink cost of LoRA factors at several ranks.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::federation::BYTES_PER_PARAM;
use crate::lora::{param_count, LoraConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct CommLedgerEntry {
    pub label: String,
    pub params: u64,
    /// Always `BYTES_PER_PARAM * params`.
    pub bytes: u64,
    /// Share of `reference_total`, in percent.
    pub percent: f64,
}

impl CommLedgerEntry {
    fn new(label: String, params: u64, reference_total: u64) -> Self {
        CommLedgerEntry {
            label,
            params,
            bytes: params * BYTES_PER_PARAM,
            percent: 100.0 * params as f64 / reference_total as f64,
        }
    }

    /// Mebibytes (`bytes / 1024²`).
    pub fn mb(&self) -> f64 {
        self.bytes as f64 / (1024.0 * 1024.0)
    }
}

/// A population mix of ranks, `(share, rank)`; shares sum to 1.
pub type Mixture = [(f64, usize)];

/// One entry per rank in `ranks`, plus a population-weighted entry for
/// `mixture`, inserted before the first cheaper row. Mixture parameters are
/// rounded to the nearest integer.
pub fn comm_table(
    m: usize,
    n: usize,
    num_matrices: usize,
    ranks: &[usize],
    mixture: &Mixture,
    reference_total: u64,
) -> Result<Vec<CommLedgerEntry>> {
    if ranks.is_empty() {
        return Err(Error::InvalidArgument(
            "comm table needs at least one rank".into(),
        ));
    }
    if reference_total == 0 {
        return Err(Error::InvalidArgument(
            "reference total must be positive".into(),
        ));
    }
    let params = |rank: usize| {
        param_count(&LoraConfig {
            m,
            n,
            rank,
            num_adapted_matrices: num_matrices,
        })
    };
    let mut rows: Vec<CommLedgerEntry> = ranks
        .iter()
        .map(|&r| CommLedgerEntry::new(format!("LoRA (r={r})"), params(r), reference_total))
        .collect();
    if !mixture.is_empty() {
        let share: f64 = mixture.iter().map(|(w, _)| w).sum();
        if (share - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "mixture shares sum to {share}, not 1"
            )));
        }
        let mixed: f64 = mixture.iter().map(|&(w, r)| w * params(r) as f64).sum();
        let label = mixture
            .iter()
            .map(|&(w, r)| format!("{:.0}% r={r}", 100.0 * w))
            .collect::<Vec<_>>()
            .join(" + ");
        let entry = CommLedgerEntry::new(
            format!("Mixed ({label})"),
            mixed.round() as u64,
            reference_total,
        );
        let at = rows
            .iter()
            .position(|e| e.params < entry.params)
            .unwrap_or(rows.len());
        rows.insert(at, entry);
    }
    Ok(rows)
}

/// 18 adapted 768×768 attention matrices; 66.96M-parameter reference model.
pub fn distilbert_table() -> Vec<CommLedgerEntry> {
    comm_table(
        768,
        768,
        18,
        &[20, 7, 5],
        &[(0.1, 20), (0.9, 5)],
        66_960_000,
    )
    .expect("preset arguments are valid")
}

pub fn preset_table(name: &str) -> Result<Vec<CommLedgerEntry>> {
    match name {
        "distilbert" | "distilbert-preset" => Ok(distilbert_table()),
        other => Err(Error::Config(format!(
            "unknown comm-table preset `{other}` (expected `distilbert-preset`)"
        ))),
    }
}

/// Four columns: method, parameters, MB, percent of the reference model.
pub fn render_table(rows: &[CommLedgerEntry]) -> String {
    let width = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>12}  {:>8}  {:>8}",
        "method", "params", "MB", "percent"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<width$}  {:>12}  {:>8.2}  {:>7.2}%",
            r.label,
            group_thousands(r.params),
            r.mb(),
            r.percent
        );
    }
    out
}

fn group_thousands(x: u64) -> String {
    let digits = x.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}
