//! Metrics CSV.
//!
//! Layout: `# `-prefixed header lines (the effective config), then a CSV
//! header and one `global` row per round followed by one `client` row per
//! participant. Client rows carry that client's own uplink bytes and the
//! round's cumulative total; `global` rows carry the round total.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

fn io(path: &Path, e: std::io::Error) -> Error {
    Error::io(path, e)
}
use crate::federation::RoundRecord;

pub const COLUMNS: [&str; 9] = [
    "round",
    "scope",
    "client_id",
    "rank",
    "acc_before",
    "acc_after",
    "global_acc",
    "uplink_bytes",
    "cumulative_bytes",
];

fn acc(x: f64) -> String {
    format!("{x:.6}")
}

/// Writes records to any sink; `header` lines are emitted as `# ` comments.
pub fn write_metrics<W: Write>(records: &[RoundRecord], header: &str, sink: W) -> Result<()> {
    let mut sink = sink;
    for line in header.lines() {
        writeln!(sink, "# {line}").map_err(|e| io(Path::new("<metrics>"), e))?;
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    w.write_record(COLUMNS)?;
    for r in records {
        let round = r.round.to_string();
        let global = acc(r.global_acc);
        let cumulative = r.cumulative_bytes.to_string();
        w.write_record([
            round.as_str(),
            "global",
            "",
            "",
            "",
            "",
            &global,
            &r.uplink_bytes.to_string(),
            &cumulative,
        ])?;
        for p in &r.participants {
            w.write_record([
                round.as_str(),
                "client",
                &p.client_id.to_string(),
                &p.rank.to_string(),
                &acc(p.acc_before),
                &acc(p.acc_after),
                &global,
                &p.uplink_bytes.to_string(),
                &cumulative,
            ])?;
        }
    }
    w.flush().map_err(|e| io(Path::new("<metrics>"), e))?;
    Ok(())
}

pub fn emit_metrics(records: &[RoundRecord], header: &str, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| io(path, e))?;
    write_metrics(records, header, BufWriter::new(file)).map_err(|e| match e {
        Error::Io { source, .. } => io(path, source),
        Error::Csv(e) if e.is_io_error() => match e.into_kind() {
            csv::ErrorKind::Io(source) => io(path, source),
            _ => unreachable!(),
        },
        other => other,
    })
}
