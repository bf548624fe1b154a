use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use super::{SummaryRow, TrialRecord};
use crate::error::{Error, Result};

pub const RECORD_HEADER: [&str; 13] = [
    "mechanism", "epsilon", "delta", "budget", "n_train", "dim", "classes", "lambda", "ensemble", "trial", "seed",
    "accuracy", "wall_time_s",
];

pub const SUMMARY_HEADER: [&str; 12] = [
    "mechanism", "epsilon", "delta", "budget", "n_train", "dim", "classes", "lambda", "ensemble", "mean_accuracy",
    "std_accuracy", "n_trials",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Config(format!("csv: {e}"))
}

/// Floats use Rust's shortest round-trip formatting, which never depends on
/// locale.
pub fn write_records<W: Write>(records: &[TrialRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RECORD_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.mechanism.name().to_string(),
            r.epsilon.to_string(),
            r.delta.to_string(),
            r.budget.to_string(),
            r.n_train.to_string(),
            r.dim.to_string(),
            r.classes.to_string(),
            r.lambda.to_string(),
            r.ensemble.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.accuracy.to_string(),
            r.wall_time_s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv flush: {e}")))
}

pub fn write_summaries<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER).map_err(csv_err)?;
    for s in rows {
        w.write_record([
            s.mechanism.name().to_string(),
            s.epsilon.to_string(),
            s.delta.to_string(),
            s.budget.to_string(),
            s.n_train.to_string(),
            s.dim.to_string(),
            s.classes.to_string(),
            s.lambda.to_string(),
            s.ensemble.to_string(),
            s.mean_accuracy.to_string(),
            s.std_accuracy.to_string(),
            s.n_trials.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Config(format!("csv flush: {e}")))
}

pub fn emit_csv(records: &[TrialRecord], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_records(records, BufWriter::new(f)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn emit_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_summaries(rows, BufWriter::new(f)).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Parses the per-trial format back.
pub fn read_records_csv<R: Read>(input: R) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let headers = rdr.headers().map_err(csv_err)?;
    if headers.iter().ne(RECORD_HEADER) {
        return Err(Error::Parse { offset: 0, msg: "unexpected record header".into() });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(csv_err)?;
        let offset = row.position().map_or(0, |p| p.byte() as usize);
        let bad = |i: usize| Error::Parse { offset, msg: format!("bad value in column {}", RECORD_HEADER[i]) };
        macro_rules! field {
            ($i:expr) => {
                row[$i].parse().map_err(|_| bad($i))?
            };
        }
        out.push(TrialRecord {
            mechanism: field!(0),
            epsilon: field!(1),
            delta: field!(2),
            budget: field!(3),
            n_train: field!(4),
            dim: field!(5),
            classes: field!(6),
            lambda: field!(7),
            ensemble: field!(8),
            trial: field!(9),
            seed: field!(10),
            accuracy: field!(11),
            wall_time_s: field!(12),
            error: None,
        });
    }
    Ok(out)
}
