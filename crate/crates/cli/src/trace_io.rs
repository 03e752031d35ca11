//! JSON-lines trace files: one record per line, then one summary line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sipm_core::solver::{IterationRecord, Termination, Trace};

use crate::CliError;

/// Closing line of a trace file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub problem: String,
    pub variant: String,
    pub seed: u64,
    pub data_seed: u64,
    pub s_eta: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub samples: u64,
    pub termination: Termination,
    pub f0: f64,
    pub stat0: f64,
    pub halved_steps: usize,
    /// Mean `stat_rel` over the records of the last epoch.
    pub final_stat_rel: f64,
    pub final_f_rel: f64,
    /// Iterate drawn uniformly from the second half of the run.
    pub reported: IterationRecord,
}

#[derive(Serialize, Deserialize)]
struct SummaryLine {
    summary: Summary,
}

/// Mean `(f_rel, stat_rel)` over the records in the final epoch, counting a
/// partial epoch as the last one.
pub fn final_metrics(records: &[IterationRecord]) -> Option<(f64, f64)> {
    let last = records.last()?;
    let cutoff = last.epoch.ceil() - 1.0;
    let tail: Vec<&IterationRecord> = records.iter().filter(|r| r.epoch > cutoff).collect();
    if tail.is_empty() {
        return Some((last.f_rel, last.stat_rel));
    }
    let n = tail.len() as f64;
    Some((
        tail.iter().map(|r| r.f_rel).sum::<f64>() / n,
        tail.iter().map(|r| r.stat_rel).sum::<f64>() / n,
    ))
}

pub struct RunMeta<'a> {
    pub problem: &'a str,
    pub variant: &'a str,
    pub seed: u64,
    pub data_seed: u64,
    pub s_eta: f64,
    pub epsilon: f64,
}

pub fn summarize(trace: &Trace, meta: &RunMeta<'_>) -> Result<Summary, CliError> {
    let last = trace
        .last()
        .ok_or_else(|| CliError::Numerical("trace has no records".into()))?;
    let reported = *trace.draw_reported(meta.seed).unwrap_or(last);
    let (final_f_rel, final_stat_rel) = final_metrics(&trace.records).unwrap_or((last.f_rel, last.stat_rel));
    Ok(Summary {
        problem: meta.problem.to_string(),
        variant: meta.variant.to_string(),
        seed: meta.seed,
        data_seed: meta.data_seed,
        s_eta: meta.s_eta,
        epsilon: meta.epsilon,
        iterations: trace.iterations,
        samples: last.samples,
        termination: trace.termination,
        f0: trace.f0,
        stat0: trace.stat0,
        halved_steps: trace.halved_steps,
        final_stat_rel,
        final_f_rel,
        reported,
    })
}

pub fn write_trace<W: Write>(mut out: W, records: &[IterationRecord], summary: &Summary) -> Result<(), CliError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| CliError::Output(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    serde_json::to_writer(
        &mut out,
        &SummaryLine {
            summary: summary.clone(),
        },
    )
    .map_err(|e| CliError::Output(e.to_string()))?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

pub fn write_trace_file(path: &Path, records: &[IterationRecord], summary: &Summary) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_trace(BufWriter::new(File::create(path)?), records, summary)
}

pub fn read_trace<R: BufRead>(input: R) -> Result<(Vec<IterationRecord>, Option<Summary>), CliError> {
    let mut records = Vec::new();
    let mut summary = None;
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| CliError::Data(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        if summary.is_some() {
            return Err(CliError::Data(format!("line {}: content after the summary", i + 1)));
        }
        if line.starts_with("{\"summary\"") {
            let s: SummaryLine = serde_json::from_str(&line).map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?;
            summary = Some(s.summary);
        } else {
            records.push(serde_json::from_str(&line).map_err(|e| CliError::Data(format!("line {}: {e}", i + 1)))?);
        }
    }
    Ok((records, summary))
}

pub fn read_trace_file(path: &Path) -> Result<(Vec<IterationRecord>, Option<Summary>), CliError> {
    let f = File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_trace(BufReader::new(f))
}
