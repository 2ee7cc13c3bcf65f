//! Files written by a run.
//!
//! * `trace.csv`: a version line, then a CSV header and one row per round.
//! * `summary.txt`: a version line, `key=value` results, then the
//!   configuration that produced them.
//! * `checkpoint`: the final ranker state (see the ranker module).
//! * `fairswap.log`: a version line, then one line per calibrated round and
//!   one indented line per segment that needed a swap.

use std::fs::{self, File};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use super::{ExperimentResult, Summary};
use crate::error::{Error, Result};
use crate::metrics::{RoundRecord, TRACE_HEADER, TRACE_VERSION};
use crate::ranker::write_checkpoint;

pub const TRACE_FILE: &str = "trace.csv";
pub const SUMMARY_VERSION: &str = "# fairexp summary v1";
const FAIRSWAP_LOG_VERSION: &str = "# fairexp fairswap log v1";

pub fn write_trace<W: Write>(records: &[RoundRecord], mut out: W) -> Result<()> {
    writeln!(out, "{TRACE_VERSION}")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for r in records {
        w.write_record(r.csv_fields())?;
    }
    w.flush()?;
    Ok(())
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, line: usize) -> Result<T> {
    row.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Parse {
            line,
            message: format!("bad value in column '{}'", TRACE_HEADER[i]),
        })
}

/// Reads a trace written by [`write_trace`]. Real-valued columns come back
/// rounded to the ten decimals they were written with.
pub fn read_trace<R: BufRead>(mut reader: R) -> Result<Vec<RoundRecord>> {
    let mut first = String::new();
    reader.read_line(&mut first)?;
    if first.trim_end() != TRACE_VERSION {
        return Err(Error::Parse {
            line: 1,
            message: format!("unsupported trace header '{}'", first.trim_end()),
        });
    }
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 3;
        let flag = |j: usize| -> Result<bool> { Ok(field::<u8>(&row, j, line)? == 1) };
        out.push(RoundRecord {
            round: field(&row, 0, line)?,
            query_id: row.get(1).unwrap_or_default().to_string(),
            online_ndcg: field(&row, 2, line)?,
            offline_ndcg: field(&row, 3, line)?,
            instantaneous_unfairness: field(&row, 4, line)?,
            cumulative_unfairness: field(&row, 5, line)?,
            added_regret: field(&row, 6, line)?,
            pairwise_regret: field(&row, 7, line)?,
            clicks: field(&row, 8, line)?,
            certain_pairs: field(&row, 9, line)?,
            blocks: field(&row, 10, line)?,
            template: row.get(11).unwrap_or_default().to_string(),
            fallback: flag(12)?,
            flagged: flag(13)?,
            note: row.get(14).unwrap_or_default().to_string(),
        });
    }
    Ok(out)
}

pub fn write_summary<W: Write>(result: &ExperimentResult, mut out: W) -> Result<()> {
    let Summary {
        rounds_completed,
        final_offline_ndcg,
        cumulative_ndcg,
        mean_online_ndcg,
        final_unfairness,
        max_unfairness,
        violations,
        total_added_regret,
        total_pairwise_regret,
        fallback_rounds,
        flagged_rounds,
        beta,
    } = &result.summary;
    writeln!(out, "{SUMMARY_VERSION}")?;
    writeln!(out, "rounds_completed={rounds_completed}")?;
    writeln!(out, "final_offline_ndcg={final_offline_ndcg}")?;
    writeln!(out, "cumulative_ndcg={cumulative_ndcg}")?;
    writeln!(out, "mean_online_ndcg={mean_online_ndcg}")?;
    writeln!(out, "final_unfairness={final_unfairness}")?;
    writeln!(out, "max_unfairness={max_unfairness}")?;
    writeln!(out, "violations={violations}")?;
    writeln!(out, "total_added_regret={total_added_regret}")?;
    writeln!(out, "total_pairwise_regret={total_pairwise_regret}")?;
    writeln!(out, "fallback_rounds={fallback_rounds}")?;
    writeln!(out, "flagged_rounds={flagged_rounds}")?;
    writeln!(out, "beta={beta}")?;
    if let Some(msg) = &result.aborted {
        writeln!(out, "aborted={msg}")?;
    }
    writeln!(out, "# configuration")?;
    write!(out, "{}", result.config.to_kv_string())?;
    Ok(())
}

/// Writes trace, summary and the optional checkpoint and diagnostics.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_trace(&result.records, BufWriter::new(File::create(dir.join(TRACE_FILE))?))?;
    let mut summary = BufWriter::new(File::create(dir.join("summary.txt"))?);
    write_summary(result, &mut summary)?;
    summary.flush()?;
    if result.config.checkpoint {
        let mut ck = BufWriter::new(File::create(dir.join("checkpoint"))?);
        write_checkpoint(&result.state, &mut ck)?;
        ck.flush()?;
    }
    if result.config.diagnostics {
        let mut log = BufWriter::new(File::create(dir.join("fairswap.log"))?);
        writeln!(log, "{FAIRSWAP_LOG_VERSION}")?;
        for line in &result.diagnostics {
            writeln!(log, "{line}")?;
        }
        log.flush()?;
    }
    Ok(())
}
