//! CSV trial log (`n,m,outcome,next_cmd,elapsed_cycles,seed`) and window
//! summary (`parameter,min,max`).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{SearchError, TrialOutcome, TrialRecord, WindowSummary};

#[derive(Serialize, Deserialize)]
struct TrialRow {
    n: u64,
    m: u64,
    outcome: TrialOutcome,
    next_cmd: Option<u8>,
    elapsed_cycles: u64,
    seed: u64,
}

#[derive(Serialize, Deserialize)]
struct SummaryRow {
    parameter: String,
    min: u64,
    max: u64,
}

pub fn write_trial_log<W: Write>(out: W, records: &[TrialRecord]) -> Result<(), SearchError> {
    let mut w = csv::Writer::from_writer(out);
    if records.is_empty() {
        w.write_record(["n", "m", "outcome", "next_cmd", "elapsed_cycles", "seed"])?;
    }
    for r in records {
        w.serialize(TrialRow {
            n: r.n_offset,
            m: r.m_width,
            outcome: r.outcome,
            next_cmd: r.next_command_index,
            elapsed_cycles: r.elapsed_cycles,
            seed: r.seed,
        })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trial_log<R: Read>(input: R) -> Result<Vec<TrialRecord>, SearchError> {
    csv::Reader::from_reader(input)
        .deserialize::<TrialRow>()
        .map(|row| {
            let row = row?;
            Ok(TrialRecord {
                n_offset: row.n,
                m_width: row.m,
                outcome: row.outcome,
                next_command_index: row.next_cmd,
                elapsed_cycles: row.elapsed_cycles,
                seed: row.seed,
            })
        })
        .collect()
}

pub fn write_summary<W: Write>(out: W, summary: &[WindowSummary]) -> Result<(), SearchError> {
    let mut w = csv::Writer::from_writer(out);
    if summary.is_empty() {
        w.write_record(["parameter", "min", "max"])?;
    }
    for s in summary {
        w.serialize(SummaryRow { parameter: s.parameter.clone(), min: s.min, max: s.max })?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_summary<R: Read>(input: R) -> Result<Vec<WindowSummary>, SearchError> {
    csv::Reader::from_reader(input)
        .deserialize::<SummaryRow>()
        .map(|row| {
            let row = row?;
            Ok(WindowSummary { parameter: row.parameter, min: row.min, max: row.max })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trial_log_format() {
        let records = [
            TrialRecord {
                n_offset: 40810,
                m_width: 50,
                outcome: TrialOutcome::Success,
                next_command_index: Some(17),
                elapsed_cycles: 40818,
                seed: 9,
            },
            TrialRecord {
                n_offset: 40810,
                m_width: 56,
                outcome: TrialOutcome::Halt,
                next_command_index: None,
                elapsed_cycles: 100,
                seed: 10,
            },
            TrialRecord {
                n_offset: 40790,
                m_width: 3,
                outcome: TrialOutcome::UnknownState,
                next_command_index: Some(42),
                elapsed_cycles: 7,
                seed: 11,
            },
        ];
        let mut buf = Vec::new();
        write_trial_log(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(
            text,
            "n,m,outcome,next_cmd,elapsed_cycles,seed\n\
             40810,50,success,17,40818,9\n\
             40810,56,halt,,100,10\n\
             40790,3,unknown,42,7,11\n"
        );
        assert_eq!(read_trial_log(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn empty_outputs_keep_headers() {
        let mut buf = Vec::new();
        write_trial_log(&mut buf, &[]).unwrap();
        assert_eq!(buf, b"n,m,outcome,next_cmd,elapsed_cycles,seed\n");
        let mut buf = Vec::new();
        write_summary(&mut buf, &[]).unwrap();
        assert_eq!(buf, b"parameter,min,max\n");
        assert!(read_summary(buf.as_slice()).unwrap().is_empty());
    }

    #[test]
    fn summary_round_trip() {
        let s = vec![
            WindowSummary { parameter: "N".into(), min: 40800, max: 40820 },
            WindowSummary { parameter: "M".into(), min: 45, max: 55 },
        ];
        let mut buf = Vec::new();
        write_summary(&mut buf, &s).unwrap();
        assert_eq!(String::from_utf8(buf.clone()).unwrap(), "parameter,min,max\nN,40800,40820\nM,45,55\n");
        assert_eq!(read_summary(buf.as_slice()).unwrap(), s);
    }
}
