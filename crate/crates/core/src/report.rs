//! CSV tables consumed by plotting scripts. Headers are part of the contract.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::episodes::{BindingRow, CapacityRow};
use crate::error::{Error, Result};
use crate::product::EpisodeLog;
use crate::scaling::{BenchRecord, StepKind};

pub const BENCH_HEADER: [&str; 6] = ["m", "k", "kind", "mean_seconds", "std_seconds", "trials"];
pub const CAPACITY_HEADER: [&str; 4] = ["T", "k", "mse", "cosine"];
pub const EPISODE_LOG_HEADER: [&str; 4] = ["t", "machine", "gamma", "delta_norm"];
pub const BINDING_HEADER: [&str; 4] = ["T", "k", "masked_cosine", "visible_cosine"];

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

#[derive(Serialize, Deserialize)]
struct BenchRow {
    m: usize,
    k: usize,
    kind: StepKind,
    mean_seconds: f64,
    std_seconds: f64,
    trials: usize,
}

pub fn write_bench_csv<W: Write>(out: W, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BENCH_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record(&[
            r.m.to_string(),
            r.k.to_string(),
            r.kind.as_str().to_string(),
            r.mean_seconds.to_string(),
            r.std_seconds.to_string(),
            r.trials.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bench_csv<R: Read>(input: R) -> Result<Vec<BenchRecord>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(BENCH_HEADER) {
        return Err(Error::Config(format!("unexpected bench header {:?}", header.iter().collect::<Vec<_>>())));
    }
    rdr.deserialize::<BenchRow>()
        .map(|row| {
            let row = row.map_err(csv_err)?;
            Ok(BenchRecord {
                m: row.m,
                k: row.k,
                kind: row.kind,
                mean_seconds: row.mean_seconds,
                std_seconds: row.std_seconds,
                trials: row.trials,
            })
        })
        .collect()
}

pub fn write_capacity_csv<W: Write>(out: W, rows: &[CapacityRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CAPACITY_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(&[r.t.to_string(), r.k.to_string(), r.mse.to_string(), r.cosine.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_binding_csv<W: Write>(out: W, rows: &[BindingRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BINDING_HEADER).map_err(csv_err)?;
    for r in rows {
        w.write_record(&[r.t.to_string(), r.k.to_string(), r.masked_cosine.to_string(), r.visible_cosine.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per (step, machine).
pub fn write_episode_log_csv<W: Write>(out: W, log: &EpisodeLog) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EPISODE_LOG_HEADER).map_err(csv_err)?;
    for step in &log.steps {
        for (i, g) in step.weights.gamma.iter().enumerate() {
            w.write_record(&[step.t.to_string(), i.to_string(), g.to_string(), step.delta_norm.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bench_round_trip_is_exact() {
        let records = vec![
            BenchRecord { m: 240, k: 1, kind: StepKind::Write, mean_seconds: 0.1 + 0.2, std_seconds: 1e-7, trials: 9 },
            BenchRecord { m: 240, k: 2, kind: StepKind::Read, mean_seconds: 3.318e-08, std_seconds: 0.0, trials: 9 },
        ];
        let mut buf = Vec::new();
        write_bench_csv(&mut buf, &records).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("m,k,kind,mean_seconds,std_seconds,trials\n"));
        assert_eq!(read_bench_csv(buf.as_slice()).unwrap(), records);
    }

    #[test]
    fn headers() {
        let mut buf = Vec::new();
        write_capacity_csv(&mut buf, &[CapacityRow { t: 5, k: 2, mse: 0.5, cosine: 0.9 }]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "T,k,mse,cosine\n5,2,0.5,0.9\n");
        assert!(read_bench_csv("a,b\n1,2\n".as_bytes()).is_err());
    }
}
