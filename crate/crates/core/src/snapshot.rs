//! Versioned on-disk snapshots of a [`ProductState`].
//!
//! Binary layout (little endian): 8-byte magic `PKMSNAP\0`, `u32` version,
//! then the configuration and every machine's `σ`, `R` and `V` in
//! column-major order. The JSON form wraps the state with the same magic and
//! version.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::machine::{Addressing, MachineState};
use crate::numerics::{Matrix, SymMatrix};
use crate::product::{ProductConfig, ProductState};

pub const MAGIC: [u8; 8] = *b"PKMSNAP\0";
pub const VERSION: u32 = 1;
const JSON_MAGIC: &str = "PKMSNAP";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotFormat {
    Binary,
    Json,
}

#[derive(Serialize, Deserialize)]
struct JsonSnapshot {
    magic: String,
    version: u32,
    state: ProductState,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Snapshot(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn to_bytes(state: &ProductState) -> Result<Vec<u8>> {
    let cfg = state.config();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, cfg.machines)?;
    put_u32(&mut out, cfg.code_size)?;
    put_u32(&mut out, cfg.columns_per_machine)?;
    put_f64(&mut out, cfg.lambda);
    put_u32(&mut out, cfg.settle_iters)?;
    put_u32(&mut out, cfg.coupling_iters)?;
    match cfg.addressing {
        Addressing::Mean => {
            out.push(0);
            put_f64(&mut out, 0.0);
        }
        Addressing::Sampled { std } => {
            out.push(1);
            put_f64(&mut out, std);
        }
    }
    for m in state.machines() {
        put_f64(&mut out, m.sigma());
        m.mean().iter().for_each(|&v| put_f64(&mut out, v));
        m.cov().as_matrix().iter().for_each(|&v| put_f64(&mut out, v));
    }
    Ok(out)
}

struct Cursor<'a>(&'a [u8]);

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        if self.0.len() < N {
            return Err(Error::Snapshot("truncated snapshot".into()));
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().expect("length checked"))
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take()?) as usize)
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take()?))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Matrix> {
        let n = rows.checked_mul(cols).ok_or_else(|| Error::Snapshot("matrix too large".into()))?;
        if self.0.len() < n.saturating_mul(8) {
            return Err(Error::Snapshot("truncated snapshot".into()));
        }
        let data = (0..n).map(|_| self.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Matrix::from_vec(rows, cols, data))
    }
}

fn check_version(version: u32) -> Result<()> {
    if version != VERSION {
        return Err(Error::Snapshot(format!("unsupported snapshot version {version}")));
    }
    Ok(())
}

pub fn from_bytes(bytes: &[u8]) -> Result<ProductState> {
    let mut cur = Cursor(bytes);
    if cur.take::<8>()? != MAGIC {
        return Err(Error::Snapshot("bad magic header".into()));
    }
    check_version(u32::from_le_bytes(cur.take()?))?;
    let machines = cur.u32()?;
    let code_size = cur.u32()?;
    let columns = cur.u32()?;
    let mut cfg = ProductConfig::new(code_size, machines.saturating_mul(columns), machines)?;
    cfg.lambda = cur.f64()?;
    cfg.settle_iters = cur.u32()?;
    cfg.coupling_iters = cur.u32()?;
    let tag = cur.take::<1>()?[0];
    let std = cur.f64()?;
    cfg.addressing = match tag {
        0 => Addressing::Mean,
        1 => Addressing::Sampled { std },
        t => return Err(Error::Snapshot(format!("unknown addressing tag {t}"))),
    };
    let states = (0..machines)
        .map(|_| {
            let sigma = cur.f64()?;
            let mean = cur.matrix(code_size, columns)?;
            let cov = SymMatrix::new(cur.matrix(columns, columns)?)?;
            MachineState::new(mean, cov, sigma)
        })
        .collect::<Result<Vec<_>>>()?;
    if !cur.0.is_empty() {
        return Err(Error::Snapshot(format!("{} trailing bytes", cur.0.len())));
    }
    ProductState::new(states, cfg)
}

pub fn to_json(state: &ProductState) -> Result<String> {
    let snap = JsonSnapshot { magic: JSON_MAGIC.into(), version: VERSION, state: state.clone() };
    serde_json::to_string_pretty(&snap).map_err(|e| Error::Snapshot(e.to_string()))
}

pub fn from_json(text: &str) -> Result<ProductState> {
    let snap: JsonSnapshot = serde_json::from_str(text).map_err(|e| Error::Snapshot(e.to_string()))?;
    if snap.magic != JSON_MAGIC {
        return Err(Error::Snapshot("bad magic header".into()));
    }
    check_version(snap.version)?;
    let cfg = snap.state.config().clone();
    ProductState::new(snap.state.machines().to_vec(), cfg)
}

pub fn save<W: Write>(mut out: W, state: &ProductState, format: SnapshotFormat) -> Result<()> {
    match format {
        SnapshotFormat::Binary => out.write_all(&to_bytes(state)?)?,
        SnapshotFormat::Json => out.write_all(to_json(state)?.as_bytes())?,
    }
    Ok(())
}

/// Loads either format, telling them apart by the leading bytes.
pub fn load<R: Read>(mut input: R) -> Result<ProductState> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.starts_with(&MAGIC) {
        return from_bytes(&bytes);
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::Snapshot("not a snapshot".into()))?;
    from_json(text)
}
