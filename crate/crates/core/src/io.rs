//! File formats: numeric CSV tables, trajectory batches, sample sets and
//! weight files.
//!
//! Binary trajectory batch layout: magic `STFTRAJ\0`, `u32` version, `u64`
//! rows, `u64` columns, then `rows × columns` little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statforge_tensor::container::{read_container, write_container, ContainerHeader};
use statforge_tensor::ParameterStore;

use crate::error::{Error, Result};
use crate::models::Trajectory;
use crate::samples::SampleSet;

pub const TRAJ_MAGIC: &[u8; 8] = b"STFTRAJ\0";
pub const TRAJ_VERSION: u32 = 1;

/// Named numeric columns, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(Error::Format(format!(
                "row has {} values, table has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Values are printed in shortest round-trip form, so parsing the
    /// output gives back identical bits.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(&self.columns)?;
        for r in &self.rows {
            wr.write_record(r.iter().map(|v| format!("{v:?}")))?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let columns: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        let mut t = Self::new(columns);
        for rec in rd.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|s| s.trim().parse::<f64>().map_err(|e| Error::Format(format!("`{s}`: {e}"))))
                .collect::<Result<Vec<f64>>>()?;
            t.push(row)?;
        }
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_csv(BufReader::new(File::open(path)?))
    }
}

/// `step, x` rows; step 0 is the initial condition.
pub fn trajectory_table(t: &Trajectory) -> Table {
    let mut tab = Table::new(vec!["step".into(), "x".into()]);
    tab.rows.push(vec![0.0, t.x0]);
    for (i, x) in t.x.iter().enumerate() {
        tab.rows.push(vec![(i + 1) as f64, *x]);
    }
    tab
}

pub fn trajectory_from_table(tab: &Table) -> Result<Trajectory> {
    let x = tab.column("x").ok_or_else(|| Error::Format("missing column `x`".into()))?;
    match x.split_first() {
        Some((x0, rest)) => Ok(Trajectory::new(rest.to_vec(), *x0)),
        None => Err(Error::Format("empty trajectory".into())),
    }
}

/// Write equal-length rows as a binary batch.
pub fn write_batch<W: Write>(mut w: W, rows: &[Vec<f64>]) -> Result<()> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::Format("batch rows differ in length".into()));
    }
    w.write_all(TRAJ_MAGIC)?;
    w.write_all(&TRAJ_VERSION.to_le_bytes())?;
    w.write_all(&(rows.len() as u64).to_le_bytes())?;
    w.write_all(&(cols as u64).to_le_bytes())?;
    for r in rows {
        for v in r {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_batch<R: Read>(mut r: R) -> Result<Vec<Vec<f64>>> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != TRAJ_MAGIC {
        return Err(Error::Format("not a trajectory batch".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != TRAJ_VERSION {
        return Err(Error::Format(format!("unsupported batch version {}", u32::from_le_bytes(b4))));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let rows = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let cols = u64::from_le_bytes(b8) as usize;
    let mut out = Vec::with_capacity(rows);
    for _ in 0..rows {
        let mut row = Vec::with_capacity(cols);
        for _ in 0..cols {
            r.read_exact(&mut b8)?;
            row.push(f64::from_le_bytes(b8));
        }
        out.push(row);
    }
    Ok(out)
}

pub fn samples_table(s: &SampleSet) -> Table {
    Table {
        columns: s.names.clone(),
        rows: s.draws.clone(),
    }
}

/// Sample set from the columns named `names`; other columns (such as
/// ABC distances) are ignored.
pub fn samples_from_table(t: &Table, names: &[String], method: &str) -> Result<SampleSet> {
    let idx = names
        .iter()
        .map(|n| {
            t.columns
                .iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Format(format!("missing column `{n}`")))
        })
        .collect::<Result<Vec<usize>>>()?;
    let draws = t.rows.iter().map(|r| idx.iter().map(|&j| r[j]).collect()).collect();
    SampleSet::new(names.to_vec(), draws, method)
}

pub fn save_samples(s: &SampleSet, path: &Path) -> Result<()> {
    samples_table(s).save(path)
}

pub fn load_samples(path: &Path, names: &[String], method: &str) -> Result<SampleSet> {
    samples_from_table(&Table::load(path)?, names, method)
}

pub fn save_weights(path: &Path, store: &ParameterStore, meta: serde_json::Value) -> Result<()> {
    write_container(BufWriter::new(File::create(path)?), store, meta)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(ParameterStore, ContainerHeader)> {
    Ok(read_container(BufReader::new(File::open(path)?))?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = BufReader::new(File::open(path)?);
    let mut buf = [0u8; 1 << 16];
    loop {
        let k = f.read(&mut buf)?;
        if k == 0 {
            break;
        }
        h.update(&buf[..k]);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_keeps_bits() {
        let mut t = Table::new(vec!["a".into(), "b".into()]);
        t.push(vec![0.1 + 0.2, -1e-300]).unwrap();
        t.push(vec![f64::MAX, 5.0]).unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(Table::read_csv(buf.as_slice()).unwrap(), t);
    }

    #[test]
    fn batch_round_trip() {
        let rows = vec![vec![1.0, 2.5], vec![-0.0, 1e-12]];
        let mut buf = Vec::new();
        write_batch(&mut buf, &rows).unwrap();
        assert_eq!(read_batch(buf.as_slice()).unwrap(), rows);
        buf[0] = b'X';
        assert!(read_batch(buf.as_slice()).is_err());
    }

    #[test]
    fn trajectory_table_includes_start() {
        let t = Trajectory::new(vec![0.3, 0.4], 0.25);
        let tab = trajectory_table(&t);
        assert_eq!(tab.rows[0], vec![0.0, 0.25]);
        assert_eq!(trajectory_from_table(&tab).unwrap(), t);
    }

    #[test]
    fn digest_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
