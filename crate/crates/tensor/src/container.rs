//! Versioned weight container.
//!
//! Layout: 8-byte magic `SFWEIGHT`, `u32` little-endian version, `u64`
//! little-endian header length, a UTF-8 JSON header, then one flat
//! little-endian `f64` blob per tensor in header order.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, TensorError};
use crate::store::ParameterStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SFWEIGHT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    /// Free-form producer metadata (architecture, init spec, hashes).
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn write_container<W: Write>(mut w: W, store: &ParameterStore, meta: serde_json::Value) -> Result<()> {
    let header = ContainerHeader {
        dtype: "f64-le".into(),
        tensors: store
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        meta,
    };
    let json = serde_json::to_vec(&header).map_err(|e| TensorError::Container(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for (_, t) in store.iter() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<(ParameterStore, ContainerHeader)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(TensorError::Container("bad magic".into()));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != VERSION {
        return Err(TensorError::Container(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let hlen = u64::from_le_bytes(b8) as usize;
    let mut json = vec![0u8; hlen];
    r.read_exact(&mut json)?;
    let header: ContainerHeader =
        serde_json::from_slice(&json).map_err(|e| TensorError::Container(e.to_string()))?;
    if header.dtype != "f64-le" {
        return Err(TensorError::Container(format!("unsupported dtype {}", header.dtype)));
    }
    let mut store = ParameterStore::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        let mut raw = vec![0u8; n * 8];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        store.insert(entry.name.clone(), Tensor::new(&entry.shape, data)?)?;
    }
    Ok((store, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut s = ParameterStore::new();
        s.insert("a", Tensor::new(&[2, 2], vec![1.0, -0.0, f64::MIN_POSITIVE, 1.0 / 3.0]).unwrap())
            .unwrap();
        s.insert("b", Tensor::vector(vec![std::f64::consts::PI])).unwrap();
        let mut buf = Vec::new();
        write_container(&mut buf, &s, serde_json::json!({"arch": "test"})).unwrap();
        let (back, header) = read_container(&buf[..]).unwrap();
        assert_eq!(header.meta["arch"], "test");
        for ((n1, t1), (n2, t2)) in s.iter().zip(back.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            let b1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let b2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(b1, b2);
        }
    }

    #[test]
    fn rejects_foreign_files() {
        let err = read_container(&b"NOTAWGHT\x01\0\0\0"[..]).unwrap_err();
        assert!(matches!(err, TensorError::Container(_)));
    }
}
