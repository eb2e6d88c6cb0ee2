//! Binary checkpoint format.
//!
//! ```text
//! "FDEA" | version: u32 LE | d: u64 LE | json_len: u64 LE | layout JSON (UTF-8) | d × f64 LE
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

use super::{ParamLayout, ParamVector};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FDEA";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode(v: &ParamVector) -> Vec<u8> {
    let layout = serde_json::to_vec(&**v.layout()).expect("layout serializes");
    let mut out = Vec::with_capacity(24 + layout.len() + 8 * v.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    out.extend_from_slice(&(layout.len() as u64).to_le_bytes());
    out.extend_from_slice(&layout);
    for x in v.values() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<ParamVector> {
    let mut r = bytes;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        if r.len() < n {
            return Err(Error::Structural(format!("checkpoint truncated in {what}")));
        }
        let (head, tail) = r.split_at(n);
        r = tail;
        Ok(head)
    };
    if take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(Error::Structural("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(take(4, "version")?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Structural(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let d = u64::from_le_bytes(take(8, "dimension")?.try_into().unwrap()) as usize;
    let json_len = u64::from_le_bytes(take(8, "layout length")?.try_into().unwrap()) as usize;
    let layout: ParamLayout = serde_json::from_slice(take(json_len, "layout")?)
        .map_err(|e| Error::Structural(format!("checkpoint layout: {e}")))?;
    if layout.total_dim() != d {
        return Err(Error::Structural(format!(
            "checkpoint header says d={d} but layout covers {}",
            layout.total_dim()
        )));
    }
    let body = take(8 * d, "values")?;
    if !r.is_empty() {
        return Err(Error::Structural("trailing bytes after checkpoint values".into()));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamVector::from_values(Arc::new(layout), values)
}

pub fn write_checkpoint(path: impl AsRef<Path>, v: &ParamVector) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(v))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ParamVector> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let layout = Arc::new(ParamLayout::new([("w", 2), ("b", 1)]).unwrap());
        let v = ParamVector::from_values(layout, vec![1.0, -2.5, 0.0]).unwrap();
        let bytes = encode(&v);
        assert_eq!(&bytes[..4], b"FDEA");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 3);
        let json_len = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let json: serde_json::Value = serde_json::from_slice(&bytes[24..24 + json_len]).unwrap();
        assert_eq!(json["total_dim"], 3);
        let tail = &bytes[24 + json_len..];
        assert_eq!(tail.len(), 24);
        assert_eq!(f64::from_le_bytes(tail[8..16].try_into().unwrap()), -2.5);
    }

    #[test]
    fn rejects_corruption() {
        let v = ParamVector::flat(vec![1.0, 2.0]).unwrap();
        let mut bytes = encode(&v);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let v = ParamVector::flat(vec![0.25, -1e-9, 3.5e7]).unwrap();
        write_checkpoint(&path, &v).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), v);
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(values in prop::collection::vec(-1e12f64..1e12, 1..64)) {
            let v = ParamVector::flat(values).unwrap();
            let back = decode(&encode(&v)).unwrap();
            prop_assert!(back.bitwise_eq(&v));
            prop_assert_eq!(back.layout(), v.layout());
        }
    }
}
