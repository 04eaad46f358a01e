//! Binary checkpoint container.
//!
//! Layout: the magic bytes `CFCK`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header, then each tensor's
//! `f32` values in row-major little-endian order, in header order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{NnError, Params};

pub const MAGIC: &[u8; 4] = b"CFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Snapshot of the model configuration.
    pub config: Value,
    pub params: Params<f32>,
    /// Free-form run information (history, vocabulary, ...).
    pub meta: Value,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: [usize; 2],
    #[serde(default = "yes", skip_serializing_if = "is_true")]
    trainable: bool,
}

fn yes() -> bool {
    true
}

fn is_true(b: &bool) -> bool {
    *b
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: Value,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: Value,
}

fn io_err(path: &Path, source: std::io::Error) -> NnError {
    NnError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

pub fn to_bytes(ck: &Checkpoint) -> Vec<u8> {
    let header = Header {
        config: ck.config.clone(),
        tensors: ck
            .params
            .tensors
            .iter()
            .map(|(name, a)| TensorEntry {
                name: name.clone(),
                dtype: "f32".into(),
                shape: [a.nrows(), a.ncols()],
                trainable: !ck.params.frozen.contains(name),
            })
            .collect(),
        meta: ck.meta.clone(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + json.len() + 4 * ck.params.count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for a in ck.params.tensors.values() {
        for &x in a.iter() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8], what: &str) -> Result<Checkpoint, NnError> {
    let bad = |why: &str| NnError::BadMagic(format!("{what}: {why}"));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(bad("missing CFCK magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = &bytes[16..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| bad(&format!("header: {e}")))?;
    let mut data = &body[hlen..];
    let mut params = Params::default();
    for t in header.tensors {
        if t.dtype != "f32" {
            return Err(bad(&format!("unsupported dtype {}", t.dtype)));
        }
        let [r, c] = t.shape;
        let n = r * c * 4;
        if data.len() < n {
            return Err(bad("truncated payload"));
        }
        let values: Vec<f32> = data[..n]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        data = &data[n..];
        if !t.trainable {
            params.frozen.insert(t.name.clone());
        }
        params
            .tensors
            .insert(t.name, Array2::from_shape_vec((r, c), values).unwrap());
    }
    if !data.is_empty() {
        return Err(bad("trailing bytes after payload"));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        meta: header.meta,
    })
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<(), NnError> {
    fs::write(path, to_bytes(ck)).map_err(|e| io_err(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, NnError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    from_bytes(&bytes, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, ParamSpec};
    use serde_json::json;

    fn sample() -> Checkpoint {
        let specs = [
            ParamSpec::new("a", 3, 4, Init::TruncNormal),
            ParamSpec::new("b", 1, 4, Init::Ones),
            ParamSpec::new("hash", 1, 3, Init::Fixed(vec![2.0, 0.0, 1.0])),
        ];
        Checkpoint {
            config: json!({"hidden": 4}),
            params: Params::init(&specs, 9),
            meta: json!({"note": "x"}),
        }
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cfck");
        let ck = sample();
        save_checkpoint(&ck, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ck);
        assert_eq!(to_bytes(&back), fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_and_missing() {
        let bytes = to_bytes(&sample());
        for cut in [0, 3, 10, 40, bytes.len() - 1] {
            assert!(matches!(from_bytes(&bytes[..cut], "t"), Err(NnError::BadMagic(_))), "{cut}");
        }
        let err = load_checkpoint(Path::new("/nonexistent/dir/x.cfck")).unwrap_err();
        assert!(matches!(err, NnError::IoFailure { .. }));
    }
}
