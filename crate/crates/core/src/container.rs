//! Tensor container used for prepared datasets and model checkpoints.
//!
//! Layout:
//!
//! ```text
//! PXSC 1\n
//! <header: one line of JSON>\n
//! <payload: little-endian f64 values>
//! ```
//!
//! The header is `{"kind": str, "meta": any, "tensors": [{"name": str, "shape": [int]}]}`.
//! Tensors are stored back to back in header order, each taking
//! `8 * product(shape)` bytes, and the payload holds nothing else.

use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &str = "PXSC 1";
/// Upper bound on the header line, bytes.
pub const MAX_HEADER: usize = 64 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Container {
    pub kind: String,
    pub meta: Value,
    pub tensors: Vec<TensorEntry>,
}

fn element_count(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Container {
    pub fn new(kind: impl Into<String>, meta: Value) -> Self {
        Self {
            kind: kind.into(),
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<()> {
        let name = name.into();
        if element_count(&shape) != Some(data.len()) {
            return Err(Error::Shape(format!(
                "tensor `{name}` has {} values for shape {shape:?}",
                data.len()
            )));
        }
        if self.tensors.iter().any(|t| t.name == name) {
            return Err(Error::Container(format!("duplicate tensor name `{name}`")));
        }
        self.tensors.push(TensorEntry { name, shape, data });
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorEntry> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Container(format!("missing tensor `{name}`")))
    }

    /// Checks the kind tag and deserializes the metadata.
    pub fn meta_as<T: serde::de::DeserializeOwned>(&self, kind: &str) -> Result<T> {
        if self.kind != kind {
            return Err(Error::Container(format!("expected a `{kind}` container, found `{}`", self.kind)));
        }
        serde_json::from_value(self.meta.clone()).map_err(|e| Error::Container(format!("metadata: {e}")))
    }

    pub fn encode(&self) -> Vec<u8> {
        let header = serde_json::json!({
            "kind": self.kind,
            "meta": self.meta,
            "tensors": self.tensors,
        });
        let total: usize = self.tensors.iter().map(|t| t.data.len()).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 64 + total * 8);
        out.extend_from_slice(MAGIC.as_bytes());
        out.push(b'\n');
        serde_json::to_writer(&mut out, &header).expect("json values always serialize");
        out.push(b'\n');
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let err = |m: String| Error::Container(m);
        let rest = bytes
            .strip_prefix(MAGIC.as_bytes())
            .and_then(|r| r.strip_prefix(b"\n"))
            .ok_or_else(|| err(format!("missing `{MAGIC}` magic line")))?;
        let nl = rest
            .iter()
            .take(MAX_HEADER)
            .position(|&b| b == b'\n')
            .ok_or_else(|| err("unterminated header line".into()))?;
        let mut c: Container =
            serde_json::from_slice(&rest[..nl]).map_err(|e| err(format!("header: {e}")))?;
        let mut payload = &rest[nl + 1..];
        for t in &mut c.tensors {
            let bytes_needed = element_count(&t.shape)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| err(format!("tensor `{}` shape {:?} overflows", t.name, t.shape)))?;
            if bytes_needed > payload.len() {
                return Err(err(format!(
                    "tensor `{}` needs {bytes_needed} bytes, {} remain",
                    t.name,
                    payload.len()
                )));
            }
            let (head, tail) = payload.split_at(bytes_needed);
            t.data = head
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            payload = tail;
        }
        if !payload.is_empty() {
            return Err(err(format!("{} trailing bytes after the last tensor", payload.len())));
        }
        let mut names: Vec<&str> = c.tensors.iter().map(|t| t.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(err(format!("duplicate tensor name `{}`", w[0])));
        }
        Ok(c)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.encode())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = std::fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Container {
        let mut c = Container::new("test", serde_json::json!({"a": 1, "b": ["x"]}));
        c.push("w", vec![2, 3], vec![1.0, -2.5, 3.25, f64::MIN_POSITIVE, 0.0, -0.0]).unwrap();
        c.push("empty", vec![0, 4], vec![]).unwrap();
        c.push("s", vec![], vec![7.0]).unwrap();
        c
    }

    #[test]
    fn round_trip_bit_exact() {
        let c = sample();
        let bytes = c.encode();
        let back = Container::decode(&bytes).unwrap();
        assert_eq!(back.kind, "test");
        assert_eq!(back.meta, c.meta);
        for (a, b) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(a.shape, b.shape);
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a.data), bits(&b.data));
        }
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn malformed_inputs_rejected() {
        let bytes = sample().encode();
        assert!(Container::decode(b"").is_err());
        assert!(Container::decode(b"PXSC 2\n{}\n").is_err());
        assert!(Container::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Container::decode(&extra).is_err());
        let huge = format!(
            "{MAGIC}\n{{\"kind\":\"k\",\"meta\":null,\"tensors\":[{{\"name\":\"t\",\"shape\":[{},{}]}}]}}\n",
            usize::MAX,
            usize::MAX
        );
        assert!(Container::decode(huge.as_bytes()).is_err());
        let dup = format!(
            "{MAGIC}\n{{\"kind\":\"k\",\"meta\":null,\"tensors\":[{{\"name\":\"t\",\"shape\":[]}},{{\"name\":\"t\",\"shape\":[]}}]}}\n{}",
            "\0".repeat(16)
        );
        assert!(Container::decode(dup.as_bytes()).is_err());
    }

    #[test]
    fn push_validates() {
        let mut c = Container::new("k", Value::Null);
        assert!(c.push("a", vec![2], vec![1.0]).is_err());
        c.push("a", vec![1], vec![1.0]).unwrap();
        assert!(c.push("a", vec![1], vec![1.0]).is_err());
        assert!(c.tensor("missing").is_err());
        assert!(c.meta_as::<Value>("other").is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let c = sample();
        c.write(&p).unwrap();
        assert_eq!(Container::read(&p).unwrap().encode(), c.encode());
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let mut input = format!("{MAGIC}\n").into_bytes();
            input.extend(bytes);
            let _ = Container::decode(&input);
        }
    }
}
