use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("missing entry `{0}` in checkpoint")]
    Missing(String),
    #[error("checkpoint hash mismatch: sidecar {expected}, blob {actual}")]
    HashMismatch { expected: String, actual: String },
    #[error("sidecar error: {0}")]
    Sidecar(String),
}

const MAGIC: &[u8; 8] = b"S4CKPT01";

/// Record-oriented binary checkpoint blob: named f32 tensors, u64 scalars,
/// and raw byte entries, written little-endian. Entry order follows write
/// order; readers index by name.
pub struct BlobWriter {
    buf: Vec<u8>,
}

impl Default for BlobWriter {
    fn default() -> Self {
        Self::new()
    }
}

impl BlobWriter {
    pub fn new() -> Self {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        BlobWriter { buf }
    }

    fn put_name(&mut self, name: &str) {
        let bytes = name.as_bytes();
        self.buf.extend_from_slice(&(bytes.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(bytes);
    }

    pub fn put_tensor(&mut self, name: &str, data: &[f32]) {
        self.buf.push(1);
        self.put_name(name);
        self.buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn put_u64(&mut self, name: &str, v: u64) {
        self.buf.push(2);
        self.put_name(name);
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_bytes(&mut self, name: &str, data: &[u8]) {
        self.buf.push(3);
        self.put_name(name);
        self.buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(data);
    }

    /// Writes the blob and returns its SHA-256 hex digest.
    pub fn write_to(self, path: &Path) -> Result<String, CheckpointError> {
        let digest = hex_digest(&self.buf);
        let mut f = fs::File::create(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        f.write_all(&self.buf).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Ok(digest)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

enum Entry {
    Tensor(Vec<f32>),
    Scalar(u64),
    Bytes(Vec<u8>),
}

/// Parsed checkpoint blob with name-indexed entries.
pub struct BlobReader {
    entries: BTreeMap<String, Entry>,
    digest: String,
}

impl BlobReader {
    pub fn read_from(path: &Path) -> Result<Self, CheckpointError> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| CheckpointError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        let digest = hex_digest(&buf);
        if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::Malformed("bad magic".into()));
        }
        let mut pos = MAGIC.len();
        let mut entries = BTreeMap::new();
        let take = |buf: &[u8], pos: &mut usize, n: usize| -> Result<Vec<u8>, CheckpointError> {
            if *pos + n > buf.len() {
                return Err(CheckpointError::Malformed("truncated entry".into()));
            }
            let out = buf[*pos..*pos + n].to_vec();
            *pos += n;
            Ok(out)
        };
        while pos < buf.len() {
            let tag = buf[pos];
            pos += 1;
            let name_len = u32::from_le_bytes(
                take(&buf, &mut pos, 4)?.try_into().expect("4 bytes"),
            ) as usize;
            let name = String::from_utf8(take(&buf, &mut pos, name_len)?)
                .map_err(|_| CheckpointError::Malformed("non-utf8 name".into()))?;
            let entry = match tag {
                1 => {
                    let n = u64::from_le_bytes(
                        take(&buf, &mut pos, 8)?.try_into().expect("8 bytes"),
                    ) as usize;
                    let raw = take(&buf, &mut pos, n * 4)?;
                    let data = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect();
                    Entry::Tensor(data)
                }
                2 => Entry::Scalar(u64::from_le_bytes(
                    take(&buf, &mut pos, 8)?.try_into().expect("8 bytes"),
                )),
                3 => {
                    let n = u64::from_le_bytes(
                        take(&buf, &mut pos, 8)?.try_into().expect("8 bytes"),
                    ) as usize;
                    Entry::Bytes(take(&buf, &mut pos, n)?)
                }
                t => return Err(CheckpointError::Malformed(format!("unknown tag {t}"))),
            };
            entries.insert(name, entry);
        }
        Ok(BlobReader { entries, digest })
    }

    pub fn digest(&self) -> &str {
        &self.digest
    }

    pub fn tensor(&self, name: &str) -> Result<&[f32], CheckpointError> {
        match self.entries.get(name) {
            Some(Entry::Tensor(v)) => Ok(v),
            Some(_) => Err(CheckpointError::Malformed(format!("`{name}` is not a tensor"))),
            None => Err(CheckpointError::Missing(name.to_string())),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<u64, CheckpointError> {
        match self.entries.get(name) {
            Some(Entry::Scalar(v)) => Ok(*v),
            Some(_) => Err(CheckpointError::Malformed(format!("`{name}` is not a scalar"))),
            None => Err(CheckpointError::Missing(name.to_string())),
        }
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8], CheckpointError> {
        match self.entries.get(name) {
            Some(Entry::Bytes(v)) => Ok(v),
            Some(_) => Err(CheckpointError::Malformed(format!("`{name}` is not bytes"))),
            None => Err(CheckpointError::Missing(name.to_string())),
        }
    }

    pub fn has(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }
}

/// Sidecar metadata written next to each checkpoint blob so checkpoints are
/// self-describing: architecture hyperparameters, parameter counts, and the
/// blob's content hash.
#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointSidecar {
    pub format_version: u32,
    pub iteration: u64,
    pub generator_arch: serde_json::Value,
    pub discriminator_arch: Option<serde_json::Value>,
    pub generator_param_count: usize,
    pub discriminator_param_count: Option<usize>,
    pub content_sha256: String,
}

impl CheckpointSidecar {
    pub fn write_to(&self, path: &Path) -> Result<(), CheckpointError> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CheckpointError::Sidecar(e.to_string()))?;
        fs::write(path, json).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn read_from(path: &Path) -> Result<Self, CheckpointError> {
        let text = fs::read_to_string(path).map_err(|e| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| CheckpointError::Sidecar(e.to_string()))
    }

    /// Confirms the sidecar hash matches the blob on disk.
    pub fn verify_blob(&self, blob_path: &Path) -> Result<BlobReader, CheckpointError> {
        let reader = BlobReader::read_from(blob_path)?;
        if reader.digest() != self.content_sha256 {
            return Err(CheckpointError::HashMismatch {
                expected: self.content_sha256.clone(),
                actual: reader.digest().to_string(),
            });
        }
        Ok(reader)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_roundtrip_preserves_entries_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ckpt.bin");
        let mut w = BlobWriter::new();
        w.put_tensor("gen/enc0.w", &[1.5, -2.25, 0.0, f32::MIN_POSITIVE]);
        w.put_u64("iteration", 1234);
        w.put_bytes("rng", &[7, 8, 9]);
        let digest = w.write_to(&path).unwrap();

        let r = BlobReader::read_from(&path).unwrap();
        assert_eq!(r.digest(), digest);
        assert_eq!(r.tensor("gen/enc0.w").unwrap(), &[1.5, -2.25, 0.0, f32::MIN_POSITIVE]);
        assert_eq!(r.scalar("iteration").unwrap(), 1234);
        assert_eq!(r.bytes("rng").unwrap(), &[7, 8, 9]);
        assert!(!r.has("nope"));
    }

    #[test]
    fn hash_mismatch_is_detected() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ckpt.bin");
        let mut w = BlobWriter::new();
        w.put_u64("iteration", 1);
        let digest = w.write_to(&path).unwrap();
        let sidecar = CheckpointSidecar {
            format_version: 1,
            iteration: 1,
            generator_arch: serde_json::json!({}),
            discriminator_arch: None,
            generator_param_count: 0,
            discriminator_param_count: None,
            content_sha256: digest,
        };
        assert!(sidecar.verify_blob(&path).is_ok());
        // corrupt one byte
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0xff;
        fs::write(&path, bytes).unwrap();
        match sidecar.verify_blob(&path) {
            Err(CheckpointError::HashMismatch { .. }) => {}
            _ => panic!("expected hash mismatch"),
        }
    }

    #[test]
    fn truncated_blob_reports_malformed() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("ckpt.bin");
        let mut w = BlobWriter::new();
        w.put_tensor("t", &[1.0; 100]);
        w.write_to(&path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 10);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(
            BlobReader::read_from(&path),
            Err(CheckpointError::Malformed(_))
        ));
    }
}
