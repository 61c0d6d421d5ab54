//! Checkpoint container.
//!
//! Layout:
//!
//! ```text
//! magic   8 bytes   "HSDFCKPT"
//! version u32 LE    FORMAT_VERSION
//! hlen    u64 LE    length of the JSON header in bytes
//! header  hlen      UTF-8 JSON (see `Header`)
//! blob    8·n       little-endian f64 parameters of all fields, concatenated
//! ```
//!
//! The header records every field's name, architecture, seed and slice of
//! the blob, free-form metadata, and the SHA-256 of the blob bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::field::{Architecture, NeuralField};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSDFCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedField {
    pub name: String,
    pub field: NeuralField,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub fields: Vec<NamedField>,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct FieldEntry {
    name: String,
    architecture: Architecture,
    seed: u64,
    offset: usize,
    count: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    fields: Vec<FieldEntry>,
    blob_values: usize,
    blob_sha256: String,
    metadata: serde_json::Value,
}

impl Checkpoint {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            fields: Vec::new(),
            metadata,
        }
    }

    pub fn with_field(mut self, name: &str, field: NeuralField) -> Self {
        self.fields.push(NamedField {
            name: name.to_string(),
            field,
        });
        self
    }

    pub fn field(&self, name: &str) -> Result<&NeuralField> {
        self.fields
            .iter()
            .find(|f| f.name == name)
            .map(|f| &f.field)
            .ok_or_else(|| Error::InvalidArgument(format!("checkpoint has no field named '{name}'")))
    }

    /// Like [`Checkpoint::field`], but also insists on a specific architecture.
    pub fn field_with_architecture(&self, name: &str, expected: &Architecture) -> Result<&NeuralField> {
        let f = self.field(name)?;
        if f.architecture != *expected {
            return Err(Error::VersionMismatch(format!(
                "field '{name}' has architecture {:?}, expected {:?}",
                f.architecture, expected
            )));
        }
        Ok(f)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for nf in &self.fields {
            entries.push(FieldEntry {
                name: nf.name.clone(),
                architecture: nf.field.architecture,
                seed: nf.field.seed,
                offset: blob.len() / 8,
                count: nf.field.parameters.len(),
            });
            for p in &nf.field.parameters {
                blob.extend_from_slice(&p.to_le_bytes());
            }
        }
        let header = Header {
            fields: entries,
            blob_values: blob.len() / 8,
            blob_sha256: hex::encode(Sha256::digest(&blob)),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + blob.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&blob);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 {
            return Err(Error::CorruptBlob("file shorter than the fixed preamble".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::VersionMismatch("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch(format!(
                "checkpoint format {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = &bytes[20..];
        if body.len() < hlen {
            return Err(Error::CorruptBlob("truncated header".into()));
        }
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| Error::CorruptBlob(format!("bad header: {e}")))?;
        let blob = &body[hlen..];
        if blob.len() != header.blob_values * 8 {
            return Err(Error::CorruptBlob(format!(
                "blob has {} bytes, header promises {}",
                blob.len(),
                header.blob_values * 8
            )));
        }
        if hex::encode(Sha256::digest(blob)) != header.blob_sha256 {
            return Err(Error::CorruptBlob("checksum mismatch".into()));
        }
        let values: Vec<f64> = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let mut fields = Vec::new();
        for e in header.fields {
            let end = e.offset.checked_add(e.count).filter(|&end| end <= values.len());
            let Some(end) = end else {
                return Err(Error::CorruptBlob(format!("field '{}' lies outside the blob", e.name)));
            };
            if e.count != e.architecture.parameter_count() {
                return Err(Error::VersionMismatch(format!(
                    "field '{}' stores {} parameters but its architecture needs {}",
                    e.name,
                    e.count,
                    e.architecture.parameter_count()
                )));
            }
            let field = NeuralField::from_parameters(e.architecture, values[e.offset..end].to_vec(), e.seed)?;
            fields.push(NamedField { name: e.name, field });
        }
        Ok(Self {
            fields,
            metadata: header.metadata,
        })
    }

    /// SHA-256 of the serialized checkpoint, for run manifests.
    pub fn digest(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint.to_bytes()?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Checkpoint {
        let a = NeuralField::init_siren(Architecture::new(8, 2), 3).unwrap();
        let mut b = NeuralField::init_siren(Architecture::new(4, 1), 4).unwrap();
        b.parameters[0] = f64::from_bits(0x3ff0_0000_0000_0001);
        Checkpoint::new(json!({"tau": 0.005, "seeds": [1, 2]}))
            .with_field("u_near", a)
            .with_field("u_far", b)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        let c = sample();
        save_checkpoint(&c, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, c);
        for (x, y) in back.fields.iter().zip(&c.fields) {
            let xb: Vec<u64> = x.field.parameters.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.field.parameters.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn truncation_and_corruption() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [5, 30, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptBlob(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        let last = flipped.len() - 3;
        flipped[last] ^= 0x10;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::CorruptBlob(_))));
        let mut wrong_version = bytes;
        wrong_version[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&wrong_version), Err(Error::VersionMismatch(_))));
    }

    #[test]
    fn architecture_check() {
        let c = sample();
        assert!(c.field_with_architecture("u_near", &Architecture::new(8, 2)).is_ok());
        assert!(matches!(
            c.field_with_architecture("u_near", &Architecture::new(256, 4)),
            Err(Error::VersionMismatch(_))
        ));
        assert!(c.field("phi").is_err());
    }

    #[test]
    fn missing_file() {
        let r = load_checkpoint(Path::new("/nonexistent/dir/a.ckpt"));
        assert!(matches!(r, Err(Error::FileNotFound(_))));
    }
}
