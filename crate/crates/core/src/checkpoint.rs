//! Model checkpoint files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "VPCK"
//! 4       4     u32 format version (= 1)
//! 8       4     u32 header length H in bytes
//! 12      H     UTF-8 JSON header (see `CheckpointHeader`)
//! 12+H    8·N   f64 parameter blob: every tensor listed in `header.tensors`,
//!               in order, each flattened row-major
//! ```
//!
//! `N` is the sum of the shape products of all tensors; trailing bytes are
//! rejected. The header never contains timestamps, so identical models
//! produce byte-identical files.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numopt::SgdConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"VPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint holds a `{found}` model, expected `{expected}`")]
    WrongKind { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TensorSpec {
    pub fn new(name: &str, shape: &[usize]) -> Self {
        Self {
            name: name.to_string(),
            shape: shape.to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model_kind: String,
    pub taxonomy_version: String,
    #[serde(default)]
    pub loss: Option<String>,
    #[serde(default)]
    pub config: Option<SgdConfig>,
    #[serde(default)]
    pub profile_ids: Option<Vec<usize>>,
    pub tensors: Vec<TensorSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub tensors: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn expect_kind(&self, kind: &str) -> Result<(), CheckpointError> {
        if self.header.model_kind != kind {
            return Err(CheckpointError::WrongKind {
                expected: kind.to_string(),
                found: self.header.model_kind.clone(),
            });
        }
        Ok(())
    }

    /// Tensor data by name, checked against the expected shape.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<&[f64], CheckpointError> {
        let pos = self
            .header
            .tensors
            .iter()
            .position(|t| t.name == name)
            .ok_or_else(|| CheckpointError::Format(format!("missing tensor `{name}`")))?;
        let spec = &self.header.tensors[pos];
        if spec.shape != shape {
            return Err(CheckpointError::Format(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                spec.shape
            )));
        }
        Ok(&self.tensors[pos])
    }

    /// Shape of a named tensor.
    pub fn shape_of(&self, name: &str) -> Result<&[usize], CheckpointError> {
        self.header
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| t.shape.as_slice())
            .ok_or_else(|| CheckpointError::Format(format!("missing tensor `{name}`")))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        if self.header.tensors.len() != self.tensors.len() {
            return Err(CheckpointError::Format("tensor list and header disagree".into()));
        }
        for (spec, data) in self.header.tensors.iter().zip(&self.tensors) {
            if spec.len() != data.len() {
                return Err(CheckpointError::Format(format!(
                    "tensor `{}` holds {} values, shape says {}",
                    spec.name,
                    data.len(),
                    spec.len()
                )));
            }
        }
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        w.write_u32::<LittleEndian>(header.len() as u32)?;
        w.write_all(&header)?;
        for data in &self.tensors {
            for &v in data {
                w.write_f64::<LittleEndian>(v)?;
            }
        }
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let fmt = |m: &str| CheckpointError::Format(m.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| fmt("truncated magic"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(fmt("bad magic, expected VPCK"));
        }
        let version = r.read_u32::<LittleEndian>().map_err(|_| fmt("truncated version"))?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let header_len = r.read_u32::<LittleEndian>().map_err(|_| fmt("truncated header length"))? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header).map_err(|_| fmt("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for spec in &header.tensors {
            let mut data = vec![0f64; spec.len()];
            r.read_f64_into::<LittleEndian>(&mut data)
                .map_err(|_| CheckpointError::Format(format!("truncated tensor `{}`", spec.name)))?;
            if data.iter().any(|v| !v.is_finite()) {
                return Err(CheckpointError::Format(format!(
                    "non-finite value in tensor `{}`",
                    spec.name
                )));
            }
            tensors.push(data);
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(fmt("unexpected bytes after parameter blob"));
        }
        Ok(Self { header, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read(BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            header: CheckpointHeader {
                model_kind: "test".into(),
                taxonomy_version: "v".into(),
                loss: Some("sigmoid_ce".into()),
                config: Some(SgdConfig::default()),
                profile_ids: None,
                tensors: vec![TensorSpec::new("w", &[2, 3]), TensorSpec::new("b", &[2])],
            },
            tensors: vec![vec![1.0, -2.0, 3.5, 0.0, 1e-300, -0.0], vec![7.0, 8.0]],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        let back = Checkpoint::read(buf.as_slice()).unwrap();
        assert_eq!(back, c);
        let bits: Vec<u64> = back.tensors[0].iter().map(|v| v.to_bits()).collect();
        let orig: Vec<u64> = c.tensors[0].iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits, orig);
        assert_eq!(&buf[..4], b"VPCK");
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        assert!(Checkpoint::read(&buf[..buf.len() - 1]).is_err());
        let mut extra = buf.clone();
        extra.push(0);
        assert!(Checkpoint::read(extra.as_slice()).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(Checkpoint::read(bad.as_slice()).is_err());
    }

    #[test]
    fn shape_checks() {
        let c = sample();
        assert!(c.tensor("w", &[2, 3]).is_ok());
        assert!(c.tensor("w", &[3, 2]).is_err());
        assert!(c.tensor("z", &[1]).is_err());
        assert!(c.expect_kind("other").is_err());
        let mut broken = c.clone();
        broken.tensors[1].push(1.0);
        assert!(broken.write(Vec::new()).is_err());
    }
}
