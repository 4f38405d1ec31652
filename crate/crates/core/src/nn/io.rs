//! Binary parameter checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! | field        | type                 |
//! |--------------|----------------------|
//! | magic        | 8 bytes `HRTMLP\0\0` |
//! | version      | u32 (= 1)            |
//! | n_widths     | u32                  |
//! | widths       | n_widths × u32       |
//! | activations  | (n_widths−1) × (u8 tag, u32 arg) |
//! | seed         | u64                  |
//! | param_count  | u64                  |
//! | params       | param_count × f64    |
//!
//! Activation tags: 0 identity, 1 tanh, 2 relu, 3 softmax groups (arg = group
//! size; arg is 0 for the other tags). [`Mlp::save`] also writes a JSON
//! sidecar (`<path>.json`) describing the same header.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Mlp};
use crate::binio::{ByteReader, ByteWriter};
use crate::error::FormatError;
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"HRTMLP\0\0";
pub const MLP_FORMAT_VERSION: u32 = 1;

/// JSON sidecar contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpMetadata {
    pub format_version: u32,
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    pub seed: u64,
    pub param_count: usize,
}

impl Mlp {
    pub fn metadata(&self) -> MlpMetadata {
        MlpMetadata {
            format_version: MLP_FORMAT_VERSION,
            layer_sizes: self.layer_sizes.clone(),
            activations: self.activations.clone(),
            seed: self.seed,
            param_count: self.params.len(),
        }
    }

    pub fn write_to(&self, w: &mut ByteWriter) {
        w.bytes(MAGIC);
        w.u32(MLP_FORMAT_VERSION);
        w.u32(self.layer_sizes.len() as u32);
        for &s in &self.layer_sizes {
            w.u32(s as u32);
        }
        for act in &self.activations {
            let (tag, arg) = match act {
                Activation::Identity => (0, 0),
                Activation::Tanh => (1, 0),
                Activation::Relu => (2, 0),
                Activation::SoftmaxGroups(g) => (3, *g as u32),
            };
            w.u8(tag);
            w.u32(arg);
        }
        w.u64(self.seed);
        w.u64(self.params.len() as u64);
        for &p in &self.params {
            w.f64(p);
        }
    }

    pub fn read_from(r: &mut ByteReader<'_>) -> Result<Self, FormatError> {
        if r.bytes(8)? != MAGIC {
            return Err(FormatError::BadMagic { expected: "HRTMLP" });
        }
        let version = r.u32()?;
        if version != MLP_FORMAT_VERSION {
            return Err(FormatError::Version { found: version, supported: MLP_FORMAT_VERSION });
        }
        let n = r.u32()? as usize;
        if !(2..=1024).contains(&n) {
            return Err(FormatError::Invalid(format!("{n} layer widths")));
        }
        let sizes = (0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>, _>>()?;
        let mut acts = Vec::with_capacity(n - 1);
        for _ in 0..n - 1 {
            let tag = r.u8()?;
            let arg = r.u32()? as usize;
            acts.push(match tag {
                0 => Activation::Identity,
                1 => Activation::Tanh,
                2 => Activation::Relu,
                3 => Activation::SoftmaxGroups(arg),
                t => return Err(FormatError::Invalid(format!("activation tag {t}"))),
            });
        }
        let seed = r.u64()?;
        let count = r.u64()? as usize;
        if r.remaining() < count.saturating_mul(8) {
            return Err(FormatError::Invalid(format!("param count {count} exceeds data")));
        }
        let params = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        Mlp::from_params(&sizes, &acts, seed, params).map_err(|e| FormatError::Invalid(e.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_to(&mut w);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = ByteReader::new(bytes);
        let net = Self::read_from(&mut r)?;
        if r.remaining() != 0 {
            return Err(FormatError::Invalid(format!("{} trailing bytes", r.remaining())));
        }
        Ok(net)
    }

    /// Writes the binary checkpoint to `path` and the sidecar to `path.json`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))?;
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.metadata())?;
        std::fs::write(&sidecar, json).map_err(|e| Error::io(&sidecar, e))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn net() -> Mlp {
        let acts = [Activation::Tanh, Activation::Relu, Activation::SoftmaxGroups(3)];
        Mlp::new(&[4, 5, 6, 6], &acts, 77).unwrap()
    }

    #[test]
    fn bytes_round_trip() {
        let n = net();
        assert_eq!(Mlp::from_bytes(&n.to_bytes()).unwrap(), n);
    }

    #[test]
    fn header_layout_is_documented_one() {
        let n = Mlp::new(&[2, 1], &[Activation::Tanh], 5).unwrap();
        let b = n.to_bytes();
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(b[24], 1); // tanh tag after the two widths
        let params_at = 8 + 4 + 4 + 2 * 4 + 5 + 8 + 8;
        assert_eq!(b.len(), params_at + 3 * 8);
        let p0 = f64::from_le_bytes(b[params_at..params_at + 8].try_into().unwrap());
        assert_eq!(p0, n.params()[0]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut b = net().to_bytes();
        b[0] = b'X';
        assert!(matches!(Mlp::from_bytes(&b), Err(FormatError::BadMagic { .. })));
        let mut b = net().to_bytes();
        b[8] = 9;
        assert!(matches!(Mlp::from_bytes(&b), Err(FormatError::Version { found: 9, .. })));
        let b = net().to_bytes();
        assert!(Mlp::from_bytes(&b[..b.len() - 3]).is_err());
    }

    #[test]
    fn save_writes_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("actor.bin");
        let n = net();
        n.save(&p).unwrap();
        assert_eq!(Mlp::load(&p).unwrap(), n);
        let meta: MlpMetadata =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("actor.bin.json")).unwrap()).unwrap();
        assert_eq!(meta, n.metadata());
    }
}
