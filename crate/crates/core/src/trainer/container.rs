//! Checksummed file container shared by run checkpoints.
//!
//! | field    | type                     |
//! |----------|--------------------------|
//! | magic    | 8 bytes                  |
//! | version  | u32                      |
//! | length   | u64 (payload bytes)      |
//! | payload  | `length` bytes           |
//! | crc32    | u32 over the payload     |

use std::path::Path;

use crate::binio::{ByteReader, ByteWriter};
use crate::error::FormatError;
use crate::{Error, Result};

pub(crate) fn seal(magic: &[u8; 8], version: u32, payload: &[u8]) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(magic);
    w.u32(version);
    w.u64(payload.len() as u64);
    w.bytes(payload);
    w.u32(crc32fast::hash(payload));
    w.into_inner()
}

pub(crate) fn open<'a>(
    bytes: &'a [u8],
    magic: &'static [u8; 8],
    label: &'static str,
    version: u32,
) -> Result<&'a [u8], FormatError> {
    let mut r = ByteReader::new(bytes);
    if r.bytes(8)? != magic {
        return Err(FormatError::BadMagic { expected: label });
    }
    let found = r.u32()?;
    if found != version {
        return Err(FormatError::Version { found, supported: version });
    }
    let len = r.u64()? as usize;
    let payload = r.bytes(len)?;
    let stored = r.u32()?;
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed });
    }
    Ok(payload)
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    // Write then rename so an interrupted save never leaves a torn checkpoint.
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}
