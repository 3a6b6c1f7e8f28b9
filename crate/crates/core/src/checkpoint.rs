//! Bit-exact binary persistence of parameter sets and masks.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"SDD1"
//! version u32 = 1
//! count   u32                      number of tensors
//! per tensor:
//!   name   u16 length + UTF-8 bytes
//!   dtype  u8   0 = f32, 1 = u8 (mask bits)
//!   rank   u8
//!   dims   rank × u32
//!   data   row-major payload (f32 LE or u8)
//! ```
//!
//! Masks additionally carry a `__dense_total` u8 tensor (8 bytes, u64 LE)
//! recording the dense parameter count of the covered network, so a mask
//! file is self-contained for sparsity reporting.

use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::mask::{Mask, MaskEntry};
use crate::nn::{MlpSpec, ParamSet};

pub const MAGIC: [u8; 4] = *b"SDD1";
pub const VERSION: u32 = 1;
const DENSE_TOTAL_KEY: &str = "__dense_total";

/// One named tensor record.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: TensorData,
}

/// Serialize tensor records to checkpoint bytes.
pub fn to_bytes(records: &[TensorRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u32::<LittleEndian>(records.len() as u32).unwrap();
    for rec in records {
        let name = rec.name.as_bytes();
        out.write_u16::<LittleEndian>(name.len() as u16).unwrap();
        out.extend_from_slice(name);
        match &rec.data {
            TensorData::F32(_) => out.write_u8(0).unwrap(),
            TensorData::U8(_) => out.write_u8(1).unwrap(),
        }
        out.write_u8(rec.dims.len() as u8).unwrap();
        for &d in &rec.dims {
            out.write_u32::<LittleEndian>(d as u32).unwrap();
        }
        match &rec.data {
            TensorData::F32(v) => {
                for &x in v {
                    out.write_f32::<LittleEndian>(x).unwrap();
                }
            }
            TensorData::U8(v) => out.extend_from_slice(v),
        }
    }
    out
}

/// Parse checkpoint bytes back into tensor records.
pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Vec<TensorRecord>> {
    let mut cur = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| Error::Truncated {
        path: path.to_path_buf(),
        needed: 4,
    })?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: u32::from_be_bytes(MAGIC),
            got: u32::from_be_bytes(magic),
        });
    }
    let version = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated {
            path: path.to_path_buf(),
            needed: 4,
        })?;
    if version != VERSION {
        return Err(Error::BadCheckpoint(format!("unknown version {version}")));
    }
    let count = cur
        .read_u32::<LittleEndian>()
        .map_err(|_| Error::Truncated {
            path: path.to_path_buf(),
            needed: 4,
        })? as usize;

    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = cur
            .read_u16::<LittleEndian>()
            .map_err(|_| Error::Truncated {
                path: path.to_path_buf(),
                needed: 2,
            })? as usize;
        let mut name_bytes = vec![0u8; name_len];
        cur.read_exact(&mut name_bytes)
            .map_err(|_| Error::Truncated {
                path: path.to_path_buf(),
                needed: name_len,
            })?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::BadCheckpoint("tensor name is not UTF-8".into()))?;
        let dtype = cur.read_u8().map_err(|_| Error::Truncated {
            path: path.to_path_buf(),
            needed: 1,
        })?;
        let rank = cur.read_u8().map_err(|_| Error::Truncated {
            path: path.to_path_buf(),
            needed: 1,
        })? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(
                cur.read_u32::<LittleEndian>()
                    .map_err(|_| Error::Truncated {
                        path: path.to_path_buf(),
                        needed: 4,
                    })? as usize,
            );
        }
        let len: usize = dims.iter().product();
        let data = match dtype {
            0 => {
                let mut v = Vec::with_capacity(len);
                for _ in 0..len {
                    v.push(
                        cur.read_f32::<LittleEndian>()
                            .map_err(|_| Error::Truncated {
                                path: path.to_path_buf(),
                                needed: 4,
                            })?,
                    );
                }
                TensorData::F32(v)
            }
            1 => {
                let mut v = vec![0u8; len];
                cur.read_exact(&mut v).map_err(|_| Error::Truncated {
                    path: path.to_path_buf(),
                    needed: len,
                })?;
                TensorData::U8(v)
            }
            other => return Err(Error::BadCheckpoint(format!("unknown dtype tag {other}"))),
        };
        records.push(TensorRecord { name, dims, data });
    }
    Ok(records)
}

/// Save a parameter set.
pub fn save_params(params: &ParamSet, path: &Path) -> Result<()> {
    let records: Vec<TensorRecord> = params
        .named_tensors()
        .map(|(name, dims, data)| TensorRecord {
            name,
            dims,
            data: TensorData::F32(data.to_vec()),
        })
        .collect();
    write_atomic(path, &to_bytes(&records))
}

/// Load a parameter set for a known architecture.
pub fn load_params(spec: &MlpSpec, path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(Error::io_at(path))?;
    let records = from_bytes(&bytes, path)?;
    ParamSet::from_named_tensors(spec, |name| {
        records
            .iter()
            .find(|r| r.name == name)
            .and_then(|r| match &r.data {
                TensorData::F32(v) => Some((r.dims.clone(), v.clone())),
                TensorData::U8(_) => None,
            })
    })
}

/// Save a mask (bits plus the dense-total meta tensor).
pub fn save_mask(mask: &Mask, path: &Path) -> Result<()> {
    let mut records: Vec<TensorRecord> = mask
        .entries()
        .iter()
        .map(|e| TensorRecord {
            name: e.name.clone(),
            dims: e.dims.clone(),
            data: TensorData::U8(e.bits.clone()),
        })
        .collect();
    records.push(TensorRecord {
        name: DENSE_TOTAL_KEY.into(),
        dims: vec![8],
        data: TensorData::U8((mask.dense_param_count() as u64).to_le_bytes().to_vec()),
    });
    write_atomic(path, &to_bytes(&records))
}

/// Load a mask.
pub fn load_mask(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(Error::io_at(path))?;
    let records = from_bytes(&bytes, path)?;
    let mut dense_total = None;
    let mut entries = Vec::new();
    for rec in records {
        match rec.data {
            TensorData::U8(bits) if rec.name == DENSE_TOTAL_KEY => {
                let arr: [u8; 8] = bits
                    .try_into()
                    .map_err(|_| Error::BadCheckpoint("malformed __dense_total".into()))?;
                dense_total = Some(u64::from_le_bytes(arr) as usize);
            }
            TensorData::U8(bits) => entries.push(MaskEntry {
                name: rec.name,
                dims: rec.dims,
                bits,
            }),
            TensorData::F32(_) => {
                return Err(Error::BadCheckpoint(format!(
                    "unexpected f32 tensor {} in mask file",
                    rec.name
                )))
            }
        }
    }
    let dense_total =
        dense_total.ok_or_else(|| Error::BadCheckpoint("mask file lacks __dense_total".into()))?;
    Mask::from_entries(entries, dense_total)
}

/// Write via a temporary sibling then rename, so partially written files
/// never masquerade as checkpoints.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp).map_err(Error::io_at(&tmp))?;
        f.write_all(bytes).map_err(Error::io_at(&tmp))?;
        f.sync_all().map_err(Error::io_at(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(Error::io_at(path))?;
    Ok(())
}
