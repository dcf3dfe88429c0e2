//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `VNAWCKPT`, `u32` version, `u32` float
//! width in bytes (4 or 8), eight `u32` architecture fields (channels,
//! height, width, dim, heads, blocks, classes, ff_dim), `u64` value count,
//! then every parameter tensor's raw values in declared order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ArchConfig, ModelParams};
use crate::tensors::{Real, RngStream};

pub const MAGIC: &[u8; 8] = b"VNAWCKPT";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 8 + 4 + 4 + 8 * 4 + 8;

fn arch_fields(a: &ArchConfig) -> [usize; 8] {
    [
        a.channels, a.height, a.width, a.dim, a.heads, a.blocks, a.classes, a.ff_dim,
    ]
}

pub fn encode_params(params: &ModelParams) -> Result<Vec<u8>> {
    let width = std::mem::size_of::<Real>();
    let count = params.num_params();
    let mut out = Vec::with_capacity(HEADER_LEN + count * width);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(width as u32).to_le_bytes());
    for f in arch_fields(params.arch()) {
        let f = u32::try_from(f).map_err(|_| Error::DimensionOverflow)?;
        out.extend_from_slice(&f.to_le_bytes());
    }
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for (_, t) in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::TruncatedPayload)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(Error::TruncatedPayload)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Decodes a checkpoint written with either float width.
pub fn decode_params(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8).map_err(|_| Error::BadMagic)? != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let width = r.u32()? as usize;
    if width != 4 && width != 8 {
        return Err(Error::Malformed(format!("float width {width}")));
    }
    let mut f = [0usize; 8];
    for v in f.iter_mut() {
        *v = r.u32()? as usize;
    }
    let arch = ArchConfig {
        channels: f[0],
        height: f[1],
        width: f[2],
        dim: f[3],
        heads: f[4],
        blocks: f[5],
        classes: f[6],
        ff_dim: f[7],
    };
    arch.validate()?;
    let count = u64::from_le_bytes(r.take(8)?.try_into().unwrap());
    let payload = (count as usize)
        .checked_mul(width)
        .ok_or(Error::DimensionOverflow)?;
    if bytes.len() - r.pos < payload {
        return Err(Error::TruncatedPayload);
    }
    if bytes.len() - r.pos > payload {
        return Err(Error::Malformed("trailing bytes after parameters".into()));
    }

    // Values are overwritten below; the seed only fixes the shapes.
    let mut params = ModelParams::init(arch, &mut RngStream::new(0, 0))?;
    if params.num_params() as u64 != count {
        return Err(Error::Malformed(format!(
            "architecture needs {} values, file holds {count}",
            params.num_params()
        )));
    }
    for (_, t) in params.tensors_mut() {
        for v in t.data_mut() {
            let raw = r.take(width)?;
            *v = if width == 8 {
                f64::from_le_bytes(raw.try_into().unwrap()) as Real
            } else {
                f32::from_le_bytes(raw.try_into().unwrap()) as Real
            };
        }
    }
    Ok(params)
}

pub fn save(path: &Path, params: &ModelParams) -> Result<()> {
    fs::write(path, encode_params(params)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ModelParams> {
    decode_params(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        let arch = ArchConfig {
            channels: 1,
            height: 4,
            width: 4,
            dim: 8,
            heads: 2,
            blocks: 2,
            classes: 3,
            ff_dim: 16,
        };
        let mut rng = RngStream::new(5, 0);
        let mut p = ModelParams::init(arch, &mut rng).unwrap();
        p.jitter(0.3, &mut rng);
        p
    }

    #[test]
    fn round_trip_is_exact() {
        let p = params();
        let bytes = encode_params(&p).unwrap();
        assert_eq!(
            bytes.len(),
            HEADER_LEN + p.num_params() * std::mem::size_of::<Real>()
        );
        assert_eq!(decode_params(&bytes).unwrap(), p);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let p = params();
        save(&path, &p).unwrap();
        assert_eq!(load(&path).unwrap(), p);
    }

    #[test]
    fn corrupt_inputs() {
        let bytes = encode_params(&params()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_params(&bad), Err(Error::BadMagic)));
        assert!(matches!(decode_params(&bytes[..3]), Err(Error::BadMagic)));
        let mut bad = bytes.clone();
        bad[8] = 9;
        assert!(matches!(
            decode_params(&bad),
            Err(Error::UnsupportedVersion(9))
        ));
        assert!(matches!(
            decode_params(&bytes[..bytes.len() - 1]),
            Err(Error::TruncatedPayload)
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(decode_params(&long), Err(Error::Malformed(_))));
        let mut bad = bytes;
        // heads = 3 does not divide dim = 8
        bad[16 + 4 * 4..16 + 5 * 4].copy_from_slice(&3u32.to_le_bytes());
        assert!(decode_params(&bad).is_err());
    }

    #[test]
    fn reads_single_precision_files() {
        let p = params();
        let mut bytes = encode_params(&p).unwrap();
        if std::mem::size_of::<Real>() == 8 {
            bytes.truncate(HEADER_LEN);
            bytes[12..16].copy_from_slice(&4u32.to_le_bytes());
            for (_, t) in p.tensors() {
                for v in t.data() {
                    bytes.extend_from_slice(&(*v as f32).to_le_bytes());
                }
            }
            let q = decode_params(&bytes).unwrap();
            for ((_, a), (_, b)) in q.tensors().iter().zip(p.tensors()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert_eq!(*x, *y as f32 as Real);
                }
            }
        }
    }
}
