//! Binary checkpoint container. Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "FDMODEL\0"
//! version    u32      1
//! header_len u32
//! header     header_len bytes of UTF-8 JSON {"config": {...}, "meta": {...}}
//! count      u32      number of parameters
//! per parameter:
//!   name_len u16, name (UTF-8)
//!   kind     u8       0 trainable, 1 running statistic
//!   rank     u8
//!   dims     rank x u32
//!   data     prod(dims) x f32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::generator::{Generator, ModelMeta};
use super::weights::{Param, ParamKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FDMODEL\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    meta: ModelMeta,
}

pub fn write_checkpoint<W: Write>(model: &Generator, mut w: W) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        config: model.config().clone(),
        meta: model.meta().clone(),
    })?;
    let mut buf = Vec::with_capacity(model.param_count() * 4 + header.len() + 64);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(&header);
    let params = model.weights().params();
    buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        buf.extend_from_slice(&(p.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(p.name.as_bytes());
        buf.push(match p.kind {
            ParamKind::Trainable => 0,
            ParamKind::RunningStat => 1,
        });
        buf.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.value.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| Error::Checkpoint(format!("write failed: {e}")))
}

struct Cursor<'b> {
    bytes: &'b [u8],
    pos: usize,
}

impl<'b> Cursor<'b> {
    fn take(&mut self, n: usize) -> Result<&'b [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} (wanted {n} more)", self.pos))
        })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Generator> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)
        .map_err(|e| Error::Checkpoint(format!("read failed: {e}")))?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let header_len = c.u32()? as usize;
    let header: Header = serde_json::from_slice(c.take(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let count = c.u32()? as usize;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
            .to_owned();
        let kind = match c.u8()? {
            0 => ParamKind::Trainable,
            1 => ParamKind::RunningStat,
            k => return Err(Error::Checkpoint(format!("parameter {name}: unknown kind {k}"))),
        };
        let rank = c.u8()? as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("size overflow".into()))?)?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        params.push(Param {
            name,
            kind,
            value: Tensor::new(shape, data)?,
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Generator::from_parts(header.config, header.meta, params)
}

pub fn save_checkpoint(model: &Generator, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    write_checkpoint(model, &mut bytes)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Generator> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(bytes.as_slice())
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::data::{Domain, Palette, TileAtlas};
    use crate::model::Conditioning;

    fn bytes_of(model: &Generator) -> Vec<u8> {
        let mut out = Vec::new();
        write_checkpoint(model, &mut out).unwrap();
        out
    }

    #[test]
    fn header_layout() {
        let model = Generator::build(ModelConfig::new(1, 2, 1, 1, Conditioning::Standard, 4), 0).unwrap();
        let b = bytes_of(&model);
        assert_eq!(&b[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        let hl = u32::from_le_bytes(b[12..16].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&b[16..16 + hl]).unwrap();
        assert_eq!(header["config"]["filters"], 2);
        assert_eq!(header["config"]["conditioning"], "standard");
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let model = Generator::build(ModelConfig::new(1, 2, 1, 1, Conditioning::Cin, 4), 0).unwrap();
        let b = bytes_of(&model);
        assert!(read_checkpoint(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(bad.as_slice()).unwrap_err().to_string().contains("magic"));
        let mut extra = b.clone();
        extra.push(0);
        assert!(read_checkpoint(extra.as_slice()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn round_trip_is_bit_exact(
            seed in any::<u64>(),
            noise in 0usize..4,
            f in 1usize..5,
            k in prop::sample::select(vec![1usize, 3, 5]),
            blocks in 1usize..3,
            cond in prop::sample::select(vec![Conditioning::Standard, Conditioning::Cin, Conditioning::Film]),
            n in prop::sample::select(vec![4usize, 8, 10]),
            emoji in any::<bool>(),
        ) {
            let mut model = Generator::build(ModelConfig::new(noise, f, k, blocks, cond, n), seed).unwrap();
            model.set_meta(ModelMeta {
                domain: Some(if emoji { Domain::Emojis } else { Domain::Maps }),
                palette: emoji.then_some(Palette::PICO8),
                atlas: (!emoji).then(|| TileAtlas::solid(&Palette::PICO8)),
            });
            let b = bytes_of(&model);
            let back = read_checkpoint(b.as_slice()).unwrap();
            prop_assert_eq!(&back, &model);
            for (x, y) in back.weights().params().iter().zip(model.weights().params()) {
                prop_assert!(x.value.data().iter().zip(y.value.data()).all(|(a, b)| a.to_bits() == b.to_bits()));
            }
            prop_assert_eq!(bytes_of(&back), b);
        }
    }
}
