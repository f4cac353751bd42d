//! Binary checkpoint format (all integers and floats little-endian):
//!
//! ```text
//! magic            4 bytes  "MFLG"
//! version          u32      1
//! text_tokens      u32
//! n_vision         u32      number of vision layers
//! n_text           u32      number of text layers (the projector is always one layer)
//! layer table      per layer, order vision.., projector, text..:
//!                    in_dim u32, out_dim u32, activation u8 (0 none, 1 tanh, 2 relu), trainable u8
//! parameters       per layer, same order: weight (in_dim·out_dim f64, row-major), bias (out_dim f64)
//! ```
//!
//! Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use super::{Activation, Layer, LayerSpec, ModelParams};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFLG";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(params.text_tokens as u32).to_le_bytes());
    out.extend_from_slice(&(params.vision.len() as u32).to_le_bytes());
    out.extend_from_slice(&(params.text.len() as u32).to_le_bytes());
    for l in params.layers() {
        out.extend_from_slice(&(l.spec.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(l.spec.out_dim as u32).to_le_bytes());
        out.push(l.spec.activation.code());
        out.push(u8::from(l.spec.trainable));
    }
    for l in params.layers() {
        for v in l.weight.as_slice().iter().chain(l.bias.as_slice()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn parse_checkpoint(buf: &[u8], path: &Path) -> Result<ModelParams> {
    let mut r = Reader { buf, pos: 0, path };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(r.fail("bad magic"));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!("unsupported version {version}")));
    }
    let text_tokens = r.u32()? as usize;
    let n_vision = r.u32()? as usize;
    let n_text = r.u32()? as usize;
    let n_layers = n_vision + 1 + n_text;
    let mut specs = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let in_dim = r.u32()? as usize;
        let out_dim = r.u32()? as usize;
        let activation = Activation::from_code(r.u8()?).ok_or_else(|| r.fail("unknown activation code"))?;
        let trainable = match r.u8()? {
            0 => false,
            1 => true,
            _ => return Err(r.fail("bad trainable flag")),
        };
        specs.push(LayerSpec {
            in_dim,
            out_dim,
            activation,
            trainable,
        });
    }
    let mut layers = Vec::with_capacity(n_layers);
    for spec in specs {
        let w = (0..spec.in_dim * spec.out_dim)
            .map(|_| r.f64())
            .collect::<Result<Vec<_>>>()?;
        let b = (0..spec.out_dim).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        layers.push(Layer::new(
            spec,
            Matrix::from_vec(spec.in_dim, spec.out_dim, w)?,
            Matrix::from_vec(1, spec.out_dim, b)?,
        )?);
    }
    if r.pos != buf.len() {
        return Err(r.fail("trailing bytes"));
    }
    let text = layers.split_off(n_vision + 1);
    let projector = layers.pop().unwrap();
    ModelParams::from_layers(layers, projector, text, text_tokens)
}

pub fn save_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_bytes(params))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams> {
    let buf = fs::read(path)?;
    parse_checkpoint(&buf, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{init_model, FreezePolicy, ModelConfig};
    use crate::numerics::Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            text_tokens: 2,
            text_dims: vec![16, 12, 8],
            ..ModelConfig::default()
        };
        let mut m = init_model(&cfg, &mut Rng::new(3)).unwrap();
        m.apply_freeze_policy(FreezePolicy::unfreeze_last(1));
        m.projector.bias.set(0, 1, -0.0);
        m.vision[0].bias.set(0, 0, f64::MIN_POSITIVE / 2.0);
        let bytes = checkpoint_bytes(&m);
        let back = parse_checkpoint(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(checkpoint_bytes(&back), bytes);
        assert_eq!(&bytes[..4], b"MFLG");
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let m = init_model(&ModelConfig::default(), &mut Rng::new(3)).unwrap();
        let bytes = checkpoint_bytes(&m);
        let p = Path::new("mem");
        assert!(parse_checkpoint(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(parse_checkpoint(&bad, p).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(parse_checkpoint(&extra, p).is_err());
    }
}
