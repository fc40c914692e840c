//! Binary model container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"HWMODEL\0"
//! 8       4     format version (u32) = 1
//! 12      4     num_layers   (u32)
//! 16      4     num_heads    (u32)
//! 20      4     d_model      (u32)
//! 24      4     d_ff         (u32)
//! 28      4     vocab_size   (u32)
//! 32      1     causal_mask  (u8, 0 or 1)
//! 33      1     use_mlp      (u8, 0 or 1)
//! 34      8     norm_eps     (f64)
//! 42      ...   matrices, f64 row-major, in this order:
//!               token_embedding      vocab x d_model
//!               modality_embedding   2 x d_model   (row 0 vision, row 1 text)
//!               per layer:
//!                 per head: W_Q d_model x d_k, W_K d_model x d_k, W_V d_model x d_v
//!                 W_O d_model x d_model
//!                 if use_mlp: norm_scale d_model, W_in d_model x d_ff, W_out d_ff x d_model
//!               unembedding          d_model x vocab
//! ```
//!
//! The file ends exactly after the unembedding; trailing bytes are rejected.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array1, Array2};

use super::config::ModelConfig;
use super::weights::{LayerWeights, MlpWeights, Model};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HWMODEL\0";
pub const FORMAT_VERSION: u32 = 1;

fn put_matrix(buf: &mut Vec<u8>, m: &Array2<f64>) {
    for &v in m.iter() {
        buf.write_f64::<LittleEndian>(v).expect("vec write");
    }
}

/// Serializes `model` into the container format.
pub fn encode(model: &Model) -> Vec<u8> {
    let c = &model.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    let mut put_u32 = |v: usize| buf.write_u32::<LittleEndian>(v as u32).expect("vec write");
    put_u32(FORMAT_VERSION as usize);
    put_u32(c.num_layers);
    put_u32(c.num_heads);
    put_u32(c.d_model);
    put_u32(c.d_ff);
    put_u32(c.vocab_size);
    buf.push(c.causal_mask as u8);
    buf.push(c.use_mlp as u8);
    buf.write_f64::<LittleEndian>(c.norm_eps).expect("vec write");
    put_matrix(&mut buf, &model.token_embedding);
    put_matrix(&mut buf, &model.modality_embedding);
    for layer in &model.layers {
        for h in 0..c.num_heads {
            put_matrix(&mut buf, &layer.w_q[h]);
            put_matrix(&mut buf, &layer.w_k[h]);
            put_matrix(&mut buf, &layer.w_v[h]);
        }
        put_matrix(&mut buf, &layer.w_o);
        if let Some(m) = &layer.mlp {
            for &v in m.norm_scale.iter() {
                buf.write_f64::<LittleEndian>(v).expect("vec write");
            }
            put_matrix(&mut buf, &m.w_in);
            put_matrix(&mut buf, &m.w_out);
        }
    }
    put_matrix(&mut buf, &model.unembedding);
    buf
}

struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
    path: &'a Path,
}

impl Reader<'_> {
    fn fail(&self, reason: impl Into<String>) -> Error {
        Error::format(self.path, reason)
    }

    fn u32(&mut self) -> Result<usize> {
        self.cur
            .read_u32::<LittleEndian>()
            .map(|v| v as usize)
            .map_err(|_| self.fail("truncated header"))
    }

    fn flag(&mut self) -> Result<bool> {
        match self.cur.read_u8().map_err(|_| self.fail("truncated header"))? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(self.fail(format!("flag byte {other} is not 0 or 1"))),
        }
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        self.cur
            .read_f64_into::<LittleEndian>(&mut out)
            .map_err(|_| self.fail("truncated weight data"))?;
        Ok(out)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let data = self.floats(rows * cols)?;
        Ok(Array2::from_shape_vec((rows, cols), data).expect("shape matches length"))
    }
}

/// Parses a container produced by [`encode`]. `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Model> {
    let mut r = Reader {
        cur: Cursor::new(bytes),
        path,
    };
    let mut magic = [0u8; 8];
    r.cur.read_exact(&mut magic).map_err(|_| r.fail("missing magic header"))?;
    if &magic != MAGIC {
        return Err(r.fail("bad magic header"));
    }
    let version = r.u32()?;
    if version as u32 != FORMAT_VERSION {
        return Err(r.fail(format!("unsupported format version {version}")));
    }
    let config = ModelConfig {
        num_layers: r.u32()?,
        num_heads: r.u32()?,
        d_model: r.u32()?,
        d_ff: r.u32()?,
        vocab_size: r.u32()?,
        causal_mask: r.flag()?,
        use_mlp: r.flag()?,
        norm_eps: r
            .cur
            .read_f64::<LittleEndian>()
            .map_err(|_| Error::format(path, "truncated header"))?,
    };
    config.validate()?;
    let d = config.d_model;
    // Reject absurd headers before allocating.
    let per_layer = config.num_heads * 3 * d * config.d_k()
        + d * d
        + if config.use_mlp { d + 2 * d * config.d_ff } else { 0 };
    let expected = 42 + 8 * (2 * config.vocab_size * d + 2 * d + config.num_layers * per_layer);
    if bytes.len() != expected {
        return Err(r.fail(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let token_embedding = r.matrix(config.vocab_size, d)?;
    let modality_embedding = r.matrix(2, d)?;
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        let (mut w_q, mut w_k, mut w_v) = (Vec::new(), Vec::new(), Vec::new());
        for _ in 0..config.num_heads {
            w_q.push(r.matrix(d, config.d_k())?);
            w_k.push(r.matrix(d, config.d_k())?);
            w_v.push(r.matrix(d, config.d_v())?);
        }
        let w_o = r.matrix(d, d)?;
        let mlp = if config.use_mlp {
            Some(MlpWeights {
                norm_scale: Array1::from(r.floats(d)?),
                w_in: r.matrix(d, config.d_ff)?,
                w_out: r.matrix(config.d_ff, d)?,
            })
        } else {
            None
        };
        layers.push(LayerWeights {
            w_q,
            w_k,
            w_v,
            w_o,
            mlp,
        });
    }
    let unembedding = r.matrix(d, config.vocab_size)?;
    let model = Model {
        config,
        token_embedding,
        modality_embedding,
        layers,
        unembedding,
    };
    model.validate()?;
    Ok(model)
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}
