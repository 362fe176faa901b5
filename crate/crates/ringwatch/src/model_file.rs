//! The RWNET1 binary model format.
//!
//! All integers and floats are little-endian.
//!
//! | field | encoding |
//! |---|---|
//! | magic | `RWNET1` (6 bytes) |
//! | version | u16 |
//! | input_dim | u32 |
//! | hidden dims | u32 count, then u32 each |
//! | embed_dim | u32 |
//! | tau | f64 |
//! | init seed | u64 |
//! | vocabulary | u32 slot count, then per slot u8 present flag and, if present, u32 byte length + UTF-8 |
//! | norm stats | u32 dim, dim f64 means, dim f64 stds |
//! | layers | u32 count, then per layer: u32 rows, u32 cols, rows*cols f64 weights; u32 rows, u32 1, rows f64 biases |

use std::path::Path;

use ringwatch_core::features::{DigraphVocabulary, NormStats};
use ringwatch_core::nn::{Dense, Network, NetworkConfig};

use crate::error::{Error, ModelFileError, Result};

pub const MAGIC: &[u8; 6] = b"RWNET1";
pub const FORMAT_VERSION: u16 = 1;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: usize) {
        let v = u32::try_from(v).expect("model dimensions fit in u32");
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn matrix(&mut self, rows: usize, cols: usize, values: &[f64]) {
        self.u32(rows);
        self.u32(cols);
        self.f64s(values);
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelFileError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(ModelFileError::TruncatedFile)?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, ModelFileError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ModelFileError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<usize, ModelFileError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64, ModelFileError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, ModelFileError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelFileError> {
        let bytes = self.take(n.checked_mul(8).ok_or(ModelFileError::TruncatedFile)?)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<Vec<f64>, ModelFileError> {
        let (r, c) = (self.u32()?, self.u32()?);
        if (r, c) != (rows, cols) {
            return Err(ModelFileError::ShapeMismatch(format!("{what} is {r}x{c}, expected {rows}x{cols}")));
        }
        self.f64s(rows * cols)
    }
}

pub fn encode_model(net: &Network) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.u16(FORMAT_VERSION);
    let cfg = &net.config;
    w.u32(cfg.input_dim);
    w.u32(cfg.hidden_dims.len());
    cfg.hidden_dims.iter().for_each(|&d| w.u32(d));
    w.u32(cfg.embed_dim);
    w.f64s(&[cfg.tau]);
    w.u64(cfg.seed);
    let entries = net.vocab.entries();
    w.u32(entries.len());
    for e in entries {
        match e {
            Some(s) => {
                w.u8(1);
                w.u32(s.len());
                w.0.extend_from_slice(s.as_bytes());
            }
            None => w.u8(0),
        }
    }
    w.u32(net.norm.dim());
    w.f64s(&net.norm.mean);
    w.f64s(&net.norm.std);
    w.u32(net.layers.len());
    for l in &net.layers {
        w.matrix(l.rows, l.cols, &l.weights);
        w.matrix(l.rows, 1, &l.bias);
    }
    w.0
}

pub fn decode_model(bytes: &[u8]) -> Result<Network, ModelFileError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(MAGIC.len()).map_err(|_| ModelFileError::BadMagic)?;
    if magic != MAGIC {
        return Err(ModelFileError::BadMagic);
    }
    let version = r.u16()?;
    if version != FORMAT_VERSION {
        return Err(ModelFileError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let input_dim = r.u32()?;
    let n_hidden = r.u32()?;
    if n_hidden > (bytes.len() - r.pos) / 4 {
        return Err(ModelFileError::TruncatedFile);
    }
    let hidden_dims = (0..n_hidden).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
    let config = NetworkConfig { input_dim, hidden_dims, embed_dim: r.u32()?, tau: r.f64()?, seed: r.u64()? };
    config.validate().map_err(|e| ModelFileError::ShapeMismatch(e.to_string()))?;

    let n_vocab = r.u32()?;
    if n_vocab > bytes.len() - r.pos {
        return Err(ModelFileError::TruncatedFile);
    }
    let mut entries = Vec::with_capacity(n_vocab);
    for _ in 0..n_vocab {
        entries.push(match r.u8()? {
            0 => None,
            1 => {
                let len = r.u32()?;
                let raw = r.take(len)?;
                let s = std::str::from_utf8(raw)
                    .map_err(|_| ModelFileError::ShapeMismatch("vocabulary entry is not UTF-8".into()))?;
                Some(s.to_owned())
            }
            f => return Err(ModelFileError::ShapeMismatch(format!("vocabulary slot flag {f}"))),
        });
    }
    let vocab = DigraphVocabulary::from_entries(entries).map_err(|e| ModelFileError::ShapeMismatch(e.to_string()))?;
    if vocab.entries().len() != n_vocab {
        return Err(ModelFileError::ShapeMismatch(format!("{n_vocab} vocabulary slots")));
    }

    let dim = r.u32()?;
    if dim != input_dim {
        return Err(ModelFileError::ShapeMismatch(format!("norm stats have {dim} dims, input has {input_dim}")));
    }
    let norm = NormStats { mean: r.f64s(dim)?, std: r.f64s(dim)? };

    let dims = config.layer_dims();
    let n_layers = r.u32()?;
    if n_layers != dims.len() - 1 {
        return Err(ModelFileError::ShapeMismatch(format!("{n_layers} layers, config implies {}", dims.len() - 1)));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (l, w) in dims.windows(2).enumerate() {
        let (cols, rows) = (w[0], w[1]);
        let weights = r.matrix(rows, cols, &format!("layer {l} weights"))?;
        let bias = r.matrix(rows, 1, &format!("layer {l} bias"))?;
        layers.push(Dense { rows, cols, weights, bias });
    }
    if r.pos != bytes.len() {
        return Err(ModelFileError::ShapeMismatch(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Network { config, layers, norm, vocab })
}

pub fn load_model(path: &Path) -> Result<Network> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    decode_model(&bytes).map_err(|source| Error::Model { path: path.display().to_string(), source })
}
