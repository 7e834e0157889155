//! Binary model checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! "CEMR"  u32 version  u32 latent_dim  u64 seed  u32 epochs
//! u32 n_epochs_logged  n x (f64 rec, f64 trans, f64 eval)
//! u32 config_len  config bytes (UTF-8)
//! u32 n_tensors  n x (u32 name_len, name, u32 ndim, ndim x u32, f32 values)
//! ```

use std::io::{self, Write};
use std::path::Path;

use super::write_atomic;
use crate::latentmodel::{DynamicModel, LossBreakdown};
use crate::nnet::Tensor;
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"CEMR";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: u32,
    pub loss_history: Vec<LossBreakdown>,
    /// Free-form text describing the configuration that produced the model.
    pub config_echo: String,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DynamicModel,
    pub metadata: TrainingMetadata,
}

fn u32_len(n: usize, what: &str) -> io::Result<u32> {
    u32::try_from(n)
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, format!("{what} too large")))
}

pub fn write_checkpoint(
    w: &mut dyn Write,
    model: &DynamicModel,
    metadata: &TrainingMetadata,
) -> io::Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&u32_len(model.latent_dim(), "latent dimension")?.to_le_bytes())?;
    w.write_all(&metadata.seed.to_le_bytes())?;
    w.write_all(&metadata.epochs.to_le_bytes())?;
    w.write_all(&u32_len(metadata.loss_history.len(), "loss history")?.to_le_bytes())?;
    for l in &metadata.loss_history {
        for v in [l.rec, l.trans, l.eval] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.write_all(&u32_len(metadata.config_echo.len(), "config echo")?.to_le_bytes())?;
    w.write_all(metadata.config_echo.as_bytes())?;
    let tensors = model.named_tensors();
    w.write_all(&u32_len(tensors.len(), "tensor table")?.to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&u32_len(name.len(), "tensor name")?.to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&u32_len(t.shape().len(), "tensor rank")?.to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&u32_len(d, "tensor dimension")?.to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::CorruptCheckpoint(format!(
                    "truncated while reading {what} at byte {}",
                    self.pos
                ))
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::CorruptCheckpoint(format!("{what} is not UTF-8")))
    }
}

/// Parses a checkpoint image.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r
        .take(4, "magic")
        .map_err(|_| Error::IncompatibleCheckpoint("file too short to be a checkpoint".into()))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::IncompatibleCheckpoint(format!(
            "bad magic bytes {magic:?}"
        )));
    }
    let version = r.u32("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "format version {version}, this build reads version {CHECKPOINT_VERSION}"
        )));
    }
    let latent_dim = r.u32("latent dimension")? as usize;
    let seed = r.u64("seed")?;
    let epochs = r.u32("epoch count")?;
    let n_loss = r.u32("loss history length")? as usize;
    let mut loss_history = Vec::with_capacity(n_loss.min(1 << 16));
    for _ in 0..n_loss {
        loss_history.push(LossBreakdown {
            rec: r.f64("loss history")?,
            trans: r.f64("loss history")?,
            eval: r.f64("loss history")?,
        });
    }
    let config_echo = r.string("config echo")?;
    let n_tensors = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(n_tensors.min(1 << 10));
    for _ in 0..n_tensors {
        let name = r.string("tensor name")?;
        let ndim = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            shape.push(r.u32("tensor shape")? as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::CorruptCheckpoint(format!("tensor {name} shape overflows")))?;
        let raw = r.take(count.saturating_mul(4), &format!("tensor {name}"))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor =
            Tensor::from_vec(&shape, data).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        tensors.push((name, tensor));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after the tensor table",
            bytes.len() - r.pos
        )));
    }
    let model = DynamicModel::from_named_tensors(tensors)?;
    if model.latent_dim() != latent_dim {
        return Err(Error::CorruptCheckpoint(format!(
            "header latent dimension {latent_dim} disagrees with tensors ({})",
            model.latent_dim()
        )));
    }
    Ok(Checkpoint {
        model,
        metadata: TrainingMetadata {
            seed,
            epochs,
            loss_history,
            config_echo,
        },
    })
}

/// Writes a checkpoint atomically.
pub fn save_checkpoint(
    path: &Path,
    model: &DynamicModel,
    metadata: &TrainingMetadata,
) -> Result<()> {
    write_atomic(path, |w| write_checkpoint(w, model, metadata))
}

/// Reads a checkpoint; `expected_latent_dim` rejects models of another size.
pub fn load_checkpoint(path: &Path, expected_latent_dim: Option<usize>) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let checkpoint = read_checkpoint(&bytes)?;
    if let Some(expected) = expected_latent_dim {
        if checkpoint.model.latent_dim() != expected {
            return Err(Error::Dimension(format!(
                "{} holds a model with latent dimension {}, configuration asks for {expected}",
                path.display(),
                checkpoint.model.latent_dim()
            )));
        }
    }
    Ok(checkpoint)
}
