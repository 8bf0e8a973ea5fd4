//! Binary parameter checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic          8 bytes  "SLCKPT01"
//! kind           u8       0 prediction, 1 surrogate, 2 linear threshold
//! seed           u64
//! encoder_layers u32      surrogate only, else 0
//! width_count    u32
//! widths         u32 * width_count
//! leaky_slope    f64
//! dropout        f64
//! param_count    u64      total scalars over all parameter blocks
//! block_count    u32
//! blocks         (len u64, f64 * len) * block_count
//! buffer_count   u32
//! buffers        (len u64, f64 * len) * buffer_count
//! ```
//!
//! Parameter blocks are stored in declaration order; buffers hold
//! non-trainable state such as batchnorm running statistics.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::Params;

const MAGIC: &[u8; 8] = b"SLCKPT01";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unknown model kind {0}")]
    UnknownKind(u8),
    #[error("checkpoint holds a {found:?}, expected {expected:?}")]
    WrongKind { expected: ModelKind, found: ModelKind },
    #[error("checkpoint layout does not match the model: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Prediction = 0,
    Surrogate = 1,
    LinearThreshold = 2,
}

impl ModelKind {
    fn from_u8(v: u8) -> Result<Self, CheckpointError> {
        match v {
            0 => Ok(ModelKind::Prediction),
            1 => Ok(ModelKind::Surrogate),
            2 => Ok(ModelKind::LinearThreshold),
            other => Err(CheckpointError::UnknownKind(other)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub seed: u64,
    pub widths: Vec<u32>,
    pub encoder_layers: u32,
    pub leaky_slope: f64,
    pub dropout: f64,
    pub blocks: Vec<Vec<f64>>,
    pub buffers: Vec<Vec<f64>>,
}

impl Checkpoint {
    pub fn param_count(&self) -> u64 {
        self.blocks.iter().map(|b| b.len() as u64).sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), CheckpointError> {
        w.write_all(MAGIC)?;
        w.write_all(&[self.kind as u8])?;
        w.write_all(&self.seed.to_le_bytes())?;
        w.write_all(&self.encoder_layers.to_le_bytes())?;
        w.write_all(&(self.widths.len() as u32).to_le_bytes())?;
        for width in &self.widths {
            w.write_all(&width.to_le_bytes())?;
        }
        w.write_all(&self.leaky_slope.to_le_bytes())?;
        w.write_all(&self.dropout.to_le_bytes())?;
        w.write_all(&self.param_count().to_le_bytes())?;
        for group in [&self.blocks, &self.buffers] {
            w.write_all(&(group.len() as u32).to_le_bytes())?;
            for block in group {
                w.write_all(&(block.len() as u64).to_le_bytes())?;
                for v in block {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, CheckpointError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let kind = ModelKind::from_u8(read_array::<1>(&mut r)?[0])?;
        let seed = u64::from_le_bytes(read_array(&mut r)?);
        let encoder_layers = u32::from_le_bytes(read_array(&mut r)?);
        let width_count = u32::from_le_bytes(read_array(&mut r)?);
        let widths = (0..width_count)
            .map(|_| read_array(&mut r).map(u32::from_le_bytes))
            .collect::<io::Result<Vec<_>>>()?;
        let leaky_slope = f64::from_le_bytes(read_array(&mut r)?);
        let dropout = f64::from_le_bytes(read_array(&mut r)?);
        let param_count = u64::from_le_bytes(read_array(&mut r)?);
        let blocks = read_group(&mut r)?;
        let buffers = read_group(&mut r)?;
        let ck = Self {
            kind,
            seed,
            widths,
            encoder_layers,
            leaky_slope,
            dropout,
            blocks,
            buffers,
        };
        if ck.param_count() != param_count {
            return Err(CheckpointError::Layout(format!(
                "header says {param_count} parameters, blocks hold {}",
                ck.param_count()
            )));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub(crate) fn expect_kind(&self, expected: ModelKind) -> Result<(), CheckpointError> {
        if self.kind != expected {
            return Err(CheckpointError::WrongKind {
                expected,
                found: self.kind,
            });
        }
        Ok(())
    }

    /// Copies stored blocks into `params`, which must have the same layout.
    pub(crate) fn fill_params(&self, params: &mut Params) -> Result<(), CheckpointError> {
        if self.blocks.len() != params.len() {
            return Err(CheckpointError::Layout(format!(
                "{} blocks stored, model has {}",
                self.blocks.len(),
                params.len()
            )));
        }
        for (b, (stored, p)) in self.blocks.iter().zip(params.blocks_mut()).enumerate() {
            if stored.len() != p.len() {
                return Err(CheckpointError::Layout(format!(
                    "block {b}: {} values stored, model has {}",
                    stored.len(),
                    p.len()
                )));
            }
            p.data_mut().copy_from_slice(stored);
        }
        Ok(())
    }
}

fn read_array<const N: usize>(r: &mut impl Read) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_group(r: &mut impl Read) -> io::Result<Vec<Vec<f64>>> {
    let count = u32::from_le_bytes(read_array(r)?);
    (0..count)
        .map(|_| {
            let len = u64::from_le_bytes(read_array(r)?);
            (0..len)
                .map(|_| read_array(r).map(f64::from_le_bytes))
                .collect()
        })
        .collect()
}
