//! Versioned binary checkpoints: magic `USR1`, little-endian integers,
//! length-prefixed names, and raw float64 parameter blocks. Round trips are
//! lossless and byte-identical.

use std::fs;
use std::path::Path;

use usr_core::env::Position;
use usr_core::models::{ModelArch, UsrModel};

use crate::CliError;

pub const MAGIC: [u8; 4] = *b"USR1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub obs_dim: u32,
    pub d: u32,
    pub hidden: u32,
    pub arch: ModelArch,
    pub phi_frozen: bool,
    pub env_steps: u64,
    pub seed: u64,
    pub source_goals: Vec<Position>,
    pub blocks: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_model(model: &UsrModel, env_steps: u64, seed: u64, source_goals: &[Position]) -> Self {
        Checkpoint {
            format_version: FORMAT_VERSION,
            obs_dim: model.obs_dim() as u32,
            d: model.d() as u32,
            hidden: model.hidden() as u32,
            arch: model.arch(),
            phi_frozen: model.phi_frozen(),
            env_steps,
            seed,
            source_goals: source_goals.to_vec(),
            blocks: model.param_blocks(),
        }
    }

    /// Rebuilds the model; every stored block must match a model block.
    pub fn to_model(&self) -> Result<UsrModel, CliError> {
        let mut model = match self.arch {
            ModelArch::Standard => UsrModel::new(self.obs_dim as usize, self.d as usize, self.hidden as usize, 0),
            ModelArch::IdentityPhi => UsrModel::with_identity_features(self.obs_dim as usize, self.hidden as usize, 0),
        };
        let expected = model.param_blocks().len();
        if self.blocks.len() != expected {
            return Err(CliError::Config(format!(
                "checkpoint has {} parameter blocks, model expects {expected}",
                self.blocks.len()
            )));
        }
        for (name, _, values) in &self.blocks {
            model
                .load_param_block(name, values)
                .map_err(|e| CliError::Config(format!("checkpoint block `{name}`: {e}")))?;
        }
        if self.phi_frozen {
            model.freeze_phi();
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&self.format_version.to_le_bytes());
        out.extend_from_slice(&self.obs_dim.to_le_bytes());
        out.extend_from_slice(&self.d.to_le_bytes());
        out.extend_from_slice(&self.hidden.to_le_bytes());
        out.push(match self.arch {
            ModelArch::Standard => 0,
            ModelArch::IdentityPhi => 1,
        });
        out.push(self.phi_frozen as u8);
        out.extend_from_slice(&self.env_steps.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.source_goals.len() as u32).to_le_bytes());
        for g in &self.source_goals {
            out.extend_from_slice(&(g.row as u32).to_le_bytes());
            out.extend_from_slice(&(g.col as u32).to_le_bytes());
        }
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for (name, dims, values) in &self.blocks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
            for dim in dims {
                out.extend_from_slice(&(*dim as u64).to_le_bytes());
            }
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CliError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(CliError::Config("not a checkpoint file (bad magic)".into()));
        }
        let format_version = r.u32()?;
        if format_version != FORMAT_VERSION {
            return Err(CliError::Config(format!(
                "checkpoint format version {format_version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let obs_dim = r.u32()?;
        let d = r.u32()?;
        let hidden = r.u32()?;
        let arch = match r.u8()? {
            0 => ModelArch::Standard,
            1 => ModelArch::IdentityPhi,
            other => return Err(CliError::Config(format!("unknown architecture tag {other}"))),
        };
        let phi_frozen = r.u8()? != 0;
        let env_steps = r.u64()?;
        let seed = r.u64()?;
        let n_goals = r.u32()? as usize;
        let mut source_goals = Vec::with_capacity(n_goals);
        for _ in 0..n_goals {
            let row = r.u32()? as usize;
            let col = r.u32()? as usize;
            source_goals.push(Position::new(row, col));
        }
        let n_blocks = r.u32()? as usize;
        let mut blocks = Vec::with_capacity(n_blocks);
        for _ in 0..n_blocks {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CliError::Config("checkpoint block name is not utf-8".into()))?;
            let n_dims = r.u32()? as usize;
            let mut dims = Vec::with_capacity(n_dims);
            for _ in 0..n_dims {
                dims.push(r.u64()? as usize);
            }
            let len: usize = dims.iter().product();
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                values.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
            }
            blocks.push((name, dims, values));
        }
        if r.pos != bytes.len() {
            return Err(CliError::Config("trailing bytes after checkpoint payload".into()));
        }
        Ok(Checkpoint {
            format_version,
            obs_dim,
            d,
            hidden,
            arch,
            phi_frozen,
            env_steps,
            seed,
            source_goals,
            blocks,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.to_bytes()).map_err(CliError::Io)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(CliError::Io)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        if self.pos + n > self.bytes.len() {
            return Err(CliError::Config("checkpoint file is truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, CliError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
