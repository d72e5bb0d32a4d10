//! Binary checkpoint layout (little-endian):
//!
//! ```text
//! "IQCK" | u32 version | u32 n, n bytes of JSON ModelConfig | u32 stage | u64 step
//!        | u32 h, h × f64 loss history | u64 p, p × f64 parameters in declaration order
//! ```

use std::fs;
use std::path::Path;

use super::{ModelConfig, TransducerParams};
use crate::error::{Error, Result};
use crate::numkernel::Parameters;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IQCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: TransducerParams,
    /// 1 after ASR training, 2 after IQ-joint training.
    pub stage: u32,
    pub step: u64,
    /// Mean training loss per epoch.
    pub train_loss_history: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = serde_json::to_vec(&self.config).expect("config serialises");
        let params = self.params.flatten();
        let mut out = Vec::with_capacity(40 + cfg.len() + 8 * (params.len() + self.train_loss_history.len()));
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&cfg);
        out.extend_from_slice(&self.stage.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.train_loss_history.len() as u32).to_le_bytes());
        for v in &self.train_loss_history {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for v in params {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format(path, "magic mismatch, expected IQCK"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
        }
        let n = r.u32()? as usize;
        let config: ModelConfig = serde_json::from_slice(r.take(n)?).map_err(|e| Error::format(path, format!("model config: {e}")))?;
        config.validate().map_err(|e| Error::format(path, e.to_string()))?;
        let stage = r.u32()?;
        if !(1..=2).contains(&stage) {
            return Err(Error::format(path, format!("stage {stage} is not 1 or 2")));
        }
        let step = r.u64()?;
        let h = r.u32()? as usize;
        let train_loss_history = (0..h).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let mut params = TransducerParams::zeros(&config)?;
        let p = r.u64()? as usize;
        if p != params.num_params() {
            return Err(Error::format(
                path,
                format!("{p} parameters stored, config implies {}", params.num_params()),
            ));
        }
        let flat = (0..p).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        params.set_flat(&flat)?;
        if r.pos != bytes.len() {
            return Err(Error::format(path, format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Checkpoint {
            config,
            params,
            stage,
            step,
            train_loss_history,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(self.path, format!("truncated at byte {} (wanted {n} more)", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::super::tests::{random_params, small_config};
    use super::*;

    fn ckpt() -> Checkpoint {
        let config = small_config(5);
        Checkpoint {
            params: random_params(&config, 1, 0.5),
            config,
            stage: 1,
            step: 17,
            train_loss_history: vec![3.5, 2.25],
        }
    }

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/model.iqck");
        let c = ckpt();
        write_checkpoint(&path, &c).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap(), c);
        assert_eq!(read_checkpoint(&path).unwrap().to_bytes(), c.to_bytes());
    }

    #[test]
    fn corruption_is_reported() {
        let p = Path::new("x.iqck");
        let bytes = ckpt().to_bytes();
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3], p),
            Err(Error::Format { .. })
        ));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad, p), Err(Error::Format { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::from_bytes(&long, p).is_err());
        let err = read_checkpoint(Path::new("/nonexistent/model.iqck")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/model.iqck"));
    }
}
