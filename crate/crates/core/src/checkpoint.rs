//! Binary checkpoint format.
//!
//! ```text
//! magic    8 bytes  "PROMCKPT"
//! version  u32 LE
//! hdr_len  u64 LE
//! header   hdr_len bytes of JSON (spec, statistics, history, tensor names and shapes)
//! tensors  every parameter's values as f64 LE, in header order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::SegmentConfig;
use crate::error::{Error, Result};
use crate::fusion::Standardizer;
use crate::mtl::{build_model, LossScales, Model, ModelSpec};
use crate::params::ParamStore;

pub const MAGIC: &[u8; 8] = b"PROMCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub prominence: Option<Standardizer>,
    pub boundary: Option<Standardizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_pearson: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub segment: SegmentConfig,
    pub store: ParamStore,
    pub feature_stats: FeatureStats,
    pub loss_scales: LossScales,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl Checkpoint {
    /// Rebuilds the model graph and loads the stored parameters.
    pub fn model(&self) -> Result<Model> {
        let mut model = build_model(&self.spec)?;
        model.load_store(self.store.clone())?;
        Ok(model)
    }

    pub fn best_val_loss(&self) -> Option<f64> {
        self.history.iter().find(|r| r.epoch == self.best_epoch).map(|r| r.val_loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = self.clone();
        let mut tensors: Vec<f64> = Vec::with_capacity(self.store.iter().map(|(_, p)| p.data.len()).sum());
        for (_, p) in self.store.iter() {
            tensors.extend_from_slice(&p.data);
        }
        header.store = strip_data(&self.store);
        let json = serde_json::to_vec(&header)?;
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(MAGIC).map_err(io)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&(json.len() as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&json).map_err(io)?;
        for v in tensors {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint", path.display())));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(io)?;
        let version = u32::from_le_bytes(b4);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let mut b8 = [0u8; 8];
        r.read_exact(&mut b8).map_err(io)?;
        let mut json = vec![0u8; u64::from_le_bytes(b8) as usize];
        r.read_exact(&mut json).map_err(io)?;
        let mut ckpt: Checkpoint = serde_json::from_slice(&json)?;
        let ids: Vec<_> = ckpt.store.iter().map(|(id, p)| (id, p.shape.iter().product::<usize>())).collect();
        for (id, n) in ids {
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut b8).map_err(|e| Error::Checkpoint(format!("truncated tensor data: {e}")))?;
                data.push(f64::from_le_bytes(b8));
            }
            *ckpt.store.data_vec_mut(id) = data;
        }
        Ok(ckpt)
    }
}

fn strip_data(store: &ParamStore) -> ParamStore {
    let mut s = store.clone();
    let ids: Vec<_> = s.iter().map(|(id, _)| id).collect();
    for id in ids {
        s.data_vec_mut(id).clear();
    }
    s
}
