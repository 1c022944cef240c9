//! Binary checkpoint files. Layout (all integers and floats little-endian):
//!
//! ```text
//! "FHRE"  u8 version
//! u64 n_entities  u64 n_relations (with inverses)  u64 dim
//! f64 entity_points[n_entities * (dim + 1)]
//! f64 head_bias[n_entities]  f64 tail_bias[n_entities]
//! f64 relation_angles[n_relations * dim / 2]
//! radam:     f64 lr, beta1, beta2, eps  u64 renorm_every
//!            f64 m[n_entities * (dim + 1)]  f64 v[..]  u64 steps[n_entities]
//! head_bias: f64 lr, beta1, beta2, eps  f64 m[n_entities]  f64 v[..]  u64 steps[n_entities]
//! tail_bias: same as head_bias
//! angles:    f64 lr, beta1, beta2, eps  f64 m[n_relations * dim / 2]  f64 v[..]  u64 steps[n_relations]
//! u64 epoch  f64 best_valid_mrr (NaN if never validated)
//! u64 config_len  u8 config[config_len] (UTF-8 `key = value` lines)
//! u8 vocab_hash[32]
//! ```

use std::fs;
use std::path::Path;

use crate::data::KgDataset;
use crate::error::{Error, Result};
use crate::model::{validate_dim, ModelState};
use crate::optim::{AdamHyper, AdamState, RAdamState};
use crate::training::{OptimState, TrainConfig};

pub const MAGIC: &[u8; 4] = b"FHRE";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub vocab_hash: [u8; 32],
    pub model: ModelState,
    pub optim: OptimState,
    pub epoch: usize,
    pub best_valid_mrr: f64,
}

impl Checkpoint {
    pub fn new(
        config: &TrainConfig,
        ds: &KgDataset,
        model: &ModelState,
        optim: &OptimState,
        epoch: usize,
        best_valid_mrr: f64,
    ) -> Self {
        Checkpoint {
            config: config.clone(),
            vocab_hash: ds.vocab_hash(),
            model: model.clone(),
            optim: optim.clone(),
            epoch,
            best_valid_mrr,
        }
    }

    /// Fails unless this checkpoint was trained on `ds`'s vocabulary.
    pub fn check_dataset(&self, ds: &KgDataset) -> Result<()> {
        if self.vocab_hash != ds.vocab_hash() {
            return Err(Error::Incompatible(format!(
                "vocabulary hash mismatch: checkpoint {} vs dataset {} ({} entities, {} relations); \
                 the checkpoint was trained on a different dataset or vocabulary order",
                hex(&self.vocab_hash),
                hex(&ds.vocab_hash()),
                ds.n_entities(),
                ds.n_base_relations()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        let m = &self.model;
        w.0.extend_from_slice(MAGIC);
        w.0.push(FORMAT_VERSION);
        w.u64(m.n_entities() as u64);
        w.u64(m.n_relations() as u64);
        w.u64(m.dim() as u64);
        w.f64s(&m.entity_points);
        w.f64s(&m.head_bias);
        w.f64s(&m.tail_bias);
        w.f64s(&m.relation_angles);

        let o = &self.optim;
        w.hyper(&o.entities.hyper);
        w.u64(o.entities.renorm_every);
        w.f64s(&o.entities.m);
        w.f64s(&o.entities.v);
        w.u64s(&o.entities.steps);
        for adam in [&o.head_bias, &o.tail_bias, &o.angles] {
            w.hyper(&adam.hyper);
            w.f64s(&adam.m);
            w.f64s(&adam.v);
            w.u64s(&adam.steps);
        }
        w.u64(self.epoch as u64);
        w.0.extend_from_slice(&self.best_valid_mrr.to_le_bytes());
        let config = self.config.to_kv_text();
        w.u64(config.len() as u64);
        w.0.extend_from_slice(config.as_bytes());
        w.0.extend_from_slice(&self.vocab_hash);
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Incompatible("not a checkpoint file (bad magic bytes)".into()));
        }
        let version = r.take(1)?[0];
        if version != FORMAT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint format version {version}, this build reads version {FORMAT_VERSION}"
            )));
        }
        let n_e = r.count()?;
        let n_r = r.count()?;
        let dim = r.count()?;
        let w = dim
            .checked_add(1)
            .ok_or_else(|| Error::Integrity("dimension overflows".into()))?;
        validate_dim(dim).map_err(|e| Error::Integrity(e.to_string()))?;
        if n_r % 2 != 0 {
            return Err(Error::Integrity(format!("odd relation count {n_r}")));
        }
        // Size check before allocating anything proportional to the header counts.
        let point_len = mul(n_e, w)?;
        let angle_len = mul(n_r, dim / 2)?;
        let floats = [mul(point_len, 3)?, mul(n_e, 8)?, mul(angle_len, 3)?]
            .iter()
            .try_fold(0usize, |a, &b| a.checked_add(b))
            .ok_or_else(|| Error::Integrity("table sizes overflow".into()))?;
        let needed = mul(floats, 8)?;
        if r.remaining() < needed {
            return Err(Error::Integrity(format!(
                "truncated: header declares at least {needed} more bytes, file has {}",
                r.remaining()
            )));
        }

        let mut model = ModelState::zeros(n_e, n_r, dim).map_err(|e| Error::Integrity(e.to_string()))?;
        model.entity_points = r.f64s(point_len)?;
        model.head_bias = r.f64s(n_e)?;
        model.tail_bias = r.f64s(n_e)?;
        model.relation_angles = r.f64s(angle_len)?;

        let mut entities = RAdamState::new(n_e, w, r.hyper()?);
        entities.renorm_every = r.u64()?;
        entities.m = r.f64s(point_len)?;
        entities.v = r.f64s(point_len)?;
        entities.steps = r.u64s(n_e)?;
        let mut read_adam = |rows: usize, width: usize| -> Result<AdamState> {
            let mut a = AdamState::new(rows, width, r.hyper()?);
            a.m = r.f64s(rows * width)?;
            a.v = r.f64s(rows * width)?;
            a.steps = r.u64s(rows)?;
            Ok(a)
        };
        let head_bias = read_adam(n_e, 1)?;
        let tail_bias = read_adam(n_e, 1)?;
        let angles = read_adam(n_r, dim / 2)?;
        let optim = OptimState {
            entities,
            head_bias,
            tail_bias,
            angles,
        };

        let epoch = r.count()?;
        let best_valid_mrr = r.f64()?;
        let config_len = r.count()?;
        let config_text = std::str::from_utf8(r.take(config_len)?)
            .map_err(|_| Error::Integrity("config echo is not UTF-8".into()))?;
        let mut config = TrainConfig::default();
        config
            .apply_kv_text(config_text)
            .map_err(|e| Error::Integrity(format!("config echo: {e}")))?;
        let vocab_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
        if r.remaining() != 0 {
            return Err(Error::Integrity(format!(
                "{} unexpected trailing bytes",
                r.remaining()
            )));
        }
        Ok(Checkpoint {
            config,
            vocab_hash,
            model,
            optim,
            epoch,
            best_valid_mrr,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn mul(a: usize, b: usize) -> Result<usize> {
    a.checked_mul(b)
        .ok_or_else(|| Error::Integrity("table sizes overflow".into()))
}

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64s(&mut self, v: &[f64]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }

    fn u64s(&mut self, v: &[u64]) {
        for x in v {
            self.u64(*x);
        }
    }

    fn hyper(&mut self, h: &AdamHyper) {
        self.f64s(&[h.lr, h.beta1, h.beta2, h.eps]);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Integrity(format!(
                "truncated at byte {}: needed {n} more bytes, {} left",
                self.pos,
                self.remaining()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn count(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Integrity("count does not fit in usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(mul(n, 8)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn u64s(&mut self, n: usize) -> Result<Vec<u64>> {
        let raw = self.take(mul(n, 8)?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn hyper(&mut self) -> Result<AdamHyper> {
        Ok(AdamHyper {
            lr: self.f64()?,
            beta1: self.f64()?,
            beta2: self.f64()?,
            eps: self.f64()?,
        })
    }
}
