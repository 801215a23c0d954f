//! VSCK checkpoint files.
//!
//! Little-endian: magic `VSCK`, `u32` version, `u32` length of a UTF-8
//! `key=value` config block, the block itself, then records until end of
//! file. A record is `u32` name length, the name, `u32` rows, `u32` cols and
//! `rows·cols` `f64` values in row-major order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::config::{parse_kv, TrainConfig};
use crate::error::{at_path, Error, Result};
use crate::gcn::GcnConfig;
use crate::model::{Model, ModelConfig, PARAM_NAMES};
use crate::numerics::Matrix;

use super::optim::AdamState;

pub const MAGIC: [u8; 4] = *b"VSCK";
pub const VERSION: u32 = 1;

const STATE_KEYS: [&str; 6] = [
    "d",
    "vocab_size",
    "epoch",
    "best_val_loss",
    "current_lr",
    "adam_step",
];

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: AdamState,
    /// Number of completed epochs.
    pub epoch: usize,
    pub best_val_loss: f64,
    /// Learning rate in effect for the next epoch.
    pub lr: f64,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_record(out: &mut Vec<u8>, name: &str, m: &Matrix) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    put_u32(out, m.rows())?;
    put_u32(out, m.cols())?;
    for x in m.as_slice() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(Error::Length {
                expected: self.at.saturating_add(n),
                actual: self.bytes.len(),
            })?;
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn done(&self) -> bool {
        self.at == self.bytes.len()
    }
}

impl Checkpoint {
    fn model_config(&self) -> ModelConfig {
        self.model.config
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mc = self.model_config();
        let mut block = self.config.dump();
        for (k, v) in [
            ("d", mc.d.to_string()),
            ("vocab_size", mc.vocab_size.to_string()),
            ("epoch", self.epoch.to_string()),
            ("best_val_loss", self.best_val_loss.to_string()),
            ("current_lr", self.lr.to_string()),
            ("adam_step", self.adam.step.to_string()),
        ] {
            block.push_str(&format!("{k}={v}\n"));
        }
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION as usize)?;
        put_u32(&mut out, block.len())?;
        out.extend_from_slice(block.as_bytes());
        for (name, m) in PARAM_NAMES.iter().zip(self.model.params()) {
            put_record(&mut out, name, m)?;
        }
        for (prefix, moments) in [("adam.m.", &self.adam.m), ("adam.v.", &self.adam.v)] {
            for (name, m) in PARAM_NAMES.iter().zip(moments) {
                put_record(&mut out, &format!("{prefix}{name}"), m)?;
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, at: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("not a VSCK checkpoint (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Format(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let len = r.u32()?;
        let block = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::Format("checkpoint config block is not UTF-8".into()))?;

        let mut config = TrainConfig::default();
        let mut state = BTreeMap::new();
        for (k, v) in parse_kv(block).map_err(as_format)? {
            if STATE_KEYS.contains(&k.as_str()) {
                state.insert(k, v);
            } else {
                config.set(&k, &v).map_err(as_format)?;
            }
        }
        config.validate().map_err(as_format)?;
        let field = |k: &str| -> Result<&String> {
            state
                .get(k)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for `{k}`")))
        };
        let int = |k: &str| -> Result<u64> {
            field(k)?
                .parse()
                .map_err(|_| Error::Format(format!("bad value for `{k}`")))
        };

        let mut records = BTreeMap::new();
        while !r.done() {
            let name_len = r.u32()?;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Format("record name is not UTF-8".into()))?
                .to_string();
            let (rows, cols) = (r.u32()?, r.u32()?);
            let count = rows
                .checked_mul(cols)
                .filter(|c| c.checked_mul(8).is_some())
                .ok_or_else(|| Error::Format(format!("record {name} is too large")))?;
            let payload = r.take(count * 8)?;
            let data = payload
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let m = Matrix::from_vec(rows, cols, data)
                .map_err(|_| Error::Format(format!("record {name} is not finite")))?;
            if records.insert(name.clone(), m).is_some() {
                return Err(Error::Format(format!("duplicate record {name}")));
            }
        }
        let mut take = |name: String| {
            records
                .remove(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint is missing record {name}")))
        };
        let params = PARAM_NAMES
            .iter()
            .map(|n| take(n.to_string()))
            .collect::<Result<Vec<_>>>()?;
        let m = PARAM_NAMES
            .iter()
            .map(|n| take(format!("adam.m.{n}")))
            .collect::<Result<Vec<_>>>()?;
        let v = PARAM_NAMES
            .iter()
            .map(|n| take(format!("adam.v.{n}")))
            .collect::<Result<Vec<_>>>()?;
        if let Some(extra) = records.keys().next() {
            return Err(Error::Format(format!("unexpected record {extra}")));
        }

        let model_config = ModelConfig {
            d: int("d")? as usize,
            common_dim: config.common_dim,
            word_dim: config.word_dim,
            vocab_size: int("vocab_size")? as usize,
            gcn: GcnConfig {
                normalization: config.normalization,
                adjacency: config.adjacency,
            },
        };
        let model = Model::from_params(model_config, params)?;
        for (p, (mm, vv)) in model.params().iter().zip(m.iter().zip(&v)) {
            if p.shape() != mm.shape() || p.shape() != vv.shape() {
                return Err(Error::Format(
                    "optimizer state does not match parameter shapes".into(),
                ));
            }
        }
        Ok(Self {
            adam: AdamState {
                m,
                v,
                step: int("adam_step")?,
            },
            model,
            epoch: int("epoch")? as usize,
            best_val_loss: num("best_val_loss")?,
            lr: num("current_lr")?,
            config,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()?).map_err(at_path(path))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path).map_err(at_path(path))?)
    }
}

fn as_format(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Format(format!("checkpoint config: {m}")),
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Normalization;

    fn sample() -> Checkpoint {
        let config = TrainConfig {
            common_dim: 4,
            word_dim: 3,
            normalization: Normalization::Sym,
            lr: 0.1 + 0.2,
            ..TrainConfig::default()
        };
        let mc = ModelConfig {
            d: 5,
            common_dim: 4,
            word_dim: 3,
            vocab_size: 6,
            gcn: GcnConfig {
                normalization: Normalization::Sym,
                adjacency: config.adjacency,
            },
        };
        let model = Model::init(mc, 3).unwrap();
        let mut adam = AdamState::new(model.params());
        adam.step = 17;
        adam.m[2].as_mut_slice()[0] = 1.0 / 3.0;
        Checkpoint {
            config,
            model,
            adam,
            epoch: 4,
            best_val_loss: 0.123456789,
            lr: 5e-5,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let c = sample();
        let bytes = c.encode().unwrap();
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.encode().unwrap(), bytes);
    }

    #[test]
    fn infinite_best_loss_survives() {
        let c = Checkpoint {
            best_val_loss: f64::INFINITY,
            ..sample()
        };
        assert_eq!(Checkpoint::decode(&c.encode().unwrap()).unwrap(), c);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = sample().encode().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(Error::Format(_))));
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 1]),
            Err(Error::Length { .. })
        ));
        assert!(Checkpoint::decode(&bytes[..30]).is_err());
    }
}
