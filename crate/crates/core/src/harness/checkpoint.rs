//! The `VTCK` checkpoint format.
//!
//! ```text
//! "VTCK" · version u16 · entry count u32
//! per entry: name length u16 · name bytes · rank u8 · rank × u32 dims · f64 values
//! ```
//! All integers and floats are little-endian. Besides model parameters the
//! file carries entries with reserved prefixes: `meta.` (model shape),
//! `buffer.` (batch-norm running statistics) and `adamw.` (optimizer state).

use std::fs;
use std::path::Path;

use super::optim::AdamW;
use crate::error::{Dims, Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"VTCK";
pub const VERSION: u16 = 1;

const META_MODEL: &str = "meta.model";
const RUNNING_MEAN: &str = "buffer.h.bn.running_mean";
const RUNNING_VAR: &str = "buffer.h.bn.running_var";
const ADAM_STEP: &str = "adamw.step";
const ADAM_HPARAMS: &str = "adamw.hparams";
const ADAM_M: &str = "adamw.m.";
const ADAM_V: &str = "adamw.v.";

/// A model with optional optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub optimizer: Option<AdamW>,
}

pub fn encode_entries(entries: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        let len = u16::try_from(name.len()).map_err(|_| Error::Contract(format!("name too long: {name}")))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.rank() as u8);
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Truncated(format!("{what} at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn decode_entries(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::Version {
            expected: VERSION,
            found: version,
        });
    }
    let count = r.u32("entry count")?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = usize::from(r.u16("name length")?);
        let name = String::from_utf8(r.take(len, "name")?.to_vec())
            .map_err(|_| Error::Malformed("entry name is not UTF-8".into()))?;
        let rank = usize::from(r.u8("rank")?);
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let numel = numel
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Malformed(format!("`{name}` has shape {shape:?}")))?;
        let raw = r.take(
            numel.checked_mul(8).ok_or_else(|| Error::Malformed("entry too large".into()))?,
            &format!("values of `{name}`"),
        )?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        entries.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(entries)
}

impl Checkpoint {
    pub fn entries(&self) -> Vec<(String, Tensor)> {
        let m = &self.model;
        let mut out = vec![(
            META_MODEL.to_string(),
            Tensor::new([12], m.config.to_values()).expect("twelve values"),
        )];
        out.extend(m.params.iter().map(|(n, t)| (n.to_string(), t.clone())));
        let df = m.running_mean.len();
        out.push((RUNNING_MEAN.into(), Tensor::new([df], m.running_mean.clone()).expect("length df")));
        out.push((RUNNING_VAR.into(), Tensor::new([df], m.running_var.clone()).expect("length df")));
        if let Some(opt) = &self.optimizer {
            out.push((ADAM_STEP.into(), Tensor::scalar(opt.t as f64)));
            out.push((
                ADAM_HPARAMS.into(),
                Tensor::new([4], vec![opt.beta1, opt.beta2, opt.eps, opt.weight_decay]).expect("four values"),
            ));
            for ((name, _), (mt, vt)) in m.params.iter().zip(opt.m.iter().zip(&opt.v)) {
                out.push((format!("{ADAM_M}{name}"), mt.clone()));
                out.push((format!("{ADAM_V}{name}"), vt.clone()));
            }
        }
        out
    }

    /// Fills `model` from decoded entries. Every parameter must be present
    /// with the model's shape; names the model does not know are rejected.
    pub fn from_entries(mut model: Model, entries: Vec<(String, Tensor)>) -> Result<Checkpoint> {
        let n = model.params.len();
        let mut seen = vec![false; n];
        let mut m = vec![None; n];
        let mut v = vec![None; n];
        let mut step = None;
        let mut hparams = None;
        let check = |name: &str, expected: &[usize], t: &Tensor| -> Result<()> {
            if t.shape() != expected {
                return Err(Error::DimensionMismatch {
                    name: name.to_string(),
                    expected: Dims(expected.to_vec()),
                    found: Dims(t.shape().to_vec()),
                });
            }
            Ok(())
        };
        let df = model.running_mean.len();
        for (name, t) in entries {
            if name == META_MODEL {
                continue;
            } else if name == RUNNING_MEAN {
                check(&name, &[df], &t)?;
                model.running_mean = t.into_data();
            } else if name == RUNNING_VAR {
                check(&name, &[df], &t)?;
                model.running_var = t.into_data();
            } else if name == ADAM_STEP {
                let s = t.item()?;
                if s < 0.0 || s.fract() != 0.0 {
                    return Err(Error::Malformed(format!("optimizer step {s}")));
                }
                step = Some(s as u64);
            } else if name == ADAM_HPARAMS {
                check(&name, &[4], &t)?;
                hparams = Some(t.into_data());
            } else if let Some(p) = name.strip_prefix(ADAM_M).or_else(|| name.strip_prefix(ADAM_V)) {
                let i = model.params.position(p).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
                check(&name, model.params.tensors().nth(i).expect("position in range").shape(), &t)?;
                if name.starts_with(ADAM_M) {
                    m[i] = Some(t);
                } else {
                    v[i] = Some(t);
                }
            } else {
                let i = model.params.position(&name).ok_or_else(|| Error::UnknownParameter(name.clone()))?;
                model.params.assign(&name, t)?;
                seen[i] = true;
            }
        }
        let names: Vec<String> = model.params.iter().map(|(n, _)| n.to_string()).collect();
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::MissingParameter(names[i].clone()));
        }
        let optimizer = match (step, hparams) {
            (None, None) if m.iter().chain(&v).all(Option::is_none) => None,
            (Some(t), Some(h)) => {
                let collect = |slots: Vec<Option<Tensor>>, prefix: &str| -> Result<Vec<Tensor>> {
                    slots
                        .into_iter()
                        .zip(&names)
                        .map(|(s, n)| s.ok_or_else(|| Error::MissingParameter(format!("{prefix}{n}"))))
                        .collect()
                };
                Some(AdamW {
                    beta1: h[0],
                    beta2: h[1],
                    eps: h[2],
                    weight_decay: h[3],
                    m: collect(m, ADAM_M)?,
                    v: collect(v, ADAM_V)?,
                    t,
                })
            }
            (None, _) => return Err(Error::MissingParameter(ADAM_STEP.into())),
            (_, None) => return Err(Error::MissingParameter(ADAM_HPARAMS.into())),
        };
        Ok(Checkpoint { model, optimizer })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        encode_entries(&self.entries())
    }

    /// Decodes a checkpoint, building the model from its `meta.model` entry.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let entries = decode_entries(bytes)?;
        let meta = entries
            .iter()
            .find(|(n, _)| n == META_MODEL)
            .ok_or_else(|| Error::MissingParameter(META_MODEL.into()))?;
        let config = ModelConfig::from_values(meta.1.data())?;
        Checkpoint::from_entries(Model::init(config, 0)?, entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }

    /// Loads a file into an existing model shape, so shape disagreements are
    /// reported per parameter.
    pub fn load_into(path: &Path, model: Model) -> Result<Checkpoint> {
        Checkpoint::from_entries(model, decode_entries(&fs::read(path)?)?)
    }
}
