use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{sigmoid, Tensor};
use crate::error::{Error, Result};
use crate::model::{read_container, write_container, Model};
use crate::task::{Rule, Subroutine};

const SUBNET_MAGIC: &[u8; 8] = b"CSTRSUB1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    /// First layer whose weights are masked; all later weights are masked too.
    pub start_layer: usize,
    /// Initial value of every mask logit.
    pub s0: f64,
    pub learning_rate: f64,
    /// Coefficient of the penalty on the relaxed mask.
    pub lambda: f64,
    pub beta0: f64,
    pub beta_max: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for MaskConfig {
    fn default() -> Self {
        Self {
            start_layer: 0,
            s0: 0.05,
            learning_rate: 0.01,
            lambda: 1e-8,
            beta0: 1.0,
            beta_max: 200.0,
            epochs: 90,
            batch_size: 64,
        }
    }
}

impl MaskConfig {
    pub fn validate(&self, model: &Model) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda {} must be finite and non-negative", self.lambda));
        }
        if !(self.beta0 >= 1.0 && self.beta0.is_finite()) || !(self.beta_max > self.beta0) || !self.beta_max.is_finite() {
            return fail(format!("need 1 <= beta0 < beta_max, got {} and {}", self.beta0, self.beta_max));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) || !self.s0.is_finite() {
            return fail(format!("learning rate {} / s0 {}", self.learning_rate, self.s0));
        }
        if self.epochs < 2 || self.batch_size == 0 {
            return fail(format!("epochs {} (need >= 2), batch size {}", self.epochs, self.batch_size));
        }
        model.masked_params(self.start_layer).map(|_| ())
    }
}

/// `beta(e) = beta0 * (beta_max / beta0)^(e / (epochs - 1))`.
pub fn anneal_beta(epoch: usize, cfg: &MaskConfig) -> Result<f64> {
    if cfg.epochs < 2 {
        return Err(Error::Config(format!("annealing needs at least 2 epochs, got {}", cfg.epochs)));
    }
    if epoch >= cfg.epochs {
        return Err(Error::Config(format!("epoch {epoch} outside schedule of {}", cfg.epochs)));
    }
    if epoch == cfg.epochs - 1 {
        return Ok(cfg.beta_max);
    }
    let t = epoch as f64 / (cfg.epochs - 1) as f64;
    Ok(cfg.beta0 * (cfg.beta_max / cfg.beta0).powf(t))
}

/// Heaviside step with `H(0) = 0`.
pub fn heaviside(s: f64) -> bool {
    s > 0.0
}

/// Real-valued mask logits for the masked weights of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskState {
    pub start_layer: usize,
    /// Indices into the model's parameter list.
    pub params: Vec<usize>,
    pub logits: Vec<Tensor>,
    pub beta: f64,
}

impl MaskState {
    pub fn new(model: &Model, cfg: &MaskConfig) -> Result<Self> {
        cfg.validate(model)?;
        let params = model.masked_params(cfg.start_layer)?;
        let logits = params
            .iter()
            .map(|&i| Tensor::filled(model.params[i].tensor.shape(), cfg.s0))
            .collect();
        Ok(Self {
            start_layer: cfg.start_layer,
            params,
            logits,
            beta: cfg.beta0,
        })
    }

    pub fn check_shapes(&self, model: &Model) -> Result<()> {
        for (&i, s) in self.params.iter().zip(&self.logits) {
            let w = &model.params.get(i).ok_or_else(|| Error::shape("mask", format!("no parameter {i}")))?.tensor;
            if w.shape() != s.shape() {
                return Err(Error::shape(
                    "mask",
                    format!("logits {:?} vs weight {:?}", s.shape(), w.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn min_abs_logit(&self) -> f64 {
        self.logits
            .iter()
            .flat_map(|t| t.values())
            .fold(f64::INFINITY, |m, v| m.min(v.abs()))
    }

    /// Base model with relaxed weights `w * sigmoid(beta * s)`.
    pub fn soft_model(&self, model: &Model, beta: f64) -> Result<Model> {
        self.check_shapes(model)?;
        let mut out = model.clone();
        for (&i, s) in self.params.iter().zip(&self.logits) {
            for (w, &l) in out.params[i].tensor.values_mut().iter_mut().zip(s.values()) {
                *w *= sigmoid(beta * l);
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub base_model_id: String,
    pub rule: Rule,
    /// `None` when the mask objective is the compositional task itself.
    pub subroutine: Option<Subroutine>,
    pub config: MaskConfig,
    pub seed: u64,
    #[serde(default)]
    pub repeat: usize,
}

impl Provenance {
    /// Name of the mask-training objective.
    pub fn objective(&self) -> String {
        self.subroutine.map_or_else(|| "compositional".into(), |sr| sr.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorMask {
    pub param: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub bits: Vec<bool>,
}

impl TensorMask {
    pub fn active(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn total(&self) -> usize {
        self.bits.len()
    }
}

/// Binary masks over the masked weights of a base model.
#[derive(Clone, Debug, PartialEq)]
pub struct Subnetwork {
    pub provenance: Provenance,
    pub start_layer: usize,
    pub masks: Vec<TensorMask>,
}

impl Subnetwork {
    pub fn active(&self) -> usize {
        self.masks.iter().map(TensorMask::active).sum()
    }

    pub fn total(&self) -> usize {
        self.masks.iter().map(TensorMask::total).sum()
    }

    /// A subnetwork keeping (`keep = true`) or dropping every masked weight.
    pub fn uniform(model: &Model, start_layer: usize, keep: bool, provenance: Provenance) -> Result<Self> {
        let masks = model
            .masked_params(start_layer)?
            .into_iter()
            .map(|i| {
                let p = &model.params[i];
                TensorMask {
                    param: i,
                    name: p.name.clone(),
                    shape: p.tensor.shape().to_vec(),
                    bits: vec![keep; p.tensor.numel()],
                }
            })
            .collect();
        Ok(Self {
            provenance,
            start_layer,
            masks,
        })
    }

    fn check(&self, model: &Model) -> Result<()> {
        for m in &self.masks {
            let p = model
                .params
                .get(m.param)
                .ok_or_else(|| Error::shape("subnetwork", format!("no parameter {}", m.param)))?;
            if p.tensor.shape() != m.shape.as_slice() || !p.maskable || m.bits.len() != p.tensor.numel() {
                return Err(Error::shape(
                    "subnetwork",
                    format!("mask {} {:?} does not fit {} {:?}", m.name, m.shape, p.name, p.tensor.shape()),
                ));
            }
        }
        Ok(())
    }

    fn masked_copy(&self, model: &Model, keep_active: bool) -> Result<Model> {
        self.check(model)?;
        let mut out = model.clone();
        for m in &self.masks {
            for (w, &bit) in out.params[m.param].tensor.values_mut().iter_mut().zip(&m.bits) {
                if bit != keep_active {
                    *w = 0.0;
                }
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = SubnetHeader {
            provenance: self.provenance.clone(),
            start_layer: self.start_layer,
            tensors: self
                .masks
                .iter()
                .map(|m| SubnetTensor {
                    param: m.param,
                    name: m.name.clone(),
                    shape: m.shape.clone(),
                    active: m.active(),
                    total: m.total(),
                })
                .collect(),
        };
        let mut payload = Vec::new();
        for m in &self.masks {
            payload.extend(pack_bits(&m.bits));
        }
        write_container(path, SUBNET_MAGIC, &header, &payload)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, payload): (SubnetHeader, _) = read_container(path, SUBNET_MAGIC, "subnetwork")?;
        let mut offset = 0;
        let mut masks = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let bytes = n.div_ceil(8);
            let chunk = payload.get(offset..offset + bytes).ok_or_else(|| Error::Format {
                what: "subnetwork",
                detail: format!("payload too short for {}", t.name),
            })?;
            offset += bytes;
            let bits = unpack_bits(chunk, n);
            if bits.iter().filter(|&&b| b).count() != t.active || n != t.total {
                return Err(Error::Format {
                    what: "subnetwork",
                    detail: format!("header counts disagree with bitset for {}", t.name),
                });
            }
            masks.push(TensorMask {
                param: t.param,
                name: t.name,
                shape: t.shape,
                bits,
            });
        }
        if offset != payload.len() {
            return Err(Error::Format {
                what: "subnetwork",
                detail: "trailing bytes after last bitset".into(),
            });
        }
        Ok(Self {
            provenance: header.provenance,
            start_layer: header.start_layer,
            masks,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct SubnetHeader {
    provenance: Provenance,
    start_layer: usize,
    tensors: Vec<SubnetTensor>,
}

#[derive(Serialize, Deserialize)]
struct SubnetTensor {
    param: usize,
    name: String,
    shape: Vec<usize>,
    active: usize,
    total: usize,
}

/// Bits packed least-significant first, padded to whole bytes.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// `m = H(s)` for every masked tensor.
pub fn binarize(state: &MaskState, model: &Model, provenance: Provenance) -> Result<Subnetwork> {
    state.check_shapes(model)?;
    let masks = state
        .params
        .iter()
        .zip(&state.logits)
        .map(|(&i, s)| TensorMask {
            param: i,
            name: model.params[i].name.clone(),
            shape: s.shape().to_vec(),
            bits: s.values().iter().map(|&v| heaviside(v)).collect(),
        })
        .collect();
    Ok(Subnetwork {
        provenance,
        start_layer: state.start_layer,
        masks,
    })
}

/// The base model restricted to the subnetwork: `w * m` on masked tensors.
pub fn apply_subnetwork(model: &Model, subnet: &Subnetwork) -> Result<Model> {
    subnet.masked_copy(model, true)
}

/// The base model with the subnetwork removed: `w * (1 - m)` on masked tensors.
pub fn ablate(model: &Model, subnet: &Subnetwork) -> Result<Model> {
    subnet.masked_copy(model, false)
}
