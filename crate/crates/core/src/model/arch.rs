use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    VisionMlp,
    LanguageEmbedMlp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
    /// Layer the parameter belongs to; a weight and its bias share it.
    pub layer_index: usize,
    pub kind: ParamKind,
    pub maskable: bool,
}

/// Shape of a model, independent of its weights.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub architecture: Architecture,
    /// Pixels per stimulus (vision) or vocabulary size (language).
    pub input_size: usize,
    /// Token embedding width (language only).
    #[serde(default)]
    pub token_dim: usize,
    /// Padded sentence length (language only).
    #[serde(default)]
    pub seq_len: usize,
    /// Output widths of the dense layers; the last one is the embedding dimension.
    pub widths: Vec<usize>,
    /// Dense layers belonging to the backbone; the remaining ones form the head.
    pub backbone_dense: usize,
}

impl ModelSpec {
    /// 1024 -> 256 -> 128 backbone, 128 -> 64 -> 32 head.
    pub fn vision(pixels: usize) -> Self {
        Self {
            architecture: Architecture::VisionMlp,
            input_size: pixels,
            token_dim: 0,
            seq_len: 0,
            widths: vec![256, 128, 64, 32],
            backbone_dense: 2,
        }
    }

    /// Token embedding (16) over 12 positions, flattened to 192 -> 128
    /// backbone, 128 -> 64 -> 32 head.
    pub fn language(vocab_size: usize, seq_len: usize) -> Self {
        Self {
            architecture: Architecture::LanguageEmbedMlp,
            input_size: vocab_size,
            token_dim: 16,
            seq_len,
            widths: vec![128, 64, 32],
            backbone_dense: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.widths.contains(&0) || self.input_size == 0 {
            return Err(Error::Config(format!("degenerate model dims {self:?}")));
        }
        if self.backbone_dense == 0 || self.backbone_dense >= self.widths.len() {
            return Err(Error::Config("backbone and head must both be nonempty".into()));
        }
        if self.architecture == Architecture::LanguageEmbedMlp && (self.token_dim == 0 || self.seq_len == 0) {
            return Err(Error::Config("language model needs token_dim and seq_len".into()));
        }
        Ok(())
    }

    pub fn embedding_dim(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    fn has_token_layer(&self) -> bool {
        self.architecture == Architecture::LanguageEmbedMlp
    }

    /// Width of the vector entering the first dense layer.
    fn dense_input(&self) -> usize {
        if self.has_token_layer() {
            self.token_dim * self.seq_len
        } else {
            self.input_size
        }
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() + usize::from(self.has_token_layer())
    }

    /// Index of the first head layer.
    pub fn head_start(&self) -> usize {
        self.backbone_dense + usize::from(self.has_token_layer())
    }

    /// Masking start layers: whole network, final backbone layer, head.
    pub fn start_layer_options(&self) -> [usize; 3] {
        [0, self.head_start() - 1, self.head_start()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layer {
    Embedding { table: usize },
    Dense { weight: usize, bias: usize, relu: bool },
}

/// Model input for a batch of stimuli, one row per stimulus.
#[derive(Clone, Debug, PartialEq)]
pub enum BatchInput {
    Dense(Tensor),
    Tokens(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: Vec<Parameter>,
    layers: Vec<Layer>,
}

impl Model {
    /// He-uniform weights, zero biases, unit-variance token embeddings.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, "model-init");
        let mut params = Vec::new();
        let mut layers = Vec::new();
        let mut layer = 0;
        if spec.has_token_layer() {
            let shape = [spec.input_size, spec.token_dim];
            params.push(Parameter {
                name: "layer0.embedding".into(),
                tensor: uniform(&shape, 3f64.sqrt(), &mut rng),
                layer_index: 0,
                kind: ParamKind::Weight,
                maskable: true,
            });
            layers.push(Layer::Embedding { table: 0 });
            layer = 1;
        }
        let mut fan_in = spec.dense_input();
        for (i, &width) in spec.widths.iter().enumerate() {
            let bound = (6.0 / fan_in as f64).sqrt();
            params.push(Parameter {
                name: format!("layer{layer}.weight"),
                tensor: uniform(&[fan_in, width], bound, &mut rng),
                layer_index: layer,
                kind: ParamKind::Weight,
                maskable: true,
            });
            params.push(Parameter {
                name: format!("layer{layer}.bias"),
                tensor: Tensor::zeros(&[width]),
                layer_index: layer,
                kind: ParamKind::Bias,
                maskable: false,
            });
            layers.push(Layer::Dense {
                weight: params.len() - 2,
                bias: params.len() - 1,
                relu: i + 1 < spec.widths.len(),
            });
            fan_in = width;
            layer += 1;
        }
        Ok(Self { spec, params, layers })
    }

    /// Rebuilds a model from stored parameter values, checking every shape.
    pub fn from_values(spec: ModelSpec, values: Vec<Vec<f64>>) -> Result<Self> {
        let mut model = Self::init(spec, 0)?;
        if values.len() != model.params.len() {
            return Err(Error::Format {
                what: "parameters",
                detail: format!("{} tensors, model has {}", values.len(), model.params.len()),
            });
        }
        for (p, v) in model.params.iter_mut().zip(values) {
            p.tensor = Tensor::new(p.tensor.shape().to_vec(), v)?;
        }
        Ok(model)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn embedding_dim(&self) -> usize {
        self.spec.embedding_dim()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Indices of parameters a mask starting at `start_layer` covers.
    pub fn masked_params(&self, start_layer: usize) -> Result<Vec<usize>> {
        if start_layer >= self.num_layers() {
            return Err(Error::Config(format!(
                "start layer {start_layer} outside model of {} layers",
                self.num_layers()
            )));
        }
        Ok(self
            .params
            .iter()
            .enumerate()
            .filter(|(_, p)| p.maskable && p.layer_index >= start_layer)
            .map(|(i, _)| i)
            .collect())
    }

    /// Records every parameter on `tape`, trainable or not.
    pub fn vars(&self, tape: &mut Tape, trainable: bool) -> Result<Vec<Var>> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), trainable))
            .collect()
    }

    /// Runs `layers` (a contiguous range) on `input`, reading weights from
    /// `weights` (one var per parameter, aligned with `self.params`).
    pub fn forward_range(
        &self,
        tape: &mut Tape,
        weights: &[Var],
        input: &BatchInput,
        layers: std::ops::Range<usize>,
    ) -> Result<Var> {
        if weights.len() != self.params.len() || layers.end > self.layers.len() || layers.is_empty() {
            return Err(Error::shape(
                "forward",
                format!("{} weights, layers {layers:?} of {}", weights.len(), self.layers.len()),
            ));
        }
        let mut x = match (input, self.layers[layers.start]) {
            (BatchInput::Tokens(ids), Layer::Embedding { table }) => tape.embedding(weights[table], ids, self.spec.seq_len)?,
            (BatchInput::Dense(t), Layer::Dense { .. }) => tape.constant(t.clone())?,
            (BatchInput::Tokens(_), _) => return Err(Error::shape("forward", "token ids into a dense layer")),
            (BatchInput::Dense(_), _) => return Err(Error::shape("forward", "dense input into an embedding layer")),
        };
        for layer in &self.layers[layers.clone()] {
            if let Layer::Dense { weight, bias, relu } = *layer {
                x = tape.matmul(x, weights[weight])?;
                x = tape.add(x, weights[bias])?;
                if relu {
                    x = tape.relu(x)?;
                }
            }
        }
        Ok(x)
    }

    /// Embeddings for every stimulus row of `input`.
    pub fn forward(&self, tape: &mut Tape, weights: &[Var], input: &BatchInput) -> Result<Var> {
        self.forward_range(tape, weights, input, 0..self.layers.len())
    }

    /// Embedding of a single stimulus, without a caller-visible tape.
    pub fn embed(&self, input: &BatchInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let weights = self.vars(&mut tape, false)?;
        let out = self.forward(&mut tape, &weights, input)?;
        Ok(tape.value(out).values().to_vec())
    }
}

fn uniform(shape: &[usize], bound: f64, rng: &mut Rng) -> Tensor {
    let n = shape.iter().product();
    let values = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), values)
}
