use super::arch::BatchInput;
use crate::autodiff::Tensor;
use crate::dataset::{Dataset, Stimulus, StimulusInput};
use crate::error::{Error, Result};

fn pack(raster: &[f64]) -> Vec<u64> {
    let mut words = vec![0u64; raster.len().div_ceil(64)];
    for (i, &v) in raster.iter().enumerate() {
        if v != 0.0 {
            words[i / 64] |= 1 << (i % 64);
        }
    }
    words
}

#[derive(Clone, Debug, PartialEq)]
enum Rows {
    /// Binary rasters, one bit per pixel, each row padded to whole words.
    Binary { words: Vec<u64>, width: usize },
    Dense { values: Vec<f64>, width: usize },
    Tokens { ids: Vec<usize>, seq_len: usize },
}

/// Model-ready stimuli and targets, four rows per example in example order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedDataset {
    rows: Rows,
    targets: Vec<usize>,
}

impl EncodedDataset {
    pub fn encode<S: Stimulus>(dataset: &Dataset<S>) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rows: Option<Rows> = None;
        let mut targets = Vec::with_capacity(dataset.len());
        for example in &dataset.examples {
            targets.push(example.odd_index);
            for stimulus in &example.stimuli {
                match (stimulus.model_input(), &mut rows) {
                    (StimulusInput::Raster(r), None) => {
                        rows = Some(Rows::Binary {
                            width: r.len(),
                            words: pack(&r),
                        })
                    }
                    (StimulusInput::Raster(r), Some(Rows::Binary { words, width })) if r.len() == *width => {
                        words.extend(pack(&r));
                    }
                    (StimulusInput::Tokens(t), None) => {
                        rows = Some(Rows::Tokens {
                            seq_len: t.len(),
                            ids: t,
                        })
                    }
                    (StimulusInput::Tokens(t), Some(Rows::Tokens { ids, seq_len })) if t.len() == *seq_len => {
                        ids.extend(t);
                    }
                    _ => {
                        return Err(Error::Format {
                            what: "dataset",
                            detail: "stimuli of mixed kind or size".into(),
                        })
                    }
                }
            }
        }
        Ok(Self {
            rows: rows.expect("nonempty"),
            targets,
        })
    }

    /// Precomputed feature rows (e.g. cached activations), `4 * targets.len()` rows.
    pub fn from_features(values: Vec<f64>, width: usize, targets: Vec<usize>) -> Result<Self> {
        if targets.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if values.len() != targets.len() * 4 * width {
            return Err(Error::shape("features", format!("{} values for {} examples", values.len(), targets.len())));
        }
        Ok(Self {
            rows: Rows::Dense { values, width },
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    /// Inputs for the given examples, `4 * examples.len()` rows.
    pub fn batch(&self, examples: &[usize]) -> BatchInput {
        let rows = examples.iter().flat_map(|&e| 4 * e..4 * e + 4);
        match &self.rows {
            Rows::Binary { words, width } => {
                let stride = width.div_ceil(64);
                let mut values = Vec::with_capacity(examples.len() * 4 * width);
                for r in rows {
                    let row = &words[r * stride..(r + 1) * stride];
                    values.extend((0..*width).map(|i| ((row[i / 64] >> (i % 64)) & 1) as f64));
                }
                BatchInput::Dense(Tensor::from_parts(vec![examples.len() * 4, *width], values))
            }
            Rows::Dense { values, width } => {
                let mut out = Vec::with_capacity(examples.len() * 4 * width);
                for r in rows {
                    out.extend_from_slice(&values[r * width..(r + 1) * width]);
                }
                BatchInput::Dense(Tensor::from_parts(vec![examples.len() * 4, *width], out))
            }
            Rows::Tokens { ids, seq_len } => {
                let mut out = Vec::with_capacity(examples.len() * 4 * seq_len);
                for r in rows {
                    out.extend_from_slice(&ids[r * seq_len..(r + 1) * seq_len]);
                }
                BatchInput::Tokens(out)
            }
        }
    }

    pub fn batch_targets(&self, examples: &[usize]) -> Vec<usize> {
        examples.iter().map(|&e| self.targets[e]).collect()
    }

    /// Example index chunks of at most `size`, in order.
    pub fn chunks(&self, size: usize) -> Vec<Vec<usize>> {
        (0..self.len())
            .collect::<Vec<_>>()
            .chunks(size.max(1))
            .map(<[usize]>::to_vec)
            .collect()
    }
}
