use crate::autodiff::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Similarity of each item to the other three: `s_i = sum_{j != i} e_i . e_j`.
pub fn similarity_scores(embeddings: &[Vec<f64>; 4]) -> [f64; 4] {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let mut s = [0.0; 4];
    for i in 0..4 {
        for j in 0..4 {
            if i != j {
                s[i] += dot(&embeddings[i], &embeddings[j]);
            }
        }
    }
    s
}

/// Logits are negated similarities: the least similar item scores highest.
pub fn odd_one_out_logits(embeddings: &[Vec<f64>; 4]) -> [f64; 4] {
    similarity_scores(embeddings).map(|s| -s)
}

/// Argmax with the lowest index winning ties.
pub fn predict(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Softmax cross-entropy of one logit row against `target`.
pub fn cross_entropy(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    denom.ln() + max - logits[target]
}

/// Tape version over a batch: `embeddings` is `[4B, d]`, example-major.
/// Returns logits `[B, 4]`.
pub fn batch_logits(tape: &mut Tape, embeddings: Var) -> Result<Var> {
    let shape = tape.value(embeddings).shape().to_vec();
    let [rows, d] = shape[..] else {
        return Err(Error::shape("odd_one_out", format!("embeddings {shape:?}")));
    };
    if rows % 4 != 0 {
        return Err(Error::shape("odd_one_out", format!("{rows} rows is not a multiple of 4")));
    }
    // block-ones matrix sums the four embeddings of each example
    let mut block = vec![0.0; rows * rows];
    for r in 0..rows {
        let start = r / 4 * 4;
        block[r * rows + start..r * rows + start + 4].fill(1.0);
    }
    let block = tape.constant(Tensor::from_parts(vec![rows, rows], block))?;
    let group_sum = tape.matmul(block, embeddings)?;
    let self_excluded = tape.scale(embeddings, -1.0)?;
    let others = tape.add(group_sum, self_excluded)?;
    let products = tape.mul(embeddings, others)?;
    let ones = tape.constant(Tensor::filled(&[d, 1], 1.0))?;
    let scores = tape.matmul(products, ones)?;
    let scores = tape.reshape(scores, &[rows / 4, 4])?;
    tape.scale(scores, -1.0)
}
