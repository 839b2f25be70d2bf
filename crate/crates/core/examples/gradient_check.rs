//! Checks reverse-mode gradients of a two-layer MLP against central finite
//! differences.
//!
//! ```text
//! cargo run --release --example gradient_check
//! ```

use compostruct::autodiff::check::{finite_difference_gradient, max_relative_error};
use compostruct::autodiff::{Tape, Tensor};
use rand::Rng as _;

fn loss(tape: &mut Tape, w1: Tensor, w2: Tensor, x: &Tensor, targets: &[usize], train: bool) -> compostruct::Result<(f64, Vec<Vec<f64>>)> {
    let w1 = tape.leaf(w1, train)?;
    let w2 = tape.leaf(w2, train)?;
    let x = tape.constant(x.clone())?;
    let h = tape.matmul(x, w1)?;
    let h = tape.relu(h)?;
    let logits = tape.matmul(h, w2)?;
    let l = tape.softmax_cross_entropy(logits, targets)?;
    let value = tape.value(l).values()[0];
    if !train {
        return Ok((value, Vec::new()));
    }
    tape.backward(l)?;
    Ok((value, vec![tape.grad(w1).unwrap().to_vec(), tape.grad(w2).unwrap().to_vec()]))
}

fn main() -> compostruct::Result<()> {
    let mut rng = compostruct::rng::stream(0, "example/gradient-check");
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let (w1, w2, x) = (random(&[5, 7])?, random(&[7, 4])?, random(&[6, 5])?);
    let targets = [0, 3, 1, 2, 2, 0];

    let (value, grads) = loss(&mut Tape::new(), w1.clone(), w2.clone(), &x, &targets, true)?;
    println!("loss {value:.6}");

    let n1 = w1.numel();
    let mut flat = w1.values().to_vec();
    flat.extend_from_slice(w2.values());
    let numeric = finite_difference_gradient(
        |p| {
            let a = Tensor::new(w1.shape().to_vec(), p[..n1].to_vec()).unwrap();
            let b = Tensor::new(w2.shape().to_vec(), p[n1..].to_vec()).unwrap();
            loss(&mut Tape::new(), a, b, &x, &targets, false).unwrap().0
        },
        &flat,
        1e-5,
    );
    let analytic: Vec<f64> = grads.concat();
    let err = max_relative_error(&analytic, &numeric, 1e-6);
    println!("{} parameters, max relative error {err:.2e}", analytic.len());
    assert!(err < 1e-4);
    Ok(())
}
