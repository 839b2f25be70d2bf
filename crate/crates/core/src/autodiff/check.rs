//! Central finite-difference gradients. Only the forward evaluation is used,
//! so these serve as an oracle for [`Tape::backward`](super::Tape::backward).

/// Gradient of `f` at `x` by central differences with step `h`.
pub fn finite_difference_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = point[i];
            point[i] = orig + h;
            let up = f(&point);
            point[i] = orig - h;
            let down = f(&point);
            point[i] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Largest relative error `|a - n| / max(|a|, |n|, floor)` over the entries.
///
/// The floor keeps entries whose true gradient is (numerically) zero from
/// dominating through cancellation noise.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
