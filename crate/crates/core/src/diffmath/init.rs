use rand::Rng;
use rand_distr::StandardNormal;

use super::{Real, Tensor};

/// Orthogonal `[rows, cols]` matrix scaled by `gain`.
///
/// When `rows >= cols` the columns are orthonormal (`WᵀW = gain²·I`); otherwise
/// the rows are. Built by Gram-Schmidt on a Gaussian draw in `f64`, with the
/// sign convention of a QR factorization with positive diagonal.
pub fn orthogonal_init<T: Real, R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    gain: f64,
    rng: &mut R,
) -> Tensor<T> {
    let (long, short) = if rows >= cols { (rows, cols) } else { (cols, rows) };
    // `short` vectors of length `long`, orthonormalized.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(short);
    while basis.len() < short {
        let mut v: Vec<f64> = (0..long).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let raw_norm = norm(&v);
        for _ in 0..2 {
            for b in &basis {
                let d: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
        }
        let n = norm(&v);
        if n < 1e-6 * raw_norm.max(1e-12) {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    let mut data = vec![T::zero(); rows * cols];
    for (j, b) in basis.iter().enumerate() {
        for (i, &x) in b.iter().enumerate() {
            let (r, c) = if rows >= cols { (i, j) } else { (j, i) };
            data[r * cols + c] = T::from_f64(gain * x);
        }
    }
    Tensor::from_parts(vec![rows, cols], data)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
