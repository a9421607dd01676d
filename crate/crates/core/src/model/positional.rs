use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const TEMPERATURE: f64 = 10000.0;

/// Fixed 2-D sinusoidal encoding of an `h × w` grid, flattened row-major to
/// `[h·w × dim]`.
///
/// The first half of the channels encodes the row, the second half the
/// column. Each half interleaves `sin`/`cos` pairs over geometric
/// frequencies; positions are normalized to `(0, 2π]`.
pub fn sine_encoding<S: Scalar>(h: usize, w: usize, dim: usize) -> Result<Tensor<S>> {
    if dim == 0 || !dim.is_multiple_of(4) {
        return Err(Error::Config(format!(
            "positional encoding needs dim divisible by 4, got {dim}"
        )));
    }
    let half = dim / 2;
    let two_pi = 2.0 * std::f64::consts::PI;
    let freq: Vec<f64> = (0..half)
        .map(|i| TEMPERATURE.powf((2 * (i / 2)) as f64 / half as f64))
        .collect();
    let mut data = Vec::with_capacity(h * w * dim);
    for r in 0..h {
        let y = (r + 1) as f64 / h as f64 * two_pi;
        for c in 0..w {
            let x = (c + 1) as f64 / w as f64 * two_pi;
            for coord in [y, x] {
                for (i, f) in freq.iter().enumerate() {
                    let v = coord / f;
                    data.push(S::lit(if i % 2 == 0 { v.sin() } else { v.cos() }));
                }
            }
        }
    }
    Tensor::new(vec![h * w, dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encoding_shape_and_distinct_rows() {
        let p = sine_encoding::<f64>(3, 4, 8).unwrap();
        assert_eq!(p.shape(), &[12, 8]);
        for i in 0..12 {
            for j in i + 1..12 {
                assert_ne!(p.row(i), p.row(j));
            }
        }
        assert!(p.data().iter().all(|v| v.abs() <= 1.0));
        assert!(sine_encoding::<f64>(2, 2, 6).is_err());
    }
}
