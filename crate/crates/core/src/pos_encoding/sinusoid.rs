use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

const BASE: f64 = 10000.0;

/// `[n, d]` table with `PE(pos, 2i) = sin(pos / 10000^(2i/d))` and
/// `PE(pos, 2i+1) = cos(pos / 10000^(2i/d))`.
pub fn sinusoidal_pe<T: Float>(n: usize, d: usize) -> Result<Tensor<T>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::config("dim", format!("sinusoidal encoding needs an even width, got {d}")));
    }
    let inv_freq: Vec<f64> = (0..d / 2).map(|i| BASE.powf((2 * i) as f64 / d as f64)).collect();
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for &f in &inv_freq {
            let angle = pos as f64 / f;
            data.push(T::of(angle.sin()));
            data.push(T::of(angle.cos()));
        }
    }
    Tensor::new(vec![n, d], data)
}

/// `[hg·wg, d]` table for a row-major grid: the first `d/2` channels encode
/// the row index and the last `d/2` the column index, each as a
/// `d/2`-wide 1-D sinusoid.
pub fn sincos_2d<T: Float>(hg: usize, wg: usize, d: usize) -> Result<Tensor<T>> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::config("dim", format!("2-D sin-cos encoding needs a width divisible by 4, got {d}")));
    }
    let half = d / 2;
    let rows = sinusoidal_pe::<T>(hg, half)?;
    let cols = sinusoidal_pe::<T>(wg, half)?;
    let mut data = Vec::with_capacity(hg * wg * d);
    for r in 0..hg {
        for c in 0..wg {
            data.extend_from_slice(&rows.data()[r * half..(r + 1) * half]);
            data.extend_from_slice(&cols.data()[c * half..(c + 1) * half]);
        }
    }
    Tensor::new(vec![hg * wg, d], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn position_zero_alternates_zero_one() {
        let pe = sinusoidal_pe::<f64>(3, 8).unwrap();
        for i in 0..8 {
            assert_eq!(pe.data()[i], if i % 2 == 0 { 0.0 } else { 1.0 });
        }
    }

    #[test]
    fn first_entry_of_position_one_is_sin_one() {
        let pe = sinusoidal_pe::<f64>(2, 16).unwrap();
        assert_eq!(pe.at(&[1, 0]), 1f64.sin());
        assert_eq!(pe.at(&[1, 1]), 1f64.cos());
    }

    #[test]
    fn odd_width_is_config_error() {
        assert!(matches!(sinusoidal_pe::<f64>(4, 7), Err(Error::Config { .. })));
        assert!(matches!(sincos_2d::<f64>(2, 2, 6), Err(Error::Config { .. })));
    }

    #[test]
    fn bounded_for_long_sequences() {
        let pe = sinusoidal_pe::<f32>(10_001, 6).unwrap();
        assert!(pe.data().iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn sincos_2d_row_and_column_halves() {
        let (hg, wg, d) = (3, 4, 8);
        let pe = sincos_2d::<f64>(hg, wg, d).unwrap();
        for i in 0..d {
            assert_eq!(pe.at(&[0, i]), if i % 2 == 0 { 0.0 } else { 1.0 });
        }
        for r in 0..hg {
            for c in 1..wg {
                for i in 0..d / 2 {
                    assert_eq!(pe.at(&[r * wg + c, i]), pe.at(&[r * wg, i]));
                }
            }
        }
        for c in 0..wg {
            for r in 1..hg {
                for i in d / 2..d {
                    assert_eq!(pe.at(&[r * wg + c, i]), pe.at(&[c, i]));
                }
            }
        }
    }
}
