//! Multi-dimensional FFT and type-I sine transforms over row-major buffers.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Row-major strides of a shape.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1usize; shape.len()];
    for a in (0..shape.len().saturating_sub(1)).rev() {
        s[a] = s[a + 1] * shape[a + 1];
    }
    s
}

/// Visit the starting offset of every line along `axis`.
fn for_each_line(shape: &[usize], axis: usize, mut visit: impl FnMut(usize)) {
    let st = strides(shape);
    let total: usize = shape.iter().product();
    let lines = total / shape[axis];
    for line in 0..lines {
        // decode `line` over all axes except `axis`
        let mut rem = line;
        let mut offset = 0;
        for a in (0..shape.len()).rev() {
            if a == axis {
                continue;
            }
            offset += (rem % shape[a]) * st[a];
            rem /= shape[a];
        }
        visit(offset);
    }
}

/// Complex FFT over every axis of a row-major array, with cached plans.
pub struct FftNd {
    shape: Vec<usize>,
    plans: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(shape: &[usize], inverse: bool) -> Self {
        let mut planner = FftPlanner::new();
        let plans = shape
            .iter()
            .map(|&n| {
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .collect();
        Self { shape: shape.to_vec(), plans }
    }

    /// Unnormalized transform in place.
    pub fn process(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.shape.iter().product::<usize>());
        let st = strides(&self.shape);
        for (axis, plan) in self.plans.iter().enumerate() {
            let n = self.shape[axis];
            if n == 1 {
                continue;
            }
            let stride = st[axis];
            let mut line = vec![Complex64::default(); n];
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            for_each_line(&self.shape, axis, |start| {
                for (i, v) in line.iter_mut().enumerate() {
                    *v = data[start + i * stride];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    data[start + i * stride] = *v;
                }
            });
        }
    }
}

/// Unnormalized DST-I along every axis: `y_k = sum_{j=1}^{L} x_j sin(pi j k / (L+1))`,
/// with `k, j` in `1..=L` stored at offsets `0..L`.
pub struct SineTransform {
    shape: Vec<usize>,
    plans: Vec<Arc<dyn Fft<f64>>>,
}

impl SineTransform {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let plans = shape.iter().map(|&l| planner.plan_fft_forward(2 * (l + 1))).collect();
        Self { shape: shape.to_vec(), plans }
    }

    pub fn process(&self, data: &mut [f64]) {
        assert_eq!(data.len(), self.shape.iter().product::<usize>());
        let st = strides(&self.shape);
        for (axis, plan) in self.plans.iter().enumerate() {
            let l = self.shape[axis];
            let stride = st[axis];
            let len = 2 * (l + 1);
            let mut buf = vec![Complex64::default(); len];
            let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
            for_each_line(&self.shape, axis, |start| {
                // odd extension: [0, x_1..x_L, 0, -x_L..-x_1]
                buf[0] = Complex64::default();
                buf[l + 1] = Complex64::default();
                for j in 0..l {
                    let x = data[start + j * stride];
                    buf[j + 1] = Complex64::new(x, 0.0);
                    buf[len - 1 - j] = Complex64::new(-x, 0.0);
                }
                plan.process_with_scratch(&mut buf, &mut scratch);
                for k in 0..l {
                    data[start + k * stride] = -0.5 * buf[k + 1].im;
                }
            });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn dst_matches_direct_sum() {
        let shape = [5usize, 3];
        let x: Vec<f64> = (0..15).map(|i| ((i * 7 % 11) as f64) - 4.5).collect();
        let mut y = x.clone();
        SineTransform::new(&shape).process(&mut y);
        for k0 in 0..5 {
            for k1 in 0..3 {
                let mut s = 0.0;
                for j0 in 0..5 {
                    for j1 in 0..3 {
                        s += x[j0 * 3 + j1]
                            * (PI * ((j0 + 1) * (k0 + 1)) as f64 / 6.0).sin()
                            * (PI * ((j1 + 1) * (k1 + 1)) as f64 / 4.0).sin();
                    }
                }
                assert!((s - y[k0 * 3 + k1]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fft_roundtrip() {
        let shape = [4usize, 6, 2];
        let x: Vec<Complex64> = (0..48).map(|i| Complex64::new(i as f64, -(i as f64) / 3.0)).collect();
        let mut y = x.clone();
        FftNd::new(&shape, false).process(&mut y);
        FftNd::new(&shape, true).process(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b / 48.0).norm() < 1e-11);
        }
    }
}
