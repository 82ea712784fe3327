//! Index helpers for the window `B_N = {j : |j|_inf <= N/2}`.

use crate::quadrature::advance;

/// Half-width `floor(N/2)` of `B_N`.
pub fn half_width(n: usize) -> usize {
    n / 2
}

/// Sites per axis of `B_N`: `2 floor(N/2) + 1`.
pub fn side(n: usize) -> usize {
    2 * half_width(n) + 1
}

/// `|B_N| = (2 floor(N/2) + 1)^d`.
pub fn window_len(d: usize, n: usize) -> usize {
    side(n).pow(d as u32)
}

/// All sites of `B_N` in row-major order, as signed coordinates.
pub fn window_sites(d: usize, n: usize) -> Vec<Vec<i64>> {
    let h = half_width(n) as i64;
    let s = side(n);
    let mut idx = vec![0usize; d];
    let mut out = Vec::with_capacity(window_len(d, n));
    loop {
        out.push(idx.iter().map(|&i| i as i64 - h).collect());
        if !advance(&mut idx, s) {
            break;
        }
    }
    out
}

/// Scaled positions `j / N` for every site of `B_N`.
pub fn window_points(d: usize, n: usize) -> Vec<Vec<f64>> {
    window_sites(d, n)
        .into_iter()
        .map(|j| j.into_iter().map(|c| c as f64 / n as f64).collect())
        .collect()
}
