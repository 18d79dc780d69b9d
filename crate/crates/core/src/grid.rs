//! Dense p×p real grids and the 2D discrete Fourier transforms used to
//! diagonalize block circulant operators.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// A p×p grid of reals, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    p: usize,
    data: Vec<f64>,
}

impl Grid {
    pub fn zeros(p: usize) -> Self {
        Self {
            p,
            data: vec![0.0; p * p],
        }
    }

    pub fn from_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                data.push(f(i, j));
            }
        }
        Self { p, data }
    }

    pub fn from_vec(p: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), p * p, "grid data length must be p^2");
        Self { p, data }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.p + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.p + j] = v;
    }

    /// Access with signed indices, wrapped mod p.
    pub fn get_wrapped(&self, i: i64, j: i64) -> f64 {
        let p = self.p as i64;
        self.get(i.rem_euclid(p) as usize, j.rem_euclid(p) as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        let p = self.p;
        self.data
            .iter()
            .enumerate()
            .map(move |(k, &v)| ((k / p, k % p), v))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            p: self.p,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(p: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|pl| {
        let mut pl = pl.borrow_mut();
        if inverse {
            pl.plan_fft_inverse(p)
        } else {
            pl.plan_fft_forward(p)
        }
    })
}

fn transpose(p: usize, data: &mut [Complex64]) {
    for i in 0..p {
        for j in (i + 1)..p {
            data.swap(i * p + j, j * p + i);
        }
    }
}

fn dft2(p: usize, data: &mut [Complex64], inverse: bool) {
    debug_assert_eq!(data.len(), p * p);
    let fft = plan(p, inverse);
    fft.process(data);
    transpose(p, data);
    fft.process(data);
    transpose(p, data);
}

/// Unnormalized forward transform: out[k] = Σ_x data[x]·exp(−2πi k·x / p).
pub fn dft2_forward(p: usize, data: &mut [Complex64]) {
    dft2(p, data, false);
}

/// Unnormalized inverse transform: out[x] = Σ_k data[k]·exp(+2πi k·x / p).
pub fn dft2_inverse(p: usize, data: &mut [Complex64]) {
    dft2(p, data, true);
}

/// Forward transform of a real grid; returns (real parts, max |imag|).
pub fn dft2_forward_real(grid: &Grid) -> (Grid, f64) {
    let p = grid.p();
    let mut buf: Vec<Complex64> = grid
        .data()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    dft2_forward(p, &mut buf);
    let max_imag = buf.iter().map(|c| c.im.abs()).fold(0.0, f64::max);
    let out = Grid::from_vec(p, buf.iter().map(|c| c.re).collect());
    (out, max_imag)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Oracle: O(p^4) direct transform.
    fn naive_dft2(p: usize, data: &[Complex64], sign: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); p * p];
        for ki in 0..p {
            for kj in 0..p {
                let mut acc = Complex64::new(0.0, 0.0);
                for xi in 0..p {
                    for xj in 0..p {
                        let phase = sign
                            * 2.0
                            * std::f64::consts::PI
                            * ((ki * xi + kj * xj) as f64)
                            / p as f64;
                        acc += data[xi * p + xj] * Complex64::new(phase.cos(), phase.sin());
                    }
                }
                out[ki * p + kj] = acc;
            }
        }
        out
    }

    #[test]
    fn fft_matches_naive_dft() {
        let p = 6;
        let mut state = 1u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let data: Vec<Complex64> = (0..p * p).map(|_| Complex64::new(next(), next())).collect();

        let mut fwd = data.clone();
        dft2_forward(p, &mut fwd);
        let naive = naive_dft2(p, &data, -1.0);
        for (a, b) in fwd.iter().zip(naive.iter()) {
            assert!((a - b).norm() < 1e-10);
        }

        let mut inv = data.clone();
        dft2_inverse(p, &mut inv);
        let naive_inv = naive_dft2(p, &data, 1.0);
        for (a, b) in inv.iter().zip(naive_inv.iter()) {
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn roundtrip_scales_by_p_squared() {
        let p = 5;
        let grid = Grid::from_fn(p, |i, j| (i * p + j) as f64 * 0.37 - 1.0);
        let mut buf: Vec<Complex64> = grid
            .data()
            .iter()
            .map(|&v| Complex64::new(v, 0.0))
            .collect();
        dft2_forward(p, &mut buf);
        dft2_inverse(p, &mut buf);
        for (k, c) in buf.iter().enumerate() {
            assert!((c.re / (p * p) as f64 - grid.data()[k]).abs() < 1e-12);
            assert!(c.im.abs() < 1e-12);
        }
    }
}
