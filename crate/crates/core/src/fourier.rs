//! FFT plumbing shared by the frequency-domain deconvolvers.
//!
//! Planes are extended to twice their size by mirror symmetry before
//! transforming, which makes the periodic extension continuous and keeps
//! wrap-around ringing out of the cropped result.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::anonymize::Psf;

pub(crate) struct Grid {
    pub w: usize,
    pub h: usize,
}

impl Grid {
    /// Grid for a `w × h` plane after symmetric doubling.
    pub fn doubled(w: usize, h: usize) -> Self {
        Self { w: 2 * w, h: 2 * h }
    }

    fn len(&self) -> usize {
        self.w * self.h
    }
}

/// `[p, fliplr p; flipud p, rot180 p]`.
pub(crate) fn symmetric_double(plane: &[f64], w: usize, h: usize) -> Vec<Complex<f64>> {
    let (pw, ph) = (2 * w, 2 * h);
    let mut out = vec![Complex::new(0.0, 0.0); pw * ph];
    for y in 0..ph {
        let sy = if y < h { y } else { 2 * h - 1 - y };
        for x in 0..pw {
            let sx = if x < w { x } else { 2 * w - 1 - x };
            out[y * pw + x] = Complex::new(plane[sy * w + sx], 0.0);
        }
    }
    out
}

pub(crate) fn crop(data: &[Complex<f64>], grid: &Grid, w: usize, h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        out.extend(data[y * grid.w..y * grid.w + w].iter().map(|c| c.re));
    }
    out
}

pub(crate) fn fft2(data: &mut [Complex<f64>], grid: &Grid, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row = if inverse {
        planner.plan_fft_inverse(grid.w)
    } else {
        planner.plan_fft_forward(grid.w)
    };
    let col = if inverse {
        planner.plan_fft_inverse(grid.h)
    } else {
        planner.plan_fft_forward(grid.h)
    };
    row.process(data);
    let mut column = vec![Complex::new(0.0, 0.0); grid.h];
    for x in 0..grid.w {
        for y in 0..grid.h {
            column[y] = data[y * grid.w + x];
        }
        col.process(&mut column);
        for y in 0..grid.h {
            data[y * grid.w + x] = column[y];
        }
    }
    if inverse {
        let scale = 1.0 / grid.len() as f64;
        data.iter_mut().for_each(|c| *c *= scale);
    }
}

/// Transfer function of `psf` on `grid`, PSF centre at the origin. Taps
/// beyond the grid wrap around.
pub(crate) fn transfer(psf: &Psf, grid: &Grid) -> Vec<Complex<f64>> {
    let mut data = vec![Complex::new(0.0, 0.0); grid.len()];
    let r = psf.radius();
    for dy in -r..=r {
        for dx in -r..=r {
            let x = dx.rem_euclid(grid.w as isize) as usize;
            let y = dy.rem_euclid(grid.h as isize) as usize;
            data[y * grid.w + x] += psf.at(dx, dy);
        }
    }
    fft2(&mut data, grid, false);
    data
}

/// Filters one `w × h` plane by the frequency response `response`
/// (defined on the doubled grid).
pub(crate) fn apply(plane: &[f64], w: usize, h: usize, response: &[Complex<f64>]) -> Vec<f64> {
    let grid = Grid::doubled(w, h);
    let mut data = symmetric_double(plane, w, h);
    fft2(&mut data, &grid, false);
    for (d, r) in data.iter_mut().zip(response) {
        *d *= r;
    }
    fft2(&mut data, &grid, true);
    crop(&data, &grid, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_inverse_roundtrip() {
        let grid = Grid { w: 6, h: 4 };
        let orig: Vec<Complex<f64>> = (0..24).map(|i| Complex::new(i as f64 * 0.1, 0.0)).collect();
        let mut d = orig.clone();
        fft2(&mut d, &grid, false);
        fft2(&mut d, &grid, true);
        for (a, b) in d.iter().zip(&orig) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn delta_transfer_is_flat() {
        let grid = Grid::doubled(5, 3);
        for c in transfer(&Psf::delta(), &grid) {
            assert!((c - Complex::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn convolution_matches_direct_sum_on_symmetric_extension() {
        // Brute force: convolve the mirrored plane directly.
        let (w, h) = (5, 4);
        let plane: Vec<f64> = (0..w * h).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
        let psf = Psf::new(3, vec![0.0, 0.1, 0.0, 0.2, 0.4, 0.1, 0.0, 0.2, 0.0]).unwrap();
        let out = apply(&plane, w, h, &transfer(&psf, &Grid::doubled(w, h)));
        let ext = |x: isize, y: isize| {
            let m = |i: isize, n: usize| {
                let p = 2 * n as isize;
                let i = i.rem_euclid(p);
                if i < n as isize {
                    i as usize
                } else {
                    (p - 1 - i) as usize
                }
            };
            plane[m(y, h) * w + m(x, w)]
        };
        for y in 0..h as isize {
            for x in 0..w as isize {
                let mut acc = 0.0;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        acc += psf.at(dx, dy) * ext(x - dx, y - dy);
                    }
                }
                assert!((out[(y as usize) * w + x as usize] - acc).abs() < 1e-12);
            }
        }
    }
}
