//! Polar to Cartesian conversion.
//!
//! The output grid is square with the sensor on the center pixel. Image
//! coordinates put `x` to the right and `y` up; the sensor's forward axis is
//! `+y`, so a bearing `φ` (counter-clockwise from forward) lands at
//! `(x, y) = (-r sin φ, r cos φ)`.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::PolarScan;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side_pixels: usize,
    pub meters_per_pixel: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            side_pixels: 401,
            meters_per_pixel: 1.0,
        }
    }
}

impl GridSpec {
    pub fn new(side_pixels: usize, meters_per_pixel: f64) -> Result<Self> {
        let g = Self {
            side_pixels,
            meters_per_pixel,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.side_pixels == 0 || self.side_pixels % 2 == 0 {
            return Err(Error::Parameter(format!(
                "grid side must be a positive odd pixel count, got {}",
                self.side_pixels
            )));
        }
        if !(self.meters_per_pixel.is_finite() && self.meters_per_pixel > 0.0) {
            return Err(Error::Parameter(format!(
                "meters per pixel must be positive, got {}",
                self.meters_per_pixel
            )));
        }
        Ok(())
    }

    pub fn center(&self) -> f64 {
        (self.side_pixels - 1) as f64 / 2.0
    }
}

/// Square intensity grid `f(x, y)` with the sensor at the center pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianImage {
    side: usize,
    meters_per_pixel: f64,
    pixels: Vec<f64>,
}

impl CartesianImage {
    pub fn zeros(side: usize, meters_per_pixel: f64) -> Self {
        Self {
            side,
            meters_per_pixel,
            pixels: vec![0.0; side * side],
        }
    }

    pub fn from_pixels(side: usize, meters_per_pixel: f64, pixels: Vec<f64>) -> Result<Self> {
        if side == 0 || side % 2 == 0 {
            return Err(Error::Parameter(format!("image side must be odd, got {side}")));
        }
        if pixels.len() != side * side {
            return Err(Error::Dimension(format!(
                "{side}x{side} image needs {} pixels, got {}",
                side * side,
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("image pixels must be finite and non-negative".into()));
        }
        Ok(Self {
            side,
            meters_per_pixel,
            pixels,
        })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn meters_per_pixel(&self) -> f64 {
        self.meters_per_pixel
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f64] {
        &mut self.pixels
    }

    pub fn center(&self) -> f64 {
        (self.side - 1) as f64 / 2.0
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.pixels[row * self.side + col] = v;
    }

    pub fn total(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Bilinear sample at fractional `(row, col)`; zero outside the grid.
    pub fn sample(&self, row: f64, col: f64) -> f64 {
        let r0 = row.floor();
        let c0 = col.floor();
        let fr = row - r0;
        let fc = col - c0;
        let (r0, c0) = (r0 as isize, c0 as isize);
        let n = self.side as isize;
        let at = |r: isize, c: isize| {
            if r < 0 || c < 0 || r >= n || c >= n {
                0.0
            } else {
                self.pixels[(r * n + c) as usize]
            }
        };
        at(r0, c0) * (1.0 - fr) * (1.0 - fc)
            + at(r0, c0 + 1) * (1.0 - fr) * fc
            + at(r0 + 1, c0) * fr * (1.0 - fc)
            + at(r0 + 1, c0 + 1) * fr * fc
    }

    /// Rotates the content counter-clockwise by `angle` radians about the
    /// center pixel, resampling bilinearly. Uncovered pixels become 0.
    pub fn rotated(&self, angle: f64) -> CartesianImage {
        if angle == 0.0 {
            return self.clone();
        }
        let c = self.center();
        let (s, co) = angle.sin_cos();
        let mut out = CartesianImage::zeros(self.side, self.meters_per_pixel);
        out.pixels
            .par_chunks_mut(self.side)
            .enumerate()
            .for_each(|(row, line)| {
                let y = c - row as f64;
                for (col, px) in line.iter_mut().enumerate() {
                    let x = col as f64 - c;
                    // inverse rotation
                    let sx = co * x + s * y;
                    let sy = -s * x + co * y;
                    *px = self.sample(c - sy, sx + c);
                }
            });
        out
    }

    /// Extracts a `side`-pixel square whose center sits `(dx, dy)` pixels
    /// from this image's center (`x` right, `y` up). Out-of-grid pixels are 0.
    pub fn crop(&self, side: usize, dx: isize, dy: isize) -> Result<CartesianImage> {
        if side == 0 || side % 2 == 0 {
            return Err(Error::Parameter(format!("crop side must be odd, got {side}")));
        }
        let half_src = (self.side / 2) as isize;
        let half = (side / 2) as isize;
        let n = self.side as isize;
        let mut out = CartesianImage::zeros(side, self.meters_per_pixel);
        for row in 0..side as isize {
            let src_row = half_src - dy + (row - half);
            if src_row < 0 || src_row >= n {
                continue;
            }
            for col in 0..side as isize {
                let src_col = half_src + dx + (col - half);
                if src_col < 0 || src_col >= n {
                    continue;
                }
                out.pixels[(row * side as isize + col) as usize] =
                    self.pixels[(src_row * n + src_col) as usize];
            }
        }
        Ok(out)
    }
}

fn check_scan_grid(grid: &GridSpec) -> Result<()> {
    grid.validate()
}

/// Backward warp: every output pixel inside the max-range disc samples the
/// polar sweep bilinearly (wrapping in azimuth, clamping in range).
pub fn backward_warp(scan: &PolarScan, grid: &GridSpec) -> Result<CartesianImage> {
    check_scan_grid(grid)?;
    let mut out = CartesianImage::zeros(grid.side_pixels, grid.meters_per_pixel);
    warp_into(scan, grid, &mut out.pixels);
    Ok(out)
}

fn warp_into(scan: &PolarScan, grid: &GridSpec, pixels: &mut [f64]) {
    let side = grid.side_pixels;
    let c = grid.center();
    let mpp = grid.meters_per_pixel;
    let max_range = scan.max_range();
    let az = scan.azimuths();
    let bins = scan.range_bins();
    let res = scan.range_resolution();
    let last_bin = (bins - 1) as f64;
    let az_scale = az as f64 / TAU;
    let data = scan.intensities();

    pixels.par_chunks_mut(side).enumerate().for_each(|(row, line)| {
        let fwd = (c - row as f64) * mpp;
        for (col, px) in line.iter_mut().enumerate() {
            let left = (c - col as f64) * mpp;
            let r = fwd.hypot(left);
            if r > max_range {
                *px = 0.0;
                continue;
            }
            let ai = left.atan2(fwd).rem_euclid(TAU) * az_scale;
            let a_floor = ai.floor();
            let fa = ai - a_floor;
            let a0 = (a_floor as usize) % az;
            let a1 = (a0 + 1) % az;
            let ri = (r / res).min(last_bin);
            let r_floor = ri.floor();
            let fr = ri - r_floor;
            let r0 = r_floor as usize;
            let r1 = (r0 + 1).min(bins - 1);
            let v00 = data[a0 * bins + r0] as f64;
            let v01 = data[a0 * bins + r1] as f64;
            let v10 = data[a1 * bins + r0] as f64;
            let v11 = data[a1 * bins + r1] as f64;
            *px = (1.0 - fa) * ((1.0 - fr) * v00 + fr * v01) + fa * ((1.0 - fr) * v10 + fr * v11);
        }
    });
}

/// Forward scatter of every polar sample to its nearest pixel, keeping the
/// maximum on collisions. Leaves holes; kept for comparison only.
pub fn forward_warp_reference(scan: &PolarScan, grid: &GridSpec) -> Result<CartesianImage> {
    check_scan_grid(grid)?;
    let side = grid.side_pixels as isize;
    let c = grid.center();
    let mut out = CartesianImage::zeros(grid.side_pixels, grid.meters_per_pixel);
    let az = scan.azimuths();
    for k in 0..az {
        let phi = TAU * k as f64 / az as f64;
        let (s, co) = phi.sin_cos();
        for (j, &v) in scan.row(k).iter().enumerate() {
            let r = j as f64 * scan.range_resolution() / grid.meters_per_pixel;
            let x = -r * s;
            let y = r * co;
            let col = (c + x).round() as isize;
            let row = (c - y).round() as isize;
            if row < 0 || col < 0 || row >= side || col >= side {
                continue;
            }
            let px = &mut out.pixels[(row * side + col) as usize];
            *px = px.max(v as f64);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan_from(az: usize, bins: usize, res: f64, f: impl Fn(usize, usize) -> f32) -> PolarScan {
        let data = (0..az * bins).map(|i| f(i / bins, i % bins)).collect();
        PolarScan::new(az, bins, res, 0, data).unwrap()
    }

    fn in_disc(grid: &GridSpec, max_range: f64) -> impl Fn(usize, usize) -> bool + '_ {
        let c = grid.center();
        move |row, col| {
            let r = (c - row as f64).hypot(c - col as f64) * grid.meters_per_pixel;
            r <= max_range
        }
    }

    #[test]
    fn zero_scan_zero_image() {
        let scan = PolarScan::zeros(64, 50, 1.0).unwrap();
        let grid = GridSpec::new(101, 1.0).unwrap();
        assert!(backward_warp(&scan, &grid).unwrap().pixels().iter().all(|&v| v == 0.0));
        assert!(forward_warp_reference(&scan, &grid).unwrap().pixels().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_scan_fills_disc() {
        let v = 0.625f32;
        let scan = scan_from(90, 40, 1.0, |_, _| v);
        let grid = GridSpec::new(101, 1.0).unwrap();
        let img = backward_warp(&scan, &grid).unwrap();
        let inside = in_disc(&grid, scan.max_range());
        for row in 0..101 {
            for col in 0..101 {
                let want = if inside(row, col) { v as f64 } else { 0.0 };
                assert!((img.get(row, col) - want).abs() <= 1e-6);
            }
        }
    }

    #[test]
    fn bright_beam_matches_direct_polar_lookup() {
        let scan = scan_from(32, 30, 1.5, |k, _| if k == 0 { 1.0 } else { 0.0 });
        let grid = GridSpec::new(61, 1.0).unwrap();
        let img = backward_warp(&scan, &grid).unwrap();
        let c = 30.0;
        let mut max_err: f64 = 0.0;
        for row in 0..61 {
            for col in 0..61 {
                // polar coordinates of the pixel center, straight from the definitions
                let px = col as f64 - c;
                let py = c - row as f64;
                let r = (px * px + py * py).sqrt();
                let want = if r > scan.max_range() {
                    0.0
                } else {
                    let mut bearing = (-px).atan2(py);
                    if bearing < 0.0 {
                        bearing += TAU;
                    }
                    let a = bearing / TAU * 32.0;
                    // only rows 0 and 32≡0 are lit; weight is the distance to that beam
                    let w0 = if a < 1.0 {
                        1.0 - a
                    } else if a > 31.0 {
                        a - 31.0
                    } else {
                        0.0
                    };
                    w0
                };
                max_err = max_err.max((img.get(row, col) - want).abs());
            }
        }
        assert!(max_err <= 1e-6, "max err {max_err}");
    }

    #[test]
    fn every_disc_pixel_is_assigned() {
        let scan = scan_from(400, 200, 1.0, |k, j| ((k * 7 + j) % 5) as f32 * 0.1);
        let grid = GridSpec::new(401, 1.0).unwrap();
        let mut pixels = vec![f64::NAN; 401 * 401];
        warp_into(&scan, &grid, &mut pixels);
        assert!(pixels.iter().all(|v| !v.is_nan()));
    }

    #[test]
    fn forward_warp_leaves_holes_backward_does_not() {
        let scan = scan_from(400, 1000, 0.2, |_, _| 1.0);
        let grid = GridSpec::new(401, 1.0).unwrap();
        let inside = in_disc(&grid, scan.max_range());
        let count_holes = |img: &CartesianImage| {
            (0..401)
                .flat_map(|r| (0..401).map(move |c| (r, c)))
                .filter(|&(r, c)| inside(r, c) && img.get(r, c) == 0.0)
                .count()
        };
        let bw = count_holes(&backward_warp(&scan, &grid).unwrap());
        let fw = count_holes(&forward_warp_reference(&scan, &grid).unwrap());
        assert_eq!(bw, 0);
        assert!(fw > bw, "forward holes {fw}");
    }

    #[test]
    fn forward_warp_single_sample() {
        let scan = scan_from(4, 4, 1.0, |k, j| if (k, j) == (1, 2) { 0.5 } else { 0.0 });
        let grid = GridSpec::new(11, 1.0).unwrap();
        let img = forward_warp_reference(&scan, &grid).unwrap();
        assert_eq!(img.pixels().iter().filter(|&&v| v != 0.0).count(), 1);
    }

    #[test]
    fn row_shift_is_rotation() {
        // smooth field so bilinear resampling error stays small
        let az = 360;
        let scan = scan_from(az, 60, 1.0, |k, j| {
            let phi = TAU * k as f64 / az as f64;
            (0.5 + 0.4 * (3.0 * phi).sin() * (j as f64 / 9.0).cos()) as f32
        });
        let grid = GridSpec::new(101, 1.0).unwrap();
        let base = backward_warp(&scan, &grid).unwrap();
        let k = 37;
        let shifted = backward_warp(&scan.shift_rows(k), &grid).unwrap();
        let rotated = base.rotated(TAU * k as f64 / az as f64);
        let inside = in_disc(&grid, 48.0);
        let mut err = 0.0;
        let mut n = 0;
        for row in 0..101 {
            for col in 0..101 {
                if inside(row, col) {
                    err += (shifted.get(row, col) - rotated.get(row, col)).abs();
                    n += 1;
                }
            }
        }
        assert!(err / n as f64 <= 2e-2, "mean abs err {}", err / n as f64);
    }

    #[test]
    fn deterministic() {
        let scan = scan_from(100, 80, 1.0, |k, j| ((k * 31 + j * 17) % 13) as f32 / 13.0);
        let grid = GridSpec::new(121, 0.7).unwrap();
        let a = backward_warp(&scan, &grid).unwrap();
        let b = backward_warp(&scan, &grid).unwrap();
        assert!(a.pixels().iter().zip(b.pixels()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn crop_offsets() {
        let mut img = CartesianImage::zeros(11, 1.0);
        // pixel at x=+2, y=+1 from center
        img.set(4, 7, 1.0);
        let crop = img.crop(5, 2, 1).unwrap();
        assert_eq!(crop.get(2, 2), 1.0);
        assert_eq!(crop.total(), 1.0);
    }

    #[test]
    fn rejects_even_grid() {
        assert!(GridSpec::new(400, 1.0).is_err());
        assert!(GridSpec::new(401, 0.0).is_err());
    }
}
