//! Radon transform of Cartesian radar images.
//!
//! Projection angles are `θ_j = π j / n_theta` on `[0, π)`. Offsets `l` are
//! sampled every pixel over the full image diagonal, centered on the sensor
//! pixel. Each pixel's intensity is projected onto `u = x cos θ + y sin θ`
//! and split linearly between the two neighbouring offset samples, so every
//! column carries exactly the image's total mass.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::warp::CartesianImage;

pub const DEFAULT_N_THETA: usize = 180;

/// Sinogram `S(θ, l)` stored column by column: column `j` is the projection
/// vector for `θ_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    n_theta: usize,
    n_l: usize,
    /// Averaging factor applied along `l` (1 for a full-resolution sinogram).
    l_factor: usize,
    values: Vec<f64>,
}

/// Offset sample count for a square image of `side` pixels: the diagonal
/// rounded up plus one, bumped to odd so `l = 0` falls on a sample.
pub fn offset_count(side: usize) -> usize {
    let diag = (side as f64 * std::f64::consts::SQRT_2).ceil() as usize;
    let n = diag + 1;
    if n % 2 == 0 {
        n + 1
    } else {
        n
    }
}

impl Sinogram {
    pub fn zeros(n_theta: usize, n_l: usize) -> Self {
        Self {
            n_theta,
            n_l,
            l_factor: 1,
            values: vec![0.0; n_theta * n_l],
        }
    }

    /// Builds a sinogram from column-major values (`n_l` entries per angle).
    pub fn from_columns(n_theta: usize, n_l: usize, values: Vec<f64>) -> Result<Self> {
        if n_theta == 0 || n_l == 0 {
            return Err(Error::Dimension("sinogram must be non-empty".into()));
        }
        if values.len() != n_theta * n_l {
            return Err(Error::Dimension(format!(
                "{n_l}x{n_theta} sinogram needs {} values, got {}",
                n_theta * n_l,
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Parameter("sinogram values must be finite and non-negative".into()));
        }
        Ok(Self {
            n_theta,
            n_l,
            l_factor: 1,
            values,
        })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_l(&self) -> usize {
        self.n_l
    }

    pub fn l_factor(&self) -> usize {
        self.l_factor
    }

    pub(crate) fn with_l_factor(mut self, factor: usize) -> Self {
        self.l_factor = factor;
        self
    }

    pub fn theta(&self, j: usize) -> f64 {
        PI * j as f64 / self.n_theta as f64
    }

    /// Index of the `l = 0` sample.
    pub fn center_offset(&self) -> usize {
        (self.n_l - 1) / 2
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.values[j * self.n_l..(j + 1) * self.n_l]
    }

    pub fn columns(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.n_l)
    }

    pub fn get(&self, l: usize, j: usize) -> f64 {
        self.values[j * self.n_l + l]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Circularly shifts every column by `shift` samples along `l`.
    pub fn shift_l(&self, shift: isize) -> Sinogram {
        let n = self.n_l as isize;
        let mut values = Vec::with_capacity(self.values.len());
        for col in self.columns() {
            values.extend((0..n).map(|l| col[(l - shift).rem_euclid(n) as usize]));
        }
        Sinogram {
            values,
            ..self.clone()
        }
    }
}

/// Computes the sinogram of `img` over `n_theta` projection angles.
pub fn radon_transform(img: &CartesianImage, n_theta: usize) -> Result<Sinogram> {
    if n_theta < 2 {
        return Err(Error::Parameter(format!("n_theta must be at least 2, got {n_theta}")));
    }
    let side = img.side();
    let n_l = offset_count(side);
    let lc = ((n_l - 1) / 2) as f64;
    let c = img.center();

    // only non-zero pixels contribute
    let mut support = Vec::new();
    for (i, &v) in img.pixels().iter().enumerate() {
        if v != 0.0 {
            let (row, col) = (i / side, i % side);
            support.push((col as f64 - c, c - row as f64, v));
        }
    }

    let mut values = vec![0.0; n_theta * n_l];
    values.par_chunks_mut(n_l).enumerate().for_each(|(j, column)| {
        let (s, co) = (PI * j as f64 / n_theta as f64).sin_cos();
        for &(x, y, v) in &support {
            let u = x * co + y * s + lc;
            let i0 = u.floor();
            let w = u - i0;
            let i0 = i0 as usize;
            column[i0] += v * (1.0 - w);
            column[i0 + 1] += v * w;
        }
    });

    Ok(Sinogram {
        n_theta,
        n_l,
        l_factor: 1,
        values,
    })
}

/// Total mass of projection column `j`.
pub fn projection_mass(sino: &Sinogram, j: usize) -> Result<f64> {
    if j >= sino.n_theta {
        return Err(Error::Index {
            index: j,
            len: sino.n_theta,
        });
    }
    Ok(sino.column(j).iter().sum())
}
