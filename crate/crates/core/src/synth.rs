//! Synthetic radar scenes with known ground truth.
//!
//! A scene is a set of Gaussian reflectors in a world frame (`x`, `y` in
//! meters, yaw counter-clockwise from `+x`). Rendering places the sensor at a
//! pose and samples every reflector into the polar grid, then applies ring
//! noise, multiplicative speckle and saturated beams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with
//! 64-bit integers, so fixtures regenerate identically from their seeds.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{build_ground_truth, GroundTruthMode};
use crate::ingest::{write_poses, write_scan, PolarScan, PoseRecord};

/// Nanoseconds between frames of a 4 Hz sweep.
pub const FRAME_PERIOD_NS: i64 = 250_000_000;

/// Blobs are evaluated out to this many radii; beyond it they are below 2e-8.
const BLOB_CUTOFF: f64 = 6.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scatterer {
    pub x: f64,
    pub y: f64,
    pub rcs: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ring {
    pub bin: usize,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    pub speckle_sigma: f64,
    pub rings: Vec<Ring>,
    pub saturation_prob: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self::default()
    }

    /// Rings of one amplitude at evenly spread range bins.
    pub fn with_rings(mut self, bins: impl IntoIterator<Item = usize>, amplitude: f64) -> Self {
        self.rings = bins.into_iter().map(|bin| Ring { bin, amplitude }).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Parameter(format!("noise {what} out of range")));
        if !(self.speckle_sigma >= 0.0 && self.speckle_sigma.is_finite()) {
            return bad("speckle_sigma");
        }
        if !(0.0..=1.0).contains(&self.saturation_prob) {
            return bad("saturation_prob");
        }
        if self.rings.iter().any(|r| !(r.amplitude >= 0.0 && r.amplitude.is_finite())) {
            return bad("ring amplitude");
        }
        Ok(())
    }

    pub fn is_silent(&self) -> bool {
        self.speckle_sigma == 0.0 && self.rings.is_empty() && self.saturation_prob == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Seeds the render-time noise.
    pub seed: u64,
    pub scatterers: Vec<Scatterer>,
    #[serde(default)]
    pub noise: NoiseSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub azimuths: usize,
    pub range_bins: usize,
    pub range_resolution: f64,
}

impl Default for ScanGeometry {
    fn default() -> Self {
        Self {
            azimuths: 400,
            range_bins: 200,
            range_resolution: 1.0,
        }
    }
}

impl ScanGeometry {
    pub fn max_range(&self) -> f64 {
        self.range_bins as f64 * self.range_resolution
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self { x, y, yaw }
    }
}

/// Parameters of the random world generator.
///
/// The world is tiled into square districts; each district draws its own
/// clutter density, so nearby places look alike and distant ones differ.
/// Straight walls of closely spaced reflectors add anisotropic structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    pub district_size: f64,
    /// Clutter reflectors per 10 000 m², drawn per district.
    pub density_min: f64,
    pub density_max: f64,
    pub rcs_min: f64,
    pub rcs_max: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Walls per district.
    pub walls_per_district: f64,
    pub wall_length_min: f64,
    pub wall_length_max: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        Self {
            district_size: 150.0,
            density_min: 100.0,
            density_max: 1100.0,
            rcs_min: 0.2,
            rcs_max: 1.0,
            radius_min: 1.0,
            radius_max: 3.0,
            walls_per_district: 1.0,
            wall_length_min: 10.0,
            wall_length_max: 40.0,
        }
    }
}

impl SceneSpec {
    pub fn empty(seed: u64) -> Self {
        Self {
            seed,
            scatterers: Vec::new(),
            noise: NoiseSpec::none(),
        }
    }

    /// Random world covering `[x0, x1] × [y0, y1]`.
    pub fn random_world(seed: u64, bounds: [f64; 4], params: &WorldParams) -> Result<Self> {
        let [x0, x1, y0, y1] = bounds;
        if !(x1 > x0 && y1 > y0 && params.district_size > 0.0) {
            return Err(Error::Parameter("world bounds must be non-empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut scatterers = Vec::new();
        let size = params.district_size;
        let nx = ((x1 - x0) / size).ceil() as usize;
        let ny = ((y1 - y0) / size).ceil() as usize;
        for iy in 0..ny {
            for ix in 0..nx {
                let cx0 = x0 + ix as f64 * size;
                let cy0 = y0 + iy as f64 * size;
                let density = rng.random_range(params.density_min..=params.density_max);
                let count = (density * size * size / 1e4).round() as usize;
                for _ in 0..count {
                    scatterers.push(Scatterer {
                        x: cx0 + rng.random::<f64>() * size,
                        y: cy0 + rng.random::<f64>() * size,
                        rcs: rng.random_range(params.rcs_min..=params.rcs_max),
                        radius: rng.random_range(params.radius_min..=params.radius_max),
                    });
                }
                let walls = params.walls_per_district.floor() as usize
                    + usize::from(rng.random::<f64>() < params.walls_per_district.fract());
                for _ in 0..walls {
                    let (sx, sy) = (cx0 + rng.random::<f64>() * size, cy0 + rng.random::<f64>() * size);
                    let heading = rng.random::<f64>() * PI;
                    let len = rng.random_range(params.wall_length_min..=params.wall_length_max);
                    let rcs = rng.random_range(params.rcs_min..=params.rcs_max);
                    let step = params.radius_min.max(0.5) * 1.5;
                    let n = (len / step).ceil() as usize;
                    for k in 0..n {
                        let t = k as f64 * step;
                        scatterers.push(Scatterer {
                            x: sx + t * heading.cos(),
                            y: sy + t * heading.sin(),
                            rcs,
                            radius: params.radius_min,
                        });
                    }
                }
            }
        }
        Ok(Self {
            seed,
            scatterers,
            noise: NoiseSpec::none(),
        })
    }

    /// Random place centered on the origin, large enough for one sweep.
    pub fn random_place(seed: u64, half_width: f64, params: &WorldParams) -> Result<Self> {
        Self::random_world(seed, [-half_width, half_width, -half_width, half_width], params)
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for s in &self.scatterers {
            if !(0.0..=1.0).contains(&s.rcs) || !(s.radius > 0.0) || !s.x.is_finite() || !s.y.is_finite() {
                return Err(Error::Parameter(format!("invalid scatterer {s:?}")));
            }
        }
        self.noise.validate()
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn noise_seed(seed: u64, pose: &Pose2) -> u64 {
    [pose.x.to_bits(), pose.y.to_bits(), pose.yaw.to_bits()]
        .iter()
        .fold(splitmix(seed), |h, v| splitmix(h ^ v))
}

/// Renders the sweep seen from `pose`.
pub fn render_polar(scene: &SceneSpec, pose: &Pose2, geometry: &ScanGeometry) -> Result<PolarScan> {
    scene.validate()?;
    let (az, bins, res) = (geometry.azimuths, geometry.range_bins, geometry.range_resolution);
    // validates the geometry
    PolarScan::zeros(az, bins, res)?;
    let max_range = geometry.max_range();
    let dirs: Vec<(f64, f64)> = (0..az)
        .map(|k| {
            let (s, c) = (pose.yaw + TAU * k as f64 / az as f64).sin_cos();
            (c, s)
        })
        .collect();
    let step = TAU / az as f64;
    let mut field = vec![0.0f64; az * bins];

    for sc in &scene.scatterers {
        let (dx, dy) = (sc.x - pose.x, sc.y - pose.y);
        let range = dx.hypot(dy);
        let reach = BLOB_CUTOFF * sc.radius;
        if range - reach > max_range {
            log::debug!("scatterer at ({:.1}, {:.1}) beyond max range, clipped", sc.x, sc.y);
            continue;
        }
        let j_lo = ((range - reach) / res).floor().max(0.0) as usize;
        let j_hi = (((range + reach) / res).ceil() as usize).min(bins - 1);
        let rows: Box<dyn Iterator<Item = usize>> = if range <= reach {
            Box::new(0..az)
        } else {
            let bearing = dy.atan2(dx) - pose.yaw;
            let half = (reach / range).asin();
            let k_lo = ((bearing - half) / step).floor() as i64;
            let k_hi = ((bearing + half) / step).ceil() as i64;
            let span = (k_hi - k_lo + 1).min(az as i64);
            Box::new((0..span).map(move |i| (k_lo + i).rem_euclid(az as i64) as usize))
        };
        let inv = 1.0 / (2.0 * sc.radius * sc.radius);
        for k in rows {
            let (c, s) = dirs[k];
            let row = &mut field[k * bins..(k + 1) * bins];
            for (j, cell) in row.iter_mut().enumerate().take(j_hi + 1).skip(j_lo) {
                let r = j as f64 * res;
                let ex = r * c - dx;
                let ey = r * s - dy;
                *cell += sc.rcs * (-(ex * ex + ey * ey) * inv).exp();
            }
        }
    }

    let noise = &scene.noise;
    for ring in &noise.rings {
        if ring.bin < bins {
            for k in 0..az {
                field[k * bins + ring.bin] += ring.amplitude;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed(scene.seed, pose));
    if noise.speckle_sigma > 0.0 {
        let normal = Normal::new(0.0, noise.speckle_sigma)
            .map_err(|e| Error::Parameter(format!("speckle: {e}")))?;
        for v in field.iter_mut() {
            *v *= (1.0 + normal.sample(&mut rng)).max(0.0);
        }
    }
    if noise.saturation_prob > 0.0 {
        for k in 0..az {
            if rng.random::<f64>() < noise.saturation_prob {
                field[k * bins..(k + 1) * bins].iter_mut().for_each(|v| *v = 1.0);
            }
        }
    }
    let data = field.iter().map(|v| v.clamp(0.0, 1.0) as f32).collect();
    PolarScan::new(az, bins, res, 0, data)
}

/// Closed square loop of side `side` meters starting and ending at the origin.
pub fn square_loop(side: f64, per_side: usize) -> Vec<Pose2> {
    let corners = [(0.0, 0.0), (side, 0.0), (side, side), (0.0, side), (0.0, 0.0)];
    let mut out = Vec::with_capacity(per_side * 4 + 1);
    for w in corners.windows(2) {
        let ((ax, ay), (bx, by)) = (w[0], w[1]);
        let yaw = (by - ay).atan2(bx - ax);
        for i in 0..per_side {
            let t = i as f64 / per_side as f64;
            out.push(Pose2::new(ax + t * (bx - ax), ay + t * (by - ay), yaw));
        }
    }
    out.push(Pose2::new(0.0, 0.0, -PI / 2.0));
    out
}

/// Lemniscate-style figure eight of half-width `radius`, heading along the path.
pub fn figure_eight(n: usize, radius: f64) -> Vec<Pose2> {
    let point = |t: f64| (radius * t.sin(), radius * t.sin() * t.cos());
    (0..n)
        .map(|i| {
            let t = TAU * i as f64 / n as f64;
            let (x, y) = point(t);
            let (nx, ny) = point(t + 1e-3);
            Pose2::new(x, y, (ny - y).atan2(nx - x))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub scans: Vec<PathBuf>,
    pub poses: Vec<PoseRecord>,
    /// Ground-truth revisits `(query, earlier frame)`.
    pub loop_pairs: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetOptions {
    pub start_timestamp: i64,
    pub boundary_m: f64,
    pub exclusion_window: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            start_timestamp: 1_600_000_000_000_000_000,
            boundary_m: 20.0,
            exclusion_window: 90,
        }
    }
}

/// Renders one sweep per waypoint into `out_dir/scans/NNNNNN.rps`, writes
/// `poses.csv` and `loops.csv` (`query,candidate` revisit pairs).
pub fn make_trajectory_dataset(
    scene: &SceneSpec,
    waypoints: &[Pose2],
    noise: &NoiseSpec,
    geometry: &ScanGeometry,
    options: &DatasetOptions,
    out_dir: impl AsRef<Path>,
) -> Result<DatasetSummary> {
    let out_dir = out_dir.as_ref();
    if waypoints.iter().any(|p| !(p.x.is_finite() && p.y.is_finite() && p.yaw.is_finite())) {
        return Err(Error::Parameter("waypoints must be finite".into()));
    }
    let scan_dir = out_dir.join("scans");
    fs::create_dir_all(&scan_dir).map_err(|e| Error::io(&scan_dir, e))?;
    let scene = scene.clone().with_noise(noise.clone());
    let mut scans = Vec::with_capacity(waypoints.len());
    let mut poses = Vec::with_capacity(waypoints.len());
    for (i, wp) in waypoints.iter().enumerate() {
        let ts = options.start_timestamp + i as i64 * FRAME_PERIOD_NS;
        let scan = render_polar(&scene, wp, geometry)?.with_timestamp(ts);
        let path = scan_dir.join(format!("{i:06}.rps"));
        write_scan(&scan, &path)?;
        scans.push(path);
        poses.push(PoseRecord::new(ts, wp.x, wp.y, wp.yaw));
    }
    write_poses(&poses, out_dir.join("poses.csv"))?;
    let loop_pairs = if poses.is_empty() {
        Vec::new()
    } else {
        build_ground_truth(&poses, options.boundary_m, GroundTruthMode::Intra, options.exclusion_window)?
            .pairs
            .into_iter()
            .collect()
    };
    let mut csv = String::from("query,candidate\n");
    for (q, c) in &loop_pairs {
        csv.push_str(&format!("{q},{c}\n"));
    }
    let loops = out_dir.join("loops.csv");
    fs::write(&loops, csv).map_err(|e| Error::io(&loops, e))?;
    Ok(DatasetSummary {
        scans,
        poses,
        loop_pairs,
    })
}
