//! End-to-end operations shared by the command line and the service.
//!
//! Each operation takes a request naming its files plus a [`RunConfig`], and
//! returns a serializable output that echoes the config it actually ran with.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::descriptor::{
    downsample_sinogram, make_descriptor, CompactStore, FrameSource, RadarDescriptor, Resolution, StoreFile,
    StoreWriter,
};
use crate::error::{Error, ErrorBody, Result};
use crate::eval::{
    build_ground_truth, build_ground_truth_sessions, evaluate, export_tp_trajectory, pr_csv, sensitivity_sweep,
    EvalReport, GroundTruthMode, QueryOutcome, SensitivityConfig, SensitivityReport,
};
use crate::ingest::{associate, load_poses, load_scan, PolarScan, PoseRecord, ScanLayout};
use crate::matcher::{retrieve, retrieve_exhaustive, MatchResult};
use crate::radon::{offset_count, radon_transform};
use crate::synth::{
    figure_eight, make_trajectory_dataset, render_polar, square_loop, DatasetOptions, NoiseSpec, Pose2,
    ScanGeometry, SceneSpec, WorldParams,
};
use crate::warp::backward_warp;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FINE_STORE: &str = "fine.rpdb";
pub const COARSE_STORE: &str = "coarse.rpdb";

/// Scans described in parallel before their descriptors are appended.
const BUILD_BATCH: usize = 32;

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t = Instant::now();
    let out = f();
    (out, t.elapsed().as_secs_f64() * 1e3)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let body = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn require_dir(path: &Path) -> Result<()> {
    if !path.is_dir() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "directory not found"),
        ));
    }
    Ok(())
}

fn require_file(path: &Path) -> Result<()> {
    if !path.is_file() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    Ok(())
}

/// Milliseconds spent per stage; summed over frames in a build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub load_ms: f64,
    /// Polar to Cartesian.
    pub warp_ms: f64,
    pub radon_ms: f64,
    pub descriptor_ms: f64,
    pub store_ms: f64,
}

impl StageTiming {
    fn add(&mut self, o: &StageTiming) {
        self.load_ms += o.load_ms;
        self.warp_ms += o.warp_ms;
        self.radon_ms += o.radon_ms;
        self.descriptor_ms += o.descriptor_ms;
        self.store_ms += o.store_ms;
    }

    fn scaled(&self, k: f64) -> StageTiming {
        StageTiming {
            load_ms: self.load_ms * k,
            warp_ms: self.warp_ms * k,
            radon_ms: self.radon_ms * k,
            descriptor_ms: self.descriptor_ms * k,
            store_ms: self.store_ms * k,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FrameDescriptors {
    pub fine: RadarDescriptor,
    /// Absent when the config disables the coarse pass.
    pub coarse: Option<RadarDescriptor>,
}

/// Warp, project and transform one scan under `cfg`.
pub fn describe_scan(scan: &PolarScan, cfg: &RunConfig, source_id: u64) -> Result<(FrameDescriptors, StageTiming)> {
    let mut timing = StageTiming::default();
    let (img, t) = timed(|| backward_warp(scan, &cfg.grid()));
    timing.warp_ms = t;
    let (sino, t) = timed(|| radon_transform(&img?, cfg.n_theta));
    timing.radon_ms = t;
    let sino = sino?;
    let (out, t) = timed(|| -> Result<_> {
        let coarse = if cfg.coarse_factor > 1 {
            Some(make_descriptor(&downsample_sinogram(&sino, cfg.coarse_factor)?, source_id))
        } else {
            None
        };
        Ok(FrameDescriptors {
            fine: make_descriptor(&sino, source_id),
            coarse,
        })
    });
    timing.descriptor_ms = t;
    Ok((out?, timing))
}

/// Scan files of `layout` in `dir`, in file-name order.
pub fn list_scans(dir: &Path, layout: &ScanLayout) -> Result<Vec<PathBuf>> {
    require_dir(dir)?;
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == layout.extension()) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnError {
    /// Stop at the first unreadable scan.
    #[default]
    Abort,
    /// Record the failure in the manifest and go on.
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildRequest {
    pub scan_dir: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub layout: ScanLayout,
    #[serde(default)]
    pub on_error: OnError,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameEntry {
    pub index: usize,
    pub file: String,
    pub timestamp: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedScan {
    pub file: String,
    pub error: ErrorBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreInfo {
    pub file: String,
    pub n_theta: usize,
    pub n_l: usize,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildTiming {
    /// Summed over frames.
    pub total: StageTiming,
    /// Mean per described frame.
    pub per_frame: StageTiming,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildManifest {
    pub config: RunConfig,
    pub layout: ScanLayout,
    pub scan_dir: PathBuf,
    pub frames: Vec<FrameEntry>,
    pub skipped: Vec<SkippedScan>,
    pub fine: StoreInfo,
    pub coarse: Option<StoreInfo>,
    pub timing: BuildTiming,
}

impl BuildManifest {
    pub fn read(store_dir: &Path) -> Result<Self> {
        let path = store_dir.join(MANIFEST_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn timestamps(&self) -> Vec<i64> {
        self.frames.iter().map(|f| f.timestamp).collect()
    }

    /// `cfg` with the descriptor geometry this store was built with.
    pub fn resolve(&self, cfg: &RunConfig) -> RunConfig {
        RunConfig {
            side_pixels: self.config.side_pixels,
            meters_per_pixel: self.config.meters_per_pixel,
            n_theta: self.config.n_theta,
            coarse_factor: self.config.coarse_factor,
            ..cfg.clone()
        }
    }
}

/// Describes every scan in `req.scan_dir` into fine and coarse stores plus a
/// manifest in `req.out_dir`.
pub fn build(req: &BuildRequest, cfg: &RunConfig) -> Result<BuildManifest> {
    cfg.validate()?;
    let files = list_scans(&req.scan_dir, &req.layout)?;
    fs::create_dir_all(&req.out_dir).map_err(|e| Error::io(&req.out_dir, e))?;
    let wall = Instant::now();

    let n_l = offset_count(cfg.side_pixels);
    let coarse_n_l = n_l.div_ceil(cfg.coarse_factor);
    let mut fine = StoreWriter::create(req.out_dir.join(FINE_STORE), Resolution::Fine, cfg.n_theta, n_l)?;
    let mut coarse = if cfg.coarse_factor > 1 {
        Some(StoreWriter::create(
            req.out_dir.join(COARSE_STORE),
            Resolution::Coarse,
            cfg.n_theta,
            coarse_n_l,
        )?)
    } else {
        None
    };

    let mut frames = Vec::new();
    let mut skipped = Vec::new();
    let mut total = StageTiming::default();
    cfg.install(|| -> Result<()> {
        for batch in files.chunks(BUILD_BATCH) {
            let described: Vec<_> = batch
                .par_iter()
                .map(|path| {
                    let (scan, load_ms) = timed(|| load_scan(path, &req.layout));
                    let scan = scan?;
                    let (desc, mut timing) = describe_scan(&scan, cfg, 0)?;
                    timing.load_ms = load_ms;
                    Ok((scan.timestamp(), desc, timing))
                })
                .collect();
            for (path, outcome) in batch.iter().zip(described) {
                let (timestamp, desc, mut timing) = match outcome {
                    Ok(v) => v,
                    Err(e) if req.on_error == OnError::Continue => {
                        log::warn!("skipping {}: {e}", path.display());
                        skipped.push(SkippedScan {
                            file: file_name(path),
                            error: ErrorBody::from(&e),
                        });
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                // Frame ids are only known once earlier skips are settled.
                let index = frames.len();
                let (written, t) = timed(|| -> Result<()> {
                    fine.append(&desc.fine.with_source_id(index as u64))?;
                    if let (Some(w), Some(c)) = (coarse.as_mut(), desc.coarse) {
                        w.append(&c.with_source_id(index as u64))?;
                    }
                    Ok(())
                });
                written?;
                timing.store_ms = t;
                total.add(&timing);
                frames.push(FrameEntry {
                    index,
                    file: file_name(path),
                    timestamp,
                });
            }
        }
        Ok(())
    })??;

    let (finished, t) = timed(|| -> Result<()> {
        fine.finish()?;
        coarse.map(StoreWriter::finish).transpose()?;
        Ok(())
    });
    finished?;
    total.store_ms += t;

    let count = frames.len();
    let manifest = BuildManifest {
        config: cfg.clone(),
        layout: req.layout.clone(),
        scan_dir: req.scan_dir.clone(),
        skipped,
        fine: StoreInfo {
            file: FINE_STORE.into(),
            n_theta: cfg.n_theta,
            n_l,
            frame_count: count,
        },
        coarse: (cfg.coarse_factor > 1).then(|| StoreInfo {
            file: COARSE_STORE.into(),
            n_theta: cfg.n_theta,
            n_l: coarse_n_l,
            frame_count: count,
        }),
        timing: BuildTiming {
            total,
            per_frame: total.scaled(if count > 0 { 1.0 / count as f64 } else { 0.0 }),
            wall_ms: wall.elapsed().as_secs_f64() * 1e3,
        },
        frames,
    };
    write_json(&req.out_dir.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// A built store opened for matching: the fine store is read on demand, the
/// coarse store is held in memory.
#[derive(Debug)]
pub struct OpenStores {
    pub dir: PathBuf,
    pub manifest: BuildManifest,
    pub fine: StoreFile,
    pub coarse_file: Option<StoreFile>,
    pub coarse: Option<CompactStore>,
}

impl OpenStores {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        require_dir(&dir)?;
        let manifest = BuildManifest::read(&dir)?;
        let fine = StoreFile::open(dir.join(&manifest.fine.file))?;
        let coarse_file = manifest
            .coarse
            .as_ref()
            .map(|c| StoreFile::open(dir.join(&c.file)))
            .transpose()?;
        let coarse = coarse_file
            .as_ref()
            .map(|f| CompactStore::from_source(f))
            .transpose()?;
        let frames = manifest.frames.len();
        for (name, n) in [
            ("fine", Some(fine.frame_count())),
            ("coarse", coarse.as_ref().map(|c| c.frame_count())),
        ] {
            if let Some(n) = n.filter(|&n| n != frames) {
                return Err(Error::Dimension(format!(
                    "{name} store holds {n} frames, manifest lists {frames}"
                )));
            }
        }
        Ok(Self {
            dir,
            manifest,
            fine,
            coarse_file,
            coarse,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stored descriptors of frame `index`, usable as a query.
    pub fn frame(&self, index: usize) -> Result<FrameDescriptors> {
        Ok(FrameDescriptors {
            fine: self.fine.frame(index)?,
            coarse: self.coarse_file.as_ref().map(|c| c.frame(index)).transpose()?,
        })
    }

    pub fn retrieve(
        &self,
        q: &FrameDescriptors,
        cfg: &RunConfig,
        causal: bool,
        query_index: Option<usize>,
    ) -> Result<MatchResult> {
        let rc = cfg.retrieval(causal);
        match (&q.coarse, &self.coarse) {
            (Some(qc), Some(db)) if rc.hierarchical() => retrieve(&q.fine, qc, &self.fine, db, &rc, query_index),
            _ => retrieve_exhaustive(&q.fine, &self.fine, &rc, query_index),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRequest {
    pub store_dir: PathBuf,
    pub scan: PathBuf,
    #[serde(default)]
    pub layout: ScanLayout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutput {
    pub config: RunConfig,
    pub store_dir: PathBuf,
    pub scan: PathBuf,
    pub result: MatchResult,
    /// Manifest entry of the best match.
    pub best_frame: FrameEntry,
}

pub fn query(req: &QueryRequest, cfg: &RunConfig) -> Result<QueryOutput> {
    cfg.validate()?;
    require_file(&req.scan)?;
    let stores = OpenStores::open(&req.store_dir)?;
    query_with(&stores, req, cfg)
}

/// [`query`] against already opened stores.
pub fn query_with(stores: &OpenStores, req: &QueryRequest, cfg: &RunConfig) -> Result<QueryOutput> {
    cfg.validate()?;
    let cfg = stores.manifest.resolve(cfg);
    let scan = load_scan(&req.scan, &req.layout)?;
    let result = cfg.install(|| -> Result<_> {
        let (q, _) = describe_scan(&scan, &cfg, 0)?;
        stores.retrieve(&q, &cfg, false, None)
    })??;
    Ok(QueryOutput {
        best_frame: stores.manifest.frames[result.best_index].clone(),
        config: cfg,
        store_dir: req.store_dir.clone(),
        scan: req.scan.clone(),
        result,
    })
}

/// A second session matched against the database session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRef {
    pub store_dir: PathBuf,
    pub poses: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub store_dir: PathBuf,
    pub poses: PathBuf,
    pub out_dir: PathBuf,
    /// Evaluate this session's frames against `store_dir` instead of
    /// `store_dir` against its own past.
    #[serde(default)]
    pub query_session: Option<SessionRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOutput {
    pub config: RunConfig,
    pub mode: GroundTruthMode,
    pub queries: usize,
    /// Queries with no admissible candidate (too early in the session).
    pub unmatched_queries: usize,
    pub ground_truth_pairs: usize,
    pub report: EvalReport,
    pub files: Vec<PathBuf>,
}

pub const REPORT_FILE: &str = "report.json";
pub const PR_FILE: &str = "pr.csv";
pub const TP_CSV_FILE: &str = "tp.csv";
pub const TP_SVG_FILE: &str = "tp.svg";

fn session_poses(stores: &OpenStores, poses: &Path) -> Result<Vec<PoseRecord>> {
    associate(&stores.manifest.timestamps(), &load_poses(poses)?)
}

pub fn eval(req: &EvalRequest, cfg: &RunConfig) -> Result<EvalOutput> {
    cfg.validate()?;
    require_file(&req.poses)?;
    if let Some(s) = &req.query_session {
        require_file(&s.poses)?;
        require_dir(&s.store_dir)?;
    }
    let db = OpenStores::open(&req.store_dir)?;
    eval_with(&db, req, cfg)
}

/// [`eval`] against an already opened database session.
pub fn eval_with(db: &OpenStores, req: &EvalRequest, cfg: &RunConfig) -> Result<EvalOutput> {
    cfg.validate()?;
    let cfg = db.manifest.resolve(cfg);
    let db_poses = session_poses(db, &req.poses)?;

    let query_stores;
    let (queries, gt, causal, own) = match &req.query_session {
        None => (
            db,
            build_ground_truth(&db_poses, cfg.boundary_m, GroundTruthMode::Intra, cfg.exclusion_window)?,
            true,
            true,
        ),
        Some(s) => {
            query_stores = OpenStores::open(&s.store_dir)?;
            let q_poses = session_poses(&query_stores, &s.poses)?;
            let gt = build_ground_truth_sessions(&q_poses, &db_poses, cfg.boundary_m)?;
            (&query_stores, gt, false, false)
        }
    };
    if queries.manifest.config.side_pixels != cfg.side_pixels
        || queries.manifest.config.n_theta != cfg.n_theta
        || queries.manifest.config.coarse_factor != cfg.coarse_factor
    {
        return Err(Error::Dimension("query session was built with a different geometry".into()));
    }

    let mut outcomes = Vec::new();
    let mut unmatched = 0;
    cfg.install(|| -> Result<()> {
        for i in 0..queries.len() {
            let q = queries.frame(i)?;
            match db.retrieve(&q, &cfg, causal, own.then_some(i)) {
                Ok(m) => outcomes.push(QueryOutcome {
                    query: i,
                    predicted: m.best_index,
                    d: m.best_distance.d,
                }),
                Err(Error::NoCandidate) => unmatched += 1,
                Err(e) => return Err(e),
            }
        }
        Ok(())
    })??;

    let report = evaluate(&outcomes, &gt, &cfg.thresholds)?;
    let q_poses = match &req.query_session {
        None => db_poses,
        Some(s) => session_poses(queries, &s.poses)?,
    };
    fs::create_dir_all(&req.out_dir).map_err(|e| Error::io(&req.out_dir, e))?;
    let files: Vec<PathBuf> = [REPORT_FILE, PR_FILE, TP_CSV_FILE, TP_SVG_FILE]
        .iter()
        .map(|f| req.out_dir.join(f))
        .collect();
    fs::write(&files[1], pr_csv(&report)).map_err(|e| Error::io(&files[1], e))?;
    export_tp_trajectory(&report, &q_poses, &files[2])?;
    export_tp_trajectory(&report, &q_poses, &files[3])?;
    let out = EvalOutput {
        config: cfg,
        mode: gt.mode,
        queries: queries.len(),
        unmatched_queries: unmatched,
        ground_truth_pairs: gt.pairs.len(),
        report,
        files,
    };
    write_json(&out.files[0], &out)?;
    Ok(out)
}

fn default_rotations() -> Vec<f64> {
    (0..36).map(|k| k as f64 * 10.0).collect()
}

fn default_translations() -> Vec<isize> {
    (-10..=10).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensRequest {
    pub scan: PathBuf,
    /// Scan of a different place setting the threshold; a random synthetic
    /// place from the run seed when absent.
    #[serde(default)]
    pub unrelated: Option<PathBuf>,
    #[serde(default)]
    pub layout: ScanLayout,
    #[serde(default = "default_rotations")]
    pub rotations_deg: Vec<f64>,
    #[serde(default = "default_translations")]
    pub translations_px: Vec<isize>,
    /// Curves as CSV (`transform,amount,d,normalized`).
    #[serde(default)]
    pub out_csv: Option<PathBuf>,
}

impl SensRequest {
    pub fn new(scan: impl Into<PathBuf>) -> Self {
        Self {
            scan: scan.into(),
            unrelated: None,
            layout: ScanLayout::default(),
            rotations_deg: default_rotations(),
            translations_px: default_translations(),
            out_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensOutput {
    pub config: RunConfig,
    pub sensitivity: SensitivityConfig,
    pub unrelated: Option<PathBuf>,
    pub report: SensitivityReport,
}

pub fn sens(req: &SensRequest, cfg: &RunConfig) -> Result<SensOutput> {
    cfg.validate()?;
    require_file(&req.scan)?;
    if let Some(u) = &req.unrelated {
        require_file(u)?;
    }
    let scan = load_scan(&req.scan, &req.layout)?;
    let unrelated = match &req.unrelated {
        Some(path) => load_scan(path, &req.layout)?,
        None => {
            // Offset so the reference never shares a world with data synthesized from the same seed.
            let seed = cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let place = SceneSpec::random_place(seed, scan.max_range(), &WorldParams::default())?;
            let geometry = ScanGeometry {
                azimuths: scan.azimuths(),
                range_bins: scan.range_bins(),
                range_resolution: scan.range_resolution(),
            };
            render_polar(&place, &Pose2::default(), &geometry)?
        }
    };
    let sensitivity = cfg.sensitivity();
    let report = cfg.install(|| {
        sensitivity_sweep(&scan, &unrelated, &req.rotations_deg, &req.translations_px, &sensitivity)
    })??;
    if let Some(path) = &req.out_csv {
        fs::write(path, report.to_csv()).map_err(|e| Error::io(path, e))?;
    }
    Ok(SensOutput {
        config: cfg.clone(),
        sensitivity,
        unrelated: req.unrelated.clone(),
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Trajectory {
    SquareLoop {
        side: f64,
        per_side: usize,
        laps: usize,
    },
    FigureEight {
        n: usize,
        radius: f64,
        laps: usize,
    },
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory::SquareLoop {
            side: 120.0,
            per_side: 30,
            laps: 2,
        }
    }
}

impl Trajectory {
    /// Waypoints of every lap; lap `k` is offset by `k * lap_offset_m` on
    /// both axes so revisits are near but not identical.
    pub fn waypoints(&self, lap_offset_m: f64) -> Result<Vec<Pose2>> {
        let (lap, laps) = match *self {
            Trajectory::SquareLoop { side, per_side, laps } => {
                if !(side > 0.0) || per_side == 0 {
                    return Err(Error::Parameter("square loop needs a positive side and per_side".into()));
                }
                let mut lap = square_loop(side, per_side);
                lap.pop();
                (lap, laps)
            }
            Trajectory::FigureEight { n, radius, laps } => {
                if !(radius > 0.0) || n == 0 {
                    return Err(Error::Parameter("figure eight needs a positive radius and n".into()));
                }
                (figure_eight(n, radius), laps)
            }
        };
        if laps == 0 {
            return Err(Error::Parameter("laps must be at least 1".into()));
        }
        Ok((0..laps)
            .flat_map(|k| {
                let o = k as f64 * lap_offset_m;
                lap.iter().map(move |p| Pose2::new(p.x + o, p.y + o, p.yaw))
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRequest {
    pub out_dir: PathBuf,
    #[serde(default)]
    pub trajectory: Trajectory,
    #[serde(default = "default_lap_offset")]
    pub lap_offset_m: f64,
    #[serde(default)]
    pub world: WorldParams,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub geometry: ScanGeometry,
}

fn default_lap_offset() -> f64 {
    1.0
}

impl SynthRequest {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        Self {
            out_dir: out_dir.into(),
            trajectory: Trajectory::default(),
            lap_offset_m: default_lap_offset(),
            world: WorldParams::default(),
            noise: NoiseSpec::default(),
            geometry: ScanGeometry::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthOutput {
    pub config: RunConfig,
    pub request: SynthRequest,
    pub frames: usize,
    pub scatterers: usize,
    pub loop_pairs: usize,
    pub scan_dir: PathBuf,
    pub poses: PathBuf,
    pub loops: PathBuf,
}

pub const SYNTH_FILE: &str = "synth.json";

/// Renders a trajectory through a random world seeded by `cfg.seed`.
pub fn synth(req: &SynthRequest, cfg: &RunConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    req.noise.validate()?;
    if !(req.lap_offset_m.is_finite()) {
        return Err(Error::Parameter("lap_offset_m must be finite".into()));
    }
    let waypoints = req.trajectory.waypoints(req.lap_offset_m)?;
    let reach = req.geometry.max_range();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in &waypoints {
        x0 = x0.min(p.x - reach);
        x1 = x1.max(p.x + reach);
        y0 = y0.min(p.y - reach);
        y1 = y1.max(p.y + reach);
    }
    let scene = SceneSpec::random_world(cfg.seed, [x0, x1, y0, y1], &req.world)?;
    let options = DatasetOptions {
        boundary_m: cfg.boundary_m,
        exclusion_window: cfg.exclusion_window,
        ..DatasetOptions::default()
    };
    let summary = cfg.install(|| {
        make_trajectory_dataset(&scene, &waypoints, &req.noise, &req.geometry, &options, &req.out_dir)
    })??;
    let out = SynthOutput {
        config: cfg.clone(),
        request: req.clone(),
        frames: summary.scans.len(),
        scatterers: scene.scatterers.len(),
        loop_pairs: summary.loop_pairs.len(),
        scan_dir: req.out_dir.join("scans"),
        poses: req.out_dir.join("poses.csv"),
        loops: req.out_dir.join("loops.csv"),
    };
    write_json(&req.out_dir.join(SYNTH_FILE), &out)?;
    Ok(out)
}
