//! The `raplace` command line. Every subcommand except `serve` is a request to
//! the service: the one named by `--server`, or an embedded one on a loopback
//! port that lives as long as the command.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use raplace_core::config::RunConfig;
use raplace_core::ingest::ScanLayout;
use raplace_core::matcher::ScoreMode;
use raplace_core::pipeline::{
    BuildRequest, EvalRequest, OnError, QueryRequest, SensRequest, SessionRef, SynthRequest, Trajectory,
};
use raplace_core::synth::{NoiseSpec, ScanGeometry};
use raplace_core::{ErrorBody, ErrorKind};
use serde_json::Value;
use tokio::net::TcpListener;

use crate::{Client, ClientError};

#[derive(Debug, Parser)]
#[command(name = "raplace", version, about = "Radar place recognition from Radon sinograms")]
pub struct Cli {
    /// Service to talk to; an embedded one is started when absent.
    #[arg(long, global = true, value_name = "URL")]
    pub server: Option<String>,
    /// Run config (TOML, or JSON for a `.json` file). Flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: ConfigFlags,
    #[command(subcommand)]
    pub command: Command,
}

/// One flag per [`RunConfig`] field.
#[derive(Debug, Default, Args)]
pub struct ConfigFlags {
    #[arg(long, global = true)]
    pub side_pixels: Option<usize>,
    #[arg(long, global = true)]
    pub meters_per_pixel: Option<f64>,
    #[arg(long, global = true)]
    pub n_theta: Option<usize>,
    #[arg(long, global = true)]
    pub coarse_factor: Option<usize>,
    #[arg(long, global = true)]
    pub coarse_top_k: Option<usize>,
    #[arg(long, global = true)]
    pub neighbor_window: Option<usize>,
    #[arg(long, global = true)]
    pub exclusion_window: Option<usize>,
    #[arg(long, global = true)]
    pub keyframe_stride: Option<usize>,
    #[arg(long, global = true)]
    pub boundary_m: Option<f64>,
    #[arg(long, global = true)]
    pub threshold_count: Option<usize>,
    #[arg(long, global = true)]
    pub threshold_max: Option<f64>,
    /// Explicit thresholds, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    pub thresholds: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub score_mode: Option<ScoreArg>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScoreArg {
    Raw,
    Normalized,
}

#[derive(Debug, Default, Args)]
pub struct LayoutArgs {
    /// Read scans as 8-bit images with this many meters per range bin.
    #[arg(long, value_name = "METERS")]
    pub image_range_resolution: Option<f64>,
    /// Metadata bytes at the start of each image row.
    #[arg(long, default_value_t = 0, requires = "image_range_resolution")]
    pub column_offset: usize,
}

impl LayoutArgs {
    fn layout(&self) -> ScanLayout {
        match self.image_range_resolution {
            Some(r) => ScanLayout::Image {
                column_offset: self.column_offset,
                range_resolution: r,
                expected: None,
            },
            None => ScanLayout::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum TrajectoryArg {
    Square,
    FigureEight,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Describe every scan in a directory into fine and coarse stores.
    Build {
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        layout: LayoutArgs,
        /// Skip unreadable scans instead of aborting.
        #[arg(long)]
        continue_on_error: bool,
    },
    /// Find the best match of one scan in a built store.
    Query {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        #[command(flatten)]
        layout: LayoutArgs,
    },
    /// Precision-recall evaluation of a store against its poses, or of a
    /// second session against it.
    Eval {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, requires = "query_poses")]
        query_store: Option<PathBuf>,
        #[arg(long, requires = "query_store")]
        query_poses: Option<PathBuf>,
    },
    /// Distance of a scan to rotated and shifted copies of itself.
    Sens {
        #[arg(long)]
        scan: PathBuf,
        /// A different place; a synthetic one from the seed when absent.
        #[arg(long)]
        unrelated: Option<PathBuf>,
        #[command(flatten)]
        layout: LayoutArgs,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        rotations: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        translations: Option<Vec<isize>>,
        #[arg(long)]
        out_csv: Option<PathBuf>,
    },
    /// Render a synthetic dataset along a looping trajectory.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = TrajectoryArg::Square)]
        trajectory: TrajectoryArg,
        /// Square side in meters.
        #[arg(long, default_value_t = 120.0)]
        side: f64,
        #[arg(long, default_value_t = 30)]
        per_side: usize,
        /// Poses per figure-eight lap.
        #[arg(long, default_value_t = 120)]
        poses: usize,
        /// Figure-eight half width in meters.
        #[arg(long, default_value_t = 60.0)]
        radius: f64,
        #[arg(long, default_value_t = 2)]
        laps: usize,
        #[arg(long, default_value_t = 1.0)]
        lap_offset: f64,
        #[arg(long)]
        azimuths: Option<usize>,
        #[arg(long)]
        range_bins: Option<usize>,
        #[arg(long)]
        range_resolution: Option<f64>,
        #[arg(long, default_value_t = 0.0)]
        speckle: f64,
        /// Range bins carrying ring artifacts, comma separated.
        #[arg(long, value_delimiter = ',')]
        rings: Vec<usize>,
        #[arg(long, default_value_t = 0.5)]
        ring_amplitude: f64,
        #[arg(long, default_value_t = 0.0)]
        saturation: f64,
    },
    /// Run the service until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: SocketAddr,
    },
}

fn param(message: String) -> ErrorBody {
    ErrorBody {
        kind: ErrorKind::ParameterError,
        message,
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(file: Option<&Path>, flags: &ConfigFlags) -> Result<RunConfig, ErrorBody> {
    let mut cfg = match file {
        None => RunConfig::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| ErrorBody {
                kind: ErrorKind::IoError,
                message: format!("cannot read config {}: {e}", path.display()),
            })?;
            let parsed = if path.extension().is_some_and(|e| e == "json") {
                serde_json::from_str(&text).map_err(|e| e.to_string())
            } else {
                toml::from_str(&text).map_err(|e| e.to_string())
            };
            parsed.map_err(|e| ErrorBody {
                kind: ErrorKind::FormatError,
                message: format!("bad config {}: {e}", path.display()),
            })?
        }
    };
    let f = flags;
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = f.$field { cfg.$field = v; })* };
    }
    set!(
        side_pixels,
        meters_per_pixel,
        n_theta,
        coarse_factor,
        coarse_top_k,
        neighbor_window,
        exclusion_window,
        keyframe_stride,
        boundary_m,
        seed,
        workers
    );
    if let Some(n) = f.threshold_count {
        cfg.thresholds.count = n;
    }
    if let Some(m) = f.threshold_max {
        cfg.thresholds.max = Some(m);
    }
    if let Some(v) = &f.thresholds {
        cfg.thresholds.values = v.clone();
    }
    if let Some(m) = f.score_mode {
        cfg.score_mode = match m {
            ScoreArg::Raw => ScoreMode::Raw,
            ScoreArg::Normalized => ScoreMode::Normalized,
        };
    }
    cfg.validate().map_err(|e| ErrorBody::from(&e))?;
    Ok(cfg)
}

fn to_value<T: serde::Serialize>(r: Result<T, ClientError>) -> Result<Value, ErrorBody> {
    let out = r.map_err(|e| e.body())?;
    serde_json::to_value(out).map_err(|e| ErrorBody {
        kind: ErrorKind::InternalError,
        message: e.to_string(),
    })
}

/// Paths travel as absolute paths so a remote service on the same
/// filesystem resolves them as the caller meant.
fn abs(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

/// Sends one command to `client` and returns the service's JSON answer.
pub async fn execute(client: &Client, command: &Command, cfg: &RunConfig) -> Result<Value, ErrorBody> {
    match command {
        Command::Build {
            scans,
            out,
            layout,
            continue_on_error,
        } => {
            let req = BuildRequest {
                scan_dir: abs(scans),
                out_dir: abs(out),
                layout: layout.layout(),
                on_error: if *continue_on_error { OnError::Continue } else { OnError::Abort },
            };
            to_value(client.build(&req, cfg).await)
        }
        Command::Query { store, scan, layout } => {
            let req = QueryRequest {
                store_dir: abs(store),
                scan: abs(scan),
                layout: layout.layout(),
            };
            to_value(client.query(&req, cfg).await)
        }
        Command::Eval {
            store,
            poses,
            out,
            query_store,
            query_poses,
        } => {
            let req = EvalRequest {
                store_dir: abs(store),
                poses: abs(poses),
                out_dir: abs(out),
                query_session: query_store.as_ref().zip(query_poses.as_ref()).map(|(s, p)| SessionRef {
                    store_dir: abs(s),
                    poses: abs(p),
                }),
            };
            to_value(client.eval(&req, cfg).await)
        }
        Command::Sens {
            scan,
            unrelated,
            layout,
            rotations,
            translations,
            out_csv,
        } => {
            let mut req = SensRequest::new(abs(scan));
            req.unrelated = unrelated.as_deref().map(abs);
            req.layout = layout.layout();
            req.out_csv = out_csv.as_deref().map(abs);
            if let Some(r) = rotations {
                req.rotations_deg = r.clone();
            }
            if let Some(t) = translations {
                req.translations_px = t.clone();
            }
            to_value(client.sens(&req, cfg).await)
        }
        Command::Synth {
            out,
            trajectory,
            side,
            per_side,
            poses,
            radius,
            laps,
            lap_offset,
            azimuths,
            range_bins,
            range_resolution,
            speckle,
            rings,
            ring_amplitude,
            saturation,
        } => {
            let g = ScanGeometry::default();
            let req = SynthRequest {
                trajectory: match trajectory {
                    TrajectoryArg::Square => Trajectory::SquareLoop {
                        side: *side,
                        per_side: *per_side,
                        laps: *laps,
                    },
                    TrajectoryArg::FigureEight => Trajectory::FigureEight {
                        n: *poses,
                        radius: *radius,
                        laps: *laps,
                    },
                },
                lap_offset_m: *lap_offset,
                noise: NoiseSpec {
                    speckle_sigma: *speckle,
                    saturation_prob: *saturation,
                    ..NoiseSpec::none()
                }
                .with_rings(rings.iter().copied(), *ring_amplitude),
                geometry: ScanGeometry {
                    azimuths: azimuths.unwrap_or(g.azimuths),
                    range_bins: range_bins.unwrap_or(g.range_bins),
                    range_resolution: range_resolution.unwrap_or(g.range_resolution),
                },
                ..SynthRequest::new(abs(out))
            };
            to_value(client.synth(&req, cfg).await)
        }
        Command::Serve { .. } => Err(param("serve is not a request".into())),
    }
}

/// Runs a parsed command line to completion.
pub async fn run(cli: Cli) -> Result<Value, ErrorBody> {
    let io = |e: std::io::Error| ErrorBody {
        kind: ErrorKind::IoError,
        message: e.to_string(),
    };
    if let Command::Serve { addr } = cli.command {
        let listener = TcpListener::bind(addr).await.map_err(io)?;
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        raplace_server::serve(listener, Arc::default(), shutdown).await.map_err(io)?;
        return Ok(Value::Null);
    }
    let cfg = resolve_config(cli.config.as_deref(), &cli.flags)?;
    if let Some(url) = &cli.server {
        return execute(&Client::new(url.clone()), &cli.command, &cfg).await;
    }

    let listener = TcpListener::bind("127.0.0.1:0").await.map_err(io)?;
    let addr = listener.local_addr().map_err(io)?;
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(raplace_server::serve(listener, Arc::default(), async {
        let _ = stopped.await;
    }));
    let out = execute(&Client::new(format!("http://{addr}")), &cli.command, &cfg).await;
    let _ = stop.send(());
    let _ = server.await;
    out
}
