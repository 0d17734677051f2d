//! Loading polar radar sweeps and ground-truth poses.
//!
//! Two scan layouts are understood: 8-bit grayscale images (one row per
//! azimuth, one column per range bin, optionally preceded by a fixed number
//! of per-row metadata bytes) and the native `RPS1` raw binary. Intensities
//! are normalized to `[0, 1]` at load time.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCAN_MAGIC: &[u8; 4] = b"RPS1";
const SCAN_HEADER_LEN: usize = 4 + 4 + 4 + 8 + 8;

/// One radar sweep: `azimuths` rows of `range_bins` intensity samples.
///
/// Row `k` looks along bearing `2πk / azimuths`, counter-clockwise from the
/// sensor's forward axis. Range bin `j` sits at `j * range_resolution` meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarScan {
    azimuths: usize,
    range_bins: usize,
    range_resolution: f64,
    timestamp: i64,
    intensities: Vec<f32>,
}

impl PolarScan {
    pub fn new(
        azimuths: usize,
        range_bins: usize,
        range_resolution: f64,
        timestamp: i64,
        intensities: Vec<f32>,
    ) -> Result<Self> {
        if azimuths < 4 || range_bins < 4 {
            return Err(Error::Dimension(format!(
                "scan must have at least 4 azimuths and 4 range bins, got {azimuths}x{range_bins}"
            )));
        }
        if !(range_resolution.is_finite() && range_resolution > 0.0) {
            return Err(Error::Parameter(format!(
                "range resolution must be positive, got {range_resolution}"
            )));
        }
        if intensities.len() != azimuths * range_bins {
            return Err(Error::Dimension(format!(
                "expected {} intensities for {azimuths}x{range_bins}, got {}",
                azimuths * range_bins,
                intensities.len()
            )));
        }
        if let Some(pos) = intensities.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Format(format!(
                "intensity {} at row {}, bin {} is not a finite non-negative value",
                intensities[pos],
                pos / range_bins,
                pos % range_bins
            )));
        }
        Ok(Self {
            azimuths,
            range_bins,
            range_resolution,
            timestamp,
            intensities,
        })
    }

    pub fn zeros(azimuths: usize, range_bins: usize, range_resolution: f64) -> Result<Self> {
        Self::new(
            azimuths,
            range_bins,
            range_resolution,
            0,
            vec![0.0; azimuths * range_bins],
        )
    }

    pub fn azimuths(&self) -> usize {
        self.azimuths
    }

    pub fn range_bins(&self) -> usize {
        self.range_bins
    }

    pub fn range_resolution(&self) -> f64 {
        self.range_resolution
    }

    pub fn timestamp(&self) -> i64 {
        self.timestamp
    }

    pub fn with_timestamp(mut self, timestamp: i64) -> Self {
        self.timestamp = timestamp;
        self
    }

    /// Range covered by the last bin.
    pub fn max_range(&self) -> f64 {
        self.range_bins as f64 * self.range_resolution
    }

    pub fn intensities(&self) -> &[f32] {
        &self.intensities
    }

    pub fn row(&self, azimuth: usize) -> &[f32] {
        &self.intensities[azimuth * self.range_bins..(azimuth + 1) * self.range_bins]
    }

    pub fn get(&self, azimuth: usize, bin: usize) -> f32 {
        self.intensities[azimuth * self.range_bins + bin]
    }

    /// Rotates the sweep by `shift` beams: row `k` of the result is row
    /// `k - shift` of `self`.
    pub fn shift_rows(&self, shift: isize) -> PolarScan {
        let a = self.azimuths as isize;
        let mut out = Vec::with_capacity(self.intensities.len());
        for k in 0..a {
            let src = (k - shift).rem_euclid(a) as usize;
            out.extend_from_slice(self.row(src));
        }
        PolarScan {
            intensities: out,
            ..self.clone()
        }
    }
}

/// How a scan file on disk is laid out.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScanLayout {
    /// Native `RPS1` binary.
    #[default]
    Raw,
    /// 8-bit grayscale image, rows are azimuths and columns are range bins.
    Image {
        /// Leading bytes of every row that hold metadata rather than samples.
        #[serde(default)]
        column_offset: usize,
        range_resolution: f64,
        /// Declared `(azimuths, range_bins)`; checked when present.
        #[serde(default)]
        expected: Option<(usize, usize)>,
    },
}

impl ScanLayout {
    pub fn image(range_resolution: f64) -> Self {
        ScanLayout::Image {
            column_offset: 0,
            range_resolution,
            expected: None,
        }
    }

    /// File extension this layout is stored under.
    pub fn extension(&self) -> &'static str {
        match self {
            ScanLayout::Raw => "rps",
            ScanLayout::Image { .. } => "png",
        }
    }
}

pub fn load_scan(path: impl AsRef<Path>, layout: &ScanLayout) -> Result<PolarScan> {
    let path = path.as_ref();
    match layout {
        ScanLayout::Raw => {
            let mut bytes = Vec::new();
            File::open(path)
                .and_then(|f| BufReader::new(f).read_to_end(&mut bytes))
                .map_err(|e| Error::io(path, e))?;
            decode_raw_scan(&bytes)
        }
        ScanLayout::Image {
            column_offset,
            range_resolution,
            expected,
        } => {
            let img = image::open(path)
                .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?
                .into_luma8();
            let (width, height) = (img.width() as usize, img.height() as usize);
            if width <= *column_offset {
                return Err(Error::Dimension(format!(
                    "image is {width} columns wide but the layout skips {column_offset}"
                )));
            }
            let bins = width - column_offset;
            if let Some((az, rb)) = expected {
                if (*az, *rb) != (height, bins) {
                    return Err(Error::Dimension(format!(
                        "layout declares {az}x{rb}, image holds {height}x{bins}"
                    )));
                }
            }
            let raw = img.into_raw();
            let intensities = raw
                .chunks_exact(width)
                .flat_map(|row| row[*column_offset..].iter().map(|&v| v as f32 / 255.0))
                .collect();
            let timestamp = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<i64>().ok())
                .unwrap_or(0);
            PolarScan::new(height, bins, *range_resolution, timestamp, intensities)
        }
    }
}

pub fn decode_raw_scan(bytes: &[u8]) -> Result<PolarScan> {
    if bytes.len() < SCAN_HEADER_LEN {
        return Err(Error::Format(format!(
            "scan header needs {SCAN_HEADER_LEN} bytes, file has {}",
            bytes.len()
        )));
    }
    if &bytes[..4] != SCAN_MAGIC {
        return Err(Error::Format("bad scan magic, expected RPS1".into()));
    }
    let azimuths = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let range_bins = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let range_resolution = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let timestamp = i64::from_le_bytes(bytes[20..28].try_into().unwrap());
    let body = &bytes[SCAN_HEADER_LEN..];
    let expected = azimuths
        .checked_mul(range_bins)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Format("scan dimensions overflow".into()))?;
    if body.len() != expected {
        return Err(Error::Dimension(format!(
            "header declares {azimuths}x{range_bins} ({expected} bytes), body has {} bytes",
            body.len()
        )));
    }
    let intensities = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    PolarScan::new(azimuths, range_bins, range_resolution, timestamp, intensities)
}

pub fn encode_raw_scan(scan: &PolarScan) -> Vec<u8> {
    let mut out = Vec::with_capacity(SCAN_HEADER_LEN + scan.intensities.len() * 4);
    out.extend_from_slice(SCAN_MAGIC);
    out.extend_from_slice(&(scan.azimuths as u32).to_le_bytes());
    out.extend_from_slice(&(scan.range_bins as u32).to_le_bytes());
    out.extend_from_slice(&scan.range_resolution.to_le_bytes());
    out.extend_from_slice(&scan.timestamp.to_le_bytes());
    for v in &scan.intensities {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_scan(scan: &PolarScan, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_raw_scan(scan)).map_err(|e| Error::io(path, e))
}

/// Ground-truth pose sample. `yaw` is counter-clockwise from the world x axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub timestamp: i64,
    pub x: f64,
    pub y: f64,
    pub yaw: f64,
}

impl PoseRecord {
    pub fn new(timestamp: i64, x: f64, y: f64, yaw: f64) -> Self {
        Self {
            timestamp,
            x,
            y,
            yaw: wrap_angle(yaw),
        }
    }

    pub fn distance_to(&self, other: &PoseRecord) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

pub const POSE_HEADER: [&str; 4] = ["timestamp", "x", "y", "yaw"];

pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<PoseRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_poses(file)
}

pub fn read_poses(reader: impl Read) -> Result<Vec<PoseRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| Error::Format(format!("pose header: {e}")))?;
    if header.iter().ne(POSE_HEADER.iter().copied()) {
        return Err(Error::Format(format!(
            "pose header must be `timestamp,x,y,yaw`, got `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut poses: Vec<PoseRecord> = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let record = record.map_err(|e| Error::Format(format!("row {line}: {e}")))?;
        if record.len() != 4 {
            return Err(Error::Format(format!(
                "row {line}: expected 4 fields, got {}",
                record.len()
            )));
        }
        let timestamp: i64 = record[0]
            .parse()
            .map_err(|e| Error::Format(format!("row {line}: timestamp `{}`: {e}", &record[0])))?;
        let mut vals = [0.0f64; 3];
        for (k, v) in vals.iter_mut().enumerate() {
            *v = record[k + 1].parse().map_err(|e| {
                Error::Format(format!("row {line}: {} `{}`: {e}", POSE_HEADER[k + 1], &record[k + 1]))
            })?;
            if !v.is_finite() {
                return Err(Error::Format(format!(
                    "row {line}: {} is not finite",
                    POSE_HEADER[k + 1]
                )));
            }
        }
        if let Some(prev) = poses.last() {
            if timestamp <= prev.timestamp {
                return Err(Error::Order(format!(
                    "row {line}: timestamp {timestamp} does not follow {}",
                    prev.timestamp
                )));
            }
        }
        poses.push(PoseRecord::new(timestamp, vals[0], vals[1], vals[2]));
    }
    Ok(poses)
}

pub fn write_poses(poses: &[PoseRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "{}", POSE_HEADER.join(","))?;
        for p in poses {
            writeln!(w, "{},{},{},{}", p.timestamp, p.x, p.y, p.yaw)?;
        }
        w.flush()
    };
    write(&mut w).map_err(|e| Error::io(path, e))
}

/// Interpolates a pose for every scan timestamp.
///
/// Position is linear in time; yaw follows the shorter arc between knots.
pub fn associate(scan_timestamps: &[i64], poses: &[PoseRecord]) -> Result<Vec<PoseRecord>> {
    let (first, last) = match (poses.first(), poses.last()) {
        (Some(f), Some(l)) => (f.timestamp, l.timestamp),
        _ => {
            if scan_timestamps.is_empty() {
                return Ok(Vec::new());
            }
            return Err(Error::Range("no poses to associate scans with".into()));
        }
    };
    scan_timestamps
        .iter()
        .map(|&t| {
            if t < first || t > last {
                return Err(Error::Range(format!(
                    "scan timestamp {t} outside pose range [{first}, {last}]"
                )));
            }
            let upper = poses.partition_point(|p| p.timestamp < t);
            let hi = &poses[upper];
            if hi.timestamp == t {
                return Ok(*hi);
            }
            let lo = &poses[upper - 1];
            let s = (t - lo.timestamp) as f64 / (hi.timestamp - lo.timestamp) as f64;
            let dyaw = wrap_angle(hi.yaw - lo.yaw);
            Ok(PoseRecord::new(
                t,
                lo.x + s * (hi.x - lo.x),
                lo.y + s * (hi.y - lo.y),
                lo.yaw + s * dyaw,
            ))
        })
        .collect()
}
