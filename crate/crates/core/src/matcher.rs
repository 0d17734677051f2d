//! Similarity scoring and place retrieval.
//!
//! The correlation between a query and a candidate is the sum over
//! projection angles of the circular cross-correlations of their sinogram
//! columns, computed in the frequency domain. The distance of a candidate is
//! how far its correlation peak falls from the query's own auto-correlation
//! peak; the best place minimizes that distance.
//!
//! Since the inverse DFT is linear, the per-angle cross-power spectra are
//! summed first and a single inverse transform is taken per pair. For real
//! sinograms only the non-negative half of each spectrum is read; the other
//! half is its conjugate mirror.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::descriptor::{half_len, FrameScratch, FrameSource, RadarDescriptor, Resolution, StoreHeader};
use crate::error::{Error, Result};

/// Circular correlation over `l`. Entry `s` compares the candidate advanced
/// by `s` samples: `C[s] = Σ_θ Σ_l q(θ, l) c(θ, l + s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationArray {
    pub values: Vec<f64>,
}

impl CorrelationArray {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Shift of the first maximum.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityDistance {
    pub d: f64,
    /// Peak of the query's auto-correlation.
    pub c_auto: f64,
    /// Peak of the query-candidate correlation.
    pub c_qi: f64,
}

impl SimilarityDistance {
    pub fn new(c_auto: f64, c_qi: f64) -> Self {
        Self {
            d: (c_auto - c_qi).abs(),
            c_auto,
            c_qi,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub index: usize,
    pub distance: SimilarityDistance,
}

impl RankedCandidate {
    fn order(&self, other: &Self) -> Ordering {
        self.distance
            .d
            .total_cmp(&other.distance.d)
            .then(self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub best_index: usize,
    pub best_distance: SimilarityDistance,
    /// Ascending by distance, ties by frame index.
    pub ranked: Vec<RankedCandidate>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    /// Correlation peaks as is.
    #[default]
    Raw,
    /// Peaks divided by the geometric mean of query and candidate energies.
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    /// Offset downsampling of the coarse pass; 1 disables it.
    pub coarse_factor: usize,
    pub coarse_top_k: usize,
    /// Frames on each side of a coarse hit re-scored at full resolution.
    pub neighbor_window: usize,
    /// Frames within this distance of the query index are not candidates.
    pub exclusion_window: usize,
    /// Only every `keyframe_stride`-th frame is a candidate.
    pub keyframe_stride: usize,
    /// Restrict candidates to frames before the query (single-session loop closure).
    pub causal: bool,
    pub score_mode: ScoreMode,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            coarse_factor: crate::descriptor::DEFAULT_COARSE_FACTOR,
            coarse_top_k: 10,
            neighbor_window: 5,
            exclusion_window: 90,
            keyframe_stride: 1,
            causal: false,
            score_mode: ScoreMode::Raw,
        }
    }
}

impl RetrievalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coarse_factor == 0 {
            return Err(Error::Parameter("coarse_factor must be at least 1".into()));
        }
        if self.keyframe_stride == 0 {
            return Err(Error::Parameter("keyframe_stride must be at least 1".into()));
        }
        if self.coarse_top_k == 0 {
            return Err(Error::Parameter("coarse_top_k must be at least 1".into()));
        }
        Ok(())
    }

    pub fn hierarchical(&self) -> bool {
        self.coarse_factor > 1
    }

    pub fn is_admissible(&self, index: usize, query_index: Option<usize>) -> bool {
        if index % self.keyframe_stride != 0 {
            return false;
        }
        match query_index {
            Some(q) => index.abs_diff(q) > self.exclusion_window && !(self.causal && index > q),
            None => true,
        }
    }
}

fn check_pair(q: &RadarDescriptor, c: &RadarDescriptor) -> Result<()> {
    if (q.n_theta(), q.n_l(), q.resolution()) != (c.n_theta(), c.n_l(), c.resolution()) {
        return Err(Error::Dimension(format!(
            "query is {}x{} {:?}, candidate is {}x{} {:?}",
            q.n_theta(),
            q.n_l(),
            q.resolution(),
            c.n_theta(),
            c.n_l(),
            c.resolution()
        )));
    }
    Ok(())
}

/// Frequency-domain cross-correlation of two descriptors, summed over angles.
pub fn cross_correlate(q: &RadarDescriptor, c: &RadarDescriptor) -> Result<CorrelationArray> {
    check_pair(q, c)?;
    let n = q.n_l();
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for j in 0..q.n_theta() {
        for ((acc, a), b) in spectrum.iter_mut().zip(q.row(j)).zip(c.row(j)) {
            *acc += a.conj() * b;
        }
    }
    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut spectrum);
    let scale = 1.0 / n as f64;
    let energy: f64 = q.values().iter().map(|v| v.norm_sqr()).sum::<f64>() * scale;
    let residue = spectrum.iter().map(|v| (v.im * scale).abs()).fold(0.0, f64::max);
    if residue > 1e-6 * energy {
        log::warn!(
            "cross-correlation imaginary residue {residue:.3e} exceeds 1e-6 of energy {energy:.3e}; inputs may not be real sinograms"
        );
    }
    Ok(CorrelationArray {
        values: spectrum.iter().map(|v| v.re * scale).collect(),
    })
}

/// Distance of candidate `c` from query `q` against the query's own
/// auto-correlation peak.
pub fn similarity_distance(q: &RadarDescriptor, c: &RadarDescriptor) -> Result<SimilarityDistance> {
    let c_qi = cross_correlate(q, c)?.max();
    let c_auto = cross_correlate(q, q)?.max();
    Ok(SimilarityDistance::new(c_auto, c_qi))
}

/// Query spectra prepared for repeated scoring against packed store frames.
///
/// The query is rounded to store precision first, so a stored copy of the
/// same descriptor scores exactly `d = 0`.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    n_theta: usize,
    n_l: usize,
    resolution: Resolution,
    re: Vec<f64>,
    im: Vec<f64>,
    energy: f64,
    c_auto: f64,
    mode: ScoreMode,
}

/// Reusable buffers for one scoring worker.
pub struct ScoreScratch {
    acc_re: Vec<f64>,
    acc_im: Vec<f64>,
    spectrum: Vec<Complex64>,
    fft_scratch: Vec<Complex64>,
    frame: FrameScratch,
}

/// Scores packed frames of one geometry.
#[derive(Clone)]
pub struct Scorer {
    n_l: usize,
    half: usize,
    ifft: Arc<dyn Fft<f64>>,
    /// Wider vectors for the accumulation; the arithmetic is the same.
    avx2: bool,
}

impl std::fmt::Debug for Scorer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scorer").field("n_l", &self.n_l).finish()
    }
}

impl Scorer {
    pub fn new(n_l: usize) -> Self {
        let ifft = FftPlanner::<f64>::new().plan_fft_inverse(n_l);
        #[cfg(target_arch = "x86_64")]
        let avx2 = std::arch::is_x86_feature_detected!("avx2");
        #[cfg(not(target_arch = "x86_64"))]
        let avx2 = false;
        Self {
            n_l,
            half: half_len(n_l),
            ifft,
            avx2,
        }
    }

    pub fn scratch(&self) -> ScoreScratch {
        ScoreScratch {
            acc_re: vec![0.0; self.half],
            acc_im: vec![0.0; self.half],
            spectrum: vec![Complex64::new(0.0, 0.0); self.n_l],
            fft_scratch: vec![Complex64::new(0.0, 0.0); self.ifft.get_inplace_scratch_len()],
            frame: FrameScratch::default(),
        }
    }

    pub fn prepare(&self, q: &RadarDescriptor, mode: ScoreMode) -> Result<PreparedQuery> {
        if q.n_l() != self.n_l {
            return Err(Error::Dimension(format!(
                "query has {} offsets, scorer expects {}",
                q.n_l(),
                self.n_l
            )));
        }
        let (n_theta, n_l) = (q.n_theta(), q.n_l());
        let packed = q.half_spectrum();
        let half = self.half;
        let mut re = Vec::with_capacity(n_theta * half);
        let mut im = Vec::with_capacity(n_theta * half);
        for row in packed.chunks_exact(2 * half) {
            re.extend(row[..half].iter().map(|&v| v as f64));
            im.extend(row[half..].iter().map(|&v| v as f64));
        }
        let mut prepared = PreparedQuery {
            n_theta,
            n_l,
            resolution: q.resolution(),
            re,
            im,
            energy: 0.0,
            c_auto: 0.0,
            mode,
        };
        prepared.energy = self.energy(&prepared, &packed);
        let mut scratch = self.scratch();
        prepared.c_auto = self.peak(&prepared, &packed, &mut scratch);
        Ok(prepared)
    }

    /// `Σ_θ Σ_l c²` from the half spectrum (Parseval).
    fn energy(&self, q: &PreparedQuery, frame: &[f32]) -> f64 {
        let (n, half) = (self.n_l, self.half);
        let mut total = 0.0;
        for row in frame.chunks_exact(2 * half) {
            let (re, im) = row.split_at(half);
            for f in 0..half {
                let w = if f == 0 || 2 * f == n { 1.0 } else { 2.0 };
                total += w * (re[f] as f64 * re[f] as f64 + im[f] as f64 * im[f] as f64);
            }
        }
        debug_assert_eq!(frame.len(), q.n_theta * 2 * half);
        total / n as f64
    }

    /// Peak of the angle-summed circular cross-correlation.
    fn peak(&self, q: &PreparedQuery, frame: &[f32], s: &mut ScoreScratch) -> f64 {
        let (n, half) = (self.n_l, self.half);
        s.acc_re.iter_mut().for_each(|v| *v = 0.0);
        s.acc_im.iter_mut().for_each(|v| *v = 0.0);
        #[cfg(target_arch = "x86_64")]
        if self.avx2 {
            // SAFETY: the CPU reported AVX2 when the scorer was built.
            unsafe { accumulate_avx2(q, frame, half, &mut s.acc_re, &mut s.acc_im) };
        } else {
            accumulate(q, frame, half, &mut s.acc_re, &mut s.acc_im);
        }
        #[cfg(not(target_arch = "x86_64"))]
        accumulate(q, frame, half, &mut s.acc_re, &mut s.acc_im);
        s.spectrum[0] = Complex64::new(s.acc_re[0], 0.0);
        for f in 1..half {
            let v = Complex64::new(s.acc_re[f], s.acc_im[f]);
            if 2 * f == n {
                s.spectrum[f] = Complex64::new(v.re, 0.0);
            } else {
                s.spectrum[f] = v;
                s.spectrum[n - f] = v.conj();
            }
        }
        self.ifft.process_with_scratch(&mut s.spectrum, &mut s.fft_scratch);
        let peak = s.spectrum.iter().map(|v| v.re).fold(f64::NEG_INFINITY, f64::max);
        peak / n as f64
    }

    /// Distance of one frame, given as half spectra, from the prepared query.
    pub fn score(&self, q: &PreparedQuery, frame: &[f32], s: &mut ScoreScratch) -> SimilarityDistance {
        let c_qi = self.peak(q, frame, s);
        match q.mode {
            ScoreMode::Raw => SimilarityDistance::new(q.c_auto, c_qi),
            ScoreMode::Normalized => {
                let e_c = self.energy(q, frame);
                let norm = |v: f64, e: f64| if e > 0.0 { v / e.sqrt() } else { 0.0 };
                SimilarityDistance::new(
                    norm(q.c_auto, q.energy * q.energy),
                    norm(c_qi, q.energy * e_c),
                )
            }
        }
    }
}

/// `Σ_θ conj(q) · c` into `acc`, over equal-length plain arrays so the
/// loop vectorizes.
#[inline(always)]
fn accumulate(q: &PreparedQuery, frame: &[f32], half: usize, acc_re: &mut [f64], acc_im: &mut [f64]) {
    let (ar, ai) = (&mut acc_re[..half], &mut acc_im[..half]);
    for (j, row) in frame.chunks_exact(2 * half).enumerate() {
        let (cr, ci) = row.split_at(half);
        let qr = &q.re[j * half..(j + 1) * half];
        let qi = &q.im[j * half..(j + 1) * half];
        for f in 0..half {
            let (cr, ci) = (cr[f] as f64, ci[f] as f64);
            ar[f] += qr[f] * cr + qi[f] * ci;
            ai[f] += qr[f] * ci - qi[f] * cr;
        }
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn accumulate_avx2(q: &PreparedQuery, frame: &[f32], half: usize, acc_re: &mut [f64], acc_im: &mut [f64]) {
    accumulate(q, frame, half, acc_re, acc_im)
}

impl PreparedQuery {
    pub fn c_auto(&self) -> f64 {
        self.c_auto
    }

    fn check_source(&self, header: &StoreHeader) -> Result<()> {
        if (header.n_theta as usize, header.n_l as usize, header.resolution)
            != (self.n_theta, self.n_l, self.resolution)
        {
            return Err(Error::Dimension(format!(
                "query is {}x{} {:?}, store holds {}x{} {:?}",
                self.n_theta, self.n_l, self.resolution, header.n_theta, header.n_l, header.resolution
            )));
        }
        Ok(())
    }
}

/// Scores `indices` against `db` in parallel. Output order follows `indices`.
pub fn score_frames(
    scorer: &Scorer,
    query: &PreparedQuery,
    db: &dyn FrameSource,
    indices: &[usize],
) -> Result<Vec<RankedCandidate>> {
    query.check_source(&db.header())?;
    indices
        .par_iter()
        .map_init(
            || scorer.scratch(),
            |scratch, &index| {
                let mut frame = std::mem::take(&mut scratch.frame);
                let out = db.load_half(index, &mut frame).map(|data| RankedCandidate {
                    index,
                    distance: scorer.score(query, data, scratch),
                });
                scratch.frame = frame;
                out
            },
        )
        .collect()
}

fn rank(mut scored: Vec<RankedCandidate>, keep: usize) -> Result<MatchResult> {
    scored.sort_by(RankedCandidate::order);
    let best = *scored.first().ok_or(Error::NoCandidate)?;
    scored.truncate(keep.max(1));
    Ok(MatchResult {
        best_index: best.index,
        best_distance: best.distance,
        ranked: scored,
    })
}

fn admissible(cfg: &RetrievalConfig, frames: usize, query_index: Option<usize>) -> Vec<usize> {
    (0..frames).filter(|&i| cfg.is_admissible(i, query_index)).collect()
}

/// Full-resolution argmin over every admissible frame.
pub fn retrieve_exhaustive(
    q_fine: &RadarDescriptor,
    db_fine: &dyn FrameSource,
    cfg: &RetrievalConfig,
    query_index: Option<usize>,
) -> Result<MatchResult> {
    cfg.validate()?;
    let candidates = admissible(cfg, db_fine.frame_count(), query_index);
    if candidates.is_empty() {
        return Err(Error::NoCandidate);
    }
    let scorer = Scorer::new(q_fine.n_l());
    let query = scorer.prepare(q_fine, cfg.score_mode)?;
    let scored = score_frames(&scorer, &query, db_fine, &candidates)?;
    rank(scored, cfg.coarse_top_k)
}

/// Coarse-to-fine retrieval.
///
/// Every admissible frame is scored on the coarse store; the `coarse_top_k`
/// best, each widened by `neighbor_window` frames on both sides, are
/// re-scored at full resolution and the minimum wins (ties to the lowest
/// index). With `coarse_factor == 1` the coarse pass is skipped.
pub fn retrieve(
    q_fine: &RadarDescriptor,
    q_coarse: &RadarDescriptor,
    db_fine: &dyn FrameSource,
    db_coarse: &dyn FrameSource,
    cfg: &RetrievalConfig,
    query_index: Option<usize>,
) -> Result<MatchResult> {
    cfg.validate()?;
    if !cfg.hierarchical() {
        return retrieve_exhaustive(q_fine, db_fine, cfg, query_index);
    }
    let frames = db_fine.frame_count();
    if db_coarse.frame_count() != frames {
        return Err(Error::Dimension(format!(
            "fine store has {frames} frames, coarse store has {}",
            db_coarse.frame_count()
        )));
    }
    let candidates = admissible(cfg, frames, query_index);
    if candidates.is_empty() {
        return Err(Error::NoCandidate);
    }

    let coarse_scorer = Scorer::new(q_coarse.n_l());
    let coarse_query = coarse_scorer.prepare(q_coarse, cfg.score_mode)?;
    let mut coarse = score_frames(&coarse_scorer, &coarse_query, db_coarse, &candidates)?;
    coarse.sort_by(RankedCandidate::order);

    let mut refine = BTreeSet::new();
    for hit in coarse.iter().take(cfg.coarse_top_k) {
        let lo = hit.index.saturating_sub(cfg.neighbor_window);
        let hi = (hit.index + cfg.neighbor_window).min(frames - 1);
        refine.extend((lo..=hi).filter(|&i| cfg.is_admissible(i, query_index)));
    }
    if refine.is_empty() {
        return Err(Error::NoCandidate);
    }
    let refine: Vec<usize> = refine.into_iter().collect();

    let fine_scorer = Scorer::new(q_fine.n_l());
    let fine_query = fine_scorer.prepare(q_fine, cfg.score_mode)?;
    let scored = score_frames(&fine_scorer, &fine_query, db_fine, &refine)?;
    rank(scored, cfg.coarse_top_k)
}
