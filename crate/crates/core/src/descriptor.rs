//! Frequency-domain descriptors and their on-disk store.
//!
//! A descriptor row is the DFT over `l` of one sinogram column. Descriptors
//! are built in `f64` and persisted as interleaved little-endian `f32`
//! `(re, im)` pairs; anything read back from a store is therefore exactly
//! representable in `f32`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};

use rustfft::num_complex::{Complex32, Complex64};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radon::Sinogram;

pub const STORE_MAGIC: &[u8; 4] = b"RPDB";
pub const STORE_VERSION: u16 = 1;
pub const STORE_HEADER_LEN: u64 = 4 + 2 + 2 + 4 + 4 + 8;
pub const DEFAULT_COARSE_FACTOR: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resolution {
    Fine,
    Coarse,
}

impl Resolution {
    pub fn tag(self) -> u16 {
        match self {
            Resolution::Fine => 0,
            Resolution::Coarse => 1,
        }
    }

    pub fn from_tag(tag: u16) -> Result<Self> {
        match tag {
            0 => Ok(Resolution::Fine),
            1 => Ok(Resolution::Coarse),
            t => Err(Error::Format(format!("unknown resolution tag {t}"))),
        }
    }
}

/// Per-angle spectra `I(θ, f)` of a sinogram, row-major by `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct RadarDescriptor {
    n_theta: usize,
    n_l: usize,
    resolution: Resolution,
    source_id: u64,
    rows: Vec<Complex64>,
}

impl RadarDescriptor {
    pub fn from_rows(
        n_theta: usize,
        n_l: usize,
        resolution: Resolution,
        source_id: u64,
        rows: Vec<Complex64>,
    ) -> Result<Self> {
        if rows.len() != n_theta * n_l {
            return Err(Error::Dimension(format!(
                "{n_theta}x{n_l} descriptor needs {} values, got {}",
                n_theta * n_l,
                rows.len()
            )));
        }
        Ok(Self {
            n_theta,
            n_l,
            resolution,
            source_id,
            rows,
        })
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_l(&self) -> usize {
        self.n_l
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn source_id(&self) -> u64 {
        self.source_id
    }

    pub fn with_source_id(mut self, source_id: u64) -> Self {
        self.source_id = source_id;
        self
    }

    pub fn row(&self, j: usize) -> &[Complex64] {
        &self.rows[j * self.n_l..(j + 1) * self.n_l]
    }

    pub fn values(&self) -> &[Complex64] {
        &self.rows
    }

    /// Same descriptor rounded to store precision.
    pub fn quantized(&self) -> RadarDescriptor {
        RadarDescriptor {
            rows: self
                .rows
                .iter()
                .map(|c| Complex64::new(c.re as f32 as f64, c.im as f32 as f64))
                .collect(),
            ..self.clone()
        }
    }

    pub fn to_f32(&self) -> Vec<Complex32> {
        self.rows
            .iter()
            .map(|c| Complex32::new(c.re as f32, c.im as f32))
            .collect()
    }

    /// Store-precision half spectra in the planar layout [`FrameSource`]
    /// hands out.
    pub fn half_spectrum(&self) -> Vec<f32> {
        let half = half_len(self.n_l);
        let mut out = Vec::with_capacity(self.n_theta * 2 * half);
        for row in self.rows.chunks_exact(self.n_l.max(1)) {
            out.extend(row[..half].iter().map(|c| c.re as f32));
            out.extend(row[..half].iter().map(|c| c.im as f32));
        }
        out
    }

    /// Inverse of [`make_descriptor`]: recovers the sinogram columns.
    pub fn inverse(&self) -> Vec<f64> {
        let mut planner = FftPlanner::<f64>::new();
        let ifft = planner.plan_fft_inverse(self.n_l);
        let scale = 1.0 / self.n_l as f64;
        let mut buf = self.rows.clone();
        ifft.process(&mut buf);
        buf.iter().map(|c| c.re * scale).collect()
    }
}

/// Transforms every sinogram column along `l`; complex values are kept.
pub fn make_descriptor(sino: &Sinogram, source_id: u64) -> RadarDescriptor {
    let n_l = sino.n_l();
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(n_l);
    let mut rows: Vec<Complex64> = sino.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.process(&mut rows);
    let resolution = if sino.l_factor() > 1 {
        Resolution::Coarse
    } else {
        Resolution::Fine
    };
    RadarDescriptor {
        n_theta: sino.n_theta(),
        n_l,
        resolution,
        source_id,
        rows,
    }
}

/// Averages blocks of `factor` consecutive offsets; a short final block is
/// averaged over its own length.
pub fn downsample_sinogram(sino: &Sinogram, factor: usize) -> Result<Sinogram> {
    if factor < 2 {
        return Err(Error::Parameter(format!(
            "downsample factor must be at least 2, got {factor}"
        )));
    }
    let n_out = sino.n_l().div_ceil(factor);
    let mut values = Vec::with_capacity(n_out * sino.n_theta());
    for col in sino.columns() {
        values.extend(
            col.chunks(factor)
                .map(|block| block.iter().sum::<f64>() / block.len() as f64),
        );
    }
    Ok(Sinogram::from_columns(sino.n_theta(), n_out, values)?
        .with_l_factor(sino.l_factor() * factor))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreHeader {
    pub version: u16,
    pub resolution: Resolution,
    pub n_theta: u32,
    pub n_l: u32,
    pub frame_count: u64,
}

impl StoreHeader {
    /// Complex values per frame.
    pub fn frame_len(&self) -> usize {
        self.n_theta as usize * self.n_l as usize
    }

    pub fn record_bytes(&self) -> u64 {
        self.frame_len() as u64 * 8
    }

    fn encode(&self) -> [u8; STORE_HEADER_LEN as usize] {
        let mut b = [0u8; STORE_HEADER_LEN as usize];
        b[..4].copy_from_slice(STORE_MAGIC);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..8].copy_from_slice(&self.resolution.tag().to_le_bytes());
        b[8..12].copy_from_slice(&self.n_theta.to_le_bytes());
        b[12..16].copy_from_slice(&self.n_l.to_le_bytes());
        b[16..24].copy_from_slice(&self.frame_count.to_le_bytes());
        b
    }

    fn decode(b: &[u8]) -> Result<Self> {
        if b.len() < 4 || &b[..4] != STORE_MAGIC {
            return Err(Error::Format("bad store magic, expected RPDB".into()));
        }
        if b.len() < STORE_HEADER_LEN as usize {
            return Err(Error::Format("truncated store header".into()));
        }
        let version = u16::from_le_bytes([b[4], b[5]]);
        if version != STORE_VERSION {
            return Err(Error::Format(format!(
                "store version {version} unsupported, expected {STORE_VERSION}"
            )));
        }
        Ok(Self {
            version,
            resolution: Resolution::from_tag(u16::from_le_bytes([b[6], b[7]]))?,
            n_theta: u32::from_le_bytes(b[8..12].try_into().unwrap()),
            n_l: u32::from_le_bytes(b[12..16].try_into().unwrap()),
            frame_count: u64::from_le_bytes(b[16..24].try_into().unwrap()),
        })
    }

    /// Checks that a file of `len` bytes holds every declared frame.
    fn check_len(&self, len: u64) -> Result<()> {
        let stride = self.record_bytes();
        let want = STORE_HEADER_LEN + stride * self.frame_count;
        if len < want {
            let body = len.saturating_sub(STORE_HEADER_LEN);
            let frame = body.checked_div(stride).unwrap_or(0);
            return Err(Error::Corruption {
                frame,
                detail: format!("file has {len} bytes, header declares {want}"),
            });
        }
        if len > want {
            return Err(Error::Corruption {
                frame: self.frame_count,
                detail: format!("{} trailing bytes after the last frame", len - want),
            });
        }
        Ok(())
    }
}

/// Length of the non-negative-frequency half of a real signal's DFT.
pub fn half_len(n_l: usize) -> usize {
    n_l / 2 + 1
}

/// Reusable buffers for [`FrameSource::load_half`].
#[derive(Debug, Default)]
pub struct FrameScratch {
    bytes: Vec<u8>,
    values: Vec<f32>,
}

/// Random access to stored frames.
///
/// Rows of a descriptor are spectra of real columns, so matching only needs
/// their first [`half_len`] bins. Sources hand out exactly those in planar
/// form: per row, `half` real parts followed by `half` imaginary parts.
pub trait FrameSource: Sync {
    fn header(&self) -> StoreHeader;

    /// Planar half spectrum of frame `index`, using `scratch` if data must be
    /// copied.
    fn load_half<'a>(&'a self, index: usize, scratch: &'a mut FrameScratch) -> Result<&'a [f32]>;

    fn frame_count(&self) -> usize {
        self.header().frame_count as usize
    }
}

fn check_index(index: usize, len: usize) -> Result<()> {
    if index >= len {
        return Err(Error::Index { index, len });
    }
    Ok(())
}

/// In-memory descriptor database, frames addressed by insertion index.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorStore {
    resolution: Resolution,
    n_theta: usize,
    n_l: usize,
    data: Vec<Complex32>,
}

impl DescriptorStore {
    pub fn new(resolution: Resolution, n_theta: usize, n_l: usize) -> Self {
        Self {
            resolution,
            n_theta,
            n_l,
            data: Vec::new(),
        }
    }

    pub fn with_capacity(resolution: Resolution, n_theta: usize, n_l: usize, frames: usize) -> Self {
        Self {
            data: Vec::with_capacity(frames * n_theta * n_l),
            ..Self::new(resolution, n_theta, n_l)
        }
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_l(&self) -> usize {
        self.n_l
    }

    fn frame_len(&self) -> usize {
        self.n_theta * self.n_l
    }

    pub fn len(&self) -> usize {
        if self.frame_len() == 0 {
            0
        } else {
            self.data.len() / self.frame_len()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Appends a descriptor, narrowing it to store precision. Returns its index.
    pub fn push(&mut self, desc: &RadarDescriptor) -> Result<usize> {
        if (desc.n_theta, desc.n_l) != (self.n_theta, self.n_l) {
            return Err(Error::Dimension(format!(
                "descriptor is {}x{}, store holds {}x{}",
                desc.n_theta, desc.n_l, self.n_theta, self.n_l
            )));
        }
        if desc.resolution != self.resolution {
            return Err(Error::Dimension(format!(
                "descriptor resolution {:?} does not match store {:?}",
                desc.resolution, self.resolution
            )));
        }
        self.push_raw(&desc.to_f32())
    }

    pub(crate) fn push_raw(&mut self, frame: &[Complex32]) -> Result<usize> {
        if frame.len() != self.frame_len() {
            return Err(Error::Dimension(format!(
                "frame has {} values, store expects {}",
                frame.len(),
                self.frame_len()
            )));
        }
        self.data.extend_from_slice(frame);
        Ok(self.len() - 1)
    }

    pub fn frame_data(&self, index: usize) -> Result<&[Complex32]> {
        let len = self.len();
        if index >= len {
            return Err(Error::Index { index, len });
        }
        let n = self.frame_len();
        Ok(&self.data[index * n..(index + 1) * n])
    }

    /// Frame `index` widened back to a descriptor.
    pub fn frame(&self, index: usize) -> Result<RadarDescriptor> {
        let rows = self
            .frame_data(index)?
            .iter()
            .map(|c| Complex64::new(c.re as f64, c.im as f64))
            .collect();
        Ok(RadarDescriptor {
            n_theta: self.n_theta,
            n_l: self.n_l,
            resolution: self.resolution,
            source_id: index as u64,
            rows,
        })
    }

    pub fn header(&self) -> StoreHeader {
        StoreHeader {
            version: STORE_VERSION,
            resolution: self.resolution,
            n_theta: self.n_theta as u32,
            n_l: self.n_l as u32,
            frame_count: self.len() as u64,
        }
    }
}

impl FrameSource for DescriptorStore {
    fn header(&self) -> StoreHeader {
        DescriptorStore::header(self)
    }

    fn load_half<'a>(&'a self, index: usize, scratch: &'a mut FrameScratch) -> Result<&'a [f32]> {
        let frame = self.frame_data(index)?;
        let half = half_len(self.n_l);
        scratch.values.clear();
        for row in frame.chunks_exact(self.n_l) {
            scratch.values.extend(row[..half].iter().map(|c| c.re));
            scratch.values.extend(row[..half].iter().map(|c| c.im));
        }
        Ok(&scratch.values)
    }
}

/// Writes the store through a temporary sibling file that is synced and then
/// renamed into place, so readers never observe a partial store.
pub fn write_store(db: &DescriptorStore, path: impl AsRef<Path>) -> Result<()> {
    let mut w = StoreWriter::create(path, db.resolution, db.n_theta, db.n_l)?;
    for frame in db.data.chunks(db.frame_len().max(1)).take(db.len()) {
        w.append_packed(frame)?;
    }
    w.finish()
}

/// Streams frames to disk; the store only appears at its final path once
/// [`StoreWriter::finish`] succeeds.
#[derive(Debug)]
pub struct StoreWriter {
    path: PathBuf,
    tmp: PathBuf,
    out: BufWriter<File>,
    header: StoreHeader,
    buf: Vec<u8>,
    done: bool,
}

impl StoreWriter {
    pub fn create(path: impl AsRef<Path>, resolution: Resolution, n_theta: usize, n_l: usize) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let tmp = tmp_path(&path);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        let header = StoreHeader {
            version: STORE_VERSION,
            resolution,
            n_theta: n_theta as u32,
            n_l: n_l as u32,
            frame_count: 0,
        };
        let mut out = BufWriter::with_capacity(1 << 20, file);
        out.write_all(&header.encode()).map_err(|e| Error::io(&tmp, e))?;
        Ok(Self {
            path,
            tmp,
            out,
            header,
            buf: Vec::new(),
            done: false,
        })
    }

    pub fn len(&self) -> usize {
        self.header.frame_count as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn append(&mut self, desc: &RadarDescriptor) -> Result<usize> {
        if desc.resolution() != self.header.resolution {
            return Err(Error::Dimension(format!(
                "{:?} descriptor offered to a {:?} store",
                desc.resolution(),
                self.header.resolution
            )));
        }
        if (desc.n_theta(), desc.n_l()) != (self.header.n_theta as usize, self.header.n_l as usize) {
            return Err(Error::Dimension(format!(
                "descriptor is {}x{}, store holds {}x{}",
                desc.n_theta(),
                desc.n_l(),
                self.header.n_theta,
                self.header.n_l
            )));
        }
        self.append_packed(&desc.to_f32())
    }

    fn append_packed(&mut self, frame: &[Complex32]) -> Result<usize> {
        debug_assert_eq!(frame.len(), self.header.frame_len());
        self.buf.clear();
        for c in frame {
            self.buf.extend_from_slice(&c.re.to_le_bytes());
            self.buf.extend_from_slice(&c.im.to_le_bytes());
        }
        self.out.write_all(&self.buf).map_err(|e| Error::io(&self.tmp, e))?;
        self.header.frame_count += 1;
        Ok(self.len() - 1)
    }

    pub fn finish(mut self) -> Result<()> {
        let header = self.header.encode();
        let out = &mut self.out;
        let flushed = out
            .flush()
            .and_then(|_| out.get_ref().write_all_at(&header, 0))
            .and_then(|_| out.get_ref().sync_all());
        flushed.map_err(|e| Error::io(&self.tmp, e))?;
        fs::rename(&self.tmp, &self.path).map_err(|e| Error::io(&self.path, e))?;
        self.done = true;
        Ok(())
    }
}

impl Drop for StoreWriter {
    fn drop(&mut self) {
        if !self.done {
            let _ = fs::remove_file(&self.tmp);
        }
    }
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

fn decode_frame(bytes: &[u8], out: &mut Vec<Complex32>) {
    out.extend(bytes.chunks_exact(8).map(|c| {
        Complex32::new(
            f32::from_le_bytes(c[..4].try_into().unwrap()),
            f32::from_le_bytes(c[4..].try_into().unwrap()),
        )
    }));
}

pub fn read_store(path: impl AsRef<Path>) -> Result<DescriptorStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = BufReader::with_capacity(1 << 20, file);
    let mut head = Vec::with_capacity(STORE_HEADER_LEN as usize);
    (&mut r)
        .take(STORE_HEADER_LEN)
        .read_to_end(&mut head)
        .map_err(|e| Error::io(path, e))?;
    let header = StoreHeader::decode(&head)?;
    header.check_len(len)?;
    let mut db = DescriptorStore::with_capacity(
        header.resolution,
        header.n_theta as usize,
        header.n_l as usize,
        header.frame_count as usize,
    );
    let mut buf = vec![0u8; header.record_bytes() as usize];
    for frame in 0..header.frame_count {
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Corruption {
                frame,
                detail: "unexpected end of file".into(),
            },
            _ => Error::io(path, e),
        })?;
        decode_frame(&buf, &mut db.data);
    }
    Ok(db)
}

/// File-backed store that reads frames on demand with fixed-stride seeks.
#[derive(Debug)]
pub struct StoreFile {
    path: PathBuf,
    file: File,
    header: StoreHeader,
}

impl StoreFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let len = file.metadata().map_err(|e| Error::io(&path, e))?.len();
        let mut head = [0u8; STORE_HEADER_LEN as usize];
        let n = file.read_at(&mut head, 0).map_err(|e| Error::io(&path, e))?;
        let header = StoreHeader::decode(&head[..n])?;
        header.check_len(len)?;
        Ok(Self { path, file, header })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn header(&self) -> StoreHeader {
        self.header
    }

    pub fn read_frame_into(&self, index: usize, out: &mut Vec<Complex32>) -> Result<()> {
        let mut bytes = Vec::new();
        self.read_record(index, &mut bytes)?;
        out.clear();
        decode_frame(&bytes, out);
        Ok(())
    }

    fn read_record(&self, index: usize, bytes: &mut Vec<u8>) -> Result<()> {
        check_index(index, self.header.frame_count as usize)?;
        let stride = self.header.record_bytes();
        bytes.resize(stride as usize, 0);
        self.file
            .read_exact_at(bytes, STORE_HEADER_LEN + stride * index as u64)
            .map_err(|e| Error::io(&self.path, e))
    }

    pub fn frame(&self, index: usize) -> Result<RadarDescriptor> {
        let mut buf = Vec::new();
        self.read_frame_into(index, &mut buf)?;
        RadarDescriptor::from_rows(
            self.header.n_theta as usize,
            self.header.n_l as usize,
            self.header.resolution,
            index as u64,
            buf.iter().map(|c| Complex64::new(c.re as f64, c.im as f64)).collect(),
        )
    }
}

impl FrameSource for StoreFile {
    fn header(&self) -> StoreHeader {
        self.header
    }

    fn load_half<'a>(&'a self, index: usize, scratch: &'a mut FrameScratch) -> Result<&'a [f32]> {
        self.read_record(index, &mut scratch.bytes)?;
        let row_bytes = self.header.n_l as usize * 8;
        let half_bytes = half_len(self.header.n_l as usize) * 8;
        scratch.values.clear();
        if row_bytes > 0 {
            let f = |b: &[u8]| f32::from_le_bytes(b.try_into().unwrap());
            for row in scratch.bytes.chunks_exact(row_bytes) {
                let row = &row[..half_bytes];
                scratch.values.extend(row.chunks_exact(8).map(|c| f(&c[..4])));
                scratch.values.extend(row.chunks_exact(8).map(|c| f(&c[4..])));
            }
        }
        Ok(&scratch.values)
    }
}

/// In-memory store that keeps only the half spectra matching reads, at half
/// the footprint of a [`DescriptorStore`].
#[derive(Debug, Clone)]
pub struct CompactStore {
    header: StoreHeader,
    data: Vec<f32>,
}

impl CompactStore {
    pub fn from_source(src: &dyn FrameSource) -> Result<Self> {
        let header = src.header();
        let len = header.n_theta as usize * 2 * half_len(header.n_l as usize);
        let mut data = Vec::with_capacity(len * src.frame_count());
        let mut scratch = FrameScratch::default();
        for index in 0..src.frame_count() {
            data.extend_from_slice(src.load_half(index, &mut scratch)?);
        }
        Ok(Self { header, data })
    }

    /// Loads a store file without holding its full spectra in memory.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_source(&StoreFile::open(path)?)
    }

    fn frame_len(&self) -> usize {
        self.header.n_theta as usize * 2 * half_len(self.header.n_l as usize)
    }
}

impl FrameSource for CompactStore {
    fn header(&self) -> StoreHeader {
        self.header
    }

    fn load_half<'a>(&'a self, index: usize, _scratch: &'a mut FrameScratch) -> Result<&'a [f32]> {
        check_index(index, self.header.frame_count as usize)?;
        let n = self.frame_len();
        Ok(&self.data[index * n..(index + 1) * n])
    }
}
