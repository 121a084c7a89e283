//! On-disk formats: JSONL manifests and detection streams, the `FOTENSR1`
//! binary tensor container, and score CSV tables.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::DataError;
use crate::geometry::{BoundingBox, LandmarkSet5};

pub const TENSOR_MAGIC: [u8; 8] = *b"FOTENSR1";
const DTYPE_F32: u32 = 0;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Positive rational number, written as `"num/den"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    pub num: u64,
    pub den: u64,
}

impl Rational {
    pub const fn new(num: u64, den: u64) -> Self {
        Rational { num, den }
    }

    pub fn is_positive(&self) -> bool {
        self.num > 0 && self.den > 0
    }

    pub fn as_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Rational {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let num = n.parse::<u64>().map_err(|e| format!("bad numerator {n:?}: {e}"))?;
        let den = d.parse::<u64>().map_err(|e| format!("bad denominator {d:?}: {e}"))?;
        Ok(Rational { num, den })
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Real,
    Fake,
}

impl Label {
    /// 0 for real, 1 for fake.
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Real => 0,
            Label::Fake => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Manipulation {
    None,
    Deepfake,
    FaceSwap,
    Face2Face,
    NeuralTextures,
    Other(String),
}

impl Manipulation {
    pub fn as_str(&self) -> &str {
        match self {
            Manipulation::None => "None",
            Manipulation::Deepfake => "Deepfake",
            Manipulation::FaceSwap => "FaceSwap",
            Manipulation::Face2Face => "Face2Face",
            Manipulation::NeuralTextures => "NeuralTextures",
            Manipulation::Other(s) => s,
        }
    }
}

impl From<&str> for Manipulation {
    fn from(s: &str) -> Self {
        match s {
            "None" => Manipulation::None,
            "Deepfake" => Manipulation::Deepfake,
            "FaceSwap" => Manipulation::FaceSwap,
            "Face2Face" => Manipulation::Face2Face,
            "NeuralTextures" => Manipulation::NeuralTextures,
            other => Manipulation::Other(other.to_string()),
        }
    }
}

impl Serialize for Manipulation {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Manipulation {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(Manipulation::from(s.as_str()))
    }
}

/// One line of a video manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoManifestEntry {
    pub video_id: String,
    pub label: Label,
    pub manipulation: Manipulation,
    pub frames_uri: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audio_uri: Option<PathBuf>,
    pub fps: Rational,
    pub sample_rate: u32,
    pub num_frames: usize,
    /// Free-form category tags used by filtered evaluation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tags: Vec<String>,
}

impl VideoManifestEntry {
    pub fn validate(&self) -> Result<(), String> {
        if !self.fps.is_positive() {
            return Err(format!("fps must be positive, got {}", self.fps));
        }
        if self.sample_rate == 0 {
            return Err("sample_rate must be positive".into());
        }
        if self.num_frames == 0 {
            return Err("num_frames must be at least 1".into());
        }
        if self.label == Label::Real && self.manipulation != Manipulation::None {
            return Err(format!(
                "real video carries manipulation {}",
                self.manipulation.as_str()
            ));
        }
        Ok(())
    }
}

fn read_jsonl_lines(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    let mut buf = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut buf, row).map_err(|e| DataError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

/// Parses manifest JSONL text; line numbers in errors are 1-based.
pub fn parse_manifest(text: &str) -> Result<Vec<VideoManifestEntry>, DataError> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        entries.push(parse_manifest_line(i + 1, line)?);
    }
    Ok(entries)
}

fn parse_manifest_line(line_no: usize, line: &str) -> Result<VideoManifestEntry, DataError> {
    let entry: VideoManifestEntry = serde_json::from_str(line).map_err(|e| DataError::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    entry.validate().map_err(|message| DataError::Invariant {
        line: line_no,
        message,
    })?;
    Ok(entry)
}

pub fn read_manifest(path: &Path) -> Result<Vec<VideoManifestEntry>, DataError> {
    read_jsonl_lines(path)?
        .into_iter()
        .map(|(n, l)| parse_manifest_line(n, &l))
        .collect()
}

pub fn write_manifest(path: &Path, entries: &[VideoManifestEntry]) -> Result<(), DataError> {
    write_jsonl(path, entries)
}

/// Reads any JSONL file of `T` rows.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, DataError> {
    read_jsonl_lines(path)?
        .into_iter()
        .map(|(n, l)| {
            serde_json::from_str(&l).map_err(|e| DataError::Parse {
                line: n,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), DataError> {
    write_jsonl(path, rows)
}

// ---------------------------------------------------------------------------
// FOTENSR1 tensors
// ---------------------------------------------------------------------------

/// A dense f32 tensor as stored in a `FOTENSR1` file.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self, DataError> {
        let expected = element_count(&dims)?;
        if expected != data.len() {
            return Err(DataError::LengthMismatch {
                expected,
                found: data.len(),
            });
        }
        Ok(Tensor { dims, data })
    }
}

fn element_count(dims: &[usize]) -> Result<usize, DataError> {
    let overflow = || DataError::DimOverflow(dims.iter().map(|&d| d as u64).collect());
    if dims.iter().any(|&d| d == 0) {
        return Err(overflow());
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|n| n.checked_mul(4).is_some())
        .ok_or_else(overflow)
}

pub fn encode_tensor(dims: &[usize], data: &[f32]) -> Result<Vec<u8>, DataError> {
    let expected = element_count(dims)?;
    if expected != data.len() {
        return Err(DataError::LengthMismatch {
            expected,
            found: data.len(),
        });
    }
    let mut out = Vec::with_capacity(16 + 8 * dims.len() + 4 * data.len());
    out.extend_from_slice(&TENSOR_MAGIC);
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor, DataError> {
    let truncated = |expected: usize| DataError::TruncatedPayload {
        expected,
        found: bytes.len(),
    };
    if bytes.len() < 16 {
        return Err(truncated(16));
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[..8]);
    if magic != TENSOR_MAGIC {
        return Err(DataError::BadMagic { found: magic });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let dtype = u32_at(8);
    if dtype != DTYPE_F32 {
        return Err(DataError::UnsupportedDtype(dtype));
    }
    let ndim = u32_at(12) as usize;
    let header = ndim
        .checked_mul(8)
        .and_then(|n| n.checked_add(16))
        .ok_or_else(|| DataError::DimOverflow(vec![]))?;
    if bytes.len() < header {
        return Err(truncated(header));
    }
    let raw_dims: Vec<u64> = (0..ndim)
        .map(|i| u64::from_le_bytes(bytes[16 + 8 * i..24 + 8 * i].try_into().unwrap()))
        .collect();
    let dims: Vec<usize> = raw_dims
        .iter()
        .map(|&d| usize::try_from(d))
        .collect::<Result<_, _>>()
        .map_err(|_| DataError::DimOverflow(raw_dims.clone()))?;
    let count = element_count(&dims).map_err(|_| DataError::DimOverflow(raw_dims.clone()))?;
    let expected = header + count * 4;
    if bytes.len() < expected {
        return Err(truncated(expected));
    }
    let data = bytes[header..expected]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn write_tensor(path: &Path, dims: &[usize], data: &[f32]) -> Result<(), DataError> {
    let bytes = encode_tensor(dims, data)?;
    write_atomic(path, &bytes)
}

pub fn read_tensor(path: &Path) -> Result<Tensor, DataError> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err(path))?;
    decode_tensor(&bytes)
}

// ---------------------------------------------------------------------------
// Detections
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct FaceDetection {
    pub bbox: BoundingBox,
    pub confidence: f32,
    pub landmarks: Option<LandmarkSet5>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameDetections {
    pub frame_index: usize,
    pub faces: Vec<FaceDetection>,
}

#[derive(Serialize, Deserialize)]
struct RawFace {
    bbox: BoundingBox,
    confidence: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    landmarks: Option<Vec<[f32; 2]>>,
}

#[derive(Serialize, Deserialize)]
struct RawFrame {
    frame_index: usize,
    faces: Vec<RawFace>,
}

fn frame_from_raw(line: usize, raw: RawFrame) -> Result<FrameDetections, DataError> {
    let invariant = |message: String| DataError::Invariant { line, message };
    let mut faces = Vec::with_capacity(raw.faces.len());
    for f in raw.faces {
        if !(0.0..=1.0).contains(&f.confidence) {
            return Err(invariant(format!("confidence {} outside [0,1]", f.confidence)));
        }
        if !(f.bbox.w >= 0.0 && f.bbox.h >= 0.0) {
            return Err(invariant(format!("negative box size {:?}", f.bbox)));
        }
        let landmarks = match f.landmarks {
            None => None,
            Some(pts) => {
                let pts: [[f32; 2]; 5] = pts.as_slice().try_into().map_err(|_| {
                    invariant(format!("expected exactly 5 landmarks, got {}", pts.len()))
                })?;
                if pts.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(invariant("non-finite landmark".into()));
                }
                Some(LandmarkSet5 { points: pts })
            }
        };
        faces.push(FaceDetection {
            bbox: f.bbox,
            confidence: f.confidence,
            landmarks,
        });
    }
    Ok(FrameDetections {
        frame_index: raw.frame_index,
        faces,
    })
}

fn collect_detections(
    lines: impl IntoIterator<Item = (usize, String)>,
) -> Result<BTreeMap<usize, FrameDetections>, DataError> {
    let mut map = BTreeMap::new();
    let mut prev: Option<usize> = None;
    for (n, line) in lines {
        let raw: RawFrame = serde_json::from_str(&line).map_err(|e| DataError::Parse {
            line: n,
            message: e.to_string(),
        })?;
        if let Some(p) = prev {
            if raw.frame_index <= p {
                return Err(DataError::NonMonotoneFrames {
                    prev: p,
                    next: raw.frame_index,
                });
            }
        }
        prev = Some(raw.frame_index);
        let frame = frame_from_raw(n, raw)?;
        map.insert(frame.frame_index, frame);
    }
    Ok(map)
}

pub fn parse_detections(text: &str) -> Result<BTreeMap<usize, FrameDetections>, DataError> {
    collect_detections(
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| (i + 1, l.to_string())),
    )
}

pub fn read_detections(path: &Path) -> Result<BTreeMap<usize, FrameDetections>, DataError> {
    collect_detections(read_jsonl_lines(path)?)
}

pub fn encode_detections<'a>(frames: impl IntoIterator<Item = &'a FrameDetections>) -> String {
    let mut out = String::new();
    for f in frames {
        let raw = RawFrame {
            frame_index: f.frame_index,
            faces: f
                .faces
                .iter()
                .map(|d| RawFace {
                    bbox: d.bbox,
                    confidence: d.confidence,
                    landmarks: d.landmarks.map(|l| l.points.to_vec()),
                })
                .collect(),
        };
        out.push_str(&serde_json::to_string(&raw).expect("detections serialize"));
        out.push('\n');
    }
    out
}

pub fn write_detections<'a>(
    path: &Path,
    frames: impl IntoIterator<Item = &'a FrameDetections>,
) -> Result<(), DataError> {
    write_atomic(path, encode_detections(frames).as_bytes())
}

// ---------------------------------------------------------------------------
// Scores
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub video_id: String,
    pub track_id: usize,
    pub clip_index: usize,
    pub score: f32,
}

pub const SCORE_HEADER: &str = "video_id,track_id,clip_index,score";

/// Renders scores as CSV with 6-decimal fixed-point scores.
pub fn encode_scores(records: &[ScoreRecord]) -> Result<String, DataError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| DataError::Csv(e.to_string());
    w.write_record(SCORE_HEADER.split(',')).map_err(csv_err)?;
    for r in records {
        if !(0.0..=1.0).contains(&r.score) {
            return Err(DataError::Invariant {
                line: 0,
                message: format!("score {} outside [0,1]", r.score),
            });
        }
        w.write_record([
            r.video_id.clone(),
            r.track_id.to_string(),
            r.clip_index.to_string(),
            format!("{:.6}", r.score),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| DataError::Csv(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<(), DataError> {
    write_atomic(path, encode_scores(records)?.as_bytes())
}

pub fn parse_scores<R: Read>(reader: R) -> Result<Vec<ScoreRecord>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| DataError::Csv(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>().join(",") != SCORE_HEADER {
        return Err(DataError::Parse {
            line: 1,
            message: format!("expected header {SCORE_HEADER}"),
        });
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| DataError::Csv(e.to_string()))?;
        let field = |k: usize| rec.get(k).unwrap_or("");
        let parse_err = |m: String| DataError::Parse { line, message: m };
        let record = ScoreRecord {
            video_id: field(0).to_string(),
            track_id: field(1).parse().map_err(|e| parse_err(format!("track_id: {e}")))?,
            clip_index: field(2).parse().map_err(|e| parse_err(format!("clip_index: {e}")))?,
            score: field(3).parse().map_err(|e| parse_err(format!("score: {e}")))?,
        };
        if !(0.0..=1.0).contains(&record.score) {
            return Err(DataError::Invariant {
                line,
                message: format!("score {} outside [0,1]", record.score),
            });
        }
        out.push(record);
    }
    Ok(out)
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_scores(file)
}

// ---------------------------------------------------------------------------
// Embedding tables
// ---------------------------------------------------------------------------

/// Row metadata of an embedding table (`examples.jsonl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRow {
    pub video_id: String,
    pub track_id: usize,
    pub clip_index: usize,
    pub label: Label,
}

/// Per-clip modality embeddings: `zv.ft` `[N, d_v]`, optional `za.ft`
/// `[N, d_a]`, and `examples.jsonl` with one row per clip.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub rows: Vec<EmbeddingRow>,
    pub dim_v: usize,
    pub dim_a: usize,
    pub zv: Vec<f32>,
    pub za: Vec<f32>,
}

impl EmbeddingTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn visual(&self, i: usize) -> &[f32] {
        &self.zv[i * self.dim_v..(i + 1) * self.dim_v]
    }

    /// `None` for audio-less tables.
    pub fn audio(&self, i: usize) -> Option<&[f32]> {
        (self.dim_a > 0).then(|| &self.za[i * self.dim_a..(i + 1) * self.dim_a])
    }
}

pub fn write_embedding_table(dir: &Path, table: &EmbeddingTable) -> Result<(), DataError> {
    let n = table.rows.len();
    write_tensor(&dir.join("zv.ft"), &[n, table.dim_v], &table.zv)?;
    if table.dim_a > 0 {
        write_tensor(&dir.join("za.ft"), &[n, table.dim_a], &table.za)?;
    }
    write_jsonl(&dir.join("examples.jsonl"), &table.rows)
}

pub fn read_embedding_table(dir: &Path) -> Result<EmbeddingTable, DataError> {
    let rows: Vec<EmbeddingRow> = read_jsonl(&dir.join("examples.jsonl"))?;
    let zv = read_tensor(&dir.join("zv.ft"))?;
    let shape_err = |what: &str, dims: &[usize]| DataError::Invariant {
        line: 0,
        message: format!("{what} has dims {dims:?}, expected [{}, d]", rows.len()),
    };
    if zv.dims.len() != 2 || zv.dims[0] != rows.len() {
        return Err(shape_err("zv.ft", &zv.dims));
    }
    let za_path = dir.join("za.ft");
    let (dim_a, za) = if za_path.exists() {
        let za = read_tensor(&za_path)?;
        if za.dims.len() != 2 || za.dims[0] != rows.len() {
            return Err(shape_err("za.ft", &za.dims));
        }
        (za.dims[1], za.data)
    } else {
        (0, Vec::new())
    };
    Ok(EmbeddingTable {
        dim_v: zv.dims[1],
        zv: zv.data,
        dim_a,
        za,
        rows,
    })
}

/// Writes a JSON document atomically with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| DataError::Parse {
        line: 0,
        message: e.to_string(),
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| DataError::Parse {
        line: e.line(),
        message: e.to_string(),
    })
}
