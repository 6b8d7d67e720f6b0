//! Perspective-frame grid: coordinates, coding order, weight-channel reduction and
//! the ℓ1 proximity structure used by the consistency model.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{ordered_sum, Scalar};

/// Distance at which two frames stop interacting in the consistency term.
pub const PROXIMITY_RADIUS: u32 = 3;

#[derive(Debug, Error, PartialEq)]
pub enum LightfieldError {
    #[error("frame has no weight channel")]
    WeightChannelAbsent,
    #[error("all raw frame weights are zero; cannot rescale")]
    DegenerateWeights,
    #[error("invalid weight {value} for frame {coord}")]
    InvalidWeight { coord: FrameCoord, value: f64 },
    #[error("pixel buffer of length {len} does not match {width}x{height}")]
    ShapeMismatch { width: usize, height: usize, len: usize },
    #[error("grid must have at least one frame")]
    EmptyGrid,
    #[error("coding order is not a permutation of the {width}x{height} grid: {reason}")]
    BadOrder { width: usize, height: usize, reason: String },
    #[error("parse error: {0}")]
    Parse(String),
}

/// Integer position of a perspective frame on the uv plane. `u` is the column, `v` the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FrameCoord {
    pub u: usize,
    pub v: usize,
}

impl FrameCoord {
    pub const fn new(u: usize, v: usize) -> Self {
        Self { u, v }
    }
}

impl fmt::Display for FrameCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.u, self.v)
    }
}

impl FromStr for FrameCoord {
    type Err = LightfieldError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (u, v) = s
            .split_once(',')
            .ok_or_else(|| LightfieldError::Parse(format!("expected \"u,v\", got {s:?}")))?;
        let parse = |t: &str| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| LightfieldError::Parse(format!("{s:?}: {e}")))
        };
        Ok(Self::new(parse(u)?, parse(v)?))
    }
}

/// ℓ1 distance between two frame positions.
pub fn l1_distance(a: FrameCoord, b: FrameCoord) -> u32 {
    (a.u.abs_diff(b.u) + a.v.abs_diff(b.v)) as u32
}

/// Proximity weight `max(0, 3 - d)`. Includes the self-pair (value 3).
pub fn proximity(a: FrameCoord, b: FrameCoord) -> u32 {
    PROXIMITY_RADIUS.saturating_sub(l1_distance(a, b))
}

/// The uv grid together with the order in which frames are coded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameGrid {
    width: usize,
    height: usize,
    coding_order: Vec<FrameCoord>,
}

impl FrameGrid {
    /// Builds a grid with an explicit coding order, which must visit every
    /// coordinate exactly once.
    pub fn new(width: usize, height: usize, coding_order: Vec<FrameCoord>) -> Result<Self, LightfieldError> {
        if width == 0 || height == 0 {
            return Err(LightfieldError::EmptyGrid);
        }
        let bad = |reason: String| LightfieldError::BadOrder { width, height, reason };
        if coding_order.len() != width * height {
            return Err(bad(format!("expected {} frames, got {}", width * height, coding_order.len())));
        }
        let mut seen = HashSet::with_capacity(coding_order.len());
        for &c in &coding_order {
            if c.u >= width || c.v >= height {
                return Err(bad(format!("{c} lies outside the grid")));
            }
            if !seen.insert(c) {
                return Err(bad(format!("{c} appears twice")));
            }
        }
        Ok(Self { width, height, coding_order })
    }

    /// Row-major (raster) order. Mostly useful in tests; the allocator accepts any order.
    pub fn raster(width: usize, height: usize) -> Result<Self, LightfieldError> {
        let order = (0..height)
            .flat_map(|v| (0..width).map(move |u| FrameCoord::new(u, v)))
            .collect();
        Self::new(width, height, order)
    }

    /// Clockwise spiral starting at `(width/2, height/2)` and stepping right first.
    pub fn spiral(width: usize, height: usize) -> Result<Self, LightfieldError> {
        Self::new(width, height, spiral_order(width, height))
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.coding_order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coding_order.is_empty()
    }

    pub fn coding_order(&self) -> &[FrameCoord] {
        &self.coding_order
    }

    pub fn contains(&self, c: FrameCoord) -> bool {
        c.u < self.width && c.v < self.height
    }

    /// Position of `c` in the coding order.
    pub fn index_of(&self, c: FrameCoord) -> Option<usize> {
        self.coding_order.iter().position(|&x| x == c)
    }

    /// Ordered pairs `(i, j)` of coding-order indices with `i != j` and nonzero proximity,
    /// together with the proximity value. Emitted in row-major `(i, j)` order.
    pub fn neighbor_pairs(&self) -> Vec<(usize, usize, u32)> {
        let order = &self.coding_order;
        let mut pairs = Vec::new();
        for (i, &a) in order.iter().enumerate() {
            for (j, &b) in order.iter().enumerate() {
                if i == j {
                    continue;
                }
                let delta = proximity(a, b);
                if delta > 0 {
                    pairs.push((i, j, delta));
                }
            }
        }
        pairs
    }

    pub fn to_text(&self) -> String {
        let file = GridFile {
            width: self.width,
            height: self.height,
            order: self.coding_order.iter().map(ToString::to_string).collect(),
        };
        toml::to_string(&file).expect("grid serializes")
    }

    pub fn from_text(text: &str) -> Result<Self, LightfieldError> {
        let file: GridFile = toml::from_str(text).map_err(|e| LightfieldError::Parse(e.to_string()))?;
        let order = file
            .order
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<FrameCoord>, _>>()?;
        Self::new(file.width, file.height, order)
    }
}

#[derive(Serialize, Deserialize)]
struct GridFile {
    width: usize,
    height: usize,
    order: Vec<String>,
}

/// Clockwise spiral over a `width x height` grid, beginning at the central
/// coordinate and moving right, then down, left, up with run lengths 1,1,2,2,3,3,...
/// Positions that fall outside the grid are skipped.
pub fn spiral_order(width: usize, height: usize) -> Vec<FrameCoord> {
    let total = width * height;
    let mut out = Vec::with_capacity(total);
    if total == 0 {
        return out;
    }
    const DIRS: [(i64, i64); 4] = [(1, 0), (0, 1), (-1, 0), (0, -1)];
    let (mut u, mut v) = ((width / 2) as i64, (height / 2) as i64);
    let push = |u: i64, v: i64, out: &mut Vec<FrameCoord>| {
        if u >= 0 && v >= 0 && (u as usize) < width && (v as usize) < height {
            out.push(FrameCoord::new(u as usize, v as usize));
        }
    };
    push(u, v, &mut out);
    let mut run = 1;
    let mut dir = 0;
    while out.len() < total {
        for _ in 0..2 {
            let (du, dv) = DIRS[dir];
            for _ in 0..run {
                u += du;
                v += dv;
                push(u, v, &mut out);
            }
            dir = (dir + 1) % 4;
        }
        run += 1;
    }
    out
}

/// One perspective image, row-major, with an optional per-pixel weight channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelFrame<T> {
    width: usize,
    height: usize,
    samples: Vec<T>,
    weights: Option<Vec<T>>,
}

impl<T: Scalar> PixelFrame<T> {
    pub fn new(width: usize, height: usize, samples: Vec<T>) -> Result<Self, LightfieldError> {
        if samples.len() != width * height || samples.is_empty() {
            return Err(LightfieldError::ShapeMismatch { width, height, len: samples.len() });
        }
        Ok(Self { width, height, samples, weights: None })
    }

    /// Builds a frame from rows of samples (outer index is the row).
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, LightfieldError> {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != width) {
            return Err(LightfieldError::ShapeMismatch { width, height, len: rows.iter().map(Vec::len).sum() });
        }
        Self::new(width, height, rows.concat())
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Result<Self, LightfieldError> {
        if weights.len() != self.samples.len() {
            return Err(LightfieldError::ShapeMismatch { width: self.width, height: self.height, len: weights.len() });
        }
        if let Some(&bad) = weights.iter().find(|w| !(**w >= T::zero()) || !w.is_finite()) {
            return Err(LightfieldError::InvalidWeight { coord: FrameCoord::new(0, 0), value: bad.to_f64_lossy() });
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[T] {
        &self.samples
    }

    pub fn weights(&self) -> Option<&[T]> {
        self.weights.as_deref()
    }
}

/// Mean of the frame's weight channel.
pub fn frame_weight<T: Scalar>(frame: &PixelFrame<T>) -> Result<T, LightfieldError> {
    let weights = frame.weights().ok_or(LightfieldError::WeightChannelAbsent)?;
    Ok(ordered_sum(weights.iter().copied()) / T::of_usize(weights.len()))
}

/// Raw per-frame weights and their rescaling into `[0, 1]` by the maximum.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet<T> {
    raw: BTreeMap<FrameCoord, T>,
    unified: BTreeMap<FrameCoord, T>,
}

impl<T: Scalar> WeightSet<T> {
    pub fn raw(&self) -> &BTreeMap<FrameCoord, T> {
        &self.raw
    }

    pub fn unified(&self) -> &BTreeMap<FrameCoord, T> {
        &self.unified
    }

    pub fn unified_weight(&self, c: FrameCoord) -> Option<T> {
        self.unified.get(&c).copied()
    }

    /// Every frame weighted 1.
    pub fn uniform(grid: &FrameGrid) -> Self {
        let raw: BTreeMap<_, _> = grid.coding_order().iter().map(|&c| (c, T::one())).collect();
        Self { unified: raw.clone(), raw }
    }
}

/// Rescales raw weights linearly so that the largest becomes exactly 1.
pub fn unify_weights<T: Scalar>(raw: BTreeMap<FrameCoord, T>) -> Result<WeightSet<T>, LightfieldError> {
    let mut max = T::zero();
    for (&coord, &w) in &raw {
        if !(w >= T::zero()) || !w.is_finite() {
            return Err(LightfieldError::InvalidWeight { coord, value: w.to_f64_lossy() });
        }
        max = max.max(w);
    }
    if max <= T::zero() {
        return Err(LightfieldError::DegenerateWeights);
    }
    let unified = raw.iter().map(|(&c, &w)| (c, if w == max { T::one() } else { w / max })).collect();
    Ok(WeightSet { raw, unified })
}

/// Parses a per-frame weight map: one CSV row per `v`, one value per `u`.
pub fn weights_from_csv<T: Scalar>(text: &str) -> Result<BTreeMap<FrameCoord, T>, LightfieldError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = BTreeMap::new();
    let mut width = None;
    for (v, record) in reader.records().enumerate() {
        let record = record.map_err(|e| LightfieldError::Parse(e.to_string()))?;
        if *width.get_or_insert(record.len()) != record.len() {
            return Err(LightfieldError::Parse(format!("row {} has {} columns", v + 1, record.len())));
        }
        for (u, field) in record.iter().enumerate() {
            let value: f64 = field
                .parse()
                .map_err(|e| LightfieldError::Parse(format!("row {} column {}: {e}", v + 1, u + 1)))?;
            out.insert(FrameCoord::new(u, v), T::of(value));
        }
    }
    if out.is_empty() {
        return Err(LightfieldError::EmptyGrid);
    }
    Ok(out)
}

/// Reads a grayscale PGM (P2 or P5, 8 or 16 bit) as a weight-only frame.
pub fn weight_frame_from_pgm<T: Scalar>(bytes: &[u8]) -> Result<PixelFrame<T>, LightfieldError> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm)
        .map_err(|e| LightfieldError::Parse(e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    let values: Vec<T> = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(|p| T::of(f64::from(p))).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(|p| T::of(f64::from(p))).collect(),
        other => return Err(LightfieldError::Parse(format!("expected grayscale PGM, got {:?}", other.color()))),
    };
    PixelFrame::new(width, height, vec![T::zero(); values.len()])?.with_weights(values)
}
