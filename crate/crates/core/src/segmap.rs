//! Segmentation maps: pooled walkability grids, scene↔pixel calibration and
//! box painting.
//!
//! Cell values are non-walkability weights: `0.0` is freely walkable, `1.0`
//! cannot be entered, and `0.5` marks conditionally walkable ground.
//!
//! Pixel positions are `(row-axis, column-axis)` pairs, so the first scene
//! coordinate maps onto image rows. This matches how court-style datasets
//! (50 × 94 units drawn on a 500 × 939 image) line up with the raster.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec2;

#[derive(Debug, Error)]
pub enum SegmapError {
    #[error("grid must be nonempty, got {height}x{width}")]
    EmptyGrid { height: usize, width: usize },
    #[error("grid has {got} values, expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("pooling target {target:?} exceeds raw grid {raw:?}")]
    PoolTooLarge { target: (usize, usize), raw: (usize, usize) },
    #[error("calibration axis {axis} is rank deficient (scene coordinates do not vary)")]
    RankDeficient { axis: usize },
    #[error("calibration needs at least 2 correspondence pairs, got {0}")]
    TooFewPairs(usize),
    #[error("calibration scale on axis {axis} is zero")]
    ZeroScale { axis: usize },
    #[error("box min corner exceeds max corner")]
    InvertedBox,
    #[error("box label {0} is outside [0, 1]")]
    BadLabel(f64),
    #[error("invalid PGM data: {0}")]
    Pgm(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SegmapError>;

fn check_values(values: &[f64]) -> Result<()> {
    match values
        .iter()
        .position(|v| !(0.0..=1.0).contains(v))
    {
        Some(index) => Err(SegmapError::OutOfRange {
            index,
            value: values[index],
        }),
        None => Ok(()),
    }
}

/// A raw (unpooled) weight image.
#[derive(Debug, Clone, PartialEq)]
pub struct RawGrid {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl RawGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(SegmapError::EmptyGrid { height, width });
        }
        if values.len() != height * width {
            return Err(SegmapError::ShapeMismatch {
                expected: height * width,
                got: values.len(),
            });
        }
        check_values(&values)?;
        Ok(RawGrid {
            height,
            width,
            values,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        RawGrid::new(height, width, vec![value; height * width])
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * self.width + col] = value;
    }
}

/// Pooled `H' × W'` walkability grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentationMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    /// Raw-image pixels spanned by one cell along (rows, cols).
    pixels_per_cell: [f64; 2],
}

impl SegmentationMap {
    pub fn new(
        height: usize,
        width: usize,
        values: Vec<f64>,
        pixels_per_cell: [f64; 2],
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(SegmapError::EmptyGrid { height, width });
        }
        if values.len() != height * width {
            return Err(SegmapError::ShapeMismatch {
                expected: height * width,
                got: values.len(),
            });
        }
        check_values(&values)?;
        Ok(SegmentationMap {
            height,
            width,
            values,
            pixels_per_cell,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        value: f64,
        pixels_per_cell: [f64; 2],
    ) -> Result<Self> {
        SegmentationMap::new(height, width, vec![value; height * width], pixels_per_cell)
    }

    /// A single walkable cell; every query clamps onto it.
    pub fn open() -> Self {
        SegmentationMap {
            height: 1,
            width: 1,
            values: vec![0.0],
            pixels_per_cell: [1.0, 1.0],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels_per_cell(&self) -> [f64; 2] {
        self.pixels_per_cell
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Cell containing a pixel position, clamped to the grid. The flag is set
    /// when clamping was needed.
    pub fn cell_of_pixel(&self, px: Vec2) -> (usize, usize, bool) {
        let (row, rc) = clamp_index(px.x / self.pixels_per_cell[0], self.height);
        let (col, cc) = clamp_index(px.y / self.pixels_per_cell[1], self.width);
        (row, col, rc || cc)
    }

    /// Pixel position of a cell's center.
    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(
            (row as f64 + 0.5) * self.pixels_per_cell[0],
            (col as f64 + 0.5) * self.pixels_per_cell[1],
        )
    }

    /// Run-length encoding of the row-major values as `(value, count)` pairs.
    pub fn run_lengths(&self) -> Vec<(f64, usize)> {
        let mut runs: Vec<(f64, usize)> = Vec::new();
        for &v in &self.values {
            match runs.last_mut() {
                Some((last, n)) if last.to_bits() == v.to_bits() => *n += 1,
                _ => runs.push((v, 1)),
            }
        }
        runs
    }
}

fn clamp_index(pos: f64, len: usize) -> (usize, bool) {
    let f = pos.floor();
    if f.is_nan() || f < 0.0 {
        (0, true)
    } else if f >= len as f64 {
        (len - 1, true)
    } else {
        (f as usize, false)
    }
}

/// Mean-pools a raw grid onto `target = (H', W')` cells. Cells are
/// `floor(raw / target)` pixels wide; the last row/column of cells absorbs
/// the remainder.
pub fn pool_map(raw: &RawGrid, target: (usize, usize)) -> Result<SegmentationMap> {
    let (th, tw) = target;
    if th == 0 || tw == 0 {
        return Err(SegmapError::EmptyGrid {
            height: th,
            width: tw,
        });
    }
    if th > raw.height || tw > raw.width {
        return Err(SegmapError::PoolTooLarge {
            target,
            raw: (raw.height, raw.width),
        });
    }
    let rh = raw.height / th;
    let rw = raw.width / tw;
    let span = |i: usize, step: usize, n: usize, total: usize| {
        let start = i * step;
        let end = if i + 1 == n { total } else { start + step };
        start..end
    };
    let mut values = Vec::with_capacity(th * tw);
    for r in 0..th {
        let rows = span(r, rh, th, raw.height);
        for c in 0..tw {
            let cols = span(c, rw, tw, raw.width);
            let mut sum = 0.0;
            for rr in rows.clone() {
                let line = &raw.values[rr * raw.width..(rr + 1) * raw.width];
                sum += line[cols.clone()].iter().sum::<f64>();
            }
            let n = (rows.len() * cols.len()) as f64;
            // guard against rounding a mean of values in [0,1] just outside the range
            values.push((sum / n).clamp(0.0, 1.0));
        }
    }
    SegmentationMap::new(th, tw, values, [rh as f64, rw as f64])
}

/// Per-axis affine scene→pixel transform `pixel = w ⊙ p + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineCalib {
    pub w: Vec2,
    pub b: Vec2,
}

impl AffineCalib {
    pub fn new(w: Vec2, b: Vec2) -> Result<Self> {
        if w.x == 0.0 {
            return Err(SegmapError::ZeroScale { axis: 0 });
        }
        if w.y == 0.0 {
            return Err(SegmapError::ZeroScale { axis: 1 });
        }
        Ok(AffineCalib { w, b })
    }

    pub fn identity() -> Self {
        AffineCalib {
            w: Vec2::new(1.0, 1.0),
            b: Vec2::ZERO,
        }
    }

    pub fn to_pixel(&self, p: Vec2) -> Vec2 {
        Vec2::new(self.w.x * p.x + self.b.x, self.w.y * p.y + self.b.y)
    }

    pub fn to_scene(&self, px: Vec2) -> Vec2 {
        Vec2::new((px.x - self.b.x) / self.w.x, (px.y - self.b.y) / self.w.y)
    }

    /// `(w_x, w_y, b_x, b_y)`, the order used in run configs.
    pub fn to_array(&self) -> [f64; 4] {
        [self.w.x, self.w.y, self.b.x, self.b.y]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        AffineCalib::new(Vec2::new(a[0], a[1]), Vec2::new(a[2], a[3]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibFit {
    pub calib: AffineCalib,
    /// Root mean squared Euclidean pixel residual.
    pub rms: f64,
}

/// Summed squared pixel residual of `calib` over the correspondences.
pub fn calibration_loss(calib: &AffineCalib, pairs: &[(Vec2, Vec2)]) -> f64 {
    pairs
        .iter()
        .map(|&(s, px)| {
            let d = calib.to_pixel(s) - px;
            d.dot(d)
        })
        .sum()
}

/// Least-squares fit of a per-axis affine transform from
/// `(scene position, pixel position)` pairs via the normal equations.
pub fn fit_calibration(pairs: &[(Vec2, Vec2)]) -> Result<CalibFit> {
    if pairs.len() < 2 {
        return Err(SegmapError::TooFewPairs(pairs.len()));
    }
    let n = pairs.len() as f64;
    let mut w = [0.0; 2];
    let mut b = [0.0; 2];
    for axis in 0..2 {
        let get = |v: Vec2| if axis == 0 { v.x } else { v.y };
        let s_mean = pairs.iter().map(|&(s, _)| get(s)).sum::<f64>() / n;
        let p_mean = pairs.iter().map(|&(_, p)| get(p)).sum::<f64>() / n;
        let mut sxx = 0.0;
        let mut sxy = 0.0;
        for &(s, p) in pairs {
            let ds = get(s) - s_mean;
            sxx += ds * ds;
            sxy += ds * (get(p) - p_mean);
        }
        if !(sxx > 0.0) {
            return Err(SegmapError::RankDeficient { axis });
        }
        w[axis] = sxy / sxx;
        b[axis] = p_mean - w[axis] * s_mean;
    }
    let calib = AffineCalib::new(Vec2::new(w[0], w[1]), Vec2::new(b[0], b[1]))?;
    let rms = (calibration_loss(&calib, pairs) / n).sqrt();
    Ok(CalibFit { calib, rms })
}

/// Axis-aligned pixel-space box painted onto a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: Vec2,
    pub max: Vec2,
    pub label: f64,
}

impl BoundingBox {
    pub fn new(min: Vec2, max: Vec2, label: f64) -> Result<Self> {
        let b = BoundingBox { min, max, label };
        b.validate()?;
        Ok(b)
    }

    /// Box given by two scene-space corners, converted through `calib`.
    pub fn from_scene(a: Vec2, b: Vec2, label: f64, calib: &AffineCalib) -> Result<Self> {
        let pa = calib.to_pixel(a);
        let pb = calib.to_pixel(b);
        BoundingBox::new(
            Vec2::new(pa.x.min(pb.x), pa.y.min(pb.y)),
            Vec2::new(pa.x.max(pb.x), pa.y.max(pb.y)),
            label,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min.x <= self.max.x && self.min.y <= self.max.y) {
            return Err(SegmapError::InvertedBox);
        }
        if !(0.0..=1.0).contains(&self.label) {
            return Err(SegmapError::BadLabel(self.label));
        }
        Ok(())
    }

    pub fn contains(&self, px: Vec2) -> bool {
        px.x >= self.min.x && px.x <= self.max.x && px.y >= self.min.y && px.y <= self.max.y
    }
}

/// Cells whose centers fall inside the box, row-major.
pub fn box_cells(map: &SegmentationMap, bbox: &BoundingBox) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    for r in 0..map.height {
        for c in 0..map.width {
            if bbox.contains(map.cell_center(r, c)) {
                cells.push((r, c));
            }
        }
    }
    cells
}

/// Returns a copy of `map` with every cell inside `bbox` set to its label.
pub fn apply_box(map: &SegmentationMap, bbox: &BoundingBox) -> Result<SegmentationMap> {
    bbox.validate()?;
    let cells = box_cells(map, bbox);
    if cells.is_empty() {
        log::warn!("bounding box {bbox:?} covers no map cell; map left unchanged");
    }
    let mut out = map.clone();
    for (r, c) in cells {
        out.values[r * out.width + c] = bbox.label;
    }
    Ok(out)
}

/// A map together with the calibration that places scene positions on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub map: SegmentationMap,
    pub calib: AffineCalib,
}

impl Environment {
    pub fn new(map: SegmentationMap, calib: AffineCalib) -> Self {
        Environment { map, calib }
    }

    /// Everywhere walkable.
    pub fn open() -> Self {
        Environment {
            map: SegmentationMap::open(),
            calib: AffineCalib::identity(),
        }
    }

    pub fn walkability(&self, p: Vec2) -> f64 {
        walkability(&self.map, p, &self.calib)
    }

    pub fn with_box(&self, bbox: &BoundingBox) -> Result<Environment> {
        Ok(Environment {
            map: apply_box(&self.map, bbox)?,
            calib: self.calib,
        })
    }
}

/// Weight of the cell under scene position `p`. Positions off the map clamp
/// to the nearest border cell.
pub fn walkability(map: &SegmentationMap, p: Vec2, calib: &AffineCalib) -> f64 {
    walkability_checked(map, p, calib).0
}

/// Like [`walkability`], also reporting whether the query was clamped.
pub fn walkability_checked(map: &SegmentationMap, p: Vec2, calib: &AffineCalib) -> (f64, bool) {
    let (r, c, clamped) = map.cell_of_pixel(calib.to_pixel(p));
    (map.get(r, c), clamped)
}

/// Sidecar metadata stored next to a PGM map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapMeta {
    pub pixels_per_cell: [f64; 2],
    /// `(w_x, w_y, b_x, b_y)`
    pub calib: [f64; 4],
}

/// Encodes a map as binary PGM (P5); byte = round(value · 255).
pub fn write_pgm<W: Write>(map: &SegmentationMap, mut out: W) -> Result<()> {
    write!(out, "P5\n{} {}\n255\n", map.width, map.height)?;
    let bytes: Vec<u8> = map
        .values
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    out.write_all(&bytes)?;
    Ok(())
}

/// Decodes a binary PGM (P5) with maxval ≤ 255 into a map; value = byte / maxval.
pub fn read_pgm<R: Read>(input: R, pixels_per_cell: [f64; 2]) -> Result<SegmentationMap> {
    let mut reader = BufReader::new(input);
    let mut tokens: Vec<String> = Vec::new();
    let mut line = String::new();
    while tokens.len() < 4 {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(SegmapError::Pgm("truncated header".into()));
        }
        let content = line.split('#').next().unwrap_or("");
        tokens.extend(content.split_whitespace().map(str::to_owned));
    }
    if tokens.len() > 4 {
        return Err(SegmapError::Pgm("unexpected data after header".into()));
    }
    if tokens[0] != "P5" {
        return Err(SegmapError::Pgm(format!("unsupported magic {}", tokens[0])));
    }
    let parse = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| SegmapError::Pgm(format!("bad header field {s:?}")))
    };
    let width = parse(&tokens[1])?;
    let height = parse(&tokens[2])?;
    let maxval = parse(&tokens[3])?;
    if maxval == 0 || maxval > 255 {
        return Err(SegmapError::Pgm(format!("unsupported maxval {maxval}")));
    }
    let mut data = vec![0u8; width * height];
    reader
        .read_exact(&mut data)
        .map_err(|_| SegmapError::Pgm("truncated pixel data".into()))?;
    let values = data
        .iter()
        .map(|&b| (f64::from(b) / maxval as f64).min(1.0))
        .collect();
    SegmentationMap::new(height, width, values, pixels_per_cell)
}

/// Writes `<stem>.pgm` and `<stem>.map.json`.
pub fn save_environment(env: &Environment, dir: &Path, stem: &str) -> Result<()> {
    let file = std::fs::File::create(dir.join(format!("{stem}.pgm")))?;
    write_pgm(&env.map, std::io::BufWriter::new(file))?;
    let meta = MapMeta {
        pixels_per_cell: env.map.pixels_per_cell,
        calib: env.calib.to_array(),
    };
    std::fs::write(
        dir.join(format!("{stem}.map.json")),
        serde_json::to_string_pretty(&meta)?,
    )?;
    Ok(())
}

pub fn load_environment(dir: &Path, stem: &str) -> Result<Environment> {
    let meta: MapMeta =
        serde_json::from_str(&std::fs::read_to_string(dir.join(format!("{stem}.map.json")))?)?;
    let map = read_pgm(
        std::fs::File::open(dir.join(format!("{stem}.pgm")))?,
        meta.pixels_per_cell,
    )?;
    Ok(Environment::new(map, AffineCalib::from_array(meta.calib)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize) -> RawGrid {
        let values = (0..n * n)
            .map(|i| ((i / n + i % n) % 2) as f64)
            .collect();
        RawGrid::new(n, n, values).unwrap()
    }

    #[test]
    fn constant_grid_pools_to_constant() {
        let raw = RawGrid::filled(37, 53, 1.0).unwrap();
        let map = pool_map(&raw, (10, 7)).unwrap();
        assert!(map.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkerboard_pools_to_half() {
        let map = pool_map(&checkerboard(200), (100, 100)).unwrap();
        assert_eq!(map.height(), 100);
        assert!(map.values().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn court_image_pools_to_target_shape() {
        let raw = RawGrid::filled(500, 939, 0.0).unwrap();
        let map = pool_map(&raw, (100, 100)).unwrap();
        assert_eq!((map.height(), map.width()), (100, 100));
        assert_eq!(map.pixels_per_cell(), [5.0, 9.0]);
    }

    #[test]
    fn remainder_is_absorbed_by_last_cells() {
        // 5 columns into 2 cells: widths 2 and 3
        let raw = RawGrid::new(1, 5, vec![0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let map = pool_map(&raw, (1, 2)).unwrap();
        assert_eq!(map.values(), &[0.0, 1.0]);
    }

    #[test]
    fn pool_rejects_larger_target() {
        let raw = RawGrid::filled(4, 4, 0.0).unwrap();
        assert!(matches!(
            pool_map(&raw, (5, 4)),
            Err(SegmapError::PoolTooLarge { .. })
        ));
    }

    #[test]
    fn raw_values_must_be_weights() {
        assert!(RawGrid::new(1, 2, vec![0.0, 1.5]).is_err());
    }

    #[test]
    fn court_calibration_maps_corner() {
        let calib = AffineCalib::new(Vec2::new(10.0, 10.0), Vec2::ZERO).unwrap();
        assert_eq!(calib.to_pixel(Vec2::new(5.0, 9.4)), Vec2::new(50.0, 94.0));
        let id = AffineCalib::identity();
        assert_eq!(id.to_pixel(Vec2::new(-3.5, 2.25)), Vec2::new(-3.5, 2.25));
    }

    #[test]
    fn single_pair_is_rank_deficient() {
        let pairs = [(Vec2::new(1.0, 2.0), Vec2::new(10.0, 20.0))];
        assert!(matches!(
            fit_calibration(&pairs),
            Err(SegmapError::TooFewPairs(1))
        ));
        let same_x = [
            (Vec2::new(1.0, 2.0), Vec2::new(10.0, 20.0)),
            (Vec2::new(1.0, 3.0), Vec2::new(10.0, 30.0)),
        ];
        assert!(matches!(
            fit_calibration(&same_x),
            Err(SegmapError::RankDeficient { axis: 0 })
        ));
    }

    #[test]
    fn full_box_saturates_map() {
        let map = SegmentationMap::filled(10, 10, 0.0, [4.0, 4.0]).unwrap();
        let bbox = BoundingBox::new(Vec2::ZERO, Vec2::new(40.0, 40.0), 1.0).unwrap();
        let painted = apply_box(&map, &bbox).unwrap();
        assert!(painted.values().iter().all(|&v| v == 1.0));
        // source untouched
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_box_leaves_map_unchanged() {
        let map = SegmentationMap::filled(4, 4, 0.25, [1.0, 1.0]).unwrap();
        let bbox = BoundingBox::new(Vec2::new(100.0, 100.0), Vec2::new(200.0, 200.0), 1.0).unwrap();
        assert_eq!(apply_box(&map, &bbox).unwrap(), map);
    }

    #[test]
    fn walkability_clamps_far_queries() {
        let mut values = vec![0.0; 9];
        values[2] = 1.0; // row 0, col 2
        let map = SegmentationMap::new(3, 3, values, [1.0, 1.0]).unwrap();
        let calib = AffineCalib::identity();
        let (v, clamped) = walkability_checked(&map, Vec2::new(-50.0, 1e6), &calib);
        assert_eq!(v, 1.0);
        assert!(clamped);
        let (v, clamped) = walkability_checked(&map, Vec2::new(1.5, 1.5), &calib);
        assert_eq!(v, 0.0);
        assert!(!clamped);
    }

    #[test]
    fn half_label_region_reads_half() {
        let map = SegmentationMap::filled(20, 20, 0.0, [1.0, 1.0]).unwrap();
        let bbox = BoundingBox::new(Vec2::new(5.0, 5.0), Vec2::new(10.0, 10.0), 0.5).unwrap();
        let map = apply_box(&map, &bbox).unwrap();
        let v = walkability(&map, Vec2::new(7.2, 8.9), &AffineCalib::identity());
        assert_eq!(v, 0.5);
    }

    #[test]
    fn pgm_round_trip_quantizes_half_to_128() {
        let map = SegmentationMap::new(2, 3, vec![0.0, 0.5, 1.0, 0.25, 0.75, 0.1], [2.0, 3.0])
            .unwrap();
        let mut buf = Vec::new();
        write_pgm(&map, &mut buf).unwrap();
        assert!(buf.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(buf[buf.len() - 6 + 1], 128);
        let back = read_pgm(&buf[..], [2.0, 3.0]).unwrap();
        for (a, b) in map.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1.0 / 255.0);
        }
        assert_eq!(back.values()[0], 0.0);
        assert_eq!(back.values()[2], 1.0);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut buf = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        buf.extend_from_slice(&[0, 255]);
        let map = read_pgm(&buf[..], [1.0, 1.0]).unwrap();
        assert_eq!(map.values(), &[0.0, 1.0]);
    }

    #[test]
    fn run_lengths_cover_grid() {
        let map = SegmentationMap::new(2, 2, vec![0.0, 0.0, 1.0, 0.0], [1.0, 1.0]).unwrap();
        assert_eq!(map.run_lengths(), vec![(0.0, 2), (1.0, 1), (0.0, 1)]);
    }
}
