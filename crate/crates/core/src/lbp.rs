//! Uniform LBP(8,1) block histograms and weighted chi-square matching.
//!
//! Codes compare the eight radius-1 neighbours against the centre (a tie
//! sets the bit). Neighbours are visited clockwise from the top-left one,
//! which becomes the most significant bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::tsf::WeightMatrix;

pub const BINS: usize = 59;
pub const NON_UNIFORM_BIN: usize = 58;

/// Neighbour offsets in bit order, MSB first.
const NEIGHBOURS: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
    (-1, 0),
];

pub fn lbp_code(img: &GrayImage, x: usize, y: usize) -> Result<u8> {
    if x == 0 || y == 0 || x + 1 >= img.width() || y + 1 >= img.height() {
        return Err(Error::OutOfBounds(format!(
            "LBP at ({x}, {y}) needs a 1-pixel margin in a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(code_unchecked(img, x, y))
}

#[inline]
fn code_unchecked(img: &GrayImage, x: usize, y: usize) -> u8 {
    let c = img.get(x, y);
    let mut code = 0u8;
    for &(dx, dy) in &NEIGHBOURS {
        let v = img.get((x as isize + dx) as usize, (y as isize + dy) as usize);
        code = (code << 1) | (v >= c) as u8;
    }
    code
}

/// Number of 0/1 changes walking the bits circularly.
pub fn circular_transitions(code: u8) -> u32 {
    (code ^ code.rotate_left(1)).count_ones()
}

fn uniform_table() -> &'static [u8; 256] {
    static TABLE: OnceLock<[u8; 256]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [NON_UNIFORM_BIN as u8; 256];
        let mut next = 0u8;
        for code in 0..=255u8 {
            if circular_transitions(code) <= 2 {
                table[code as usize] = next;
                next += 1;
            }
        }
        debug_assert_eq!(next as usize, NON_UNIFORM_BIN);
        table
    })
}

/// Histogram bin of a code: uniform codes get bins 0..=57 in ascending code
/// order, everything else shares bin 58.
pub fn uniform_mapping(code: u8) -> usize {
    uniform_table()[code as usize] as usize
}

/// Splits `len` into `n` runs of `len / n`, the last run taking the remainder.
fn block_spans(len: usize, n: usize) -> Vec<(usize, usize)> {
    let size = len / n;
    (0..n)
        .map(|i| {
            let start = i * size;
            let end = if i + 1 == n { len } else { start + size };
            (start, end)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LbpDescriptor {
    blocks_x: usize,
    blocks_y: usize,
    histograms: Vec<u32>,
}

impl LbpDescriptor {
    pub fn blocks_x(&self) -> usize {
        self.blocks_x
    }

    pub fn blocks_y(&self) -> usize {
        self.blocks_y
    }

    /// Concatenated histograms, row-major over blocks.
    pub fn histograms(&self) -> &[u32] {
        &self.histograms
    }

    pub fn block(&self, bx: usize, by: usize) -> &[u32] {
        let start = (by * self.blocks_x + bx) * BINS;
        &self.histograms[start..start + BINS]
    }

    /// One line per block (row-major), 59 comma-separated counts, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for hist in self.histograms.chunks(BINS) {
            let row: Vec<String> = hist.iter().map(u32::to_string).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

fn check_grid(img: &GrayImage, blocks_x: usize, blocks_y: usize) -> Result<()> {
    let iw = img.width().saturating_sub(2);
    let ih = img.height().saturating_sub(2);
    if blocks_x == 0 || blocks_y == 0 || iw / blocks_x < 3 || ih / blocks_y < 3 {
        return Err(Error::InvalidArgument(format!(
            "{blocks_x}x{blocks_y} grid too fine for a {}x{} image",
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Block histograms of uniform codes over the image interior (a one-pixel
/// margin is excluded). Remainder pixels go to the last row/column of blocks.
pub fn extract_descriptor(img: &GrayImage, blocks_x: usize, blocks_y: usize) -> Result<LbpDescriptor> {
    check_grid(img, blocks_x, blocks_y)?;
    let xs = block_spans(img.width() - 2, blocks_x);
    let ys = block_spans(img.height() - 2, blocks_y);
    let mut histograms = vec![0u32; blocks_x * blocks_y * BINS];
    for (by, &(y0, y1)) in ys.iter().enumerate() {
        for (bx, &(x0, x1)) in xs.iter().enumerate() {
            let base = (by * blocks_x + bx) * BINS;
            for y in y0 + 1..y1 + 1 {
                for x in x0 + 1..x1 + 1 {
                    histograms[base + uniform_mapping(code_unchecked(img, x, y))] += 1;
                }
            }
        }
    }
    Ok(LbpDescriptor {
        blocks_x,
        blocks_y,
        histograms,
    })
}

/// Per-block importance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeightMap {
    blocks_x: usize,
    blocks_y: usize,
    weights: Vec<f64>,
}

impl BlockWeightMap {
    pub fn new(blocks_x: usize, blocks_y: usize, weights: Vec<f64>) -> Result<Self> {
        if blocks_x == 0 || blocks_y == 0 || weights.len() != blocks_x * blocks_y {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for a {blocks_x}x{blocks_y} grid",
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument("block weights must be finite and >= 0".into()));
        }
        if weights.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument("block weights are all zero".into()));
        }
        Ok(BlockWeightMap {
            blocks_x,
            blocks_y,
            weights,
        })
    }

    pub fn uniform(blocks_x: usize, blocks_y: usize) -> Self {
        BlockWeightMap {
            blocks_x,
            blocks_y,
            weights: vec![1.0; blocks_x * blocks_y],
        }
    }

    pub fn blocks_x(&self) -> usize {
        self.blocks_x
    }

    pub fn blocks_y(&self) -> usize {
        self.blocks_y
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, bx: usize, by: usize) -> f64 {
        self.weights[by * self.blocks_x + bx]
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        BlockWeightMap::new(
            self.blocks_x,
            self.blocks_y,
            self.weights.iter().map(|w| w * factor).collect(),
        )
    }

    /// Broadcasts block weights to pixels. Margin pixels take the weight of
    /// the nearest interior block.
    pub fn pixel_weights(&self, width: usize, height: usize) -> Result<WeightMatrix> {
        if width < 3 || height < 3 {
            return Err(Error::InvalidArgument("image too small for block weights".into()));
        }
        let owner = |len: usize, n: usize| -> Vec<usize> {
            let spans = block_spans(len - 2, n);
            (0..len)
                .map(|p| {
                    let q = p.clamp(1, len - 2) - 1;
                    spans.iter().position(|&(a, b)| q >= a && q < b).unwrap_or(n - 1)
                })
                .collect()
        };
        let bx_of = owner(width, self.blocks_x);
        let by_of = owner(height, self.blocks_y);
        let mut values = Vec::with_capacity(width * height);
        for &by in &by_of {
            for &bx in &bx_of {
                values.push(self.get(bx, by));
            }
        }
        WeightMatrix::new(values)
    }

    /// Text grid: a `BX BY` line followed by `BY` lines of `BX` weights.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.blocks_x, self.blocks_y);
        for row in self.weights.chunks(self.blocks_x) {
            let row: Vec<String> = row.iter().map(|w| format!("{w}")).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let parse_row = |line: usize, l: &str| -> Result<Vec<f64>> {
            l.split_whitespace()
                .map(|t| {
                    t.parse().map_err(|_| Error::Syntax {
                        line,
                        message: format!("bad number {t:?}"),
                    })
                })
                .collect()
        };
        let (line, head) = rows.next().ok_or(Error::Syntax {
            line: 1,
            message: "empty weight map".into(),
        })?;
        let dims = parse_row(line, head)?;
        let [bx, by] = dims[..] else {
            return Err(Error::Syntax {
                line,
                message: "expected `BX BY`".into(),
            });
        };
        let (bx, by) = (bx as usize, by as usize);
        let mut weights = Vec::with_capacity(bx * by);
        for _ in 0..by {
            let (line, l) = rows.next().ok_or(Error::Syntax {
                line: text.lines().count(),
                message: "missing weight rows".into(),
            })?;
            let row = parse_row(line, l)?;
            if row.len() != bx {
                return Err(Error::Syntax {
                    line,
                    message: format!("expected {bx} weights"),
                });
            }
            weights.extend(row);
        }
        if let Some((line, _)) = rows.next() {
            return Err(Error::Syntax {
                line,
                message: "trailing data".into(),
            });
        }
        BlockWeightMap::new(bx, by, weights)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Fixed face layout with levels {0, 1, 2, 4}.
///
/// Block rows whose centre lies in 20-45% of the height form the eye band
/// (weight 4), rows centred in 45-85% the nose/mouth band (weight 2). The
/// outermost columns of both bands and every other row get 1, and the two
/// bottom corner blocks get 0.
pub fn default_weight_map(blocks_x: usize, blocks_y: usize) -> Result<BlockWeightMap> {
    if blocks_x < 4 || blocks_y < 4 {
        return Err(Error::InvalidArgument(format!(
            "default weight layout needs at least a 4x4 grid, got {blocks_x}x{blocks_y}"
        )));
    }
    let mut weights = Vec::with_capacity(blocks_x * blocks_y);
    for by in 0..blocks_y {
        let centre = (by as f64 + 0.5) / blocks_y as f64;
        for bx in 0..blocks_x {
            let edge = bx == 0 || bx + 1 == blocks_x;
            let w = if by + 1 == blocks_y && edge {
                0.0
            } else if edge {
                1.0
            } else if (0.20..=0.45).contains(&centre) {
                4.0
            } else if centre > 0.45 && centre <= 0.85 {
                2.0
            } else {
                1.0
            };
            weights.push(w);
        }
    }
    BlockWeightMap::new(blocks_x, blocks_y, weights)
}

#[inline]
fn chi_square(a: &[u32], b: &[u32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let s = x as f64 + y as f64;
            if s == 0.0 {
                0.0
            } else {
                let d = x as f64 - y as f64;
                d * d / s
            }
        })
        .sum()
}

/// Chi-square distance between the histograms of a single block.
pub fn block_distance(a: &LbpDescriptor, b: &LbpDescriptor, bx: usize, by: usize) -> f64 {
    chi_square(a.block(bx, by), b.block(bx, by))
}

/// `sum_blocks w * sum_bins (a - b)^2 / (a + b)`, empty bins contributing 0.
pub fn descriptor_distance(a: &LbpDescriptor, b: &LbpDescriptor, w: &BlockWeightMap) -> Result<f64> {
    if (a.blocks_x, a.blocks_y) != (b.blocks_x, b.blocks_y)
        || (a.blocks_x, a.blocks_y) != (w.blocks_x, w.blocks_y)
    {
        return Err(Error::DimensionMismatch(format!(
            "grids {}x{}, {}x{} and weights {}x{}",
            a.blocks_x, a.blocks_y, b.blocks_x, b.blocks_y, w.blocks_x, w.blocks_y
        )));
    }
    Ok(a.histograms
        .chunks(BINS)
        .zip(b.histograms.chunks(BINS))
        .zip(&w.weights)
        .map(|((ha, hb), &wt)| if wt == 0.0 { 0.0 } else { wt * chi_square(ha, hb) })
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patch(center: f64, ring: [f64; 8]) -> GrayImage {
        let mut img = GrayImage::filled(3, 3, center);
        for (&(dx, dy), v) in NEIGHBOURS.iter().zip(ring) {
            img.set((1 + dx) as usize, (1 + dy) as usize, v);
        }
        img
    }

    #[test]
    fn code_examples() {
        assert_eq!(lbp_code(&GrayImage::filled(3, 3, 0.4), 1, 1).unwrap(), 255);
        let p = patch(5.0, [6.0, 7.0, 1.0, 2.0, 8.0, 3.0, 4.0, 9.0]);
        assert_eq!(lbp_code(&p, 1, 1).unwrap(), 201);
        assert_eq!(lbp_code(&patch(9.0, [1.0; 8]), 1, 1).unwrap(), 0);
        assert!(lbp_code(&p, 0, 1).is_err());
        assert!(lbp_code(&p, 1, 2).is_err());
    }

    #[test]
    fn uniform_examples() {
        assert!(uniform_mapping(0) < NON_UNIFORM_BIN);
        assert_eq!(uniform_mapping(0b0101_0101), NON_UNIFORM_BIN);
        assert_eq!(circular_transitions(0b0101_0101), 8);
        let dedicated: std::collections::BTreeSet<usize> =
            (0..=255u8).map(uniform_mapping).filter(|&b| b < NON_UNIFORM_BIN).collect();
        assert_eq!(dedicated.len(), 58);
        assert_eq!(uniform_mapping(255), 57);
    }

    #[test]
    fn constant_image_histogram() {
        let d = extract_descriptor(&GrayImage::filled(20, 17, 0.3), 2, 3).unwrap();
        for by in 0..3 {
            for bx in 0..2 {
                let h = d.block(bx, by);
                let total: u32 = h.iter().sum();
                assert_eq!(h[uniform_mapping(255)], total);
            }
        }
    }

    #[test]
    fn block_counts_cover_interior() {
        let img = GrayImage::from_fn(64, 64, |x, y| ((x * 7 + y * 13) % 17) as f64);
        let d = extract_descriptor(&img, 8, 8).unwrap();
        assert_eq!(d.histograms().len(), 8 * 8 * BINS);
        // interior 62 = 7 * 7 + 13
        for by in 0..8 {
            for bx in 0..8 {
                let wx = if bx == 7 { 13 } else { 7 };
                let wy = if by == 7 { 13 } else { 7 };
                assert_eq!(d.block(bx, by).iter().sum::<u32>(), wx * wy);
            }
        }
        assert!(extract_descriptor(&img, 30, 8).is_err());
        assert_eq!(d.to_csv().lines().count(), 64);
        assert!(d.to_csv().lines().all(|l| l.split(',').count() == BINS));
    }

    #[test]
    fn distance_examples() {
        // two blocks with two populated bins each
        let mut a = LbpDescriptor {
            blocks_x: 2,
            blocks_y: 1,
            histograms: vec![0; 2 * BINS],
        };
        let mut b = a.clone();
        a.histograms[0] = 4;
        b.histograms[1] = 4;
        a.histograms[BINS] = 4;
        b.histograms[BINS] = 4;
        let w = BlockWeightMap::uniform(2, 1);
        assert_eq!(descriptor_distance(&a, &b, &w).unwrap(), 8.0);
        assert_eq!(descriptor_distance(&b, &a, &w).unwrap(), 8.0);
        assert_eq!(descriptor_distance(&a, &a, &w).unwrap(), 0.0);
        assert!(descriptor_distance(&a, &b, &BlockWeightMap::uniform(1, 2)).is_err());
    }

    #[test]
    fn default_layout() {
        let m = default_weight_map(8, 8).unwrap();
        assert_eq!(m.get(2, 2), 4.0);
        assert_eq!(m.get(0, 7), 0.0);
        assert_eq!(m.get(7, 7), 0.0);
        for level in [0.0, 1.0, 2.0, 4.0] {
            assert!(m.weights().contains(&level), "missing level {level}");
        }
        let small = default_weight_map(4, 4).unwrap();
        for level in [0.0, 1.0, 2.0, 4.0] {
            assert!(small.weights().contains(&level));
        }
        assert!(default_weight_map(3, 8).is_err());
    }

    #[test]
    fn weight_map_text_roundtrip() {
        let m = default_weight_map(8, 6).unwrap();
        assert_eq!(BlockWeightMap::from_text(&m.to_text()).unwrap(), m);
        assert!(BlockWeightMap::from_text("2 2\n1 1\n").is_err());
        assert!(BlockWeightMap::from_text("1 1\n0\n").is_err());
    }

    #[test]
    fn pixel_broadcast() {
        let m = default_weight_map(8, 8).unwrap();
        let w = m.pixel_weights(64, 64).unwrap();
        assert_eq!(w.len(), 4096);
        // pixel (20, 20) sits in interior block (2, 2)
        assert_eq!(w.values()[20 * 64 + 20], 4.0);
        assert_eq!(w.values()[63 * 64], 0.0);
        assert_eq!(w.values()[0], 1.0);
    }

    proptest! {
        #[test]
        fn descriptor_ignores_constant_offsets(
            vals in proptest::collection::vec(0u32..256, 16 * 16),
            offset in 0u32..64,
        ) {
            let img = GrayImage::new(16, 16, vals.iter().map(|&v| v as f64 / 256.0).collect()).unwrap();
            let shifted = img.map(|v| v + offset as f64 / 256.0);
            prop_assert_eq!(
                extract_descriptor(&img, 2, 2).unwrap(),
                extract_descriptor(&shifted, 2, 2).unwrap()
            );
        }

        #[test]
        fn distance_is_symmetric_and_scales(
            a in proptest::collection::vec(0u32..256, 12 * 12),
            b in proptest::collection::vec(0u32..256, 12 * 12),
            exp in -3i32..4,
        ) {
            let ia = GrayImage::new(12, 12, a.iter().map(|&v| v as f64).collect()).unwrap();
            let ib = GrayImage::new(12, 12, b.iter().map(|&v| v as f64).collect()).unwrap();
            let da = extract_descriptor(&ia, 2, 2).unwrap();
            let db = extract_descriptor(&ib, 2, 2).unwrap();
            let w = BlockWeightMap::new(2, 2, vec![1.0, 2.0, 0.0, 4.0]).unwrap();
            let d = descriptor_distance(&da, &db, &w).unwrap();
            prop_assert!(d >= 0.0);
            prop_assert_eq!(d, descriptor_distance(&db, &da, &w).unwrap());
            let lambda = 2f64.powi(exp);
            let scaled = descriptor_distance(&da, &db, &w.scaled(lambda).unwrap()).unwrap();
            prop_assert_eq!(scaled, d * lambda);
        }
    }
}
