//! Expression removal by single-level orthonormal Haar smoothing.
//!
//! For every 2x2 block `(a b; c d)`:
//!
//! ```text
//! LL = (a + b + c + d) / 2    LH = (a + b - c - d) / 2
//! HL = (a - b + c - d) / 2    HH = (a - b - c + d) / 2
//! ```
//!
//! Odd dimensions are replicate-padded on the right/bottom before the
//! forward transform and cropped after the inverse.

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    pub ll: GrayImage,
    pub lh: GrayImage,
    pub hl: GrayImage,
    pub hh: GrayImage,
    /// Size of the image before padding.
    pub original: (usize, usize),
}

impl SubbandSet {
    pub fn energy(&self) -> f64 {
        self.ll.energy() + self.lh.energy() + self.hl.energy() + self.hh.energy()
    }
}

pub fn dwt2(img: &GrayImage) -> Result<SubbandSet> {
    let (w, h) = (img.width(), img.height());
    if w < 2 || h < 2 {
        return Err(Error::InvalidArgument(format!(
            "wavelet transform needs at least 2x2, got {w}x{h}"
        )));
    }
    let (hw, hh) = (w.div_ceil(2), h.div_ceil(2));
    let mut bands = [(); 4].map(|_| Vec::with_capacity(hw * hh));
    for by in 0..hh {
        for bx in 0..hw {
            let (x, y) = (2 * bx as isize, 2 * by as isize);
            let a = img.get_clamped(x, y);
            let b = img.get_clamped(x + 1, y);
            let c = img.get_clamped(x, y + 1);
            let d = img.get_clamped(x + 1, y + 1);
            // pairwise grouping keeps block-constant inputs exact
            let (top_sum, bottom_sum) = (a + b, c + d);
            let (top_diff, bottom_diff) = (a - b, c - d);
            bands[0].push((top_sum + bottom_sum) / 2.0);
            bands[1].push((top_sum - bottom_sum) / 2.0);
            bands[2].push((top_diff + bottom_diff) / 2.0);
            bands[3].push((top_diff - bottom_diff) / 2.0);
        }
    }
    let [ll, lh, hl, hh_band] = bands.map(|v| GrayImage::new(hw, hh, v).expect("valid subband"));
    Ok(SubbandSet {
        ll,
        lh,
        hl,
        hh: hh_band,
        original: (w, h),
    })
}

pub fn idwt2(sub: &SubbandSet) -> Result<GrayImage> {
    let (hw, hh) = (sub.ll.width(), sub.ll.height());
    if [&sub.lh, &sub.hl, &sub.hh].iter().any(|b| !b.same_dims(&sub.ll)) {
        return Err(Error::DimensionMismatch("subbands differ in size".into()));
    }
    let (w, h) = sub.original;
    if w.div_ceil(2) != hw || h.div_ceil(2) != hh || w == 0 || h == 0 {
        return Err(Error::DimensionMismatch(format!(
            "{hw}x{hh} subbands cannot reconstruct a {w}x{h} image"
        )));
    }
    let mut out = GrayImage::filled(w, h, 0.0);
    for by in 0..hh {
        for bx in 0..hw {
            let s = sub.ll.get(bx, by);
            let v = sub.lh.get(bx, by);
            let u = sub.hl.get(bx, by);
            let d = sub.hh.get(bx, by);
            let (top_sum, top_diff) = (s + v, u + d);
            let (bottom_sum, bottom_diff) = (s - v, u - d);
            let block = [
                (0, 0, (top_sum + top_diff) / 2.0),
                (1, 0, (top_sum - top_diff) / 2.0),
                (0, 1, (bottom_sum + bottom_diff) / 2.0),
                (1, 1, (bottom_sum - bottom_diff) / 2.0),
            ];
            for (dx, dy, val) in block {
                let (x, y) = (2 * bx + dx, 2 * by + dy);
                if x < w && y < h {
                    out.set(x, y, val);
                }
            }
        }
    }
    Ok(out)
}

/// Attenuates the detail subbands by `1 - strength` and reconstructs.
/// A strength of exactly 0 returns the input untouched.
pub fn neutralize(img: &GrayImage, strength: f64) -> Result<GrayImage> {
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::InvalidArgument(format!(
            "expression-removal strength {strength} outside [0, 1]"
        )));
    }
    if strength == 0.0 {
        return Ok(img.clone());
    }
    let mut sub = dwt2(img)?;
    let keep = 1.0 - strength;
    for band in [&mut sub.lh, &mut sub.hl, &mut sub.hh] {
        *band = band.map(|v| v * keep);
    }
    idwt2(&sub)
}
