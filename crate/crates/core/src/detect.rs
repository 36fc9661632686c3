//! Haar-cascade face detection over integral images.
//!
//! Only cascade *evaluation* is implemented. Models are read from a small
//! line-oriented text format:
//!
//! ```text
//! # comment (anywhere after '#')
//! window W H
//! stage T
//! weak VOTE POLARITY THRESHOLD KIND N
//! rect X Y W H SIGN
//! ```
//!
//! `window` appears once, before any stage. Each `stage` line opens a stage
//! with threshold `T`; the `weak` lines that follow belong to it. `KIND` is
//! `two`, `three` or `four` and `N` must equal 2, 3 or 4 respectively; the
//! next `N` lines are the feature's `rect` lines. `POLARITY` and `SIGN` are
//! `1` or `-1`, `VOTE` is non-negative. Numbers use Rust's float syntax.
//!
//! A weak classifier fires when `polarity * value >= polarity * threshold`,
//! and a stage passes when the votes of its firing classifiers sum to at
//! least the stage threshold. Windows are not variance-normalized.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{integral_image, resize_bilinear, GrayImage, IntegralImage, CHIP_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureKind {
    TwoRect,
    ThreeRect,
    FourRect,
}

impl FeatureKind {
    pub fn rect_count(self) -> usize {
        match self {
            FeatureKind::TwoRect => 2,
            FeatureKind::ThreeRect => 3,
            FeatureKind::FourRect => 4,
        }
    }

    fn keyword(self) -> &'static str {
        match self {
            FeatureKind::TwoRect => "two",
            FeatureKind::ThreeRect => "three",
            FeatureKind::FourRect => "four",
        }
    }

    fn from_keyword(s: &str) -> Option<Self> {
        match s {
            "two" => Some(FeatureKind::TwoRect),
            "three" => Some(FeatureKind::ThreeRect),
            "four" => Some(FeatureKind::FourRect),
            _ => None,
        }
    }
}

/// A signed rectangle in base-window coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HaarRect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
    pub sign: i8,
}

impl HaarRect {
    pub fn new(x: usize, y: usize, w: usize, h: usize, sign: i8) -> Self {
        HaarRect { x, y, w, h, sign }
    }

    fn area(&self) -> usize {
        self.w * self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HaarFeature {
    pub kind: FeatureKind,
    pub rects: Vec<HaarRect>,
}

impl HaarFeature {
    pub fn new(kind: FeatureKind, rects: Vec<HaarRect>) -> Self {
        HaarFeature { kind, rects }
    }

    /// Checks rect count, signs, non-empty rects, containment in the window
    /// and sign balance.
    pub fn validate(&self, window: (usize, usize)) -> std::result::Result<(), String> {
        if self.rects.len() != self.kind.rect_count() {
            return Err(format!(
                "{} feature has {} rects",
                self.kind.keyword(),
                self.rects.len()
            ));
        }
        let mut balance = 0i64;
        for (i, r) in self.rects.iter().enumerate() {
            if r.sign != 1 && r.sign != -1 {
                return Err(format!("rect {i} sign must be 1 or -1"));
            }
            if r.w == 0 || r.h == 0 {
                return Err(format!("rect {i} is empty"));
            }
            if r.x + r.w > window.0 || r.y + r.h > window.1 {
                return Err(format!(
                    "rect {i} ({} {} {} {}) exceeds the {}x{} base window",
                    r.x, r.y, r.w, r.h, window.0, window.1
                ));
            }
            balance += r.sign as i64 * r.area() as i64;
        }
        if balance != 0 {
            return Err(format!("unbalanced rect areas (signed area {balance})"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakClassifier {
    pub feature: HaarFeature,
    pub threshold: f64,
    pub polarity: i8,
    pub vote: f64,
}

impl WeakClassifier {
    fn fires(&self, value: f64) -> bool {
        let p = self.polarity as f64;
        p * value >= p * self.threshold
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeStage {
    pub weak: Vec<WeakClassifier>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CascadeModel {
    pub window: (usize, usize),
    pub stages: Vec<CascadeStage>,
}

impl CascadeModel {
    pub fn validate(&self) -> Result<()> {
        if self.window.0 < 4 || self.window.1 < 4 {
            return Err(Error::Validation(format!(
                "base window {}x{} is smaller than 4x4",
                self.window.0, self.window.1
            )));
        }
        if self.stages.is_empty() {
            return Err(Error::Validation("cascade has no stages".into()));
        }
        for (s, stage) in self.stages.iter().enumerate() {
            if !stage.threshold.is_finite() {
                return Err(Error::Validation(format!("stage {s}: non-finite threshold")));
            }
            if stage.weak.is_empty() {
                return Err(Error::Validation(format!("stage {s} has no weak classifiers")));
            }
            for (w, weak) in stage.weak.iter().enumerate() {
                let ctx = |msg: String| Error::Validation(format!("stage {s} feature {w}: {msg}"));
                if !(weak.vote >= 0.0) || !weak.vote.is_finite() {
                    return Err(ctx(format!("vote {} must be non-negative", weak.vote)));
                }
                if weak.polarity != 1 && weak.polarity != -1 {
                    return Err(ctx("polarity must be 1 or -1".into()));
                }
                if !weak.threshold.is_finite() {
                    return Err(ctx("non-finite threshold".into()));
                }
                weak.feature.validate(self.window).map_err(ctx)?;
            }
        }
        Ok(())
    }

    /// Whether the window at `origin` and `scale` passes every stage.
    pub fn accepts(&self, ii: &IntegralImage, origin: (usize, usize), scale: f64) -> Result<bool> {
        for stage in &self.stages {
            let mut votes = 0.0;
            for weak in &stage.weak {
                if weak.fires(eval_feature(ii, &weak.feature, origin, scale)?) {
                    votes += weak.vote;
                }
            }
            if votes < stage.threshold {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn scaled_rect(r: &HaarRect, scale: f64) -> (usize, usize, usize, usize) {
    let x0 = (r.x as f64 * scale).round() as usize;
    let y0 = (r.y as f64 * scale).round() as usize;
    let x1 = ((r.x + r.w) as f64 * scale).round() as usize;
    let y1 = ((r.y + r.h) as f64 * scale).round() as usize;
    (x0, y0, x1, y1)
}

/// Signed, area-compensated rectangle sum of a feature placed at `origin`.
///
/// Each rect corner is scaled and rounded; the rect's sum is then multiplied
/// by `unscaled area / scaled area` so the value stays in base-window units
/// and balanced features stay balanced.
pub fn eval_feature(
    ii: &IntegralImage,
    feat: &HaarFeature,
    origin: (usize, usize),
    scale: f64,
) -> Result<f64> {
    if !(scale >= 1.0) {
        return Err(Error::InvalidArgument(format!("scale {scale} must be >= 1")));
    }
    let mut value = 0.0;
    for r in &feat.rects {
        let (x0, y0, x1, y1) = scaled_rect(r, scale);
        let (ax0, ay0, ax1, ay1) = (origin.0 + x0, origin.1 + y0, origin.0 + x1, origin.1 + y1);
        if ax1 > ii.width() || ay1 > ii.height() {
            return Err(Error::OutOfBounds(format!(
                "feature rect reaches ({ax1}, {ay1}) in a {}x{} image",
                ii.width(),
                ii.height()
            )));
        }
        let scaled_area = ((x1 - x0) * (y1 - y0)) as f64;
        let comp = r.area() as f64 / scaled_area;
        value += r.sign as f64 * ii.rect_sum(ax0, ay0, ax1, ay1) * comp;
    }
    Ok(value)
}

fn parse_num<T: std::str::FromStr>(tok: Option<&str>, what: &str, line: usize) -> Result<T> {
    let tok = tok.ok_or_else(|| Error::Syntax {
        line,
        message: format!("missing {what}"),
    })?;
    tok.parse().map_err(|_| Error::Syntax {
        line,
        message: format!("{what} {tok:?} is not a valid number"),
    })
}

fn parse_sign(tok: Option<&str>, what: &str, line: usize) -> Result<i8> {
    let v: i8 = parse_num(tok, what, line)?;
    if v != 1 && v != -1 {
        return Err(Error::Syntax {
            line,
            message: format!("{what} must be 1 or -1"),
        });
    }
    Ok(v)
}

/// Parses and validates the text cascade format described in the module docs.
pub fn parse_cascade(text: &str) -> Result<CascadeModel> {
    let mut window = None;
    let mut stages: Vec<CascadeStage> = Vec::new();
    // (kind, expected rects, line of the weak header)
    let mut pending: Option<(FeatureKind, usize, usize)> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut toks = content.split_whitespace();
        let keyword = toks.next().unwrap_or_default();
        let syntax = |message: String| Error::Syntax { line, message };

        if let Some((_, remaining, _)) = pending {
            if keyword != "rect" {
                return Err(syntax(format!("expected {remaining} more rect line(s)")));
            }
        }

        match keyword {
            "window" => {
                if window.is_some() {
                    return Err(syntax("duplicate window line".into()));
                }
                if !stages.is_empty() {
                    return Err(syntax("window must precede stages".into()));
                }
                let w: usize = parse_num(toks.next(), "window width", line)?;
                let h: usize = parse_num(toks.next(), "window height", line)?;
                window = Some((w, h));
            }
            "stage" => {
                if window.is_none() {
                    return Err(syntax("stage before window".into()));
                }
                let threshold: f64 = parse_num(toks.next(), "stage threshold", line)?;
                stages.push(CascadeStage {
                    weak: Vec::new(),
                    threshold,
                });
            }
            "weak" => {
                let Some(stage) = stages.last_mut() else {
                    return Err(syntax("weak classifier outside a stage".into()));
                };
                let vote: f64 = parse_num(toks.next(), "vote", line)?;
                let polarity = parse_sign(toks.next(), "polarity", line)?;
                let threshold: f64 = parse_num(toks.next(), "threshold", line)?;
                let kind_tok = toks.next().ok_or_else(|| syntax("missing feature kind".into()))?;
                let kind = FeatureKind::from_keyword(kind_tok)
                    .ok_or_else(|| syntax(format!("unknown feature kind {kind_tok:?}")))?;
                let n: usize = parse_num(toks.next(), "rect count", line)?;
                if n != kind.rect_count() {
                    return Err(syntax(format!(
                        "{kind_tok} feature needs {} rects, header says {n}",
                        kind.rect_count()
                    )));
                }
                stage.weak.push(WeakClassifier {
                    feature: HaarFeature::new(kind, Vec::with_capacity(n)),
                    threshold,
                    polarity,
                    vote,
                });
                pending = Some((kind, n, line));
            }
            "rect" => {
                let Some((kind, remaining, header)) = pending else {
                    return Err(syntax("rect outside a weak classifier".into()));
                };
                let x: usize = parse_num(toks.next(), "rect x", line)?;
                let y: usize = parse_num(toks.next(), "rect y", line)?;
                let w: usize = parse_num(toks.next(), "rect width", line)?;
                let h: usize = parse_num(toks.next(), "rect height", line)?;
                let sign = parse_sign(toks.next(), "rect sign", line)?;
                let weak = stages
                    .last_mut()
                    .and_then(|s| s.weak.last_mut())
                    .expect("pending rect implies a weak classifier");
                weak.feature.rects.push(HaarRect::new(x, y, w, h, sign));
                pending = (remaining > 1).then_some((kind, remaining - 1, header));
            }
            other => return Err(syntax(format!("unknown directive {other:?}"))),
        }
        if let Some(extra) = toks.next() {
            return Err(syntax(format!("unexpected trailing token {extra:?}")));
        }
    }
    if let Some((_, remaining, header)) = pending {
        return Err(Error::Syntax {
            line: header,
            message: format!("weak classifier is missing {remaining} rect line(s)"),
        });
    }
    let window = window.ok_or_else(|| Error::Syntax {
        line: text.lines().count().max(1),
        message: "missing window line".into(),
    })?;
    let model = CascadeModel { window, stages };
    model.validate()?;
    Ok(model)
}

pub fn format_cascade(model: &CascadeModel) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "window {} {}", model.window.0, model.window.1);
    for stage in &model.stages {
        let _ = writeln!(out, "stage {:?}", stage.threshold);
        for weak in &stage.weak {
            let _ = writeln!(
                out,
                "weak {:?} {} {:?} {} {}",
                weak.vote,
                weak.polarity,
                weak.threshold,
                weak.feature.kind.keyword(),
                weak.feature.rects.len()
            );
            for r in &weak.feature.rects {
                let _ = writeln!(out, "rect {} {} {} {} {}", r.x, r.y, r.w, r.h, r.sign);
            }
        }
    }
    out
}

pub fn load_cascade(path: impl AsRef<Path>) -> Result<CascadeModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_cascade(&text)
}

pub fn save_cascade(model: &CascadeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_cascade(model)).map_err(|e| Error::io(path, e))
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FaceBox {
    pub y: usize,
    pub x: usize,
    pub width: usize,
    pub height: usize,
}

impl FaceBox {
    pub fn new(x: usize, y: usize, width: usize, height: usize) -> Self {
        FaceBox {
            y,
            x,
            width,
            height,
        }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    pub fn iou(&self, other: &FaceBox) -> f64 {
        let ix0 = self.x.max(other.x);
        let iy0 = self.y.max(other.y);
        let ix1 = (self.x + self.width).min(other.x + other.width);
        let iy1 = (self.y + self.height).min(other.y + other.height);
        if ix1 <= ix0 || iy1 <= iy0 {
            return 0.0;
        }
        let inter = ((ix1 - ix0) * (iy1 - iy0)) as f64;
        inter / ((self.area() + other.area()) as f64 - inter)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectParams {
    pub scale_step: f64,
    pub window_stride: usize,
    pub min_overlap: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams {
            scale_step: 1.25,
            window_stride: 2,
            min_overlap: 0.3,
        }
    }
}

/// A single accepted window before merging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawDetection {
    pub bbox: FaceBox,
    pub scale: f64,
}

/// Every window of the scale pyramid accepted by the cascade, sorted by
/// `(y, x, scale)`.
pub fn scan_windows(
    img: &GrayImage,
    model: &CascadeModel,
    params: &DetectParams,
) -> Result<Vec<RawDetection>> {
    if !(params.scale_step > 1.0) {
        return Err(Error::InvalidArgument("scale_step must exceed 1".into()));
    }
    let (bw, bh) = model.window;
    if img.width() < bw || img.height() < bh {
        return Err(Error::InvalidArgument(format!(
            "{}x{} image is smaller than the {bw}x{bh} base window",
            img.width(),
            img.height()
        )));
    }
    let ii = integral_image(img);
    let mut windows = Vec::new();
    let mut scale = 1.0f64;
    loop {
        let ww = (bw as f64 * scale).round() as usize;
        let wh = (bh as f64 * scale).round() as usize;
        if ww > img.width() || wh > img.height() {
            break;
        }
        let stride = ((params.window_stride.max(1) as f64 * scale).round() as usize).max(1);
        for y in (0..=img.height() - wh).step_by(stride) {
            for x in (0..=img.width() - ww).step_by(stride) {
                windows.push((x, y, ww, wh, scale));
            }
        }
        scale *= params.scale_step;
    }
    let hits: Result<Vec<Option<RawDetection>>> = windows
        .par_iter()
        .map(|&(x, y, w, h, s)| {
            Ok(model.accepts(&ii, (x, y), s)?.then_some(RawDetection {
                bbox: FaceBox::new(x, y, w, h),
                scale: s,
            }))
        })
        .collect();
    let mut hits: Vec<RawDetection> = hits?.into_iter().flatten().collect();
    hits.sort_by(|a, b| {
        (a.bbox.y, a.bbox.x)
            .cmp(&(b.bbox.y, b.bbox.x))
            .then(a.scale.partial_cmp(&b.scale).unwrap_or(Ordering::Equal))
    });
    Ok(hits)
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Groups detections whose IoU reaches `min_overlap` (transitively) and
/// replaces each group by its rounded average box.
pub fn merge_detections(dets: &[RawDetection], min_overlap: f64) -> Vec<FaceBox> {
    let n = dets.len();
    let mut parent: Vec<usize> = (0..n).collect();
    for i in 0..n {
        for j in i + 1..n {
            if dets[i].bbox.iou(&dets[j].bbox) >= min_overlap {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let mut boxes: Vec<FaceBox> = groups
        .values()
        .map(|members| {
            let k = members.len() as f64;
            let avg = |f: fn(&FaceBox) -> usize| {
                (members.iter().map(|&i| f(&dets[i].bbox) as f64).sum::<f64>() / k).round() as usize
            };
            FaceBox::new(avg(|b| b.x), avg(|b| b.y), avg(|b| b.width), avg(|b| b.height))
        })
        .collect();
    boxes.sort();
    boxes
}

/// Sliding-window cascade detection with overlap merging.
///
/// The output is sorted by `(y, x, width, height)` and does not depend on
/// how windows were scheduled.
pub fn detect_faces(
    img: &GrayImage,
    model: &CascadeModel,
    params: &DetectParams,
) -> Result<Vec<FaceBox>> {
    let hits = scan_windows(img, model, params)?;
    Ok(merge_detections(&hits, params.min_overlap))
}

/// Crops `bbox` and resamples it to the canonical chip size.
pub fn crop_chip(img: &GrayImage, bbox: &FaceBox) -> Result<GrayImage> {
    let crop = img.crop(bbox.x, bbox.y, bbox.width, bbox.height)?;
    resize_bilinear(&crop, CHIP_SIZE, CHIP_SIZE)
}
