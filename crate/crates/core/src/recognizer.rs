//! The three identification pipelines.
//!
//! * BRFR fits a blur (TSF) of each gallery chip to the probe.
//! * BIRFR jointly fits blur and nine-term illumination.
//! * BIEFR runs BIRFR on expression-neutralized probe and gallery.
//!
//! Each gallery entry is transformed by its fitted parameters and compared
//! with the probe through weighted block-LBP distance (or, optionally, the
//! fitting residual). Entries are scored independently, possibly in
//! parallel; results are assembled in gallery order, so the outcome does
//! not depend on scheduling.

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fer::neutralize;
use crate::illum::{default_normal_map, harmonic_basis, IllumCoeffs, NormalMap};
use crate::image::{GrayImage, CHIP_SIZE};
use crate::lbp::{default_weight_map, descriptor_distance, extract_descriptor, BlockWeightMap, LbpDescriptor};
use crate::tsf::{
    apply_tsf, build_dictionary, solve_tsf, transform_with_basis, DictionaryMatrix, JointSystem,
    SolverConfig, TransformSet, Tsf, WeightMatrix,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Brfr,
    Birfr,
    Biefr,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Algorithm::Brfr => "brfr",
            Algorithm::Birfr => "birfr",
            Algorithm::Biefr => "biefr",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "brfr" => Ok(Algorithm::Brfr),
            "birfr" => Ok(Algorithm::Birfr),
            "biefr" => Ok(Algorithm::Biefr),
            other => Err(Error::InvalidArgument(format!("unknown algorithm {other:?}"))),
        }
    }
}

/// Which per-class score picks the identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecisionRule {
    /// Weighted LBP distance between probe and transformed gallery chip.
    #[default]
    Lbp,
    /// Weighted reconstruction residual of the fit.
    Residual,
}

impl FromStr for DecisionRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lbp" => Ok(DecisionRule::Lbp),
            "residual" => Ok(DecisionRule::Residual),
            other => Err(Error::InvalidArgument(format!("unknown decision rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecognizerConfig {
    pub transforms: TransformSet,
    pub solver: SolverConfig,
    /// LBP grid as (blocks_x, blocks_y).
    pub grid: (usize, usize),
    pub block_weights: BlockWeightMap,
    /// Overrides the pixel broadcast of `block_weights` in the fits.
    pub pixel_weights: Option<WeightMatrix>,
    pub decision: DecisionRule,
    pub fer_strength: f64,
    pub normals: Arc<NormalMap>,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            transforms: TransformSet::default(),
            solver: SolverConfig::default(),
            grid: (8, 8),
            block_weights: default_weight_map(8, 8).expect("8x8 is a valid grid"),
            pixel_weights: None,
            decision: DecisionRule::Lbp,
            fer_strength: 1.0,
            normals: Arc::new(default_normal_map()),
        }
    }
}

impl RecognizerConfig {
    pub fn fit_weights(&self) -> Result<WeightMatrix> {
        match &self.pixel_weights {
            Some(w) if w.len() == CHIP_SIZE * CHIP_SIZE => Ok(w.clone()),
            Some(w) => Err(Error::DimensionMismatch(format!(
                "pixel weights have {} entries, chips {}",
                w.len(),
                CHIP_SIZE * CHIP_SIZE
            ))),
            None => self.block_weights.pixel_weights(CHIP_SIZE, CHIP_SIZE),
        }
    }

    fn check(&self) -> Result<()> {
        self.solver.validate()?;
        if (self.block_weights.blocks_x(), self.block_weights.blocks_y()) != self.grid {
            return Err(Error::DimensionMismatch(format!(
                "block weights are {}x{}, grid is {}x{}",
                self.block_weights.blocks_x(),
                self.block_weights.blocks_y(),
                self.grid.0,
                self.grid.1
            )));
        }
        if !(0.0..=1.0).contains(&self.fer_strength) {
            return Err(Error::InvalidArgument("fer_strength must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One enrolled chip. Its harmonic basis and translation dictionary are
/// built on first use and kept.
#[derive(Debug)]
pub struct GalleryEntry {
    class_id: String,
    chip: GrayImage,
    joint: OnceLock<(Arc<NormalMap>, JointSystem)>,
    dictionary: OnceLock<DictionaryMatrix>,
}

impl Clone for GalleryEntry {
    fn clone(&self) -> Self {
        GalleryEntry {
            class_id: self.class_id.clone(),
            chip: self.chip.clone(),
            joint: self.joint.clone(),
            dictionary: self.dictionary.clone(),
        }
    }
}

impl GalleryEntry {
    pub fn new(class_id: impl Into<String>, chip: GrayImage) -> Result<Self> {
        let class_id = class_id.into();
        if class_id.is_empty() {
            return Err(Error::InvalidArgument("class id must not be empty".into()));
        }
        if chip.width() != CHIP_SIZE || chip.height() != CHIP_SIZE {
            return Err(Error::DimensionMismatch(format!(
                "gallery chip is {}x{}, expected {CHIP_SIZE}x{CHIP_SIZE}",
                chip.width(),
                chip.height()
            )));
        }
        Ok(GalleryEntry {
            class_id,
            chip,
            joint: OnceLock::new(),
            dictionary: OnceLock::new(),
        })
    }

    pub fn class_id(&self) -> &str {
        &self.class_id
    }

    pub fn chip(&self) -> &GrayImage {
        &self.chip
    }

    fn joint_system(
        &self,
        normals: &Arc<NormalMap>,
        ts: &TransformSet,
        weights: &WeightMatrix,
    ) -> Result<Cow<'_, JointSystem>> {
        if let Some((n, sys)) = self.joint.get() {
            let same_normals = Arc::ptr_eq(n, normals) || **n == **normals;
            if same_normals && sys.transform_set() == ts && sys.weights() == weights {
                return Ok(Cow::Borrowed(sys));
            }
            let basis = harmonic_basis(&self.chip, normals)?;
            return Ok(Cow::Owned(JointSystem::new(&basis, ts, weights)?));
        }
        let basis = harmonic_basis(&self.chip, normals)?;
        let sys = JointSystem::new(&basis, ts, weights)?;
        let _ = self.joint.set((normals.clone(), sys));
        self.joint_system(normals, ts, weights)
    }

    fn dictionary(&self, ts: &TransformSet) -> Result<Cow<'_, DictionaryMatrix>> {
        if let Some(d) = self.dictionary.get() {
            if d.cols() == ts.len() {
                return Ok(Cow::Borrowed(d));
            }
            return Ok(Cow::Owned(build_dictionary(&self.chip, ts)?));
        }
        let _ = self.dictionary.set(build_dictionary(&self.chip, ts)?);
        self.dictionary(ts)
    }
}

/// Enrolled entries plus the class order used for reporting and ties.
#[derive(Debug, Clone, Default)]
pub struct Gallery {
    entries: Vec<GalleryEntry>,
    classes: Vec<String>,
}

impl Gallery {
    /// Classes are ordered by first appearance.
    pub fn new(entries: Vec<GalleryEntry>) -> Self {
        let mut classes: Vec<String> = Vec::new();
        for e in &entries {
            if !classes.iter().any(|c| c == &e.class_id) {
                classes.push(e.class_id.clone());
            }
        }
        Gallery { entries, classes }
    }

    pub fn from_chips<I, S>(chips: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, GrayImage)>,
        S: Into<String>,
    {
        let entries = chips
            .into_iter()
            .map(|(c, img)| GalleryEntry::new(c, img))
            .collect::<Result<Vec<_>>>()?;
        Ok(Gallery::new(entries))
    }

    pub fn entries(&self) -> &[GalleryEntry] {
        &self.entries
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The same gallery with every chip passed through expression removal.
    pub fn neutralized(&self, strength: f64) -> Result<Gallery> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                if strength == 0.0 {
                    Ok(e.clone())
                } else {
                    GalleryEntry::new(e.class_id.clone(), neutralize(&e.chip, strength)?)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Gallery {
            entries,
            classes: self.classes.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassScore {
    pub class_id: String,
    pub lbp_distance: f64,
    /// Weighted reconstruction residual `r_c` of the fit.
    pub residual: f64,
    pub tsf: Tsf,
    /// Fitted illumination; absent for BRFR.
    pub coeffs: Option<IllumCoeffs>,
    /// Index of the gallery entry that produced this class's score.
    pub entry: usize,
}

impl ClassScore {
    pub fn decision_score(&self, rule: DecisionRule) -> f64 {
        match rule {
            DecisionRule::Lbp => self.lbp_distance,
            DecisionRule::Residual => self.residual,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    pub best_class: String,
    pub best_index: usize,
    pub per_class: Vec<ClassScore>,
    pub algorithm: Algorithm,
    pub decision: DecisionRule,
}

fn check_probe(probe: &GrayImage, gallery: &Gallery) -> Result<()> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if probe.width() != CHIP_SIZE || probe.height() != CHIP_SIZE {
        return Err(Error::DimensionMismatch(format!(
            "probe is {}x{}, expected {CHIP_SIZE}x{CHIP_SIZE}",
            probe.width(),
            probe.height()
        )));
    }
    Ok(())
}

struct EntryScore {
    lbp_distance: f64,
    residual: f64,
    tsf: Tsf,
    coeffs: Option<IllumCoeffs>,
}

fn assemble(
    gallery: &Gallery,
    scores: Vec<EntryScore>,
    algorithm: Algorithm,
    rule: DecisionRule,
) -> Result<MatchResult> {
    let mut per_class: Vec<Option<ClassScore>> = vec![None; gallery.classes.len()];
    for (i, (entry, score)) in gallery.entries.iter().zip(scores).enumerate() {
        let ci = gallery
            .classes
            .iter()
            .position(|c| c == &entry.class_id)
            .expect("class list covers entries");
        let candidate = ClassScore {
            class_id: entry.class_id.clone(),
            lbp_distance: score.lbp_distance,
            residual: score.residual,
            tsf: score.tsf,
            coeffs: score.coeffs,
            entry: i,
        };
        let replace = match &per_class[ci] {
            None => true,
            Some(cur) => candidate.decision_score(rule) < cur.decision_score(rule),
        };
        if replace {
            per_class[ci] = Some(candidate);
        }
    }
    let per_class: Vec<ClassScore> = per_class.into_iter().map(|c| c.expect("every class has an entry")).collect();
    if let Some(bad) = per_class
        .iter()
        .find(|c| !c.decision_score(rule).is_finite())
    {
        return Err(Error::NonFinite(format!("score for class {}", bad.class_id)));
    }
    let mut best = 0;
    for (i, c) in per_class.iter().enumerate() {
        if c.decision_score(rule) < per_class[best].decision_score(rule) {
            best = i;
        }
    }
    Ok(MatchResult {
        best_class: per_class[best].class_id.clone(),
        best_index: best,
        per_class,
        algorithm,
        decision: rule,
    })
}

fn probe_descriptor(probe: &GrayImage, cfg: &RecognizerConfig) -> Result<LbpDescriptor> {
    extract_descriptor(probe, cfg.grid.0, cfg.grid.1)
}

/// Blur-robust identification: per entry, fit a TSF of the chip's
/// translation dictionary to the probe, blur the chip with it and compare
/// LBP descriptors.
pub fn recognize_brfr(probe: &GrayImage, gallery: &Gallery, cfg: &RecognizerConfig) -> Result<MatchResult> {
    check_probe(probe, gallery)?;
    cfg.check()?;
    let weights = cfg.fit_weights()?;
    let probe_desc = probe_descriptor(probe, cfg)?;
    let scores = gallery
        .entries
        .par_iter()
        .map(|entry| {
            let dict = entry.dictionary(&cfg.transforms)?;
            let sol = solve_tsf(probe, &dict, &weights, &cfg.solver)?;
            let blurred = apply_tsf(&entry.chip, &sol.tsf, &cfg.transforms)?;
            let desc = extract_descriptor(&blurred, cfg.grid.0, cfg.grid.1)?;
            Ok(EntryScore {
                lbp_distance: descriptor_distance(&probe_desc, &desc, &cfg.block_weights)?,
                residual: sol.residual,
                tsf: sol.tsf,
                coeffs: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(gallery, scores, Algorithm::Brfr, cfg.decision)
}

fn recognize_joint(
    probe: &GrayImage,
    gallery: &Gallery,
    cfg: &RecognizerConfig,
    algorithm: Algorithm,
) -> Result<MatchResult> {
    check_probe(probe, gallery)?;
    cfg.check()?;
    let weights = cfg.fit_weights()?;
    let probe_desc = probe_descriptor(probe, cfg)?;
    let scores = gallery
        .entries
        .par_iter()
        .map(|entry| {
            let system = entry.joint_system(&cfg.normals, &cfg.transforms, &weights)?;
            let sol = system.solve(probe, &cfg.solver)?;
            let mut transformed = transform_with_basis(system.basis(), &sol.tsf, &sol.coeffs, &cfg.transforms)?;
            if algorithm == Algorithm::Biefr {
                transformed = neutralize(&transformed, cfg.fer_strength)?;
            }
            let desc = extract_descriptor(&transformed, cfg.grid.0, cfg.grid.1)?;
            Ok(EntryScore {
                lbp_distance: descriptor_distance(&probe_desc, &desc, &cfg.block_weights)?,
                residual: sol.residual,
                tsf: sol.tsf,
                coeffs: Some(sol.coeffs),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(gallery, scores, algorithm, cfg.decision)
}

/// Blur- and illumination-robust identification.
pub fn recognize_birfr(probe: &GrayImage, gallery: &Gallery, cfg: &RecognizerConfig) -> Result<MatchResult> {
    recognize_joint(probe, gallery, cfg, Algorithm::Birfr)
}

/// BIEFR: neutralizes the probe and every gallery chip, then runs BIRFR.
/// The transformed gallery chip is neutralized again before its LBP
/// descriptor is taken, so both sides of the comparison carry the same
/// block structure.
pub fn recognize_biefr(probe: &GrayImage, gallery: &Gallery, cfg: &RecognizerConfig) -> Result<MatchResult> {
    cfg.check()?;
    let neutral = gallery.neutralized(cfg.fer_strength)?;
    recognize_biefr_neutralized(probe, &neutral, cfg)
}

/// BIEFR against a gallery that was already passed through
/// [`Gallery::neutralized`] with `cfg.fer_strength`.
pub fn recognize_biefr_neutralized(
    probe: &GrayImage,
    neutral_gallery: &Gallery,
    cfg: &RecognizerConfig,
) -> Result<MatchResult> {
    let p = neutralize(probe, cfg.fer_strength)?;
    recognize_joint(&p, neutral_gallery, cfg, Algorithm::Biefr)
}

pub fn recognize(
    probe: &GrayImage,
    gallery: &Gallery,
    algorithm: Algorithm,
    cfg: &RecognizerConfig,
) -> Result<MatchResult> {
    match algorithm {
        Algorithm::Brfr => recognize_brfr(probe, gallery, cfg),
        Algorithm::Birfr => recognize_birfr(probe, gallery, cfg),
        Algorithm::Biefr => recognize_biefr(probe, gallery, cfg),
    }
}
