//! Gallery/probe directory loading.
//!
//! ```text
//! root/
//!   gallery/<class>/*.pgm
//!   probe/<class>/*.pgm
//! ```
//!
//! Class labels are directory names in lexicographic order; files within a
//! class are read in name order.

use std::fs;
use std::path::{Path, PathBuf};

use crate::detect::{crop_chip, detect_faces, CascadeModel, DetectParams};
use crate::error::{Error, Result};
use crate::image::{load_image, resize_bilinear, GrayImage, CHIP_SIZE};
use crate::recognizer::{Gallery, GalleryEntry};

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledChip {
    pub class_id: String,
    pub chip: GrayImage,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SkippedFile {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Fail on the first unreadable image instead of skipping it.
    pub strict: bool,
    /// Crop the largest detected face before resizing.
    pub detector: Option<(CascadeModel, DetectParams)>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub gallery: Vec<LabeledChip>,
    pub probes: Vec<LabeledChip>,
    pub skipped: Vec<SkippedFile>,
}

impl Dataset {
    /// Assembles a dataset from in-memory chips, checking the layout
    /// invariants.
    pub fn from_parts(gallery: Vec<LabeledChip>, probes: Vec<LabeledChip>) -> Result<Self> {
        let mut classes: Vec<String> = gallery.iter().map(|c| c.class_id.clone()).collect();
        classes.sort();
        classes.dedup();
        let ds = Dataset {
            classes,
            gallery,
            probes,
            skipped: Vec::new(),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        if self.gallery.is_empty() {
            return Err(Error::Dataset("gallery is empty".into()));
        }
        for chip in self.gallery.iter().chain(&self.probes) {
            if chip.chip.width() != CHIP_SIZE || chip.chip.height() != CHIP_SIZE {
                return Err(Error::Dataset(format!(
                    "{}: chip is not {CHIP_SIZE}x{CHIP_SIZE}",
                    chip.path.display()
                )));
            }
        }
        for p in &self.probes {
            if self.classes.binary_search(&p.class_id).is_err() {
                return Err(Error::Dataset(format!(
                    "probe class {:?} has no gallery images",
                    p.class_id
                )));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, class_id: &str) -> Option<usize> {
        self.classes.binary_search_by(|c| c.as_str().cmp(class_id)).ok()
    }

    /// Gallery entries in dataset order.
    pub fn gallery(&self) -> Result<Gallery> {
        let mut entries = self
            .gallery
            .iter()
            .map(|c| GalleryEntry::new(c.class_id.clone(), c.chip.clone()))
            .collect::<Result<Vec<_>>>()?;
        // class order of the gallery follows the sorted class list
        entries.sort_by_key(|e| self.class_index(e.class_id()));
        Ok(Gallery::new(entries))
    }
}

fn sorted_dirs(path: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let p = entry.path();
        if p.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            out.push((name, p));
        }
    }
    out.sort();
    Ok(out)
}

fn sorted_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let p = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_pgm = p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        if p.is_file() && is_pgm {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

/// Loads one image and brings it to chip size, optionally through the
/// detector. Without a detection the whole frame is used.
pub fn load_chip(path: &Path, detector: Option<&(CascadeModel, DetectParams)>) -> Result<GrayImage> {
    let img = load_image(path)?;
    prepare_chip(&img, detector)
}

pub fn prepare_chip(img: &GrayImage, detector: Option<&(CascadeModel, DetectParams)>) -> Result<GrayImage> {
    if let Some((model, params)) = detector {
        let boxes = detect_faces(img, model, params)?;
        // largest box, first in sorted order on ties
        let best = boxes.iter().fold(None::<&crate::detect::FaceBox>, |acc, b| match acc {
            Some(a) if a.area() >= b.area() => Some(a),
            _ => Some(b),
        });
        if let Some(b) = best {
            return crop_chip(img, b);
        }
        log::warn!("no face detected; using the full frame");
    }
    if img.width() == CHIP_SIZE && img.height() == CHIP_SIZE {
        Ok(img.clone())
    } else {
        resize_bilinear(img, CHIP_SIZE, CHIP_SIZE)
    }
}

fn load_split(
    dir: &Path,
    opts: &LoadOptions,
    skipped: &mut Vec<SkippedFile>,
) -> Result<Vec<(String, Vec<LabeledChip>)>> {
    let mut out = Vec::new();
    for (class, class_dir) in sorted_dirs(dir)? {
        let mut chips = Vec::new();
        for path in sorted_images(&class_dir)? {
            match load_chip(&path, opts.detector.as_ref()) {
                Ok(chip) => chips.push(LabeledChip {
                    class_id: class.clone(),
                    chip,
                    path,
                }),
                Err(e) if !opts.strict => {
                    log::warn!("skipping {}: {e}", path.display());
                    skipped.push(SkippedFile {
                        path,
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        out.push((class, chips));
    }
    Ok(out)
}

/// Loads a bare `<class>/*.pgm` tree as a gallery.
pub fn load_gallery_dir(dir: impl AsRef<Path>, opts: &LoadOptions) -> Result<Gallery> {
    let dir = dir.as_ref();
    let mut skipped = Vec::new();
    let (classes, gallery) = gallery_from_split(dir, opts, &mut skipped)?;
    Dataset {
        classes,
        gallery,
        probes: Vec::new(),
        skipped,
    }
    .gallery()
}

fn gallery_from_split(
    dir: &Path,
    opts: &LoadOptions,
    skipped: &mut Vec<SkippedFile>,
) -> Result<(Vec<String>, Vec<LabeledChip>)> {
    if !dir.is_dir() {
        return Err(Error::Dataset(format!("missing gallery directory {}", dir.display())));
    }
    let gallery_classes = load_split(dir, opts, skipped)?;
    let mut classes = Vec::new();
    let mut gallery = Vec::new();
    for (class, chips) in gallery_classes {
        if chips.is_empty() {
            return Err(Error::Dataset(format!("gallery class {class:?} has no readable images")));
        }
        classes.push(class);
        gallery.extend(chips);
    }
    if classes.is_empty() {
        return Err(Error::Dataset(format!("no classes under {}", dir.display())));
    }
    Ok((classes, gallery))
}

pub fn load_dataset(root: impl AsRef<Path>, opts: &LoadOptions) -> Result<Dataset> {
    let root = root.as_ref();
    let mut skipped = Vec::new();
    let (classes, gallery) = gallery_from_split(&root.join("gallery"), opts, &mut skipped)?;

    let probe_dir = root.join("probe");
    let mut probes = Vec::new();
    if probe_dir.is_dir() {
        for (class, chips) in load_split(&probe_dir, opts, &mut skipped)? {
            if classes.binary_search(&class).is_err() {
                return Err(Error::Dataset(format!(
                    "probe class {class:?} does not appear in the gallery"
                )));
            }
            probes.extend(chips);
        }
    }
    let ds = Dataset {
        classes,
        gallery,
        probes,
        skipped,
    };
    ds.validate()?;
    Ok(ds)
}
