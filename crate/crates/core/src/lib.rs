//! Face recognition robust to blur, illumination and expression changes.
//!
//! The crate is organised bottom-up:
//!
//! * [`image`]: grayscale images, PGM I/O, resampling, convolution.
//! * [`detect`]: Haar cascade face detection.
//! * [`illum`]: nine-term spherical-harmonic illumination model.
//! * [`tsf`]: transformation spread functions and the lasso solvers.
//! * [`lbp`]: block LBP descriptors and weighted chi-square distance.
//! * [`fer`]: Haar-wavelet expression removal.
//! * [`recognizer`]: the BRFR, BIRFR and BIEFR pipelines.
//! * [`bench`]: datasets, degradations and evaluation reports.

pub mod bench;
pub mod detect;
pub mod error;
pub mod fer;
pub mod illum;
pub mod image;
pub mod lbp;
pub mod recognizer;
pub mod tsf;

pub use error::{Error, Result};
pub use image::{GrayImage, CHIP_SIZE};
pub use recognizer::{Algorithm, DecisionRule, Gallery, GalleryEntry, MatchResult, RecognizerConfig};
