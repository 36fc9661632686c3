//! Procedural face-like corpus.
//!
//! Every class is a smooth random texture inside an elliptical face region,
//! with class-specific eye, brow and mouth structure. Probes are clean
//! copies of the gallery image; degradations are applied at benchmark time.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::degrade::mix_seed;
use crate::error::{Error, Result};
use crate::image::{convolve, gaussian_kernel, save_image, GrayImage, CHIP_SIZE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub classes: usize,
    pub seed: u64,
    pub gallery_per_class: usize,
    pub probes_per_class: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            classes: 20,
            seed: 7,
            gallery_per_class: 1,
            probes_per_class: 3,
        }
    }
}

/// Directory name of class `index` among `classes`, zero-padded so names
/// sort in index order.
pub fn class_name(index: usize, classes: usize) -> String {
    let digits = classes.max(1).to_string().len().max(2);
    format!("s{:0digits$}", index + 1)
}

fn ellipse(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    ((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)
}

/// Soft inside-indicator of an ellipse: 1 well inside, 0 outside.
fn blob(x: f64, y: f64, cx: f64, cy: f64, rx: f64, ry: f64) -> f64 {
    (1.5 - ellipse(x, y, cx, cy, rx, ry)).clamp(0.0, 1.0)
}

/// The 64x64 face of class `index` for corpus seed `seed`.
pub fn synth_face(seed: u64, index: usize) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, index as u64));
    let n = CHIP_SIZE;

    let noise = GrayImage::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let texture = convolve(&noise, &gaussian_kernel(1.0, 3).expect("valid kernel")).expect("odd kernel");
    let std = (texture.energy() / texture.len() as f64).sqrt().max(1e-12);

    let waves: Vec<(f64, f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.06),
            )
        })
        .collect();
    let skin = rng.gen_range(0.5..0.65);
    let eye_y = rng.gen_range(20.0..25.0);
    let eye_dx = rng.gen_range(9.0..15.0);
    let eye_rx = rng.gen_range(3.0..6.0);
    let eye_ry = rng.gen_range(2.0..3.5);
    let eye_dark = rng.gen_range(0.25..0.4);
    let brow_gap = rng.gen_range(4.0..7.0);
    let brow_tilt = rng.gen_range(-0.3..0.3);
    let stripe_freq = rng.gen_range(3.0..9.0);
    let stripe_phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let mouth_y = rng.gen_range(44.0..50.0);
    let mouth_rx = rng.gen_range(7.0..13.0);
    let mouth_ry = rng.gen_range(1.5..3.5);
    let nose_len = rng.gen_range(6.0..12.0);

    let (cx, cy) = ((n as f64 - 1.0) / 2.0, 33.0);
    GrayImage::from_fn(n, n, |xi, yi| {
        let (x, y) = (xi as f64, yi as f64);
        let face = ellipse(x, y, cx, cy, 26.0, 30.0);
        if face > 1.0 {
            return (0.15 + 0.05 * texture.get(xi, yi) / std).clamp(0.02, 0.98);
        }
        let (u, v) = (x / n as f64, y / n as f64);
        let mut val = skin + 0.08 * texture.get(xi, yi) / std;
        for &(fx, fy, ph, amp) in &waves {
            val += amp * (std::f64::consts::TAU * (fx * u + fy * v) + ph).cos();
        }
        if (eye_y - 8.0..eye_y + 6.0).contains(&y) {
            val += 0.08 * (std::f64::consts::TAU * stripe_freq * u + stripe_phase).sin();
        }
        for side in [-1.0, 1.0] {
            let ex = cx + side * eye_dx;
            val -= eye_dark * blob(x, y, ex, eye_y, eye_rx, eye_ry);
            let by = eye_y - brow_gap + side * brow_tilt * (x - ex);
            val -= 0.2 * blob(x, y, ex, by, eye_rx + 1.5, 1.2);
        }
        val -= 0.08 * blob(x, y, cx, eye_y + 4.0 + nose_len / 2.0, 2.0, nose_len / 2.0);
        val -= 0.3 * blob(x, y, cx, mouth_y, mouth_rx, mouth_ry);
        val.clamp(0.02, 0.98)
    })
}

/// Writes `gallery/<class>/g<i>.pgm` and `probe/<class>/p<i>.pgm` under
/// `out`. The output depends only on the options.
pub fn make_synth(out: impl AsRef<Path>, opts: &SynthOptions) -> Result<()> {
    if opts.classes == 0 || opts.gallery_per_class == 0 {
        return Err(Error::InvalidArgument("need at least one class and gallery image".into()));
    }
    let out = out.as_ref();
    for c in 0..opts.classes {
        let name = class_name(c, opts.classes);
        let face = synth_face(opts.seed, c);
        for (split, prefix, count) in [
            ("gallery", "g", opts.gallery_per_class),
            ("probe", "p", opts.probes_per_class),
        ] {
            if count == 0 {
                continue;
            }
            let dir = out.join(split).join(&name);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            for i in 0..count {
                save_image(&face, dir.join(format!("{prefix}{i}.pgm")))?;
            }
        }
    }
    Ok(())
}
