//! Seeded synthetic degradations for probes.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::illum::{harmonic_basis, relight, IllumCoeffs, NormalMap, SH_C0, SH_C1, SH_C2};
use crate::image::{convolve, default_gaussian_radius, gaussian_kernel, GrayImage};
use crate::tsf::{apply_tsf, TransformSet, Tsf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TsfMode {
    #[default]
    None,
    /// Straight motion path of random angle and length.
    RandomLine,
    /// A few random translations with random weights.
    RandomSparse,
}

impl fmt::Display for TsfMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TsfMode::None => "none",
            TsfMode::RandomLine => "random-line",
            TsfMode::RandomSparse => "random-sparse",
        })
    }
}

impl FromStr for TsfMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TsfMode::None),
            "random-line" => Ok(TsfMode::RandomLine),
            "random-sparse" => Ok(TsfMode::RandomSparse),
            other => Err(Error::InvalidArgument(format!("unknown TSF mode {other:?}"))),
        }
    }
}

/// Degradations applied in order: TSF blur, Gaussian blur, relighting,
/// checkerboard perturbation. The default turns everything off.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DegradeSpec {
    /// 0 disables the Gaussian blur.
    pub gaussian_sigma: f64,
    pub tsf_radius: usize,
    pub tsf_mode: TsfMode,
    pub relight: bool,
    /// Amplitude of the `+-a` checkerboard added last.
    pub fer_perturb: f64,
    pub seed: u64,
}

impl DegradeSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_sigma.is_finite() && self.gaussian_sigma >= 0.0) {
            return Err(Error::InvalidArgument("gaussian_sigma must be finite and >= 0".into()));
        }
        if !(self.fer_perturb.is_finite() && self.fer_perturb >= 0.0) {
            return Err(Error::InvalidArgument("fer_perturb must be finite and >= 0".into()));
        }
        if self.tsf_mode != TsfMode::None && self.tsf_radius == 0 {
            return Err(Error::InvalidArgument("a random TSF needs tsf_radius >= 1".into()));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.gaussian_sigma == 0.0
            && self.tsf_mode == TsfMode::None
            && !self.relight
            && self.fer_perturb == 0.0
    }

    /// The same spec with a seed derived from this one and `index`.
    pub fn for_item(&self, index: u64) -> DegradeSpec {
        DegradeSpec {
            seed: mix_seed(self.seed, index),
            ..self.clone()
        }
    }
}

/// SplitMix64 finalizer over `seed` and `index`.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A random TSF over the radius-`k` translation set, weights summing to 1.
pub fn random_tsf<R: Rng>(rng: &mut R, ts: &TransformSet, mode: TsfMode) -> Tsf {
    let k = ts.radius() as f64;
    let mut weights = vec![0.0; ts.len()];
    match mode {
        TsfMode::None => weights[ts.identity_index()] = 1.0,
        TsfMode::RandomLine => {
            let angle = rng.gen_range(0.0..std::f64::consts::PI);
            let length = rng.gen_range(1.0..=2.0 * k);
            let samples = (2.0 * length).ceil() as usize + 1;
            for s in 0..samples {
                let t = -length / 2.0 + length * s as f64 / (samples - 1) as f64;
                let dx = (t * angle.cos()).round().clamp(-k, k) as isize;
                let dy = (t * angle.sin()).round().clamp(-k, k) as isize;
                let j = ts.index_of(dx, dy).expect("clamped into the set");
                weights[j] += 1.0;
            }
        }
        TsfMode::RandomSparse => {
            let count = rng.gen_range(2..=4usize).min(ts.len());
            let mut chosen = Vec::with_capacity(count);
            while chosen.len() < count {
                let j = rng.gen_range(0..ts.len());
                if !chosen.contains(&j) {
                    chosen.push(j);
                }
            }
            for j in chosen {
                weights[j] = rng.gen_range(0.2..1.0);
            }
        }
    }
    let total: f64 = weights.iter().sum();
    Tsf::new(weights.into_iter().map(|w| w / total).collect()).expect("non-negative weights")
}

/// Random lighting around the unit-albedo setting: the constant term keeps
/// the albedo, first-order terms shade by up to 25 %, second-order by 5 %.
pub fn random_illumination<R: Rng>(rng: &mut R) -> IllumCoeffs {
    let mut a = [0.0; 9];
    a[0] = 1.0 / SH_C0;
    for v in &mut a[1..4] {
        *v = rng.gen_range(-0.25..0.25) / SH_C1;
    }
    for v in &mut a[4..9] {
        *v = rng.gen_range(-0.05..0.05) / SH_C2;
    }
    IllumCoeffs(a)
}

/// Adds `+a` on pixels with even `x + y` and `-a` elsewhere. The pattern
/// lies entirely in the diagonal detail band of a 2x2 Haar transform.
pub fn checkerboard(img: &GrayImage, amplitude: f64) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let s = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
        img.get(x, y) + s * amplitude
    })
}

pub fn degrade(img: &GrayImage, spec: &DegradeSpec) -> Result<GrayImage> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = img.clone();
    if spec.tsf_mode != TsfMode::None {
        let ts = TransformSet::new(spec.tsf_radius);
        let tsf = random_tsf(&mut rng, &ts, spec.tsf_mode);
        out = apply_tsf(&out, &tsf, &ts)?;
    }
    if spec.gaussian_sigma > 0.0 {
        let kernel = gaussian_kernel(spec.gaussian_sigma, default_gaussian_radius(spec.gaussian_sigma))?;
        out = convolve(&out, &kernel)?;
    }
    if spec.relight {
        let normals = NormalMap::ellipsoid_cap(out.width(), out.height());
        let basis = harmonic_basis(&out, &normals)?;
        out = relight(&basis, &random_illumination(&mut rng));
    }
    if spec.fer_perturb > 0.0 {
        out = checkerboard(&out, spec.fer_perturb);
    }
    Ok(out)
}
