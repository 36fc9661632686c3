//! Nine-dimensional harmonic illumination model.
//!
//! A gallery chip is treated as an albedo map over a generic face shape. The
//! nine basis images are the albedo modulated by the real spherical
//! harmonics of order <= 2 evaluated at each pixel's surface normal, in the
//! order: constant; `nx`, `ny`, `nz`; `nx*ny`, `ny*nz`, `nx*nz`,
//! `3nz^2 - 1`, `nx^2 - ny^2`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::image::{GrayImage, CHIP_SIZE};
use crate::tsf::WeightMatrix;

pub const BASIS_LEN: usize = 9;

/// `1 / sqrt(4 pi)`, the value of the constant harmonic.
pub const SH_C0: f64 = 0.282_094_791_773_878_14;
/// `sqrt(3 / (4 pi))`
pub const SH_C1: f64 = 0.488_602_511_902_919_9;
/// `sqrt(15 / (4 pi))`
pub const SH_C2: f64 = 1.092_548_430_592_079_2;
/// `sqrt(5 / (16 pi))`
pub const SH_C3: f64 = 0.315_391_565_252_520_05;
/// `sqrt(15 / (16 pi))`
pub const SH_C4: f64 = 0.546_274_215_296_039_6;

const TIKHONOV: f64 = 1e-8;
const UNIT_TOL: f64 = 1e-6;

/// Real spherical harmonics of order <= 2 at a unit direction.
#[inline]
pub fn real_sh9(n: [f64; 3]) -> [f64; BASIS_LEN] {
    let [x, y, z] = n;
    [
        SH_C0,
        SH_C1 * x,
        SH_C1 * y,
        SH_C1 * z,
        SH_C2 * x * y,
        SH_C2 * y * z,
        SH_C2 * x * z,
        SH_C3 * (3.0 * z * z - 1.0),
        SH_C4 * (x * x - y * y),
    ]
}

/// Per-pixel unit surface normals, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    normals: Vec<[f64; 3]>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize, normals: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if normals.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} normals for a {width}x{height} map",
                normals.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
            if !((norm - 1.0).abs() <= UNIT_TOL) {
                return Err(Error::InvalidArgument(format!(
                    "normal {i} has norm {norm}, expected 1"
                )));
            }
            if n[2] < 0.0 {
                return Err(Error::InvalidArgument(format!("normal {i} faces away (nz < 0)")));
            }
        }
        Ok(NormalMap {
            width,
            height,
            normals,
        })
    }

    /// Every normal pointing straight at the camera.
    pub fn frontal(width: usize, height: usize) -> Self {
        NormalMap {
            width,
            height,
            normals: vec![[0.0, 0.0, 1.0]; width * height],
        }
    }

    /// Normals of an ellipsoidal cap centered on a `width x height` raster.
    ///
    /// The height field is `z = d * sqrt(1 - u^2 - v^2)` with
    /// `u = (x - cx) / rx`, `v = (y - cy) / ry`, semi-axes `rx = 0.75 W`,
    /// `ry = 0.85 H` and depth `d = 0.5 W`, so the cap covers the whole
    /// raster and its gradient stays finite.
    pub fn ellipsoid_cap(width: usize, height: usize) -> Self {
        let cx = (width as f64 - 1.0) / 2.0;
        let cy = (height as f64 - 1.0) / 2.0;
        let rx = 0.75 * width as f64;
        let ry = 0.85 * height as f64;
        let depth = 0.5 * width as f64;
        let mut normals = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let u = (x as f64 - cx) / rx;
                let v = (y as f64 - cy) / ry;
                let s = (1.0 - u * u - v * v).max(1e-6).sqrt();
                // (-dz/dx, -dz/dy, 1) up to the common factor s
                let gx = depth * u / rx;
                let gy = depth * v / ry;
                let norm = (gx * gx + gy * gy + s * s).sqrt();
                normals.push([gx / norm, gy / norm, s / norm]);
            }
        }
        NormalMap {
            width,
            height,
            normals,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    pub fn at(&self, x: usize, y: usize) -> [f64; 3] {
        self.normals[y * self.width + x]
    }

    /// Serializes to the three-plane text format:
    ///
    /// ```text
    /// NMAP
    /// W H
    /// <H lines of W nx values>
    /// <H lines of W ny values>
    /// <H lines of W nz values>
    /// ```
    ///
    /// Values are written in shortest round-trip form, so parsing reproduces
    /// the map bit for bit.
    pub fn to_text(&self) -> String {
        let mut out = format!("NMAP\n{} {}\n", self.width, self.height);
        for plane in 0..3 {
            for row in self.normals.chunks(self.width) {
                let line: Vec<String> = row.iter().map(|n| format!("{:?}", n[plane])).collect();
                let _ = writeln!(out, "{}", line.join(" "));
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let syntax = |line: usize, message: &str| Error::Syntax {
            line,
            message: message.to_string(),
        };
        match lines.next() {
            Some((_, "NMAP")) => {}
            Some((line, _)) => return Err(syntax(line, "expected NMAP header")),
            None => return Err(syntax(1, "empty normal map")),
        }
        let (line, dims) = lines.next().ok_or_else(|| syntax(2, "missing dimensions"))?;
        let dims: Vec<usize> = dims
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| syntax(line, "bad dimension")))
            .collect::<Result<_>>()?;
        let [width, height] = dims[..] else {
            return Err(syntax(line, "expected `W H`"));
        };
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        let mut normals = vec![[0.0; 3]; width * height];
        for plane in 0..3 {
            for y in 0..height {
                let (line, row) = lines
                    .next()
                    .ok_or_else(|| syntax(text.lines().count(), "truncated plane data"))?;
                let vals: Vec<f64> = row
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|_| syntax(line, "bad value")))
                    .collect::<Result<_>>()?;
                if vals.len() != width {
                    return Err(syntax(line, "wrong number of values in row"));
                }
                for (x, v) in vals.into_iter().enumerate() {
                    normals[y * width + x][plane] = v;
                }
            }
        }
        if let Some((line, _)) = lines.next() {
            return Err(syntax(line, "trailing data"));
        }
        NormalMap::new(width, height, normals)
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

/// The bundled generic face shape at canonical chip resolution.
pub fn default_normal_map() -> NormalMap {
    NormalMap::ellipsoid_cap(CHIP_SIZE, CHIP_SIZE)
}

/// Nine same-sized basis images.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisSet {
    images: Vec<GrayImage>,
}

impl BasisSet {
    pub fn new(images: Vec<GrayImage>) -> Result<Self> {
        if images.len() != BASIS_LEN {
            return Err(Error::InvalidArgument(format!(
                "basis needs {BASIS_LEN} images, got {}",
                images.len()
            )));
        }
        if images.iter().any(|b| !b.same_dims(&images[0])) {
            return Err(Error::DimensionMismatch("basis images differ in size".into()));
        }
        Ok(BasisSet { images })
    }

    pub fn images(&self) -> &[GrayImage] {
        &self.images
    }

    pub fn width(&self) -> usize {
        self.images[0].width()
    }

    pub fn height(&self) -> usize {
        self.images[0].height()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IllumCoeffs(pub [f64; BASIS_LEN]);

impl IllumCoeffs {
    pub fn zero() -> Self {
        IllumCoeffs([0.0; BASIS_LEN])
    }

    /// Coefficients that reproduce the albedo under frontal normals.
    pub fn albedo() -> Self {
        let mut a = [0.0; BASIS_LEN];
        a[0] = 1.0 / SH_C0;
        IllumCoeffs(a)
    }
}

pub fn harmonic_basis(albedo: &GrayImage, normals: &NormalMap) -> Result<BasisSet> {
    if albedo.width() != normals.width || albedo.height() != normals.height {
        return Err(Error::DimensionMismatch(format!(
            "albedo {}x{} vs normals {}x{}",
            albedo.width(),
            albedo.height(),
            normals.width,
            normals.height
        )));
    }
    for (i, n) in normals.normals.iter().enumerate() {
        let norm = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if !((norm - 1.0).abs() <= UNIT_TOL) {
            return Err(Error::InvalidArgument(format!("normal {i} is not unit length")));
        }
    }
    let n = albedo.len();
    let mut planes: Vec<Vec<f64>> = (0..BASIS_LEN).map(|_| Vec::with_capacity(n)).collect();
    for (&a, &nrm) in albedo.pixels().iter().zip(&normals.normals) {
        for (plane, y) in planes.iter_mut().zip(real_sh9(nrm)) {
            plane.push(a * y);
        }
    }
    let images = planes
        .into_iter()
        .map(|p| GrayImage::new(albedo.width(), albedo.height(), p))
        .collect::<Result<Vec<_>>>()?;
    BasisSet::new(images)
}

/// `sum_i alpha_i * b_i` without clamping.
pub fn relight_linear(basis: &BasisSet, coeffs: &IllumCoeffs) -> GrayImage {
    let first = &basis.images[0];
    let mut out = vec![0.0; first.len()];
    for (img, &a) in basis.images.iter().zip(&coeffs.0) {
        for (o, &v) in out.iter_mut().zip(img.pixels()) {
            *o += a * v;
        }
    }
    GrayImage::new(first.width(), first.height(), out).expect("basis dimensions are valid")
}

/// Relit image with negative values clamped to zero.
pub fn relight(basis: &BasisSet, coeffs: &IllumCoeffs) -> GrayImage {
    relight_linear(basis, coeffs).map(|v| v.max(0.0))
}

/// Weighted least squares `min ||W (target - sum_i c_i * columns_i)||^2`
/// through damped normal equations.
pub(crate) fn weighted_ls9(
    target: &[f64],
    columns: &[&[f64]; BASIS_LEN],
    weights: &[f64],
) -> IllumCoeffs {
    let mut gram = SMatrix::<f64, BASIS_LEN, BASIS_LEN>::zeros();
    let mut rhs = SVector::<f64, BASIS_LEN>::zeros();
    let w2: Vec<f64> = weights.iter().map(|w| w * w).collect();
    for i in 0..BASIS_LEN {
        let ci = columns[i];
        rhs[i] = ci.iter().zip(target).zip(&w2).map(|((a, p), w)| w * a * p).sum();
        for j in 0..=i {
            let cj = columns[j];
            let v: f64 = ci.iter().zip(cj).zip(&w2).map(|((a, b), w)| w * a * b).sum();
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    solve_normal9(gram, rhs)
}

/// Solves the damped 9x9 normal equations `(M + damping I) alpha = rhs`.
pub(crate) fn solve_normal9(
    mut gram: SMatrix<f64, BASIS_LEN, BASIS_LEN>,
    rhs: SVector<f64, BASIS_LEN>,
) -> IllumCoeffs {
    for i in 0..BASIS_LEN {
        gram[(i, i)] += TIKHONOV;
    }
    let sol = match gram.cholesky() {
        Some(ch) => ch.solve(&rhs),
        // damping keeps the system positive definite unless entries overflow
        None => gram.lu().solve(&rhs).unwrap_or_else(SVector::zeros),
    };
    let mut out = [0.0; BASIS_LEN];
    out.copy_from_slice(sol.as_slice());
    IllumCoeffs(out)
}

/// Illumination coefficients minimizing `||W (p - sum_i alpha_i b_i)||^2`.
pub fn fit_illumination(
    probe: &GrayImage,
    basis: &BasisSet,
    weights: &WeightMatrix,
) -> Result<IllumCoeffs> {
    if !probe.same_dims(&basis.images[0]) {
        return Err(Error::DimensionMismatch("probe and basis sizes differ".into()));
    }
    if weights.len() != probe.len() {
        return Err(Error::DimensionMismatch("weight matrix length differs from probe".into()));
    }
    let cols: [&[f64]; BASIS_LEN] = std::array::from_fn(|i| basis.images[i].pixels());
    Ok(weighted_ls9(probe.pixels(), &cols, weights.values()))
}

/// Weighted squared residual `||W (p - relight_linear(basis, coeffs))||^2`.
pub fn illumination_residual(
    probe: &GrayImage,
    basis: &BasisSet,
    coeffs: &IllumCoeffs,
    weights: &WeightMatrix,
) -> f64 {
    let model = relight_linear(basis, coeffs);
    probe
        .pixels()
        .iter()
        .zip(model.pixels())
        .zip(weights.values())
        .map(|((p, m), w)| (w * (p - m)).powi(2))
        .sum()
}
