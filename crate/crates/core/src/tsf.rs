//! Transformation spread functions: translation dictionaries, the weighted
//! non-negative lasso that fits a blur to a probe, and the alternating
//! blur/illumination solver.
//!
//! A TSF is a non-negative weight per transformation in a [`TransformSet`];
//! here transformations are integer translations within a square radius.
//! Blurring an image with a TSF is `A T`, where column `j` of the dictionary
//! `A` is the image translated by transformation `j`.
//!
//! The lasso `min_T ||W (p - A T)||^2 + beta ||T||_1, T >= 0` is solved with
//! FISTA on the Gram form of the problem (`G = A^T W^2 A`, `b = A^T W^2 p`),
//! using a monotone acceptance rule with momentum restart.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::illum::{
    harmonic_basis, relight, relight_linear, solve_normal9, BasisSet, IllumCoeffs, NormalMap, BASIS_LEN,
};
use crate::image::GrayImage;

/// Square grid of integer translations `|dx|, |dy| <= radius`, ordered by
/// `dy` then `dx`, both ascending.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransformSet {
    radius: usize,
    offsets: Vec<(isize, isize)>,
}

impl TransformSet {
    pub fn new(radius: usize) -> Self {
        let r = radius as isize;
        let offsets = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .collect();
        TransformSet { radius, offsets }
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn offsets(&self) -> &[(isize, isize)] {
        &self.offsets
    }

    pub fn index_of(&self, dx: isize, dy: isize) -> Option<usize> {
        let r = self.radius as isize;
        if dx.abs() > r || dy.abs() > r {
            return None;
        }
        let side = 2 * r + 1;
        Some(((dy + r) * side + dx + r) as usize)
    }

    /// Index of the zero translation.
    pub fn identity_index(&self) -> usize {
        self.len() / 2
    }
}

impl Default for TransformSet {
    fn default() -> Self {
        TransformSet::new(5)
    }
}

/// Non-negative weights over a transform set.
#[derive(Debug, Clone, PartialEq)]
pub struct Tsf {
    weights: Vec<f64>,
}

impl Tsf {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::NonFinite(format!("TSF weight {i}")));
        }
        if let Some(i) = weights.iter().position(|&w| w < 0.0) {
            return Err(Error::InvalidArgument(format!("TSF weight {i} is negative")));
        }
        Ok(Tsf { weights })
    }

    pub fn zeros(len: usize) -> Self {
        Tsf {
            weights: vec![0.0; len],
        }
    }

    pub fn one_hot(len: usize, index: usize) -> Self {
        let mut weights = vec![0.0; len];
        weights[index] = 1.0;
        Tsf { weights }
    }

    /// Delta at the zero translation of `ts`.
    pub fn identity(ts: &TransformSet) -> Self {
        Tsf::one_hot(ts.len(), ts.identity_index())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Total mass, which is also the L1 norm.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Fraction of the mass sitting on `index` (0 for an all-zero TSF).
    pub fn concentration(&self, index: usize) -> f64 {
        let m = self.mass();
        if m > 0.0 {
            self.weights[index] / m
        } else {
            0.0
        }
    }
}

/// Diagonal pixel weighting, stored as one weight per pixel.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    values: Vec<f64>,
}

impl WeightMatrix {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidArgument(
                "pixel weights must be finite and non-negative".into(),
            ));
        }
        if values.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidArgument("pixel weights are all zero".into()));
        }
        Ok(WeightMatrix { values })
    }

    pub fn uniform(len: usize) -> Self {
        WeightMatrix {
            values: vec![1.0; len],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How the L1 weight is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// Use this value directly.
    Absolute(f64),
    /// Scale by `max |A^T W^2 p|` of the problem being solved.
    Relative(f64),
}

impl Penalty {
    fn resolve(self, linear_term: &DVector<f64>) -> f64 {
        match self {
            Penalty::Absolute(b) => b,
            Penalty::Relative(r) => r * linear_term.amax(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub penalty: Penalty,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub outer_iters: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            penalty: Penalty::Relative(1e-3),
            max_iters: 500,
            rel_tol: 1e-9,
            outer_iters: 9,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let beta_ok = match self.penalty {
            Penalty::Absolute(b) | Penalty::Relative(b) => b.is_finite() && b >= 0.0,
        };
        if !beta_ok {
            return Err(Error::InvalidArgument("L1 penalty must be finite and >= 0".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidArgument("rel_tol must be positive".into()));
        }
        Ok(())
    }
}

/// Dense `N x N_T` matrix whose columns are translated copies of an image.
#[derive(Debug, Clone, PartialEq)]
pub struct DictionaryMatrix {
    width: usize,
    height: usize,
    matrix: DMatrix<f64>,
}

impl DictionaryMatrix {
    /// Wraps an arbitrary `N x N_T` matrix; `width * height` must equal `N`.
    pub fn from_matrix(width: usize, height: usize, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} rows for a {width}x{height} image",
                matrix.nrows()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary entry".into()));
        }
        Ok(DictionaryMatrix {
            width,
            height,
            matrix,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn column_image(&self, j: usize) -> GrayImage {
        GrayImage::new(self.width, self.height, self.matrix.column(j).iter().copied().collect())
            .expect("column has image size")
    }

    /// `A T` reshaped to an image.
    pub fn apply(&self, tsf: &Tsf) -> Result<GrayImage> {
        if tsf.len() != self.cols() {
            return Err(Error::DimensionMismatch(format!(
                "TSF of length {} for {} columns",
                tsf.len(),
                self.cols()
            )));
        }
        let v = &self.matrix * DVector::from_column_slice(tsf.weights());
        GrayImage::new(self.width, self.height, v.as_slice().to_vec())
    }
}

/// `img` translated by `(dx, dy)` with replicate-edge fill:
/// `out(x, y) = img(x - dx, y - dy)`.
pub fn shift_image(img: &GrayImage, dx: isize, dy: isize) -> GrayImage {
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        img.get_clamped(x as isize - dx, y as isize - dy)
    })
}

fn check_radius(img: &GrayImage, ts: &TransformSet) -> Result<()> {
    if 2 * ts.radius() >= img.width().min(img.height()) {
        return Err(Error::InvalidArgument(format!(
            "translation radius {} too large for a {}x{} image",
            ts.radius(),
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

pub fn build_dictionary(img: &GrayImage, ts: &TransformSet) -> Result<DictionaryMatrix> {
    check_radius(img, ts)?;
    let (w, h) = (img.width(), img.height());
    let n = img.len();
    let mut matrix = DMatrix::<f64>::zeros(n, ts.len());
    for (j, &(dx, dy)) in ts.offsets().iter().enumerate() {
        let mut col = matrix.column_mut(j);
        accumulate_shift(col.as_mut_slice(), img, dx, dy, 1.0);
    }
    Ok(DictionaryMatrix {
        width: w,
        height: h,
        matrix,
    })
}

/// `sum_j T_j * shift_j(img)`, accumulated in transform order.
pub fn apply_tsf(img: &GrayImage, tsf: &Tsf, ts: &TransformSet) -> Result<GrayImage> {
    if tsf.len() != ts.len() {
        return Err(Error::DimensionMismatch(format!(
            "TSF of length {} for a set of {} transforms",
            tsf.len(),
            ts.len()
        )));
    }
    let mut out = vec![0.0; img.len()];
    for (&t, &(dx, dy)) in tsf.weights().iter().zip(ts.offsets()) {
        if t != 0.0 {
            accumulate_shift(&mut out, img, dx, dy, t);
        }
    }
    GrayImage::new(img.width(), img.height(), out)
}

/// `out += t * shift_image(img, dx, dy)` without materializing the shift.
fn accumulate_shift(out: &mut [f64], img: &GrayImage, dx: isize, dy: isize, t: f64) {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    // columns [lo, hi) read an in-range source pixel x - dx
    let lo = dx.clamp(0, w as isize) as usize;
    let hi = (w as isize + dx).clamp(0, w as isize) as usize;
    for y in 0..h {
        let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
        let src = &px[sy * w..(sy + 1) * w];
        let dst = &mut out[y * w..(y + 1) * w];
        let (first, last) = (src[0], src[w - 1]);
        for v in &mut dst[..lo] {
            *v += t * first;
        }
        if lo < hi {
            let start = (lo as isize - dx) as usize;
            for (v, s) in dst[lo..hi].iter_mut().zip(&src[start..start + (hi - lo)]) {
                *v += t * s;
            }
        }
        for v in &mut dst[hi.max(lo)..] {
            *v += t * last;
        }
    }
}

/// `sum_i a[i] * shift_image(img, dx, dy)[i]` without materializing the shift.
fn shift_dot(a: &[f64], img: &GrayImage, dx: isize, dy: isize) -> f64 {
    let (w, h) = (img.width(), img.height());
    let px = img.pixels();
    let lo = dx.clamp(0, w as isize) as usize;
    let hi = (w as isize + dx).clamp(0, w as isize) as usize;
    let mut total = 0.0;
    for y in 0..h {
        let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
        let src = &px[sy * w..(sy + 1) * w];
        let row = &a[y * w..(y + 1) * w];
        let (first, last) = (src[0], src[w - 1]);
        total += row[..lo].iter().sum::<f64>() * first;
        if lo < hi {
            let start = (lo as isize - dx) as usize;
            total += row[lo..hi]
                .iter()
                .zip(&src[start..start + (hi - lo)])
                .map(|(x, s)| x * s)
                .sum::<f64>();
        }
        total += row[hi.max(lo)..].iter().sum::<f64>() * last;
    }
    total
}

/// `||W (p - A T)||^2` expanded as `c - 2 b.T + T' G T`.
#[derive(Debug, Clone)]
struct GramForm {
    gram: DMatrix<f64>,
    linear: DVector<f64>,
    constant: f64,
}

impl GramForm {
    fn dim(&self) -> usize {
        self.gram.ncols()
    }

    /// Largest eigenvalue of the Gram matrix by 20 power iterations.
    fn spectral_estimate(&self) -> f64 {
        let n = self.dim();
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..20 {
            let gv = &self.gram * &v;
            let norm = gv.norm();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = v.dot(&gv);
            v = gv / norm;
        }
        lambda.max(v.dot(&(&self.gram * &v)))
    }
}

/// A weighted lasso instance in Gram form.
///
/// Keeps the row-weighted dictionary so the smooth term can also be
/// evaluated directly, independently of the Gram route.
#[derive(Debug, Clone)]
pub struct LassoProblem {
    weighted_dict: DMatrix<f64>,
    weighted_probe: DVector<f64>,
    form: GramForm,
}

impl LassoProblem {
    pub fn new(probe: &[f64], dict: &DMatrix<f64>, weights: &[f64]) -> Result<Self> {
        let n = dict.nrows();
        if probe.len() != n || weights.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "probe {} / weights {} / dictionary rows {n}",
                probe.len(),
                weights.len()
            )));
        }
        if probe.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probe pixel".into()));
        }
        if dict.iter().any(|v| !v.is_finite()) || weights.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary or weights".into()));
        }
        let mut weighted_dict = dict.clone();
        for (mut row, &w) in weighted_dict.row_iter_mut().zip(weights) {
            row *= w;
        }
        let weighted_probe = DVector::from_iterator(n, probe.iter().zip(weights).map(|(p, w)| p * w));
        let transposed = weighted_dict.transpose();
        let form = GramForm {
            gram: &transposed * &weighted_dict,
            linear: &transposed * &weighted_probe,
            constant: weighted_probe.norm_squared(),
        };
        Ok(LassoProblem {
            weighted_dict,
            weighted_probe,
            form,
        })
    }

    pub fn dim(&self) -> usize {
        self.form.dim()
    }

    /// `A^T W^2 p`
    pub fn linear_term(&self) -> &DVector<f64> {
        &self.form.linear
    }

    /// `||W (p - A T)||^2`, evaluated from the dictionary itself.
    pub fn smooth_value(&self, t: &[f64]) -> f64 {
        let r = &self.weighted_probe - &self.weighted_dict * DVector::from_column_slice(t);
        r.norm_squared()
    }

    /// Gradient of the smooth term, `2 (G T - b)`.
    pub fn gradient(&self, t: &[f64]) -> Vec<f64> {
        let g = (&self.form.gram * DVector::from_column_slice(t) - &self.form.linear) * 2.0;
        g.as_slice().to_vec()
    }

    pub fn objective(&self, t: &[f64], beta: f64) -> f64 {
        self.smooth_value(t) + beta * t.iter().sum::<f64>()
    }
}

/// Result of a single lasso solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TsfSolution {
    pub tsf: Tsf,
    /// Weighted squared reconstruction error `||W (p - A T)||^2`.
    pub residual: f64,
    /// `residual + beta * ||T||_1`
    pub objective: f64,
    pub beta: f64,
    pub iterations: usize,
    /// Accepted objective value after each iteration (Gram form), starting
    /// with the initial iterate.
    pub trace: Vec<f64>,
}

struct FistaOutput {
    x: DVector<f64>,
    iterations: usize,
    trace: Vec<f64>,
}

fn fista(problem: &GramForm, beta: f64, init: DVector<f64>, cfg: &SolverConfig) -> FistaOutput {
    let gram = &problem.gram;
    // objective from a precomputed G t
    let objective = |t: &DVector<f64>, gt: &DVector<f64>| {
        problem.constant - 2.0 * problem.linear.dot(t) + t.dot(gt) + beta * t.sum()
    };
    let mut lip = 2.0 * problem.spectral_estimate();
    if !(lip > 0.0) {
        lip = 1.0;
    }
    let mut x = init.map(|v| v.max(0.0));
    let mut gx = gram * &x;
    let mut fx = objective(&x, &gx);
    let mut y = x.clone();
    let mut gy = gx.clone();
    let mut momentum = 1.0f64;
    let mut trace = vec![fx];
    let mut restarted = false;
    let mut iterations = 0;

    for it in 1..=cfg.max_iters {
        iterations = it;
        let step = (&gy - &problem.linear) * 2.0;
        let (z, gz) = loop {
            let z = (&y - step.add_scalar(beta) / lip).map(|v| v.max(0.0));
            let gz = gram * &z;
            let d = &z - &y;
            let curvature = d.dot(&(&gz - &gy));
            // the quadratic upper bound must hold for the step to be valid
            if curvature <= 0.5 * lip * d.norm_squared() * (1.0 + 1e-12) {
                break (z, gz);
            }
            lip *= 2.0;
        };
        let fz = objective(&z, &gz);
        let next_momentum = (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt()) / 2.0;
        if fz <= fx {
            let prev = std::mem::replace(&mut x, z);
            let g_prev = std::mem::replace(&mut gx, gz);
            let f_prev = fx;
            fx = fz;
            let m = (momentum - 1.0) / next_momentum;
            y = &x + (&x - &prev) * m;
            gy = &gx + (&gx - &g_prev) * m;
            momentum = next_momentum;
            restarted = false;
            trace.push(fx);
            let scale = f_prev.abs().max(f64::MIN_POSITIVE);
            if (f_prev - fx) / scale < cfg.rel_tol {
                break;
            }
        } else {
            // a plain proximal step from x failed to descend: numerically converged
            if restarted {
                trace.push(fx);
                break;
            }
            momentum = 1.0;
            y = x.clone();
            gy = gx.clone();
            restarted = true;
            trace.push(fx);
        }
    }
    FistaOutput {
        x,
        iterations,
        trace,
    }
}

fn solve_problem(
    problem: &LassoProblem,
    beta: f64,
    init: Option<&Tsf>,
    cfg: &SolverConfig,
) -> Result<TsfSolution> {
    let n = problem.dim();
    let start = match init {
        Some(t) if t.len() != n => {
            return Err(Error::DimensionMismatch(format!(
                "initial TSF of length {} for {n} columns",
                t.len()
            )))
        }
        Some(t) => DVector::from_column_slice(t.weights()),
        None => DVector::zeros(n),
    };
    let out = fista(&problem.form, beta, start, cfg);
    let weights: Vec<f64> = out.x.iter().map(|v| v.max(0.0)).collect();
    let residual = problem.smooth_value(&weights);
    let objective = residual + beta * weights.iter().sum::<f64>();
    Ok(TsfSolution {
        tsf: Tsf { weights },
        residual,
        objective,
        beta,
        iterations: out.iterations,
        trace: out.trace,
    })
}

/// Fits a non-negative TSF: approximately minimizes
/// `||W (p - A T)||^2 + beta ||T||_1` over `T >= 0`, starting from zero.
pub fn solve_tsf(
    probe: &GrayImage,
    dict: &DictionaryMatrix,
    weights: &WeightMatrix,
    cfg: &SolverConfig,
) -> Result<TsfSolution> {
    solve_tsf_from(probe, dict, weights, cfg, None)
}

/// [`solve_tsf`] with an optional warm start.
pub fn solve_tsf_from(
    probe: &GrayImage,
    dict: &DictionaryMatrix,
    weights: &WeightMatrix,
    cfg: &SolverConfig,
    init: Option<&Tsf>,
) -> Result<TsfSolution> {
    cfg.validate()?;
    if probe.len() != dict.rows() {
        return Err(Error::DimensionMismatch(format!(
            "probe has {} pixels, dictionary {} rows",
            probe.len(),
            dict.rows()
        )));
    }
    let problem = LassoProblem::new(probe.pixels(), dict.matrix(), weights.values())?;
    let beta = cfg.penalty.resolve(problem.linear_term());
    solve_problem(&problem, beta, init, cfg)
}

/// Result of the alternating blur + illumination solve.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub tsf: Tsf,
    pub coeffs: IllumCoeffs,
    /// `||W (p - sum_i alpha_i A_i T)||^2` at the returned parameters.
    pub residual: f64,
    pub beta: f64,
    /// Full objective after each outer round.
    pub trace: Vec<f64>,
}

/// Weighted squared error of the blurred, relit model against the probe.
pub fn joint_residual(
    probe: &GrayImage,
    basis: &BasisSet,
    coeffs: &IllumCoeffs,
    tsf: &Tsf,
    ts: &TransformSet,
    weights: &WeightMatrix,
) -> Result<f64> {
    let model = apply_tsf(&relight_linear(basis, coeffs), tsf, ts)?;
    Ok(probe
        .pixels()
        .iter()
        .zip(model.pixels())
        .zip(weights.values())
        .map(|((p, m), w)| (w * (p - m)).powi(2))
        .sum())
}

/// Alternating minimization of
/// `||W (p - sum_i alpha_i A_i T)||^2 + beta ||T||_1` over `alpha` and
/// `T >= 0`, where `A_i` is the translation dictionary of basis image `i`.
///
/// Each outer round first refits `alpha` against the basis blurred by the
/// current `T`, then relights the basis, builds its dictionary and refits
/// `T` warm-started from the current one. A sub-step result is kept only if
/// it does not raise the objective, so the recorded trace is non-increasing.
/// The L1 weight is resolved once, on the first round's dictionary.
///
/// Equivalent to `JointSystem::new(basis, ts, weights)?.solve(probe, cfg)`.
pub fn solve_joint(
    probe: &GrayImage,
    basis: &BasisSet,
    ts: &TransformSet,
    weights: &WeightMatrix,
    cfg: &SolverConfig,
) -> Result<JointSolution> {
    JointSystem::new(basis, ts, weights)?.solve(probe, cfg)
}

/// The probe-independent part of a joint solve: the cross Gram matrices
/// `(W A_i)^T (W A_j)` of the nine basis dictionaries.
///
/// Building it costs one large matrix product; afterwards every outer round
/// works on `N_T x N_T` matrices only. Memory is `45 N_T^2` floats.
#[derive(Debug, Clone)]
pub struct JointSystem {
    basis: BasisSet,
    ts: TransformSet,
    weights: WeightMatrix,
    /// Upper-triangular blocks `(i, j)`, `i <= j`, in row-major order.
    blocks: Vec<DMatrix<f64>>,
}

fn block_index(i: usize, j: usize) -> usize {
    debug_assert!(i <= j && j < BASIS_LEN);
    i * BASIS_LEN - i * (i + 1) / 2 + j
}

impl JointSystem {
    pub fn new(basis: &BasisSet, ts: &TransformSet, weights: &WeightMatrix) -> Result<Self> {
        if weights.len() != basis.width() * basis.height() {
            return Err(Error::DimensionMismatch("weight matrix length differs from basis".into()));
        }
        if basis.images().iter().any(|b| b.pixels().iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite("basis pixel".into()));
        }
        check_radius(&basis.images()[0], ts)?;
        let weighted: Vec<DMatrix<f64>> = basis
            .images()
            .iter()
            .map(|b| {
                let mut m = build_dictionary(b, ts)?.matrix;
                for (mut row, &w) in m.row_iter_mut().zip(weights.values()) {
                    row *= w;
                }
                Ok(m)
            })
            .collect::<Result<_>>()?;
        let transposed: Vec<DMatrix<f64>> = weighted.iter().map(|m| m.transpose()).collect();
        let mut blocks = Vec::with_capacity(BASIS_LEN * (BASIS_LEN + 1) / 2);
        for i in 0..BASIS_LEN {
            for j in i..BASIS_LEN {
                blocks.push(&transposed[i] * &weighted[j]);
            }
        }
        Ok(JointSystem {
            basis: basis.clone(),
            ts: ts.clone(),
            weights: weights.clone(),
            blocks,
        })
    }

    pub fn basis(&self) -> &BasisSet {
        &self.basis
    }

    pub fn transform_set(&self) -> &TransformSet {
        &self.ts
    }

    pub fn weights(&self) -> &WeightMatrix {
        &self.weights
    }

    fn block(&self, i: usize, j: usize) -> &DMatrix<f64> {
        &self.blocks[block_index(i, j)]
    }

    /// `sum_ij alpha_i alpha_j (W A_i)^T (W A_j)`
    fn relit_gram(&self, alpha: &IllumCoeffs) -> DMatrix<f64> {
        let n = self.ts.len();
        let mut cross = DMatrix::<f64>::zeros(n, n);
        let mut diag = DMatrix::<f64>::zeros(n, n);
        for i in 0..BASIS_LEN {
            diag += self.block(i, i) * (alpha.0[i] * alpha.0[i]);
            for j in i + 1..BASIS_LEN {
                cross += self.block(i, j) * (alpha.0[i] * alpha.0[j]);
            }
        }
        diag + &cross + cross.transpose()
    }

    /// Normal equations of the illumination step at a fixed `T`.
    fn alpha_step(&self, tsf: &Tsf, probe_terms: &[DVector<f64>]) -> IllumCoeffs {
        let t = DVector::from_column_slice(tsf.weights());
        let mut m = SMatrix::<f64, BASIS_LEN, BASIS_LEN>::zeros();
        let mut rhs = SVector::<f64, BASIS_LEN>::zeros();
        for i in 0..BASIS_LEN {
            rhs[i] = probe_terms[i].dot(&t);
            for j in i..BASIS_LEN {
                let v = t.dot(&(self.block(i, j) * &t));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        solve_normal9(m, rhs)
    }

    pub fn solve(&self, probe: &GrayImage, cfg: &SolverConfig) -> Result<JointSolution> {
        cfg.validate()?;
        let basis = &self.basis;
        let (ts, weights) = (&self.ts, &self.weights);
        if probe.width() != basis.width() || probe.height() != basis.height() {
            return Err(Error::DimensionMismatch("probe and basis sizes differ".into()));
        }
        if probe.pixels().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("probe pixel".into()));
        }
        let w2p: Vec<f64> = probe
            .pixels()
            .iter()
            .zip(weights.values())
            .map(|(p, w)| w * w * p)
            .collect();
        // (W A_i)^T W p for every basis image
        let probe_terms: Vec<DVector<f64>> = basis
            .images()
            .iter()
            .map(|b| {
                DVector::from_iterator(
                    ts.len(),
                    ts.offsets().iter().map(|&(dx, dy)| shift_dot(&w2p, b, dx, dy)),
                )
            })
            .collect();
        let constant: f64 = w2p.iter().zip(probe.pixels()).map(|(a, p)| a * p).sum();

        let objective = |alpha: &IllumCoeffs, tsf: &Tsf, beta: f64| -> Result<f64> {
            Ok(joint_residual(probe, basis, alpha, tsf, ts, weights)? + beta * tsf.mass())
        };

        let mut tsf = Tsf::identity(ts);
        let mut coeffs: Option<IllumCoeffs> = None;
        let mut beta: Option<f64> = None;
        let mut trace = Vec::with_capacity(cfg.outer_iters);

        for round in 0..cfg.outer_iters.max(1) {
            let candidate = self.alpha_step(&tsf, &probe_terms);
            coeffs = Some(match coeffs {
                Some(current) => {
                    if objective(&candidate, &tsf, 0.0)? <= objective(&current, &tsf, 0.0)? {
                        candidate
                    } else {
                        current
                    }
                }
                None => candidate,
            });
            let alpha = coeffs.expect("set above");

            let mut linear = DVector::<f64>::zeros(ts.len());
            for (a, term) in alpha.0.iter().zip(&probe_terms) {
                linear.axpy(*a, term, 1.0);
            }
            let b = *beta.get_or_insert_with(|| cfg.penalty.resolve(&linear));
            let form = GramForm {
                gram: self.relit_gram(&alpha),
                linear,
                constant,
            };
            let start = DVector::from_column_slice(tsf.weights());
            let out = fista(&form, b, start, cfg);
            let proposal = Tsf {
                weights: out.x.iter().map(|v| v.max(0.0)).collect(),
            };

            let current = objective(&alpha, &tsf, b)?;
            let proposed = objective(&alpha, &proposal, b)?;
            let value = if proposed <= current {
                tsf = proposal;
                proposed
            } else {
                current
            };
            log::debug!("joint round {round}: objective {value:.6e}");
            trace.push(value);
        }

        let coeffs = coeffs.expect("at least one round");
        let residual = joint_residual(probe, basis, &coeffs, &tsf, ts, weights)?;
        Ok(JointSolution {
            tsf,
            coeffs,
            residual,
            beta: beta.unwrap_or(0.0),
            trace,
        })
    }
}

/// Blurs and relights a gallery chip with fitted parameters:
/// `apply_tsf(relight(harmonic_basis(g, normals), coeffs), tsf)`.
pub fn transform_gallery(
    g: &GrayImage,
    tsf: &Tsf,
    coeffs: &IllumCoeffs,
    ts: &TransformSet,
    normals: &NormalMap,
) -> Result<GrayImage> {
    let basis = harmonic_basis(g, normals)?;
    transform_with_basis(&basis, tsf, coeffs, ts)
}

pub(crate) fn transform_with_basis(
    basis: &BasisSet,
    tsf: &Tsf,
    coeffs: &IllumCoeffs,
    ts: &TransformSet,
) -> Result<GrayImage> {
    apply_tsf(&relight(basis, coeffs), tsf, ts)
}
