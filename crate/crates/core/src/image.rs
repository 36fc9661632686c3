//! Grayscale raster substrate: the pixel container, PGM I/O, resampling,
//! convolution, kernel synthesis and integral images.
//!
//! Pixels are `f64` luminance values stored row-major. Images read from disk
//! are scaled to `[0, 1]`; intermediate results may leave that range and are
//! only clamped when written back out.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Side length of the canonical face chip.
pub const CHIP_SIZE: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::ZeroDimension { width, height });
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("pixel {i}")));
        }
        Ok(GrayImage {
            width,
            height,
            pixels,
        })
    }

    /// Image with every pixel set to `value`.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "zero image dimension");
        GrayImage {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    /// Builds an image by evaluating `f(x, y)` at every pixel.
    ///
    /// Panics if either dimension is zero.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "zero image dimension");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        GrayImage {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Pixel lookup with replicate-edge extension.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.pixels[cy * self.width + cx]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.pixels[y * self.width + x] = value;
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().sum::<f64>() / self.pixels.len() as f64
    }

    /// Sum of squared pixel values.
    pub fn energy(&self) -> f64 {
        self.pixels.iter().map(|v| v * v).sum()
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.pixels
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Largest absolute pixel difference; panics on a dimension mismatch.
    pub fn max_abs_diff(&self, other: &GrayImage) -> f64 {
        assert!(self.same_dims(other), "dimension mismatch");
        self.pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Sub-image `[x, x+w) x [y, y+h)`.
    pub fn crop(&self, x: usize, y: usize, w: usize, h: usize) -> Result<GrayImage> {
        if w == 0 || h == 0 {
            return Err(Error::ZeroDimension {
                width: w,
                height: h,
            });
        }
        if x + w > self.width || y + h > self.height {
            return Err(Error::OutOfBounds(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        Ok(GrayImage::from_fn(w, h, |cx, cy| self.get(x + cx, y + cy)))
    }
}

/// An odd-sized correlation kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2D {
    width: usize,
    height: usize,
    weights: Vec<f64>,
}

impl Kernel2D {
    pub fn new(width: usize, height: usize, weights: Vec<f64>) -> Result<Self> {
        if width.is_multiple_of(2) || height.is_multiple_of(2) {
            return Err(Error::EvenKernel { width, height });
        }
        if weights.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for a {width}x{height} kernel",
                weights.len()
            )));
        }
        Ok(Kernel2D {
            width,
            height,
            weights,
        })
    }

    /// Normalized box kernel of side `2 * radius + 1`.
    pub fn box_filter(radius: usize) -> Self {
        let side = 2 * radius + 1;
        let n = side * side;
        Kernel2D {
            width: side,
            height: side,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn identity() -> Self {
        Kernel2D {
            width: 1,
            height: 1,
            weights: vec![1.0],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at offset `(dx, dy)` from the kernel center; 0 outside the
    /// support.
    pub fn at(&self, dx: isize, dy: isize) -> f64 {
        let x = dx + (self.width / 2) as isize;
        let y = dy + (self.height / 2) as isize;
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            return 0.0;
        }
        self.weights[y as usize * self.width + x as usize]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Summed-area table with a zero guard row and column.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    table: Vec<f64>,
}

impl IntegralImage {
    /// Width of the source image (the table is one wider).
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Sum of all pixels strictly above and left of `(x, y)`.
    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.table[y * (self.width + 1) + x]
    }

    /// Sum over `[x0, x1) x [y0, y1)`.
    #[inline]
    pub fn rect_sum(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
        debug_assert!(x0 <= x1 && y0 <= y1 && x1 <= self.width && y1 <= self.height);
        self.at(x1, y1) - self.at(x0, y1) - self.at(x1, y0) + self.at(x0, y0)
    }
}

pub fn integral_image(img: &GrayImage) -> IntegralImage {
    let (w, h) = (img.width, img.height);
    let stride = w + 1;
    let mut table = vec![0.0; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += img.get(x, y);
            table[(y + 1) * stride + x + 1] = table[y * stride + x + 1] + row;
        }
    }
    IntegralImage {
        width: w,
        height: h,
        table,
    }
}

/// Reads a binary (P5) or ASCII (P2) PGM file, scaling samples to `[0, 1]`.
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let c = self.bytes[self.pos];
            if c == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Option<&str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            None
        } else {
            std::str::from_utf8(&self.bytes[start..self.pos]).ok()
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self
            .token()
            .ok_or_else(|| Error::BadHeader(format!("missing {what}")))?;
        tok.parse()
            .map_err(|_| Error::BadHeader(format!("{what} {tok:?} is not a number")))
    }
}

/// Decodes an in-memory PGM.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    if bytes.len() < 2 || !(bytes[..2] == *b"P2" || bytes[..2] == *b"P5") {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(Error::BadMagic { found });
    }
    let binary = bytes[1] == b'5';
    let mut rd = HeaderReader { bytes, pos: 2 };
    let width = rd.number("width")?;
    let height = rd.number("height")?;
    let maxval = rd.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::ZeroDimension { width, height });
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::BadHeader(format!("maxval {maxval} outside 1..=65535")));
    }
    let n = width * height;
    let scale = maxval as f64;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let data = bytes.get(rd.pos + 1..).unwrap_or(&[]);
        let bps = if maxval > 255 { 2 } else { 1 };
        let found = data.len() / bps;
        if found < n {
            return Err(Error::TruncatedPayload { expected: n, found });
        }
        for i in 0..n {
            let v = if bps == 2 {
                u16::from_be_bytes([data[2 * i], data[2 * i + 1]]) as usize
            } else {
                data[i] as usize
            };
            if v > maxval {
                return Err(Error::BadHeader(format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as f64 / scale);
        }
    } else {
        while pixels.len() < n {
            let Some(tok) = rd.token() else {
                return Err(Error::TruncatedPayload {
                    expected: n,
                    found: pixels.len(),
                });
            };
            let v: usize = tok
                .parse()
                .map_err(|_| Error::BadHeader(format!("sample {tok:?} is not a number")))?;
            if v > maxval {
                return Err(Error::BadHeader(format!("sample {v} exceeds maxval {maxval}")));
            }
            pixels.push(v as f64 / scale);
        }
    }
    GrayImage::new(width, height, pixels)
}

/// Quantizes a pixel to a byte: clamp to `[0, 1]`, scale, round half up.
#[inline]
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Encodes as binary P5 with maxval 255.
pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| quantize_u8(v)));
    out
}

pub fn save_image(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_pgm(img))
        .map_err(|e| Error::io(path, e))
}

/// Align-corners bilinear resampling with edge clamping.
pub fn resize_bilinear(img: &GrayImage, new_width: usize, new_height: usize) -> Result<GrayImage> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::ZeroDimension {
            width: new_width,
            height: new_height,
        });
    }
    let src_coord = |i: usize, src: usize, dst: usize| -> f64 {
        if dst == 1 {
            (src - 1) as f64 / 2.0
        } else {
            (i * (src - 1)) as f64 / (dst - 1) as f64
        }
    };
    let (w, h) = (img.width, img.height);
    Ok(GrayImage::from_fn(new_width, new_height, |x, y| {
        let sx = src_coord(x, w, new_width);
        let sy = src_coord(y, h, new_height);
        let x0 = sx.floor() as usize;
        let y0 = sy.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let y1 = (y0 + 1).min(h - 1);
        let fx = sx - x0 as f64;
        let fy = sy - y0 as f64;
        let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
        let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

/// Default support radius for a Gaussian of the given sigma.
pub fn default_gaussian_radius(sigma: f64) -> usize {
    ((3.0 * sigma).ceil() as usize).max(1)
}

/// Normalized isotropic Gaussian of side `2 * radius + 1`.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Result<Kernel2D> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    if radius == 0 {
        return Err(Error::InvalidArgument("kernel radius must be at least 1".into()));
    }
    let side = 2 * radius + 1;
    let r = radius as isize;
    let denom = 2.0 * sigma * sigma;
    let mut weights = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            weights.push((-((dx * dx + dy * dy) as f64) / denom).exp());
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Kernel2D::new(side, side, weights)
}

/// Correlation with replicate-edge padding; output has the input's size.
pub fn convolve(img: &GrayImage, kernel: &Kernel2D) -> Result<GrayImage> {
    if kernel.width.is_multiple_of(2) || kernel.height.is_multiple_of(2) {
        return Err(Error::EvenKernel {
            width: kernel.width,
            height: kernel.height,
        });
    }
    let rx = (kernel.width / 2) as isize;
    let ry = (kernel.height / 2) as isize;
    Ok(GrayImage::from_fn(img.width, img.height, |x, y| {
        let mut acc = 0.0;
        let mut k = 0;
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                acc += kernel.weights[k] * img.get_clamped(x as isize + dx, y as isize + dy);
                k += 1;
            }
        }
        acc
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn p2_scaling() {
        let img = decode_pgm(b"P2\n# tiny\n2 2\n255\n0 255\n255 0\n").unwrap();
        assert_eq!(img.pixels(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn p5_truncated() {
        let mut bytes = b"P5\n2 2\n255\n".to_vec();
        bytes.extend([1u8, 2, 3]);
        assert!(matches!(
            decode_pgm(&bytes),
            Err(Error::TruncatedPayload { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn p5_sixteen_bit() {
        let mut bytes = b"P5 1 2 65535 ".to_vec();
        bytes.extend([0xff, 0xff, 0x00, 0x00]);
        let img = decode_pgm(&bytes).unwrap();
        assert_eq!(img.pixels(), &[1.0, 0.0]);
    }

    #[test]
    fn header_errors_are_distinct() {
        assert!(matches!(decode_pgm(b"P6\n1 1\n255\n\0"), Err(Error::BadMagic { .. })));
        assert!(matches!(
            decode_pgm(b"P2\n0 3\n255\n"),
            Err(Error::ZeroDimension { .. })
        ));
        assert!(matches!(
            decode_pgm(b"P2\n2 1\n255\n7"),
            Err(Error::TruncatedPayload { .. })
        ));
        assert!(matches!(
            load_image("/nonexistent/face.pgm"),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn quantization_rounds_half_up_and_clamps() {
        assert_eq!(quantize_u8(1.0), 255);
        assert_eq!(quantize_u8(-0.2), 0);
        assert_eq!(quantize_u8(0.5), 128);
        assert_eq!(quantize_u8(7.0), 255);
    }

    #[test]
    fn save_load_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        let mut seed = 12345u64;
        let img = GrayImage::from_fn(13, 7, |_, _| {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        });
        save_image(&img, &path).unwrap();
        let back = load_image(&path).unwrap();
        assert!(img.max_abs_diff(&back) <= 1.0 / 510.0 + 1e-15);
    }

    #[test]
    fn resize_examples() {
        let c = GrayImage::filled(5, 3, 0.7);
        let r = resize_bilinear(&c, 11, 2).unwrap();
        assert!(r.pixels().iter().all(|&v| (v - 0.7).abs() < 1e-15));

        let ramp = GrayImage::new(2, 1, vec![0.0, 1.0]).unwrap();
        let r = resize_bilinear(&ramp, 3, 1).unwrap();
        assert_eq!(r.pixels(), &[0.0, 0.5, 1.0]);

        let g = GrayImage::from_fn(9, 6, |x, y| (x * 3 + y * 7) as f64 / 50.0);
        let same = resize_bilinear(&g, 9, 6).unwrap();
        assert!(same.max_abs_diff(&g) <= 1e-12);

        assert!(matches!(resize_bilinear(&g, 0, 4), Err(Error::ZeroDimension { .. })));
    }

    #[test]
    fn gaussian_kernel_examples() {
        let k = gaussian_kernel(0.1, 2).unwrap();
        assert!((k.sum() - 1.0).abs() < 1e-9);
        assert!(k.at(0, 0) > 0.999);
        assert!(gaussian_kernel(0.0, 2).is_err());
        assert!(gaussian_kernel(-1.0, 2).is_err());
        assert_eq!(default_gaussian_radius(4.0), 12);
    }

    #[test]
    fn convolve_examples() {
        let g = GrayImage::from_fn(6, 5, |x, y| ((x * y) % 5) as f64);
        assert_eq!(convolve(&g, &Kernel2D::identity()).unwrap(), g);

        let mut spike = GrayImage::filled(3, 3, 0.0);
        spike.set(1, 1, 9.0);
        let out = convolve(&spike, &Kernel2D::box_filter(1)).unwrap();
        assert!((out.get(1, 1) - 1.0).abs() < 1e-12);

        let c = GrayImage::filled(7, 4, 0.3);
        let out = convolve(&c, &gaussian_kernel(1.5, 3).unwrap()).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 0.3).abs() < 1e-12));

        let even = Kernel2D {
            width: 2,
            height: 1,
            weights: vec![0.5, 0.5],
        };
        assert!(matches!(convolve(&g, &even), Err(Error::EvenKernel { .. })));
        assert!(Kernel2D::new(2, 1, vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn integral_examples() {
        let ones = GrayImage::filled(2, 2, 1.0);
        let ii = integral_image(&ones);
        assert_eq!(ii.at(2, 2), 4.0);
        assert_eq!(ii.at(0, 1), 0.0);
        assert_eq!(ii.rect_sum(1, 0, 1, 2), 0.0);
    }

    proptest! {
        #[test]
        fn gaussian_is_normalized_and_symmetric(sigma in 0.05f64..8.0, radius in 1usize..10) {
            let k = gaussian_kernel(sigma, radius).unwrap();
            prop_assert!((k.sum() - 1.0).abs() < 1e-9);
            prop_assert!(k.weights().iter().all(|&w| w >= 0.0));
            let r = radius as isize;
            for dy in -r..=r {
                for dx in -r..=r {
                    let w = k.at(dx, dy);
                    prop_assert_eq!(w, k.at(-dx, dy));
                    prop_assert_eq!(w, k.at(dx, -dy));
                    prop_assert_eq!(w, k.at(dy, dx));
                }
            }
        }

        #[test]
        fn convolution_stays_in_range(
            vals in proptest::collection::vec(0.0f64..1.0, 30),
            sigma in 0.3f64..3.0,
        ) {
            let img = GrayImage::new(6, 5, vals).unwrap();
            let (lo, hi) = img.min_max();
            let out = convolve(&img, &gaussian_kernel(sigma, 2).unwrap()).unwrap();
            let (olo, ohi) = out.min_max();
            prop_assert!(olo >= lo - 1e-12 && ohi <= hi + 1e-12);
        }
    }
}
