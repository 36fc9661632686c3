use birfr::detect::{eval_feature, FeatureKind, HaarFeature, HaarRect};
use birfr::image::{
    convolve, decode_pgm, encode_pgm, gaussian_kernel, integral_image, quantize_u8, resize_bilinear, GrayImage,
    Kernel2D,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn brute_rect(img: &GrayImage, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
    let mut s = 0.0;
    for y in y0..y1 {
        for x in x0..x1 {
            s += img.get(x, y);
        }
    }
    s
}

fn random_feature(rng: &mut ChaCha8Rng, window: usize) -> HaarFeature {
    // all three layouts are balanced: equal positive and negative area
    match rng.gen_range(0..3) {
        0 => {
            let w = rng.gen_range(1..=window / 2);
            let h = rng.gen_range(1..=window);
            let (x, y) = (rng.gen_range(0..=window - 2 * w), rng.gen_range(0..=window - h));
            HaarFeature::new(FeatureKind::TwoRect, vec![HaarRect::new(x, y, w, h, 1), HaarRect::new(x + w, y, w, h, -1)])
        }
        1 => {
            let w = rng.gen_range(1..=window);
            let h = rng.gen_range(1..=window / 4);
            let (x, y) = (rng.gen_range(0..=window - w), rng.gen_range(0..=window - 4 * h));
            HaarFeature::new(
                FeatureKind::ThreeRect,
                vec![
                    HaarRect::new(x, y, w, h, 1),
                    HaarRect::new(x, y + h, w, 2 * h, -1),
                    HaarRect::new(x, y + 3 * h, w, h, 1),
                ],
            )
        }
        _ => {
            let (w, h) = (rng.gen_range(1..=window / 2), rng.gen_range(1..=window / 2));
            let (x, y) = (rng.gen_range(0..=window - 2 * w), rng.gen_range(0..=window - 2 * h));
            HaarFeature::new(
                FeatureKind::FourRect,
                vec![
                    HaarRect::new(x, y, w, h, 1),
                    HaarRect::new(x + w, y, w, h, -1),
                    HaarRect::new(x, y + h, w, h, -1),
                    HaarRect::new(x + w, y + h, w, h, 1),
                ],
            )
        }
    }
}

fn brute_feature(img: &GrayImage, f: &HaarFeature, origin: (usize, usize)) -> f64 {
    f.rects
        .iter()
        .map(|r| r.sign as f64 * brute_rect(img, origin.0 + r.x, origin.1 + r.y, origin.0 + r.x + r.w, origin.1 + r.y + r.h))
        .sum()
}

#[test]
fn integral_and_features_match_pixel_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..500 {
        let (w, h) = (rng.gen_range(8..40), rng.gen_range(8..40));
        let img = GrayImage::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0));
        let ii = integral_image(&img);
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (x1, y1) = (rng.gen_range(x0..=w), rng.gen_range(y0..=h));
        let got = ii.rect_sum(x0, y0, x1, y1);
        assert!((got - brute_rect(&img, x0, y0, x1, y1)).abs() < 1e-6, "case {case}");

        let f = random_feature(&mut rng, 8);
        let origin = (rng.gen_range(0..=w - 8), rng.gen_range(0..=h - 8));
        let v = eval_feature(&ii, &f, origin, 1.0).unwrap();
        assert!((v - brute_feature(&img, &f, origin)).abs() < 1e-6, "case {case}: {f:?}");
    }
}

#[test]
fn integer_scale_feature_matches_upsampled_loop() {
    // at scale 2 every rect covers 4x the pixels; area compensation divides it back
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..50 {
        let small = GrayImage::from_fn(8, 8, |_, _| rng.gen_range(0.0..1.0));
        let big = GrayImage::from_fn(16, 16, |x, y| small.get(x / 2, y / 2));
        let f = random_feature(&mut rng, 8);
        let at1 = eval_feature(&integral_image(&small), &f, (0, 0), 1.0).unwrap();
        let at2 = eval_feature(&integral_image(&big), &f, (0, 0), 2.0).unwrap();
        assert!((at1 - at2).abs() < 1e-9);
    }
}

/// Correlation with replicate edges.
fn naive_convolve(img: &GrayImage, k: &Kernel2D) -> GrayImage {
    let (rx, ry) = (k.width() as isize / 2, k.height() as isize / 2);
    GrayImage::from_fn(img.width(), img.height(), |x, y| {
        let mut s = 0.0;
        for dy in -ry..=ry {
            for dx in -rx..=rx {
                s += k.at(dx, dy) * img.get_clamped(x as isize + dx, y as isize + dy);
            }
        }
        s
    })
}

#[test]
fn convolution_matches_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let img = GrayImage::from_fn(rng.gen_range(3..20), rng.gen_range(3..20), |_, _| rng.gen_range(0.0..1.0));
        let (kw, kh) = (2 * rng.gen_range(0..3) + 1, 2 * rng.gen_range(0..3) + 1);
        let k = Kernel2D::new(kw, kh, (0..kw * kh).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let got = convolve(&img, &k).unwrap();
        assert!(got.max_abs_diff(&naive_convolve(&img, &k)) < 1e-12);
    }
}

#[test]
fn gaussian_kernel_matches_closed_form() {
    let k = gaussian_kernel(1.5, 4).unwrap();
    let raw = |d: isize| (-(d * d) as f64 / (2.0 * 1.5 * 1.5)).exp();
    let norm: f64 = (-4..=4).map(raw).sum::<f64>().powi(2);
    for dy in -4..=4 {
        for dx in -4..=4 {
            assert!((k.at(dx, dy) - raw(dx) * raw(dy) / norm).abs() < 1e-15);
        }
    }
}

proptest! {
    #[test]
    fn pgm_roundtrip_is_quantization(w in 1usize..12, h in 1usize..12, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = GrayImage::from_fn(w, h, |_, _| rng.gen_range(-0.2..1.2));
        let back = decode_pgm(&encode_pgm(&img)).unwrap();
        for (a, b) in img.pixels().iter().zip(back.pixels()) {
            prop_assert_eq!(*b, quantize_u8(*a) as f64 / 255.0);
        }
    }

    #[test]
    fn identity_resize_and_constant_resize(w in 2usize..20, h in 2usize..20, nw in 1usize..30, nh in 1usize..30, c in 0.0f64..1.0) {
        let img = GrayImage::from_fn(w, h, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        prop_assert!(resize_bilinear(&img, w, h).unwrap().max_abs_diff(&img) < 1e-12);
        let flat = resize_bilinear(&GrayImage::filled(w, h, c), nw, nh).unwrap();
        prop_assert!(flat.pixels().iter().all(|&v| (v - c).abs() < 1e-12));
    }

    #[test]
    fn integral_total_is_pixel_sum(w in 1usize..25, h in 1usize..25, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = GrayImage::from_fn(w, h, |_, _| rng.gen_range(0.0..1.0));
        let total: f64 = img.pixels().iter().sum();
        prop_assert!((integral_image(&img).at(w, h) - total).abs() < 1e-9);
    }
}
