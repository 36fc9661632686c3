use birfr::detect::{detect_faces, format_cascade, parse_cascade, scan_windows, CascadeModel, DetectParams, FaceBox};
use birfr::GrayImage;

const BAND_CASCADE: &str = "\
window 16 16
stage 2.0
weak 1.0 1 38.4 two 2
rect 0 0 16 4 1
rect 0 4 16 4 -1
weak 1.0 1 38.4 two 2
rect 0 4 16 4 -1
rect 0 8 16 4 1
";

const BAND: FaceBox = FaceBox {
    x: 30,
    y: 12,
    width: 16,
    height: 4,
};

fn band_image() -> GrayImage {
    GrayImage::from_fn(60, 50, |x, y| {
        let inside = (BAND.x..BAND.x + BAND.width).contains(&x) && (BAND.y..BAND.y + BAND.height).contains(&y);
        if inside {
            0.1
        } else {
            0.9
        }
    })
}

fn pixel_sum(img: &GrayImage, x0: usize, y0: usize, x1: usize, y1: usize) -> f64 {
    (y0..y1).flat_map(|y| (x0..x1).map(move |x| (x, y))).map(|(x, y)| img.get(x, y)).sum()
}

/// Cascade decision recomputed from pixel loops.
fn brute_accepts(img: &GrayImage, model: &CascadeModel, ox: usize, oy: usize, scale: f64) -> bool {
    let round = |v: usize| (v as f64 * scale).round() as usize;
    model.stages.iter().all(|stage| {
        let votes: f64 = stage
            .weak
            .iter()
            .filter(|weak| {
                let value: f64 = weak
                    .feature
                    .rects
                    .iter()
                    .map(|r| {
                        let (x0, y0, x1, y1) = (round(r.x), round(r.y), round(r.x + r.w), round(r.y + r.h));
                        let comp = (r.w * r.h) as f64 / ((x1 - x0) * (y1 - y0)) as f64;
                        r.sign as f64 * comp * pixel_sum(img, ox + x0, oy + y0, ox + x1, oy + y1)
                    })
                    .sum();
                weak.polarity as f64 * value >= weak.polarity as f64 * weak.threshold
            })
            .map(|weak| weak.vote)
            .sum();
        votes >= stage.threshold
    })
}

fn contains(outer: &FaceBox, inner: &FaceBox) -> bool {
    outer.x <= inner.x
        && outer.y <= inner.y
        && outer.x + outer.width >= inner.x + inner.width
        && outer.y + outer.height >= inner.y + inner.height
}

#[test]
fn toy_cascade_finds_the_band_once() {
    let model = parse_cascade(BAND_CASCADE).unwrap();
    let img = band_image();
    let params = DetectParams::default();

    // every window at every position of every pyramid level
    let mut accepted = Vec::new();
    let mut scale = 1.0f64;
    loop {
        let (ww, wh) = ((16.0 * scale).round() as usize, (16.0 * scale).round() as usize);
        if ww > img.width() || wh > img.height() {
            break;
        }
        for oy in 0..=img.height() - wh {
            for ox in 0..=img.width() - ww {
                if brute_accepts(&img, &model, ox, oy, scale) {
                    accepted.push((FaceBox::new(ox, oy, ww, wh), scale));
                }
            }
        }
        scale *= params.scale_step;
    }
    assert!(!accepted.is_empty());
    for (b, _) in &accepted {
        assert!(b.iou(&accepted[0].0) > 0.0, "accepted window {b:?} away from the band");
    }

    // the strided scan sees exactly the enumerated windows that lie on its grid
    let raw = scan_windows(&img, &model, &params).unwrap();
    let on_grid: Vec<FaceBox> = accepted
        .iter()
        .filter(|(b, s)| {
            let stride = ((params.window_stride as f64 * s).round() as usize).max(1);
            b.x % stride == 0 && b.y % stride == 0
        })
        .map(|(b, _)| *b)
        .collect();
    let mut scanned: Vec<FaceBox> = raw.iter().map(|d| d.bbox).collect();
    scanned.sort();
    let mut expected = on_grid;
    expected.sort();
    assert_eq!(scanned, expected);

    let boxes = detect_faces(&img, &model, &params).unwrap();
    assert_eq!(boxes.len(), 1, "{boxes:?}");
    assert!(contains(&boxes[0], &BAND), "{:?} does not cover the band", boxes[0]);
}

#[test]
fn detection_is_thread_count_invariant() {
    let model = parse_cascade(BAND_CASCADE).unwrap();
    let img = band_image();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| detect_faces(&img, &model, &DetectParams::default()).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn cascade_text_roundtrip() {
    let model = parse_cascade(BAND_CASCADE).unwrap();
    assert_eq!(parse_cascade(&format_cascade(&model)).unwrap(), model);
}

#[test]
fn constant_images_never_fire() {
    let model = parse_cascade(BAND_CASCADE).unwrap();
    for c in [0.0, 0.3, 1.0] {
        let img = GrayImage::filled(40, 40, c);
        assert!(detect_faces(&img, &model, &DetectParams::default()).unwrap().is_empty());
    }
}
