use std::fs;
use std::path::PathBuf;

use birfr::bench::train::{block_recognition_rates, rates_to_levels};
use birfr::bench::{
    degrade, load_dataset, make_synth, parse_report_csv, run_benchmark, synth_face, train_block_weights, BenchConfig,
    Dataset, DegradeSpec, LabeledChip, LoadOptions, SynthOptions, TsfMode,
};
use birfr::image::{convolve, gaussian_kernel, save_image};
use birfr::tsf::TransformSet;
use birfr::{Algorithm, GrayImage, RecognizerConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn chip(class: &str, img: GrayImage, i: usize) -> LabeledChip {
    LabeledChip {
        class_id: class.to_string(),
        chip: img,
        path: PathBuf::from(format!("{class}/{i}.pgm")),
    }
}

fn verbatim_dataset(classes: usize, probes_per_class: usize) -> Dataset {
    let names: Vec<String> = (0..classes).map(|c| format!("k{c:02}")).collect();
    let gallery = names.iter().enumerate().map(|(c, n)| chip(n, synth_face(3, c), 0)).collect();
    let probes = names
        .iter()
        .enumerate()
        .flat_map(|(c, n)| (0..probes_per_class).map(move |i| chip(n, synth_face(3, c), i)))
        .collect();
    Dataset::from_parts(gallery, probes).unwrap()
}

fn quick(algo: Algorithm) -> BenchConfig {
    BenchConfig::new(
        algo,
        RecognizerConfig {
            transforms: TransformSet::new(1),
            ..RecognizerConfig::default()
        },
    )
}

#[test]
fn verbatim_probes_score_100() {
    let ds = verbatim_dataset(4, 2);
    let report = run_benchmark(&ds, &quick(Algorithm::Birfr)).unwrap();
    assert_eq!(report.rate(), 100.0);
    assert!(report.confusions.is_empty());
}

#[test]
fn scrambled_labels_score_near_chance() {
    let ds = verbatim_dataset(10, 20);
    let mut cfg = quick(Algorithm::Brfr);
    cfg.scramble_seed = Some(99);
    let report = run_benchmark(&ds, &cfg).unwrap();
    assert_eq!(report.total(), 200);
    assert!((report.rate() - 10.0).abs() <= 7.0, "rate {}", report.rate());
}

#[test]
fn report_accounting_and_csv_roundtrip() {
    let ds = verbatim_dataset(5, 2);
    let mut cfg = quick(Algorithm::Brfr);
    cfg.degrade = Some(DegradeSpec {
        gaussian_sigma: 3.0,
        tsf_radius: 3,
        tsf_mode: TsfMode::RandomSparse,
        fer_perturb: 0.2,
        seed: 4,
        ..DegradeSpec::default()
    });
    let report = run_benchmark(&ds, &cfg).unwrap();
    let per_class_total: usize = report.per_class.iter().map(|c| c.total).sum();
    let per_class_correct: usize = report.per_class.iter().map(|c| c.correct).sum();
    assert_eq!(per_class_total, ds.probes.len());
    assert_eq!(per_class_correct + report.confusions.iter().map(|c| c.count).sum::<usize>(), per_class_total);
    assert!((report.rate() - 100.0 * per_class_correct as f64 / per_class_total as f64).abs() < 1e-12);
    assert_eq!(parse_report_csv(&report.to_csv()).unwrap(), report.per_class);
}

/// Classes share one face and differ only in rows 18..=25.
fn eye_band_dataset() -> Dataset {
    let base = synth_face(5, 0);
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let mut gallery = Vec::new();
    let mut probes = Vec::new();
    for c in 0..6 {
        let band: Vec<f64> = (0..64 * 8).map(|_| rng.gen_range(0.1..0.9)).collect();
        let img = GrayImage::from_fn(64, 64, |x, y| {
            if (18..=25).contains(&y) {
                band[(y - 18) * 64 + x]
            } else {
                base.get(x, y)
            }
        });
        let name = format!("e{c}");
        gallery.push(chip(&name, img.clone(), 0));
        probes.push(chip(&name, img, 1));
    }
    Dataset::from_parts(gallery, probes).unwrap()
}

#[test]
fn eye_band_blocks_get_top_level() {
    let ds = eye_band_dataset();
    let map = train_block_weights(&ds, 0.5, (8, 8)).unwrap();
    assert_eq!((map.blocks_x(), map.blocks_y()), (8, 8));
    for by in 0..8 {
        for bx in 0..8 {
            let expected = if by == 2 || by == 3 { 4.0 } else { 0.0 };
            assert_eq!(map.get(bx, by), expected, "block ({bx}, {by})");
        }
    }
}

#[test]
fn identical_classes_give_floored_map() {
    let img = synth_face(5, 1);
    let gallery = (0..3).map(|c| chip(&format!("i{c}"), img.clone(), 0)).collect();
    let probes = (0..3).map(|c| chip(&format!("i{c}"), img.clone(), 1)).collect();
    let ds = Dataset::from_parts(gallery, probes).unwrap();
    let rates = block_recognition_rates(&ds, 4.0, (4, 4)).unwrap();
    assert!(rates.iter().all(|&r| (r - 1.0 / 3.0).abs() < 1e-12));
    let map = train_block_weights(&ds, 4.0, (4, 4)).unwrap();
    assert_eq!(map.weights().iter().filter(|&&w| w == 1.0).count(), 1);
    assert_eq!(map.weights().iter().filter(|&&w| w == 0.0).count(), 15);
}

#[test]
fn single_class_training_is_rejected() {
    let ds = verbatim_dataset(1, 1);
    assert!(train_block_weights(&ds, 4.0, (8, 8)).is_err());
}

#[test]
fn impulse_response_is_the_gaussian_kernel() {
    let mut img = GrayImage::filled(41, 41, 0.0);
    img.set(20, 20, 1.0);
    let spec = DegradeSpec {
        gaussian_sigma: 4.0,
        ..DegradeSpec::default()
    };
    let out = degrade(&img, &spec).unwrap();
    let k = gaussian_kernel(4.0, 12).unwrap();
    for dy in -12..=12isize {
        for dx in -12..=12isize {
            let v = out.get((20 + dx) as usize, (20 + dy) as usize);
            assert!((v - k.at(dx, dy)).abs() < 1e-9);
        }
    }
    assert!(convolve(&img, &k).unwrap().max_abs_diff(&out) < 1e-12);
}

#[test]
fn corrupt_probe_is_skipped_and_counted() {
    let tmp = tempfile::tempdir().unwrap();
    make_synth(
        tmp.path(),
        &SynthOptions {
            classes: 3,
            seed: 2,
            gallery_per_class: 1,
            probes_per_class: 1,
        },
    )
    .unwrap();
    fs::write(tmp.path().join("probe/s02/broken.pgm"), b"P5\n64 64\n255\nxx").unwrap();
    assert!(load_dataset(tmp.path(), &LoadOptions { strict: true, detector: None }).is_err());
    let ds = load_dataset(tmp.path(), &LoadOptions::default()).unwrap();
    assert_eq!(ds.skipped.len(), 1);
    let report = run_benchmark(&ds, &quick(Algorithm::Brfr)).unwrap();
    assert_eq!(report.skipped, 1);
    assert_eq!(report.total(), 3);
    assert!(report.to_table().contains("skipped files: 1"));
}

#[test]
fn dataset_layout_example() {
    let tmp = tempfile::tempdir().unwrap();
    for c in ["b", "a", "c"] {
        for i in 0..2 {
            let dir = tmp.path().join("gallery").join(c);
            fs::create_dir_all(&dir).unwrap();
            save_image(&synth_face(1, i), dir.join(format!("{i}.pgm"))).unwrap();
        }
    }
    let ds = load_dataset(tmp.path(), &LoadOptions::default()).unwrap();
    assert_eq!(ds.classes, ["a", "b", "c"]);
    assert_eq!(ds.gallery.len(), 6);
    assert!(ds.probes.is_empty());

    let orphan = tmp.path().join("probe/zz");
    fs::create_dir_all(&orphan).unwrap();
    save_image(&synth_face(1, 0), orphan.join("p.pgm")).unwrap();
    let err = load_dataset(tmp.path(), &LoadOptions::default()).unwrap_err();
    assert!(err.to_string().contains("zz"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn degrade_is_a_pure_function_of_seed(seed in any::<u64>(), sigma in 0.0f64..3.0, relight in any::<bool>()) {
        let img = synth_face(9, 0);
        let spec = DegradeSpec {
            gaussian_sigma: sigma,
            tsf_radius: 2,
            tsf_mode: TsfMode::RandomLine,
            relight,
            fer_perturb: 0.05,
            seed,
        };
        prop_assert_eq!(degrade(&img, &spec).unwrap(), degrade(&img, &spec).unwrap());
    }

    #[test]
    fn levels_come_from_the_four_level_set(rates in proptest::collection::vec(0.0f64..1.0, 1..80)) {
        let levels = rates_to_levels(&rates);
        prop_assert_eq!(levels.len(), rates.len());
        prop_assert!(levels.iter().all(|l| [0.0, 1.0, 2.0, 4.0].contains(l)));
        prop_assert!(levels.iter().any(|&l| l > 0.0));
        for i in 0..rates.len() {
            for j in 0..rates.len() {
                if rates[i] < rates[j] {
                    prop_assert!(levels[i] <= levels[j]);
                }
            }
        }
    }
}
