//! Benchmark harness: datasets, degradations, weight training and
//! recognition-rate reports.

pub mod config;
pub mod dataset;
pub mod degrade;
pub mod report;
pub mod synth;
pub mod train;

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{load_config, parse_config};
pub use dataset::{load_dataset, load_gallery_dir, Dataset, LabeledChip, LoadOptions, SkippedFile};
pub use degrade::{degrade, DegradeSpec, TsfMode};
pub use report::{parse_report_csv, ClassTally, Confusion, EvalReport};
pub use synth::{make_synth, synth_face, SynthOptions};
pub use train::train_block_weights;

use crate::error::Result;
use crate::recognizer::{
    recognize_biefr_neutralized, recognize_birfr, recognize_brfr, Algorithm, RecognizerConfig,
};

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub algorithm: Algorithm,
    pub recognizer: RecognizerConfig,
    /// Applied to every probe with a per-probe seed derived from its index.
    pub degrade: Option<DegradeSpec>,
    /// Replaces each true label with a uniformly random class, for
    /// sanity-checking the harness against chance.
    pub scramble_seed: Option<u64>,
}

impl BenchConfig {
    pub fn new(algorithm: Algorithm, recognizer: RecognizerConfig) -> Self {
        BenchConfig {
            algorithm,
            recognizer,
            degrade: None,
            scramble_seed: None,
        }
    }

    fn echo(&self) -> Vec<(String, String)> {
        let r = &self.recognizer;
        let mut out = vec![
            ("radius".to_string(), r.transforms.radius().to_string()),
            ("penalty".to_string(), format!("{:?}", r.solver.penalty)),
            ("outer_iters".to_string(), r.solver.outer_iters.to_string()),
            ("grid".to_string(), format!("{}x{}", r.grid.0, r.grid.1)),
            ("decision".to_string(), format!("{:?}", r.decision).to_lowercase()),
        ];
        if self.algorithm == Algorithm::Biefr {
            out.push(("fer_strength".to_string(), r.fer_strength.to_string()));
        }
        if let Some(d) = &self.degrade {
            out.push((
                "degrade".to_string(),
                format!(
                    "sigma={} tsf={}:{} relight={} fer_perturb={} seed={}",
                    d.gaussian_sigma, d.tsf_mode, d.tsf_radius, d.relight, d.fer_perturb, d.seed
                ),
            ));
        }
        if let Some(s) = self.scramble_seed {
            out.push(("scramble_seed".to_string(), s.to_string()));
        }
        out
    }
}

/// Classifies every probe of `dataset` and tallies the outcome.
///
/// Probes may run concurrently; results are aggregated in probe order, so
/// everything except the timing field is independent of the thread count.
pub fn run_benchmark(dataset: &Dataset, cfg: &BenchConfig) -> Result<EvalReport> {
    let gallery = dataset.gallery()?;
    let gallery = match cfg.algorithm {
        Algorithm::Biefr => gallery.neutralized(cfg.recognizer.fer_strength)?,
        _ => gallery,
    };

    let truths: Vec<String> = match cfg.scramble_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            dataset
                .probes
                .iter()
                .map(|_| dataset.classes[rng.gen_range(0..dataset.classes.len())].clone())
                .collect()
        }
        None => dataset.probes.iter().map(|p| p.class_id.clone()).collect(),
    };

    let outcomes = dataset
        .probes
        .par_iter()
        .enumerate()
        .map(|(i, probe)| {
            let start = Instant::now();
            let img = match &cfg.degrade {
                Some(spec) => degrade(&probe.chip, &spec.for_item(i as u64))?,
                None => probe.chip.clone(),
            };
            let result = match cfg.algorithm {
                Algorithm::Brfr => recognize_brfr(&img, &gallery, &cfg.recognizer)?,
                Algorithm::Birfr => recognize_birfr(&img, &gallery, &cfg.recognizer)?,
                Algorithm::Biefr => recognize_biefr_neutralized(&img, &gallery, &cfg.recognizer)?,
            };
            log::debug!("probe {}: predicted {}", probe.path.display(), result.best_class);
            Ok((result.best_class, start.elapsed().as_secs_f64()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut per_class: Vec<ClassTally> = dataset
        .classes
        .iter()
        .map(|c| ClassTally {
            class_id: c.clone(),
            total: 0,
            correct: 0,
        })
        .collect();
    let mut confusions: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut seconds = 0.0;
    for (truth, (predicted, secs)) in truths.iter().zip(&outcomes) {
        seconds += secs;
        let ci = dataset.class_index(truth).expect("labels come from the class list");
        per_class[ci].total += 1;
        if truth == predicted {
            per_class[ci].correct += 1;
        } else {
            *confusions.entry((truth.clone(), predicted.clone())).or_default() += 1;
        }
    }
    Ok(EvalReport {
        algorithm: cfg.algorithm,
        per_class,
        confusions: confusions
            .into_iter()
            .map(|((truth, predicted), count)| Confusion {
                truth,
                predicted,
                count,
            })
            .collect(),
        mean_probe_seconds: if outcomes.is_empty() {
            0.0
        } else {
            seconds / outcomes.len() as f64
        },
        skipped: dataset.skipped.len(),
        config: cfg.echo(),
    })
}
