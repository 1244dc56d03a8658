//! Seeded synthetic cohorts with a planted class signal diluted by
//! class-agnostic noise patches.
//!
//! Each class `c` gets a centroid `mu_c = class_separation * u_c` with `u_c`
//! a random unit vector. A slide with `n` patches draws
//! `ceil(informative_fraction * n)` of them from `N(mu_c, sigma^2 I)` at
//! random row positions and the rest from `N(0, sigma^2 I)`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{write_dataset, EmbeddingMatrix, SlideRecord, Split, SplitDataset};
use crate::error::{Error, Result};

pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub classes: usize,
    pub train_per_class: usize,
    pub validation_per_class: usize,
    pub test_per_class: usize,
    pub patches_min: usize,
    pub patches_max: usize,
    pub informative_fraction: f64,
    pub dim: usize,
    pub class_separation: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            classes: 3,
            train_per_class: 20,
            validation_per_class: 5,
            test_per_class: 5,
            patches_min: 40,
            patches_max: 80,
            informative_fraction: 0.2,
            dim: 32,
            class_separation: 4.0,
            noise_sigma: 1.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.classes < 2 {
            return fail(format!("classes must be at least 2, got {}", self.classes));
        }
        if self.train_per_class == 0 || self.validation_per_class == 0 || self.test_per_class == 0 {
            return fail("every split needs at least one slide per class".into());
        }
        if self.patches_min == 0 || self.patches_min > self.patches_max {
            return fail(format!(
                "patch range [{}, {}] must satisfy 1 <= min <= max",
                self.patches_min, self.patches_max
            ));
        }
        if !(self.informative_fraction > 0.0 && self.informative_fraction <= 1.0) {
            return fail(format!(
                "informative_fraction must be in (0, 1], got {}",
                self.informative_fraction
            ));
        }
        if self.dim == 0 {
            return fail("dim must be at least 1".into());
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return fail(format!(
                "class_separation must be finite and >= 0, got {}",
                self.class_separation
            ));
        }
        if !(self.noise_sigma > 0.0 && self.noise_sigma.is_finite()) {
            return fail(format!("noise_sigma must be > 0, got {}", self.noise_sigma));
        }
        Ok(())
    }

    pub fn class_label(c: usize) -> String {
        format!("class_{c:02}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCohort {
    pub dataset: SplitDataset,
    /// Row indices of the informative patches of each slide.
    pub informative: BTreeMap<String, Vec<usize>>,
}

pub fn generate(config: &SynthConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_sigma).expect("sigma validated");

    let centroids: Vec<Vec<f64>> = (0..config.classes)
        .map(|_| {
            let v: Vec<f64> = (0..config.dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = v
                .iter()
                .map(|x| x * x)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            v.iter()
                .map(|x| x / norm * config.class_separation)
                .collect()
        })
        .collect();

    let mut slides = Vec::new();
    let mut informative = BTreeMap::new();
    for (split, per_class) in [
        (Split::Train, config.train_per_class),
        (Split::Validation, config.validation_per_class),
        (Split::Test, config.test_per_class),
    ] {
        for (class, centroid) in centroids.iter().enumerate() {
            for i in 0..per_class {
                let n = rng.random_range(config.patches_min..=config.patches_max);
                let n_inf = ((config.informative_fraction * n as f64).ceil() as usize).clamp(1, n);
                let mut rows = index::sample(&mut rng, n, n_inf).into_vec();
                rows.sort_unstable();
                let mut is_informative = vec![false; n];
                rows.iter().for_each(|&r| is_informative[r] = true);

                let mut values = Vec::with_capacity(n * config.dim);
                for &inf in &is_informative {
                    for &mu in centroid {
                        let base = if inf { mu } else { 0.0 };
                        values.push((base + noise.sample(&mut rng)) as f32);
                    }
                }
                let slide_id = format!("{split}-c{class:02}-{i:03}");
                informative.insert(slide_id.clone(), rows);
                slides.push(SlideRecord {
                    slide_id,
                    label: SynthConfig::class_label(class),
                    split,
                    embeddings: EmbeddingMatrix::new(n, config.dim, values)?,
                });
            }
        }
    }
    Ok(SyntheticCohort {
        dataset: SplitDataset::new(slides, "raw")?,
        informative,
    })
}

/// Writes the dataset plus `ground_truth.json` (slide id to informative rows).
pub fn write_cohort(cohort: &SyntheticCohort, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    write_dataset(&cohort.dataset, dir)?;
    let path = dir.join(GROUND_TRUTH_FILE);
    let mut text = serde_json::to_string_pretty(&cohort.informative).expect("serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            classes: 2,
            train_per_class: 3,
            validation_per_class: 2,
            test_per_class: 2,
            patches_min: 4,
            patches_max: 9,
            dim: 5,
            seed: 11,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn shape_and_ground_truth() {
        let c = generate(&small()).unwrap();
        let ds = &c.dataset;
        assert_eq!(ds.classes(), ["class_00", "class_01"]);
        assert_eq!(ds.train().len(), 6);
        assert_eq!(ds.validation().len(), 4);
        assert_eq!(ds.test().len(), 4);
        for s in ds.slides() {
            let n = s.patch_count();
            assert!((4..=9).contains(&n));
            let rows = &c.informative[&s.slide_id];
            assert_eq!(rows.len(), ((0.2 * n as f64).ceil() as usize).max(1));
            assert!(rows.iter().all(|&r| r < n));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(generate(&small()).unwrap(), generate(&small()).unwrap());
        let other = SynthConfig {
            seed: 12,
            ..small()
        };
        assert_ne!(generate(&small()).unwrap(), generate(&other).unwrap());
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            SynthConfig {
                informative_fraction: 0.0,
                ..small()
            },
            SynthConfig {
                classes: 1,
                ..small()
            },
            SynthConfig {
                patches_min: 0,
                ..small()
            },
            SynthConfig {
                patches_min: 10,
                patches_max: 5,
                ..small()
            },
            SynthConfig {
                noise_sigma: 0.0,
                ..small()
            },
            SynthConfig {
                test_per_class: 0,
                ..small()
            },
        ] {
            assert!(matches!(generate(&bad), Err(Error::Config(_))), "{bad:?}");
        }
    }
}
