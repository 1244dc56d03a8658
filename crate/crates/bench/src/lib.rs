//! Shared fixtures for the criterion benches.

use evops_core::evolution::{random_covering_genome, RunRng};
use evops_core::{generate, FitnessPair, Genome, GenomeLayout, SplitDataset, SynthConfig};
use rand::{Rng, SeedableRng};

/// Cohort sized like a small real run: 60 training slides of 40 to 80 patches.
pub fn cohort(dim: usize) -> SplitDataset {
    let cfg = SynthConfig {
        dim,
        class_separation: 2.0,
        seed: 11,
        ..SynthConfig::default()
    };
    generate(&cfg).expect("valid config").dataset
}

/// Layout of `slides` equal segments.
pub fn uniform_layout(slides: usize, patches_per_slide: usize) -> GenomeLayout {
    GenomeLayout::from_counts(&vec![patches_per_slide; slides]).expect("non-empty layout")
}

pub fn covering_genomes(layout: &GenomeLayout, n: usize, seed: u64) -> Vec<Genome> {
    let mut rng = RunRng::seed_from_u64(seed);
    (0..n)
        .map(|_| random_covering_genome(layout, &mut rng))
        .collect()
}

/// Points on a coarse grid, so ties and duplicates occur.
pub fn random_fitness(n: usize, seed: u64) -> Vec<FitnessPair> {
    let mut rng = RunRng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            FitnessPair::new(
                rng.random_range(0..100) as f64 / 100.0,
                rng.random_range(0..100) as f64 / 100.0,
            )
        })
        .collect()
}
