//! Generational loop: initialize, then repeatedly select parents, recombine,
//! mutate, evaluate the merged pool and keep the best by rank and crowding.

mod operators;
mod sorting;

pub use operators::{
    initialize_population, random_covering_genome, safe_bitflip_mutation, safe_uniform_crossover,
    uniform_exchange, MutationStats,
};
pub use sorting::{
    crowded_compare, crowding_distance, dominates, fast_non_dominated_sort, rank_population,
    select_parents, select_survivors, survivor_indices, tournament,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_layout, GenomeLayout, Split, SplitDataset};
use crate::error::{Error, Result};
use crate::fitness::{FitnessEvaluator, FitnessPair};
use crate::genome::Genome;

/// RNG used for every stochastic step of a run.
pub type RunRng = ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvolutionConfig {
    pub population_size: usize,
    pub generations: usize,
    /// Per-gene probability of exchanging parental bits.
    pub crossover_swap_p: f64,
    /// Per-gene flip probability.
    pub mutation_flip_p: f64,
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            population_size: 100,
            generations: 50,
            crossover_swap_p: 0.9,
            mutation_flip_p: 0.01,
            k_neighbors: 5,
            seed: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 || !self.population_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "population_size must be even and at least 2, got {}",
                self.population_size
            )));
        }
        for (name, p) in [
            ("crossover_swap_p", self.crossover_swap_p),
            ("mutation_flip_p", self.mutation_flip_p),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        if self.k_neighbors == 0 {
            return Err(Error::Config("k_neighbors must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub fitness: Option<FitnessPair>,
    pub rank: Option<usize>,
    pub crowding: Option<f64>,
}

impl Individual {
    pub fn new(genome: Genome) -> Self {
        Self {
            genome,
            fitness: None,
            rank: None,
            crowding: None,
        }
    }

    pub fn evaluated(genome: Genome, fitness: FitnessPair) -> Self {
        Self {
            fitness: Some(fitness),
            ..Self::new(genome)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationTrace {
    pub generation: usize,
    pub best_error: f64,
    pub mean_error: f64,
    pub min_fraction: f64,
    pub mean_fraction: f64,
    pub front0_size: usize,
}

impl GenerationTrace {
    fn of(generation: usize, population: &[Individual]) -> Self {
        let n = population.len() as f64;
        let fitness = || population.iter().filter_map(|i| i.fitness);
        Self {
            generation,
            best_error: fitness().map(|f| f.error).fold(f64::INFINITY, f64::min),
            mean_error: fitness().map(|f| f.error).sum::<f64>() / n,
            min_fraction: fitness()
                .map(|f| f.patch_fraction)
                .fold(f64::INFINITY, f64::min),
            mean_fraction: fitness().map(|f| f.patch_fraction).sum::<f64>() / n,
            front0_size: population.iter().filter(|i| i.rank == Some(0)).count(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EvolutionOutcome {
    pub layout: GenomeLayout,
    pub population: Vec<Individual>,
    pub traces: Vec<GenerationTrace>,
}

/// Scores every individual that has no fitness yet. Runs on the current
/// rayon pool; results do not depend on its size.
pub fn evaluate_population(
    population: &mut [Individual],
    evaluator: &FitnessEvaluator<'_>,
) -> Result<()> {
    population
        .par_iter_mut()
        .filter(|ind| ind.fitness.is_none())
        .try_for_each(|ind| {
            let (pair, _) = evaluator.evaluate(&ind.genome)?;
            ind.fitness = Some(pair);
            Ok(())
        })
}

pub fn run_evolution(dataset: &SplitDataset, config: &EvolutionConfig) -> Result<EvolutionOutcome> {
    run_evolution_with(dataset, config, |_| {})
}

/// [`run_evolution`] with a callback invoked once per generation (generation
/// 0 is the initial population).
pub fn run_evolution_with(
    dataset: &SplitDataset,
    config: &EvolutionConfig,
    mut on_generation: impl FnMut(&GenerationTrace),
) -> Result<EvolutionOutcome> {
    config.validate()?;
    dataset.ensure_runnable()?;
    let layout = build_layout(dataset.train())?;
    let evaluator =
        FitnessEvaluator::for_split(dataset, &layout, Split::Validation, config.k_neighbors)?;
    let mut rng = RunRng::seed_from_u64(config.seed);

    let mut population = initialize_population(&layout, config, &mut rng);
    evaluate_population(&mut population, &evaluator)?;
    rank_population(&mut population);
    let mut traces = vec![GenerationTrace::of(0, &population)];
    on_generation(&traces[0]);

    for generation in 1..=config.generations {
        let pool = select_parents(&population, &mut rng);
        let mut offspring = Vec::with_capacity(pool.len());
        for pair in pool.chunks_exact(2) {
            let (a, b) = safe_uniform_crossover(
                &population[pair[0]].genome,
                &population[pair[1]].genome,
                &layout,
                config.crossover_swap_p,
                &mut rng,
            );
            offspring.push(a);
            offspring.push(b);
        }
        for child in &mut offspring {
            safe_bitflip_mutation(child, &layout, config.mutation_flip_p, &mut rng);
        }

        let mut combined = population;
        combined.extend(offspring.into_iter().map(Individual::new));
        evaluate_population(&mut combined, &evaluator)?;
        population = select_survivors(combined, config.population_size);

        debug_assert!(population
            .iter()
            .all(|ind| ind.genome.is_coverage_valid(&layout)));
        let trace = GenerationTrace::of(generation, &population);
        on_generation(&trace);
        traces.push(trace);
    }

    Ok(EvolutionOutcome {
        layout,
        population,
        traces,
    })
}
