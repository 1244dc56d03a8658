//! Multi-objective evolutionary selection of training patch embeddings.
//!
//! A genome marks which patches of each training slide are kept. Every
//! genome is scored on two minimized objectives: the fraction of patches
//! kept, and one minus the weighted F1 of a k-NN classifier whose reference
//! slides are the means of their kept patches. An NSGA-II style loop evolves
//! a population of genomes and the final non-dominated front is scored on a
//! held-out test split.

pub mod dataset;
pub mod error;
pub mod evolution;
pub mod fitness;
pub mod genome;
pub mod report;
pub mod synthgen;

pub use dataset::{
    build_layout, load_dataset, slide_mean_all, write_dataset, EmbeddingMatrix, GenomeLayout,
    Segment, SlideRecord, Split, SplitDataset,
};
pub use error::{Error, Result};
pub use evolution::{
    run_evolution, run_evolution_with, EvolutionConfig, EvolutionOutcome, GenerationTrace,
    Individual,
};
pub use fitness::{
    aggregate_selected, evaluate_individual, knn_predict, weighted_f1, ConfusionMatrix,
    FitnessEvaluator, FitnessPair, ReferenceLibrary,
};
pub use genome::Genome;
pub use report::{
    aggregate_runs, compute_baseline, evaluate_front, export_report, extract_front, run_single,
    AggregateReport, Baseline, FrontSolution, RunReport,
};
pub use synthgen::{generate, SynthConfig, SyntheticCohort};

/// Runs `f` on a dedicated rayon pool with `workers` threads (0 picks the
/// rayon default). Outputs never depend on the worker count.
pub fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::WorkerPool(e.to_string()))?;
    Ok(pool.install(f))
}
