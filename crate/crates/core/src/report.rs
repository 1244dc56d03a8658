//! Final front extraction, held-out scoring, multi-seed aggregation and the
//! on-disk report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_layout, GenomeLayout, SlideRecord, Split, SplitDataset};
use crate::error::{Error, Result};
use crate::evolution::{
    fast_non_dominated_sort, run_evolution_with, EvolutionConfig, GenerationTrace, Individual,
};
use crate::fitness::{ConfusionMatrix, FitnessEvaluator, FitnessPair};
use crate::genome::Genome;

/// Rank-0 members of `population`, one per distinct fitness pair (lowest
/// index kept), ordered by ascending patch fraction.
pub fn extract_front(population: &[Individual]) -> Vec<Individual> {
    let fitness: Vec<FitnessPair> = population
        .iter()
        .map(|i| i.fitness.expect("population must be evaluated"))
        .collect();
    let Some(first) = fast_non_dominated_sort(&fitness).into_iter().next() else {
        return Vec::new();
    };
    let mut front: Vec<usize> = Vec::with_capacity(first.len());
    for i in first {
        if !front.iter().any(|&j| fitness[j] == fitness[i]) {
            front.push(i);
        }
    }
    front.sort_by(|&a, &b| {
        fitness[a]
            .patch_fraction
            .total_cmp(&fitness[b].patch_fraction)
            .then(a.cmp(&b))
    });
    front.into_iter().map(|i| population[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub patch_count: usize,
    pub validation_f1: f64,
    pub test_f1: f64,
    pub validation_confusion: ConfusionMatrix,
    pub test_confusion: ConfusionMatrix,
}

/// Scores the all-ones genome (every training patch kept) on both held-out
/// splits.
pub fn compute_baseline(dataset: &SplitDataset, k: usize) -> Result<Baseline> {
    dataset.ensure_runnable()?;
    let layout = build_layout(dataset.train())?;
    let genome = Genome::ones(layout.total_patches());
    let validation = FitnessEvaluator::for_split(dataset, &layout, Split::Validation, k)?;
    let test = FitnessEvaluator::for_split(dataset, &layout, Split::Test, k)?;
    let validation_confusion = validation.confusion(&genome)?;
    let test_confusion = test.confusion(&genome)?;
    Ok(Baseline {
        patch_count: layout.total_patches(),
        validation_f1: validation_confusion.weighted_f1(),
        test_f1: test_confusion.weighted_f1(),
        validation_confusion,
        test_confusion,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontSolution {
    #[serde(skip)]
    pub genome: Genome,
    pub patch_count: usize,
    pub f1_fraction: f64,
    /// Objective value found during the search.
    pub f2_error: f64,
    pub validation_f1: f64,
    pub test_f1: f64,
    pub validation_confusion: ConfusionMatrix,
    pub test_confusion: ConfusionMatrix,
    pub per_slide_counts: BTreeMap<String, usize>,
}

/// Selected patch rows per training slide.
pub fn selected_rows(
    genome: &Genome,
    layout: &GenomeLayout,
    train: &[SlideRecord],
) -> BTreeMap<String, Vec<usize>> {
    layout
        .segments()
        .iter()
        .map(|seg| {
            let rows = genome
                .iter_ones_in(seg.range())
                .map(|p| p - seg.offset)
                .collect();
            (train[seg.slide_index].slide_id.clone(), rows)
        })
        .collect()
}

/// Rebuilds each solution's reference library and scores validation and
/// test splits.
pub fn evaluate_front(
    front: &[Individual],
    dataset: &SplitDataset,
    k: usize,
) -> Result<Vec<FrontSolution>> {
    if front.is_empty() {
        return Err(Error::Validation("cannot evaluate an empty front".into()));
    }
    let layout = build_layout(dataset.train())?;
    let validation = FitnessEvaluator::for_split(dataset, &layout, Split::Validation, k)?;
    let test = FitnessEvaluator::for_split(dataset, &layout, Split::Test, k)?;
    front
        .par_iter()
        .map(|ind| {
            let validation_confusion = validation.confusion(&ind.genome)?;
            let test_confusion = test.confusion(&ind.genome)?;
            let patch_count = ind.genome.count_ones();
            let per_slide_counts = layout
                .segments()
                .iter()
                .map(|seg| {
                    (
                        dataset.train()[seg.slide_index].slide_id.clone(),
                        ind.genome.count_ones_in(seg.range()),
                    )
                })
                .collect();
            let validation_f1 = validation_confusion.weighted_f1();
            Ok(FrontSolution {
                genome: ind.genome.clone(),
                patch_count,
                f1_fraction: patch_count as f64 / layout.total_patches() as f64,
                f2_error: ind.fitness.map_or(1.0 - validation_f1, |f| f.error),
                validation_f1,
                test_f1: test_confusion.weighted_f1(),
                validation_confusion,
                test_confusion,
                per_slide_counts,
            })
        })
        .collect()
}

/// Index maximizing `score`, ties to the smaller patch count, then the
/// earlier solution.
fn best_by(front: &[FrontSolution], score: impl Fn(&FrontSolution) -> f64) -> usize {
    let mut best = 0;
    for (i, s) in front.iter().enumerate().skip(1) {
        let b = &front[best];
        let better = score(s) > score(b) || (score(s) == score(b) && s.patch_count < b.patch_count);
        if better {
            best = i;
        }
    }
    best
}

pub fn reduction_percent(patch_count: usize, total: usize) -> f64 {
    100.0 * (1.0 - patch_count as f64 / total as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPatchCounts {
    pub slides: usize,
    pub baseline: f64,
    pub best_val: f64,
    pub best_test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: EvolutionConfig,
    pub dataset_fingerprint: String,
    pub total_patches: usize,
    pub baseline: Baseline,
    pub front: Vec<FrontSolution>,
    pub best_val: usize,
    pub best_test: usize,
    pub reduction_percent_best_val: f64,
    pub reduction_percent_best_test: f64,
    /// Mean selected patches per training slide, grouped by class.
    pub patches_per_slide: BTreeMap<String, ClassPatchCounts>,
    pub traces: Vec<GenerationTrace>,
}

impl RunReport {
    pub fn best_val_solution(&self) -> &FrontSolution {
        &self.front[self.best_val]
    }

    pub fn best_test_solution(&self) -> &FrontSolution {
        &self.front[self.best_test]
    }
}

pub fn build_run_report(
    dataset: &SplitDataset,
    config: &EvolutionConfig,
    population: &[Individual],
    traces: Vec<GenerationTrace>,
) -> Result<RunReport> {
    let baseline = compute_baseline(dataset, config.k_neighbors)?;
    let front = evaluate_front(&extract_front(population), dataset, config.k_neighbors)?;
    let best_val = best_by(&front, |s| s.validation_f1);
    let best_test = best_by(&front, |s| s.test_f1);
    let total = baseline.patch_count;

    let mut patches_per_slide: BTreeMap<String, ClassPatchCounts> = BTreeMap::new();
    for slide in dataset.train() {
        let entry = patches_per_slide
            .entry(slide.label.clone())
            .or_insert(ClassPatchCounts {
                slides: 0,
                baseline: 0.0,
                best_val: 0.0,
                best_test: 0.0,
            });
        entry.slides += 1;
        entry.baseline += slide.patch_count() as f64;
        entry.best_val += front[best_val].per_slide_counts[&slide.slide_id] as f64;
        entry.best_test += front[best_test].per_slide_counts[&slide.slide_id] as f64;
    }
    for c in patches_per_slide.values_mut() {
        let n = c.slides as f64;
        c.baseline /= n;
        c.best_val /= n;
        c.best_test /= n;
    }

    Ok(RunReport {
        config: config.clone(),
        dataset_fingerprint: dataset.fingerprint(),
        total_patches: total,
        reduction_percent_best_val: reduction_percent(front[best_val].patch_count, total),
        reduction_percent_best_test: reduction_percent(front[best_test].patch_count, total),
        baseline,
        front,
        best_val,
        best_test,
        patches_per_slide,
        traces,
    })
}

/// Evolution followed by front extraction and held-out scoring.
pub fn run_single(
    dataset: &SplitDataset,
    config: &EvolutionConfig,
    on_generation: impl FnMut(&GenerationTrace),
) -> Result<RunReport> {
    let outcome = run_evolution_with(dataset, config, on_generation)?;
    build_run_report(dataset, config, &outcome.population, outcome.traces)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n - 1); 0 for a single run.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionSummary {
    pub patch_count: MeanStd,
    pub reduction_percent: MeanStd,
    pub validation_f1: MeanStd,
    pub test_f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub dataset_fingerprint: String,
    pub total_patches: usize,
    pub baseline_validation_f1: f64,
    pub baseline_test_f1: f64,
    pub best_val: SolutionSummary,
    pub best_test: SolutionSummary,
    pub patches_per_slide: BTreeMap<String, ClassPatchCounts>,
    pub classes: Vec<String>,
    /// Test confusion of the Best-Val solution, averaged over runs.
    pub mean_test_confusion_best_val: Vec<Vec<f64>>,
}

fn summarize(
    reports: &[RunReport],
    pick: impl Fn(&RunReport) -> &FrontSolution,
) -> SolutionSummary {
    let col = |f: &dyn Fn(&FrontSolution) -> f64| {
        MeanStd::of(&reports.iter().map(|r| f(pick(r))).collect::<Vec<_>>())
    };
    let total = reports[0].total_patches;
    SolutionSummary {
        patch_count: col(&|s| s.patch_count as f64),
        reduction_percent: col(&|s| reduction_percent(s.patch_count, total)),
        validation_f1: col(&|s| s.validation_f1),
        test_f1: col(&|s| s.test_f1),
    }
}

pub fn aggregate_runs(reports: &[RunReport]) -> Result<AggregateReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Validation("no run reports to aggregate".into()))?;
    for r in &reports[1..] {
        if r.dataset_fingerprint != first.dataset_fingerprint {
            return Err(Error::MixedDataset {
                expected: first.dataset_fingerprint.clone(),
                found: r.dataset_fingerprint.clone(),
            });
        }
    }
    let n = reports.len() as f64;

    let mut patches_per_slide = first.patches_per_slide.clone();
    for (class, counts) in patches_per_slide.iter_mut() {
        let per_run = |f: fn(&ClassPatchCounts) -> f64| {
            reports
                .iter()
                .map(|r| f(&r.patches_per_slide[class]))
                .sum::<f64>()
                / n
        };
        counts.best_val = per_run(|c| c.best_val);
        counts.best_test = per_run(|c| c.best_test);
    }

    let classes = first.baseline.test_confusion.classes.clone();
    let c = classes.len();
    let mut mean_confusion = vec![vec![0.0; c]; c];
    for r in reports {
        let m = &r.best_val_solution().test_confusion.counts;
        for (row, src) in mean_confusion.iter_mut().zip(m) {
            for (cell, &v) in row.iter_mut().zip(src) {
                *cell += v as f64 / n;
            }
        }
    }

    Ok(AggregateReport {
        runs: reports.len(),
        seeds: reports.iter().map(|r| r.config.seed).collect(),
        dataset_fingerprint: first.dataset_fingerprint.clone(),
        total_patches: first.total_patches,
        baseline_validation_f1: first.baseline.validation_f1,
        baseline_test_f1: first.baseline.test_f1,
        best_val: summarize(reports, RunReport::best_val_solution),
        best_test: summarize(reports, RunReport::best_test_solution),
        patches_per_slide,
        classes,
        mean_test_confusion_best_val: mean_confusion,
    })
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let mut out = String::from("true\\predicted");
    for c in &m.classes {
        write!(out, ",{c}").unwrap();
    }
    out.push('\n');
    for (class, row) in m.classes.iter().zip(&m.counts) {
        out.push_str(class);
        for v in row {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn pareto_front_csv(front: &[FrontSolution]) -> String {
    let mut out = String::from("f1_fraction,patch_count,validation_f1,test_f1\n");
    for s in front {
        writeln!(
            out,
            "{:.6},{},{:.6},{:.6}",
            s.f1_fraction, s.patch_count, s.validation_f1, s.test_f1
        )
        .unwrap();
    }
    out
}

pub fn trace_csv(traces: &[GenerationTrace]) -> String {
    let mut out = String::from(
        "generation,best_f2_error,mean_f2_error,min_f1_fraction,mean_f1_fraction,front0_size\n",
    );
    for t in traces {
        writeln!(
            out,
            "{},{:.6},{:.6},{:.6},{:.6},{}",
            t.generation,
            t.best_error,
            t.mean_error,
            t.min_fraction,
            t.mean_fraction,
            t.front0_size
        )
        .unwrap();
    }
    out
}

/// Writes one run's files under `out_dir`:
/// `pareto_front.csv`, `selections/<idx>.json`,
/// `confusion_{val,test}_{baseline,best_val,best_test}.csv`, `trace.csv` and
/// `summary.json`.
pub fn export_report(
    report: &RunReport,
    dataset: &SplitDataset,
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let out_dir = out_dir.as_ref();
    let selections = out_dir.join("selections");
    fs::create_dir_all(&selections).map_err(|e| Error::io(&selections, e))?;
    let layout = build_layout(dataset.train())?;

    write_file(
        &out_dir.join("pareto_front.csv"),
        &pareto_front_csv(&report.front),
    )?;
    for (i, s) in report.front.iter().enumerate() {
        let rows = selected_rows(&s.genome, &layout, dataset.train());
        write_file(&selections.join(format!("{i}.json")), &to_json(&rows))?;
    }
    let confusions = [
        ("val", "baseline", &report.baseline.validation_confusion),
        (
            "val",
            "best_val",
            &report.best_val_solution().validation_confusion,
        ),
        (
            "val",
            "best_test",
            &report.best_test_solution().validation_confusion,
        ),
        ("test", "baseline", &report.baseline.test_confusion),
        (
            "test",
            "best_val",
            &report.best_val_solution().test_confusion,
        ),
        (
            "test",
            "best_test",
            &report.best_test_solution().test_confusion,
        ),
    ];
    for (split, which, m) in confusions {
        write_file(
            &out_dir.join(format!("confusion_{split}_{which}.csv")),
            &confusion_csv(m),
        )?;
    }
    write_file(&out_dir.join("trace.csv"), &trace_csv(&report.traces))?;
    write_file(&out_dir.join("summary.json"), &to_json(report))
}

/// Per-run summary rows, one per seed, in report order.
pub fn runs_csv(reports: &[RunReport]) -> String {
    let mut out = String::from(
        "seed,total_patches,baseline_validation_f1,baseline_test_f1,\
         best_val_patch_count,best_val_validation_f1,best_val_test_f1,\
         best_test_patch_count,best_test_validation_f1,best_test_test_f1\n",
    );
    for r in reports {
        let (v, t) = (r.best_val_solution(), r.best_test_solution());
        writeln!(
            out,
            "{},{},{:.6},{:.6},{},{:.6},{:.6},{},{:.6},{:.6}",
            r.config.seed,
            r.total_patches,
            r.baseline.validation_f1,
            r.baseline.test_f1,
            v.patch_count,
            v.validation_f1,
            v.test_f1,
            t.patch_count,
            t.validation_f1,
            t.test_f1
        )
        .unwrap();
    }
    out
}

/// Writes `aggregate.json` and `runs.csv` under `out_dir`.
pub fn export_aggregate(
    aggregate: &AggregateReport,
    reports: &[RunReport],
    out_dir: impl AsRef<Path>,
) -> Result<()> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("aggregate.json"), &to_json(aggregate))?;
    write_file(&out_dir.join("runs.csv"), &runs_csv(reports))
}

/// Writes `baseline.json` and the two baseline confusion CSVs.
pub fn export_baseline(baseline: &Baseline, out_dir: impl AsRef<Path>) -> Result<()> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("baseline.json"), &to_json(baseline))?;
    write_file(
        &out_dir.join("confusion_val_baseline.csv"),
        &confusion_csv(&baseline.validation_confusion),
    )?;
    write_file(
        &out_dir.join("confusion_test_baseline.csv"),
        &confusion_csv(&baseline.test_confusion),
    )
}
