//! Independent reference implementations used as test oracles. Nothing here
//! calls into the code paths under test beyond plain data accessors.
#![allow(dead_code)]

use evops_core::{FitnessPair, Genome, SlideRecord, SplitDataset, SynthConfig};

/// Rank of every point by repeatedly peeling off the points nobody
/// remaining dominates; pairwise, no bookkeeping.
pub fn brute_force_ranks(points: &[FitnessPair]) -> Vec<usize> {
    let dom = |a: &FitnessPair, b: &FitnessPair| {
        (a.patch_fraction <= b.patch_fraction && a.error <= b.error)
            && (a.patch_fraction < b.patch_fraction || a.error < b.error)
    };
    let mut rank = vec![usize::MAX; points.len()];
    let mut level = 0;
    while rank.contains(&usize::MAX) {
        let remaining: Vec<usize> = (0..points.len())
            .filter(|&i| rank[i] == usize::MAX)
            .collect();
        let layer: Vec<usize> = remaining
            .iter()
            .copied()
            .filter(|&i| !remaining.iter().any(|&j| dom(&points[j], &points[i])))
            .collect();
        for i in layer {
            rank[i] = level;
        }
        level += 1;
    }
    rank
}

pub fn mean_rows(rows: &[&[f32]]) -> Vec<f64> {
    let dim = rows[0].len();
    let mut out = vec![0.0; dim];
    for r in rows {
        for d in 0..dim {
            out[d] += r[d] as f64;
        }
    }
    out.iter().map(|v| v / rows.len() as f64).collect()
}

pub fn slide_rows(slide: &SlideRecord) -> Vec<&[f32]> {
    (0..slide.patch_count())
        .map(|r| slide.embeddings.row(r))
        .collect()
}

/// Mean of the rows of each training slide the genome selects, walking the
/// genome bit by bit with a running offset.
pub fn masked_means(genome: &Genome, train: &[SlideRecord]) -> Vec<Vec<f64>> {
    let mut offset = 0;
    let mut out = Vec::new();
    for slide in train {
        let rows: Vec<&[f32]> = (0..slide.patch_count())
            .filter(|r| genome.get(offset + r))
            .map(|r| slide.embeddings.row(r))
            .collect();
        offset += slide.patch_count();
        out.push(mean_rows(&rows));
    }
    out
}

/// k-NN by fully sorting all library rows on (distance, index).
pub fn sort_knn(query: &[f64], library: &[Vec<f64>], labels: &[usize], k: usize) -> usize {
    let mut all: Vec<(f64, usize)> = library
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let d: f64 = row.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, i)
        })
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let nearest = &all[..k.min(all.len())];
    let mut votes = std::collections::HashMap::new();
    for &(_, i) in nearest {
        *votes.entry(labels[i]).or_insert(0usize) += 1;
    }
    let top = *votes.values().max().unwrap();
    nearest
        .iter()
        .map(|&(_, i)| labels[i])
        .find(|c| votes[c] == top)
        .unwrap()
}

/// Weighted F1 from explicit TP/FP/FN counts.
pub fn hand_weighted_f1(truth: &[usize], pred: &[usize], n_classes: usize) -> f64 {
    let mut total = 0.0;
    for c in 0..n_classes {
        let tp = truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| **t == c && **p == c)
            .count() as f64;
        let fp = truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| **t != c && **p == c)
            .count() as f64;
        let fneg = truth
            .iter()
            .zip(pred)
            .filter(|(t, p)| **t == c && **p != c)
            .count() as f64;
        let support = tp + fneg;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if support > 0.0 { tp / support } else { 0.0 };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        total += support * f1;
    }
    total / truth.len() as f64
}

/// Straight-line `(patch fraction, 1 - weighted F1)` for a genome.
pub fn oracle_fitness(
    genome: &Genome,
    dataset: &SplitDataset,
    eval: &[SlideRecord],
    k: usize,
) -> (f64, f64) {
    let classes = dataset.classes();
    let idx = |label: &str| classes.iter().position(|c| c == label).unwrap();
    let library = masked_means(genome, dataset.train());
    let labels: Vec<usize> = dataset.train().iter().map(|s| idx(&s.label)).collect();
    let truth: Vec<usize> = eval.iter().map(|s| idx(&s.label)).collect();
    let pred: Vec<usize> = eval
        .iter()
        .map(|s| sort_knn(&mean_rows(&slide_rows(s)), &library, &labels, k))
        .collect();
    let total: usize = dataset.train().iter().map(|s| s.patch_count()).sum();
    let selected = (0..genome.len()).filter(|&i| genome.get(i)).count();
    (
        selected as f64 / total as f64,
        1.0 - hand_weighted_f1(&truth, &pred, classes.len()),
    )
}

/// Cohort used by the efficiency experiment and several integration tests.
pub fn acceptance_cohort_config() -> SynthConfig {
    SynthConfig {
        classes: 3,
        train_per_class: 20,
        validation_per_class: 5,
        test_per_class: 5,
        patches_min: 40,
        patches_max: 80,
        informative_fraction: 0.2,
        dim: 32,
        class_separation: 2.0,
        noise_sigma: 1.0,
        seed: 1,
    }
}

pub fn small_cohort(seed: u64) -> SynthConfig {
    SynthConfig {
        classes: 3,
        train_per_class: 4,
        validation_per_class: 3,
        test_per_class: 3,
        patches_min: 5,
        patches_max: 15,
        dim: 8,
        class_separation: 3.0,
        seed,
        ..SynthConfig::default()
    }
}
