//! Objective evaluation: selected-patch fraction and `1 - weighted F1` of a
//! k-NN slide classifier built from the selected patches.

use serde::{Deserialize, Serialize};

use crate::dataset::{slide_mean_all, GenomeLayout, SlideRecord, SplitDataset};
use crate::error::{Error, Result};
use crate::genome::Genome;

/// Two minimization objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitnessPair {
    /// Selected patches over total training patches.
    pub patch_fraction: f64,
    /// One minus validation weighted F1.
    pub error: f64,
}

impl FitnessPair {
    pub fn new(patch_fraction: f64, error: f64) -> Self {
        Self {
            patch_fraction,
            error,
        }
    }

    pub fn as_array(&self) -> [f64; 2] {
        [self.patch_fraction, self.error]
    }
}

/// Rows are true classes, columns are predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn empty(classes: &[String]) -> Self {
        let c = classes.len();
        Self {
            classes: classes.to_vec(),
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn from_indices(classes: &[String], truth: &[usize], predicted: &[usize]) -> Self {
        assert_eq!(truth.len(), predicted.len(), "label lists differ in length");
        let mut m = Self::empty(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.counts[t][p] += 1;
        }
        m
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum()
    }

    /// Per-class F1 with the zero-denominator cases defined as 0.
    pub fn class_f1(&self, class: usize) -> f64 {
        let tp = self.counts[class][class] as f64;
        let predicted = self.predicted(class) as f64;
        let actual = self.support(class) as f64;
        let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
        let recall = if actual > 0.0 { tp / actual } else { 0.0 };
        if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        }
    }

    /// Support-weighted mean of per-class F1.
    pub fn weighted_f1(&self) -> f64 {
        let n = self.total();
        if n == 0 {
            return 0.0;
        }
        (0..self.classes.len())
            .map(|c| self.support(c) as f64 * self.class_f1(c))
            .sum::<f64>()
            / n as f64
    }
}

/// Weighted F1 over string labels.
pub fn weighted_f1<S: AsRef<str>>(
    true_labels: &[S],
    predicted_labels: &[S],
    classes: &[String],
) -> Result<f64> {
    if true_labels.len() != predicted_labels.len() || true_labels.is_empty() {
        return Err(Error::Validation(format!(
            "weighted F1 needs equal-length non-empty label lists, got {} and {}",
            true_labels.len(),
            predicted_labels.len()
        )));
    }
    let index = |label: &S| {
        let label = label.as_ref();
        classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::Label(label.to_string()))
    };
    let truth = true_labels.iter().map(index).collect::<Result<Vec<_>>>()?;
    let pred = predicted_labels
        .iter()
        .map(index)
        .collect::<Result<Vec<_>>>()?;
    Ok(ConfusionMatrix::from_indices(classes, &truth, &pred).weighted_f1())
}

/// One mean vector per training slide, queried by k-NN.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceLibrary {
    dim: usize,
    vectors: Vec<f64>,
    labels: Vec<usize>,
    slide_ids: Vec<String>,
}

impl ReferenceLibrary {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            vectors: Vec::new(),
            labels: Vec::new(),
            slide_ids: Vec::new(),
        }
    }

    pub fn push(&mut self, vector: &[f64], label: usize, slide_id: impl Into<String>) {
        assert_eq!(vector.len(), self.dim, "library vector has wrong dim");
        self.vectors.extend_from_slice(vector);
        self.labels.push(label);
        self.slide_ids.push(slide_id.into());
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn slide_ids(&self) -> &[String] {
        &self.slide_ids
    }
}

fn class_of(classes: &[String], slide: &SlideRecord) -> Result<usize> {
    classes
        .iter()
        .position(|c| *c == slide.label)
        .ok_or_else(|| Error::Label(slide.label.clone()))
}

/// Builds the reference library from the patches a genome selects: each
/// training slide becomes the mean of its selected rows.
pub fn aggregate_selected(
    genome: &Genome,
    layout: &GenomeLayout,
    train: &[SlideRecord],
    classes: &[String],
) -> Result<ReferenceLibrary> {
    assert_eq!(
        genome.len(),
        layout.total_patches(),
        "genome/layout length mismatch"
    );
    let dim = train.first().map_or(0, |s| s.embeddings.dim());
    let mut library = ReferenceLibrary::new(dim);
    let mut acc = vec![0.0f64; dim];
    for segment in layout.segments() {
        let slide = &train[segment.slide_index];
        acc.iter_mut().for_each(|a| *a = 0.0);
        let mut n = 0usize;
        for pos in genome.iter_ones_in(segment.range()) {
            let row = slide.embeddings.row(pos - segment.offset);
            for (a, &v) in acc.iter_mut().zip(row) {
                *a += f64::from(v);
            }
            n += 1;
        }
        if n == 0 {
            return Err(Error::CoverageViolation {
                slide_id: slide.slide_id.clone(),
            });
        }
        acc.iter_mut().for_each(|a| *a /= n as f64);
        library.push(&acc, class_of(classes, slide)?, slide.slide_id.clone());
    }
    Ok(library)
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Majority vote over the `k` nearest library rows (squared Euclidean).
///
/// Distance ties go to the lower row index. Vote ties go to whichever tied
/// class owns the nearest neighbor.
pub fn knn_predict(query: &[f64], library: &ReferenceLibrary, k: usize) -> usize {
    assert!(k >= 1, "k must be at least 1");
    assert!(!library.is_empty(), "reference library is empty");
    let k = k.min(library.len());
    let mut ranked: Vec<(f64, usize)> = (0..library.len())
        .map(|i| (squared_distance(query, library.row(i)), i))
        .collect();
    let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < ranked.len() {
        ranked.select_nth_unstable_by(k - 1, by_distance);
        ranked.truncate(k);
    }
    ranked.sort_unstable_by(by_distance);

    let labels = library.labels();
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut votes = vec![0usize; n_classes];
    for &(_, i) in &ranked {
        votes[labels[i]] += 1;
    }
    let best = *votes.iter().max().unwrap();
    ranked
        .iter()
        .map(|&(_, i)| labels[i])
        .find(|&c| votes[c] == best)
        .unwrap()
}

/// Scores genomes against one held-out split. Held-out slide means are
/// computed once at construction.
#[derive(Debug, Clone)]
pub struct FitnessEvaluator<'a> {
    layout: &'a GenomeLayout,
    train: &'a [SlideRecord],
    classes: &'a [String],
    queries: Vec<Vec<f64>>,
    truth: Vec<usize>,
    k: usize,
}

impl<'a> FitnessEvaluator<'a> {
    pub fn new(
        layout: &'a GenomeLayout,
        train: &'a [SlideRecord],
        eval_slides: &[SlideRecord],
        classes: &'a [String],
        k: usize,
    ) -> Result<Self> {
        if eval_slides.is_empty() {
            return Err(Error::Validation("evaluation split is empty".into()));
        }
        if k == 0 {
            return Err(Error::Config("k_neighbors must be at least 1".into()));
        }
        let truth = eval_slides
            .iter()
            .map(|s| class_of(classes, s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layout,
            train,
            classes,
            queries: eval_slides.iter().map(slide_mean_all).collect(),
            truth,
            k,
        })
    }

    /// Evaluator for `split` of a dataset, sharing the dataset's training slides.
    pub fn for_split(
        dataset: &'a SplitDataset,
        layout: &'a GenomeLayout,
        split: crate::dataset::Split,
        k: usize,
    ) -> Result<Self> {
        Self::new(
            layout,
            dataset.train(),
            dataset.split(split),
            dataset.classes(),
            k,
        )
    }

    pub fn layout(&self) -> &GenomeLayout {
        self.layout
    }

    pub fn confusion(&self, genome: &Genome) -> Result<ConfusionMatrix> {
        let library = aggregate_selected(genome, self.layout, self.train, self.classes)?;
        let predicted: Vec<usize> = self
            .queries
            .iter()
            .map(|q| knn_predict(q, &library, self.k))
            .collect();
        Ok(ConfusionMatrix::from_indices(
            self.classes,
            &self.truth,
            &predicted,
        ))
    }

    pub fn evaluate(&self, genome: &Genome) -> Result<(FitnessPair, ConfusionMatrix)> {
        let confusion = self.confusion(genome)?;
        let fraction = genome.count_ones() as f64 / self.layout.total_patches() as f64;
        let pair = FitnessPair::new(fraction, 1.0 - confusion.weighted_f1());
        Ok((pair, confusion))
    }
}

/// One-shot evaluation of a genome against `eval_slides`.
pub fn evaluate_individual(
    genome: &Genome,
    layout: &GenomeLayout,
    train: &[SlideRecord],
    eval_slides: &[SlideRecord],
    classes: &[String],
    k: usize,
) -> Result<(FitnessPair, ConfusionMatrix)> {
    FitnessEvaluator::new(layout, train, eval_slides, classes, k)?.evaluate(genome)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{EmbeddingMatrix, Split};

    fn classes(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    fn slide(id: &str, label: &str, split: Split, rows: &[&[f32]]) -> SlideRecord {
        let dim = rows[0].len();
        let values = rows.iter().flat_map(|r| r.iter().copied()).collect();
        SlideRecord {
            slide_id: id.into(),
            label: label.into(),
            split,
            embeddings: EmbeddingMatrix::new(rows.len(), dim, values).unwrap(),
        }
    }

    #[test]
    fn weighted_f1_hand_cases() {
        let cls = classes(&["A", "B"]);
        let f = weighted_f1(&["A", "A", "B", "B"], &["A", "B", "B", "B"], &cls).unwrap();
        let expected = (2.0 * (2.0 / 3.0) + 2.0 * 0.8) / 4.0;
        assert!((f - expected).abs() < 1e-15);
        assert!((f - 0.733333).abs() < 1e-6);

        assert_eq!(weighted_f1(&["A", "B"], &["A", "B"], &cls).unwrap(), 1.0);

        // A has support but is never predicted, so it contributes 0.
        let f = weighted_f1(&["A", "B", "B"], &["B", "B", "B"], &cls).unwrap();
        let f1_b = 2.0 * (2.0 / 3.0) / (2.0 / 3.0 + 1.0);
        assert!((f - 2.0 * f1_b / 3.0).abs() < 1e-15);

        assert!(matches!(
            weighted_f1(&["A"], &["C"], &cls),
            Err(Error::Label(l)) if l == "C"
        ));
        assert!(weighted_f1::<&str>(&[], &[], &cls).is_err());
    }

    #[test]
    fn zero_support_class_has_no_weight() {
        let cls = classes(&["A", "B", "C"]);
        let f = weighted_f1(&["A", "B"], &["A", "B"], &cls).unwrap();
        assert_eq!(f, 1.0);
    }

    #[test]
    fn masked_mean_aggregation() {
        let cls = classes(&["a"]);
        let train = vec![slide(
            "s",
            "a",
            Split::Train,
            &[&[0.0, 0.0], &[2.0, 2.0], &[4.0, 4.0]],
        )];
        let layout = crate::dataset::build_layout(&train).unwrap();
        let lib = aggregate_selected(
            &Genome::from_bools(&[true, false, true]),
            &layout,
            &train,
            &cls,
        )
        .unwrap();
        assert_eq!(lib.row(0), [2.0, 2.0]);

        let full = aggregate_selected(&Genome::ones(3), &layout, &train, &cls).unwrap();
        assert_eq!(full.row(0), slide_mean_all(&train[0]).as_slice());

        let err = aggregate_selected(&Genome::zeros(3), &layout, &train, &cls).unwrap_err();
        assert!(matches!(err, Error::CoverageViolation { slide_id } if slide_id == "s"));
    }

    #[test]
    fn knn_votes_and_ties() {
        let mut lib = ReferenceLibrary::new(1);
        lib.push(&[1.0], 0, "r0");
        lib.push(&[2.0], 0, "r1");
        lib.push(&[3.0], 1, "r2");
        assert_eq!(knn_predict(&[0.0], &lib, 3), 0);
        assert_eq!(knn_predict(&[3.0], &lib, 1), 1);
        assert_eq!(knn_predict(&[2.0], &lib, 1), 0);
        // k larger than library clamps
        assert_eq!(knn_predict(&[3.0], &lib, 50), 0);

        // 1-1 vote tie: nearest neighbor's class wins
        let mut lib = ReferenceLibrary::new(1);
        lib.push(&[5.0], 0, "far");
        lib.push(&[1.0], 1, "near");
        assert_eq!(knn_predict(&[0.0], &lib, 2), 1);

        // equal distances: lower row index is nearer
        let mut lib = ReferenceLibrary::new(1);
        lib.push(&[1.0], 1, "a");
        lib.push(&[-1.0], 0, "b");
        assert_eq!(knn_predict(&[0.0], &lib, 1), 1);
        assert_eq!(knn_predict(&[0.0], &lib, 2), 1);
    }

    #[test]
    fn evaluation_counts_fraction() {
        let cls = classes(&["a", "b"]);
        let train = vec![
            slide("t0", "a", Split::Train, &[&[0.0], &[0.2]]),
            slide("t1", "b", Split::Train, &[&[10.0], &[9.0], &[11.0]]),
        ];
        let val = vec![
            slide("v0", "a", Split::Validation, &[&[0.1]]),
            slide("v1", "b", Split::Validation, &[&[10.0]]),
        ];
        let layout = crate::dataset::build_layout(&train).unwrap();
        let (pair, cm) =
            evaluate_individual(&Genome::ones(5), &layout, &train, &val, &cls, 1).unwrap();
        assert_eq!(pair.patch_fraction, 1.0);
        assert_eq!(pair.error, 0.0);
        assert_eq!(cm.total(), 2);

        let one_each = Genome::from_bools(&[true, false, false, true, false]);
        let (pair, _) = evaluate_individual(&one_each, &layout, &train, &val, &cls, 1).unwrap();
        assert_eq!(pair.patch_fraction, 2.0 / 5.0);
    }
}
