//! Coverage-preserving genetic operators. Every operator leaves each
//! segment of the genome with at least one set bit.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Geometric};

use super::{EvolutionConfig, Individual};
use crate::dataset::GenomeLayout;
use crate::genome::Genome;

/// Calls `f` for each position in `0..len` selected by an independent
/// Bernoulli(`p`) trial, skipping ahead geometrically between hits.
pub(crate) fn for_each_bernoulli<R: Rng + ?Sized>(
    len: usize,
    p: f64,
    rng: &mut R,
    mut f: impl FnMut(usize),
) {
    if p <= 0.0 || len == 0 {
        return;
    }
    if p >= 1.0 {
        (0..len).for_each(f);
        return;
    }
    let gaps = Geometric::new(p).expect("probability in (0, 1)");
    let mut pos = 0usize;
    loop {
        let skip = gaps.sample(rng);
        pos = match usize::try_from(skip).ok().and_then(|s| pos.checked_add(s)) {
            Some(p) if p < len => p,
            _ => return,
        };
        f(pos);
        pos += 1;
    }
}

/// One random patch per slide, then `E ~ U{0, P - S}` further distinct
/// patches anywhere in the genome.
pub fn random_covering_genome<R: Rng + ?Sized>(layout: &GenomeLayout, rng: &mut R) -> Genome {
    let total = layout.total_patches();
    let mut genome = Genome::zeros(total);
    for segment in layout.segments() {
        genome.set(segment.offset + rng.random_range(0..segment.len), true);
    }
    let free = total - layout.slide_count();
    let extra = rng.random_range(0..=free);
    if extra > 0 {
        let unset: Vec<usize> = (0..total).filter(|&i| !genome.get(i)).collect();
        for i in index::sample(rng, free, extra) {
            genome.set(unset[i], true);
        }
    }
    genome
}

pub fn initialize_population<R: Rng + ?Sized>(
    layout: &GenomeLayout,
    config: &EvolutionConfig,
    rng: &mut R,
) -> Vec<Individual> {
    (0..config.population_size)
        .map(|_| {
            let genome = random_covering_genome(layout, rng);
            debug_assert!(genome.is_coverage_valid(layout));
            Individual::new(genome)
        })
        .collect()
}

fn repair_from_parents<R: Rng + ?Sized>(
    child: &mut Genome,
    parents: [&Genome; 2],
    layout: &GenomeLayout,
    rng: &mut R,
) {
    for segment in layout.segments() {
        if child.count_ones_in(segment.range()) == 0 {
            let donor = parents[usize::from(rng.random_bool(0.5))];
            child.copy_segment_from(donor, segment);
        }
    }
}

/// Uniform crossover: each position swaps parental bits with probability
/// `swap_p`. Any child segment left empty is replaced wholesale by the same
/// segment from a randomly chosen parent.
pub fn safe_uniform_crossover<R: Rng + ?Sized>(
    parent_a: &Genome,
    parent_b: &Genome,
    layout: &GenomeLayout,
    swap_p: f64,
    rng: &mut R,
) -> (Genome, Genome) {
    let (mut child_a, mut child_b) = uniform_exchange(parent_a, parent_b, swap_p, rng);
    repair_from_parents(&mut child_a, [parent_a, parent_b], layout, rng);
    repair_from_parents(&mut child_b, [parent_a, parent_b], layout, rng);
    debug_assert!(child_a.is_coverage_valid(layout));
    debug_assert!(child_b.is_coverage_valid(layout));
    (child_a, child_b)
}

/// The gene exchange step of [`safe_uniform_crossover`] without repair.
pub fn uniform_exchange<R: Rng + ?Sized>(
    parent_a: &Genome,
    parent_b: &Genome,
    swap_p: f64,
    rng: &mut R,
) -> (Genome, Genome) {
    assert_eq!(parent_a.len(), parent_b.len(), "parents differ in length");
    let mut child_a = parent_a.clone();
    let mut child_b = parent_b.clone();
    for_each_bernoulli(parent_a.len(), swap_p, rng, |i| {
        let (x, y) = (parent_a.get(i), parent_b.get(i));
        if x != y {
            child_a.set(i, y);
            child_b.set(i, x);
        }
    });
    (child_a, child_b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MutationStats {
    /// Bits flipped before repair.
    pub flips: usize,
    /// Segments that needed a repair bit.
    pub repairs: usize,
}

/// Independent bit flips at rate `flip_p`; each emptied segment then gets
/// one uniformly random bit set.
pub fn safe_bitflip_mutation<R: Rng + ?Sized>(
    genome: &mut Genome,
    layout: &GenomeLayout,
    flip_p: f64,
    rng: &mut R,
) -> MutationStats {
    let mut stats = MutationStats::default();
    for_each_bernoulli(genome.len(), flip_p, rng, |i| {
        genome.flip(i);
        stats.flips += 1;
    });
    for segment in layout.segments() {
        if genome.count_ones_in(segment.range()) == 0 {
            genome.set(segment.offset + rng.random_range(0..segment.len), true);
            stats.repairs += 1;
        }
    }
    debug_assert!(genome.is_coverage_valid(layout));
    stats
}
