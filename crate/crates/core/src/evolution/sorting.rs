//! Pareto ranking, crowding distance and the rank/crowding based selection
//! steps.

use std::cmp::Ordering;

use rand::Rng;

use super::Individual;
use crate::fitness::FitnessPair;

/// `a` dominates `b` when it is no worse on both objectives and differs on
/// at least one (both minimized).
pub fn dominates(a: &FitnessPair, b: &FitnessPair) -> bool {
    a.patch_fraction <= b.patch_fraction && a.error <= b.error && a != b
}

/// Partitions indices into successive non-dominated fronts.
pub fn fast_non_dominated_sort(fitness: &[FitnessPair]) -> Vec<Vec<usize>> {
    let n = fitness.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    let mut current = Vec::new();
    for p in 0..n {
        for q in (p + 1)..n {
            if dominates(&fitness[p], &fitness[q]) {
                dominated_by[p].push(q);
                domination_count[q] += 1;
            } else if dominates(&fitness[q], &fitness[p]) {
                dominated_by[q].push(p);
                domination_count[p] += 1;
            }
        }
    }
    for (p, &count) in domination_count.iter().enumerate() {
        if count == 0 {
            current.push(p);
        }
    }
    let mut fronts = Vec::new();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &p in &current {
            for &q in &dominated_by[p] {
                domination_count[q] -= 1;
                if domination_count[q] == 0 {
                    next.push(q);
                }
            }
        }
        next.sort_unstable();
        fronts.push(std::mem::replace(&mut current, next));
    }
    fronts
}

/// Crowding distance of each member of a single front.
///
/// Per objective the two sorted-order extremes get infinity and interior
/// points add the normalized gap between their neighbors. An objective with
/// zero range adds nothing. Fronts of one or two points are all infinite.
pub fn crowding_distance(front: &[FitnessPair]) -> Vec<f64> {
    let n = front.len();
    if n <= 2 {
        return vec![f64::INFINITY; n];
    }
    let mut distance = vec![0.0f64; n];
    for objective in 0..2 {
        let value = |i: usize| front[i].as_array()[objective];
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| value(a).total_cmp(&value(b)));
        let (lo, hi) = (value(order[0]), value(order[n - 1]));
        distance[order[0]] = f64::INFINITY;
        distance[order[n - 1]] = f64::INFINITY;
        let range = hi - lo;
        if range <= 0.0 {
            continue;
        }
        for w in order.windows(3) {
            distance[w[1]] += (value(w[2]) - value(w[0])) / range;
        }
    }
    distance
}

fn fitness_of(population: &[Individual]) -> Vec<FitnessPair> {
    population
        .iter()
        .map(|ind| {
            ind.fitness
                .expect("individual must be evaluated before sorting")
        })
        .collect()
}

/// Sorts `population`, stores rank and crowding on every member and returns
/// the fronts.
pub fn rank_population(population: &mut [Individual]) -> Vec<Vec<usize>> {
    let fitness = fitness_of(population);
    let fronts = fast_non_dominated_sort(&fitness);
    for (rank, front) in fronts.iter().enumerate() {
        let pairs: Vec<FitnessPair> = front.iter().map(|&i| fitness[i]).collect();
        for (&i, d) in front.iter().zip(crowding_distance(&pairs)) {
            population[i].rank = Some(rank);
            population[i].crowding = Some(d);
        }
    }
    fronts
}

/// Lower rank first, then larger crowding distance.
pub fn crowded_compare(a: &Individual, b: &Individual) -> Ordering {
    let rank = |i: &Individual| i.rank.expect("individual must be ranked");
    let crowd = |i: &Individual| i.crowding.expect("individual must be ranked");
    rank(a)
        .cmp(&rank(b))
        .then_with(|| crowd(b).total_cmp(&crowd(a)))
}

/// Binary tournament between two indices; exact ties are a coin flip.
pub fn tournament<R: Rng + ?Sized>(
    population: &[Individual],
    a: usize,
    b: usize,
    rng: &mut R,
) -> usize {
    match crowded_compare(&population[a], &population[b]) {
        Ordering::Less => a,
        Ordering::Greater => b,
        Ordering::Equal => {
            if rng.random_bool(0.5) {
                a
            } else {
                b
            }
        }
    }
}

/// Mating pool of `population.len()` indices by binary tournament.
pub fn select_parents<R: Rng + ?Sized>(population: &[Individual], rng: &mut R) -> Vec<usize> {
    let n = population.len();
    (0..n)
        .map(|_| {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            tournament(population, a, b, rng)
        })
        .collect()
}

/// Indices of the survivors: whole fronts in rank order, with the
/// overflowing front truncated by descending crowding distance (ties to the
/// lower index).
pub fn survivor_indices(fitness: &[FitnessPair], population_size: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(population_size);
    for front in fast_non_dominated_sort(fitness) {
        if chosen.len() + front.len() <= population_size {
            chosen.extend_from_slice(&front);
            if chosen.len() == population_size {
                break;
            }
            continue;
        }
        let pairs: Vec<FitnessPair> = front.iter().map(|&i| fitness[i]).collect();
        let distance = crowding_distance(&pairs);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| {
            distance[b]
                .total_cmp(&distance[a])
                .then(front[a].cmp(&front[b]))
        });
        let room = population_size - chosen.len();
        chosen.extend(order[..room].iter().map(|&j| front[j]));
        break;
    }
    chosen
}

/// Elitist survivor selection over the merged parent and offspring pool.
/// Survivors keep the rank and crowding computed on the merged pool.
pub fn select_survivors(mut combined: Vec<Individual>, population_size: usize) -> Vec<Individual> {
    rank_population(&mut combined);
    let keep = survivor_indices(&fitness_of(&combined), population_size);
    let mut slots: Vec<Option<Individual>> = combined.into_iter().map(Some).collect();
    keep.into_iter()
        .map(|i| slots[i].take().expect("survivor chosen once"))
        .collect()
}
