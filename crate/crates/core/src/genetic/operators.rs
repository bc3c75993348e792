//! Permutation-preserving variation operators and elitist breeding.

use std::cmp::Ordering;

use rand::Rng;

use super::{FitnessMode, GaConfig};
use crate::domain::{validate_permutation, Permutation};
use crate::error::{Error, Result};

/// First `s` elements of `v` that do not occur in `exclude`.
fn first_absent(v: &[usize], exclude: &[usize], s: usize) -> Vec<usize> {
    v.iter()
        .copied()
        .filter(|x| !exclude.contains(x))
        .take(s)
        .collect()
}

/// Last `s` elements of `v` that do not occur in `exclude`, in `v` order.
fn last_absent(v: &[usize], exclude: &[usize], s: usize) -> Vec<usize> {
    let mut out: Vec<usize> = v
        .iter()
        .rev()
        .copied()
        .filter(|x| !exclude.contains(x))
        .take(s)
        .collect();
    out.reverse();
    out
}

/// Single-point crossover at `j` (1-based, `1 <= j <= k`) producing four
/// children that keep every index unique:
///
/// ```text
/// d1 = c1[..j] ++ Last_{k-j}(c2, c1[..j])
/// d2 = c2[..j] ++ Last_{k-j}(c1, c2[..j])
/// d3 = First_j(c2, c1[j..]) ++ c1[j..]
/// d4 = First_j(c1, c2[j..]) ++ c2[j..]
/// ```
pub fn crossover(c1: &Permutation, c2: &Permutation, j: usize) -> Result<[Permutation; 4]> {
    let k = c1.len();
    if c2.len() != k {
        return Err(Error::Contract(format!(
            "crossover parents differ in length: {} vs {}",
            k,
            c2.len()
        )));
    }
    if j < 1 || j > k {
        return Err(Error::Contract(format!("crossover point {j} outside [1, {k}]")));
    }
    let (a, b) = (c1.as_slice(), c2.as_slice());
    let head = |p: &[usize], q: &[usize]| -> Result<Vec<usize>> {
        let mut d = p[..j].to_vec();
        let tail = last_absent(q, &p[..j], k - j);
        if tail.len() != k - j {
            return Err(Error::Contract("not enough distinct indices for crossover".into()));
        }
        d.extend(tail);
        Ok(d)
    };
    let tail = |p: &[usize], q: &[usize]| -> Result<Vec<usize>> {
        let mut d = first_absent(q, &p[j..], j);
        if d.len() != j {
            return Err(Error::Contract("not enough distinct indices for crossover".into()));
        }
        d.extend_from_slice(&p[j..]);
        Ok(d)
    };
    let children = [head(a, b)?, head(b, a)?, tail(a, b)?, tail(b, a)?];
    for d in &children {
        let n = d.iter().max().map_or(0, |m| m + 1);
        validate_permutation(d, n)
            .map_err(|v| Error::Contract(format!("crossover produced invalid child: {v}")))?;
    }
    Ok(children.map(Permutation::from_trusted))
}

/// Mutates each position with probability `p_m`. A mutated position draws a
/// different index uniformly from `[0, n_train)`; if that index already sits
/// elsewhere in the permutation the two positions swap.
pub fn mutate<R: Rng + ?Sized>(c: &Permutation, p_m: f64, n_train: usize, rng: &mut R) -> Permutation {
    let mut v = c.as_slice().to_vec();
    if n_train < 2 || p_m <= 0.0 {
        return c.clone();
    }
    for i in 0..v.len() {
        if !rng.gen_bool(p_m.min(1.0)) {
            continue;
        }
        let mut new = rng.gen_range(0..n_train - 1);
        if new >= v[i] {
            new += 1;
        }
        match v.iter().position(|&x| x == new) {
            Some(j) => v.swap(i, j),
            None => v[i] = new,
        }
    }
    Permutation::from_trusted(v)
}

/// Uniform random `k`-permutation of `[0, n_train)` by partial Fisher-Yates.
pub fn random_permutation<R: Rng + ?Sized>(n_train: usize, k: usize, rng: &mut R) -> Permutation {
    assert!(k <= n_train, "prompt size {k} exceeds {n_train} training examples");
    let mut pool: Vec<usize> = (0..n_train).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n_train);
        pool.swap(i, j);
    }
    pool.truncate(k);
    Permutation::from_trusted(pool)
}

/// Indices of `fitness` ordered fittest first; ties keep population order.
pub fn rank_by_fitness(fitness: &[f64], mode: FitnessMode) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| mode.compare(fitness[a], fitness[b]));
    order
}

/// Next generation: the top `floor(elite_ratio * N_P)` individuals unchanged,
/// the rest bred from uniformly drawn parent pairs within the top
/// `selection_size`, crossing over at a uniform `j` and mutating each child.
/// Children are taken in `d1..d4` order until the population is full.
pub fn select_and_breed<R: Rng + ?Sized>(
    population: &[Permutation],
    fitness: &[f64],
    config: &GaConfig,
    n_train: usize,
    rng: &mut R,
) -> Result<Vec<Permutation>> {
    if population.len() != fitness.len() {
        return Err(Error::Contract(format!(
            "{} individuals but {} fitness values",
            population.len(),
            fitness.len()
        )));
    }
    if population.is_empty() {
        return Err(Error::Contract("empty population".into()));
    }
    let size = config.population;
    let k = config.prompt_size;
    let order = rank_by_fitness(fitness, config.fitness_mode);

    let n_elite = config.elite_count().min(size).min(order.len());
    let mut next: Vec<Permutation> = order[..n_elite]
        .iter()
        .map(|&i| population[i].clone())
        .collect();

    let pool = &order[..config.selection_size.min(order.len()).max(1)];
    while next.len() < size {
        let a = rng.gen_range(0..pool.len());
        let b = if pool.len() > 1 {
            let b = rng.gen_range(0..pool.len() - 1);
            if b >= a {
                b + 1
            } else {
                b
            }
        } else {
            a
        };
        let j = rng.gen_range(1..=k);
        let children = crossover(&population[pool[a]], &population[pool[b]], j)?;
        for child in children {
            if next.len() == size {
                break;
            }
            next.push(mutate(&child, config.mutation_prob, n_train, rng));
        }
    }
    Ok(next)
}

impl FitnessMode {
    /// `Less` when `a` is fitter than `b`.
    pub fn compare(self, a: f64, b: f64) -> Ordering {
        let ord = a.partial_cmp(&b).unwrap_or(Ordering::Equal);
        match self {
            FitnessMode::Inverted => ord.reverse(),
            _ => ord,
        }
    }
}
