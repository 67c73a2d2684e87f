//! Generational genetic algorithm over a [`HyperparameterSpace`].
//!
//! Each generation evaluates the individuals it has not seen yet, copies the
//! top `elitism` individuals unchanged, and fills the remaining slots with
//! children: two tournament winners, uniform crossover (or a clone of the
//! first parent), then per-gene mutation. Individuals are ranked by fitness
//! (descending) and then by variant id (ascending), so ties are deterministic.
//!
//! All randomness for a slot comes from `(seed, generation, slot)`; fitness
//! evaluation may run in parallel without changing the result.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Display;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policyspace::{Gene, HyperparameterSpace, ParamKind, Variant};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaError {
    #[error("invalid GA config: {0}")]
    Config(String),
    #[error("every individual of the initial population failed to evaluate ({population} individuals; first error: {first_error})")]
    AllFailed { population: usize, first_error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaConfig {
    #[serde(default = "defaults::population_size")]
    pub population_size: usize,
    #[serde(default = "defaults::generations")]
    pub generations: usize,
    #[serde(default = "defaults::tournament_size")]
    pub tournament_size: usize,
    #[serde(default = "defaults::crossover_prob")]
    pub crossover_prob: f64,
    /// Per-gene mutation probability; `1/n` for an `n`-gene space when unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mutation_prob: Option<f64>,
    /// Gaussian sigma as a fraction of each numeric range.
    #[serde(default = "defaults::mutation_sigma_fraction")]
    pub mutation_sigma_fraction: f64,
    #[serde(default = "defaults::elitism")]
    pub elitism: usize,
    #[serde(default)]
    pub seed: u64,
}

mod defaults {
    pub fn population_size() -> usize {
        32
    }
    pub fn generations() -> usize {
        20
    }
    pub fn tournament_size() -> usize {
        3
    }
    pub fn crossover_prob() -> f64 {
        0.9
    }
    pub fn mutation_sigma_fraction() -> f64 {
        0.1
    }
    pub fn elitism() -> usize {
        1
    }
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: defaults::population_size(),
            generations: defaults::generations(),
            tournament_size: defaults::tournament_size(),
            crossover_prob: defaults::crossover_prob(),
            mutation_prob: None,
            mutation_sigma_fraction: defaults::mutation_sigma_fraction(),
            elitism: defaults::elitism(),
            seed: 0,
        }
    }
}

impl GaConfig {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), GaError> {
        let fail = |msg: String| Err(GaError::Config(msg));
        if self.population_size < 2 {
            return fail(format!("population_size must be >= 2, got {}", self.population_size));
        }
        if self.generations < 1 {
            return fail("generations must be >= 1".into());
        }
        if self.tournament_size < 1 || self.tournament_size > self.population_size {
            return fail(format!(
                "tournament_size must lie in [1, population_size], got {}",
                self.tournament_size
            ));
        }
        if self.elitism >= self.population_size {
            return fail(format!(
                "elitism ({}) must be smaller than population_size ({})",
                self.elitism, self.population_size
            ));
        }
        if !(0.0..=1.0).contains(&self.crossover_prob) {
            return fail(format!(
                "crossover_prob must lie in [0, 1], got {}",
                self.crossover_prob
            ));
        }
        if let Some(p) = self.mutation_prob {
            if !(0.0..=1.0).contains(&p) {
                return fail(format!("mutation_prob must lie in [0, 1], got {p}"));
            }
        }
        if !(self.mutation_sigma_fraction.is_finite() && self.mutation_sigma_fraction > 0.0) {
            return fail(format!(
                "mutation_sigma_fraction must be > 0, got {}",
                self.mutation_sigma_fraction
            ));
        }
        Ok(())
    }

    pub fn mutation_prob_for(&self, genes: usize) -> f64 {
        self.mutation_prob.unwrap_or(1.0 / genes.max(1) as f64)
    }
}

/// Fitness summary of one generation. `None` when no individual had a finite fitness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationStats {
    pub best: Option<f64>,
    pub mean: Option<f64>,
    /// Individuals whose fitness evaluation failed.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best_variant: Variant,
    pub best_fitness: f64,
    pub history: Vec<GenerationStats>,
    pub evaluations: usize,
}

/// Draws every gene uniformly from its range or value list.
pub fn random_variant<R: Rng + ?Sized>(space: &HyperparameterSpace, rng: &mut R) -> Variant {
    let genes = space
        .specs()
        .iter()
        .map(|spec| match &spec.kind {
            ParamKind::Continuous { lo, hi } => Gene::Real(if lo < hi { rng.random_range(*lo..=*hi) } else { *lo }),
            ParamKind::Integer { lo, hi } => Gene::Int(rng.random_range(*lo..=*hi)),
            ParamKind::Categorical { values } => Gene::Choice(values[rng.random_range(0..values.len())].clone()),
        })
        .collect();
    Variant::new(genes)
}

#[derive(Clone)]
struct Individual {
    variant: Variant,
    fitness: f64,
}

fn rank(a: &Individual, b: &Individual) -> Ordering {
    b.fitness
        .total_cmp(&a.fitness)
        .then_with(|| a.variant.id.cmp(&b.variant.id))
}

/// Runs the GA and returns the best individual ever evaluated.
///
/// A fitness error or a NaN scores the individual at negative infinity.
pub fn evolve<F, E>(space: &HyperparameterSpace, fitness: F, config: &GaConfig) -> Result<SearchResult, GaError>
where
    F: Fn(&Variant) -> Result<f64, E> + Sync,
    E: Display + Send,
{
    config.validate()?;
    let n_genes = space.len();
    let mutation_prob = config.mutation_prob_for(n_genes);

    let mut variants: Vec<Variant> = (0..config.population_size)
        .map(|slot| random_variant(space, &mut rng::rng_from(config.seed, &[0, slot as u64])))
        .collect();

    let mut cache: HashMap<String, f64> = HashMap::new();
    let mut evaluations = 0usize;
    let mut history = Vec::with_capacity(config.generations);
    let mut best: Option<Individual> = None;

    for generation in 0..config.generations {
        // evaluate unseen variants, first occurrence order
        let mut pending: Vec<&Variant> = Vec::new();
        for v in &variants {
            if !cache.contains_key(&v.id) && !pending.iter().any(|p| p.id == v.id) {
                pending.push(v);
            }
        }
        let scored: Vec<(String, Result<f64, String>)> = pending
            .par_iter()
            .map(|v| (v.id.clone(), fitness(v).map_err(|e| e.to_string())))
            .collect();
        evaluations += scored.len();
        let mut first_error = None;
        for (id, outcome) in scored {
            let value = match outcome {
                Ok(f) if !f.is_nan() => f,
                Ok(_) => f64::NEG_INFINITY,
                Err(e) => {
                    first_error.get_or_insert(e);
                    f64::NEG_INFINITY
                }
            };
            cache.insert(id, value);
        }

        let mut population: Vec<Individual> = variants
            .iter()
            .map(|v| Individual {
                variant: v.clone(),
                fitness: cache[&v.id],
            })
            .collect();
        population.sort_by(rank);

        let finite: Vec<f64> = population.iter().map(|i| i.fitness).filter(|f| f.is_finite()).collect();
        if generation == 0 && finite.is_empty() {
            return Err(GaError::AllFailed {
                population: population.len(),
                first_error: first_error.unwrap_or_else(|| "fitness was -inf".into()),
            });
        }
        history.push(GenerationStats {
            best: population[0].fitness.is_finite().then_some(population[0].fitness),
            mean: (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64),
            failed: population.len() - finite.len(),
        });
        if best.as_ref().is_none_or(|b| rank(&population[0], b) == Ordering::Less) {
            best = Some(population[0].clone());
        }

        if generation + 1 == config.generations {
            break;
        }

        let mut next: Vec<Variant> = population[..config.elitism].iter().map(|i| i.variant.clone()).collect();
        for slot in config.elitism..config.population_size {
            let mut rng = rng::rng_from(config.seed, &[generation as u64 + 1, slot as u64]);
            let p1 = tournament(&population, config.tournament_size, &mut rng);
            let p2 = tournament(&population, config.tournament_size, &mut rng);
            let mut genes = if rng.random_bool(config.crossover_prob) {
                p1.assignments
                    .iter()
                    .zip(&p2.assignments)
                    .map(|(a, b)| if rng.random_bool(0.5) { a.clone() } else { b.clone() })
                    .collect()
            } else {
                p1.assignments.clone()
            };
            mutate(
                space,
                &mut genes,
                mutation_prob,
                config.mutation_sigma_fraction,
                &mut rng,
            );
            next.push(Variant::new(genes));
        }
        variants = next;
    }

    let best = best.expect("at least one generation ran");
    Ok(SearchResult {
        best_variant: best.variant,
        best_fitness: best.fitness,
        history,
        evaluations,
    })
}

fn tournament<'a, R: Rng>(population: &'a [Individual], size: usize, rng: &mut R) -> &'a Variant {
    let mut winner = &population[rng.random_range(0..population.len())];
    for _ in 1..size {
        let challenger = &population[rng.random_range(0..population.len())];
        if rank(challenger, winner) == Ordering::Less {
            winner = challenger;
        }
    }
    &winner.variant
}

fn mutate<R: Rng>(space: &HyperparameterSpace, genes: &mut [Gene], prob: f64, sigma_fraction: f64, rng: &mut R) {
    for (gene, spec) in genes.iter_mut().zip(space.specs()) {
        if !rng.random_bool(prob) {
            continue;
        }
        match (&spec.kind, gene) {
            (ParamKind::Continuous { lo, hi }, Gene::Real(v)) => {
                let z: f64 = rng.sample(StandardNormal);
                *v = (*v + z * sigma_fraction * (hi - lo)).clamp(*lo, *hi);
            }
            (ParamKind::Integer { lo, hi }, Gene::Int(v)) => {
                let z: f64 = rng.sample(StandardNormal);
                let moved = (*v as f64 + z * sigma_fraction * (*hi - *lo) as f64).round();
                *v = (moved.clamp(*lo as f64, *hi as f64) as i64).clamp(*lo, *hi);
            }
            (ParamKind::Categorical { values }, Gene::Choice(v)) => {
                *v = values[rng.random_range(0..values.len())].clone();
            }
            _ => unreachable!("genes are generated from the space"),
        }
    }
}
