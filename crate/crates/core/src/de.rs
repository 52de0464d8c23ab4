//! Differential evolution over ellipse-mask individuals.
//!
//! Each generation builds one trial per target with the rand/1 rule
//! `a + F(b - c)` gene-wise under Bernoulli(CR) crossover, clips it into the
//! valid genome space, scores all trials, and keeps a trial only if its
//! fitness strictly beats its target's.
//!
//! Donors are drawn from the population as it stood at the start of the
//! generation, so every trial of a generation can be scored in one batch.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::genome::{self, clip_genes_k, BinaryMask, GenomeError, Individual, GENES_PER_ELLIPSE};
use crate::scorer::{score_images, Scorer, ScorerError};
use crate::tensor::ImageTensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("crossover probability {0} not in [0, 1]")]
    Crossover(f64),
    #[error("differential weight {0} must be positive")]
    Weight(f64),
    #[error("need at least one ellipse per individual")]
    Ellipses,
    #[error("need at least one generation")]
    Generations,
    #[error("population of {0} is too small (minimum 4)")]
    Population(usize),
    #[error("penalty weight {0} must be non-negative")]
    Alpha(f64),
    #[error("batch size must be at least 1")]
    BatchSize,
}

/// Optimizer settings. Defaults follow the published hyperparameters
/// (CR 0.2, F 0.8, K 10, 200 generations); population size and α are
/// not published and default to 200 and 2.0.
#[derive(Debug, Clone, PartialEq)]
pub struct DeConfig {
    pub crossover: f64,
    pub weight: f64,
    pub ellipses: usize,
    pub max_iter: usize,
    pub population: usize,
    pub alpha: f64,
    pub seed: u64,
    pub batch_size: usize,
}

impl Default for DeConfig {
    fn default() -> Self {
        DeConfig {
            crossover: 0.2,
            weight: 0.8,
            ellipses: 10,
            max_iter: 200,
            population: 200,
            alpha: 2.0,
            seed: 0,
            batch_size: 64,
        }
    }
}

impl DeConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(0.0..=1.0).contains(&self.crossover) {
            return Err(ConfigError::Crossover(self.crossover));
        }
        if !(self.weight > 0.0 && self.weight.is_finite()) {
            return Err(ConfigError::Weight(self.weight));
        }
        if self.ellipses == 0 {
            return Err(ConfigError::Ellipses);
        }
        if self.max_iter == 0 {
            return Err(ConfigError::Generations);
        }
        if self.population < 4 {
            return Err(ConfigError::Population(self.population));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        if self.batch_size == 0 {
            return Err(ConfigError::BatchSize);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub individuals: Vec<Individual>,
    pub generation: usize,
}

impl Population {
    /// Cached fitness of every member; panics if one is unevaluated.
    pub fn fitnesses(&self) -> Vec<f64> {
        self.individuals
            .iter()
            .map(|i| i.fitness().expect("population member without fitness"))
            .collect()
    }

    pub fn best(&self) -> Option<&Individual> {
        self.individuals
            .iter()
            .filter(|i| i.fitness().is_some())
            .max_by(|a, b| a.fitness().unwrap().total_cmp(&b.fitness().unwrap()))
    }

    pub fn stats(&self) -> GenerationStats {
        GenerationStats::of(&self.fitnesses())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub mean: f64,
    pub max: f64,
}

impl GenerationStats {
    fn of(f: &[f64]) -> Self {
        GenerationStats {
            mean: f.iter().sum::<f64>() / f.len() as f64,
            max: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// What a run did. `generations` has one entry per completed generation;
/// `initial` describes the population before the first one.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub initial: Option<GenerationStats>,
    pub generations: Vec<GenerationStats>,
    /// Images scored.
    pub evaluations: u64,
    /// Scorer invocations (batches).
    pub scorer_calls: u64,
    pub elapsed: Duration,
}

#[derive(Debug, Error)]
pub enum EvolveError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Genome(#[from] GenomeError),
    #[error("{source} (after {} generations)", trace.generations.len())]
    Scorer {
        source: ScorerError,
        trace: Box<RunTrace>,
    },
}

/// `f(X ⊙ M) - α · |M| / (H·W)` for a single individual.
pub fn fitness<S: Scorer + ?Sized>(
    ind: &Individual,
    image: &ImageTensor,
    scorer: &S,
    class_index: usize,
    alpha: f64,
) -> Result<f64, ScorerError> {
    let mask = genome::rasterize(ind, image.height(), image.width());
    mask_fitness(&mask, image, scorer, class_index, alpha)
}

/// Fitness of an arbitrary binary mask.
pub fn mask_fitness<S: Scorer + ?Sized>(
    mask: &BinaryMask,
    image: &ImageTensor,
    scorer: &S,
    class_index: usize,
    alpha: f64,
) -> Result<f64, ScorerError> {
    let logit = score_images(scorer, &[image.masked(mask)], class_index)?[0];
    Ok(logit - alpha * genome::mask_fraction(mask))
}

/// Batched fitness of many individuals, in input order.
///
/// Masked images are built per batch, in parallel; batches run
/// concurrently only when the scorer allows it.
pub fn evaluate_fitness<S: Scorer + ?Sized>(
    individuals: &[Individual],
    image: &ImageTensor,
    scorer: &S,
    class_index: usize,
    alpha: f64,
    batch_size: usize,
    trace: &mut RunTrace,
) -> Result<Vec<f64>, ScorerError> {
    let (h, w) = (image.height(), image.width());
    let run_batch = |chunk: &[Individual]| -> Result<Vec<f64>, ScorerError> {
        let (images, penalties): (Vec<_>, Vec<_>) = chunk
            .par_iter()
            .map(|ind| {
                let mask = genome::rasterize(ind, h, w);
                (image.masked(&mask), alpha * genome::mask_fraction(&mask))
            })
            .unzip();
        let logits = score_images(scorer, &images, class_index)?;
        Ok(logits
            .into_iter()
            .zip(penalties)
            .map(|(l, p)| l - p)
            .collect())
    };

    let chunks: Vec<&[Individual]> = individuals.chunks(batch_size.max(1)).collect();
    let results: Vec<Result<Vec<f64>, ScorerError>> = if scorer.concurrent() {
        chunks.par_iter().map(|c| run_batch(c)).collect()
    } else {
        let mut out = Vec::with_capacity(chunks.len());
        for c in &chunks {
            let r = run_batch(c);
            let failed = r.is_err();
            out.push(r);
            if failed {
                break;
            }
        }
        out
    };

    let mut fitness = Vec::with_capacity(individuals.len());
    for (chunk, r) in chunks.iter().zip(results) {
        trace.scorer_calls += 1;
        fitness.extend(r?);
        trace.evaluations += chunk.len() as u64;
    }
    Ok(fitness)
}

/// Trial vector for target `x` from donors `a`, `b`, `c`, unclipped.
///
/// One uniform draw per gene, in ellipse-major then field-minor order.
pub fn mutate_crossover<R: Rng + ?Sized>(
    x: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    cfg: &DeConfig,
    rng: &mut R,
) -> Vec<f64> {
    debug_assert!(a.len() == x.len() && b.len() == x.len() && c.len() == x.len());
    (0..x.len())
        .map(|i| {
            if rng.gen::<f64>() < cfg.crossover {
                a[i] + cfg.weight * (b[i] - c[i])
            } else {
                x[i]
            }
        })
        .collect()
}

/// Three distinct indices in `0..n`, none equal to `target`.
fn pick_donors<R: Rng + ?Sized>(rng: &mut R, n: usize, target: usize) -> [usize; 3] {
    let mut out = [usize::MAX; 3];
    let mut k = 0;
    while k < 3 {
        let d = rng.gen_range(0..n);
        if d != target && !out[..k].contains(&d) {
            out[k] = d;
            k += 1;
        }
    }
    out
}

/// Uniform random genes over the image, clipped into the valid space.
pub fn random_individual<R: Rng + ?Sized>(
    rng: &mut R,
    k: usize,
    height: usize,
    width: usize,
) -> Result<Individual, GenomeError> {
    let max_x = (width - 1) as f64;
    let max_y = (height - 1) as f64;
    let mut raw = Vec::with_capacity(k * GENES_PER_ELLIPSE);
    for _ in 0..k {
        raw.push(rng.gen_range(0.0..=max_x));
        raw.push(rng.gen_range(0.0..=max_y));
        raw.push(rng.gen_range(0.0..=max_x));
        raw.push(rng.gen_range(0.0..=max_y));
        raw.push(rng.gen_range(0.0..PI));
    }
    clip_genes_k(&raw, k, height, width)
}

/// Run the optimizer for `cfg.max_iter` generations.
pub fn evolve<S: Scorer + ?Sized>(
    image: &ImageTensor,
    scorer: &S,
    class_index: usize,
    cfg: &DeConfig,
) -> Result<(Population, RunTrace), EvolveError> {
    evolve_observed(image, scorer, class_index, cfg, |_, _| {})
}

/// [`evolve`] with a callback after every generation.
pub fn evolve_observed<S, F>(
    image: &ImageTensor,
    scorer: &S,
    class_index: usize,
    cfg: &DeConfig,
    mut on_generation: F,
) -> Result<(Population, RunTrace), EvolveError>
where
    S: Scorer + ?Sized,
    F: FnMut(usize, &GenerationStats),
{
    cfg.validate()?;
    let start = Instant::now();
    let (h, w) = (image.height(), image.width());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = RunTrace::default();

    let fail = |source: ScorerError, mut trace: RunTrace| {
        trace.elapsed = start.elapsed();
        EvolveError::Scorer {
            source,
            trace: Box::new(trace),
        }
    };

    let mut individuals = (0..cfg.population)
        .map(|_| random_individual(&mut rng, cfg.ellipses, h, w))
        .collect::<Result<Vec<_>, _>>()?;
    match evaluate_fitness(
        &individuals,
        image,
        scorer,
        class_index,
        cfg.alpha,
        cfg.batch_size,
        &mut trace,
    ) {
        Ok(fit) => {
            for (ind, f) in individuals.iter_mut().zip(fit) {
                ind.set_fitness(f);
            }
        }
        Err(e) => return Err(fail(e, trace)),
    }
    let mut pop = Population {
        individuals,
        generation: 0,
    };
    trace.initial = Some(pop.stats());

    for gen in 1..=cfg.max_iter {
        let snapshot: Vec<Vec<f64>> = pop.individuals.iter().map(Individual::to_vec).collect();
        let n = snapshot.len();
        let mut trials = Vec::with_capacity(n);
        for (i, x) in snapshot.iter().enumerate() {
            let [a, b, c] = pick_donors(&mut rng, n, i);
            let raw = mutate_crossover(x, &snapshot[a], &snapshot[b], &snapshot[c], cfg, &mut rng);
            trials.push(clip_genes_k(&raw, cfg.ellipses, h, w)?);
        }
        let fit = match evaluate_fitness(
            &trials,
            image,
            scorer,
            class_index,
            cfg.alpha,
            cfg.batch_size,
            &mut trace,
        ) {
            Ok(f) => f,
            Err(e) => return Err(fail(e, trace)),
        };
        for ((target, mut trial), f) in pop.individuals.iter_mut().zip(trials).zip(fit) {
            if f > target.fitness().expect("evaluated") {
                trial.set_fitness(f);
                *target = trial;
            }
        }
        pop.generation = gen;
        let stats = pop.stats();
        trace.generations.push(stats);
        on_generation(gen, &stats);
    }
    trace.elapsed = start.elapsed();
    Ok((pop, trace))
}
