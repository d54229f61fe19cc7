//! Genetic algorithm over latent vectors.
//!
//! One generation: evaluate, record statistics, set the elite aside, fill
//! the breeding pool by tournaments, recombine consecutive pairs, add fresh
//! immigrants, mutate everything but the elite, then append the elite
//! unchanged. Every random decision is drawn from its own named stream, so
//! fitness evaluation may run in parallel without affecting results.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::phenotype::LatentVector;
use crate::rng::{stream, Stream, StreamRng};

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionConfig {
    pub pop_size: usize,
    pub generations: usize,
    pub elite: usize,
    /// Fresh random individuals injected each generation.
    pub immigrants: usize,
    pub tournament_size: usize,
    /// Probability that a consecutive pair in the breeding pool is recombined.
    pub crossover_prob: f64,
    /// Probability that an individual is mutated at all.
    pub mutation_prob: f64,
    /// Per-gene mutation probability once an individual is mutated.
    pub gene_mutation_prob: f64,
    pub latent_dim: usize,
    pub seed: u64,
    pub target: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            pop_size: 50,
            generations: 100,
            elite: 1,
            immigrants: 10,
            tournament_size: 3,
            crossover_prob: 0.9,
            mutation_prob: 0.2,
            gene_mutation_prob: 0.5,
            latent_dim: 16,
            seed: 0,
            target: 0,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("pop_size", self.pop_size),
            ("generations", self.generations),
            ("elite", self.elite),
            ("immigrants", self.immigrants),
            ("tournament_size", self.tournament_size),
            ("latent_dim", self.latent_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.elite + self.immigrants >= self.pop_size {
            return bad(format!(
                "elite ({}) + immigrants ({}) must be below pop_size ({})",
                self.elite, self.immigrants, self.pop_size
            ));
        }
        for (name, p) in [
            ("crossover_prob", self.crossover_prob),
            ("mutation_prob", self.mutation_prob),
            ("gene_mutation_prob", self.gene_mutation_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1], got {p}"));
            }
        }
        Ok(())
    }

    /// Tournaments run per generation to fill the breeding pool.
    pub fn pool_size(&self) -> usize {
        self.pop_size - self.elite - self.immigrants
    }

    pub fn budget(&self) -> usize {
        self.pop_size * self.generations
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GenerationStats {
    pub generation: usize,
    pub max_fitness: f64,
    pub mean_fitness: f64,
    pub best_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolutionResult {
    pub stats: Vec<GenerationStats>,
    pub best_latent: LatentVector,
    pub best_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineResult {
    pub budget: usize,
    pub best_fitness: f64,
    pub best_latent: LatentVector,
}

pub fn init_population<R: Rng + ?Sized>(cfg: &EvolutionConfig, rng: &mut R) -> Vec<LatentVector> {
    (0..cfg.pop_size)
        .map(|_| LatentVector::sample(rng, cfg.latent_dim))
        .collect()
}

/// Winner of one tournament: `size` contestants drawn uniformly with
/// replacement, highest fitness wins, lowest index on ties.
pub fn tournament_index<R: Rng + ?Sized>(fitness: &[f64], size: usize, rng: &mut R) -> usize {
    let n = fitness.len();
    let mut winner = rng.random_range(0..n);
    for _ in 1..size {
        let c = rng.random_range(0..n);
        if fitness[c] > fitness[winner] || (fitness[c] == fitness[winner] && c < winner) {
            winner = c;
        }
    }
    winner
}

pub fn tournament_select<R: Rng + ?Sized>(
    population: &[LatentVector],
    fitness: &[f64],
    count: usize,
    size: usize,
    rng: &mut R,
) -> Result<Vec<LatentVector>> {
    if population.is_empty() {
        return Err(Error::InvalidData("tournament over an empty population".into()));
    }
    if fitness.len() != population.len() {
        return Err(Error::dims("tournament fitness values", population.len(), fitness.len()));
    }
    if size == 0 {
        return Err(Error::InvalidConfig("tournament size must be positive".into()));
    }
    Ok((0..count)
        .map(|_| population[tournament_index(fitness, size, rng)].clone())
        .collect())
}

/// Per gene one fair coin decides which parent each child inherits from;
/// the two children are complementary.
pub fn uniform_crossover<R: Rng + ?Sized>(
    a: &LatentVector,
    b: &LatentVector,
    rng: &mut R,
) -> Result<(LatentVector, LatentVector)> {
    if a.len() != b.len() {
        return Err(Error::dims("crossover parent", a.len(), b.len()));
    }
    let mut ca = Vec::with_capacity(a.len());
    let mut cb = Vec::with_capacity(b.len());
    for (&x, &y) in a.iter().zip(b.iter()) {
        if rng.random_bool(0.5) {
            ca.push(x);
            cb.push(y);
        } else {
            ca.push(y);
            cb.push(x);
        }
    }
    Ok((ca.into(), cb.into()))
}

/// Adds standard-normal noise to each gene independently with probability
/// `gene_prob`.
pub fn nonuniform_mutate<R: Rng + ?Sized>(z: &LatentVector, gene_prob: f64, rng: &mut R) -> LatentVector {
    let mut out = z.clone();
    for v in out.values_mut() {
        if rng.random_bool(gene_prob) {
            *v += rng.sample::<f64, _>(StandardNormal);
        }
    }
    out
}

/// Recombines consecutive pairs of the pool in place; an odd last
/// individual is left alone.
pub fn recombine_pool<R: Rng + ?Sized>(pool: &mut [LatentVector], crossover_prob: f64, rng: &mut R) -> Result<()> {
    for pair in pool.chunks_exact_mut(2) {
        if rng.random_bool(crossover_prob) {
            let (a, b) = uniform_crossover(&pair[0], &pair[1], rng)?;
            pair[0] = a;
            pair[1] = b;
        }
    }
    Ok(())
}

/// Indices of the `count` fittest individuals, lowest index first on ties.
pub fn elite_indices(fitness: &[f64], count: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..fitness.len()).collect();
    order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
    order.truncate(count);
    order
}

/// Variation machinery with its independent random streams.
pub struct Breeder {
    cfg: EvolutionConfig,
    selection: StreamRng,
    crossover: StreamRng,
    mutation: StreamRng,
    immigrants: StreamRng,
}

impl Breeder {
    pub fn new(cfg: &EvolutionConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg: cfg.clone(),
            selection: stream(cfg.seed, Stream::Selection),
            crossover: stream(cfg.seed, Stream::Crossover),
            mutation: stream(cfg.seed, Stream::Mutation),
            immigrants: stream(cfg.seed, Stream::Immigrants),
        })
    }

    /// Selection and crossover only: the recombined breeding pool.
    pub fn breed_pool(&mut self, population: &[LatentVector], fitness: &[f64]) -> Result<Vec<LatentVector>> {
        let mut pool = tournament_select(
            population,
            fitness,
            self.cfg.pool_size(),
            self.cfg.tournament_size,
            &mut self.selection,
        )?;
        recombine_pool(&mut pool, self.cfg.crossover_prob, &mut self.crossover)?;
        Ok(pool)
    }

    pub fn next_generation(&mut self, population: &[LatentVector], fitness: &[f64]) -> Result<Vec<LatentVector>> {
        if population.len() != self.cfg.pop_size {
            return Err(Error::dims("population", self.cfg.pop_size, population.len()));
        }
        let elite: Vec<LatentVector> = elite_indices(fitness, self.cfg.elite)
            .into_iter()
            .map(|i| population[i].clone())
            .collect();
        let mut next = self.breed_pool(population, fitness)?;
        for _ in 0..self.cfg.immigrants {
            next.push(LatentVector::sample(&mut self.immigrants, self.cfg.latent_dim));
        }
        for z in next.iter_mut() {
            if self.mutation.random_bool(self.cfg.mutation_prob) {
                *z = nonuniform_mutate(z, self.cfg.gene_mutation_prob, &mut self.mutation);
            }
        }
        next.extend(elite);
        Ok(next)
    }
}

fn evaluate<F>(population: &[LatentVector], fitness_fn: &F) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let values: Vec<f64> = population.par_iter().map(|z| fitness_fn(z)).collect();
    for (index, &value) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::FitnessOutOfRange { index, value });
        }
    }
    Ok(values)
}

/// Runs the genetic algorithm and returns per-generation statistics together
/// with the fittest individual ever evaluated.
pub fn evolve<F>(cfg: &EvolutionConfig, fitness_fn: F) -> Result<EvolutionResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let mut breeder = Breeder::new(cfg)?;
    let mut population = init_population(cfg, &mut stream(cfg.seed, Stream::Init));
    let mut stats = Vec::with_capacity(cfg.generations);
    let mut best: Option<(f64, LatentVector)> = None;

    for generation in 0..cfg.generations {
        let fitness = evaluate(&population, &fitness_fn)?;
        let best_index = elite_indices(&fitness, 1)[0];
        let max_fitness = fitness[best_index];
        let mean_fitness = fitness.iter().sum::<f64>() / fitness.len() as f64;
        stats.push(GenerationStats {
            generation,
            max_fitness,
            mean_fitness: mean_fitness.min(max_fitness),
            best_index,
        });
        if best.as_ref().is_none_or(|(f, _)| max_fitness > *f) {
            best = Some((max_fitness, population[best_index].clone()));
        }
        if generation + 1 < cfg.generations {
            population = breeder.next_generation(&population, &fitness)?;
        }
    }

    let (best_fitness, best_latent) = best.expect("generations >= 1");
    Ok(EvolutionResult {
        stats,
        best_latent,
        best_fitness,
    })
}

/// Best of `pop_size × generations` independent standard-normal samples.
pub fn random_baseline<F>(cfg: &EvolutionConfig, fitness_fn: F) -> Result<BaselineResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    if cfg.budget() == 0 || cfg.latent_dim == 0 {
        return Err(Error::InvalidConfig(
            "baseline needs a positive budget and latent dimension".into(),
        ));
    }
    let budget = cfg.budget();
    let mut rng = stream(cfg.seed, Stream::Baseline);
    let samples: Vec<LatentVector> = (0..budget)
        .map(|_| LatentVector::sample(&mut rng, cfg.latent_dim))
        .collect();
    let fitness = evaluate(&samples, &fitness_fn)?;
    let best = elite_indices(&fitness, 1)[0];
    Ok(BaselineResult {
        budget,
        best_fitness: fitness[best],
        best_latent: samples[best].clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    fn lv(v: &[f64]) -> LatentVector {
        v.to_vec().into()
    }

    #[test]
    fn config_validation() {
        assert!(EvolutionConfig::default().validate().is_ok());
        let bad = [
            EvolutionConfig { elite: 20, immigrants: 30, ..Default::default() },
            EvolutionConfig { tournament_size: 0, ..Default::default() },
            EvolutionConfig { crossover_prob: 1.5, ..Default::default() },
            EvolutionConfig { mutation_prob: -0.1, ..Default::default() },
            EvolutionConfig { generations: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))), "{cfg:?}");
        }
    }

    #[test]
    fn init_population_statistics() {
        let cfg = EvolutionConfig { pop_size: 200, latent_dim: 16, ..Default::default() };
        let pop = init_population(&cfg, &mut stream(1, Stream::Init));
        assert_eq!(pop, init_population(&cfg, &mut stream(1, Stream::Init)));
        assert_eq!(pop.len(), 200);
        let genes: Vec<f64> = pop.iter().flat_map(|z| z.iter().copied()).collect();
        let n = genes.len() as f64;
        let mean = genes.iter().sum::<f64>() / n;
        let var = genes.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "variance {var}");
    }

    #[test]
    fn full_tournament_finds_global_best() {
        let fitness = [0.3, 0.1, 0.8, 0.5, 0.2];
        let mut rng = stream(2, Stream::Selection);
        // With enough draws every index appears; check winners are the global
        // best whenever it was drawn, using a large tournament.
        for _ in 0..200 {
            assert_eq!(tournament_index(&fitness, 200, &mut rng), 2);
        }
    }

    #[test]
    fn unit_tournament_is_uniform() {
        let fitness = [0.9, 0.1, 0.5, 0.3];
        let mut rng = stream(3, Stream::Selection);
        let mut counts = [0usize; 4];
        let trials = 40_000;
        for _ in 0..trials {
            counts[tournament_index(&fitness, 1, &mut rng)] += 1;
        }
        for c in counts {
            assert!((c as f64 / trials as f64 - 0.25).abs() < 0.01);
        }
    }

    #[test]
    fn binary_tournament_with_replacement() {
        // P(best wins) = 1 - P(both draws hit the worse one) = 0.75
        let fitness = [0.9, 0.1];
        let mut rng = stream(4, Stream::Selection);
        let wins = (0..10_000)
            .filter(|_| tournament_index(&fitness, 2, &mut rng) == 0)
            .count();
        let freq = wins as f64 / 10_000.0;
        assert!((freq - 0.75).abs() <= 0.02, "frequency {freq}");
    }

    #[test]
    fn tournament_ties_prefer_lowest_index() {
        let fitness = [0.5, 0.5, 0.5];
        let mut rng = stream(5, Stream::Selection);
        for _ in 0..100 {
            assert_eq!(tournament_index(&fitness, 50, &mut rng), 0);
        }
    }

    #[test]
    fn tournament_select_errors() {
        let mut rng = stream(6, Stream::Selection);
        assert!(tournament_select(&[], &[], 1, 2, &mut rng).is_err());
        assert!(tournament_select(&[lv(&[0.0])], &[0.1, 0.2], 1, 2, &mut rng).is_err());
    }

    #[test]
    fn crossover_of_identical_parents() {
        let a = lv(&[1.0, -2.0, 3.5]);
        let (x, y) = uniform_crossover(&a, &a, &mut stream(7, Stream::Crossover)).unwrap();
        assert_eq!(x, a);
        assert_eq!(y, a);
    }

    #[test]
    fn crossover_children_are_complementary() {
        let mut rng = stream(8, Stream::Crossover);
        let a = LatentVector::sample(&mut rng, 50);
        let b = LatentVector::sample(&mut rng, 50);
        let (x, y) = uniform_crossover(&a, &b, &mut rng).unwrap();
        for i in 0..50 {
            let got = [x[i], y[i]];
            assert!(got == [a[i], b[i]] || got == [b[i], a[i]]);
        }
        assert!(uniform_crossover(&a, &lv(&[0.0]), &mut rng).is_err());
    }

    #[test]
    fn crossover_gene_source_fraction() {
        let n = 10_000;
        let a = lv(&vec![1.0; n]);
        let b = lv(&vec![-1.0; n]);
        let (x, _) = uniform_crossover(&a, &b, &mut stream(9, Stream::Crossover)).unwrap();
        let from_a = x.iter().filter(|&&v| v == 1.0).count() as f64 / n as f64;
        assert!((0.45..=0.55).contains(&from_a), "fraction {from_a}");
    }

    #[test]
    fn mutation_examples() {
        let mut rng = stream(10, Stream::Mutation);
        let z = LatentVector::sample(&mut rng, 10_000);
        assert_eq!(nonuniform_mutate(&z, 0.0, &mut rng), z);

        let all = nonuniform_mutate(&z, 1.0, &mut rng);
        let mean_abs = all.iter().zip(z.iter()).map(|(a, b)| (a - b).abs()).sum::<f64>() / 10_000.0;
        let half_normal = (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean_abs - half_normal).abs() <= 0.03, "mean |delta| {mean_abs}");

        let half = nonuniform_mutate(&z, 0.5, &mut rng);
        let changed = half.iter().zip(z.iter()).filter(|(a, b)| a != b).count() as f64 / 10_000.0;
        assert!((0.47..=0.53).contains(&changed), "changed fraction {changed}");
    }

    #[test]
    fn constant_fitness_flat_statistics() {
        let cfg = EvolutionConfig { pop_size: 20, generations: 15, latent_dim: 4, seed: 3, ..Default::default() };
        let res = evolve(&cfg, |_| 0.5).unwrap();
        assert_eq!(res.stats.len(), 15);
        for s in &res.stats {
            assert_eq!(s.max_fitness, 0.5);
            assert_eq!(s.mean_fitness, 0.5);
        }
        assert_eq!(res.best_fitness, 0.5);
    }

    #[test]
    fn monotone_in_one_gene_reaches_near_one() {
        let cfg = EvolutionConfig { pop_size: 50, generations: 100, latent_dim: 16, seed: 42, ..Default::default() };
        let res = evolve(&cfg, |z| sigmoid(z[0])).unwrap();
        assert!(res.best_fitness >= 0.999, "best {}", res.best_fitness);
        assert_eq!(sigmoid(res.best_latent[0]), res.best_fitness);
    }

    #[test]
    fn out_of_range_fitness_rejected() {
        let cfg = EvolutionConfig { pop_size: 20, generations: 3, latent_dim: 2, ..Default::default() };
        assert!(matches!(evolve(&cfg, |_| 1.5), Err(Error::FitnessOutOfRange { .. })));
        assert!(matches!(evolve(&cfg, |_| f64::NAN), Err(Error::FitnessOutOfRange { .. })));
        assert!(matches!(random_baseline(&cfg, |_| -0.1), Err(Error::FitnessOutOfRange { .. })));
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = EvolutionConfig { pop_size: 30, generations: 20, latent_dim: 5, seed: 9, ..Default::default() };
        let f = |z: &[f64]| sigmoid(z[1] - z[2]);
        assert_eq!(evolve(&cfg, f).unwrap(), evolve(&cfg, f).unwrap());
    }

    #[test]
    fn generation_preserves_size_and_elite() {
        let cfg = EvolutionConfig { pop_size: 30, latent_dim: 6, seed: 1, elite: 2, ..Default::default() };
        let f = |z: &[f64]| sigmoid(z.iter().sum::<f64>());
        let mut breeder = Breeder::new(&cfg).unwrap();
        let mut pop = init_population(&cfg, &mut stream(cfg.seed, Stream::Init));
        for _ in 0..10 {
            let fit: Vec<f64> = pop.iter().map(|z| f(z)).collect();
            let elite: Vec<LatentVector> = elite_indices(&fit, 2).into_iter().map(|i| pop[i].clone()).collect();
            pop = breeder.next_generation(&pop, &fit).unwrap();
            assert_eq!(pop.len(), 30);
            assert_eq!(&pop[28..], &elite[..]);
        }
    }

    #[test]
    fn pool_genes_come_from_selected_parents() {
        let cfg = EvolutionConfig { pop_size: 40, latent_dim: 8, seed: 5, crossover_prob: 1.0, ..Default::default() };
        let pop = init_population(&cfg, &mut stream(cfg.seed, Stream::Init));
        let fit: Vec<f64> = pop.iter().map(|z| sigmoid(z[0])).collect();
        let mut breeder = Breeder::new(&cfg).unwrap();
        let pool = breeder.breed_pool(&pop, &fit).unwrap();
        assert_eq!(pool.len(), cfg.pool_size());
        for child in &pool {
            for (i, g) in child.iter().enumerate() {
                assert!(pop.iter().any(|p| p[i] == *g), "gene {i} has no parent");
            }
        }
    }

    #[test]
    fn baseline_examples() {
        let cfg = EvolutionConfig { pop_size: 20, generations: 5, latent_dim: 3, ..Default::default() };
        assert_eq!(random_baseline(&cfg, |_| 0.5).unwrap().best_fitness, 0.5);

        let one = EvolutionConfig { pop_size: 1, generations: 1, ..cfg.clone() };
        let only = LatentVector::sample(&mut stream(one.seed, Stream::Baseline), one.latent_dim);
        let res = random_baseline(&one, |z| sigmoid(z[2])).unwrap();
        assert_eq!(res.budget, 1);
        assert_eq!(res.best_latent, only);
        assert_eq!(res.best_fitness, sigmoid(only[2]));

        let big = EvolutionConfig { pop_size: 50, generations: 100, latent_dim: 16, seed: 1, ..Default::default() };
        let res = random_baseline(&big, |z| sigmoid(z[0])).unwrap();
        assert_eq!(res.budget, 5000);
        assert!((res.best_fitness - 0.97).abs() <= 0.02, "baseline best {}", res.best_fitness);
        assert_eq!(random_baseline(&big, |z| sigmoid(z[0])).unwrap(), res);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn max_fitness_never_decreases(seed in 0u64..10_000, w in prop::collection::vec(-2.0f64..2.0, 4)) {
                let cfg = EvolutionConfig { pop_size: 24, generations: 25, latent_dim: 4, seed, ..Default::default() };
                let f = |z: &[f64]| {
                    let s: f64 = z.iter().zip(&w).map(|(a, b)| a * b).sum();
                    (s.sin() * 0.5 + 0.5).clamp(0.0, 1.0)
                };
                let res = evolve(&cfg, f).unwrap();
                for pair in res.stats.windows(2) {
                    prop_assert!(pair[1].max_fitness >= pair[0].max_fitness);
                }
                for s in &res.stats {
                    prop_assert!(s.max_fitness >= s.mean_fitness);
                }
                prop_assert_eq!(res.best_fitness, res.stats.last().unwrap().max_fitness);
            }
        }
    }
}
