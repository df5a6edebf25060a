use std::collections::BTreeMap;

use ndarray::{ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::expr::{random_leaf, random_tree, BINARY_OPS, UNARY_OPS};
use super::{Expression, FrontEntry, ParetoFront};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GpConfig {
    pub islands: usize,
    pub population_per_island: usize,
    pub generations: usize,
    /// Offspring with more nodes than this are discarded at birth.
    pub max_complexity: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub tournament_size: usize,
    /// Generations between migrations.
    pub migration_interval: usize,
    /// Individuals sent to the next island on the ring at each migration.
    pub migration_count: usize,
    pub init_depth_min: usize,
    pub init_depth_max: usize,
    pub seed: u64,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            islands: 4,
            population_per_island: 200,
            generations: 100,
            max_complexity: 30,
            crossover_rate: 0.7,
            mutation_rate: 0.25,
            tournament_size: 5,
            migration_interval: 10,
            migration_count: 5,
            init_depth_min: 2,
            init_depth_max: 5,
            seed: 0,
        }
    }
}

impl GpConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("islands", self.islands),
            ("population_per_island", self.population_per_island),
            ("generations", self.generations),
            ("max_complexity", self.max_complexity),
            ("tournament_size", self.tournament_size),
            ("migration_interval", self.migration_interval),
            ("init_depth_min", self.init_depth_min),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("gp.{name} must be positive")));
            }
        }
        if self.init_depth_max < self.init_depth_min {
            return Err(Error::Config("gp.init_depth_max < gp.init_depth_min".into()));
        }
        for (name, v) in [("crossover_rate", self.crossover_rate), ("mutation_rate", self.mutation_rate)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("gp.{name} must lie in [0, 1]")));
            }
        }
        if self.crossover_rate + self.mutation_rate > 1.0 + 1e-12 {
            return Err(Error::Config("gp.crossover_rate + gp.mutation_rate exceeds 1".into()));
        }
        if self.migration_count >= self.population_per_island {
            return Err(Error::Config("gp.migration_count must be below the island population".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Individual {
    expr: Expression,
    loss: f64,
    complexity: usize,
}

/// Training data in column-major layout plus the target.
struct Problem {
    columns: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Problem {
    fn n_vars(&self) -> usize {
        self.columns.len()
    }

    fn mse(&self, expr: &Expression) -> f64 {
        let pred = expr.eval_columns(&self.columns, self.y.len());
        let sse: f64 = pred.iter().zip(&self.y).map(|(p, t)| (p - t) * (p - t)).sum();
        let mse = sse / self.y.len() as f64;
        if mse.is_nan() {
            f64::INFINITY
        } else {
            mse
        }
    }

    fn score(&self, expr: Expression) -> Individual {
        let loss = self.mse(&expr);
        let complexity = expr.complexity();
        Individual {
            expr,
            loss,
            complexity,
        }
    }
}

/// Lowest-loss individual seen at each complexity.
#[derive(Default, Clone)]
struct HallOfFame {
    best: BTreeMap<usize, Individual>,
}

impl HallOfFame {
    fn offer(&mut self, ind: &Individual) {
        if !ind.loss.is_finite() {
            return;
        }
        match self.best.get(&ind.complexity) {
            Some(cur) if cur.loss <= ind.loss => {}
            _ => {
                self.best.insert(ind.complexity, ind.clone());
            }
        }
    }

    fn merge(&mut self, other: &HallOfFame) {
        for ind in other.best.values() {
            self.offer(ind);
        }
    }

    fn front(&self) -> ParetoFront {
        ParetoFront::from_candidates(self.best.values().map(|i| FrontEntry {
            expr: i.expr.clone(),
            loss: i.loss,
            complexity: i.complexity,
        }))
    }
}

struct Island {
    rng: ChaCha8Rng,
    population: Vec<Individual>,
    hof: HallOfFame,
}

impl Island {
    fn new(problem: &Problem, cfg: &GpConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = problem.n_vars();
        let depths: Vec<usize> = (cfg.init_depth_min..=cfg.init_depth_max).collect();
        let mut population = Vec::with_capacity(cfg.population_per_island);
        let mut hof = HallOfFame::default();
        for k in 0..cfg.population_per_island {
            // Ramped half-and-half: cycle through depths, alternate full/grow.
            let depth = depths[k % depths.len()];
            let full = (k / depths.len()) % 2 == 0;
            let mut expr = random_tree(&mut rng, depth, full, n);
            let mut tries = 0;
            while expr.complexity() > cfg.max_complexity {
                tries += 1;
                expr = if tries < 10 {
                    random_tree(&mut rng, depth, false, n)
                } else {
                    random_leaf(&mut rng, n)
                };
            }
            let ind = problem.score(expr);
            hof.offer(&ind);
            population.push(ind);
        }
        Island { rng, population, hof }
    }

    fn tournament(&mut self, size: usize) -> usize {
        let n = self.population.len();
        let mut best = self.rng.random_range(0..n);
        for _ in 1..size {
            let c = self.rng.random_range(0..n);
            let (a, b) = (&self.population[c], &self.population[best]);
            if a.loss < b.loss || (a.loss == b.loss && a.complexity < b.complexity) {
                best = c;
            }
        }
        best
    }

    fn generation(&mut self, problem: &Problem, cfg: &GpConfig) {
        let n_vars = problem.n_vars();
        let pop = cfg.population_per_island;
        let mut next: Vec<Individual> = Vec::with_capacity(pop);
        // Elitism: carry the best individual over unchanged.
        if let Some(elite) = self
            .population
            .iter()
            .min_by(|a, b| a.loss.total_cmp(&b.loss).then(a.complexity.cmp(&b.complexity)))
        {
            next.push(elite.clone());
        }
        while next.len() < pop {
            let r: f64 = self.rng.random();
            if r < cfg.crossover_rate {
                let i = self.tournament(cfg.tournament_size);
                let j = self.tournament(cfg.tournament_size);
                let (a, b) = crossover(
                    &mut self.rng,
                    &self.population[i].expr,
                    &self.population[j].expr,
                );
                for (child, parent) in [(a, i), (b, j)] {
                    if next.len() == pop {
                        break;
                    }
                    next.push(self.birth(problem, cfg, child, parent));
                }
            } else if r < cfg.crossover_rate + cfg.mutation_rate {
                let i = self.tournament(cfg.tournament_size);
                let child = mutate(&mut self.rng, &self.population[i].expr, n_vars);
                next.push(self.birth(problem, cfg, child, i));
            } else {
                let i = self.tournament(cfg.tournament_size);
                next.push(self.population[i].clone());
            }
        }
        self.population = next;
    }

    /// Scores a child, or falls back to a copy of its parent when the child
    /// is over the size limit.
    fn birth(&mut self, problem: &Problem, cfg: &GpConfig, child: Expression, parent: usize) -> Individual {
        if child.complexity() > cfg.max_complexity {
            return self.population[parent].clone();
        }
        let ind = problem.score(child);
        self.hof.offer(&ind);
        ind
    }

    fn best(&self, k: usize) -> Vec<Individual> {
        let mut order: Vec<usize> = (0..self.population.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&self.population[a], &self.population[b]);
            x.loss.total_cmp(&y.loss).then(x.complexity.cmp(&y.complexity)).then(a.cmp(&b))
        });
        order[..k].iter().map(|&i| self.population[i].clone()).collect()
    }

    /// Replaces the worst individuals by `incoming`.
    fn receive(&mut self, incoming: Vec<Individual>) {
        let mut order: Vec<usize> = (0..self.population.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&self.population[a], &self.population[b]);
            y.loss.total_cmp(&x.loss).then(b.cmp(&a))
        });
        for (slot, ind) in order.into_iter().zip(incoming) {
            self.hof.offer(&ind);
            self.population[slot] = ind;
        }
    }

    /// Overwrites random members with entries of the global front.
    fn inject(&mut self, front: &[Individual], count: usize) {
        if front.is_empty() {
            return;
        }
        for _ in 0..count {
            let slot = self.rng.random_range(0..self.population.len());
            let pick = self.rng.random_range(0..front.len());
            self.population[slot] = front[pick].clone();
        }
    }
}

/// Swaps a random subtree of `a` with a random subtree of `b`.
fn crossover<R: Rng>(rng: &mut R, a: &Expression, b: &Expression) -> (Expression, Expression) {
    let ia = rng.random_range(0..a.complexity());
    let ib = rng.random_range(0..b.complexity());
    let sa = a.node(ia).expect("index in range").clone();
    let sb = b.node(ib).expect("index in range").clone();
    let mut ca = a.clone();
    let mut cb = b.clone();
    *ca.node_mut(ia).expect("index in range") = sb;
    *cb.node_mut(ib).expect("index in range") = sa;
    (ca, cb)
}

fn mutate<R: Rng>(rng: &mut R, parent: &Expression, n_vars: usize) -> Expression {
    let mut e = parent.clone();
    let size = e.complexity();
    match rng.random_range(0..6u8) {
        // Perturb a constant.
        0 => {
            let consts = e.positions(|n| matches!(n, Expression::Const(_)));
            if consts.is_empty() {
                return mutate(rng, parent, n_vars);
            }
            let at = consts[rng.random_range(0..consts.len())];
            if let Some(Expression::Const(c)) = e.node_mut(at) {
                let z: f64 = rng.sample(StandardNormal);
                *c = if rng.random::<f64>() < 0.5 {
                    *c * (1.0 + 0.3 * z)
                } else {
                    *c + 0.3 * z
                };
                if rng.random::<f64>() < 0.05 {
                    *c = -*c;
                }
            }
        }
        // Swap an operator for another of the same arity.
        1 => {
            let ops = e.positions(|n| matches!(n, Expression::Unary(..) | Expression::Binary(..)));
            if ops.is_empty() {
                return mutate(rng, parent, n_vars);
            }
            let at = ops[rng.random_range(0..ops.len())];
            match e.node_mut(at) {
                Some(Expression::Unary(op, _)) => *op = UNARY_OPS[rng.random_range(0..UNARY_OPS.len())],
                Some(Expression::Binary(op, ..)) => *op = BINARY_OPS[rng.random_range(0..BINARY_OPS.len())],
                _ => unreachable!(),
            }
        }
        // Re-pick a feature.
        2 => {
            let vars = e.positions(|n| matches!(n, Expression::Var(_)));
            if vars.is_empty() {
                return mutate(rng, parent, n_vars);
            }
            let at = vars[rng.random_range(0..vars.len())];
            *e.node_mut(at).expect("index in range") = Expression::Var(rng.random_range(0..n_vars));
        }
        // Replace a subtree with a fresh random one.
        3 => {
            let at = rng.random_range(0..size);
            let depth = rng.random_range(1..=3);
            *e.node_mut(at).expect("index in range") = random_tree(rng, depth, false, n_vars);
        }
        // Wrap a node in a new operator.
        4 => {
            let at = rng.random_range(0..size);
            let slot = e.node_mut(at).expect("index in range");
            let old = std::mem::replace(slot, Expression::Const(0.0));
            *slot = if rng.random::<f64>() < 0.3 {
                Expression::unary(UNARY_OPS[rng.random_range(0..UNARY_OPS.len())], old)
            } else {
                let op = BINARY_OPS[rng.random_range(0..BINARY_OPS.len())];
                let leaf = random_leaf(rng, n_vars);
                if rng.random::<bool>() {
                    Expression::binary(op, old, leaf)
                } else {
                    Expression::binary(op, leaf, old)
                }
            };
        }
        // Hoist: replace an operator node by one of its children.
        _ => {
            let ops = e.positions(|n| matches!(n, Expression::Unary(..) | Expression::Binary(..)));
            if ops.is_empty() {
                return random_leaf(rng, n_vars);
            }
            let at = ops[rng.random_range(0..ops.len())];
            let slot = e.node_mut(at).expect("index in range");
            let old = std::mem::replace(slot, Expression::Const(0.0));
            *slot = match old {
                Expression::Unary(_, a) => *a,
                Expression::Binary(_, a, b) => {
                    if rng.random::<bool>() {
                        *a
                    } else {
                        *b
                    }
                }
                leaf => leaf,
            };
        }
    }
    e
}

/// Island seeds are fixed functions of the master seed, so islands can run
/// in parallel without changing the result.
fn island_seed(master: u64, island: usize) -> u64 {
    master
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add((island as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03))
}

/// Runs the island GP and returns the Pareto front over (MSE, node count).
/// The front always holds the best constant (the target mean).
pub fn evolve(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &GpConfig) -> Result<ParetoFront> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            left: x.nrows(),
            right: y.len(),
        });
    }
    if x.nrows() < 2 {
        return Err(Error::TooFewRows {
            min: 2,
            found: x.nrows(),
        });
    }
    if x.ncols() == 0 {
        return Err(Error::NoFeatures);
    }
    let problem = Problem {
        columns: x.axis_iter(Axis(1)).map(|c| c.to_vec()).collect(),
        y: y.to_vec(),
    };

    let mut global = HallOfFame::default();
    let mean = y.sum() / y.len() as f64;
    global.offer(&problem.score(Expression::Const(mean)));

    let mut islands: Vec<Island> = (0..cfg.islands)
        .into_par_iter()
        .map(|k| Island::new(&problem, cfg, island_seed(cfg.seed, k)))
        .collect();

    let mut done = 0;
    while done < cfg.generations {
        let epoch = cfg.migration_interval.min(cfg.generations - done);
        islands.par_iter_mut().for_each(|island| {
            for _ in 0..epoch {
                island.generation(&problem, cfg);
            }
        });
        done += epoch;
        for island in &islands {
            global.merge(&island.hof);
        }
        if done < cfg.generations && cfg.islands > 1 && cfg.migration_count > 0 {
            let emigrants: Vec<Vec<Individual>> =
                islands.iter().map(|i| i.best(cfg.migration_count)).collect();
            let front: Vec<Individual> = global
                .front()
                .entries()
                .iter()
                .map(|e| problem.score(e.expr.clone()))
                .collect();
            for (k, group) in emigrants.into_iter().enumerate() {
                let dest = &mut islands[(k + 1) % cfg.islands];
                dest.receive(group);
                dest.inject(&front, cfg.migration_count);
            }
        }
    }
    Ok(global.front())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sr::{select_gpe, select_gpp};
    use ndarray::{Array1, Array2};

    fn quick(seed: u64) -> GpConfig {
        GpConfig {
            islands: 2,
            population_per_island: 60,
            generations: 20,
            seed,
            ..GpConfig::default()
        }
    }

    fn grid(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((n, d), |_| rng.random::<f64>() * 4.0 - 2.0)
    }

    #[test]
    fn defaults_match_reported_setup() {
        let c = GpConfig::default();
        assert_eq!((c.islands, c.population_per_island, c.generations), (4, 200, 100));
        assert_eq!(c.max_complexity, 30);
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_config() {
        for bad in [
            GpConfig { islands: 0, ..GpConfig::default() },
            GpConfig { crossover_rate: 0.9, mutation_rate: 0.2, ..GpConfig::default() },
            GpConfig { mutation_rate: -0.1, ..GpConfig::default() },
            GpConfig { migration_count: 200, ..GpConfig::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn recovers_identity() {
        let x = grid(100, 1, 1);
        let y = x.column(0).to_owned();
        let front = evolve(x.view(), y.view(), &quick(3)).unwrap();
        assert!(front
            .entries()
            .iter()
            .any(|e| e.complexity <= 3 && e.loss < 1e-8));
    }

    #[test]
    fn constant_target_gives_exact_constant() {
        let x = grid(50, 2, 2);
        let y = Array1::from_elem(50, 5.0);
        let front = evolve(x.view(), y.view(), &quick(0)).unwrap();
        let first = &front.entries()[0];
        assert_eq!(first.complexity, 1);
        assert!(first.loss <= 1e-20);
        assert_eq!(select_gpe(&front).unwrap().complexity, 1);
    }

    #[test]
    fn noisy_constant_is_within_noise_variance() {
        let x = grid(80, 1, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let y = Array1::from_shape_fn(80, |_| 5.0 + 0.1 * rng.sample::<f64, _>(StandardNormal));
        let mean = y.mean().unwrap();
        let var = y.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        let front = evolve(x.view(), y.view(), &quick(1)).unwrap();
        let c1 = front.entries().iter().find(|e| e.complexity == 1).unwrap();
        assert!(c1.loss <= var * (1.0 + 1e-12));
    }

    #[test]
    fn deterministic_under_seed() {
        let x = grid(60, 2, 7);
        let y = x.map_axis(Axis(1), |r| r[0] * r[1] + 1.0);
        let a = evolve(x.view(), y.view(), &quick(42)).unwrap();
        let b = evolve(x.view(), y.view(), &quick(42)).unwrap();
        assert_eq!(a, b);
        let c = evolve(x.view(), y.view(), &quick(43)).unwrap();
        assert_ne!(a.to_records(), c.to_records());
    }

    #[test]
    fn serial_and_parallel_agree() {
        let x = grid(60, 2, 8);
        let y = x.map_axis(Axis(1), |r| r[0].sin() - r[1]);
        let par = evolve(x.view(), y.view(), &quick(5)).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let serial = pool.install(|| evolve(x.view(), y.view(), &quick(5)).unwrap());
        assert_eq!(par, serial);
    }

    #[test]
    fn front_respects_size_limit_and_selectors_agree() {
        let x = grid(60, 3, 9);
        let y = x.map_axis(Axis(1), |r| r[0] * r[1] / (1.0 + r[2] * r[2]));
        let cfg = GpConfig { max_complexity: 12, ..quick(2) };
        let front = evolve(x.view(), y.view(), &cfg).unwrap();
        assert!(front.entries().iter().all(|e| e.complexity <= 12));
        let gpe = select_gpe(&front).unwrap();
        assert_eq!(gpe, front.entries().last().unwrap());
        let gpp = select_gpp(&front).unwrap();
        assert!(gpp.loss >= gpe.loss);
    }

    #[test]
    fn mutation_and_crossover_keep_trees_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let a = random_tree(&mut rng, 4, false, 3);
            let b = random_tree(&mut rng, 4, true, 3);
            let m = mutate(&mut rng, &a, 3);
            let (c, d) = crossover(&mut rng, &a, &b);
            assert_eq!(c.complexity() + d.complexity(), a.complexity() + b.complexity());
            for e in [m, c, d] {
                assert!(e.max_var().is_none_or(|v| v < 3));
                let back: Expression = e.to_string().parse().unwrap();
                assert_eq!(back, e);
            }
        }
    }
}
