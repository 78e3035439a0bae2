use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ask_stream, rank_desc, AskTell, BestSoFar, Pending};
use crate::error::{Error, Result};
use crate::rng::{gaussian_fill, standard_normal, Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GesmrConfig {
    pub population_size: usize,
    pub elite_size: usize,
    /// Number of mutation-rate groups K.
    pub groups: usize,
    pub sigma_init: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    /// Perturbation factors are log-uniform in `[1/beta, beta]`.
    pub beta: f64,
    pub init_std: f64,
    pub param_clip: f64,
}

impl Default for GesmrConfig {
    fn default() -> Self {
        Self {
            population_size: 30,
            elite_size: 10,
            groups: 5,
            sigma_init: 0.1,
            sigma_min: 1e-4,
            sigma_max: 1.0,
            beta: 2.0,
            init_std: 0.5,
            param_clip: 20.0,
        }
    }
}

/// Index of the group whose best fitness improvement is largest (lowest
/// index on ties).
pub fn select_sigma(group_best_improvement: &[f64]) -> usize {
    rank_desc(group_best_improvement)[0]
}

/// Group elite selection of mutation rates: solutions evolve by truncation
/// while K step sizes compete on the best improvement their group achieves.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Gesmr {
    config: GesmrConfig,
    dim: usize,
    seed: u64,
    generation: u64,
    elites: Vec<Vec<f64>>,
    elite_fitness: Vec<f64>,
    sigmas: Vec<f64>,
    /// Parent elite of each outstanding candidate; `None` for fresh or copied ones.
    parents: Vec<Option<usize>>,
    pending: Pending,
    best: BestSoFar,
}

impl Gesmr {
    pub fn new(config: GesmrConfig, dim: usize, seed: u64) -> Result<Self> {
        let c = &config;
        if c.groups == 0 || !c.population_size.is_multiple_of(c.groups) {
            return Err(Error::config("groups", "population_size must be divisible by groups"));
        }
        if c.elite_size == 0 || c.elite_size > c.population_size {
            return Err(Error::config("elite_size", "must be in 1..=population_size"));
        }
        if !(0.0 < c.sigma_min && c.sigma_min <= c.sigma_max) {
            return Err(Error::config("sigma_min", "need 0 < sigma_min <= sigma_max"));
        }
        if !(c.beta >= 1.0) {
            return Err(Error::config("beta", "must be >= 1"));
        }
        let sigmas = vec![c.sigma_init.clamp(c.sigma_min, c.sigma_max); c.groups];
        Ok(Self {
            config,
            dim,
            seed,
            generation: 0,
            elites: Vec::new(),
            elite_fitness: Vec::new(),
            sigmas,
            parents: Vec::new(),
            pending: Pending::default(),
            best: BestSoFar::default(),
        })
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    fn group_of(&self, slot: usize) -> usize {
        slot / (self.config.population_size / self.config.groups)
    }
}

impl AskTell for Gesmr {
    fn algorithm(&self) -> &'static str {
        "gesmr"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn population_size(&self) -> usize {
        self.config.population_size
    }

    fn generation(&self) -> u64 {
        self.generation
    }

    fn ask(&mut self) -> Result<Vec<Vec<f64>>> {
        self.pending.check_ask()?;
        let lambda = self.config.population_size;
        let clip = self.config.param_clip;
        let xs: Vec<Vec<f64>> = if self.elites.is_empty() {
            let mut rng = RngStream::new(self.seed, 0, 0, Purpose::Init).rng();
            self.parents = vec![None; lambda];
            (0..lambda)
                .map(|_| {
                    gaussian_fill(&mut rng, self.dim, 0.0, self.config.init_std)
                        .map(|x| x.into_iter().map(|v| v.clamp(-clip, clip)).collect())
                })
                .collect::<Result<_>>()?
        } else {
            let mut rng = ask_stream(self.seed, self.generation).rng();
            let e = self.elites.len();
            // Slot 0 re-evaluates the best solution unchanged.
            let mut xs = vec![self.elites[0].clone()];
            self.parents = vec![None];
            for slot in 1..lambda {
                let p = (slot - 1) % e;
                let sigma = self.sigmas[self.group_of(slot)];
                let child = self.elites[p]
                    .iter()
                    .map(|v| (v + sigma * standard_normal(&mut rng)).clamp(-clip, clip))
                    .collect();
                xs.push(child);
                self.parents.push(Some(p));
            }
            xs
        };
        self.pending.set(&xs);
        Ok(xs)
    }

    fn tell(&mut self, fitnesses: &[f64]) -> Result<()> {
        let xs = self.pending.take(fitnesses)?;
        self.best.update(&xs, fitnesses);
        let key = |f: f64| if f.is_nan() { f64::NEG_INFINITY } else { f };

        if !self.elites.is_empty() {
            let mut group_best = vec![f64::NEG_INFINITY; self.config.groups];
            for (slot, parent) in self.parents.iter().enumerate() {
                if let Some(p) = parent {
                    let g = self.group_of(slot);
                    group_best[g] = group_best[g].max(key(fitnesses[slot]) - self.elite_fitness[*p]);
                }
            }
            let winner = self.sigmas[select_sigma(&group_best)];
            let mut rng = RngStream::new(self.seed, self.generation, 1, Purpose::Baseline).rng();
            let (lo, hi) = (self.config.sigma_min, self.config.sigma_max);
            let log_beta = self.config.beta.ln();
            self.sigmas[0] = winner;
            for s in self.sigmas.iter_mut().skip(1) {
                let factor = if log_beta > 0.0 {
                    rng.random_range(-log_beta..=log_beta).exp()
                } else {
                    1.0
                };
                *s = (winner * factor).clamp(lo, hi);
            }
        }

        let order = rank_desc(fitnesses);
        let top = &order[..self.config.elite_size];
        self.elites = top.iter().map(|&i| xs[i].clone()).collect();
        self.elite_fitness = top.iter().map(|&i| key(fitnesses[i])).collect();
        self.generation += 1;
        Ok(())
    }

    fn best(&self) -> Option<(&[f64], f64)> {
        self.best.get()
    }

    fn step_size(&self) -> f64 {
        self.sigmas[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::testing::run_sphere;

    #[test]
    fn larger_improvement_wins() {
        let sigmas = [0.1, 0.2];
        assert_eq!(sigmas[select_sigma(&[0.5, 1.5])], 0.2);
        assert_eq!(select_sigma(&[1.0, 1.0]), 0);
    }

    #[test]
    fn indivisible_population_is_rejected() {
        let cfg = GesmrConfig {
            groups: 4,
            ..Default::default()
        };
        assert!(Gesmr::new(cfg, 3, 0).is_err());
    }

    #[test]
    fn single_group_shares_one_sigma_and_stays_clamped() {
        let cfg = GesmrConfig {
            groups: 1,
            sigma_min: 0.01,
            sigma_max: 0.3,
            ..Default::default()
        };
        let mut es = Gesmr::new(cfg, 5, 1).unwrap();
        for _ in 0..50 {
            let xs = es.ask().unwrap();
            let f: Vec<f64> = xs.iter().map(|x| crate::baselines::testing::sphere(x)).collect();
            es.tell(&f).unwrap();
            assert_eq!(es.sigmas().len(), 1);
            assert!(xs.iter().flatten().all(|v| v.abs() <= 20.0));
        }
        let cfg = GesmrConfig {
            sigma_min: 0.01,
            sigma_max: 0.3,
            ..Default::default()
        };
        let mut es = Gesmr::new(cfg, 5, 2).unwrap();
        for _ in 0..100 {
            let xs = es.ask().unwrap();
            let f: Vec<f64> = xs.iter().map(|x| crate::baselines::testing::sphere(x)).collect();
            es.tell(&f).unwrap();
            assert!(es.sigmas().iter().all(|s| (0.01..=0.3).contains(s)));
        }
    }

    #[test]
    fn improves_on_sphere() {
        let mut es = Gesmr::new(GesmrConfig::default(), 6, 3).unwrap();
        let curve = run_sphere(&mut es, 300);
        assert!(curve[299] > -1e-3, "{}", curve[299]);
    }
}
