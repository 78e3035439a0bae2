use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ask_stream, rank_desc, AskTell, BestSoFar, Pending};
use crate::error::{Error, Result};
use crate::rng::{gaussian_fill, standard_normal, Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GaConfig {
    pub population_size: usize,
    pub elite_size: usize,
    pub sigma0: f64,
    pub decay: f64,
    pub init_std: f64,
}

impl Default for GaConfig {
    fn default() -> Self {
        Self {
            population_size: 30,
            elite_size: 10,
            sigma0: 0.1,
            decay: 0.999,
            init_std: 0.5,
        }
    }
}

/// Genes `[0, point)` from `a`, the rest from `b`.
pub fn one_point_crossover(a: &[f64], b: &[f64], point: usize) -> Vec<f64> {
    a[..point].iter().chain(&b[point..]).copied().collect()
}

/// Elitist genetic algorithm: one-point crossover between two distinct
/// elites followed by Gaussian mutation with a geometrically decaying std.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Ga {
    config: GaConfig,
    dim: usize,
    seed: u64,
    generation: u64,
    elites: Vec<Vec<f64>>,
    pending: Pending,
    best: BestSoFar,
}

impl Ga {
    pub fn new(config: GaConfig, dim: usize, seed: u64) -> Result<Self> {
        if config.elite_size < 2 || config.elite_size >= config.population_size {
            return Err(Error::config(
                "elite_size",
                "must be at least 2 and below population_size",
            ));
        }
        if dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        Ok(Self {
            config,
            dim,
            seed,
            generation: 0,
            elites: Vec::new(),
            pending: Pending::default(),
            best: BestSoFar::default(),
        })
    }

    pub fn sigma_at(&self, generation: u64) -> f64 {
        self.config.sigma0 * self.config.decay.powf(generation as f64)
    }

    pub fn elites(&self) -> &[Vec<f64>] {
        &self.elites
    }
}

impl AskTell for Ga {
    fn algorithm(&self) -> &'static str {
        "ga"
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
        let xs: Vec<Vec<f64>> = if self.elites.is_empty() {
            let mut rng = RngStream::new(self.seed, 0, 0, Purpose::Init).rng();
            (0..self.config.population_size)
                .map(|_| gaussian_fill(&mut rng, self.dim, 0.0, self.config.init_std))
                .collect::<Result<_>>()?
        } else {
            let mut rng = ask_stream(self.seed, self.generation).rng();
            let sigma = self.sigma_at(self.generation);
            let e = self.elites.len();
            let mut xs = self.elites.clone();
            while xs.len() < self.config.population_size {
                let i = rng.random_range(0..e);
                let j = (i + rng.random_range(1..e)) % e;
                let point = if self.dim > 1 { rng.random_range(1..self.dim) } else { 0 };
                let mut child = one_point_crossover(&self.elites[i], &self.elites[j], point);
                for x in &mut child {
                    *x += sigma * standard_normal(&mut rng);
                }
                xs.push(child);
            }
            xs
        };
        self.pending.set(&xs);
        Ok(xs)
    }

    fn tell(&mut self, fitnesses: &[f64]) -> Result<()> {
        let xs = self.pending.take(fitnesses)?;
        self.best.update(&xs, fitnesses);
        self.elites = rank_desc(fitnesses)[..self.config.elite_size]
            .iter()
            .map(|&i| xs[i].clone())
            .collect();
        self.generation += 1;
        Ok(())
    }

    fn best(&self) -> Option<(&[f64], f64)> {
        self.best.get()
    }

    fn step_size(&self) -> f64 {
        self.sigma_at(self.generation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::testing::{run_sphere, sphere};

    #[test]
    fn crossover_example() {
        assert_eq!(
            one_point_crossover(&[1.0, 1.0, 1.0, 1.0], &[2.0, 2.0, 2.0, 2.0], 2),
            vec![1.0, 1.0, 2.0, 2.0]
        );
    }

    #[test]
    fn sigma_decays_from_sigma0() {
        let ga = Ga::new(GaConfig::default(), 3, 0).unwrap();
        assert_eq!(ga.sigma_at(0), 0.1);
        assert!((ga.sigma_at(1000) - 0.1 * 0.999f64.powi(1000)).abs() < 1e-15);
    }

    #[test]
    fn elites_survive_unchanged() {
        let mut ga = Ga::new(GaConfig::default(), 4, 2).unwrap();
        let xs = ga.ask().unwrap();
        ga.tell(&xs.iter().map(|x| sphere(x)).collect::<Vec<_>>()).unwrap();
        let elites = ga.elites().to_vec();
        let next = ga.ask().unwrap();
        assert_eq!(&next[..10], &elites[..]);
    }

    #[test]
    fn improves_on_sphere() {
        let mut ga = Ga::new(GaConfig::default(), 6, 3).unwrap();
        let curve = run_sphere(&mut ga, 300);
        assert!(curve[299] > curve[0]);
        assert!(curve[299] > -0.05, "{}", curve[299]);
    }
}
