use serde::{Deserialize, Serialize};

use super::{ask_stream, median, rank_desc, AskTell, BestSoFar, Pending};
use crate::error::{Error, Result};
use crate::rng::{gaussian_fill, standard_normal, Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamrConfig {
    pub population_size: usize,
    pub elite_size: usize,
    pub sigma0: f64,
    /// Learning rate of the log step size; `1/sqrt(2d)` when unset.
    pub tau: Option<f64>,
    pub init_std: f64,
    pub param_clip: f64,
}

impl Default for SamrConfig {
    fn default() -> Self {
        Self {
            population_size: 30,
            elite_size: 10,
            sigma0: 0.1,
            tau: None,
            init_std: 0.5,
            param_clip: 20.0,
        }
    }
}

/// Self-adaptive mutation: each genome carries its own step size, which is
/// perturbed log-normally before it perturbs the genome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Samr {
    config: SamrConfig,
    dim: usize,
    tau: f64,
    seed: u64,
    generation: u64,
    elites: Vec<(Vec<f64>, f64)>,
    pending_sigmas: Vec<f64>,
    pending: Pending,
    best: BestSoFar,
}

impl Samr {
    pub fn new(config: SamrConfig, dim: usize, seed: u64) -> Result<Self> {
        if config.elite_size == 0 || config.elite_size >= config.population_size {
            return Err(Error::config("elite_size", "must be in 1..population_size"));
        }
        if !(config.sigma0 > 0.0) {
            return Err(Error::config("sigma0", "must be > 0"));
        }
        if dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        let tau = config.tau.unwrap_or(1.0 / (2.0 * dim as f64).sqrt());
        Ok(Self {
            config,
            dim,
            tau,
            seed,
            generation: 0,
            elites: Vec::new(),
            pending_sigmas: Vec::new(),
            pending: Pending::default(),
            best: BestSoFar::default(),
        })
    }

    /// Step sizes of the current elites, best first.
    pub fn elite_sigmas(&self) -> Vec<f64> {
        self.elites.iter().map(|e| e.1).collect()
    }

    /// Step sizes of the outstanding candidates.
    pub fn candidate_sigmas(&self) -> &[f64] {
        &self.pending_sigmas
    }
}

impl AskTell for Samr {
    fn algorithm(&self) -> &'static str {
        "samr"
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
        let mut xs = Vec::with_capacity(lambda);
        self.pending_sigmas.clear();
        if self.elites.is_empty() {
            let mut rng = RngStream::new(self.seed, 0, 0, Purpose::Init).rng();
            for _ in 0..lambda {
                let x = gaussian_fill(&mut rng, self.dim, 0.0, self.config.init_std)?;
                xs.push(x.into_iter().map(|v| v.clamp(-clip, clip)).collect());
                self.pending_sigmas.push(self.config.sigma0);
            }
        } else {
            let mut rng = ask_stream(self.seed, self.generation).rng();
            for (x, s) in &self.elites {
                xs.push(x.clone());
                self.pending_sigmas.push(*s);
            }
            let e = self.elites.len();
            for slot in 0..lambda - e {
                let (x, s) = &self.elites[slot % e];
                let sigma = s * (self.tau * standard_normal(&mut rng)).exp();
                xs.push(
                    x.iter()
                        .map(|v| (v + sigma * standard_normal(&mut rng)).clamp(-clip, clip))
                        .collect(),
                );
                self.pending_sigmas.push(sigma);
            }
        }
        self.pending.set(&xs);
        Ok(xs)
    }

    fn tell(&mut self, fitnesses: &[f64]) -> Result<()> {
        let xs = self.pending.take(fitnesses)?;
        self.best.update(&xs, fitnesses);
        self.elites = rank_desc(fitnesses)[..self.config.elite_size]
            .iter()
            .map(|&i| (xs[i].clone(), self.pending_sigmas[i]))
            .collect();
        self.generation += 1;
        Ok(())
    }

    fn best(&self) -> Option<(&[f64], f64)> {
        self.best.get()
    }

    fn step_size(&self) -> f64 {
        median(&self.elite_sigmas())
    }
}
