use serde::{Deserialize, Serialize};

use super::{ask_stream, AskTell, BestSoFar, Pending};
use crate::error::{Error, Result};
use crate::rng::{gaussian_fill, standard_normal, Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpenEsConfig {
    pub population_size: usize,
    pub sigma: f64,
    pub learning_rate: f64,
    /// Std of the initial mean around the origin.
    pub init_std: f64,
}

impl Default for OpenEsConfig {
    fn default() -> Self {
        Self {
            population_size: 30,
            sigma: 0.05,
            learning_rate: 0.05,
            init_std: 0.1,
        }
    }
}

/// Centered rank utilities in `[-0.5, 0.5]`; tied fitnesses share their
/// average rank, so a constant fitness vector maps to all zeros.
pub fn centered_ranks(fitnesses: &[f64]) -> Vec<f64> {
    let n = fitnesses.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let key = |f: f64| if f.is_nan() { f64::NEG_INFINITY } else { f };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| key(fitnesses[a]).total_cmp(&key(fitnesses[b])));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && key(fitnesses[order[j + 1]]) == key(fitnesses[order[i]]) {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg / (n - 1) as f64 - 0.5;
        }
        i = j + 1;
    }
    ranks
}

/// Mirrored-sampling evolution strategy with a fixed step size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OpenEs {
    config: OpenEsConfig,
    seed: u64,
    generation: u64,
    mean: Vec<f64>,
    noise: Vec<Vec<f64>>,
    pending: Pending,
    best: BestSoFar,
}

impl OpenEs {
    pub fn new(config: OpenEsConfig, dim: usize, seed: u64) -> Result<Self> {
        if config.population_size < 2 || config.population_size % 2 == 1 {
            return Err(Error::config(
                "population_size",
                "mirrored sampling needs an even population of at least 2",
            ));
        }
        if !(config.sigma > 0.0) {
            return Err(Error::config("sigma", "must be > 0"));
        }
        let mean = gaussian_fill(
            &mut RngStream::new(seed, 0, 0, Purpose::Init).rng(),
            dim,
            0.0,
            config.init_std,
        )?;
        Ok(Self {
            config,
            seed,
            generation: 0,
            mean,
            noise: Vec::new(),
            pending: Pending::default(),
            best: BestSoFar::default(),
        })
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }
}

impl AskTell for OpenEs {
    fn algorithm(&self) -> &'static str {
        "openes"
    }

    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn population_size(&self) -> usize {
        self.config.population_size
    }

    fn generation(&self) -> u64 {
        self.generation
    }

    fn ask(&mut self) -> Result<Vec<Vec<f64>>> {
        self.pending.check_ask()?;
        let mut rng = ask_stream(self.seed, self.generation).rng();
        let sigma = self.config.sigma;
        self.noise = (0..self.config.population_size / 2)
            .map(|_| self.mean.iter().map(|_| standard_normal(&mut rng)).collect())
            .collect();
        let mut xs = Vec::with_capacity(self.config.population_size);
        for eps in &self.noise {
            xs.push(self.mean.iter().zip(eps).map(|(m, e)| m + sigma * e).collect());
            xs.push(self.mean.iter().zip(eps).map(|(m, e)| m - sigma * e).collect());
        }
        self.pending.set(&xs);
        Ok(xs)
    }

    fn tell(&mut self, fitnesses: &[f64]) -> Result<()> {
        let xs = self.pending.take(fitnesses)?;
        self.best.update(&xs, fitnesses);
        let u = centered_ranks(fitnesses);
        let lambda = self.config.population_size as f64;
        let scale = self.config.learning_rate / (lambda * self.config.sigma);
        for (pair, eps) in self.noise.iter().enumerate() {
            // The mirrored twin contributes u⁻ · (−ε).
            let w = u[2 * pair] - u[2 * pair + 1];
            for (m, e) in self.mean.iter_mut().zip(eps) {
                *m += scale * w * e;
            }
        }
        self.generation += 1;
        Ok(())
    }

    fn best(&self) -> Option<(&[f64], f64)> {
        self.best.get()
    }

    fn step_size(&self) -> f64 {
        self.config.sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::testing::run_sphere;

    #[test]
    fn equal_fitness_leaves_mean_unchanged() {
        let mut es = OpenEs::new(OpenEsConfig::default(), 5, 0).unwrap();
        let before = es.mean().to_vec();
        es.ask().unwrap();
        es.tell(&[3.0; 30]).unwrap();
        assert_eq!(es.mean(), &before[..]);
        assert_eq!(centered_ranks(&[1.0; 4]).iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn mirrored_pairs() {
        let mut es = OpenEs::new(OpenEsConfig::default(), 5, 1).unwrap();
        let m = es.mean().to_vec();
        let xs = es.ask().unwrap();
        for i in 0..15 {
            for d in 0..5 {
                assert!((xs[2 * i + 1][d] - (2.0 * m[d] - xs[2 * i][d])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn odd_population_is_rejected() {
        let cfg = OpenEsConfig {
            population_size: 31,
            ..Default::default()
        };
        assert!(OpenEs::new(cfg, 3, 0).is_err());
    }

    #[test]
    fn centered_ranks_span_half_interval() {
        assert_eq!(centered_ranks(&[10.0, 30.0, 20.0]), vec![-0.5, 0.5, 0.0]);
        let u = centered_ranks(&[2.0, 1.0, 2.0, 0.0]);
        assert_eq!(u, vec![0.5 * (2.0 + 3.0) / 3.0 - 0.5, 1.0 / 3.0 - 0.5, 0.5 * (2.0 + 3.0) / 3.0 - 0.5, -0.5]);
    }

    #[test]
    fn converges_on_sphere() {
        let cfg = OpenEsConfig {
            population_size: 30,
            sigma: 0.01,
            learning_rate: 0.002,
            init_std: 1.0,
        };
        let mut wins = 0;
        for seed in 0..5 {
            let mut es = OpenEs::new(cfg.clone(), 8, seed).unwrap();
            let best = *run_sphere(&mut es, 500).last().unwrap();
            if best > -1e-3 {
                wins += 1;
            }
        }
        assert!(wins >= 4, "{wins}/5 seeds converged");
    }
}
