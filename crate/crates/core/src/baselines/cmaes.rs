use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{ask_stream, rank_desc, AskTell, BestSoFar, Pending};
use crate::error::{Error, Result};
use crate::rng::{gaussian_fill, standard_normal, Purpose, RngStream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaEsConfig {
    pub population_size: usize,
    pub sigma0: f64,
    pub init_std: f64,
}

impl Default for CmaEsConfig {
    fn default() -> Self {
        Self {
            population_size: 30,
            sigma0: 0.5,
            init_std: 0.1,
        }
    }
}

/// Strategy constants with the default weighting scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Params {
    mu: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    eigen_interval: u64,
}

impl Params {
    fn new(n: usize, lambda: usize) -> Self {
        let nf = n as f64;
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| ((lambda as f64 + 1.0) / 2.0).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        let eigen_interval = ((lambda as f64 / ((c_1 + c_mu) * nf * 10.0)).floor() as u64).max(1);
        Self {
            mu,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            eigen_interval,
        }
    }
}

/// `(mu/mu_w, lambda)` CMA-ES with cumulative step-size adaptation and
/// rank-one plus rank-mu covariance updates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CmaEs {
    config: CmaEsConfig,
    params: Params,
    seed: u64,
    generation: u64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    /// Eigenvectors of `cov` (columns) and square roots of its eigenvalues.
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    last_eigen: u64,
    pending: Pending,
    best: BestSoFar,
}

impl CmaEs {
    pub fn new(config: CmaEsConfig, dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("dim", "must be >= 1"));
        }
        if config.population_size < 4 {
            return Err(Error::config("population_size", "CMA-ES needs at least 4 candidates"));
        }
        if !(config.sigma0 > 0.0) {
            return Err(Error::config("sigma0", "must be > 0"));
        }
        let mean = gaussian_fill(
            &mut RngStream::new(seed, 0, 0, Purpose::Init).rng(),
            dim,
            0.0,
            config.init_std,
        )?;
        Ok(Self {
            params: Params::new(dim, config.population_size),
            sigma: config.sigma0,
            config,
            seed,
            generation: 0,
            mean: DVector::from_vec(mean),
            cov: DMatrix::identity(dim, dim),
            basis: DMatrix::identity(dim, dim),
            scales: DVector::from_element(dim, 1.0),
            p_sigma: DVector::zeros(dim),
            p_c: DVector::zeros(dim),
            last_eigen: 0,
            pending: Pending::default(),
            best: BestSoFar::default(),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.cov.clone()).eigenvalues.min()
    }

    /// Symmetrizes `cov`, refreshes its eigendecomposition and floors the
    /// spectrum so the matrix stays positive definite.
    fn decompose(&mut self) {
        let n = self.cov.nrows();
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let top = eig.eigenvalues.max().max(f64::MIN_POSITIVE);
        let floor = top * 1e-14;
        let values = eig.eigenvalues.map(|v| v.max(floor));
        self.basis = eig.eigenvectors;
        self.scales = values.map(f64::sqrt);
        self.cov = &self.basis * DMatrix::from_diagonal(&values) * self.basis.transpose();
        debug_assert_eq!(self.cov.nrows(), n);
        self.last_eigen = self.generation;
    }

    fn inv_sqrt_times(&self, v: &DVector<f64>) -> DVector<f64> {
        let y = self.basis.transpose() * v;
        let y = y.component_div(&self.scales);
        &self.basis * y
    }
}

impl AskTell for CmaEs {
    fn algorithm(&self) -> &'static str {
        "cmaes"
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
        if self.generation - self.last_eigen >= self.params.eigen_interval {
            self.decompose();
        }
        let n = self.dim();
        let mut rng = ask_stream(self.seed, self.generation).rng();
        let xs: Vec<Vec<f64>> = (0..self.config.population_size)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| standard_normal(&mut rng));
                let y = &self.basis * z.component_mul(&self.scales);
                (&self.mean + y * self.sigma).as_slice().to_vec()
            })
            .collect();
        self.pending.set(&xs);
        Ok(xs)
    }

    fn tell(&mut self, fitnesses: &[f64]) -> Result<()> {
        if let Some(i) = fitnesses.iter().position(|f| !f.is_finite()) {
            // The pending candidates are kept so the caller may retry.
            if self.pending.is_empty() {
                return Err(Error::Protocol("tell called without a preceding ask".into()));
            }
            return Err(Error::NonFiniteFitness(i));
        }
        let xs = self.pending.take(fitnesses)?;
        self.best.update(&xs, fitnesses);
        let p = &self.params;
        let n = self.dim() as f64;
        let order = rank_desc(fitnesses);

        let old_mean = self.mean.clone();
        let ys: Vec<DVector<f64>> = order[..p.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&xs[i]) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(self.dim());
        for (w, y) in p.weights.iter().zip(&ys) {
            y_w += y * *w;
        }
        self.mean = &old_mean + &y_w * self.sigma;

        let c_s = p.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - c_s)
            + self.inv_sqrt_times(&y_w) * (c_s * (2.0 - c_s) * p.mu_eff).sqrt();
        let gen = (self.generation + 1) as f64;
        let ps_norm = self.p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - c_s).powf(2.0 * gen)).sqrt() / p.chi_n < 1.4 + 2.0 / (n + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = &self.p_c * (1.0 - p.c_c) + &y_w * (h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let delta_h = (1.0 - h) * p.c_c * (2.0 - p.c_c);
        let mut rank_mu = DMatrix::zeros(self.dim(), self.dim());
        for (w, y) in p.weights.iter().zip(&ys) {
            rank_mu += y * y.transpose() * *w;
        }
        self.cov = &self.cov * (1.0 - p.c_1 - p.c_mu + p.c_1 * delta_h)
            + &self.p_c * self.p_c.transpose() * p.c_1
            + rank_mu * p.c_mu;

        self.sigma *= ((c_s / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.generation += 1;
        Ok(())
    }

    fn best(&self) -> Option<(&[f64], f64)> {
        self.best.get()
    }

    fn step_size(&self) -> f64 {
        self.sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::median;
    use crate::baselines::testing::sphere;

    fn sphere_config() -> CmaEsConfig {
        CmaEsConfig {
            population_size: 16,
            sigma0: 0.5,
            init_std: 1.0,
        }
    }

    #[test]
    fn default_parameters() {
        let p = Params::new(8, 16);
        assert_eq!(p.mu, 8);
        assert!((p.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.weights.windows(2).all(|w| w[0] > w[1]));
        assert!(p.mu_eff > 1.0 && p.mu_eff < 8.0);
        assert!(p.c_1 + p.c_mu <= 1.0);
    }

    #[test]
    fn converges_on_sphere_within_budget() {
        let mut wins = 0;
        for seed in 0..5 {
            let mut es = CmaEs::new(sphere_config(), 8, seed).unwrap();
            let mut evals = 0;
            let mut best = f64::NEG_INFINITY;
            while evals + 16 <= 3000 {
                let xs = es.ask().unwrap();
                let f: Vec<f64> = xs.iter().map(|x| sphere(x)).collect();
                es.tell(&f).unwrap();
                evals += 16;
                best = es.best().unwrap().1;
                if -best < 1e-6 {
                    break;
                }
            }
            if -best < 1e-6 {
                wins += 1;
            }
        }
        assert!(wins >= 4, "{wins}/5");
    }

    #[test]
    fn covariance_stays_positive_definite_and_sigma_contracts() {
        let mut es = CmaEs::new(sphere_config(), 8, 11).unwrap();
        let mut sigmas = Vec::new();
        for _ in 0..300 {
            let xs = es.ask().unwrap();
            let f: Vec<f64> = xs.iter().map(|x| sphere(x)).collect();
            es.tell(&f).unwrap();
            assert!(es.min_eigenvalue() > 0.0);
            let c = es.covariance();
            assert!((c - c.transpose()).abs().max() < 1e-12 * c.abs().max());
            sigmas.push(es.sigma());
        }
        let windows: Vec<f64> = sigmas.chunks(100).map(median).collect();
        assert!(windows.windows(2).all(|w| w[1] < w[0]), "{windows:?}");
    }

    #[test]
    fn non_finite_fitness_errors() {
        let mut es = CmaEs::new(sphere_config(), 3, 0).unwrap();
        es.ask().unwrap();
        let mut f = vec![0.0; 16];
        f[4] = f64::NAN;
        assert!(matches!(es.tell(&f), Err(Error::NonFiniteFitness(4))));
        es.tell(&[0.0; 16]).unwrap();
    }
}
