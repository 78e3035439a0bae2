//! Direct-encoding optimizers over flat parameter vectors, all maximizing
//! fitness through the same ask/tell protocol.

mod cmaes;
mod ga;
mod gesmr;
mod openes;
mod samr;

use serde::{Deserialize, Serialize};

pub use cmaes::{CmaEs, CmaEsConfig};
pub use ga::{one_point_crossover, Ga, GaConfig};
pub use gesmr::{select_sigma, Gesmr, GesmrConfig};
pub use openes::{centered_ranks, OpenEs, OpenEsConfig};
pub use samr::{Samr, SamrConfig};

use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};

pub trait AskTell {
    fn algorithm(&self) -> &'static str;

    fn dim(&self) -> usize;

    fn population_size(&self) -> usize;

    /// Completed ask/tell rounds.
    fn generation(&self) -> u64;

    /// Exactly `population_size` candidates of length `dim`.
    fn ask(&mut self) -> Result<Vec<Vec<f64>>>;

    /// One fitness per candidate of the preceding `ask`, higher is better.
    fn tell(&mut self, fitnesses: &[f64]) -> Result<()>;

    /// Best candidate told so far and its fitness.
    fn best(&self) -> Option<(&[f64], f64)>;

    /// Scalar summary of the current step size, logged like a mutation rate.
    fn step_size(&self) -> f64;
}

/// Guards the ask → tell alternation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct Pending {
    candidates: Option<Vec<Vec<f64>>>,
}

impl Pending {
    pub(crate) fn check_ask(&self) -> Result<()> {
        if self.candidates.is_some() {
            return Err(Error::Protocol("ask called twice without tell".into()));
        }
        Ok(())
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.candidates.is_none()
    }

    pub(crate) fn set(&mut self, candidates: &[Vec<f64>]) {
        self.candidates = Some(candidates.to_vec());
    }

    /// Returns the outstanding candidates if `fitnesses` matches them.
    pub(crate) fn take(&mut self, fitnesses: &[f64]) -> Result<Vec<Vec<f64>>> {
        let expected = match &self.candidates {
            None => return Err(Error::Protocol("tell called without a preceding ask".into())),
            Some(c) => c.len(),
        };
        if fitnesses.len() != expected {
            return Err(Error::Protocol(format!(
                "tell got {} fitnesses for {expected} candidates",
                fitnesses.len()
            )));
        }
        Ok(self.candidates.take().unwrap_or_default())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub(crate) struct BestSoFar {
    x: Vec<f64>,
    f: Option<f64>,
}

impl BestSoFar {
    pub(crate) fn update(&mut self, candidates: &[Vec<f64>], fitnesses: &[f64]) {
        for (x, &f) in candidates.iter().zip(fitnesses) {
            if !f.is_nan() && self.f.is_none_or(|b| f > b) {
                self.x = x.clone();
                self.f = Some(f);
            }
        }
    }

    pub(crate) fn get(&self) -> Option<(&[f64], f64)> {
        self.f.map(|f| (self.x.as_slice(), f))
    }
}

/// Stream for the `generation`-th ask of a baseline run.
pub(crate) fn ask_stream(seed: u64, generation: u64) -> RngStream {
    RngStream::new(seed, generation, 0, Purpose::Baseline)
}

/// Indices sorted by descending fitness; NaN last, ties by index.
pub(crate) fn rank_desc(fitnesses: &[f64]) -> Vec<usize> {
    let key = |f: f64| if f.is_nan() { f64::NEG_INFINITY } else { f };
    let mut order: Vec<usize> = (0..fitnesses.len()).collect();
    order.sort_by(|&a, &b| key(fitnesses[b]).total_cmp(&key(fitnesses[a])).then(a.cmp(&b)));
    order
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum BaselineConfig {
    Openes(OpenEsConfig),
    Cmaes(CmaEsConfig),
    Ga(GaConfig),
    Gesmr(GesmrConfig),
    Samr(SamrConfig),
}

impl BaselineConfig {
    pub fn id(&self) -> &'static str {
        match self {
            BaselineConfig::Openes(_) => "openes",
            BaselineConfig::Cmaes(_) => "cmaes",
            BaselineConfig::Ga(_) => "ga",
            BaselineConfig::Gesmr(_) => "gesmr",
            BaselineConfig::Samr(_) => "samr",
        }
    }

    pub fn population_size(&self) -> usize {
        match self {
            BaselineConfig::Openes(c) => c.population_size,
            BaselineConfig::Cmaes(c) => c.population_size,
            BaselineConfig::Ga(c) => c.population_size,
            BaselineConfig::Gesmr(c) => c.population_size,
            BaselineConfig::Samr(c) => c.population_size,
        }
    }

    pub fn build(&self, dim: usize, seed: u64) -> Result<Baseline> {
        Ok(match self {
            BaselineConfig::Openes(c) => Baseline::Openes(OpenEs::new(c.clone(), dim, seed)?),
            BaselineConfig::Cmaes(c) => Baseline::Cmaes(Box::new(CmaEs::new(c.clone(), dim, seed)?)),
            BaselineConfig::Ga(c) => Baseline::Ga(Ga::new(c.clone(), dim, seed)?),
            BaselineConfig::Gesmr(c) => Baseline::Gesmr(Gesmr::new(c.clone(), dim, seed)?),
            BaselineConfig::Samr(c) => Baseline::Samr(Samr::new(c.clone(), dim, seed)?),
        })
    }
}

/// Any baseline, serializable for checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum Baseline {
    Openes(OpenEs),
    Cmaes(Box<CmaEs>),
    Ga(Ga),
    Gesmr(Gesmr),
    Samr(Samr),
}

macro_rules! dispatch {
    ($self:expr, $b:ident => $e:expr) => {
        match $self {
            Baseline::Openes($b) => $e,
            Baseline::Cmaes($b) => $e,
            Baseline::Ga($b) => $e,
            Baseline::Gesmr($b) => $e,
            Baseline::Samr($b) => $e,
        }
    };
}

impl AskTell for Baseline {
    fn algorithm(&self) -> &'static str {
        dispatch!(self, b => b.algorithm())
    }

    fn dim(&self) -> usize {
        dispatch!(self, b => b.dim())
    }

    fn population_size(&self) -> usize {
        dispatch!(self, b => b.population_size())
    }

    fn generation(&self) -> u64 {
        dispatch!(self, b => b.generation())
    }

    fn ask(&mut self) -> Result<Vec<Vec<f64>>> {
        dispatch!(self, b => b.ask())
    }

    fn tell(&mut self, fitnesses: &[f64]) -> Result<()> {
        dispatch!(self, b => b.tell(fitnesses))
    }

    fn best(&self) -> Option<(&[f64], f64)> {
        dispatch!(self, b => b.best())
    }

    fn step_size(&self) -> f64 {
        dispatch!(self, b => b.step_size())
    }
}

#[cfg(test)]
pub(crate) mod testing {
    use super::AskTell;

    pub fn sphere(x: &[f64]) -> f64 {
        -x.iter().map(|v| v * v).sum::<f64>()
    }

    /// Runs `generations` rounds on the negated sphere, returning the best
    /// fitness after each round.
    pub fn run_sphere(opt: &mut dyn AskTell, generations: usize) -> Vec<f64> {
        let mut curve = Vec::with_capacity(generations);
        for _ in 0..generations {
            let xs = opt.ask().unwrap();
            let f: Vec<f64> = xs.iter().map(|x| sphere(x)).collect();
            opt.tell(&f).unwrap();
            curve.push(opt.best().unwrap().1);
        }
        curve
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_configs() -> Vec<BaselineConfig> {
        vec![
            BaselineConfig::Openes(OpenEsConfig::default()),
            BaselineConfig::Cmaes(CmaEsConfig::default()),
            BaselineConfig::Ga(GaConfig::default()),
            BaselineConfig::Gesmr(GesmrConfig::default()),
            BaselineConfig::Samr(SamrConfig::default()),
        ]
    }

    #[test]
    fn protocol_violations_error() {
        for cfg in all_configs() {
            let mut b = cfg.build(5, 1).unwrap();
            assert!(matches!(b.tell(&[0.0]), Err(Error::Protocol(_))), "{}", cfg.id());
            let xs = b.ask().unwrap();
            assert_eq!(xs.len(), b.population_size());
            assert!(xs.iter().all(|x| x.len() == 5));
            assert!(matches!(b.ask(), Err(Error::Protocol(_))), "{}", cfg.id());
            assert!(matches!(b.tell(&vec![0.0; xs.len() - 1]), Err(Error::Protocol(_))));
            b.tell(&vec![0.0; xs.len()]).unwrap();
            assert_eq!(b.generation(), 1);
        }
    }

    #[test]
    fn candidate_streams_are_deterministic() {
        for cfg in all_configs() {
            let mut a = cfg.build(6, 9).unwrap();
            let mut b = cfg.build(6, 9).unwrap();
            for g in 0..4 {
                let xa = a.ask().unwrap();
                let xb = b.ask().unwrap();
                assert_eq!(xa, xb, "{} generation {g}", cfg.id());
                let f: Vec<f64> = xa.iter().map(|x| testing::sphere(x)).collect();
                a.tell(&f).unwrap();
                b.tell(&f).unwrap();
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_continues_identically() {
        for cfg in all_configs() {
            let mut a = cfg.build(4, 3).unwrap();
            let xs = a.ask().unwrap();
            a.tell(&xs.iter().map(|x| testing::sphere(x)).collect::<Vec<_>>()).unwrap();
            let mut b: Baseline = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
            assert_eq!(a.ask().unwrap(), b.ask().unwrap(), "{}", cfg.id());
        }
    }

    #[test]
    fn comparison_sizes_match_cartpole_settings() {
        assert_eq!(GaConfig::default().population_size, 30);
        assert_eq!(GaConfig::default().elite_size, 10);
        assert_eq!(SamrConfig::default().population_size, 30);
        assert_eq!(SamrConfig::default().elite_size, 10);
        assert_eq!(GesmrConfig::default().population_size, 30);
        assert_eq!(GesmrConfig::default().elite_size, 10);
    }

    #[test]
    fn helpers() {
        assert_eq!(rank_desc(&[1.0, f64::NAN, 3.0, 3.0]), vec![2, 3, 0, 1]);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
