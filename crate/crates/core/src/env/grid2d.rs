//! 2-D navigation on a fixed fitness surface. An episode starts at the centre
//! cell and scores the value of the cell it ends on. Inverted mode swaps the
//! active surface.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Action, ActionKind, EnvSpec, Environment, Step, SwitchMode};
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngStream};

pub const UP: usize = 0;
pub const DOWN: usize = 1;
pub const LEFT: usize = 2;
pub const RIGHT: usize = 3;
pub const WAIT: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub size: usize,
    pub episode_steps: usize,
    pub landscape_seed: u64,
    pub secondary_peaks: usize,
    /// Share of the main peak's height carried by its narrow summit bump.
    pub summit_height: f64,
    /// Std of the summit bump as a fraction of the grid size.
    pub summit_width: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 21,
            episode_steps: 40,
            landscape_seed: 7,
            secondary_peaks: 1,
            summit_height: 0.5,
            summit_width: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    pub x: f64,
    pub y: f64,
    pub height: f64,
    pub width: f64,
}

/// Two normalized surfaces, each a sum of Gaussian bumps whose global
/// maximum is exactly 1.0 on a single cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridLandscape {
    pub config: GridConfig,
    pub surfaces: [Vec<f64>; 2],
    pub peaks: [Vec<Peak>; 2],
    pub optima: [(usize, usize); 2],
}

impl GridLandscape {
    pub fn generate(config: &GridConfig) -> Result<Self> {
        let n = config.size;
        if n < 5 || n.is_multiple_of(2) {
            return Err(Error::config("grid_size", "must be odd and >= 5"));
        }
        if !(0.0..=1.0).contains(&config.summit_height) {
            return Err(Error::config("grid_summit_height", "must be in [0, 1]"));
        }
        if !(config.summit_width > 0.0) {
            return Err(Error::config("grid_summit_width", "must be > 0"));
        }
        if config.episode_steps == 0 {
            return Err(Error::config("grid_episode_steps", "must be >= 1"));
        }
        let c = (n / 2) as f64;
        let reach = (config.episode_steps as f64).min(2.0 * c);
        let mut rng = RngStream::new(config.landscape_seed, 0, 0, Purpose::Landscape).rng();
        let cell = |rng: &mut rand_chacha::ChaCha12Rng| {
            (rng.random_range(0..n) as f64, rng.random_range(0..n) as f64)
        };

        let mut mains: Vec<(f64, f64)> = Vec::new();
        for _ in 0..2 {
            loop {
                let (x, y) = cell(&mut rng);
                let from_centre = (x - c).abs() + (y - c).abs();
                let apart = mains
                    .iter()
                    .all(|(px, py)| (px - x).abs() + (py - y).abs() >= 0.8 * c);
                if from_centre >= 0.5 * c && from_centre <= reach.min(1.8 * c) && apart {
                    mains.push((x, y));
                    break;
                }
            }
        }

        let mut surfaces: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        let mut peaks: [Vec<Peak>; 2] = [Vec::new(), Vec::new()];
        let mut optima = [(0, 0); 2];
        for s in 0..2 {
            let (mx, my) = mains[s];
            // A broad base carries the gradient from afar; the narrow summit
            // makes the optimum stand out from its neighbours.
            let mut list = vec![
                Peak {
                    x: mx,
                    y: my,
                    height: 1.0 - config.summit_height,
                    width: rng.random_range(0.15..0.22) * n as f64,
                },
                Peak {
                    x: mx,
                    y: my,
                    height: config.summit_height,
                    width: config.summit_width * n as f64,
                },
            ];
            while list.len() < 2 + config.secondary_peaks {
                let (x, y) = cell(&mut rng);
                if (x - mx).abs() + (y - my).abs() >= 0.6 * c {
                    list.push(Peak {
                        x,
                        y,
                        height: rng.random_range(0.35..0.65),
                        width: rng.random_range(0.08..0.14) * n as f64,
                    });
                }
            }
            let mut values: Vec<f64> = (0..n * n)
                .map(|i| {
                    let (x, y) = ((i % n) as f64, (i / n) as f64);
                    list.iter()
                        .map(|p| {
                            let d2 = (x - p.x).powi(2) + (y - p.y).powi(2);
                            p.height * (-d2 / (2.0 * p.width * p.width)).exp()
                        })
                        .sum()
                })
                .collect();
            let (arg, max) = values
                .iter()
                .copied()
                .enumerate()
                .fold((0, f64::MIN), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            values.iter_mut().for_each(|v| *v /= max);
            values[arg] = 1.0;
            if values.iter().filter(|&&v| v >= 1.0).count() != 1 {
                return Err(Error::config("landscape_seed", "surface has a tied global maximum"));
            }
            optima[s] = (arg % n, arg / n);
            surfaces[s] = values;
            peaks[s] = list;
        }
        Ok(Self {
            config: config.clone(),
            surfaces,
            peaks,
            optima,
        })
    }

    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 8,
            action_kind: ActionKind::Discrete(5),
            max_steps: self.config.episode_steps,
            score_range: (0.0, 1.0),
        }
    }

    pub fn size(&self) -> usize {
        self.config.size
    }

    pub fn value(&self, surface: usize, x: usize, y: usize) -> f64 {
        self.surfaces[surface][y * self.config.size + x]
    }

    fn value_or_zero(&self, surface: usize, x: i64, y: i64) -> f64 {
        let n = self.config.size as i64;
        if (0..n).contains(&x) && (0..n).contains(&y) {
            self.value(surface, x as usize, y as usize)
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone)]
pub struct Grid2d {
    landscape: Arc<GridLandscape>,
    spec: EnvSpec,
    x: usize,
    y: usize,
    steps: usize,
    mode: SwitchMode,
}

impl Grid2d {
    pub fn new(landscape: Arc<GridLandscape>) -> Self {
        let c = landscape.size() / 2;
        Self {
            spec: landscape.spec(),
            landscape,
            x: c,
            y: c,
            steps: 0,
            mode: SwitchMode::Normal,
        }
    }

    pub fn position(&self) -> (usize, usize) {
        (self.x, self.y)
    }

    pub fn active_surface(&self) -> usize {
        match self.mode {
            SwitchMode::Normal => 0,
            SwitchMode::Inverted => 1,
        }
    }

    fn obs(&self) -> Vec<f64> {
        let s = self.active_surface();
        let (x, y) = (self.x as i64, self.y as i64);
        let l = &self.landscape;
        let max = (l.size() - 1) as f64;
        vec![
            l.value_or_zero(s, x, y - 1),
            l.value_or_zero(s, x, y + 1),
            l.value_or_zero(s, x - 1, y),
            l.value_or_zero(s, x + 1, y),
            l.value(s, self.x, self.y),
            self.x as f64 / max,
            self.y as f64 / max,
            self.steps as f64 / self.spec.max_steps as f64,
        ]
    }
}

impl Environment for Grid2d {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn mode(&self) -> SwitchMode {
        self.mode
    }

    fn set_mode(&mut self, mode: SwitchMode) {
        self.mode = mode;
    }

    fn reset(&mut self, _stream: &RngStream) -> Result<Vec<f64>> {
        let c = self.landscape.size() / 2;
        self.x = c;
        self.y = c;
        self.steps = 0;
        Ok(self.obs())
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let a = match action {
            Action::Discrete(a) if *a < 5 => *a,
            other => return Err(Error::ActionOutOfRange(format!("{other:?} for Discrete(5)"))),
        };
        let last = self.landscape.size() - 1;
        match a {
            UP => self.y = self.y.saturating_sub(1),
            DOWN => self.y = (self.y + 1).min(last),
            LEFT => self.x = self.x.saturating_sub(1),
            RIGHT => self.x = (self.x + 1).min(last),
            _ => {}
        }
        self.steps += 1;
        let done = self.steps >= self.spec.max_steps;
        let reward = if done {
            self.landscape.value(self.active_surface(), self.x, self.y)
        } else {
            0.0
        };
        Ok(Step {
            obs: self.obs(),
            reward,
            done,
        })
    }

    fn trace_point(&self) -> Vec<f64> {
        vec![self.x as f64, self.y as f64]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env() -> Grid2d {
        Grid2d::new(Arc::new(GridLandscape::generate(&GridConfig::default()).unwrap()))
    }

    #[test]
    fn starts_at_centre() {
        let mut e = env();
        e.step(&Action::Discrete(RIGHT)).unwrap();
        e.reset(&RngStream::new(0, 0, 0, Purpose::Episode(0))).unwrap();
        assert_eq!(e.position(), (10, 10));
    }

    #[test]
    fn wait_keeps_position_and_moves_clamp() {
        let mut e = env();
        e.reset(&RngStream::new(0, 0, 0, Purpose::Episode(0))).unwrap();
        e.step(&Action::Discrete(WAIT)).unwrap();
        assert_eq!(e.position(), (10, 10));
        for _ in 0..15 {
            e.step(&Action::Discrete(LEFT)).unwrap();
        }
        assert_eq!(e.position(), (0, 10));
        assert!(e.step(&Action::Discrete(5)).is_err());
    }

    #[test]
    fn surfaces_are_normalized_with_distinct_optima() {
        let l = GridLandscape::generate(&GridConfig::default()).unwrap();
        for s in 0..2 {
            assert!(l.surfaces[s].iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(l.surfaces[s].iter().filter(|&&v| v == 1.0).count(), 1);
            let (x, y) = l.optima[s];
            assert_eq!(l.value(s, x, y), 1.0);
            // Reachable from the centre within one episode.
            assert!(x.abs_diff(10) + y.abs_diff(10) <= 40);
        }
        assert_ne!(l.optima[0], l.optima[1]);
    }

    #[test]
    fn observations_are_normalized() {
        let mut e = env();
        let mut obs = e.reset(&RngStream::new(0, 0, 0, Purpose::Episode(0))).unwrap();
        for t in 0..40 {
            assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)), "{obs:?}");
            obs = e.step(&Action::Discrete([UP, LEFT, LEFT, DOWN, RIGHT][t % 5])).unwrap().obs;
        }
        assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn fitness_is_final_cell_value_and_inversion_swaps_surface() {
        let mut e = env();
        let stream = RngStream::new(0, 0, 0, Purpose::Episode(0));
        for (mode, surface) in [(SwitchMode::Normal, 0), (SwitchMode::Inverted, 1)] {
            e.set_mode(mode);
            e.reset(&stream).unwrap();
            let mut total = 0.0;
            for t in 0..40 {
                let step = e.step(&Action::Discrete(if t < 3 { UP } else { WAIT })).unwrap();
                total += step.reward;
                assert_eq!(step.done, t == 39);
            }
            assert_eq!(total, e.landscape.value(surface, 10, 7));
        }
    }
}
