//! CartPole with the classic-control constants and Euler integration.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{remap_discrete, Action, ActionKind, EnvSpec, Environment, Step, SwitchMode};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CartPoleConfig {
    pub gravity: f64,
    pub cart_mass: f64,
    pub pole_mass: f64,
    /// Half the pole length.
    pub half_length: f64,
    pub force: f64,
    pub tau: f64,
    pub theta_threshold: f64,
    pub x_threshold: f64,
    pub max_steps: usize,
}

impl Default for CartPoleConfig {
    fn default() -> Self {
        Self {
            gravity: 9.8,
            cart_mass: 1.0,
            pole_mass: 0.1,
            half_length: 0.5,
            force: 10.0,
            tau: 0.02,
            theta_threshold: 12.0 * 2.0 * std::f64::consts::PI / 360.0,
            x_threshold: 2.4,
            max_steps: 500,
        }
    }
}

impl CartPoleConfig {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: 4,
            action_kind: ActionKind::Discrete(2),
            max_steps: self.max_steps,
            score_range: (0.0, self.max_steps as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    pub theta: f64,
    pub theta_dot: f64,
}

#[derive(Debug, Clone)]
pub struct CartPole {
    config: CartPoleConfig,
    spec: EnvSpec,
    state: CartPoleState,
    steps: usize,
    mode: SwitchMode,
}

impl CartPole {
    pub fn new(config: CartPoleConfig) -> Self {
        Self {
            spec: config.spec(),
            config,
            state: CartPoleState::default(),
            steps: 0,
            mode: SwitchMode::Normal,
        }
    }

    pub fn state(&self) -> CartPoleState {
        self.state
    }

    pub fn set_state(&mut self, state: CartPoleState) {
        self.state = state;
    }

    /// One Euler step under horizontal force `force`.
    pub fn integrate(config: &CartPoleConfig, s: CartPoleState, force: f64) -> CartPoleState {
        let total_mass = config.cart_mass + config.pole_mass;
        let pole_mass_length = config.pole_mass * config.half_length;
        let (sin, cos) = s.theta.sin_cos();
        let temp = (force + pole_mass_length * s.theta_dot * s.theta_dot * sin) / total_mass;
        let theta_acc = (config.gravity * sin - cos * temp)
            / (config.half_length * (4.0 / 3.0 - config.pole_mass * cos * cos / total_mass));
        let x_acc = temp - pole_mass_length * theta_acc * cos / total_mass;
        CartPoleState {
            x: s.x + config.tau * s.x_dot,
            x_dot: s.x_dot + config.tau * x_acc,
            theta: s.theta + config.tau * s.theta_dot,
            theta_dot: s.theta_dot + config.tau * theta_acc,
        }
    }

    fn obs(&self) -> Vec<f64> {
        let s = self.state;
        vec![s.x, s.x_dot, s.theta, s.theta_dot]
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn mode(&self) -> SwitchMode {
        self.mode
    }

    fn set_mode(&mut self, mode: SwitchMode) {
        self.mode = mode;
    }

    fn reset(&mut self, stream: &RngStream) -> Result<Vec<f64>> {
        let mut rng = stream.rng();
        let mut u = || rng.random_range(-0.05..=0.05);
        self.state = CartPoleState {
            x: u(),
            x_dot: u(),
            theta: u(),
            theta_dot: u(),
        };
        self.steps = 0;
        Ok(self.obs())
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let a = match action {
            Action::Discrete(a) if *a < 2 => *a,
            other => return Err(Error::ActionOutOfRange(format!("{other:?} for Discrete(2)"))),
        };
        let executed = remap_discrete(a, 2, self.mode);
        let force = if executed == 1 {
            self.config.force
        } else {
            -self.config.force
        };
        self.state = Self::integrate(&self.config, self.state, force);
        self.steps += 1;
        let s = self.state;
        let failed = s.x.abs() > self.config.x_threshold || s.theta.abs() > self.config.theta_threshold;
        Ok(Step {
            obs: self.obs(),
            reward: 1.0,
            done: failed || self.steps >= self.config.max_steps,
        })
    }

    fn trace_point(&self) -> Vec<f64> {
        self.obs()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    /// Solves the coupled cart/pole equations of motion as a 2x2 linear
    /// system in (x_acc, theta_acc) by Cramer's rule:
    ///   (M + m) x_acc + m l cosθ theta_acc = F + m l θ'² sinθ
    ///   cosθ x_acc + (4/3) l theta_acc     = g sinθ
    fn oracle_step(c: &CartPoleConfig, s: CartPoleState, force: f64) -> CartPoleState {
        let (m, mc, l, g) = (c.pole_mass, c.cart_mass, c.half_length, c.gravity);
        let a11 = mc + m;
        let a12 = m * l * s.theta.cos();
        let a21 = s.theta.cos();
        let a22 = 4.0 / 3.0 * l;
        let r1 = force + m * l * s.theta_dot.powi(2) * s.theta.sin();
        let r2 = g * s.theta.sin();
        let det = a11 * a22 - a12 * a21;
        let x_acc = (r1 * a22 - a12 * r2) / det;
        let theta_acc = (a11 * r2 - a21 * r1) / det;
        CartPoleState {
            x: s.x + c.tau * s.x_dot,
            x_dot: s.x_dot + c.tau * x_acc,
            theta: s.theta + c.tau * s.theta_dot,
            theta_dot: s.theta_dot + c.tau * theta_acc,
        }
    }

    #[test]
    fn one_step_matches_oracle() {
        let c = CartPoleConfig::default();
        let s0 = CartPoleState {
            theta: 0.01,
            ..Default::default()
        };
        let mut env = CartPole::new(c.clone());
        env.set_state(s0);
        env.step(&Action::Discrete(1)).unwrap();
        let got = env.state();
        let want = oracle_step(&c, s0, 10.0);
        for (a, b) in [
            (got.x, want.x),
            (got.x_dot, want.x_dot),
            (got.theta, want.theta),
            (got.theta_dot, want.theta_dot),
        ] {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn inversion_flips_force() {
        let c = CartPoleConfig::default();
        let s0 = CartPoleState::default();
        let mut env = CartPole::new(c.clone());
        env.set_state(s0);
        env.step(&Action::Discrete(0)).unwrap();
        assert_eq!(env.state(), CartPole::integrate(&c, s0, -10.0));

        env.set_mode(SwitchMode::Inverted);
        env.set_state(s0);
        env.step(&Action::Discrete(0)).unwrap();
        assert_eq!(env.state(), CartPole::integrate(&c, s0, 10.0));
    }

    #[test]
    fn reset_is_small_uniform_and_replayable() {
        let mut env = CartPole::new(CartPoleConfig::default());
        let stream = RngStream::new(1, 2, 3, Purpose::Episode(0));
        let a = env.reset(&stream).unwrap();
        assert!(a.iter().all(|x| x.abs() <= 0.05));
        assert_eq!(a, env.reset(&stream).unwrap());
    }

    #[test]
    fn rejects_bad_action() {
        let mut env = CartPole::new(CartPoleConfig::default());
        assert!(env.step(&Action::Discrete(2)).is_err());
        assert!(env.step(&Action::Continuous(vec![0.0])).is_err());
    }

    #[test]
    fn episode_ends_at_max_steps_or_failure() {
        let mut env = CartPole::new(CartPoleConfig::default());
        env.reset(&RngStream::new(0, 0, 0, Purpose::Episode(0))).unwrap();
        let mut steps = 0;
        loop {
            steps += 1;
            if env.step(&Action::Discrete(1)).unwrap().done {
                break;
            }
        }
        // Pushing one way always fails well before 500 steps.
        assert!(steps < 100);
        assert!(env.state().theta.abs() > env.config.theta_threshold || env.state().x.abs() > 2.4);
    }
}
