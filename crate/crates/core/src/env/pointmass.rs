//! A 2-D point mass driven by a bounded thrust vector toward a fixed goal.
//! Stands in for continuous-control locomotion tasks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{remap_continuous, Action, ActionKind, EnvSpec, Environment, Step, SwitchMode};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PointMassConfig {
    pub max_steps: usize,
    pub dt: f64,
    /// Per-step velocity retention factor.
    pub drag: f64,
    pub thrust: f64,
    pub ctrl_cost: f64,
    pub goal: [f64; 2],
    pub start_noise: f64,
    /// The episode ends once the mass is farther than this from the origin.
    pub arena_radius: f64,
}

impl Default for PointMassConfig {
    fn default() -> Self {
        Self {
            max_steps: 200,
            dt: 0.1,
            drag: 0.9,
            thrust: 1.0,
            ctrl_cost: 0.01,
            goal: [4.0, 3.0],
            start_noise: 0.1,
            arena_radius: 7.5,
        }
    }
}

impl PointMassConfig {
    pub fn spec(&self) -> EnvSpec {
        let v_max = self.dt * self.thrust / (1.0 - self.drag).max(1e-9);
        let steps = self.max_steps as f64;
        // Receding from the goal is bounded by the distance travelled and by
        // how far past the arena edge the final step can reach.
        let travel = steps * self.dt * v_max * std::f64::consts::SQRT_2;
        let arena = self.arena_radius + self.start_noise * std::f64::consts::SQRT_2 + self.dt * v_max * std::f64::consts::SQRT_2;
        let worst = travel.min(arena) + steps * 2.0 * self.ctrl_cost;
        let best = (self.goal[0].abs() + self.start_noise).hypot(self.goal[1].abs() + self.start_noise);
        EnvSpec {
            obs_dim: 8,
            action_kind: ActionKind::Continuous(2),
            max_steps: self.max_steps,
            score_range: (-worst, best),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointMass {
    config: PointMassConfig,
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
    steps: usize,
    mode: SwitchMode,
}

impl PointMass {
    pub fn new(config: PointMassConfig) -> Self {
        Self {
            spec: config.spec(),
            config,
            pos: [0.0; 2],
            vel: [0.0; 2],
            steps: 0,
            mode: SwitchMode::Normal,
        }
    }

    pub fn velocity(&self) -> [f64; 2] {
        self.vel
    }

    pub fn set_velocity(&mut self, vel: [f64; 2]) {
        self.vel = vel;
    }

    fn distance(&self) -> f64 {
        (self.config.goal[0] - self.pos[0]).hypot(self.config.goal[1] - self.pos[1])
    }

    fn obs(&self) -> Vec<f64> {
        let g = self.config.goal;
        vec![
            self.pos[0],
            self.pos[1],
            self.vel[0],
            self.vel[1],
            g[0] - self.pos[0],
            g[1] - self.pos[1],
            self.distance(),
            self.steps as f64 / self.config.max_steps as f64,
        ]
    }
}

impl Environment for PointMass {
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
        let n = self.config.start_noise;
        self.pos = [rng.random_range(-n..=n), rng.random_range(-n..=n)];
        self.vel = [0.0; 2];
        self.steps = 0;
        Ok(self.obs())
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let a = match action {
            Action::Continuous(a) if a.len() == 2 && a.iter().all(|x| x.abs() <= 1.0) => {
                remap_continuous(a, self.mode)
            }
            other => {
                return Err(Error::ActionOutOfRange(format!(
                    "{other:?} for Continuous(2) in [-1, 1]"
                )))
            }
        };
        let c = &self.config;
        let before = self.distance();
        for i in 0..2 {
            self.vel[i] = c.drag * self.vel[i] + c.dt * c.thrust * a[i];
            self.pos[i] += c.dt * self.vel[i];
        }
        self.steps += 1;
        let reward = before - self.distance() - c.ctrl_cost * (a[0] * a[0] + a[1] * a[1]);
        Ok(Step {
            obs: self.obs(),
            reward,
            done: self.steps >= c.max_steps || self.pos[0].hypot(self.pos[1]) > c.arena_radius,
        })
    }

    fn trace_point(&self) -> Vec<f64> {
        self.pos.to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Purpose;

    #[test]
    fn zero_thrust_only_drags() {
        let mut env = PointMass::new(PointMassConfig::default());
        env.reset(&RngStream::new(0, 0, 0, Purpose::Episode(0))).unwrap();
        env.set_velocity([0.5, -0.2]);
        env.step(&Action::Continuous(vec![0.0, 0.0])).unwrap();
        assert_eq!(env.velocity(), [0.9 * 0.5, 0.9 * -0.2]);
    }

    #[test]
    fn inverted_mode_negates_thrust() {
        let mut env = PointMass::new(PointMassConfig::default());
        env.reset(&RngStream::new(0, 0, 0, Purpose::Episode(0))).unwrap();
        env.set_mode(SwitchMode::Inverted);
        env.step(&Action::Continuous(vec![1.0, 0.0])).unwrap();
        assert!(env.velocity()[0] < 0.0);
    }

    #[test]
    fn leaving_the_arena_ends_the_episode() {
        let mut env = PointMass::new(PointMassConfig {
            arena_radius: 0.5,
            ..Default::default()
        });
        env.reset(&RngStream::new(0, 0, 0, Purpose::Episode(0))).unwrap();
        let mut score = 0.0;
        let mut steps = 0;
        loop {
            let s = env.step(&Action::Continuous(vec![-1.0, -1.0])).unwrap();
            score += s.reward;
            steps += 1;
            if s.done {
                break;
            }
        }
        assert!(steps < 200);
        assert!(env.pos[0].hypot(env.pos[1]) > 0.5);
        assert!(score >= env.spec().score_range.0, "{score}");
    }

    #[test]
    fn rejects_out_of_range() {
        let mut env = PointMass::new(PointMassConfig::default());
        assert!(env.step(&Action::Continuous(vec![1.5, 0.0])).is_err());
        assert!(env.step(&Action::Discrete(0)).is_err());
    }

    #[test]
    fn heading_to_goal_scores_within_range() {
        let mut env = PointMass::new(PointMassConfig::default());
        env.reset(&RngStream::new(0, 0, 0, Purpose::Episode(0))).unwrap();
        let mut score = 0.0;
        loop {
            let o = env.obs();
            let (dx, dy) = (o[4], o[5]);
            let d = dx.hypot(dy).max(1e-9);
            // Brake with the velocity once close.
            let a = [dx / d - o[2], dy / d - o[3]].map(|v: f64| v.clamp(-1.0, 1.0));
            let s = env.step(&Action::Continuous(a.to_vec())).unwrap();
            score += s.reward;
            if s.done {
                break;
            }
        }
        let (lo, hi) = env.spec().score_range;
        assert!(score > 3.0 && score <= hi && score >= lo, "{score}");
    }
}
