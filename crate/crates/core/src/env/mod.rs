//! Episodic environments with generation-indexed output inversion.

mod cartpole;
mod external;
mod grid2d;
mod pointmass;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use cartpole::{CartPole, CartPoleConfig, CartPoleState};
pub use external::{ExternalConfig, ExternalEnv, WireMessage};
pub use grid2d::{Grid2d, GridConfig, GridLandscape, Peak, DOWN, LEFT, RIGHT, UP, WAIT};
pub use pointmass::{PointMass, PointMassConfig};

use crate::error::{Error, Result};
use crate::nn::{ForwardBuffers, PolicyNet};
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionKind {
    Discrete(usize),
    Continuous(usize),
}

impl ActionKind {
    /// Number of policy outputs needed to drive this action space.
    pub fn policy_outputs(self) -> usize {
        match self {
            ActionKind::Discrete(n) | ActionKind::Continuous(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub obs_dim: usize,
    pub action_kind: ActionKind,
    pub max_steps: usize,
    pub score_range: (f64, f64),
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.action_kind.policy_outputs() == 0 || self.max_steps == 0 {
            return Err(Error::config("env", "dimensions and max_steps must be >= 1"));
        }
        if !(self.score_range.0 < self.score_range.1) {
            return Err(Error::config("env", "score_range min must be below max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwitchMode {
    Normal,
    Inverted,
}

/// Generation-indexed sequence of output interpretations.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchSchedule {
    entries: Vec<(u64, SwitchMode)>,
}

impl SwitchSchedule {
    pub fn new(entries: Vec<(u64, SwitchMode)>) -> Result<Self> {
        match entries.first() {
            Some((0, SwitchMode::Normal)) => {}
            _ => {
                return Err(Error::config(
                    "switch_generations",
                    "schedule must start at generation 0 in normal mode",
                ))
            }
        }
        if entries.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::config(
                "switch_generations",
                "switch generations must be strictly increasing",
            ));
        }
        Ok(Self { entries })
    }

    pub fn constant() -> Self {
        Self {
            entries: vec![(0, SwitchMode::Normal)],
        }
    }

    /// Alternates Normal/Inverted, flipping at each listed generation.
    pub fn alternating(switches: &[u64]) -> Result<Self> {
        let mut entries = vec![(0, SwitchMode::Normal)];
        let mut mode = SwitchMode::Normal;
        for &g in switches {
            mode = match mode {
                SwitchMode::Normal => SwitchMode::Inverted,
                SwitchMode::Inverted => SwitchMode::Normal,
            };
            entries.push((g, mode));
        }
        Self::new(entries)
    }

    pub fn entries(&self) -> &[(u64, SwitchMode)] {
        &self.entries
    }

    pub fn switch_generations(&self) -> Vec<u64> {
        self.entries.iter().skip(1).map(|e| e.0).collect()
    }

    pub fn phase_index(&self, generation: u64) -> usize {
        self.entries
            .iter()
            .rposition(|(start, _)| *start <= generation)
            .unwrap_or(0)
    }

    pub fn mode_at(&self, generation: u64) -> SwitchMode {
        self.entries[self.phase_index(generation)].1
    }
}

/// Inverted discrete actions are executed in reverse order.
pub fn remap_discrete(action: usize, n: usize, mode: SwitchMode) -> usize {
    match mode {
        SwitchMode::Normal => action,
        SwitchMode::Inverted => n - 1 - action,
    }
}

/// Inverted continuous actions are negated.
pub fn remap_continuous(action: &[f64], mode: SwitchMode) -> Vec<f64> {
    match mode {
        SwitchMode::Normal => action.to_vec(),
        SwitchMode::Inverted => action.iter().map(|a| -a).collect(),
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    fn mode(&self) -> SwitchMode;

    fn set_mode(&mut self, mode: SwitchMode);

    fn reset(&mut self, stream: &RngStream) -> Result<Vec<f64>>;

    fn step(&mut self, action: &Action) -> Result<Step>;

    /// Point recorded in trajectories (e.g. grid cell or cart state).
    fn trace_point(&self) -> Vec<f64>;
}

pub fn apply_switch(env: &mut dyn Environment, schedule: &SwitchSchedule, generation: u64) {
    env.set_mode(schedule.mode_at(generation));
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Grid2d(GridConfig),
    Cartpole(CartPoleConfig),
    Pointmass(PointMassConfig),
    External(ExternalConfig),
}

impl EnvConfig {
    pub fn id(&self) -> &'static str {
        match self {
            EnvConfig::Grid2d(_) => "grid2d-switch",
            EnvConfig::Cartpole(_) => "cartpole-switch",
            EnvConfig::Pointmass(_) => "pointmass-continuous",
            EnvConfig::External(_) => "external",
        }
    }

    pub fn factory(&self) -> Result<EnvFactory> {
        let inner = match self {
            EnvConfig::Grid2d(c) => FactoryKind::Grid(Arc::new(GridLandscape::generate(c)?)),
            EnvConfig::Cartpole(c) => FactoryKind::Cartpole(c.clone()),
            EnvConfig::Pointmass(c) => FactoryKind::Pointmass(c.clone()),
            EnvConfig::External(c) => {
                c.spec().validate()?;
                FactoryKind::External(c.clone())
            }
        };
        Ok(EnvFactory { inner })
    }
}

#[derive(Debug, Clone)]
enum FactoryKind {
    Grid(Arc<GridLandscape>),
    Cartpole(CartPoleConfig),
    Pointmass(PointMassConfig),
    External(ExternalConfig),
}

/// Produces one fresh environment per rollout.
#[derive(Debug, Clone)]
pub struct EnvFactory {
    inner: FactoryKind,
}

impl EnvFactory {
    pub fn make(&self) -> Result<Box<dyn Environment>> {
        Ok(match &self.inner {
            FactoryKind::Grid(l) => Box::new(Grid2d::new(l.clone())),
            FactoryKind::Cartpole(c) => Box::new(CartPole::new(c.clone())),
            FactoryKind::Pointmass(c) => Box::new(PointMass::new(c.clone())),
            FactoryKind::External(c) => Box::new(ExternalEnv::spawn(c.clone())?),
        })
    }

    pub fn spec(&self) -> EnvSpec {
        match &self.inner {
            FactoryKind::Grid(l) => l.spec(),
            FactoryKind::Cartpole(c) => c.spec(),
            FactoryKind::Pointmass(c) => c.spec(),
            FactoryKind::External(c) => c.spec(),
        }
    }

    pub fn landscape(&self) -> Option<&GridLandscape> {
        match &self.inner {
            FactoryKind::Grid(l) => Some(l),
            _ => None,
        }
    }
}

/// Discrete outputs pick the arg-max (lowest index on ties); continuous
/// outputs are clamped to `[-1, 1]`.
pub fn decode_action(kind: ActionKind, outputs: &[f64]) -> Action {
    match kind {
        ActionKind::Discrete(_) => {
            let mut best = 0;
            for (i, &x) in outputs.iter().enumerate() {
                if x > outputs[best] {
                    best = i;
                }
            }
            Action::Discrete(best)
        }
        ActionKind::Continuous(_) => {
            Action::Continuous(outputs.iter().map(|x| x.clamp(-1.0, 1.0)).collect())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub score: f64,
    pub steps: usize,
    /// Trace points from reset to the final state, when recorded.
    pub trajectory: Option<Vec<Vec<f64>>>,
}

pub fn rollout(
    policy: &PolicyNet,
    env: &mut dyn Environment,
    stream: &RngStream,
    record: bool,
) -> Result<EpisodeOutcome> {
    let kind = env.spec().action_kind;
    let max_steps = env.spec().max_steps;
    let mut buf = ForwardBuffers::default();
    let mut obs = env.reset(stream)?;
    let mut trajectory = record.then(|| vec![env.trace_point()]);
    let mut score = 0.0;
    let mut steps = 0;
    while steps < max_steps {
        let out = policy.forward_with(&obs, &mut buf)?;
        let step = env.step(&decode_action(kind, out))?;
        steps += 1;
        score += step.reward;
        if let Some(t) = trajectory.as_mut() {
            t.push(env.trace_point());
        }
        if step.done {
            break;
        }
        obs = step.obs;
    }
    Ok(EpisodeOutcome {
        score,
        steps,
        trajectory,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_switch_schedule() {
        let s = SwitchSchedule::alternating(&[600, 1000]).unwrap();
        assert_eq!(s.mode_at(0), SwitchMode::Normal);
        assert_eq!(s.mode_at(599), SwitchMode::Normal);
        assert_eq!(s.mode_at(600), SwitchMode::Inverted);
        assert_eq!(s.mode_at(999), SwitchMode::Inverted);
        assert_eq!(s.mode_at(1000), SwitchMode::Normal);
        assert_eq!(s.phase_index(1499), 2);
        assert_eq!(s.switch_generations(), vec![600, 1000]);
    }

    #[test]
    fn schedule_validation() {
        assert!(SwitchSchedule::new(vec![(5, SwitchMode::Normal)]).is_err());
        assert!(SwitchSchedule::new(vec![(0, SwitchMode::Inverted)]).is_err());
        assert!(SwitchSchedule::alternating(&[10, 10]).is_err());
    }

    #[test]
    fn discrete_remaps() {
        assert_eq!(remap_discrete(1, 2, SwitchMode::Inverted), 0);
        assert_eq!(remap_discrete(0, 4, SwitchMode::Inverted), 3);
        assert_eq!(remap_discrete(2, 4, SwitchMode::Normal), 2);
        for n in [2usize, 4] {
            for a in 0..n {
                let twice = remap_discrete(remap_discrete(a, n, SwitchMode::Inverted), n, SwitchMode::Inverted);
                assert_eq!(twice, a);
            }
        }
    }

    #[test]
    fn continuous_remap_negates() {
        assert_eq!(remap_continuous(&[0.5, -1.0], SwitchMode::Inverted), vec![-0.5, 1.0]);
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(decode_action(ActionKind::Discrete(3), &[0.2, 0.7, 0.7]), Action::Discrete(1));
        assert_eq!(
            decode_action(ActionKind::Continuous(2), &[3.0, -0.2]),
            Action::Continuous(vec![1.0, -0.2])
        );
    }
}
