//! Flat run configuration. Every key is optional; unset keys take the
//! defaults documented in `docs/config.md`. A file may name a `preset` and
//! override any of its keys.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{BaselineConfig, CmaEsConfig, GaConfig, GesmrConfig, OpenEsConfig, SamrConfig};
use crate::compgraph::{Activation, MlpSpec};
use crate::env::{
    ActionKind, CartPoleConfig, EnvConfig, ExternalConfig, GridConfig, PointMassConfig, SwitchSchedule,
};
use crate::error::{Error, Result};
use crate::evolution::EvoConfig;
use crate::ghn::{GhnConfig, VariationInput};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub name: Option<String>,
    pub env: Option<String>,
    pub algorithm: Option<String>,
    pub switch_generations: Option<Vec<u64>>,
    pub generations: Option<u64>,
    pub population_size: Option<usize>,
    pub elite_size: Option<usize>,
    pub offspring_per_elite: Option<usize>,
    pub episodes_per_eval: Option<usize>,
    pub run_seed: Option<u64>,
    pub checkpoint_every: Option<u64>,
    pub out_dir: Option<String>,
    pub threads: Option<usize>,

    pub policy_hidden: Option<Vec<usize>>,
    pub policy_output_activation: Option<String>,

    pub embed_dim: Option<usize>,
    pub gnn_rounds: Option<usize>,
    pub gnn_hidden: Option<usize>,
    pub det_head_hidden: Option<usize>,
    pub stoch_head_hidden: Option<usize>,
    pub basis_in_dim: Option<usize>,
    pub mutation_heads: Option<usize>,
    pub out_clip: Option<f64>,
    pub param_clip: Option<f64>,
    pub std_clip: Option<f64>,
    pub noise_std: Option<f64>,
    pub variation_input: Option<String>,

    pub sigma: Option<f64>,
    pub learning_rate: Option<f64>,
    pub init_std: Option<f64>,
    pub sigma0: Option<f64>,
    pub decay: Option<f64>,
    pub groups: Option<usize>,
    pub sigma_min: Option<f64>,
    pub sigma_max: Option<f64>,
    pub beta: Option<f64>,
    pub tau: Option<f64>,

    pub grid_size: Option<usize>,
    pub grid_episode_steps: Option<usize>,
    pub grid_landscape_seed: Option<u64>,
    pub grid_secondary_peaks: Option<usize>,
    pub grid_summit_height: Option<f64>,
    pub grid_summit_width: Option<f64>,

    pub cartpole_max_steps: Option<usize>,

    pub pointmass_max_steps: Option<usize>,
    pub pointmass_goal: Option<[f64; 2]>,
    pub pointmass_ctrl_cost: Option<f64>,
    pub pointmass_arena_radius: Option<f64>,

    pub external_command: Option<String>,
    pub external_args: Option<Vec<String>>,
    pub external_obs_dim: Option<usize>,
    pub external_action_kind: Option<String>,
    pub external_action_dim: Option<usize>,
    pub external_max_steps: Option<usize>,
    pub external_score_min: Option<f64>,
    pub external_score_max: Option<f64>,
}

pub const PRESETS: &[&str] = &[
    "cartpole-switch-paper",
    "cartpole-switch-smoke",
    "grid2d-demo",
    "pointmass-ant-surrogate",
    "openes-cartpole-switch",
    "cmaes-cartpole-switch",
    "ga-cartpole-switch",
    "gesmr-cartpole-switch",
    "samr-cartpole-switch",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Algorithm {
    Ghn(GhnConfig),
    Baseline(BaselineConfig),
}

impl Algorithm {
    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::Ghn(_) => "ghn",
            Algorithm::Baseline(b) => b.id(),
        }
    }
}

/// A fully defaulted and validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedRun {
    pub name: String,
    pub env: EnvConfig,
    pub switch_generations: Vec<u64>,
    pub evo: EvoConfig,
    pub policy: MlpSpec,
    pub algorithm: Algorithm,
    pub checkpoint_every: u64,
    pub out_dir: Option<String>,
    pub threads: Option<usize>,
}

impl ResolvedRun {
    pub fn schedule(&self) -> SwitchSchedule {
        SwitchSchedule::alternating(&self.switch_generations).expect("validated at resolve time")
    }
}

impl RunConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let cartpole = |name: &str, switches: Vec<u64>, generations: u64| RunConfig {
            name: Some(name.into()),
            env: Some("cartpole".into()),
            switch_generations: Some(switches),
            generations: Some(generations),
            population_size: Some(30),
            elite_size: Some(10),
            offspring_per_elite: Some(2),
            ..Default::default()
        };
        let baseline = |algorithm: &str| RunConfig {
            algorithm: Some(algorithm.into()),
            ..cartpole(&format!("{algorithm}-cartpole-switch"), vec![600, 1000], 1500)
        };
        Ok(match name {
            "cartpole-switch-paper" => cartpole(name, vec![600, 1000], 1500),
            "cartpole-switch-smoke" => cartpole(name, vec![200, 400], 600),
            "grid2d-demo" => RunConfig {
                name: Some(name.into()),
                env: Some("grid2d".into()),
                switch_generations: Some(vec![200]),
                generations: Some(400),
                population_size: Some(21),
                elite_size: Some(7),
                offspring_per_elite: Some(2),
                ..Default::default()
            },
            "pointmass-ant-surrogate" => RunConfig {
                name: Some(name.into()),
                env: Some("pointmass".into()),
                generations: Some(300),
                population_size: Some(150),
                elite_size: Some(50),
                offspring_per_elite: Some(2),
                mutation_heads: Some(1),
                out_clip: Some(1.0),
                policy_output_activation: Some("tanh".into()),
                ..Default::default()
            },
            "openes-cartpole-switch" => baseline("openes"),
            "cmaes-cartpole-switch" => baseline("cmaes"),
            "ga-cartpole-switch" => baseline("ga"),
            "gesmr-cartpole-switch" => baseline("gesmr"),
            "samr-cartpole-switch" => baseline("samr"),
            other => {
                return Err(Error::config(
                    "preset",
                    format!("unknown preset `{other}`; known: {}", PRESETS.join(", ")),
                ))
            }
        })
    }

    /// Parses TOML text, layering it over its `preset` when one is named.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let own: toml::Table = toml::from_str(text)?;
        // Reject unknown keys before merging.
        let parsed: RunConfig = own.clone().try_into()?;
        let Some(preset) = parsed.preset.as_deref() else {
            return Ok(parsed);
        };
        let mut base = toml::Table::try_from(Self::preset(preset)?)?;
        for (k, v) in own {
            base.insert(k, v);
        }
        Ok(base.try_into()?)
    }

    /// Loads a TOML file, or a preset when `path` is `preset:<name>` or a
    /// bare preset name that is not an existing file.
    pub fn load(path: &Path) -> Result<Self> {
        let s = path.to_string_lossy();
        if let Some(name) = s.strip_prefix("preset:") {
            return Self::preset(name);
        }
        if !path.exists() && PRESETS.contains(&s.as_ref()) {
            return Self::preset(&s);
        }
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn resolve(&self) -> Result<ResolvedRun> {
        let env_name = self.env.clone().unwrap_or_else(|| "cartpole".into());
        let env = self.resolve_env(&env_name)?;
        let spec = match &env {
            EnvConfig::Grid2d(c) => crate::env::GridLandscape::generate(c)?.spec(),
            EnvConfig::Cartpole(c) => c.spec(),
            EnvConfig::Pointmass(c) => c.spec(),
            EnvConfig::External(c) => c.spec(),
        };
        spec.validate()?;
        let switch_generations = self.switch_generations.clone().unwrap_or_default();
        SwitchSchedule::alternating(&switch_generations)?;

        let output_activation = match self.policy_output_activation.as_deref() {
            None => match spec.action_kind {
                ActionKind::Discrete(_) => Activation::Identity,
                ActionKind::Continuous(_) => Activation::Tanh,
            },
            Some("identity") => Activation::Identity,
            Some("tanh") => Activation::Tanh,
            Some(other) => {
                return Err(Error::config(
                    "policy_output_activation",
                    format!("`{other}` is not one of identity, tanh"),
                ))
            }
        };
        let hidden = self.policy_hidden.clone().unwrap_or_else(|| vec![32]);
        let policy = MlpSpec::new(spec.obs_dim, hidden, spec.action_kind.policy_outputs(), output_activation);
        policy
            .validate()
            .map_err(|e| Error::config("policy_hidden", e.to_string()))?;

        let evo = EvoConfig {
            population_size: self.population_size.unwrap_or(30),
            elite_size: self.elite_size.unwrap_or(10),
            offspring_per_elite: self.offspring_per_elite.unwrap_or(2),
            generations: self.generations.unwrap_or(1500),
            episodes_per_eval: self.episodes_per_eval.unwrap_or(1),
            run_seed: self.run_seed.unwrap_or(0),
        };
        let algorithm_name = self.algorithm.clone().unwrap_or_else(|| "ghn".into());
        let algorithm = self.resolve_algorithm(&algorithm_name, &evo, &policy)?;
        match &algorithm {
            Algorithm::Ghn(_) => evo.validate()?,
            Algorithm::Baseline(_) => {
                if evo.generations == 0 {
                    return Err(Error::config("generations", "must be >= 1"));
                }
                if evo.episodes_per_eval == 0 {
                    return Err(Error::config("episodes_per_eval", "must be >= 1"));
                }
            }
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be >= 1"));
        }
        Ok(ResolvedRun {
            name: self.name.clone().unwrap_or_else(|| "run".into()),
            env,
            switch_generations,
            evo,
            policy,
            algorithm,
            checkpoint_every: self.checkpoint_every.unwrap_or(100),
            out_dir: self.out_dir.clone(),
            threads: self.threads,
        })
    }

    fn resolve_env(&self, name: &str) -> Result<EnvConfig> {
        Ok(match name {
            "grid2d" | "grid2d-switch" => {
                let d = GridConfig::default();
                EnvConfig::Grid2d(GridConfig {
                    size: self.grid_size.unwrap_or(d.size),
                    episode_steps: self.grid_episode_steps.unwrap_or(d.episode_steps),
                    landscape_seed: self.grid_landscape_seed.unwrap_or(d.landscape_seed),
                    secondary_peaks: self.grid_secondary_peaks.unwrap_or(d.secondary_peaks),
                    summit_height: self.grid_summit_height.unwrap_or(d.summit_height),
                    summit_width: self.grid_summit_width.unwrap_or(d.summit_width),
                })
            }
            "cartpole" | "cartpole-switch" => {
                let d = CartPoleConfig::default();
                let max_steps = self.cartpole_max_steps.unwrap_or(d.max_steps);
                if max_steps == 0 {
                    return Err(Error::config("cartpole_max_steps", "must be >= 1"));
                }
                EnvConfig::Cartpole(CartPoleConfig { max_steps, ..d })
            }
            "pointmass" | "pointmass-continuous" => {
                let d = PointMassConfig::default();
                let max_steps = self.pointmass_max_steps.unwrap_or(d.max_steps);
                if max_steps == 0 {
                    return Err(Error::config("pointmass_max_steps", "must be >= 1"));
                }
                let arena_radius = self.pointmass_arena_radius.unwrap_or(d.arena_radius);
                if !(arena_radius > 0.0) {
                    return Err(Error::config("pointmass_arena_radius", "must be > 0"));
                }
                EnvConfig::Pointmass(PointMassConfig {
                    max_steps,
                    arena_radius,
                    goal: self.pointmass_goal.unwrap_or(d.goal),
                    ctrl_cost: self.pointmass_ctrl_cost.unwrap_or(d.ctrl_cost),
                    ..d
                })
            }
            "external" => {
                let command = self
                    .external_command
                    .clone()
                    .ok_or_else(|| Error::config("external_command", "required for env = \"external\""))?;
                let obs_dim = self
                    .external_obs_dim
                    .ok_or_else(|| Error::config("external_obs_dim", "required for env = \"external\""))?;
                let dim = self
                    .external_action_dim
                    .ok_or_else(|| Error::config("external_action_dim", "required for env = \"external\""))?;
                let action_kind = match self.external_action_kind.as_deref().unwrap_or("discrete") {
                    "discrete" => ActionKind::Discrete(dim),
                    "continuous" => ActionKind::Continuous(dim),
                    other => {
                        return Err(Error::config(
                            "external_action_kind",
                            format!("`{other}` is not one of discrete, continuous"),
                        ))
                    }
                };
                let max_steps = self
                    .external_max_steps
                    .ok_or_else(|| Error::config("external_max_steps", "required for env = \"external\""))?;
                let lo = self
                    .external_score_min
                    .ok_or_else(|| Error::config("external_score_min", "required for env = \"external\""))?;
                let hi = self
                    .external_score_max
                    .ok_or_else(|| Error::config("external_score_max", "required for env = \"external\""))?;
                if !(lo < hi) {
                    return Err(Error::config("external_score_min", "must be below external_score_max"));
                }
                EnvConfig::External(ExternalConfig {
                    command,
                    args: self.external_args.clone().unwrap_or_default(),
                    obs_dim,
                    action_kind,
                    max_steps,
                    score_range: (lo, hi),
                })
            }
            other => {
                return Err(Error::config(
                    "env",
                    format!("unknown environment `{other}`; known: grid2d, cartpole, pointmass, external"),
                ))
            }
        })
    }

    fn resolve_algorithm(&self, name: &str, evo: &EvoConfig, policy: &MlpSpec) -> Result<Algorithm> {
        let lambda = evo.population_size;
        let elite = evo.elite_size;
        let algorithm = match name {
            "ghn" => {
                let d = GhnConfig::with_policy(policy.clone());
                let embed_dim = self.embed_dim.unwrap_or(d.embed_dim);
                let variation_input = match self.variation_input.as_deref() {
                    None | Some("post_gnn") => VariationInput::PostGnn,
                    Some("embedding") => VariationInput::Embedding,
                    Some(other) => {
                        return Err(Error::config(
                            "variation_input",
                            format!("`{other}` is not one of post_gnn, embedding"),
                        ))
                    }
                };
                let cfg = GhnConfig {
                    embed_dim,
                    gnn_rounds: self.gnn_rounds.unwrap_or(d.gnn_rounds),
                    gnn_hidden: self.gnn_hidden.unwrap_or(embed_dim),
                    det_head_hidden: self.det_head_hidden.unwrap_or(d.det_head_hidden),
                    stoch_head_hidden: self.stoch_head_hidden.unwrap_or(d.stoch_head_hidden),
                    basis_in_dim: self.basis_in_dim.unwrap_or(d.basis_in_dim),
                    mutation_heads: self.mutation_heads.unwrap_or(d.mutation_heads),
                    out_clip: self.out_clip.unwrap_or(d.out_clip),
                    param_clip: self.param_clip.unwrap_or(d.param_clip),
                    std_clip: self.std_clip.unwrap_or(d.std_clip),
                    noise_std: self.noise_std.unwrap_or(d.noise_std),
                    variation_input,
                    policy_spec: policy.clone(),
                };
                cfg.validate()?;
                Algorithm::Ghn(cfg)
            }
            "openes" => {
                let d = OpenEsConfig::default();
                Algorithm::Baseline(BaselineConfig::Openes(OpenEsConfig {
                    population_size: lambda,
                    sigma: self.sigma.unwrap_or(d.sigma),
                    learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
                    init_std: self.init_std.unwrap_or(d.init_std),
                }))
            }
            "cmaes" => {
                let d = CmaEsConfig::default();
                Algorithm::Baseline(BaselineConfig::Cmaes(CmaEsConfig {
                    population_size: lambda,
                    sigma0: self.sigma0.unwrap_or(d.sigma0),
                    init_std: self.init_std.unwrap_or(d.init_std),
                }))
            }
            "ga" => {
                let d = GaConfig::default();
                Algorithm::Baseline(BaselineConfig::Ga(GaConfig {
                    population_size: lambda,
                    elite_size: elite,
                    sigma0: self.sigma0.unwrap_or(d.sigma0),
                    decay: self.decay.unwrap_or(d.decay),
                    init_std: self.init_std.unwrap_or(d.init_std),
                }))
            }
            "gesmr" => {
                let d = GesmrConfig::default();
                Algorithm::Baseline(BaselineConfig::Gesmr(GesmrConfig {
                    population_size: lambda,
                    elite_size: elite,
                    groups: self.groups.unwrap_or(d.groups),
                    sigma_init: self.sigma0.unwrap_or(d.sigma_init),
                    sigma_min: self.sigma_min.unwrap_or(d.sigma_min),
                    sigma_max: self.sigma_max.unwrap_or(d.sigma_max),
                    beta: self.beta.unwrap_or(d.beta),
                    init_std: self.init_std.unwrap_or(d.init_std),
                    param_clip: self.param_clip.unwrap_or(d.param_clip),
                }))
            }
            "samr" => {
                let d = SamrConfig::default();
                Algorithm::Baseline(BaselineConfig::Samr(SamrConfig {
                    population_size: lambda,
                    elite_size: elite,
                    sigma0: self.sigma0.unwrap_or(d.sigma0),
                    tau: self.tau.or(d.tau),
                    init_std: self.init_std.unwrap_or(d.init_std),
                    param_clip: self.param_clip.unwrap_or(d.param_clip),
                }))
            }
            other => {
                return Err(Error::config(
                    "algorithm",
                    format!("unknown algorithm `{other}`; known: ghn, openes, cmaes, ga, gesmr, samr"),
                ))
            }
        };
        if let Algorithm::Baseline(b) = &algorithm {
            // Constructing once surfaces constraint violations with their key.
            b.build(policy.param_count(), 0)?;
        }
        Ok(algorithm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cartpole_switch_preset_values() {
        let r = RunConfig::preset("cartpole-switch-paper").unwrap().resolve().unwrap();
        assert_eq!(r.evo.generations, 1500);
        assert_eq!(r.switch_generations, vec![600, 1000]);
        assert_eq!((r.evo.population_size, r.evo.elite_size, r.evo.offspring_per_elite), (30, 10, 2));
        assert_eq!(r.policy.arch_name(), "mlp:4-32-2:tanh:identity");
        assert_eq!(r.algorithm.id(), "ghn");
    }

    #[test]
    fn every_preset_resolves() {
        for name in PRESETS {
            let r = RunConfig::preset(name).unwrap().resolve().unwrap();
            assert_eq!(&r.name, name);
        }
        let ant = RunConfig::preset("pointmass-ant-surrogate").unwrap().resolve().unwrap();
        let Algorithm::Ghn(g) = ant.algorithm else { panic!() };
        assert_eq!((g.mutation_heads, g.out_clip), (1, 1.0));
        assert_eq!(g.policy_spec.output_activation, Activation::Tanh);
    }

    #[test]
    fn file_overrides_preset() {
        let c = RunConfig::from_toml_str("preset = \"grid2d-demo\"\ngenerations = 50\n").unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.evo.generations, 50);
        assert_eq!(r.evo.population_size, 21);
    }

    #[test]
    fn errors_name_the_offending_key() {
        let key_of = |text: &str| match RunConfig::from_toml_str(text).and_then(|c| c.resolve()) {
            Err(Error::InvalidConfig { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key_of("population_size = 31"), "population_size");
        assert_eq!(key_of("gnn_hidden = 16"), "gnn_hidden");
        assert_eq!(key_of("env = \"mujoco\""), "env");
        assert_eq!(key_of("switch_generations = [10, 5]"), "switch_generations");
        assert_eq!(key_of("algorithm = \"openes\"\npopulation_size = 31"), "population_size");
        assert_eq!(key_of("algorithm = \"gesmr\"\ngroups = 7"), "groups");
        assert_eq!(key_of("env = \"external\""), "external_command");
        let unknown = RunConfig::from_toml_str("populaton_size = 30");
        assert!(unknown.unwrap_err().to_string().contains("populaton_size"));
    }

    #[test]
    fn toml_round_trip() {
        let c = RunConfig::preset("cartpole-switch-smoke").unwrap();
        assert_eq!(RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
    }
}
