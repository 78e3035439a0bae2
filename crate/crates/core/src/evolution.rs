//! Truncation-selection population loop over self-referential GHNs.

use std::collections::HashMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{rollout, EnvFactory, SwitchMode, SwitchSchedule};
use crate::error::{Error, Result};
use crate::ghn::{init_ghn, Ghn, GhnModel};
use crate::nn::PolicyNet;
use crate::rng::{Purpose, RngStream};
use crate::variation::{make_offspring, FixedBasis, MutationReport};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvoConfig {
    pub population_size: usize,
    pub elite_size: usize,
    pub offspring_per_elite: usize,
    pub generations: u64,
    pub episodes_per_eval: usize,
    pub run_seed: u64,
}

impl EvoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.elite_size == 0 {
            return Err(Error::config("elite_size", "must be >= 1"));
        }
        if self.offspring_per_elite == 0 {
            return Err(Error::config("offspring_per_elite", "must be >= 1"));
        }
        if self.population_size != self.elite_size * (self.offspring_per_elite + 1) {
            return Err(Error::config(
                "population_size",
                format!(
                    "must equal elite_size * (offspring_per_elite + 1) = {}",
                    self.elite_size * (self.offspring_per_elite + 1)
                ),
            ));
        }
        if self.generations == 0 {
            return Err(Error::config("generations", "must be >= 1"));
        }
        if self.episodes_per_eval == 0 {
            return Err(Error::config("episodes_per_eval", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenealogyRecord {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub birth_generation: u64,
    pub fitness_history: Vec<(u64, f64)>,
    pub mean_mutation_rate: Option<f64>,
}

impl GenealogyRecord {
    pub fn final_fitness(&self) -> Option<f64> {
        self.fitness_history.last().map(|f| f.1)
    }
}

/// Append-only record of every individual ever created.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<GenealogyRecord>", into = "Vec<GenealogyRecord>")]
pub struct Genealogy {
    records: Vec<GenealogyRecord>,
    index: HashMap<u64, usize>,
}

impl From<Vec<GenealogyRecord>> for Genealogy {
    fn from(records: Vec<GenealogyRecord>) -> Self {
        let index = records.iter().enumerate().map(|(i, r)| (r.id, i)).collect();
        Self { records, index }
    }
}

impl From<Genealogy> for Vec<GenealogyRecord> {
    fn from(g: Genealogy) -> Self {
        g.records
    }
}

impl Genealogy {
    pub fn push(&mut self, record: GenealogyRecord) {
        self.index.insert(record.id, self.records.len());
        self.records.push(record);
    }

    pub fn records(&self) -> &[GenealogyRecord] {
        &self.records
    }

    pub fn get(&self, id: u64) -> Option<&GenealogyRecord> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn record_fitness(&mut self, id: u64, generation: u64, fitness: f64) {
        if let Some(&i) = self.index.get(&id) {
            self.records[i].fitness_history.push((generation, fitness));
        }
    }

    /// Checks that every parent exists and was born strictly earlier.
    pub fn validate(&self) -> Result<()> {
        for r in &self.records {
            match (r.parent_id, r.birth_generation) {
                (None, 0) => {}
                (None, g) => {
                    return Err(Error::CorruptGenealogy(format!("root {} born at generation {g}", r.id)))
                }
                (Some(p), g) => {
                    let parent = self
                        .get(p)
                        .ok_or_else(|| Error::CorruptGenealogy(format!("{} has missing parent {p}", r.id)))?;
                    if parent.birth_generation >= g {
                        return Err(Error::CorruptGenealogy(format!(
                            "parent {p} born at {} is not older than child {} born at {g}",
                            parent.birth_generation, r.id
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Chain from the root ancestor down to `champion_id`.
pub fn champion_lineage(genealogy: &Genealogy, champion_id: u64) -> Result<Vec<GenealogyRecord>> {
    let mut chain = Vec::new();
    let mut cursor = Some(champion_id);
    while let Some(id) = cursor {
        let r = genealogy
            .get(id)
            .ok_or_else(|| Error::CorruptGenealogy(format!("unknown individual {id}")))?;
        if chain.len() > genealogy.len() {
            return Err(Error::CorruptGenealogy(format!("cycle through {id}")));
        }
        chain.push(r.clone());
        cursor = r.parent_id;
    }
    chain.reverse();
    Ok(chain)
}

/// `(id, generation, fitness)` of the highest fitness ever recorded.
/// Ties go to the earlier generation, then the lower id.
pub fn best_ever(genealogy: &Genealogy) -> Option<(u64, u64, f64)> {
    let mut best: Option<(u64, u64, f64)> = None;
    for r in genealogy.records() {
        for &(g, f) in &r.fitness_history {
            let better = match best {
                None => true,
                Some((bid, bg, bf)) => f > bf || (f == bf && (g, r.id) < (bg, bid)),
            };
            if better {
                best = Some((r.id, g, f));
            }
        }
    }
    best
}

/// Best individual evaluated at `generation` (lowest id on ties).
pub fn best_at(genealogy: &Genealogy, generation: u64) -> Option<(u64, f64)> {
    let mut best: Option<(u64, f64)> = None;
    for r in genealogy.records() {
        if let Some(&(_, f)) = r.fitness_history.iter().find(|(g, _)| *g == generation) {
            if best.is_none_or(|(bid, bf)| f > bf || (f == bf && r.id < bid)) {
                best = Some((r.id, f));
            }
        }
    }
    best
}

/// Indices of the `e` highest fitnesses, best first. NaN ranks below
/// everything; equal fitness goes to the lower id.
pub fn select_elites(fitnesses: &[f64], ids: &[u64], e: usize) -> Result<Vec<usize>> {
    if e > fitnesses.len() {
        return Err(Error::EliteTooLarge {
            elite: e,
            population: fitnesses.len(),
        });
    }
    if ids.len() != fitnesses.len() {
        return Err(Error::DimensionMismatch {
            expected: fitnesses.len(),
            actual: ids.len(),
        });
    }
    let key = |f: f64| if f.is_nan() { f64::NEG_INFINITY } else { f };
    let mut order: Vec<usize> = (0..fitnesses.len()).collect();
    order.sort_by(|&a, &b| {
        key(fitnesses[b])
            .total_cmp(&key(fitnesses[a]))
            .then(ids[a].cmp(&ids[b]))
    });
    order.truncate(e);
    Ok(order)
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    crate::nn::lane_sum(a, b, |x, y| (x - y) * (x - y)).sqrt()
}

/// Mean Euclidean distance over all unordered pairs of genomes.
pub fn mean_pairwise_distance<V: AsRef<[f64]> + Sync>(genomes: &[V]) -> Result<f64> {
    let p = genomes.len();
    if p < 2 {
        return Err(Error::TooFewIndividuals(p));
    }
    // Row sums in parallel, combined in a fixed order.
    let rows: Vec<f64> = (0..p)
        .into_par_iter()
        .map(|i| {
            let a = genomes[i].as_ref();
            genomes[i + 1..].iter().map(|b| distance(a, b.as_ref())).sum()
        })
        .collect();
    let pairs = (p * (p - 1) / 2) as f64;
    Ok(rows.iter().sum::<f64>() / pairs)
}

/// Mean score over `episodes` rollouts with streams keyed by
/// `(run_seed, generation, individual_id, Episode(k))`. Faults and
/// non-finite scores yield the environment's minimum score.
pub fn evaluate_policy(
    policy: &Result<PolicyNet>,
    factory: &EnvFactory,
    mode: SwitchMode,
    run_seed: u64,
    generation: u64,
    individual_id: u64,
    episodes: usize,
) -> f64 {
    let floor = factory.spec().score_range.0;
    let policy = match policy {
        Ok(p) => p,
        Err(e) => {
            log::warn!("individual {individual_id}: policy construction failed: {e}");
            return floor;
        }
    };
    let mut total = 0.0;
    for k in 0..episodes {
        let stream = RngStream::new(run_seed, generation, individual_id, Purpose::Episode(k as u32));
        let outcome = factory.make().and_then(|mut env| {
            env.set_mode(mode);
            rollout(policy, env.as_mut(), &stream, false)
        });
        match outcome {
            Ok(o) if o.score.is_finite() => total += o.score,
            Ok(o) => {
                log::warn!("individual {individual_id}: non-finite score {}", o.score);
                return floor;
            }
            Err(e) => {
                log::warn!("individual {individual_id}: environment fault: {e}");
                return floor;
            }
        }
    }
    total / episodes as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationMetrics {
    pub generation: u64,
    pub best_fitness: f64,
    pub mean_fitness: f64,
    pub mean_pairwise_distance: f64,
    /// Mean over offspring created from this generation's elites.
    pub mean_mutation_rate: Option<f64>,
    pub switch_phase: usize,
}

#[derive(Debug, Clone)]
pub struct PopulationState {
    pub generation: u64,
    pub individuals: Vec<Ghn>,
    /// Fitness of each individual at `generation`, once evaluated.
    pub fitnesses: Option<Vec<f64>>,
    pub genealogy: Genealogy,
    pub next_id: u64,
}

impl PopulationState {
    pub fn ids(&self) -> Vec<u64> {
        self.individuals.iter().map(|g| g.id).collect()
    }
}

/// Result of one generation step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub metrics: GenerationMetrics,
    /// Mean rate per self-graph node over this step's offspring.
    pub node_rates: Vec<f64>,
    pub reports: Vec<MutationReport>,
}

/// Everything shared by all individuals of a run.
#[derive(Debug, Clone)]
pub struct Evolution {
    pub config: EvoConfig,
    pub model: Arc<GhnModel>,
    pub basis: Arc<FixedBasis>,
    pub env: EnvFactory,
    pub schedule: SwitchSchedule,
}

impl Evolution {
    pub fn new(
        config: EvoConfig,
        model: Arc<GhnModel>,
        env: EnvFactory,
        schedule: SwitchSchedule,
    ) -> Result<Self> {
        config.validate()?;
        let spec = env.spec();
        let policy = &model.config().policy_spec;
        if policy.input_dim != spec.obs_dim || policy.output_dim != spec.action_kind.policy_outputs() {
            return Err(Error::config(
                "policy_hidden",
                format!(
                    "policy {} does not fit environment obs_dim {} / outputs {}",
                    policy.arch_name(),
                    spec.obs_dim,
                    spec.action_kind.policy_outputs()
                ),
            ));
        }
        let basis = Arc::new(FixedBasis::draw(&model, config.run_seed));
        Ok(Self {
            config,
            model,
            basis,
            env,
            schedule,
        })
    }

    pub fn init_population(&self) -> PopulationState {
        let p = self.config.population_size as u64;
        let individuals: Vec<Ghn> = (0..p)
            .into_par_iter()
            .map(|id| {
                let stream = RngStream::new(self.config.run_seed, 0, id, Purpose::Init);
                init_ghn(&self.model, self.basis.reference().clone(), &stream)
            })
            .collect();
        let mut genealogy = Genealogy::default();
        for g in &individuals {
            genealogy.push(GenealogyRecord {
                id: g.id,
                parent_id: None,
                birth_generation: 0,
                fitness_history: Vec::new(),
                mean_mutation_rate: None,
            });
        }
        PopulationState {
            generation: 0,
            individuals,
            fitnesses: None,
            genealogy,
            next_id: p,
        }
    }

    /// Evaluates every individual (elites included) at `state.generation`.
    pub fn evaluate(&self, state: &mut PopulationState) -> Vec<f64> {
        let generation = state.generation;
        let mode = self.schedule.mode_at(generation);
        let fitnesses: Vec<f64> = state
            .individuals
            .par_iter()
            .map(|g| {
                evaluate_policy(
                    &g.policy(),
                    &self.env,
                    mode,
                    self.config.run_seed,
                    generation,
                    g.id,
                    self.config.episodes_per_eval,
                )
            })
            .collect();
        for (g, &f) in state.individuals.iter().zip(&fitnesses) {
            state.genealogy.record_fitness(g.id, generation, f);
        }
        state.fitnesses = Some(fitnesses.clone());
        fitnesses
    }

    /// Evaluate, select, reproduce. The next population is the elites in
    /// rank order followed by each elite's offspring.
    pub fn step_generation(&self, state: &mut PopulationState) -> Result<StepOutcome> {
        let fitnesses = match state.fitnesses.take() {
            Some(f) => f,
            None => self.evaluate(state),
        };
        let generation = state.generation;
        let ids = state.ids();
        let genomes: Vec<&[f64]> = state.individuals.iter().map(|g| g.flat().values()).collect();
        let diversity = mean_pairwise_distance(&genomes)?;

        let elites = select_elites(&fitnesses, &ids, self.config.elite_size)?;
        let n = self.config.offspring_per_elite;
        let first_id = state.next_id;
        let jobs: Vec<(usize, u64)> = elites
            .iter()
            .enumerate()
            .flat_map(|(rank, &e)| (0..n).map(move |c| (e, first_id + (rank * n + c) as u64)))
            .collect();
        let born = generation + 1;
        let children: Vec<(Ghn, MutationReport)> = jobs
            .par_iter()
            .map(|&(parent, id)| {
                let stream = RngStream::new(self.config.run_seed, born, id, Purpose::Mutation);
                make_offspring(&state.individuals[parent], &self.basis, &stream, id, born)
            })
            .collect::<Result<_>>()?;

        let mut node_rates = vec![0.0; self.model.self_graph().len()];
        let mut next: Vec<Ghn> = elites.iter().map(|&e| state.individuals[e].clone()).collect();
        let mut reports = Vec::with_capacity(children.len());
        for (child, report) in children {
            for m in &report.nodes {
                node_rates[m.node.0] += m.rate / jobs.len() as f64;
            }
            state.genealogy.push(GenealogyRecord {
                id: child.id,
                parent_id: child.parent_id,
                birth_generation: born,
                fitness_history: Vec::new(),
                mean_mutation_rate: Some(report.mean_rate),
            });
            next.push(child);
            reports.push(report);
        }
        let mean_rate = reports.iter().map(|r| r.mean_rate).sum::<f64>() / reports.len() as f64;

        let finite: Vec<f64> = fitnesses.iter().map(|&f| if f.is_nan() { f64::NEG_INFINITY } else { f }).collect();
        let metrics = GenerationMetrics {
            generation,
            best_fitness: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_fitness: finite.iter().sum::<f64>() / finite.len() as f64,
            mean_pairwise_distance: diversity,
            mean_mutation_rate: Some(mean_rate),
            switch_phase: self.schedule.phase_index(generation),
        };

        state.individuals = next;
        state.next_id = first_id + jobs.len() as u64;
        state.generation = born;
        state.fitnesses = None;
        Ok(StepOutcome {
            metrics,
            node_rates,
            reports,
        })
    }

    /// Rebuilds an individual by replaying its lineage from initialization.
    pub fn replay_individual(&self, genealogy: &Genealogy, id: u64) -> Result<Ghn> {
        let chain = champion_lineage(genealogy, id)?;
        let root = &chain[0];
        let stream = RngStream::new(self.config.run_seed, 0, root.id, Purpose::Init);
        let mut ghn = init_ghn(&self.model, self.basis.reference().clone(), &stream);
        for r in &chain[1..] {
            let stream = RngStream::new(self.config.run_seed, r.birth_generation, r.id, Purpose::Mutation);
            ghn = make_offspring(&ghn, &self.basis, &stream, r.id, r.birth_generation)?.0;
        }
        Ok(ghn)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compgraph::{Activation, MlpSpec};
    use crate::env::{EnvConfig, GridConfig};
    use crate::ghn::GhnConfig;

    fn small_evolution(seed: u64) -> Evolution {
        let mut c = GhnConfig::with_policy(MlpSpec::new(8, vec![6], 5, Activation::Identity));
        c.embed_dim = 8;
        c.gnn_hidden = 8;
        c.det_head_hidden = 8;
        c.stoch_head_hidden = 6;
        c.basis_in_dim = 6;
        let cfg = EvoConfig {
            population_size: 6,
            elite_size: 2,
            offspring_per_elite: 2,
            generations: 5,
            episodes_per_eval: 1,
            run_seed: seed,
        };
        let env = EnvConfig::Grid2d(GridConfig::default()).factory().unwrap();
        Evolution::new(cfg, GhnModel::new(c).unwrap(), env, SwitchSchedule::alternating(&[3]).unwrap()).unwrap()
    }

    #[test]
    fn config_requires_exact_population() {
        let mut c = small_evolution(0).config;
        c.population_size = 7;
        assert!(matches!(c.validate(), Err(Error::InvalidConfig { key, .. }) if key == "population_size"));
    }

    #[test]
    fn init_population_is_independent_and_deterministic() {
        let evo = small_evolution(1);
        let a = evo.init_population();
        let b = evo.init_population();
        assert_eq!(a.individuals.len(), 6);
        assert_eq!(a.genealogy.len(), 6);
        for (x, y) in a.individuals.iter().zip(&b.individuals) {
            assert_eq!(x.flat().values(), y.flat().values());
        }
        for i in 0..6 {
            for j in i + 1..6 {
                assert!(distance(a.individuals[i].flat().values(), a.individuals[j].flat().values()) > 0.0);
            }
        }
    }

    #[test]
    fn elite_selection_examples() {
        assert_eq!(select_elites(&[5.0, 1.0, 9.0], &[0, 1, 2], 2).unwrap(), vec![2, 0]);
        assert_eq!(select_elites(&[1.0, 1.0, 1.0], &[7, 3, 5], 2).unwrap(), vec![1, 2]);
        assert_eq!(select_elites(&[1.0, 2.0], &[0, 1], 2).unwrap().len(), 2);
        assert!(select_elites(&[1.0], &[0], 2).is_err());
        assert_eq!(select_elites(&[f64::NAN, -1e9], &[0, 1], 1).unwrap(), vec![1]);
    }

    #[test]
    fn pairwise_distance_examples() {
        assert_eq!(mean_pairwise_distance(&[vec![1.0, 2.0], vec![1.0, 2.0]]).unwrap(), 0.0);
        assert_eq!(mean_pairwise_distance(&[vec![0.0], vec![3.0], vec![6.0]]).unwrap(), 4.0);
        assert!(mean_pairwise_distance(&[vec![0.0]]).is_err());
    }

    #[test]
    fn generation_step_conserves_population_and_lineage() {
        let evo = small_evolution(2);
        let mut state = evo.init_population();
        for g in 0..5 {
            let before = state.ids();
            let fitnesses = evo.evaluate(&mut state);
            let elites: Vec<u64> = select_elites(&fitnesses, &before, 2).unwrap().iter().map(|&i| before[i]).collect();
            let out = evo.step_generation(&mut state).unwrap();
            assert_eq!(out.metrics.generation, g);
            assert_eq!(state.individuals.len(), 6);
            assert_eq!(&state.ids()[..2], &elites[..]);
            // Non-elites never survive.
            for id in state.ids() {
                assert!(!before.contains(&id) || elites.contains(&id));
            }
        }
        state.genealogy.validate().unwrap();
        for r in state.genealogy.records() {
            let chain = champion_lineage(&state.genealogy, r.id).unwrap();
            assert!(chain.windows(2).all(|w| w[0].birth_generation < w[1].birth_generation));
            assert!(chain[0].parent_id.is_none());
        }
    }

    #[test]
    fn deterministic_env_keeps_elite_fitness() {
        let evo = small_evolution(3);
        let mut state = evo.init_population();
        let f0 = evo.evaluate(&mut state);
        let ids0 = state.ids();
        evo.step_generation(&mut state).unwrap();
        let f1 = evo.evaluate(&mut state);
        for (i, id) in state.ids().iter().enumerate().take(2) {
            let j = ids0.iter().position(|x| x == id).unwrap();
            assert_eq!(f1[i], f0[j]);
        }
    }

    #[test]
    fn replay_reconstructs_offspring() {
        let evo = small_evolution(4);
        let mut state = evo.init_population();
        for _ in 0..3 {
            evo.step_generation(&mut state).unwrap();
        }
        for g in &state.individuals {
            let replayed = evo.replay_individual(&state.genealogy, g.id).unwrap();
            assert_eq!(replayed.flat().values(), g.flat().values());
        }
    }

    #[test]
    fn lineage_of_root_and_child() {
        let mut g = Genealogy::default();
        g.push(GenealogyRecord { id: 0, parent_id: None, birth_generation: 0, fitness_history: vec![], mean_mutation_rate: None });
        g.push(GenealogyRecord { id: 5, parent_id: Some(0), birth_generation: 1, fitness_history: vec![(1, 2.0)], mean_mutation_rate: Some(0.3) });
        assert_eq!(champion_lineage(&g, 0).unwrap().len(), 1);
        let chain = champion_lineage(&g, 5).unwrap();
        assert_eq!(chain.iter().map(|r| r.id).collect::<Vec<_>>(), vec![0, 5]);
        g.push(GenealogyRecord { id: 6, parent_id: Some(99), birth_generation: 2, fitness_history: vec![], mean_mutation_rate: None });
        assert!(matches!(champion_lineage(&g, 6), Err(Error::CorruptGenealogy(_))));
        assert!(g.validate().is_err());
        assert_eq!(best_ever(&g), Some((5, 1, 2.0)));
    }

    proptest::proptest! {
        #[test]
        fn distance_matches_brute_force(
            genomes in proptest::collection::vec(proptest::collection::vec(-20.0f64..20.0, 7), 2..12)
        ) {
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in 0..genomes.len() {
                for j in 0..genomes.len() {
                    if i < j {
                        let d: f64 = (0..7).map(|k| (genomes[i][k] - genomes[j][k]).powi(2)).sum();
                        sum += d.sqrt();
                        count += 1;
                    }
                }
            }
            let want = sum / count as f64;
            let got = mean_pairwise_distance(&genomes).unwrap();
            proptest::prop_assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-300));
        }
    }
}
