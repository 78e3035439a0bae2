use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{Algorithm, ResolvedRun};
use crate::baselines::{AskTell, Baseline};
use crate::error::{Error, Result};
use crate::evolution::{
    evaluate_policy, mean_pairwise_distance, Evolution, GenerationMetrics, Genealogy, PopulationState,
};
use crate::ghn::{BasisRef, Ghn, GhnModel};
use crate::nn::{read_payload, write_payload, FlatParams, PayloadHeader, PolicyNet};
use crate::rng::RNG_ALGORITHM_ID;

pub const META_FILE: &str = "run_meta.json";
pub const CURVES_FILE: &str = "curves.csv";
pub const RATES_FILE: &str = "mutation_rates.csv";
pub const GENEALOGY_FILE: &str = "genealogy.txt";
pub const GHN_CHECKPOINT: &str = "checkpoint.bin";
pub const BASELINE_CHECKPOINT: &str = "checkpoint.json";

const CURVES_HEADER: &str =
    "generation,best_fitness,mean_fitness,mean_pairwise_distance,mean_mutation_rate,switch_phase";
const RATES_HEADER: &str = "generation,node,name,mean_rate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub name: String,
    pub algorithm: String,
    pub env: String,
    pub code_version: String,
    pub rng_algorithm: String,
    pub param_count: usize,
    /// Digest of the fixed random basis; GHN runs only.
    pub basis_digest: Option<String>,
    pub resolved: ResolvedRun,
}

impl RunMeta {
    pub fn load(run_dir: &Path) -> Result<Self> {
        let path = run_dir.join(META_FILE);
        if !path.is_file() {
            return Err(Error::UnknownRunDir(run_dir.to_path_buf()));
        }
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

/// One line of `genealogy.txt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenealogyLine {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub birth_generation: u64,
    pub final_fitness: Option<f64>,
    pub mean_mutation_rate: Option<f64>,
    pub fitness_history: Vec<(u64, f64)>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub run_dir: PathBuf,
    pub meta: RunMeta,
    pub metrics: Vec<GenerationMetrics>,
}

/// Where a run writes when no directory is given: `SRGHN_OUT_DIR`, then the
/// config's `out_dir`, then `runs/`, each joined with `<name>/seed-<seed>`.
pub fn default_run_dir(run: &ResolvedRun) -> PathBuf {
    let root = std::env::var("SRGHN_OUT_DIR")
        .ok()
        .or_else(|| run.out_dir.clone())
        .unwrap_or_else(|| "runs".into());
    Path::new(&root).join(&run.name).join(format!("seed-{}", run.evo.run_seed))
}

fn thread_count(run: &ResolvedRun) -> Result<Option<usize>> {
    match std::env::var("SRGHN_THREADS") {
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::config("threads", format!("SRGHN_THREADS=`{v}` is not a positive integer"))),
        },
        Err(_) => Ok(run.threads),
    }
}

/// Runs (or resumes, when a checkpoint exists in `run_dir`) to completion.
pub fn run(run: &ResolvedRun, run_dir: &Path) -> Result<RunOutput> {
    match thread_count(run)? {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?;
            pool.install(|| run_inner(run, run_dir))
        }
        None => run_inner(run, run_dir),
    }
}

fn run_inner(run: &ResolvedRun, run_dir: &Path) -> Result<RunOutput> {
    fs::create_dir_all(run_dir)?;
    let meta = match &run.algorithm {
        Algorithm::Ghn(cfg) => {
            let model = GhnModel::new(cfg.clone())?;
            let evo = Evolution::new(run.evo.clone(), model, run.env.factory()?, run.schedule())?;
            let meta = make_meta(run, evo.model.param_count(), Some(evo.basis.digest()));
            check_meta(run_dir, &meta)?;
            run_ghn(run, &evo, run_dir)?;
            meta
        }
        Algorithm::Baseline(cfg) => {
            let dim = run.policy.param_count();
            let meta = make_meta(run, dim, None);
            check_meta(run_dir, &meta)?;
            let fresh = cfg.build(dim, run.evo.run_seed)?;
            run_baseline(run, fresh, run_dir)?;
            meta
        }
    };
    let metrics = read_curves(&run_dir.join(CURVES_FILE))?;
    Ok(RunOutput {
        run_dir: run_dir.to_path_buf(),
        meta,
        metrics,
    })
}

fn make_meta(run: &ResolvedRun, param_count: usize, basis_digest: Option<String>) -> RunMeta {
    RunMeta {
        name: run.name.clone(),
        algorithm: run.algorithm.id().into(),
        env: run.env.id().into(),
        code_version: env!("CARGO_PKG_VERSION").into(),
        rng_algorithm: RNG_ALGORITHM_ID.into(),
        param_count,
        basis_digest,
        resolved: run.clone(),
    }
}

/// Writes the metadata, or refuses to resume a directory whose recorded run
/// differs from this one.
fn check_meta(run_dir: &Path, meta: &RunMeta) -> Result<()> {
    let path = run_dir.join(META_FILE);
    if path.is_file() {
        let existing: RunMeta = serde_json::from_str(&fs::read_to_string(&path)?)?;
        if existing.resolved != meta.resolved || existing.rng_algorithm != meta.rng_algorithm {
            return Err(Error::Checkpoint(format!(
                "{} holds a different run configuration",
                run_dir.display()
            )));
        }
        return Ok(());
    }
    write_atomic(&path, serde_json::to_string_pretty(meta)?.as_bytes())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

fn curves_row(m: &GenerationMetrics) -> String {
    format!(
        "{},{},{},{},{},{}",
        m.generation,
        fmt_f64(m.best_fitness),
        fmt_f64(m.mean_fitness),
        fmt_f64(m.mean_pairwise_distance),
        m.mean_mutation_rate.map(fmt_f64).unwrap_or_default(),
        m.switch_phase
    )
}

pub fn read_curves(path: &Path) -> Result<Vec<GenerationMetrics>> {
    let bad = |line: &str| Error::Checkpoint(format!("malformed curves row `{line}`"));
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 6 {
            return Err(bad(line));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad(line));
        out.push(GenerationMetrics {
            generation: f[0].parse().map_err(|_| bad(line))?,
            best_fitness: num(f[1])?,
            mean_fitness: num(f[2])?,
            mean_pairwise_distance: num(f[3])?,
            mean_mutation_rate: if f[4].is_empty() { None } else { Some(num(f[4])?) },
            switch_phase: f[5].parse().map_err(|_| bad(line))?,
        });
    }
    Ok(out)
}

/// Opens a per-generation CSV for appending, keeping only rows before
/// `generation` so a resumed run continues exactly where its checkpoint was.
fn open_table(path: &Path, header: &str, generation: u64) -> Result<BufWriter<File>> {
    let mut kept = vec![header.to_string()];
    if generation > 0 && path.is_file() {
        for line in BufReader::new(File::open(path)?).lines().skip(1) {
            let line = line?;
            let g: u64 = line
                .split(',')
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("malformed row in {}", path.display())))?;
            if g < generation {
                kept.push(line);
            }
        }
    }
    let mut w = BufWriter::new(File::create(path)?);
    for line in kept {
        writeln!(w, "{line}")?;
    }
    Ok(w)
}

fn due(run: &ResolvedRun, next_generation: u64) -> bool {
    run.checkpoint_every > 0 && next_generation.is_multiple_of(run.checkpoint_every) && next_generation < run.evo.generations
}

fn log_progress(run: &ResolvedRun, m: &GenerationMetrics) {
    if m.generation.is_multiple_of(50) || m.generation + 1 == run.evo.generations {
        log::info!(
            "{} gen {} best {:.3} mean {:.3} distance {:.3}",
            run.name,
            m.generation,
            m.best_fitness,
            m.mean_fitness,
            m.mean_pairwise_distance
        );
    }
}

#[derive(Serialize, Deserialize)]
struct IndividualMeta {
    id: u64,
    birth_generation: u64,
    parent_id: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct GhnCheckpointExtra {
    generation: u64,
    next_id: u64,
    run_seed: u64,
    basis_digest: String,
    individuals: Vec<IndividualMeta>,
    genealogy: Genealogy,
}

pub fn save_ghn_checkpoint(evo: &Evolution, state: &PopulationState, path: &Path) -> Result<()> {
    let layout = evo.model.layout();
    let clip = evo.model.config().param_clip;
    let extra = GhnCheckpointExtra {
        generation: state.generation,
        next_id: state.next_id,
        run_seed: evo.config.run_seed,
        basis_digest: evo.basis.digest(),
        individuals: state
            .individuals
            .iter()
            .map(|g| IndividualMeta {
                id: g.id,
                birth_generation: g.birth_generation,
                parent_id: g.parent_id,
            })
            .collect(),
        genealogy: state.genealogy.clone(),
    };
    let header = PayloadHeader {
        arch_name: layout.arch_name.clone(),
        layout: layout.slots.clone(),
        rng_algorithm: RNG_ALGORITHM_ID.into(),
        clip_bounds: (-clip, clip),
        vectors: state.individuals.len(),
        extra: serde_json::to_value(extra)?,
    };
    let vectors: Vec<&[f64]> = state.individuals.iter().map(|g| g.flat().values()).collect();
    let tmp = path.with_extension("tmp");
    write_payload(BufWriter::new(File::create(&tmp)?), &header, &vectors)?;
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_ghn_checkpoint(evo: &Evolution, path: &Path) -> Result<PopulationState> {
    let (header, vectors) = read_payload(BufReader::new(File::open(path)?))?;
    let layout = evo.model.layout();
    if header.arch_name != layout.arch_name || header.layout != layout.slots {
        return Err(Error::GraphMismatch {
            expected: layout.arch_name.clone(),
            actual: header.arch_name,
        });
    }
    if header.rng_algorithm != RNG_ALGORITHM_ID {
        return Err(Error::Checkpoint(format!("rng algorithm `{}` differs", header.rng_algorithm)));
    }
    let extra: GhnCheckpointExtra = serde_json::from_value(header.extra)?;
    if extra.basis_digest != evo.basis.digest() || extra.run_seed != evo.config.run_seed {
        return Err(Error::Checkpoint("basis or seed differs from this run".into()));
    }
    if extra.individuals.len() != vectors.len() {
        return Err(Error::Checkpoint("individual count differs from payload".into()));
    }
    extra.genealogy.validate()?;
    let individuals = extra
        .individuals
        .into_iter()
        .zip(vectors)
        .map(|(m, v)| {
            let flat = FlatParams::from_values(layout.clone(), v)?;
            Ghn::from_parts(
                evo.model.clone(),
                flat,
                m.id,
                m.birth_generation,
                m.parent_id,
                BasisRef(extra.basis_digest.clone()),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PopulationState {
        generation: extra.generation,
        individuals,
        fitnesses: None,
        genealogy: extra.genealogy,
        next_id: extra.next_id,
    })
}

pub fn write_genealogy(genealogy: &Genealogy, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let mut w = BufWriter::new(File::create(&tmp)?);
    for r in genealogy.records() {
        let line = GenealogyLine {
            id: r.id,
            parent_id: r.parent_id,
            birth_generation: r.birth_generation,
            final_fitness: r.final_fitness(),
            mean_mutation_rate: r.mean_mutation_rate,
            fitness_history: r.fitness_history.clone(),
        };
        serde_json::to_writer(&mut w, &line)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    drop(w);
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_genealogy(path: &Path) -> Result<Genealogy> {
    let mut g = Genealogy::default();
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let l: GenealogyLine = serde_json::from_str(&line)?;
        g.push(crate::evolution::GenealogyRecord {
            id: l.id,
            parent_id: l.parent_id,
            birth_generation: l.birth_generation,
            fitness_history: l.fitness_history,
            mean_mutation_rate: l.mean_mutation_rate,
        });
    }
    g.validate()?;
    Ok(g)
}

fn run_ghn(run: &ResolvedRun, evo: &Evolution, run_dir: &Path) -> Result<()> {
    let ckpt = run_dir.join(GHN_CHECKPOINT);
    let mut state = if ckpt.is_file() {
        let s = load_ghn_checkpoint(evo, &ckpt)?;
        log::info!("{}: resuming at generation {}", run.name, s.generation);
        s
    } else {
        evo.init_population()
    };
    let mut curves = open_table(&run_dir.join(CURVES_FILE), CURVES_HEADER, state.generation)?;
    let mut rates = open_table(&run_dir.join(RATES_FILE), RATES_HEADER, state.generation)?;
    let names: Vec<String> = evo.model.self_graph().nodes().iter().map(|n| n.name.clone()).collect();
    while state.generation < run.evo.generations {
        let out = evo.step_generation(&mut state)?;
        let g = out.metrics.generation;
        writeln!(curves, "{}", curves_row(&out.metrics))?;
        for (v, rate) in out.node_rates.iter().enumerate() {
            writeln!(rates, "{g},{v},{},{}", names[v], fmt_f64(*rate))?;
        }
        log_progress(run, &out.metrics);
        if due(run, state.generation) {
            curves.flush()?;
            rates.flush()?;
            save_ghn_checkpoint(evo, &state, &ckpt)?;
            write_genealogy(&state.genealogy, &run_dir.join(GENEALOGY_FILE))?;
        }
    }
    curves.flush()?;
    rates.flush()?;
    save_ghn_checkpoint(evo, &state, &ckpt)?;
    write_genealogy(&state.genealogy, &run_dir.join(GENEALOGY_FILE))
}

#[derive(Serialize, Deserialize)]
struct BaselineCheckpoint {
    generation: u64,
    optimizer: Baseline,
}

/// Scores one candidate parameter vector the same way GHN individuals are
/// scored; the candidate index plays the role of the individual id.
pub fn evaluate_vector(run: &ResolvedRun, env: &crate::env::EnvFactory, generation: u64, index: u64, x: &[f64]) -> f64 {
    let policy = PolicyNet::from_flat(run.policy.clone(), x.to_vec());
    evaluate_policy(
        &policy,
        env,
        run.schedule().mode_at(generation),
        run.evo.run_seed,
        generation,
        index,
        run.evo.episodes_per_eval,
    )
}

fn run_baseline(run: &ResolvedRun, fresh: Baseline, run_dir: &Path) -> Result<()> {
    use rayon::prelude::*;
    let ckpt = run_dir.join(BASELINE_CHECKPOINT);
    let mut opt = if ckpt.is_file() {
        let c: BaselineCheckpoint = serde_json::from_str(&fs::read_to_string(&ckpt)?)?;
        if c.optimizer.generation() != c.generation || c.optimizer.dim() != fresh.dim() {
            return Err(Error::Checkpoint("baseline checkpoint is inconsistent".into()));
        }
        log::info!("{}: resuming at generation {}", run.name, c.generation);
        c.optimizer
    } else {
        fresh
    };
    let env = Arc::new(run.env.factory()?);
    let schedule = run.schedule();
    let mut curves = open_table(&run_dir.join(CURVES_FILE), CURVES_HEADER, opt.generation())?;
    while opt.generation() < run.evo.generations {
        let g = opt.generation();
        let step = opt.step_size();
        let xs = opt.ask()?;
        let fitnesses: Vec<f64> = xs
            .par_iter()
            .enumerate()
            .map(|(i, x)| evaluate_vector(run, &env, g, i as u64, x))
            .collect();
        let diversity = mean_pairwise_distance(&xs)?;
        opt.tell(&fitnesses)?;
        let m = GenerationMetrics {
            generation: g,
            best_fitness: fitnesses.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            mean_fitness: fitnesses.iter().sum::<f64>() / fitnesses.len() as f64,
            mean_pairwise_distance: diversity,
            mean_mutation_rate: Some(step),
            switch_phase: schedule.phase_index(g),
        };
        writeln!(curves, "{}", curves_row(&m))?;
        log_progress(run, &m);
        if due(run, opt.generation()) {
            curves.flush()?;
            save_baseline_checkpoint(&opt, &ckpt)?;
        }
    }
    curves.flush()?;
    save_baseline_checkpoint(&opt, &ckpt)
}

fn save_baseline_checkpoint(opt: &Baseline, path: &Path) -> Result<()> {
    let c = BaselineCheckpointRef {
        generation: opt.generation(),
        optimizer: opt,
    };
    write_atomic(path, serde_json::to_string(&c)?.as_bytes())
}

#[derive(Serialize)]
struct BaselineCheckpointRef<'a> {
    generation: u64,
    optimizer: &'a Baseline,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiment::RunConfig;

    fn tiny(algorithm: &str) -> ResolvedRun {
        let text = format!(
            "preset = \"grid2d-demo\"\nalgorithm = \"{algorithm}\"\ngenerations = 12\nswitch_generations = [6]\ncheckpoint_every = 4\ngrid_size = 15\n"
        );
        let text = if algorithm == "ghn" { text } else { text + "population_size = 20\n" };
        RunConfig::from_toml_str(&text).unwrap().resolve().unwrap()
    }

    #[test]
    fn resume_matches_uninterrupted() {
        for algorithm in ["ghn", "openes", "ga"] {
            let run_cfg = tiny(algorithm);
            let a = tempfile::tempdir().unwrap();
            let full = run(&run_cfg, a.path()).unwrap();
            assert_eq!(full.metrics.len(), 12);

            let b = tempfile::tempdir().unwrap();
            let mut first = run_cfg.clone();
            first.evo.generations = 8;
            // A shorter run leaves its checkpoint at generation 8; extending
            // the horizon afterwards must continue identically.
            run_inner_unchecked(&first, b.path());
            let resumed = run(&run_cfg, b.path()).unwrap();
            assert_eq!(resumed.metrics, full.metrics, "{algorithm}");
            let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
            assert_eq!(read(a.path(), CURVES_FILE), read(b.path(), CURVES_FILE));
            if algorithm == "ghn" {
                assert_eq!(read(a.path(), RATES_FILE), read(b.path(), RATES_FILE));
                assert_eq!(read(a.path(), GENEALOGY_FILE), read(b.path(), GENEALOGY_FILE));
            }
        }
    }

    fn run_inner_unchecked(run_cfg: &ResolvedRun, dir: &Path) {
        run(run_cfg, dir).unwrap();
        // The metadata records the shorter horizon; replace it so the
        // longer run accepts the directory.
        fs::remove_file(dir.join(META_FILE)).unwrap();
    }

    #[test]
    fn mismatched_directory_is_refused() {
        let d = tempfile::tempdir().unwrap();
        run(&tiny("ghn"), d.path()).unwrap();
        let mut other = tiny("ghn");
        other.evo.run_seed = 5;
        assert!(matches!(run(&other, d.path()), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn ghn_checkpoint_round_trip() {
        let r = tiny("ghn");
        let Algorithm::Ghn(cfg) = &r.algorithm else { unreachable!() };
        let evo = Evolution::new(r.evo.clone(), GhnModel::new(cfg.clone()).unwrap(), r.env.factory().unwrap(), r.schedule()).unwrap();
        let mut state = evo.init_population();
        evo.step_generation(&mut state).unwrap();
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.bin");
        save_ghn_checkpoint(&evo, &state, &p).unwrap();
        let back = load_ghn_checkpoint(&evo, &p).unwrap();
        assert_eq!(back.generation, 1);
        assert_eq!(back.ids(), state.ids());
        for (a, b) in back.individuals.iter().zip(&state.individuals) {
            assert_eq!(a.flat().values(), b.flat().values());
            assert_eq!((a.parent_id, a.birth_generation), (b.parent_id, b.birth_generation));
        }
        assert_eq!(back.genealogy.records(), state.genealogy.records());
    }

    #[test]
    fn curves_round_trip_through_text() {
        let m = GenerationMetrics {
            generation: 3,
            best_fitness: 0.1 + 0.2,
            mean_fitness: -1.5e-7,
            mean_pairwise_distance: 12.0,
            mean_mutation_rate: None,
            switch_phase: 1,
        };
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("c.csv");
        fs::write(&p, format!("{CURVES_HEADER}\n{}\n", curves_row(&m))).unwrap();
        assert_eq!(read_curves(&p).unwrap(), vec![m]);
    }
}
