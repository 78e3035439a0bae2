use std::collections::{BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::Algorithm;
use super::run::{fmt_f64, read_curves, read_genealogy, RunMeta, CURVES_FILE, GENEALOGY_FILE, META_FILE};
use crate::env::{rollout, SwitchMode};
use crate::error::{Error, Result};
use crate::evolution::{best_ever, champion_lineage, Evolution, Genealogy};
use crate::ghn::{init_ghn, GhnModel};
use crate::rng::{Purpose, RngStream};
use crate::variation::make_offspring;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportKind {
    Curves,
    Genealogy,
    Lineage,
    Boxplot,
    All,
}

impl std::str::FromStr for ExportKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "curves" => Self::Curves,
            "genealogy" => Self::Genealogy,
            "lineage" => Self::Lineage,
            "boxplot" => Self::Boxplot,
            "all" => Self::All,
            other => {
                return Err(Error::config(
                    "what",
                    format!("`{other}` is not one of curves, genealogy, lineage, boxplot, all"),
                ))
            }
        })
    }
}

/// Writes the requested exports into `<dir>/exports` and returns the paths.
/// `dir` is a run directory, or for `boxplot` any directory containing runs.
pub fn export(dir: &Path, what: ExportKind) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::UnknownRunDir(dir.to_path_buf()));
    }
    let out = dir.join("exports");
    fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    let is_run = dir.join(META_FILE).is_file();
    let want = |k: ExportKind| what == k || what == ExportKind::All;
    if want(ExportKind::Curves) {
        written.push(export_curves(&require_run(dir)?, &out)?);
    }
    if want(ExportKind::Genealogy) && (what != ExportKind::All || has_genealogy(dir)) {
        written.extend(export_genealogy(&require_run(dir)?, &out)?);
    }
    if want(ExportKind::Lineage) && (what != ExportKind::All || has_genealogy(dir)) {
        written.extend(export_lineage(&require_run(dir)?, &out)?);
    }
    if want(ExportKind::Boxplot) && (what != ExportKind::All || is_run) {
        written.push(export_boxplot(dir, &out)?);
    }
    Ok(written)
}

fn has_genealogy(dir: &Path) -> bool {
    dir.join(GENEALOGY_FILE).is_file()
}

fn require_run(dir: &Path) -> Result<PathBuf> {
    RunMeta::load(dir)?;
    Ok(dir.to_path_buf())
}

/// Long-format curves: one row per (generation, metric).
pub fn export_curves(run_dir: &Path, out: &Path) -> Result<PathBuf> {
    let meta = RunMeta::load(run_dir)?;
    let rows = read_curves(&run_dir.join(CURVES_FILE))?;
    let path = out.join("curves_tidy.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "name,algorithm,seed,generation,switch_phase,metric,value")?;
    let seed = meta.resolved.evo.run_seed;
    for m in rows {
        let mut metrics = vec![
            ("best_fitness", m.best_fitness),
            ("mean_fitness", m.mean_fitness),
            ("mean_pairwise_distance", m.mean_pairwise_distance),
        ];
        if let Some(r) = m.mean_mutation_rate {
            metrics.push(("mean_mutation_rate", r));
        }
        for (name, v) in metrics {
            writeln!(
                w,
                "{},{},{seed},{},{},{name},{}",
                meta.name,
                meta.algorithm,
                m.generation,
                m.switch_phase,
                fmt_f64(v)
            )?;
        }
    }
    w.flush()?;
    Ok(path)
}

fn load_genealogy(run_dir: &Path) -> Result<Genealogy> {
    let path = run_dir.join(GENEALOGY_FILE);
    if !path.is_file() {
        return Err(Error::config(
            "what",
            format!("{} has no genealogy; only GHN runs record one", run_dir.display()),
        ));
    }
    read_genealogy(&path)
}

/// Chronological tree of every individual, and the pruned tree of those
/// that produced offspring.
pub fn export_genealogy(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let genealogy = load_genealogy(run_dir)?;
    let mut children: HashMap<u64, usize> = HashMap::new();
    for r in genealogy.records() {
        if let Some(p) = r.parent_id {
            *children.entry(p).or_default() += 1;
        }
    }
    let mut records: Vec<_> = genealogy.records().iter().collect();
    records.sort_by_key(|r| (r.birth_generation, r.id));
    let header = "id,parent_id,birth_generation,final_fitness,mean_mutation_rate,offspring";
    let write = |path: &Path, keep: &dyn Fn(u64) -> bool| -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{header}")?;
        for r in records.iter().filter(|r| keep(r.id)) {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.id,
                r.parent_id.map(|p| p.to_string()).unwrap_or_default(),
                r.birth_generation,
                r.final_fitness().map(fmt_f64).unwrap_or_default(),
                r.mean_mutation_rate.map(fmt_f64).unwrap_or_default(),
                children.get(&r.id).copied().unwrap_or(0)
            )?;
        }
        w.flush()?;
        Ok(())
    };
    let chrono = out.join("chronological_tree.csv");
    let pruned = out.join("genealogical_tree.csv");
    write(&chrono, &|_| true)?;
    write(&pruned, &|id| children.contains_key(&id))?;
    Ok(vec![chrono, pruned])
}

/// One ancestor of a champion, replayed on the surface it was last scored on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineageStep {
    pub id: u64,
    pub parent_id: Option<u64>,
    pub birth_generation: u64,
    pub evaluated_generation: Option<u64>,
    pub recorded_fitness: Option<f64>,
    pub mode: SwitchMode,
    pub replay_score: f64,
    pub trajectory: Vec<Vec<f64>>,
}

pub fn lineage_steps(evo: &Evolution, genealogy: &Genealogy, champion: u64) -> Result<Vec<LineageStep>> {
    let chain = champion_lineage(genealogy, champion)?;
    let seed = evo.config.run_seed;
    let mut ghn = init_ghn(
        &evo.model,
        evo.basis.reference().clone(),
        &RngStream::new(seed, 0, chain[0].id, Purpose::Init),
    );
    let mut steps = Vec::with_capacity(chain.len());
    for (i, r) in chain.iter().enumerate() {
        if i > 0 {
            let stream = RngStream::new(seed, r.birth_generation, r.id, Purpose::Mutation);
            ghn = make_offspring(&ghn, &evo.basis, &stream, r.id, r.birth_generation)?.0;
        }
        let last = r.fitness_history.last().copied();
        let generation = last.map(|l| l.0).unwrap_or(r.birth_generation);
        let mode = evo.schedule.mode_at(generation);
        let mut env = evo.env.make()?;
        env.set_mode(mode);
        let stream = RngStream::new(seed, generation, r.id, Purpose::Episode(0));
        let outcome = rollout(&ghn.policy()?, env.as_mut(), &stream, true)?;
        steps.push(LineageStep {
            id: r.id,
            parent_id: r.parent_id,
            birth_generation: r.birth_generation,
            evaluated_generation: last.map(|l| l.0),
            recorded_fitness: last.map(|l| l.1),
            mode,
            replay_score: outcome.score,
            trajectory: outcome.trajectory.unwrap_or_default(),
        });
    }
    Ok(steps)
}

pub fn evolution_for(meta: &RunMeta) -> Result<Evolution> {
    let Algorithm::Ghn(cfg) = &meta.resolved.algorithm else {
        return Err(Error::config("what", "lineage needs a GHN run"));
    };
    let r = &meta.resolved;
    Evolution::new(r.evo.clone(), GhnModel::new(cfg.clone())?, r.env.factory()?, r.schedule())
}

/// Best individual at the last evaluated generation.
pub fn best_final(genealogy: &Genealogy) -> Option<(u64, f64)> {
    let last = genealogy
        .records()
        .iter()
        .filter_map(|r| r.fitness_history.last().map(|h| h.0))
        .max()?;
    crate::evolution::best_at(genealogy, last)
}

/// Replays the best-final and best-ever champions' lineages.
pub fn export_lineage(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let meta = RunMeta::load(run_dir)?;
    let evo = evolution_for(&meta)?;
    let genealogy = load_genealogy(run_dir)?;
    let mut written = Vec::new();
    let champions = [
        ("best_final", best_final(&genealogy).map(|c| c.0)),
        ("best_ever", best_ever(&genealogy).map(|c| c.0)),
    ];
    for (label, id) in champions {
        let Some(id) = id else { continue };
        let path = out.join(format!("lineage_{label}.jsonl"));
        let mut w = BufWriter::new(File::create(&path)?);
        for step in lineage_steps(&evo, &genealogy, id)? {
            serde_json::to_writer(&mut w, &step)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Run directories at or below `root`, sorted by path.
pub fn find_runs(root: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        if d.join(META_FILE).is_file() {
            found.push(d);
            continue;
        }
        for entry in fs::read_dir(&d)? {
            let p = entry?.path();
            if p.is_dir() && p.file_name().is_some_and(|n| n != "exports") {
                stack.push(p);
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Generations sampled for box plots: the one before each switch, and the last.
pub fn boxplot_generations(switches: &[u64], generations: u64) -> Vec<u64> {
    let mut gens: BTreeSet<u64> = switches.iter().filter(|&&s| s >= 1 && s <= generations).map(|s| s - 1).collect();
    gens.insert(generations - 1);
    gens.into_iter().collect()
}

/// Best fitness at the box-plot generations for every run under `root`.
pub fn export_boxplot(root: &Path, out: &Path) -> Result<PathBuf> {
    let runs = find_runs(root)?;
    if runs.is_empty() {
        return Err(Error::UnknownRunDir(root.to_path_buf()));
    }
    let path = out.join("boxplot.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "name,algorithm,seed,generation,best_fitness")?;
    for dir in runs {
        let meta = RunMeta::load(&dir)?;
        let curves = read_curves(&dir.join(CURVES_FILE))?;
        for g in boxplot_generations(&meta.resolved.switch_generations, meta.resolved.evo.generations) {
            if let Some(m) = curves.iter().find(|m| m.generation == g) {
                writeln!(
                    w,
                    "{},{},{},{g},{}",
                    meta.name,
                    meta.algorithm,
                    meta.resolved.evo.run_seed,
                    fmt_f64(m.best_fitness)
                )?;
            }
        }
    }
    w.flush()?;
    Ok(path)
}
