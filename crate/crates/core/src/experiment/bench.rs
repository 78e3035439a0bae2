use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{ResolvedRun, RunConfig};
use super::run::{fmt_f64, run, RunOutput};
use crate::error::{Error, Result};
use crate::evolution::GenerationMetrics;

/// A comparison suite: every listed run config is executed once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub name: String,
    pub seeds: Vec<u64>,
    /// Preset names or TOML paths (relative to the suite file).
    pub runs: Vec<String>,
    /// Fitness a run must re-attain after a switch; defaults to the best
    /// fitness reached in the preceding phase.
    pub recovery_threshold: Option<f64>,
    pub generations: Option<u64>,
    pub out_dir: Option<String>,
}

impl SuiteConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let s: SuiteConfig = toml::from_str(&fs::read_to_string(path)?)?;
        if s.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        if s.runs.is_empty() {
            return Err(Error::config("runs", "at least one run is required"));
        }
        Ok(s)
    }

    /// Resolved run per (config, seed), in suite order.
    pub fn resolve(&self, base: &Path) -> Result<Vec<ResolvedRun>> {
        let mut out = Vec::new();
        for entry in &self.runs {
            let path = base.join(entry);
            let cfg = if path.is_file() {
                RunConfig::load(&path)?
            } else {
                RunConfig::preset(entry)?
            };
            for &seed in &self.seeds {
                let mut c = cfg.clone();
                c.run_seed = Some(seed);
                if let Some(g) = self.generations {
                    c.generations = Some(g);
                }
                out.push(c.resolve()?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub name: String,
    pub algorithm: String,
    pub seed: u64,
    pub switch_generation: u64,
    pub threshold: f64,
    /// First generation in the switched phase whose best fitness reaches
    /// the threshold; `None` when it never does.
    pub recovered_at: Option<u64>,
}

impl Recovery {
    pub fn generations_to_recover(&self) -> Option<u64> {
        self.recovered_at.map(|g| g - self.switch_generation)
    }
}

/// Recovery after each switch, searched until the next switch or the end.
pub fn recoveries(curves: &[GenerationMetrics], switches: &[u64], threshold: Option<f64>) -> Vec<(u64, f64, Option<u64>)> {
    let mut out = Vec::new();
    for (i, &s) in switches.iter().enumerate() {
        let prev = if i == 0 { 0 } else { switches[i - 1] };
        let next = switches.get(i + 1).copied().unwrap_or(u64::MAX);
        let threshold = threshold.unwrap_or_else(|| {
            curves
                .iter()
                .filter(|m| m.generation >= prev && m.generation < s)
                .map(|m| m.best_fitness)
                .fold(f64::NEG_INFINITY, f64::max)
        });
        let at = curves
            .iter()
            .filter(|m| m.generation >= s && m.generation < next)
            .find(|m| m.best_fitness >= threshold)
            .map(|m| m.generation);
        out.push((s, threshold, at));
    }
    out
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

#[derive(Debug, Clone)]
pub struct SuiteOutput {
    pub dir: PathBuf,
    pub runs: Vec<RunOutput>,
    pub recoveries: Vec<Recovery>,
}

pub fn run_suite(suite: &SuiteConfig, suite_path: &Path, out_root: Option<&Path>) -> Result<SuiteOutput> {
    let base = suite_path.parent().unwrap_or(Path::new("."));
    let resolved = suite.resolve(base)?;
    let root = match out_root {
        Some(p) => p.to_path_buf(),
        None => std::env::var("SRGHN_OUT_DIR")
            .ok()
            .or_else(|| suite.out_dir.clone())
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("bench-out")),
    };
    let dir = root.join(&suite.name);
    fs::create_dir_all(&dir)?;
    let mut runs = Vec::new();
    for r in &resolved {
        let run_dir = dir.join(&r.name).join(format!("seed-{}", r.evo.run_seed));
        log::info!("suite {}: {} seed {}", suite.name, r.name, r.evo.run_seed);
        runs.push(run(r, &run_dir)?);
    }
    fs::write(dir.join("constants.json"), serde_json::to_string_pretty(&resolved)?)?;

    let mut recs = Vec::new();
    for out in &runs {
        let r = &out.meta.resolved;
        for (s, threshold, at) in recoveries(&out.metrics, &r.switch_generations, suite.recovery_threshold) {
            recs.push(Recovery {
                name: r.name.clone(),
                algorithm: out.meta.algorithm.clone(),
                seed: r.evo.run_seed,
                switch_generation: s,
                threshold,
                recovered_at: at,
            });
        }
    }
    write_comparison(&dir, &runs)?;
    write_recovery(&dir, &recs)?;
    Ok(SuiteOutput {
        dir,
        runs,
        recoveries: recs,
    })
}

fn write_comparison(dir: &Path, runs: &[RunOutput]) -> Result<()> {
    let mut csv = String::from(
        "name,algorithm,generation,runs,best_mean,best_std,mean_mean,mean_std,distance_mean,distance_std\n",
    );
    let mut names: Vec<&str> = Vec::new();
    for r in runs {
        if !names.contains(&r.meta.name.as_str()) {
            names.push(&r.meta.name);
        }
    }
    for name in names {
        let group: Vec<&RunOutput> = runs.iter().filter(|r| r.meta.name == name).collect();
        let len = group.iter().map(|r| r.metrics.len()).min().unwrap_or(0);
        for g in 0..len {
            let col = |f: fn(&GenerationMetrics) -> f64| -> Vec<f64> { group.iter().map(|r| f(&r.metrics[g])).collect() };
            let (bm, bs) = mean_std(&col(|m| m.best_fitness));
            let (mm, ms) = mean_std(&col(|m| m.mean_fitness));
            let (dm, ds) = mean_std(&col(|m| m.mean_pairwise_distance));
            writeln!(
                csv,
                "{name},{},{},{},{},{},{},{},{},{}",
                group[0].meta.algorithm,
                group[0].metrics[g].generation,
                group.len(),
                fmt_f64(bm),
                fmt_f64(bs),
                fmt_f64(mm),
                fmt_f64(ms),
                fmt_f64(dm),
                fmt_f64(ds)
            )
            .expect("writing to a String");
        }
    }
    fs::write(dir.join("comparison.csv"), csv)?;
    Ok(())
}

fn write_recovery(dir: &Path, recs: &[Recovery]) -> Result<()> {
    let mut csv = String::from("name,algorithm,seed,switch_generation,threshold,recovered_at,generations_to_recover\n");
    for r in recs {
        writeln!(
            csv,
            "{},{},{},{},{},{},{}",
            r.name,
            r.algorithm,
            r.seed,
            r.switch_generation,
            fmt_f64(r.threshold),
            r.recovered_at.map(|g| g.to_string()).unwrap_or_else(|| "no recovery".into()),
            r.generations_to_recover().map(|g| g.to_string()).unwrap_or_else(|| "no recovery".into()),
        )
        .expect("writing to a String");
    }
    fs::write(dir.join("recovery.csv"), csv)?;

    let mut md = String::from("| run | switch | recovered | mean generations to recover |\n|---|---|---|---|\n");
    let mut keys: Vec<(String, u64)> = Vec::new();
    for r in recs {
        if !keys.contains(&(r.name.clone(), r.switch_generation)) {
            keys.push((r.name.clone(), r.switch_generation));
        }
    }
    for (name, s) in keys {
        let group: Vec<&Recovery> = recs.iter().filter(|r| r.name == name && r.switch_generation == s).collect();
        let times: Vec<f64> = group.iter().filter_map(|r| r.generations_to_recover()).map(|g| g as f64).collect();
        let mean = if times.is_empty() {
            "no recovery".to_string()
        } else {
            format!("{:.1}", mean_std(&times).0)
        };
        writeln!(md, "| {name} | {s} | {}/{} | {mean} |", times.len(), group.len()).expect("writing to a String");
    }
    fs::write(dir.join("recovery.md"), md)?;
    Ok(())
}
