use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn srghn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_srghn"))
        .args(args)
        .current_dir(cwd)
        .env_remove("SRGHN_OUT_DIR")
        .env_remove("SRGHN_THREADS")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

const SMALL: &str = "preset = \"grid2d-demo\"\ngrid_size = 15\ngenerations = 6\nswitch_generations = [3]\n";

#[test]
fn run_then_export_everything() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("small.toml"), SMALL).unwrap();
    ok(&srghn(&["run", "--config", "small.toml", "--seed", "4", "--out", "r"], d.path()));
    let run = d.path().join("r");
    for f in ["run_meta.json", "curves.csv", "mutation_rates.csv", "genealogy.txt", "checkpoint.bin"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let listed = ok(&srghn(&["export", "--run", "r", "--what", "all"], d.path()));
    for f in ["curves_tidy.csv", "chronological_tree.csv", "genealogical_tree.csv", "lineage_best_final.jsonl", "boxplot.csv"] {
        assert!(listed.contains(f), "{f} missing from {listed}");
        assert!(run.join("exports").join(f).is_file());
    }
}

#[test]
fn default_run_dir_follows_name_and_seed() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("small.toml"), SMALL).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_srghn"))
        .args(["run", "--config", "small.toml", "--seed", "2"])
        .current_dir(d.path())
        .env("SRGHN_OUT_DIR", "elsewhere")
        .env("SRGHN_THREADS", "1")
        .output()
        .unwrap();
    ok(&out);
    assert!(d.path().join("elsewhere/grid2d-demo/seed-2/curves.csv").is_file());
}

#[test]
fn reruns_are_byte_identical() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("small.toml"), SMALL).unwrap();
    ok(&srghn(&["run", "--config", "small.toml", "--out", "a"], d.path()));
    ok(&srghn(&["run", "--config", "small.toml", "--out", "b"], d.path()));
    for f in ["curves.csv", "mutation_rates.csv", "genealogy.txt"] {
        assert_eq!(fs::read(d.path().join("a").join(f)).unwrap(), fs::read(d.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn invalid_config_names_the_key() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("bad.toml"), "preset = \"grid2d-demo\"\npopulation_size = 22\n").unwrap();
    let out = srghn(&["run", "--config", "bad.toml"], d.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("population_size"));

    fs::write(d.path().join("typo.toml"), "populaton_size = 30\n").unwrap();
    let out = srghn(&["run", "--config", "typo.toml"], d.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("populaton_size"));
}

#[test]
fn export_of_missing_dir_fails() {
    let d = tempfile::tempdir().unwrap();
    let out = srghn(&["export", "--run", "nope", "--what", "curves"], d.path());
    assert!(!out.status.success());
    let out = srghn(&["export", "--run", ".", "--what", "trees"], d.path());
    assert!(!out.status.success());
}

#[test]
fn bench_writes_report() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("small.toml"), SMALL).unwrap();
    fs::write(d.path().join("ga.toml"), "preset = \"ga-cartpole-switch\"\ncartpole_max_steps = 20\nswitch_generations = [3]\n").unwrap();
    fs::write(
        d.path().join("suite.toml"),
        "name = \"tiny\"\nseeds = [0, 1]\nruns = [\"small.toml\", \"ga.toml\"]\ngenerations = 6\n",
    )
    .unwrap();
    let stdout = ok(&srghn(&["bench", "--suite", "suite.toml", "--out", "out"], d.path()));
    assert!(stdout.contains("| run | switch |"));
    let root = d.path().join("out/tiny");
    for f in ["comparison.csv", "recovery.csv", "recovery.md", "constants.json"] {
        assert!(root.join(f).is_file(), "{f}");
    }
    assert!(root.join("ga-cartpole-switch/seed-1/checkpoint.json").is_file());
    let cmp = fs::read_to_string(root.join("comparison.csv")).unwrap();
    assert_eq!(cmp.lines().count(), 1 + 2 * 6);
}

#[test]
fn presets_are_listed_and_printable() {
    let d = tempfile::tempdir().unwrap();
    let list = ok(&srghn(&["presets"], d.path()));
    assert!(list.lines().any(|l| l == "cartpole-switch-paper"));
    let toml = ok(&srghn(&["presets", "cartpole-switch-paper"], d.path()));
    assert!(toml.contains("generations = 1500"));
}
