use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn slowmf(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_slowmf"));
    cmd.args(args)
        .env_remove("SLOWMF_SEED")
        .env_remove("SLOWMF_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

struct Run {
    dir: TempDir,
    config: PathBuf,
}

impl Run {
    fn new(name: &str, text: &str) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join(name);
        fs::write(&config, text).unwrap();
        Self { dir, config }
    }

    fn out(&self, sub: &str) -> PathBuf {
        self.dir.path().join(sub)
    }

    fn exec(&self, command: &str, sub: &str) -> Output {
        let out = self.out(sub);
        slowmf(
            &[
                command,
                "--config",
                self.config.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ],
            &[],
        )
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn column(path: &Path, name: &str) -> Vec<f64> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let idx = r.headers().unwrap().iter().position(|h| h == name).unwrap();
    r.records()
        .map(|rec| rec.unwrap()[idx].parse().unwrap())
        .collect()
}

const PATHS: &str = "seed = 1\n[paths]\nt_end = 0.5\ndt = 1e-3\nmu_list = [0.1]\nn_seeds = 3\n";

#[test]
fn paths_emit_triples_and_replay_byte_identically() {
    let run = Run::new("paths.toml", PATHS);
    let first = run.exec("paths", "a");
    assert_eq!(code(&first), 0, "{}", stderr(&first));
    assert_eq!(code(&run.exec("paths", "b")), 0);
    let manifest = json(&run.out("a").join("manifest.json"));
    let files = manifest["files"].as_array().unwrap();
    for s in 1..=3 {
        for stem in ["brownian", "ou_mu0.1", "integrated_mu0.1", "error_mu0.1"] {
            let name = format!("{stem}_s{s}.csv");
            assert!(
                files.iter().any(|f| f["path"] == name.as_str()),
                "{name} missing"
            );
        }
    }
    for f in files {
        let name = f["path"].as_str().unwrap();
        assert_eq!(
            fs::read(run.out("a").join(name)).unwrap(),
            fs::read(run.out("b").join(name)).unwrap()
        );
    }
    let mut other = json(&run.out("b").join("manifest.json"));
    other["config"]["output_dir"] = manifest["config"]["output_dir"].clone();
    assert_eq!(manifest, other);
    assert_eq!(manifest["config"]["paths"]["n_seeds"], 3);
}

#[test]
fn empty_correlation_list_is_a_usage_error() {
    let run = Run::new("p.toml", "[paths]\nmu_list = []\n");
    let o = run.exec("paths", "o");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("mu_list"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected() {
    let run = Run::new("p.toml", "[paths]\nmu = 0.1\n");
    assert_eq!(code(&run.exec("paths", "o")), 2);
    let run = Run::new("p.toml", "colour = 1\n");
    assert_eq!(code(&run.exec("paths", "o")), 2);
}

#[test]
fn missing_observation_file_is_rejected() {
    let run = Run::new("e.toml", "observation = \"nowhere.csv\"\n");
    let o = run.exec("estimate", "o");
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("nowhere.csv"));
}

#[test]
fn violated_assumptions_exit_with_three() {
    let run = Run::new(
        "m.toml",
        "[model]\nlipschitz = 1.0\n[manifold]\nxi_list = [[0.0]]\n",
    );
    let o = run.exec("manifold", "o");
    assert_eq!(code(&o), 3);
    assert!(stderr(&o).contains("gap condition"), "{}", stderr(&o));
}

#[test]
fn fixed_point_failure_exits_with_four() {
    let cfg = "[manifold]\ndt = 1e-3\nmu_list = []\nxi_list = [[1.0]]\nlp = { max_iter = 1 }\n";
    let run = Run::new("m.toml", cfg);
    assert_eq!(code(&run.exec("manifold", "o")), 4);
}

#[test]
fn noiseless_manifold_over_zero_is_zero() {
    let cfg = "[model]\nsigma = [0.0]\n[manifold]\ndt = 1e-3\nmu_list = [0.1]\nxi_list = [[0.0]]\n";
    let run = Run::new("m.toml", cfg);
    let o = run.exec("manifold", "o");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for stem in ["graph_eps0.1_white_s2024", "graph_eps0.1_mu0.1_s2024"] {
        assert_eq!(
            column(&run.out("o").join(format!("{stem}.csv")), "h"),
            vec![0.0]
        );
    }
}

#[test]
fn converge_needs_three_points() {
    let run = Run::new("c.toml", "[converge]\nmu_list = [0.1, 0.01]\n");
    assert_eq!(code(&run.exec("converge", "o")), 2);
}

#[test]
fn converge_tables_carry_finite_slopes() {
    let cfg = "[converge]\neps_list = [0.1]\nmu_list = [0.1, 0.03, 0.01]\ndt = 1e-3\nn_seeds = 4\n";
    let run = Run::new("c.toml", cfg);
    let o = run.exec("converge", "o");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let meta = json(&run.out("o").join("gap_eps0.1.json"));
    assert!(meta["slope"].as_f64().unwrap().is_finite());
    assert_eq!(
        column(&run.out("o").join("gap_eps0.1.csv"), "stderr").len(),
        3
    );
    let noise = json(&run.out("o").join("noise_rate.json"));
    assert!(noise["slope"].as_f64().unwrap() > 0.0);
}

#[test]
fn track_rates_and_on_manifold_floor() {
    let run = Run::new("t.toml", "[track]\nt_end = 5.0\n");
    let o = run.exec("track", "off");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let meta = json(&run.out("off").join("track_s2024.json"));
    assert_eq!(meta["rate_ok"], true, "{meta}");

    let run = Run::new("t.toml", "[track]\nt_end = 5.0\nfast_offset = [0.0]\n");
    assert_eq!(code(&run.exec("track", "on")), 0);
    let meta = json(&run.out("on").join("track_s2024.json"));
    let gaps = column(&run.out("on").join("track_s2024.csv"), "gap");
    let floor = meta["floor"].as_f64().unwrap();
    // a flat series: the first tenth sits at the floor level of the second half
    let head = &gaps[..gaps.len() / 10];
    let head_mean = head.iter().sum::<f64>() / head.len() as f64;
    assert!(head_mean <= 3.0 * floor, "{head_mean} vs {floor}");
}

#[test]
fn estimation_matches_truth_and_replays() {
    for variant in ["wz_reduced", "white_reduced"] {
        let run = Run::new("e.toml", &format!("[estimate]\nvariant = \"{variant}\"\n"));
        let a = run.exec("estimate", "a");
        assert_eq!(code(&a), 0, "{}", stderr(&a));
        assert!(stderr(&a).contains("wall_seconds"));
        assert_eq!(code(&run.exec("estimate", "b")), 0);
        let ra = fs::read(run.out("a").join("estimate.json")).unwrap();
        assert_eq!(ra, fs::read(run.out("b").join("estimate.json")).unwrap());
        let r = json(&run.out("a").join("estimate.json"));
        let a_hat = r["result"]["a_hat"].as_f64().unwrap();
        assert!((a_hat - 0.1).abs() <= 5e-3, "{variant}: {a_hat}");
        assert!(r["result"]["objective"].as_f64().unwrap() <= 0.01);
    }
}

#[test]
fn estimation_reads_an_observation_file() {
    let run = Run::new("e.toml", "[estimate]\nt_end = 5.0\n");
    assert_eq!(code(&run.exec("estimate", "gen")), 0);
    let obs = run.out("gen").join("observation.csv");
    let cfg = format!(
        "observation = \"{}\"\n[estimate]\nt_end = 5.0\n",
        obs.display()
    );
    let second = Run::new("e2.toml", &cfg);
    let o = second.exec("estimate", "read");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let a = json(&run.out("gen").join("estimate.json"));
    let b = json(&second.out("read").join("estimate.json"));
    assert_eq!(a["result"]["a_hat"], b["result"]["a_hat"]);
    assert!(!second.out("read").join("observation.csv").exists());
}

#[test]
fn diagnose_zero_noise_and_equal_scales() {
    let run = Run::new(
        "d.toml",
        "[model]\nsigma = [0.0]\n[diagnose]\neps_list = [0.1, 0.05]\nn_seeds = 3\n",
    );
    assert_eq!(code(&run.exec("diagnose", "zero")), 0);
    assert!(
        column(&run.out("zero").join("nonuniformity.csv"), "mean_abs_n")
            .iter()
            .all(|x| *x == 0.0)
    );

    let run = Run::new(
        "d.toml",
        "[diagnose]\nmu = 0.05\neps_list = [0.1, 0.05, 0.02]\nn_seeds = 5\n",
    );
    let o = run.exec("diagnose", "same");
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        column(&run.out("same").join("nonuniformity.csv"), "mean_abs_n")
            .iter()
            .all(|x| x.is_finite() && *x > 0.0)
    );
}

#[test]
fn json_config_env_overrides_and_json_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("cfg.json");
    fs::write(
        &config,
        r#"{"format": "json", "seed": 3, "diagnose": {"eps_list": [0.1, 0.05], "n_seeds": 2}}"#,
    )
    .unwrap();
    let out = dir.path().join("env_out");
    let o = slowmf(
        &["diagnose", "--config", config.to_str().unwrap()],
        &[("SLOWMF_SEED", "11"), ("SLOWMF_OUT", out.to_str().unwrap())],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = json(&out.join("manifest.json"));
    assert_eq!(manifest["seed"], 11);
    let table = json(&out.join("nonuniformity.json"));
    assert_eq!(table["columns"][0], "eps");
    assert_eq!(table["rows"].as_array().unwrap().len(), 2);

    // a flag beats the environment; JSON text under a .toml name still loads
    let toml_named = dir.path().join("cfg.toml");
    fs::copy(&config, &toml_named).unwrap();
    let flag_out = dir.path().join("flag_out");
    let o = slowmf(
        &[
            "diagnose",
            "--config",
            toml_named.to_str().unwrap(),
            "--seed",
            "5",
            "--out",
            flag_out.to_str().unwrap(),
        ],
        &[("SLOWMF_SEED", "11")],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&flag_out.join("manifest.json"))["seed"], 5);
}

#[test]
fn bad_subcommand_is_a_usage_error() {
    assert_eq!(code(&slowmf(&["plot"], &[])), 2);
    assert_eq!(code(&slowmf(&["paths"], &[])), 2);
}
