//! End-to-end tests of the `gradlens` binary and in-process experiment runs
//! on miniature configurations.

use gradlens_cli::artifacts::{bounding_box, class_color, fmt, gray_to_input, grid_point, read_pgm};
use gradlens_cli::config::Config;
use gradlens_cli::experiments;
use gradlens_core::checkpoint::load_model;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gradlens"))
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).expect("write config");
    path
}

/// Toy boundary config small enough for test budgets.
const MICRO_BOUNDARY: &str = r#"
seeds = [0]

[dataset]
source = "toy"

[dataset.toy]
samples_per_class = 200

[model]
kind = "toy"

[train]
epochs = 10

[attack]
norm = "l2"
epsilon = 0.5
steps = 40

[advtrain]
steps = 10

[boundary]
raster = 64

[projector]
kind = "pca"
k = 1
"#;

const MICRO_MANIFOLD: &str = r#"
seeds = [0]

[dataset]
source = "synthetic"

[dataset.synthetic]
train_per_class = 40
test_per_class = 15

[model]
kind = "small_cnn"

[train]
epochs = 2

[attack]
norm = "l2"
steps = 5

[advtrain]
steps = 5

[sweep]
grid = [0.0, 0.5]

[manifold_distance]
max_attack_examples = 20
sample_images = 2

[projector]
kind = "pca"
variance_target = 0.9
"#;

const MICRO_ROAR_KAR: &str = r#"
seeds = [0]
methods = ["grad", "grad_input"]

[dataset]
source = "synthetic"

[dataset.synthetic]
train_per_class = 40
test_per_class = 15

[model]
kind = "small_cnn"

[train]
epochs = 2

[attack]
norm = "l2"
steps = 5

[advtrain]
steps = 5

[sweep]
grid = [0.0, 1.0]

[occlusion]
fractions = [0.3, 0.7]
retrains = 2
"#;

#[test]
fn help_lists_every_experiment() {
    let out = bin().arg("--help").output().expect("run gradlens --help");
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["boundary-tilting", "manifold-distance", "roar-kar", "tradeoff"] {
        assert!(text.contains(name), "--help must list {name}");
    }
}

#[test]
fn unknown_experiment_prints_machine_readable_error() {
    let out = bin().args(["not-an-experiment", "--config", "x.toml"]).output().unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().next().expect("one error line");
    let v: serde_json::Value = serde_json::from_str(line).expect("stderr line is JSON");
    assert_eq!(v["status"], "error");
    assert_eq!(v["experiment"], "not-an-experiment");
    let msg = v["message"].as_str().unwrap();
    assert!(msg.contains("boundary-tilting"), "error should list known experiments: {msg}");
}

#[test]
fn missing_config_file_fails_cleanly() {
    let out = bin()
        .args(["boundary-tilting", "--config", "/nonexistent/nope.toml"])
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(stderr.lines().next().unwrap()).unwrap();
    assert_eq!(v["status"], "error");
}

#[test]
fn invalid_config_key_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "bad.toml", "definitely_not_a_key = 1\n");
    let out = bin()
        .arg("boundary-tilting")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let v: serde_json::Value = serde_json::from_str(stderr.lines().next().unwrap()).unwrap();
    assert!(v["message"].as_str().unwrap().contains("definitely_not_a_key"));
}

#[test]
fn binary_runs_boundary_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", MICRO_BOUNDARY);
    let out_dir = tmp.path().join("run");
    let out = bin()
        .arg("boundary-tilting")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let last = stdout.lines().last().unwrap();
    let v: serde_json::Value = serde_json::from_str(last).expect("final stdout line is JSON");
    assert_eq!(v["status"], "ok");
    assert_eq!(v["experiment"], "boundary-tilting");

    // Every listed artifact exists, and the expected tables are among them.
    let listed: Vec<&str> = stdout.lines().take_while(|l| !l.starts_with('{')).collect();
    assert!(!listed.is_empty());
    for p in &listed {
        assert!(Path::new(p).exists(), "listed artifact {p} missing");
    }
    for want in ["boundary_models.csv", "boundary_attacks.csv", "boundary_dpi.csv", "distances.csv"] {
        assert!(listed.iter().any(|p| p.ends_with(want)), "missing {want}");
        let text = fs::read_to_string(out_dir.join(want)).unwrap();
        assert!(text.lines().count() > 1, "{want} has no data rows");
    }
}

#[test]
fn seed_override_restricts_the_run_to_one_seed() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "b.toml", &MICRO_BOUNDARY.replace("seeds = [0]", "seeds = [0, 1]"));
    let out_dir = tmp.path().join("run");
    let out = bin()
        .arg("boundary-tilting")
        .arg("--config")
        .arg(&cfg)
        .arg("--seed")
        .arg("7")
        .arg("--out")
        .arg(&out_dir)
        .output()
        .unwrap();
    assert!(out.status.success());
    let models = fs::read_to_string(out_dir.join("boundary_models.csv")).unwrap();
    let seeds: Vec<&str> =
        models.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert!(!seeds.is_empty());
    assert!(seeds.iter().all(|&s| s == "7"), "all rows must use the override seed: {seeds:?}");
}

/// Re-running an experiment with the same config must reproduce every
/// artifact byte for byte.
#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = write_config(tmp.path(), "b.toml", MICRO_BOUNDARY);
    let cfg = Config::load(&cfg_path).unwrap();
    let exp = experiments::lookup("boundary-tilting").unwrap();
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    let paths_a = exp.run(&cfg, &dir_a).unwrap();
    let paths_b = exp.run(&cfg, &dir_b).unwrap();
    assert_eq!(paths_a.len(), paths_b.len());
    for (a, b) in paths_a.iter().zip(&paths_b) {
        assert_eq!(a.file_name(), b.file_name());
        let ba = fs::read(a).unwrap();
        let bb = fs::read(b).unwrap();
        assert_eq!(ba, bb, "artifact {:?} differs between reruns", a.file_name());
    }
}

/// The decision raster must agree with fresh model predictions at sampled
/// grid points: checkpoint → prediction → palette color == stored pixel.
#[test]
fn boundary_raster_matches_model_predictions() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = write_config(tmp.path(), "b.toml", MICRO_BOUNDARY);
    let cfg = Config::load(&cfg_path).unwrap();
    let dir = tmp.path().join("run");
    experiments::lookup("boundary-tilting").unwrap().run(&cfg, &dir).unwrap();

    let model = load_model(&dir.join("model_standard_seed0.glck")).unwrap();
    let (train, test) = cfg.load_datasets(0).unwrap();
    let bbox = bounding_box(&[&train, &test], cfg.boundary.padding).unwrap();
    let res = cfg.boundary.raster;

    // Minimal P6 reader for the raster we just wrote.
    let bytes = fs::read(dir.join("boundary_standard_seed0.ppm")).unwrap();
    let header = format!("P6\n{res} {res}\n255\n");
    assert!(bytes.starts_with(header.as_bytes()), "unexpected PPM header");
    let px = &bytes[header.len()..];
    assert_eq!(px.len(), res * res * 3);

    let mut checked = 0;
    for row in (0..res).step_by(7) {
        for col in (0..res).step_by(5) {
            let (x, y) = grid_point(bbox, res, row, col);
            let input =
                gradlens_core::tensor::Tensor::new(vec![1, 2], vec![x, y]).unwrap();
            let class = model.predict(&input).unwrap()[0];
            let at = (row * res + col) * 3;
            assert_eq!(
                [px[at], px[at + 1], px[at + 2]],
                class_color(class),
                "raster pixel ({row},{col}) disagrees with the model"
            );
            checked += 1;
        }
    }
    assert!(checked >= 100, "sampled only {checked} pixels");
}

/// Adversarial sample images must decode to points within the analysis
/// attack ball around their clean counterparts (up to 8-bit quantization).
#[test]
fn adversarial_pgms_respect_the_attack_ball() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = write_config(tmp.path(), "m.toml", MICRO_MANIFOLD);
    let cfg = Config::load(&cfg_path).unwrap();
    let dir = tmp.path().join("run");
    experiments::lookup("manifold-distance").unwrap().run(&cfg, &dir).unwrap();

    let analysis_eps = cfg.manifold_distance.analysis_epsilon_ratio
        * cfg.sweep.grid.iter().cloned().fold(0.0, f64::max);
    let mut pairs = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        let Some(rest) = name.strip_prefix("clean_") else { continue };
        let adv = dir.join(format!("adv_{rest}"));
        let (w, h, clean_px) = read_pgm(&path).unwrap();
        let (aw, ah, adv_px) = read_pgm(&adv).unwrap();
        assert_eq!((w, h), (aw, ah));
        let clean = gray_to_input(&clean_px);
        let advv = gray_to_input(&adv_px);
        let dist: f64 = clean
            .iter()
            .zip(&advv)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // Both images are 8-bit quantized: allow 2·√d·(1/255) slack.
        let slack = 2.0 * ((w * h) as f64).sqrt() / 255.0;
        assert!(
            dist <= analysis_eps + slack,
            "{name}: ‖adv−clean‖₂ = {dist} exceeds ε = {analysis_eps} (+{slack})"
        );
        pairs += 1;
    }
    assert!(pairs >= 4, "expected sample image pairs, found {pairs}");
}

/// mu_scores.csv row count must equal
/// seeds × |grid| × |norms| × |objectives| × |methods| × 2 metrics.
#[test]
fn mu_table_row_count_matches_the_grid() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = write_config(tmp.path(), "r.toml", MICRO_ROAR_KAR);
    let cfg = Config::load(&cfg_path).unwrap();
    let dir = tmp.path().join("run");
    experiments::lookup("roar-kar").unwrap().run(&cfg, &dir).unwrap();

    let text = fs::read_to_string(dir.join("mu_scores.csv")).unwrap();
    let rows = text.lines().count() - 1;
    let expect = cfg.seeds.len()
        * cfg.sweep.grid.len()
        * cfg.sweep.norms.len()
        * cfg.sweep.objectives.len()
        * cfg.methods.len()
        * 2;
    assert_eq!(rows, expect);

    // Occlusion curves: per seed, (methods × grid + 1 random) curves per
    // mode, each |fractions| rows.
    let curves = fs::read_to_string(dir.join("occlusion_curves.csv")).unwrap();
    let curve_rows = curves.lines().count() - 1;
    let per_mode = cfg.methods.len() * cfg.sweep.grid.len() + 1;
    assert_eq!(curve_rows, cfg.seeds.len() * 2 * per_mode * cfg.occlusion.fractions.len());
}

/// tradeoff reuses the sweep but tabulates natural accuracy vs μ.
#[test]
fn tradeoff_emits_accuracy_keyed_tables() {
    let tmp = TempDir::new().unwrap();
    let cfg_path = write_config(tmp.path(), "t.toml", MICRO_ROAR_KAR);
    let cfg = Config::load(&cfg_path).unwrap();
    let dir = tmp.path().join("run");
    experiments::lookup("tradeoff").unwrap().run(&cfg, &dir).unwrap();

    let text = fs::read_to_string(dir.join("tradeoff.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "seed,norm,objective,epsilon,natural_accuracy,method,metric,mu"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), cfg.sweep.grid.len() * cfg.methods.len() * 2);
    // natural accuracy column round-trips as a finite probability
    for row in rows {
        let acc: f64 = row.split(',').nth(4).unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
    }
    let corr = fs::read_to_string(dir.join("tradeoff_correlations.csv")).unwrap();
    assert!(corr.starts_with("seed,norm,objective,method,metric,pearson_acc_mu,spearman_acc_mu"));
}

#[test]
fn float_formatting_round_trips() {
    for v in [0.1, 1.0 / 3.0, 123456.789e-12, -0.0, 2.0_f64.sqrt()] {
        let s = fmt(v);
        assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
    }
}
