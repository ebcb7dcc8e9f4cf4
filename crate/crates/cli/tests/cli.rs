use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mll_cli::config::RunConfig;
use mll_core::io::{read_embeddings, read_pairs, write_embeddings, write_labeled_embeddings};
use mll_core::metrics::cosine_scores;
use mll_core::Matrix;
use serde_json::Value;

fn mll(args: &[&str]) -> Output {
    mll_env(args, &[])
}

fn mll_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mll"));
    cmd.args(args).env_remove("MLL_THREADS").env("RUST_LOG", "error");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("spawn mll")
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

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const RUN_FILES: [&str; 6] = [
    "training_log.csv",
    "embeddings.bin",
    "embeddings.labels",
    "geometry.json",
    "scatter.svg",
    "",
];

fn run_dirs(out: &Path) -> Vec<PathBuf> {
    let mut dirs: Vec<PathBuf> = fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    dirs
}

#[test]
fn toy_with_zero_iterations_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("toy");
    let o = mll(&["--out", s(&out), "toy", "--iterations", "0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dirs = run_dirs(&out);
    assert_eq!(dirs.len(), 3);
    assert!(dirs[2].ends_with("02-elasticface-arc-plus-m-0-5-sigma-0-0175"));
    for d in &dirs {
        for f in RUN_FILES.iter().filter(|f| !f.is_empty()) {
            assert!(d.join(f).is_file(), "{}/{f}", d.display());
        }
        let log = fs::read_to_string(d.join("training_log.csv")).unwrap();
        assert_eq!(log.trim(), "iteration,loss,lr,margin_mean,margin_std");
        let g = json(&d.join("geometry.json"));
        assert_eq!(g["consecutive_angles_deg"].as_array().unwrap().len(), 8);
    }
    assert!(out.join("summary.json").is_file());
    let written = fs::read_to_string(out.join("run_config.toml")).unwrap();
    let cfg = RunConfig::from_toml(&written, "run_config.toml").unwrap();
    assert_eq!(cfg.train.total_iterations, 0);
}

#[test]
fn toy_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = mll(&["--seed", "3", "--out", s(out), "toy", "--iterations", "40"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for (da, db) in run_dirs(&a).iter().zip(run_dirs(&b)) {
        for f in RUN_FILES.iter().filter(|f| !f.is_empty()) {
            assert_eq!(fs::read(da.join(f)).unwrap(), fs::read(db.join(f)).unwrap(), "{f}");
        }
    }
    assert_eq!(fs::read(a.join("summary.json")).unwrap(), fs::read(b.join("summary.json")).unwrap());
}

#[test]
fn toy_single_loss_override() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("one");
    let o = mll(&[
        "--out", s(&out), "toy", "--iterations", "5", "--loss", "elastic-cos", "--margin", "0.35", "--sigma", "0.05",
        "--plus",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let dirs = run_dirs(&out);
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].ends_with("00-elasticface-cos-plus-m-0-35-sigma-0-05"));
}

#[test]
fn shipped_toy_config_round_trips() {
    let text = fs::read_to_string(repo_file("configs/toy.toml")).unwrap();
    let cfg = RunConfig::from_toml(&text, "toy.toml").unwrap();
    assert_eq!(cfg.losses.len(), 3);
    let again = RunConfig::from_toml(&cfg.to_toml().unwrap(), "mem").unwrap();
    assert_eq!(again, cfg);
    assert_eq!(cfg, RunConfig { out: "runs/toy".into(), ..RunConfig::default() });
}

#[test]
fn config_with_unknown_key_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.toml");
    fs::write(&path, "seed = 1\n[train]\nbatch_size = 4\nlearning_rate = 0.1\n").unwrap();
    let o = mll(&["toy", "--config", s(&path)]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    assert!(err.contains("bad.toml") && err.contains("learning_rate"), "{err}");
}

#[test]
fn unknown_flag_and_bad_thread_count_exit_2() {
    assert_eq!(code(&mll(&["toy", "--bogus"])), 2);
    assert_eq!(code(&mll(&["--profile", "huge", "toy"])), 2);
    let tmp = tempfile::tempdir().unwrap();
    let o = mll_env(
        &["--out", s(tmp.path()), "sweep", "--grid", s(&repo_file("configs/selection_tables.toml"))],
        &[("MLL_THREADS", "0")],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("MLL_THREADS"));
}

#[test]
fn eval_missing_file_names_the_path() {
    let o = mll(&["eval", "--embeddings", "/definitely/not/here.bin", "--geometry"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("/definitely/not/here.bin"), "{}", stderr(&o));
}

fn angle_rows(angles_deg: &[f64]) -> Matrix {
    let rows: Vec<[f64; 2]> = angles_deg
        .iter()
        .map(|a| [a.to_radians().cos(), a.to_radians().sin()])
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

#[test]
fn eval_separable_embeddings_score_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    // Four classes at 0, 90, 180 and 270 degrees, three points each.
    let mut angles = Vec::new();
    let mut labels = Vec::new();
    for k in 0..4 {
        for off in [-5.0, 0.0, 5.0] {
            angles.push(90.0 * k as f64 + off);
            labels.push(k);
        }
    }
    let emb = tmp.path().join("probe.bin");
    write_labeled_embeddings(&emb, &angle_rows(&angles), &labels).unwrap();
    let gallery = tmp.path().join("gallery.bin");
    write_labeled_embeddings(&gallery, &angle_rows(&[2.0, 88.0, 181.0, 269.0]), &[0, 1, 2, 3]).unwrap();

    let mut pairs = String::from("2\n");
    for i in 0..12 {
        let j = if i % 3 == 2 { i - 2 } else { i + 1 };
        pairs.push_str(&format!("{i} {j} 1\n"));
        pairs.push_str(&format!("{i} {} 0\n", (i + 3) % 12));
    }
    let pairs_path = tmp.path().join("pairs.txt");
    fs::write(&pairs_path, pairs).unwrap();

    let out = tmp.path().join("report");
    let o = mll(&[
        "--out", s(&out), "eval", "--embeddings", s(&emb), "--pairs", s(&pairs_path), "--far", "0.1",
        "--gallery", s(&gallery), "--geometry",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r = json(&out.join("eval.json"));
    assert_eq!(r["verification"]["mean_accuracy"], 1.0);
    assert_eq!(r["tar_at_far"][0]["tar"], 1.0);
    assert_eq!(r["rank1"]["accuracy"], 1.0);
    let gaps: Vec<f64> = r["geometry"]["consecutive_angles_deg"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(gaps.iter().all(|g| (g - 90.0).abs() < 1e-9), "{gaps:?}");
    let stdout: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(stdout, r);
}

/// Accept-if-greater threshold chosen on the other folds by trying every
/// midpoint; smallest threshold among ties.
fn brute_force_kfold(scores: &[f64], genuine: &[bool], folds: &[usize], k: usize) -> f64 {
    let mut total = 0.0;
    for f in 0..k {
        let train: Vec<usize> = (0..scores.len()).filter(|&i| folds[i] != f).collect();
        let test: Vec<usize> = (0..scores.len()).filter(|&i| folds[i] == f).collect();
        let mut values: Vec<f64> = train.iter().map(|&i| scores[i]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut candidates = vec![f64::NEG_INFINITY];
        candidates.extend(values.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        candidates.push(f64::INFINITY);
        let correct = |t: f64, idx: &[usize]| idx.iter().filter(|&&i| (scores[i] > t) == genuine[i]).count();
        let mut best = candidates[0];
        for &t in &candidates[1..] {
            if correct(t, &train) > correct(best, &train) {
                best = t;
            }
        }
        total += correct(best, &test) as f64 / test.len() as f64;
    }
    total / k as f64
}

#[test]
fn eval_twenty_pair_fixture_matches_brute_force() {
    let tmp = tempfile::tempdir().unwrap();
    let angles: Vec<f64> = (0..16).map(|i| (i * 37 % 360) as f64 + 0.25 * i as f64).collect();
    let emb = tmp.path().join("emb.bin");
    write_embeddings(&emb, &angle_rows(&angles)).unwrap();
    // (a, b, genuine); a few genuine pairs are far apart and a few impostors
    // close, so no threshold is perfect.
    let fixture = [
        (0, 1, 1), (2, 3, 0), (4, 5, 1), (6, 7, 0), (8, 9, 1), (10, 11, 0), (12, 13, 1), (14, 15, 0), (0, 10, 1),
        (1, 11, 0), (2, 12, 1), (3, 13, 0), (4, 14, 1), (5, 15, 0), (6, 0, 1), (7, 1, 0), (8, 2, 1), (9, 3, 0),
        (10, 4, 0), (11, 5, 1),
    ];
    let mut text = String::from("4\n");
    for (a, b, g) in fixture {
        text.push_str(&format!("{a} {b} {g}\n"));
    }
    let pairs = tmp.path().join("pairs.txt");
    fs::write(&pairs, text).unwrap();

    // Scores from the stored f32 rows, so near-ties resolve as in the tool.
    let stored = read_embeddings(&emb).unwrap();
    let protocol = read_pairs(&pairs).unwrap();
    let scored = cosine_scores(&stored, &protocol).unwrap();
    let genuine: Vec<bool> = fixture.iter().map(|&(_, _, g)| g == 1).collect();
    let folds: Vec<usize> = (0..20).map(|i| i / 5).collect();
    assert_eq!(scored.genuine, genuine);
    assert_eq!(scored.folds, folds);
    let expected = brute_force_kfold(&scored.scores, &genuine, &folds, 4);

    let out = tmp.path().join("r");
    let o = mll(&["--out", s(&out), "eval", "--embeddings", s(&emb), "--pairs", s(&pairs)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let got = json(&out.join("eval.json"))["verification"]["mean_accuracy"].as_f64().unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    assert!(expected < 1.0);
}

#[test]
fn eval_malformed_pairs_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let emb = tmp.path().join("e.bin");
    write_embeddings(&emb, &angle_rows(&[0.0, 10.0, 20.0])).unwrap();
    let pairs = tmp.path().join("p.txt");
    fs::write(&pairs, "1\n0 1 1\n0 2 maybe\n").unwrap();
    let o = mll(&["eval", "--embeddings", s(&emb), "--pairs", s(&pairs)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("p.txt:3:"), "{}", stderr(&o));
}

#[test]
fn sweep_ingests_selection_tables() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mll(&["--out", s(tmp.path()), "sweep", "--grid", s(&repo_file("configs/selection_tables.toml"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let t = json(&tmp.path().join("borda.json"));
    let sums: Vec<u64> = t["bc_sum"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    assert_eq!(sums, [8, 13, 9, 11, 11, 12, 17, 13, 15, 10, 13, 9, 11, 10, 9, 13, 11, 18, 8, 11, 17, 14]);
    let configs = t["configs"].as_array().unwrap();
    let selected: Vec<&str> = t["selected"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| configs[i.as_u64().unwrap() as usize].as_str().unwrap())
        .collect();
    assert_eq!(selected[1], "ElasticFace-Arc sigma=0.05");
    assert_eq!(selected[3], "CosFace m=0.35");
    let csv = fs::read_to_string(tmp.path().join("borda.csv")).unwrap();
    assert_eq!(csv.lines().count(), 23);
}

#[test]
fn sweep_single_config_scores_one_per_benchmark() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = tmp.path().join("g.toml");
    fs::write(
        &grid,
        "benchmarks = [\"a\", \"b\", \"c\"]\n[[groups]]\nname = \"only\"\n[[groups.configs]]\nname = \"x\"\naccuracy = [1.0, 2.0, 3.0]\n",
    )
    .unwrap();
    let o = mll(&["--out", s(tmp.path()), "sweep", "--grid", s(&grid)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(json(&tmp.path().join("borda.json"))["bc_sum"][0], 3);
}

#[test]
fn training_sweep_is_independent_of_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let grid = repo_file("configs/toy_sweep.toml");
    let mut outputs = Vec::new();
    for threads in ["1", "2"] {
        let out = tmp.path().join(threads);
        let o = mll_env(
            &["--out", s(&out), "sweep", "--grid", s(&grid), "--iterations", "30"],
            &[("MLL_THREADS", threads)],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push((fs::read(out.join("borda.json")).unwrap(), fs::read(out.join("runs.json")).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn gradcheck_exit_code_follows_report() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mll(&["--out", s(tmp.path()), "gradcheck", "--trials", "20"]);
    let r = json(&tmp.path().join("gradcheck.json"));
    let passed = r["passed"].as_bool().unwrap();
    assert_eq!(code(&o), if passed { 0 } else { 1 }, "{}", stderr(&o));
    assert_eq!(r["families"].as_array().unwrap().len(), 18);
    for z in r["sigma_zero"].as_array().unwrap() {
        assert_eq!(z["max_abs_loss_diff"], 0.0);
        assert_eq!(z["max_abs_grad_diff"], 0.0);
    }
}

#[test]
fn gradcheck_single_family() {
    let tmp = tempfile::tempdir().unwrap();
    let o = mll(&["--out", s(tmp.path()), "gradcheck", "--trials", "20", "--loss", "cosface", "--scale", "4"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let r = json(&tmp.path().join("gradcheck.json"));
    assert_eq!(r["families"].as_array().unwrap().len(), 1);
    assert_eq!(r["sigma_zero"].as_array().unwrap().len(), 4);
    assert_eq!(code(&mll(&["gradcheck", "--trials", "0"])), 2);
    assert_eq!(code(&mll(&["gradcheck", "--sigma", "0.1"])), 2);
}

#[test]
fn sample_margins_reports_moments() {
    let o = mll(&["--seed", "5", "sample-margins", "--n", "200000", "--check"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!((r["sample_mean"].as_f64().unwrap() - 0.5).abs() < 5e-4);
    assert!((r["sample_std"].as_f64().unwrap() / 0.05 - 1.0).abs() < 0.01);
    assert_eq!(r["ks_pass"], true);

    let o = mll(&["sample-margins", "--n", "10", "--std", "0"]);
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["stream_pos"], 0);
    assert_eq!(r["sample_std"], 0.0);
    assert!(r["ks_statistic"].is_null());
}
