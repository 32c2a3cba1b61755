use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use psim_core::eval::filtering_error;
use psim_core::psim::{FilterDocument, TrainedFilter};
use psim_core::trajectory::read_trajectories;
use psim_core::StateFilter;

fn psim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psim"))
        .args(args)
        .output()
        .unwrap()
}

fn ok(args: &[&str]) {
    let out = psim(args);
    assert!(
        out.status.success(),
        "psim {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(dir: &Path, rel: &str) -> String {
    dir.join(rel).to_str().unwrap().to_string()
}

fn gen(dir: &Path, seed: &str) -> PathBuf {
    ok(&[
        "gen",
        "--seed",
        seed,
        "--n-traj",
        "60",
        "--n-test",
        "40",
        "--out",
        &path(dir, "gen"),
    ]);
    dir.join("gen")
}

fn read_csv(file: &Path) -> Vec<csv::StringRecord> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(file)
        .unwrap()
        .records()
        .map(Result::unwrap)
        .collect()
}

#[test]
fn trained_filter_reloads_and_matches_eval() {
    let dir = tempfile::tempdir().unwrap();
    let g = gen(dir.path(), "4");
    for (algo, learner) in [("dagger", "linear"), ("forward", "rff")] {
        let out = path(dir.path(), algo);
        ok(&[
            "train",
            "--data",
            &path(&g, "train.jsonl"),
            "--algo",
            algo,
            "--learner",
            learner,
            "--rff-dim",
            "40",
            "--phi",
            "phi2",
            "--out",
            &out,
        ]);
        let text = std::fs::read_to_string(Path::new(&out).join("filter.json")).unwrap();
        let doc: FilterDocument = serde_json::from_str(&text).unwrap();
        let filter = TrainedFilter::from_document(&doc).unwrap();
        assert_eq!(
            serde_json::to_string_pretty(
                &filter.to_document(doc.header.algorithm, doc.header.selected_iteration)
            )
            .unwrap(),
            text.trim_end()
        );

        let test = read_trajectories(g.join("test.jsonl")).unwrap();
        let probe = filter.rollout(&test[0]).unwrap();
        assert!(probe.iter().all(|s| s.m.iter().all(|v| v.is_finite())));

        let eval_dir = path(dir.path(), &format!("eval-{algo}"));
        ok(&[
            "eval",
            "--model",
            &path(Path::new(&out), "filter.json"),
            "--data",
            &path(&g, "test.jsonl"),
            "--out",
            &eval_dir,
        ]);
        let rows = read_csv(&Path::new(&eval_dir).join("eval.csv"));
        let expected = filtering_error(&filter, &test, 2).unwrap();
        assert_eq!(rows.len(), 2);
        for (row, e) in rows.iter().zip(&expected.per_horizon) {
            assert_eq!(row[1].parse::<usize>().unwrap(), e.horizon);
            assert_eq!(row[2].parse::<f64>().unwrap(), e.mse);
            assert_eq!(row[3].parse::<usize>().unwrap(), e.n_samples);
        }
    }
}

#[test]
fn runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [a.path(), b.path()] {
        let g = gen(dir, "9");
        ok(&[
            "train",
            "--data",
            &path(&g, "train.jsonl"),
            "--seed",
            "2",
            "--out",
            &path(dir, "t"),
        ]);
    }
    for file in [
        "gen/train.jsonl",
        "gen/test.jsonl",
        "gen/meta.json",
        "t/filter.json",
        "t/train_report.csv",
    ] {
        assert_eq!(
            std::fs::read(a.path().join(file)).unwrap(),
            std::fs::read(b.path().join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let g = gen(dir.path(), "1");
    let train = path(&g, "train.jsonl");
    let code = |args: &[&str]| psim(args).status.code();
    assert_eq!(
        code(&["gen", "--len", "1", "--out", &path(dir.path(), "bad")]),
        Some(2)
    );
    assert!(!dir.path().join("bad").exists());
    assert_eq!(
        code(&[
            "train",
            "--data",
            &train,
            "--algo",
            "forward",
            "--T",
            "9",
            "--out",
            &path(dir.path(), "x")
        ]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "eval",
            "--model",
            &path(&g, "oracle_filter.json"),
            "--data",
            &path(&g, "test.jsonl"),
            "--horizon",
            "3",
            "--out",
            &path(dir.path(), "x")
        ]),
        Some(2)
    );
    assert_eq!(
        code(&[
            "train",
            "--data",
            &path(dir.path(), "missing.jsonl"),
            "--out",
            &path(dir.path(), "x")
        ]),
        Some(1)
    );
    assert_eq!(code(&["train", "--no-such-flag"]), Some(2));
    assert!(!dir.path().join("x").exists());
}

#[test]
fn fig2_small_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "fig2");
    ok(&[
        "fig2", "--seed", "3", "--grid", "20,40", "--n-test", "50", "--iters", "3", "--out", &out,
    ]);
    let rows = read_csv(&Path::new(&out).join("fig2.csv"));
    let methods = ["psim-dagger", "psim-forward", "ar-1", "ar-2", "ar-5"];
    assert_eq!(rows.len(), methods.len() * 2);
    for m in methods {
        for n in ["20", "40"] {
            assert_eq!(
                rows.iter().filter(|r| &r[0] == m && &r[1] == n).count(),
                1,
                "{m} {n}"
            );
        }
    }
    assert!(rows
        .iter()
        .all(|r| r[4].parse::<f64>().unwrap().is_finite()));
    assert!(Path::new(&out).join("fig2.meta.json").exists());
}

#[test]
fn folds_cover_every_trajectory_once() {
    let dir = tempfile::tempdir().unwrap();
    let g = gen(dir.path(), "5");
    let out = path(dir.path(), "folds");
    ok(&[
        "folds",
        "--data",
        &path(&g, "train.jsonl"),
        "--folds",
        "4",
        "--iters",
        "2",
        "--out",
        &out,
    ]);
    let rows = read_csv(&Path::new(&out).join("folds.csv"));
    let total: usize = rows
        .iter()
        .filter(|r| &r[1] == "psim-dagger" && &r[2] == "1")
        .map(|r| r[4].parse::<usize>().unwrap())
        .sum();
    assert_eq!(total, 60 * (10 - 2));
    let summary = read_csv(&Path::new(&out).join("folds_summary.csv"));
    assert!(summary.iter().all(|r| &r[4] == "4"));
}
