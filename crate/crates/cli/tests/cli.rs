use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use replaylab_cli::{run, CliError, RunArgs, Subcommand, MANIFEST_FILE};

fn replaylab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_replaylab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read(p: &Path) -> String {
    fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

fn csv_rows(p: &Path) -> Vec<Vec<String>> {
    read(p)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn args(out: PathBuf, overrides: &str) -> RunArgs {
    RunArgs {
        out,
        grid_overrides: Some(overrides.into()),
        ..RunArgs::default()
    }
}

#[test]
fn design_reproduces_gamma_column() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    run(Subcommand::Design, &args(out.clone(), "mu=5.28")).unwrap();
    let listed = [1.29, 0.65, 0.43, 0.32, 0.22, 0.18];
    let rows = csv_rows(&out.join("gamma.csv"));
    assert_eq!(rows.len(), listed.len());
    for (row, want) in rows.iter().zip(listed) {
        let gamma: f64 = row[3].parse().unwrap();
        assert!((gamma - want).abs() <= 0.02, "{row:?} vs {want}");
    }
}

#[test]
fn design_reports_y_star_five() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let stats = run(
        Subcommand::Design,
        &args(out.clone(), "alpha=0.25;mu=5;rho=0"),
    )
    .unwrap();
    let y: f64 = stats
        .iter()
        .find(|(k, _)| k == "y_star")
        .unwrap()
        .1
        .parse()
        .unwrap();
    assert!((y - 5.0).abs() < 1e-12);
    assert!(read(&out.join("design.txt")).contains("y_star = 5\n"));
}

#[test]
fn unknown_key_names_the_key_and_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let o = replaylab(&[
        "design",
        "--out",
        path_str(&out),
        "--grid-overrides",
        "alhpa=0.3",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alhpa"));
    assert!(!out.join(MANIFEST_FILE).exists());
}

#[test]
fn malformed_config_line_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    fs::write(&cfg, "# comment\nmu = 5\nthis line has no equals sign\n").unwrap();
    let o = replaylab(&[
        "design",
        "--config",
        path_str(&cfg),
        "--out",
        path_str(&dir.path().join("d")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"));
}

#[test]
fn bad_value_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let err = run(Subcommand::Design, &args(dir.path().join("d"), "mu=fast")).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("mu"));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("b");
    let o = replaylab(&[
        "train-bandit",
        "--out",
        path_str(&out),
        "--grid-overrides",
        "eta=1e14;steps=20",
    ]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn deadlock_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    let o = replaylab(&[
        "simulate-async",
        "--out",
        path_str(&out),
        "--grid-overrides",
        "transfer=queue;queue_capacity=10;pairs=2:1;mus=2",
    ]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("deadlock"));
}

#[test]
fn completed_run_directory_is_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    run(Subcommand::Design, &args(out.clone(), "k_points=5")).unwrap();
    let before = read(&out.join("k_curve.csv"));
    let err = run(Subcommand::Design, &args(out.clone(), "k_points=9")).unwrap_err();
    assert!(matches!(err, CliError::Failed(_)));
    assert_eq!(read(&out.join("k_curve.csv")), before);
}

#[test]
fn sweep_grid_has_one_row_per_cell_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let mut a = args(out.clone(), "mode=sweep;xs=1,2,4;ys=0.5,1,2;budget=4000");
    a.seeds = Some(5);
    run(Subcommand::SimulateSync, &a).unwrap();
    let rows = csv_rows(&out.join("sweep.csv"));
    assert_eq!(rows.len(), 45);
    let cells: std::collections::BTreeSet<_> =
        rows.iter().map(|r| (r[0].clone(), r[1].clone())).collect();
    assert_eq!(cells.len(), 9);
}

#[test]
fn binary_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let outs: Vec<PathBuf> = (0..2).map(|i| dir.path().join(format!("b{i}"))).collect();
    for out in &outs {
        let o = replaylab(&[
            "train-bandit",
            "--out",
            path_str(out),
            "--seed",
            "17",
            "--seeds",
            "2",
            "--grid-overrides",
            "steps=100",
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in ["task.txt", "curve_s0.csv", "curve_s1.csv", "summary.csv"] {
        assert_eq!(
            fs::read(outs[0].join(name)).unwrap(),
            fs::read(outs[1].join(name)).unwrap(),
            "{name}"
        );
    }
    assert_ne!(
        read(&outs[0].join("curve_s0.csv")),
        read(&outs[0].join("curve_s1.csv"))
    );
}

#[test]
fn manifest_records_resolved_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let mut a = args(out.clone(), "steps=20");
    a.seed = Some(9);
    run(Subcommand::SimulateSync, &a).unwrap();
    let manifest = read(&out.join(MANIFEST_FILE));
    for line in [
        "subcommand = simulate-sync",
        "seed = 9",
        "config.steps = 20",
        "config.dim = 32",
    ] {
        assert!(manifest.lines().any(|l| l == line), "missing {line}");
    }
    assert!(manifest.contains("stat.bound = "));
}

/// Histogram bins rebuilt from a ledger file.
fn ledger_histograms(ledger: &Path) -> BTreeMap<(String, i64), u64> {
    let mut rows: Vec<[u64; 5]> = read(ledger)
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| {
            let v: Vec<u64> = l.split('\t').map(|x| x.parse().unwrap()).collect();
            [v[0], v[1], v[2], v[3], v[4]]
        })
        .collect();
    let mut hist = BTreeMap::new();
    for r in &rows {
        *hist
            .entry(("staleness".to_string(), (r[2] - r[1]) as i64))
            .or_insert(0) += 1;
    }
    // Within-batch order does not change the multiset of labels.
    rows.sort_by_key(|r| (r[2], r[3], r[4]));
    let mut last = BTreeMap::new();
    for r in &rows {
        if let Some(prev) = last.insert(r[0], r[2]) {
            *hist
                .entry(("steps_since_last_use".to_string(), (r[2] - prev) as i64))
                .or_insert(0) += 1;
        }
    }
    hist
}

#[test]
fn async_histograms_match_raw_ledgers() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("a");
    run(
        Subcommand::SimulateAsync,
        &args(
            out.clone(),
            "pairs=6:2,4:4;mus=5.34,7;ns=84,252;horizon=300",
        ),
    )
    .unwrap();
    let mut cells = 0;
    for (w, t) in [(6, 2), (4, 4)] {
        for n in [84, 252] {
            cells += 1;
            let stem = format!("w{w}_t{t}_n{n}_s0");
            let expected = ledger_histograms(&out.join(format!("{stem}.ledger.tsv")));
            let mut emitted = BTreeMap::new();
            for row in csv_rows(&out.join(format!("{stem}.hist.csv"))) {
                if row[0] != "replay_ratio" {
                    emitted.insert(
                        (row[0].clone(), row[1].parse().unwrap()),
                        row[2].parse().unwrap(),
                    );
                }
            }
            assert_eq!(emitted, expected, "{stem}");
            assert!(out.join(format!("{stem}.events")).exists());
        }
    }
    assert_eq!(cells, 4);
    let summary = csv_rows(&out.join("summary.csv"));
    assert_eq!(summary.iter().filter(|r| r[5] == "replay_ratio").count(), 4);
}

fn write_curve_run(root: &Path, name: &str, points: &[(f64, f64)]) -> PathBuf {
    let dir = root.join(name);
    fs::create_dir_all(&dir).unwrap();
    let mut text = String::from("step,compute,mean_reward\n");
    for (i, (c, v)) in points.iter().enumerate() {
        text.push_str(&format!("{},{c},{v}\n", i + 1));
    }
    fs::write(dir.join("curve_s0.csv"), text).unwrap();
    fs::write(dir.join(MANIFEST_FILE), "# replaylab manifest\n").unwrap();
    dir
}

fn report_rows(out: &Path) -> Vec<(f64, f64, String, bool)> {
    csv_rows(&out.join("report.csv"))
        .into_iter()
        .map(|r| {
            (
                r[0].parse().unwrap(),
                r[1].parse().unwrap(),
                r[2].clone(),
                r[3] == "1",
            )
        })
        .collect()
}

#[test]
fn report_single_run_frontier_is_its_curve() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = write_curve_run(dir.path(), "only", &[(1.0, 0.2), (2.0, 0.5), (3.0, 0.9)]);
    let out = dir.path().join("r");
    let a = RunArgs {
        out: out.clone(),
        inputs: vec![run_dir],
        ..RunArgs::default()
    };
    run(Subcommand::Report, &a).unwrap();
    let rows = report_rows(&out);
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.2 == "only" && r.3));
    assert!(read(&out.join("report.txt")).contains("only"));
}

#[test]
fn report_dominant_run_owns_the_frontier() {
    let dir = tempfile::tempdir().unwrap();
    let strong = write_curve_run(dir.path(), "strong", &[(1.0, 0.5), (2.0, 0.8)]);
    let weak = write_curve_run(dir.path(), "weak", &[(1.0, 0.3), (2.0, 0.6)]);
    let out = dir.path().join("r");
    let a = RunArgs {
        out: out.clone(),
        inputs: vec![weak, strong],
        ..RunArgs::default()
    };
    run(Subcommand::Report, &a).unwrap();
    for row in report_rows(&out) {
        assert_eq!(row.2, "strong");
    }
}

#[test]
fn report_rejects_incompatible_runs() {
    let dir = tempfile::tempdir().unwrap();
    let good = write_curve_run(dir.path(), "good", &[(1.0, 0.5)]);
    let odd = dir.path().join("odd");
    fs::create_dir_all(&odd).unwrap();
    fs::write(odd.join("curve_s0.csv"), "step,compute,loss\n1,1,0.3\n").unwrap();
    fs::write(odd.join(MANIFEST_FILE), "# replaylab manifest\n").unwrap();
    let a = RunArgs {
        out: dir.path().join("r"),
        inputs: vec![good, odd],
        ..RunArgs::default()
    };
    assert!(run(Subcommand::Report, &a).is_err());
}

#[test]
fn report_requires_completed_runs() {
    let dir = tempfile::tempdir().unwrap();
    let partial = dir.path().join("partial");
    fs::create_dir_all(&partial).unwrap();
    fs::write(
        partial.join("curve_s0.csv"),
        "step,compute,mean_reward\n1,1,0.5\n",
    )
    .unwrap();
    let o = replaylab(&[
        "report",
        "--out",
        path_str(&dir.path().join("r")),
        path_str(&partial),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
