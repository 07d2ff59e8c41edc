//! Drives the installed binary end to end: simulate feeds estimate and
//! bootstrap, the experiment commands write self-describing reports,
//! exact answers agree across modes, reruns are byte-identical, and
//! failures exit with their category code.

use std::path::Path;
use std::process::{Command, Output};

fn binfx(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_binfx"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = binfx(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn exit_code(dir: &Path, args: &[&str]) -> i32 {
    binfx(dir, args).status.code().expect("exit code")
}

/// The single data row of a one-row result CSV, split into fields.
fn result_row(csv: &str) -> Vec<String> {
    let mut lines = csv.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().expect("header");
    assert_eq!(header, "psi_hat,ci_lo,ci_hi,n_followers,ess,flags");
    let row = lines.next().expect("data row");
    assert!(lines.next().is_none(), "more than one data row");
    row.split(',').map(|s| s.to_string()).collect()
}

const CHAIN: &str = "\
horizon 5
states low high
initial 0.7 0.3
transition * 0 low 0.8 0.2
transition * 0 high 0.4 0.6
transition * 1 low 0.9 0.1
transition * 1 high 0.5 0.5
behavior * low 0.15
behavior * high 0.3
outcome 0 low 0.2
outcome 0 high 0.9
outcome 1 low 0.25
outcome 1 high 0.7
";

#[test]
fn simulate_feeds_estimate_and_bootstrap() {
    let dir = tempfile::tempdir().unwrap();
    let msg = run_ok(
        dir.path(),
        &["simulate", "--n", "120", "--t-star", "9", "--seed", "3", "--out", "coh"],
    );
    assert!(msg.contains("n=120"), "{msg}");
    assert!(dir.path().join("coh_panel.csv").exists());
    assert!(dir.path().join("coh_outcomes.csv").exists());

    let est = &[
        "estimate", "--panel", "coh_panel.csv", "--outcomes", "coh_outcomes.csv",
        "--method", "ir", "--regime", "never", "--delta", "2",
    ];
    let first = run_ok(dir.path(), est);
    assert!(first.contains("# grid: delta=2 points=5 of 9"), "{first}");
    let row = result_row(&first);
    let psi: f64 = row[0].parse().unwrap();
    assert!(psi.is_finite());
    assert_eq!(row[1], "NaN", "no interval without a bootstrap");
    assert!(row[3].parse::<usize>().unwrap() > 0);
    // Same inputs, same bytes.
    assert_eq!(first, run_ok(dir.path(), est));

    let boot = &[
        "bootstrap", "--panel", "coh_panel.csv", "--outcomes", "coh_outcomes.csv",
        "--method", "ir", "--regime", "never", "--delta", "2",
        "--replicates", "60", "--seed", "5",
    ];
    let booted = run_ok(dir.path(), boot);
    let brow = result_row(&booted);
    // The point estimate comes from the full sample, so it matches.
    assert_eq!(brow[0], row[0]);
    let (lo, hi): (f64, f64) = (brow[1].parse().unwrap(), brow[2].parse().unwrap());
    assert!(lo < hi, "{booted}");
    assert_eq!(booted, run_ok(dir.path(), boot), "bootstrap not deterministic");
    let mut reseeded = boot.to_vec();
    reseeded[boot.len() - 1] = "6";
    assert_ne!(booted, run_ok(dir.path(), &reseeded), "seed ignored");
}

#[test]
fn experiment_commands_write_reports_and_plot_scripts() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "--t-star", "9", "--n", "40", "--replications", "3",
        "--deltas", "1,2", "--truth-draws", "1000",
    ];
    for (cmd, out) in [
        ("sweep", "sweep.csv"),
        ("effect-delay", "delay.csv"),
        ("rct", "rct.csv"),
        ("varred", "varred.csv"),
    ] {
        let mut args: Vec<&str> = vec![cmd];
        args.extend_from_slice(&small);
        if cmd == "effect-delay" {
            args.extend_from_slice(&["--omegas", "1,2", "--estimators", "ir"]);
        }
        args.extend_from_slice(&["--out", out, "--emit-gnuplot"]);
        run_ok(dir.path(), &args);
        let report = std::fs::read_to_string(dir.path().join(out)).unwrap();
        assert!(report.starts_with(&format!("# report: {cmd}")), "{out}");
        assert!(report.lines().any(|l| l.starts_with("estimator,")), "{out}");
        let script = Path::new(out).with_extension("gnuplot");
        let script = std::fs::read_to_string(dir.path().join(script)).unwrap();
        assert!(script.contains("plot "), "{out}");
        // Re-running reproduces the report byte for byte.
        run_ok(dir.path(), &args);
        assert_eq!(report, std::fs::read_to_string(dir.path().join(out)).unwrap());
    }
    let rct = std::fs::read_to_string(dir.path().join("rct.csv")).unwrap();
    assert!(rct.lines().any(|l| l.starts_with("naive,")), "naive benchmark missing");
    let varred = std::fs::read_to_string(dir.path().join("varred.csv")).unwrap();
    assert!(varred.lines().any(|l| l.starts_with("ipw,clip=")), "clip cells missing");
}

#[test]
fn exact_modes_agree_with_each_other() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chain.mdp"), CHAIN).unwrap();
    let value_of = |mode: &str, delta: &str| -> Vec<f64> {
        let out = run_ok(
            dir.path(),
            &["exact", "--mdp", "chain.mdp", "--regime", "never", "--delta", delta,
              "--mode", mode],
        );
        out.lines()
            .last()
            .unwrap()
            .split(',')
            .filter_map(|v| v.parse().ok())
            .collect()
    };
    let fine = value_of("value", "1")[0];
    // On the identity grid nothing is lost.
    assert!((value_of("coarsened", "1")[0] - fine).abs() < 1e-12);
    // On a coarse grid the gap must respect the policy-enumeration bound.
    let coarse = value_of("coarsened", "2")[0];
    let bound = value_of("bound", "2");
    let (lo, hi) = (bound[0], bound[1]);
    assert!(lo <= hi);
    assert!(
        (lo..=hi).contains(&(fine - coarse)),
        "gap {} outside [{lo}, {hi}]",
        fine - coarse
    );
    let check = run_ok(
        dir.path(),
        &["exact", "--mdp", "chain.mdp", "--regime", "never", "--delta", "2",
          "--mode", "check"],
    );
    let row = check.lines().last().unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "true", "constant plan pins the fine path: {check}");
    let coarsened: f64 = fields[3].parse().unwrap();
    let uncoarsened: f64 = fields[4].parse().unwrap();
    assert!((coarsened - coarse).abs() < 1e-12);
    assert!((uncoarsened - fine).abs() < 1e-12);
}

#[test]
fn failures_exit_with_their_category() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("chain.mdp"), CHAIN).unwrap();
    // Configuration mistakes: code 2.
    assert_eq!(exit_code(dir.path(), &["sweep", "--replications", "1", "--out", "x.csv"]), 2);
    assert_eq!(
        exit_code(
            dir.path(),
            &["exact", "--mdp", "chain.mdp", "--regime", "jump-at:3", "--delta", "2",
              "--mode", "coarsened"],
        ),
        2,
        "plan off the coarse grid is a configuration error"
    );
    // Missing or malformed data: code 3.
    assert_eq!(
        exit_code(
            dir.path(),
            &["estimate", "--panel", "nope.csv", "--outcomes", "nope.csv",
              "--method", "ir", "--regime", "never"],
        ),
        3
    );
    std::fs::write(dir.path().join("broken.mdp"), "horizon 3\n").unwrap();
    assert_eq!(
        exit_code(
            dir.path(),
            &["exact", "--mdp", "broken.mdp", "--regime", "never", "--delta", "1",
              "--mode", "value"],
        ),
        3
    );
}
