mod common;

use std::path::Path;
use std::process::Command;

use nalgebra::{DMatrix, DVector};

use abtrack::graph::{random_strongly_connected, Digraph};
use abtrack::harness::experiment::RATE_CERT_SLACK;
use abtrack::harness::{rate_fit, run_experiment, simulate, ExperimentConfig, GraphSpec, SolverKind, StepSize};
use abtrack::objectives::{Objective, QuadraticObjective, OPTIMUM_TOL};
use abtrack::solvers::{run, AbMethod, Stepper};
use abtrack::weights::{column_stochastic_from, row_stochastic_from};

const SMALL: &str = "\
name = small
seed = 3
graph.n = 5
graph.extra_edges = 2, 6
objective = quadratic
objective.dim = 2
solvers = ab, row-stochastic, subgradient-push, eq4
eta.ab = 0.05
eta.row-stochastic = 0.01
eta.eq4 = 0.05
iterations = 120
";

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.cfg");
    std::fs::write(&p, text).unwrap();
    p
}

fn data_rows(csv: &str) -> Vec<&str> {
    csv.lines().filter(|l| !l.starts_with('#')).collect()
}

fn abtrack() -> Command {
    Command::new(env!("CARGO_BIN_EXE_abtrack"))
}

#[test]
fn run_experiment_writes_deterministic_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::parse(SMALL).unwrap();
    cfg.output = dir.path().join("a");
    let first = run_experiment(&cfg).unwrap();
    assert_eq!(first.written.len(), 3);
    let csv = std::fs::read_to_string(cfg.output.join("small-G1.csv")).unwrap();
    let rows = data_rows(&csv);
    assert_eq!(rows.len(), 120 + 2);
    assert_eq!(rows[0], "k,ab,row-stochastic,subgradient-push,eq4,consensus_ab");
    assert!(csv.contains("# seed=3\n") && csv.contains("# series=ab,row-stochastic,subgradient-push,eq4\n"));
    for (i, r) in rows[1..].iter().enumerate() {
        let cells: Vec<&str> = r.split(',').collect();
        assert_eq!(cells[0], i.to_string());
        for c in &cells[1..] {
            let v: f64 = c.parse().unwrap();
            assert!(v.is_finite() && v >= 0.0);
        }
    }
    cfg.output = dir.path().join("b");
    run_experiment(&cfg).unwrap();
    for name in ["small-G1.csv", "small-G2.csv", "small-summary.txt"] {
        let a = std::fs::read(dir.path().join("a").join(name)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name} differs");
    }
}

#[test]
fn csv_values_round_trip_trace() {
    let cfg = ExperimentConfig::parse(SMALL).unwrap();
    let o = simulate(&cfg).unwrap();
    let csv = o.render_csv(0);
    let rows = data_rows(&csv);
    let ab = o.graphs[0].solver(SolverKind::Ab).unwrap();
    for (row, tr) in rows[1..].iter().zip(&ab.trace.rows) {
        let v: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v.to_bits(), tr.residual.to_bits());
    }
}

#[test]
fn config_paths_resolve_against_config_directory() {
    let dir = tempfile::tempdir().unwrap();
    let sub = dir.path().join("cfgs");
    std::fs::create_dir(&sub).unwrap();
    let g = random_strongly_connected(4, 2, 1).unwrap();
    g.save_edge_list(sub.join("g.txt")).unwrap();
    let p = sub.join("exp.cfg");
    std::fs::write(
        &p,
        "graph = file\ngraph.path = g.txt\nobjective = quadratic\nsolvers = ab\niterations = 10\noutput = out\n",
    )
    .unwrap();
    let cfg = ExperimentConfig::from_file(&p).unwrap();
    assert_eq!(cfg.graph, GraphSpec::File(sub.join("g.txt")));
    assert_eq!(cfg.output, sub.join("out"));
    let o = simulate(&cfg).unwrap();
    assert_eq!(o.graphs[0].graph, g);
}

#[test]
fn config_errors_are_reported() {
    assert!(ExperimentConfig::parse("iterations = 10\niterations = 11").is_err());
    assert!(ExperimentConfig::parse("bogus = 1").is_err());
    assert!(ExperimentConfig::parse("solvers = ab\neta.ab = -1").is_err());
    assert!(ExperimentConfig::parse("solvers = eq4\neta.eq4 = theorem1").is_err());
    assert!(ExperimentConfig::parse("solvers = nope").is_err());
    let cfg = ExperimentConfig::parse("solvers = ab\neta.ab = theorem1\ncertify = false").unwrap();
    assert_eq!(cfg.solvers[0].eta, StepSize::Theorem1);
    assert!(cfg.wants_certificate());
}

#[test]
fn rate_fit_recovers_scalar_descent_rate() {
    let g = Digraph::from_edges(1, []).unwrap();
    let a = row_stochastic_from(&g).unwrap();
    let b = column_stochastic_from(&g).unwrap();
    let obj = QuadraticObjective::isotropic(&[DVector::from_vec(vec![1.0, -2.0, 4.0])]).unwrap();
    let x_star = obj.centralized_optimum(OPTIMUM_TOL).unwrap();
    let eta = 0.05;
    let m = AbMethod {
        a: &a,
        b: &b,
        eta,
        obj: &obj,
    };
    let trace = run(&m, m.init(&DMatrix::zeros(1, 3)).unwrap(), 300, None, &x_star).unwrap();
    let fit = rate_fit(&trace.residuals(), 0.5).unwrap();
    assert!((fit.rho - (1.0 - eta)).abs() <= 1e-6, "{}", fit.rho);
    assert!(fit.r_squared > 0.999999);
}

#[test]
fn certified_run_rate_is_within_certificate() {
    let cfg = ExperimentConfig::parse(
        "graph.n = 5\ngraph.extra_edges = 3\nobjective = quadratic\nsolvers = ab\n\
         eta.ab = theorem1\niterations = 400\ncertify = true",
    )
    .unwrap();
    let o = simulate(&cfg).unwrap();
    assert!(!o.failed(), "{}", o.render_summary());
    let g = &o.graphs[0];
    let c = g.certificate.as_ref().unwrap();
    assert!(c.covered && c.summary.lemma8 && c.summary.rho_j < 1.0);
    assert!(c.contraction.as_ref().unwrap().passed());
    let rate = g.solver(SolverKind::Ab).unwrap().rate.unwrap();
    assert!(
        rate.rho <= c.summary.rho_j + RATE_CERT_SLACK,
        "{} vs {}",
        rate.rho,
        c.summary.rho_j
    );
    let summary = o.render_summary();
    assert!(summary.contains("is within the certified rate"));
    assert!(o
        .render_csv(0)
        .lines()
        .any(|l| l == "k,ab,consensus_ab,t1_ab,t2_ab,t3_ab"));
}

#[test]
fn cli_run_honours_out_flag_and_env() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("flag");
    let st = abtrack().arg("run").arg(&cfg).arg("--out").arg(&out).output().unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stderr));
    assert!(out.join("small-G2.csv").exists());
    let env_out = dir.path().join("env");
    let st = abtrack()
        .arg("run")
        .arg(&cfg)
        .args(["--set", "iterations=7"])
        .env("ABTRACK_OUT", &env_out)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0));
    let csv = std::fs::read_to_string(env_out.join("small-G1.csv")).unwrap();
    assert_eq!(data_rows(&csv).len(), 9);
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    assert_eq!(abtrack().arg("frobnicate").output().unwrap().status.code(), Some(1));
    assert_eq!(abtrack().args(["run"]).output().unwrap().status.code(), Some(1));
    let missing = abtrack().arg("run").arg(dir.path().join("none.cfg")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));
    let bad_key = abtrack()
        .arg("run")
        .arg(&cfg)
        .args(["--set", "nope=1"])
        .output()
        .unwrap();
    assert_eq!(bad_key.status.code(), Some(1));
    let diverge = abtrack()
        .arg("run")
        .arg(&cfg)
        .args(["--set", "eta.ab=1000", "--set", "iterations=500", "--out"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(diverge.status.code(), Some(2));

    let path = dir.path().join("path.txt");
    Digraph::from_edges(3, [(0, 1), (1, 2)])
        .unwrap()
        .save_edge_list(&path)
        .unwrap();
    assert_eq!(
        abtrack()
            .args(["graph", "check"])
            .arg(&path)
            .output()
            .unwrap()
            .status
            .code(),
        Some(2)
    );
    let gen = dir.path().join("gen.txt");
    let st = abtrack()
        .args(["graph", "gen", "--n", "6", "--extra-edges", "3", "--seed", "2", "--out"])
        .arg(&gen)
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0));
    assert_eq!(
        Digraph::load_edge_list(&gen).unwrap(),
        random_strongly_connected(6, 3, 2).unwrap()
    );
    assert_eq!(
        abtrack()
            .args(["graph", "check"])
            .arg(&gen)
            .output()
            .unwrap()
            .status
            .code(),
        Some(0)
    );
}

#[test]
fn cli_certify_prints_key_values() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let st = abtrack().arg("certify").arg(&cfg).output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    let text = String::from_utf8(st.stdout).unwrap();
    for key in [
        "sigma_A=",
        "sigma_B=",
        "a1=",
        "a9=",
        "eps2=",
        "eta_max=",
        "rho_J=",
        "lemma8=PASS",
    ] {
        assert_eq!(text.lines().filter(|l| l.starts_with(key)).count(), 2, "{key}");
    }
    let rho: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("rho_J="))
        .unwrap()
        .parse()
        .unwrap();
    assert!(rho < 1.0);
}

#[test]
fn cli_help_documents_csv_schema() {
    let st = abtrack().arg("--help").output().unwrap();
    assert_eq!(st.status.code(), Some(0));
    let text = String::from_utf8(st.stdout).unwrap();
    assert!(text.contains("CSV schema") && text.contains("consensus_ab"));
}

#[test]
fn cli_preset_accepts_certified_step() {
    let dir = tempfile::tempdir().unwrap();
    let st = abtrack()
        .args(["preset", "fig-right", "--eta", "theorem1", "--iters", "20", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(st.status.code(), Some(0), "{}", String::from_utf8_lossy(&st.stdout));
    for i in 1..=3 {
        let csv = std::fs::read_to_string(dir.path().join(format!("fig-right-G{i}.csv"))).unwrap();
        assert!(csv.contains("# eta_max="));
        assert_eq!(data_rows(&csv).len(), 22);
    }
}
