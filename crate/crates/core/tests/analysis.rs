mod common;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use rand::Rng;

use abtrack::analysis::{
    build_j, certify, check_trace_contraction, eta_max, lambda_of, lemma8_check, select_epsilon, spectral_radius,
    CertificateSummary, ContractionCert, EpsilonTriple,
};
use abtrack::graph::{random_strongly_connected, Digraph};
use abtrack::objectives::{Objective, QuadraticObjective, SmoothnessInfo, OPTIMUM_TOL};
use abtrack::solvers::{run, AbMethod, Stepper};
use abtrack::weights::{column_stochastic_from, row_stochastic_from, WeightMatrix, DEFAULT_SLACK};
use abtrack::Error;
use common::{rng, spectral_radius_cubic, stationary_direct};

struct Instance {
    a: WeightMatrix,
    b: WeightMatrix,
    obj: QuadraticObjective,
    cert: ContractionCert,
}

fn instance(n: usize, extra: usize, seed: u64) -> Instance {
    let g = random_strongly_connected(n, extra, seed).unwrap();
    let a = row_stochastic_from(&g).unwrap();
    let b = column_stochastic_from(&g).unwrap();
    let obj = QuadraticObjective::random(n, 2, seed).unwrap();
    let cert = certify(&a, &b, obj.smoothness().unwrap(), DEFAULT_SLACK).unwrap();
    Instance { a, b, obj, cert }
}

fn seeded5() -> Instance {
    instance(5, 3, 5)
}

fn op2(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

fn close(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0)
}

#[test]
fn constants_match_independent_recomputation() {
    let Instance { a, b, cert, .. } = seeded5();
    let n = 5;
    let pi_r = stationary_direct(&a.matrix().transpose());
    let pi_c = stationary_direct(b.matrix());
    let ones = DVector::from_element(n, 1.0);
    let a_inf = &ones * pi_r.transpose();
    let b_inf = &pi_c * ones.transpose();
    let eye = DMatrix::<f64>::identity(n, n);
    let (ia, ainf, binf, ami) = (
        op2(&(&eye - &a_inf)),
        op2(&a_inf),
        op2(&b_inf),
        op2(&(a.matrix() - &eye)),
    );
    assert!(close(binf, (n as f64).sqrt() * pi_c.norm(), 1e-12));
    let (m, g) = (cert.frame_a.from2, cert.frame_a.to2);
    let (l, h) = (cert.frame_b.from2, cert.frame_b.to2);
    let sb = cert.frame_b.sigma;
    let beta = cert.beta;
    let inner = pi_r.dot(&pi_c);
    let expect = [
        m * g * beta * ia * binf,
        m * beta * ia * binf,
        m * h * ia,
        n as f64 * beta * g * inner,
        h * ainf,
        g * sb * l * beta * ami,
        g * sb * l * beta * beta * binf,
        sb * l * beta * beta * binf,
        h * sb * l * beta,
    ];
    for (i, (got, want)) in cert.a.iter().zip(expect).enumerate() {
        assert!(*got > 0.0, "a{} not positive", i + 1);
        assert!(close(*got, want, 1e-12), "a{}: {got} vs {want}", i + 1);
    }
    assert!(close(cert.perron.inner, inner, 1e-12));
}

#[test]
fn j_entries_match_hand_expansion() {
    let c = seeded5().cert;
    let eta = 1e-3;
    let gain = 5.0 * c.perron.inner;
    let lambda = (1.0 - c.alpha * gain * eta).max((1.0 - c.beta * gain * eta).abs());
    let a = c.a;
    let want = Matrix3::new(
        c.frame_a.sigma + a[0] * eta,
        a[1] * eta,
        a[2] * eta,
        a[3] * eta,
        lambda,
        a[4] * eta,
        a[5] + a[6] * eta,
        a[7] * eta,
        c.frame_b.sigma + a[8] * eta,
    );
    let j = build_j(eta, &c).unwrap();
    assert!((j - want).amax() <= 1e-15);
    assert!(j.iter().all(|&v| v >= 0.0));
}

#[test]
fn single_agent_certificate_recovers_centralized_rate() {
    let g = Digraph::from_edges(1, []).unwrap();
    let a = row_stochastic_from(&g).unwrap();
    let b = column_stochastic_from(&g).unwrap();
    let s = SmoothnessInfo { alpha: 0.5, beta: 2.0 };
    let c = certify(&a, &b, s, DEFAULT_SLACK).unwrap();
    assert_eq!((c.sigma_a(), c.sigma_b()), (0.0, 0.0));
    for i in [0, 1, 2, 5] {
        assert_eq!(c.a[i], 0.0);
    }
    let eps = select_epsilon(&c);
    assert_eq!(eps.eps1, 1.0);
    let emax = eta_max(&c, &eps).unwrap();
    assert!(emax > 0.0 && emax <= 1.0 / s.beta);
    for eta in [0.01, 0.1, 0.3, 0.49] {
        let rho = spectral_radius(&build_j(eta, &c).unwrap()).unwrap();
        assert!((rho - (1.0 - s.alpha * eta)).abs() <= 1e-10, "eta {eta}: {rho}");
    }
}

#[test]
fn lambda_examples() {
    let c = seeded5().cert;
    let gain = 5.0 * c.perron.inner;
    let edge = 1.0 / (c.beta * gain);
    assert!(close(lambda_of(edge, &c).unwrap(), 1.0 - c.alpha / c.beta, 1e-12));
    assert!(lambda_of(1e-15, &c).unwrap() > 1.0 - 1e-12);
    assert!(matches!(lambda_of(0.0, &c), Err(Error::StepSizeOutOfRange { .. })));
    assert!(matches!(
        lambda_of(2.0 * edge, &c),
        Err(Error::StepSizeOutOfRange { .. })
    ));
    let half = 0.5 * edge;
    assert!(close(lambda_of(half, &c).unwrap(), 1.0 - c.alpha * gain * half, 1e-14));

    // Perfect conditioning: alpha = beta.
    let g = random_strongly_connected(4, 2, 1).unwrap();
    let iso = QuadraticObjective::isotropic(&vec![DVector::from_vec(vec![1.0]); 4]).unwrap();
    let c = certify(
        &row_stochastic_from(&g).unwrap(),
        &column_stochastic_from(&g).unwrap(),
        iso.smoothness().unwrap(),
        DEFAULT_SLACK,
    )
    .unwrap();
    let edge = 1.0 / (c.beta * 4.0 * c.perron.inner);
    assert!(lambda_of(edge, &c).unwrap().abs() <= 1e-12);
}

#[test]
fn vanishing_step_has_unit_spectral_radius() {
    let c = seeded5().cert;
    let rho = spectral_radius(&build_j(1e-15, &c).unwrap()).unwrap();
    assert!((rho - 1.0).abs() <= 1e-10, "{rho}");
}

#[test]
fn spectral_radius_matches_cubic_roots() {
    let mut r = rng(30);
    for _ in 0..1000 {
        let j = Matrix3::from_fn(|_, _| r.random_range(0.0..1.0));
        let got = spectral_radius(&j).unwrap();
        let want = spectral_radius_cubic(&j);
        assert!(close(got, want, 1e-10), "{j}: {got} vs {want}");
    }
    let d = Matrix3::from_diagonal(&Vector3::new(0.2, 0.5, 0.9));
    assert!((spectral_radius(&d).unwrap() - 0.9).abs() <= 1e-12);
}

#[test]
fn lemma8_implies_subunit_spectral_radius() {
    let mut r = rng(31);
    let mut certified = 0;
    for _ in 0..1000 {
        let j = Matrix3::from_fn(|_, _| r.random_range(0.0..0.6));
        let eps = Vector3::from_fn(|_, _| r.random_range(0.1..1.0));
        if lemma8_check(&j, &eps).unwrap() {
            certified += 1;
            let rho = spectral_radius(&j).unwrap();
            assert!(rho < 1.0 - 1e-12 && spectral_radius_cubic(&j) < 1.0 - 1e-12);
        }
    }
    assert!(certified > 50, "only {certified} certified samples");
    assert!(!lemma8_check(&Matrix3::identity(), &Vector3::new(1.0, 2.0, 3.0)).unwrap());
    assert!(lemma8_check(&(Matrix3::identity() * 0.5), &Vector3::from_element(1.0)).unwrap());
    assert!(lemma8_check(&Matrix3::zeros(), &Vector3::new(1.0, 0.0, 1.0)).is_err());
}

#[test]
fn selected_epsilon_and_step_bound_certify_convergence() {
    for seed in 0..6 {
        let c = instance(5 + seed as usize, seed as usize, 40 + seed).cert;
        let eps = select_epsilon(&c);
        eps.validate(&c).unwrap();
        let emax = eta_max(&c, &eps).unwrap();
        assert!(emax > 0.0 && emax <= 1.0 / (c.beta * c.gain()));
        let j = build_j(0.5 * emax, &c).unwrap();
        assert!(lemma8_check(&j, &eps.as_vector()).unwrap());
        assert!(spectral_radius(&j).unwrap() < 1.0);
        let near = build_j(0.99 * emax, &c).unwrap();
        assert!(spectral_radius(&near).unwrap() < 1.0);
        assert!(spectral_radius_cubic(&near) < 1.0);
    }
}

#[test]
fn infeasible_epsilon_is_rejected() {
    let c = seeded5().cert;
    let eps = select_epsilon(&c);
    let big = EpsilonTriple {
        eps1: 2.0 * (1.0 - c.sigma_b()) / c.a[5],
        ..eps
    };
    assert!(matches!(eta_max(&c, &big), Err(Error::Certificate(_))));
    let small = EpsilonTriple { eps2: 1e-300, ..eps };
    assert!(matches!(eta_max(&c, &small), Err(Error::Certificate(_))));
}

#[test]
fn trace_obeys_contraction_at_half_step_bound() {
    let Instance { a, b, obj, cert } = seeded5();
    let summary = CertificateSummary::new(cert.clone(), None).unwrap();
    assert!(summary.lemma8 && summary.rho_j < 1.0);
    let x_star = obj.centralized_optimum(OPTIMUM_TOL).unwrap();
    let m = AbMethod {
        a: &a,
        b: &b,
        eta: summary.eta,
        obj: &obj,
    };
    let mut r = rng(50);
    let x0 = DMatrix::from_fn(5, 2, |_, _| r.random_range(-1.0..1.0));
    let trace = run(&m, m.init(&x0).unwrap(), 300, Some(&cert), &x_star).unwrap();
    let report = check_trace_contraction(&trace, &cert, summary.eta).unwrap();
    assert_eq!(report.steps_checked, 300);
    assert!(report.passed(), "{report}");
    assert!(report.worst_ratio <= 1.0 + 1e-9);
}

#[test]
fn oversized_step_check_runs_coherently() {
    let Instance { a, b, obj, cert } = seeded5();
    let emax = eta_max(&cert, &select_epsilon(&cert)).unwrap();
    let eta = 100.0 * emax;
    let x_star = obj.centralized_optimum(OPTIMUM_TOL).unwrap();
    let m = AbMethod {
        a: &a,
        b: &b,
        eta,
        obj: &obj,
    };
    let x0 = DMatrix::from_element(5, 2, 1.0);
    let trace = match run(&m, m.init(&x0).unwrap(), 300, Some(&cert), &x_star) {
        Ok(t) => t,
        Err(f) => f.trace,
    };
    match check_trace_contraction(&trace, &cert, eta) {
        Ok(report) => {
            assert_eq!(report.steps_checked, trace.len() - 1);
            assert_eq!(report.passed(), report.violations.is_empty());
            if let Some(v) = report.first_violation() {
                assert!(v.observed > v.bound && v.component < 3);
            }
        }
        Err(e) => assert!(matches!(e, Error::StepSizeOutOfRange { .. }), "{e}"),
    }
}

#[test]
fn single_agent_trace_tracks_scalar_descent() {
    let g = Digraph::from_edges(1, []).unwrap();
    let a = row_stochastic_from(&g).unwrap();
    let b = column_stochastic_from(&g).unwrap();
    let p = DMatrix::from_element(1, 1, 2.0);
    let obj = QuadraticObjective::new(vec![p], vec![DVector::from_element(1, -6.0)]).unwrap();
    let cert = certify(&a, &b, obj.smoothness().unwrap(), DEFAULT_SLACK).unwrap();
    let x_star = obj.centralized_optimum(OPTIMUM_TOL).unwrap();
    let eta = 0.2;
    let m = AbMethod {
        a: &a,
        b: &b,
        eta,
        obj: &obj,
    };
    let trace = run(&m, m.init(&DMatrix::zeros(1, 1)).unwrap(), 30, Some(&cert), &x_star).unwrap();
    let ts = trace.t_vectors().unwrap();
    for w in ts.windows(2) {
        assert_eq!((w[0][0], w[0][2]), (0.0, 0.0));
        assert!((w[1][1] - 0.6 * w[0][1]).abs() <= 1e-14 * w[0][1].max(1.0));
    }
    let report = check_trace_contraction(&trace, &cert, eta).unwrap();
    assert!(report.passed());
}

#[test]
fn trace_without_certificate_is_rejected() {
    let Instance { a, b, obj, cert } = seeded5();
    let x_star = obj.centralized_optimum(OPTIMUM_TOL).unwrap();
    let m = AbMethod {
        a: &a,
        b: &b,
        eta: 1e-3,
        obj: &obj,
    };
    let trace = run(&m, m.init(&DMatrix::zeros(5, 2)).unwrap(), 5, None, &x_star).unwrap();
    assert!(matches!(
        check_trace_contraction(&trace, &cert, 1e-3),
        Err(Error::InvalidInput(_))
    ));
}

#[test]
fn summary_key_values_cover_report() {
    let s = CertificateSummary::new(seeded5().cert, None).unwrap();
    let kv = s.key_values();
    for key in [
        "sigma_A", "sigma_B", "a1", "a9", "eps1", "eps2", "eps3", "eta_max", "rho_J", "lemma8",
    ] {
        assert!(kv.iter().any(|(k, _)| k == key), "missing {key}");
    }
    let eta: f64 = kv.iter().find(|(k, _)| k == "eta").unwrap().1.parse().unwrap();
    assert_eq!(eta, s.eta);
    assert!(s.to_string().contains("PASS"));
}
