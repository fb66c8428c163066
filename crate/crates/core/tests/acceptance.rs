//! Acceptance suite: every criterion below runs at its stated tolerance and
//! prints one PASS line. Oracles are independent of the implementation path
//! they check (direct complex arithmetic for frequency responses, the
//! quadratic formula for the scalar Riccati equation, fine-step integration
//! for discretization, brute-force peaks for the transient bound).

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use proofblocks_core::annotator::{generate_l1_bound_annotation, AnnotationSpec};
use proofblocks_core::backend::{
    emit_code, sanitize_ident, zoh_matrices, CertificatePath, CodeTarget,
};
use proofblocks_core::certificates::{
    bounded_real_certificate, hinf_norm_estimate, solve_lyapunov_continuous,
    solve_lyapunov_discrete, verify_certificate, CertError, CertificateKind,
};
use proofblocks_core::extraction::{extract_state_space, StateSpace, TimeDomain};
use proofblocks_core::frontend::{parse_model, print_model, ModelDocument};
use proofblocks_core::model_ir::Region;
use proofblocks_core::numkernel::{cholesky, Matrix};
use proofblocks_core::pipeline::{
    annotate_document, certify_document, run_pipeline, PipelineOptions,
};
use proofblocks_core::simcheck::{check_assertions, interpret_dataflow, simulate, SimConfig};
use proofblocks_core::PortRef;

fn models_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn load(name: &str) -> ModelDocument {
    let text = fs::read_to_string(models_dir().join(name)).expect("corpus model exists");
    parse_model(&text).expect("corpus model parses")
}

const LINEAR_CORPUS: [&str; 3] = [
    "double_integrator_lyapunov.pbm.json",
    "double_integrator_l2.pbm.json",
    "l1_transient_bound.pbm.json",
];

fn random_hurwitz(rng: &mut ChaCha12Rng, n: usize) -> Matrix {
    // N - (||N|| + rho) I is strictly Hurwitz for any rho > 0.
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] = rng.gen_range(-1.0..1.0);
        }
    }
    let rho = 0.1 + rng.gen::<f64>();
    let shift = m.inf_norm() + rho;
    for i in 0..n {
        m[(i, i)] -= shift;
    }
    m
}

#[test]
fn criterion_01_lyapunov_solver_on_random_hurwitz_systems() {
    let start = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    for trial in 0..100 {
        let n = 2 + (trial % 7);
        let a = random_hurwitz(&mut rng, n);
        let cert = solve_lyapunov_continuous(&a, &Matrix::identity(n)).expect("solvable");
        assert!(
            cert.is_verified(),
            "trial {trial}: certificate not verified"
        );
        assert!(
            cert.residual <= 1e-8,
            "trial {trial}: residual {}",
            cert.residual
        );
        assert!(
            cholesky(&cert.p).is_ok(),
            "trial {trial}: P not positive definite"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}, budget 5 s");
    println!("PASS criterion 1: 100 random Hurwitz systems certified in {elapsed:?}");
}

#[test]
fn criterion_02_hand_checkable_values() {
    let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap();
    let cert = solve_lyapunov_continuous(&a, &Matrix::identity(2)).unwrap();
    let expect = Matrix::from_rows(&[vec![1.5, 0.5], vec![0.5, 1.0]]).unwrap();
    let err = cert.p.sub(&expect).unwrap().max_abs();
    assert!(err <= 1e-10, "P error {err}");

    let scalar = solve_lyapunov_continuous(
        &Matrix::from_rows(&[vec![-1.0]]).unwrap(),
        &Matrix::identity(1),
    )
    .unwrap();
    assert!((scalar.p[(0, 0)] - 0.5).abs() <= 1e-12);

    let discrete = solve_lyapunov_discrete(
        &Matrix::from_rows(&[vec![0.5]]).unwrap(),
        &Matrix::identity(1),
    )
    .unwrap();
    assert!((discrete.p[(0, 0)] - 4.0 / 3.0).abs() <= 1e-12);
    println!("PASS criterion 2: hand-checkable P values match to stated tolerances");
}

/// Direct complex-arithmetic gain of the closed double integrator
/// `|1 / (1 - w^2 + j w)|`: the oracle shares nothing with the solver path.
fn di_gain_oracle(omega: f64) -> f64 {
    let re = 1.0 - omega * omega;
    let im = omega;
    1.0 / (re * re + im * im).sqrt()
}

#[test]
fn criterion_03_hinf_estimates() {
    let di = StateSpace {
        a: Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap(),
        b: Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
        c: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        d: Matrix::zeros(1, 1),
        state_names: vec!["x1".into(), "x2".into()],
        input_bindings: vec!["w".into()],
        output_bindings: vec!["y".into()],
        initial_state: vec![0.0, 0.0],
        time: TimeDomain::Continuous,
    };
    let analytic = 2.0 / 3.0f64.sqrt();
    // Dense-grid oracle: one million points over the refinement band.
    let mut grid_max = 0.0f64;
    for i in 0..1_000_000 {
        let w = 1e-3 + (2.0 - 1e-3) * (i as f64) / 999_999.0;
        grid_max = grid_max.max(di_gain_oracle(w));
    }
    assert!(
        (grid_max - analytic).abs() <= 1e-6 * analytic,
        "grid oracle {grid_max} vs analytic {analytic}"
    );
    let estimate = hinf_norm_estimate(&di).unwrap();
    assert!(
        (estimate - analytic).abs() <= 1e-3 * analytic,
        "estimate {estimate} vs analytic {analytic} (0.1% budget)"
    );

    let lag = StateSpace {
        a: Matrix::from_rows(&[vec![-1.0]]).unwrap(),
        b: Matrix::from_rows(&[vec![1.0]]).unwrap(),
        c: Matrix::from_rows(&[vec![1.0]]).unwrap(),
        d: Matrix::zeros(1, 1),
        state_names: vec!["x".into()],
        input_bindings: vec!["w".into()],
        output_bindings: vec!["y".into()],
        initial_state: vec![0.0],
        time: TimeDomain::Continuous,
    };
    let lag_norm = hinf_norm_estimate(&lag).unwrap();
    assert!((lag_norm - 1.0).abs() <= 1e-6, "lag norm {lag_norm}");
    println!("PASS criterion 3: gain estimates match the analytic and grid oracles");
}

#[test]
fn criterion_04_bounded_real_certificate() {
    let lag = StateSpace {
        a: Matrix::from_rows(&[vec![-1.0]]).unwrap(),
        b: Matrix::from_rows(&[vec![1.0]]).unwrap(),
        c: Matrix::from_rows(&[vec![1.0]]).unwrap(),
        d: Matrix::zeros(1, 1),
        state_names: vec!["x".into()],
        input_bindings: vec!["w".into()],
        output_bindings: vec!["y".into()],
        initial_state: vec![0.0],
        time: TimeDomain::Continuous,
    };
    // Quadratic-formula oracle for p^2/4 - 2p + 1 = 0, stabilizing root.
    let oracle = 4.0 - 2.0 * 3.0f64.sqrt();
    let cert = bounded_real_certificate(&lag, 2.0).unwrap();
    assert!(
        (cert.p[(0, 0)] - oracle).abs() <= 1e-8,
        "P {:?} vs {oracle}",
        cert.p
    );
    assert!(cert.is_verified());
    // The dissipation LMI check is part of verification; re-verify from raw P.
    let reverified = verify_certificate(&lag, &cert).unwrap();
    assert!(
        reverified.is_verified(),
        "dissipation LMI must pass the LDL^T check"
    );

    match bounded_real_certificate(&lag, 0.5) {
        Err(CertError::InfeasibleGain { .. }) => {}
        other => panic!("gamma below the norm must be refused, got {other:?}"),
    }
    println!("PASS criterion 4: scalar Riccati matches the quadratic-formula oracle; infeasible gain refused");
}

#[test]
fn criterion_05_discretization_exactness() {
    let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
    let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
    let (ad, bd) = zoh_matrices(&a, &b, 0.1).unwrap();
    let ad_exact = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
    let bd_exact = Matrix::from_rows(&[vec![0.005], vec![0.1]]).unwrap();
    assert!(ad.sub(&ad_exact).unwrap().max_abs() <= 1e-14);
    assert!(bd.sub(&bd_exact).unwrap().max_abs() <= 1e-14);

    // ZOH agrees with a fine-step RK4 reference under piecewise-constant
    // input over 100 steps, on every linear corpus model.
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    for name in LINEAR_CORPUS {
        let doc = load(name);
        let ss = extract_state_space(&doc.graph).unwrap();
        let h = 0.01;
        let (ad, bd) = zoh_matrices(&ss.a, &ss.b, h).unwrap();
        let n = ss.order();
        let m = ss.num_inputs();
        let mut x_zoh: Vec<f64> = ss.initial_state.clone();
        let mut x_rk: Vec<f64> = ss.initial_state.clone();
        let substeps = 32;
        let hs = h / substeps as f64;
        let deriv = |x: &[f64], u: &[f64]| -> Vec<f64> {
            let mut d = ss.a.matvec(x);
            let bu = ss.b.matvec(u);
            for (a, b) in d.iter_mut().zip(bu) {
                *a += b;
            }
            d
        };
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let u: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            // one exact hold step
            let mut next = ad.matvec(&x_zoh);
            for (a, b) in next.iter_mut().zip(bd.matvec(&u)) {
                *a += b;
            }
            x_zoh = next;
            // fine RK4 over the same interval
            for _ in 0..substeps {
                let k1 = deriv(&x_rk, &u);
                let y1: Vec<f64> = x_rk
                    .iter()
                    .zip(&k1)
                    .map(|(x, k)| x + 0.5 * hs * k)
                    .collect();
                let k2 = deriv(&y1, &u);
                let y2: Vec<f64> = x_rk
                    .iter()
                    .zip(&k2)
                    .map(|(x, k)| x + 0.5 * hs * k)
                    .collect();
                let k3 = deriv(&y2, &u);
                let y3: Vec<f64> = x_rk.iter().zip(&k3).map(|(x, k)| x + hs * k).collect();
                let k4 = deriv(&y3, &u);
                for i in 0..n {
                    x_rk[i] += hs / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
                }
            }
            for i in 0..n {
                worst = worst.max((x_zoh[i] - x_rk[i]).abs());
            }
        }
        assert!(
            worst <= 1e-6,
            "{name}: ZOH vs RK4 reference diverged by {worst}"
        );
    }
    println!("PASS criterion 5: exact hold matrices to 1e-14; RK4 reference agreement <= 1e-6 over 100 steps");
}

#[test]
fn criterion_06_proof_carrying_simulation() {
    // Discrete Lyapunov: monotone V along a 10^4-step trace.
    let doc = load("double_integrator_lyapunov.pbm.json");
    let opts = PipelineOptions {
        horizon: 100.0,
        ..Default::default()
    };
    let art = run_pipeline(&doc, &opts).unwrap();
    let report = art.report.as_ref().unwrap();
    assert_eq!(report.certificate_path, CertificatePath::RecomputedDiscrete);
    let dcert = report.annotations[0].discrete_cert.as_ref().unwrap();
    assert!(dcert.is_verified() && dcert.kind == CertificateKind::LyapunovDiscrete);
    assert_eq!(art.trace.times.len(), 10_001, "10^4 steps");
    // The stability assertion tolerance is 1e-9 * (1 + V); all steps pass.
    assert!(art.checks.all_pass(), "{:?}", art.checks);

    // L2: per-step dissipation for 20 seeds of unit-peak uniform noise.
    let doc = load("double_integrator_l2.pbm.json");
    let art = run_pipeline(&doc, &opts).unwrap();
    let report = art.report.as_ref().unwrap();
    assert_eq!(report.certificate_path, CertificatePath::RecomputedDiscrete);
    let dgraph = &art.discrete.as_ref().unwrap().graph;
    for seed in 0..20 {
        let trace = simulate(dgraph, &SimConfig::discrete(100.0, seed)).unwrap();
        let checks = check_assertions(&trace, dgraph);
        assert!(checks.all_pass(), "seed {seed}: {:?}", checks);
    }
    println!("PASS criterion 6: monotone V over 10^4 steps; per-step dissipation holds for 20 noise seeds");
}

fn strip_comments(text: &str, comment_markers: &[&str]) -> String {
    text.lines()
        .filter(|l| {
            let t = l.trim_start();
            !t.is_empty() && !comment_markers.iter().any(|m| t.starts_with(m))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn criterion_07_codegen_semantics() {
    for name in LINEAR_CORPUS {
        let doc = load(name);
        let art = run_pipeline(&doc, &PipelineOptions::default()).unwrap();
        let dgraph = &art.discrete.as_ref().unwrap().graph;
        let code = art.dataflow.as_ref().unwrap();
        let steps = art.trace.times.len();

        // Step-for-step equivalence of the reinterpreted dataflow target.
        let mut inputs = BTreeMap::new();
        for b in &dgraph.blocks {
            if matches!(
                b.kind,
                proofblocks_core::BlockKind::NoiseSource { .. }
                    | proofblocks_core::BlockKind::Inport { .. }
            ) {
                let series = art.trace.scalar_series(&b.id).unwrap();
                inputs.insert(sanitize_ident(&b.id), series);
            }
        }
        let run = interpret_dataflow(code, &inputs, steps).unwrap();
        for b in dgraph
            .blocks
            .iter()
            .filter(|b| matches!(b.kind, proofblocks_core::BlockKind::Outport))
        {
            let diagram = art.trace.scalar_series(&b.id).unwrap();
            let emitted = &run.vars[&sanitize_ident(&b.id)];
            for k in 0..steps {
                assert!(
                    (diagram[k] - emitted[k]).abs() <= 1e-12 * (1.0 + diagram[k].abs()),
                    "{name} `{}` step {k}: {} vs {}",
                    b.id,
                    diagram[k],
                    emitted[k]
                );
            }
        }

        // Stripping annotations changes only comment lines, in both targets.
        let stripped = dgraph.subgraph(Region::Executable);
        let report = art.report.as_ref();
        let df_full = art.dataflow.as_ref().unwrap().clone();
        let df_stripped = emit_code(&stripped, report, CodeTarget::Dataflow).unwrap();
        assert_eq!(
            strip_comments(&df_full, &["--"]),
            strip_comments(&df_stripped, &["--"]),
            "{name}: dataflow executable text must not change"
        );
        let c_full = art.c_like.as_ref().unwrap().clone();
        let c_stripped = emit_code(&stripped, report, CodeTarget::CLike).unwrap();
        assert_eq!(
            strip_comments(&c_full, &["/*", "//"]),
            strip_comments(&c_stripped, &["/*", "//"]),
            "{name}: c_like executable text must not change"
        );
        // Emission is deterministic and byte-stable.
        assert_eq!(
            df_full,
            emit_code(dgraph, report, CodeTarget::Dataflow).unwrap()
        );
        assert_eq!(
            c_full,
            emit_code(dgraph, report, CodeTarget::CLike).unwrap()
        );
    }
    println!("PASS criterion 7: dataflow reinterpretation matches to 1e-12; annotation stripping changes only comments");
}

#[test]
fn criterion_08_region_soundness() {
    for name in [
        "double_integrator_lyapunov.pbm.json",
        "double_integrator_l2.pbm.json",
        "adaptive_oscillator.pbm.json",
        "l1_transient_bound.pbm.json",
    ] {
        let doc = load(name);
        let opts = PipelineOptions::default();
        // The nonlinear route needs no certificates.
        let certs = certify_document(&doc, &opts).unwrap_or_default();
        let (annotated, _) = annotate_document(&doc, &certs).unwrap();
        let stripped = annotated.graph.subgraph(Region::Executable);
        let original = doc.graph.subgraph(Region::Executable);
        assert!(
            stripped.structurally_equal(&original),
            "{name}: annotator must leave the executable region untouched"
        );
    }
    println!(
        "PASS criterion 8: subgraph(annotated, executable) structurally equals every corpus input"
    );
}

#[test]
fn criterion_09_nonlinear_runtime_checking() {
    // Adaptive model: 10 s horizon, finite signals, manual Lyapunov
    // assertion passes, states decay 100x (reference oracle at h = 1e-4).
    let doc = load("adaptive_oscillator.pbm.json");
    let opts = PipelineOptions::default(); // horizon 10 s, h_sim 1e-3
    let art = run_pipeline(&doc, &opts).unwrap();
    assert!(
        art.checks.all_pass(),
        "manual Lyapunov assertion: {:?}",
        art.checks
    );

    let reference = run_pipeline(
        &doc,
        &PipelineOptions {
            h_sim: 1e-4,
            ..opts.clone()
        },
    )
    .unwrap();
    for trace in [&art.trace, &reference.trace] {
        let x = trace.scalar_series("int_x").unwrap();
        let xd = trace.scalar_series("int_xd").unwrap();
        let z0 = (x[0].powi(2) + xd[0].powi(2)).sqrt();
        let zn = (x.last().unwrap().powi(2) + xd.last().unwrap().powi(2)).sqrt();
        assert!(zn < 0.01 * z0, "decay {} must beat 100x", zn / z0);
    }
    // The two step sizes agree on the endpoint (the checker ran on a
    // trajectory the reference oracle confirms).
    let a = art
        .trace
        .scalar_series("int_x")
        .unwrap()
        .last()
        .copied()
        .unwrap();
    let b = reference
        .trace
        .scalar_series("int_x")
        .unwrap()
        .last()
        .copied()
        .unwrap();
    assert!(
        (a - b).abs() < 1e-6,
        "h refinement changed the endpoint: {a} vs {b}"
    );

    // L1 bound: passes with theta_max above the observed peak, fails below.
    let doc = load("l1_transient_bound.pbm.json");
    let (annotated, _, checks) =
        proofblocks_core::pipeline::simulate_document(&doc, &opts).unwrap();
    assert!(checks.all_pass(), "shipped bound must hold: {checks:?}");
    let runmax_id = annotated
        .blocks
        .iter()
        .find(|b| matches!(b.kind, proofblocks_core::BlockKind::RunningMax))
        .map(|b| b.id.clone())
        .unwrap();
    let exec = doc.graph.subgraph(Region::Executable);
    let trace = simulate(
        &exec,
        &SimConfig::continuous(opts.horizon, opts.h_sim, opts.seed),
    )
    .unwrap();
    let peak = trace
        .scalar_series("sum_xt")
        .unwrap()
        .iter()
        .fold(0.0f64, |a, v| a.max(v.abs()));
    let _ = runmax_id;
    // theta_max = bound^2 * lambda_min(P) * Gamma with P = [[1]], Gamma = 1.
    for (factor, expect_pass) in [(1.1, true), (0.9, false)] {
        let bound = peak * factor;
        let spec = AnnotationSpec::L1PerfBound {
            theta_max: bound * bound,
            gamma_adapt: 1.0,
            p: Matrix::identity(1),
            error_wire: PortRef::new("sum_xt", 0),
        };
        let g = generate_l1_bound_annotation(&exec, &spec).unwrap().graph;
        let t = simulate(
            &g,
            &SimConfig::continuous(opts.horizon, opts.h_sim, opts.seed),
        )
        .unwrap();
        let checks = check_assertions(&t, &g);
        assert_eq!(
            checks.all_pass(),
            expect_pass,
            "theta factor {factor}: expected pass={expect_pass}, got {checks:?}"
        );
        if !expect_pass {
            let report = &checks.assertions[0];
            assert!(
                report.id.starts_with("anno.l1perf"),
                "violation names the bound assertion"
            );
            assert!(report.first_violation.is_some());
        }
    }
    println!("PASS criterion 9: adaptive model converges 100x with a passing manual proof; transient bound flips with theta_max");
}

#[test]
fn criterion_10_robustness_and_total_runtime() {
    // Parser fuzz: 10^5 inputs, arbitrary bytes and mutated real documents;
    // every one must yield a document or diagnostics, never a panic.
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let seed_doc = fs::read_to_string(models_dir().join("double_integrator_l2.pbm.json")).unwrap();
    for trial in 0..100_000u32 {
        let text: String = if trial % 2 == 0 {
            let len = rng.gen_range(0..120);
            let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            String::from_utf8_lossy(&bytes).into_owned()
        } else {
            // structured mutation: truncate and flip a byte
            let mut bytes = seed_doc.clone().into_bytes();
            let cut = rng.gen_range(0..=bytes.len());
            bytes.truncate(cut);
            if !bytes.is_empty() {
                let at = rng.gen_range(0..bytes.len());
                bytes[at] = bytes[at].wrapping_add(rng.gen_range(1..=255));
            }
            String::from_utf8_lossy(&bytes).into_owned()
        };
        let _ = parse_model(&text); // must not panic
    }

    // Full pipeline over the four corpus models under 10 seconds.
    let start = Instant::now();
    for name in [
        "double_integrator_lyapunov.pbm.json",
        "double_integrator_l2.pbm.json",
        "adaptive_oscillator.pbm.json",
        "l1_transient_bound.pbm.json",
    ] {
        let doc = load(name);
        let art = run_pipeline(&doc, &PipelineOptions::default())
            .unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(art.checks.all_pass(), "{name}: {:?}", art.checks);
        // Re-running is byte-identical (canonical printing, fixed seeds).
        let again = run_pipeline(&doc, &PipelineOptions::default()).unwrap();
        assert_eq!(print_model(&art.annotated), print_model(&again.annotated));
        assert_eq!(art.dataflow, again.dataflow);
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "pipelines took {elapsed:?}, budget 10 s"
    );
    println!("PASS criterion 10: 10^5 fuzz inputs survived; corpus pipelines in {elapsed:?}");
}
