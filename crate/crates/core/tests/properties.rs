//! Module-level invariants: algebraic identities on random inputs, solver
//! recovery properties, similarity invariance of the gain estimate, and the
//! never-panic guarantee of the parser.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use proofblocks_core::certificates::{
    bounded_real_with_log, hinf_norm_estimate, solve_lyapunov_continuous, CancelToken,
};
use proofblocks_core::extraction::{extract_state_space, StateSpace, TimeDomain};
use proofblocks_core::frontend::parse_model;
use proofblocks_core::model_ir::{
    Block, BlockKind, ModelGraph, NoiseSpec, PortRef, Region, Wire, WireMarker,
};
use proofblocks_core::numkernel::{expm, kron, lu_solve, matmul, Matrix};
use proofblocks_core::simcheck::{simulate, SimConfig};

fn mat(rng: &mut ChaCha12Rng, n: usize, m: usize, scale: f64) -> Matrix {
    let mut out = Matrix::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            out[(i, j)] = rng.gen_range(-scale..scale);
        }
    }
    out
}

#[test]
fn lu_solve_recovers_random_systems() {
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let mut trials = 0;
    while trials < 100 {
        let n = rng.gen_range(2..=8);
        // Diagonal dominance keeps the condition number safely below 1e6.
        let mut a = mat(&mut rng, n, n, 1.0);
        for i in 0..n {
            a[(i, i)] += 4.0;
        }
        let x = mat(&mut rng, n, 2, 3.0);
        let b = matmul(&a, &x).unwrap();
        let recovered = lu_solve(&a, &b).unwrap();
        let err = recovered.sub(&x).unwrap().max_abs();
        assert!(
            err <= 1e-8 * (1.0 + x.max_abs()),
            "trial {trials}: error {err}"
        );
        trials += 1;
    }
}

#[test]
fn expm_inverse_relation_on_random_matrices() {
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    for _ in 0..50 {
        let n = rng.gen_range(1..=6);
        let mut a = mat(&mut rng, n, n, 1.0);
        // keep the norm within the stated |a| <= 5 regime
        let norm = a.inf_norm();
        if norm > 5.0 {
            a = a.scale(5.0 / norm);
        }
        let left = matmul(&expm(&a).unwrap(), &expm(&a.neg()).unwrap()).unwrap();
        let err = left.sub(&Matrix::identity(n)).unwrap().max_abs();
        assert!(err <= 1e-9, "exp(a) exp(-a) drifted from identity by {err}");
    }
}

#[test]
fn kron_mixed_product_identity() {
    let mut rng = ChaCha12Rng::seed_from_u64(17);
    for _ in 0..100 {
        let a = mat(&mut rng, 2, 2, 2.0);
        let b = mat(&mut rng, 2, 2, 2.0);
        let c = mat(&mut rng, 2, 2, 2.0);
        let d = mat(&mut rng, 2, 2, 2.0);
        let lhs = matmul(&kron(&a, &b), &kron(&c, &d)).unwrap();
        let rhs = kron(&matmul(&a, &c).unwrap(), &matmul(&b, &d).unwrap());
        assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-12 * (1.0 + rhs.max_abs()));
    }
}

fn lag() -> StateSpace {
    StateSpace {
        a: Matrix::from_rows(&[vec![-1.0]]).unwrap(),
        b: Matrix::from_rows(&[vec![1.0]]).unwrap(),
        c: Matrix::from_rows(&[vec![1.0]]).unwrap(),
        d: Matrix::zeros(1, 1),
        state_names: vec!["x".into()],
        input_bindings: vec!["w".into()],
        output_bindings: vec!["y".into()],
        initial_state: vec![0.0],
        time: TimeDomain::Continuous,
    }
}

fn closed_di_ss() -> StateSpace {
    StateSpace {
        a: Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap(),
        b: Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap(),
        c: Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap(),
        d: Matrix::zeros(1, 1),
        state_names: vec!["x1".into(), "x2".into()],
        input_bindings: vec!["w".into()],
        output_bindings: vec!["y".into()],
        initial_state: vec![0.0, 0.0],
        time: TimeDomain::Continuous,
    }
}

#[test]
fn hinf_invariant_under_similarity_transforms() {
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let ss = closed_di_ss();
    let reference = hinf_norm_estimate(&ss).unwrap();
    for _ in 0..10 {
        // T = I + small random stays comfortably well-conditioned.
        let t = Matrix::identity(2).add(&mat(&mut rng, 2, 2, 0.3)).unwrap();
        let t_inv = lu_solve(&t, &Matrix::identity(2)).unwrap();
        let transformed = StateSpace {
            a: matmul(&matmul(&t_inv, &ss.a).unwrap(), &t).unwrap(),
            b: matmul(&t_inv, &ss.b).unwrap(),
            c: matmul(&ss.c, &t).unwrap(),
            ..ss.clone()
        };
        let norm = hinf_norm_estimate(&transformed).unwrap();
        assert!(
            (norm - reference).abs() <= 1e-4 * reference,
            "similarity changed the gain: {norm} vs {reference}"
        );
    }
}

#[test]
fn newton_residuals_monotone_after_first_iteration() {
    for (ss, gamma) in [(lag(), 2.0), (lag(), 1.1), (closed_di_ss(), 1.2)] {
        let (_, history) = bounded_real_with_log(&ss, gamma, &CancelToken::new()).unwrap();
        for pair in history.windows(2).skip(1) {
            assert!(
                pair[1] <= pair[0] * (1.0 + 1e-9) + 1e-15,
                "Riccati residual increased: {history:?}"
            );
        }
    }
}

#[test]
fn lyapunov_scaling_covariance_random() {
    let mut rng = ChaCha12Rng::seed_from_u64(29);
    for _ in 0..20 {
        let n = rng.gen_range(2..=6);
        let mut a = mat(&mut rng, n, n, 1.0);
        let shift = a.inf_norm() + 0.5;
        for i in 0..n {
            a[(i, i)] -= shift;
        }
        let c = rng.gen_range(0.1..10.0);
        let p1 = solve_lyapunov_continuous(&a, &Matrix::identity(n))
            .unwrap()
            .p;
        let pc = solve_lyapunov_continuous(&a, &Matrix::identity(n).scale(c))
            .unwrap()
            .p;
        let err = pc.sub(&p1.scale(c)).unwrap().max_abs();
        assert!(
            err <= 1e-10 * pc.max_abs().max(1.0),
            "scaling covariance violated: {err}"
        );
    }
}

/// Re-simulating the diagram and the extracted state-space model with
/// identical inputs and initial conditions gives identical trajectories
/// (exact arithmetic path in discrete time).
#[test]
fn extraction_matches_diagram_simulation() {
    // Discrete two-state chain: x1+ = x1 + 0.1 x2, x2+ = 0.9 x2 + u.
    let wire = |src: (&str, usize), dst: (&str, usize)| Wire {
        src: PortRef::new(src.0, src.1),
        dst: PortRef::new(dst.0, dst.1),
        marker: WireMarker::Plain,
        dim: None,
    };
    let exec = |id: &str, kind: BlockKind| Block {
        id: id.into(),
        kind,
        region: Region::Executable,
    };
    let g = ModelGraph {
        blocks: vec![
            exec(
                "w",
                BlockKind::NoiseSource {
                    spec: NoiseSpec::unit_peak(),
                    dim: 1,
                },
            ),
            exec("x1", BlockKind::UnitDelay { initial: vec![1.0] }),
            exec(
                "x2",
                BlockKind::UnitDelay {
                    initial: vec![-0.5],
                },
            ),
            exec(
                "g12",
                BlockKind::Gain {
                    gain: Matrix::from_rows(&[vec![0.1]]).unwrap(),
                    mode: proofblocks_core::GainMode::Elementwise,
                },
            ),
            exec(
                "g22",
                BlockKind::Gain {
                    gain: Matrix::from_rows(&[vec![0.9]]).unwrap(),
                    mode: proofblocks_core::GainMode::Elementwise,
                },
            ),
            exec("s1", BlockKind::Sum { signs: "++".into() }),
            exec("s2", BlockKind::Sum { signs: "++".into() }),
            exec("y", BlockKind::Outport),
        ],
        wires: vec![
            wire(("x2", 0), ("g12", 0)),
            wire(("x1", 0), ("s1", 0)),
            wire(("g12", 0), ("s1", 1)),
            wire(("s1", 0), ("x1", 0)),
            wire(("x2", 0), ("g22", 0)),
            wire(("g22", 0), ("s2", 0)),
            wire(("w", 0), ("s2", 1)),
            wire(("s2", 0), ("x2", 0)),
            wire(("x1", 0), ("y", 0)),
        ],
        sample_time: Some(0.5),
        ..Default::default()
    };
    g.validate().unwrap();
    let ss = extract_state_space(&g).unwrap();
    let trace = simulate(&g, &SimConfig::discrete(50.0, 7)).unwrap();
    let w = trace.scalar_series("w").unwrap();
    let x1 = trace.scalar_series("x1").unwrap();
    let x2 = trace.scalar_series("x2").unwrap();

    let mut x = ss.initial_state.clone();
    for k in 0..w.len() {
        let rel = 1e-12;
        assert!(
            (x[0] - x1[k]).abs() <= rel * (1.0 + x1[k].abs()),
            "x1 step {k}"
        );
        assert!(
            (x[1] - x2[k]).abs() <= rel * (1.0 + x2[k].abs()),
            "x2 step {k}"
        );
        let mut next = ss.a.matvec(&x);
        let bu = ss.b.matvec(&[w[k]]);
        for (a, b) in next.iter_mut().zip(bu) {
            *a += b;
        }
        x = next;
    }
}

/// Continuous twin of the re-simulation property: the diagram under RK4 and
/// the extracted (A, B) under the same RK4 steps stay within 1e-12 relative.
#[test]
fn extraction_matches_continuous_diagram_simulation() {
    let text = std::fs::read_to_string(
        std::path::PathBuf::from(env!("CARGO_MANIFEST_DIR"))
            .join("../../models/double_integrator_lyapunov.pbm.json"),
    )
    .unwrap();
    let doc = parse_model(&text).unwrap();
    let exec = doc.graph.subgraph(Region::Executable);
    let ss = extract_state_space(&exec).unwrap();

    let h = 0.01;
    let trace = simulate(&exec, &SimConfig::continuous(5.0, h, 0)).unwrap();
    let x1 = trace.scalar_series("x1_int").unwrap();
    let x2 = trace.scalar_series("x2_int").unwrap();

    // Same integrator on the extracted matrices (noise is the zero kind).
    let mut x = ss.initial_state.clone();
    let deriv = |x: &[f64]| ss.a.matvec(x);
    for k in 0..x1.len() {
        assert!(
            (x[0] - x1[k]).abs() <= 1e-12 * (1.0 + x1[k].abs()),
            "x1 step {k}"
        );
        assert!(
            (x[1] - x2[k]).abs() <= 1e-12 * (1.0 + x2[k].abs()),
            "x2 step {k}"
        );
        let k1 = deriv(&x);
        let y1: Vec<f64> = x.iter().zip(&k1).map(|(x, d)| x + 0.5 * h * d).collect();
        let k2 = deriv(&y1);
        let y2: Vec<f64> = x.iter().zip(&k2).map(|(x, d)| x + 0.5 * h * d).collect();
        let k3 = deriv(&y2);
        let y3: Vec<f64> = x.iter().zip(&k3).map(|(x, d)| x + h * d).collect();
        let k4 = deriv(&y3);
        for i in 0..x.len() {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
}

proptest! {
    /// The parser never panics: any input yields a document or diagnostics.
    #[test]
    fn parser_total_on_arbitrary_strings(input in ".{0,256}") {
        let _ = parse_model(&input);
    }

    /// Canonical printing stays parseable and stable for arbitrary scalar
    /// gains and the shipped skeleton.
    #[test]
    fn print_parse_roundtrip_scalar_gain(gain in -1e6f64..1e6f64) {
        let text = format!(
            r#"{{"version":"1","blocks":[
                {{"id":"u","kind":"inport"}},
                {{"id":"g","kind":"gain","params":{{"gain":[[{gain}]]}}}},
                {{"id":"y","kind":"outport"}}],
               "wires":[{{"src":["u",0],"dst":["g",0]}},{{"src":["g",0],"dst":["y",0]}}]}}"#
        );
        let doc = parse_model(&text).unwrap();
        let printed = proofblocks_core::frontend::print_model(&doc);
        let again = parse_model(&printed).unwrap();
        prop_assert!(doc.graph.structurally_equal(&again.graph));
        prop_assert_eq!(printed.clone(), proofblocks_core::frontend::print_model(&again));
    }
}
