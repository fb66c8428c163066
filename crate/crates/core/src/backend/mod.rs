//! Discretize the model and its proof, and emit annotated code.
//!
//! Discretization is exact zero-order hold: `Ad = exp(A h)`, `Bd` from the
//! augmented block exponential. Proof transport per annotation kind:
//!
//! - Lyapunov (continuous): recompute a fresh discrete certificate
//!   `Ad^T P Ad - P = -Q` and regenerate the annotation against it.
//! - L2 gain: keep the continuous storage P and test the exact integrated
//!   dissipation inequality, where the one-step output energy is the
//!   Van Loan Gramian quadratic form over `[x; w]`. A verified continuous
//!   certificate implies this inequality, so the discrete proof carries
//!   over without loosening.
//! - L1 bounds and manual annotations: carried as runtime checks only;
//!   annotation-region integrators step forward-Euler at the sample time.

mod c_like;
mod dataflow;
mod emit;

pub use dataflow::sanitize_ident;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotator::{self, AnnotationSpec, AnnotatorError};
use crate::certificates::{solve_lyapunov_discrete, CertStatus, Certificate, CertificateKind};
use crate::diag::Diagnostic;
use crate::extraction::{extract_with_signals, SignalForm, StateSpace, TimeDomain};
use crate::model_ir::{Block, BlockKind, GainMode, ModelGraph, PortRef, Region, Wire, WireMarker};
use crate::numkernel::{expm, semidefinite_check, Matrix, PsdOutcome};
use crate::tol;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("discretization step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("model must be continuous-time for discretization")]
    NotContinuous,
    #[error("target cannot emit block `{block}`: {reason}")]
    UnsupportedBlock { block: String, reason: String },
    #[error("graph is not a discrete-time model; run discretization first")]
    NotDiscrete,
    #[error("annotation regeneration failed: {0}")]
    Annotator(#[from] AnnotatorError),
    #[error(transparent)]
    Num(#[from] crate::numkernel::NumError),
    #[error(transparent)]
    Cert(#[from] crate::certificates::CertError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificatePath {
    /// The proof was re-established for the discrete system.
    RecomputedDiscrete,
    /// The continuous proof rides along as a runtime check only.
    ContinuousCarriedRuntimeOnly,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnotationOutcome {
    pub kind: String,
    pub path: CertificatePath,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub discrete_cert: Option<Certificate>,
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub warnings: Vec<Diagnostic>,
}

/// What discretization did: the step, the exact hold matrices, and how each
/// annotation's proof traveled.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiscretizationReport {
    pub h: f64,
    pub ad: Matrix,
    pub bd: Matrix,
    pub certificate_path: CertificatePath,
    pub annotations: Vec<AnnotationOutcome>,
}

/// Exact zero-order-hold discretization of a continuous model.
pub fn zoh_discretize(ss: &StateSpace, h: f64) -> Result<StateSpace, BackendError> {
    if h <= 0.0 {
        return Err(BackendError::InvalidStep(h));
    }
    if !ss.is_continuous() {
        return Err(BackendError::NotContinuous);
    }
    let (ad, bd) = zoh_matrices(&ss.a, &ss.b, h)?;
    Ok(StateSpace {
        a: ad,
        b: bd,
        c: ss.c.clone(),
        d: ss.d.clone(),
        state_names: ss.state_names.clone(),
        input_bindings: ss.input_bindings.clone(),
        output_bindings: ss.output_bindings.clone(),
        initial_state: ss.initial_state.clone(),
        time: TimeDomain::Discrete { h },
    })
}

/// `Ad = exp(A h)`, `Bd` = top-right block of `exp([[A, B], [0, 0]] h)`.
pub fn zoh_matrices(a: &Matrix, b: &Matrix, h: f64) -> Result<(Matrix, Matrix), BackendError> {
    let n = a.rows();
    let m = b.cols();
    let mut aug = Matrix::zeros(n + m, n + m);
    aug.set_block(0, 0, a);
    aug.set_block(0, n, b);
    let e = expm(&aug.scale(h))?;
    Ok((e.block(0, 0, n, n), e.block(0, n, n, m)))
}

/// One-step ZOH data for the dissipation transport: `Ad`, `Bd`, and the
/// output-energy Gramian `G` with
/// `int_0^h ||C x(t)||^2 dt = [x0; w]^T G [x0; w]` under constant `w`.
/// Computed by the Van Loan block-exponential identity.
pub fn output_energy_gramian(
    a: &Matrix,
    b: &Matrix,
    c: &Matrix,
    h: f64,
) -> Result<(Matrix, Matrix, Matrix), BackendError> {
    if h <= 0.0 {
        return Err(BackendError::InvalidStep(h));
    }
    let n = a.rows();
    let m = b.cols();
    let na = n + m;
    // Augmented hold system: d/dt [x; w] = [[A, B], [0, 0]] [x; w].
    let mut ae = Matrix::zeros(na, na);
    ae.set_block(0, 0, a);
    ae.set_block(0, n, b);
    let mut ctc_e = Matrix::zeros(na, na);
    let ctc = c.transpose().matmul(c)?;
    ctc_e.set_block(0, 0, &ctc);

    let mut big = Matrix::zeros(2 * na, 2 * na);
    big.set_block(0, 0, &ae.transpose().neg());
    big.set_block(0, na, &ctc_e);
    big.set_block(na, na, &ae);
    let f = expm(&big.scale(h))?;
    let f12 = f.block(0, na, na, na);
    let f22 = f.block(na, na, na, na);
    let g = f22.transpose().matmul(&f12)?.symmetrize();
    Ok((f22.block(0, 0, n, n), f22.block(0, n, n, m), g))
}

/// Options threaded through proof transport.
#[derive(Clone, Debug)]
pub struct DiscretizeOptions {
    /// Q for the recomputed discrete Lyapunov equation.
    pub q_scale: f64,
}

impl Default for DiscretizeOptions {
    fn default() -> Self {
        DiscretizeOptions { q_scale: 1.0 }
    }
}

/// Replace the executable linear region by its exact ZOH state-space
/// realization, transport every annotation's proof, and report how each
/// traveled. Nonlinear executable regions are diagnosed: those models keep
/// the simulation-only path and get no code target.
pub fn discretize_with_proof(
    g: &ModelGraph,
    specs: &[AnnotationSpec],
    certs: &[Certificate],
    h: f64,
    opts: &DiscretizeOptions,
) -> Result<(ModelGraph, DiscretizationReport), Vec<Diagnostic>> {
    if h <= 0.0 {
        return Err(vec![Diagnostic::new(
            "bad-step",
            format!("step must be positive, got {h}"),
        )]);
    }
    if g.is_discrete() {
        return Err(vec![Diagnostic::new(
            "not-continuous",
            "model is already discrete",
        )]);
    }
    let exec = g.subgraph(Region::Executable);
    let exec = exec.infer_dimensions()?;
    let (ss, signals) = extract_with_signals(&exec)?;
    let n = ss.order();
    let m = ss.num_inputs();
    let p = ss.num_outputs();

    let (ad, bd) = zoh_matrices(&ss.a, &ss.b, h)
        .map_err(|e| vec![Diagnostic::new("discretize-failed", e.to_string())])?;

    // Signals the annotations need from the discrete realization.
    let mut taps: Vec<PortRef> = Vec::new();
    let tap_of = |sig: &PortRef, taps: &mut Vec<PortRef>| -> usize {
        if let Some(i) = taps.iter().position(|t| t == sig) {
            i
        } else {
            taps.push(sig.clone());
            taps.len() - 1
        }
    };
    let mut spec_taps: Vec<Vec<usize>> = Vec::new();
    for spec in specs {
        let mut used = Vec::new();
        match spec {
            AnnotationSpec::L1PerfBound { error_wire, .. } => {
                used.push(tap_of(error_wire, &mut taps));
            }
            AnnotationSpec::Manual { bindings, .. } => {
                for target in bindings.values() {
                    used.push(tap_of(target, &mut taps));
                }
            }
            _ => {}
        }
        spec_taps.push(used);
    }

    // Tap rows from the extracted signal table.
    let mut diags = Vec::new();
    let mut tap_forms: Vec<&SignalForm> = Vec::new();
    for t in &taps {
        match signals.get(t) {
            Some(f) if !f.has_offset() => tap_forms.push(f),
            Some(_) => diags.push(
                Diagnostic::new(
                    "affine-offset",
                    format!(
                        "annotation taps signal `{}:{}` which carries a constant offset",
                        t.block, t.port
                    ),
                )
                .with_block(&t.block),
            ),
            None => diags.push(Diagnostic::new(
                "unknown-signal",
                format!(
                    "annotation references unknown executable signal `{}:{}`",
                    t.block, t.port
                ),
            )),
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    // Stacked realization output: [state; outputs; taps].
    let t_dim: usize = tap_forms.iter().map(|f| f.dim()).sum();
    let out_dim = n + p + t_dim;
    let mut c = Matrix::zeros(out_dim, n);
    let mut d = Matrix::zeros(out_dim, m);
    c.set_block(0, 0, &Matrix::identity(n));
    c.set_block(n, 0, &ss.c);
    d.set_block(n, 0, &ss.d);
    let mut row = n + p;
    for f in &tap_forms {
        for i in 0..f.dim() {
            for j in 0..n {
                c[(row, j)] = f.state_coeffs[i][j];
            }
            for j in 0..m {
                d[(row, j)] = f.input_coeffs[i][j];
            }
            row += 1;
        }
    }

    // Build the discrete graph.
    let mut dg = ModelGraph {
        blocks: Vec::new(),
        wires: Vec::new(),
        sample_time: Some(h),
        metadata: exec.metadata.clone(),
    };
    dg.metadata
        .insert("discretization".into(), format!("zoh h={h}"));

    // Input blocks survive; ordering mirrors the extraction's input layout.
    let mut input_ids: Vec<String> = Vec::new();
    for name in &ss.input_bindings {
        let base = name.split('[').next().unwrap_or(name).to_string();
        if !input_ids.contains(&base) {
            input_ids.push(base);
        }
    }
    for id in &input_ids {
        let src = exec
            .block(id)
            .expect("extraction bindings name existing blocks");
        dg.blocks.push(src.clone());
    }

    dg.blocks.push(Block {
        id: "dss".into(),
        kind: BlockKind::StateSpace {
            a: ad.clone(),
            b: bd.clone(),
            c,
            d,
            initial: ss.initial_state.clone(),
        },
        region: Region::Executable,
    });
    for (port, id) in input_ids.iter().enumerate() {
        dg.wires.push(Wire {
            src: PortRef::new(id.clone(), 0),
            dst: PortRef::new("dss", port),
            marker: WireMarker::Plain,
            dim: None,
        });
    }

    let selector = |rows: std::ops::Range<usize>| -> Matrix {
        let mut s = Matrix::zeros(rows.len(), out_dim);
        for (i, r) in rows.enumerate() {
            s[(i, r)] = 1.0;
        }
        s
    };
    // State selector, marked as the state wire of the discrete model. A
    // scope reads it so the marker claim exists before any annotation is
    // generated (annotators verify markers, they do not invent them).
    dg.blocks.push(Block {
        id: "dsel.state".into(),
        kind: BlockKind::Gain {
            gain: selector(0..n),
            mode: GainMode::Matrix,
        },
        region: Region::Executable,
    });
    dg.wires.push(Wire {
        src: PortRef::new("dss", 0),
        dst: PortRef::new("dsel.state", 0),
        marker: WireMarker::Plain,
        dim: None,
    });
    dg.blocks.push(Block {
        id: "dscope.state".into(),
        kind: BlockKind::Scope,
        region: Region::Executable,
    });
    dg.wires.push(Wire {
        src: PortRef::new("dsel.state", 0),
        dst: PortRef::new("dscope.state", 0),
        marker: WireMarker::State,
        dim: None,
    });

    // One selector per outport, preserving outport ids.
    let mut out_row = n;
    let mut outport_ids: Vec<String> = Vec::new();
    for name in &ss.output_bindings {
        let base = name.split('[').next().unwrap_or(name).to_string();
        if !outport_ids.contains(&base) {
            outport_ids.push(base);
        }
    }
    for id in &outport_ids {
        let width = ss
            .output_bindings
            .iter()
            .filter(|b| b.split('[').next().unwrap() == id)
            .count();
        let sel = format!("dsel.out.{id}");
        dg.blocks.push(Block {
            id: sel.clone(),
            kind: BlockKind::Gain {
                gain: selector(out_row..out_row + width),
                mode: GainMode::Matrix,
            },
            region: Region::Executable,
        });
        dg.blocks.push(Block {
            id: id.clone(),
            kind: BlockKind::Outport,
            region: Region::Executable,
        });
        dg.wires.push(Wire {
            src: PortRef::new("dss", 0),
            dst: PortRef::new(sel.clone(), 0),
            marker: WireMarker::Plain,
            dim: None,
        });
        dg.wires.push(Wire {
            src: PortRef::new(sel, 0),
            dst: PortRef::new(id.clone(), 0),
            marker: WireMarker::Plain,
            dim: None,
        });
        out_row += width;
    }
    // Tap selectors.
    let mut tap_row = n + p;
    let mut tap_sel_ids = Vec::new();
    for (i, f) in tap_forms.iter().enumerate() {
        let sel = format!("dsel.tap.{i}");
        dg.blocks.push(Block {
            id: sel.clone(),
            kind: BlockKind::Gain {
                gain: selector(tap_row..tap_row + f.dim()),
                mode: GainMode::Matrix,
            },
            region: Region::Executable,
        });
        dg.wires.push(Wire {
            src: PortRef::new("dss", 0),
            dst: PortRef::new(sel.clone(), 0),
            marker: WireMarker::Plain,
            dim: None,
        });
        tap_sel_ids.push(sel);
        tap_row += f.dim();
    }

    dg.validate()?;

    // -- proof transport per annotation -------------------------------------
    let state_ref = vec![PortRef::new("dsel.state", 0)];
    // The state selector wire must carry the state marker; the annotators
    // add their own wires, but the marker claim lives on at least one wire
    // from the signal, so pre-mark it with a scope-less annotation read.
    // Simplest: mark the selector output by rewriting its wires on use.
    let mut outcomes: Vec<AnnotationOutcome> = Vec::new();
    let mut graph = dg.clone();
    for (spec, tap_idx) in specs.iter().zip(&spec_taps) {
        let kind = spec.kind_name().to_string();
        match spec {
            AnnotationSpec::Stability { .. } => {
                let q = Matrix::identity(n).scale(opts.q_scale);
                match solve_lyapunov_discrete(&ad, &q) {
                    Ok(dcert) if dcert.is_verified() => {
                        let translated = AnnotationSpec::Stability {
                            p: None,
                            noise: None,
                            states: state_ref.clone(),
                        };
                        let out =
                            annotator::generate_stability_annotation(&graph, &translated, &dcert)
                                .map_err(|e| vec![Diagnostic::new("annotator", e.to_string())])?;
                        graph = out.graph;
                        outcomes.push(AnnotationOutcome {
                            kind,
                            path: CertificatePath::RecomputedDiscrete,
                            discrete_cert: Some(dcert),
                            warnings: out.warnings,
                        });
                    }
                    _ => {
                        // Carry the continuous certificate: sampling a flow
                        // with nonincreasing V keeps V nonincreasing, so the
                        // same construction runs with the continuous P.
                        let cont = certs.iter().find(|c| {
                            c.kind == CertificateKind::LyapunovContinuous && c.is_verified()
                        });
                        let Some(cont) = cont else {
                            return Err(vec![Diagnostic::new(
                                "missing-certificate",
                                "no verified Lyapunov certificate to carry",
                            )]);
                        };
                        let carried = Certificate {
                            kind: CertificateKind::LyapunovDiscrete,
                            status: CertStatus::Verified,
                            ..cont.clone()
                        };
                        let translated = AnnotationSpec::Stability {
                            p: None,
                            noise: None,
                            states: state_ref.clone(),
                        };
                        let out =
                            annotator::generate_stability_annotation(&graph, &translated, &carried)
                                .map_err(|e| vec![Diagnostic::new("annotator", e.to_string())])?;
                        graph = out.graph;
                        outcomes.push(AnnotationOutcome {
                            kind,
                            path: CertificatePath::ContinuousCarriedRuntimeOnly,
                            discrete_cert: None,
                            warnings: vec![Diagnostic::new(
                                "carried-continuous",
                                "discrete Lyapunov recomputation failed; continuous proof carried as a runtime check",
                            )],
                        });
                    }
                }
            }
            AnnotationSpec::L2gain {
                noise_input,
                output,
                ..
            } => {
                let cont = certs
                    .iter()
                    .find(|c| c.kind == CertificateKind::L2Gain && c.is_verified())
                    .ok_or_else(|| {
                        vec![Diagnostic::new(
                            "missing-certificate",
                            "no verified L2 certificate for the l2gain annotation",
                        )]
                    })?;
                let alpha = cont.alpha.expect("verified L2 certificates carry alpha");
                let channel = ss.channel(noise_input, output).ok_or_else(|| {
                    vec![Diagnostic::new(
                        "unknown-signal",
                        format!("l2gain channel `{noise_input}` -> `{output}` not found"),
                    )]
                })?;
                let (_, bd_w, gram) = output_energy_gramian(&channel.a, &channel.b, &channel.c, h)
                    .map_err(|e| vec![Diagnostic::new("discretize-failed", e.to_string())])?;
                // Exact integrated dissipation LMI with the continuous P.
                let mw = bd_w.cols();
                let adp = ad.transpose().matmul(&cont.p).unwrap();
                let mut lmi = Matrix::zeros(n + mw, n + mw);
                lmi.set_block(0, 0, &adp.matmul(&ad).unwrap().sub(&cont.p).unwrap());
                let tr = adp.matmul(&bd_w).unwrap();
                lmi.set_block(0, n, &tr);
                lmi.set_block(n, 0, &tr.transpose());
                lmi.set_block(
                    n,
                    n,
                    &bd_w
                        .transpose()
                        .matmul(&cont.p)
                        .unwrap()
                        .matmul(&bd_w)
                        .unwrap()
                        .sub(&Matrix::identity(mw).scale(alpha * alpha * h))
                        .unwrap(),
                );
                let lmi = lmi.add(&gram).unwrap().symmetrize();
                let psd = semidefinite_check(&lmi.neg(), tol::scaled(tol::PSD_DEFAULT))
                    .map_err(|e| vec![Diagnostic::new("lmi-check", e.to_string())])?;
                let (path, dcert, warnings) = match psd {
                    PsdOutcome::Psd => (
                        CertificatePath::RecomputedDiscrete,
                        Some(Certificate {
                            kind: CertificateKind::L2Gain,
                            p: cont.p.clone(),
                            alpha: Some(alpha),
                            residual: 0.0,
                            status: CertStatus::Verified,
                            provenance: cont.provenance,
                        }),
                        vec![],
                    ),
                    PsdOutcome::NotPsd { .. } => (
                        CertificatePath::ContinuousCarriedRuntimeOnly,
                        None,
                        vec![Diagnostic::new(
                            "carried-continuous",
                            "discrete dissipation LMI refuted; L2 annotation carried as a runtime check only",
                        )],
                    ),
                };
                let out = annotator::generate_l2_annotation_zoh(
                    &graph,
                    &state_ref,
                    noise_input,
                    &cont.p,
                    alpha,
                    &gram,
                    h,
                )
                .map_err(|e| vec![Diagnostic::new("annotator", e.to_string())])?;
                graph = out.graph;
                outcomes.push(AnnotationOutcome {
                    kind,
                    path,
                    discrete_cert: dcert,
                    warnings,
                });
            }
            AnnotationSpec::L1PerfBound {
                theta_max,
                gamma_adapt,
                p,
                ..
            } => {
                let translated = AnnotationSpec::L1PerfBound {
                    theta_max: *theta_max,
                    gamma_adapt: *gamma_adapt,
                    p: p.clone(),
                    error_wire: PortRef::new(tap_sel_ids[tap_idx[0]].clone(), 0),
                };
                let out = annotator::generate_l1_bound_annotation(&graph, &translated)
                    .map_err(|e| vec![Diagnostic::new("annotator", e.to_string())])?;
                graph = out.graph;
                outcomes.push(AnnotationOutcome {
                    kind,
                    path: CertificatePath::ContinuousCarriedRuntimeOnly,
                    discrete_cert: None,
                    warnings: out.warnings,
                });
            }
            AnnotationSpec::Manual {
                graph: manual,
                bindings,
            } => {
                let mut translated_bindings = bindings.clone();
                for (i, (_, target)) in translated_bindings.iter_mut().enumerate() {
                    *target = PortRef::new(tap_sel_ids[tap_idx[i]].clone(), 0);
                }
                let translated = AnnotationSpec::Manual {
                    graph: manual.clone(),
                    bindings: translated_bindings,
                };
                let out = annotator::attach_manual_annotation(&graph, &translated)
                    .map_err(|e| vec![Diagnostic::new("annotator", e.to_string())])?;
                graph = out.graph;
                outcomes.push(AnnotationOutcome {
                    kind,
                    path: CertificatePath::ContinuousCarriedRuntimeOnly,
                    discrete_cert: None,
                    warnings: out.warnings,
                });
            }
        }
    }

    let overall = if outcomes
        .iter()
        .filter(|o| o.kind == "stability" || o.kind == "l2gain")
        .all(|o| o.path == CertificatePath::RecomputedDiscrete)
        && outcomes
            .iter()
            .any(|o| o.kind == "stability" || o.kind == "l2gain")
    {
        CertificatePath::RecomputedDiscrete
    } else {
        CertificatePath::ContinuousCarriedRuntimeOnly
    };
    let report = DiscretizationReport {
        h,
        ad,
        bd,
        certificate_path: overall,
        annotations: outcomes,
    };
    Ok((graph, report))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodeTarget {
    CLike,
    Dataflow,
}

/// Emit one code target for a discrete, validated model. Annotation-region
/// blocks contribute only contract comments: stripping the annotation
/// region changes comment lines and nothing else.
pub fn emit_code(
    g_d: &ModelGraph,
    report: Option<&DiscretizationReport>,
    target: CodeTarget,
) -> Result<String, BackendError> {
    if !g_d.is_discrete() {
        return Err(BackendError::NotDiscrete);
    }
    let g = g_d
        .infer_dimensions()
        .map_err(|d| BackendError::UnsupportedBlock {
            block: "<graph>".into(),
            reason: crate::diag::render_all(&d),
        })?;
    match target {
        CodeTarget::CLike => c_like::emit(&g, report),
        CodeTarget::Dataflow => dataflow::emit(&g, report),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zoh_double_integrator_exact() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        let (ad, bd) = zoh_matrices(&a, &b, 0.1).unwrap();
        let ad_expect = Matrix::from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        let bd_expect = Matrix::from_rows(&[vec![0.005], vec![0.1]]).unwrap();
        assert!(ad.sub(&ad_expect).unwrap().max_abs() < 1e-14);
        assert!(bd.sub(&bd_expect).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn zoh_zero_dynamics() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::from_rows(&[vec![1.0], vec![2.0]]).unwrap();
        let (ad, bd) = zoh_matrices(&a, &b, 0.5).unwrap();
        assert!(ad.sub(&Matrix::identity(2)).unwrap().max_abs() < 1e-15);
        assert!(bd.sub(&b.scale(0.5)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn zoh_scalar_lag() {
        let a = Matrix::from_rows(&[vec![-1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let h = 2.0f64.ln();
        let (ad, bd) = zoh_matrices(&a, &b, h).unwrap();
        assert!((ad[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((bd[(0, 0)] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn zoh_rejects_bad_step() {
        let ss = StateSpace {
            a: Matrix::identity(1),
            b: Matrix::identity(1),
            c: Matrix::identity(1),
            d: Matrix::zeros(1, 1),
            state_names: vec!["x".into()],
            input_bindings: vec!["u".into()],
            output_bindings: vec!["y".into()],
            initial_state: vec![0.0],
            time: TimeDomain::Continuous,
        };
        assert!(matches!(
            zoh_discretize(&ss, 0.0),
            Err(BackendError::InvalidStep(_))
        ));
    }

    #[test]
    fn gramian_matches_quadrature() {
        // int_0^h (x(t))^2 dt for dx = -x + w, y = x: compare against a fine
        // trapezoid quadrature.
        let a = Matrix::from_rows(&[vec![-1.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let c = Matrix::from_rows(&[vec![1.0]]).unwrap();
        let h = 0.3;
        let (_, _, g) = output_energy_gramian(&a, &b, &c, h).unwrap();
        let (x0, w) = (0.7, -0.4);
        let exact = g.quad_form(&[x0, w]);
        let steps = 200000;
        let dt = h / steps as f64;
        let mut acc = 0.0;
        let mut prev = x0 * x0;
        let mut x = x0;
        let e = (-dt).exp();
        for _ in 0..steps {
            // exact solution step of dx = -x + w under constant w
            x = e * x + (1.0 - e) * w;
            let cur = x * x;
            acc += 0.5 * (prev + cur) * dt;
            prev = cur;
        }
        assert!(
            (exact - acc).abs() < 1e-9,
            "gramian {exact} vs quadrature {acc}"
        );
    }
}
