//! End-to-end orchestration: parse, extract, certify, annotate, discretize,
//! emit code, simulate, check. The command-line driver is a thin wrapper
//! around this module, so batch runs and tests exercise identical code.

use serde::Serialize;
use thiserror::Error;

use crate::annotator::{self, AnnotationSpec, AnnotatorError};
use crate::backend::{self, BackendError, CodeTarget, DiscretizationReport, DiscretizeOptions};
use crate::certificates::{
    bounded_real_certificate, hinf_norm_estimate, solve_lyapunov_continuous,
    solve_lyapunov_discrete, verify_certificate, CertError, Certificate, CertificateKind,
};
use crate::diag::Diagnostic;
use crate::extraction::{
    export_analysis_request, extract_state_space, AnalysisRequest, RequestedCertificate, StateSpace,
};
use crate::frontend::ModelDocument;
use crate::model_ir::{ModelGraph, NoiseSpec, Region};
use crate::numkernel::Matrix;
use crate::simcheck::{check_assertions, simulate, CheckReport, SimConfig, Trace};

#[derive(Clone, Debug)]
pub struct PipelineOptions {
    /// Discretization step in seconds.
    pub h: f64,
    /// Multiplier above the estimated gain for the default L2 level.
    pub gamma_margin: f64,
    /// Scale of the identity Q in Lyapunov equations.
    pub q_scale: f64,
    pub seed: u64,
    /// Simulation horizon in seconds.
    pub horizon: f64,
    /// RK4 step for continuous simulation.
    pub h_sim: f64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            h: 0.01,
            gamma_margin: 1.02,
            q_scale: 1.0,
            seed: 0,
            horizon: 10.0,
            h_sim: 1e-3,
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("diagnostics:\n{}", crate::diag::render_all(.0))]
    Diagnostics(Vec<Diagnostic>),
    #[error("certification failed: {0}")]
    Certification(#[from] CertError),
    #[error("a computed certificate was refuted: {0}")]
    Refuted(String),
    #[error("annotation expansion failed: {0}")]
    Annotation(#[from] AnnotatorError),
    #[error("backend failed: {0}")]
    Backend(#[from] BackendError),
    #[error("simulation failed: {0}")]
    Simulation(#[from] crate::simcheck::SimError),
    #[error("the model's annotations need certificates, but its executable region is nonlinear")]
    NonlinearNeedsCertificates,
}

impl From<Vec<Diagnostic>> for PipelineError {
    fn from(d: Vec<Diagnostic>) -> Self {
        PipelineError::Diagnostics(d)
    }
}

/// Everything one batch run produces. Code and discretization artifacts are
/// absent on the nonlinear (simulation-only) route.
pub struct PipelineArtifacts {
    pub state_space: Option<StateSpace>,
    pub request_json: Option<String>,
    pub certificates: Vec<Certificate>,
    pub annotated: ModelDocument,
    pub dot: String,
    pub discrete: Option<ModelDocument>,
    pub report: Option<DiscretizationReport>,
    pub c_like: Option<String>,
    pub dataflow: Option<String>,
    pub trace: Trace,
    pub checks: CheckReport,
    pub warnings: Vec<Diagnostic>,
}

/// Whether extraction failed only because the executable region is
/// genuinely nonlinear (the documented simulation-only route).
fn is_nonlinear(diags: &[Diagnostic]) -> bool {
    !diags.is_empty() && diags.iter().all(|d| d.code == "nonlinear-block")
}

/// The analysis request matching a document's annotation demands.
pub fn analysis_request(doc: &ModelDocument) -> Result<AnalysisRequest, Vec<Diagnostic>> {
    let ss = extract_state_space(&doc.graph)?;
    let mut requested = Vec::new();
    let mut noise = NoiseSpec::zero();
    for spec in &doc.annotations {
        match spec {
            AnnotationSpec::Stability { noise: n, .. } => {
                if !requested.contains(&RequestedCertificate::Lyapunov) {
                    requested.push(RequestedCertificate::Lyapunov);
                }
                if let Some(n) = n {
                    noise = n.clone();
                }
            }
            AnnotationSpec::L2gain { noise_input, .. } => {
                if !requested.contains(&RequestedCertificate::L2gain) {
                    requested.push(RequestedCertificate::L2gain);
                }
                if let Some(b) = doc.graph.block(noise_input) {
                    if let crate::model_ir::BlockKind::NoiseSource { spec, .. } = &b.kind {
                        noise = spec.clone();
                    }
                }
            }
            _ => {}
        }
    }
    Ok(AnalysisRequest {
        ss,
        noise,
        requested,
    })
}

/// Compute the certificates demanded by the document's annotations with the
/// internal engine. Lyapunov certificates use `Q = q_scale * I`; the L2
/// level defaults to `gamma_margin` above the frequency-sweep estimate of
/// the named channel, unless the spec pins `alpha`.
pub fn certify_document(
    doc: &ModelDocument,
    opts: &PipelineOptions,
) -> Result<Vec<Certificate>, PipelineError> {
    let needs: Vec<&AnnotationSpec> = doc
        .annotations
        .iter()
        .filter(|s| {
            matches!(
                s,
                AnnotationSpec::Stability { .. } | AnnotationSpec::L2gain { .. }
            )
        })
        .collect();
    if needs.is_empty() {
        return Ok(Vec::new());
    }
    let ss = extract_state_space(&doc.graph).map_err(|d| {
        if is_nonlinear(&d) {
            PipelineError::NonlinearNeedsCertificates
        } else {
            PipelineError::Diagnostics(d)
        }
    })?;

    let mut certs: Vec<Certificate> = Vec::new();
    for spec in needs {
        match spec {
            AnnotationSpec::Stability { .. } => {
                if certs
                    .iter()
                    .any(|c| c.kind == CertificateKind::LyapunovContinuous)
                {
                    continue;
                }
                let q = Matrix::identity(ss.order()).scale(opts.q_scale);
                let cert = if ss.is_continuous() {
                    solve_lyapunov_continuous(&ss.a, &q)?
                } else {
                    solve_lyapunov_discrete(&ss.a, &q)?
                };
                if !cert.is_verified() {
                    return Err(PipelineError::Refuted(format!(
                        "Lyapunov certificate refuted (residual {:.3e}); system not certified stable",
                        cert.residual
                    )));
                }
                certs.push(cert);
            }
            AnnotationSpec::L2gain {
                alpha,
                noise_input,
                output,
                ..
            } => {
                if certs.iter().any(|c| c.kind == CertificateKind::L2Gain) {
                    continue;
                }
                let channel = ss.channel(noise_input, output).ok_or_else(|| {
                    PipelineError::Diagnostics(vec![Diagnostic::new(
                        "unknown-signal",
                        format!("l2gain channel `{noise_input}` -> `{output}` not found"),
                    )])
                })?;
                let gamma = match alpha {
                    Some(a) => *a,
                    None => opts.gamma_margin * hinf_norm_estimate(&channel)?,
                };
                let cert = bounded_real_certificate(&channel, gamma)?;
                if !cert.is_verified() {
                    return Err(PipelineError::Refuted(format!(
                        "bounded-real certificate refuted at gamma = {gamma}"
                    )));
                }
                certs.push(cert);
            }
            _ => unreachable!(),
        }
    }
    Ok(certs)
}

/// Re-verify externally supplied certificates against the extracted model
/// ("trust but verify"): refuted imports abort.
pub fn verify_imported(
    doc: &ModelDocument,
    imported: &[Certificate],
) -> Result<Vec<Certificate>, PipelineError> {
    let ss = extract_state_space(&doc.graph)?;
    let mut out = Vec::new();
    for cert in imported {
        let v = verify_certificate(&ss, cert)?;
        if !v.is_verified() {
            return Err(PipelineError::Refuted(format!(
                "imported {} certificate refuted on re-verification (violation {:.3e})",
                cert.kind.wire_name(),
                v.residual
            )));
        }
        out.push(v);
    }
    Ok(out)
}

/// Expand every annotation spec into verification subgraphs. Annotation is
/// reconstructive: any existing annotation region is stripped first, so the
/// operation is idempotent.
pub fn annotate_document(
    doc: &ModelDocument,
    certs: &[Certificate],
) -> Result<(ModelDocument, Vec<Diagnostic>), PipelineError> {
    let mut graph = doc.graph.subgraph(Region::Executable);
    let mut warnings = Vec::new();
    for spec in &doc.annotations {
        let out = match spec {
            AnnotationSpec::Stability { .. } => {
                let want = if graph.is_discrete() {
                    CertificateKind::LyapunovDiscrete
                } else {
                    CertificateKind::LyapunovContinuous
                };
                let cert = certs
                    .iter()
                    .find(|c| c.kind == want)
                    .ok_or(AnnotatorError::UnverifiedCertificate)?;
                annotator::generate_stability_annotation(&graph, spec, cert)?
            }
            AnnotationSpec::L2gain { .. } => {
                let cert = certs
                    .iter()
                    .find(|c| c.kind == CertificateKind::L2Gain)
                    .ok_or(AnnotatorError::UnverifiedCertificate)?;
                annotator::generate_l2_annotation(&graph, spec, cert)?
            }
            AnnotationSpec::L1PerfBound { .. } => {
                annotator::generate_l1_bound_annotation(&graph, spec)?
            }
            AnnotationSpec::Manual { .. } => annotator::attach_manual_annotation(&graph, spec)?,
        };
        graph = out.graph;
        warnings.extend(out.warnings);
    }
    Ok((
        ModelDocument {
            version: doc.version.clone(),
            graph,
            annotations: doc.annotations.clone(),
        },
        warnings,
    ))
}

/// Run the whole batch pipeline on a parsed document.
pub fn run_pipeline(
    doc: &ModelDocument,
    opts: &PipelineOptions,
) -> Result<PipelineArtifacts, PipelineError> {
    let extraction = extract_state_space(&doc.graph);
    let (linear, state_space) = match extraction {
        Ok(ss) => (true, Some(ss)),
        Err(d) if is_nonlinear(&d) => (false, None),
        Err(d) => return Err(PipelineError::Diagnostics(d)),
    };

    let mut warnings = Vec::new();
    let certificates = if linear {
        certify_document(doc, opts)?
    } else {
        if doc.annotations.iter().any(|s| {
            matches!(
                s,
                AnnotationSpec::Stability { .. } | AnnotationSpec::L2gain { .. }
            )
        }) {
            return Err(PipelineError::NonlinearNeedsCertificates);
        }
        warnings.push(Diagnostic::new(
            "nonlinear-route",
            "executable region is nonlinear: certificates and code targets are skipped; annotations are runtime-checked in simulation",
        ));
        Vec::new()
    };

    let (annotated, mut anno_warnings) = annotate_document(doc, &certificates)?;
    warnings.append(&mut anno_warnings);
    let dot = crate::frontend::render_dot(&annotated);
    let request_json = state_space
        .as_ref()
        .map(|_| analysis_request(doc).map(|r| export_analysis_request(&r)));
    let request_json = match request_json {
        Some(Ok(j)) => Some(j),
        Some(Err(d)) => return Err(PipelineError::Diagnostics(d)),
        None => None,
    };

    if linear {
        let (dgraph, report) = backend::discretize_with_proof(
            &annotated.graph,
            &doc.annotations,
            &certificates,
            opts.h,
            &DiscretizeOptions {
                q_scale: opts.q_scale,
            },
        )?;
        for outcome in &report.annotations {
            warnings.extend(outcome.warnings.iter().cloned());
        }
        let c_like = backend::emit_code(&dgraph, Some(&report), CodeTarget::CLike)?;
        let dataflow = backend::emit_code(&dgraph, Some(&report), CodeTarget::Dataflow)?;
        let trace = simulate(&dgraph, &SimConfig::discrete(opts.horizon, opts.seed))?;
        let checks = check_assertions(&trace, &dgraph);
        // The discrete document is self-contained: its verification blocks
        // are already expanded in the graph, and the request specs reference
        // pre-discretization wires that no longer exist.
        let discrete_doc = ModelDocument {
            version: doc.version.clone(),
            graph: dgraph,
            annotations: Vec::new(),
        };
        Ok(PipelineArtifacts {
            state_space,
            request_json,
            certificates,
            annotated,
            dot,
            discrete: Some(discrete_doc),
            report: Some(report),
            c_like: Some(c_like),
            dataflow: Some(dataflow),
            trace,
            checks,
            warnings,
        })
    } else {
        let trace = simulate(
            &annotated.graph,
            &SimConfig::continuous(opts.horizon, opts.h_sim, opts.seed),
        )?;
        let checks = check_assertions(&trace, &annotated.graph);
        Ok(PipelineArtifacts {
            state_space,
            request_json,
            certificates,
            annotated,
            dot,
            discrete: None,
            report: None,
            c_like: None,
            dataflow: None,
            trace,
            checks,
            warnings,
        })
    }
}

/// Provenance block echoed into every output JSON: the numeric options the
/// run used, for certificate auditability.
#[derive(Clone, Debug, Serialize)]
pub struct Provenance {
    pub tool: &'static str,
    pub version: &'static str,
    pub h: f64,
    pub gamma_margin: f64,
    pub q_scale: f64,
    pub seed: u64,
    pub horizon: f64,
    pub h_sim: f64,
    pub tolerance_scale: f64,
}

impl Provenance {
    pub fn new(opts: &PipelineOptions) -> Self {
        Provenance {
            tool: "proofblocks",
            version: env!("CARGO_PKG_VERSION"),
            h: opts.h,
            gamma_margin: opts.gamma_margin,
            q_scale: opts.q_scale,
            seed: opts.seed,
            horizon: opts.horizon,
            h_sim: opts.h_sim,
            tolerance_scale: crate::tol::scale(),
        }
    }
}

/// Graphs the simulation route accepts directly (already-annotated models).
pub fn simulate_document(
    doc: &ModelDocument,
    opts: &PipelineOptions,
) -> Result<(ModelGraph, Trace, CheckReport), PipelineError> {
    // Expand annotations when the file carries unexpanded requests.
    let graph = if doc.annotations.is_empty() {
        doc.graph.clone()
    } else {
        let certs = match certify_document(doc, opts) {
            Ok(c) => c,
            Err(PipelineError::NonlinearNeedsCertificates) => Vec::new(),
            Err(e) => return Err(e),
        };
        annotate_document(doc, &certs)?.0.graph
    };
    let cfg = if graph.is_discrete() {
        SimConfig::discrete(opts.horizon, opts.seed)
    } else {
        SimConfig::continuous(opts.horizon, opts.h_sim, opts.seed)
    };
    let trace = simulate(&graph, &cfg)?;
    let checks = check_assertions(&trace, &graph);
    Ok((graph, trace, checks))
}
