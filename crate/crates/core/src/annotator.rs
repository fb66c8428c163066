//! The verification block generator: expand high-level annotation specs
//! into annotation-region subgraphs wired onto the executable model.
//!
//! Every generator leaves the executable region untouched (the region
//! isolation invariant `subgraph(output, executable) == input` holds by
//! construction), produces deterministic block ids `anno.<kind>.<counter>`,
//! and emits only blocks that pass validation and dimension inference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::certificates::{Certificate, CertificateKind};
use crate::diag::Diagnostic;
use crate::model_ir::{
    AssertCheck, Block, BlockKind, GainMode, ModelGraph, NoiseSpec, PortRef, ProductMode, Region,
    Wire, WireMarker,
};
use crate::numkernel::{cholesky, min_eig_symmetric, Matrix};
use crate::tol;

/// A request to be expanded into a verification subgraph. These live in the
/// model file's `annotations` array; the stability block follows the
/// proposed three-parameter form (P, the noise characteristics, the states).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AnnotationSpec {
    Stability {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p: Option<Matrix>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        noise: Option<NoiseSpec>,
        states: Vec<PortRef>,
    },
    L2gain {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        noise_input: String,
        output: String,
        states: Vec<PortRef>,
    },
    L1PerfBound {
        theta_max: f64,
        gamma_adapt: f64,
        p: Matrix,
        error_wire: PortRef,
    },
    Manual {
        graph: ModelGraph,
        bindings: BTreeMap<String, PortRef>,
    },
}

impl AnnotationSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            AnnotationSpec::Stability { .. } => "stability",
            AnnotationSpec::L2gain { .. } => "l2gain",
            AnnotationSpec::L1PerfBound { .. } => "l1_perf_bound",
            AnnotationSpec::Manual { .. } => "manual",
        }
    }

    /// Certificate kind this spec needs before it can be expanded, if any.
    pub fn required_certificate(&self, discrete: bool) -> Option<CertificateKind> {
        match self {
            AnnotationSpec::Stability { .. } => Some(if discrete {
                CertificateKind::LyapunovDiscrete
            } else {
                CertificateKind::LyapunovContinuous
            }),
            AnnotationSpec::L2gain { .. } => Some(CertificateKind::L2Gain),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum AnnotatorError {
    #[error("certificate is not verified; refusing to emit an unproven annotation")]
    UnverifiedCertificate,
    #[error("wire `{0}:{1}` is not marked as a state wire")]
    MissingStateMarker(String, usize),
    #[error("state wires sum to dimension {found}, but P has order {expected}")]
    StateDimensionMismatch { found: usize, expected: usize },
    #[error("noise input `{0}` not found in the model")]
    MissingNoiseInput(String),
    #[error("output `{0}` not found in the model")]
    MissingOutput(String),
    #[error("signal `{0}:{1}` not found in the model")]
    UnknownSignal(String, usize),
    #[error("annotation bound matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("manual annotation graph reaches into the executable region: {0}")]
    RegionViolation(String),
    #[error("manual annotation input `{0}` has no binding")]
    UnboundInput(String),
    #[error("block id `{0}` already exists in the target graph")]
    IdCollision(String),
    #[error("generated annotation failed validation: {0}")]
    Invalid(String),
    #[error("L2 annotation needs a gain level alpha (certificate or spec)")]
    MissingAlpha,
}

/// A generated graph plus non-fatal warnings.
#[derive(Clone, Debug)]
pub struct Annotated {
    pub graph: ModelGraph,
    pub warnings: Vec<Diagnostic>,
}

struct Builder<'g> {
    graph: ModelGraph,
    prefix: String,
    counter: usize,
    base: &'g ModelGraph,
}

impl<'g> Builder<'g> {
    fn new(base: &'g ModelGraph, kind: &str) -> Self {
        Builder {
            graph: base.clone(),
            prefix: format!("anno.{kind}"),
            counter: 0,
            base,
        }
    }

    fn add(&mut self, kind: BlockKind) -> Result<String, AnnotatorError> {
        let id = format!("{}.{}", self.prefix, self.counter);
        self.counter += 1;
        if self.base.block(&id).is_some() {
            return Err(AnnotatorError::IdCollision(id));
        }
        self.graph.blocks.push(Block {
            id: id.clone(),
            kind,
            region: Region::Annotation,
        });
        Ok(id)
    }

    fn wire(&mut self, src: PortRef, dst: PortRef, marker: WireMarker) {
        self.graph.wires.push(Wire {
            src,
            dst,
            marker,
            dim: None,
        });
    }

    fn finish(self) -> Result<ModelGraph, AnnotatorError> {
        self.graph
            .validate()
            .map_err(|d| AnnotatorError::Invalid(crate::diag::render_all(&d)))?;
        Ok(self.graph)
    }
}

fn check_states(g: &ModelGraph, states: &[PortRef], p: &Matrix) -> Result<(), AnnotatorError> {
    let mut total = 0usize;
    for s in states {
        if g.block(&s.block).is_none() {
            return Err(AnnotatorError::UnknownSignal(s.block.clone(), s.port));
        }
        if !g.signal_is_state(s) {
            return Err(AnnotatorError::MissingStateMarker(s.block.clone(), s.port));
        }
        total += g.signal_dim(s).unwrap_or(1);
    }
    if total != p.rows() {
        return Err(AnnotatorError::StateDimensionMismatch {
            found: total,
            expected: p.rows(),
        });
    }
    Ok(())
}

/// Expand a stability spec: a quadratic form `V = x^T P x` over the state
/// wires feeding an assertion. Continuous graphs get a rate-checked V
/// (the simulator differences it); discrete graphs get an explicit
/// `V_k - V_{k-1}` ledger through a unit delay.
pub fn generate_stability_annotation(
    g: &ModelGraph,
    spec: &AnnotationSpec,
    cert: &Certificate,
) -> Result<Annotated, AnnotatorError> {
    let AnnotationSpec::Stability { states, .. } = spec else {
        return Err(AnnotatorError::Invalid(
            "spec kind must be stability".into(),
        ));
    };
    if !cert.is_verified() {
        return Err(AnnotatorError::UnverifiedCertificate);
    }
    let g = g
        .infer_dimensions()
        .map_err(|d| AnnotatorError::Invalid(crate::diag::render_all(&d)))?;
    check_states(&g, states, &cert.p)?;

    let mut b = Builder::new(&g, "stability");
    let qf = b.add(BlockKind::QuadraticForm { p: cert.p.clone() })?;
    for (i, s) in states.iter().enumerate() {
        b.wire(s.clone(), PortRef::new(qf.clone(), i), WireMarker::State);
    }

    if g.is_discrete() {
        let ud = b.add(BlockKind::UnitDelay { initial: vec![0.0] })?;
        let sum = b.add(BlockKind::Sum { signs: "+-".into() })?;
        let assert = b.add(BlockKind::AssertLE0 {
            tolerance: tol::scaled(tol::ASSERT_DEFAULT),
            check: AssertCheck::Value {
                warmup: 1,
                ref_block: Some(qf.clone()),
                ledger: false,
            },
        })?;
        b.wire(
            PortRef::new(qf.clone(), 0),
            PortRef::new(ud.clone(), 0),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(qf.clone(), 0),
            PortRef::new(sum.clone(), 0),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(ud, 0),
            PortRef::new(sum.clone(), 1),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(sum, 0),
            PortRef::new(assert, 0),
            WireMarker::Plain,
        );
    } else {
        let assert = b.add(BlockKind::AssertLE0 {
            tolerance: tol::scaled(tol::ASSERT_DEFAULT),
            check: AssertCheck::DecreaseRate,
        })?;
        b.wire(
            PortRef::new(qf, 0),
            PortRef::new(assert, 0),
            WireMarker::Plain,
        );
    }
    Ok(Annotated {
        graph: b.finish()?,
        warnings: vec![],
    })
}

fn resolve_output_signal(g: &ModelGraph, output: &str) -> Result<PortRef, AnnotatorError> {
    let block = g
        .block(output)
        .ok_or_else(|| AnnotatorError::MissingOutput(output.into()))?;
    match block.kind {
        BlockKind::Outport => g
            .inputs_of(output)
            .first()
            .map(|w| w.src.clone())
            .ok_or_else(|| AnnotatorError::MissingOutput(output.into())),
        _ => Ok(PortRef::new(output, 0)),
    }
}

/// Expand an L2-gain spec into the running dissipation ledger
/// `V' - alpha^2 w^T w + y^T y <= 0`. The gain level comes from the
/// certificate when both it and the spec carry one.
pub fn generate_l2_annotation(
    g: &ModelGraph,
    spec: &AnnotationSpec,
    cert: &Certificate,
) -> Result<Annotated, AnnotatorError> {
    let AnnotationSpec::L2gain {
        alpha,
        noise_input,
        output,
        states,
    } = spec
    else {
        return Err(AnnotatorError::Invalid("spec kind must be l2gain".into()));
    };
    if !cert.is_verified() || cert.kind != CertificateKind::L2Gain {
        return Err(AnnotatorError::UnverifiedCertificate);
    }
    let alpha = cert.alpha.or(*alpha).ok_or(AnnotatorError::MissingAlpha)?;
    let g = g
        .infer_dimensions()
        .map_err(|d| AnnotatorError::Invalid(crate::diag::render_all(&d)))?;
    check_states(&g, states, &cert.p)?;

    let w_block = g
        .block(noise_input)
        .ok_or_else(|| AnnotatorError::MissingNoiseInput(noise_input.clone()))?;
    if !matches!(
        w_block.kind,
        BlockKind::NoiseSource { .. } | BlockKind::Inport { .. }
    ) {
        return Err(AnnotatorError::MissingNoiseInput(noise_input.clone()));
    }
    let w_sig = PortRef::new(noise_input.clone(), 0);
    let y_sig = resolve_output_signal(&g, output)?;

    let mut warnings = Vec::new();
    let extra_inputs = g
        .blocks
        .iter()
        .filter(|b| {
            matches!(
                b.kind,
                BlockKind::Inport { .. } | BlockKind::NoiseSource { .. }
            ) && b.region == Region::Executable
                && b.id != *noise_input
        })
        .count();
    if extra_inputs > 0 {
        warnings.push(Diagnostic::new(
            "l2-extra-inputs",
            "model has inputs besides the named noise; the dissipation assertion assumes they stay zero",
        ));
    }

    let mut b = Builder::new(&g, "l2gain");
    let qf = b.add(BlockKind::QuadraticForm { p: cert.p.clone() })?;
    for (i, s) in states.iter().enumerate() {
        b.wire(s.clone(), PortRef::new(qf.clone(), i), WireMarker::State);
    }
    let doty = b.add(BlockKind::Product {
        mode: ProductMode::Dot,
    })?;
    b.wire(
        y_sig.clone(),
        PortRef::new(doty.clone(), 0),
        WireMarker::Plain,
    );
    b.wire(y_sig, PortRef::new(doty.clone(), 1), WireMarker::Plain);
    let dotw = b.add(BlockKind::Product {
        mode: ProductMode::Dot,
    })?;
    b.wire(
        w_sig.clone(),
        PortRef::new(dotw.clone(), 0),
        WireMarker::Plain,
    );
    b.wire(w_sig, PortRef::new(dotw.clone(), 1), WireMarker::Plain);

    if let Some(h) = g.sample_time {
        // Natively discrete: V_k - V_{k-1} + y^2_{k-1} - alpha^2 w^2_{k-1},
        // all at the step the transition consumed. The spec-level h is 1 in
        // pure discrete dissipation theory; scaling by it keeps the ledger
        // consistent with the continuous integral when h was a ZOH step.
        let _ = h;
        let gain_a2 = b.add(BlockKind::Gain {
            gain: Matrix::from_rows(&[vec![alpha * alpha]]).unwrap(),
            mode: GainMode::Elementwise,
        })?;
        b.wire(
            PortRef::new(dotw, 0),
            PortRef::new(gain_a2.clone(), 0),
            WireMarker::Plain,
        );
        let ud_v = b.add(BlockKind::UnitDelay { initial: vec![0.0] })?;
        let ud_y2 = b.add(BlockKind::UnitDelay { initial: vec![0.0] })?;
        let ud_w2 = b.add(BlockKind::UnitDelay { initial: vec![0.0] })?;
        b.wire(
            PortRef::new(qf.clone(), 0),
            PortRef::new(ud_v.clone(), 0),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(doty, 0),
            PortRef::new(ud_y2.clone(), 0),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(gain_a2, 0),
            PortRef::new(ud_w2.clone(), 0),
            WireMarker::Plain,
        );
        let sum = b.add(BlockKind::Sum {
            signs: "+-+-".into(),
        })?;
        b.wire(
            PortRef::new(qf.clone(), 0),
            PortRef::new(sum.clone(), 0),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(ud_v, 0),
            PortRef::new(sum.clone(), 1),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(ud_y2, 0),
            PortRef::new(sum.clone(), 2),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(ud_w2, 0),
            PortRef::new(sum.clone(), 3),
            WireMarker::Plain,
        );
        let assert = b.add(BlockKind::AssertLE0 {
            tolerance: tol::scaled(tol::ASSERT_DEFAULT),
            check: AssertCheck::Value {
                warmup: 1,
                ref_block: Some(qf),
                ledger: true,
            },
        })?;
        b.wire(
            PortRef::new(sum, 0),
            PortRef::new(assert, 0),
            WireMarker::Plain,
        );
    } else {
        // Continuous: Sum(+-+) of (V, alpha^2 w^T w, y^T y); the simulator
        // finite-differences the V slot.
        let gain_a2 = b.add(BlockKind::Gain {
            gain: Matrix::from_rows(&[vec![alpha * alpha]]).unwrap(),
            mode: GainMode::Elementwise,
        })?;
        b.wire(
            PortRef::new(dotw, 0),
            PortRef::new(gain_a2.clone(), 0),
            WireMarker::Plain,
        );
        let sum = b.add(BlockKind::Sum {
            signs: "+-+".into(),
        })?;
        b.wire(
            PortRef::new(qf.clone(), 0),
            PortRef::new(sum.clone(), 0),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(gain_a2.clone(), 0),
            PortRef::new(sum.clone(), 1),
            WireMarker::Plain,
        );
        b.wire(
            PortRef::new(doty.clone(), 0),
            PortRef::new(sum.clone(), 2),
            WireMarker::Plain,
        );
        let assert = b.add(BlockKind::AssertLE0 {
            tolerance: tol::scaled(tol::ASSERT_DEFAULT),
            check: AssertCheck::DissipationRate {
                v_block: qf,
                y2_block: doty,
                supply_block: gain_a2,
            },
        })?;
        b.wire(
            PortRef::new(sum, 0),
            PortRef::new(assert, 0),
            WireMarker::Plain,
        );
    }
    Ok(Annotated {
        graph: b.finish()?,
        warnings,
    })
}

/// Discrete L2 ledger for a ZOH-discretized model: the one-step output
/// energy is the exact Gramian quadratic form over `[x; w]`, so the
/// inequality `V_k - V_{k-1} + q_{k-1} - alpha^2 h w^2_{k-1} <= 0` is
/// implied by the verified continuous certificate.
pub fn generate_l2_annotation_zoh(
    g: &ModelGraph,
    states: &[PortRef],
    w_input: &str,
    p: &Matrix,
    alpha: f64,
    output_energy: &Matrix,
    h: f64,
) -> Result<Annotated, AnnotatorError> {
    let g = g
        .infer_dimensions()
        .map_err(|d| AnnotatorError::Invalid(crate::diag::render_all(&d)))?;
    check_states(&g, states, p)?;
    if g.block(w_input).is_none() {
        return Err(AnnotatorError::MissingNoiseInput(w_input.into()));
    }
    let w_sig = PortRef::new(w_input.to_string(), 0);

    let mut b = Builder::new(&g, "l2gain");
    let qf = b.add(BlockKind::QuadraticForm { p: p.clone() })?;
    for (i, s) in states.iter().enumerate() {
        b.wire(s.clone(), PortRef::new(qf.clone(), i), WireMarker::State);
    }
    // q = [x; w]^T G_h [x; w]
    let qf_energy = b.add(BlockKind::QuadraticForm {
        p: output_energy.clone(),
    })?;
    for (i, s) in states.iter().enumerate() {
        b.wire(
            s.clone(),
            PortRef::new(qf_energy.clone(), i),
            WireMarker::State,
        );
    }
    b.wire(
        w_sig.clone(),
        PortRef::new(qf_energy.clone(), states.len()),
        WireMarker::Plain,
    );

    let dotw = b.add(BlockKind::Product {
        mode: ProductMode::Dot,
    })?;
    b.wire(
        w_sig.clone(),
        PortRef::new(dotw.clone(), 0),
        WireMarker::Plain,
    );
    b.wire(w_sig, PortRef::new(dotw.clone(), 1), WireMarker::Plain);
    let gain_a2h = b.add(BlockKind::Gain {
        gain: Matrix::from_rows(&[vec![alpha * alpha * h]]).unwrap(),
        mode: GainMode::Elementwise,
    })?;
    b.wire(
        PortRef::new(dotw, 0),
        PortRef::new(gain_a2h.clone(), 0),
        WireMarker::Plain,
    );

    let ud_v = b.add(BlockKind::UnitDelay { initial: vec![0.0] })?;
    let ud_q = b.add(BlockKind::UnitDelay { initial: vec![0.0] })?;
    let ud_w2 = b.add(BlockKind::UnitDelay { initial: vec![0.0] })?;
    b.wire(
        PortRef::new(qf.clone(), 0),
        PortRef::new(ud_v.clone(), 0),
        WireMarker::Plain,
    );
    b.wire(
        PortRef::new(qf_energy, 0),
        PortRef::new(ud_q.clone(), 0),
        WireMarker::Plain,
    );
    b.wire(
        PortRef::new(gain_a2h, 0),
        PortRef::new(ud_w2.clone(), 0),
        WireMarker::Plain,
    );

    let sum = b.add(BlockKind::Sum {
        signs: "+-+-".into(),
    })?;
    b.wire(
        PortRef::new(qf.clone(), 0),
        PortRef::new(sum.clone(), 0),
        WireMarker::Plain,
    );
    b.wire(
        PortRef::new(ud_v, 0),
        PortRef::new(sum.clone(), 1),
        WireMarker::Plain,
    );
    b.wire(
        PortRef::new(ud_q, 0),
        PortRef::new(sum.clone(), 2),
        WireMarker::Plain,
    );
    b.wire(
        PortRef::new(ud_w2, 0),
        PortRef::new(sum.clone(), 3),
        WireMarker::Plain,
    );
    let assert = b.add(BlockKind::AssertLE0 {
        tolerance: tol::scaled(tol::ASSERT_DEFAULT),
        check: AssertCheck::Value {
            warmup: 1,
            ref_block: Some(qf),
            ledger: true,
        },
    })?;
    b.wire(
        PortRef::new(sum, 0),
        PortRef::new(assert, 0),
        WireMarker::Plain,
    );
    Ok(Annotated {
        graph: b.finish()?,
        warnings: vec![],
    })
}

/// Expand an L1 transient performance bound: running max of the
/// prediction-error norm against `sqrt(theta_max / (lambda_min(P) * Gamma))`,
/// computed at generation time.
pub fn generate_l1_bound_annotation(
    g: &ModelGraph,
    spec: &AnnotationSpec,
) -> Result<Annotated, AnnotatorError> {
    let AnnotationSpec::L1PerfBound {
        theta_max,
        gamma_adapt,
        p,
        error_wire,
    } = spec
    else {
        return Err(AnnotatorError::Invalid(
            "spec kind must be l1_perf_bound".into(),
        ));
    };
    cholesky(p).map_err(|_| AnnotatorError::NotPositiveDefinite)?;
    if *gamma_adapt <= 0.0 || *theta_max < 0.0 {
        return Err(AnnotatorError::Invalid(
            "theta_max must be nonnegative and Gamma positive".into(),
        ));
    }
    let g = g
        .infer_dimensions()
        .map_err(|d| AnnotatorError::Invalid(crate::diag::render_all(&d)))?;
    if g.block(&error_wire.block).is_none() {
        return Err(AnnotatorError::UnknownSignal(
            error_wire.block.clone(),
            error_wire.port,
        ));
    }

    let lambda_min = min_eig_symmetric(p).map_err(|_| AnnotatorError::NotPositiveDefinite)?;
    let bound = (theta_max / (lambda_min * gamma_adapt)).sqrt();
    let mut warnings = Vec::new();
    if *theta_max == 0.0 {
        warnings.push(Diagnostic::new(
            "degenerate-bound",
            "theta_max = 0 asserts the prediction error is identically zero",
        ));
    }

    let mut b = Builder::new(&g, "l1perf");
    let runmax = b.add(BlockKind::RunningMax)?;
    b.wire(
        error_wire.clone(),
        PortRef::new(runmax.clone(), 0),
        WireMarker::State,
    );
    let bound_const = b.add(BlockKind::Constant { value: vec![bound] })?;
    let sum = b.add(BlockKind::Sum { signs: "+-".into() })?;
    b.wire(
        PortRef::new(runmax, 0),
        PortRef::new(sum.clone(), 0),
        WireMarker::Plain,
    );
    b.wire(
        PortRef::new(bound_const.clone(), 0),
        PortRef::new(sum.clone(), 1),
        WireMarker::Plain,
    );
    let assert = b.add(BlockKind::AssertLE0 {
        tolerance: tol::scaled(tol::ASSERT_DEFAULT),
        check: AssertCheck::Value {
            warmup: 0,
            ref_block: Some(bound_const),
            ledger: false,
        },
    })?;
    b.wire(
        PortRef::new(sum, 0),
        PortRef::new(assert, 0),
        WireMarker::Plain,
    );
    Ok(Annotated {
        graph: b.finish()?,
        warnings,
    })
}

/// Graft a user-authored annotation graph onto the model, splicing its
/// boundary inports to the named executable signals.
pub fn attach_manual_annotation(
    g: &ModelGraph,
    spec: &AnnotationSpec,
) -> Result<Annotated, AnnotatorError> {
    let AnnotationSpec::Manual {
        graph: manual,
        bindings,
    } = spec
    else {
        return Err(AnnotatorError::Invalid("spec kind must be manual".into()));
    };

    for b in &manual.blocks {
        if b.region != Region::Annotation {
            return Err(AnnotatorError::RegionViolation(format!(
                "block `{}` is not in the annotation region",
                b.id
            )));
        }
        if g.block(&b.id).is_some() {
            return Err(AnnotatorError::IdCollision(b.id.clone()));
        }
    }
    // Every terminal block must be an assertion: the graph exists to check.
    for b in &manual.blocks {
        let has_out = manual.wires.iter().any(|w| w.src.block == b.id);
        if !has_out && b.kind.has_output() && !matches!(b.kind, BlockKind::Inport { .. }) {
            return Err(AnnotatorError::Invalid(format!(
                "manual annotation block `{}` dangles; outputs must terminate in assert_le0",
                b.id
            )));
        }
        if !has_out && !b.kind.has_output() && !matches!(b.kind, BlockKind::AssertLE0 { .. }) {
            return Err(AnnotatorError::Invalid(format!(
                "manual annotation sink `{}` must be an assert_le0 block",
                b.id
            )));
        }
    }

    let mut out = g.clone();
    for b in &manual.blocks {
        if let BlockKind::Inport { .. } = b.kind {
            let target = bindings
                .get(&b.id)
                .ok_or_else(|| AnnotatorError::UnboundInput(b.id.clone()))?;
            if g.block(&target.block).is_none() {
                return Err(AnnotatorError::UnknownSignal(
                    target.block.clone(),
                    target.port,
                ));
            }
            continue; // replaced by direct wires below
        }
        out.blocks.push(b.clone());
    }
    let inport_ids: BTreeMap<&str, &PortRef> = manual
        .blocks
        .iter()
        .filter(|b| matches!(b.kind, BlockKind::Inport { .. }))
        .map(|b| (b.id.as_str(), &bindings[&b.id]))
        .collect();
    for w in &manual.wires {
        let mut wire = w.clone();
        if let Some(target) = inport_ids.get(w.src.block.as_str()) {
            wire.src = (*target).clone();
        }
        out.wires.push(wire);
    }
    out.validate()
        .map_err(|d| AnnotatorError::Invalid(crate::diag::render_all(&d)))?;
    Ok(Annotated {
        graph: out,
        warnings: vec![],
    })
}

/// Strip all annotation-region content, leaving the executable model.
pub fn strip_annotations(g: &ModelGraph) -> ModelGraph {
    g.subgraph(Region::Executable)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{solve_lyapunov_continuous, CertStatus};

    fn closed_di(noise: NoiseSpec) -> ModelGraph {
        let mut g = ModelGraph::default();
        let exec = |id: &str, kind: BlockKind| Block {
            id: id.into(),
            kind,
            region: Region::Executable,
        };
        g.blocks = vec![
            exec(
                "w",
                BlockKind::NoiseSource {
                    spec: noise,
                    dim: 1,
                },
            ),
            exec("x1_int", BlockKind::Integrator { initial: vec![1.0] }),
            exec("x2_int", BlockKind::Integrator { initial: vec![0.0] }),
            exec(
                "sum_u",
                BlockKind::Sum {
                    signs: "--+".into(),
                },
            ),
            exec("y", BlockKind::Outport),
        ];
        let wire = |src: (&str, usize), dst: (&str, usize), marker| Wire {
            src: PortRef::new(src.0, src.1),
            dst: PortRef::new(dst.0, dst.1),
            marker,
            dim: None,
        };
        g.wires = vec![
            wire(("x2_int", 0), ("x1_int", 0), WireMarker::State),
            wire(("x1_int", 0), ("sum_u", 0), WireMarker::State),
            wire(("x2_int", 0), ("sum_u", 1), WireMarker::State),
            wire(("w", 0), ("sum_u", 2), WireMarker::Plain),
            wire(("sum_u", 0), ("x2_int", 0), WireMarker::Plain),
            wire(("x1_int", 0), ("y", 0), WireMarker::State),
        ];
        g
    }

    fn di_states() -> Vec<PortRef> {
        vec![PortRef::new("x1_int", 0), PortRef::new("x2_int", 0)]
    }

    fn di_cert() -> Certificate {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![-1.0, -1.0]]).unwrap();
        solve_lyapunov_continuous(&a, &Matrix::identity(2)).unwrap()
    }

    #[test]
    fn stability_annotation_block_count() {
        let g = closed_di(NoiseSpec::zero());
        let spec = AnnotationSpec::Stability {
            p: None,
            noise: Some(NoiseSpec::zero()),
            states: di_states(),
        };
        let out = generate_stability_annotation(&g, &spec, &di_cert())
            .unwrap()
            .graph;
        let added: Vec<_> = out
            .blocks
            .iter()
            .filter(|b| b.id.starts_with("anno."))
            .collect();
        assert_eq!(added.len(), 2); // QuadraticForm + AssertLE0 (continuous)
        assert!(added
            .iter()
            .any(|b| matches!(b.kind, BlockKind::QuadraticForm { .. })));
        assert!(added
            .iter()
            .any(|b| matches!(b.kind, BlockKind::AssertLE0 { .. })));
        // region isolation
        assert!(out.subgraph(Region::Executable).structurally_equal(&g));
    }

    #[test]
    fn refuted_certificate_rejected() {
        let g = closed_di(NoiseSpec::zero());
        let spec = AnnotationSpec::Stability {
            p: None,
            noise: None,
            states: di_states(),
        };
        let mut cert = di_cert();
        cert.status = CertStatus::Refuted;
        assert!(matches!(
            generate_stability_annotation(&g, &spec, &cert),
            Err(AnnotatorError::UnverifiedCertificate)
        ));
    }

    #[test]
    fn missing_state_marker_rejected() {
        let mut g = closed_di(NoiseSpec::zero());
        for w in &mut g.wires {
            w.marker = WireMarker::Plain;
        }
        let spec = AnnotationSpec::Stability {
            p: None,
            noise: None,
            states: di_states(),
        };
        assert!(matches!(
            generate_stability_annotation(&g, &spec, &di_cert()),
            Err(AnnotatorError::MissingStateMarker(..))
        ));
    }

    #[test]
    fn l2_annotation_structure() {
        let g = closed_di(NoiseSpec::unit_peak());
        let cert = Certificate {
            alpha: Some(1.2),
            ..di_cert()
        };
        let cert = Certificate {
            kind: CertificateKind::L2Gain,
            ..cert
        };
        let spec = AnnotationSpec::L2gain {
            alpha: Some(99.0), // certificate takes precedence
            noise_input: "w".into(),
            output: "y".into(),
            states: di_states(),
        };
        let out = generate_l2_annotation(&g, &spec, &cert).unwrap().graph;
        let added: Vec<_> = out
            .blocks
            .iter()
            .filter(|b| b.id.starts_with("anno."))
            .collect();
        // QuadraticForm, two dot products, Gain(alpha^2), Sum(+-+), AssertLE0
        assert_eq!(added.len(), 6);
        let gain = added
            .iter()
            .find_map(|b| match &b.kind {
                BlockKind::Gain { gain, .. } => Some(gain[(0, 0)]),
                _ => None,
            })
            .unwrap();
        assert!(
            (gain - 1.2f64 * 1.2).abs() < 1e-15,
            "alpha from cert, not spec"
        );
        let sum_signs = added
            .iter()
            .find_map(|b| match &b.kind {
                BlockKind::Sum { signs } => Some(signs.clone()),
                _ => None,
            })
            .unwrap();
        assert_eq!(sum_signs, "+-+");
        assert!(out.subgraph(Region::Executable).structurally_equal(&g));
    }

    #[test]
    fn l2_missing_noise_input() {
        let g = closed_di(NoiseSpec::unit_peak());
        let cert = Certificate {
            kind: CertificateKind::L2Gain,
            alpha: Some(1.0),
            ..di_cert()
        };
        let spec = AnnotationSpec::L2gain {
            alpha: None,
            noise_input: "nope".into(),
            output: "y".into(),
            states: di_states(),
        };
        assert!(matches!(
            generate_l2_annotation(&g, &spec, &cert),
            Err(AnnotatorError::MissingNoiseInput(_))
        ));
    }

    #[test]
    fn l1_bound_constants() {
        let g = closed_di(NoiseSpec::unit_peak());
        let spec = AnnotationSpec::L1PerfBound {
            theta_max: 4.0,
            gamma_adapt: 1.0,
            p: Matrix::identity(2),
            error_wire: PortRef::new("x1_int", 0),
        };
        let out = generate_l1_bound_annotation(&g, &spec).unwrap().graph;
        let bound = out
            .blocks
            .iter()
            .find_map(|b| match &b.kind {
                BlockKind::Constant { value } => Some(value[0]),
                _ => None,
            })
            .unwrap();
        assert!((bound - 2.0).abs() < 1e-12);

        let spec2 = AnnotationSpec::L1PerfBound {
            theta_max: 1.0,
            gamma_adapt: 4.0,
            p: Matrix::diag(&[4.0, 1.0]),
            error_wire: PortRef::new("x1_int", 0),
        };
        let out2 = generate_l1_bound_annotation(&g, &spec2).unwrap().graph;
        let bound2 = out2
            .blocks
            .iter()
            .find_map(|b| match &b.kind {
                BlockKind::Constant { value } => Some(value[0]),
                _ => None,
            })
            .unwrap();
        assert!((bound2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn l1_theta_zero_warns() {
        let g = closed_di(NoiseSpec::unit_peak());
        let spec = AnnotationSpec::L1PerfBound {
            theta_max: 0.0,
            gamma_adapt: 1.0,
            p: Matrix::identity(2),
            error_wire: PortRef::new("x1_int", 0),
        };
        let out = generate_l1_bound_annotation(&g, &spec).unwrap();
        assert!(!out.warnings.is_empty());
    }

    #[test]
    fn manual_unbound_input() {
        let g = closed_di(NoiseSpec::zero());
        let manual = ModelGraph {
            blocks: vec![
                Block {
                    id: "psi".into(),
                    kind: BlockKind::Inport { dim: 1 },
                    region: Region::Annotation,
                },
                Block {
                    id: "va".into(),
                    kind: BlockKind::AssertLE0 {
                        tolerance: 1e-9,
                        check: AssertCheck::default(),
                    },
                    region: Region::Annotation,
                },
            ],
            wires: vec![Wire {
                src: PortRef::new("psi", 0),
                dst: PortRef::new("va", 0),
                marker: WireMarker::Plain,
                dim: None,
            }],
            ..Default::default()
        };
        let spec = AnnotationSpec::Manual {
            graph: manual,
            bindings: BTreeMap::new(),
        };
        assert!(matches!(
            attach_manual_annotation(&g, &spec),
            Err(AnnotatorError::UnboundInput(name)) if name == "psi"
        ));
    }

    #[test]
    fn manual_executable_region_rejected() {
        let g = closed_di(NoiseSpec::zero());
        let manual = ModelGraph {
            blocks: vec![Block {
                id: "bad".into(),
                kind: BlockKind::Gain {
                    gain: Matrix::identity(1),
                    mode: GainMode::Elementwise,
                },
                region: Region::Executable,
            }],
            wires: vec![],
            ..Default::default()
        };
        let spec = AnnotationSpec::Manual {
            graph: manual,
            bindings: BTreeMap::new(),
        };
        assert!(matches!(
            attach_manual_annotation(&g, &spec),
            Err(AnnotatorError::RegionViolation(_))
        ));
    }
}
