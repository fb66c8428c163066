//! The dataflow code target: a Lustre-style node with flat equations per
//! signal, `pre`-style delays, and `--@` contract comments. The emitted text
//! is re-parseable and executable by the simcheck mini-interpreter, which is
//! how code generation is cross-checked against diagram simulation.

use crate::certificates::CertificateKind;
use crate::model_ir::{AssertCheck, Block, BlockKind, ModelGraph, Region};

use super::emit::{block_exprs, build, fmt17, initial_of, matrix_text, sanitize, update_exprs};
use super::{BackendError, DiscretizationReport};

/// Public name mangling of the dataflow target (tests use it to map block
/// ids onto node variable names).
pub fn sanitize_ident(id: &str) -> String {
    sanitize(id)
}

pub(crate) fn emit(
    g: &ModelGraph,
    report: Option<&DiscretizationReport>,
) -> Result<String, BackendError> {
    let pm = build(g)?;
    let name = sanitize(
        &g.metadata
            .get("name")
            .cloned()
            .unwrap_or_else(|| "model".into()),
    );

    let decl = |items: &[(String, usize)], pm: &super::emit::ProgramModel| -> String {
        items
            .iter()
            .flat_map(|(id, w)| (0..*w).map(move |c| format!("{} : real", pm.var(id, c))))
            .collect::<Vec<_>>()
            .join("; ")
    };

    let mut out = String::new();
    out.push_str(&format!(
        "node {name} ({}) returns ({});\n",
        decl(&pm.inputs, &pm),
        decl(&pm.outputs, &pm)
    ));
    out.push_str(&format!("--@ sample_time: {}\n", fmt17(pm.h)));

    if let Some(report) = report {
        for outcome in &report.annotations {
            match &outcome.discrete_cert {
                Some(cert) => out.push_str(&format!(
                    "--@ certificate: {} P = {}{}\n",
                    cert.kind.wire_name(),
                    matrix_text(&cert.p),
                    cert.alpha
                        .map(|a| format!(" alpha = {}", fmt17(a)))
                        .unwrap_or_default(),
                )),
                None => out.push_str(&format!(
                    "--@ note: {} annotation carried as runtime check only\n",
                    outcome.kind
                )),
            }
            if let Some(cert) = &outcome.discrete_cert {
                match cert.kind {
                    CertificateKind::LyapunovDiscrete => out.push_str(
                        "--@ ensures decrease: V(x_next) - V(x) <= 1e-9 * (1 + V(x))\n",
                    ),
                    CertificateKind::L2Gain => out.push_str(
                        "--@ ensures dissipation: V(x_next) - V(x) + q(x, w) - alpha^2 * h * w_T_w <= 0\n",
                    ),
                    CertificateKind::LyapunovContinuous => {}
                }
            }
        }
    }
    let asserts: Vec<&Block> = g
        .blocks
        .iter()
        .filter(|b| b.region == Region::Annotation && matches!(b.kind, BlockKind::AssertLE0 { .. }))
        .collect();
    for a in &asserts {
        if let BlockKind::AssertLE0 { tolerance, check } = &a.kind {
            let key = match check {
                AssertCheck::DecreaseRate => "decrease",
                AssertCheck::DissipationRate { .. } => "dissipation",
                AssertCheck::Value { .. } => "invariant",
            };
            out.push_str(&format!(
                "--@ ensures {key}: runtime assertion `{}` <= 0 (tolerance {})\n",
                a.id,
                fmt17(*tolerance)
            ));
        }
    }

    // Locals: every non-IO executable signal plus state slots.
    let mut locals: Vec<String> = Vec::new();
    for b in &pm.order {
        match &b.kind {
            BlockKind::Inport { .. }
            | BlockKind::NoiseSource { .. }
            | BlockKind::Outport
            | BlockKind::Scope => continue,
            _ => {}
        }
        for c in 0..pm.width(&b.id) {
            locals.push(pm.var(&b.id, c));
        }
    }
    for b in &pm.states {
        for i in 0..initial_of(b).len() {
            locals.push(format!("x_{}_{i}", sanitize(&b.id)));
            locals.push(format!("nx_{}_{i}", sanitize(&b.id)));
        }
    }
    // Output vars that are not already locals (outports copy their feed).
    if !locals.is_empty() {
        out.push_str(&format!("var {} : real;\n", locals.join(", ")));
    }
    out.push_str("let\n");

    let state_read = |id: &str, comp: usize| format!("x_{}_{comp}", sanitize(id));
    // State slots first: init -> pre next.
    for b in &pm.states {
        for (i, v) in initial_of(b).iter().enumerate() {
            out.push_str(&format!(
                "  x_{0}_{i} = {1} -> pre nx_{0}_{i};\n",
                sanitize(&b.id),
                fmt17(*v)
            ));
        }
    }
    // Combinational equations in evaluation order.
    for b in &pm.order {
        match &b.kind {
            BlockKind::Inport { .. }
            | BlockKind::NoiseSource { .. }
            | BlockKind::Outport
            | BlockKind::Scope => continue,
            _ => {}
        }
        if let Some(exprs) = block_exprs(&pm, b, &state_read) {
            for (c, e) in exprs.iter().enumerate() {
                out.push_str(&format!("  {} = {e};\n", pm.var(&b.id, c)));
            }
        }
    }
    // Outputs.
    for (id, w) in &pm.outputs {
        let feeds = pm.input_feeds(id);
        for c in 0..*w {
            out.push_str(&format!(
                "  {} = {};\n",
                pm.var(id, c),
                pm.var(&feeds[0].0, c)
            ));
        }
    }
    // Next-state equations.
    for b in &pm.states {
        for (i, e) in update_exprs(&pm, b, &state_read).iter().enumerate() {
            out.push_str(&format!("  nx_{}_{i} = {e};\n", sanitize(&b.id)));
        }
    }
    out.push_str("tel\n");
    Ok(out)
}
