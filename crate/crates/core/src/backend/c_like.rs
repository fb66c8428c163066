//! The C-style code target: a state struct, an init routine, and a step
//! routine, with contract comments (`/*@ ... */`) carrying the quadratic
//! invariant, the per-step decrease obligation, and the dissipation
//! obligation. Machine-greppable keys: `invariant:`, `decrease:`,
//! `dissipation:`.

use crate::certificates::CertificateKind;
use crate::model_ir::{AssertCheck, Block, BlockKind, ModelGraph, Region};

use super::emit::{block_exprs, build, fmt17, initial_of, matrix_text, sanitize, update_exprs};
use super::{BackendError, DiscretizationReport};

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
    let mut out = String::new();
    out.push_str(&format!(
        "/* {name}: generated discrete-time step code */\n"
    ));
    out.push_str(&format!("/* sample time: h = {} s */\n", fmt17(pm.h)));
    let input_list: Vec<String> = pm
        .inputs
        .iter()
        .flat_map(|(id, w)| {
            (0..*w).map(move |c| {
                if *w == 1 {
                    id.clone()
                } else {
                    format!("{id}[{c}]")
                }
            })
        })
        .collect();
    let output_list: Vec<String> = pm
        .outputs
        .iter()
        .flat_map(|(id, w)| {
            (0..*w).map(move |c| {
                if *w == 1 {
                    id.clone()
                } else {
                    format!("{id}[{c}]")
                }
            })
        })
        .collect();
    out.push_str(&format!(
        "/* inputs (flattened, sorted by block id): {} */\n",
        input_list.join(", ")
    ));
    out.push_str(&format!("/* outputs: {} */\n\n", output_list.join(", ")));

    // State struct.
    out.push_str("typedef struct {\n");
    for b in &pm.states {
        for (i, _) in initial_of(b).iter().enumerate() {
            out.push_str(&format!("    double {};\n", pm.state_slot(&b.id, i)));
        }
    }
    out.push_str(&format!("}} {name}_state;\n\n"));

    // Certificate contracts from the discretization report.
    if let Some(report) = report {
        for outcome in &report.annotations {
            let Some(cert) = &outcome.discrete_cert else {
                out.push_str(&format!(
                    "/*@ note: {} annotation carried as runtime check only (no discrete certificate) */\n",
                    outcome.kind
                ));
                continue;
            };
            out.push_str(&format!(
                "/*@ certificate: {} P = {}{} */\n",
                cert.kind.wire_name(),
                matrix_text(&cert.p),
                cert.alpha
                    .map(|a| format!(" alpha = {}", fmt17(a)))
                    .unwrap_or_default(),
            ));
            if cert.kind == CertificateKind::LyapunovDiscrete {
                // Ellipsoid level from the declared initial condition.
                let x0: Vec<f64> = pm
                    .states
                    .iter()
                    .flat_map(|b| initial_of(b).iter().copied())
                    .collect();
                if x0.len() == cert.p.rows() {
                    let v0 = cert.p.quad_form(&x0);
                    if v0 > 0.0 {
                        let level = v0 * (1.0 + 1e-9);
                        out.push_str(&format!("/*@ invariant: x_P_x <= {} */\n", fmt17(level)));
                    } else {
                        out.push_str(
                            "/*@ invariant: x_P_x <= X_P_X_LEVEL (initial state is the origin; instantiate the level from the deployed initial condition) */\n",
                        );
                    }
                }
                out.push_str(
                    "/*@ decrease: V(x_next) - V(x) <= 1e-9 * (1 + V(x)) with V(x) = x_P_x */\n",
                );
            }
            if cert.kind == CertificateKind::L2Gain {
                out.push_str(&format!(
                    "/*@ dissipation: V(x_next) - V(x) + q(x, w) - alpha^2 * h * w_T_w <= 0, q = one-step output energy, h = {} */\n",
                    fmt17(report.h)
                ));
            }
        }
    }

    // Annotation-region assertion comments (these lines, and only comment
    // lines, change when annotations are stripped).
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
                "/*@ {key}: runtime assertion `{}` <= 0 (tolerance {}) */\n",
                a.id,
                fmt17(*tolerance)
            ));
        }
    }
    out.push('\n');

    // Init.
    out.push_str(&format!("void {name}_init({name}_state *s) {{\n"));
    for b in &pm.states {
        for (i, v) in initial_of(b).iter().enumerate() {
            out.push_str(&format!(
                "    s->{} = {};\n",
                pm.state_slot(&b.id, i),
                fmt17(*v)
            ));
        }
    }
    out.push_str("}\n\n");

    // Step.
    let m: usize = pm.inputs.iter().map(|(_, w)| w).sum();
    let p: usize = pm.outputs.iter().map(|(_, w)| w).sum();
    out.push_str(&format!(
        "void {name}_step({name}_state *s, const double u[{m}], double y[{p}]) {{\n"
    ));
    // Unpack inputs.
    let mut slot = 0usize;
    for (id, w) in &pm.inputs {
        for c in 0..*w {
            out.push_str(&format!(
                "    const double {} = u[{slot}];\n",
                pm.var(id, c)
            ));
            slot += 1;
        }
    }
    // Combinational pass in evaluation order.
    let state_read = |id: &str, comp: usize| format!("s->x_{}_{comp}", sanitize(id));
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
                out.push_str(&format!("    const double {} = {e};\n", pm.var(&b.id, c)));
            }
        }
    }
    // Outputs.
    let mut slot = 0usize;
    for (id, w) in &pm.outputs {
        let feeds = pm.input_feeds(id);
        for c in 0..*w {
            out.push_str(&format!("    y[{slot}] = {};\n", pm.var(&feeds[0].0, c)));
            slot += 1;
        }
    }
    // State update: compute all next values, then commit.
    for b in &pm.states {
        for (i, e) in update_exprs(&pm, b, &state_read).iter().enumerate() {
            out.push_str(&format!(
                "    const double nx_{}_{i} = {e};\n",
                sanitize(&b.id)
            ));
        }
    }
    for b in &pm.states {
        for i in 0..initial_of(b).len() {
            out.push_str(&format!(
                "    s->{} = nx_{}_{i};\n",
                pm.state_slot(&b.id, i),
                sanitize(&b.id)
            ));
        }
    }
    out.push_str("}\n");
    Ok(out)
}
