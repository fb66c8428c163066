use std::collections::BTreeMap;

use crate::diag::Diagnostic;

use super::{Block, BlockKind, GainMode, ModelGraph, PortRef, ProductMode};

/// Forward-propagate signal dimensions from sources (inports, constants,
/// initial conditions) through the polymorphic blocks and fill every wire's
/// `dim`. Polymorphism rules: a 1x1 elementwise gain scales any width, a
/// matrix gain maps per its shape, sums and elementwise products need equal
/// widths, dot products map two n-vectors to a scalar, and quadratic forms
/// concatenate their input ports to the order of P.
pub fn infer_dimensions(g: &ModelGraph) -> Result<ModelGraph, Vec<Diagnostic>> {
    let mut dims: BTreeMap<PortRef, usize> = BTreeMap::new();
    let mut diags: Vec<Diagnostic> = Vec::new();

    // Source dims.
    for b in &g.blocks {
        if let Some(d) = source_dim(b) {
            dims.insert(PortRef::new(b.id.clone(), 0), d);
        }
    }

    // Fixpoint over blocks whose inputs are all resolved.
    let mut changed = true;
    while changed {
        changed = false;
        for b in &g.blocks {
            if !b.kind.has_output() || dims.contains_key(&PortRef::new(b.id.clone(), 0)) {
                continue;
            }
            let ins = g.inputs_of(&b.id);
            let in_dims: Option<Vec<usize>> =
                ins.iter().map(|w| dims.get(&w.src).copied()).collect();
            let Some(in_dims) = in_dims else { continue };
            match output_dim(b, &in_dims, &mut diags) {
                Some(d) => {
                    dims.insert(PortRef::new(b.id.clone(), 0), d);
                    changed = true;
                }
                None => {
                    // A diagnostic was recorded, or genuinely unresolvable:
                    // either way stop revisiting this block.
                }
            }
        }
        if !diags.is_empty() {
            return Err(diags);
        }
    }

    // Sink-side constraints (blocks without outputs) and per-input checks
    // that do not affect the output dim.
    for b in &g.blocks {
        let ins = g.inputs_of(&b.id);
        let in_dims: Option<Vec<usize>> = ins.iter().map(|w| dims.get(&w.src).copied()).collect();
        let Some(in_dims) = in_dims else { continue };
        check_sink(b, &in_dims, &mut diags);
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    let mut out = g.clone();
    for w in &mut out.wires {
        match dims.get(&w.src) {
            Some(&d) => w.dim = Some(d),
            None => diags.push(
                Diagnostic::new(
                    "unresolved-dim",
                    format!(
                        "dimension of signal `{}:{}` cannot be determined",
                        w.src.block, w.src.port
                    ),
                )
                .with_block(&w.src.block),
            ),
        }
    }
    if diags.is_empty() {
        Ok(out)
    } else {
        Err(diags)
    }
}

fn source_dim(b: &Block) -> Option<usize> {
    match &b.kind {
        BlockKind::Inport { dim } | BlockKind::NoiseSource { dim, .. } => Some(*dim),
        BlockKind::Constant { value } => Some(value.len()),
        BlockKind::Integrator { initial } | BlockKind::UnitDelay { initial } => Some(initial.len()),
        BlockKind::StateSpace { c, .. } => Some(c.rows()),
        _ => None,
    }
}

fn output_dim(b: &Block, ins: &[usize], diags: &mut Vec<Diagnostic>) -> Option<usize> {
    let mismatch = |msg: String| Diagnostic::new("dimension-mismatch", msg).with_block(&b.id);
    match &b.kind {
        BlockKind::Gain { gain, mode } => match mode {
            GainMode::Elementwise => {
                // A 1x1 gain broadcasts over any width; a column gain must
                // match the input width exactly.
                let scalar = gain.rows() == 1 && gain.cols() == 1;
                if scalar || (gain.cols() == 1 && gain.rows() == ins[0]) {
                    Some(ins[0])
                } else {
                    diags.push(mismatch(format!(
                        "elementwise gain of shape {}x{} cannot scale a {}-vector",
                        gain.rows(),
                        gain.cols(),
                        ins[0]
                    )));
                    None
                }
            }
            GainMode::Matrix => {
                if gain.cols() == ins[0] {
                    Some(gain.rows())
                } else {
                    diags.push(mismatch(format!(
                        "matrix gain is {}x{} but input has dim {}",
                        gain.rows(),
                        gain.cols(),
                        ins[0]
                    )));
                    None
                }
            }
        },
        BlockKind::Sum { .. } => {
            if ins.windows(2).all(|w| w[0] == w[1]) {
                Some(ins[0])
            } else {
                diags.push(mismatch(format!("sum inputs disagree: {ins:?}")));
                None
            }
        }
        BlockKind::Product { mode } => match mode {
            ProductMode::Elementwise => {
                if ins.windows(2).all(|w| w[0] == w[1]) {
                    Some(ins[0])
                } else {
                    diags.push(mismatch(format!(
                        "elementwise product inputs disagree: {ins:?}"
                    )));
                    None
                }
            }
            ProductMode::Dot => {
                if ins[0] == ins[1] {
                    Some(1)
                } else {
                    diags.push(mismatch(format!("dot product inputs disagree: {ins:?}")));
                    None
                }
            }
            ProductMode::Matrix => {
                if ins[0] == 1 {
                    Some(ins[1])
                } else if ins[1] == 1 {
                    Some(ins[0])
                } else {
                    diags.push(mismatch(format!(
                        "scalar-vector product needs one scalar operand, got dims {ins:?}"
                    )));
                    None
                }
            }
        },
        BlockKind::PolyFun { .. } => {
            if ins[0] == 1 {
                Some(1)
            } else {
                diags.push(mismatch(format!(
                    "polynomial input must be scalar, got dim {}",
                    ins[0]
                )));
                None
            }
        }
        BlockKind::Transpose => Some(ins[0]),
        BlockKind::QuadraticForm { p } => {
            let total: usize = ins.iter().sum();
            if total == p.rows() {
                Some(1)
            } else {
                diags.push(mismatch(format!(
                    "quadratic form of order {} fed {} total input dims {ins:?}",
                    p.rows(),
                    total
                )));
                None
            }
        }
        BlockKind::RunningMax => Some(1),
        BlockKind::Integrator { initial } | BlockKind::UnitDelay { initial } => {
            // Output dim is the initial condition; the input must match.
            if ins[0] != initial.len() {
                diags.push(mismatch(format!(
                    "state block holds {} component(s) but is fed dim {}",
                    initial.len(),
                    ins[0]
                )));
                None
            } else {
                Some(initial.len())
            }
        }
        BlockKind::StateSpace { .. } => unreachable!("state-space dims are source-seeded"),
        _ => None,
    }
}

fn check_sink(b: &Block, ins: &[usize], diags: &mut Vec<Diagnostic>) {
    let mismatch = |msg: String| Diagnostic::new("dimension-mismatch", msg).with_block(&b.id);
    match &b.kind {
        BlockKind::AssertLE0 { .. } => {
            if ins.first().copied() != Some(1) {
                diags.push(mismatch(format!(
                    "assertion input must be scalar, got dim {:?}",
                    ins.first()
                )));
            }
        }
        BlockKind::StateSpace { b: bm, .. } => {
            let total: usize = ins.iter().sum();
            if total != bm.cols() {
                diags.push(mismatch(format!(
                    "state-space block expects input dim {}, got {total}",
                    bm.cols()
                )));
            }
        }
        BlockKind::Integrator { initial } | BlockKind::UnitDelay { initial }
            if ins.first().copied() != Some(initial.len()) =>
        {
            diags.push(mismatch(format!(
                "state block holds {} component(s) but is fed dim {:?}",
                initial.len(),
                ins.first()
            )));
        }
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_ir::{Region, Wire, WireMarker};
    use crate::numkernel::Matrix;

    fn block(id: &str, kind: BlockKind) -> Block {
        Block {
            id: id.into(),
            kind,
            region: Region::Executable,
        }
    }

    fn wire(src: (&str, usize), dst: (&str, usize)) -> Wire {
        Wire {
            src: PortRef::new(src.0, src.1),
            dst: PortRef::new(dst.0, dst.1),
            marker: WireMarker::Plain,
            dim: None,
        }
    }

    #[test]
    fn scalar_gain_broadcasts_over_vectors() {
        let g = ModelGraph {
            blocks: vec![
                block("u", BlockKind::Inport { dim: 3 }),
                block(
                    "g",
                    BlockKind::Gain {
                        gain: Matrix::from_rows(&[vec![2.0]]).unwrap(),
                        mode: GainMode::Elementwise,
                    },
                ),
                block("y", BlockKind::Outport),
            ],
            wires: vec![wire(("u", 0), ("g", 0)), wire(("g", 0), ("y", 0))],
            ..Default::default()
        };
        let inferred = infer_dimensions(&g).unwrap();
        assert_eq!(inferred.wires[1].dim, Some(3));
    }

    #[test]
    fn matrix_gain_maps_shape() {
        let g = ModelGraph {
            blocks: vec![
                block("u", BlockKind::Inport { dim: 3 }),
                block(
                    "g",
                    BlockKind::Gain {
                        gain: Matrix::zeros(2, 3),
                        mode: GainMode::Matrix,
                    },
                ),
                block("y", BlockKind::Outport),
            ],
            wires: vec![wire(("u", 0), ("g", 0)), wire(("g", 0), ("y", 0))],
            ..Default::default()
        };
        let inferred = infer_dimensions(&g).unwrap();
        assert_eq!(inferred.wires[1].dim, Some(2));
    }

    #[test]
    fn sum_dim_mismatch_reported() {
        let g = ModelGraph {
            blocks: vec![
                block("a", BlockKind::Inport { dim: 2 }),
                block("b", BlockKind::Inport { dim: 3 }),
                block("s", BlockKind::Sum { signs: "+-".into() }),
                block("y", BlockKind::Outport),
            ],
            wires: vec![
                wire(("a", 0), ("s", 0)),
                wire(("b", 0), ("s", 1)),
                wire(("s", 0), ("y", 0)),
            ],
            ..Default::default()
        };
        let diags = infer_dimensions(&g).unwrap_err();
        assert!(diags
            .iter()
            .any(|d| d.code == "dimension-mismatch" && d.block.as_deref() == Some("s")));
    }

    #[test]
    fn inference_is_idempotent() {
        let g = ModelGraph {
            blocks: vec![
                block("u", BlockKind::Inport { dim: 2 }),
                block(
                    "g",
                    BlockKind::Gain {
                        gain: Matrix::from_rows(&[vec![2.0]]).unwrap(),
                        mode: GainMode::Elementwise,
                    },
                ),
                block("y", BlockKind::Outport),
            ],
            wires: vec![wire(("u", 0), ("g", 0)), wire(("g", 0), ("y", 0))],
            ..Default::default()
        };
        let once = infer_dimensions(&g).unwrap();
        let twice = infer_dimensions(&once).unwrap();
        assert_eq!(once, twice);
    }
}
