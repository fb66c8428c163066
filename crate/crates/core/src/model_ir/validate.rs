use std::collections::{BTreeMap, BTreeSet};

use crate::diag::Diagnostic;

use super::{Block, BlockKind, ModelGraph, NoiseKind, Region};

/// Check every structural invariant of the graph: id uniqueness, wiring
/// arity, region discipline, per-kind parameter shapes, and the absence of
/// algebraic loops. When the structure is sound, dimension inference runs
/// too, so a validated graph is also dimension-consistent.
pub fn validate(g: &ModelGraph) -> Result<(), Vec<Diagnostic>> {
    let mut diags = Vec::new();

    let mut seen = BTreeSet::new();
    for b in &g.blocks {
        if !seen.insert(b.id.as_str()) {
            diags.push(
                Diagnostic::new(
                    "duplicate-block-id",
                    format!("block id `{}` appears twice", b.id),
                )
                .with_block(&b.id),
            );
        }
        check_kind(b, &mut diags);
        if b.region == Region::Executable && b.kind.annotation_only() {
            diags.push(
                Diagnostic::new(
                    "region-violation",
                    format!("`{}` blocks belong to the annotation region", b.kind.name()),
                )
                .with_block(&b.id),
            );
        }
    }

    let by_id: BTreeMap<&str, &Block> = g.blocks.iter().map(|b| (b.id.as_str(), b)).collect();

    let mut taken: BTreeSet<(&str, usize)> = BTreeSet::new();
    for w in &g.wires {
        let src = match by_id.get(w.src.block.as_str()) {
            Some(b) => Some(*b),
            None => {
                diags.push(Diagnostic::new(
                    "unknown-block",
                    format!("wire source references unknown block `{}`", w.src.block),
                ));
                None
            }
        };
        let dst = match by_id.get(w.dst.block.as_str()) {
            Some(b) => Some(*b),
            None => {
                diags.push(Diagnostic::new(
                    "unknown-block",
                    format!(
                        "wire destination references unknown block `{}`",
                        w.dst.block
                    ),
                ));
                None
            }
        };
        if let Some(s) = src {
            if !s.kind.has_output() || w.src.port != 0 {
                diags.push(
                    Diagnostic::new(
                        "invalid-port",
                        format!("block `{}` has no output port {}", s.id, w.src.port),
                    )
                    .with_block(&s.id),
                );
            }
        }
        if let Some(d) = dst {
            if let Some(arity) = d.kind.input_arity() {
                if w.dst.port >= arity {
                    diags.push(
                        Diagnostic::new(
                            "invalid-port",
                            format!(
                                "block `{}` ({}) has {} input port(s), wire targets port {}",
                                d.id,
                                d.kind.name(),
                                arity,
                                w.dst.port
                            ),
                        )
                        .with_block(&d.id),
                    );
                }
            }
            if !taken.insert((d.id.as_str(), w.dst.port)) {
                diags.push(
                    Diagnostic::new(
                        "duplicate-input",
                        format!("two wires drive input port {} of `{}`", w.dst.port, d.id),
                    )
                    .with_block(&d.id),
                );
            }
        }
        if let (Some(s), Some(d)) = (src, dst) {
            if s.region == Region::Annotation && d.region == Region::Executable {
                diags.push(
                    Diagnostic::new(
                        "region-violation",
                        format!(
                            "annotation block `{}` feeds executable block `{}`; annotations read executables, never feed them",
                            s.id, d.id
                        ),
                    )
                    .with_block(&s.id),
                );
            }
        }
    }

    // Connectivity: fixed-arity inputs all present, variable-arity contiguous
    // from 0 and at least the minimum; executable inports drive something.
    for b in &g.blocks {
        let connected: BTreeSet<usize> = g
            .wires
            .iter()
            .filter(|w| w.dst.block == b.id)
            .map(|w| w.dst.port)
            .collect();
        let count = connected.len();
        match b.kind.input_arity() {
            Some(arity) => {
                for p in 0..arity {
                    if !connected.contains(&p) {
                        diags.push(
                            Diagnostic::new(
                                "missing-input",
                                format!(
                                    "input port {p} of `{}` ({}) is unconnected",
                                    b.id,
                                    b.kind.name()
                                ),
                            )
                            .with_block(&b.id),
                        );
                    }
                }
            }
            None => {
                let min = b.kind.min_input_arity();
                if count < min {
                    diags.push(
                        Diagnostic::new(
                            "missing-input",
                            format!(
                                "`{}` ({}) needs at least {min} input(s), found {count}",
                                b.id,
                                b.kind.name()
                            ),
                        )
                        .with_block(&b.id),
                    );
                }
                if connected.iter().enumerate().any(|(i, &p)| i != p) {
                    diags.push(
                        Diagnostic::new(
                            "missing-input",
                            format!("input ports of `{}` must be contiguous from 0", b.id),
                        )
                        .with_block(&b.id),
                    );
                }
            }
        }
        if b.region == Region::Executable {
            if let BlockKind::Inport { .. } = b.kind {
                if !g.wires.iter().any(|w| w.src.block == b.id) {
                    diags.push(
                        Diagnostic::new(
                            "io-unreachable",
                            format!("executable inport `{}` drives nothing", b.id),
                        )
                        .with_block(&b.id),
                    );
                }
            }
        }
    }

    if let Some(cycle) = algebraic_loop(g) {
        diags.push(Diagnostic::new(
            "algebraic-loop",
            format!(
                "cycle without integrator/delay/state-space: {}",
                cycle.join(" -> ")
            ),
        ));
    }

    if diags.is_empty() {
        // Structure is sound; fold in dimension diagnostics so a validated
        // graph is fully consistent (this is where bad AssertLE0 input
        // widths and quadratic-form size mismatches surface).
        if let Err(mut dim_diags) = super::infer::infer_dimensions(g) {
            diags.append(&mut dim_diags);
        }
    }

    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn check_kind(b: &Block, diags: &mut Vec<Diagnostic>) {
    let bad = |code: &str, msg: String| Diagnostic::new(code, msg).with_block(&b.id);
    match &b.kind {
        BlockKind::Inport { dim } | BlockKind::NoiseSource { dim, .. } if *dim == 0 => {
            diags.push(bad(
                "bad-params",
                "signal dimension must be at least 1".into(),
            ));
        }
        BlockKind::Constant { value } if value.is_empty() => {
            diags.push(bad("bad-params", "constant value must not be empty".into()));
        }
        BlockKind::Sum { signs } => {
            if signs.len() < 2 {
                diags.push(bad(
                    "sum-signs",
                    format!("sum needs at least 2 signs, got `{signs}`"),
                ));
            }
            if signs.chars().any(|c| c != '+' && c != '-') {
                diags.push(bad(
                    "sum-signs",
                    format!("sum signs must be over {{+,-}}, got `{signs}`"),
                ));
            }
        }
        BlockKind::Integrator { initial } | BlockKind::UnitDelay { initial } => {
            if initial.is_empty() {
                diags.push(bad(
                    "bad-params",
                    "initial condition must not be empty".into(),
                ));
            }
        }
        BlockKind::StateSpace {
            a,
            b: bm,
            c,
            d,
            initial,
        } => {
            if !a.is_square() {
                diags.push(bad(
                    "state-space-shape",
                    format!("A must be square, got {}x{}", a.rows(), a.cols()),
                ));
            } else {
                let n = a.rows();
                if bm.rows() != n {
                    diags.push(bad(
                        "state-space-shape",
                        format!("B has {} rows, expected {n}", bm.rows()),
                    ));
                }
                if c.cols() != n {
                    diags.push(bad(
                        "state-space-shape",
                        format!("C has {} cols, expected {n}", c.cols()),
                    ));
                }
                if d.rows() != c.rows() || d.cols() != bm.cols() {
                    diags.push(bad(
                        "state-space-shape",
                        format!(
                            "D must be {}x{}, got {}x{}",
                            c.rows(),
                            bm.cols(),
                            d.rows(),
                            d.cols()
                        ),
                    ));
                }
                if initial.len() != n {
                    diags.push(bad(
                        "state-space-shape",
                        format!("initial state has {} entries, expected {n}", initial.len()),
                    ));
                }
            }
        }
        BlockKind::NoiseSource { spec, .. } => {
            if spec.bound < 0.0 {
                diags.push(bad(
                    "noise-spec",
                    format!("noise bound must be nonnegative, got {}", spec.bound),
                ));
            }
            if spec.kind == NoiseKind::Zero && spec.bound != 0.0 {
                diags.push(bad("noise-spec", "zero noise must have bound 0".into()));
            }
        }
        BlockKind::Gain { gain, .. } => {
            let _ = gain; // shape interplay with inputs checked by inference
        }
        BlockKind::QuadraticForm { p } => {
            if !p.is_square() {
                diags.push(bad(
                    "bad-params",
                    format!(
                        "quadratic form matrix must be square, got {}x{}",
                        p.rows(),
                        p.cols()
                    ),
                ));
            }
        }
        BlockKind::PolyFun { coefficients } if coefficients.is_empty() => {
            diags.push(bad(
                "bad-params",
                "polynomial needs at least one coefficient".into(),
            ));
        }
        _ => {}
    }
}

/// Find a cycle in the block graph that contains no cycle-breaking block.
/// Returns the blocks on the cycle, or None.
fn algebraic_loop(g: &ModelGraph) -> Option<Vec<String>> {
    // Remove cycle-breaker nodes; any remaining cycle is algebraic.
    let nodes: Vec<&str> = g
        .blocks
        .iter()
        .filter(|b| !b.kind.breaks_cycles())
        .map(|b| b.id.as_str())
        .collect();
    let node_set: BTreeSet<&str> = nodes.iter().copied().collect();
    let mut adj: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for w in &g.wires {
        let (s, d) = (w.src.block.as_str(), w.dst.block.as_str());
        if node_set.contains(s) && node_set.contains(d) {
            adj.entry(s).or_default().push(d);
        }
    }

    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        White,
        Gray,
        Black,
    }
    let mut mark: BTreeMap<&str, Mark> = nodes.iter().map(|&n| (n, Mark::White)).collect();
    let mut stack: Vec<&str> = Vec::new();

    fn dfs<'a>(
        n: &'a str,
        adj: &BTreeMap<&'a str, Vec<&'a str>>,
        mark: &mut BTreeMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        mark.insert(n, Mark::Gray);
        stack.push(n);
        for &next in adj.get(n).map(|v| v.as_slice()).unwrap_or(&[]) {
            match mark[&next] {
                Mark::Gray => {
                    let pos = stack.iter().position(|&s| s == next).unwrap();
                    let mut cycle: Vec<String> =
                        stack[pos..].iter().map(|s| s.to_string()).collect();
                    cycle.push(next.to_string());
                    return Some(cycle);
                }
                Mark::White => {
                    if let Some(c) = dfs(next, adj, mark, stack) {
                        return Some(c);
                    }
                }
                Mark::Black => {}
            }
        }
        stack.pop();
        mark.insert(n, Mark::Black);
        None
    }

    for &n in &nodes {
        if mark[&n] == Mark::White {
            if let Some(c) = dfs(n, &adj, &mut mark, &mut stack) {
                return Some(c);
            }
        }
    }
    None
}
