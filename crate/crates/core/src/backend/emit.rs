//! Shared program model for the two code targets: executable blocks in a
//! deterministic one-step evaluation order, per-component variable names,
//! and target-independent expression text.

use std::collections::BTreeMap;

use crate::model_ir::{Block, BlockKind, GainMode, ModelGraph, ProductMode, Region};
use crate::numkernel::Matrix;

use super::BackendError;

/// 17-significant-digit literal, round-trip exact, parseable by both
/// targets.
pub(crate) fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

pub(crate) fn sanitize(id: &str) -> String {
    let mut out = String::with_capacity(id.len());
    for c in id.chars() {
        if c.is_ascii_alphanumeric() || c == '_' {
            out.push(c);
        } else {
            out.push('_');
        }
    }
    if out.chars().next().is_some_and(|c| c.is_ascii_digit()) {
        out.insert(0, '_');
    }
    out
}

pub(crate) struct ProgramModel<'g> {
    pub g: &'g ModelGraph,
    /// Executable blocks in evaluation order.
    pub order: Vec<&'g Block>,
    /// (block id, width) of inputs, sorted by id; flattened into the input
    /// array in this order.
    pub inputs: Vec<(String, usize)>,
    pub outputs: Vec<(String, usize)>,
    /// State-holding executable blocks in id order.
    pub states: Vec<&'g Block>,
    pub h: f64,
    dims: BTreeMap<String, usize>,
}

impl<'g> ProgramModel<'g> {
    pub fn width(&self, id: &str) -> usize {
        self.dims.get(id).copied().unwrap_or(1)
    }

    /// Variable base name of a block's output component.
    pub fn var(&self, id: &str, comp: usize) -> String {
        let base = sanitize(id);
        if self.width(id) == 1 {
            base
        } else {
            format!("{base}_{comp}")
        }
    }

    /// State slot name (distinct namespace from output variables: a
    /// state-space block has both).
    pub fn state_slot(&self, id: &str, comp: usize) -> String {
        format!("x_{}_{comp}", sanitize(id))
    }

    pub fn input_feeds(&self, id: &str) -> Vec<(String, usize)> {
        self.g
            .inputs_of(id)
            .iter()
            .map(|w| (w.src.block.clone(), self.width(&w.src.block)))
            .collect()
    }
}

pub(crate) fn build(g: &ModelGraph) -> Result<ProgramModel<'_>, BackendError> {
    let exec: Vec<&Block> = g
        .blocks
        .iter()
        .filter(|b| b.region == Region::Executable)
        .collect();
    for b in &exec {
        if b.kind.annotation_only() {
            return Err(BackendError::UnsupportedBlock {
                block: b.id.clone(),
                reason: format!(
                    "`{}` blocks cannot appear in executable code",
                    b.kind.name()
                ),
            });
        }
    }

    // Output widths from the inferred wires.
    let mut dims: BTreeMap<String, usize> = BTreeMap::new();
    for w in &g.wires {
        if let Some(d) = w.dim {
            dims.insert(w.src.block.clone(), d);
        }
    }
    for b in &exec {
        let d = match &b.kind {
            BlockKind::Inport { dim } | BlockKind::NoiseSource { dim, .. } => Some(*dim),
            BlockKind::Constant { value } => Some(value.len()),
            BlockKind::Integrator { initial } | BlockKind::UnitDelay { initial } => {
                Some(initial.len())
            }
            BlockKind::StateSpace { c, .. } => Some(c.rows()),
            _ => None,
        };
        if let Some(d) = d {
            dims.insert(b.id.clone(), d);
        }
    }

    // Evaluation order: pure-state outputs are free, combinational blocks
    // wait for their inputs; ties broken by id.
    let state_like = |b: &Block| match &b.kind {
        BlockKind::Integrator { .. } | BlockKind::UnitDelay { .. } => true,
        BlockKind::StateSpace { d, .. } => d.max_abs() == 0.0,
        _ => false,
    };
    let idx: BTreeMap<&str, usize> = exec
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();
    let mut indegree = vec![0usize; exec.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); exec.len()];
    for w in &g.wires {
        let (Some(&s), Some(&d)) = (idx.get(w.src.block.as_str()), idx.get(w.dst.block.as_str()))
        else {
            continue;
        };
        if !state_like(exec[d]) {
            succ[s].push(d);
            indegree[d] += 1;
        }
    }
    let mut frontier: Vec<usize> = (0..exec.len()).filter(|&i| indegree[i] == 0).collect();
    frontier.sort_by(|&a, &b| exec[a].id.cmp(&exec[b].id));
    let mut order = Vec::with_capacity(exec.len());
    while !frontier.is_empty() {
        let i = frontier.remove(0);
        order.push(exec[i]);
        let mut newly = Vec::new();
        for &d in &succ[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                newly.push(d);
            }
        }
        frontier.extend(newly);
        frontier.sort_by(|&a, &b| exec[a].id.cmp(&exec[b].id));
    }
    if order.len() != exec.len() {
        let stuck = exec
            .iter()
            .find(|b| !order.iter().any(|o| o.id == b.id))
            .map(|b| b.id.clone())
            .unwrap_or_default();
        return Err(BackendError::UnsupportedBlock {
            block: stuck,
            reason: "implicit relation cannot be ordered into step code".into(),
        });
    }

    let mut inputs: Vec<(String, usize)> = exec
        .iter()
        .filter(|b| {
            matches!(
                b.kind,
                BlockKind::Inport { .. } | BlockKind::NoiseSource { .. }
            )
        })
        .map(|b| (b.id.clone(), dims[&b.id]))
        .collect();
    inputs.sort();
    let mut outputs: Vec<(String, usize)> = exec
        .iter()
        .filter(|b| matches!(b.kind, BlockKind::Outport))
        .map(|b| {
            let w = g
                .inputs_of(&b.id)
                .first()
                .map(|w| dims.get(&w.src.block).copied().unwrap_or(1))
                .unwrap_or(1);
            (b.id.clone(), w)
        })
        .collect();
    outputs.sort();
    let mut states: Vec<&Block> = exec
        .iter()
        .filter(|b| {
            matches!(
                b.kind,
                BlockKind::Integrator { .. }
                    | BlockKind::UnitDelay { .. }
                    | BlockKind::StateSpace { .. }
            )
        })
        .copied()
        .collect();
    states.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(ProgramModel {
        h: g.sample_time.expect("discrete graph"),
        g,
        order,
        inputs,
        outputs,
        states,
        dims,
    })
}

/// Per-component right-hand sides of one combinational block, given a
/// reader for state slots. Returns one expression per output component.
pub(crate) fn block_exprs(
    pm: &ProgramModel,
    b: &Block,
    state_read: &dyn Fn(&str, usize) -> String,
) -> Option<Vec<String>> {
    let feeds = pm.input_feeds(&b.id);
    let in_var = |port: usize, comp: usize| -> String {
        let (src, _) = &feeds[port];
        pm.var(src, comp)
    };
    let flat_inputs: Vec<String> = feeds
        .iter()
        .flat_map(|(src, w)| (0..*w).map(move |c| pm.var(src, c)))
        .collect();
    match &b.kind {
        BlockKind::Constant { value } => Some(value.iter().map(|&v| fmt17(v)).collect()),
        BlockKind::Gain { gain, mode } => {
            let w = feeds[0].1;
            Some(match mode {
                GainMode::Elementwise => (0..w)
                    .map(|i| {
                        let gi = if gain.rows() == 1 {
                            gain[(0, 0)]
                        } else {
                            gain[(i, 0)]
                        };
                        format!("{} * {}", fmt17(gi), in_var(0, i))
                    })
                    .collect(),
                GainMode::Matrix => (0..gain.rows())
                    .map(|i| linear_comb((0..gain.cols()).map(|j| (gain[(i, j)], in_var(0, j)))))
                    .collect(),
            })
        }
        BlockKind::Sum { signs } => {
            let w = feeds[0].1;
            Some(
                (0..w)
                    .map(|i| {
                        let mut s = String::new();
                        for (port, sign) in signs.chars().enumerate() {
                            let term = in_var(port, i);
                            if s.is_empty() {
                                if sign == '-' {
                                    s.push_str(&format!("-{term}"));
                                } else {
                                    s.push_str(&term);
                                }
                            } else {
                                s.push_str(if sign == '-' { " - " } else { " + " });
                                s.push_str(&term);
                            }
                        }
                        s
                    })
                    .collect(),
            )
        }
        BlockKind::Product { mode } => Some(match mode {
            ProductMode::Elementwise => {
                let w = feeds[0].1;
                (0..w)
                    .map(|i| {
                        feeds
                            .iter()
                            .enumerate()
                            .map(|(port, _)| in_var(port, i))
                            .collect::<Vec<_>>()
                            .join(" * ")
                    })
                    .collect()
            }
            ProductMode::Dot => {
                let w = feeds[0].1;
                vec![(0..w)
                    .map(|i| format!("{} * {}", in_var(0, i), in_var(1, i)))
                    .collect::<Vec<_>>()
                    .join(" + ")]
            }
            ProductMode::Matrix => {
                let (sw, vw) = (feeds[0].1, feeds[1].1);
                if sw == 1 {
                    (0..vw)
                        .map(|i| format!("{} * {}", in_var(0, 0), in_var(1, i)))
                        .collect()
                } else {
                    (0..sw)
                        .map(|i| format!("{} * {}", in_var(1, 0), in_var(0, i)))
                        .collect()
                }
            }
        }),
        BlockKind::PolyFun { coefficients } => {
            let x = in_var(0, 0);
            let mut expr = fmt17(*coefficients.last().unwrap());
            for c in coefficients.iter().rev().skip(1) {
                expr = format!("({expr}) * {x} + {}", fmt17(*c));
            }
            Some(vec![expr])
        }
        BlockKind::Transpose => Some((0..feeds[0].1).map(|i| in_var(0, i)).collect()),
        BlockKind::Integrator { initial } | BlockKind::UnitDelay { initial } => {
            Some((0..initial.len()).map(|i| state_read(&b.id, i)).collect())
        }
        BlockKind::StateSpace { c, d, .. } => {
            let n = c.cols();
            Some(
                (0..c.rows())
                    .map(|i| {
                        let mut terms: Vec<(f64, String)> =
                            (0..n).map(|j| (c[(i, j)], state_read(&b.id, j))).collect();
                        for (k, u) in flat_inputs.iter().enumerate() {
                            terms.push((d[(i, k)], u.clone()));
                        }
                        linear_comb(terms.into_iter())
                    })
                    .collect(),
            )
        }
        _ => None,
    }
}

/// Next-state expressions of one state block, in component order.
pub(crate) fn update_exprs(
    pm: &ProgramModel,
    b: &Block,
    state_read: &dyn Fn(&str, usize) -> String,
) -> Vec<String> {
    let feeds = pm.input_feeds(&b.id);
    let flat_inputs: Vec<String> = feeds
        .iter()
        .flat_map(|(src, w)| (0..*w).map(move |c| pm.var(src, c)))
        .collect();
    match &b.kind {
        BlockKind::UnitDelay { initial } => {
            (0..initial.len()).map(|i| flat_inputs[i].clone()).collect()
        }
        BlockKind::Integrator { initial } => (0..initial.len())
            .map(|i| {
                format!(
                    "{} + {} * {}",
                    state_read(&b.id, i),
                    fmt17(pm.h),
                    flat_inputs[i]
                )
            })
            .collect(),
        BlockKind::StateSpace { a, b: bm, .. } => (0..a.rows())
            .map(|i| {
                let mut terms: Vec<(f64, String)> = (0..a.cols())
                    .map(|j| (a[(i, j)], state_read(&b.id, j)))
                    .collect();
                for (k, u) in flat_inputs.iter().enumerate() {
                    terms.push((bm[(i, k)], u.clone()));
                }
                linear_comb(terms.into_iter())
            })
            .collect(),
        _ => Vec::new(),
    }
}

fn linear_comb(terms: impl Iterator<Item = (f64, String)>) -> String {
    let mut out = String::new();
    for (c, v) in terms {
        if c == 0.0 {
            continue;
        }
        if out.is_empty() {
            out = format!("{} * {v}", fmt17(c));
        } else {
            out.push_str(&format!(" + {} * {v}", fmt17(c)));
        }
    }
    if out.is_empty() {
        out.push_str("0.0e0");
    }
    out
}

pub(crate) fn initial_of(b: &Block) -> &[f64] {
    match &b.kind {
        BlockKind::Integrator { initial }
        | BlockKind::UnitDelay { initial }
        | BlockKind::StateSpace { initial, .. } => initial,
        _ => &[],
    }
}

pub(crate) fn matrix_text(m: &Matrix) -> String {
    let rows: Vec<String> = (0..m.rows())
        .map(|i| {
            let cells: Vec<String> = m.row(i).iter().map(|&x| fmt17(x)).collect();
            format!("[{}]", cells.join(", "))
        })
        .collect();
    format!("[{}]", rows.join(", "))
}
