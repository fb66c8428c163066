//! The block-diagram intermediate representation.
//!
//! A [`ModelGraph`] is a flat list of blocks and wires with a whole-graph
//! time domain (`sample_time: None` means continuous). Blocks live in one of
//! two regions: `executable` blocks are the system itself and are what code
//! generation targets; `annotation` blocks express assertions about
//! executable signals and never feed back into them. Wires may carry a
//! `state` marker that elevates a signal to "this is a state of the control
//! system", which is where annotation generators attach quadratic forms.

mod infer;
mod validate;

pub use infer::infer_dimensions;
pub use validate::validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::diag::Diagnostic;
use crate::numkernel::Matrix;

pub type BlockId = String;

/// A signal endpoint: output `port` of block `block`. Serializes as the
/// two-element array `["block", port]`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(from = "(String, usize)", into = "(String, usize)")]
pub struct PortRef {
    pub block: BlockId,
    pub port: usize,
}

impl From<(String, usize)> for PortRef {
    fn from((block, port): (String, usize)) -> Self {
        PortRef { block, port }
    }
}

impl From<PortRef> for (String, usize) {
    fn from(p: PortRef) -> Self {
        (p.block, p.port)
    }
}

impl PortRef {
    pub fn new(block: impl Into<BlockId>, port: usize) -> Self {
        PortRef {
            block: block.into(),
            port,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Executable,
    Annotation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WireMarker {
    Plain,
    State,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    Elementwise,
    Matrix,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProductMode {
    /// Entrywise product; all inputs must share one dimension.
    Elementwise,
    /// Scalar-vector product: one operand has dimension 1 and scales the other.
    Matrix,
    /// Inner product of two equal-dimension vectors.
    Dot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    Zero,
    UnitPeakUniform,
    BoundedPower,
}

/// Characteristics of a noise input: zero, peak-bounded uniform, or
/// power-bounded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub bound: f64,
}

impl NoiseSpec {
    pub fn zero() -> Self {
        NoiseSpec {
            kind: NoiseKind::Zero,
            bound: 0.0,
        }
    }

    pub fn unit_peak() -> Self {
        NoiseSpec {
            kind: NoiseKind::UnitPeakUniform,
            bound: 1.0,
        }
    }
}

/// How the simulator interprets an `AssertLE0` block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum AssertCheck {
    /// Input value must stay at or below the tolerance from step `warmup`
    /// on. The tolerance is `tol * (1 + |ref|)` when `ref_block` names a
    /// magnitude reference, else `tol`.
    Value {
        #[serde(default)]
        warmup: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ref_block: Option<BlockId>,
        /// Emit the accumulated dissipation ledger for this assertion.
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        ledger: bool,
    },
    /// Input is an energy function V; check the finite-difference rate
    /// `(V_k - V_{k-1}) / h <= tol_rate`.
    DecreaseRate,
    /// Continuous dissipation: input is `V - supply + y^T y`; check
    /// `dV/dt + y^T y - supply <= tol_rate` by finite differences, reading
    /// the named component signals from the trace.
    DissipationRate {
        v_block: BlockId,
        y2_block: BlockId,
        supply_block: BlockId,
    },
}

impl Default for AssertCheck {
    fn default() -> Self {
        AssertCheck::Value {
            warmup: 0,
            ref_block: None,
            ledger: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockKind {
    Inport {
        dim: usize,
    },
    Outport,
    Constant {
        value: Vec<f64>,
    },
    Gain {
        gain: Matrix,
        mode: GainMode,
    },
    Sum {
        signs: String,
    },
    Product {
        mode: ProductMode,
    },
    Integrator {
        initial: Vec<f64>,
    },
    UnitDelay {
        initial: Vec<f64>,
    },
    StateSpace {
        a: Matrix,
        b: Matrix,
        c: Matrix,
        d: Matrix,
        initial: Vec<f64>,
    },
    NoiseSource {
        spec: NoiseSpec,
        dim: usize,
    },
    /// Scalar polynomial `sum_k coefficients[k] * u^k`.
    PolyFun {
        coefficients: Vec<f64>,
    },
    Transpose,
    /// `u^T P u` over the concatenation of all input ports.
    QuadraticForm {
        p: Matrix,
    },
    /// Assertion sink: input must be scalar and <= 0 up to `tolerance`.
    AssertLE0 {
        tolerance: f64,
        check: AssertCheck,
    },
    /// Running maximum of the infinity norm of the input, sampled per step.
    RunningMax,
    Scope,
}

impl BlockKind {
    /// Short lowercase name used in the file format and diagnostics.
    pub fn name(&self) -> &'static str {
        match self {
            BlockKind::Inport { .. } => "inport",
            BlockKind::Outport => "outport",
            BlockKind::Constant { .. } => "constant",
            BlockKind::Gain { .. } => "gain",
            BlockKind::Sum { .. } => "sum",
            BlockKind::Product { .. } => "product",
            BlockKind::Integrator { .. } => "integrator",
            BlockKind::UnitDelay { .. } => "unit_delay",
            BlockKind::StateSpace { .. } => "state_space",
            BlockKind::NoiseSource { .. } => "noise_source",
            BlockKind::PolyFun { .. } => "poly_fun",
            BlockKind::Transpose => "transpose",
            BlockKind::QuadraticForm { .. } => "quadratic_form",
            BlockKind::AssertLE0 { .. } => "assert_le0",
            BlockKind::RunningMax => "running_max",
            BlockKind::Scope => "scope",
        }
    }

    /// Expected input arity. `None` means variable (validated structurally).
    pub fn input_arity(&self) -> Option<usize> {
        match self {
            BlockKind::Inport { .. }
            | BlockKind::Constant { .. }
            | BlockKind::NoiseSource { .. } => Some(0),
            BlockKind::Outport
            | BlockKind::Gain { .. }
            | BlockKind::Integrator { .. }
            | BlockKind::UnitDelay { .. }
            | BlockKind::PolyFun { .. }
            | BlockKind::Transpose
            | BlockKind::AssertLE0 { .. }
            | BlockKind::RunningMax => Some(1),
            // Input ports of a state-space block concatenate onto B's
            // columns, so several input blocks can feed one realization.
            BlockKind::StateSpace { .. } => None,
            BlockKind::Sum { signs } => Some(signs.len()),
            BlockKind::Product { mode } => match mode {
                ProductMode::Dot | ProductMode::Matrix => Some(2),
                ProductMode::Elementwise => None, // >= 2
            },
            BlockKind::QuadraticForm { .. } => None, // >= 1
            BlockKind::Scope => None,                // >= 1
        }
    }

    pub fn min_input_arity(&self) -> usize {
        match self {
            BlockKind::Product {
                mode: ProductMode::Elementwise,
            } => 2,
            BlockKind::QuadraticForm { .. } | BlockKind::Scope | BlockKind::StateSpace { .. } => 1,
            _ => self.input_arity().unwrap_or(1),
        }
    }

    pub fn has_output(&self) -> bool {
        !matches!(
            self,
            BlockKind::Outport | BlockKind::AssertLE0 { .. } | BlockKind::Scope
        )
    }

    /// Blocks that break causality cycles: their step output does not depend
    /// on their step input.
    pub fn breaks_cycles(&self) -> bool {
        matches!(
            self,
            BlockKind::Integrator { .. }
                | BlockKind::UnitDelay { .. }
                | BlockKind::StateSpace { .. }
        )
    }

    /// Annotation-vocabulary blocks that may not appear in the executable
    /// region.
    pub fn annotation_only(&self) -> bool {
        matches!(
            self,
            BlockKind::QuadraticForm { .. } | BlockKind::AssertLE0 { .. } | BlockKind::RunningMax
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub id: BlockId,
    pub kind: BlockKind,
    pub region: Region,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wire {
    pub src: PortRef,
    pub dst: PortRef,
    pub marker: WireMarker,
    /// Signal width, filled by dimension inference.
    pub dim: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct ModelGraph {
    pub blocks: Vec<Block>,
    pub wires: Vec<Wire>,
    /// `None`: continuous time; `Some(h)`: discrete with step `h` seconds.
    pub sample_time: Option<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl ModelGraph {
    pub fn block(&self, id: &str) -> Option<&Block> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn is_discrete(&self) -> bool {
        self.sample_time.is_some()
    }

    /// Wires entering `block`, ordered by destination port.
    pub fn inputs_of(&self, block: &str) -> Vec<&Wire> {
        let mut ws: Vec<&Wire> = self.wires.iter().filter(|w| w.dst.block == block).collect();
        ws.sort_by_key(|w| w.dst.port);
        ws
    }

    /// Number of connected input ports of `block`.
    pub fn input_count(&self, block: &str) -> usize {
        self.wires
            .iter()
            .filter(|w| w.dst.block == block)
            .map(|w| w.dst.port + 1)
            .max()
            .unwrap_or(0)
    }

    /// Whether any wire leaving `(block, port)` carries the state marker.
    pub fn signal_is_state(&self, src: &PortRef) -> bool {
        self.wires
            .iter()
            .any(|w| w.src == *src && w.marker == WireMarker::State)
    }

    /// Inferred dimension of the signal at `(block, port)`, if any wire
    /// carries it.
    pub fn signal_dim(&self, src: &PortRef) -> Option<usize> {
        self.wires
            .iter()
            .find(|w| w.src == *src)
            .and_then(|w| w.dim)
    }

    /// Blocks of one region, with the wires connecting them. Wires that
    /// cross from the executable into the annotation region become new
    /// boundary `Inport` blocks on the annotation side (preserving the state
    /// marker), so the annotation subgraph reads executable signals through
    /// generated ports.
    pub fn subgraph(&self, region: Region) -> ModelGraph {
        let keep: Vec<&Block> = self.blocks.iter().filter(|b| b.region == region).collect();
        let kept_ids: std::collections::BTreeSet<&str> =
            keep.iter().map(|b| b.id.as_str()).collect();

        let mut blocks: Vec<Block> = keep.into_iter().cloned().collect();
        let mut wires: Vec<Wire> = self
            .wires
            .iter()
            .filter(|w| {
                kept_ids.contains(w.src.block.as_str()) && kept_ids.contains(w.dst.block.as_str())
            })
            .cloned()
            .collect();

        if region == Region::Annotation {
            // One boundary inport per distinct crossing source signal,
            // numbered in sorted order for determinism.
            let mut crossing: Vec<&Wire> = self
                .wires
                .iter()
                .filter(|w| {
                    !kept_ids.contains(w.src.block.as_str())
                        && kept_ids.contains(w.dst.block.as_str())
                })
                .collect();
            crossing.sort_by(|a, b| (&a.src, &a.dst).cmp(&(&b.src, &b.dst)));
            let mut sources: Vec<PortRef> = Vec::new();
            for w in &crossing {
                if !sources.contains(&w.src) {
                    sources.push(w.src.clone());
                }
            }
            for (i, src) in sources.iter().enumerate() {
                let dim = self.signal_dim(src).unwrap_or(1);
                let marker = if self.signal_is_state(src) {
                    WireMarker::State
                } else {
                    WireMarker::Plain
                };
                let id = format!("bnd.{i}");
                blocks.push(Block {
                    id: id.clone(),
                    kind: BlockKind::Inport { dim },
                    region: Region::Annotation,
                });
                for w in crossing.iter().filter(|w| w.src == *src) {
                    wires.push(Wire {
                        src: PortRef::new(id.clone(), 0),
                        dst: w.dst.clone(),
                        marker,
                        dim: w.dim,
                    });
                }
            }
        }

        ModelGraph {
            blocks,
            wires,
            sample_time: self.sample_time,
            metadata: self.metadata.clone(),
        }
    }

    /// Structural equality up to block and wire ordering. Metadata is
    /// ignored (it carries presentation hints, not semantics).
    pub fn structurally_equal(&self, other: &ModelGraph) -> bool {
        if self.sample_time != other.sample_time {
            return false;
        }
        let mut a = self.blocks.clone();
        let mut b = other.blocks.clone();
        a.sort_by(|x, y| x.id.cmp(&y.id));
        b.sort_by(|x, y| x.id.cmp(&y.id));
        if a != b {
            return false;
        }
        let key = |w: &Wire| (w.src.clone(), w.dst.clone(), w.marker);
        let mut wa: Vec<_> = self.wires.iter().map(key).collect();
        let mut wb: Vec<_> = other.wires.iter().map(key).collect();
        wa.sort();
        wb.sort();
        wa == wb
    }

    pub fn validate(&self) -> Result<(), Vec<Diagnostic>> {
        validate(self)
    }

    pub fn infer_dimensions(&self) -> Result<ModelGraph, Vec<Diagnostic>> {
        infer_dimensions(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wire(src: (&str, usize), dst: (&str, usize)) -> Wire {
        Wire {
            src: PortRef::new(src.0, src.1),
            dst: PortRef::new(dst.0, dst.1),
            marker: WireMarker::Plain,
            dim: None,
        }
    }

    fn simple_graph() -> ModelGraph {
        ModelGraph {
            blocks: vec![
                Block {
                    id: "u".into(),
                    kind: BlockKind::Inport { dim: 1 },
                    region: Region::Executable,
                },
                Block {
                    id: "g".into(),
                    kind: BlockKind::Gain {
                        gain: Matrix::from_rows(&[vec![2.0]]).unwrap(),
                        mode: GainMode::Elementwise,
                    },
                    region: Region::Executable,
                },
                Block {
                    id: "y".into(),
                    kind: BlockKind::Outport,
                    region: Region::Executable,
                },
            ],
            wires: vec![wire(("u", 0), ("g", 0)), wire(("g", 0), ("y", 0))],
            sample_time: None,
            metadata: BTreeMap::new(),
        }
    }

    #[test]
    fn subgraph_annotation_of_plain_graph_is_empty() {
        let g = simple_graph();
        let s = g.subgraph(Region::Annotation);
        assert!(s.blocks.is_empty() && s.wires.is_empty());
    }

    #[test]
    fn subgraph_executable_keeps_graph() {
        let g = simple_graph();
        assert!(g.subgraph(Region::Executable).structurally_equal(&g));
    }

    #[test]
    fn boundary_wire_becomes_state_marked_inport() {
        let mut g = simple_graph();
        g.blocks.push(Block {
            id: "qf".into(),
            kind: BlockKind::QuadraticForm {
                p: Matrix::identity(1),
            },
            region: Region::Annotation,
        });
        g.blocks.push(Block {
            id: "a".into(),
            kind: BlockKind::AssertLE0 {
                tolerance: 1e-9,
                check: AssertCheck::default(),
            },
            region: Region::Annotation,
        });
        g.wires.push(Wire {
            src: PortRef::new("g", 0),
            dst: PortRef::new("qf", 0),
            marker: WireMarker::State,
            dim: None,
        });
        g.wires.push(wire(("qf", 0), ("a", 0)));
        let s = g.subgraph(Region::Annotation);
        let bnd = s.block("bnd.0").expect("boundary inport generated");
        assert!(matches!(bnd.kind, BlockKind::Inport { dim: 1 }));
        assert!(s
            .wires
            .iter()
            .any(|w| w.src.block == "bnd.0" && w.marker == WireMarker::State));
        // and stripping the annotation back out returns the original
        assert!(g
            .subgraph(Region::Executable)
            .structurally_equal(&simple_graph()));
    }
}
