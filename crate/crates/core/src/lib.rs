//! proofblocks-core: turn a textual block-diagram description of a
//! computer-controlled system into machine-checked stability/performance
//! certificates, a diagram annotated with verification blocks expressing
//! those proofs, and annotated code in two textual targets, with a simulator
//! that runtime-checks every emitted assertion.
//!
//! Module map:
//! - [`numkernel`]: dense real linear algebra (LU, Cholesky, LDL^T, Kronecker,
//!   matrix exponential, smallest symmetric eigenvalue).
//! - [`model_ir`]: the diagram intermediate representation with
//!   executable/annotation region tagging and dimension inference.
//! - [`frontend`]: the `.pbm.json` model format and GraphViz rendering.
//! - [`extraction`]: state-space recovery from the linear executable
//!   subgraph, plus the exchange schema for external analysis tools.
//! - [`certificates`]: Lyapunov and bounded-real certificate computation and
//!   verification.
//! - [`annotator`]: expansion of high-level annotation specs into
//!   annotation-region subgraphs.
//! - [`backend`]: zero-order-hold discretization with proof transport and
//!   the two code targets.
//! - [`simcheck`]: trajectory simulation, runtime assertion checking, and
//!   the dataflow-target interpreter.

pub mod annotator;
pub mod backend;
pub mod certificates;
pub mod diag;
pub mod extraction;
pub mod frontend;
pub mod model_ir;
pub mod numkernel;
pub mod pipeline;
pub mod simcheck;
pub mod tol;

pub use diag::Diagnostic;
pub use model_ir::{
    AssertCheck, Block, BlockKind, GainMode, ModelGraph, NoiseKind, NoiseSpec, PortRef,
    ProductMode, Region, Wire, WireMarker,
};
pub use numkernel::Matrix;
