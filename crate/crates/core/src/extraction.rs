//! State-space recovery from the executable linear subgraph, and the JSON
//! exchange schemas (`analysis-request-v1` / `certificate-v1`) that let an
//! external robust-control toolbox stand in for the internal certificate
//! engine.
//!
//! Extraction walks the wiring and expresses every signal as an affine form
//! over the concatenated state vector (integrator/delay/state-space states,
//! lexicographic block-id order) and the concatenated inputs
//! (inports/noise sources, lexicographic order). Constant-by-signal products
//! fold into gains; signal-by-signal products and higher-degree polynomials
//! are nonlinear and abort extraction.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::certificates::{CertStatus, Certificate, CertificateKind, Provenance};
use crate::diag::Diagnostic;
use crate::model_ir::{
    Block, BlockKind, GainMode, ModelGraph, NoiseSpec, PortRef, ProductMode, Region,
};
use crate::numkernel::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeDomain {
    Continuous,
    Discrete { h: f64 },
}

/// Extracted `(A, B, C, D)` with named signal bindings. Names are one per
/// component: plain block id for width-1 blocks, `id[k]` otherwise.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StateSpace {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub state_names: Vec<String>,
    pub input_bindings: Vec<String>,
    pub output_bindings: Vec<String>,
    /// Declared initial condition, concatenated in state order.
    pub initial_state: Vec<f64>,
    pub time: TimeDomain,
}

impl StateSpace {
    pub fn order(&self) -> usize {
        self.a.rows()
    }

    pub fn num_inputs(&self) -> usize {
        self.b.cols()
    }

    pub fn num_outputs(&self) -> usize {
        self.c.rows()
    }

    pub fn is_continuous(&self) -> bool {
        matches!(self.time, TimeDomain::Continuous)
    }

    /// Restrict to the columns of one input block and the rows of one output
    /// block (for channel-wise gain certificates).
    pub fn channel(&self, input_block: &str, output_block: &str) -> Option<StateSpace> {
        let in_cols: Vec<usize> = self
            .input_bindings
            .iter()
            .enumerate()
            .filter(|(_, n)| binding_base(n) == input_block)
            .map(|(i, _)| i)
            .collect();
        let out_rows: Vec<usize> = self
            .output_bindings
            .iter()
            .enumerate()
            .filter(|(_, n)| binding_base(n) == output_block)
            .map(|(i, _)| i)
            .collect();
        if in_cols.is_empty() || out_rows.is_empty() {
            return None;
        }
        let n = self.order();
        let mut b = Matrix::zeros(n, in_cols.len());
        for (j, &col) in in_cols.iter().enumerate() {
            for i in 0..n {
                b[(i, j)] = self.b[(i, col)];
            }
        }
        let mut c = Matrix::zeros(out_rows.len(), n);
        let mut d = Matrix::zeros(out_rows.len(), in_cols.len());
        for (i, &row) in out_rows.iter().enumerate() {
            for j in 0..n {
                c[(i, j)] = self.c[(row, j)];
            }
            for (j, &col) in in_cols.iter().enumerate() {
                d[(i, j)] = self.d[(row, col)];
            }
        }
        Some(StateSpace {
            a: self.a.clone(),
            b,
            c,
            d,
            state_names: self.state_names.clone(),
            input_bindings: in_cols
                .iter()
                .map(|&i| self.input_bindings[i].clone())
                .collect(),
            output_bindings: out_rows
                .iter()
                .map(|&i| self.output_bindings[i].clone())
                .collect(),
            initial_state: self.initial_state.clone(),
            time: self.time,
        })
    }
}

fn binding_base(name: &str) -> &str {
    name.split('[').next().unwrap_or(name)
}

/// Affine form of one signal: `value = state_coeffs * x + input_coeffs * u +
/// constant`, one row per vector component.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalForm {
    pub state_coeffs: Vec<Vec<f64>>,
    pub input_coeffs: Vec<Vec<f64>>,
    pub constant: Vec<f64>,
}

impl SignalForm {
    fn zero(dim: usize, n: usize, m: usize) -> Self {
        SignalForm {
            state_coeffs: vec![vec![0.0; n]; dim],
            input_coeffs: vec![vec![0.0; m]; dim],
            constant: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.len()
    }

    pub fn is_constant(&self) -> bool {
        self.state_coeffs
            .iter()
            .chain(&self.input_coeffs)
            .flatten()
            .all(|&c| c == 0.0)
    }

    pub fn has_offset(&self) -> bool {
        self.constant.iter().any(|&c| c != 0.0)
    }

    fn scale(&self, s: f64) -> Self {
        self.map(|r| r * s)
    }

    fn map(&self, f: impl Fn(f64) -> f64 + Copy) -> Self {
        SignalForm {
            state_coeffs: self
                .state_coeffs
                .iter()
                .map(|r| r.iter().map(|&c| f(c)).collect())
                .collect(),
            input_coeffs: self
                .input_coeffs
                .iter()
                .map(|r| r.iter().map(|&c| f(c)).collect())
                .collect(),
            constant: self.constant.iter().map(|&c| f(c)).collect(),
        }
    }

    fn add_scaled(&mut self, other: &SignalForm, s: f64) {
        for (a, b) in self.state_coeffs.iter_mut().zip(&other.state_coeffs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        for (a, b) in self.input_coeffs.iter_mut().zip(&other.input_coeffs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += s * y;
            }
        }
        for (x, y) in self.constant.iter_mut().zip(&other.constant) {
            *x += s * y;
        }
    }

    /// Apply a constant matrix on the left.
    fn left_mul(&self, m: &Matrix) -> Self {
        let dim = m.rows();
        let mut out = SignalForm::zero(dim, self.state_coeffs[0].len(), self.input_coeffs[0].len());
        for i in 0..dim {
            for k in 0..self.dim() {
                let c = m[(i, k)];
                if c == 0.0 {
                    continue;
                }
                for (x, y) in out.state_coeffs[i].iter_mut().zip(&self.state_coeffs[k]) {
                    *x += c * y;
                }
                for (x, y) in out.input_coeffs[i].iter_mut().zip(&self.input_coeffs[k]) {
                    *x += c * y;
                }
                out.constant[i] += c * self.constant[k];
            }
        }
        out
    }

    /// Scale each component by the matching constant.
    #[allow(clippy::needless_range_loop)]
    fn elementwise_const(&self, consts: &[f64]) -> Self {
        let mut out = self.clone();
        for i in 0..out.dim() {
            let s = consts[i];
            for x in out.state_coeffs[i].iter_mut() {
                *x *= s;
            }
            for x in out.input_coeffs[i].iter_mut() {
                *x *= s;
            }
            out.constant[i] *= s;
        }
        out
    }
}

/// Map from executable signal `(block, port)` to its affine form.
pub type SignalTable = BTreeMap<PortRef, SignalForm>;

/// Recover the state-space model of the executable linear region.
pub fn extract_state_space(g: &ModelGraph) -> Result<StateSpace, Vec<Diagnostic>> {
    extract_with_signals(g).map(|(ss, _)| ss)
}

/// As [`extract_state_space`], also returning the affine form of every
/// executable signal (used by the discretizer to re-derive tapped signals).
pub fn extract_with_signals(g: &ModelGraph) -> Result<(StateSpace, SignalTable), Vec<Diagnostic>> {
    let exec = g.subgraph(Region::Executable);
    let mut diags: Vec<Diagnostic> = Vec::new();

    // -- state and input layout -------------------------------------------
    let discrete = exec.is_discrete();
    let mut state_blocks: Vec<&Block> = Vec::new();
    for b in &exec.blocks {
        match &b.kind {
            BlockKind::Integrator { .. } => {
                if discrete {
                    diags.push(
                        Diagnostic::new(
                            "mixed-time",
                            "integrator in a discrete-time executable region (unit delays carry discrete state)",
                        )
                        .with_block(&b.id),
                    );
                } else {
                    state_blocks.push(b);
                }
            }
            BlockKind::UnitDelay { .. } => {
                if discrete {
                    state_blocks.push(b);
                } else {
                    diags.push(
                        Diagnostic::new(
                            "mixed-time",
                            "unit delay in a continuous-time executable region (integrators carry continuous state)",
                        )
                        .with_block(&b.id),
                    );
                }
            }
            BlockKind::StateSpace { .. } => state_blocks.push(b),
            _ => {}
        }
    }
    state_blocks.sort_by(|a, b| a.id.cmp(&b.id));

    let mut input_blocks: Vec<&Block> = exec
        .blocks
        .iter()
        .filter(|b| {
            matches!(
                b.kind,
                BlockKind::Inport { .. } | BlockKind::NoiseSource { .. }
            )
        })
        .collect();
    input_blocks.sort_by(|a, b| a.id.cmp(&b.id));

    let mut output_blocks: Vec<&Block> = exec
        .blocks
        .iter()
        .filter(|b| matches!(b.kind, BlockKind::Outport))
        .collect();
    output_blocks.sort_by(|a, b| a.id.cmp(&b.id));

    let block_dim = |b: &Block| -> usize {
        match &b.kind {
            BlockKind::Integrator { initial } | BlockKind::UnitDelay { initial } => initial.len(),
            BlockKind::StateSpace { a, .. } => a.rows(),
            BlockKind::Inport { dim } | BlockKind::NoiseSource { dim, .. } => *dim,
            _ => 1,
        }
    };

    let mut state_offsets: BTreeMap<&str, usize> = BTreeMap::new();
    let mut state_names = Vec::new();
    let mut initial_state = Vec::new();
    let mut n = 0usize;
    for b in &state_blocks {
        state_offsets.insert(b.id.as_str(), n);
        let d = block_dim(b);
        push_names(&mut state_names, &b.id, d);
        match &b.kind {
            BlockKind::Integrator { initial }
            | BlockKind::UnitDelay { initial }
            | BlockKind::StateSpace { initial, .. } => initial_state.extend_from_slice(initial),
            _ => unreachable!(),
        }
        n += d;
    }

    let mut input_offsets: BTreeMap<&str, usize> = BTreeMap::new();
    let mut input_bindings = Vec::new();
    let mut m = 0usize;
    for b in &input_blocks {
        input_offsets.insert(b.id.as_str(), m);
        let d = block_dim(b);
        push_names(&mut input_bindings, &b.id, d);
        m += d;
    }

    if n == 0 {
        diags.push(Diagnostic::new(
            "no-states",
            "state-space extraction needs at least one integrator, unit delay, or state-space block",
        ));
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    // -- solve the signal equations ----------------------------------------
    let mut table: SignalTable = BTreeMap::new();
    for b in &state_blocks {
        let off = state_offsets[b.id.as_str()];
        let d = block_dim(b);
        match &b.kind {
            BlockKind::StateSpace { c, d: dm, .. } => {
                // Output resolves later unless strictly proper.
                if dm.max_abs() == 0.0 {
                    let z = basis_form(n, m, off, d, true);
                    table.insert(PortRef::new(b.id.clone(), 0), z.left_mul(c));
                }
            }
            _ => {
                table.insert(
                    PortRef::new(b.id.clone(), 0),
                    basis_form(n, m, off, d, true),
                );
            }
        }
    }
    for b in &input_blocks {
        let off = input_offsets[b.id.as_str()];
        table.insert(
            PortRef::new(b.id.clone(), 0),
            basis_form(n, m, off, block_dim(b), false),
        );
    }
    for b in &exec.blocks {
        if let BlockKind::Constant { value } = &b.kind {
            let mut f = SignalForm::zero(value.len(), n, m);
            f.constant = value.clone();
            table.insert(PortRef::new(b.id.clone(), 0), f);
        }
    }

    let mut progress = true;
    while progress {
        progress = false;
        for b in &exec.blocks {
            let out_ref = PortRef::new(b.id.clone(), 0);
            if table.contains_key(&out_ref) || !b.kind.has_output() {
                continue;
            }
            let ins = exec.inputs_of(&b.id);
            let forms: Option<Vec<&SignalForm>> = ins.iter().map(|w| table.get(&w.src)).collect();
            let Some(forms) = forms else { continue };
            // Direct-feedthrough state-space blocks resolve here once their
            // inputs are known: output = C z + D u_in with z the basis rows
            // at this block's state offset and u_in the port concatenation.
            if let BlockKind::StateSpace { a: ab, c, d, .. } = &b.kind {
                let off = state_offsets[b.id.as_str()];
                let mut f = basis_form(n, m, off, ab.rows(), true).left_mul(c);
                f.add_scaled(&concat_forms(&forms, n, m).left_mul(d), 1.0);
                table.insert(out_ref, f);
                progress = true;
                continue;
            }
            match combinational_form(b, &forms, n, m) {
                Ok(Some(f)) => {
                    table.insert(out_ref, f);
                    progress = true;
                }
                Ok(None) => {}
                Err(d) => {
                    diags.push(d);
                }
            }
        }
        if !diags.is_empty() {
            return Err(diags);
        }
    }

    // Anything still unresolved means an implicit relation the validator let
    // through (a direct-feedthrough state-space block inside a cycle).
    for b in &exec.blocks {
        if b.kind.has_output() && !table.contains_key(&PortRef::new(b.id.clone(), 0)) {
            diags.push(
                Diagnostic::new(
                    "algebraic-loop",
                    format!(
                        "signal of `{}` is implicitly defined and cannot be ordered",
                        b.id
                    ),
                )
                .with_block(&b.id),
            );
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    // -- assemble A, B from state updates; C, D from outport feeds ----------
    // Autonomous models get a single explicit zero input column (the Matrix
    // carrier has no empty shape); input_bindings stays empty to say so.
    let mut a = Matrix::zeros(n, n);
    let mut bmat = Matrix::zeros(n, m.max(1));
    for blk in &state_blocks {
        let off = state_offsets[blk.id.as_str()];
        let fed = exec.inputs_of(&blk.id);
        match &blk.kind {
            BlockKind::Integrator { .. } | BlockKind::UnitDelay { .. } => {
                let f = &table[&fed[0].src];
                place_rows(&mut a, &mut bmat, off, f, &blk.id, &mut diags);
            }
            BlockKind::StateSpace { a: ab, b: bb, .. } => {
                // dz/dt (or z+) = A_b z + B_b u_in
                let forms: Vec<&SignalForm> = fed.iter().map(|w| &table[&w.src]).collect();
                let u_in = concat_forms(&forms, n, m);
                let mut f = basis_form(n, m, off, ab.rows(), true).left_mul(ab);
                let bu = u_in.left_mul(bb);
                f.add_scaled(&bu, 1.0);
                place_rows(&mut a, &mut bmat, off, &f, &blk.id, &mut diags);
            }
            _ => unreachable!(),
        }
    }

    let p: usize = output_blocks
        .iter()
        .map(|b| {
            exec.inputs_of(&b.id)
                .first()
                .and_then(|w| table.get(&w.src))
                .map(|f| f.dim())
                .unwrap_or(1)
        })
        .sum();
    let mut c = Matrix::zeros(p.max(1), n);
    let mut dmat = Matrix::zeros(p.max(1), m.max(1));
    let mut output_bindings = Vec::new();
    let mut row = 0usize;
    for blk in &output_blocks {
        let fed = exec.inputs_of(&blk.id);
        let f = &table[&fed[0].src];
        if f.has_offset() {
            diags.push(
                Diagnostic::new(
                    "affine-offset",
                    format!(
                        "output `{}` carries a constant offset; A,B,C,D cannot represent it",
                        blk.id
                    ),
                )
                .with_block(&blk.id),
            );
        }
        push_names(&mut output_bindings, &blk.id, f.dim());
        for i in 0..f.dim() {
            for j in 0..n {
                c[(row, j)] = f.state_coeffs[i][j];
            }
            for j in 0..f.input_coeffs[i].len() {
                dmat[(row, j)] = f.input_coeffs[i][j];
            }
            row += 1;
        }
    }
    if output_blocks.is_empty() {
        diags.push(Diagnostic::new("no-outputs", "model has no outports"));
    }
    if !diags.is_empty() {
        return Err(diags);
    }

    let ss = StateSpace {
        a,
        b: bmat,
        c,
        d: dmat,
        state_names,
        input_bindings,
        output_bindings,
        initial_state,
        time: match exec.sample_time {
            None => TimeDomain::Continuous,
            Some(h) => TimeDomain::Discrete { h },
        },
    };
    Ok((ss, table))
}

fn push_names(names: &mut Vec<String>, id: &str, dim: usize) {
    if dim == 1 {
        names.push(id.to_string());
    } else {
        for k in 0..dim {
            names.push(format!("{id}[{k}]"));
        }
    }
}

fn concat_forms(forms: &[&SignalForm], n: usize, m: usize) -> SignalForm {
    let dim = forms.iter().map(|f| f.dim()).sum();
    let mut out = SignalForm::zero(dim, n, m);
    let mut row = 0;
    for f in forms {
        for i in 0..f.dim() {
            out.state_coeffs[row] = f.state_coeffs[i].clone();
            out.input_coeffs[row] = f.input_coeffs[i].clone();
            out.constant[row] = f.constant[i];
            row += 1;
        }
    }
    out
}

fn basis_form(n: usize, m: usize, offset: usize, dim: usize, is_state: bool) -> SignalForm {
    let mut f = SignalForm::zero(dim, n, m);
    for i in 0..dim {
        if is_state {
            f.state_coeffs[i][offset + i] = 1.0;
        } else {
            f.input_coeffs[i][offset + i] = 1.0;
        }
    }
    f
}

fn place_rows(
    a: &mut Matrix,
    b: &mut Matrix,
    offset: usize,
    f: &SignalForm,
    block: &str,
    diags: &mut Vec<Diagnostic>,
) {
    if f.has_offset() {
        diags.push(
            Diagnostic::new(
                "affine-offset",
                format!(
                    "state update of `{block}` carries a constant offset; A,B cannot represent it"
                ),
            )
            .with_block(block),
        );
    }
    for i in 0..f.dim() {
        for j in 0..a.cols() {
            a[(offset + i, j)] = f.state_coeffs[i][j];
        }
        for j in 0..f.input_coeffs[i].len() {
            b[(offset + i, j)] = f.input_coeffs[i][j];
        }
    }
}

/// Affine output of a combinational block, or None when it must wait for its
/// inputs, or a diagnostic for nonlinear constructs.
fn combinational_form(
    b: &Block,
    ins: &[&SignalForm],
    n: usize,
    m: usize,
) -> Result<Option<SignalForm>, Diagnostic> {
    let nonlinear = |what: &str| {
        Diagnostic::new(
            "nonlinear-block",
            format!(
                "`{}`: {what} is nonlinear; only constant-by-signal products fold into gains",
                b.id
            ),
        )
        .with_block(&b.id)
    };
    match &b.kind {
        BlockKind::Gain { gain, mode } => {
            let f = ins[0];
            Ok(Some(match mode {
                GainMode::Elementwise => {
                    if gain.rows() == 1 && gain.cols() == 1 {
                        f.scale(gain[(0, 0)])
                    } else {
                        let consts: Vec<f64> = (0..gain.rows()).map(|i| gain[(i, 0)]).collect();
                        f.elementwise_const(&consts)
                    }
                }
                GainMode::Matrix => f.left_mul(gain),
            }))
        }
        BlockKind::Sum { signs } => {
            let mut out = SignalForm::zero(ins[0].dim(), n, m);
            for (f, sign) in ins.iter().zip(signs.chars()) {
                out.add_scaled(f, if sign == '+' { 1.0 } else { -1.0 });
            }
            Ok(Some(out))
        }
        BlockKind::Product { mode } => {
            // At most one operand may be a non-constant signal; it can sit
            // at any port, and all constant operands fold around it.
            if ins.iter().filter(|f| !f.is_constant()).count() > 1 {
                return Err(nonlinear("a product of two non-constant signals"));
            }
            let sig_port = ins.iter().position(|f| !f.is_constant());
            match mode {
                ProductMode::Elementwise => {
                    let mut out = ins[sig_port.unwrap_or(0)].clone();
                    for (port, f) in ins.iter().enumerate() {
                        if Some(port) != sig_port.or(Some(0)) {
                            out = out.elementwise_const(&f.constant);
                        }
                    }
                    Ok(Some(out))
                }
                ProductMode::Dot => {
                    // c . v = row(c) * v
                    let (cf, sf) = match sig_port {
                        Some(1) => (ins[0], ins[1]),
                        _ => (ins[1], ins[0]),
                    };
                    let row = Matrix::new(1, cf.dim(), cf.constant.clone())
                        .expect("dot operand dims checked by inference");
                    Ok(Some(sf.left_mul(&row)))
                }
                ProductMode::Matrix => {
                    let (cf, sf) = match sig_port {
                        Some(1) => (ins[0], ins[1]),
                        _ => (ins[1], ins[0]),
                    };
                    if cf.dim() == 1 {
                        Ok(Some(sf.scale(cf.constant[0])))
                    } else {
                        // vector constant scaled by a scalar signal: s * c is
                        // linear in the signal: out_i = c_i * s
                        let col = Matrix::column(&cf.constant);
                        Ok(Some(sf.left_mul(&col)))
                    }
                }
            }
        }
        BlockKind::PolyFun { coefficients } => {
            let f = ins[0];
            if f.is_constant() {
                let x = f.constant[0];
                let mut acc = 0.0;
                for &c in coefficients.iter().rev() {
                    acc = acc * x + c;
                }
                let mut out = SignalForm::zero(1, n, m);
                out.constant[0] = acc;
                return Ok(Some(out));
            }
            if coefficients.len() <= 2 {
                // affine polynomial c0 + c1 u stays linear
                let mut out = f.scale(coefficients.get(1).copied().unwrap_or(0.0));
                out.constant[0] += coefficients[0];
                return Ok(Some(out));
            }
            Err(nonlinear("a polynomial of degree 2 or higher on a signal"))
        }
        BlockKind::Transpose => Ok(Some(ins[0].clone())),
        _ => Ok(None),
    }
}

// ---------------------------------------------------------------------------
// Exchange schemas
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestedCertificate {
    Lyapunov,
    L2gain,
}

/// What an external analysis tool needs: the plant data, the noise
/// characteristics, and which certificate kinds are wanted.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnalysisRequest {
    pub ss: StateSpace,
    pub noise: NoiseSpec,
    pub requested: Vec<RequestedCertificate>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RequestDoc {
    schema: String,
    #[serde(rename = "A")]
    a: Matrix,
    #[serde(rename = "B")]
    b: Matrix,
    #[serde(rename = "C")]
    c: Matrix,
    #[serde(rename = "D")]
    d: Matrix,
    time: TimeDomain,
    state_names: Vec<String>,
    input_bindings: Vec<String>,
    output_bindings: Vec<String>,
    #[serde(default)]
    initial_state: Vec<f64>,
    noise: NoiseSpec,
    requested: Vec<RequestedCertificate>,
    /// Run options echoed by the CLI; ignored on import.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// Serialize an analysis request in the versioned `analysis-request-v1`
/// exchange schema (row-major matrices).
pub fn export_analysis_request(req: &AnalysisRequest) -> String {
    let doc = RequestDoc {
        schema: "analysis-request-v1".into(),
        a: req.ss.a.clone(),
        b: req.ss.b.clone(),
        c: req.ss.c.clone(),
        d: req.ss.d.clone(),
        time: req.ss.time,
        state_names: req.ss.state_names.clone(),
        input_bindings: req.ss.input_bindings.clone(),
        output_bindings: req.ss.output_bindings.clone(),
        initial_state: req.ss.initial_state.clone(),
        noise: req.noise.clone(),
        requested: req.requested.clone(),
        provenance: None,
    };
    serde_json::to_string_pretty(&doc).expect("request serialization cannot fail")
}

/// Parse an `analysis-request-v1` document back into an [`AnalysisRequest`].
pub fn import_analysis_request(text: &str) -> Result<AnalysisRequest, Vec<Diagnostic>> {
    let doc: RequestDoc = serde_json::from_str(text).map_err(|e| vec![json_diag(&e)])?;
    if doc.schema != "analysis-request-v1" {
        return Err(vec![Diagnostic::new(
            "schema-error",
            format!(
                "expected schema `analysis-request-v1`, got `{}`",
                doc.schema
            ),
        )]);
    }
    Ok(AnalysisRequest {
        ss: StateSpace {
            a: doc.a,
            b: doc.b,
            c: doc.c,
            d: doc.d,
            state_names: doc.state_names,
            input_bindings: doc.input_bindings,
            output_bindings: doc.output_bindings,
            initial_state: doc.initial_state,
            time: doc.time,
        },
        noise: doc.noise,
        requested: doc.requested,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CertificateDoc {
    schema: String,
    kind: String,
    #[serde(rename = "P")]
    p: Matrix,
    #[serde(default)]
    alpha: Option<f64>,
    /// Run options echoed by the CLI; ignored on import.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

/// Serialize a certificate in the `certificate-v1` exchange schema.
pub fn export_certificate(cert: &Certificate) -> String {
    let doc = CertificateDoc {
        schema: "certificate-v1".into(),
        kind: cert.kind.wire_name().into(),
        p: cert.p.clone(),
        alpha: cert.alpha,
        provenance: None,
    };
    serde_json::to_string_pretty(&doc).expect("certificate serialization cannot fail")
}

/// Parse an externally produced certificate. The result is `unverified`
/// until `certificates::verify_certificate` re-derives its defining
/// inequality against a concrete model.
pub fn import_certificate(text: &str) -> Result<Certificate, Vec<Diagnostic>> {
    let doc: CertificateDoc = serde_json::from_str(text).map_err(|e| vec![json_diag(&e)])?;
    if doc.schema != "certificate-v1" {
        return Err(vec![Diagnostic::new(
            "schema-error",
            format!("expected schema `certificate-v1`, got `{}`", doc.schema),
        )]);
    }
    let kind = match doc.kind.as_str() {
        // Bare "lyapunov" resolves to the time domain of whatever model it
        // is verified against; continuous is the storage default.
        "lyapunov" | "lyapunov_continuous" => CertificateKind::LyapunovContinuous,
        "lyapunov_discrete" => CertificateKind::LyapunovDiscrete,
        "l2gain" => CertificateKind::L2Gain,
        other => {
            return Err(vec![Diagnostic::new(
                "schema-error",
                format!("unknown certificate kind `{other}`"),
            )])
        }
    };
    if !doc.p.is_square() {
        return Err(vec![Diagnostic::new(
            "schema-error",
            format!(
                "certificate P must be square, got {}x{}",
                doc.p.rows(),
                doc.p.cols()
            ),
        )]);
    }
    Ok(Certificate {
        kind,
        p: doc.p,
        alpha: doc.alpha,
        residual: f64::NAN,
        status: CertStatus::Unverified,
        provenance: Provenance::External,
    })
}

fn json_diag(e: &serde_json::Error) -> Diagnostic {
    Diagnostic::new("schema-error", e.to_string()).with_position(e.line(), e.column())
}
