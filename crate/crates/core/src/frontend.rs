//! Parse and print the textual model format (`.pbm.json`), and render
//! diagrams as GraphViz DOT.
//!
//! The format is plain JSON: top-level keys `version`, `blocks`, `wires`,
//! `annotations`, plus optional `sample_time` and `metadata`. A block is
//! `{id, kind, params, region}`; a wire is `{src: [id, port], dst: [id,
//! port], marker}`. Matrices serialize as nested row arrays, vectors as flat
//! arrays. `region` defaults to `executable`, `marker` to `plain`. Unknown
//! keys are errors. Printing is canonical: keys sorted, blocks sorted by id,
//! wires sorted by endpoints, numbers in shortest round-trip-exact form, so
//! repeated printing is byte-stable.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::annotator::AnnotationSpec;
use crate::diag::Diagnostic;
use crate::model_ir::{
    AssertCheck, Block, BlockKind, GainMode, ModelGraph, NoiseKind, NoiseSpec, PortRef,
    ProductMode, Region, Wire, WireMarker,
};
use crate::numkernel::Matrix;
use crate::tol;

/// A parsed model file: the diagram plus unexpanded annotation requests.
#[derive(Clone, Debug)]
pub struct ModelDocument {
    pub version: String,
    pub graph: ModelGraph,
    pub annotations: Vec<AnnotationSpec>,
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Cx {
    diags: Vec<Diagnostic>,
}

impl Cx {
    fn err(&mut self, code: &str, path: &str, msg: impl Into<String>) {
        self.diags
            .push(Diagnostic::new(code, format!("{path}: {}", msg.into())));
    }
}

fn as_object<'v>(v: &'v Value, path: &str, cx: &mut Cx) -> Option<&'v Map<String, Value>> {
    match v.as_object() {
        Some(m) => Some(m),
        None => {
            cx.err("schema-error", path, "expected an object");
            None
        }
    }
}

fn check_keys(m: &Map<String, Value>, allowed: &[&str], path: &str, cx: &mut Cx) {
    for k in m.keys() {
        if !allowed.contains(&k.as_str()) {
            cx.err("schema-error", path, format!("unknown key `{k}`"));
        }
    }
}

fn get_str(m: &Map<String, Value>, key: &str, path: &str, cx: &mut Cx) -> Option<String> {
    match m.get(key) {
        Some(Value::String(s)) => Some(s.clone()),
        Some(_) => {
            cx.err(
                "schema-error",
                &format!("{path}/{key}"),
                "expected a string",
            );
            None
        }
        None => {
            cx.err("schema-error", path, format!("missing key `{key}`"));
            None
        }
    }
}

fn get_f64(v: &Value, path: &str, cx: &mut Cx) -> Option<f64> {
    match v.as_f64() {
        Some(x) if x.is_finite() => Some(x),
        Some(_) => {
            cx.err("schema-error", path, "number must be finite");
            None
        }
        None => {
            cx.err("schema-error", path, "expected a number");
            None
        }
    }
}

fn get_usize(v: &Value, path: &str, cx: &mut Cx) -> Option<usize> {
    match v.as_u64() {
        Some(x) => Some(x as usize),
        None => {
            cx.err("schema-error", path, "expected a nonnegative integer");
            None
        }
    }
}

fn get_vector(v: &Value, path: &str, cx: &mut Cx) -> Option<Vec<f64>> {
    let arr = v.as_array()?;
    let mut out = Vec::with_capacity(arr.len());
    for (i, e) in arr.iter().enumerate() {
        out.push(get_f64(e, &format!("{path}[{i}]"), cx)?);
    }
    Some(out)
}

fn get_matrix(v: &Value, path: &str, cx: &mut Cx) -> Option<Matrix> {
    let Some(arr) = v.as_array() else {
        cx.err(
            "schema-error",
            path,
            "expected a matrix (array of row arrays)",
        );
        return None;
    };
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(arr.len());
    for (i, row) in arr.iter().enumerate() {
        let rp = format!("{path}[{i}]");
        let Some(r) = row.as_array() else {
            cx.err("schema-error", &rp, "expected a row array");
            return None;
        };
        let mut out = Vec::with_capacity(r.len());
        for (j, e) in r.iter().enumerate() {
            out.push(get_f64(e, &format!("{rp}[{j}]"), cx)?);
        }
        rows.push(out);
    }
    match Matrix::from_rows(&rows) {
        Ok(m) => Some(m),
        Err(e) => {
            cx.err("schema-error", path, e.to_string());
            None
        }
    }
}

fn get_port_ref(v: &Value, path: &str, cx: &mut Cx) -> Option<PortRef> {
    let Some(arr) = v.as_array() else {
        cx.err("schema-error", path, "expected [\"block\", port]");
        return None;
    };
    if arr.len() != 2 {
        cx.err("schema-error", path, "expected exactly [\"block\", port]");
        return None;
    }
    let block = arr[0].as_str().map(str::to_string).or_else(|| {
        cx.err("schema-error", path, "block id must be a string");
        None
    })?;
    let port = get_usize(&arr[1], path, cx)?;
    Some(PortRef { block, port })
}

fn parse_noise(v: &Value, path: &str, cx: &mut Cx) -> Option<NoiseSpec> {
    parse_noise_allowing(v, path, cx, &[])
}

fn parse_noise_allowing(v: &Value, path: &str, cx: &mut Cx, extra: &[&str]) -> Option<NoiseSpec> {
    let m = as_object(v, path, cx)?;
    let mut allowed = vec!["kind", "bound"];
    allowed.extend_from_slice(extra);
    check_keys(m, &allowed, path, cx);
    let kind = match get_str(m, "kind", path, cx)?.as_str() {
        "zero" => NoiseKind::Zero,
        "unit_peak_uniform" => NoiseKind::UnitPeakUniform,
        "bounded_power" => NoiseKind::BoundedPower,
        other => {
            cx.err(
                "schema-error",
                path,
                format!("unknown noise kind `{other}`"),
            );
            return None;
        }
    };
    let bound = match m.get("bound") {
        Some(b) => get_f64(b, &format!("{path}/bound"), cx)?,
        None => 0.0,
    };
    Some(NoiseSpec { kind, bound })
}

fn parse_check(v: &Value, path: &str, cx: &mut Cx) -> Option<AssertCheck> {
    let m = as_object(v, path, cx)?;
    let mode = get_str(m, "mode", path, cx)?;
    match mode.as_str() {
        "value" => {
            check_keys(m, &["mode", "warmup", "ref_block", "ledger"], path, cx);
            let warmup = match m.get("warmup") {
                Some(w) => get_usize(w, &format!("{path}/warmup"), cx)?,
                None => 0,
            };
            let ref_block = match m.get("ref_block") {
                Some(Value::Null) | None => None,
                Some(Value::String(s)) => Some(s.clone()),
                Some(_) => {
                    cx.err(
                        "schema-error",
                        &format!("{path}/ref_block"),
                        "expected a block id",
                    );
                    return None;
                }
            };
            let ledger = m.get("ledger").and_then(Value::as_bool).unwrap_or(false);
            Some(AssertCheck::Value {
                warmup,
                ref_block,
                ledger,
            })
        }
        "decrease_rate" => {
            check_keys(m, &["mode"], path, cx);
            Some(AssertCheck::DecreaseRate)
        }
        "dissipation_rate" => {
            check_keys(
                m,
                &["mode", "v_block", "y2_block", "supply_block"],
                path,
                cx,
            );
            Some(AssertCheck::DissipationRate {
                v_block: get_str(m, "v_block", path, cx)?,
                y2_block: get_str(m, "y2_block", path, cx)?,
                supply_block: get_str(m, "supply_block", path, cx)?,
            })
        }
        other => {
            cx.err(
                "schema-error",
                path,
                format!("unknown check mode `{other}`"),
            );
            None
        }
    }
}

fn parse_kind(
    kind: &str,
    params: &Map<String, Value>,
    path: &str,
    cx: &mut Cx,
) -> Option<BlockKind> {
    let keys = |cx: &mut Cx, allowed: &[&str]| check_keys(params, allowed, path, cx);
    let field =
        |params: &Map<String, Value>, name: &str| -> Option<Value> { params.get(name).cloned() };
    match kind {
        "inport" => {
            keys(cx, &["dim"]);
            let dim = match field(params, "dim") {
                Some(v) => get_usize(&v, &format!("{path}/dim"), cx)?,
                None => 1,
            };
            Some(BlockKind::Inport { dim })
        }
        "outport" => {
            keys(cx, &[]);
            Some(BlockKind::Outport)
        }
        "constant" => {
            keys(cx, &["value"]);
            let v = field(params, "value").or_else(|| {
                cx.err("schema-error", path, "constant needs `value`");
                None
            })?;
            Some(BlockKind::Constant {
                value: get_vector(&v, &format!("{path}/value"), cx)?,
            })
        }
        "gain" => {
            keys(cx, &["gain", "mode"]);
            let gv = field(params, "gain").or_else(|| {
                cx.err("schema-error", path, "gain needs `gain`");
                None
            })?;
            let gain = get_matrix(&gv, &format!("{path}/gain"), cx)?;
            let mode = match field(params, "mode") {
                None => GainMode::Elementwise,
                Some(Value::String(s)) => match s.as_str() {
                    "elementwise" => GainMode::Elementwise,
                    "matrix" => GainMode::Matrix,
                    other => {
                        cx.err("schema-error", path, format!("unknown gain mode `{other}`"));
                        return None;
                    }
                },
                Some(_) => {
                    cx.err("schema-error", &format!("{path}/mode"), "expected a string");
                    return None;
                }
            };
            Some(BlockKind::Gain { gain, mode })
        }
        "sum" => {
            keys(cx, &["signs"]);
            let signs = match field(params, "signs") {
                Some(Value::String(s)) => s,
                _ => {
                    cx.err("schema-error", path, "sum needs string `signs`");
                    return None;
                }
            };
            Some(BlockKind::Sum { signs })
        }
        "product" => {
            keys(cx, &["mode"]);
            let mode = match field(params, "mode") {
                None => ProductMode::Elementwise,
                Some(Value::String(s)) => match s.as_str() {
                    "elementwise" => ProductMode::Elementwise,
                    "matrix" => ProductMode::Matrix,
                    "dot" => ProductMode::Dot,
                    other => {
                        cx.err(
                            "schema-error",
                            path,
                            format!("unknown product mode `{other}`"),
                        );
                        return None;
                    }
                },
                Some(_) => {
                    cx.err("schema-error", &format!("{path}/mode"), "expected a string");
                    return None;
                }
            };
            Some(BlockKind::Product { mode })
        }
        "integrator" | "unit_delay" => {
            keys(cx, &["initial"]);
            let v = field(params, "initial").or_else(|| {
                cx.err("schema-error", path, "state block needs `initial`");
                None
            })?;
            let initial = get_vector(&v, &format!("{path}/initial"), cx)?;
            Some(if kind == "integrator" {
                BlockKind::Integrator { initial }
            } else {
                BlockKind::UnitDelay { initial }
            })
        }
        "state_space" => {
            keys(cx, &["a", "b", "c", "d", "initial"]);
            let mut require = |name: &str| {
                field(params, name).or_else(|| {
                    cx.err("schema-error", path, format!("state_space needs `{name}`"));
                    None
                })
            };
            let (av, bv, cv, dv) = (require("a")?, require("b")?, require("c")?, require("d")?);
            let a = get_matrix(&av, &format!("{path}/a"), cx)?;
            let b = get_matrix(&bv, &format!("{path}/b"), cx)?;
            let c = get_matrix(&cv, &format!("{path}/c"), cx)?;
            let d = get_matrix(&dv, &format!("{path}/d"), cx)?;
            let initial = match field(params, "initial") {
                Some(v) => get_vector(&v, &format!("{path}/initial"), cx)?,
                None => vec![0.0; a.rows()],
            };
            Some(BlockKind::StateSpace {
                a,
                b,
                c,
                d,
                initial,
            })
        }
        "noise_source" => {
            keys(cx, &["kind", "bound", "dim"]);
            let spec = parse_noise_allowing(&Value::Object(params.clone()), path, cx, &["dim"])?;
            let dim = match field(params, "dim") {
                Some(v) => get_usize(&v, &format!("{path}/dim"), cx)?,
                None => 1,
            };
            // `dim` rides in the same object as the noise spec keys.
            Some(BlockKind::NoiseSource { spec, dim })
        }
        "poly_fun" => {
            keys(cx, &["coefficients"]);
            let v = field(params, "coefficients").or_else(|| {
                cx.err("schema-error", path, "poly_fun needs `coefficients`");
                None
            })?;
            Some(BlockKind::PolyFun {
                coefficients: get_vector(&v, &format!("{path}/coefficients"), cx)?,
            })
        }
        "transpose" => {
            keys(cx, &[]);
            Some(BlockKind::Transpose)
        }
        "quadratic_form" => {
            keys(cx, &["p"]);
            let v = field(params, "p").or_else(|| {
                cx.err("schema-error", path, "quadratic_form needs `p`");
                None
            })?;
            Some(BlockKind::QuadraticForm {
                p: get_matrix(&v, &format!("{path}/p"), cx)?,
            })
        }
        "assert_le0" => {
            keys(cx, &["tolerance", "check"]);
            let tolerance = match field(params, "tolerance") {
                Some(v) => get_f64(&v, &format!("{path}/tolerance"), cx)?,
                None => tol::scaled(tol::ASSERT_DEFAULT),
            };
            let check = match field(params, "check") {
                Some(v) => parse_check(&v, &format!("{path}/check"), cx)?,
                None => AssertCheck::default(),
            };
            Some(BlockKind::AssertLE0 { tolerance, check })
        }
        "running_max" => {
            keys(cx, &[]);
            Some(BlockKind::RunningMax)
        }
        "scope" => {
            keys(cx, &[]);
            Some(BlockKind::Scope)
        }
        other => {
            cx.err(
                "schema-error",
                path,
                format!("unknown block kind `{other}`"),
            );
            None
        }
    }
}

fn parse_block(v: &Value, path: &str, cx: &mut Cx) -> Option<Block> {
    let m = as_object(v, path, cx)?;
    check_keys(m, &["id", "kind", "params", "region"], path, cx);
    let id = get_str(m, "id", path, cx)?;
    let kind_name = get_str(m, "kind", path, cx)?;
    let empty = Map::new();
    let params = match m.get("params") {
        Some(Value::Object(p)) => p,
        Some(_) => {
            cx.err(
                "schema-error",
                &format!("{path}/params"),
                "expected an object",
            );
            return None;
        }
        None => &empty,
    };
    let kind = parse_kind(&kind_name, params, &format!("{path}/params"), cx)?;
    let region = match m.get("region") {
        None => Region::Executable,
        Some(Value::String(s)) => match s.as_str() {
            "executable" => Region::Executable,
            "annotation" => Region::Annotation,
            other => {
                cx.err(
                    "schema-error",
                    &format!("{path}/region"),
                    format!("unknown region `{other}`"),
                );
                return None;
            }
        },
        Some(_) => {
            cx.err(
                "schema-error",
                &format!("{path}/region"),
                "expected a string",
            );
            return None;
        }
    };
    Some(Block { id, kind, region })
}

fn parse_wire(v: &Value, path: &str, cx: &mut Cx) -> Option<Wire> {
    let m = as_object(v, path, cx)?;
    check_keys(m, &["src", "dst", "marker", "dim"], path, cx);
    let src = get_port_ref(
        m.get("src").unwrap_or(&Value::Null),
        &format!("{path}/src"),
        cx,
    )?;
    let dst = get_port_ref(
        m.get("dst").unwrap_or(&Value::Null),
        &format!("{path}/dst"),
        cx,
    )?;
    let marker = match m.get("marker") {
        None => WireMarker::Plain,
        Some(Value::String(s)) => match s.as_str() {
            "plain" => WireMarker::Plain,
            "state" => WireMarker::State,
            other => {
                cx.err(
                    "schema-error",
                    &format!("{path}/marker"),
                    format!("unknown marker `{other}`"),
                );
                return None;
            }
        },
        Some(_) => {
            cx.err(
                "schema-error",
                &format!("{path}/marker"),
                "expected a string",
            );
            return None;
        }
    };
    Some(Wire {
        src,
        dst,
        marker,
        dim: None,
    })
}

fn parse_graph(m: &Map<String, Value>, path: &str, cx: &mut Cx) -> Option<ModelGraph> {
    let mut graph = ModelGraph::default();
    if let Some(st) = m.get("sample_time") {
        if !st.is_null() {
            let h = get_f64(st, &format!("{path}/sample_time"), cx)?;
            if h <= 0.0 {
                cx.err(
                    "schema-error",
                    &format!("{path}/sample_time"),
                    "sample time must be positive",
                );
                return None;
            }
            graph.sample_time = Some(h);
        }
    }
    if let Some(meta) = m.get("metadata") {
        let mm = as_object(meta, &format!("{path}/metadata"), cx)?;
        for (k, v) in mm {
            match v.as_str() {
                Some(s) => {
                    graph.metadata.insert(k.clone(), s.to_string());
                }
                None => cx.err(
                    "schema-error",
                    &format!("{path}/metadata/{k}"),
                    "metadata values must be strings",
                ),
            }
        }
    }
    match m.get("blocks") {
        Some(Value::Array(blocks)) => {
            for (i, b) in blocks.iter().enumerate() {
                let before = cx.diags.len();
                match parse_block(b, &format!("{path}/blocks[{i}]"), cx) {
                    Some(blk) => graph.blocks.push(blk),
                    None if cx.diags.len() == before => cx.err(
                        "schema-error",
                        &format!("{path}/blocks[{i}]"),
                        "malformed block",
                    ),
                    None => {}
                }
            }
        }
        _ => cx.err("schema-error", path, "missing `blocks` array"),
    }
    match m.get("wires") {
        Some(Value::Array(wires)) => {
            for (i, w) in wires.iter().enumerate() {
                if let Some(wire) = parse_wire(w, &format!("{path}/wires[{i}]"), cx) {
                    graph.wires.push(wire);
                }
            }
        }
        _ => cx.err("schema-error", path, "missing `wires` array"),
    }
    if cx.diags.is_empty() {
        Some(graph)
    } else {
        None
    }
}

fn parse_annotation(v: &Value, path: &str, cx: &mut Cx) -> Option<AnnotationSpec> {
    let m = as_object(v, path, cx)?;
    let kind = get_str(m, "kind", path, cx)?;
    let states = |m: &Map<String, Value>, cx: &mut Cx| -> Option<Vec<PortRef>> {
        match m.get("states") {
            Some(Value::Array(arr)) => {
                let mut out = Vec::new();
                for (i, s) in arr.iter().enumerate() {
                    out.push(get_port_ref(s, &format!("{path}/states[{i}]"), cx)?);
                }
                Some(out)
            }
            _ => {
                cx.err("schema-error", path, "missing `states` array");
                None
            }
        }
    };
    match kind.as_str() {
        "stability" => {
            check_keys(m, &["kind", "p", "noise", "states"], path, cx);
            let p = match m.get("p") {
                Some(Value::Null) | None => None,
                Some(v) => Some(get_matrix(v, &format!("{path}/p"), cx)?),
            };
            let noise = match m.get("noise") {
                Some(Value::Null) | None => None,
                Some(v) => Some(parse_noise(v, &format!("{path}/noise"), cx)?),
            };
            Some(AnnotationSpec::Stability {
                p,
                noise,
                states: states(m, cx)?,
            })
        }
        "l2gain" => {
            check_keys(
                m,
                &["kind", "alpha", "noise_input", "output", "states"],
                path,
                cx,
            );
            let alpha = match m.get("alpha") {
                Some(Value::Null) | None => None,
                Some(v) => Some(get_f64(v, &format!("{path}/alpha"), cx)?),
            };
            Some(AnnotationSpec::L2gain {
                alpha,
                noise_input: get_str(m, "noise_input", path, cx)?,
                output: get_str(m, "output", path, cx)?,
                states: states(m, cx)?,
            })
        }
        "l1_perf_bound" => {
            check_keys(
                m,
                &["kind", "theta_max", "gamma_adapt", "p", "error_wire"],
                path,
                cx,
            );
            Some(AnnotationSpec::L1PerfBound {
                theta_max: get_f64(m.get("theta_max")?, &format!("{path}/theta_max"), cx)?,
                gamma_adapt: get_f64(m.get("gamma_adapt")?, &format!("{path}/gamma_adapt"), cx)?,
                p: get_matrix(m.get("p")?, &format!("{path}/p"), cx)?,
                error_wire: get_port_ref(m.get("error_wire")?, &format!("{path}/error_wire"), cx)?,
            })
        }
        "manual" => {
            check_keys(m, &["kind", "graph", "bindings"], path, cx);
            let gv = m.get("graph").cloned().or_else(|| {
                cx.err("schema-error", path, "manual annotation needs `graph`");
                None
            })?;
            let gm = as_object(&gv, &format!("{path}/graph"), cx)?;
            check_keys(gm, &["blocks", "wires"], &format!("{path}/graph"), cx);
            let mut graph = parse_graph(gm, &format!("{path}/graph"), cx)?;
            // Manual graphs are annotation-region by definition; the region
            // key may be omitted inside them.
            for b in &mut graph.blocks {
                b.region = Region::Annotation;
            }
            let mut bindings = BTreeMap::new();
            if let Some(bv) = m.get("bindings") {
                let bm = as_object(bv, &format!("{path}/bindings"), cx)?;
                for (k, v) in bm {
                    bindings.insert(
                        k.clone(),
                        get_port_ref(v, &format!("{path}/bindings/{k}"), cx)?,
                    );
                }
            }
            Some(AnnotationSpec::Manual { graph, bindings })
        }
        other => {
            cx.err(
                "schema-error",
                path,
                format!("unknown annotation kind `{other}`"),
            );
            None
        }
    }
}

/// Parse a model document. All structural problems are reported as
/// diagnostics (never a panic); syntax errors carry line and column, schema
/// errors carry a JSON path, semantic errors are delegated to validation and
/// dimension inference. The returned graph has wire dimensions filled.
pub fn parse_model(text: &str) -> Result<ModelDocument, Vec<Diagnostic>> {
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            return Err(vec![
                Diagnostic::new("syntax-error", e.to_string()).with_position(e.line(), e.column())
            ]);
        }
    };
    let mut cx = Cx { diags: Vec::new() };
    let Some(root) = value.as_object() else {
        return Err(vec![Diagnostic::new(
            "schema-error",
            "top level must be an object",
        )]);
    };
    check_keys(
        root,
        &[
            "version",
            "sample_time",
            "metadata",
            "blocks",
            "wires",
            "annotations",
        ],
        "",
        &mut cx,
    );
    let version = get_str(root, "version", "", &mut cx).unwrap_or_default();
    if !cx.diags.is_empty() {
        return Err(cx.diags);
    }
    if version != "1" {
        return Err(vec![Diagnostic::new(
            "schema-error",
            format!("unsupported format version `{version}` (expected \"1\")"),
        )]);
    }
    let Some(graph) = parse_graph(root, "", &mut cx) else {
        return Err(cx.diags);
    };
    let mut annotations = Vec::new();
    if let Some(av) = root.get("annotations") {
        match av {
            Value::Array(arr) => {
                for (i, a) in arr.iter().enumerate() {
                    match parse_annotation(a, &format!("/annotations[{i}]"), &mut cx) {
                        Some(spec) => annotations.push(spec),
                        None => return Err(cx.diags),
                    }
                }
            }
            _ => {
                cx.err("schema-error", "/annotations", "expected an array");
                return Err(cx.diags);
            }
        }
    }
    if !cx.diags.is_empty() {
        return Err(cx.diags);
    }

    // Semantic checks: validation plus dimension inference.
    graph.validate().map_err(|mut d| {
        for diag in &mut d {
            diag.code = format!("semantic-{}", diag.code);
        }
        d
    })?;
    let graph = graph.infer_dimensions()?;
    Ok(ModelDocument {
        version,
        graph,
        annotations,
    })
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

fn matrix_value(m: &Matrix) -> Value {
    Value::Array(
        (0..m.rows())
            .map(|i| Value::Array(m.row(i).iter().map(|&x| json!(x)).collect()))
            .collect(),
    )
}

fn vector_value(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| json!(x)).collect())
}

fn noise_value(spec: &NoiseSpec) -> Value {
    json!({
        "kind": match spec.kind {
            NoiseKind::Zero => "zero",
            NoiseKind::UnitPeakUniform => "unit_peak_uniform",
            NoiseKind::BoundedPower => "bounded_power",
        },
        "bound": spec.bound,
    })
}

fn check_value(check: &AssertCheck) -> Value {
    match check {
        AssertCheck::Value {
            warmup,
            ref_block,
            ledger,
        } => {
            let mut m = Map::new();
            m.insert("mode".into(), json!("value"));
            m.insert("warmup".into(), json!(warmup));
            if let Some(r) = ref_block {
                m.insert("ref_block".into(), json!(r));
            }
            if *ledger {
                m.insert("ledger".into(), json!(true));
            }
            Value::Object(m)
        }
        AssertCheck::DecreaseRate => json!({"mode": "decrease_rate"}),
        AssertCheck::DissipationRate {
            v_block,
            y2_block,
            supply_block,
        } => json!({
            "mode": "dissipation_rate",
            "v_block": v_block,
            "y2_block": y2_block,
            "supply_block": supply_block,
        }),
    }
}

fn kind_params(kind: &BlockKind) -> Value {
    match kind {
        BlockKind::Inport { dim } => json!({ "dim": dim }),
        BlockKind::Outport | BlockKind::Transpose | BlockKind::RunningMax | BlockKind::Scope => {
            json!({})
        }
        BlockKind::Constant { value } => json!({ "value": vector_value(value) }),
        BlockKind::Gain { gain, mode } => json!({
            "gain": matrix_value(gain),
            "mode": match mode { GainMode::Elementwise => "elementwise", GainMode::Matrix => "matrix" },
        }),
        BlockKind::Sum { signs } => json!({ "signs": signs }),
        BlockKind::Product { mode } => json!({
            "mode": match mode {
                ProductMode::Elementwise => "elementwise",
                ProductMode::Matrix => "matrix",
                ProductMode::Dot => "dot",
            },
        }),
        BlockKind::Integrator { initial } => json!({ "initial": vector_value(initial) }),
        BlockKind::UnitDelay { initial } => json!({ "initial": vector_value(initial) }),
        BlockKind::StateSpace {
            a,
            b,
            c,
            d,
            initial,
        } => json!({
            "a": matrix_value(a),
            "b": matrix_value(b),
            "c": matrix_value(c),
            "d": matrix_value(d),
            "initial": vector_value(initial),
        }),
        BlockKind::NoiseSource { spec, dim } => {
            let mut m = noise_value(spec);
            m.as_object_mut().unwrap().insert("dim".into(), json!(dim));
            m
        }
        BlockKind::PolyFun { coefficients } => {
            json!({ "coefficients": vector_value(coefficients) })
        }
        BlockKind::QuadraticForm { p } => json!({ "p": matrix_value(p) }),
        BlockKind::AssertLE0 { tolerance, check } => json!({
            "tolerance": tolerance,
            "check": check_value(check),
        }),
    }
}

fn block_value(b: &Block) -> Value {
    json!({
        "id": b.id,
        "kind": b.kind.name(),
        "params": kind_params(&b.kind),
        "region": match b.region { Region::Executable => "executable", Region::Annotation => "annotation" },
    })
}

fn wire_value(w: &Wire) -> Value {
    json!({
        "src": [w.src.block, w.src.port],
        "dst": [w.dst.block, w.dst.port],
        "marker": match w.marker { WireMarker::Plain => "plain", WireMarker::State => "state" },
    })
}

fn graph_values(g: &ModelGraph) -> (Value, Value) {
    let mut blocks = g.blocks.clone();
    blocks.sort_by(|a, b| a.id.cmp(&b.id));
    let mut wires = g.wires.clone();
    wires.sort_by(|a, b| (&a.src, &a.dst).cmp(&(&b.src, &b.dst)));
    (
        Value::Array(blocks.iter().map(block_value).collect()),
        Value::Array(wires.iter().map(wire_value).collect()),
    )
}

fn annotation_value(spec: &AnnotationSpec) -> Value {
    match spec {
        AnnotationSpec::Stability { p, noise, states } => {
            let mut m = Map::new();
            m.insert("kind".into(), json!("stability"));
            if let Some(p) = p {
                m.insert("p".into(), matrix_value(p));
            }
            if let Some(n) = noise {
                m.insert("noise".into(), noise_value(n));
            }
            m.insert(
                "states".into(),
                Value::Array(states.iter().map(|s| json!([s.block, s.port])).collect()),
            );
            Value::Object(m)
        }
        AnnotationSpec::L2gain {
            alpha,
            noise_input,
            output,
            states,
        } => {
            let mut m = Map::new();
            m.insert("kind".into(), json!("l2gain"));
            if let Some(a) = alpha {
                m.insert("alpha".into(), json!(a));
            }
            m.insert("noise_input".into(), json!(noise_input));
            m.insert("output".into(), json!(output));
            m.insert(
                "states".into(),
                Value::Array(states.iter().map(|s| json!([s.block, s.port])).collect()),
            );
            Value::Object(m)
        }
        AnnotationSpec::L1PerfBound {
            theta_max,
            gamma_adapt,
            p,
            error_wire,
        } => json!({
            "kind": "l1_perf_bound",
            "theta_max": theta_max,
            "gamma_adapt": gamma_adapt,
            "p": matrix_value(p),
            "error_wire": [error_wire.block, error_wire.port],
        }),
        AnnotationSpec::Manual { graph, bindings } => {
            let (blocks, wires) = graph_values(graph);
            let b: Map<String, Value> = bindings
                .iter()
                .map(|(k, v)| (k.clone(), json!([v.block, v.port])))
                .collect();
            json!({
                "kind": "manual",
                "graph": { "blocks": blocks, "wires": wires },
                "bindings": Value::Object(b),
            })
        }
    }
}

/// Canonical serialization: keys sorted, blocks sorted by id, wires sorted
/// by endpoints, shortest round-trip-exact numbers. Byte-stable across
/// repeated printing.
pub fn print_model(doc: &ModelDocument) -> String {
    let (blocks, wires) = graph_values(&doc.graph);
    let mut root = Map::new();
    root.insert("version".into(), json!(doc.version));
    if let Some(h) = doc.graph.sample_time {
        root.insert("sample_time".into(), json!(h));
    }
    if !doc.graph.metadata.is_empty() {
        let meta: Map<String, Value> = doc
            .graph
            .metadata
            .iter()
            .map(|(k, v)| (k.clone(), json!(v)))
            .collect();
        root.insert("metadata".into(), Value::Object(meta));
    }
    root.insert("blocks".into(), blocks);
    root.insert("wires".into(), wires);
    if !doc.annotations.is_empty() {
        root.insert(
            "annotations".into(),
            Value::Array(doc.annotations.iter().map(annotation_value).collect()),
        );
    }
    let mut out = serde_json::to_string_pretty(&Value::Object(root)).expect("finite numbers only");
    out.push('\n');
    out
}

// ---------------------------------------------------------------------------
// DOT rendering
// ---------------------------------------------------------------------------

fn dot_escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// GraphViz rendering: annotation blocks red, executable black, state wires
/// bold with the label `x(t)`.
pub fn render_dot(doc: &ModelDocument) -> String {
    let g = &doc.graph;
    let name = g
        .metadata
        .get("name")
        .cloned()
        .unwrap_or_else(|| "model".into());
    let mut out = String::new();
    out.push_str(&format!("digraph \"{}\" {{\n", dot_escape(&name)));
    out.push_str("  rankdir=LR;\n  node [shape=box, fontname=\"Helvetica\"];\n");
    let mut blocks = g.blocks.clone();
    blocks.sort_by(|a, b| a.id.cmp(&b.id));
    for b in &blocks {
        let label = format!("{}\\n{}", dot_escape(&b.id), b.kind.name());
        match b.region {
            Region::Annotation => out.push_str(&format!(
                "  \"{}\" [label=\"{}\", color=red, fontcolor=red];\n",
                dot_escape(&b.id),
                label
            )),
            Region::Executable => out.push_str(&format!(
                "  \"{}\" [label=\"{}\"];\n",
                dot_escape(&b.id),
                label
            )),
        }
    }
    let mut wires = g.wires.clone();
    wires.sort_by(|a, b| (&a.src, &a.dst).cmp(&(&b.src, &b.dst)));
    for w in &wires {
        let attrs = match w.marker {
            WireMarker::State => " [penwidth=2.0, style=bold, label=\"x(t)\"]",
            WireMarker::Plain => "",
        };
        out.push_str(&format!(
            "  \"{}\" -> \"{}\"{};\n",
            dot_escape(&w.src.block),
            dot_escape(&w.dst.block),
            attrs
        ));
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": "1",
        "blocks": [
            {"id": "u", "kind": "inport"},
            {"id": "g", "kind": "gain", "params": {"gain": [[2.0]]}},
            {"id": "y", "kind": "outport"}
        ],
        "wires": [
            {"src": ["u", 0], "dst": ["g", 0]},
            {"src": ["g", 0], "dst": ["y", 0]}
        ]
    }"#;

    #[test]
    fn minimal_document_parses() {
        let doc = parse_model(MINIMAL).unwrap();
        assert_eq!(doc.graph.blocks.len(), 3);
        assert_eq!(doc.graph.wires.len(), 2);
        assert_eq!(doc.graph.wires[0].dim, Some(1));
    }

    #[test]
    fn unknown_wire_target_is_semantic_error() {
        let text = MINIMAL.replace(
            "[\"g\", 0], \"dst\": [\"y\", 0]",
            "[\"foo\", 0], \"dst\": [\"y\", 0]",
        );
        let diags = parse_model(&text).unwrap_err();
        assert!(diags.iter().any(|d| d.message.contains("foo")));
    }

    #[test]
    fn duplicate_block_id_is_semantic_error() {
        let text = MINIMAL.replace(
            "\"id\": \"u\", \"kind\": \"inport\"",
            "\"id\": \"g\", \"kind\": \"inport\"",
        );
        let diags = parse_model(&text).unwrap_err();
        assert!(diags.iter().any(|d| d.code.contains("duplicate-block-id")));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"version\": \"1\",", "\"version\": \"1\", \"extra\": 1,");
        let diags = parse_model(&text).unwrap_err();
        assert!(diags.iter().any(|d| d.message.contains("extra")));
    }

    #[test]
    fn syntax_error_has_position() {
        let diags = parse_model("{ not json").unwrap_err();
        assert_eq!(diags[0].code, "syntax-error");
        assert!(diags[0].position.is_some());
    }

    #[test]
    fn roundtrip_is_identity() {
        let doc = parse_model(MINIMAL).unwrap();
        let printed = print_model(&doc);
        let again = parse_model(&printed).unwrap();
        assert!(doc.graph.structurally_equal(&again.graph));
        assert_eq!(doc.annotations, again.annotations);
        // canonical form is byte-stable
        assert_eq!(printed, print_model(&again));
    }

    #[test]
    fn fractions_roundtrip_bit_exact() {
        let text = MINIMAL.replace("[[2.0]]", "[[0.1]]");
        let doc = parse_model(&text).unwrap();
        let printed = print_model(&doc);
        let again = parse_model(&printed).unwrap();
        let gain = |d: &ModelDocument| match &d.graph.block("g").unwrap().kind {
            BlockKind::Gain { gain, .. } => gain[(0, 0)],
            _ => unreachable!(),
        };
        assert_eq!(gain(&doc).to_bits(), 0.1f64.to_bits());
        assert_eq!(gain(&doc).to_bits(), gain(&again).to_bits());
    }

    #[test]
    fn dot_styles_regions_and_state_wires() {
        let mut doc = parse_model(MINIMAL).unwrap();
        doc.graph.blocks.push(Block {
            id: "qf".into(),
            kind: BlockKind::QuadraticForm {
                p: Matrix::identity(1),
            },
            region: Region::Annotation,
        });
        doc.graph.blocks.push(Block {
            id: "as".into(),
            kind: BlockKind::AssertLE0 {
                tolerance: 1e-9,
                check: AssertCheck::default(),
            },
            region: Region::Annotation,
        });
        doc.graph.wires.push(Wire {
            src: PortRef::new("g", 0),
            dst: PortRef::new("qf", 0),
            marker: WireMarker::State,
            dim: None,
        });
        doc.graph.wires.push(Wire {
            src: PortRef::new("qf", 0),
            dst: PortRef::new("as", 0),
            marker: WireMarker::Plain,
            dim: None,
        });
        let dot = render_dot(&doc);
        assert!(dot.contains("color=red"));
        assert!(dot.contains("penwidth") && dot.contains("x(t)"));
    }

    #[test]
    fn dot_without_annotations_has_no_red() {
        let doc = parse_model(MINIMAL).unwrap();
        assert!(!render_dot(&doc).contains("color=red"));
    }
}
