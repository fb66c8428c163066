//! Execute models and check every emitted assertion along trajectories.
//!
//! Discrete graphs step exactly at the model's sample time; continuous
//! graphs integrate all integrator and state-space states (annotation-region
//! integrators included) with fixed-step RK4. Noise sources draw from
//! named splittable streams seeded by the run seed, held constant over each
//! step, so traces are bit-reproducible. Assertion semantics:
//!
//! - `value` checks hold from their warmup step on, with tolerance
//!   `tol * (1 + |ref|)` against a recorded reference signal.
//! - `decrease_rate` checks difference the input energy function:
//!   `(V_k - V_{k-1}) / h <= 1e-6 * (1 + max|V|)`.
//! - `dissipation_rate` checks the continuous supply inequality by finite
//!   differences, with the supply read at the step that drove the
//!   transition and the output energy trapezoid-averaged.

mod interp;
mod noise;

pub use interp::{interpret_dataflow, DataflowTrace};
pub use noise::NoiseStream;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_ir::{AssertCheck, Block, BlockKind, GainMode, ModelGraph, ProductMode, Region};
use crate::numkernel::vec_dot;
use crate::tol;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMethod {
    /// Exact stepping of a discrete graph at its sample time.
    ExactDiscrete,
    /// Fixed-step fourth-order Runge-Kutta for continuous graphs.
    Rk4,
}

/// External drive for inports (absent inports read zero).
#[derive(Clone, Debug)]
pub enum InputDrive {
    Constant(Vec<f64>),
    /// One sample per step; the last sample holds if the horizon is longer.
    Samples(Vec<Vec<f64>>),
}

#[derive(Clone, Debug)]
pub struct SimConfig {
    pub horizon: f64,
    pub h_sim: f64,
    pub seed: u64,
    pub method: SimMethod,
    pub inputs: BTreeMap<String, InputDrive>,
}

impl SimConfig {
    pub fn continuous(horizon: f64, h_sim: f64, seed: u64) -> Self {
        SimConfig {
            horizon,
            h_sim,
            seed,
            method: SimMethod::Rk4,
            inputs: BTreeMap::new(),
        }
    }

    pub fn discrete(horizon: f64, seed: u64) -> Self {
        SimConfig {
            horizon,
            h_sim: 0.0,
            seed,
            method: SimMethod::ExactDiscrete,
            inputs: BTreeMap::new(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssertionEntry {
    pub step: usize,
    pub value: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssertionLog {
    pub block: String,
    pub entries: Vec<AssertionEntry>,
}

/// Time-indexed signal values plus the per-assertion log. Signals are keyed
/// by source block id (every block has one output).
#[derive(Clone, Debug, Default)]
pub struct Trace {
    pub times: Vec<f64>,
    pub signals: BTreeMap<String, Vec<Vec<f64>>>,
    pub assertion_log: Vec<AssertionLog>,
}

impl Trace {
    pub fn series(&self, block: &str) -> Option<&Vec<Vec<f64>>> {
        self.signals.get(block)
    }

    pub fn scalar_series(&self, block: &str) -> Option<Vec<f64>> {
        self.signals
            .get(block)
            .map(|s| s.iter().map(|v| v[0]).collect())
    }

    pub fn step_size(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("signal `{wire}` became non-finite at step {step}")]
    NonfiniteSignal { step: usize, wire: String },
    #[error("model failed validation:\n{0}")]
    InvalidModel(String),
    #[error("simulation method {method:?} does not fit the model time domain")]
    MethodMismatch { method: SimMethod },
    #[error("configuration: {0}")]
    BadConfig(String),
    #[error("block `{0}` makes the step relation implicit; cannot order the evaluation")]
    ImplicitRelation(String),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Witness {
    pub step: usize,
    pub value: f64,
    pub tolerance: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssertionReport {
    pub id: String,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_violation: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Witness>,
    /// Accumulated dissipation ledger, where the assertion tracks one:
    /// `sum(supply - absorbed) + V_0 - V_N` (nonnegative up to tolerance
    /// when the certificate holds).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ledger: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckReport {
    pub assertions: Vec<AssertionReport>,
}

impl CheckReport {
    pub fn all_pass(&self) -> bool {
        self.assertions.iter().all(|a| a.pass)
    }
}

// ---------------------------------------------------------------------------
// Evaluation plan
// ---------------------------------------------------------------------------

struct Plan<'g> {
    graph: &'g ModelGraph,
    /// Combinational evaluation order (block indices into graph.blocks).
    order: Vec<usize>,
    /// Blocks integrated by the solver (integrators, state-space), with
    /// state offsets.
    ode_blocks: Vec<(usize, usize, usize)>, // (block idx, offset, dim)
    /// Per-sample memories: unit delays and running-max blocks.
    delay_blocks: Vec<usize>,
    runmax_blocks: Vec<usize>,
    /// Feeding block indices per block, in destination-port order.
    inputs_of: Vec<Vec<usize>>,
}

fn build_plan<'g>(g: &'g ModelGraph, discrete: bool) -> Result<Plan<'g>, SimError> {
    let idx: BTreeMap<&str, usize> = g
        .blocks
        .iter()
        .enumerate()
        .map(|(i, b)| (b.id.as_str(), i))
        .collect();
    let mut inputs_of: Vec<Vec<usize>> = Vec::with_capacity(g.blocks.len());
    for b in &g.blocks {
        inputs_of.push(
            g.inputs_of(&b.id)
                .iter()
                .map(|w| idx[w.src.block.as_str()])
                .collect(),
        );
    }

    // Dependency edges: a wire src -> dst constrains the evaluation order
    // only when dst needs its inputs to produce its step output. Pure-state
    // blocks do not (their inputs are consumed by the update phase after
    // the full pass), which is exactly what breaks feedback cycles.
    let state_like = |b: &Block| -> bool {
        match &b.kind {
            BlockKind::Integrator { .. } | BlockKind::UnitDelay { .. } => true,
            BlockKind::StateSpace { d, .. } => d.max_abs() == 0.0,
            _ => false,
        }
    };
    let mut indegree = vec![0usize; g.blocks.len()];
    let mut succ: Vec<Vec<usize>> = vec![Vec::new(); g.blocks.len()];
    for w in &g.wires {
        let s = idx[w.src.block.as_str()];
        let d = idx[w.dst.block.as_str()];
        if !state_like(&g.blocks[d]) {
            succ[s].push(d);
            indegree[d] += 1;
        }
    }
    // Kahn with a sorted frontier for a deterministic order.
    let mut frontier: Vec<usize> = (0..g.blocks.len()).filter(|&i| indegree[i] == 0).collect();
    frontier.sort_by(|&a, &b| g.blocks[a].id.cmp(&g.blocks[b].id));
    let mut order = Vec::with_capacity(g.blocks.len());
    while let Some(i) = frontier.first().copied() {
        frontier.remove(0);
        order.push(i);
        let mut newly: Vec<usize> = Vec::new();
        for &d in &succ[i] {
            indegree[d] -= 1;
            if indegree[d] == 0 {
                newly.push(d);
            }
        }
        newly.sort_by(|&a, &b| g.blocks[a].id.cmp(&g.blocks[b].id));
        frontier.extend(newly);
        frontier.sort_by(|&a, &b| g.blocks[a].id.cmp(&g.blocks[b].id));
    }
    if order.len() != g.blocks.len() {
        let stuck = (0..g.blocks.len())
            .find(|i| !order.contains(i))
            .map(|i| g.blocks[i].id.clone())
            .unwrap_or_default();
        return Err(SimError::ImplicitRelation(stuck));
    }

    let mut ode_blocks = Vec::new();
    let mut delay_blocks = Vec::new();
    let mut runmax_blocks = Vec::new();
    let mut offset = 0usize;
    for (i, b) in g.blocks.iter().enumerate() {
        match &b.kind {
            BlockKind::Integrator { initial } => {
                ode_blocks.push((i, offset, initial.len()));
                offset += initial.len();
            }
            BlockKind::StateSpace { initial, .. } => {
                ode_blocks.push((i, offset, initial.len()));
                offset += initial.len();
            }
            BlockKind::UnitDelay { .. } => {
                if !discrete && b.region == Region::Executable {
                    return Err(SimError::InvalidModel(format!(
                        "unit delay `{}` in a continuous executable region",
                        b.id
                    )));
                }
                delay_blocks.push(i);
            }
            BlockKind::RunningMax => runmax_blocks.push(i),
            _ => {}
        }
    }

    Ok(Plan {
        graph: g,
        order,
        ode_blocks,
        delay_blocks,
        runmax_blocks,
        inputs_of,
    })
}

struct EvalState {
    /// ODE state vector (integrators + state-space blocks).
    ode: Vec<f64>,
    /// Unit delay memories, by block index.
    delays: BTreeMap<usize, Vec<f64>>,
    /// Running-max memories.
    runmax: BTreeMap<usize, f64>,
}

/// Values of every block output for one evaluation pass.
type Values = Vec<Option<Vec<f64>>>;

fn eval_block(
    plan: &Plan,
    i: usize,
    values: &Values,
    state: &EvalState,
    held_inputs: &BTreeMap<String, Vec<f64>>,
    ode: &[f64],
) -> Option<Vec<f64>> {
    let b = &plan.graph.blocks[i];
    // Inputs resolve lazily: state blocks read their own memory, not their
    // (possibly not-yet-evaluated) feeders.
    let lazy_ins: Vec<Option<&Vec<f64>>> = plan.inputs_of[i]
        .iter()
        .map(|&j| values[j].as_ref())
        .collect();
    let ins: Vec<&Vec<f64>> = match &b.kind {
        BlockKind::Integrator { .. } | BlockKind::UnitDelay { .. } => Vec::new(),
        BlockKind::StateSpace { d, .. } if d.max_abs() == 0.0 => Vec::new(),
        _ => lazy_ins
            .into_iter()
            .map(|v| v.expect("evaluation order"))
            .collect(),
    };
    match &b.kind {
        BlockKind::Inport { dim } | BlockKind::NoiseSource { dim, .. } => Some(
            held_inputs
                .get(&b.id)
                .cloned()
                .unwrap_or_else(|| vec![0.0; *dim]),
        ),
        BlockKind::Constant { value } => Some(value.clone()),
        BlockKind::Gain { gain, mode } => {
            let u = ins[0];
            Some(match mode {
                GainMode::Elementwise => {
                    if gain.rows() == 1 && gain.cols() == 1 {
                        u.iter().map(|&x| gain[(0, 0)] * x).collect()
                    } else {
                        u.iter()
                            .enumerate()
                            .map(|(k, &x)| gain[(k, 0)] * x)
                            .collect()
                    }
                }
                GainMode::Matrix => gain.matvec(u),
            })
        }
        BlockKind::Sum { signs } => {
            let mut out = vec![0.0; ins[0].len()];
            for (u, sign) in ins.iter().zip(signs.chars()) {
                let s = if sign == '+' { 1.0 } else { -1.0 };
                for (o, &x) in out.iter_mut().zip(u.iter()) {
                    *o += s * x;
                }
            }
            Some(out)
        }
        BlockKind::Product { mode } => Some(match mode {
            ProductMode::Elementwise => {
                let mut out = ins[0].clone();
                for u in ins.iter().skip(1) {
                    for (o, &x) in out.iter_mut().zip(u.iter()) {
                        *o *= x;
                    }
                }
                out
            }
            ProductMode::Dot => vec![vec_dot(ins[0], ins[1])],
            ProductMode::Matrix => {
                if ins[0].len() == 1 {
                    ins[1].iter().map(|&x| ins[0][0] * x).collect()
                } else {
                    ins[0].iter().map(|&x| ins[1][0] * x).collect()
                }
            }
        }),
        BlockKind::Integrator { .. } => {
            let (_, off, dim) = *plan.ode_blocks.iter().find(|(bi, _, _)| *bi == i).unwrap();
            Some(ode[off..off + dim].to_vec())
        }
        BlockKind::UnitDelay { .. } => Some(state.delays[&i].clone()),
        BlockKind::StateSpace { c, d, .. } => {
            let (_, off, dim) = *plan.ode_blocks.iter().find(|(bi, _, _)| *bi == i).unwrap();
            let z = &ode[off..off + dim];
            let mut y = c.matvec(z);
            if d.max_abs() != 0.0 {
                let u: Vec<f64> = ins.iter().flat_map(|v| v.iter().copied()).collect();
                let du = d.matvec(&u);
                for (a, b) in y.iter_mut().zip(du) {
                    *a += b;
                }
            }
            Some(y)
        }
        BlockKind::PolyFun { coefficients } => {
            let x = ins[0][0];
            let mut acc = 0.0;
            for &c in coefficients.iter().rev() {
                acc = acc * x + c;
            }
            Some(vec![acc])
        }
        BlockKind::Transpose => Some(ins[0].clone()),
        BlockKind::QuadraticForm { p } => {
            let concat: Vec<f64> = ins.iter().flat_map(|u| u.iter().copied()).collect();
            Some(vec![p.quad_form(&concat)])
        }
        BlockKind::AssertLE0 { .. } => Some(vec![ins[0][0]]),
        BlockKind::RunningMax => {
            let norm = ins[0].iter().fold(0.0f64, |a, x| a.max(x.abs()));
            Some(vec![state.runmax.get(&i).copied().unwrap_or(0.0).max(norm)])
        }
        BlockKind::Outport | BlockKind::Scope => ins.first().map(|u| (*u).clone()),
    }
}

fn eval_all(
    plan: &Plan,
    state: &EvalState,
    held: &BTreeMap<String, Vec<f64>>,
    ode: &[f64],
) -> Values {
    let mut values: Values = vec![None; plan.graph.blocks.len()];
    for &i in &plan.order {
        values[i] = eval_block(plan, i, &values, state, held, ode);
    }
    values
}

fn concat_inputs(plan: &Plan, i: usize, values: &Values) -> Vec<f64> {
    plan.inputs_of[i]
        .iter()
        .flat_map(|&j| values[j].as_ref().unwrap().iter().copied())
        .collect()
}

/// Derivative of the ODE state vector given frozen inputs and memories.
fn ode_derivative(
    plan: &Plan,
    state: &EvalState,
    held: &BTreeMap<String, Vec<f64>>,
    ode: &[f64],
) -> Vec<f64> {
    let values = eval_all(plan, state, held, ode);
    let mut deriv = vec![0.0; ode.len()];
    for &(i, off, dim) in &plan.ode_blocks {
        match &plan.graph.blocks[i].kind {
            BlockKind::Integrator { .. } => {
                let u = values[plan.inputs_of[i][0]].as_ref().unwrap();
                deriv[off..off + dim].copy_from_slice(u);
            }
            BlockKind::StateSpace { a, b: bm, .. } => {
                let z = &ode[off..off + dim];
                let mut dz = a.matvec(z);
                let u = concat_inputs(plan, i, &values);
                let bu = bm.matvec(&u);
                for (a, b) in dz.iter_mut().zip(bu) {
                    *a += b;
                }
                deriv[off..off + dim].copy_from_slice(&dz);
            }
            _ => unreachable!(),
        }
    }
    deriv
}

/// Simulate the model and record every signal and assertion value.
/// Deterministic: identical `(model, config)` gives bit-identical traces.
pub fn simulate(g: &ModelGraph, cfg: &SimConfig) -> Result<Trace, SimError> {
    if cfg.horizon <= 0.0 {
        return Err(SimError::BadConfig("horizon must be positive".into()));
    }
    g.validate()
        .map_err(|d| SimError::InvalidModel(crate::diag::render_all(&d)))?;
    let g = g
        .infer_dimensions()
        .map_err(|d| SimError::InvalidModel(crate::diag::render_all(&d)))?;

    let discrete = g.is_discrete();
    match (cfg.method, discrete) {
        (SimMethod::ExactDiscrete, true) | (SimMethod::Rk4, false) => {}
        (method, _) => return Err(SimError::MethodMismatch { method }),
    }
    let h = if discrete {
        g.sample_time.unwrap()
    } else {
        if cfg.h_sim <= 0.0 {
            return Err(SimError::BadConfig("h_sim must be positive".into()));
        }
        cfg.h_sim
    };
    let steps = (cfg.horizon / h).round().max(1.0) as usize;

    let plan = build_plan(&g, discrete)?;

    // Initial state.
    let ode_len: usize = plan.ode_blocks.iter().map(|&(_, _, d)| d).sum();
    let mut state = EvalState {
        ode: vec![0.0; ode_len],
        delays: BTreeMap::new(),
        runmax: BTreeMap::new(),
    };
    for &(i, off, dim) in &plan.ode_blocks {
        let init = match &g.blocks[i].kind {
            BlockKind::Integrator { initial } | BlockKind::StateSpace { initial, .. } => initial,
            _ => unreachable!(),
        };
        state.ode[off..off + dim].copy_from_slice(init);
    }
    for &i in &plan.delay_blocks {
        if let BlockKind::UnitDelay { initial } = &g.blocks[i].kind {
            state.delays.insert(i, initial.clone());
        }
    }
    for &i in &plan.runmax_blocks {
        state.runmax.insert(i, 0.0);
    }

    // Noise streams in block-id order.
    let mut streams: BTreeMap<String, NoiseStream> = BTreeMap::new();
    for b in &g.blocks {
        if let BlockKind::NoiseSource { spec, dim } = &b.kind {
            streams.insert(
                b.id.clone(),
                NoiseStream::new(cfg.seed, &b.id, spec.clone(), *dim),
            );
        }
    }

    let mut trace = Trace::default();
    for b in &g.blocks {
        // Sinks (outports, scopes, assertions) record their input value, so
        // every block with a value lands in the trace.
        if b.kind.has_output() || g.inputs_of(&b.id).len() == 1 {
            trace
                .signals
                .insert(b.id.clone(), Vec::with_capacity(steps + 1));
        }
    }
    let assert_ids: Vec<(usize, String)> = g
        .blocks
        .iter()
        .enumerate()
        .filter(|(_, b)| matches!(b.kind, BlockKind::AssertLE0 { .. }))
        .map(|(i, b)| (i, b.id.clone()))
        .collect();
    let mut assert_values: BTreeMap<String, Vec<f64>> = BTreeMap::new();

    for k in 0..=steps {
        // Held inputs for the step starting at t_k.
        let mut held: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (id, stream) in streams.iter_mut() {
            held.insert(id.clone(), stream.draw());
        }
        for b in &g.blocks {
            if let BlockKind::Inport { dim } = &b.kind {
                let v = match cfg.inputs.get(&b.id) {
                    Some(InputDrive::Constant(v)) => v.clone(),
                    Some(InputDrive::Samples(s)) => s
                        .get(k)
                        .or_else(|| s.last())
                        .cloned()
                        .unwrap_or(vec![0.0; *dim]),
                    None => vec![0.0; *dim],
                };
                held.insert(b.id.clone(), v);
            }
        }

        // Record the sample at t_k.
        let values = eval_all(&plan, &state, &held, &state.ode.clone());
        let t = k as f64 * h;
        trace.times.push(t);
        for (i, b) in g.blocks.iter().enumerate() {
            if let Some(v) = &values[i] {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(SimError::NonfiniteSignal {
                        step: k,
                        wire: b.id.clone(),
                    });
                }
                if let Some(series) = trace.signals.get_mut(&b.id) {
                    series.push(v.clone());
                }
            }
        }
        for (i, id) in &assert_ids {
            assert_values
                .entry(id.clone())
                .or_default()
                .push(values[*i].as_ref().unwrap()[0]);
        }
        // Commit per-sample memories using the sample values.
        for &i in &plan.runmax_blocks {
            let v = values[i].as_ref().unwrap()[0];
            state.runmax.insert(i, v);
        }
        if k == steps {
            break;
        }

        if discrete {
            // Next states from the recorded sample.
            let mut next_ode = state.ode.clone();
            for &(i, off, dim) in &plan.ode_blocks {
                let u = values[plan.inputs_of[i][0]].as_ref().unwrap();
                match &g.blocks[i].kind {
                    // Integrators in discrete graphs accumulate forward-Euler.
                    BlockKind::Integrator { .. } => {
                        for d in 0..dim {
                            next_ode[off + d] = state.ode[off + d] + h * u[d];
                        }
                    }
                    BlockKind::StateSpace { a, b: bm, .. } => {
                        let z = &state.ode[off..off + dim];
                        let az = a.matvec(z);
                        let uc = concat_inputs(&plan, i, &values);
                        let bu = bm.matvec(&uc);
                        for d in 0..dim {
                            next_ode[off + d] = az[d] + bu[d];
                        }
                    }
                    _ => unreachable!(),
                }
            }
            let mut next_delays = state.delays.clone();
            for &i in &plan.delay_blocks {
                next_delays.insert(i, values[plan.inputs_of[i][0]].as_ref().unwrap().clone());
            }
            state.ode = next_ode;
            state.delays = next_delays;
        } else {
            // Classic RK4 with inputs and memories held over the step.
            let y0 = state.ode.clone();
            let k1 = ode_derivative(&plan, &state, &held, &y0);
            let y1: Vec<f64> = y0.iter().zip(&k1).map(|(y, d)| y + 0.5 * h * d).collect();
            let k2 = ode_derivative(&plan, &state, &held, &y1);
            let y2: Vec<f64> = y0.iter().zip(&k2).map(|(y, d)| y + 0.5 * h * d).collect();
            let k3 = ode_derivative(&plan, &state, &held, &y2);
            let y3: Vec<f64> = y0.iter().zip(&k3).map(|(y, d)| y + h * d).collect();
            let k4 = ode_derivative(&plan, &state, &held, &y3);
            for i in 0..state.ode.len() {
                state.ode[i] = y0[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            // Annotation-side unit delays advance per sample.
            let mut next_delays = state.delays.clone();
            for &i in &plan.delay_blocks {
                next_delays.insert(i, values[plan.inputs_of[i][0]].as_ref().unwrap().clone());
            }
            state.delays = next_delays;
        }
    }

    // Assertion verdicts need the full trace (rate tolerances reference
    // max |V|); fill the log now.
    trace.assertion_log = assert_ids
        .iter()
        .map(|(i, id)| {
            let values = &assert_values[id];
            let verdicts = assertion_verdicts(&g.blocks[*i], values, &trace);
            AssertionLog {
                block: id.clone(),
                entries: values
                    .iter()
                    .zip(&verdicts)
                    .enumerate()
                    .map(|(step, (&value, &pass))| AssertionEntry { step, value, pass })
                    .collect(),
            }
        })
        .collect();
    Ok(trace)
}

fn assertion_verdicts(block: &Block, values: &[f64], trace: &Trace) -> Vec<bool> {
    let BlockKind::AssertLE0 { tolerance, check } = &block.kind else {
        return vec![true; values.len()];
    };
    let h = trace.step_size();
    let rate_tol = |series: &[f64]| {
        let vmax = series.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        tol::scaled(tol::RATE_CHECK_REL) * (1.0 + vmax)
    };
    match check {
        AssertCheck::Value {
            warmup, ref_block, ..
        } => {
            let refs = ref_block.as_ref().and_then(|r| trace.scalar_series(r));
            values
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    if k < *warmup {
                        return true;
                    }
                    let scale = refs.as_ref().map(|r| r[k].abs()).unwrap_or(0.0);
                    v <= tolerance * (1.0 + scale)
                })
                .collect()
        }
        AssertCheck::DecreaseRate => {
            // Input is V itself; monotone decrease at the rate tolerance.
            let tol_rate = rate_tol(values);
            values
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    if k == 0 || h == 0.0 {
                        true
                    } else {
                        (v - values[k - 1]) / h <= tol_rate
                    }
                })
                .collect()
        }
        AssertCheck::DissipationRate {
            v_block,
            y2_block,
            supply_block,
        } => {
            let (Some(v), Some(y2), Some(supply)) = (
                trace.scalar_series(v_block),
                trace.scalar_series(y2_block),
                trace.scalar_series(supply_block),
            ) else {
                return vec![false; values.len()];
            };
            let tol_rate = rate_tol(&v);
            values
                .iter()
                .enumerate()
                .map(|(k, _)| {
                    if k == 0 || h == 0.0 {
                        return true;
                    }
                    // Supply was held from step k-1 over the transition; the
                    // output energy is trapezoid-averaged over the interval.
                    let dv = (v[k] - v[k - 1]) / h;
                    let y2_avg = 0.5 * (y2[k] + y2[k - 1]);
                    dv + y2_avg - supply[k - 1] <= tol_rate
                })
                .collect()
        }
    }
}

/// Re-derive the per-assertion verdicts from a trace and produce the check
/// report (first violation step, witness values, dissipation ledgers).
pub fn check_assertions(trace: &Trace, g: &ModelGraph) -> CheckReport {
    let mut assertions = Vec::new();
    for log in &trace.assertion_log {
        let Some(block) = g.block(&log.block) else {
            continue;
        };
        let BlockKind::AssertLE0 { tolerance, check } = &block.kind else {
            continue;
        };
        let first_violation = log.entries.iter().find(|e| !e.pass).map(|e| e.step);
        let witness = first_violation.map(|step| {
            let value = log.entries[step].value;
            Witness {
                step,
                value,
                tolerance: *tolerance,
            }
        });
        let ledger = match check {
            AssertCheck::Value { ledger: true, .. } => {
                // Per-step assertion values are (absorbed - supplied) + dV;
                // their negated sum telescopes to the accumulated ledger.
                Some(-log.entries.iter().skip(1).map(|e| e.value).sum::<f64>())
            }
            AssertCheck::DissipationRate {
                v_block,
                y2_block,
                supply_block,
            } => {
                let h = trace.step_size();
                let (v, y2, supply) = (
                    trace.scalar_series(v_block).unwrap_or_default(),
                    trace.scalar_series(y2_block).unwrap_or_default(),
                    trace.scalar_series(supply_block).unwrap_or_default(),
                );
                if v.len() > 1 {
                    let n = v.len() - 1;
                    let mut acc = v[0] - v[n];
                    for k in 0..n {
                        acc += (supply[k] - 0.5 * (y2[k] + y2[k + 1])) * h;
                    }
                    Some(acc)
                } else {
                    None
                }
            }
            _ => None,
        };
        assertions.push(AssertionReport {
            id: log.block.clone(),
            pass: first_violation.is_none(),
            first_violation,
            witness,
            ledger,
        });
    }
    CheckReport { assertions }
}

/// CSV export: `time` column then one column per signal component.
pub fn trace_to_csv(trace: &Trace) -> String {
    let mut header = vec!["time".to_string()];
    let mut columns: Vec<(&String, usize)> = Vec::new();
    for (id, series) in &trace.signals {
        let width = series.first().map(|v| v.len()).unwrap_or(0);
        for c in 0..width {
            header.push(if width == 1 {
                id.clone()
            } else {
                format!("{id}[{c}]")
            });
            columns.push((id, c));
        }
    }
    let mut out = header.join(",");
    out.push('\n');
    for (k, t) in trace.times.iter().enumerate() {
        let mut row = vec![format!("{t:?}")];
        for (id, c) in &columns {
            row.push(format!("{:?}", trace.signals[*id][k][*c]));
        }
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn report_to_json(report: &CheckReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialization cannot fail")
}
