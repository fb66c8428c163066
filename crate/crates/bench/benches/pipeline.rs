//! Pipeline-stage benchmarks over the shipped corpus: parsing, extraction,
//! the full batch run, discrete simulation, and code emission.

use std::fs;
use std::path::PathBuf;

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use proofblocks_core::backend::CodeTarget;
use proofblocks_core::extraction::extract_state_space;
use proofblocks_core::frontend::parse_model;
use proofblocks_core::pipeline::{run_pipeline, PipelineOptions};
use proofblocks_core::simcheck::{simulate, SimConfig};

fn model_text(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../models")
        .join(name);
    fs::read_to_string(path).expect("corpus model exists")
}

fn bench_parse(c: &mut Criterion) {
    let text = model_text("adaptive_oscillator.pbm.json");
    c.bench_function("parse_adaptive_model", |b| {
        b.iter(|| parse_model(black_box(&text)).unwrap())
    });
}

fn bench_extract(c: &mut Criterion) {
    let doc = parse_model(&model_text("double_integrator_l2.pbm.json")).unwrap();
    c.bench_function("extract_di", |b| {
        b.iter(|| extract_state_space(black_box(&doc.graph)).unwrap())
    });
}

fn bench_full_pipeline(c: &mut Criterion) {
    let doc = parse_model(&model_text("double_integrator_l2.pbm.json")).unwrap();
    let opts = PipelineOptions {
        horizon: 1.0,
        ..Default::default()
    };
    c.bench_function("pipeline_di_l2_1s", |b| {
        b.iter(|| run_pipeline(black_box(&doc), &opts).unwrap())
    });
}

fn bench_simulate_discrete(c: &mut Criterion) {
    let doc = parse_model(&model_text("double_integrator_l2.pbm.json")).unwrap();
    let art = run_pipeline(&doc, &PipelineOptions::default()).unwrap();
    let graph = art.discrete.unwrap().graph;
    c.bench_function("simulate_discrete_1000_steps", |b| {
        b.iter(|| simulate(black_box(&graph), &SimConfig::discrete(10.0, 0)).unwrap())
    });
}

fn bench_codegen(c: &mut Criterion) {
    let doc = parse_model(&model_text("double_integrator_l2.pbm.json")).unwrap();
    let art = run_pipeline(&doc, &PipelineOptions::default()).unwrap();
    let graph = art.discrete.unwrap().graph;
    let report = art.report.unwrap();
    c.bench_function("emit_dataflow_di", |b| {
        b.iter(|| {
            proofblocks_core::backend::emit_code(
                black_box(&graph),
                Some(&report),
                CodeTarget::Dataflow,
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_parse,
    bench_extract,
    bench_full_pipeline,
    bench_simulate_discrete,
    bench_codegen
);
criterion_main!(benches);
