//! Batch entry point wiring the pipeline end to end.
//!
//! Exit codes are a CI contract: 0 on success, 1 on diagnostics (parse,
//! validation, dimension errors), 2 on refuted certificates or assertion
//! violations, 64 on usage errors.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use proofblocks_core::diag::render_all;
use proofblocks_core::extraction::{
    export_analysis_request, export_certificate, import_certificate,
};
use proofblocks_core::frontend::{parse_model, print_model, render_dot, ModelDocument};
use proofblocks_core::pipeline::{
    self, analysis_request, annotate_document, certify_document, run_pipeline, verify_imported,
    PipelineError, PipelineOptions, Provenance,
};
use proofblocks_core::simcheck::{report_to_json, trace_to_csv};

const EXIT_OK: u8 = 0;
const EXIT_DIAGNOSTICS: u8 = 1;
const EXIT_REFUTED: u8 = 2;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "proofblocks",
    version,
    about = "Certify, annotate, discretize, and runtime-check block-diagram control models"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// Input model (.pbm.json)
    input: PathBuf,
    /// Output directory (default: `<input stem>.out` next to the input)
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Discretization step in seconds
    #[arg(long, default_value_t = 0.01)]
    h: f64,
    /// L2 level margin above the estimated gain
    #[arg(long, default_value_t = 1.02)]
    gamma_margin: f64,
    /// Scale of the identity Q in Lyapunov equations
    #[arg(long, default_value_t = 1.0)]
    q_scale: f64,
    /// Noise seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulation horizon in seconds
    #[arg(long, default_value_t = 10.0)]
    horizon: f64,
    /// RK4 step for continuous simulation
    #[arg(long, default_value_t = 1e-3)]
    h_sim: f64,
}

impl CommonOpts {
    fn pipeline_options(&self) -> PipelineOptions {
        PipelineOptions {
            h: self.h,
            gamma_margin: self.gamma_margin,
            q_scale: self.q_scale,
            seed: self.seed,
            horizon: self.horizon,
            h_sim: self.h_sim,
        }
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse, validate, and dimension-check a model
    Check {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Extract the state-space model and write the analysis request
    Extract {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Compute (or import and re-verify) the certificates the annotations need
    Certify {
        #[command(flatten)]
        common: CommonOpts,
        /// Re-verify an externally produced certificate file instead of solving
        #[arg(long)]
        import: Option<PathBuf>,
    },
    /// Expand annotation specs into verification subgraphs
    Annotate {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Discretize the model and transport its proofs
    Discretize {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Emit annotated code for one target
    Codegen {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long, value_parser = ["c_like", "dataflow"], default_value = "c_like")]
        target: String,
    },
    /// Simulate and runtime-check every assertion
    Simulate {
        #[command(flatten)]
        common: CommonOpts,
        /// Run a seed range `a..b` as independent jobs
        #[arg(long)]
        seeds: Option<String>,
    },
    /// Render the diagram as GraphViz DOT
    Render {
        #[command(flatten)]
        common: CommonOpts,
    },
    /// Run every stage in order and write the full artifact set
    Pipeline {
        #[command(flatten)]
        common: CommonOpts,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // --help/--version are successes; anything else is a usage error.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    EXIT_OK
                }
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_DIAGNOSTICS)
        }
    }
}

fn load_model(path: &Path) -> Result<Result<ModelDocument, u8>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    match parse_model(&text) {
        Ok(doc) => Ok(Ok(doc)),
        Err(diags) => {
            eprintln!("{}", render_all(&diags));
            Ok(Err(EXIT_DIAGNOSTICS))
        }
    }
}

fn out_dir(common: &CommonOpts) -> PathBuf {
    common.out_dir.clone().unwrap_or_else(|| {
        let stem = model_stem(&common.input);
        common
            .input
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("{stem}.out"))
    })
}

fn model_stem(path: &Path) -> String {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("model");
    name.strip_suffix(".pbm.json")
        .unwrap_or_else(|| name.strip_suffix(".json").unwrap_or(name))
        .to_string()
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Inject the provenance block into a JSON document (certificate
/// auditability: every output echoes the numeric flags that produced it).
fn with_provenance(json: &str, prov: &Provenance) -> String {
    let mut v: serde_json::Value = serde_json::from_str(json).expect("own output is valid JSON");
    if let Some(obj) = v.as_object_mut() {
        obj.insert("provenance".into(), serde_json::to_value(prov).unwrap());
    }
    let mut out = serde_json::to_string_pretty(&v).unwrap();
    out.push('\n');
    out
}

fn map_pipeline_err(e: PipelineError) -> (u8, String) {
    match &e {
        PipelineError::Diagnostics(d) => (EXIT_DIAGNOSTICS, render_all(d)),
        PipelineError::Refuted(_) | PipelineError::Certification(_) => {
            (EXIT_REFUTED, e.to_string())
        }
        _ => (EXIT_DIAGNOSTICS, e.to_string()),
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Check { common } => {
            let doc = match load_model(&common.input)? {
                Ok(d) => d,
                Err(code) => return Ok(code),
            };
            println!(
                "ok: {} blocks, {} wires, {} annotation request(s)",
                doc.graph.blocks.len(),
                doc.graph.wires.len(),
                doc.annotations.len()
            );
            Ok(EXIT_OK)
        }
        Cmd::Extract { common } => {
            let doc = match load_model(&common.input)? {
                Ok(d) => d,
                Err(code) => return Ok(code),
            };
            let req = match analysis_request(&doc) {
                Ok(r) => r,
                Err(diags) => {
                    eprintln!("{}", render_all(&diags));
                    return Ok(EXIT_DIAGNOSTICS);
                }
            };
            println!(
                "state space: {} state(s) {:?}, inputs {:?}, outputs {:?}",
                req.ss.order(),
                req.ss.state_names,
                req.ss.input_bindings,
                req.ss.output_bindings
            );
            let prov = Provenance::new(&common.pipeline_options());
            let json = with_provenance(&export_analysis_request(&req), &prov);
            write_out(
                &out_dir(&common),
                &format!("{}.request.json", model_stem(&common.input)),
                &json,
            )?;
            Ok(EXIT_OK)
        }
        Cmd::Certify { common, import } => {
            let doc = match load_model(&common.input)? {
                Ok(d) => d,
                Err(code) => return Ok(code),
            };
            let opts = common.pipeline_options();
            let certs = if let Some(import_path) = import {
                let text = fs::read_to_string(&import_path)
                    .with_context(|| format!("reading {}", import_path.display()))?;
                let imported = match import_certificate(&text) {
                    Ok(c) => vec![c],
                    Err(diags) => {
                        eprintln!("{}", render_all(&diags));
                        return Ok(EXIT_DIAGNOSTICS);
                    }
                };
                match verify_imported(&doc, &imported) {
                    Ok(c) => c,
                    Err(e) => {
                        let (code, msg) = map_pipeline_err(e);
                        eprintln!("{msg}");
                        return Ok(code);
                    }
                }
            } else {
                match certify_document(&doc, &opts) {
                    Ok(c) => c,
                    Err(e) => {
                        let (code, msg) = map_pipeline_err(e);
                        eprintln!("{msg}");
                        return Ok(code);
                    }
                }
            };
            for c in &certs {
                println!(
                    "{}: {:?} (residual {:.3e}{})",
                    c.kind.wire_name(),
                    c.status,
                    c.residual,
                    c.alpha
                        .map(|a| format!(", alpha = {a}"))
                        .unwrap_or_default()
                );
            }
            write_certificates(&out_dir(&common), &model_stem(&common.input), &certs, &opts)?;
            Ok(EXIT_OK)
        }
        Cmd::Annotate { common } => {
            let doc = match load_model(&common.input)? {
                Ok(d) => d,
                Err(code) => return Ok(code),
            };
            let opts = common.pipeline_options();
            let certs = match certify_document(&doc, &opts) {
                Ok(c) => c,
                Err(PipelineError::NonlinearNeedsCertificates) => Vec::new(),
                Err(e) => {
                    let (code, msg) = map_pipeline_err(e);
                    eprintln!("{msg}");
                    return Ok(code);
                }
            };
            let (annotated, warnings) = match annotate_document(&doc, &certs) {
                Ok(r) => r,
                Err(e) => {
                    let (code, msg) = map_pipeline_err(e);
                    eprintln!("{msg}");
                    return Ok(code);
                }
            };
            for w in &warnings {
                eprintln!("warning: {w}");
            }
            write_out(
                &out_dir(&common),
                &format!("{}.annotated.pbm.json", model_stem(&common.input)),
                &print_model(&annotated),
            )?;
            Ok(EXIT_OK)
        }
        Cmd::Discretize { common } => {
            let artifacts = match run_full(&common)? {
                Ok(a) => a,
                Err(code) => return Ok(code),
            };
            write_discretization(
                &out_dir(&common),
                &model_stem(&common.input),
                &artifacts,
                &common.pipeline_options(),
            )?;
            Ok(EXIT_OK)
        }
        Cmd::Codegen { common, target } => {
            let artifacts = match run_full(&common)? {
                Ok(a) => a,
                Err(code) => return Ok(code),
            };
            let dir = out_dir(&common);
            let stem = model_stem(&common.input);
            let (code, name) = match target.as_str() {
                "c_like" => (&artifacts.c_like, format!("{stem}.step.c.txt")),
                "dataflow" => (&artifacts.dataflow, format!("{stem}.lus.txt")),
                _ => unreachable!("clap validates the target"),
            };
            match code {
                Some(text) => {
                    write_out(&dir, &name, text)?;
                    Ok(EXIT_OK)
                }
                None => {
                    eprintln!("model is nonlinear: no code target (simulation-only route)");
                    Ok(EXIT_DIAGNOSTICS)
                }
            }
        }
        Cmd::Simulate { common, seeds } => {
            let doc = match load_model(&common.input)? {
                Ok(d) => d,
                Err(code) => return Ok(code),
            };
            let opts = common.pipeline_options();
            let dir = out_dir(&common);
            let stem = model_stem(&common.input);
            match seeds {
                None => {
                    let (_, trace, checks) = match pipeline::simulate_document(&doc, &opts) {
                        Ok(r) => r,
                        Err(e) => {
                            let (code, msg) = map_pipeline_err(e);
                            eprintln!("{msg}");
                            return Ok(code);
                        }
                    };
                    write_out(&dir, &format!("{stem}.trace.csv"), &trace_to_csv(&trace))?;
                    write_out(
                        &dir,
                        &format!("{stem}.checks.json"),
                        &with_provenance(&report_to_json(&checks), &Provenance::new(&opts)),
                    )?;
                    print_check_summary(&checks);
                    Ok(if checks.all_pass() {
                        EXIT_OK
                    } else {
                        EXIT_REFUTED
                    })
                }
                Some(range) => {
                    let (a, b) = parse_seed_range(&range)?;
                    // Jobs share no mutable state; fan out one thread each.
                    let results: Vec<(u64, Result<bool, String>)> = std::thread::scope(|s| {
                        let handles: Vec<_> = (a..b)
                            .map(|seed| {
                                let doc = &doc;
                                let mut o = opts.clone();
                                o.seed = seed;
                                s.spawn(move || {
                                    pipeline::simulate_document(doc, &o)
                                        .map(|(_, _, checks)| checks.all_pass())
                                        .map_err(|e| e.to_string())
                                })
                            })
                            .collect();
                        (a..b)
                            .zip(handles)
                            .map(|(seed, h)| (seed, h.join().expect("simulation job panicked")))
                            .collect()
                    });
                    let mut all_ok = true;
                    let mut rows = Vec::new();
                    for (seed, r) in &results {
                        match r {
                            Ok(pass) => {
                                all_ok &= pass;
                                rows.push(serde_json::json!({"seed": seed, "pass": pass}));
                                println!("seed {seed}: {}", if *pass { "pass" } else { "FAIL" });
                            }
                            Err(msg) => {
                                all_ok = false;
                                rows.push(serde_json::json!({"seed": seed, "error": msg}));
                                eprintln!("seed {seed}: error: {msg}");
                            }
                        }
                    }
                    let doc_json = serde_json::json!({ "seeds": rows });
                    write_out(
                        &dir,
                        &format!("{stem}.checks.json"),
                        &with_provenance(
                            &serde_json::to_string_pretty(&doc_json)?,
                            &Provenance::new(&opts),
                        ),
                    )?;
                    Ok(if all_ok { EXIT_OK } else { EXIT_REFUTED })
                }
            }
        }
        Cmd::Render { common } => {
            let doc = match load_model(&common.input)? {
                Ok(d) => d,
                Err(code) => return Ok(code),
            };
            write_out(
                &out_dir(&common),
                &format!("{}.dot", model_stem(&common.input)),
                &render_dot(&doc),
            )?;
            Ok(EXIT_OK)
        }
        Cmd::Pipeline { common } => {
            let artifacts = match run_full(&common)? {
                Ok(a) => a,
                Err(code) => return Ok(code),
            };
            let opts = common.pipeline_options();
            let dir = out_dir(&common);
            let stem = model_stem(&common.input);
            let prov = Provenance::new(&opts);

            for w in &artifacts.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(req) = &artifacts.request_json {
                write_out(
                    &dir,
                    &format!("{stem}.request.json"),
                    &with_provenance(req, &prov),
                )?;
            }
            if !artifacts.certificates.is_empty() {
                write_certificates(&dir, &stem, &artifacts.certificates, &opts)?;
            }
            write_out(
                &dir,
                &format!("{stem}.annotated.pbm.json"),
                &print_model(&artifacts.annotated),
            )?;
            write_out(&dir, &format!("{stem}.dot"), &artifacts.dot)?;
            write_discretization(&dir, &stem, &artifacts, &opts)?;
            if let Some(code) = &artifacts.c_like {
                write_out(&dir, &format!("{stem}.step.c.txt"), code)?;
            }
            if let Some(code) = &artifacts.dataflow {
                write_out(&dir, &format!("{stem}.lus.txt"), code)?;
            }
            write_out(
                &dir,
                &format!("{stem}.trace.csv"),
                &trace_to_csv(&artifacts.trace),
            )?;
            write_out(
                &dir,
                &format!("{stem}.checks.json"),
                &with_provenance(&report_to_json(&artifacts.checks), &prov),
            )?;
            print_check_summary(&artifacts.checks);
            Ok(if artifacts.checks.all_pass() {
                EXIT_OK
            } else {
                EXIT_REFUTED
            })
        }
    }
}

fn run_full(common: &CommonOpts) -> Result<Result<pipeline::PipelineArtifacts, u8>> {
    let doc = match load_model(&common.input)? {
        Ok(d) => d,
        Err(code) => return Ok(Err(code)),
    };
    match run_pipeline(&doc, &common.pipeline_options()) {
        Ok(a) => Ok(Ok(a)),
        Err(e) => {
            let (code, msg) = map_pipeline_err(e);
            eprintln!("{msg}");
            Ok(Err(code))
        }
    }
}

fn write_certificates(
    dir: &Path,
    stem: &str,
    certs: &[proofblocks_core::certificates::Certificate],
    opts: &PipelineOptions,
) -> Result<()> {
    let docs: Vec<serde_json::Value> = certs
        .iter()
        .map(|c| serde_json::from_str(&export_certificate(c)).unwrap())
        .collect();
    let payload = serde_json::json!({
        "certificates": docs,
        "provenance": serde_json::to_value(Provenance::new(opts)).unwrap(),
    });
    let mut text = serde_json::to_string_pretty(&payload)?;
    text.push('\n');
    write_out(dir, &format!("{stem}.cert.json"), &text)
}

fn write_discretization(
    dir: &Path,
    stem: &str,
    artifacts: &pipeline::PipelineArtifacts,
    opts: &PipelineOptions,
) -> Result<()> {
    if let (Some(discrete), Some(report)) = (&artifacts.discrete, &artifacts.report) {
        write_out(
            dir,
            &format!("{stem}.discrete.pbm.json"),
            &print_model(discrete),
        )?;
        let report_json = serde_json::to_string_pretty(report)?;
        write_out(
            dir,
            &format!("{stem}.discretization.json"),
            &with_provenance(&report_json, &Provenance::new(opts)),
        )?;
    }
    Ok(())
}

fn print_check_summary(checks: &proofblocks_core::simcheck::CheckReport) {
    for a in &checks.assertions {
        match a.first_violation {
            None => println!("assertion {}: pass", a.id),
            Some(step) => println!("assertion {}: FAIL at step {step}", a.id),
        }
    }
}

fn parse_seed_range(s: &str) -> Result<(u64, u64)> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| anyhow::anyhow!("seed range must look like `0..20`"))?;
    let a: u64 = a.parse().context("seed range start")?;
    let b: u64 = b.parse().context("seed range end")?;
    anyhow::ensure!(b > a, "seed range must be nonempty");
    Ok((a, b))
}
