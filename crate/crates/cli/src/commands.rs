use std::path::Path;

use cbmat::margins::{MarginCandidate, MarginFamily};
use cbmat::score_engine::mvn::QmcOptions;
use cbmat::score_engine::{run_cbmat, KernelConfig, ModelOptions, WeightScheme};
use cbmat::sim_harness::{run_experiment, AnalysisOptions, ExperimentSummary};
use cbmat::Exec;
use serde::Serialize;

use crate::config::{RunConfig, SimulateConfig, TraitType, WeightChoice};
use crate::error::{CliError, CliResult};
use crate::ingest::{ingest, IngestOptions};
use crate::report::ResultDocument;

fn exec(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

/// `cbmat test`: ingest, fit, test, report.
pub fn run_test(cfg: &RunConfig) -> CliResult<ResultDocument> {
    let binary = cfg.trait1_type == TraitType::Binary;
    let data = ingest(&cfg.pheno, &cfg.geno, &IngestOptions::new(&cfg.trait1, &cfg.trait2, &cfg.covars, binary))?;
    let r = data.variants.len();
    let kernel = match cfg.weights {
        WeightChoice::Beta => KernelConfig::beta_maf(&data.maf, 1.0, 25.0)
            .and_then(|k| KernelConfig::new(k.weights, cfg.rho_grid.clone(), k.weight_scheme)),
        WeightChoice::Uniform => KernelConfig::new(vec![1.0; r], cfg.rho_grid.clone(), WeightScheme::Uniform),
    }
    .map_err(|e| CliError::analysis(&e, "kernel"))?;
    let model = ModelOptions {
        copulas: cfg.copulas.clone(),
        margins1: if binary { vec![MarginCandidate::Family(MarginFamily::BinaryProbitLatent)] } else { cfg.margins.clone() },
        margins2: cfg.margins.clone(),
        mixed: binary,
        exec: exec(cfg.sequential),
        qmc: QmcOptions { seed: cfg.seed, ..QmcOptions::default() },
        resampling: cfg.resampling_check.map(|reps| (reps, cfg.seed)),
    };
    let res = run_cbmat(&data.y1, &data.y2, &data.x, &data.g, &kernel, &model).map_err(|e| CliError::analysis(&e, "test"))?;
    ResultDocument::build(cfg, &data, &kernel.weights, &res)
}

/// Writes to `path`, or stdout when absent.
pub fn write_output(path: Option<&Path>, text: &str) -> CliResult<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| CliError::output(format!("cannot write {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            std::io::stdout().lock().write_all(text.as_bytes()).map_err(|e| CliError::output(e.to_string()))
        }
    }
}

#[derive(Debug, Serialize)]
struct SummaryRow<'a> {
    scenario: &'a str,
    n: usize,
    r: usize,
    copula: &'a str,
    tau: f64,
    margin1: String,
    margin2: String,
    h2: f64,
    causal_fraction: f64,
    rho: f64,
    seed: u64,
    replicates: usize,
    failures: usize,
    rejections: usize,
    alpha: f64,
    rate: f64,
    ci_low: f64,
    ci_high: f64,
}

/// Tab-separated one-row summary with a header.
pub fn summary_tsv(cfg: &SimulateConfig, s: &ExperimentSummary) -> CliResult<String> {
    let spec = &cfg.spec;
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    w.serialize(SummaryRow {
        scenario: &s.scenario,
        n: spec.n,
        r: spec.r,
        copula: spec.copula.name(),
        tau: spec.tau,
        margin1: spec.margin1.name(),
        margin2: spec.margin2.name(),
        h2: spec.h2,
        causal_fraction: spec.causal_fraction,
        rho: spec.rho,
        seed: spec.seed,
        replicates: s.replicates,
        failures: s.failures,
        rejections: s.rejections,
        alpha: s.alpha,
        rate: s.rate,
        ci_low: s.ci_low,
        ci_high: s.ci_high,
    })
    .map_err(|e| CliError::output(e.to_string()))?;
    let bytes = w.into_inner().map_err(|e| CliError::output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::output(e.to_string()))
}

/// Per-replicate records as CSV.
pub fn pvalues_csv(s: &ExperimentSummary) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in &s.records {
        w.serialize(rec).map_err(|e| CliError::output(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::output(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::output(e.to_string()))
}

/// `cbmat simulate`: run the scenario and write the summary and optional p-values.
pub fn run_simulate(cfg: &SimulateConfig) -> CliResult<ExperimentSummary> {
    let opts = AnalysisOptions {
        copulas: cfg.fit_copulas.clone(),
        rho_grid: cfg.rho_grid.clone(),
        resampling: cfg.resampling_check.map(|reps| (reps, cfg.spec.seed)),
        exec: exec(cfg.sequential),
        ..AnalysisOptions::default()
    };
    let s = run_experiment(&cfg.spec, &opts).map_err(|e| CliError::analysis(&e, "simulate"))?;
    write_output(cfg.out.as_deref(), &summary_tsv(cfg, &s)?)?;
    if let Some(p) = &cfg.pvalues {
        write_output(Some(p), &pvalues_csv(&s)?)?;
    }
    Ok(s)
}
