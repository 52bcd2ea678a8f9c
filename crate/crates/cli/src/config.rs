//! Command-line flags, the optional TOML file, and the resolved run configuration.
//! A value given as a flag always wins over the same key in the file.

use std::path::{Path, PathBuf};

use cbmat::margins::{MarginCandidate, MarginFamily};
use cbmat::score_engine::DEFAULT_RHO_GRID;
use cbmat::sim_harness::{preset, MafSpec, ScenarioSpec};
use cbmat::CopulaFamily;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "cbmat", version, about = "Copula-based multi-marker association test for two traits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test one region against two traits.
    Test(TestArgs),
    /// Run a type-I-error or power simulation.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TraitType {
    Binary,
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightChoice {
    Beta,
    Uniform,
}

#[derive(Debug, Clone, Default, Args)]
pub struct TestArgs {
    /// TOML file with any of the options below (snake_case keys).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub pheno: Option<PathBuf>,
    #[arg(long)]
    pub geno: Option<PathBuf>,
    #[arg(long)]
    pub trait1: Option<String>,
    #[arg(long, value_enum)]
    pub trait1_type: Option<TraitType>,
    #[arg(long)]
    pub trait2: Option<String>,
    /// Comma-separated covariate columns.
    #[arg(long, value_delimiter = ',')]
    pub covars: Option<Vec<String>>,
    /// auto, gaussian, frank or clayton.
    #[arg(long)]
    pub copula: Option<String>,
    /// auto or a comma-separated list, e.g. gaussian,gamma,t.
    #[arg(long)]
    pub margins: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub weights: Option<WeightChoice>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Result document path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also compute the resampling min-p with this many draws.
    #[arg(long)]
    pub resampling_check: Option<usize>,
    /// Run single-threaded.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// table2 (continuous null), table4 (mixed null) or power.
    #[arg(long)]
    pub preset: Option<String>,
    /// Preset key, e.g. gaussian-0.20 or h2-0.02-v-0.2-rho-0-tau-0.2.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// TSV summary path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-replicate p-values as CSV.
    #[arg(long)]
    pub pvalues: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub r: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Generating copula.
    #[arg(long)]
    pub copula: Option<String>,
    /// Generating margin of trait 1 (probit for a binary trait).
    #[arg(long)]
    pub margin1: Option<String>,
    #[arg(long)]
    pub margin2: Option<String>,
    #[arg(long)]
    pub h2: Option<f64>,
    #[arg(long)]
    pub causal_fraction: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub maf_lo: Option<f64>,
    #[arg(long)]
    pub maf_hi: Option<f64>,
    /// Copulas fitted to each replicate: true (generating copula), auto, or a list.
    #[arg(long)]
    pub fit_copula: Option<String>,
    #[arg(long, value_delimiter = ',')]
    pub rho_grid: Option<Vec<f64>>,
    #[arg(long)]
    pub resampling_check: Option<usize>,
    #[arg(long)]
    pub sequential: bool,
}

/// Keys accepted in the TOML file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub pheno: Option<PathBuf>,
    pub geno: Option<PathBuf>,
    pub trait1: Option<String>,
    pub trait1_type: Option<TraitType>,
    pub trait2: Option<String>,
    pub covars: Option<Vec<String>>,
    pub copula: Option<String>,
    pub margins: Option<String>,
    pub rho_grid: Option<Vec<f64>>,
    pub weights: Option<WeightChoice>,
    pub alpha: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub resampling_check: Option<usize>,
    pub preset: Option<String>,
    pub scenario: Option<String>,
    pub replicates: Option<usize>,
    pub pvalues: Option<PathBuf>,
    pub n: Option<usize>,
    pub r: Option<usize>,
    pub tau: Option<f64>,
    pub margin1: Option<String>,
    pub margin2: Option<String>,
    pub h2: Option<f64>,
    pub causal_fraction: Option<f64>,
    pub rho: Option<f64>,
    pub maf_lo: Option<f64>,
    pub maf_hi: Option<f64>,
    pub fit_copula: Option<String>,
}

pub fn load_file(path: &Path) -> CliResult<FileConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display()), "check the --config path"))?;
    toml::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display()), "keys are the flag names in snake_case"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Test,
    Simulate,
}

/// Fully resolved options for `cbmat test`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub pheno: PathBuf,
    pub geno: PathBuf,
    pub covars: Vec<String>,
    pub trait1: String,
    pub trait2: String,
    pub trait1_type: TraitType,
    #[serde(serialize_with = "margin_names")]
    pub margins: Vec<MarginCandidate>,
    pub copulas: Vec<CopulaFamily>,
    pub rho_grid: Vec<f64>,
    pub weights: WeightChoice,
    pub alpha: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub resampling_check: Option<usize>,
    pub sequential: bool,
}

fn margin_names<S: serde::Serializer>(m: &[MarginCandidate], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(m.iter().map(|c| match c {
        MarginCandidate::Family(f) => f.name(),
        MarginCandidate::StudentTGrid => "t".to_string(),
    }))
}

pub const DEFAULT_SEED: u64 = 20_240_901;

/// A required option absent from both flags and file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Missing(pub &'static str);

pub fn parse_copulas(s: &str) -> CliResult<Vec<CopulaFamily>> {
    if s.trim().eq_ignore_ascii_case("auto") {
        return Ok(CopulaFamily::ALL.to_vec());
    }
    s.split(',')
        .map(|c| c.parse::<CopulaFamily>().map_err(|e| CliError::config(e.to_string(), "copulas are gaussian, frank or clayton")))
        .collect()
}

pub fn parse_margins(s: &str) -> CliResult<Vec<MarginCandidate>> {
    if s.trim().eq_ignore_ascii_case("auto") {
        return Ok(MarginCandidate::continuous_defaults());
    }
    let out: Vec<MarginCandidate> = s
        .split(',')
        .map(|c| c.parse::<MarginCandidate>().map_err(|e| CliError::config(e.to_string(), "margins are gaussian, exponential, gamma, t or tDF")))
        .collect::<CliResult<_>>()?;
    if out.contains(&MarginCandidate::Family(MarginFamily::BinaryProbitLatent)) {
        return Err(CliError::config("probit is not a continuous margin", "binary traits are declared with --trait1-type binary"));
    }
    Ok(out)
}

pub fn parse_family(s: &str) -> CliResult<MarginFamily> {
    match s.parse::<MarginCandidate>() {
        Ok(MarginCandidate::Family(f)) => Ok(f),
        Ok(MarginCandidate::StudentTGrid) => Err(CliError::config("a simulated Student-t margin needs its df, e.g. t5", "write tDF")),
        Err(e) => Err(CliError::config(e.to_string(), "margins are gaussian, exponential, gamma, probit or tDF")),
    }
}

fn check_grid(grid: &[f64]) -> CliResult<()> {
    if grid.is_empty() || grid.iter().any(|r| !(0.0..=1.0).contains(r)) || grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(CliError::config(format!("rho grid {grid:?}"), "give increasing values in [0, 1]"));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> CliResult<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::config(format!("alpha {alpha}"), "alpha must lie in (0, 1)"));
    }
    Ok(())
}

impl RunConfig {
    /// Merges flags over the file. `Err(Ok(Missing))` reports the first absent required option.
    pub fn resolve(args: &TestArgs, file: &FileConfig) -> std::result::Result<RunConfig, std::result::Result<Missing, CliError>> {
        let pheno = args.pheno.clone().or_else(|| file.pheno.clone()).ok_or(Ok(Missing("--pheno")))?;
        let geno = args.geno.clone().or_else(|| file.geno.clone()).ok_or(Ok(Missing("--geno")))?;
        let trait1 = args.trait1.clone().or_else(|| file.trait1.clone()).ok_or(Ok(Missing("--trait1")))?;
        let trait2 = args.trait2.clone().or_else(|| file.trait2.clone()).ok_or(Ok(Missing("--trait2")))?;
        let trait1_type = args.trait1_type.or(file.trait1_type).ok_or(Ok(Missing("--trait1-type")))?;
        let cfg = (|| {
            let covars = args.covars.clone().or_else(|| file.covars.clone()).unwrap_or_default();
            let covars: Vec<String> = covars.into_iter().map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect();
            let copulas = parse_copulas(args.copula.as_deref().or(file.copula.as_deref()).unwrap_or("auto"))?;
            let margins = parse_margins(args.margins.as_deref().or(file.margins.as_deref()).unwrap_or("auto"))?;
            let rho_grid = args.rho_grid.clone().or_else(|| file.rho_grid.clone()).unwrap_or_else(|| DEFAULT_RHO_GRID.to_vec());
            check_grid(&rho_grid)?;
            let alpha = args.alpha.or(file.alpha).unwrap_or(0.05);
            check_alpha(alpha)?;
            let resampling_check = args.resampling_check.or(file.resampling_check);
            if resampling_check.is_some_and(|r| r < 2) {
                return Err(CliError::config("--resampling-check needs at least 2 draws", "use e.g. 1000"));
            }
            for p in [&pheno, &geno] {
                if !p.is_file() {
                    return Err(CliError::input("config", format!("file {} does not exist", p.display()), "check the path"));
                }
            }
            if trait1 == trait2 {
                return Err(CliError::config("trait1 and trait2 are the same column", "name two different trait columns"));
            }
            Ok(RunConfig {
                mode: Mode::Test,
                pheno: pheno.clone(),
                geno: geno.clone(),
                covars,
                trait1: trait1.clone(),
                trait2: trait2.clone(),
                trait1_type,
                margins,
                copulas,
                rho_grid,
                weights: args.weights.or(file.weights).unwrap_or(WeightChoice::Beta),
                alpha,
                seed: args.seed.or(file.seed).unwrap_or(DEFAULT_SEED),
                out: args.out.clone().or_else(|| file.out.clone()),
                resampling_check,
                sequential: args.sequential,
            })
        })();
        cfg.map_err(Err)
    }
}

/// Fully resolved options for `cbmat simulate`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulateConfig {
    pub spec: ScenarioSpec,
    /// Copulas fitted to each replicate; empty means the generating copula.
    pub fit_copulas: Vec<CopulaFamily>,
    pub rho_grid: Vec<f64>,
    pub resampling_check: Option<usize>,
    pub out: Option<PathBuf>,
    pub pvalues: Option<PathBuf>,
    pub sequential: bool,
}

impl SimulateConfig {
    pub fn resolve(args: &SimulateArgs, file: &FileConfig) -> CliResult<SimulateConfig> {
        let preset_name = args.preset.clone().or_else(|| file.preset.clone());
        let key = args.scenario.clone().or_else(|| file.scenario.clone());
        let mut spec = match (preset_name, key) {
            (Some(p), Some(k)) => preset(&p, &k).map_err(|e| CliError::config(e.to_string(), "presets: table2|table4 with <copula>-<tau>, power with h2-X-v-X-rho-X-tau-X"))?,
            (Some(_), None) => return Err(CliError::config("--preset needs --scenario", "e.g. --scenario gaussian-0.20")),
            (None, _) => {
                let copula = args.copula.as_deref().or(file.copula.as_deref()).unwrap_or("gaussian");
                let copula = copula.parse::<CopulaFamily>().map_err(|e| CliError::config(e.to_string(), "gaussian, frank or clayton"))?;
                let m1 = parse_family(args.margin1.as_deref().or(file.margin1.as_deref()).unwrap_or("exponential"))?;
                let m2 = parse_family(args.margin2.as_deref().or(file.margin2.as_deref()).unwrap_or("exponential"))?;
                let tau = args.tau.or(file.tau).unwrap_or(0.2);
                ScenarioSpec::null(copula, tau, m1, m2)
            }
        };
        macro_rules! set {
            ($field:ident, $target:expr) => {
                if let Some(v) = args.$field.clone().or_else(|| file.$field.clone()) {
                    $target = v;
                }
            };
        }
        set!(replicates, spec.replicates);
        set!(seed, spec.seed);
        set!(n, spec.n);
        set!(r, spec.r);
        set!(h2, spec.h2);
        set!(causal_fraction, spec.causal_fraction);
        set!(rho, spec.rho);
        set!(alpha, spec.alpha);
        if args.preset.is_some() || file.preset.is_some() {
            set!(tau, spec.tau);
        }
        let lo = args.maf_lo.or(file.maf_lo);
        let hi = args.maf_hi.or(file.maf_hi);
        if lo.is_some() || hi.is_some() {
            let (l0, h0) = match spec.maf {
                MafSpec::Uniform { lo, hi } => (lo, hi),
                MafSpec::Fixed { .. } => (0.005, 0.5),
            };
            spec.maf = MafSpec::Uniform { lo: lo.unwrap_or(l0), hi: hi.unwrap_or(h0) };
        }
        spec.validate().map_err(|e| CliError::config(e.to_string(), "check the scenario flags"))?;
        if spec.replicates < 100 {
            return Err(CliError::config(format!("{} replicates", spec.replicates), "use at least 100 replicates"));
        }
        let fit = args.fit_copula.as_deref().or(file.fit_copula.as_deref()).unwrap_or("true");
        let fit_copulas = if fit.trim().eq_ignore_ascii_case("true") { Vec::new() } else { parse_copulas(fit)? };
        let rho_grid = args.rho_grid.clone().or_else(|| file.rho_grid.clone()).unwrap_or_else(|| DEFAULT_RHO_GRID.to_vec());
        check_grid(&rho_grid)?;
        Ok(SimulateConfig {
            spec,
            fit_copulas,
            rho_grid,
            resampling_check: args.resampling_check.or(file.resampling_check),
            out: args.out.clone().or_else(|| file.out.clone()),
            pvalues: args.pvalues.clone().or_else(|| file.pvalues.clone()),
            sequential: args.sequential,
        })
    }
}
