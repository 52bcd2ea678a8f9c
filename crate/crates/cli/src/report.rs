//! Versioned JSON result document for `cbmat test`.

use cbmat::joint_null::SelectionReport;
use cbmat::score_engine::QformMethod;
use cbmat::TestResult;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult, FailureKind};
use crate::ingest::Ingested;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize)]
pub struct ResultDocument {
    pub schema_version: u32,
    pub status: &'static str,
    pub tool_version: &'static str,
    /// Seconds since the Unix epoch; the only field that differs between identical runs.
    pub generated_at: u64,
    pub config: RunConfig,
    pub data: DataSummary,
    pub model: ModelSummary,
    pub selection: SelectionReport,
    pub per_rho: Vec<RhoEntry>,
    pub rho_optimal: f64,
    pub rho_tie: bool,
    pub p_min: f64,
    pub p_combined: f64,
    pub p_combined_std_error: f64,
    pub p_resampling: Option<f64>,
    pub significant: bool,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataSummary {
    pub subjects: usize,
    pub dropped_missing: usize,
    pub unmatched: usize,
    pub variants: Vec<String>,
    pub maf: Vec<f64>,
    pub weights: Vec<f64>,
    pub dropped_variants: Vec<String>,
    pub imputed_dosages: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct MarginSummary {
    pub family: String,
    pub coefficients: Vec<(String, f64)>,
    pub phi: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelSummary {
    pub copula: String,
    pub theta: f64,
    pub kendall_tau: f64,
    pub margin1: MarginSummary,
    pub margin2: MarginSummary,
    pub loglik: f64,
    pub aic: f64,
    pub parameters: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct RhoEntry {
    pub rho: f64,
    pub q: f64,
    pub p: f64,
    pub method: QformMethod,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub converged: bool,
    pub iterations: usize,
    pub gradient_norm: f64,
    pub boundary: bool,
    pub gamma_repaired: bool,
    pub information_ridge: f64,
    pub warnings: Vec<String>,
}

fn margin_summary(spec: &cbmat::MarginSpec, names: &[String]) -> MarginSummary {
    MarginSummary {
        family: spec.family.name(),
        coefficients: names.iter().cloned().zip(spec.gamma.iter().copied()).collect(),
        phi: spec.phi,
    }
}

fn now() -> u64 {
    std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

impl ResultDocument {
    pub fn build(cfg: &RunConfig, data: &Ingested, weights: &[f64], res: &TestResult) -> CliResult<Self> {
        let names = data.x.names.clone();
        let mut warnings = data.warnings.clone();
        warnings.extend(res.warnings.iter().cloned());
        let doc = ResultDocument {
            schema_version: SCHEMA_VERSION,
            status: "ok",
            tool_version: env!("CARGO_PKG_VERSION"),
            generated_at: now(),
            config: cfg.clone(),
            data: DataSummary {
                subjects: data.ids.len(),
                dropped_missing: data.dropped_missing,
                unmatched: data.unmatched,
                variants: data.variants.clone(),
                maf: data.maf.clone(),
                weights: weights.to_vec(),
                dropped_variants: data.dropped_variants.clone(),
                imputed_dosages: data.imputed,
            },
            model: ModelSummary {
                copula: res.fit.copula.family.name().into(),
                theta: res.fit.copula.theta,
                kendall_tau: res.fit.tau(),
                margin1: margin_summary(&res.fit.margin1, &names),
                margin2: margin_summary(&res.fit.margin2, &names),
                loglik: res.fit.loglik,
                aic: res.fit.aic,
                parameters: res.fit.k,
            },
            selection: res.selection.clone(),
            per_rho: res.per_rho.iter().map(|r| RhoEntry { rho: r.rho, q: r.q, p: r.p, method: r.method }).collect(),
            rho_optimal: res.rho_optimal,
            rho_tie: res.rho_tie,
            p_min: res.p_min,
            p_combined: res.p_combined,
            p_combined_std_error: res.p_combined_std_error,
            p_resampling: res.p_resampling,
            significant: res.p_combined < cfg.alpha,
            diagnostics: Diagnostics {
                converged: res.fit.converged,
                iterations: res.fit.iterations,
                gradient_norm: res.fit.gradient_norm,
                boundary: res.fit.boundary,
                gamma_repaired: res.gamma_repaired,
                information_ridge: res.parts.info.ridge,
                warnings,
            },
        };
        doc.check()?;
        Ok(doc)
    }

    /// All numbers finite, p-values in `[0, 1]`.
    pub fn check(&self) -> CliResult<()> {
        let fail = |what: &str| {
            Err(CliError::new(FailureKind::Analysis, "report", format!("{what} is not finite or out of range"), "inspect the diagnostics of a sequential rerun"))
        };
        let m = &self.model;
        let mut nums = vec![m.theta, m.kendall_tau, m.loglik, m.aic, m.margin1.phi, m.margin2.phi, self.rho_optimal, self.p_combined_std_error];
        nums.extend(m.margin1.coefficients.iter().chain(&m.margin2.coefficients).map(|c| c.1));
        nums.extend(self.per_rho.iter().map(|r| r.q));
        nums.extend(self.selection.entries.iter().flat_map(|e| [e.loglik, e.aic]));
        nums.extend(self.data.maf.iter().chain(&self.data.weights).copied());
        nums.extend([self.diagnostics.gradient_norm, self.diagnostics.information_ridge]);
        if nums.iter().any(|v| !v.is_finite()) {
            return fail("a reported number");
        }
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        if !self.per_rho.iter().all(|r| unit(r.p)) || !unit(self.p_min) || !unit(self.p_combined) || !self.p_resampling.is_none_or(unit) {
            return fail("a p-value");
        }
        Ok(())
    }

    pub fn to_json(&self) -> CliResult<String> {
        serde_json::to_string_pretty(self).map_err(|e| CliError::output(e.to_string()))
    }
}
