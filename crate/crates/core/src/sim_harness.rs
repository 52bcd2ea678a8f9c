//! Data generation under the random-effect model and batch type-I-error / power runs.
//!
//! Each dataset draws genotypes `Gᵢⱼ ~ Bin(2, pⱼ)`, covariates
//! `X = (1, Bern(½), N(0, 1))`, a random region effect
//! `β ~ N(0, η [W ρW; ρW W])` on a random causal subset, copula uniforms
//! `(U, V)` and traits `Y₁ = F₁⁻¹(U | Xγ₁ + Gβ₁)`, `Y₂ = F₂⁻¹(V | Xγ₂ + Gβ₂)`.

use crate::copula::{sample_pair, CopulaFamily, CopulaSpec};
use crate::error::{Error, Result};
use crate::joint_null::fit_null;
use crate::margins::{quantile_at_eta, DesignMatrix, MarginCandidate, MarginFamily};
use crate::par::{map_range, Exec};
use crate::score_engine::{run_cbmat, test_with_fit, KernelConfig, ModelOptions, QmcOptions, WeightScheme, DEFAULT_RHO_GRID};
use crate::joint_null::SelectionReport;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;

/// Variances of the three simulated covariates.
pub const COVARIATE_VARIANCES: [f64; 3] = [0.0, 0.25, 1.0];
pub const DEFAULT_GAMMA1: [f64; 3] = [-0.20, 0.33, 0.78];
pub const DEFAULT_GAMMA2: [f64; 3] = [1.52, 1.25, 1.86];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MafSpec {
    Fixed { values: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub n: usize,
    pub r: usize,
    pub maf: MafSpec,
    /// Draw a fresh MAF vector for every dataset; otherwise one vector is drawn from the master seed.
    pub resample_region: bool,
    pub tau: f64,
    pub copula: CopulaFamily,
    pub margin1: MarginFamily,
    pub margin2: MarginFamily,
    pub gamma1: Vec<f64>,
    pub gamma2: Vec<f64>,
    pub phi1: f64,
    pub phi2: f64,
    pub causal_fraction: f64,
    pub rho: f64,
    pub h2: f64,
    pub replicates: usize,
    pub alpha: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    /// Null scenario with the default sample size, region and covariate effects.
    pub fn null(copula: CopulaFamily, tau: f64, margin1: MarginFamily, margin2: MarginFamily) -> Self {
        ScenarioSpec {
            name: format!("{}-{}-{}-tau{tau:.2}", margin1.name(), margin2.name(), copula.name()),
            n: 503,
            r: 30,
            maf: MafSpec::Uniform { lo: 0.005, hi: 0.5 },
            resample_region: true,
            tau,
            copula,
            margin1,
            margin2,
            gamma1: DEFAULT_GAMMA1.to_vec(),
            gamma2: DEFAULT_GAMMA2.to_vec(),
            phi1: 1.0,
            phi2: 1.0,
            causal_fraction: 0.2,
            rho: 0.0,
            h2: 0.0,
            replicates: 2000,
            alpha: 0.01,
            seed: 20_240_901,
        }
    }

    /// Exponential/Exponential margins.
    pub fn continuous(copula: CopulaFamily, tau: f64) -> Self {
        Self::null(copula, tau, MarginFamily::ExponentialLog, MarginFamily::ExponentialLog)
    }

    /// Probit/Exponential margins.
    pub fn mixed(copula: CopulaFamily, tau: f64) -> Self {
        Self::null(copula, tau, MarginFamily::BinaryProbitLatent, MarginFamily::ExponentialLog)
    }

    /// Alternative with region heritability `h2`, causal fraction `v` and pleiotropy `rho`.
    pub fn power(copula: CopulaFamily, tau: f64, h2: f64, v: f64, rho: f64) -> Self {
        let mut s = Self::continuous(copula, tau);
        s.h2 = h2;
        s.causal_fraction = v;
        s.rho = rho;
        s.replicates = 1000;
        s.name = format!("{}-h2{h2}-v{v}-rho{rho}", s.name);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ParameterDomain(m));
        if self.n < 10 || self.r == 0 {
            return bad(format!("n = {}, r = {}", self.n, self.r));
        }
        match &self.maf {
            MafSpec::Fixed { values } => {
                if values.len() != self.r || values.iter().any(|p| !(*p > 0.0 && *p <= 0.5)) {
                    return bad("fixed MAF vector must have length r with entries in (0, 0.5]".into());
                }
            }
            MafSpec::Uniform { lo, hi } => {
                if !(*lo > 0.0 && lo < hi && *hi <= 0.5) {
                    return bad(format!("MAF range ({lo}, {hi})"));
                }
            }
        }
        if !(self.tau > -1.0 && self.tau < 1.0) {
            return bad(format!("tau {}", self.tau));
        }
        CopulaSpec::from_tau(self.copula, self.tau)?;
        if self.margin2.is_binary() {
            return bad("trait 2 must be continuous".into());
        }
        if self.gamma1.len() != 3 || self.gamma2.len() != 3 {
            return bad("covariate effects must have length 3".into());
        }
        if !(self.phi1 > 0.0 && self.phi2 > 0.0) {
            return bad("dispersions must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.causal_fraction) || !(0.0..=1.0).contains(&self.rho) {
            return bad("causal fraction and rho must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.h2) {
            return bad(format!("h2 {}", self.h2));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha {}", self.alpha));
        }
        Ok(())
    }

    pub fn mixed_traits(&self) -> bool {
        self.margin1.is_binary()
    }

    /// `γᵀ Var[X] γ + φ` for trait 1, the calibration reference.
    pub fn phi_star(&self) -> f64 {
        phi_star(&self.gamma1, self.phi1)
    }

    pub fn n_causal(&self) -> usize {
        (self.causal_fraction * self.r as f64 - 1e-9).ceil().max(0.0) as usize
    }
}

/// `γᵀ Var[X] γ + φ` for the simulated covariates.
pub fn phi_star(gamma: &[f64], phi: f64) -> f64 {
    gamma.iter().zip(COVARIATE_VARIANCES).map(|(g, v)| g * g * v).sum::<f64>() + phi
}

/// `η = φ* h² / (2 (1 - h²) Σⱼ wⱼ pⱼ (pⱼ + 1))`.
pub fn eta_from_h2(h2: f64, phi_star: f64, weights: &[f64], maf: &[f64]) -> Result<f64> {
    if !(0.0..1.0).contains(&h2) {
        return Err(Error::ParameterDomain(format!("h2 {h2} outside [0, 1)")));
    }
    if weights.len() != maf.len() {
        return Err(Error::Dimension(format!("{} weights for {} variants", weights.len(), maf.len())));
    }
    if h2 == 0.0 {
        return Ok(0.0);
    }
    let s: f64 = weights.iter().zip(maf).map(|(w, p)| w * p * (p + 1.0)).sum();
    if !(s > 0.0) {
        return Err(Error::ParameterDomain("no causal variant carries weight".into()));
    }
    Ok(phi_star * h2 / (2.0 * (1.0 - h2) * s))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub g: DMatrix<f64>,
    pub x: DesignMatrix,
    pub y1: Vec<f64>,
    pub y2: Vec<f64>,
    /// `(β₁, β₂)` stacked.
    pub beta: Vec<f64>,
    pub eta: f64,
    pub maf: Vec<f64>,
    pub causal: Vec<usize>,
}

fn draw_maf<R: Rng + ?Sized>(spec: &MafSpec, r: usize, rng: &mut R) -> Vec<f64> {
    match spec {
        MafSpec::Fixed { values } => values.clone(),
        MafSpec::Uniform { lo, hi } => (0..r).map(|_| rng.random_range(*lo..*hi)).collect(),
    }
}

/// MAF vector shared by all datasets when the region is not resampled.
pub fn region_maf(spec: &ScenarioSpec) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(u64::MAX);
    draw_maf(&spec.maf, spec.r, &mut rng)
}

/// One dataset. `data_rng` drives genotypes, covariates and copula draws; `effect_rng`
/// drives the causal set and the effect sizes, so that scenarios differing only in
/// `h2`, `v` or `rho` share everything else under a common seed.
pub fn simulate_dataset_with<R: Rng + ?Sized>(
    spec: &ScenarioSpec,
    maf: Option<&[f64]>,
    data_rng: &mut R,
    effect_rng: &mut R,
) -> Result<SimulatedDataset> {
    spec.validate()?;
    let (n, r) = (spec.n, spec.r);
    let maf = match maf {
        Some(m) if m.len() == r => m.to_vec(),
        Some(m) => return Err(Error::Dimension(format!("{} MAFs for {r} variants", m.len()))),
        None => draw_maf(&spec.maf, r, data_rng),
    };
    let mut g = DMatrix::zeros(n, r);
    for (j, &p) in maf.iter().enumerate() {
        let bin = Binomial::new(2, p).map_err(|e| Error::ParameterDomain(e.to_string()))?;
        for i in 0..n {
            g[(i, j)] = bin.sample(data_rng) as f64;
        }
    }
    let mut xm = DMatrix::zeros(n, 3);
    for i in 0..n {
        xm[(i, 0)] = 1.0;
        xm[(i, 1)] = if data_rng.random::<f64>() < 0.5 { 1.0 } else { 0.0 };
        xm[(i, 2)] = data_rng.sample::<f64, _>(StandardNormal);
    }
    let cop = CopulaSpec::from_tau(spec.copula, spec.tau)?;
    let uv: Vec<(f64, f64)> = (0..n).map(|_| sample_pair(&cop, data_rng)).collect();

    // effects: permutation prefix gives nested causal sets across v
    let mut order: Vec<usize> = (0..r).collect();
    order.shuffle(effect_rng);
    let z: Vec<(f64, f64)> = (0..r)
        .map(|_| (effect_rng.sample::<f64, _>(StandardNormal), effect_rng.sample::<f64, _>(StandardNormal)))
        .collect();
    let mut causal: Vec<usize> = order[..spec.n_causal()].to_vec();
    causal.sort_unstable();
    let mut w = vec![0.0; r];
    for &j in &causal {
        w[j] = 1.0;
    }
    let eta = if causal.is_empty() { 0.0 } else { eta_from_h2(spec.h2, spec.phi_star(), &w, &maf)? };
    let mut beta = vec![0.0; 2 * r];
    if eta > 0.0 {
        let s = eta.sqrt();
        let c = (1.0 - spec.rho * spec.rho).max(0.0).sqrt();
        for &j in &causal {
            let (z1, z2) = z[j];
            beta[j] = s * z1;
            beta[r + j] = s * (spec.rho * z1 + c * z2);
        }
    }

    let mut y1 = Vec::with_capacity(n);
    let mut y2 = Vec::with_capacity(n);
    for i in 0..n {
        let mut e1 = 0.0;
        let mut e2 = 0.0;
        for k in 0..3 {
            e1 += xm[(i, k)] * spec.gamma1[k];
            e2 += xm[(i, k)] * spec.gamma2[k];
        }
        for &j in &causal {
            e1 += g[(i, j)] * beta[j];
            e2 += g[(i, j)] * beta[r + j];
        }
        let (u, v) = uv[i];
        let u = u.clamp(1e-15, 1.0 - 1e-15);
        let v = v.clamp(1e-15, 1.0 - 1e-15);
        y1.push(quantile_at_eta(spec.margin1, spec.phi1, u, e1));
        y2.push(quantile_at_eta(spec.margin2, spec.phi2, v, e2));
    }
    let x = DesignMatrix::new(xm, vec!["intercept".into(), "bern".into(), "normal".into()])?;
    Ok(SimulatedDataset { g, x, y1, y2, beta, eta, maf, causal })
}

/// One dataset from its own per-replicate streams.
pub fn simulate_dataset(spec: &ScenarioSpec, index: u64) -> Result<SimulatedDataset> {
    let (mut d, mut e) = replicate_rngs(spec.seed, index);
    let maf = (!spec.resample_region).then(|| region_maf(spec));
    simulate_dataset_with(spec, maf.as_deref(), &mut d, &mut e)
}

/// Independent data and effect streams for replicate `index`.
pub fn replicate_rngs(seed: u64, index: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut d = ChaCha8Rng::seed_from_u64(seed);
    d.set_stream(2 * index);
    let mut e = ChaCha8Rng::seed_from_u64(seed);
    e.set_stream(2 * index + 1);
    (d, e)
}

/// Model fitted to each simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisOptions {
    /// Copula candidates; empty means the generating copula.
    pub copulas: Vec<CopulaFamily>,
    /// Trait-2 margin candidates; empty means the generating family.
    pub margins2: Vec<MarginCandidate>,
    /// Trait-1 margin candidates for continuous scenarios; empty means the generating family.
    pub margins1: Vec<MarginCandidate>,
    pub rho_grid: Vec<f64>,
    pub qmc: QmcOptions,
    /// Replicates and seed for the resampling min-p; seeds are offset by the replicate index.
    pub resampling: Option<(usize, u64)>,
    /// Replicate-level execution.
    pub exec: Exec,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            copulas: Vec::new(),
            margins1: Vec::new(),
            margins2: Vec::new(),
            rho_grid: DEFAULT_RHO_GRID.to_vec(),
            qmc: QmcOptions::default(),
            resampling: None,
            exec: Exec::default(),
        }
    }
}

impl AnalysisOptions {
    pub fn with_copulas(copulas: &[CopulaFamily]) -> Self {
        AnalysisOptions { copulas: copulas.to_vec(), ..Default::default() }
    }

    fn model_options(&self, spec: &ScenarioSpec, index: u64) -> ModelOptions {
        let fam = |f: MarginFamily| vec![MarginCandidate::Family(f)];
        let pick = |v: &Vec<MarginCandidate>, f| if v.is_empty() { fam(f) } else { v.clone() };
        ModelOptions {
            copulas: if self.copulas.is_empty() { vec![spec.copula] } else { self.copulas.clone() },
            margins1: pick(&self.margins1, spec.margin1),
            margins2: pick(&self.margins2, spec.margin2),
            mixed: spec.mixed_traits(),
            // parallelism lives at the replicate level
            exec: Exec::Sequential,
            qmc: self.qmc,
            resampling: self.resampling.map(|(reps, seed)| (reps, seed.wrapping_add(index))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub index: u64,
    pub p_combined: Option<f64>,
    pub p_min: Option<f64>,
    pub rho_optimal: Option<f64>,
    pub copula: Option<CopulaFamily>,
    pub tau_hat: Option<f64>,
    pub p_resampling: Option<f64>,
    pub error: Option<String>,
}

impl ReplicateRecord {
    pub fn failed(index: u64, error: String) -> Self {
        ReplicateRecord {
            index,
            p_combined: None,
            p_min: None,
            rho_optimal: None,
            copula: None,
            tau_hat: None,
            p_resampling: None,
            error: Some(error),
        }
    }

    pub fn from_p(index: u64, p: f64) -> Self {
        ReplicateRecord { p_combined: Some(p), error: None, ..Self::failed(index, String::new()) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub scenario: String,
    pub replicates: usize,
    pub failures: usize,
    pub rejections: usize,
    pub alpha: f64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub records: Vec<ReplicateRecord>,
}

impl ExperimentSummary {
    pub fn ci_contains(&self, x: f64) -> bool {
        self.ci_low <= x && x <= self.ci_high
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.p_combined).collect()
    }
}

/// Exact two-sided binomial confidence interval for `k` successes out of `n`.
pub fn clopper_pearson(k: usize, n: usize, level: f64) -> (f64, f64) {
    assert!(n > 0 && k <= n);
    let a = 0.5 * (1.0 - level);
    let (kf, nf) = (k as f64, n as f64);
    // P(X ≥ k | p) = I_p(k, n-k+1); P(X ≤ k | p) = 1 - I_p(k+1, n-k)
    let lo = if k == 0 { 0.0 } else { bisect(|p| beta_reg(kf, nf - kf + 1.0, p) - a) };
    let hi = if k == n { 1.0 } else { bisect(|p| (1.0 - beta_reg(kf + 1.0, nf - kf, p)) - a) };
    (lo, hi)
}

fn bisect<F: Fn(f64) -> f64>(f: F) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let increasing = f(1.0) > f(0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == increasing {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Runs `replicates` datasets through `analyze` and summarizes the rejection rate at `alpha`.
/// Replicate failures are excluded when they make up under 1% of replicates.
pub fn run_experiment_with<F>(spec: &ScenarioSpec, exec: Exec, analyze: F) -> Result<ExperimentSummary>
where
    F: Fn(&SimulatedDataset, u64) -> Result<ReplicateRecord> + Sync + Send,
{
    spec.validate()?;
    if spec.replicates < 100 {
        return Err(Error::Input(format!("{} replicates; at least 100 required", spec.replicates)));
    }
    let maf = (!spec.resample_region).then(|| region_maf(spec));
    let records: Vec<ReplicateRecord> = map_range(exec, spec.replicates, |i| {
        let i = i as u64;
        let (mut d, mut e) = replicate_rngs(spec.seed, i);
        let out = simulate_dataset_with(spec, maf.as_deref(), &mut d, &mut e).and_then(|ds| analyze(&ds, i));
        match out {
            Ok(rec) => rec,
            Err(err) => ReplicateRecord::failed(i, err.to_string()),
        }
    });
    summarize(spec, records)
}

fn summarize(spec: &ScenarioSpec, records: Vec<ReplicateRecord>) -> Result<ExperimentSummary> {
    let failures = records.iter().filter(|r| r.p_combined.is_none()).count();
    if failures * 100 >= spec.replicates {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Experiment(format!(
            "{failures} of {} replicates failed (first: {first})",
            spec.replicates
        )));
    }
    let ok = spec.replicates - failures;
    let rejections = records.iter().filter(|r| r.p_combined.is_some_and(|p| p < spec.alpha)).count();
    let (ci_low, ci_high) = clopper_pearson(rejections, ok, 0.95);
    Ok(ExperimentSummary {
        scenario: spec.name.clone(),
        replicates: spec.replicates,
        failures,
        rejections,
        alpha: spec.alpha,
        rate: rejections as f64 / ok as f64,
        ci_low,
        ci_high,
        records,
    })
}

/// Analyzes one dataset with the configured null model and uniform variant weights.
pub fn analyze_dataset(spec: &ScenarioSpec, opts: &AnalysisOptions, ds: &SimulatedDataset, index: u64) -> Result<ReplicateRecord> {
    let kernel = KernelConfig::new(vec![1.0; spec.r], opts.rho_grid.clone(), WeightScheme::Uniform)?;
    let model = opts.model_options(spec, index);
    let res = if model.copulas.len() == 1 && model.margins1.len() == 1 && model.margins2.len() == 1 {
        let fit = fit_null(&ds.y1, &ds.y2, &ds.x, model.copulas[0], model.margins1[0], model.margins2[0], model.mixed)?;
        test_with_fit(fit, SelectionReport::default(), &ds.y1, &ds.y2, &ds.x, &ds.g, &kernel, &model)?
    } else {
        run_cbmat(&ds.y1, &ds.y2, &ds.x, &ds.g, &kernel, &model)?
    };
    Ok(ReplicateRecord {
        index,
        p_combined: Some(res.p_combined),
        p_min: Some(res.p_min),
        rho_optimal: Some(res.rho_optimal),
        copula: Some(res.fit.copula.family),
        tau_hat: Some(res.fit.tau()),
        p_resampling: res.p_resampling,
        error: None,
    })
}

/// Type-I-error or power experiment for one scenario.
pub fn run_experiment(spec: &ScenarioSpec, opts: &AnalysisOptions) -> Result<ExperimentSummary> {
    run_experiment_with(spec, opts.exec, |ds, i| analyze_dataset(spec, opts, ds, i))
}

/// Named scenario presets: `table2` (continuous null) and `table4` (mixed null) with keys
/// `<copula>-<tau>`, e.g. `gaussian-0.20`; `power` with keys `h2-<h2>-v-<v>-rho-<rho>-tau-<tau>`.
pub fn preset(table: &str, key: &str) -> Result<ScenarioSpec> {
    let unknown = || Error::Input(format!("unknown scenario '{key}' for preset '{table}'"));
    match table {
        "table2" | "table4" => {
            let (c, t) = key.rsplit_once('-').ok_or_else(unknown)?;
            let copula: CopulaFamily = c.parse().map_err(|_| unknown())?;
            let tau: f64 = t.parse().map_err(|_| unknown())?;
            if ![0.05, 0.2, 0.4].iter().any(|v| (v - tau).abs() < 1e-12) {
                return Err(unknown());
            }
            Ok(if table == "table2" { ScenarioSpec::continuous(copula, tau) } else { ScenarioSpec::mixed(copula, tau) })
        }
        "power" => {
            let parts: Vec<&str> = key.split('-').collect();
            if parts.len() != 8 || parts[0] != "h2" || parts[2] != "v" || parts[4] != "rho" || parts[6] != "tau" {
                return Err(unknown());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| unknown());
            let s = ScenarioSpec::power(CopulaFamily::Gaussian, num(parts[7])?, num(parts[1])?, num(parts[3])?, num(parts[5])?);
            s.validate()?;
            Ok(s)
        }
        _ => Err(Error::Input(format!("unknown preset '{table}'"))),
    }
}
