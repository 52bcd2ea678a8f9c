//! Variance-component score test over a grid of pleiotropy kernels.
//!
//! With per-subject scores `L = (L₁, L₂)` and second derivatives `A_kl` of the
//! null log-likelihood in the two linear predictors, the region score is
//! `S = (I₂ ⊗ Gᵀ) L` and its information is `B = -(I₂ ⊗ Gᵀ) D (I₂ ⊗ G)`.
//! `B` is corrected for the estimation of the nuisance parameters ξ before the
//! null distribution of each `Q_ρ = Sᵀ (Σ_ρ ⊗ W) S` is evaluated.

pub mod davies;
pub mod mvn;

use crate::copula::CopulaFamily;
use crate::error::{Error, Result, StageExt};
use crate::joint_null::{select_model, subject_derivs, JointLik, NullFit, SelectionReport};
use crate::linalg::{clipped_eigen, inverse_spd_ridged, nearest_correlation, sqrt_psd, symmetrize};
use crate::margins::{DesignMatrix, MarginCandidate};
use crate::par::{map_range, Exec};
use crate::special::{kendall_tau, norm_quantile};
use davies::{davies, liu_survival};
pub use mvn::QmcOptions;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub const DEFAULT_RHO_GRID: [f64; 11] = [0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];

const DAVIES_ACC: f64 = 1e-9;
const DAVIES_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum WeightScheme {
    Uniform,
    /// Beta(a, b) density evaluated at each variant's MAF.
    BetaMaf { a: f64, b: f64 },
}

/// Diagonal variant kernel `W` and the grid of pleiotropy correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    pub weights: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub weight_scheme: WeightScheme,
}

impl KernelConfig {
    pub fn new(weights: Vec<f64>, rho_grid: Vec<f64>, weight_scheme: WeightScheme) -> Result<Self> {
        let k = KernelConfig { weights, rho_grid, weight_scheme };
        k.validate()?;
        Ok(k)
    }

    /// Unit weights on the default grid.
    pub fn uniform(r: usize) -> Self {
        KernelConfig { weights: vec![1.0; r], rho_grid: DEFAULT_RHO_GRID.to_vec(), weight_scheme: WeightScheme::Uniform }
    }

    /// Beta(a, b) density weights from per-variant MAFs on the default grid.
    pub fn beta_maf(maf: &[f64], a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0) {
            return Err(Error::ParameterDomain(format!("beta weight shape ({a}, {b})")));
        }
        let ln_b = crate::special::ln_gamma(a) + crate::special::ln_gamma(b) - crate::special::ln_gamma(a + b);
        let weights = maf
            .iter()
            .map(|&p| {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::ParameterDomain(format!("MAF {p} outside (0, 1)")));
                }
                Ok(((a - 1.0) * p.ln() + (b - 1.0) * (-p).ln_1p() - ln_b).exp())
            })
            .collect::<Result<Vec<_>>>()?;
        KernelConfig::new(weights, DEFAULT_RHO_GRID.to_vec(), WeightScheme::BetaMaf { a, b })
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() {
            return Err(Error::Input("kernel needs at least one variant weight".into()));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
            return Err(Error::ParameterDomain(format!("variant weight {w} must be positive")));
        }
        if self.rho_grid.is_empty() {
            return Err(Error::Input("empty rho grid".into()));
        }
        if self.rho_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::ParameterDomain("rho grid values must lie in [0, 1]".into()));
        }
        if self.rho_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::ParameterDomain("rho grid must be strictly increasing".into()));
        }
        Ok(())
    }
}

/// How the null model is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub copulas: Vec<CopulaFamily>,
    pub margins1: Vec<MarginCandidate>,
    pub margins2: Vec<MarginCandidate>,
    /// Trait 1 binary (probit liability), trait 2 continuous.
    pub mixed: bool,
    pub exec: Exec,
    pub qmc: QmcOptions,
    /// Replicates and seed for the resampling min-p check.
    pub resampling: Option<(usize, u64)>,
}

impl Default for ModelOptions {
    fn default() -> Self {
        ModelOptions {
            copulas: CopulaFamily::ALL.to_vec(),
            margins1: MarginCandidate::continuous_defaults(),
            margins2: MarginCandidate::continuous_defaults(),
            mixed: false,
            exec: Exec::default(),
            qmc: QmcOptions::default(),
            resampling: None,
        }
    }
}

/// The four diagonals of `D`; `A₂₁ = A₁₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct DBlocks {
    pub a11: DVector<f64>,
    pub a12: DVector<f64>,
    pub a22: DVector<f64>,
}

impl DBlocks {
    pub fn a21(&self) -> &DVector<f64> {
        &self.a12
    }

    /// Dense `2n × 2n` form.
    pub fn dense(&self) -> DMatrix<f64> {
        let n = self.a11.len();
        let mut d = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            d[(i, i)] = self.a11[i];
            d[(i, n + i)] = self.a12[i];
            d[(n + i, i)] = self.a12[i];
            d[(n + i, n + i)] = self.a22[i];
        }
        d
    }
}

/// Information blocks at `(β = 0, ξ̂)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectedInformation {
    pub b: DMatrix<f64>,
    pub i_beta_xi: DMatrix<f64>,
    pub i_xi_xi: DMatrix<f64>,
    pub b_tilde: DMatrix<f64>,
    /// Ridge added to `I_ξξ` before inversion (0 when none).
    pub ridge: f64,
}

/// Everything the test statistic is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreParts {
    pub l: DVector<f64>,
    pub d: DBlocks,
    pub score: DVector<f64>,
    pub info: CorrectedInformation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QformMethod {
    Davies,
    /// Four-moment chi-square match, used when the inversion fails.
    MomentMatch,
    /// `q ≤ 0`; the survival probability is 1.
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QformPValue {
    pub p: f64,
    pub method: QformMethod,
    pub davies_ifault: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RhoResult {
    pub rho: f64,
    pub q: f64,
    pub eigenvalues: Vec<f64>,
    pub p: f64,
    pub method: QformMethod,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinpResult {
    pub p: f64,
    pub p_min: f64,
    pub std_error: f64,
    /// Γ needed a nearest-PSD repair.
    pub repaired: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub per_rho: Vec<RhoResult>,
    pub gamma: DMatrix<f64>,
    pub gamma_repaired: bool,
    pub p_min: f64,
    pub p_combined: f64,
    pub p_combined_std_error: f64,
    pub rho_optimal: f64,
    /// Several grid points share the minimal p-value; the smallest ρ is reported.
    pub rho_tie: bool,
    pub p_resampling: Option<f64>,
    pub fit: NullFit,
    pub selection: SelectionReport,
    pub parts: ScoreParts,
    pub warnings: Vec<String>,
}

fn check_g(g: &DMatrix<f64>, n: usize) -> Result<()> {
    if g.nrows() != n {
        return Err(Error::Dimension(format!("genotype matrix has {} rows for {n} subjects", g.nrows())));
    }
    if g.ncols() == 0 {
        return Err(Error::Input("genotype matrix has no variants".into()));
    }
    if let Some(i) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "genotype", index: i % n });
    }
    Ok(())
}

fn subjects_checked(fit: &NullFit, y1: &[f64], y2: &[f64], x: &DesignMatrix, offsets: Option<(&[f64], &[f64])>) -> Result<Vec<crate::joint_null::SubjectDerivs>> {
    let n = y1.len();
    if y2.len() != n || x.nrows() != n {
        return Err(Error::Dimension("traits and design have different lengths".into()));
    }
    let m = fit.model;
    let e1 = x.linear_predictor(&fit.margin1.gamma);
    let e2 = x.linear_predictor(&fit.margin2.gamma);
    (0..n)
        .map(|i| {
            let (o1, o2) = offsets.map_or((0.0, 0.0), |(a, b)| (a[i], b[i]));
            subject_derivs(&fit.copula, m.margin1, fit.margin1.phi, m.margin2, fit.margin2.phi, y1[i], y2[i], e1[i] + o1, e2[i] + o2)
                .ok_or(Error::NonFinite { what: "score contribution", index: i })
        })
        .collect()
}

/// Stacked per-subject scores `(L₁, L₂)` at `β = 0`.
pub fn compute_l(fit: &NullFit, y1: &[f64], y2: &[f64], x: &DesignMatrix) -> Result<DVector<f64>> {
    let s = subjects_checked(fit, y1, y2, x, None)?;
    let n = s.len();
    Ok(DVector::from_fn(2 * n, |k, _| if k < n { s[k].l1 } else { s[k - n].l2 }))
}

/// Diagonal blocks of the Hessian in the linear predictors at `β = 0`.
pub fn compute_d(fit: &NullFit, y1: &[f64], y2: &[f64], x: &DesignMatrix) -> Result<DBlocks> {
    let s = subjects_checked(fit, y1, y2, x, None)?;
    Ok(DBlocks {
        a11: DVector::from_iterator(s.len(), s.iter().map(|v| v.a11)),
        a12: DVector::from_iterator(s.len(), s.iter().map(|v| v.a12)),
        a22: DVector::from_iterator(s.len(), s.iter().map(|v| v.a22)),
    })
}

/// Null log-likelihood with the region effect `β = (β₁, β₂)` added to the linear predictors.
pub fn conditional_loglik(
    fit: &NullFit,
    y1: &[f64],
    y2: &[f64],
    x: &DesignMatrix,
    g: &DMatrix<f64>,
    beta: &[f64],
) -> Result<f64> {
    let r = g.ncols();
    if beta.len() != 2 * r {
        return Err(Error::Dimension(format!("β has length {}, expected {}", beta.len(), 2 * r)));
    }
    let o1 = g * DVector::from_column_slice(&beta[..r]);
    let o2 = g * DVector::from_column_slice(&beta[r..]);
    let s = subjects_checked(fit, y1, y2, x, Some((o1.as_slice(), o2.as_slice())))?;
    Ok(s.iter().map(|v| v.ll).sum())
}

/// `S = (I₂ ⊗ Gᵀ) L`.
pub fn score_vector(l: &DVector<f64>, g: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = g.nrows();
    let r = g.ncols();
    if l.len() != 2 * n {
        return Err(Error::Dimension(format!("L has length {}, expected {}", l.len(), 2 * n)));
    }
    let mut s = DVector::zeros(2 * r);
    s.rows_mut(0, r).copy_from(&(g.transpose() * l.rows(0, n)));
    s.rows_mut(r, r).copy_from(&(g.transpose() * l.rows(n, n)));
    Ok(s)
}

/// `Gᵀ diag(a) G`.
fn weighted_gram(g: &DMatrix<f64>, a: &DVector<f64>) -> DMatrix<f64> {
    let mut ga = g.clone();
    for mut col in ga.column_iter_mut() {
        col.component_mul_assign(a);
    }
    g.transpose() * ga
}

/// `B = -(I₂ ⊗ Gᵀ) D (I₂ ⊗ G)`.
pub fn information_b(d: &DBlocks, g: &DMatrix<f64>) -> DMatrix<f64> {
    let r = g.ncols();
    let b11 = weighted_gram(g, &d.a11);
    let b12 = weighted_gram(g, &d.a12);
    let b22 = weighted_gram(g, &d.a22);
    let mut b = DMatrix::zeros(2 * r, 2 * r);
    b.view_mut((0, 0), (r, r)).copy_from(&(-b11));
    b.view_mut((0, r), (r, r)).copy_from(&(-&b12));
    b.view_mut((r, 0), (r, r)).copy_from(&(-b12.transpose()));
    b.view_mut((r, r), (r, r)).copy_from(&(-b22));
    symmetrize(&mut b);
    b
}

/// `B̃ = B - I_βξ I_ξξ⁻¹ I_ξβ`, the inverse of the `ββ` block of the inverse observed information.
pub fn corrected_b(
    fit: &NullFit,
    y1: &[f64],
    y2: &[f64],
    x: &DesignMatrix,
    g: &DMatrix<f64>,
    d: &DBlocks,
) -> Result<CorrectedInformation> {
    let n = y1.len();
    check_g(g, n)?;
    let r = g.ncols();
    let p = x.ncols();
    let lik = JointLik::new(fit.model, y1, y2, &x.x);
    let xi = fit.xi_vector();
    let dim = lik.dim();
    let (_, _, h) = lik
        .objective(&xi, 2)
        .ok_or_else(|| Error::NumericDomain("null information is not finite at the fitted parameters".into()))?;
    let mut i_xi_xi = -h;
    symmetrize(&mut i_xi_xi);

    let b = information_b(d, g);
    let gt = g.transpose();
    let mut i_bx = DMatrix::zeros(2 * r, dim);
    let mut col = DVector::zeros(n);
    for a in 0..p {
        let xa = x.x.column(a);
        // γ₁ column: ∂L₁/∂η₁ = A₁₁ and ∂L₂/∂η₁ = A₁₂
        col.copy_from(&d.a11.component_mul(&xa));
        i_bx.view_mut((0, 1 + a), (r, 1)).copy_from(&(-(&gt * &col)));
        col.copy_from(&d.a12.component_mul(&xa));
        i_bx.view_mut((r, 1 + a), (r, 1)).copy_from(&(-(&gt * &col)));
        i_bx.view_mut((0, 1 + p + a), (r, 1)).copy_from(&(-(&gt * &col)));
        col.copy_from(&d.a22.component_mul(&xa));
        i_bx.view_mut((r, 1 + p + a), (r, 1)).copy_from(&(-(&gt * &col)));
    }
    let sens = lik
        .score_sensitivities(&xi)
        .ok_or_else(|| Error::NumericDomain("score sensitivities are not finite".into()))?;
    for (j, d1, d2) in sens {
        let v1 = &gt * DVector::from_vec(d1);
        let v2 = &gt * DVector::from_vec(d2);
        i_bx.view_mut((0, j), (r, 1)).copy_from(&(-v1));
        i_bx.view_mut((r, j), (r, 1)).copy_from(&(-v2));
    }

    let (b_tilde, ridge) = corrected_b_schur(&b, &i_bx, &i_xi_xi)?;
    Ok(CorrectedInformation { b, i_beta_xi: i_bx, i_xi_xi, b_tilde, ridge })
}

/// `B - I_βξ I_ξξ⁻¹ I_ξβ`; returns the ridge needed to invert `I_ξξ`.
pub fn corrected_b_schur(b: &DMatrix<f64>, i_bx: &DMatrix<f64>, i_xx: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (inv, ridge) = inverse_spd_ridged(i_xx)?;
    let mut b_tilde = b - i_bx * inv * i_bx.transpose();
    symmetrize(&mut b_tilde);
    Ok((b_tilde, ridge))
}

/// `B̃` from the partitioned-inverse formula
/// `I^{ββ} = I_ββ⁻¹ + I_ββ⁻¹ I_βξ Z⁻¹ I_ξβ I_ββ⁻¹`, `Z = I_ξξ - I_ξβ I_ββ⁻¹ I_βξ`, `B̃ = (I^{ββ})⁻¹`.
/// Requires `B` to be nonsingular.
pub fn corrected_b_partitioned(b: &DMatrix<f64>, i_bx: &DMatrix<f64>, i_xx: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let singular = || Error::NumericDomain("singular block in partitioned information".into());
    let b_inv = b.clone().try_inverse().ok_or_else(singular)?;
    let z = i_xx - i_bx.transpose() * &b_inv * i_bx;
    let z_inv = z.try_inverse().ok_or_else(singular)?;
    let upper = &b_inv + &b_inv * i_bx * z_inv * i_bx.transpose() * &b_inv;
    let mut out = upper.try_inverse().ok_or_else(singular)?;
    symmetrize(&mut out);
    Ok(out)
}

fn check_kernel(kernel: &KernelConfig, r: usize) -> Result<()> {
    kernel.validate()?;
    if kernel.weights.len() != r {
        return Err(Error::Dimension(format!("{} kernel weights for {r} variants", kernel.weights.len())));
    }
    Ok(())
}

/// `Q_ρ = (1-ρ)(S₁ᵀWS₁ + S₂ᵀWS₂) + ρ(S₁+S₂)ᵀW(S₁+S₂)` for every grid point.
pub fn q_values(score: &DVector<f64>, kernel: &KernelConfig) -> Result<Vec<f64>> {
    let r = kernel.weights.len();
    if score.len() != 2 * r {
        return Err(Error::Dimension(format!("score has length {}, expected {}", score.len(), 2 * r)));
    }
    let w = &kernel.weights;
    let mut q0 = 0.0;
    let mut q1 = 0.0;
    for j in 0..r {
        let (a, b) = (score[j], score[r + j]);
        q0 += w[j] * (a * a + b * b);
        q1 += w[j] * (a + b) * (a + b);
    }
    Ok(kernel.rho_grid.iter().map(|&rho| ((1.0 - rho) * q0 + rho * q1).max(0.0)).collect())
}

/// `K̃_ρ = B̃^{1/2} (Σ_ρ ⊗ W) B̃^{1/2}` for every grid point.
pub fn kernel_matrices(b_tilde: &DMatrix<f64>, kernel: &KernelConfig) -> Result<Vec<DMatrix<f64>>> {
    let r = kernel.weights.len();
    if b_tilde.nrows() != 2 * r || b_tilde.ncols() != 2 * r {
        return Err(Error::Dimension(format!("B̃ is {}×{}, expected {}×{}", b_tilde.nrows(), b_tilde.ncols(), 2 * r, 2 * r)));
    }
    let h = sqrt_psd(b_tilde);
    let mut iw = DMatrix::zeros(2 * r, 2 * r);
    let mut jw = DMatrix::zeros(2 * r, 2 * r);
    for j in 0..r {
        let w = kernel.weights[j];
        iw[(j, j)] = w;
        iw[(r + j, r + j)] = w;
        for (a, b) in [(j, j), (j, r + j), (r + j, j), (r + j, r + j)] {
            jw[(a, b)] = w;
        }
    }
    let k0 = &h * iw * &h;
    let k1 = &h * jw * &h;
    Ok(kernel
        .rho_grid
        .iter()
        .map(|&rho| {
            let mut k = &k0 * (1.0 - rho) + &k1 * rho;
            symmetrize(&mut k);
            k
        })
        .collect())
}

/// Per-ρ statistic and the clipped spectrum of its kernel.
pub fn q_statistics(
    l: &DVector<f64>,
    g: &DMatrix<f64>,
    b_tilde: &DMatrix<f64>,
    kernel: &KernelConfig,
) -> Result<Vec<(f64, Vec<f64>)>> {
    check_kernel(kernel, g.ncols())?;
    let s = score_vector(l, g)?;
    let q = q_values(&s, kernel)?;
    let ks = kernel_matrices(b_tilde, kernel)?;
    Ok(q.into_iter().zip(ks.iter()).map(|(q, k)| (q, spectrum(k))).collect())
}

fn spectrum(k: &DMatrix<f64>) -> Vec<f64> {
    let (vals, _) = clipped_eigen(k, 1e-10);
    let mut v: Vec<f64> = vals.iter().cloned().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// `P(Σ λᵢ χ²₁ > q)`.
pub fn qform_survival(eigenvalues: &[f64], q: f64) -> Result<QformPValue> {
    if eigenvalues.iter().any(|l| !l.is_finite() || *l < -1e-10) {
        return Err(Error::ParameterDomain("eigenvalues must be finite and nonnegative".into()));
    }
    let lam: Vec<f64> = eigenvalues.iter().cloned().filter(|l| *l > 0.0).collect();
    if lam.is_empty() {
        return Err(Error::DegenerateKernel("all eigenvalues are zero".into()));
    }
    if !q.is_finite() {
        return Err(Error::ParameterDomain(format!("statistic {q}")));
    }
    if q <= 0.0 {
        return Ok(QformPValue { p: 1.0, method: QformMethod::Trivial, davies_ifault: 0 });
    }
    let nc = vec![0.0; lam.len()];
    let df = vec![1; lam.len()];
    let r = davies(&lam, &nc, &df, 0.0, q, DAVIES_LIMIT, DAVIES_ACC);
    let p = 1.0 - r.cdf;
    if r.ifault == 0 && p > 0.0 && p <= 1.0 {
        return Ok(QformPValue { p, method: QformMethod::Davies, davies_ifault: 0 });
    }
    let p = liu_survival(&lam, q).clamp(0.0, 1.0);
    Ok(QformPValue { p, method: QformMethod::MomentMatch, davies_ifault: r.ifault })
}

/// `Γ_jl = tr(K_j K_l) / √(tr(K_j²) tr(K_l²))`.
pub fn gamma_correlation(kernels: &[DMatrix<f64>]) -> Result<DMatrix<f64>> {
    let b = kernels.len();
    if b == 0 {
        return Err(Error::Input("no kernels".into()));
    }
    // tr(K_j K_l) for symmetric matrices is the Frobenius inner product
    let mut t = DMatrix::zeros(b, b);
    for j in 0..b {
        for l in j..b {
            let v = kernels[j].dot(&kernels[l]);
            t[(j, l)] = v;
            t[(l, j)] = v;
        }
    }
    if let Some(j) = (0..b).find(|&j| !(t[(j, j)] > 0.0)) {
        return Err(Error::DegenerateKernel(format!("kernel {j} has zero trace")));
    }
    let mut gamma = DMatrix::from_fn(b, b, |j, l| t[(j, l)] / (t[(j, j)] * t[(l, l)]).sqrt());
    for j in 0..b {
        gamma[(j, j)] = 1.0;
    }
    Ok(gamma)
}

/// `P(P_min < p_min) = 1 - C_Γ(1-p_min, …, 1-p_min)` under a Gaussian copula with correlation Γ.
pub fn minp_pvalue(pvals: &[f64], gamma: &DMatrix<f64>, qmc: &QmcOptions) -> Result<MinpResult> {
    let b = pvals.len();
    if b == 0 {
        return Err(Error::Input("no p-values to combine".into()));
    }
    if gamma.nrows() != b || gamma.ncols() != b {
        return Err(Error::Dimension(format!("Γ is {}×{} for {b} p-values", gamma.nrows(), gamma.ncols())));
    }
    if pvals.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::ParameterDomain("p-values must lie in [0, 1]".into()));
    }
    if gamma.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("Γ has non-finite entries".into()));
    }
    let p_min = pvals.iter().cloned().fold(1.0, f64::min);
    let (corr, repaired) = nearest_correlation(gamma);
    if p_min <= 0.0 || p_min >= 1.0 || b == 1 {
        return Ok(MinpResult { p: p_min, p_min, std_error: 0.0, repaired });
    }
    let z = -norm_quantile(p_min);
    let est = mvn::equicoordinate_exceedance(&corr, z, qmc);
    let p = est.value.clamp(p_min, (b as f64 * p_min).min(1.0));
    Ok(MinpResult { p, p_min, std_error: est.std_error, repaired })
}

/// Min-p combination with Γ estimated from simulated statistics: `Q_j = Zᵀ K_j Z`
/// over `replicates` standard normal draws, Kendall's τ between statistics,
/// mapped to a Gaussian-copula correlation by `sin(πτ/2)`.
pub fn resampling_minp(
    kernels: &[DMatrix<f64>],
    pvals: &[f64],
    replicates: usize,
    seed: u64,
    qmc: &QmcOptions,
) -> Result<MinpResult> {
    let b = kernels.len();
    if b != pvals.len() {
        return Err(Error::Dimension(format!("{b} kernels for {} p-values", pvals.len())));
    }
    if replicates < 2 {
        return Err(Error::Input("resampling needs at least two replicates".into()));
    }
    let m = kernels.first().map_or(0, |k| k.nrows());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats = vec![vec![0.0; replicates]; b];
    for rep in 0..replicates {
        let z = DVector::from_fn(m, |_, _| StandardNormal.sample(&mut rng));
        for (j, k) in kernels.iter().enumerate() {
            stats[j][rep] = z.dot(&(k * &z));
        }
    }
    let mut gamma = DMatrix::identity(b, b);
    for j in 0..b {
        for l in (j + 1)..b {
            let tau = kendall_tau(&stats[j], &stats[l]);
            let v = (std::f64::consts::FRAC_PI_2 * tau).sin();
            gamma[(j, l)] = v;
            gamma[(l, j)] = v;
        }
    }
    minp_pvalue(pvals, &gamma, qmc)
}

/// `½(Lᵀ M L + tr(M D))` with `M = Σ_ρ ⊗ G W Gᵀ` assembled densely.
pub fn score_u_dense(l: &DVector<f64>, d: &DBlocks, g: &DMatrix<f64>, weights: &[f64], rho: f64) -> f64 {
    let sigma = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
    let ggt = g * DMatrix::from_diagonal(&DVector::from_column_slice(weights)) * g.transpose();
    let m = sigma.kronecker(&ggt);
    let dd = d.dense();
    0.5 * (l.dot(&(&m * l)) + (&m * dd).trace())
}

/// Same quantity from `S` and the diagonals of `D` without forming `2n × 2n` matrices.
pub fn score_u_blocks(l: &DVector<f64>, d: &DBlocks, g: &DMatrix<f64>, weights: &[f64], rho: f64) -> Result<f64> {
    let r = g.ncols();
    let kernel = KernelConfig { weights: weights.to_vec(), rho_grid: vec![rho], weight_scheme: WeightScheme::Uniform };
    check_kernel(&kernel, r)?;
    let s = score_vector(l, g)?;
    let q = q_values(&s, &kernel)?[0];
    let mut tr = 0.0;
    for i in 0..g.nrows() {
        let gw: f64 = (0..r).map(|j| weights[j] * g[(i, j)] * g[(i, j)]).sum();
        tr += gw * (d.a11[i] + d.a22[i] + 2.0 * rho * d.a12[i]);
    }
    Ok(0.5 * (q + tr))
}

/// Score parts for a fitted null model.
pub fn score_parts(fit: &NullFit, y1: &[f64], y2: &[f64], x: &DesignMatrix, g: &DMatrix<f64>) -> Result<ScoreParts> {
    check_g(g, y1.len())?;
    let l = compute_l(fit, y1, y2, x)?;
    let d = compute_d(fit, y1, y2, x)?;
    let score = score_vector(&l, g)?;
    let info = corrected_b(fit, y1, y2, x, g, &d)?;
    Ok(ScoreParts { l, d, score, info })
}

/// Test statistics and p-values for an already fitted null model.
pub fn test_with_fit(
    fit: NullFit,
    selection: SelectionReport,
    y1: &[f64],
    y2: &[f64],
    x: &DesignMatrix,
    g: &DMatrix<f64>,
    kernel: &KernelConfig,
    opts: &ModelOptions,
) -> Result<TestResult> {
    check_kernel(kernel, g.ncols()).stage("kernel")?;
    let mut warnings = Vec::new();
    if fit.boundary {
        warnings.push("copula parameter estimate is at the edge of its search bracket".into());
    }
    let parts = score_parts(&fit, y1, y2, x, g).stage("score")?;
    if parts.info.ridge > 0.0 {
        warnings.push(format!("nuisance information needed a ridge of {:.3e}", parts.info.ridge));
    }
    let q = q_values(&parts.score, kernel).stage("q statistics")?;
    let kernels = kernel_matrices(&parts.info.b_tilde, kernel).stage("q statistics")?;
    let per: Vec<Result<RhoResult>> = map_range(opts.exec, kernels.len(), |j| {
        let eig = spectrum(&kernels[j]);
        let pv = qform_survival(&eig, q[j])?;
        Ok(RhoResult { rho: kernel.rho_grid[j], q: q[j], eigenvalues: eig, p: pv.p, method: pv.method })
    });
    let per_rho = per.into_iter().collect::<Result<Vec<_>>>().stage("null distribution")?;
    for r in &per_rho {
        if r.method == QformMethod::MomentMatch {
            warnings.push(format!("rho={}: characteristic-function inversion failed, moment match used", r.rho));
        }
    }
    let pvals: Vec<f64> = per_rho.iter().map(|r| r.p).collect();
    let gamma = gamma_correlation(&kernels).stage("gamma")?;
    let mp = minp_pvalue(&pvals, &gamma, &opts.qmc).stage("min-p")?;
    if mp.repaired {
        warnings.push("Γ was repaired to the nearest correlation matrix".into());
    }
    let j_opt = pvals.iter().position(|&p| p == mp.p_min).unwrap_or(0);
    let rho_tie = pvals.iter().filter(|&&p| p == mp.p_min).count() > 1;
    let p_resampling = match opts.resampling {
        Some((reps, seed)) => Some(resampling_minp(&kernels, &pvals, reps, seed, &opts.qmc).stage("resampling")?.p),
        None => None,
    };
    Ok(TestResult {
        per_rho,
        gamma,
        gamma_repaired: mp.repaired,
        p_min: mp.p_min,
        p_combined: mp.p,
        p_combined_std_error: mp.std_error,
        rho_optimal: kernel.rho_grid[j_opt],
        rho_tie,
        p_resampling,
        fit,
        selection,
        parts,
        warnings,
    })
}

/// Null model selection and fit followed by the score test.
pub fn run_cbmat(
    y1: &[f64],
    y2: &[f64],
    x: &DesignMatrix,
    g: &DMatrix<f64>,
    kernel: &KernelConfig,
    opts: &ModelOptions,
) -> Result<TestResult> {
    check_g(g, y1.len()).stage("input")?;
    check_kernel(kernel, g.ncols()).stage("kernel")?;
    let (fit, selection) =
        select_model(y1, y2, x, &opts.margins1, &opts.margins2, &opts.copulas, opts.mixed, opts.exec).stage("null fit")?;
    test_with_fit(fit, selection, y1, y2, x, g, kernel, opts)
}
