//! Marginal models for a single trait.
//!
//! Each family is a location/dispersion model with a link on the linear
//! predictor `η = Xᵀγ`:
//!
//! | family | link | φ |
//! |---|---|---|
//! | Gaussian | identity | variance |
//! | Exponential | log | fixed at 1 |
//! | Gamma | log | dispersion, shape = 1/φ |
//! | Student-t(ν) | identity | scale |
//! | binary probit | probit | latent variance fixed at 1 |
//!
//! Derivatives with respect to `η` are analytic and feed both the marginal
//! fit and the joint likelihood.

use crate::error::{Error, Result};
use crate::linalg::ols;
use crate::optim::{maximize, NewtonOptions};
use crate::special::{
    gamma_p, gamma_q, ln_gamma, ln_norm_cdf, norm_cdf, norm_hazard_lower, norm_pdf, norm_quantile, norm_sf,
    student_t_cdf, student_t_ln_norm, LN_SQRT_2PI,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Degrees-of-freedom grid searched when a Student-t margin is selected by AIC.
pub const STUDENT_T_GRID: [u32; 6] = [3, 5, 8, 12, 20, 30];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MarginFamily {
    GaussianIdentity,
    ExponentialLog,
    GammaLog,
    StudentTIdentity { df: u32 },
    BinaryProbitLatent,
}

impl MarginFamily {
    pub fn has_phi(self) -> bool {
        matches!(
            self,
            MarginFamily::GaussianIdentity | MarginFamily::GammaLog | MarginFamily::StudentTIdentity { .. }
        )
    }

    pub fn is_binary(self) -> bool {
        self == MarginFamily::BinaryProbitLatent
    }

    pub fn name(self) -> String {
        match self {
            MarginFamily::GaussianIdentity => "gaussian".into(),
            MarginFamily::ExponentialLog => "exponential".into(),
            MarginFamily::GammaLog => "gamma".into(),
            MarginFamily::StudentTIdentity { df } => format!("student_t({df})"),
            MarginFamily::BinaryProbitLatent => "probit".into(),
        }
    }

    /// Inverse link.
    pub fn mean_from_eta(self, eta: f64) -> f64 {
        match self {
            MarginFamily::GaussianIdentity | MarginFamily::StudentTIdentity { .. } => eta,
            MarginFamily::ExponentialLog | MarginFamily::GammaLog => eta.exp(),
            MarginFamily::BinaryProbitLatent => norm_cdf(eta),
        }
    }
}

impl std::fmt::Display for MarginFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

/// A candidate in margin selection. `StudentTGrid` fits every df in
/// [`STUDENT_T_GRID`] and keeps the best, counting df as a free parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginCandidate {
    Family(MarginFamily),
    StudentTGrid,
}

impl MarginCandidate {
    /// The default continuous candidate set: Gaussian, Gamma and Student-t.
    pub fn continuous_defaults() -> Vec<MarginCandidate> {
        vec![
            MarginCandidate::Family(MarginFamily::GaussianIdentity),
            MarginCandidate::Family(MarginFamily::GammaLog),
            MarginCandidate::StudentTGrid,
        ]
    }
}

impl std::str::FromStr for MarginCandidate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let fam = match s.as_str() {
            "gaussian" | "normal" => MarginFamily::GaussianIdentity,
            "exponential" | "exp" => MarginFamily::ExponentialLog,
            "gamma" => MarginFamily::GammaLog,
            "probit" | "binary" => MarginFamily::BinaryProbitLatent,
            "t" | "student_t" | "studentt" => return Ok(MarginCandidate::StudentTGrid),
            other => {
                let inner = other
                    .strip_prefix("t")
                    .or_else(|| other.strip_prefix("student_t"))
                    .map(|r| r.trim_matches(|c| c == '(' || c == ')'));
                match inner.and_then(|d| d.parse::<u32>().ok()) {
                    Some(df) if df >= 3 => MarginFamily::StudentTIdentity { df },
                    _ => return Err(Error::Input(format!("unknown margin family '{other}'"))),
                }
            }
        };
        Ok(MarginCandidate::Family(fam))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginSpec {
    pub family: MarginFamily,
    pub gamma: Vec<f64>,
    pub phi: f64,
}

impl MarginSpec {
    pub fn new(family: MarginFamily, gamma: Vec<f64>, phi: f64) -> Result<Self> {
        let phi = if family.has_phi() { phi } else { 1.0 };
        if !(phi > 0.0 && phi.is_finite()) {
            return Err(Error::ParameterDomain(format!("dispersion phi = {phi} must be positive")));
        }
        if let MarginFamily::StudentTIdentity { df } = family {
            if df < 3 {
                return Err(Error::ParameterDomain(format!("Student-t df = {df} must be at least 3")));
            }
        }
        if gamma.iter().any(|g| !g.is_finite()) {
            return Err(Error::ParameterDomain("non-finite regression coefficient".into()));
        }
        Ok(MarginSpec { family, gamma, phi })
    }

    pub fn eta(&self, x_row: &[f64]) -> Result<f64> {
        if x_row.len() != self.gamma.len() {
            return Err(Error::Dimension(format!(
                "covariate row has {} entries, coefficients {}",
                x_row.len(),
                self.gamma.len()
            )));
        }
        Ok(x_row.iter().zip(&self.gamma).map(|(a, b)| a * b).sum())
    }
}

/// Design matrix with the intercept column first.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(x: DMatrix<f64>, names: Vec<String>) -> Result<Self> {
        let (n, p) = x.shape();
        if names.len() != p {
            return Err(Error::Dimension(format!("{} column names for {p} columns", names.len())));
        }
        if n < p + 1 {
            return Err(Error::Input(format!("{n} subjects is too few for {p} covariate columns")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Input("non-finite covariate value".into()));
        }
        let xtx = x.transpose() * &x;
        let ok = xtx.clone().cholesky().is_some() && {
            let e = nalgebra::SymmetricEigen::new(xtx).eigenvalues;
            e.min() > 1e-10 * e.max()
        };
        if !ok {
            return Err(Error::Input("design matrix is not of full column rank".into()));
        }
        Ok(DesignMatrix { x, names })
    }

    /// Intercept followed by the given columns.
    pub fn with_intercept(columns: &[Vec<f64>], names: &[String]) -> Result<Self> {
        let n = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::Dimension("covariate columns differ in length".into()));
        }
        let n = if columns.is_empty() { return Err(Error::Input("use intercept_only for no covariates".into())) } else { n };
        let p = columns.len() + 1;
        let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { columns[j - 1][i] });
        let mut nm = vec!["(intercept)".to_string()];
        nm.extend(names.iter().cloned());
        DesignMatrix::new(x, nm)
    }

    pub fn intercept_only(n: usize) -> Result<Self> {
        DesignMatrix::new(DMatrix::from_element(n, 1, 1.0), vec!["(intercept)".into()])
    }

    pub fn nrows(&self) -> usize {
        self.x.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.x.ncols()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.x.row(i).iter().cloned().collect()
    }

    pub fn linear_predictor(&self, gamma: &[f64]) -> Vec<f64> {
        let g = DVector::from_column_slice(gamma);
        (&self.x * g).iter().cloned().collect()
    }
}

/// Per-observation quantities as functions of the linear predictor.
///
/// `cdf` is `F(y | η)` for continuous families and `P(Y = 0) = Φ(-η)` for the
/// probit margin; `cdf1`, `cdf2` are its first two η-derivatives.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct MarginPoint {
    pub logf: f64,
    pub d1: f64,
    pub d2: f64,
    pub cdf: f64,
    pub cdf1: f64,
    pub cdf2: f64,
}

#[inline]
fn gamma_unit_pdf(k: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    ((k - 1.0) * x.ln() - x - ln_gamma(k)).exp()
}

/// Evaluates log-density, its η-derivatives and the CDF pieces. Returns
/// `None` when `y` lies outside the support.
pub(crate) fn eval_point(family: MarginFamily, phi: f64, y: f64, eta: f64, want_cdf: bool) -> Option<MarginPoint> {
    let mut p = MarginPoint::default();
    match family {
        MarginFamily::GaussianIdentity => {
            let s = phi.sqrt();
            let r = y - eta;
            let z = r / s;
            p.logf = -0.5 * (phi.ln() + z * z) - LN_SQRT_2PI;
            p.d1 = r / phi;
            p.d2 = -1.0 / phi;
            if want_cdf {
                let d = norm_pdf(z);
                p.cdf = norm_cdf(z);
                p.cdf1 = -d / s;
                p.cdf2 = -z * d / phi;
            }
        }
        MarginFamily::ExponentialLog | MarginFamily::GammaLog => {
            if !(y > 0.0) {
                return None;
            }
            let k = if family == MarginFamily::ExponentialLog { 1.0 } else { 1.0 / phi };
            let mu = eta.exp();
            let ratio = y / mu;
            p.logf = k * k.ln() - k * eta + (k - 1.0) * y.ln() - k * ratio - ln_gamma(k);
            p.d1 = k * (ratio - 1.0);
            p.d2 = -k * ratio;
            if want_cdf {
                let x = k * ratio;
                if family == MarginFamily::ExponentialLog {
                    p.cdf = -(-x).exp_m1();
                    let g = (-x).exp();
                    p.cdf1 = -x * g;
                    p.cdf2 = x * g * (1.0 - x);
                } else {
                    let g = gamma_unit_pdf(k, x);
                    p.cdf = gamma_p(k, x);
                    p.cdf1 = -x * g;
                    p.cdf2 = x * g * (k - x);
                }
            }
        }
        MarginFamily::StudentTIdentity { df } => {
            let nu = df as f64;
            let s = phi;
            let z = (y - eta) / s;
            let q = nu + z * z;
            p.logf = student_t_ln_norm(nu) - s.ln() - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p();
            p.d1 = (nu + 1.0) * z / (q * s);
            p.d2 = -(nu + 1.0) * (nu - z * z) / (q * q * s * s);
            if want_cdf {
                let t = (student_t_ln_norm(nu) - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()).exp();
                p.cdf = student_t_cdf(nu, z);
                p.cdf1 = -t / s;
                p.cdf2 = -t * (nu + 1.0) * z / (q * s * s);
            }
        }
        MarginFamily::BinaryProbitLatent => {
            if y == 1.0 {
                let h = norm_hazard_lower(eta);
                p.logf = ln_norm_cdf(eta);
                p.d1 = h;
                p.d2 = -h * (eta + h);
            } else if y == 0.0 {
                let h = norm_hazard_lower(-eta);
                p.logf = ln_norm_cdf(-eta);
                p.d1 = -h;
                p.d2 = -h * (-eta + h);
            } else {
                return None;
            }
            if want_cdf {
                let d = norm_pdf(eta);
                p.cdf = norm_sf(eta);
                p.cdf1 = -d;
                p.cdf2 = eta * d;
            }
        }
    }
    Some(p)
}

/// `g⁻¹(Xᵀγ)`.
pub fn margin_mean(spec: &MarginSpec, x_row: &[f64]) -> Result<f64> {
    let mu = spec.family.mean_from_eta(spec.eta(x_row)?);
    let ok = match spec.family {
        MarginFamily::ExponentialLog | MarginFamily::GammaLog => mu > 0.0 && mu.is_finite(),
        MarginFamily::BinaryProbitLatent => (0.0..=1.0).contains(&mu),
        _ => mu.is_finite(),
    };
    if ok {
        Ok(mu)
    } else {
        Err(Error::NumericDomain(format!("mean {mu} outside the {} mean domain", spec.family)))
    }
}

fn support_error(spec: &MarginSpec, y: f64) -> Error {
    Error::Support(format!("y = {y} is outside the support of the {} margin", spec.family))
}

pub fn margin_cdf(spec: &MarginSpec, y: f64, x_row: &[f64]) -> Result<f64> {
    let eta = spec.eta(x_row)?;
    if spec.family.is_binary() {
        return match y {
            _ if y < 0.0 => Ok(0.0),
            _ if y < 1.0 => Ok(norm_sf(eta)),
            _ => Ok(1.0),
        };
    }
    if matches!(spec.family, MarginFamily::ExponentialLog | MarginFamily::GammaLog) && y <= 0.0 {
        return Ok(0.0);
    }
    eval_point(spec.family, spec.phi, y, eta, true).map(|p| p.cdf).ok_or_else(|| support_error(spec, y))
}

/// Density (probability mass for the probit margin).
pub fn margin_pdf(spec: &MarginSpec, y: f64, x_row: &[f64]) -> Result<f64> {
    let eta = spec.eta(x_row)?;
    eval_point(spec.family, spec.phi, y, eta, false).map(|p| p.logf.exp()).ok_or_else(|| support_error(spec, y))
}

pub fn margin_logpdf(spec: &MarginSpec, y: f64, x_row: &[f64]) -> Result<f64> {
    let eta = spec.eta(x_row)?;
    eval_point(spec.family, spec.phi, y, eta, false).map(|p| p.logf).ok_or_else(|| support_error(spec, y))
}

pub fn margin_quantile(spec: &MarginSpec, p: f64, x_row: &[f64]) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Boundary(format!("probability {p} must lie in (0, 1)")));
    }
    Ok(quantile_at_eta(spec.family, spec.phi, p, spec.eta(x_row)?))
}

/// Quantile as a function of the linear predictor; `p` in (0, 1).
pub(crate) fn quantile_at_eta(family: MarginFamily, phi: f64, p: f64, eta: f64) -> f64 {
    match family {
        MarginFamily::GaussianIdentity => eta + phi.sqrt() * norm_quantile(p),
        MarginFamily::ExponentialLog => -eta.exp() * (-p).ln_1p(),
        MarginFamily::GammaLog => {
            let k = 1.0 / phi;
            eta.exp() / k * gamma_unit_quantile(k, p)
        }
        MarginFamily::StudentTIdentity { df } => eta + phi * student_t_quantile(df as f64, p),
        MarginFamily::BinaryProbitLatent => {
            if p > norm_sf(eta) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Safeguarded Newton iteration on a monotone CDF inside a bracket.
fn invert_monotone<C, D>(cdf: C, pdf: D, p: f64, mut x: f64, mut lo: f64, mut hi: f64) -> f64
where
    C: Fn(f64) -> f64,
    D: Fn(f64) -> f64,
{
    for _ in 0..200 {
        let f = cdf(x) - p;
        if f == 0.0 {
            return x;
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let d = pdf(x);
        let mut xn = x - f / d;
        if !(xn > lo && xn < hi) || !xn.is_finite() {
            xn = 0.5 * (lo + hi);
        }
        if (xn - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return xn;
        }
        x = xn;
    }
    x
}

fn gamma_unit_quantile(k: f64, p: f64) -> f64 {
    // Wilson–Hilferty start
    let z = norm_quantile(p);
    let c = 1.0 / (9.0 * k);
    let x0 = (k * (1.0 - c + z * c.sqrt()).powi(3)).max(1e-8);
    let mut hi = x0.max(1.0);
    while gamma_p(k, hi) < p {
        hi *= 2.0;
    }
    // work on the upper tail in the right half for accuracy
    if p > 0.5 {
        let q = 1.0 - p;
        return invert_monotone(|x| -gamma_q(k, x), |x| gamma_unit_pdf(k, x), -q, x0.min(hi), 0.0, hi);
    }
    invert_monotone(|x| gamma_p(k, x), |x| gamma_unit_pdf(k, x), p, x0.min(hi), 0.0, hi)
}

fn student_t_quantile(nu: f64, p: f64) -> f64 {
    let ln_norm = student_t_ln_norm(nu);
    let pdf = |z: f64| (ln_norm - 0.5 * (nu + 1.0) * (z * z / nu).ln_1p()).exp();
    let mut hi = norm_quantile(p).abs().max(1.0);
    while student_t_cdf(nu, hi) < p.max(1.0 - p) {
        hi *= 2.0;
    }
    invert_monotone(|z| student_t_cdf(nu, z), pdf, p, norm_quantile(p), -hi, hi)
}

/// Result of a single-trait null fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginFit {
    pub spec: MarginSpec,
    pub loglik: f64,
    pub aic: f64,
    /// Number of free parameters counted in the AIC.
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
}

fn check_support(family: MarginFamily, y: &[f64]) -> Result<()> {
    for (i, &v) in y.iter().enumerate() {
        let ok = match family {
            MarginFamily::ExponentialLog | MarginFamily::GammaLog => v > 0.0 && v.is_finite(),
            MarginFamily::BinaryProbitLatent => v == 0.0 || v == 1.0,
            _ => v.is_finite(),
        };
        if !ok {
            return Err(Error::Support(format!("observation {i} (y = {v}) is outside the {family} support")));
        }
    }
    Ok(())
}

fn check_not_degenerate(y: &[f64]) -> Result<()> {
    let first = y.first().copied().unwrap_or(0.0);
    if y.iter().all(|&v| v == first) {
        return Err(Error::Input("trait is constant".into()));
    }
    Ok(())
}

/// Marginal log-likelihood with gradient and Hessian over `(γ, ln φ)`.
pub(crate) fn margin_objective(
    family: MarginFamily,
    y: &[f64],
    x: &DMatrix<f64>,
    params: &DVector<f64>,
    order: usize,
) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let has_phi = family.has_phi();
    let phi = if has_phi { params[p].exp() } else { 1.0 };
    let gamma = params.rows(0, p);
    let eta = x * gamma;
    let dim = params.len();
    let mut ll = 0.0;
    let mut g = DVector::zeros(if order > 0 { dim } else { 0 });
    let mut h = DMatrix::zeros(if order > 0 { dim } else { 0 }, if order > 0 { dim } else { 0 });
    let mut d1 = vec![0.0; y.len()];
    for i in 0..y.len() {
        let pt = eval_point(family, phi, y[i], eta[i], false)?;
        ll += pt.logf;
        if order > 0 {
            d1[i] = pt.d1;
            for a in 0..p {
                let xa = x[(i, a)];
                g[a] += pt.d1 * xa;
                for b in 0..=a {
                    h[(a, b)] += pt.d2 * xa * x[(i, b)];
                }
            }
        }
    }
    if !ll.is_finite() {
        return None;
    }
    if order == 0 {
        return Some((ll, g, h));
    }
    if has_phi {
        let step = 1e-4;
        let side = |s: f64| -> Option<(f64, Vec<f64>)> {
            let ph = (params[p] + s).exp();
            let mut l = 0.0;
            let mut dd = vec![0.0; y.len()];
            for i in 0..y.len() {
                let pt = eval_point(family, ph, y[i], eta[i], false)?;
                l += pt.logf;
                dd[i] = pt.d1;
            }
            Some((l, dd))
        };
        let (lp, dp) = side(step)?;
        let (lm, dm) = side(-step)?;
        g[p] = (lp - lm) / (2.0 * step);
        h[(p, p)] = (lp - 2.0 * ll + lm) / (step * step);
        for a in 0..p {
            let mut s = 0.0;
            for i in 0..y.len() {
                s += x[(i, a)] * (dp[i] - dm[i]);
            }
            h[(p, a)] = s / (2.0 * step);
        }
    }
    for a in 0..dim {
        for b in (a + 1)..dim {
            h[(a, b)] = h[(b, a)];
        }
    }
    Some((ll, g, h))
}

fn starting_values(family: MarginFamily, y: &[f64], x: &DMatrix<f64>) -> Result<DVector<f64>> {
    let p = x.ncols();
    let n = y.len() as f64;
    let mut start = DVector::zeros(p + usize::from(family.has_phi()));
    match family {
        MarginFamily::GaussianIdentity | MarginFamily::StudentTIdentity { .. } => {
            let (b, rss) = ols(x, y)?;
            start.rows_mut(0, p).copy_from(&b);
            if family.has_phi() {
                let var = (rss / n).max(1e-12);
                start[p] = if family == MarginFamily::GaussianIdentity { var.ln() } else { 0.5 * var.ln() };
            }
        }
        MarginFamily::ExponentialLog | MarginFamily::GammaLog => {
            let mean = y.iter().sum::<f64>() / n;
            start[0] = mean.ln();
            if family == MarginFamily::GammaLog {
                let cv2 = y.iter().map(|v| (v / mean - 1.0).powi(2)).sum::<f64>() / n;
                start[p] = cv2.max(1e-6).ln();
            }
        }
        MarginFamily::BinaryProbitLatent => {
            let mean = (y.iter().sum::<f64>() / n).clamp(0.5 / n, 1.0 - 0.5 / n);
            start[0] = norm_quantile(mean);
        }
    }
    Ok(start)
}

fn fit_fixed_family(family: MarginFamily, y: &[f64], x: &DesignMatrix) -> Result<MarginFit> {
    check_support(family, y)?;
    check_not_degenerate(y)?;
    let p = x.ncols();
    let n = y.len();
    if n != x.nrows() {
        return Err(Error::Dimension(format!("{n} observations, {} design rows", x.nrows())));
    }
    if n < p + 2 {
        return Err(Error::Input(format!("{n} observations is too few for {p} coefficients")));
    }
    let k = p + usize::from(family.has_phi());
    if family == MarginFamily::GaussianIdentity {
        let (b, rss) = ols(&x.x, y)?;
        let phi = rss / n as f64;
        if phi <= 0.0 {
            return Err(Error::Input("trait is an exact linear function of the covariates".into()));
        }
        let spec = MarginSpec::new(family, b.iter().cloned().collect(), phi)?;
        let loglik = -0.5 * n as f64 * ((2.0 * std::f64::consts::PI * phi).ln() + 1.0);
        return Ok(MarginFit { spec, loglik, aic: 2.0 * k as f64 - 2.0 * loglik, k, converged: true, iterations: 0 });
    }
    let x0 = starting_values(family, y, &x.x)?;
    let mut obj = |v: &DVector<f64>, order: usize| margin_objective(family, y, &x.x, v, order);
    let res = maximize(x0, &mut obj, NewtonOptions::default()).ok_or_else(|| Error::Convergence {
        stage: "margin fit",
        iterations: 0,
        best_loglik: f64::NEG_INFINITY,
        message: format!("{family} likelihood not finite at the starting values"),
    })?;
    if !res.converged {
        return Err(Error::Convergence {
            stage: "margin fit",
            iterations: res.iterations,
            best_loglik: res.f,
            message: format!("{family} margin, gradient norm {:.3e}", res.grad.norm()),
        });
    }
    let phi = if family.has_phi() { res.x[p].exp() } else { 1.0 };
    let spec = MarginSpec::new(family, res.x.rows(0, p).iter().cloned().collect(), phi)?;
    Ok(MarginFit {
        spec,
        loglik: res.f,
        aic: 2.0 * k as f64 - 2.0 * res.f,
        k,
        converged: true,
        iterations: res.iterations,
    })
}

/// Maximum-likelihood fit of one margin with no genetic effects.
pub fn fit_margin_null(candidate: MarginCandidate, y: &[f64], x: &DesignMatrix) -> Result<MarginFit> {
    match candidate {
        MarginCandidate::Family(f) => fit_fixed_family(f, y, x),
        MarginCandidate::StudentTGrid => {
            let mut best: Option<MarginFit> = None;
            let mut last_err = None;
            for df in STUDENT_T_GRID {
                match fit_fixed_family(MarginFamily::StudentTIdentity { df }, y, x) {
                    Ok(mut f) => {
                        f.k += 1;
                        f.aic += 2.0;
                        if best.as_ref().is_none_or(|b| f.aic < b.aic) {
                            best = Some(f);
                        }
                    }
                    Err(e) => last_err = Some(e),
                }
            }
            best.ok_or_else(|| last_err.unwrap_or_else(|| Error::Input("empty df grid".into())))
        }
    }
}
