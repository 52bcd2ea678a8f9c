//! Joint copula likelihood, null maximum-likelihood fit and AIC selection.
//!
//! Nuisance parameters are stacked as `ξ = (θ̃, γ₁, γ₂, ln φ₁, ln φ₂)` where
//! `θ̃` is the copula parameter on its unconstrained scale and a `ln φ` entry
//! is present only for families with a free dispersion.

use crate::copula::{
    gaussian_log_dv_scores, log_density_jet, log_dv_jet, CopulaFamily, CopulaSpec,
};
use crate::error::{Error, Result, StageExt};
use crate::jet::Jet2;
use crate::linalg::inverse_spd_ridged;
use crate::margins::{eval_point, fit_margin_null, DesignMatrix, MarginCandidate, MarginFamily, MarginFit, MarginSpec};
use crate::optim::{maximize, NewtonOptions};
use crate::par::{map_slice, Exec};
use crate::special::brent_min;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Step for finite differences of the log-likelihood in `θ̃` and `ln φ`.
pub(crate) const FD_STEP_SECOND: f64 = 1e-4;
/// Step for first differences of analytic scores in `θ̃` and `ln φ`.
pub(crate) const FD_STEP_FIRST: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct JointModel {
    pub copula: CopulaFamily,
    pub margin1: MarginFamily,
    pub margin2: MarginFamily,
}

impl JointModel {
    pub fn mixed(&self) -> bool {
        self.margin1.is_binary()
    }

    fn validate(&self) -> Result<()> {
        if self.margin2.is_binary() {
            return Err(Error::Input("the binary trait must be trait 1".into()));
        }
        Ok(())
    }
}

/// Per-subject log-likelihood and its derivatives in the two linear predictors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub(crate) struct SubjectDerivs {
    pub ll: f64,
    pub l1: f64,
    pub l2: f64,
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

/// Evaluates one subject. Returns `None` outside the support or on a non-finite result.
#[allow(clippy::too_many_arguments)]
pub(crate) fn subject_derivs(
    cop: &CopulaSpec,
    f1: MarginFamily,
    phi1: f64,
    f2: MarginFamily,
    phi2: f64,
    y1: f64,
    y2: f64,
    eta1: f64,
    eta2: f64,
) -> Option<SubjectDerivs> {
    let m2 = eval_point(f2, phi2, y2, eta2, true)?;
    let v = Jet2::seed_b(m2.cdf, m2.cdf1, m2.cdf2);
    let out = if f1.is_binary() {
        let upper = match y1 {
            _ if y1 == 1.0 => true,
            _ if y1 == 0.0 => false,
            _ => return None,
        };
        let k = if cop.family == CopulaFamily::Gaussian && cop.theta != 0.0 {
            // the normal score of Φ(-η₁) is -η₁ exactly
            let x = Jet2::seed_a(-eta1, -1.0, 0.0);
            let vv = v.v.clamp(crate::copula::UNIT_EPS, 1.0 - crate::copula::UNIT_EPS);
            let vj = if vv == v.v { v } else { Jet2::constant(vv) };
            gaussian_log_dv_scores(cop.theta, x, vj.norm_quantile(), upper)
        } else {
            let m1 = eval_point(f1, 1.0, y1, eta1, true)?;
            let u = Jet2::seed_a(m1.cdf, m1.cdf1, m1.cdf2);
            log_dv_jet(cop, u, v, upper)
        };
        SubjectDerivs {
            ll: m2.logf + k.v,
            l1: k.da,
            l2: m2.d1 + k.db,
            a11: k.daa,
            a12: k.dab,
            a22: m2.d2 + k.dbb,
        }
    } else {
        let m1 = eval_point(f1, phi1, y1, eta1, true)?;
        let u = Jet2::seed_a(m1.cdf, m1.cdf1, m1.cdf2);
        let k = log_density_jet(cop, u, v);
        SubjectDerivs {
            ll: m1.logf + m2.logf + k.v,
            l1: m1.d1 + k.da,
            l2: m2.d1 + k.db,
            a11: m1.d2 + k.daa,
            a12: k.dab,
            a22: m2.d2 + k.dbb,
        }
    };
    let finite = out.ll.is_finite()
        && out.l1.is_finite()
        && out.l2.is_finite()
        && out.a11.is_finite()
        && out.a12.is_finite()
        && out.a22.is_finite();
    finite.then_some(out)
}

/// Joint likelihood over a dataset, parameterized by `ξ`.
pub(crate) struct JointLik<'a> {
    pub model: JointModel,
    pub y1: &'a [f64],
    pub y2: &'a [f64],
    pub x: &'a DMatrix<f64>,
    pub p: usize,
}

pub(crate) struct Unpacked {
    pub cop: CopulaSpec,
    pub phi1: f64,
    pub phi2: f64,
}

impl<'a> JointLik<'a> {
    pub fn new(model: JointModel, y1: &'a [f64], y2: &'a [f64], x: &'a DMatrix<f64>) -> Self {
        JointLik { model, y1, y2, x, p: x.ncols() }
    }

    pub fn dim(&self) -> usize {
        1 + 2 * self.p + usize::from(self.model.margin1.has_phi()) + usize::from(self.model.margin2.has_phi())
    }

    pub fn phi1_index(&self) -> Option<usize> {
        self.model.margin1.has_phi().then_some(1 + 2 * self.p)
    }

    pub fn phi2_index(&self) -> Option<usize> {
        self.model
            .margin2
            .has_phi()
            .then_some(1 + 2 * self.p + usize::from(self.model.margin1.has_phi()))
    }

    /// Indices of ξ entries handled by finite differences.
    pub fn nonlinear(&self) -> Vec<usize> {
        let mut v = vec![0];
        v.extend(self.phi1_index());
        v.extend(self.phi2_index());
        v
    }

    pub fn unpack(&self, xi: &DVector<f64>) -> Option<Unpacked> {
        let theta = self.model.copula.from_internal(xi[0]);
        let cop = CopulaSpec { family: self.model.copula, theta };
        cop.validate().ok()?;
        let phi1 = self.phi1_index().map_or(1.0, |i| xi[i].exp());
        let phi2 = self.phi2_index().map_or(1.0, |i| xi[i].exp());
        if !(phi1 > 0.0 && phi1.is_finite() && phi2 > 0.0 && phi2.is_finite()) {
            return None;
        }
        Some(Unpacked { cop, phi1, phi2 })
    }

    pub fn etas(&self, xi: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let p = self.p;
        (self.x * xi.rows(1, p), self.x * xi.rows(1 + p, p))
    }

    /// Per-subject derivatives, with optional additive offsets on the linear predictors.
    pub fn subjects(&self, xi: &DVector<f64>, offsets: Option<(&[f64], &[f64])>) -> Option<Vec<SubjectDerivs>> {
        let u = self.unpack(xi)?;
        let (e1, e2) = self.etas(xi);
        let m = &self.model;
        (0..self.y1.len())
            .map(|i| {
                let (o1, o2) = offsets.map_or((0.0, 0.0), |(a, b)| (a[i], b[i]));
                subject_derivs(&u.cop, m.margin1, u.phi1, m.margin2, u.phi2, self.y1[i], self.y2[i], e1[i] + o1, e2[i] + o2)
            })
            .collect()
    }

    pub fn loglik(&self, xi: &DVector<f64>) -> Option<f64> {
        let s = self.subjects(xi, None)?;
        let ll: f64 = s.iter().map(|s| s.ll).sum();
        ll.is_finite().then_some(ll)
    }

    /// Log-likelihood, gradient and Hessian in ξ.
    pub fn objective(&self, xi: &DVector<f64>, order: usize) -> Option<(f64, DVector<f64>, DMatrix<f64>)> {
        let base = self.subjects(xi, None)?;
        let ll: f64 = base.iter().map(|s| s.ll).sum();
        if !ll.is_finite() {
            return None;
        }
        if order == 0 {
            return Some((ll, DVector::zeros(0), DMatrix::zeros(0, 0)));
        }
        let d = self.dim();
        let p = self.p;
        let n = self.y1.len();
        let x = self.x;
        let mut g = DVector::zeros(d);
        let mut h = DMatrix::zeros(d, d);
        for (i, s) in base.iter().enumerate() {
            for a in 0..p {
                let xa = x[(i, a)];
                g[1 + a] += s.l1 * xa;
                g[1 + p + a] += s.l2 * xa;
                for b in 0..p {
                    let xab = xa * x[(i, b)];
                    h[(1 + a, 1 + b)] += s.a11 * xab;
                    h[(1 + p + a, 1 + p + b)] += s.a22 * xab;
                    h[(1 + p + a, 1 + b)] += s.a12 * xab;
                    h[(1 + b, 1 + p + a)] += s.a12 * xab;
                }
            }
        }
        let step = FD_STEP_SECOND;
        let nl = self.nonlinear();
        for &j in &nl {
            let mut xp = xi.clone();
            xp[j] += step;
            let mut xm = xi.clone();
            xm[j] -= step;
            let sp = self.subjects(&xp, None)?;
            let sm = self.subjects(&xm, None)?;
            let lp: f64 = sp.iter().map(|s| s.ll).sum();
            let lm: f64 = sm.iter().map(|s| s.ll).sum();
            g[j] = (lp - lm) / (2.0 * step);
            h[(j, j)] = (lp - 2.0 * ll + lm) / (step * step);
            for a in 0..p {
                let mut s1 = 0.0;
                let mut s2 = 0.0;
                for i in 0..n {
                    s1 += x[(i, a)] * (sp[i].l1 - sm[i].l1);
                    s2 += x[(i, a)] * (sp[i].l2 - sm[i].l2);
                }
                h[(j, 1 + a)] = s1 / (2.0 * step);
                h[(1 + a, j)] = s1 / (2.0 * step);
                h[(j, 1 + p + a)] = s2 / (2.0 * step);
                h[(1 + p + a, j)] = s2 / (2.0 * step);
            }
        }
        for (ia, &j) in nl.iter().enumerate() {
            for &k in &nl[ia + 1..] {
                let at = |dj: f64, dk: f64| {
                    let mut v = xi.clone();
                    v[j] += dj;
                    v[k] += dk;
                    self.loglik(&v)
                };
                let v = (at(step, step)? - at(step, -step)? - at(-step, step)? + at(-step, -step)?)
                    / (4.0 * step * step);
                h[(k, j)] = v;
                h[(j, k)] = v;
            }
        }
        Some((ll, g, h))
    }

    /// Central differences of the per-subject scores `(L₁, L₂)` in each nonlinear ξ entry.
    pub fn score_sensitivities(&self, xi: &DVector<f64>) -> Option<Vec<(usize, Vec<f64>, Vec<f64>)>> {
        let step = FD_STEP_FIRST;
        self.nonlinear()
            .into_iter()
            .map(|j| {
                let mut xp = xi.clone();
                xp[j] += step;
                let mut xm = xi.clone();
                xm[j] -= step;
                let sp = self.subjects(&xp, None)?;
                let sm = self.subjects(&xm, None)?;
                let d1 = sp.iter().zip(&sm).map(|(a, b)| (a.l1 - b.l1) / (2.0 * step)).collect();
                let d2 = sp.iter().zip(&sm).map(|(a, b)| (a.l2 - b.l2) / (2.0 * step)).collect();
                Some((j, d1, d2))
            })
            .collect()
    }
}

/// Fitted null model.
#[derive(Debug, Clone, PartialEq)]
pub struct NullFit {
    pub model: JointModel,
    pub copula: CopulaSpec,
    pub margin1: MarginSpec,
    pub margin2: MarginSpec,
    pub loglik: f64,
    pub aic: f64,
    /// Free parameters counted in the AIC.
    pub k: usize,
    pub converged: bool,
    pub iterations: usize,
    /// ξ on the internal scale.
    pub xi: Vec<f64>,
    pub xi_names: Vec<String>,
    /// Inverse observed information for ξ.
    pub xi_cov: DMatrix<f64>,
    /// Ridge added to the observed information before inversion (0 when none).
    pub xi_cov_ridge: f64,
    pub gradient_norm: f64,
    /// Copula parameter ended at (or beyond) the edge of its search bracket.
    pub boundary: bool,
    /// Log-likelihood after the two-stage start (margins, then θ profile).
    pub two_stage_loglik: f64,
}

impl NullFit {
    pub fn mixed(&self) -> bool {
        self.model.mixed()
    }

    pub fn tau(&self) -> f64 {
        self.copula.tau()
    }

    pub fn xi_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.xi)
    }

    /// Null model at given parameters without optimization, e.g. the true
    /// parameters of a simulation. `converged` is false and `iterations` 0.
    pub fn at_parameters(
        y1: &[f64],
        y2: &[f64],
        x: &DesignMatrix,
        copula: CopulaSpec,
        margin1: MarginSpec,
        margin2: MarginSpec,
    ) -> Result<NullFit> {
        copula.validate()?;
        let model = JointModel { copula: copula.family, margin1: margin1.family, margin2: margin2.family };
        model.validate()?;
        check_inputs(y1, y2, x, model.mixed())?;
        let p = x.ncols();
        if margin1.gamma.len() != p || margin2.gamma.len() != p {
            return Err(Error::Dimension(format!("covariate effects must have length {p}")));
        }
        let lik = JointLik::new(model, y1, y2, &x.x);
        let mut xi = DVector::zeros(lik.dim());
        xi[0] = copula.family.to_internal(copula.theta);
        xi.rows_mut(1, p).copy_from_slice(&margin1.gamma);
        xi.rows_mut(1 + p, p).copy_from_slice(&margin2.gamma);
        if let Some(i) = lik.phi1_index() {
            xi[i] = margin1.phi.ln();
        }
        if let Some(i) = lik.phi2_index() {
            xi[i] = margin2.phi.ln();
        }
        let (ll, g, h) = lik
            .objective(&xi, 2)
            .ok_or_else(|| Error::NumericDomain("likelihood not finite at the given parameters".into()))?;
        let (xi_cov, ridge) = inverse_spd_ridged(&(-h))?;
        let (lo, hi) = copula.family.internal_bracket();
        let k = lik.dim();
        Ok(NullFit {
            model,
            copula,
            margin1,
            margin2,
            loglik: ll,
            aic: 2.0 * k as f64 - 2.0 * ll,
            k,
            converged: false,
            iterations: 0,
            xi: xi.iter().cloned().collect(),
            xi_names: xi_names(&model, x),
            xi_cov,
            xi_cov_ridge: ridge,
            gradient_norm: g.norm(),
            boundary: xi[0] <= lo + 1e-3 || xi[0] >= hi - 1e-3,
            two_stage_loglik: ll,
        })
    }
}

fn xi_names(model: &JointModel, x: &DesignMatrix) -> Vec<String> {
    let mut v = vec!["theta".to_string()];
    for k in 1..=2 {
        for n in &x.names {
            v.push(format!("gamma{k}[{n}]"));
        }
    }
    if model.margin1.has_phi() {
        v.push("log_phi1".into());
    }
    if model.margin2.has_phi() {
        v.push("log_phi2".into());
    }
    v
}

fn check_inputs(y1: &[f64], y2: &[f64], x: &DesignMatrix, mixed: bool) -> Result<()> {
    let n = y1.len();
    if y2.len() != n || x.nrows() != n {
        return Err(Error::Dimension(format!(
            "trait lengths {n} and {}, design rows {}",
            y2.len(),
            x.nrows()
        )));
    }
    if mixed && y1.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Input("binary trait must be coded 0/1".into()));
    }
    Ok(())
}

/// `ln f(y₁, y₂)` for two continuous traits.
pub fn joint_logdensity_cc(
    copula: &CopulaSpec,
    m1: &MarginSpec,
    m2: &MarginSpec,
    y1: f64,
    y2: f64,
    x_row: &[f64],
) -> Result<f64> {
    copula.validate()?;
    if m1.family.is_binary() || m2.family.is_binary() {
        return Err(Error::Input("use joint_logdensity_mixed for a binary trait".into()));
    }
    let s = subject_derivs(copula, m1.family, m1.phi, m2.family, m2.phi, y1, y2, m1.eta(x_row)?, m2.eta(x_row)?);
    log_density_result(s)
}

/// `ln f(y₁, y₂)` for a binary probit trait 1 and a continuous trait 2.
pub fn joint_logdensity_mixed(
    copula: &CopulaSpec,
    m1: &MarginSpec,
    m2: &MarginSpec,
    y1: f64,
    y2: f64,
    x_row: &[f64],
) -> Result<f64> {
    copula.validate()?;
    if !m1.family.is_binary() || m2.family.is_binary() {
        return Err(Error::Input("mixed density needs a probit trait 1 and a continuous trait 2".into()));
    }
    if y1 != 0.0 && y1 != 1.0 {
        return Err(Error::Support(format!("binary trait value {y1}")));
    }
    let s = subject_derivs(copula, m1.family, 1.0, m2.family, m2.phi, y1, y2, m1.eta(x_row)?, m2.eta(x_row)?);
    log_density_result(s)
}

fn log_density_result(s: Option<SubjectDerivs>) -> Result<f64> {
    match s {
        Some(s) => Ok(s.ll),
        // underflow or a point outside the support is reported as -inf
        None => Ok(f64::NEG_INFINITY),
    }
}

/// Joint fit starting from already fitted margins.
pub fn fit_null_with_margins(
    y1: &[f64],
    y2: &[f64],
    x: &DesignMatrix,
    copula: CopulaFamily,
    mf1: &MarginFit,
    mf2: &MarginFit,
) -> Result<NullFit> {
    let model = JointModel { copula, margin1: mf1.spec.family, margin2: mf2.spec.family };
    model.validate()?;
    check_inputs(y1, y2, x, model.mixed())?;
    let lik = JointLik::new(model, y1, y2, &x.x);
    let p = lik.p;
    let mut xi = DVector::zeros(lik.dim());
    xi.rows_mut(1, p).copy_from_slice(&mf1.spec.gamma);
    xi.rows_mut(1 + p, p).copy_from_slice(&mf2.spec.gamma);
    if let Some(i) = lik.phi1_index() {
        xi[i] = mf1.spec.phi.ln();
    }
    if let Some(i) = lik.phi2_index() {
        xi[i] = mf2.spec.phi.ln();
    }

    // profile the copula parameter with margins held fixed
    let (lo, hi) = copula.internal_bracket();
    let mut trial = xi.clone();
    let (t_best, neg_ll) = brent_min(
        |t| {
            trial[0] = t;
            lik.loglik(&trial).map_or(f64::INFINITY, |v| -v)
        },
        lo,
        hi,
        1e-8,
    );
    // compare against the independence-adjacent start in case Brent settled on a poor local optimum
    xi[0] = t_best;
    let mut two_stage = -neg_ll;
    if !two_stage.is_finite() {
        xi[0] = copula.to_internal(match copula {
            CopulaFamily::Clayton => 0.1,
            _ => 0.0,
        });
        two_stage = lik.loglik(&xi).ok_or_else(|| Error::Convergence {
            stage: "copula profile",
            iterations: 0,
            best_loglik: f64::NEG_INFINITY,
            message: "likelihood is not finite anywhere on the profile bracket".into(),
        })?;
    }
    let mut obj = |v: &DVector<f64>, order: usize| lik.objective(v, order);
    let res = maximize(xi, &mut obj, NewtonOptions::default()).ok_or_else(|| Error::Convergence {
        stage: "joint fit",
        iterations: 0,
        best_loglik: two_stage,
        message: "derivatives not finite at the two-stage start".into(),
    })?;
    if !res.converged {
        return Err(Error::Convergence {
            stage: "joint fit",
            iterations: res.iterations,
            best_loglik: res.f,
            message: format!("{copula} copula, gradient norm {:.3e}", res.grad.norm()),
        });
    }
    let u = lik.unpack(&res.x).ok_or_else(|| Error::NumericDomain("fitted ξ left the parameter domain".into()))?;
    let info = -&res.hess;
    let (xi_cov, ridge) = inverse_spd_ridged(&info)?;
    let grid_extra = (mf1.k - mf1.spec.gamma.len() - usize::from(mf1.spec.family.has_phi()))
        + (mf2.k - mf2.spec.gamma.len() - usize::from(mf2.spec.family.has_phi()));
    let k = lik.dim() + grid_extra;
    let t = res.x[0];
    let boundary = t <= lo + 1e-3 || t >= hi - 1e-3;
    Ok(NullFit {
        model,
        copula: u.cop,
        margin1: MarginSpec::new(model.margin1, res.x.rows(1, p).iter().cloned().collect(), u.phi1)?,
        margin2: MarginSpec::new(model.margin2, res.x.rows(1 + p, p).iter().cloned().collect(), u.phi2)?,
        loglik: res.f,
        aic: 2.0 * k as f64 - 2.0 * res.f,
        k,
        converged: true,
        iterations: res.iterations,
        xi: res.x.iter().cloned().collect(),
        xi_names: xi_names(&model, x),
        xi_cov,
        xi_cov_ridge: ridge,
        gradient_norm: res.grad.norm(),
        boundary,
        two_stage_loglik: two_stage,
    })
}

/// Joint null MLE of ξ with the region effect excluded.
pub fn fit_null(
    y1: &[f64],
    y2: &[f64],
    x: &DesignMatrix,
    copula: CopulaFamily,
    margin1: MarginCandidate,
    margin2: MarginCandidate,
    mixed: bool,
) -> Result<NullFit> {
    check_inputs(y1, y2, x, mixed)?;
    let m1 = if mixed { MarginCandidate::Family(MarginFamily::BinaryProbitLatent) } else { margin1 };
    if !mixed && m1 == MarginCandidate::Family(MarginFamily::BinaryProbitLatent) {
        return Err(Error::Input("probit margin requested for a continuous analysis".into()));
    }
    let mf1 = fit_margin_null(m1, y1, x).stage("margin 1")?;
    let mf2 = fit_margin_null(margin2, y2, x).stage("margin 2")?;
    fit_null_with_margins(y1, y2, x, copula, &mf1, &mf2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    /// `"margin1"`, `"margin2"` or `"joint"`.
    pub stage: String,
    pub margin1: Option<String>,
    pub margin2: Option<String>,
    pub copula: Option<CopulaFamily>,
    pub loglik: f64,
    pub aic: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SelectionReport {
    pub entries: Vec<SelectionEntry>,
    pub failures: Vec<String>,
}

fn select_margin(
    stage: &str,
    cands: &[MarginCandidate],
    y: &[f64],
    x: &DesignMatrix,
    report: &mut SelectionReport,
) -> Result<MarginFit> {
    if cands.is_empty() {
        return Err(Error::Input(format!("no {stage} candidates")));
    }
    let mut best: Option<MarginFit> = None;
    let mut errs = Vec::new();
    for &c in cands {
        match fit_margin_null(c, y, x) {
            Ok(f) => {
                let name = f.spec.family.name();
                report.entries.push(SelectionEntry {
                    stage: stage.into(),
                    margin1: (stage == "margin1").then(|| name.clone()),
                    margin2: (stage == "margin2").then_some(name),
                    copula: None,
                    loglik: f.loglik,
                    aic: f.aic,
                });
                if best.as_ref().is_none_or(|b| f.aic < b.aic) {
                    best = Some(f);
                }
            }
            Err(e) => {
                let msg = format!("{stage} {c:?}: {e}");
                report.failures.push(msg.clone());
                errs.push(msg);
            }
        }
    }
    best.ok_or(Error::AllCandidatesFailed(errs))
}

/// Margins are chosen per trait by marginal AIC, then the copula by joint AIC.
pub fn select_model(
    y1: &[f64],
    y2: &[f64],
    x: &DesignMatrix,
    margins1: &[MarginCandidate],
    margins2: &[MarginCandidate],
    copulas: &[CopulaFamily],
    mixed: bool,
    exec: Exec,
) -> Result<(NullFit, SelectionReport)> {
    check_inputs(y1, y2, x, mixed)?;
    if copulas.is_empty() {
        return Err(Error::Input("no copula candidates".into()));
    }
    let mut report = SelectionReport::default();
    let probit = [MarginCandidate::Family(MarginFamily::BinaryProbitLatent)];
    let m1c: &[MarginCandidate] = if mixed { &probit } else { margins1 };
    let mf1 = select_margin("margin1", m1c, y1, x, &mut report).stage("margin selection")?;
    let mf2 = select_margin("margin2", margins2, y2, x, &mut report).stage("margin selection")?;
    let fits = map_slice(exec, copulas, |&c| fit_null_with_margins(y1, y2, x, c, &mf1, &mf2));
    let mut best: Option<NullFit> = None;
    let mut errs = Vec::new();
    for (c, f) in copulas.iter().zip(fits) {
        match f {
            Ok(f) => {
                report.entries.push(SelectionEntry {
                    stage: "joint".into(),
                    margin1: Some(f.margin1.family.name()),
                    margin2: Some(f.margin2.family.name()),
                    copula: Some(*c),
                    loglik: f.loglik,
                    aic: f.aic,
                });
                if best.as_ref().is_none_or(|b| f.aic < b.aic) {
                    best = Some(f);
                }
            }
            Err(e) => {
                let msg = format!("{c} copula: {e}");
                report.failures.push(msg.clone());
                errs.push(msg);
            }
        }
    }
    let best = best.ok_or(Error::AllCandidatesFailed(errs)).stage("copula selection")?;
    Ok((best, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::{copula_density, copula_dv};
    use crate::margins::{margin_cdf, margin_pdf, margin_quantile};
    use crate::special::{gauss_legendre, norm_cdf, norm_pdf};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn spec(f: MarginFamily, g: &[f64], phi: f64) -> MarginSpec {
        MarginSpec::new(f, g.to_vec(), phi).unwrap()
    }

    #[test]
    fn independence_reduces_to_margins() {
        let c = CopulaSpec::new(CopulaFamily::Gaussian, 0.0).unwrap();
        let m1 = spec(MarginFamily::GaussianIdentity, &[0.2], 1.5);
        let m2 = spec(MarginFamily::GaussianIdentity, &[-0.4], 0.7);
        let l = joint_logdensity_cc(&c, &m1, &m2, 0.9, -1.1, &[1.0]).unwrap();
        let r = margin_pdf(&m1, 0.9, &[1.0]).unwrap().ln() + margin_pdf(&m2, -1.1, &[1.0]).unwrap().ln();
        assert!((l - r).abs() < 1e-10);

        let b = spec(MarginFamily::BinaryProbitLatent, &[0.3], 1.0);
        let e = spec(MarginFamily::ExponentialLog, &[0.1], 1.0);
        let mu1 = norm_cdf(0.3);
        for y1 in [0.0, 1.0] {
            let l = joint_logdensity_mixed(&c, &b, &e, y1, 0.8, &[1.0]).unwrap();
            let r = margin_pdf(&e, 0.8, &[1.0]).unwrap().ln() + y1 * mu1.ln() + (1.0 - y1) * (1.0 - mu1).ln();
            assert!((l - r).abs() < 1e-10);
        }
    }

    #[test]
    fn gaussian_copula_gaussian_margins_is_bivariate_normal() {
        let rho = (0.2 * std::f64::consts::PI).sin();
        let c = CopulaSpec::new(CopulaFamily::Gaussian, rho).unwrap();
        let m1 = spec(MarginFamily::GaussianIdentity, &[0.0], 1.0);
        let m2 = spec(MarginFamily::GaussianIdentity, &[0.0], 1.0);
        for &(a, b) in &[(0.3, -0.2), (1.5, 2.0), (-2.0, 0.4)] {
            let l = joint_logdensity_cc(&c, &m1, &m2, a, b, &[1.0]).unwrap();
            let q = (a * a - 2.0 * rho * a * b + b * b) / (1.0 - rho * rho);
            let r = -(2.0 * std::f64::consts::PI).ln() - 0.5 * (1.0 - rho * rho).ln() - 0.5 * q;
            assert!((l - r).abs() < 1e-8);
        }
    }

    #[test]
    fn clayton_exponential_composition() {
        let c = CopulaSpec::new(CopulaFamily::Clayton, 1.0).unwrap();
        let m = spec(MarginFamily::ExponentialLog, &[0.0], 1.0);
        let l = joint_logdensity_cc(&c, &m, &m, 1.0, 1.0, &[1.0]).unwrap();
        let u = margin_cdf(&m, 1.0, &[1.0]).unwrap();
        let f = margin_pdf(&m, 1.0, &[1.0]).unwrap();
        let r = 2.0 * f.ln() + copula_density(&c, u, u).unwrap().ln();
        assert!((l - r).abs() < 1e-12);
    }

    #[test]
    fn mixed_marginalizes_and_matches_latent_integral() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for fam in CopulaFamily::ALL {
            let c = CopulaSpec::from_tau(fam, 0.3).unwrap();
            let b = spec(MarginFamily::BinaryProbitLatent, &[0.2], 1.0);
            let e = spec(MarginFamily::GammaLog, &[0.3], 0.6);
            for _ in 0..20 {
                let y2 = rng.random_range(0.05..4.0);
                let s: f64 = [0.0, 1.0]
                    .iter()
                    .map(|&y1| joint_logdensity_mixed(&c, &b, &e, y1, y2, &[1.0]).unwrap().exp())
                    .sum();
                let f2 = margin_pdf(&e, y2, &[1.0]).unwrap();
                assert!((s - f2).abs() < 1e-10 * f2.max(1.0), "{fam}");
            }
        }
        // latent representation: Y₁ = 1{η₁ + ε > 0} with (ε, V) linked by the Gaussian copula
        let rho = 0.5;
        let c = CopulaSpec::new(CopulaFamily::Gaussian, rho).unwrap();
        let b = spec(MarginFamily::BinaryProbitLatent, &[0.0], 1.0);
        let e = spec(MarginFamily::ExponentialLog, &[0.0], 1.0);
        let v = margin_cdf(&e, 1.0, &[1.0]).unwrap();
        let zv = crate::special::norm_quantile(v);
        // P(Y₁ = 0 | V) = P(ε' < 0) where the latent normal score of U is -ε; integrate the conditional normal.
        let (z, w) = gauss_legendre(120);
        let s = (1.0 - rho * rho).sqrt();
        let (lo, hi) = (-12.0f64, 0.0f64);
        let h = 0.5 * (hi - lo);
        let p0: f64 = z
            .iter()
            .zip(&w)
            .map(|(t, w)| {
                let x = 0.5 * (hi + lo) + h * t;
                w * norm_pdf((x - rho * zv) / s) / s
            })
            .sum::<f64>()
            * h;
        let l0 = joint_logdensity_mixed(&c, &b, &e, 0.0, 1.0, &[1.0]).unwrap();
        let r0 = margin_pdf(&e, 1.0, &[1.0]).unwrap().ln() + p0.ln();
        assert!((l0 - r0).abs() < 1e-9, "{l0} vs {r0}");
        assert!((copula_dv(&c, 0.5, v).unwrap() - p0).abs() < 1e-9);
    }

    #[test]
    fn density_integrates_on_box() {
        let (z, w) = gauss_legendre(80);
        let configs = [
            (CopulaSpec::new(CopulaFamily::Frank, 4.0).unwrap(), MarginFamily::GaussianIdentity, MarginFamily::GammaLog),
            (CopulaSpec::new(CopulaFamily::Clayton, 1.5).unwrap(), MarginFamily::ExponentialLog, MarginFamily::GaussianIdentity),
            (
                CopulaSpec::new(CopulaFamily::Gaussian, 0.6).unwrap(),
                MarginFamily::StudentTIdentity { df: 5 },
                MarginFamily::ExponentialLog,
            ),
        ];
        for (c, f1, f2) in configs {
            let m1 = spec(f1, &[0.2], 0.8);
            let m2 = spec(f2, &[0.1], 0.8);
            let r1 = (margin_quantile(&m1, 1e-5, &[1.0]).unwrap(), margin_quantile(&m1, 1.0 - 1e-5, &[1.0]).unwrap());
            let r2 = (margin_quantile(&m2, 1e-5, &[1.0]).unwrap(), margin_quantile(&m2, 1.0 - 1e-5, &[1.0]).unwrap());
            let (h1, h2) = (0.5 * (r1.1 - r1.0), 0.5 * (r2.1 - r2.0));
            let mut total = 0.0;
            for i in 0..z.len() {
                let a = 0.5 * (r1.0 + r1.1) + h1 * z[i];
                for j in 0..z.len() {
                    let b = 0.5 * (r2.0 + r2.1) + h2 * z[j];
                    total += w[i] * w[j] * h1 * h2 * joint_logdensity_cc(&c, &m1, &m2, a, b, &[1.0]).unwrap().exp();
                }
            }
            assert!((total - 1.0).abs() < 1e-2, "{c:?} {total}");
        }
    }

    fn simulate(
        n: usize,
        cop: CopulaSpec,
        f1: MarginFamily,
        f2: MarginFamily,
        seed: u64,
    ) -> (Vec<f64>, Vec<f64>, DesignMatrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xc: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let x = DesignMatrix::with_intercept(&[xc], &["x".into()]).unwrap();
        let m1 = spec(f1, &[0.2, 0.5], 1.0);
        let m2 = spec(f2, &[-0.1, 0.3], 1.0);
        let mut y1 = vec![0.0; n];
        let mut y2 = vec![0.0; n];
        for i in 0..n {
            let (u, v) = crate::copula::sample_pair(&cop, &mut rng);
            let row = x.row(i);
            y1[i] = margin_quantile(&m1, u, &row).unwrap();
            y2[i] = margin_quantile(&m2, v, &row).unwrap();
        }
        (y1, y2, x)
    }

    #[test]
    fn recovers_tau_and_satisfies_optimality() {
        for (tau, seed) in [(0.4, 1u64), (0.0, 2)] {
            let cop = CopulaSpec::from_tau(CopulaFamily::Gaussian, tau).unwrap();
            let (y1, y2, x) = simulate(5000, cop, MarginFamily::ExponentialLog, MarginFamily::ExponentialLog, seed);
            let e = MarginCandidate::Family(MarginFamily::ExponentialLog);
            let f = fit_null(&y1, &y2, &x, CopulaFamily::Gaussian, e, e, false).unwrap();
            assert!((f.tau() - tau).abs() < 0.05, "tau {}", f.tau());
            assert!(f.two_stage_loglik <= f.loglik + 1e-9);
            // stored loglik is recomputable from the density functions
            let re: f64 = (0..y1.len())
                .map(|i| joint_logdensity_cc(&f.copula, &f.margin1, &f.margin2, y1[i], y2[i], &x.row(i)).unwrap())
                .sum();
            assert!((re - f.loglik).abs() < 1e-8 * f.loglik.abs().max(1.0));
            // numeric gradient at the optimum
            let lik = JointLik::new(f.model, &y1, &y2, &x.x);
            let xi = f.xi_vector();
            for j in 0..xi.len() {
                let h = 1e-5;
                let mut a = xi.clone();
                a[j] += h;
                let mut b = xi.clone();
                b[j] -= h;
                let g = (lik.loglik(&a).unwrap() - lik.loglik(&b).unwrap()) / (2.0 * h);
                assert!(g.abs() / y1.len() as f64 * 1.0 < 1e-4, "component {j}: {g}");
            }
            // covariance is symmetric positive definite
            assert!(f.xi_cov.clone().cholesky().is_some());
            assert!((f.aic - (2.0 * f.k as f64 - 2.0 * f.loglik)).abs() < 1e-12);
        }
    }

    #[test]
    fn mixed_fit_runs_for_all_copulas() {
        let cop = CopulaSpec::from_tau(CopulaFamily::Frank, 0.3).unwrap();
        let (mut y1, y2, x) = simulate(1500, cop, MarginFamily::GaussianIdentity, MarginFamily::ExponentialLog, 4);
        for v in y1.iter_mut() {
            *v = if *v > 0.2 { 1.0 } else { 0.0 };
        }
        let (fit, report) = select_model(
            &y1,
            &y2,
            &x,
            &[],
            &[MarginCandidate::Family(MarginFamily::ExponentialLog)],
            &CopulaFamily::ALL,
            true,
            Exec::Sequential,
        )
        .unwrap();
        assert!(fit.mixed());
        assert_eq!(report.entries.iter().filter(|e| e.stage == "joint").count(), 3);
        assert!(fit.tau() > 0.15);
    }

    #[test]
    fn single_candidate_is_returned() {
        let cop = CopulaSpec::from_tau(CopulaFamily::Clayton, 0.3).unwrap();
        let (y1, y2, x) = simulate(600, cop, MarginFamily::GammaLog, MarginFamily::GaussianIdentity, 8);
        let (fit, _) = select_model(
            &y1,
            &y2,
            &x,
            &[MarginCandidate::Family(MarginFamily::GammaLog)],
            &[MarginCandidate::Family(MarginFamily::GaussianIdentity)],
            &[CopulaFamily::Clayton],
            false,
            Exec::Sequential,
        )
        .unwrap();
        assert_eq!(fit.copula.family, CopulaFamily::Clayton);
        assert_eq!(fit.margin1.family, MarginFamily::GammaLog);
    }

    #[test]
    fn nested_exponential_in_gamma() {
        let cop = CopulaSpec::from_tau(CopulaFamily::Gaussian, 0.2).unwrap();
        let (y1, _, x) = simulate(2000, cop, MarginFamily::ExponentialLog, MarginFamily::ExponentialLog, 12);
        let e = fit_margin_null(MarginCandidate::Family(MarginFamily::ExponentialLog), &y1, &x).unwrap();
        let g = fit_margin_null(MarginCandidate::Family(MarginFamily::GammaLog), &y1, &x).unwrap();
        assert!(g.loglik >= e.loglik - 1e-9);
        // AIC difference is bounded by the penalty difference plus the LR excess
        let lr = 2.0 * (g.loglik - e.loglik);
        assert!((g.aic - e.aic - (2.0 - lr)).abs() < 1e-9);
        assert!(e.aic - g.aic <= 2.0 + lr);
    }
}
