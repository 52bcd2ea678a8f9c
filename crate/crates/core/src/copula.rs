//! Bivariate copulas: Gaussian, Frank and Clayton.
//!
//! Every family exposes its CDF, density, the conditional distribution
//! `C¹⁰¹(u, v) = ∂C/∂v`, the Kendall-τ mapping and a sampler. Jet versions of
//! the log-density and log-conditional are used by the likelihood code.

use crate::error::{Error, Result};
use crate::jet::Jet2;
use crate::special::{brent_root, gauss_legendre, norm_cdf, norm_quantile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::sync::OnceLock;

/// Clamp applied to CDF values before copula evaluation.
pub const UNIT_EPS: f64 = 1e-10;

/// Below this |θ| a Frank copula is evaluated as the independence copula.
const FRANK_ZERO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CopulaFamily {
    Gaussian,
    Frank,
    Clayton,
}

impl CopulaFamily {
    pub const ALL: [CopulaFamily; 3] = [CopulaFamily::Gaussian, CopulaFamily::Frank, CopulaFamily::Clayton];

    pub fn name(self) -> &'static str {
        match self {
            CopulaFamily::Gaussian => "gaussian",
            CopulaFamily::Frank => "frank",
            CopulaFamily::Clayton => "clayton",
        }
    }

    /// Unconstrained reparameterization used by the optimizer.
    pub fn to_internal(self, theta: f64) -> f64 {
        match self {
            CopulaFamily::Gaussian => theta.atanh(),
            CopulaFamily::Frank => theta,
            CopulaFamily::Clayton => theta.ln(),
        }
    }

    pub fn from_internal(self, t: f64) -> f64 {
        match self {
            CopulaFamily::Gaussian => t.tanh(),
            CopulaFamily::Frank => t,
            CopulaFamily::Clayton => t.exp(),
        }
    }

    /// Search interval on the internal scale for the profile step.
    pub fn internal_bracket(self) -> (f64, f64) {
        match self {
            CopulaFamily::Gaussian => (-3.0, 3.0),
            CopulaFamily::Frank => (-40.0, 40.0),
            CopulaFamily::Clayton => (1e-4f64.ln(), 30f64.ln()),
        }
    }
}

impl std::str::FromStr for CopulaFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(CopulaFamily::Gaussian),
            "frank" => Ok(CopulaFamily::Frank),
            "clayton" => Ok(CopulaFamily::Clayton),
            other => Err(Error::Input(format!("unknown copula family '{other}'"))),
        }
    }
}

impl std::fmt::Display for CopulaFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CopulaSpec {
    pub family: CopulaFamily,
    pub theta: f64,
}

impl CopulaSpec {
    pub fn new(family: CopulaFamily, theta: f64) -> Result<Self> {
        let s = CopulaSpec { family, theta };
        s.validate()?;
        Ok(s)
    }

    pub fn from_tau(family: CopulaFamily, tau: f64) -> Result<Self> {
        CopulaSpec::new(family, tau_to_theta(family, tau)?)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.theta;
        let ok = t.is_finite()
            && match self.family {
                CopulaFamily::Gaussian => t > -1.0 && t < 1.0,
                CopulaFamily::Frank => true,
                CopulaFamily::Clayton => t > 0.0,
            };
        if ok {
            Ok(())
        } else {
            Err(Error::ParameterDomain(format!("{} copula with theta = {t}", self.family)))
        }
    }

    pub fn tau(&self) -> f64 {
        theta_to_tau(self.family, self.theta).unwrap_or(f64::NAN)
    }

    fn is_independence(&self) -> bool {
        match self.family {
            CopulaFamily::Gaussian => self.theta == 0.0,
            CopulaFamily::Frank => self.theta.abs() < FRANK_ZERO,
            CopulaFamily::Clayton => false,
        }
    }
}

fn check_closed(u: f64, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&u) && (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Boundary(format!("(u, v) = ({u}, {v}) outside [0, 1]^2")))
    }
}

fn check_open(x: f64, what: &str) -> Result<()> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(Error::Boundary(format!("{what} = {x} must lie in (0, 1)")))
    }
}

/// `C_θ(u, v)`.
pub fn copula_cdf(spec: &CopulaSpec, u: f64, v: f64) -> Result<f64> {
    spec.validate()?;
    check_closed(u, v)?;
    if u == 0.0 || v == 0.0 {
        return Ok(0.0);
    }
    if u == 1.0 {
        return Ok(v);
    }
    if v == 1.0 {
        return Ok(u);
    }
    if spec.is_independence() {
        return Ok(u * v);
    }
    let t = spec.theta;
    let c = match spec.family {
        CopulaFamily::Gaussian => bvn_lower(norm_quantile(u), norm_quantile(v), t),
        CopulaFamily::Frank => {
            let a = (-t).exp_m1();
            let au = (-t * u).exp_m1();
            let av = (-t * v).exp_m1();
            -(au * av / a).ln_1p() / t
        }
        CopulaFamily::Clayton => (-clayton_ln_s(t, u.ln(), v.ln()) / t).exp(),
    };
    Ok(c.clamp(0.0, u.min(v)))
}

/// `c_θ(u, v) = ∂²C/∂u∂v`.
pub fn copula_density(spec: &CopulaSpec, u: f64, v: f64) -> Result<f64> {
    spec.validate()?;
    check_open(u, "u")?;
    check_open(v, "v")?;
    Ok(log_density_jet(spec, Jet2::constant(u), Jet2::constant(v)).v.exp())
}

/// `C¹⁰¹(u, v) = ∂C/∂v`, the conditional distribution of U given V = v.
pub fn copula_dv(spec: &CopulaSpec, u: f64, v: f64) -> Result<f64> {
    spec.validate()?;
    check_open(v, "v")?;
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Boundary(format!("u = {u} outside [0, 1]")));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    if u == 1.0 {
        return Ok(1.0);
    }
    Ok(log_dv_jet(spec, Jet2::constant(u), Jet2::constant(v), false).v.exp())
}

fn clamp_jet(x: Jet2) -> Jet2 {
    if x.v < UNIT_EPS {
        Jet2::constant(UNIT_EPS)
    } else if x.v > 1.0 - UNIT_EPS {
        Jet2::constant(1.0 - UNIT_EPS)
    } else {
        x
    }
}

/// `ln s` with `s = u^{-θ} + v^{-θ} - 1`, from `ln u` and `ln v`.
fn clayton_ln_s(t: f64, lu: f64, lv: f64) -> f64 {
    let a = -t * lu;
    let b = -t * lv;
    let m = a.max(b);
    if m < 50.0 {
        (a.exp_m1() + b.exp_m1()).ln_1p()
    } else {
        m + ((a - m).exp() + (b - m).exp() - (-m).exp()).ln()
    }
}

fn clayton_ln_s_jet(t: f64, lu: Jet2, lv: Jet2) -> Jet2 {
    let a = lu.scale(-t);
    let b = lv.scale(-t);
    let m = a.v.max(b.v);
    if m < 50.0 {
        (a.expm1() + b.expm1()).ln_1p()
    } else {
        let e = (a.add_const(-m)).exp() + (b.add_const(-m)).exp();
        e.add_const(-(-m).exp()).ln().add_const(m)
    }
}

/// `ln c_θ(u, v)` as a jet; inputs are clamped to `[ε, 1-ε]`.
pub(crate) fn log_density_jet(spec: &CopulaSpec, u: Jet2, v: Jet2) -> Jet2 {
    let u = clamp_jet(u);
    let v = clamp_jet(v);
    if spec.is_independence() {
        return Jet2::constant(0.0);
    }
    let t = spec.theta;
    match spec.family {
        CopulaFamily::Gaussian => gaussian_log_density_scores(t, u.norm_quantile(), v.norm_quantile()),
        CopulaFamily::Frank => {
            let a = (-t).exp_m1();
            let au = u.scale(-t).expm1();
            let av = v.scale(-t).expm1();
            let den = (au * av).add_const(a).ln_abs();
            (u + v).scale(-t).add_const((-t * a).ln()) - den.scale(2.0)
        }
        CopulaFamily::Clayton => {
            let lu = u.ln();
            let lv = v.ln();
            let ls = clayton_ln_s_jet(t, lu, lv);
            (lu + lv).scale(-(1.0 + t)) - ls.scale(2.0 + 1.0 / t) + t.ln_1p()
        }
    }
}

/// Gaussian copula log-density in terms of normal scores `x = Φ⁻¹(u)`, `y = Φ⁻¹(v)`.
pub(crate) fn gaussian_log_density_scores(rho: f64, x: Jet2, y: Jet2) -> Jet2 {
    let om = 1.0 - rho * rho;
    let q = (x.sqr() + y.sqr()).scale(rho * rho) - (x * y).scale(2.0 * rho);
    q.scale(-0.5 / om).add_const(-0.5 * om.ln())
}

/// `ln C¹⁰¹(u, v)` (or `ln(1 - C¹⁰¹)` when `upper`) as a jet.
pub(crate) fn log_dv_jet(spec: &CopulaSpec, u: Jet2, v: Jet2, upper: bool) -> Jet2 {
    let u = clamp_jet(u);
    let v = clamp_jet(v);
    if spec.is_independence() {
        return if upper { (-u).add_const(1.0).ln() } else { u.ln() };
    }
    let t = spec.theta;
    match spec.family {
        CopulaFamily::Gaussian => gaussian_log_dv_scores(t, u.norm_quantile(), v.norm_quantile(), upper),
        CopulaFamily::Frank => {
            let a = (-t).exp_m1();
            let au = u.scale(-t).expm1();
            let av = v.scale(-t).expm1();
            let den = (au * av).add_const(a).ln_abs();
            let num = if upper { (-au).add_const(a) } else { au * av.add_const(1.0) };
            num.ln_abs() - den
        }
        CopulaFamily::Clayton => {
            let lu = u.ln();
            let lv = v.ln();
            let ls = clayton_ln_s_jet(t, lu, lv);
            let lc = lv.scale(-(t + 1.0)) - ls.scale(1.0 / t + 1.0);
            if upper {
                // ln(1 - e^{lc}) = ln(-expm1(lc))
                (-lc.expm1()).ln()
            } else {
                lc
            }
        }
    }
}

/// Gaussian `ln C¹⁰¹` from normal scores; `x` is the score of the conditioned-on-nothing
/// first argument, `y` of the conditioning second argument.
pub(crate) fn gaussian_log_dv_scores(rho: f64, x: Jet2, y: Jet2, upper: bool) -> Jet2 {
    let s = 1.0 / (1.0 - rho * rho).sqrt();
    let z = (x - y.scale(rho)).scale(s);
    if upper {
        (-z).ln_norm_cdf()
    } else {
        z.ln_norm_cdf()
    }
}

fn frank_tau(theta: f64) -> f64 {
    if theta.abs() < 1e-2 {
        let t2 = theta * theta;
        return theta / 9.0 - theta * t2 / 900.0 + theta * t2 * t2 / 52920.0;
    }
    let a = theta.abs();
    let d1 = debye1(a);
    let tau = 1.0 - 4.0 / a * (1.0 - d1);
    tau.copysign(theta)
}

/// First Debye function `D₁(x) = x⁻¹ ∫₀ˣ t/(eᵗ-1) dt` for `x > 0`.
fn debye1(x: f64) -> f64 {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    let (nodes, weights) = RULE.get_or_init(|| gauss_legendre(64));
    let f = |t: f64| if t < 1e-12 { 1.0 } else { t / t.exp_m1() };
    let integrate = |lo: f64, hi: f64| {
        let h = 0.5 * (hi - lo);
        let m = 0.5 * (hi + lo);
        nodes.iter().zip(weights).map(|(z, w)| w * f(m + h * z)).sum::<f64>() * h
    };
    let mut total = 0.0;
    let mut lo = 0.0;
    while lo < x {
        let hi = (lo + 20.0).min(x);
        total += integrate(lo, hi);
        lo = hi;
    }
    total / x
}

/// Kendall's τ implied by `θ`.
pub fn theta_to_tau(family: CopulaFamily, theta: f64) -> Result<f64> {
    CopulaSpec { family, theta }.validate()?;
    Ok(match family {
        CopulaFamily::Gaussian => 2.0 / PI * theta.asin(),
        CopulaFamily::Frank => frank_tau(theta),
        CopulaFamily::Clayton => theta / (theta + 2.0),
    })
}

/// Copula parameter with Kendall's τ equal to `tau`.
pub fn tau_to_theta(family: CopulaFamily, tau: f64) -> Result<f64> {
    let bad = || Error::ParameterDomain(format!("tau = {tau} is not attainable by the {family} copula"));
    if !tau.is_finite() {
        return Err(bad());
    }
    match family {
        CopulaFamily::Gaussian => {
            if tau <= -1.0 || tau >= 1.0 {
                return Err(bad());
            }
            Ok((PI * tau / 2.0).sin())
        }
        CopulaFamily::Clayton => {
            if tau <= 0.0 || tau >= 1.0 {
                return Err(bad());
            }
            Ok(2.0 * tau / (1.0 - tau))
        }
        CopulaFamily::Frank => {
            if tau == 0.0 {
                return Ok(0.0);
            }
            let lim = frank_tau(100.0);
            if tau.abs() >= lim {
                return Err(bad());
            }
            brent_root(|t| frank_tau(t) - tau, -100.0, 100.0, 1e-10).ok_or_else(bad)
        }
    }
}

/// Draws one `(u, v)` pair.
pub fn sample_pair<R: Rng + ?Sized>(spec: &CopulaSpec, rng: &mut R) -> (f64, f64) {
    let t = spec.theta;
    match spec.family {
        CopulaFamily::Gaussian => {
            let z1: f64 = rng.sample(StandardNormal);
            let z2: f64 = rng.sample(StandardNormal);
            let x = t * z1 + (1.0 - t * t).sqrt() * z2;
            (norm_cdf(x), norm_cdf(z1))
        }
        CopulaFamily::Frank | CopulaFamily::Clayton => {
            let v: f64 = open_unit(rng);
            let w: f64 = open_unit(rng);
            (conditional_inverse(spec, w, v), v)
        }
    }
}

fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let x: f64 = rng.random();
        if x > 0.0 {
            return x;
        }
    }
}

/// Solves `C¹⁰¹(u, v) = w` for `u` in closed form.
fn conditional_inverse(spec: &CopulaSpec, w: f64, v: f64) -> f64 {
    let t = spec.theta;
    match spec.family {
        CopulaFamily::Gaussian => {
            let x = norm_quantile(w) * (1.0 - t * t).sqrt() + t * norm_quantile(v);
            norm_cdf(x)
        }
        CopulaFamily::Frank => {
            if t.abs() < FRANK_ZERO {
                return w;
            }
            let a = (-t).exp_m1();
            let u = -(w * a / (w + (1.0 - w) * (-t * v).exp())).ln_1p() / t;
            u.clamp(0.0, 1.0)
        }
        CopulaFamily::Clayton => {
            let inner = (-t / (1.0 + t) * w.ln()).exp_m1() * (-t * v.ln()).exp();
            (-inner.ln_1p() / t).exp()
        }
    }
}

/// `n` pairs from a ChaCha stream seeded with `seed`.
pub fn sample_copula(spec: &CopulaSpec, n: usize, seed: u64) -> Result<Vec<(f64, f64)>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sample_pair(spec, &mut rng)).collect())
}

/// Bivariate standard normal `P(X < x, Y < y)` with correlation `r`.
pub fn bvn_lower(x: f64, y: f64, r: f64) -> f64 {
    bvnu(-x, -y, r)
}

/// Upper orthant `P(X > h, Y > k)`; Drezner–Wesolowsky with Genz's refinements.
fn bvnu(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY { 1.0 } else { norm_cdf(-k) };
    }
    if k == f64::NEG_INFINITY {
        return norm_cdf(-h);
    }
    if r == 0.0 {
        return norm_cdf(-h) * norm_cdf(-k);
    }
    const W6: [f64; 3] = [0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4];
    const X6: [f64; 3] = [0.932_469_514_203_152_2, 0.661_209_386_466_264_7, 0.238_619_186_083_197];
    const W12: [f64; 6] = [
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
    ];
    const X12: [f64; 6] = [
        0.981_560_634_246_719_1,
        0.904_117_256_370_475,
        0.769_902_674_194_305,
        0.587_317_954_286_617_1,
        0.367_831_498_998_180_2,
        0.125_233_408_511_469_2,
    ];
    const W20: [f64; 10] = [
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ];
    const X20: [f64; 10] = [
        0.993_128_599_185_094_9,
        0.963_971_927_277_913_8,
        0.912_234_428_251_325_9,
        0.839_116_971_822_218_8,
        0.746_331_906_460_150_8,
        0.636_053_680_726_515,
        0.510_867_001_950_827_1,
        0.373_706_088_715_419_6,
        0.227_785_851_141_645_1,
        0.076_526_521_133_497_33,
    ];
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&W6, &X6)
    } else if r.abs() < 0.75 {
        (&W12, &X12)
    } else {
        (&W20, &X20)
    };
    let tp = 2.0 * PI;
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = 0.5 * r.asin();
        for i in 0..w.len() {
            for s in [-1.0, 1.0] {
                let sn = (asr * (1.0 + s * x[i])).sin();
                bvn += w[i] * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / tp + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = (1.0 - r) * (1.0 + r);
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 80.0;
            let asr = -0.5 * (bs / as_ + hk);
            if asr > -100.0 {
                bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = tp.sqrt() * norm_cdf(-b / a);
                bvn -= (-0.5 * hk).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
            }
            a *= 0.5;
            let mut sum = 0.0;
            for i in 0..w.len() {
                for s in [-1.0, 1.0] {
                    let xs = (a * (1.0 + s * x[i])).powi(2);
                    let asr = -0.5 * (bs / xs + hk);
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                        let rs = (1.0 - xs).sqrt();
                        let ep = (-0.5 * hk * xs / (1.0 + rs).powi(2)).exp() / rs;
                        sum += w[i] * asr.exp() * (sp - ep);
                    }
                }
            }
            bvn = (a * sum - bvn) / tp;
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else if h >= k {
            bvn = -bvn;
        } else {
            let l = if h < 0.0 { norm_cdf(k) - norm_cdf(h) } else { norm_cdf(-h) - norm_cdf(-k) };
            bvn = l - bvn;
        }
    }
    bvn.clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{kendall_tau, norm_pdf};
    use proptest::prelude::*;

    fn specs() -> Vec<CopulaSpec> {
        vec![
            CopulaSpec::new(CopulaFamily::Gaussian, 0.6).unwrap(),
            CopulaSpec::new(CopulaFamily::Gaussian, -0.4).unwrap(),
            CopulaSpec::new(CopulaFamily::Frank, 5.0).unwrap(),
            CopulaSpec::new(CopulaFamily::Frank, -3.0).unwrap(),
            CopulaSpec::new(CopulaFamily::Clayton, 2.0).unwrap(),
            CopulaSpec::new(CopulaFamily::Clayton, 0.3).unwrap(),
        ]
    }

    /// Φ₂ by composite quadrature of φ(t)Φ((y - ρt)/√(1-ρ²)) over t < x.
    fn bvn_oracle(x: f64, y: f64, r: f64) -> f64 {
        let (z, w) = gauss_legendre(20);
        let lo = -12.0;
        let panels = 4000;
        let h = (x - lo) / panels as f64;
        let s = (1.0 - r * r).sqrt();
        let mut total = 0.0;
        for k in 0..panels {
            let m = lo + (k as f64 + 0.5) * h;
            for (z, w) in z.iter().zip(&w) {
                let t = m + 0.5 * h * z;
                total += 0.5 * h * w * norm_pdf(t) * norm_cdf((y - r * t) / s);
            }
        }
        total
    }

    #[test]
    fn bvn_matches_quadrature() {
        for &r in &[-0.99, -0.95, -0.5, -0.1, 0.2, 0.6, 0.8, 0.93, 0.999] {
            for &(x, y) in &[(-1.0, 0.5), (0.3, 0.3), (2.0, -0.7), (-2.5, -2.0), (1.5, 2.5)] {
                let a = bvn_lower(x, y, r);
                let b = bvn_oracle(x, y, r);
                assert!((a - b).abs() < 1e-10, "r={r} x={x} y={y}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn grounded_and_independent() {
        for s in specs() {
            assert_eq!(copula_cdf(&s, 0.4, 0.0).unwrap(), 0.0);
            assert_eq!(copula_cdf(&s, 0.0, 0.4).unwrap(), 0.0);
            assert!((copula_cdf(&s, 0.4, 1.0).unwrap() - 0.4).abs() < 1e-15);
            assert_eq!(copula_dv(&s, 1.0, 0.4).unwrap(), 1.0);
            assert_eq!(copula_dv(&s, 0.0, 0.4).unwrap(), 0.0);
        }
        let ind = CopulaSpec::new(CopulaFamily::Gaussian, 0.0).unwrap();
        assert!((copula_cdf(&ind, 0.3, 0.7).unwrap() - 0.21).abs() < 1e-15);
        assert!((copula_density(&ind, 0.3, 0.9).unwrap() - 1.0).abs() < 1e-15);
        assert!((copula_dv(&ind, 0.37, 0.9).unwrap() - 0.37).abs() < 1e-15);
    }

    #[test]
    fn rejects_inadmissible_theta() {
        assert!(CopulaSpec::new(CopulaFamily::Gaussian, 1.0).is_err());
        assert!(CopulaSpec::new(CopulaFamily::Clayton, 0.0).is_err());
        let bad = CopulaSpec { family: CopulaFamily::Clayton, theta: -1.0 };
        assert!(matches!(copula_cdf(&bad, 0.5, 0.5), Err(Error::ParameterDomain(_))));
        let s = specs()[0];
        assert!(matches!(copula_density(&s, 0.0, 0.5), Err(Error::Boundary(_))));
    }

    #[test]
    fn clayton_cdf_matches_density_quadrature() {
        // C(0.5, 0.5) = ∫∫_{[0,0.5]²} c, integrated on a log-spaced grid to handle the corner.
        let s = CopulaSpec::new(CopulaFamily::Clayton, 2.0).unwrap();
        let (z, w) = gauss_legendre(40);
        // substitute u = 0.5·e^{-a}, a ∈ [0, 40]
        let mut total = 0.0;
        let panels: Vec<(f64, f64)> = vec![(0.0, 1.0), (1.0, 3.0), (3.0, 8.0), (8.0, 20.0), (20.0, 40.0)];
        for &(a0, a1) in &panels {
            for &(b0, b1) in &panels {
                let ha = 0.5 * (a1 - a0);
                let hb = 0.5 * (b1 - b0);
                for i in 0..z.len() {
                    let a = 0.5 * (a0 + a1) + ha * z[i];
                    let u = 0.5 * (-a).exp();
                    for j in 0..z.len() {
                        let b = 0.5 * (b0 + b1) + hb * z[j];
                        let v = 0.5 * (-b).exp();
                        total += w[i] * w[j] * ha * hb * u * v * copula_density(&s, u, v).unwrap();
                    }
                }
            }
        }
        let c = copula_cdf(&s, 0.5, 0.5).unwrap();
        assert!((c - total).abs() < 1e-8, "{c} vs {total}");
        // closed form (2·2² - 1)^{-1/2}
        assert!((c - 7f64.powf(-0.5)).abs() < 1e-14);
    }

    #[test]
    fn clayton_density_integrates_to_one() {
        let s = CopulaSpec::new(CopulaFamily::Clayton, 1.0).unwrap();
        let (z, w) = gauss_legendre(60);
        let mut total = 0.0;
        let panels = [(0.0, 1e-3), (1e-3, 0.05), (0.05, 0.4), (0.4, 1.0)];
        for &(a0, a1) in &panels {
            for &(b0, b1) in &panels {
                let (ha, hb) = (0.5 * (a1 - a0), 0.5 * (b1 - b0));
                for i in 0..z.len() {
                    let u = 0.5 * (a0 + a1) + ha * z[i];
                    for j in 0..z.len() {
                        let v = 0.5 * (b0 + b1) + hb * z[j];
                        total += w[i] * w[j] * ha * hb * copula_density(&s, u, v).unwrap();
                    }
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-4, "{total}");
    }

    #[test]
    fn frank_density_matches_mixed_difference() {
        let s = CopulaSpec::new(CopulaFamily::Frank, 5.0).unwrap();
        let (u, v, h) = (0.2, 0.8, 1e-5);
        let c = |a, b| copula_cdf(&s, a, b).unwrap();
        let fd = (c(u + h, v + h) - c(u + h, v - h) - c(u - h, v + h) + c(u - h, v - h)) / (4.0 * h * h);
        let d = copula_density(&s, u, v).unwrap();
        assert!(((fd - d) / d).abs() < 1e-4, "{fd} vs {d}");
    }

    #[test]
    fn clayton_dv_matches_difference() {
        let s = CopulaSpec::new(CopulaFamily::Clayton, 2.0).unwrap();
        let h = 1e-6;
        let fd = (copula_cdf(&s, 0.5, 0.5 + h).unwrap() - copula_cdf(&s, 0.5, 0.5 - h).unwrap()) / (2.0 * h);
        let d = copula_dv(&s, 0.5, 0.5).unwrap();
        assert!(((fd - d) / d).abs() < 1e-4);
    }

    #[test]
    fn density_and_dv_match_cdf_on_grid() {
        let h = 1e-4;
        for s in specs() {
            let c = |a, b| copula_cdf(&s, a, b).unwrap();
            for i in 1..10 {
                for j in 1..10 {
                    let (u, v) = (i as f64 / 10.0, j as f64 / 10.0);
                    let fd = (c(u + h, v + h) - c(u + h, v - h) - c(u - h, v + h) + c(u - h, v - h))
                        / (4.0 * h * h);
                    let d = copula_density(&s, u, v).unwrap();
                    assert!(((fd - d) / d).abs() < 1e-3, "{s:?} ({u},{v}) {fd} vs {d}");
                    let fdv = (c(u, v + h) - c(u, v - h)) / (2.0 * h);
                    let dv = copula_dv(&s, u, v).unwrap();
                    assert!(((fdv - dv) / dv).abs() < 1e-3, "{s:?} ({u},{v}) {fdv} vs {dv}");
                }
            }
        }
    }

    #[test]
    fn independence_limits() {
        for s in [
            CopulaSpec::new(CopulaFamily::Frank, 1e-6).unwrap(),
            CopulaSpec::new(CopulaFamily::Frank, -1e-6).unwrap(),
            CopulaSpec::new(CopulaFamily::Clayton, 1e-6).unwrap(),
        ] {
            for &(u, v) in &[(0.1, 0.9), (0.5, 0.5), (0.02, 0.03), (0.97, 0.4)] {
                let d = copula_density(&s, u, v).unwrap();
                assert!((d - 1.0).abs() < 1e-3, "{s:?} {d}");
            }
        }
    }

    #[test]
    fn tau_mappings() {
        assert_eq!(tau_to_theta(CopulaFamily::Gaussian, 0.0).unwrap(), 0.0);
        assert!((tau_to_theta(CopulaFamily::Clayton, 0.2).unwrap() - 0.5).abs() < 1e-15);
        assert!(tau_to_theta(CopulaFamily::Clayton, -0.1).is_err());
        for fam in CopulaFamily::ALL {
            for &tau in &[-0.8, -0.3, -0.01, 0.001, 0.05, 0.2, 0.4, 0.9] {
                if fam == CopulaFamily::Clayton && tau <= 0.0 {
                    continue;
                }
                let th = tau_to_theta(fam, tau).unwrap();
                assert!((theta_to_tau(fam, th).unwrap() - tau).abs() < 1e-8, "{fam} {tau}");
                if fam != CopulaFamily::Clayton {
                    assert_eq!(th.signum(), tau.signum());
                }
            }
        }
    }

    #[test]
    fn debye_against_series() {
        // D₁(x) = 1 - x/4 + x²/36 - x⁴/3600 + x⁶/211680 for small x
        let x: f64 = 0.5;
        let series = 1.0 - x / 4.0 + x * x / 36.0 - x.powi(4) / 3600.0 + x.powi(6) / 211_680.0;
        assert!((debye1(x) - series).abs() < 1e-9);
        // D₁(∞)·x → π²/6
        assert!((debye1(80.0) * 80.0 - PI * PI / 6.0).abs() < 1e-10);
    }

    #[test]
    fn sampler_reproduces_tau_and_uniform_margins() {
        for (fam, tau) in [
            (CopulaFamily::Gaussian, 0.0),
            (CopulaFamily::Clayton, 0.2),
            (CopulaFamily::Frank, 0.4),
            (CopulaFamily::Gaussian, 0.4),
        ] {
            let s = CopulaSpec::from_tau(fam, tau).unwrap();
            let xs = sample_copula(&s, 100_000, 7).unwrap();
            let (u, v): (Vec<f64>, Vec<f64>) = xs.iter().cloned().unzip();
            let t = kendall_tau(&u, &v);
            assert!((t - tau).abs() < 0.01, "{fam} {t}");
            for m in [&u, &v] {
                let mut s = m.to_vec();
                s.sort_by(f64::total_cmp);
                let n = s.len() as f64;
                let d = s
                    .iter()
                    .enumerate()
                    .map(|(i, x)| ((i as f64 + 1.0) / n - x).abs().max((x - i as f64 / n).abs()))
                    .fold(0.0, f64::max);
                // KS critical value at level 0.01 is 1.628/√n
                assert!(d < 1.628 / n.sqrt(), "{fam} KS {d}");
            }
        }
    }

    #[test]
    fn sample_is_deterministic() {
        let s = CopulaSpec::new(CopulaFamily::Frank, 3.0).unwrap();
        assert_eq!(sample_copula(&s, 50, 3).unwrap(), sample_copula(&s, 50, 3).unwrap());
    }

    #[test]
    fn empirical_cdf_converges() {
        for s in specs() {
            let xs = sample_copula(&s, 100_000, 11).unwrap();
            for &(a, b) in &[(0.2, 0.3), (0.5, 0.5), (0.8, 0.6), (0.9, 0.1)] {
                let e = xs.iter().filter(|(u, v)| *u <= a && *v <= b).count() as f64 / xs.len() as f64;
                let c = copula_cdf(&s, a, b).unwrap();
                assert!((e - c).abs() < 0.01, "{s:?} {e} vs {c}");
            }
        }
    }

    proptest! {
        #[test]
        fn cdf_is_two_increasing(
            fam in 0usize..3, theta in 0.05f64..8.0,
            u1 in 0.01f64..0.99, du in 0.001f64..0.5, v1 in 0.01f64..0.99, dv in 0.001f64..0.5,
        ) {
            let fam = CopulaFamily::ALL[fam];
            let theta = if fam == CopulaFamily::Gaussian { (theta / 8.5).min(0.95) } else { theta };
            let s = CopulaSpec::new(fam, theta).unwrap();
            let u2 = (u1 + du).min(1.0);
            let v2 = (v1 + dv).min(1.0);
            let c = |a, b| copula_cdf(&s, a, b).unwrap();
            let vol = c(u2, v2) - c(u1, v2) - c(u2, v1) + c(u1, v1);
            prop_assert!(vol >= -1e-12);
            let d1 = copula_dv(&s, u1, v1.min(0.999)).unwrap();
            let d2 = copula_dv(&s, u2.min(1.0), v1.min(0.999)).unwrap();
            prop_assert!(d2 >= d1 - 1e-12);
            prop_assert!((0.0..=1.0).contains(&d1));
        }
    }
}
