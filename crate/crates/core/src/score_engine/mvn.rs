//! Equicoordinate multivariate normal probabilities by the separation-of-variables
//! transform with randomized rank-1 lattice rules.

use crate::special::{ln_norm_cdf, norm_quantile};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PRIMES: [u32; 30] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97, 101,
    103, 107, 109, 113,
];

/// Quasi-Monte Carlo settings.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct QmcOptions {
    pub shifts: usize,
    /// Lattice points per shift: initial count and cap.
    pub points: usize,
    pub max_points: usize,
    /// Target absolute error (three standard errors).
    pub abs_tol: f64,
    pub seed: u64,
}

impl Default for QmcOptions {
    fn default() -> Self {
        QmcOptions { shifts: 10, points: 1000, max_points: 10_000, abs_tol: 1e-4, seed: 0x5eed_cb4a }
    }
}

/// Estimate and standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MvnEstimate {
    pub value: f64,
    pub std_error: f64,
}

/// Lower-triangular Cholesky factor that tolerates rank deficiency:
/// pivots below `tol` become zero columns.
pub(crate) fn semidefinite_cholesky(a: &DMatrix<f64>, tol: f64) -> DMatrix<f64> {
    let n = a.nrows();
    let mut c = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= c[(j, k)] * c[(j, k)];
        }
        if d <= tol {
            continue;
        }
        let cjj = d.sqrt();
        c[(j, j)] = cjj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= c[(i, k)] * c[(j, k)];
            }
            c[(i, j)] = s / cjj;
        }
    }
    c
}

/// Variable ordering that puts the most constraining coordinate first at every
/// step, using truncated-normal conditional means for the earlier ones.
fn prioritized_order(a: &DMatrix<f64>, z: f64, tol: f64) -> Vec<usize> {
    let n = a.nrows();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut m = a.clone();
    let mut c = DMatrix::<f64>::zeros(n, n);
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut best = (i, f64::INFINITY);
        for j in i..n {
            let mut v = m[(j, j)];
            let mut s = 0.0;
            for k in 0..i {
                v -= c[(j, k)] * c[(j, k)];
                s += c[(j, k)] * y[k];
            }
            let prob = if v > tol { crate::special::norm_cdf((z - s) / v.sqrt()) } else { 2.0 };
            if prob < best.1 {
                best = (j, prob);
            }
        }
        let j = best.0;
        if j != i {
            perm.swap(i, j);
            m.swap_rows(i, j);
            m.swap_columns(i, j);
            c.swap_rows(i, j);
        }
        let mut d = m[(i, i)];
        for k in 0..i {
            d -= c[(i, k)] * c[(i, k)];
        }
        if d <= tol {
            continue;
        }
        let cii = d.sqrt();
        c[(i, i)] = cii;
        for r in (i + 1)..n {
            let mut s = m[(r, i)];
            for k in 0..i {
                s -= c[(r, k)] * c[(i, k)];
            }
            c[(r, i)] = s / cii;
        }
        let mut s = 0.0;
        for k in 0..i {
            s += c[(i, k)] * y[k];
        }
        let t = (z - s) / cii;
        // mean of a standard normal truncated above at t
        y[i] = -(crate::special::norm_pdf(t).ln() - ln_norm_cdf(t)).exp();
    }
    perm
}

/// `1 - P(Xᵢ ≤ z for all i)` for `X ~ N(0, corr)`.
pub fn equicoordinate_exceedance(corr: &DMatrix<f64>, z: f64, opts: &QmcOptions) -> MvnEstimate {
    let b = corr.nrows();
    if b == 0 {
        return MvnEstimate { value: 0.0, std_error: 0.0 };
    }
    let perm = prioritized_order(corr, z, 1e-10);
    let ordered = DMatrix::from_fn(b, b, |i, j| corr[(perm[i], perm[j])]);
    let c = semidefinite_cholesky(&ordered, 1e-10);
    if b == 1 {
        return MvnEstimate { value: -ln_norm_cdf(z).exp_m1(), std_error: 0.0 };
    }
    let gen: Vec<f64> = (0..b - 1).map(|i| (PRIMES[i % PRIMES.len()] as f64).sqrt().fract()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let shifts: Vec<Vec<f64>> = (0..opts.shifts.max(2)).map(|_| (0..b - 1).map(|_| rng.random::<f64>()).collect()).collect();
    let mut sums = vec![0.0; shifts.len()];
    let mut y = vec![0.0; b];
    let mut done = 0usize;
    let mut target = opts.points.max(1);
    loop {
        // the Kronecker sequence is extensible, so earlier points are kept
        for (sum, shift) in sums.iter_mut().zip(&shifts) {
            for k in (done + 1)..=target {
                *sum += sample(&c, z, &gen, shift, k as f64, &mut y);
            }
        }
        done = target;
        let means: Vec<f64> = sums.iter().map(|s| s / done as f64).collect();
        let m = means.len() as f64;
        let mean = means.iter().sum::<f64>() / m;
        let var = means.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m * (m - 1.0));
        let se = var.sqrt();
        if 3.0 * se <= opts.abs_tol || 2 * done > opts.max_points {
            return MvnEstimate { value: mean.clamp(0.0, 1.0), std_error: se };
        }
        target = 2 * done;
    }
}

/// One lattice point of the separation-of-variables integrand, returned as the
/// exceedance `1 - Π eᵢ` computed from the log product.
fn sample(c: &DMatrix<f64>, z: f64, gen: &[f64], shift: &[f64], k: f64, y: &mut [f64]) -> f64 {
    let b = c.nrows();
    let mut ln_prod = 0.0;
    for i in 0..b {
        let mut s = 0.0;
        for j in 0..i {
            s += c[(i, j)] * y[j];
        }
        let a = z - s;
        let cii = c[(i, i)];
        if cii > 0.0 {
            let ln_e = ln_norm_cdf(a / cii);
            ln_prod += ln_e;
            if i + 1 < b {
                let w = (k * gen[i] + shift[i]).fract();
                let w = (2.0 * w - 1.0).abs();
                let u = (w * ln_e.exp()).clamp(1e-300, 1.0 - 1e-16);
                y[i] = norm_quantile(u);
            }
        } else {
            // degenerate direction: the coordinate is a deterministic function of earlier ones
            if a < 0.0 {
                return 1.0;
            }
            y[i] = 0.0;
        }
    }
    -ln_prod.exp_m1()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::copula::bvn_lower;
    use crate::special::norm_cdf;

    #[test]
    fn independent_coordinates() {
        let corr = DMatrix::identity(4, 4);
        let z = 1.3;
        let r = equicoordinate_exceedance(&corr, z, &QmcOptions::default());
        let want = 1.0 - norm_cdf(z).powi(4);
        assert!((r.value - want).abs() < 1e-10);
    }

    #[test]
    fn bivariate_against_bvn() {
        for rho in [-0.7, 0.2, 0.95] {
            let corr = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
            for z in [-0.5, 1.0, 2.5] {
                let r = equicoordinate_exceedance(&corr, z, &QmcOptions::default());
                let want = 1.0 - bvn_lower(z, z, rho);
                assert!((r.value - want).abs() < 1e-4, "{rho} {z}: {} vs {want}", r.value);
            }
        }
    }

    #[test]
    fn equicorrelated_against_one_dimensional_integral() {
        // X_i = √ρ W + √(1-ρ) E_i, so P(all ≤ z) = ∫ Φ((z - √ρ w)/√(1-ρ))^b φ(w) dw
        let (b, rho, z) = (6usize, 0.5f64, 2.0f64);
        let corr = DMatrix::from_fn(b, b, |i, j| if i == j { 1.0 } else { rho });
        let (nodes, weights) = crate::special::gauss_legendre(64);
        let mut inner = 0.0;
        for panel in 0..16 {
            let lo = -8.0 + panel as f64;
            for (x, w) in nodes.iter().zip(&weights) {
                let t = lo + 0.5 * (x + 1.0);
                let e = norm_cdf((z - rho.sqrt() * t) / (1.0 - rho).sqrt());
                inner += 0.5 * w * e.powi(b as i32) * crate::special::norm_pdf(t);
            }
        }
        let r = equicoordinate_exceedance(&corr, z, &QmcOptions::default());
        assert!((r.value - (1.0 - inner)).abs() < 1e-4, "{} vs {}", r.value, 1.0 - inner);
    }

    #[test]
    fn perfectly_correlated_collapses_to_univariate() {
        let corr = DMatrix::from_element(5, 5, 1.0);
        let z = 1.1;
        let r = equicoordinate_exceedance(&corr, z, &QmcOptions::default());
        assert!((r.value - (1.0 - norm_cdf(z))).abs() < 1e-12);
    }
}
