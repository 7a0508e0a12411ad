//! The coefficient computed from known (or estimated) weight covariances.

use nalgebra::{DMatrix, DVector};

use super::types::{
    ApproxTarget, CRatios, CombinedCov, DucEstimate, DucMethod, SourceWeights, WeightCov, WeightCovForm,
};
use crate::error::{DucError, Result};
use crate::linalg::{ones, symmetrize};

/// Relative ridge on `Sigma^K` before solving for `beta*`.
pub const BETA_RIDGE: f64 = 1e-10;

fn check_pair(wc: &WeightCov, c: &CRatios) -> Result<()> {
    wc.validate()?;
    if wc.form != WeightCovForm::Raw {
        return Err(DucError::param("expected a raw weight covariance"));
    }
    if wc.dim() != c.len() {
        return Err(DucError::dim(format!(
            "weight covariance covers {} sources, c has {}",
            wc.dim(),
            c.len()
        )));
    }
    if wc.scaled != c.scaled {
        return Err(DucError::param(
            "weight covariance and c ratios use different scalings (Sigma^W/m with 1/n, or Sigma^W with m/n)",
        ));
    }
    Ok(())
}

/// `Sigma^K = A Sigma^W A^T + diag(c)` with `A = [[0, 0], [-1, I]]`.
pub fn assemble_sigma_k(wc: &WeightCov, c: &CRatios) -> Result<CombinedCov> {
    check_pair(wc, c)?;
    let k = wc.dim();
    let mut a = DMatrix::zeros(k, k);
    for i in 1..k {
        a[(i, 0)] = -1.0;
        a[(i, i)] = 1.0;
    }
    let mut m = &a * &wc.matrix * a.transpose();
    for i in 0..k {
        m[(i, i)] += c.c[i];
    }
    symmetrize(&mut m);
    Ok(CombinedCov { matrix: m, c: Some(c.c.clone()) })
}

fn ridged(m: &DMatrix<f64>) -> DMatrix<f64> {
    let k = m.nrows();
    let eps = BETA_RIDGE * m.trace().abs() / k as f64;
    let mut r = m.clone();
    for i in 0..k {
        r[(i, i)] += eps;
    }
    r
}

/// `beta = S^-1 1 / (1^T S^-1 1)`, the minimiser of `beta^T S beta` on `sum beta = 1`.
fn min_quadratic_on_affine(s: &DMatrix<f64>) -> Result<DVector<f64>> {
    let k = s.nrows();
    let r = ridged(s);
    let x = match r.clone().cholesky() {
        Some(ch) => ch.solve(&ones(k)),
        None => r
            .lu()
            .solve(&ones(k))
            .ok_or_else(|| DucError::Singular("Sigma^K is singular beyond ridge repair".into()))?,
    };
    let total = x.sum();
    if !total.is_finite() || total.abs() < f64::EPSILON {
        return Err(DucError::Singular("1^T (Sigma^K)^-1 1 vanishes".into()));
    }
    Ok(x / total)
}

pub fn optimal_beta(sk: &CombinedCov) -> Result<SourceWeights> {
    Ok(SourceWeights { beta: min_quadratic_on_affine(&sk.matrix)?, target_of_approx: ApproxTarget::Target })
}

/// Euclidean projection onto the probability simplex.
pub fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().cloned().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        acc += ui;
        let t = (acc - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Minimise `beta^T S beta` over the probability simplex (nonnegative weights).
pub fn optimal_beta_nonneg(sk: &CombinedCov) -> Result<SourceWeights> {
    let unconstrained = optimal_beta(sk)?;
    if unconstrained.beta.iter().all(|&b| b >= 0.0) {
        return Ok(unconstrained);
    }
    let s = ridged(&sk.matrix);
    let k = s.nrows();
    let lmax = s.clone().symmetric_eigen().eigenvalues.amax().max(f64::MIN_POSITIVE);
    let step = 1.0 / (2.0 * lmax);
    let mut beta = project_simplex(&unconstrained.beta);
    let mut y = beta.clone();
    let mut t = 1.0f64;
    const MAX_ITER: usize = 20_000;
    for _ in 0..MAX_ITER {
        let grad = &s * &y * 2.0;
        let next = project_simplex(&(&y - grad * step));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        y = &next + (&next - &beta) * ((t - 1.0) / t_next);
        let moved = (&next - &beta).amax();
        beta = next;
        t = t_next;
        if moved < 1e-14 {
            break;
        }
    }
    debug_assert_eq!(beta.len(), k);
    Ok(SourceWeights { beta, target_of_approx: ApproxTarget::Target })
}

/// The coefficient together with the two weight vectors it is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationDuc {
    pub rho2: f64,
    pub beta_star: SourceWeights,
    pub beta_prime: SourceWeights,
}

/// Population coefficient from `Sigma^W` over sources `1..K+1` (target first,
/// candidate last) and the matching `c`.
pub fn duc_population_detailed(wc: &WeightCov, c: &CRatios) -> Result<PopulationDuc> {
    check_pair(wc, c)?;
    let kp1 = wc.dim();
    if kp1 < 2 {
        return Err(DucError::dim("need the target and a candidate"));
    }
    let k = kp1 - 1;
    let s = &wc.matrix;
    let sk = assemble_sigma_k(&wc.leading(k), &c.head(k))?;
    let beta_star = optimal_beta(&sk)?;

    // Cov(W^(K+1) - W^(k), W^(K+1) - W^(k')) + diag(c_1..c_K).
    let mut mp = DMatrix::from_fn(k, k, |i, j| s[(k, k)] + s[(i, j)] - s[(k, i)] - s[(k, j)]);
    for i in 0..k {
        mp[(i, i)] += c.c[i];
    }
    symmetrize(&mut mp);
    let beta_prime =
        SourceWeights { beta: min_quadratic_on_affine(&mp)?, target_of_approx: ApproxTarget::Candidate };

    let mut u = DVector::zeros(kp1);
    let mut w = DVector::zeros(kp1);
    u[0] = 1.0;
    w[k] = 1.0;
    for i in 0..k {
        u[i] -= beta_star.beta[i];
        w[i] -= beta_prime.beta[i];
    }
    let cc = c.c.rows(0, k);
    let inner_c: f64 = (0..k).map(|i| beta_star.beta[i] * beta_prime.beta[i] * cc[i]).sum();
    let norm_star: f64 = (0..k).map(|i| beta_star.beta[i].powi(2) * cc[i]).sum();
    let norm_prime: f64 = (0..k).map(|i| beta_prime.beta[i].powi(2) * cc[i]).sum();
    let cov = u.dot(&(s * &w)) + inner_c;
    let var1 = u.dot(&(s * &u)) + norm_star;
    let var2 = w.dot(&(s * &w)) + norm_prime + c.c[k];
    if !(var1 > 0.0) || !(var2 > 0.0) {
        return Err(DucError::Singular("excess risk term vanishes; the coefficient is undefined".into()));
    }
    let rho2 = (cov * cov / (var1 * var2)).clamp(0.0, 1.0);
    Ok(PopulationDuc { rho2, beta_star, beta_prime })
}

pub fn duc_population(wc: &WeightCov, c: &CRatios) -> Result<DucEstimate> {
    let d = duc_population_detailed(wc, c)?;
    Ok(DucEstimate::point(d.rho2, DucMethod::PopulationFormula))
}

/// Closed form for independent weights with an unshifted target.
pub fn duc_independent(variances: &[f64], c: &CRatios) -> Result<DucEstimate> {
    if variances.len() != c.len() {
        return Err(DucError::dim(format!("{} variances for {} c ratios", variances.len(), c.len())));
    }
    if variances.len() < 2 {
        return Err(DucError::dim("need the target and a candidate"));
    }
    if variances[0] != 0.0 {
        return Err(DucError::param("the independent-weights form needs Var(W^(1)) = 0"));
    }
    let mut total = 0.0;
    let mut last = 0.0;
    for (v, ck) in variances.iter().zip(c.c.iter()) {
        if v.is_nan() || *v < 0.0 {
            return Err(DucError::param(format!("invalid weight variance {v}")));
        }
        let d = v + ck;
        if !(d > 0.0) {
            return Err(DucError::param("Var(W^(k)) + c_k = 0 leaves the formula undefined"));
        }
        last = 1.0 / d;
        total += last;
    }
    Ok(DucEstimate::point(last / total, DucMethod::IndependentWeightsFormula))
}
