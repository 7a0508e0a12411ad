//! Optimal sample allocation under size and budget constraints, and the
//! next-observation purchase rule.
//!
//! All weight covariances enter in scaled form (`Sigma^W / m`), paired with
//! sampling terms `1 / n_k`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::duc::{WeightCov, WeightCovForm};
use crate::error::{DucError, Result};
use crate::linalg::{min_eigenvalue, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum PlanConstraint {
    Size { total: f64 },
    Budget { kappa: Vec<f64>, budget: f64 },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanDiagnostics {
    /// The optimal weights have both signs, so `n_k / N != beta_k`.
    pub mixed_signs: bool,
    pub iterations: usize,
    pub restarts: usize,
    pub polished: bool,
    /// Objective of the integer plan.
    pub integer_objective: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub constraint: PlanConstraint,
    pub n_continuous: Vec<f64>,
    pub n_integer: Vec<u64>,
    pub beta: Vec<f64>,
    pub objective_value: f64,
    pub diagnostics: PlanDiagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSpec {
    /// Cost per target observation.
    pub kappa1: f64,
    /// Cost per source observation.
    pub kappa2: f64,
    pub budget: f64,
}

impl BudgetSpec {
    pub fn new(kappa1: f64, kappa2: f64, budget: f64) -> Result<Self> {
        let s = Self { kappa1, kappa2, budget };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("kappa1", self.kappa1), ("kappa2", self.kappa2), ("budget", self.budget)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(DucError::param(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// The quadratic part `Q` of the size-constrained objective.
///
/// A raw covariance (target first, sampled like the others) gives
/// `Q = A Sigma^W A^T`; a differenced covariance relative to an unsampled
/// target is used as is.
pub fn size_objective_matrix(wc: &WeightCov) -> Result<DMatrix<f64>> {
    wc.validate()?;
    if !wc.scaled {
        return Err(DucError::param("sampling plans need the scaled (Sigma^W / m) covariance"));
    }
    let s = &wc.matrix;
    let k = wc.dim();
    let mut q = match wc.form {
        WeightCovForm::Differenced => s.clone(),
        WeightCovForm::Raw => DMatrix::from_fn(k, k, |i, j| {
            if i == 0 || j == 0 {
                0.0
            } else {
                s[(0, 0)] + s[(i, j)] - s[(0, i)] - s[(0, j)]
            }
        }),
    };
    symmetrize(&mut q);
    let scale = q.amax().max(1e-300);
    if min_eigenvalue(&q) < -1e-8 * scale.max(1.0) {
        return Err(DucError::param("weight covariance is not positive semidefinite"));
    }
    Ok(q)
}

/// `beta^T Q beta + (sum |beta_k|)^2 / N`.
pub fn size_objective(q: &DMatrix<f64>, beta: &DVector<f64>, n_total: f64) -> f64 {
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    beta.dot(&(q * beta)) + l1 * l1 / n_total
}

/// Projection onto `{(p, q) >= 0 : sum p - sum q = 1}`.
fn project_split(a: &DVector<f64>, b: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let excess = |tau: f64| -> f64 {
        a.iter().map(|x| (x + tau).max(0.0)).sum::<f64>()
            - b.iter().map(|x| (x - tau).max(0.0)).sum::<f64>()
            - 1.0
    };
    // `excess` is continuous and nondecreasing in tau.
    let mut lo = -1.0;
    while excess(lo) > 0.0 {
        lo *= 2.0;
    }
    let mut hi = 1.0;
    while excess(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if excess(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi.abs().max(1.0) {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    let p = a.map(|x| (x + tau).max(0.0));
    let q = b.map(|x| (x - tau).max(0.0));
    (p, q)
}

const PGD_MAX_ITER: usize = 20_000;

/// Accelerated projected gradient on the split `beta = p - q`, which turns the
/// `|beta_k|` kinks into nonnegativity constraints.
fn pgd(q: &DMatrix<f64>, n_total: f64, start: &DVector<f64>) -> (DVector<f64>, usize) {
    let k = q.nrows();
    let lmax = q.clone().symmetric_eigen().eigenvalues.amax().max(0.0);
    // Hessian in (p, q) is 2 [[Q + J/N, -Q + J/N], [-Q + J/N, Q + J/N]].
    let lip = 4.0 * lmax + 4.0 * k as f64 / n_total;
    let step = 1.0 / lip.max(1e-300);
    let mut p = start.map(|b| b.max(0.0));
    let mut m = start.map(|b| (-b).max(0.0));
    let mut yp = p.clone();
    let mut ym = m.clone();
    let mut t = 1.0f64;
    let mut iters = 0;
    for it in 0..PGD_MAX_ITER {
        iters = it + 1;
        let beta = &yp - &ym;
        let l1 = yp.sum() + ym.sum();
        let g = q * &beta * 2.0;
        let gp = &g + DVector::from_element(k, 2.0 * l1 / n_total);
        let gm = -&g + DVector::from_element(k, 2.0 * l1 / n_total);
        let (np, nm) = project_split(&(&yp - gp * step), &(&ym - gm * step));
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let mom = (t - 1.0) / t_next;
        yp = &np + (&np - &p) * mom;
        ym = &nm + (&nm - &m) * mom;
        let moved = (&np - &p).amax().max((&nm - &m).amax());
        p = np;
        m = nm;
        t = t_next;
        if moved < 1e-15 {
            break;
        }
    }
    (&p - &m, iters)
}

/// Solve the equality-constrained quadratic on the orthant of `beta`.
fn polish(q: &DMatrix<f64>, n_total: f64, beta: &DVector<f64>) -> Option<DVector<f64>> {
    let scale = beta.amax();
    let free: Vec<usize> = (0..beta.len()).filter(|&i| beta[i].abs() > 1e-9 * scale).collect();
    let f = free.len();
    if f == 0 {
        return None;
    }
    let s: Vec<f64> = free.iter().map(|&i| beta[i].signum()).collect();
    let mut kkt = DMatrix::zeros(f + 1, f + 1);
    for a in 0..f {
        for b in 0..f {
            kkt[(a, b)] = 2.0 * (q[(free[a], free[b])] + s[a] * s[b] / n_total);
        }
        kkt[(a, f)] = 1.0;
        kkt[(f, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(f + 1);
    rhs[f] = 1.0;
    let sol = kkt.svd(true, true).solve(&rhs, 1e-13).ok()?;
    let mut out = DVector::zeros(beta.len());
    for (a, &i) in free.iter().enumerate() {
        if sol[a] * s[a] < -1e-12 {
            return None;
        }
        out[i] = sol[a];
    }
    Some(out)
}

fn size_starts(q: &DMatrix<f64>) -> Vec<DVector<f64>> {
    let k = q.nrows();
    let mut starts = vec![DVector::from_element(k, 1.0 / k as f64)];
    let inv_diag = DVector::from_fn(k, |i, _| 1.0 / (q[(i, i)] + 1e-12));
    starts.push(&inv_diag / inv_diag.sum());
    let best = (0..k).min_by(|&a, &b| q[(a, a)].total_cmp(&q[(b, b)])).unwrap_or(0);
    let mut e = DVector::zeros(k);
    e[best] = 1.0;
    starts.push(e);
    let mut alt = DVector::from_fn(k, |i, _| if i % 2 == 0 { 2.0 } else { -1.0 });
    let shift = (alt.sum() - 1.0) / k as f64;
    alt.add_scalar_mut(-shift);
    starts.push(alt);
    let mut last = DVector::zeros(k);
    last[k - 1] = 1.0;
    starts.push(last);
    starts
}

fn integer_size_objective(q: &DMatrix<f64>, beta: &DVector<f64>, n: &[u64]) -> f64 {
    let mut v = beta.dot(&(q * beta));
    for (b, &nk) in beta.iter().zip(n) {
        if *b != 0.0 {
            v += if nk == 0 { f64::INFINITY } else { b * b / nk as f64 };
        }
    }
    v
}

fn round_size_plan(n_cont: &[f64], beta: &DVector<f64>, total: u64) -> Vec<u64> {
    let mut n: Vec<u64> = n_cont.iter().map(|x| x.floor().max(0.0) as u64).collect();
    let mut left = total.saturating_sub(n.iter().sum());
    while left > 0 {
        let gain = |k: usize| -> f64 {
            let b2 = beta[k] * beta[k];
            if b2 == 0.0 {
                0.0
            } else if n[k] == 0 {
                f64::INFINITY
            } else {
                b2 / n[k] as f64 - b2 / (n[k] + 1) as f64
            }
        };
        let mut best = 0;
        for k in 1..n.len() {
            if gain(k) > gain(best) {
                best = k;
            }
        }
        n[best] += 1;
        left -= 1;
    }
    n
}

/// Minimise `beta^T Q beta + (sum |beta_k|)^2 / N` on `sum beta = 1` and set
/// `n_k = |beta_k| N / sum |beta|`.
pub fn size_constrained_plan(wc: &WeightCov, n_total: f64) -> Result<SamplingPlan> {
    if !(n_total.is_finite() && n_total > 0.0) {
        return Err(DucError::param(format!("total size must be positive, got {n_total}")));
    }
    let q = size_objective_matrix(wc)?;
    let starts = size_starts(&q);
    let mut best: Option<(DVector<f64>, f64)> = None;
    let mut iterations = 0;
    for s in &starts {
        let (b, it) = pgd(&q, n_total, s);
        iterations += it;
        let f = size_objective(&q, &b, n_total);
        if best.as_ref().is_none_or(|(_, fb)| f < *fb - 1e-15 * fb.abs()) {
            best = Some((b, f));
        }
    }
    let (mut beta, obj) = best.expect("at least one start");
    let mut polished = false;
    if let Some(b) = polish(&q, n_total, &beta) {
        if size_objective(&q, &b, n_total) < obj {
            beta = b;
            polished = true;
        }
    }
    if iterations >= PGD_MAX_ITER * starts.len() && !polished {
        return Err(DucError::NonConvergence { iterations, context: "size-constrained plan".into() });
    }
    // Exact zeros for numerically vanishing weights, then renormalise.
    let scale = beta.amax();
    beta.iter_mut().for_each(|b| {
        if b.abs() < 1e-12 * scale {
            *b = 0.0;
        }
    });
    beta /= beta.sum();
    let obj = size_objective(&q, &beta, n_total);

    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let n_cont: Vec<f64> = beta.iter().map(|b| b.abs() * n_total / l1).collect();
    let mixed = beta.iter().any(|&b| b > 0.0) && beta.iter().any(|&b| b < 0.0);
    let mut warnings = Vec::new();
    if mixed {
        warnings.push("optimal weights have mixed signs; n_k / N differs from beta_k".to_string());
    }
    let n_int = round_size_plan(&n_cont, &beta, n_total.round() as u64);
    let integer_objective = integer_size_objective(&q, &beta, &n_int);
    Ok(SamplingPlan {
        constraint: PlanConstraint::Size { total: n_total },
        n_continuous: n_cont,
        n_integer: n_int,
        beta: beta.iter().cloned().collect(),
        objective_value: obj,
        diagnostics: PlanDiagnostics {
            mixed_signs: mixed,
            iterations,
            restarts: starts.len(),
            polished,
            integer_objective,
            warnings,
        },
    })
}

/// `Sigma^W_22 + Sigma^W_11 - 2 Sigma^W_12` from a raw two-source covariance.
pub fn differenced_variance(wc: &WeightCov) -> Result<f64> {
    wc.validate()?;
    if wc.form != WeightCovForm::Raw || wc.dim() != 2 {
        return Err(DucError::param("expected a raw 2x2 weight covariance"));
    }
    let s = &wc.matrix;
    Ok((s[(1, 1)] + s[(0, 0)] - 2.0 * s[(0, 1)]).max(0.0))
}

/// Effective sample size `n1 + 1 / (v + 1 / n2)`.
pub fn effective_size(v: f64, n1: f64, n2: f64) -> f64 {
    n1 + if n2 > 0.0 { n2 / (v * n2 + 1.0) } else { 0.0 }
}

/// Maximise the effective sample size on the budget line `kappa1 n1 + kappa2 n2 = C`.
pub fn budget_plan(v: f64, spec: &BudgetSpec) -> Result<SamplingPlan> {
    spec.validate()?;
    if !(v.is_finite() && v >= 0.0) {
        return Err(DucError::param(format!("differenced variance must be >= 0, got {v}")));
    }
    let (k1, k2, c) = (spec.kappa1, spec.kappa2, spec.budget);
    let n2_max = c / k2;
    // The objective along the line is concave in n2, so clamping the
    // stationary point to [0, C / kappa2] is exact. Ties go to the target.
    let n2 = if v == 0.0 {
        if k2 < k1 {
            n2_max
        } else {
            0.0
        }
    } else {
        (((k1 / k2).sqrt() - 1.0) / v).clamp(0.0, n2_max)
    };
    let n1 = ((c - k2 * n2) / k1).max(0.0);
    let objective = effective_size(v, n1, n2);
    let eff2 = effective_size(v, 0.0, n2);
    let beta = vec![n1 / objective, eff2 / objective];

    let mut warnings = Vec::new();
    let mut ni = [n1.floor() as u64, n2.floor() as u64];
    let mut left = c - k1 * ni[0] as f64 - k2 * ni[1] as f64;
    loop {
        let here = effective_size(v, ni[0] as f64, ni[1] as f64);
        let g1 = (left >= k1).then(|| effective_size(v, ni[0] as f64 + 1.0, ni[1] as f64) - here);
        let g2 = (left >= k2).then(|| effective_size(v, ni[0] as f64, ni[1] as f64 + 1.0) - here);
        match (g1, g2) {
            (Some(a), Some(b)) if b > a => {
                ni[1] += 1;
                left -= k2;
            }
            (Some(_), _) => {
                ni[0] += 1;
                left -= k1;
            }
            (None, Some(_)) => {
                ni[1] += 1;
                left -= k2;
            }
            (None, None) => break,
        }
    }
    if ni == [0, 0] {
        warnings.push("budget does not cover a single observation".to_string());
        log::warn!("budget {c} does not cover a single observation");
    }
    let integer_objective = effective_size(v, ni[0] as f64, ni[1] as f64);
    Ok(SamplingPlan {
        constraint: PlanConstraint::Budget { kappa: vec![k1, k2], budget: c },
        n_continuous: vec![n1, n2],
        n_integer: ni.to_vec(),
        beta,
        objective_value: objective,
        diagnostics: PlanDiagnostics { integer_objective, warnings, ..Default::default() },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Purchase {
    BuyTarget,
    BuySource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IncrementalDecision {
    pub decision: Purchase,
    /// `(kappa2 / kappa1) (sigma22 n2 + 1)^2`.
    pub quantity: f64,
    /// `1 - quantity`; positive favours the source.
    pub margin: f64,
}

/// Whether the next observation should come from the source (unshifted target).
pub fn incremental_value(kappa1: f64, kappa2: f64, sigma22: f64, n2: f64) -> IncrementalDecision {
    let quantity = kappa2 / kappa1 * (sigma22 * n2 + 1.0).powi(2);
    IncrementalDecision {
        decision: if quantity < 1.0 { Purchase::BuySource } else { Purchase::BuyTarget },
        quantity,
        margin: 1.0 - quantity,
    }
}
