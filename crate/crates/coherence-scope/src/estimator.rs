//! Weighted least-squares quadratic fitting of error-rate-vs-n data and the
//! parameter-extraction rules for the channel, gate, measurement, and
//! state-preparation protocols.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ghz::GhzBasis;

/// Quadratic fit p_error(n) = a n^2 + b n + c with covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitReport {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Covariance of (a, b, c). For sampled data this is (X'WX)^-1 with the
    /// supplied binomial weights; for exact data (all stderr zero) it is
    /// scaled by the reduced residual variance.
    pub cov: [[f64; 3]; 3],
    pub residual_norm: f64,
    pub weights: Vec<f64>,
    pub n_values: Vec<usize>,
}

impl FitReport {
    pub fn stderr_a(&self) -> f64 {
        self.cov[0][0].max(0.0).sqrt()
    }

    pub fn stderr_b(&self) -> f64 {
        self.cov[1][1].max(0.0).sqrt()
    }

    pub fn n_max(&self) -> f64 {
        self.n_values.iter().copied().max().unwrap_or(0) as f64
    }
}

/// Accumulation-order verdict for a fitted error-rate curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Linear,
    Quadratic,
    Inconclusive,
}

/// Classification thresholds. A fit is called quadratic when the quadratic
/// coefficient is both statistically significant (z_quadratic sigma) and
/// practically significant (contributes more than significance_floor of the
/// linear term at n_max); linear when it is statistically consistent with
/// zero (z_linear sigma) or practically negligible.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ClassifyConfig {
    pub z_quadratic: f64,
    pub z_linear: f64,
    pub significance_floor: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        ClassifyConfig { z_quadratic: 5.0, z_linear: 2.0, significance_floor: 0.1 }
    }
}

/// Weighted least-squares fit of (n, p_error, stderr) points to a quadratic.
///
/// Weights are 1/stderr^2; points with stderr = 0 (exact mode) get uniform
/// unit weight. Requires at least 4 distinct n values.
pub fn wls_quadratic_fit(points: &[(usize, f64, f64)]) -> Result<FitReport> {
    let mut distinct: Vec<usize> = points.iter().map(|p| p.0).collect();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 4 {
        return Err(Error::Fit(format!(
            "need at least 4 distinct n values, got {}",
            distinct.len()
        )));
    }
    let n_pts = points.len();
    let mut x = DMatrix::<f64>::zeros(n_pts, 3);
    let mut y = DVector::<f64>::zeros(n_pts);
    let mut weights = Vec::with_capacity(n_pts);
    let mut any_weighted = false;
    for (i, &(n, p, stderr)) in points.iter().enumerate() {
        let w = if stderr > 0.0 {
            any_weighted = true;
            1.0 / (stderr * stderr)
        } else {
            1.0
        };
        weights.push(w);
        let sw = w.sqrt();
        let nf = n as f64;
        x[(i, 0)] = sw * nf * nf;
        x[(i, 1)] = sw * nf;
        x[(i, 2)] = sw;
        y[i] = sw * p;
    }
    let svd = x.clone().svd(true, true);
    let beta = svd
        .solve(&y, 1e-14)
        .map_err(|e| Error::Fit(format!("singular design matrix: {e}")))?;
    let resid = &x * &beta - &y;
    let wrss = resid.norm_squared();
    // Gram matrix of the weighted design.
    let gram = x.transpose() * &x;
    let ginv = gram
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normal equations (duplicate n values)".into()))?;
    let dof = (n_pts as f64 - 3.0).max(1.0);
    let scale = if any_weighted { 1.0 } else { wrss / dof };
    let mut cov = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            cov[i][j] = ginv[(i, j)] * scale;
        }
    }
    Ok(FitReport {
        a: beta[0],
        b: beta[1],
        c: beta[2],
        cov,
        residual_norm: wrss.sqrt(),
        weights,
        n_values: points.iter().map(|p| p.0).collect(),
    })
}

/// Classify a fit as linear / quadratic / inconclusive.
pub fn classify_accumulation(fit: &FitReport, cfg: &ClassifyConfig) -> Verdict {
    let sa = fit.stderr_a();
    let n_max = fit.n_max();
    // Quadratic contribution at n_max exceeds significance_floor of the
    // linear contribution.
    let practically_significant = fit.a * n_max * n_max > cfg.significance_floor * fit.b.abs() * n_max;
    if fit.a > cfg.z_quadratic * sa && practically_significant {
        Verdict::Quadratic
    } else if fit.a.abs() <= cfg.z_linear * sa || !practically_significant {
        Verdict::Linear
    } else {
        Verdict::Inconclusive
    }
}

/// Coherent-part estimate extracted from per-basis quadratic coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoherenceEstimate {
    pub theta2: f64,
    pub theta2_stderr: f64,
    /// v_P^2 per basis, clamped to [0,1] and renormalized; absent when the
    /// verdict is linear.
    pub v2: Option<BTreeMap<String, f64>>,
    pub v2_stderr: Option<BTreeMap<String, f64>>,
    pub verdict: Verdict,
    pub per_basis: BTreeMap<String, Verdict>,
    /// Bases whose raw quadratic coefficient was negative and clamped.
    pub clamped: Vec<String>,
}

fn extract_common(
    fits: &BTreeMap<GhzBasis, FitReport>,
    fixed_zero: &[GhzBasis],
    cfg: &ClassifyConfig,
) -> Result<CoherenceEstimate> {
    let grids: Vec<&Vec<usize>> = fits.values().map(|f| &f.n_values).collect();
    if grids.windows(2).any(|w| w[0] != w[1]) {
        return Err(Error::Fit("per-basis fits must share the same n grid".into()));
    }
    let mut clamped = Vec::new();
    let mut a = BTreeMap::new();
    let mut var_a = BTreeMap::new();
    let mut per_basis = BTreeMap::new();
    for (basis, fit) in fits {
        let mut coeff = fit.a;
        if coeff < 0.0 {
            clamped.push(basis.label().to_string());
            coeff = 0.0;
        }
        a.insert(*basis, coeff);
        var_a.insert(*basis, fit.cov[0][0].max(0.0));
        per_basis.insert(basis.label().to_string(), classify_accumulation(fit, cfg));
    }
    let theta2: f64 = a.values().sum();
    let theta2_var: f64 = var_a.values().sum();
    let theta2_stderr = theta2_var.sqrt();

    let verdict = if per_basis.values().any(|v| *v == Verdict::Quadratic) && theta2 > 0.0 {
        Verdict::Quadratic
    } else if per_basis.values().all(|v| *v == Verdict::Linear) || theta2 <= 0.0 {
        Verdict::Linear
    } else {
        Verdict::Inconclusive
    };

    let (v2, v2_stderr) = if verdict == Verdict::Quadratic && theta2 > 0.0 {
        let mut v2 = BTreeMap::new();
        let mut v2_err = BTreeMap::new();
        let sum = theta2;
        let mut raw: BTreeMap<String, f64> = BTreeMap::new();
        for (basis, &ap) in &a {
            raw.insert(basis.label().to_string(), (ap / sum).clamp(0.0, 1.0));
        }
        for basis in fixed_zero {
            raw.insert(basis.label().to_string(), 0.0);
        }
        let total: f64 = raw.values().sum();
        for (label, val) in &raw {
            v2.insert(label.clone(), if total > 0.0 { val / total } else { 0.0 });
        }
        // First-order propagation for v_P^2 = a_P / sum_Q a_Q.
        for (basis, &ap) in &a {
            let mut var = 0.0;
            for (other, &vq) in &var_a {
                let deriv = if other == basis {
                    (sum - ap) / (sum * sum)
                } else {
                    -ap / (sum * sum)
                };
                var += deriv * deriv * vq;
            }
            v2_err.insert(basis.label().to_string(), var.sqrt());
        }
        for basis in fixed_zero {
            v2_err.insert(basis.label().to_string(), 0.0);
        }
        (Some(v2), Some(v2_err))
    } else {
        (None, None)
    };

    Ok(CoherenceEstimate {
        theta2,
        theta2_stderr,
        v2,
        v2_stderr,
        verdict,
        per_basis,
        clamped,
    })
}

/// Protocol-1 extraction: theta^2 = a_X + a_Y + a_Z, v_P^2 = a_P / theta^2.
pub fn extract_channel_params(
    fits: &BTreeMap<GhzBasis, FitReport>,
    cfg: &ClassifyConfig,
) -> Result<CoherenceEstimate> {
    for basis in GhzBasis::ALL {
        if !fits.contains_key(&basis) {
            return Err(Error::Fit(format!("missing fit for basis {}", basis.label())));
        }
    }
    extract_common(fits, &[], cfg)
}

/// Protocol-3 extraction: fits for X and Y only, v_Z fixed to 0.
pub fn extract_measurement_params(
    fits: &BTreeMap<GhzBasis, FitReport>,
    cfg: &ClassifyConfig,
) -> Result<CoherenceEstimate> {
    if !fits.contains_key(&GhzBasis::X) || !fits.contains_key(&GhzBasis::Y) {
        return Err(Error::Fit("measurement extraction needs X and Y fits".into()));
    }
    if fits.contains_key(&GhzBasis::Z) {
        return Err(Error::Fit("measurement extraction takes no Z fit".into()));
    }
    extract_common(fits, &[GhzBasis::Z], cfg)
}

/// The six probabilities measured by the state-preparation protocol.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PrepProbabilities {
    pub p0_twirled: f64,
    pub p0: f64,
    pub pn_twirled_x: f64,
    pub pn_x: f64,
    pub pn_twirled_y: f64,
    pub pn_y: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PrepEstimate {
    pub theta_h_x: f64,
    pub theta_h_y: f64,
    pub theta: f64,
    /// Normalized (h_X, h_Y); None when theta is below the noise floor.
    pub h: Option<[f64; 2]>,
}

/// State-preparation extraction from the six probabilities.
///
/// The twirled-minus-plain probability difference grows as
/// sin(2 theta h_P) sin(2 n phi) / 2 = 2 n phi theta h_P + O((n phi)^3), so
/// the estimate divides by 2 n phi. (The small-angle expansion quoted with
/// the protocol omits the factor 2; exact single-qubit simulation pins it.)
pub fn extract_prep_params(p: &PrepProbabilities, n: usize, phi: f64) -> Result<PrepEstimate> {
    let nphi = n as f64 * phi;
    if nphi >= 1.0 {
        return Err(Error::Validation(format!(
            "n*phi = {nphi} must stay below 1 for the small-angle extraction"
        )));
    }
    if nphi <= 0.0 {
        return Err(Error::Validation("n*phi must be positive".into()));
    }
    let base = p.p0_twirled - p.p0;
    let theta_h_x = ((p.pn_twirled_x - p.pn_x) - base) / (2.0 * nphi);
    let theta_h_y = ((p.pn_twirled_y - p.pn_y) - base) / (2.0 * nphi);
    let theta = (theta_h_x * theta_h_x + theta_h_y * theta_h_y).sqrt();
    let h = if theta > 1e-9 {
        Some([theta_h_x / theta, theta_h_y / theta])
    } else {
        None
    };
    Ok(PrepEstimate { theta_h_x, theta_h_y, theta, h })
}
