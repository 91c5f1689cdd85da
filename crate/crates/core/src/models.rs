//! Spatial regression models: SLX, SAR, SEM, and SDM, plus the plain OLS
//! baseline they nest.
//!
//! # Model families
//!
//! With y the response, X the design (intercept plus regressors), and W a
//! row-standardized weights matrix:
//!
//! * **OLS**  y = Xβ + ε — no spatial terms; the restricted baseline.
//! * **SLX**  y = Xβ + WXγ + ε — spatially lagged regressors; estimated by
//!   least squares on the augmented design `[X | WX]`.
//! * **SAR**  y = ρWy + Xβ + ε — spatially lagged response ("spatial lag
//!   model"); ρ is the average influence of neighboring responses.
//! * **SEM**  y = Xβ + u, u = λWu + ε — spatially autoregressive error;
//!   equivalently y = Xβ + (I−λW)⁻¹ε.
//! * **SDM**  y = ρWy + Xβ + WXγ + ε — SAR and SLX combined (spatial
//!   Durbin model); same machinery as SAR on the augmented design.
//!
//! # Estimation
//!
//! SAR/SDM/SEM are estimated by maximum likelihood with the nuisance
//! parameters concentrated out. For SAR (and SDM), regress y and Wy on X
//! once to get residual vectors e_O and e_L; then
//!
//! ```text
//! σ̂²(ρ) = ‖e_O − ρ·e_L‖²/N
//! LL(ρ)  = −(N/2)·[ln(2π·σ̂²(ρ)) + 1] + ln|I − ρW|
//! ```
//!
//! is maximized over the admissible interval (−0.999, 0.999). For SEM the
//! candidate λ filters both sides — y* = (I−λW)y, X* = (I−λW)X — and the
//! same shape of profile likelihood applies to the filtered regression.
//!
//! The log-determinant is evaluated by a fresh LU factorization per
//! candidate value (robust to the asymmetry of row-standardized W, and
//! cheap at the scales this crate targets). The optimizer is deterministic:
//! a 40-point coarse grid, ties broken toward the smaller |ρ| (shrinking
//! toward the no-autocorrelation null), then golden-section refinement of
//! the bracketing interval to |Δρ| < 1e−7. An estimate within 1e−3 of the
//! interval edge is reported as a boundary-solution error rather than a
//! fit, since it nearly always signals misspecification.
//!
//! Coefficient covariance uses the usual least-squares/GLS expression at
//! the optimum with the N−p residual variance; the variance of ρ̂ (or λ̂)
//! comes from the negative inverse of a central-difference Hessian of the
//! profile log-likelihood (step 1e−5). `sigma2` and `loglik` use the ML
//! (divide-by-N) variance so that likelihood-ratio comparisons are exact.
//!
//! # Marginal effects
//!
//! The derivative of y with respect to regressor k is an N×N matrix:
//!
//! * SLX: βₖ·I + γₖ·W
//! * SAR: βₖ·(I − ρ̂W)⁻¹
//! * SEM (and OLS): βₖ·I — exactly as in ordinary regression
//! * SDM: (I − ρ̂W)⁻¹·(βₖ·I + γₖ·W)
//!
//! summarized as direct (mean diagonal), total (mean row sum), and
//! indirect (total − direct) effects. These matrices are verified against
//! central finite differences of each model's reduced form in the tests.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::autocorr::{self, Alternative, MoranReport};
use crate::error::{Result, SpatialError};
use crate::geometry::PointSet;
use crate::linalg::{ln_det_i_minus_rho_w, Lu, QrFactor, RankDeficient};
use crate::weights::SpatialWeights;

/// Admissible open interval for ρ and λ is (−RHO_BOUND, RHO_BOUND); the
/// largest eigenvalue of a row-standardized W with at least one full row is
/// 1, and the 1e−3 margin keeps the log-determinant well defined.
pub const RHO_BOUND: f64 = 0.999;
/// Estimates beyond this magnitude are treated as boundary solutions.
pub const BOUNDARY_LIMIT: f64 = 0.998;
/// Number of coarse grid points scanned before golden-section refinement.
pub const GRID_SIZE: usize = 40;
/// Golden-section termination width for ρ̂ / λ̂.
pub const OPTIMIZER_TOL: f64 = 1e-7;
/// Central-difference step for the profile-likelihood Hessian.
pub const HESSIAN_STEP: f64 = 1e-5;
/// Nominal level used for the pass flags in [`ResidualDiagnostics`].
pub const DIAGNOSTIC_ALPHA: f64 = 0.05;

// ---------------------------------------------------------------------------
// Specifications and fit results
// ---------------------------------------------------------------------------

/// Model family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelFamily {
    /// Ordinary least squares — the non-spatial baseline the others nest.
    Ols,
    Slx,
    Sar,
    Sem,
    Sdm,
}

impl ModelFamily {
    pub fn token(self) -> &'static str {
        match self {
            ModelFamily::Ols => "ols",
            ModelFamily::Slx => "slx",
            ModelFamily::Sar => "sar",
            ModelFamily::Sem => "sem",
            ModelFamily::Sdm => "sdm",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ols" => Some(ModelFamily::Ols),
            "slx" => Some(ModelFamily::Slx),
            "sar" => Some(ModelFamily::Sar),
            "sem" => Some(ModelFamily::Sem),
            "sdm" => Some(ModelFamily::Sdm),
            _ => None,
        }
    }

    /// Does the design matrix carry spatially lagged regressors WX?
    pub fn has_lagged_regressors(self) -> bool {
        matches!(self, ModelFamily::Slx | ModelFamily::Sdm)
    }

    /// Does the model carry an autoregressive parameter (ρ or λ)?
    pub fn has_spatial_parameter(self) -> bool {
        matches!(self, ModelFamily::Sar | ModelFamily::Sem | ModelFamily::Sdm)
    }
}

impl std::fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// What to estimate: family, response, regressors, intercept.
///
/// The weights matrix is passed to the fit functions alongside the data
/// rather than stored here; for SAR/SEM/SDM it must be row-standardized.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub family: ModelFamily,
    pub response: String,
    pub regressors: Vec<String>,
    pub intercept: bool,
}

impl ModelSpec {
    /// Validate the structural invariants: at least one regressor, no
    /// duplicates, response not among the regressors.
    pub fn new(
        family: ModelFamily,
        response: impl Into<String>,
        regressors: Vec<String>,
        intercept: bool,
    ) -> Result<Self> {
        let response = response.into();
        if regressors.is_empty() {
            return Err(SpatialError::InvalidModelSpec(
                "at least one regressor is required".into(),
            ));
        }
        if regressors.iter().any(|r| *r == response) {
            return Err(SpatialError::InvalidModelSpec(format!(
                "response {response:?} also appears among the regressors"
            )));
        }
        for (k, r) in regressors.iter().enumerate() {
            if regressors[..k].contains(r) {
                return Err(SpatialError::InvalidModelSpec(format!(
                    "regressor {r:?} listed twice"
                )));
            }
        }
        Ok(ModelSpec {
            family,
            response,
            regressors,
            intercept,
        })
    }
}

/// One diagnostic check: a statistic with an optional p-value and pass flag
/// (None when the check does not apply or could not be computed).
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticCheck {
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub pass: Option<bool>,
}

/// Residual validity checks: mean zero, homoscedasticity, and independence
/// (no residual spatial autocorrelation). Pass flags use
/// [`DIAGNOSTIC_ALPHA`] where a p-value exists.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualDiagnostics {
    /// |mean(e)| / sd(e); pass requires < 1e−8 and is only judged for
    /// models with an intercept (the property is exact there).
    pub mean_zero: DiagnosticCheck,
    /// Auxiliary regression of e² on [1, ŷ, ŷ²]; N·R² against χ²(2).
    pub homoscedastic: DiagnosticCheck,
    /// Two-sided Moran z-test on the residuals (for SEM, on the spatially
    /// filtered residuals, which the model asserts are independent).
    pub residual_moran: Option<MoranReport>,
    pub residual_moran_pass: Option<bool>,
}

/// A fitted model.
#[derive(Debug, Clone, Serialize)]
pub struct ModelFit {
    pub family: ModelFamily,
    pub response: String,
    /// Design-order coefficient names: intercept (when present), the
    /// regressors, then any spatial lags named `W*<regressor>`.
    pub coef_names: Vec<String>,
    /// Coefficients in `coef_names` order (β, then γ when present).
    #[serde(serialize_with = "serialize_array1")]
    pub coefficients: Array1<f64>,
    /// Number of non-lag design columns (intercept + regressors); the
    /// remaining columns, if any, are the γ block.
    pub k_base: usize,
    /// Spatial-lag coefficient ρ̂ (SAR/SDM).
    pub rho: Option<f64>,
    /// Error-autoregression coefficient λ̂ (SEM).
    pub lambda: Option<f64>,
    /// Var(ρ̂) from the profile-likelihood Hessian; None for fixed-ρ fits.
    pub rho_variance: Option<f64>,
    /// Var(λ̂) from the profile-likelihood Hessian; None for fixed-λ fits.
    pub lambda_variance: Option<f64>,
    /// Maximum-likelihood error variance (divisor N, consistent with
    /// `loglik`).
    pub sigma2: f64,
    pub loglik: f64,
    /// Residuals ε̂; for SEM these are the filtered residuals
    /// (I−λ̂W)y − (I−λ̂W)Xβ̂.
    #[serde(serialize_with = "serialize_array1")]
    pub residuals: Array1<f64>,
    /// Fitted values paired with `residuals` (fitted + residual = the
    /// response on the scale the model was estimated on; for SEM that is
    /// the filtered scale).
    #[serde(serialize_with = "serialize_array1")]
    pub fitted: Array1<f64>,
    /// Coefficient covariance, σ̂²·(XᵀX)⁻¹ with the N−p variance, over the
    /// full coefficient vector.
    #[serde(skip)]
    pub vcov: Array2<f64>,
    pub diagnostics: ResidualDiagnostics,
    pub n: usize,
}

fn serialize_array1<S: serde::Serializer>(
    a: &Array1<f64>,
    s: S,
) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(a.iter())
}

impl ModelFit {
    /// β block (intercept + regressors), in design order.
    pub fn beta(&self) -> ArrayView1<'_, f64> {
        self.coefficients.slice(ndarray::s![..self.k_base])
    }

    /// γ block (coefficients on WX), present for SLX/SDM.
    pub fn gamma(&self) -> Option<ArrayView1<'_, f64>> {
        if self.coefficients.len() > self.k_base {
            Some(self.coefficients.slice(ndarray::s![self.k_base..]))
        } else {
            None
        }
    }

    /// Standard error of coefficient j (design order).
    pub fn coef_se(&self, j: usize) -> f64 {
        self.vcov[[j, j]].sqrt()
    }

    /// Total parameter count (coefficients, spatial parameters, σ²) used
    /// for likelihood-ratio degrees of freedom.
    pub fn n_params(&self) -> usize {
        self.coefficients.len()
            + usize::from(self.rho.is_some())
            + usize::from(self.lambda.is_some())
            + 1
    }
}

// ---------------------------------------------------------------------------
// Design-matrix assembly
// ---------------------------------------------------------------------------

struct Design {
    y: Array1<f64>,
    x: Array2<f64>,
    names: Vec<String>,
    k_base: usize,
}

/// Assemble the design matrix for a spec: [1 | X] or [1 | X | WX].
fn build_design(spec: &ModelSpec, data: &PointSet, w: &SpatialWeights) -> Result<Design> {
    let n = data.n();
    if w.n() != n {
        return Err(SpatialError::DimensionMismatch {
            context: "weights order vs observation count".into(),
            expected: n,
            actual: w.n(),
        });
    }
    if spec.family.has_spatial_parameter() && !w.standardized() {
        return Err(SpatialError::InvalidModelSpec(format!(
            "{} requires a row-standardized weights matrix",
            spec.family
        )));
    }
    let y = data.variable(&spec.response)?.clone();

    let k = spec.regressors.len();
    let k_base = k + usize::from(spec.intercept);
    let p = if spec.family.has_lagged_regressors() {
        k_base + k
    } else {
        k_base
    };
    if n <= p {
        return Err(SpatialError::TooFewObservations { n, min: p + 1 });
    }

    let mut x = Array2::<f64>::zeros((n, p));
    let mut names = Vec::with_capacity(p);
    let mut col = 0;
    if spec.intercept {
        x.column_mut(col).fill(1.0);
        names.push("(intercept)".to_string());
        col += 1;
    }
    for name in &spec.regressors {
        let v = data.variable(name)?;
        x.column_mut(col).assign(v);
        names.push(name.clone());
        col += 1;
    }
    if spec.family.has_lagged_regressors() {
        for name in &spec.regressors {
            let v = data.variable(name)?;
            let lag = w.values().dot(v);
            x.column_mut(col).assign(&lag);
            names.push(format!("W*{name}"));
            col += 1;
        }
    }
    Ok(Design {
        y,
        x,
        names,
        k_base,
    })
}

fn qr_or_collinearity(x: &Array2<f64>, names: &[String]) -> Result<QrFactor> {
    QrFactor::factor(&x.view()).map_err(|RankDeficient(cols)| SpatialError::Collinearity {
        columns: cols.iter().map(|&c| names[c].clone()).collect(),
    })
}

/// Gaussian log-likelihood at the ML variance: −(N/2)·[ln(2πσ²) + 1].
fn gaussian_loglik(n: usize, sigma2: f64) -> f64 {
    let nf = n as f64;
    -(nf / 2.0) * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0)
}

/// A residual sum of squares at rounding level relative to the response's
/// own spread means the model interpolates the data; every variance-based
/// quantity downstream would be garbage, so refuse the fit.
fn check_residual_scale(rss: f64, response: &Array1<f64>) -> Result<()> {
    let n = response.len() as f64;
    let mean = response.sum() / n;
    let tss: f64 = response.iter().map(|v| (v - mean) * (v - mean)).sum();
    if rss <= 1e-24 * tss {
        return Err(SpatialError::SingularSystem(
            "residual variance is numerically zero; the model interpolates the data".into(),
        ));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Residual diagnostics
// ---------------------------------------------------------------------------

fn diagnostics_from_parts(
    residuals: &Array1<f64>,
    fitted: &Array1<f64>,
    has_intercept: bool,
    w: &SpatialWeights,
) -> ResidualDiagnostics {
    let n = residuals.len();
    let nf = n as f64;

    // Mean-zero: |mean| relative to the residual standard deviation.
    let mean = residuals.sum() / nf;
    let var: f64 = residuals.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (nf - 1.0);
    let sd = var.sqrt();
    let mean_zero = if sd > 0.0 {
        let stat = mean.abs() / sd;
        DiagnosticCheck {
            statistic: Some(stat),
            p_value: None,
            pass: has_intercept.then_some(stat < 1e-8),
        }
    } else {
        DiagnosticCheck {
            statistic: None,
            p_value: None,
            pass: None,
        }
    };

    // Homoscedasticity: squared residuals on [1, ŷ, ŷ²]; N·R² ~ χ²(2).
    let e2 = residuals.mapv(|e| e * e);
    let mut aux = Array2::<f64>::zeros((n, 3));
    aux.column_mut(0).fill(1.0);
    aux.column_mut(1).assign(fitted);
    aux.column_mut(2).assign(&fitted.mapv(|v| v * v));
    let homoscedastic = match QrFactor::factor(&aux.view()) {
        Ok(qr) => {
            let b = qr.solve(&e2.view());
            let fit = aux.dot(&b);
            let e2_mean = e2.sum() / nf;
            let tss: f64 = e2.iter().map(|v| (v - e2_mean) * (v - e2_mean)).sum();
            let rss: f64 = e2
                .iter()
                .zip(fit.iter())
                .map(|(v, f)| (v - f) * (v - f))
                .sum();
            if tss > 0.0 {
                let r2 = 1.0 - rss / tss;
                let stat = (nf * r2).max(0.0);
                let chi2 = ChiSquared::new(2.0).expect("chi-square(2)");
                let p = chi2.sf(stat);
                DiagnosticCheck {
                    statistic: Some(stat),
                    p_value: Some(p),
                    pass: Some(p >= DIAGNOSTIC_ALPHA),
                }
            } else {
                DiagnosticCheck {
                    statistic: None,
                    p_value: None,
                    pass: None,
                }
            }
        }
        Err(_) => DiagnosticCheck {
            statistic: None,
            p_value: None,
            pass: None,
        },
    };

    // Independence: Moran z-test on the residuals.
    let (residual_moran, residual_moran_pass) =
        match autocorr::moran_test(&residuals.view(), w, Alternative::TwoSided) {
            Ok(report) => {
                let pass = report.p_value >= DIAGNOSTIC_ALPHA;
                (Some(report), Some(pass))
            }
            Err(_) => (None, None),
        };

    ResidualDiagnostics {
        mean_zero,
        homoscedastic,
        residual_moran,
        residual_moran_pass,
    }
}

/// Re-derive the residual diagnostics of a fit (the same values the fit
/// itself carries; exposed so callers can run the checks against a
/// different weights matrix than the one used in estimation).
pub fn residual_diagnostics(fit: &ModelFit, w: &SpatialWeights) -> ResidualDiagnostics {
    let has_intercept = fit.coef_names.first().map(|n| n == "(intercept)").unwrap_or(false);
    diagnostics_from_parts(&fit.residuals, &fit.fitted, has_intercept, w)
}

// ---------------------------------------------------------------------------
// Least-squares families: OLS and SLX
// ---------------------------------------------------------------------------

fn fit_least_squares(spec: &ModelSpec, data: &PointSet, w: &SpatialWeights) -> Result<ModelFit> {
    let design = build_design(spec, data, w)?;
    let (n, p) = (design.y.len(), design.x.ncols());
    let qr = qr_or_collinearity(&design.x, &design.names)?;
    let coefficients = qr.solve(&design.y.view());
    let fitted = design.x.dot(&coefficients);
    let residuals = &design.y - &fitted;
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    check_residual_scale(rss, &design.y)?;
    let sigma2 = rss / n as f64;
    let loglik = gaussian_loglik(n, sigma2);
    let mut vcov = qr.xtx_inverse();
    let s2_unbiased = rss / (n - p) as f64;
    vcov.mapv_inplace(|v| v * s2_unbiased);
    let diagnostics = diagnostics_from_parts(&residuals, &fitted, spec.intercept, w);
    Ok(ModelFit {
        family: spec.family,
        response: spec.response.clone(),
        coef_names: design.names,
        coefficients,
        k_base: design.k_base,
        rho: None,
        lambda: None,
        rho_variance: None,
        lambda_variance: None,
        sigma2,
        loglik,
        residuals,
        fitted,
        vcov,
        diagnostics,
        n,
    })
}

/// Ordinary least squares (no spatial terms), the baseline the spatial
/// families are tested against.
pub fn fit_ols(spec: &ModelSpec, data: &PointSet, w: &SpatialWeights) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Ols)?;
    fit_least_squares(spec, data, w)
}

/// SLX: least squares on the design augmented with spatially lagged
/// regressors. A zero weights matrix makes every lag column identically
/// zero and is rejected as collinearity naming those columns.
pub fn fit_slx(spec: &ModelSpec, data: &PointSet, w: &SpatialWeights) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Slx)?;
    fit_least_squares(spec, data, w)
}

fn expect_family(spec: &ModelSpec, family: ModelFamily) -> Result<()> {
    if spec.family != family {
        return Err(SpatialError::InvalidModelSpec(format!(
            "this fit function handles {family}, but the spec says {}",
            spec.family
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Profile-likelihood optimizer (shared by SAR/SDM and SEM)
// ---------------------------------------------------------------------------

/// Log-determinants of I − ρW precomputed on the coarse grid, so repeated
/// fits against the same weights matrix (simulation experiments) skip the
/// grid-stage factorizations.
#[derive(Debug, Clone)]
pub struct GridLnDet {
    points: Vec<f64>,
    ln_dets: Vec<f64>,
}

impl GridLnDet {
    /// The coarse grid: GRID_SIZE points evenly spanning the admissible
    /// interval, endpoints included.
    pub fn grid_points() -> Vec<f64> {
        (0..GRID_SIZE)
            .map(|k| -RHO_BOUND + 2.0 * RHO_BOUND * k as f64 / (GRID_SIZE - 1) as f64)
            .collect()
    }

    /// Factor I − ρW at every grid point once.
    pub fn precompute(w: &SpatialWeights) -> Result<Self> {
        let points = Self::grid_points();
        let ln_dets = points
            .iter()
            .map(|&r| ln_det_i_minus_rho_w(&w.values().view(), r))
            .collect::<Result<Vec<f64>>>()?;
        Ok(GridLnDet { points, ln_dets })
    }
}

/// Deterministic scalar maximization of a profile log-likelihood over the
/// admissible interval: coarse grid (ties toward smaller |ρ|), then
/// golden-section refinement of the bracketing interval.
///
/// The objective receives `(candidate, cached_ln_det)`; the cached value is
/// present only for coarse-grid candidates when a [`GridLnDet`] was
/// supplied, letting simulation loops skip those factorizations.
fn maximize_profile<F: FnMut(f64, Option<f64>) -> Result<f64>>(
    mut ll: F,
    grid_cache: Option<&GridLnDet>,
    parameter: &str,
) -> Result<f64> {
    let points = match grid_cache {
        Some(cache) => cache.points.clone(),
        None => GridLnDet::grid_points(),
    };

    let mut best_k = 0usize;
    let mut best_ll = f64::NEG_INFINITY;
    for (k, &r) in points.iter().enumerate() {
        let cached = grid_cache.map(|c| c.ln_dets[k]);
        let v = ll(r, cached)?;
        if v > best_ll || (v == best_ll && r.abs() < points[best_k].abs()) {
            best_ll = v;
            best_k = k;
        }
    }

    let mut a = points[best_k.saturating_sub(1)];
    let mut b = points[(best_k + 1).min(points.len() - 1)];
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = ll(c, None)?;
    let mut fd = ll(d, None)?;
    let mut guard = 0;
    while (b - a).abs() > OPTIMIZER_TOL {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = ll(c, None)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = ll(d, None)?;
        }
        guard += 1;
        if guard > 200 {
            break; // geometric shrinkage makes this unreachable; belt and braces
        }
    }
    let estimate = 0.5 * (a + b);
    if estimate.abs() > BOUNDARY_LIMIT {
        return Err(SpatialError::BoundarySolution {
            parameter: parameter.into(),
            value: estimate,
        });
    }
    Ok(estimate)
}

/// Variance of the spatial parameter from the profile-likelihood curvature:
/// −1 / LL″ by central differences.
fn profile_variance<F: FnMut(f64) -> Result<f64>>(
    mut ll: F,
    at: f64,
    parameter: &str,
) -> Result<f64> {
    let h = HESSIAN_STEP;
    let l0 = ll(at)?;
    let lp = ll(at + h)?;
    let lm = ll(at - h)?;
    let curvature = (lp - 2.0 * l0 + lm) / (h * h);
    if curvature >= 0.0 {
        return Err(SpatialError::IllConditionedInformation {
            parameter: parameter.into(),
        });
    }
    Ok(-1.0 / curvature)
}

/// LL(ρ) for SAR/SDM given the three concentration scalars. Returns −∞ for
/// a non-positive concentrated variance so the optimizer just avoids it.
/// `cached_ln_det` substitutes for the LU factorization when supplied.
fn sar_profile_ll(
    rho: f64,
    n: usize,
    eo2: f64,
    eol: f64,
    el2: f64,
    w: &SpatialWeights,
    cached_ln_det: Option<f64>,
) -> Result<f64> {
    let sigma2 = (eo2 - 2.0 * rho * eol + rho * rho * el2) / n as f64;
    if sigma2 <= 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    let ln_det = match cached_ln_det {
        Some(v) => v,
        None => ln_det_i_minus_rho_w(&w.values().view(), rho)?,
    };
    Ok(gaussian_loglik(n, sigma2) + ln_det)
}

// ---------------------------------------------------------------------------
// SAR and SDM
// ---------------------------------------------------------------------------

/// SAR estimation core, shared by SDM (whose design carries WX columns).
fn fit_sar_core(
    spec: &ModelSpec,
    data: &PointSet,
    w: &SpatialWeights,
    fixed_rho: Option<f64>,
    grid: Option<&GridLnDet>,
) -> Result<ModelFit> {
    let design = build_design(spec, data, w)?;
    let (n, p) = (design.y.len(), design.x.ncols());
    let qr = qr_or_collinearity(&design.x, &design.names)?;

    let wy = w.values().dot(&design.y);
    let beta_o = qr.solve(&design.y.view());
    let beta_l = qr.solve(&wy.view());
    let e_o = &design.y - &design.x.dot(&beta_o);
    let e_l = &wy - &design.x.dot(&beta_l);
    let eo2 = e_o.dot(&e_o);
    let eol = e_o.dot(&e_l);
    let el2 = e_l.dot(&e_l);

    let (rho_hat, rho_variance) = match fixed_rho {
        Some(r) => {
            if r.abs() >= RHO_BOUND {
                return Err(SpatialError::InvalidArgument(format!(
                    "fixed rho must lie in (−{RHO_BOUND}, {RHO_BOUND}), got {r}"
                )));
            }
            (r, None)
        }
        None => {
            let rho_hat = maximize_profile(
                |rho, ld| sar_profile_ll(rho, n, eo2, eol, el2, w, ld),
                grid,
                "rho",
            )?;
            let var = profile_variance(
                |r| sar_profile_ll(r, n, eo2, eol, el2, w, None),
                rho_hat,
                "rho",
            )?;
            (rho_hat, Some(var))
        }
    };

    let coefficients = &beta_o - &beta_l.mapv(|v| rho_hat * v);
    let residuals = &e_o - &e_l.mapv(|v| rho_hat * v);
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    check_residual_scale(rss, &design.y)?;
    let sigma2 = rss / n as f64;
    let loglik = gaussian_loglik(n, sigma2) + ln_det_i_minus_rho_w(&w.values().view(), rho_hat)?;
    let fitted = &design.y - &residuals;
    let mut vcov = qr.xtx_inverse();
    let s2_unbiased = rss / (n - p) as f64;
    vcov.mapv_inplace(|v| v * s2_unbiased);
    let diagnostics = diagnostics_from_parts(&residuals, &fitted, spec.intercept, w);

    Ok(ModelFit {
        family: spec.family,
        response: spec.response.clone(),
        coef_names: design.names,
        coefficients,
        k_base: design.k_base,
        rho: Some(rho_hat),
        lambda: None,
        rho_variance,
        lambda_variance: None,
        sigma2,
        loglik,
        residuals,
        fitted,
        vcov,
        diagnostics,
        n,
    })
}

/// SAR (spatial lag model) by concentrated maximum likelihood.
pub fn fit_sar(spec: &ModelSpec, data: &PointSet, w: &SpatialWeights) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Sar)?;
    fit_sar_core(spec, data, w, None, None)
}

/// SAR with ρ held at a fixed value (no optimization, no ρ variance);
/// at ρ = 0 this reproduces OLS exactly.
pub fn fit_sar_fixed(
    spec: &ModelSpec,
    data: &PointSet,
    w: &SpatialWeights,
    rho: f64,
) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Sar)?;
    fit_sar_core(spec, data, w, Some(rho), None)
}

/// SAR with precomputed grid log-determinants (simulation loops re-use the
/// same W across many fits).
pub fn fit_sar_with_grid(
    spec: &ModelSpec,
    data: &PointSet,
    w: &SpatialWeights,
    grid: &GridLnDet,
) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Sar)?;
    fit_sar_core(spec, data, w, None, Some(grid))
}

/// SDM: identical machinery to SAR with the design augmented by WX.
pub fn fit_sdm(spec: &ModelSpec, data: &PointSet, w: &SpatialWeights) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Sdm)?;
    fit_sar_core(spec, data, w, None, None)
}

/// SDM with ρ held fixed; at ρ = 0 this reproduces the SLX fit exactly.
pub fn fit_sdm_fixed(
    spec: &ModelSpec,
    data: &PointSet,
    w: &SpatialWeights,
    rho: f64,
) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Sdm)?;
    fit_sar_core(spec, data, w, Some(rho), None)
}

/// SDM with precomputed grid log-determinants.
pub fn fit_sdm_with_grid(
    spec: &ModelSpec,
    data: &PointSet,
    w: &SpatialWeights,
    grid: &GridLnDet,
) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Sdm)?;
    fit_sar_core(spec, data, w, None, Some(grid))
}

// ---------------------------------------------------------------------------
// SEM
// ---------------------------------------------------------------------------

fn fit_sem_core(
    spec: &ModelSpec,
    data: &PointSet,
    w: &SpatialWeights,
    fixed_lambda: Option<f64>,
    grid: Option<&GridLnDet>,
) -> Result<ModelFit> {
    let design = build_design(spec, data, w)?;
    let (n, p) = (design.y.len(), design.x.ncols());
    // Spatial lags are computed once; each candidate λ only recombines them.
    let wy = w.values().dot(&design.y);
    let wx = w.values().dot(&design.x);

    // Filtered regression at a candidate λ: returns (loglik, β, residuals, qr).
    let filtered_fit = |lambda: f64| -> Result<(f64, Array1<f64>, Array1<f64>, QrFactor)> {
        let ys = &design.y - &wy.mapv(|v| lambda * v);
        let xs = &design.x - &wx.mapv(|v| lambda * v);
        let qr = qr_or_collinearity(&xs, &design.names)?;
        let b = qr.solve(&ys.view());
        let e = &ys - &xs.dot(&b);
        let sigma2 = e.dot(&e) / n as f64;
        if sigma2 <= 0.0 {
            return Ok((f64::NEG_INFINITY, b, e, qr));
        }
        let ll = gaussian_loglik(n, sigma2) + ln_det_i_minus_rho_w(&w.values().view(), lambda)?;
        Ok((ll, b, e, qr))
    };

    let (lambda_hat, lambda_variance) = match fixed_lambda {
        Some(l) => {
            if l.abs() >= RHO_BOUND {
                return Err(SpatialError::InvalidArgument(format!(
                    "fixed lambda must lie in (−{RHO_BOUND}, {RHO_BOUND}), got {l}"
                )));
            }
            (l, None)
        }
        None => {
            let lambda_hat = maximize_profile(
                |l, ld| {
                    // The filtered sum of squares is what varies with λ; a
                    // cached log-determinant replaces only the LU step.
                    let ys = &design.y - &wy.mapv(|v| l * v);
                    let xs = &design.x - &wx.mapv(|v| l * v);
                    let qr = qr_or_collinearity(&xs, &design.names)?;
                    let b = qr.solve(&ys.view());
                    let e = &ys - &xs.dot(&b);
                    let sigma2 = e.dot(&e) / n as f64;
                    if sigma2 <= 0.0 {
                        return Ok(f64::NEG_INFINITY);
                    }
                    let ln_det = match ld {
                        Some(v) => v,
                        None => ln_det_i_minus_rho_w(&w.values().view(), l)?,
                    };
                    Ok(gaussian_loglik(n, sigma2) + ln_det)
                },
                grid,
                "lambda",
            )?;
            let var = profile_variance(
                |l| filtered_fit(l).map(|(v, _, _, _)| v),
                lambda_hat,
                "lambda",
            )?;
            (lambda_hat, Some(var))
        }
    };

    let (loglik, coefficients, residuals, qr) = filtered_fit(lambda_hat)?;
    // Fitted values on the filtered scale: ŷ* with ŷ* + ε̂ = y*.
    let ys = &design.y - &wy.mapv(|v| lambda_hat * v);
    let rss: f64 = residuals.iter().map(|e| e * e).sum();
    check_residual_scale(rss, &ys)?;
    if !loglik.is_finite() {
        return Err(SpatialError::SingularSystem(
            "filtered regression is degenerate at the optimum".into(),
        ));
    }
    let sigma2 = rss / n as f64;
    let fitted = &ys - &residuals;
    let mut vcov = qr.xtx_inverse();
    let s2_unbiased = rss / (n - p) as f64;
    vcov.mapv_inplace(|v| v * s2_unbiased);
    // Residual independence is asserted by the model for the *filtered*
    // residuals, so the Moran check runs on exactly those.
    let diagnostics = diagnostics_from_parts(&residuals, &fitted, spec.intercept, w);

    Ok(ModelFit {
        family: spec.family,
        response: spec.response.clone(),
        coef_names: design.names,
        coefficients,
        k_base: design.k_base,
        rho: None,
        lambda: Some(lambda_hat),
        rho_variance: None,
        lambda_variance,
        sigma2,
        loglik,
        residuals,
        fitted,
        vcov,
        diagnostics,
        n,
    })
}

/// SEM (spatial error model) by concentrated maximum likelihood over the
/// filtering parameter λ.
pub fn fit_sem(spec: &ModelSpec, data: &PointSet, w: &SpatialWeights) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Sem)?;
    fit_sem_core(spec, data, w, None, None)
}

/// SEM with λ held fixed; at λ = 0 this reproduces OLS exactly.
pub fn fit_sem_fixed(
    spec: &ModelSpec,
    data: &PointSet,
    w: &SpatialWeights,
    lambda: f64,
) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Sem)?;
    fit_sem_core(spec, data, w, Some(lambda), None)
}

/// SEM with precomputed grid log-determinants.
pub fn fit_sem_with_grid(
    spec: &ModelSpec,
    data: &PointSet,
    w: &SpatialWeights,
    grid: &GridLnDet,
) -> Result<ModelFit> {
    expect_family(spec, ModelFamily::Sem)?;
    fit_sem_core(spec, data, w, None, Some(grid))
}

/// Fit whichever family the spec names.
pub fn fit(spec: &ModelSpec, data: &PointSet, w: &SpatialWeights) -> Result<ModelFit> {
    match spec.family {
        ModelFamily::Ols => fit_ols(spec, data, w),
        ModelFamily::Slx => fit_slx(spec, data, w),
        ModelFamily::Sar => fit_sar(spec, data, w),
        ModelFamily::Sem => fit_sem(spec, data, w),
        ModelFamily::Sdm => fit_sdm(spec, data, w),
    }
}

// ---------------------------------------------------------------------------
// Marginal effects
// ---------------------------------------------------------------------------

/// Effect of one regressor: the N×N matrix ∂y/∂xₖ and its summary.
#[derive(Debug, Clone, Serialize)]
pub struct EffectMatrix {
    pub name: String,
    /// Full ∂y/∂xₖ matrix (entry (i,j) = ∂yᵢ/∂x_jₖ); omitted from JSON.
    #[serde(skip)]
    pub matrix: Array2<f64>,
    /// Mean diagonal entry — the impact of a site's own regressor.
    pub direct: f64,
    /// Mean row sum minus direct — spillover arriving from all other sites.
    pub indirect: f64,
    /// direct + indirect = mean row sum.
    pub total: f64,
}

/// Per-regressor marginal effects of a fitted model.
#[derive(Debug, Clone, Serialize)]
pub struct MarginalEffects {
    pub family: ModelFamily,
    pub effects: Vec<EffectMatrix>,
}

/// Compute the marginal-effects matrices for every regressor (intercept
/// excluded). The weights matrix must be the one the model was fitted with.
pub fn marginal_effects(fit: &ModelFit, w: &SpatialWeights) -> Result<MarginalEffects> {
    let n = fit.n;
    if w.n() != n {
        return Err(SpatialError::DimensionMismatch {
            context: "weights order vs fitted model".into(),
            expected: n,
            actual: w.n(),
        });
    }
    let has_intercept = fit.coef_names.first().map(|s| s == "(intercept)").unwrap_or(false);
    let x_start = usize::from(has_intercept);
    let k = fit.k_base - x_start;

    // (I − ρ̂W)⁻¹ via LU solve against the identity, when the family needs it.
    let inverse = match (fit.family, fit.rho) {
        (ModelFamily::Sar | ModelFamily::Sdm, Some(rho)) => {
            let mut a = w.values().mapv(|v| -rho * v);
            for i in 0..n {
                a[[i, i]] += 1.0;
            }
            let lu = Lu::factor(&a.view())?;
            let eye = Array2::<f64>::eye(n);
            Some(lu.solve_matrix(&eye.view())?)
        }
        _ => None,
    };
    // M·W for the SDM lag term, computed once.
    let inverse_w = inverse.as_ref().map(|m| m.dot(w.values()));

    let mut effects = Vec::with_capacity(k);
    for j in 0..k {
        let name = fit.coef_names[x_start + j].clone();
        let beta_j = fit.coefficients[x_start + j];
        let gamma_j = fit
            .gamma()
            .map(|g| g[j])
            .filter(|_| fit.family.has_lagged_regressors());

        let matrix = match fit.family {
            ModelFamily::Ols | ModelFamily::Sem => Array2::<f64>::eye(n) * beta_j,
            ModelFamily::Slx => {
                let mut m = w.values().mapv(|v| gamma_j.unwrap_or(0.0) * v);
                for i in 0..n {
                    m[[i, i]] += beta_j;
                }
                m
            }
            ModelFamily::Sar => inverse.as_ref().expect("inverse built above").mapv(|v| beta_j * v),
            ModelFamily::Sdm => {
                let minv = inverse.as_ref().expect("inverse built above");
                let mw = inverse_w.as_ref().expect("inverse·W built above");
                minv.mapv(|v| beta_j * v) + mw.mapv(|v| gamma_j.unwrap_or(0.0) * v)
            }
        };
        let direct = matrix.diag().sum() / n as f64;
        let total = matrix.sum_axis(Axis(1)).sum() / n as f64;
        effects.push(EffectMatrix {
            name,
            matrix,
            direct,
            indirect: total - direct,
            total,
        });
    }
    Ok(MarginalEffects {
        family: fit.family,
        effects,
    })
}

// ---------------------------------------------------------------------------
// Likelihood-ratio and Wald tests
// ---------------------------------------------------------------------------

/// Likelihood-ratio comparison of two nested fits.
#[derive(Debug, Clone, Serialize)]
pub struct LrReport {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub full_family: ModelFamily,
    pub restricted_family: ModelFamily,
}

/// Which nesting pairs `lr_test` accepts (full, restricted).
fn nested(full: ModelFamily, restricted: ModelFamily) -> bool {
    use ModelFamily::*;
    matches!(
        (full, restricted),
        (Sar, Ols) | (Sem, Ols) | (Sdm, Slx)
    ) || full == restricted
}

/// LR = 2·(LL_full − LL_restricted) against χ² with df = parameter-count
/// difference. The admissible pairs are SAR vs OLS, SEM vs OLS, SDM vs SLX
/// (each restricting the spatial parameter to zero), or two fits of the
/// same family (df = 0, p = 1).
pub fn lr_test(full: &ModelFit, restricted: &ModelFit) -> Result<LrReport> {
    if !nested(full.family, restricted.family) {
        return Err(SpatialError::InvalidComparison(format!(
            "{} is not nested in {}; admissible pairs are sar/ols, sem/ols, sdm/slx",
            restricted.family, full.family
        )));
    }
    if full.n != restricted.n
        || full.response != restricted.response
        || full.coef_names != restricted.coef_names
    {
        return Err(SpatialError::InvalidComparison(
            "the two fits do not share the same response and design".into(),
        ));
    }
    let df = full
        .n_params()
        .checked_sub(restricted.n_params())
        .ok_or_else(|| {
            SpatialError::InvalidComparison(
                "the restricted model has more parameters than the full model".into(),
            )
        })?;
    let raw = 2.0 * (full.loglik - restricted.loglik);
    // The optimizer guarantees LL_full ≥ LL_restricted only to its own
    // tolerance; a tiny negative statistic is rounding, a large one means
    // the models were not actually nested.
    if raw < -1e-6 {
        return Err(SpatialError::InvalidComparison(format!(
            "the \"full\" model has lower likelihood (LR = {raw:.3e}); the fits are not nested"
        )));
    }
    let statistic = raw.max(0.0);
    let p_value = if df == 0 {
        1.0
    } else {
        ChiSquared::new(df as f64)
            .expect("positive df")
            .sf(statistic)
    };
    Ok(LrReport {
        statistic,
        df,
        p_value,
        full_family: full.family,
        restricted_family: restricted.family,
    })
}

/// The spatial parameter a Wald test can target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WaldParameter {
    Rho,
    Lambda,
}

impl std::fmt::Display for WaldParameter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WaldParameter::Rho => "rho",
            WaldParameter::Lambda => "lambda",
        })
    }
}

/// Wald test result for ρ̂ or λ̂.
#[derive(Debug, Clone, Serialize)]
pub struct WaldReport {
    pub parameter: WaldParameter,
    pub estimate: f64,
    pub variance: f64,
    pub statistic: f64,
    pub p_value: f64,
}

/// Wald = estimate² / Var̂(estimate) against χ²(1), with the variance taken
/// from the profile-likelihood Hessian recorded at fit time.
pub fn wald_test(fit: &ModelFit, parameter: WaldParameter) -> Result<WaldReport> {
    let (estimate, variance) = match parameter {
        WaldParameter::Rho => (fit.rho, fit.rho_variance),
        WaldParameter::Lambda => (fit.lambda, fit.lambda_variance),
    };
    let estimate = estimate.ok_or_else(|| {
        SpatialError::InvalidArgument(format!(
            "the fitted {} model has no {parameter} parameter",
            fit.family
        ))
    })?;
    let variance = variance.ok_or_else(|| {
        SpatialError::InvalidArgument(format!(
            "no variance estimate for {parameter} (was the parameter held fixed?)"
        ))
    })?;
    if variance <= 0.0 {
        return Err(SpatialError::IllConditionedInformation {
            parameter: parameter.to_string(),
        });
    }
    let statistic = estimate * estimate / variance;
    let p_value = ChiSquared::new(1.0).expect("chi-square(1)").sf(statistic);
    Ok(WaldReport {
        parameter,
        estimate,
        variance,
        statistic,
        p_value,
    })
}

/// Two-sided normal p-value helper for coefficient z-scores (reporting).
pub fn coef_p_value(estimate: f64, se: f64) -> f64 {
    if se <= 0.0 {
        return f64::NAN;
    }
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    (2.0 * normal.sf((estimate / se).abs())).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_distance_matrix, Metric, Point, PointSet};
    use crate::weights::{self, WeightsSpec};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn lattice(rows: usize, cols: usize) -> PointSet {
        let mut ids = Vec::new();
        let mut coords = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                ids.push(format!("s{r}_{c}"));
                coords.push(Point::new(c as f64, r as f64));
            }
        }
        PointSet::new(ids, coords).unwrap()
    }

    /// Row-standardized rook-contiguity weights on a unit lattice.
    fn rook_weights(rows: usize, cols: usize) -> SpatialWeights {
        let pts = lattice(rows, cols);
        let d = build_distance_matrix(&pts, Metric::Euclidean);
        let raw = weights::transform(&d, &WeightsSpec::connectivity(1.0).unwrap()).unwrap();
        weights::row_standardize(&raw)
    }

    fn standard_normal(rng: &mut ChaCha20Rng, n: usize) -> Array1<f64> {
        Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
    }

    /// Solve y = (I − ρW)⁻¹ rhs directly.
    fn spatial_solve(w: &SpatialWeights, rho: f64, rhs: &Array1<f64>) -> Array1<f64> {
        let n = rhs.len();
        let mut a = w.values().mapv(|v| -rho * v);
        for i in 0..n {
            a[[i, i]] += 1.0;
        }
        Lu::factor(&a.view()).unwrap().solve(&rhs.view()).unwrap()
    }

    /// Lattice data with one regressor and a response generated by the
    /// requested family. Returns (points-with-variables, weights).
    fn synthetic(
        rows: usize,
        cols: usize,
        family: ModelFamily,
        spatial: f64,
        seed: u64,
    ) -> (PointSet, SpatialWeights) {
        let w = rook_weights(rows, cols);
        let mut pts = lattice(rows, cols);
        let n = pts.n();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let x = standard_normal(&mut rng, n);
        let eps = standard_normal(&mut rng, n).mapv(|v| 0.5 * v);
        let signal = x.mapv(|v| 1.0 + 2.0 * v);
        let y = match family {
            ModelFamily::Ols => &signal + &eps,
            ModelFamily::Slx => {
                let wx = w.values().dot(&x);
                &signal + &wx.mapv(|v| spatial * v) + &eps
            }
            ModelFamily::Sar => spatial_solve(&w, spatial, &(&signal + &eps)),
            ModelFamily::Sem => &signal + &spatial_solve(&w, spatial, &eps),
            ModelFamily::Sdm => {
                let wx = w.values().dot(&x);
                let rhs = &signal + &wx.mapv(|v| 0.8 * v) + &eps;
                spatial_solve(&w, spatial, &rhs)
            }
        };
        pts.add_variable("x1", x.to_vec()).unwrap();
        pts.add_variable("resp", y.to_vec()).unwrap();
        (pts, w)
    }

    fn spec(family: ModelFamily) -> ModelSpec {
        ModelSpec::new(family, "resp", vec!["x1".into()], true).unwrap()
    }

    #[test]
    fn model_spec_rejects_malformed_requests() {
        assert!(matches!(
            ModelSpec::new(ModelFamily::Ols, "y", vec![], true),
            Err(SpatialError::InvalidModelSpec(_))
        ));
        assert!(matches!(
            ModelSpec::new(ModelFamily::Ols, "y", vec!["y".into()], true),
            Err(SpatialError::InvalidModelSpec(_))
        ));
        assert!(matches!(
            ModelSpec::new(ModelFamily::Ols, "y", vec!["x".into(), "x".into()], true),
            Err(SpatialError::InvalidModelSpec(_))
        ));
    }

    #[test]
    fn spatial_families_require_standardized_weights() {
        let (pts, w) = synthetic(5, 5, ModelFamily::Sar, 0.4, 11);
        let raw = {
            let d = build_distance_matrix(&pts, Metric::Euclidean);
            weights::transform(&d, &WeightsSpec::connectivity(1.0).unwrap()).unwrap()
        };
        assert!(matches!(
            fit_sar(&spec(ModelFamily::Sar), &pts, &raw),
            Err(SpatialError::InvalidModelSpec(_))
        ));
        // SLX is a least-squares family and accepts raw weights.
        fit_slx(&spec(ModelFamily::Slx), &pts, &raw).unwrap();
        fit_sar(&spec(ModelFamily::Sar), &pts, &w).unwrap();
    }

    #[test]
    fn ols_matches_closed_form_simple_regression() {
        let (pts, w) = synthetic(5, 5, ModelFamily::Ols, 0.0, 7);
        let fit = fit_ols(&spec(ModelFamily::Ols), &pts, &w).unwrap();
        let x = pts.variable("x1").unwrap();
        let y = pts.variable("resp").unwrap();
        let n = x.len() as f64;
        let xm = x.sum() / n;
        let ym = y.sum() / n;
        let sxy: f64 = x.iter().zip(y.iter()).map(|(a, b)| (a - xm) * (b - ym)).sum();
        let sxx: f64 = x.iter().map(|a| (a - xm) * (a - xm)).sum();
        let slope = sxy / sxx;
        let intercept = ym - slope * xm;
        assert_abs_diff_eq!(fit.coefficients[0], intercept, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], slope, epsilon = 1e-12);
        assert_eq!(fit.coef_names, vec!["(intercept)", "x1"]);
        // ML variance uses the N divisor.
        let rss: f64 = fit.residuals.iter().map(|e| e * e).sum();
        assert_abs_diff_eq!(fit.sigma2, rss / n, epsilon = 1e-14);
    }

    #[test]
    fn interpolating_model_is_reported_as_singular() {
        let mut pts = lattice(3, 3);
        let x: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 + 2.0 * v).collect();
        pts.add_variable("x1", x).unwrap();
        pts.add_variable("resp", y).unwrap();
        let w = rook_weights(3, 3);
        let err = fit_ols(&spec(ModelFamily::Ols), &pts, &w).unwrap_err();
        assert!(matches!(err, SpatialError::SingularSystem(_)));
    }

    #[test]
    fn collinear_design_reports_column_names() {
        let (mut pts, w) = synthetic(5, 5, ModelFamily::Ols, 0.0, 3);
        let doubled: Vec<f64> = pts.variable("x1").unwrap().iter().map(|v| 2.0 * v).collect();
        pts.add_variable("x2", doubled).unwrap();
        let spec = ModelSpec::new(
            ModelFamily::Ols,
            "resp",
            vec!["x1".into(), "x2".into()],
            true,
        )
        .unwrap();
        match fit_ols(&spec, &pts, &w) {
            Err(SpatialError::Collinearity { columns }) => {
                assert!(columns.contains(&"x2".to_string()), "got {columns:?}");
            }
            other => panic!("expected collinearity, got {other:?}"),
        }
    }

    #[test]
    fn slx_with_zero_weights_names_the_lag_columns() {
        let (pts, _) = synthetic(5, 5, ModelFamily::Ols, 0.0, 5);
        let d = build_distance_matrix(&pts, Metric::Euclidean);
        // A connectivity threshold below the lattice spacing isolates
        // every site: all lag columns are identically zero.
        let raw = weights::transform(&d, &WeightsSpec::connectivity(0.5).unwrap()).unwrap();
        match fit_slx(&spec(ModelFamily::Slx), &pts, &raw) {
            Err(SpatialError::Collinearity { columns }) => {
                assert!(columns.contains(&"W*x1".to_string()), "got {columns:?}");
            }
            other => panic!("expected collinearity on the lag column, got {other:?}"),
        }
    }

    #[test]
    fn sar_fixed_at_zero_reproduces_ols() {
        let (pts, w) = synthetic(6, 6, ModelFamily::Sar, 0.5, 21);
        let ols = fit_ols(&spec(ModelFamily::Ols), &pts, &w).unwrap();
        let sar0 = fit_sar_fixed(&spec(ModelFamily::Sar), &pts, &w, 0.0).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(sar0.coefficients[j], ols.coefficients[j], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sar0.sigma2, ols.sigma2, epsilon = 1e-12);
        // ln|I − 0·W| = 0, so even the log-likelihoods coincide.
        assert_abs_diff_eq!(sar0.loglik, ols.loglik, epsilon = 1e-10);
        assert!(sar0.rho_variance.is_none());
    }

    #[test]
    fn sem_fixed_at_zero_reproduces_ols() {
        let (pts, w) = synthetic(6, 6, ModelFamily::Sem, 0.6, 22);
        let ols = fit_ols(&spec(ModelFamily::Ols), &pts, &w).unwrap();
        let sem0 = fit_sem_fixed(&spec(ModelFamily::Sem), &pts, &w, 0.0).unwrap();
        for j in 0..2 {
            assert_abs_diff_eq!(sem0.coefficients[j], ols.coefficients[j], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sem0.sigma2, ols.sigma2, epsilon = 1e-12);
        assert_abs_diff_eq!(sem0.loglik, ols.loglik, epsilon = 1e-10);
    }

    #[test]
    fn sdm_fixed_at_zero_reproduces_slx() {
        let (pts, w) = synthetic(6, 6, ModelFamily::Sdm, 0.4, 23);
        let slx = fit_slx(&spec(ModelFamily::Slx), &pts, &w).unwrap();
        let sdm0 = fit_sdm_fixed(&spec(ModelFamily::Sdm), &pts, &w, 0.0).unwrap();
        assert_eq!(sdm0.coef_names, slx.coef_names);
        for j in 0..3 {
            assert_abs_diff_eq!(sdm0.coefficients[j], slx.coefficients[j], epsilon = 1e-12);
        }
        assert_abs_diff_eq!(sdm0.loglik, slx.loglik, epsilon = 1e-10);
    }

    #[test]
    fn sar_recovers_generated_dependence() {
        let (pts, w) = synthetic(7, 7, ModelFamily::Sar, 0.5, 31);
        let fit = fit_sar(&spec(ModelFamily::Sar), &pts, &w).unwrap();
        let rho = fit.rho.unwrap();
        assert!((rho - 0.5).abs() < 0.25, "rho estimate {rho} too far from 0.5");
        assert!(fit.rho_variance.unwrap() > 0.0);
        assert!(fit.loglik.is_finite());
        // The direction of the slope survives the spatial filtering.
        assert!(fit.coefficients[1] > 1.0);
    }

    #[test]
    fn sem_recovers_generated_dependence() {
        let (pts, w) = synthetic(7, 7, ModelFamily::Sem, 0.6, 32);
        let fit = fit_sem(&spec(ModelFamily::Sem), &pts, &w).unwrap();
        let lambda = fit.lambda.unwrap();
        assert!((lambda - 0.6).abs() < 0.35, "lambda estimate {lambda} too far from 0.6");
        assert!(fit.lambda_variance.unwrap() > 0.0);
        // β is estimated without the autocorrelation contaminating it.
        assert!((fit.coefficients[1] - 2.0).abs() < 0.2);
    }

    #[test]
    fn profile_loglik_reevaluates_consistently() {
        let (pts, w) = synthetic(7, 7, ModelFamily::Sar, 0.5, 33);
        let fit = fit_sar(&spec(ModelFamily::Sar), &pts, &w).unwrap();
        let direct = gaussian_loglik(fit.n, fit.sigma2)
            + ln_det_i_minus_rho_w(&w.values().view(), fit.rho.unwrap()).unwrap();
        assert_abs_diff_eq!(direct, fit.loglik, epsilon = 1e-9);

        let (pts, w) = synthetic(7, 7, ModelFamily::Sem, 0.6, 34);
        let fit = fit_sem(&spec(ModelFamily::Sem), &pts, &w).unwrap();
        let direct = gaussian_loglik(fit.n, fit.sigma2)
            + ln_det_i_minus_rho_w(&w.values().view(), fit.lambda.unwrap()).unwrap();
        assert_abs_diff_eq!(direct, fit.loglik, epsilon = 1e-9);
    }

    #[test]
    fn nested_families_respect_likelihood_ordering() {
        let (pts, w) = synthetic(7, 7, ModelFamily::Sdm, 0.4, 35);
        let ols = fit_ols(&spec(ModelFamily::Ols), &pts, &w).unwrap();
        let slx = fit_slx(&spec(ModelFamily::Slx), &pts, &w).unwrap();
        let sar = fit_sar(&spec(ModelFamily::Sar), &pts, &w).unwrap();
        let sem = fit_sem(&spec(ModelFamily::Sem), &pts, &w).unwrap();
        let sdm = fit_sdm(&spec(ModelFamily::Sdm), &pts, &w).unwrap();
        let tol = 1e-6;
        assert!(slx.loglik >= ols.loglik - tol);
        assert!(sar.loglik >= ols.loglik - tol);
        assert!(sem.loglik >= ols.loglik - tol);
        assert!(sdm.loglik >= slx.loglik - tol);
        assert!(sdm.loglik >= sar.loglik - tol);
    }

    #[test]
    fn grid_cache_gives_identical_estimates() {
        let (pts, w) = synthetic(6, 6, ModelFamily::Sar, 0.5, 36);
        let grid = GridLnDet::precompute(&w).unwrap();
        let plain = fit_sar(&spec(ModelFamily::Sar), &pts, &w).unwrap();
        let cached = fit_sar_with_grid(&spec(ModelFamily::Sar), &pts, &w, &grid).unwrap();
        assert_eq!(plain.rho, cached.rho);
        assert_eq!(plain.coefficients, cached.coefficients);

        let (pts, w) = synthetic(6, 6, ModelFamily::Sem, 0.5, 37);
        let grid = GridLnDet::precompute(&w).unwrap();
        let plain = fit_sem(&spec(ModelFamily::Sem), &pts, &w).unwrap();
        let cached = fit_sem_with_grid(&spec(ModelFamily::Sem), &pts, &w, &grid).unwrap();
        assert_eq!(plain.lambda, cached.lambda);
    }

    #[test]
    fn near_unit_root_data_is_a_boundary_solution() {
        let w = rook_weights(7, 7);
        let mut pts = lattice(7, 7);
        let n = pts.n();
        let mut rng = ChaCha20Rng::seed_from_u64(41);
        let x = standard_normal(&mut rng, n);
        let eps = standard_normal(&mut rng, n);
        // Generated just outside the admissible interval, the response is
        // dominated by the near-unit-root mode. Without an intercept to
        // soak that mode up, the profile likelihood climbs to the edge of
        // the interval and the fit refuses to report an estimate there.
        let y = spatial_solve(&w, 0.99999, &eps);
        pts.add_variable("x1", x.to_vec()).unwrap();
        pts.add_variable("resp", y.to_vec()).unwrap();
        let no_intercept = ModelSpec::new(ModelFamily::Sar, "resp", vec!["x1".into()], false).unwrap();
        let err = fit_sar(&no_intercept, &pts, &w).unwrap_err();
        assert!(
            matches!(err, SpatialError::BoundarySolution { .. }),
            "expected boundary solution, got {err:?}"
        );
    }

    // -- marginal effects ---------------------------------------------------

    /// Finite-difference oracle: perturb regressor k at site j and push the
    /// model's reduced form through; column j of the effect matrix must
    /// match. The reduced form is linear in X, so central differences are
    /// exact to rounding.
    fn effects_vs_finite_differences(family: ModelFamily, spatial: f64, seed: u64) {
        let (pts, w) = synthetic(5, 5, family, spatial, seed);
        let n = pts.n();
        let fit = fit(&spec(family), &pts, &w).unwrap();
        let effects = marginal_effects(&fit, &w).unwrap();
        let e = &effects.effects[0];

        let beta = fit.coefficients[1];
        let gamma = fit.gamma().map(|g| g[0]);
        let rho = fit.rho;
        let x = pts.variable("x1").unwrap().clone();
        let reduced_form = |x: &Array1<f64>| -> Array1<f64> {
            // Mean response as a function of the regressor, at the fitted
            // parameters; the intercept drops out of differences.
            let mut rhs = x.mapv(|v| beta * v);
            if let Some(g) = gamma {
                rhs = rhs + w.values().dot(x).mapv(|v| g * v);
            }
            match rho {
                Some(r) => spatial_solve(&w, r, &rhs),
                None => rhs,
            }
        };

        let h = 0.5;
        let mut fd = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            let diff = (reduced_form(&xp) - reduced_form(&xm)).mapv(|v| v / (2.0 * h));
            fd.column_mut(j).assign(&diff);
        }

        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = (&e.matrix - &fd).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(
            gap <= 1e-9 * scale,
            "{family}: effect matrix deviates from finite differences by {gap:e} (scale {scale:e})"
        );
    }

    #[test]
    fn effect_matrices_match_finite_differences() {
        effects_vs_finite_differences(ModelFamily::Slx, 0.8, 51);
        effects_vs_finite_differences(ModelFamily::Sar, 0.5, 52);
        effects_vs_finite_differences(ModelFamily::Sem, 0.6, 53);
        effects_vs_finite_differences(ModelFamily::Sdm, 0.4, 54);
    }

    #[test]
    fn effect_summaries_decompose_as_documented() {
        let (pts, w) = synthetic(5, 5, ModelFamily::Slx, 0.8, 55);
        let fit = fit_slx(&spec(ModelFamily::Slx), &pts, &w).unwrap();
        let effects = marginal_effects(&fit, &w).unwrap();
        let e = &effects.effects[0];
        // W has a zero diagonal, so the direct effect is exactly β; with
        // every row summing to one, the indirect effect is exactly γ.
        assert_abs_diff_eq!(e.direct, fit.coefficients[1], epsilon = 1e-12);
        assert_abs_diff_eq!(e.indirect, fit.gamma().unwrap()[0], epsilon = 1e-12);
        assert_abs_diff_eq!(e.total, e.direct + e.indirect, epsilon = 1e-12);

        let (pts, w) = synthetic(5, 5, ModelFamily::Sem, 0.6, 56);
        let fit = fit_sem(&spec(ModelFamily::Sem), &pts, &w).unwrap();
        let effects = marginal_effects(&fit, &w).unwrap();
        let e = &effects.effects[0];
        assert_abs_diff_eq!(e.direct, fit.coefficients[1], epsilon = 1e-12);
        assert_abs_diff_eq!(e.indirect, 0.0, epsilon = 1e-12);
    }

    // -- hypothesis tests ---------------------------------------------------

    #[test]
    fn lr_test_on_identical_fits_is_null() {
        let (pts, w) = synthetic(6, 6, ModelFamily::Sar, 0.5, 61);
        let fit = fit_sar(&spec(ModelFamily::Sar), &pts, &w).unwrap();
        let lr = lr_test(&fit, &fit).unwrap();
        assert_eq!(lr.df, 0);
        assert_eq!(lr.statistic, 0.0);
        assert_eq!(lr.p_value, 1.0);
    }

    #[test]
    fn lr_test_detects_strong_dependence() {
        let (pts, w) = synthetic(7, 7, ModelFamily::Sar, 0.6, 62);
        let sar = fit_sar(&spec(ModelFamily::Sar), &pts, &w).unwrap();
        let ols = fit_ols(&spec(ModelFamily::Ols), &pts, &w).unwrap();
        let lr = lr_test(&sar, &ols).unwrap();
        assert_eq!(lr.df, 1);
        assert!(lr.statistic > 0.0);
        assert!(lr.p_value < 0.01, "p = {}", lr.p_value);
    }

    #[test]
    fn lr_test_rejects_non_nested_pairs() {
        let (pts, w) = synthetic(6, 6, ModelFamily::Sdm, 0.4, 63);
        let sem = fit_sem(&spec(ModelFamily::Sem), &pts, &w).unwrap();
        let slx = fit_slx(&spec(ModelFamily::Slx), &pts, &w).unwrap();
        assert!(matches!(
            lr_test(&sem, &slx),
            Err(SpatialError::InvalidComparison(_))
        ));
        // Same admissible pair, different designs: also rejected.
        let sar = fit_sar(&spec(ModelFamily::Sar), &pts, &w).unwrap();
        let mut other = spec(ModelFamily::Ols);
        other.intercept = false;
        let ols_no_int = fit_ols(&other, &pts, &w).unwrap();
        assert!(matches!(
            lr_test(&sar, &ols_no_int),
            Err(SpatialError::InvalidComparison(_))
        ));
    }

    #[test]
    fn wald_test_matches_its_definition() {
        let (pts, w) = synthetic(7, 7, ModelFamily::Sar, 0.5, 64);
        let fit = fit_sar(&spec(ModelFamily::Sar), &pts, &w).unwrap();
        let wald = wald_test(&fit, WaldParameter::Rho).unwrap();
        let rho = fit.rho.unwrap();
        let var = fit.rho_variance.unwrap();
        assert_abs_diff_eq!(wald.statistic, rho * rho / var, epsilon = 1e-12);
        let chi2 = ChiSquared::new(1.0).unwrap();
        assert_abs_diff_eq!(wald.p_value, chi2.sf(wald.statistic), epsilon = 1e-12);
        // λ is not a SAR parameter.
        assert!(wald_test(&fit, WaldParameter::Lambda).is_err());
    }

    #[test]
    fn wald_test_requires_a_free_parameter() {
        let (pts, w) = synthetic(6, 6, ModelFamily::Sar, 0.5, 65);
        let fixed = fit_sar_fixed(&spec(ModelFamily::Sar), &pts, &w, 0.3).unwrap();
        assert!(matches!(
            wald_test(&fixed, WaldParameter::Rho),
            Err(SpatialError::InvalidArgument(_))
        ));
    }

    // -- diagnostics ----------------------------------------------------------

    #[test]
    fn diagnostics_pass_on_a_well_specified_model() {
        let (pts, w) = synthetic(8, 8, ModelFamily::Ols, 0.0, 71);
        let fit = fit_ols(&spec(ModelFamily::Ols), &pts, &w).unwrap();
        let d = &fit.diagnostics;
        assert_eq!(d.mean_zero.pass, Some(true));
        assert_eq!(d.homoscedastic.pass, Some(true));
        assert_eq!(d.residual_moran_pass, Some(true));
        // Re-deriving from the fit gives the same answers.
        let again = residual_diagnostics(&fit, &w);
        assert_eq!(
            again.residual_moran.as_ref().unwrap().i,
            d.residual_moran.as_ref().unwrap().i
        );
    }

    #[test]
    fn ols_residuals_carry_the_spatial_signal_sem_filters_out() {
        let (pts, w) = synthetic(10, 10, ModelFamily::Sem, 0.7, 72);
        let ols = fit_ols(&spec(ModelFamily::Ols), &pts, &w).unwrap();
        let sem = fit_sem(&spec(ModelFamily::Sem), &pts, &w).unwrap();
        // The misspecified model leaves autocorrelated residuals behind;
        // the spatial filter removes them.
        assert_eq!(ols.diagnostics.residual_moran_pass, Some(false));
        assert_eq!(sem.diagnostics.residual_moran_pass, Some(true));
    }
}
