//! Synthetic data generation and parameter-recovery experiments.
//!
//! The generator draws regressors and noise as iid standard normals
//! (scaled by σ for the noise) on a point layout — a regular lattice or a
//! uniform scatter — and pushes them through the requested model family:
//!
//! ```text
//! ols  y = Xβ + ε
//! slx  y = Xβ + WXγ + ε
//! sar  y = (I − ρW)⁻¹ (Xβ + ε)
//! sem  y = Xβ + (I − λW)⁻¹ ε
//! sdm  y = (I − ρW)⁻¹ (Xβ + WXγ + ε)
//! ```
//!
//! The weights matrix is built from the layout with the supplied
//! transformation spec and then row-standardized, matching what the model
//! fits expect and keeping (I − ρW) invertible for |ρ| < 1. The same
//! deterministic ChaCha20 stream drives coordinates (for random layouts),
//! X, and ε, so a `DgpSpec` pins its dataset bit-for-bit.
//!
//! [`recovery_experiment`] repeats generate-and-fit across consecutive
//! seeds and reports bias, RMSE, and 95% confidence-interval coverage per
//! parameter — the standard calibration check that the estimator and its
//! reported uncertainties agree with the data-generating truth.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Result, SpatialError};
use crate::geometry::{build_distance_matrix, Metric, Point, PointSet};
use crate::linalg::Lu;
use crate::models::{
    self, GridLnDet, ModelFamily, ModelFit, ModelSpec, RHO_BOUND,
};
use crate::weights::{self, SpatialWeights, WeightsSpec};

/// Smallest sample a generated experiment may use; tinier layouts make the
/// spatial likelihoods too lumpy to be worth simulating.
pub const MIN_SITES: usize = 9;
/// Smallest number of replications a recovery experiment accepts.
pub const MIN_SEEDS: usize = 20;
/// Two-sided 95% normal critical value used for coverage intervals.
pub const COVERAGE_Z: f64 = 1.959_963_984_540_054;

/// Where the sites live.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Layout {
    /// `rows × cols` regular grid with the given spacing between adjacent
    /// sites. A connectivity threshold equal to the spacing yields rook
    /// contiguity; 1.5× the spacing yields queen contiguity.
    Lattice { rows: usize, cols: usize, spacing: f64 },
    /// `n` sites scattered uniformly over the square [0, extent]².
    Uniform { n: usize, extent: f64 },
}

impl Layout {
    pub fn n_sites(&self) -> usize {
        match *self {
            Layout::Lattice { rows, cols, .. } => rows * cols,
            Layout::Uniform { n, .. } => n,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Layout::Lattice { rows, cols, spacing } => {
                if rows * cols < MIN_SITES {
                    return Err(SpatialError::SampleTooSmall {
                        n: rows * cols,
                        min: MIN_SITES,
                    });
                }
                if !(spacing.is_finite() && spacing > 0.0) {
                    return Err(SpatialError::InvalidArgument(format!(
                        "lattice spacing must be a positive finite number, got {spacing}"
                    )));
                }
            }
            Layout::Uniform { n, extent } => {
                if n < MIN_SITES {
                    return Err(SpatialError::SampleTooSmall { n, min: MIN_SITES });
                }
                if !(extent.is_finite() && extent > 0.0) {
                    return Err(SpatialError::InvalidArgument(format!(
                        "scatter extent must be a positive finite number, got {extent}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Deterministic layouts produce the same sites for every seed, which
    /// lets a recovery experiment reuse the weights matrix across fits.
    fn is_deterministic(&self) -> bool {
        matches!(self, Layout::Lattice { .. })
    }
}

/// A complete data-generating recipe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DgpSpec {
    pub family: ModelFamily,
    /// Intercept first, then one slope per regressor (so at least two
    /// entries).
    pub beta: Vec<f64>,
    /// Slopes on the spatially lagged regressors; required for slx/sdm
    /// (one per regressor), rejected otherwise.
    pub gamma: Option<Vec<f64>>,
    /// Spatial-lag coefficient; required for sar/sdm, rejected otherwise.
    pub rho: Option<f64>,
    /// Error-autoregression coefficient; required for sem, rejected
    /// otherwise.
    pub lambda: Option<f64>,
    /// Noise standard deviation.
    pub sigma: f64,
    pub layout: Layout,
    pub seed: u64,
}

impl DgpSpec {
    /// Number of regressors (columns of X, intercept excluded).
    pub fn k(&self) -> usize {
        self.beta.len().saturating_sub(1)
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.beta.len() < 2 {
            return Err(SpatialError::InvalidArgument(
                "beta must hold an intercept and at least one slope".into(),
            ));
        }
        if self.beta.iter().any(|v| !v.is_finite()) {
            return Err(SpatialError::NonFinite {
                context: "beta coefficients".into(),
            });
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(SpatialError::InvalidArgument(format!(
                "sigma must be a positive finite number, got {}",
                self.sigma
            )));
        }
        let needs_gamma = self.family.has_lagged_regressors();
        match (&self.gamma, needs_gamma) {
            (Some(g), true) => {
                if g.len() != self.k() {
                    return Err(SpatialError::DimensionMismatch {
                        context: "gamma length vs number of regressors".into(),
                        expected: self.k(),
                        actual: g.len(),
                    });
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(SpatialError::NonFinite {
                        context: "gamma coefficients".into(),
                    });
                }
            }
            (None, true) => {
                return Err(SpatialError::InvalidArgument(format!(
                    "{} generation requires gamma",
                    self.family
                )))
            }
            (Some(_), false) => {
                return Err(SpatialError::InvalidArgument(format!(
                    "{} generation does not use gamma",
                    self.family
                )))
            }
            (None, false) => {}
        }
        let check_spatial = |value: Option<f64>, name: &str, needed: bool| -> Result<()> {
            match (value, needed) {
                (Some(v), true) => {
                    if !(v.is_finite() && v.abs() < RHO_BOUND) {
                        return Err(SpatialError::InvalidArgument(format!(
                            "{name} must lie in (−{RHO_BOUND}, {RHO_BOUND}), got {v}"
                        )));
                    }
                    Ok(())
                }
                (None, true) => Err(SpatialError::InvalidArgument(format!(
                    "{} generation requires {name}",
                    self.family
                ))),
                (Some(_), false) => Err(SpatialError::InvalidArgument(format!(
                    "{} generation does not use {name}",
                    self.family
                ))),
                (None, false) => Ok(()),
            }
        };
        check_spatial(
            self.rho,
            "rho",
            matches!(self.family, ModelFamily::Sar | ModelFamily::Sdm),
        )?;
        check_spatial(self.lambda, "lambda", self.family == ModelFamily::Sem)?;
        Ok(())
    }
}

/// A generated dataset: sites with `response` and `x1..xK` variables, the
/// row-standardized weights used in generation, and the recipe itself.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub points: PointSet,
    pub weights: SpatialWeights,
    pub truth: DgpSpec,
}

fn standard_normal(rng: &mut ChaCha20Rng, n: usize) -> Array1<f64> {
    Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn layout_points(layout: &Layout, rng: &mut ChaCha20Rng) -> Result<PointSet> {
    let coords: Vec<Point> = match *layout {
        Layout::Lattice { rows, cols, spacing } => (0..rows)
            .flat_map(|r| {
                (0..cols).map(move |c| Point::new(c as f64 * spacing, r as f64 * spacing))
            })
            .collect(),
        Layout::Uniform { n, extent } => (0..n)
            .map(|_| {
                let x: f64 = rng.gen::<f64>() * extent;
                let y: f64 = rng.gen::<f64>() * extent;
                Point::new(x, y)
            })
            .collect(),
    };
    let ids = (0..coords.len()).map(|i| format!("s{i}")).collect();
    PointSet::new(ids, coords)
}

/// Solve (I − ρW)·y = rhs.
fn spatial_filter_solve(w: &SpatialWeights, rho: f64, rhs: &Array1<f64>) -> Result<Array1<f64>> {
    let n = rhs.len();
    let mut a = w.values().mapv(|v| -rho * v);
    for i in 0..n {
        a[[i, i]] += 1.0;
    }
    Lu::factor(&a.view())?.solve(&rhs.view())
}

/// Generate one dataset from the recipe. The weights spec is applied to
/// the layout's distance matrix (Euclidean) and row-standardized.
pub fn generate(dgp: &DgpSpec, weights_spec: &WeightsSpec) -> Result<GeneratedData> {
    let mut rng = ChaCha20Rng::seed_from_u64(dgp.seed);
    generate_with(dgp, weights_spec, None, &mut rng)
}

/// Generation core: a prebuilt (points, weights) pair — valid only for
/// deterministic layouts — skips the per-seed rebuild in experiment loops.
fn generate_with(
    dgp: &DgpSpec,
    weights_spec: &WeightsSpec,
    prebuilt: Option<(&PointSet, &SpatialWeights)>,
    rng: &mut ChaCha20Rng,
) -> Result<GeneratedData> {
    dgp.validate()?;
    let (mut points, w) = match prebuilt {
        Some((p, w)) => (p.clone(), w.clone()),
        None => {
            let points = layout_points(&dgp.layout, rng)?;
            let d = build_distance_matrix(&points, Metric::Euclidean);
            let w = weights::row_standardize(&weights::transform(&d, weights_spec)?);
            (points, w)
        }
    };
    let n = points.n();
    let k = dgp.k();

    let mut x = Array2::<f64>::zeros((n, k));
    for j in 0..k {
        x.column_mut(j).assign(&standard_normal(rng, n));
    }
    let eps = standard_normal(rng, n).mapv(|v| dgp.sigma * v);

    let mut signal = Array1::<f64>::from_elem(n, dgp.beta[0]);
    for j in 0..k {
        signal = signal + x.column(j).mapv(|v| dgp.beta[j + 1] * v);
    }
    if let Some(gamma) = &dgp.gamma {
        let wx = w.values().dot(&x);
        for j in 0..k {
            signal = signal + wx.column(j).mapv(|v| gamma[j] * v);
        }
    }

    let response = match dgp.family {
        ModelFamily::Ols | ModelFamily::Slx => signal + eps,
        ModelFamily::Sar | ModelFamily::Sdm => {
            spatial_filter_solve(&w, dgp.rho.expect("validated"), &(signal + eps))?
        }
        ModelFamily::Sem => {
            let u = spatial_filter_solve(&w, dgp.lambda.expect("validated"), &eps)?;
            signal + u
        }
    };

    for j in 0..k {
        points.add_variable(&format!("x{}", j + 1), x.column(j).to_vec())?;
    }
    points.add_variable("response", response.to_vec())?;

    Ok(GeneratedData {
        points,
        weights: w,
        truth: dgp.clone(),
    })
}

// ---------------------------------------------------------------------------
// Recovery experiments
// ---------------------------------------------------------------------------

/// Recovery of one parameter across replications.
#[derive(Debug, Clone, Serialize)]
pub struct ParameterRecovery {
    pub name: String,
    pub truth: f64,
    pub mean_estimate: f64,
    pub bias: f64,
    /// Mean absolute error of the estimates around the truth.
    pub mae: f64,
    pub rmse: f64,
    /// Fraction of replications whose 95% confidence interval covered the
    /// truth; None when no standard error is available for the parameter.
    pub coverage: Option<f64>,
}

/// One replication that failed to fit, with the reason.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryFailure {
    pub seed: u64,
    pub message: String,
}

/// Bias / RMSE / coverage summary of a generate-and-fit experiment.
#[derive(Debug, Clone, Serialize)]
pub struct RecoveryReport {
    pub family: ModelFamily,
    pub seeds_requested: usize,
    pub seeds_succeeded: usize,
    pub parameters: Vec<ParameterRecovery>,
    pub failures: Vec<RecoveryFailure>,
}

struct ParameterTrack {
    name: String,
    truth: f64,
    estimates: Vec<f64>,
    covered: Option<usize>,
}

impl ParameterTrack {
    fn new(name: impl Into<String>, truth: f64, with_coverage: bool) -> Self {
        ParameterTrack {
            name: name.into(),
            truth,
            estimates: Vec::new(),
            covered: with_coverage.then_some(0),
        }
    }

    fn record(&mut self, estimate: f64, se: Option<f64>) {
        self.estimates.push(estimate);
        if let (Some(count), Some(se)) = (self.covered.as_mut(), se) {
            if (estimate - self.truth).abs() <= COVERAGE_Z * se {
                *count += 1;
            }
        }
    }

    fn summarize(self) -> ParameterRecovery {
        let n = self.estimates.len() as f64;
        let mean = self.estimates.iter().sum::<f64>() / n;
        let mae = self
            .estimates
            .iter()
            .map(|e| (e - self.truth).abs())
            .sum::<f64>()
            / n;
        let mse = self
            .estimates
            .iter()
            .map(|e| (e - self.truth) * (e - self.truth))
            .sum::<f64>()
            / n;
        ParameterRecovery {
            name: self.name,
            truth: self.truth,
            mean_estimate: mean,
            bias: mean - self.truth,
            mae,
            rmse: mse.sqrt(),
            coverage: self.covered.map(|c| c as f64 / n),
        }
    }
}

/// Model spec matching a DGP: `response ~ x1 + … + xK` under the same
/// family.
pub fn matching_model_spec(dgp: &DgpSpec) -> Result<ModelSpec> {
    let regressors = (1..=dgp.k()).map(|j| format!("x{j}")).collect();
    ModelSpec::new(dgp.family, "response", regressors, true)
}

fn fit_matching(
    spec: &ModelSpec,
    data: &GeneratedData,
    grid: Option<&GridLnDet>,
) -> Result<ModelFit> {
    match (spec.family, grid) {
        (ModelFamily::Sar, Some(g)) => {
            models::fit_sar_with_grid(spec, &data.points, &data.weights, g)
        }
        (ModelFamily::Sem, Some(g)) => {
            models::fit_sem_with_grid(spec, &data.points, &data.weights, g)
        }
        (ModelFamily::Sdm, Some(g)) => {
            models::fit_sdm_with_grid(spec, &data.points, &data.weights, g)
        }
        _ => models::fit(spec, &data.points, &data.weights),
    }
}

/// Run `seeds` generate-and-fit replications (seeds `dgp.seed`,
/// `dgp.seed + 1`, …) and summarize how well each parameter of the DGP is
/// recovered. Individual replications that fail to fit are recorded, not
/// fatal; an experiment where every replication fails is an error.
pub fn recovery_experiment(
    dgp: &DgpSpec,
    weights_spec: &WeightsSpec,
    seeds: usize,
) -> Result<RecoveryReport> {
    dgp.validate()?;
    if seeds < MIN_SEEDS {
        return Err(SpatialError::InvalidArgument(format!(
            "a recovery experiment needs at least {MIN_SEEDS} replications, got {seeds}"
        )));
    }
    let model_spec = matching_model_spec(dgp)?;

    // Deterministic layouts share one weights matrix (and one set of grid
    // log-determinants) across every replication.
    let prebuilt = if dgp.layout.is_deterministic() {
        let mut probe_rng = ChaCha20Rng::seed_from_u64(dgp.seed);
        let points = layout_points(&dgp.layout, &mut probe_rng)?;
        let d = build_distance_matrix(&points, Metric::Euclidean);
        let w = weights::row_standardize(&weights::transform(&d, weights_spec)?);
        let grid = if dgp.family.has_spatial_parameter() {
            Some(GridLnDet::precompute(&w)?)
        } else {
            None
        };
        Some((points, w, grid))
    } else {
        None
    };

    let k = dgp.k();
    let mut tracks: Vec<ParameterTrack> = Vec::new();
    if let Some(rho) = dgp.rho {
        tracks.push(ParameterTrack::new("rho", rho, true));
    }
    if let Some(lambda) = dgp.lambda {
        tracks.push(ParameterTrack::new("lambda", lambda, true));
    }
    tracks.push(ParameterTrack::new("(intercept)", dgp.beta[0], true));
    for j in 0..k {
        tracks.push(ParameterTrack::new(
            format!("x{}", j + 1),
            dgp.beta[j + 1],
            true,
        ));
    }
    if let Some(gamma) = &dgp.gamma {
        for j in 0..k {
            tracks.push(ParameterTrack::new(
                format!("W*x{}", j + 1),
                gamma[j],
                true,
            ));
        }
    }

    let mut failures = Vec::new();
    let mut succeeded = 0usize;
    for s in 0..seeds {
        let seed = dgp.seed.wrapping_add(s as u64);
        let mut replication = dgp.clone();
        replication.seed = seed;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let fit = (|| -> Result<ModelFit> {
            let data = generate_with(
                &replication,
                weights_spec,
                prebuilt.as_ref().map(|(p, w, _)| (p, w)),
                &mut rng,
            )?;
            fit_matching(
                &model_spec,
                &data,
                prebuilt.as_ref().and_then(|(_, _, g)| g.as_ref()),
            )
        })();
        let fit = match fit {
            Ok(fit) => fit,
            Err(err) => {
                failures.push(RecoveryFailure {
                    seed,
                    message: err.to_string(),
                });
                continue;
            }
        };
        succeeded += 1;
        for track in tracks.iter_mut() {
            match track.name.as_str() {
                "rho" => track.record(
                    fit.rho.expect("sar/sdm fit carries rho"),
                    fit.rho_variance.map(f64::sqrt),
                ),
                "lambda" => track.record(
                    fit.lambda.expect("sem fit carries lambda"),
                    fit.lambda_variance.map(f64::sqrt),
                ),
                name => {
                    let j = fit
                        .coef_names
                        .iter()
                        .position(|c| c == name)
                        .expect("recovery tracks mirror the design columns");
                    track.record(fit.coefficients[j], Some(fit.coef_se(j)));
                }
            }
        }
    }

    if succeeded == 0 {
        return Err(SpatialError::InvalidArgument(format!(
            "all {seeds} replications failed; first failure: {}",
            failures
                .first()
                .map(|f| f.message.as_str())
                .unwrap_or("none recorded")
        )));
    }

    Ok(RecoveryReport {
        family: dgp.family,
        seeds_requested: seeds,
        seeds_succeeded: succeeded,
        parameters: tracks.into_iter().map(ParameterTrack::summarize).collect(),
        failures,
    })
}
