//! Implementations of the six subcommands plus the shared plumbing:
//! error-to-exit-code mapping, provenance headers, JSON emission, and
//! number formatting.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde_json::json;

use spatialecon::autocorr::{self, Alternative, PermutationReport, PermutationStatistic};
use spatialecon::geometry::{build_distance_matrix, Metric};
use spatialecon::io;
use spatialecon::models::{self, ModelFamily, ModelFit, ModelSpec, WaldParameter};
use spatialecon::simulate::{self, DgpSpec, Layout};
use spatialecon::weights::{self, guideline_hint, RegionExtent, WeightsKind, WeightsSpec};
use spatialecon::{ErrorCategory, SpatialError};

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

#[derive(Debug)]
pub enum CliError {
    Spatial(SpatialError),
    Input(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spatial(e) => match e.category() {
                ErrorCategory::Input => 2,
                ErrorCategory::Numerical => 3,
            },
            CliError::Input(_) => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Spatial(e) => e.fmt(f),
            CliError::Input(msg) => f.write_str(msg),
        }
    }
}

impl From<SpatialError> for CliError {
    fn from(e: SpatialError) -> Self {
        CliError::Spatial(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("i/o error: {e}"))
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// The library reports zero variance on the anonymous "y"; substitute the
/// variable name the user actually asked about.
fn named_var(e: SpatialError, var: &str) -> SpatialError {
    match e {
        SpatialError::ZeroVariance { .. } => SpatialError::ZeroVariance { name: var.into() },
        other => other,
    }
}

// ---------------------------------------------------------------------------
// Flag value enums
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricArg {
    Euclidean,
    Manhattan,
}

impl MetricArg {
    fn metric(self) -> Metric {
        match self {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::Manhattan => Metric::Manhattan,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TransformArg {
    Connectivity,
    Idw,
    Exp,
    Gaussian,
    IdwThreshold,
}

impl TransformArg {
    fn kind(self) -> WeightsKind {
        match self {
            TransformArg::Connectivity => WeightsKind::Connectivity,
            TransformArg::Idw => WeightsKind::InverseDistance,
            TransformArg::Exp => WeightsKind::InverseExponential,
            TransformArg::Gaussian => WeightsKind::Gaussian,
            TransformArg::IdwThreshold => WeightsKind::InverseDistanceThresholded,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlternativeArg {
    TwoSided,
    Greater,
    Less,
}

impl AlternativeArg {
    fn alternative(self) -> Alternative {
        match self {
            AlternativeArg::TwoSided => Alternative::TwoSided,
            AlternativeArg::Greater => Alternative::Greater,
            AlternativeArg::Less => Alternative::Less,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Ols,
    Slx,
    Sar,
    Sem,
    Sdm,
}

impl ModelArg {
    fn family(self) -> ModelFamily {
        match self {
            ModelArg::Ols => ModelFamily::Ols,
            ModelArg::Slx => ModelFamily::Slx,
            ModelArg::Sar => ModelFamily::Sar,
            ModelArg::Sem => ModelFamily::Sem,
            ModelArg::Sdm => ModelFamily::Sdm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RegionArg {
    Large,
    Small,
}

// ---------------------------------------------------------------------------
// Provenance, seeds, formatting
// ---------------------------------------------------------------------------

/// The key/value lines printed as the report header and embedded verbatim
/// in the JSON document, so any output is reproducible from its own header.
struct Provenance {
    command: &'static str,
    fields: Vec<(&'static str, String)>,
}

impl Provenance {
    fn new(command: &'static str) -> Self {
        Provenance {
            command,
            fields: Vec::new(),
        }
    }

    fn field(mut self, key: &'static str, value: impl fmt::Display) -> Self {
        self.fields.push((key, value.to_string()));
        self
    }

    fn opt_field(mut self, key: &'static str, value: Option<impl fmt::Display>) -> Self {
        if let Some(v) = value {
            self.fields.push((key, v.to_string()));
        }
        self
    }

    fn seed(mut self, seed: u64, from_entropy: bool) -> Self {
        self.fields.push(("seed", seed.to_string()));
        self.fields.push((
            "seed_source",
            if from_entropy { "entropy" } else { "flag" }.to_string(),
        ));
        self
    }

    fn print_header(&self) {
        println!("# spatialecon {} — {}", env!("CARGO_PKG_VERSION"), self.command);
        for (k, v) in &self.fields {
            println!("# {k}: {v}");
        }
        println!();
    }

    /// Write the full report as a JSON document:
    /// `{tool, version, command, provenance: {…}, report: {…}}`.
    fn write_json(&self, path: &Path, report: serde_json::Value) -> CliResult {
        let mut provenance = serde_json::Map::new();
        for (k, v) in &self.fields {
            provenance.insert((*k).to_string(), serde_json::Value::String(v.clone()));
        }
        let doc = json!({
            "tool": "spatialecon",
            "version": env!("CARGO_PKG_VERSION"),
            "command": self.command,
            "provenance": provenance,
            "report": report,
        });
        let file = File::create(path)?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &doc)
            .map_err(|e| CliError::Input(format!("cannot write JSON report: {e}")))?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

/// Take the seed from the flag, or draw one from OS entropy so the run is
/// still reproducible from the printed header.
fn resolve_seed(flag: Option<u64>) -> (u64, bool) {
    match flag {
        Some(s) => (s, false),
        None => (rand::random::<u64>(), true),
    }
}

/// Render a p-value with 4 significant digits (JSON keeps full precision).
fn sig4(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..=6).contains(&exp) {
        format!("{v:.3e}")
    } else {
        format!("{:.*}", (3 - exp).max(0) as usize, v)
    }
}

/// General-purpose numeric rendering for tables: fixed-point in a sane
/// magnitude range, scientific outside it.
fn num(v: f64) -> String {
    if !v.is_finite() {
        format!("{v}")
    } else if v != 0.0 && (v.abs() >= 1e6 || v.abs() < 1e-4) {
        format!("{v:.6e}")
    } else {
        format!("{v:.6}")
    }
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "-".into())
}

fn display_path(p: &Path) -> String {
    p.display().to_string()
}

// ---------------------------------------------------------------------------
// weights
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct WeightsArgs {
    /// Point dataset: CSV with id,x,y columns (extra columns are variables).
    #[arg(long)]
    pub input: PathBuf,
    /// Distance metric.
    #[arg(long, value_enum, default_value_t = MetricArg::Euclidean)]
    pub metric: MetricArg,
    /// Distance-to-weight transformation.
    #[arg(long, value_enum)]
    pub transform: TransformArg,
    /// Cut-off distance d̄ (required by connectivity, gaussian, idw-threshold).
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Decay exponent γ (required by idw, idw-threshold).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Row-standardize the matrix after the transformation.
    #[arg(long)]
    pub standardize: bool,
    /// Where to write the weights file.
    #[arg(long)]
    pub output: PathBuf,
    /// Print transformation guidance for a large or small study region.
    #[arg(long, value_enum)]
    pub hint_region: Option<RegionArg>,
    /// Print transformation guidance for variables whose influence is local.
    #[arg(long)]
    pub hint_local: bool,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn weights(args: WeightsArgs) -> CliResult {
    let points = io::load_dataset(&args.input)?;
    let distances = build_distance_matrix(&points, args.metric.metric());
    let spec = WeightsSpec::new(args.transform.kind(), args.threshold, args.gamma)?;
    let raw = weights::transform(&distances, &spec)?;
    let w = if args.standardize {
        weights::row_standardize(&raw)
    } else {
        raw
    };
    io::save_weights(&w, &args.output)?;

    let provenance = Provenance::new("weights")
        .field("input", display_path(&args.input))
        .field("metric", w.metric().name())
        .field("transform", spec.kind.token())
        .opt_field("threshold", spec.threshold)
        .opt_field("gamma", spec.gamma)
        .field("standardize", args.standardize)
        .field("output", display_path(&args.output));
    provenance.print_header();

    let nonzero = w
        .values()
        .indexed_iter()
        .filter(|((i, j), &v)| i != j && v != 0.0)
        .count();
    println!("Spatial weights matrix");
    println!("  observations     {}", w.n());
    println!("  nonzero weights  {nonzero}");
    println!("  total weight s0  {}", num(w.total()));
    if w.isolates().is_empty() {
        println!("  isolates         none");
    } else {
        let ids: Vec<&str> = w
            .isolates()
            .iter()
            .map(|&i| points.ids()[i].as_str())
            .collect();
        println!("  isolates         {} ({})", w.isolates().len(), ids.join(", "));
    }
    println!("  written to       {}", display_path(&args.output));

    if args.hint_local || args.hint_region.is_some() {
        let extent = match args.hint_region {
            Some(RegionArg::Large) => RegionExtent::Large,
            _ => RegionExtent::Small,
        };
        println!();
        println!("{}", guideline_hint(extent, args.hint_local));
    }

    if let Some(path) = &args.json {
        provenance.write_json(
            path,
            json!({
                "n": w.n(),
                "nonzero": nonzero,
                "s0": w.total(),
                "standardized": w.standardized(),
                "isolates": w.isolates(),
                "spec": w.spec(),
                "metric": w.metric().name(),
            }),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// moran
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct MoranArgs {
    /// Point dataset (CSV).
    #[arg(long)]
    pub input: PathBuf,
    /// Weights file produced by the `weights` subcommand.
    #[arg(long)]
    pub weights: PathBuf,
    /// Variable to test.
    #[arg(long)]
    pub var: String,
    /// Alternative hypothesis for the normal-approximation test.
    #[arg(long, value_enum, default_value_t = AlternativeArg::TwoSided)]
    pub alternative: AlternativeArg,
    /// Also run a permutation test with this many draws (at least 999).
    #[arg(long)]
    pub permutations: Option<usize>,
    /// RNG seed for the permutation test; drawn from entropy when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn moran(args: MoranArgs) -> CliResult {
    let points = io::load_dataset(&args.input)?;
    let w = io::load_weights(&args.weights)?;
    let y = points.variable(&args.var)?;
    let alternative = args.alternative.alternative();

    let report = autocorr::moran_test(&y.view(), &w, alternative)
        .map_err(|e| named_var(e, &args.var))?;

    let permutation: Option<(PermutationReport, u64, bool)> = match args.permutations {
        Some(draws) => {
            let (seed, from_entropy) = resolve_seed(args.seed);
            let perm = autocorr::permutation_test(
                &y.view(),
                &w,
                PermutationStatistic::Global,
                draws,
                seed,
            )
            .map_err(|e| named_var(e, &args.var))?;
            Some((perm, seed, from_entropy))
        }
        None => None,
    };

    let mut provenance = Provenance::new("moran")
        .field("input", display_path(&args.input))
        .field("weights", display_path(&args.weights))
        .field("var", &args.var)
        .field("alternative", alternative.token())
        .opt_field("permutations", args.permutations);
    if let Some((_, seed, from_entropy)) = &permutation {
        provenance = provenance.seed(*seed, *from_entropy);
    }
    provenance.print_header();

    println!("Moran's I (normal approximation)");
    println!("  N          {}", report.n);
    println!("  I          {}", num(report.i));
    println!("  E[I]       {}", num(report.expected));
    println!("  Var[I]     {}", num(report.variance));
    println!("  z          {}", num(report.z));
    println!("  p-value    {}  ({})", sig4(report.p_value), alternative.token());

    if let Some((perm, _, _)) = &permutation {
        let g = perm.global.as_ref().expect("global permutation summary");
        let pseudo = match alternative {
            Alternative::TwoSided => g.pseudo_p_two_sided,
            Alternative::Greater => g.pseudo_p_greater,
            Alternative::Less => g.pseudo_p_less,
        };
        println!();
        println!("Permutation test ({} draws, {})", perm.draws, perm.rng_algorithm);
        println!("  permutation mean      {}", num(g.perm_mean));
        println!("  permutation variance  {}", num(g.perm_var));
        println!("  pseudo p-value        {}  ({})", sig4(pseudo), alternative.token());
    }

    if let Some(path) = &args.json {
        provenance.write_json(
            path,
            json!({
                "moran": report,
                "permutation": permutation.as_ref().map(|(p, _, _)| p),
            }),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// lisa
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct LisaArgs {
    /// Point dataset (CSV).
    #[arg(long)]
    pub input: PathBuf,
    /// Weights file produced by the `weights` subcommand.
    #[arg(long)]
    pub weights: PathBuf,
    /// Variable to analyze.
    #[arg(long)]
    pub var: String,
    /// Nominal significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Apply the Bonferroni adjustment (per-site threshold α/N).
    #[arg(long)]
    pub bonferroni: bool,
    /// Also run conditional permutation tests with this many draws (≥ 999).
    #[arg(long)]
    pub permutations: Option<usize>,
    /// RNG seed for the permutation tests; drawn from entropy when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn lisa(args: LisaArgs) -> CliResult {
    let points = io::load_dataset(&args.input)?;
    let w = io::load_weights(&args.weights)?;
    let y = points.variable(&args.var)?;

    let report = autocorr::lisa_test(&y.view(), &w, args.alpha, args.bonferroni)
        .map_err(|e| named_var(e, &args.var))?;

    let permutation: Option<(PermutationReport, u64, bool)> = match args.permutations {
        Some(draws) => {
            let (seed, from_entropy) = resolve_seed(args.seed);
            let perm = autocorr::permutation_test(
                &y.view(),
                &w,
                PermutationStatistic::Local,
                draws,
                seed,
            )
            .map_err(|e| named_var(e, &args.var))?;
            Some((perm, seed, from_entropy))
        }
        None => None,
    };

    let mut provenance = Provenance::new("lisa")
        .field("input", display_path(&args.input))
        .field("weights", display_path(&args.weights))
        .field("var", &args.var)
        .field("alpha", args.alpha)
        .field("bonferroni", args.bonferroni)
        .opt_field("permutations", args.permutations);
    if let Some((_, seed, from_entropy)) = &permutation {
        provenance = provenance.seed(*seed, *from_entropy);
    }
    provenance.print_header();

    println!(
        "Local Moran (LISA): alpha {}, per-site threshold {}",
        args.alpha,
        sig4(report.threshold)
    );
    println!();
    let perm_col = permutation.is_some();
    if perm_col {
        println!(
            "  {:<6} {:<12} {:>12} {:>12} {:>10} {:>10} {:>10}",
            "site", "id", "I_i", "E[I_i]", "z", "p-value", "pseudo-p"
        );
    } else {
        println!(
            "  {:<6} {:<12} {:>12} {:>12} {:>10} {:>10}",
            "site", "id", "I_i", "E[I_i]", "z", "p-value"
        );
    }
    let locals = permutation
        .as_ref()
        .and_then(|(p, _, _)| p.local.as_ref());
    for site in &report.sites {
        let id = points.ids()[site.index].as_str();
        let marker = if site.non_testable {
            "  (non-testable)"
        } else if site.significant {
            "  *"
        } else {
            ""
        };
        let z = site.z.map(num).unwrap_or_else(|| "-".into());
        let p = site.p_value.map(sig4).unwrap_or_else(|| "-".into());
        if let Some(locals) = locals {
            let pseudo = sig4(locals[site.index].pseudo_p_two_sided);
            println!(
                "  {:<6} {:<12} {:>12} {:>12} {:>10} {:>10} {:>10}{marker}",
                site.index,
                id,
                num(site.i_value),
                num(site.expected),
                z,
                p,
                pseudo
            );
        } else {
            println!(
                "  {:<6} {:<12} {:>12} {:>12} {:>10} {:>10}{marker}",
                site.index,
                id,
                num(site.i_value),
                num(site.expected),
                z,
                p
            );
        }
    }
    let significant = report.sites.iter().filter(|s| s.significant).count();
    let non_testable = report.sites.iter().filter(|s| s.non_testable).count();
    println!();
    println!(
        "  significant sites  {significant} of {} ({non_testable} non-testable)",
        report.sites.len()
    );
    println!("  global I           {}", num(report.global_i));
    println!();
    println!("note: {}", report.caveat);

    if let Some(path) = &args.json {
        provenance.write_json(
            path,
            json!({
                "lisa": report,
                "permutation": permutation.as_ref().map(|(p, _, _)| p),
            }),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// fit
// ---------------------------------------------------------------------------

#[derive(Args)]
pub struct FitArgs {
    /// Point dataset (CSV).
    #[arg(long)]
    pub input: PathBuf,
    /// Weights file produced by the `weights` subcommand.
    #[arg(long)]
    pub weights: PathBuf,
    /// Model family.
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Response variable.
    #[arg(long)]
    pub y: String,
    /// Comma-separated regressor names.
    #[arg(long, value_delimiter = ',', required = true)]
    pub x: Vec<String>,
    /// Drop the intercept column.
    #[arg(long)]
    pub no_intercept: bool,
    /// Also report direct/indirect/total marginal effects per regressor.
    #[arg(long)]
    pub effects: bool,
    /// Fit this restricted family on the same specification and run a
    /// likelihood-ratio test against it.
    #[arg(long, value_enum)]
    pub lr_against: Option<ModelArg>,
    /// Wald test on the model's spatial parameter.
    #[arg(long)]
    pub wald: bool,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn print_fit(fit: &ModelFit) {
    println!("Model: {} ({})", fit.family, match fit.family {
        ModelFamily::Ols | ModelFamily::Slx => "least squares",
        _ => "maximum likelihood",
    });
    println!("  response {}, N = {}", fit.response, fit.n);
    println!();
    println!(
        "  {:<14} {:>14} {:>12} {:>10} {:>10}",
        "coefficient", "estimate", "std error", "z", "p-value"
    );
    for j in 0..fit.coefficients.len() {
        let est = fit.coefficients[j];
        let se = fit.coef_se(j);
        let z = est / se;
        println!(
            "  {:<14} {:>14} {:>12} {:>10} {:>10}",
            fit.coef_names[j],
            num(est),
            num(se),
            format!("{z:.4}"),
            sig4(models::coef_p_value(est, se))
        );
    }
    println!();
    if let Some(rho) = fit.rho {
        let se = fit.rho_variance.map(|v| v.sqrt());
        println!("  rho             {:>14}  (se {})", num(rho), opt_num(se));
    }
    if let Some(lambda) = fit.lambda {
        let se = fit.lambda_variance.map(|v| v.sqrt());
        println!("  lambda          {:>14}  (se {})", num(lambda), opt_num(se));
    }
    println!("  sigma2          {:>14}", num(fit.sigma2));
    println!("  log-likelihood  {:>14}", num(fit.loglik));

    println!();
    println!("  diagnostics");
    let d = &fit.diagnostics;
    let verdict = |pass: Option<bool>| match pass {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "skipped",
    };
    println!(
        "    residual mean zero  {:<8} (|mean|/sd = {})",
        verdict(d.mean_zero.pass),
        opt_num(d.mean_zero.statistic)
    );
    match (d.homoscedastic.statistic, d.homoscedastic.p_value) {
        (Some(stat), Some(p)) => println!(
            "    homoscedasticity    {:<8} (LM = {}, p = {})",
            verdict(d.homoscedastic.pass),
            num(stat),
            sig4(p)
        ),
        _ => println!("    homoscedasticity    skipped"),
    }
    match &d.residual_moran {
        Some(m) => println!(
            "    residual Moran      {:<8} (z = {}, p = {})",
            verdict(d.residual_moran_pass),
            num(m.z),
            sig4(m.p_value)
        ),
        None => println!("    residual Moran      skipped"),
    }
}

pub fn fit(args: FitArgs) -> CliResult {
    let points = io::load_dataset(&args.input)?;
    let w = io::load_weights(&args.weights)?;
    let family = args.model.family();
    let spec = ModelSpec::new(family, &args.y, args.x.clone(), !args.no_intercept)?;
    let fit = models::fit(&spec, &points, &w)?;

    let effects = if args.effects {
        Some(models::marginal_effects(&fit, &w)?)
    } else {
        None
    };
    let lr = match args.lr_against {
        Some(restricted_model) => {
            let restricted_spec = ModelSpec::new(
                restricted_model.family(),
                &args.y,
                args.x.clone(),
                !args.no_intercept,
            )?;
            let restricted_fit = models::fit(&restricted_spec, &points, &w)?;
            Some(models::lr_test(&fit, &restricted_fit)?)
        }
        None => None,
    };
    let wald = if args.wald {
        let parameter = match family {
            ModelFamily::Sar | ModelFamily::Sdm => WaldParameter::Rho,
            ModelFamily::Sem => WaldParameter::Lambda,
            ModelFamily::Ols | ModelFamily::Slx => {
                return Err(CliError::Input(format!(
                    "--wald requires a model with a spatial parameter; {family} has none"
                )));
            }
        };
        Some(models::wald_test(&fit, parameter)?)
    } else {
        None
    };

    let provenance = Provenance::new("fit")
        .field("input", display_path(&args.input))
        .field("weights", display_path(&args.weights))
        .field("model", family)
        .field("y", &args.y)
        .field("x", args.x.join(","))
        .field("intercept", !args.no_intercept)
        .opt_field("lr_against", args.lr_against.map(|m| m.family()));
    provenance.print_header();

    print_fit(&fit);

    if let Some(effects) = &effects {
        println!();
        println!("  marginal effects (means over sites)");
        println!(
            "    {:<14} {:>12} {:>12} {:>12}",
            "variable", "direct", "indirect", "total"
        );
        for e in &effects.effects {
            println!(
                "    {:<14} {:>12} {:>12} {:>12}",
                e.name,
                num(e.direct),
                num(e.indirect),
                num(e.total)
            );
        }
    }
    if let Some(lr) = &lr {
        println!();
        println!(
            "  likelihood ratio: {} vs {} restricted",
            lr.full_family, lr.restricted_family
        );
        println!(
            "    LR = {}, df = {}, p-value = {}",
            num(lr.statistic),
            lr.df,
            sig4(lr.p_value)
        );
    }
    if let Some(wald) = &wald {
        println!();
        println!("  Wald test on {}", wald.parameter);
        println!(
            "    statistic = {}, p-value = {}",
            num(wald.statistic),
            sig4(wald.p_value)
        );
    }

    if let Some(path) = &args.json {
        provenance.write_json(
            path,
            json!({
                "fit": fit,
                "effects": effects,
                "lr": lr,
                "wald": wald,
            }),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate / recover
// ---------------------------------------------------------------------------

fn parse_lattice(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected ROWSxCOLS (e.g. 10x10), got {s:?}"))?;
    let rows = r
        .trim()
        .parse()
        .map_err(|_| format!("invalid row count {r:?}"))?;
    let cols = c
        .trim()
        .parse()
        .map_err(|_| format!("invalid column count {c:?}"))?;
    Ok((rows, cols))
}

/// DGP parameters shared by `simulate` and `recover`. Sites form a
/// unit-spacing lattice with row-standardized rook-contiguity weights.
#[derive(Args)]
pub struct DgpArgs {
    /// Model family of the data-generating process.
    #[arg(long, value_enum)]
    pub model: ModelArg,
    /// Comma-separated coefficients, intercept first (e.g. 1.0,2.0).
    #[arg(long, value_delimiter = ',', required = true)]
    pub beta: Vec<f64>,
    /// Comma-separated lag coefficients, one per regressor (slx and sdm only).
    #[arg(long, value_delimiter = ',')]
    pub gamma: Option<Vec<f64>>,
    /// Autoregressive parameter (sar and sdm only).
    #[arg(long)]
    pub rho: Option<f64>,
    /// Error-autocorrelation parameter (sem only).
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Error standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    /// Lattice dimensions, e.g. 20x20.
    #[arg(long, value_parser = parse_lattice)]
    pub lattice: (usize, usize),
    /// Base RNG seed; drawn from entropy when absent.
    #[arg(long)]
    pub seed: Option<u64>,
}

impl DgpArgs {
    fn dgp(&self, seed: u64) -> DgpSpec {
        DgpSpec {
            family: self.model.family(),
            beta: self.beta.clone(),
            gamma: self.gamma.clone(),
            rho: self.rho,
            lambda: self.lambda,
            sigma: self.sigma,
            layout: Layout::Lattice {
                rows: self.lattice.0,
                cols: self.lattice.1,
                spacing: 1.0,
            },
            seed,
        }
    }

    fn weights_spec(&self) -> WeightsSpec {
        WeightsSpec::connectivity(1.0).expect("unit threshold is valid")
    }

    fn provenance(&self, command: &'static str, seed: u64, from_entropy: bool) -> Provenance {
        Provenance::new(command)
            .field("model", self.model.family())
            .field(
                "beta",
                self.beta
                    .iter()
                    .map(|b| b.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
            )
            .opt_field(
                "gamma",
                self.gamma.as_ref().map(|g| {
                    g.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
                }),
            )
            .opt_field("rho", self.rho)
            .opt_field("lambda", self.lambda)
            .field("sigma", self.sigma)
            .field("lattice", format!("{}x{}", self.lattice.0, self.lattice.1))
            .seed(seed, from_entropy)
    }
}

#[derive(Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    /// Files are written as <prefix>_data.csv and <prefix>_weights.txt.
    #[arg(long)]
    pub output_prefix: String,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn simulate(args: SimulateArgs) -> CliResult {
    let (seed, from_entropy) = resolve_seed(args.dgp.seed);
    let dgp = args.dgp.dgp(seed);
    let data = simulate::generate(&dgp, &args.dgp.weights_spec())?;

    let data_path = PathBuf::from(format!("{}_data.csv", args.output_prefix));
    let weights_path = PathBuf::from(format!("{}_weights.txt", args.output_prefix));
    io::save_dataset(&data.points, &data_path)?;
    io::save_weights(&data.weights, &weights_path)?;

    let provenance = args
        .dgp
        .provenance("simulate", seed, from_entropy)
        .field("output_prefix", &args.output_prefix);
    provenance.print_header();

    let variables: Vec<&str> = data.points.variables().map(|(n, _)| n).collect();
    println!("Simulated dataset");
    println!("  family      {}", dgp.family);
    println!("  sites       {}", data.points.n());
    println!("  variables   {}", variables.join(", "));
    println!("  data        {}", display_path(&data_path));
    println!("  weights     {}  (rook contiguity, row-standardized)", display_path(&weights_path));

    if let Some(path) = &args.json {
        provenance.write_json(
            path,
            json!({
                "dgp": dgp,
                "n": data.points.n(),
                "variables": variables,
                "data_file": display_path(&data_path),
                "weights_file": display_path(&weights_path),
            }),
        )?;
    }
    Ok(())
}

#[derive(Args)]
pub struct RecoverArgs {
    #[command(flatten)]
    pub dgp: DgpArgs,
    /// Number of replications; each uses base seed + replication index.
    #[arg(long, default_value_t = 20)]
    pub seeds: usize,
    /// Also write the report as JSON to this file.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

pub fn recover(args: RecoverArgs) -> CliResult {
    let (seed, from_entropy) = resolve_seed(args.dgp.seed);
    let dgp = args.dgp.dgp(seed);
    let report = simulate::recovery_experiment(&dgp, &args.dgp.weights_spec(), args.seeds)?;

    let provenance = args
        .dgp
        .provenance("recover", seed, from_entropy)
        .field("seeds", args.seeds);
    provenance.print_header();

    println!(
        "Parameter recovery: {} on a {}x{} lattice, {} replications",
        report.family, args.dgp.lattice.0, args.dgp.lattice.1, report.seeds_requested
    );
    println!();
    println!(
        "  {:<14} {:>10} {:>12} {:>12} {:>10} {:>10} {:>9}",
        "parameter", "truth", "mean est.", "bias", "MAE", "RMSE", "coverage"
    );
    for p in &report.parameters {
        let coverage = p
            .coverage
            .map(|c| format!("{c:.2}"))
            .unwrap_or_else(|| "-".into());
        println!(
            "  {:<14} {:>10} {:>12} {:>12} {:>10} {:>10} {:>9}",
            p.name,
            format!("{:.4}", p.truth),
            num(p.mean_estimate),
            num(p.bias),
            num(p.mae),
            num(p.rmse),
            coverage
        );
    }
    println!();
    println!(
        "  replications fitted  {} of {}",
        report.seeds_succeeded, report.seeds_requested
    );
    for failure in report.failures.iter().take(5) {
        println!("  seed {} failed: {}", failure.seed, failure.message);
    }
    if report.failures.len() > 5 {
        println!("  … and {} more failures", report.failures.len() - 5);
    }

    if let Some(path) = &args.json {
        provenance.write_json(
            path,
            json!({
                "dgp": dgp,
                "recovery": report,
            }),
        )?;
    }
    Ok(())
}
