//! Global and local spatial autocorrelation: Moran statistics, analytic
//! moments, z-tests, and permutation tests.
//!
//! # Statistics
//!
//! Global Moran's I for a variable y with weights W:
//!
//! ```text
//! I = (N / s₀) · [Σᵢ Σⱼ wᵢⱼ (yᵢ−ȳ)(yⱼ−ȳ)] / Σᵢ (yᵢ−ȳ)²,    s₀ = Σᵢ Σⱼ wᵢⱼ
//! ```
//!
//! Under the null of no spatial autocorrelation, E[I] = −1/(N−1), and the
//! variance under the normality assumption is
//!
//! ```text
//! Var[I] = [N²·S₁ − N·S₂ + 3s₀²] / [s₀²(N²−1)] − E[I]²
//! S₁ = ½ Σᵢ Σⱼ (wᵢⱼ + wⱼᵢ)²,   S₂ = Σᵢ (wᵢ· + w·ᵢ)²
//! ```
//!
//! The z-statistic (I − E[I])/√Var[I] is referred to the standard normal.
//! (The test is sometimes described as a t-test, but no degrees of freedom
//! accompany that description; since I is asserted to be normal under H₀,
//! the standard normal reference is used and recorded in the report.)
//!
//! The Local Moran index decomposes the global statistic by site:
//!
//! ```text
//! Iᵢ = (yᵢ−ȳ) Σⱼ wᵢⱼ (yⱼ−ȳ)        (the diagonal wᵢᵢ is zero)
//! ```
//!
//! and satisfies the identity Σᵢ Iᵢ = I · s₀ · Σᵢ(yᵢ−ȳ)² / N.
//!
//! # Local moments
//!
//! Significance of Iᵢ is assessed under *conditional* randomization: the
//! value at site i stays put while the remaining N−1 values are permuted
//! among the other sites. Writing uᵢ = yᵢ−ȳ, m = N−1, wᵢ = Σⱼ wᵢⱼ,
//! w2ᵢ = Σⱼ wᵢⱼ², and S = Σₖ uₖ², the exact first two moments of Iᵢ over
//! that distribution are
//!
//! ```text
//! E[Iᵢ]   = −uᵢ²·wᵢ / m
//! Var[Iᵢ] = uᵢ²·(m·w2ᵢ − wᵢ²)·(m·(S−uᵢ²) − uᵢ²) / (m²·(m−1))
//! ```
//!
//! These follow from the moments of a random permutation sum
//! Σⱼ aⱼ·v_π(j): its expectation is m·ā·v̄ and its variance
//! Σ(a−ā)²·Σ(v−v̄)²/(m−1), with aⱼ the weights of row i and v the deviations
//! of the other sites (which sum to −uᵢ). The unit tests pin both formulas
//! against exhaustive enumeration of all permutations at small N.
//!
//! The z-based local p-values are approximations — the Local Moran index is
//! known not to be normal even when y is — so every [`LisaReport`] carries
//! [`LISA_NORMALITY_CAVEAT`] and the permutation test is available as the
//! preferred decision tool.
//!
//! # Permutation tests
//!
//! Draw d of a permutation test is generated from an independent ChaCha20
//! stream `(seed, stream = d)` (for the local statistic, site i uses stream
//! `i·draws + d`), so results are reproducible bit-for-bit for a fixed seed
//! and independent of evaluation order or chunking.

use ndarray::{Array1, Array2, ArrayView1};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Result, SpatialError};
use crate::weights::SpatialWeights;

/// Name of the random number generator used by permutation tests, recorded
/// in reports so runs can be reproduced across platforms.
pub const RNG_ALGORITHM: &str = "ChaCha20 (one independent stream per draw, Fisher-Yates shuffle)";

/// Caveat attached to every normal-approximation LISA report.
pub const LISA_NORMALITY_CAVEAT: &str = "The Local Moran index does not follow a normal \
    distribution even for normally distributed data (Boots & Tiefelsdorf); the z-based \
    p-values are approximations. Prefer the conditional permutation test when decisions \
    matter.";

/// Tail choice for significance tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// H_a: I ≠ E[I] — spatial autocorrelation of either sign.
    TwoSided,
    /// H_a: I > E[I] — positive spatial autocorrelation.
    Greater,
    /// H_a: I < E[I] — negative spatial autocorrelation.
    Less,
}

impl Alternative {
    pub fn token(self) -> &'static str {
        match self {
            Alternative::TwoSided => "two-sided",
            Alternative::Greater => "greater",
            Alternative::Less => "less",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "two-sided" => Some(Alternative::TwoSided),
            "greater" => Some(Alternative::Greater),
            "less" => Some(Alternative::Less),
            _ => None,
        }
    }
}

impl std::fmt::Display for Alternative {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// Result of a global Moran significance test.
#[derive(Debug, Clone, Serialize)]
pub struct MoranReport {
    pub n: usize,
    /// Observed statistic.
    pub i: f64,
    /// E[I] = −1/(N−1).
    pub expected: f64,
    /// Normality-assumption variance of I under H₀.
    pub variance: f64,
    /// (I − E[I]) / √Var[I], referred to the standard normal.
    pub z: f64,
    pub p_value: f64,
    pub alternative: Alternative,
    /// Sum of all weights, s₀.
    pub s0: f64,
}

/// Per-site record of a LISA analysis.
#[derive(Debug, Clone, Serialize)]
pub struct LisaSite {
    pub index: usize,
    /// Observed Iᵢ.
    pub i_value: f64,
    /// Conditional-randomization E[Iᵢ].
    pub expected: f64,
    /// Conditional-randomization Var[Iᵢ].
    pub variance: f64,
    /// None when the site is non-testable (zero conditional variance).
    pub z: Option<f64>,
    /// Two-sided normal-approximation p-value; None when non-testable.
    pub p_value: Option<f64>,
    pub significant: bool,
    /// True when the conditional distribution of Iᵢ is degenerate — an
    /// isolate row, a site whose own deviation is zero, or no variation
    /// among the remaining values.
    pub non_testable: bool,
}

/// Local Moran analysis across all sites.
#[derive(Debug, Clone, Serialize)]
pub struct LisaReport {
    pub sites: Vec<LisaSite>,
    pub alpha: f64,
    pub bonferroni: bool,
    /// The per-site significance threshold actually applied: α/N under the
    /// Bonferroni adjustment (N counts all observations, including
    /// non-testable ones), α otherwise.
    pub threshold: f64,
    /// Global Moran's I of the same variable, for the Σᵢ Iᵢ identity.
    pub global_i: f64,
    pub s0: f64,
    pub caveat: &'static str,
}

// ---------------------------------------------------------------------------
// Global statistics
// ---------------------------------------------------------------------------

/// Shared validation: dimensions, sample size, weight mass, and variance.
/// Returns the deviations u = y − ȳ and their sum of squares.
fn deviations(y: &ArrayView1<f64>, w: &SpatialWeights, min_n: usize) -> Result<(Array1<f64>, f64)> {
    let n = y.len();
    if w.n() != n {
        return Err(SpatialError::DimensionMismatch {
            context: "variable length vs weights order".into(),
            expected: w.n(),
            actual: n,
        });
    }
    if n < min_n {
        return Err(SpatialError::SampleTooSmall { n, min: min_n });
    }
    if w.total() == 0.0 {
        return Err(SpatialError::EmptyWeights);
    }
    let mean = y.sum() / n as f64;
    let u = y.mapv(|v| v - mean);
    let ssd = u.dot(&u);
    if ssd == 0.0 {
        return Err(SpatialError::ZeroVariance { name: "y".into() });
    }
    Ok((u, ssd))
}

/// Global Moran's I. Returns the statistic together with the weight
/// normalizer s₀ (callers frequently need both).
pub fn global_moran(y: &ArrayView1<f64>, w: &SpatialWeights) -> Result<(f64, f64)> {
    let (u, ssd) = deviations(y, w, 3)?;
    let n = y.len() as f64;
    let s0 = w.total();
    let lag = w.values().dot(&u);
    let num = u.dot(&lag);
    Ok(((n / s0) * num / ssd, s0))
}

/// E[I] and Var[I] under the null of no spatial autocorrelation (normality
/// assumption). Requires N ≥ 4 — the variance expression degenerates below.
pub fn moran_moments(w: &SpatialWeights) -> Result<(f64, f64)> {
    let n = w.n();
    if n < 4 {
        return Err(SpatialError::SampleTooSmall { n, min: 4 });
    }
    let s0 = w.total();
    if s0 == 0.0 {
        return Err(SpatialError::EmptyWeights);
    }
    let nf = n as f64;
    let wv = w.values();

    // S₁ = ½·ΣΣ(wᵢⱼ+wⱼᵢ)², S₂ = Σᵢ(wᵢ· + w·ᵢ)².
    let mut s1 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let t = wv[[i, j]] + wv[[j, i]];
            s1 += t * t;
        }
    }
    s1 *= 0.5;
    let row_sums = wv.sum_axis(ndarray::Axis(1));
    let col_sums = wv.sum_axis(ndarray::Axis(0));
    let s2: f64 = (0..n)
        .map(|i| {
            let t = row_sums[i] + col_sums[i];
            t * t
        })
        .sum();

    let expected = -1.0 / (nf - 1.0);
    let variance = (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / (s0 * s0 * (nf * nf - 1.0))
        - expected * expected;
    if variance <= 0.0 {
        return Err(SpatialError::DegenerateWeights(format!(
            "null variance of Moran's I is not positive ({variance:e}); \
             the weights admit no variation under permutation"
        )));
    }
    Ok((expected, variance))
}

/// Global Moran z-test against the chosen alternative.
pub fn moran_test(
    y: &ArrayView1<f64>,
    w: &SpatialWeights,
    alternative: Alternative,
) -> Result<MoranReport> {
    let (i, s0) = global_moran(y, w)?;
    let (expected, variance) = moran_moments(w)?;
    let z = (i - expected) / variance.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_value = match alternative {
        Alternative::TwoSided => 2.0 * normal.sf(z.abs()),
        Alternative::Greater => normal.sf(z),
        Alternative::Less => normal.cdf(z),
    };
    Ok(MoranReport {
        n: y.len(),
        i,
        expected,
        variance,
        z,
        p_value: p_value.clamp(0.0, 1.0),
        alternative,
        s0,
    })
}

// ---------------------------------------------------------------------------
// Local statistics
// ---------------------------------------------------------------------------

/// Local Moran index per site: Iᵢ = (yᵢ−ȳ)·Σⱼ wᵢⱼ(yⱼ−ȳ). Isolates get
/// Iᵢ = 0 (an empty sum).
pub fn local_moran(y: &ArrayView1<f64>, w: &SpatialWeights) -> Result<Array1<f64>> {
    let (u, _ssd) = deviations(y, w, 3)?;
    let lag = w.values().dot(&u);
    Ok(&u * &lag)
}

/// LISA significance analysis with conditional-randomization moments.
///
/// `alpha` is the nominal level; with `bonferroni` the per-site threshold
/// becomes α/N, counting every observation. Sites whose conditional
/// distribution is degenerate are flagged `non_testable` instead of tested.
pub fn lisa_test(
    y: &ArrayView1<f64>,
    w: &SpatialWeights,
    alpha: f64,
    bonferroni: bool,
) -> Result<LisaReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SpatialError::InvalidArgument(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let (u, ssd) = deviations(y, w, 4)?;
    let n = y.len();
    let nf = n as f64;
    let m = nf - 1.0;
    let wv = w.values();
    let lag = wv.dot(&u);
    let (global, s0) = global_moran(y, w)?;

    let threshold = if bonferroni { alpha / nf } else { alpha };
    let normal = Normal::new(0.0, 1.0).expect("standard normal");

    let mut sites = Vec::with_capacity(n);
    for i in 0..n {
        let ui = u[i];
        let i_value = ui * lag[i];
        let wi: f64 = wv.row(i).sum();
        let w2i: f64 = wv.row(i).iter().map(|&v| v * v).sum();
        let expected = -(ui * ui) * wi / m;
        // Exact conditional-permutation variance; see the module docs.
        let variance = ui * ui * (m * w2i - wi * wi) * (m * (ssd - ui * ui) - ui * ui)
            / (m * m * (m - 1.0));
        let testable = variance > 0.0;
        let (z, p_value) = if testable {
            let z = (i_value - expected) / variance.sqrt();
            (Some(z), Some((2.0 * normal.sf(z.abs())).clamp(0.0, 1.0)))
        } else {
            (None, None)
        };
        sites.push(LisaSite {
            index: i,
            i_value,
            expected,
            variance: variance.max(0.0),
            z,
            p_value,
            significant: p_value.map(|p| p < threshold).unwrap_or(false),
            non_testable: !testable,
        });
    }

    Ok(LisaReport {
        sites,
        alpha,
        bonferroni,
        threshold,
        global_i: global,
        s0,
        caveat: LISA_NORMALITY_CAVEAT,
    })
}

// ---------------------------------------------------------------------------
// Permutation tests
// ---------------------------------------------------------------------------

/// Which statistic a permutation test resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PermutationStatistic {
    Global,
    Local,
}

/// Empirical reference distribution summary for one statistic.
#[derive(Debug, Clone, Serialize)]
pub struct PermutationSummary {
    /// Observed value of the statistic on the original arrangement.
    pub observed: f64,
    /// Analytic expectation used as the center of the two-sided criterion.
    pub expected: f64,
    /// Mean of the permutation distribution.
    pub perm_mean: f64,
    /// Variance of the permutation distribution.
    pub perm_var: f64,
    /// (1 + #{|I_perm − E| ≥ |I_obs − E|}) / (1 + draws).
    pub pseudo_p_two_sided: f64,
    /// (1 + #{I_perm ≥ I_obs}) / (1 + draws).
    pub pseudo_p_greater: f64,
    /// (1 + #{I_perm ≤ I_obs}) / (1 + draws).
    pub pseudo_p_less: f64,
}

/// Result of [`permutation_test`].
#[derive(Debug, Clone, Serialize)]
pub struct PermutationReport {
    pub statistic: PermutationStatistic,
    pub draws: usize,
    pub seed: u64,
    /// RNG provenance, fixed to [`RNG_ALGORITHM`].
    pub rng_algorithm: &'static str,
    /// Present when `statistic` is Global.
    pub global: Option<PermutationSummary>,
    /// Present when `statistic` is Local; one summary per site.
    pub local: Option<Vec<PermutationSummary>>,
}

/// Minimum number of draws accepted by [`permutation_test`].
pub const MIN_DRAWS: usize = 999;

fn summarize(
    observed: f64,
    expected: f64,
    perm_values_sum: f64,
    perm_values_sumsq: f64,
    count_two_sided: usize,
    count_ge: usize,
    count_le: usize,
    draws: usize,
) -> PermutationSummary {
    let df = draws as f64;
    let mean = perm_values_sum / df;
    let var = perm_values_sumsq / df - mean * mean;
    PermutationSummary {
        observed,
        expected,
        perm_mean: mean,
        perm_var: var.max(0.0),
        pseudo_p_two_sided: (1.0 + count_two_sided as f64) / (1.0 + df),
        pseudo_p_greater: (1.0 + count_ge as f64) / (1.0 + df),
        pseudo_p_less: (1.0 + count_le as f64) / (1.0 + df),
    }
}

/// Monte Carlo permutation test for the global or local Moran statistic.
///
/// Global: all N values are shuffled each draw. Local: site i's value is
/// held fixed and the remaining N−1 values are shuffled (conditional
/// randomization), matching the moments used by [`lisa_test`].
///
/// Deterministic for a fixed seed; draw d uses its own ChaCha20 stream so
/// the result does not depend on evaluation order.
pub fn permutation_test(
    y: &ArrayView1<f64>,
    w: &SpatialWeights,
    statistic: PermutationStatistic,
    draws: usize,
    seed: u64,
) -> Result<PermutationReport> {
    if draws < MIN_DRAWS {
        return Err(SpatialError::InsufficientDraws {
            draws,
            min: MIN_DRAWS,
        });
    }
    let (u, ssd) = deviations(y, w, 4)?;
    let n = y.len();
    let nf = n as f64;

    let report = match statistic {
        PermutationStatistic::Global => {
            let (observed, s0) = global_moran(y, w)?;
            let expected = -1.0 / (nf - 1.0);
            let scale = nf / (s0 * ssd); // I = scale · uᵀWu for any rearrangement of u
            let wv = w.values();

            // Evaluate draws in blocks: gather permuted deviations into the
            // rows of Z, then one GEMM gives all the lags of the block.
            const BLOCK: usize = 128;
            let mut z = Array2::<f64>::zeros((BLOCK, n));
            let mut scratch: Vec<f64> = u.to_vec();
            let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
            let (mut c2, mut cge, mut cle) = (0usize, 0usize, 0usize);
            let obs_dev = (observed - expected).abs();

            let mut done = 0usize;
            while done < draws {
                let b = BLOCK.min(draws - done);
                for k in 0..b {
                    let mut rng = ChaCha20Rng::seed_from_u64(seed);
                    rng.set_stream((done + k) as u64);
                    scratch.copy_from_slice(u.as_slice().expect("contiguous"));
                    scratch.shuffle(&mut rng);
                    z.row_mut(k).assign(&ArrayView1::from(&scratch[..]));
                }
                // lags = Z·Wᵀ, so row k holds (W·z_k)ᵀ.
                let lags = z.slice(ndarray::s![..b, ..]).dot(&wv.t());
                for k in 0..b {
                    let i_perm = scale * z.row(k).dot(&lags.row(k));
                    sum += i_perm;
                    sumsq += i_perm * i_perm;
                    if (i_perm - expected).abs() >= obs_dev {
                        c2 += 1;
                    }
                    if i_perm >= observed {
                        cge += 1;
                    }
                    if i_perm <= observed {
                        cle += 1;
                    }
                }
                done += b;
            }
            PermutationReport {
                statistic,
                draws,
                seed,
                rng_algorithm: RNG_ALGORITHM,
                global: Some(summarize(
                    observed, expected, sum, sumsq, c2, cge, cle, draws,
                )),
                local: None,
            }
        }
        PermutationStatistic::Local => {
            let wv = w.values();
            let lag = wv.dot(&u);
            let m = nf - 1.0;
            let mut locals = Vec::with_capacity(n);

            for i in 0..n {
                let ui = u[i];
                let observed = ui * lag[i];
                let wi: f64 = wv.row(i).sum();
                let expected = -(ui * ui) * wi / m;
                // Sparse view of row i with slots into the "others" array
                // (position j maps to slot j, or j−1 once past i).
                let row: Vec<(f64, usize)> = (0..n)
                    .filter(|&j| j != i && wv[[i, j]] != 0.0)
                    .map(|j| (wv[[i, j]], if j < i { j } else { j - 1 }))
                    .collect();
                let others: Vec<f64> = (0..n).filter(|&j| j != i).map(|j| u[j]).collect();

                let mut scratch = others.clone();
                let (mut sum, mut sumsq) = (0.0f64, 0.0f64);
                let (mut c2, mut cge, mut cle) = (0usize, 0usize, 0usize);
                let obs_dev = (observed - expected).abs();
                for d in 0..draws {
                    let mut rng = ChaCha20Rng::seed_from_u64(seed);
                    rng.set_stream((i * draws + d) as u64);
                    scratch.copy_from_slice(&others);
                    scratch.shuffle(&mut rng);
                    let mut acc = 0.0;
                    for &(wij, slot) in &row {
                        acc += wij * scratch[slot];
                    }
                    let i_perm = ui * acc;
                    sum += i_perm;
                    sumsq += i_perm * i_perm;
                    if (i_perm - expected).abs() >= obs_dev {
                        c2 += 1;
                    }
                    if i_perm >= observed {
                        cge += 1;
                    }
                    if i_perm <= observed {
                        cle += 1;
                    }
                }
                locals.push(summarize(
                    observed, expected, sum, sumsq, c2, cge, cle, draws,
                ));
            }
            PermutationReport {
                statistic,
                draws,
                seed,
                rng_algorithm: RNG_ALGORITHM,
                global: None,
                local: Some(locals),
            }
        }
    };
    Ok(report)
}
