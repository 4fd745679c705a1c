//! Ensemble statistics: box-count laws, moments, dispersion, pair
//! correlation, and the sub-Poisson certificate.
//!
//! An ensemble is one configuration per replicate at a common time. All
//! confidence intervals are percentile bootstrap intervals over replicates.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::combinatorics::{poisson_count_pmf, subpoisson_pmf_bound, touchard};
use crate::configuration::{AxisBox, Position, TorusWindow};
use crate::error::{arg, Error, Result};

/// Highest moment order handled by [`empirical_moment`].
pub const MAX_MOMENT_ORDER: usize = 8;

/// Minimum ensemble size for [`subpoisson_certificate`].
pub const CERTIFICATE_MIN_REPLICATES: usize = 200;

const LIMITATION: &str = "finite-sample surrogate: the sub-Poisson property concerns exact probabilities for every n; \
     this report only tests n <= n_max against sampling error";

/// Percentile bootstrap settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bootstrap {
    pub resamples: usize,
    pub seed: u64,
}

impl Default for Bootstrap {
    fn default() -> Self {
        Bootstrap { resamples: 1000, seed: 0 }
    }
}

impl Bootstrap {
    /// Percentile interval of `stat` over resamples of `0..len`; resamples on
    /// which the statistic is not finite are dropped.
    pub fn interval(&self, len: usize, confidence: f64, mut stat: impl FnMut(&[usize]) -> f64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut idx = vec![0usize; len];
        let mut values = Vec::with_capacity(self.resamples);
        for _ in 0..self.resamples {
            for i in idx.iter_mut() {
                *i = rng.random_range(0..len);
            }
            let v = stat(&idx);
            if v.is_finite() {
                values.push(v);
            }
        }
        if values.is_empty() {
            return (f64::NAN, f64::NAN);
        }
        values.sort_by(f64::total_cmp);
        let alpha = 1.0 - confidence;
        (quantile(&values, alpha / 2.0), quantile(&values, 1.0 - alpha / 2.0))
    }
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn check_confidence(confidence: f64) -> Result<()> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return arg(format!("confidence {confidence} must lie in (0, 1)"));
    }
    Ok(())
}

/// A point estimate with its confidence interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl Estimate {
    pub fn contains(&self, x: f64) -> bool {
        self.ci_lo <= x && x <= self.ci_hi
    }
}

/// `N_Λ` for every configuration of the ensemble.
pub fn box_counts<C: AsRef<[Position]>>(ensemble: &[C], b: &AxisBox) -> Vec<u64> {
    ensemble
        .iter()
        .map(|c| c.as_ref().iter().filter(|x| b.contains(x)).count() as u64)
        .collect()
}

/// Empirical law of a box count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountLaw {
    /// `histogram[n]` = number of replicates with `N_Λ = n`.
    pub histogram: Vec<u64>,
    pub replicates: u64,
}

impl CountLaw {
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        if counts.is_empty() {
            return arg("count law of an empty ensemble");
        }
        let max = *counts.iter().max().unwrap() as usize;
        let mut histogram = vec![0u64; max + 1];
        for &c in counts {
            histogram[c as usize] += 1;
        }
        Ok(CountLaw {
            histogram,
            replicates: counts.len() as u64,
        })
    }

    pub fn pmf(&self, n: usize) -> f64 {
        self.histogram.get(n).copied().unwrap_or(0) as f64 / self.replicates as f64
    }

    pub fn moment(&self, order: usize) -> f64 {
        self.histogram
            .iter()
            .enumerate()
            .map(|(n, &h)| h as f64 * (n as f64).powi(order as i32))
            .sum::<f64>()
            / self.replicates as f64
    }

    pub fn mean(&self) -> f64 {
        self.moment(1)
    }
}

/// Empirical law of `N_Λ` across the ensemble.
pub fn count_law<C: AsRef<[Position]>>(ensemble: &[C], b: &AxisBox) -> Result<CountLaw> {
    CountLaw::from_counts(&box_counts(ensemble, b))
}

/// Sample mean of `Nⁿ` with a bootstrap interval.
pub fn empirical_moment(counts: &[u64], n: usize, confidence: f64, boot: &Bootstrap) -> Result<Estimate> {
    if n > MAX_MOMENT_ORDER {
        return arg(format!("moment order {n} above {MAX_MOMENT_ORDER}"));
    }
    check_confidence(confidence)?;
    if counts.is_empty() {
        return arg("moment of an empty ensemble");
    }
    if n == 0 {
        return Ok(Estimate {
            value: 1.0,
            ci_lo: 1.0,
            ci_hi: 1.0,
        });
    }
    let powers: Vec<f64> = counts.iter().map(|&c| (c as f64).powi(n as i32)).collect();
    let value = powers.iter().sum::<f64>() / powers.len() as f64;
    let (ci_lo, ci_hi) = boot.interval(powers.len(), confidence, |idx| idx.iter().map(|&i| powers[i]).sum::<f64>() / idx.len() as f64);
    Ok(Estimate { value, ci_lo, ci_hi })
}

fn dispersion_of(counts: impl Iterator<Item = f64> + Clone) -> f64 {
    let (mut n, mut s) = (0.0, 0.0);
    for c in counts.clone() {
        n += 1.0;
        s += c;
    }
    let mean = s / n;
    if n < 2.0 || mean == 0.0 {
        return f64::NAN;
    }
    let var = counts.map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    var / mean
}

/// `Var(N) / Mean(N)` with a bootstrap interval; an error when the mean is zero.
pub fn dispersion_index(counts: &[u64], confidence: f64, boot: &Bootstrap) -> Result<Estimate> {
    check_confidence(confidence)?;
    if counts.len() < 2 {
        return arg("dispersion index needs at least two replicates");
    }
    let value = dispersion_of(counts.iter().map(|&c| c as f64));
    if value.is_nan() {
        return Err(Error::Statistics("dispersion index undefined: mean count is zero".into()));
    }
    let (ci_lo, ci_hi) = boot.interval(counts.len(), confidence, |idx| dispersion_of(idx.iter().map(|&i| counts[i] as f64)));
    Ok(Estimate { value, ci_lo, ci_hi })
}

/// Pearson goodness-of-fit of counts against a Poisson law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodnessOfFit {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    /// Lower edges of the pooled classes; the last class is open-ended.
    pub class_edges: Vec<u64>,
}

/// Chi-square test against `Poisson(mass)`, pooling adjacent classes until
/// each expects at least 5 observations. `fitted` parameters reduce the
/// degrees of freedom.
pub fn chi_square_poisson(counts: &[u64], mass: f64, fitted: usize) -> Result<GoodnessOfFit> {
    if counts.is_empty() {
        return arg("goodness of fit on an empty ensemble");
    }
    if !(mass > 0.0) {
        return arg(format!("Poisson mass {mass} must be positive"));
    }
    let total = counts.len() as f64;
    let law = CountLaw::from_counts(counts)?;
    let mut edges = Vec::new();
    let mut expected = Vec::new();
    let mut observed = Vec::new();
    let (mut e_acc, mut o_acc, mut start) = (0.0, 0.0, 0u64);
    let mut cdf = 0.0;
    let mut n = 0u64;
    loop {
        let p = poisson_count_pmf(n, mass);
        cdf += p;
        e_acc += p * total;
        o_acc += law.histogram.get(n as usize).copied().unwrap_or(0) as f64;
        let tail = (1.0 - cdf).max(0.0) * total;
        if e_acc >= 5.0 && tail >= 5.0 {
            edges.push(start);
            expected.push(e_acc);
            observed.push(o_acc);
            e_acc = 0.0;
            o_acc = 0.0;
            start = n + 1;
        } else if tail < 5.0 && n as f64 > mass {
            break;
        }
        n += 1;
    }
    // open tail class: everything from `start` upward
    let tail_obs = counts.iter().filter(|&&c| c >= start).count() as f64;
    let tail_exp = total - expected.iter().sum::<f64>();
    if tail_exp < 5.0 && !expected.is_empty() {
        let last = expected.len() - 1;
        expected[last] += tail_exp;
        observed[last] += tail_obs;
    } else {
        edges.push(start);
        expected.push(tail_exp);
        observed.push(tail_obs);
    }
    if expected.len() < fitted + 2 {
        return Err(Error::Statistics(format!("only {} classes after pooling", expected.len())));
    }
    let statistic: f64 = observed.iter().zip(&expected).map(|(o, e)| (o - e).powi(2) / e).sum();
    let dof = expected.len() - 1 - fitted;
    let p_value = 1.0 - ChiSquared::new(dof as f64).map_err(|e| Error::Statistics(e.to_string()))?.cdf(statistic);
    Ok(GoodnessOfFit {
        statistic,
        degrees_of_freedom: dof,
        p_value,
        class_edges: edges,
    })
}

/// Distance bins `[edges[k], edges[k+1])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadialBins {
    edges: Vec<f64>,
}

impl RadialBins {
    pub fn new(edges: Vec<f64>) -> Result<Self> {
        if edges.len() < 2 || edges[0] < 0.0 || edges.windows(2).any(|w| !(w[1] > w[0])) {
            return arg("bin edges must be nonnegative and strictly increasing");
        }
        Ok(RadialBins { edges })
    }

    pub fn uniform(r_max: f64, count: usize) -> Result<Self> {
        if count == 0 || !(r_max > 0.0) {
            return arg("uniform bins need a positive range and count");
        }
        Self::new((0..=count).map(|k| r_max * k as f64 / count as f64).collect())
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn len(&self) -> usize {
        self.edges.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn locate(&self, r: f64) -> Option<usize> {
        if r < self.edges[0] || r >= *self.edges.last().unwrap() {
            return None;
        }
        Some(self.edges.partition_point(|&e| e <= r) - 1)
    }
}

/// Measure of `{y : r1 ≤ |y| < r2}` on the torus, valid for `r2 ≤ L/2`.
pub fn shell_measure(r1: f64, r2: f64, dimension: usize) -> f64 {
    match dimension {
        1 => 2.0 * (r2 - r1),
        _ => PI * (r2 * r2 - r1 * r1),
    }
}

/// One bin of the pair-correlation estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairBin {
    pub r_lo: f64,
    pub r_hi: f64,
    pub r_mid: f64,
    pub pairs: u64,
    pub g: Estimate,
}

/// `ĝ(r)`: observed pair counts per bin over the count expected for a
/// uniform pattern with the same number of points in each replicate.
pub fn pair_correlation<C: AsRef<[Position]>>(
    ensemble: &[C],
    window: &TorusWindow,
    bins: &RadialBins,
    confidence: f64,
    boot: &Bootstrap,
) -> Result<Vec<PairBin>> {
    check_confidence(confidence)?;
    let d = window.dimension();
    if *bins.edges.last().unwrap() > window.side() / 2.0 {
        return arg(format!("pair-correlation bins extend beyond L/2 = {}", window.side() / 2.0));
    }
    if ensemble.is_empty() {
        return arg("pair correlation of an empty ensemble");
    }
    let k = bins.len();
    let shells: Vec<f64> = (0..k).map(|j| shell_measure(bins.edges[j], bins.edges[j + 1], d) / window.volume()).collect();
    let mut pairs = vec![vec![0u64; k]; ensemble.len()];
    let mut weights = vec![0.0; ensemble.len()];
    for (rep, cfg) in ensemble.iter().enumerate() {
        let pts = cfg.as_ref();
        let n = pts.len() as f64;
        weights[rep] = n * (n - 1.0) / 2.0;
        for i in 0..pts.len() {
            for j in i + 1..pts.len() {
                if let Some(b) = bins.locate(window.distance(&pts[i], &pts[j])) {
                    pairs[rep][b] += 1;
                }
            }
        }
    }
    let ratio = |idx: &mut dyn Iterator<Item = usize>, bin: usize| {
        let (mut num, mut den) = (0.0, 0.0);
        for r in idx {
            num += pairs[r][bin] as f64;
            den += weights[r];
        }
        num / (den * shells[bin])
    };
    (0..k)
        .map(|bin| {
            let value = ratio(&mut (0..ensemble.len()), bin);
            let boot = Bootstrap {
                seed: boot.seed.wrapping_add(bin as u64),
                ..*boot
            };
            let (ci_lo, ci_hi) = boot.interval(ensemble.len(), confidence, |idx| ratio(&mut idx.iter().copied(), bin));
            Ok(PairBin {
                r_lo: bins.edges[bin],
                r_hi: bins.edges[bin + 1],
                r_mid: 0.5 * (bins.edges[bin] + bins.edges[bin + 1]),
                pairs: pairs.iter().map(|p| p[bin]).sum(),
                g: Estimate { value, ci_lo, ci_hi },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verdict {
    Pass,
    Fail,
}

/// Per-`n` comparison against the Poisson reference with fitted intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRow {
    pub n: usize,
    pub probability: Estimate,
    /// `n! (e/n)ⁿ π_κ̂(N_Λ = n)`.
    pub probability_bound: f64,
    pub probability_violation: bool,
    pub moment: Estimate,
    /// `T_n(κ̂ V)`.
    pub poisson_moment: f64,
    pub moment_violation: bool,
}

/// Sub-Poisson diagnostic for one box at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub verdict: Verdict,
    pub replicates: usize,
    pub box_volume: f64,
    pub kappa_hat: f64,
    pub mean_count: f64,
    pub confidence: f64,
    /// Number of one-sided comparisons sharing the error budget.
    pub comparisons: usize,
    /// Two-sided level of each interval after the correction.
    pub per_comparison_confidence: f64,
    pub rows: Vec<CertificateRow>,
    pub dispersion: Option<Estimate>,
    pub dispersion_violation: bool,
    pub limitation: String,
}

impl Certificate {
    pub fn violations(&self) -> impl Iterator<Item = (usize, &'static str)> + '_ {
        self.rows
            .iter()
            .flat_map(|r| {
                let p = r.probability_violation.then_some((r.n, "probability"));
                let m = r.moment_violation.then_some((r.n, "moment"));
                p.into_iter().chain(m)
            })
            .chain(self.dispersion_violation.then_some((2, "dispersion")))
    }
}

/// Compares box-count probabilities and moments with the Poisson reference
/// at `κ̂ = mean / V`. A violation is an interval lying entirely above its
/// reference; the error budget `1 − confidence` is split evenly (Bonferroni)
/// over all comparisons for `n = 1..=n_max` plus the dispersion index.
pub fn subpoisson_certificate(counts: &[u64], box_volume: f64, n_max: usize, confidence: f64, boot: &Bootstrap) -> Result<Certificate> {
    check_confidence(confidence)?;
    if counts.len() < CERTIFICATE_MIN_REPLICATES {
        return Err(Error::Statistics(format!(
            "{} replicates, the certificate needs at least {CERTIFICATE_MIN_REPLICATES}",
            counts.len()
        )));
    }
    if n_max == 0 || n_max > MAX_MOMENT_ORDER {
        return arg(format!("n_max {n_max} outside 1..={MAX_MOMENT_ORDER}"));
    }
    if !(box_volume > 0.0) {
        return arg("box volume must be positive");
    }
    let law = CountLaw::from_counts(counts)?;
    let mean = law.mean();
    let kappa_hat = mean / box_volume;
    let mass = kappa_hat * box_volume;
    let comparisons = 2 * n_max + 1;
    let level = 1.0 - (1.0 - confidence) / comparisons as f64;

    let mut rows = Vec::with_capacity(n_max);
    for n in 1..=n_max {
        let indicator: Vec<f64> = counts.iter().map(|&c| if c as usize == n { 1.0 } else { 0.0 }).collect();
        let pboot = Bootstrap {
            seed: boot.seed.wrapping_add(2 * n as u64),
            ..*boot
        };
        let (plo, phi) = pboot.interval(counts.len(), level, |idx| idx.iter().map(|&i| indicator[i]).sum::<f64>() / idx.len() as f64);
        let probability = Estimate {
            value: law.pmf(n),
            ci_lo: plo,
            ci_hi: phi,
        };
        let probability_bound = if kappa_hat > 0.0 {
            subpoisson_pmf_bound(n as u64, kappa_hat, box_volume)?
        } else {
            0.0
        };
        let mboot = Bootstrap {
            seed: boot.seed.wrapping_add(2 * n as u64 + 1),
            ..*boot
        };
        let moment = empirical_moment(counts, n, level, &mboot)?;
        let poisson_moment = touchard(n, mass)?;
        rows.push(CertificateRow {
            n,
            probability,
            probability_bound,
            probability_violation: probability.ci_lo > probability_bound,
            moment,
            poisson_moment,
            moment_violation: moment.ci_lo > poisson_moment * (1.0 + 1e-12),
        });
    }
    let dispersion = if mean > 0.0 {
        Some(dispersion_index(counts, level, boot)?)
    } else {
        None
    };
    let dispersion_violation = dispersion.is_some_and(|d| d.ci_lo > 1.0);
    let any = dispersion_violation || rows.iter().any(|r| r.probability_violation || r.moment_violation);
    Ok(Certificate {
        verdict: if any { Verdict::Fail } else { Verdict::Pass },
        replicates: counts.len(),
        box_volume,
        kappa_hat,
        mean_count: mean,
        confidence,
        comparisons,
        per_comparison_confidence: level,
        rows,
        dispersion,
        dispersion_violation,
        limitation: LIMITATION.into(),
    })
}

/// Summary of one ensemble at one observation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub time: f64,
    pub probe: AxisBox,
    pub replicates: usize,
    pub count_law: CountLaw,
    /// `moments[n]` for `n = 0..=n_max`.
    pub moments: Vec<Estimate>,
    pub dispersion: Option<Estimate>,
    pub mean_population: f64,
}

impl EnsembleStats {
    pub fn compute<C: AsRef<[Position]>>(time: f64, ensemble: &[C], probe: &AxisBox, n_max: usize, confidence: f64, boot: &Bootstrap) -> Result<Self> {
        let counts = box_counts(ensemble, probe);
        let count_law = CountLaw::from_counts(&counts)?;
        let moments = (0..=n_max).map(|n| empirical_moment(&counts, n, confidence, boot)).collect::<Result<Vec<_>>>()?;
        let dispersion = match dispersion_index(&counts, confidence, boot) {
            Ok(d) => Some(d),
            Err(Error::Statistics(_)) => None,
            Err(_) if counts.len() < 2 => None,
            Err(e) => return Err(e),
        };
        let mean_population = ensemble.iter().map(|c| c.as_ref().len() as f64).sum::<f64>() / ensemble.len() as f64;
        Ok(EnsembleStats {
            time,
            probe: *probe,
            replicates: ensemble.len(),
            count_law,
            moments,
            dispersion,
            mean_population,
        })
    }
}
