use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::Serialize;

use super::output::Output;
use super::ExperimentConfig;
use crate::combinatorics::{poisson_mgf, poisson_mgf_series, touchard, StirlingTable};
use crate::configuration::{AxisBox, Position, TorusWindow};
use crate::error::{Error, Result};
use crate::kernels::{Kernel, ModelParams};
use crate::ktransform::{check_duality, f_theta_eval, moment_identity_check, FiniteFunction, QuadratureGrid, ThetaFunction, DUALITY_CAP};

pub const DUALITY_TOLERANCE: f64 = 1e-9;
pub const MGF_TOLERANCE: f64 = 1e-10;
pub const MGF_TERMS: usize = 30;
/// `(β, mass)` pairs on which 30 Touchard terms reach the tolerance.
pub const MGF_PAIRS: [(f64, f64); 7] = [(0.5, 4.0), (0.1, 10.0), (0.25, 10.0), (0.5, 1.0), (0.75, 1.0), (-0.5, 1.0), (0.3, 0.0)];
pub const BELL_MAX_N: usize = 20;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub cases: usize,
    /// Largest observed residual in the check's own units.
    pub worst: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn new(name: &str, cases: usize, worst: f64, threshold: f64) -> Self {
        Check {
            name: name.into(),
            cases,
            worst,
            threshold,
            passed: worst <= threshold,
        }
    }
}

fn random_box<R: Rng + ?Sized>(rng: &mut R) -> AxisBox {
    let lo = [rng.random_range(0.0..3.0), rng.random_range(0.0..3.0)];
    AxisBox::new(&lo, &[lo[0] + rng.random_range(0.5..3.0), lo[1] + rng.random_range(0.5..3.0)]).expect("positive widths")
}

fn points_in<R: Rng + ?Sized>(b: &AxisBox, n: usize, rng: &mut R) -> Vec<Position> {
    (0..n)
        .map(|_| Position::new2(rng.random_range(b.lo[0]..b.hi[0]), rng.random_range(b.lo[1]..b.hi[1])))
        .collect()
}

/// Exact moment identity for every count up to 12 and order up to 8; the
/// residual counts mismatches.
pub fn moment_identity_suite<R: Rng + ?Sized>(rng: &mut R) -> Result<Check> {
    let b = AxisBox::new(&[1.0, 1.0], &[3.0, 2.5])?;
    let (mut cases, mut mismatches) = (0, 0);
    for count in 0..=12 {
        let mut gamma = points_in(&b, count, rng);
        gamma.extend(points_in(&AxisBox::new(&[5.0, 5.0], &[8.0, 8.0])?, 3, rng));
        for n in 1..=8 {
            let (lhs, rhs) = moment_identity_check(n, &b, &gamma)?;
            cases += 1;
            if lhs != rhs {
                mismatches += 1;
            }
        }
    }
    Ok(Check::new("moment identity (exact)", cases, mismatches as f64, 0.0))
}

/// Largest `|L KG − K L̂G|` over randomized functions, configurations, and kernels.
pub fn duality_suite<R: Rng + ?Sized>(instances: usize, nodes: usize, rng: &mut R) -> Result<Check> {
    let quad = QuadratureGrid::new(nodes)?;
    let window = TorusWindow::new(16.0, 2)?;
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let b = random_box(rng);
        let p = ModelParams::new(
            Kernel::gaussian(rng.random_range(0.0..2.0), rng.random_range(0.2..0.5), 2)?,
            Kernel::exponential(rng.random_range(0.0..2.0), rng.random_range(0.2..0.5), 2)?,
            Kernel::constant(rng.random_range(0.0..1.0), 2)?,
            Kernel::constant(rng.random_range(0.0..1.0), 2)?,
            window,
        )?;
        let g = FiniteFunction::random_smooth(b, rng.random_range(1..=3), rng);
        let n = rng.random_range(0..=DUALITY_CAP);
        let mut gamma = points_in(&b, n, rng);
        if n > 0 && rng.random::<bool>() {
            gamma[0] = Position::new2(12.5, 12.5);
        }
        worst = worst.max(check_duality(&g, &gamma, &p, &quad)?.residual());
    }
    Ok(Check::new("duality residual", instances, worst, DUALITY_TOLERANCE))
}

/// Monte Carlo mean of `F^θ` under `π_κ` against `exp(κ ∫θ)`, in standard errors.
pub fn theta_suite<R: Rng + ?Sized>(samples: usize, rng: &mut R) -> Result<Check> {
    let b = AxisBox::new(&[0.0, 0.0], &[2.0, 2.0])?;
    let kappa = 1.5;
    let mut z_worst: f64 = 0.0;
    let thetas = [ThetaFunction::bump(0.5, b)?, ThetaFunction::constant(0.3, b)?];
    for theta in &thetas {
        let count = Poisson::new(kappa * b.volume()).map_err(|e| Error::Argument(e.to_string()))?;
        let values: Vec<f64> = (0..samples)
            .map(|_| {
                let n = count.sample(rng) as usize;
                f_theta_eval(theta, &points_in(&b, n, rng))
            })
            .collect();
        let m = values.len() as f64;
        let mean = values.iter().sum::<f64>() / m;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let se = (var / m).sqrt();
        // θ ≤ 0, so ∫θ = −‖θ‖
        let target = (-kappa * theta.l1_norm()).exp();
        z_worst = z_worst.max((mean - target).abs() / se);
    }
    Ok(Check::new("F^theta Monte Carlo (standard errors)", thetas.len(), z_worst, 3.0))
}

/// Relative error of the truncated Touchard series against the closed-form mgf.
pub fn mgf_suite() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for (beta, mass) in MGF_PAIRS {
        let closed = poisson_mgf(beta, mass)?;
        let series = poisson_mgf_series(beta, mass, MGF_TERMS)?;
        worst = worst.max((closed - series).abs() / closed);
    }
    Ok(Check::new("mgf closed form vs Touchard series (relative)", MGF_PAIRS.len(), worst, MGF_TOLERANCE))
}

/// `T_n(1)` against Bell numbers.
pub fn bell_suite() -> Result<Check> {
    let table = StirlingTable::global();
    let mut worst: f64 = 0.0;
    for n in 0..=BELL_MAX_N {
        let bell: f64 = table.bell(n)?.to_string().parse().expect("decimal integer");
        let t = touchard(n, 1.0)?;
        worst = worst.max((t - bell).abs() / bell);
    }
    Ok(Check::new("Touchard T_n(1) vs Bell (relative)", BELL_MAX_N + 1, worst, 1e-12))
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    seed: u64,
    passed: bool,
    checks: &'a [Check],
}

pub(super) fn verify(cfg: &ExperimentConfig, o: &mut Output) -> Result<(bool, Vec<String>)> {
    let v = &cfg.verify;
    let mut rng = ChaCha8Rng::seed_from_u64(v.seed);
    let checks = vec![
        moment_identity_suite(&mut rng)?,
        duality_suite(v.duality_instances, v.quadrature_nodes, &mut rng)?,
        theta_suite(v.theta_samples, &mut rng)?,
        mgf_suite()?,
        bell_suite()?,
    ];
    let passed = checks.iter().all(|c| c.passed);
    o.json(
        "verify.json",
        &VerifyReport {
            seed: v.seed,
            passed,
            checks: &checks,
        },
    )?;
    let summary = checks
        .iter()
        .map(|c| {
            format!(
                "{} {}: {} cases, worst {:.3e} (threshold {:.1e})",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.cases,
                c.worst,
                c.threshold
            )
        })
        .collect();
    Ok((passed, summary))
}
