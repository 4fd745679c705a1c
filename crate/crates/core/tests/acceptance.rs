//! Acceptance suite: one PASS/FAIL line per criterion.

use std::error::Error;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use migrants::combinatorics::{poisson_mgf, poisson_mgf_series};
use migrants::configuration::{AxisBox, Position, TorusWindow};
use migrants::dynamics::{run_ensemble, ReplicateRecord};
use migrants::estimators::{chi_square_poisson, dispersion_index, subpoisson_certificate, Bootstrap, Verdict};
use migrants::experiment::{run_experiment, ExperimentConfig, Mode};
use migrants::kernels::{Kernel, ModelParams};
use migrants::kinetic::{circular_convolve, integrate, DensityField, IntegrateOptions, KineticModel, Lattice, LatticeKernel, SourceTerm};
use migrants::ktransform::{check_duality, f_theta_eval, moment_identity_check, FiniteFunction, QuadratureGrid, ThetaFunction};
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

type Outcome = Result<(bool, String), Box<dyn Error>>;
type Criterion = (&'static str, fn() -> Outcome);

const BOOT: Bootstrap = Bootstrap { resamples: 1000, seed: 17 };

fn ensemble(preset: &str) -> Result<(ExperimentConfig, ModelParams, Vec<ReplicateRecord>), Box<dyn Error>> {
    let cfg = ExperimentConfig::load(None, Some(preset), &[])?;
    let p = cfg.model()?.params()?;
    let run = cfg.run()?;
    let init = run.initial.condition(p.dimension())?;
    let records = run_ensemble(&p, &init, &run.options(), run.master_seed, run.replicates, run.threads)?;
    Ok((cfg, p, records))
}

fn counts_at(records: &[ReplicateRecord], k: usize, probe: &AxisBox) -> Vec<u64> {
    records.iter().map(|r| r.snapshots[k].positions().filter(|x| probe.contains(x)).count() as u64).collect()
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn noninteracting_equilibrium() -> Outcome {
    let (cfg, p, records) = ensemble("noninteracting")?;
    let run = cfg.run()?;
    let (bp, bm) = (p.b_plus().amplitude(), p.b_minus().amplitude());
    assert!(p.a_plus().is_zero() && p.a_minus().is_zero());
    assert_eq!((p.dimension(), p.window().side(), records.len()), (2, 20.0, 1000));
    assert_eq!(run.t_end, 20.0 / bm);
    let last = run.times().len() - 1;
    let probe = cfg.analysis.probe_boxes(p.window())?[0];
    let counts = counts_at(&records, last, &probe);
    let target = bp / bm * probe.volume();
    let xs: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let (mean, sd) = mean_sd(&xs);
    let z = (mean - target) / (sd / (xs.len() as f64).sqrt());
    let di = dispersion_index(&counts, 0.95, &BOOT)?;
    let gof = chi_square_poisson(&counts, target, 0)?;
    let pass = z.abs() <= 3.0 && di.contains(1.0) && gof.p_value > 0.01;
    Ok((
        pass,
        format!(
            "mean {mean:.3} vs {target} (z = {z:.2}), dispersion {:.3} [{:.3}, {:.3}], GOF p = {:.3}",
            di.value, di.ci_lo, di.ci_hi, gof.p_value
        ),
    ))
}

fn subpoisson_preserved() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for preset in ["full-long", "full-short"] {
        let (cfg, p, records) = ensemble(preset)?;
        let times = cfg.run()?.times();
        assert_eq!(times, [0.0, 1.0, 5.0, 20.0]);
        assert!(records.len() >= 500 && cfg.analysis.n_max == 6);
        let probe = cfg.analysis.probe_boxes(p.window())?[0];
        let mut verdicts = Vec::new();
        for (k, t) in times.iter().enumerate() {
            let cert = subpoisson_certificate(&counts_at(&records, k, &probe), probe.volume(), 6, 0.95, &BOOT)?;
            pass &= cert.verdict == Verdict::Pass;
            let d = cert.dispersion.map_or(f64::NAN, |d| d.value);
            verdicts.push(format!("t={t} {:?} (D {d:.2})", cert.verdict));
        }
        detail.push(format!("{preset}: {}", verdicts.join(", ")));
    }
    Ok((pass, detail.join("; ")))
}

fn contact_clustering() -> Outcome {
    let (cfg, p, records) = ensemble("contact")?;
    assert!(p.b_plus().amplitude() == 0.0 && p.a_minus().is_zero());
    assert!(p.b_minus().amplitude() < p.attraction_mass());
    let last = cfg.run()?.times().len() - 1;
    let probe = cfg.analysis.probe_boxes(p.window())?[0];
    let di = dispersion_index(&counts_at(&records, last, &probe), 0.95, &BOOT)?;
    Ok((
        di.value > 1.5 && di.ci_lo > 1.0,
        format!("final dispersion {:.2} [{:.2}, {:.2}]", di.value, di.ci_lo, di.ci_hi),
    ))
}

fn extinction() -> Outcome {
    let (cfg, p, records) = ensemble("extinction")?;
    let bm = p.b_minus().amplitude();
    assert!(p.b_plus().amplitude() == 0.0 && bm >= p.attraction_mass());
    assert_eq!(cfg.run()?.t_end, 10.0 / bm);
    assert!(records.len() >= 200);
    let r = records.len() as f64;
    let initial = records.iter().map(|x| x.initial_population as f64).sum::<f64>() / r;
    let last = records.iter().map(|x| x.snapshots.last().unwrap().population() as f64).sum::<f64>() / r;
    let ratio = last / initial;
    Ok((ratio < 0.05, format!("mean population {initial:.2} -> {last:.3} ({:.2}%)", 100.0 * ratio)))
}

fn moment_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let b = AxisBox::new(&[2.0, 1.0], &[4.0, 4.0])?;
    let (mut cases, mut mismatches) = (0, 0);
    for count in 0..=12usize {
        for _ in 0..10 {
            let mut gamma: Vec<Position> = (0..count)
                .map(|_| Position::new2(rng.random_range(2.0..4.0), rng.random_range(1.0..4.0)))
                .collect();
            let outside = rng.random_range(0..4);
            gamma.extend((0..outside).map(|_| Position::new2(rng.random_range(5.0..9.0), rng.random_range(0.0..9.0))));
            for n in 1..=8u32 {
                let (lhs, rhs) = moment_identity_check(n as usize, &b, &gamma)?;
                cases += 1;
                if lhs != rhs || lhs != BigUint::from(count).pow(n) {
                    mismatches += 1;
                }
            }
        }
    }
    Ok((mismatches == 0, format!("{cases} cases, {mismatches} mismatches")))
}

fn random_kernel<R: Rng>(rng: &mut R) -> Result<Kernel, Box<dyn Error>> {
    let amp = rng.random_range(0.0..2.0);
    let scale = rng.random_range(0.2..0.5);
    Ok(match rng.random_range(0..3) {
        0 => Kernel::tophat(amp, 4.0 * scale, 2)?,
        1 => Kernel::gaussian(amp, scale, 2)?,
        _ => Kernel::exponential(amp, scale, 2)?,
    })
}

fn duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let quad = QuadratureGrid::new(10)?;
    let window = TorusWindow::new(16.0, 2)?;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let lo = [rng.random_range(0.0..4.0), rng.random_range(0.0..4.0)];
        let b = AxisBox::new(&lo, &[lo[0] + rng.random_range(0.5..3.0), lo[1] + rng.random_range(0.5..3.0)])?;
        let p = ModelParams::new(
            random_kernel(&mut rng)?,
            random_kernel(&mut rng)?,
            Kernel::constant(rng.random_range(0.0..1.0), 2)?,
            Kernel::constant(rng.random_range(0.0..1.0), 2)?,
            window,
        )?;
        let g = FiniteFunction::random_smooth(b, rng.random_range(1..=3), &mut rng);
        let n = rng.random_range(0..=5);
        let gamma: Vec<Position> = (0..n)
            .map(|i| {
                if i == 0 && rng.random::<bool>() {
                    Position::new2(rng.random_range(9.0..15.0), rng.random_range(9.0..15.0))
                } else {
                    Position::new2(rng.random_range(b.lo[0]..b.hi[0]), rng.random_range(b.lo[1]..b.hi[1]))
                }
            })
            .collect();
        worst = worst.max(check_duality(&g, &gamma, &p, &quad)?.residual());
    }
    Ok((worst <= 1e-9, format!("20 instances, max residual {worst:.2e}")))
}

fn poisson_functionals() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let b = AxisBox::new(&[1.0, 1.0], &[3.0, 4.0])?;
    let mut z_worst: f64 = 0.0;
    for (theta, kappa) in [(ThetaFunction::bump(0.6, b)?, 1.0), (ThetaFunction::constant(0.25, b)?, 2.0)] {
        let count = Poisson::new(kappa * b.volume())?;
        let samples: Vec<f64> = (0..20_000)
            .map(|_| {
                let n = count.sample(&mut rng) as usize;
                let gamma: Vec<Position> = (0..n)
                    .map(|_| Position::new2(rng.random_range(b.lo[0]..b.hi[0]), rng.random_range(b.lo[1]..b.hi[1])))
                    .collect();
                f_theta_eval(&theta, &gamma)
            })
            .collect();
        let (mean, sd) = mean_sd(&samples);
        let target = (-kappa * theta.l1_norm()).exp();
        z_worst = z_worst.max((mean - target).abs() / (sd / (samples.len() as f64).sqrt()));
    }
    let mut rel_worst: f64 = 0.0;
    for beta in [-0.5, -0.25, 0.0, 0.25, 0.5] {
        for mass in [0.0, 0.5, 1.0, 2.0, 4.0] {
            if beta < 0.0 && mass > 1.0 {
                continue;
            }
            let closed = poisson_mgf(beta, mass)?;
            rel_worst = rel_worst.max((poisson_mgf_series(beta, mass, 30)? - closed).abs() / closed);
        }
    }
    Ok((
        z_worst <= 3.0 && rel_worst <= 1e-10,
        format!("F^theta max |z| {z_worst:.2}; mgf vs 30-term series max rel. error {rel_worst:.2e}"),
    ))
}

fn kinetic_solver() -> Outcome {
    let cfg = ExperimentConfig::load(None, Some("full-long"), &[])?;
    let p = cfg.model()?.params()?;
    let m = KineticModel::new(&p, 32, SourceTerm::Proportional)?;
    let (ap, am) = (m.attraction_mass(), m.competition_mass());
    let r = p.b_plus().amplitude() - p.b_minus().amplitude() + ap;
    let capacity = r / am;

    let rho0 = 0.2;
    let run = integrate(
        &DensityField::constant(*m.lattice(), rho0),
        &m,
        &IntegrateOptions {
            t_end: 20.0,
            dt: 0.01,
            snapshot_times: vec![],
        },
    )?;
    let logistic = |t: f64| capacity / (1.0 + (capacity / rho0 - 1.0) * (-r * t).exp());
    let traj_err = run
        .trajectory
        .iter()
        .map(|row| (row.max - logistic(row.time)).abs().max((row.min - logistic(row.time)).abs()))
        .fold(0.0, f64::max);

    let side = p.window().side();
    let perturbed = DensityField::from_fn(*m.lattice(), |x| 0.5 * (1.0 + 0.3 * (2.0 * std::f64::consts::PI * x.0[0] / side).cos()));
    let settle = integrate(
        &perturbed,
        &m,
        &IntegrateOptions {
            t_end: 50.0 / am,
            dt: 0.05,
            snapshot_times: vec![],
        },
    )?;
    let fp_err = settle.final_field().values.iter().map(|v| (v - capacity).abs()).fold(0.0, f64::max);

    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let mut conv_err: f64 = 0.0;
    for (d, nodes, side) in [(1, 64, 10.0), (2, 16, 12.0), (2, 24, 9.0)] {
        let lattice = Lattice::new(side, nodes, d)?;
        let window = TorusWindow::new(side, d)?;
        let field = DensityField {
            lattice,
            values: (0..lattice.len()).map(|_| rng.random_range(0.0..2.0)).collect(),
            time: 0.0,
        };
        for kernel in [Kernel::gaussian(1.3, 0.7, d)?, Kernel::tophat(0.8, 1.1, d)?, Kernel::exponential(0.5, 0.4, d)?] {
            let fast = circular_convolve(&field, &LatticeKernel::from_kernel(&kernel, lattice)?)?;
            let h = lattice.cell_volume();
            for i in 0..lattice.len() {
                let xi = lattice.position(i);
                let direct: f64 = (0..lattice.len())
                    .map(|j| kernel.profile(window.distance(&xi, &lattice.position(j))) * h * field.values[j])
                    .sum();
                conv_err = conv_err.max((fast.values[i] - direct).abs());
            }
        }
    }
    Ok((
        traj_err <= 1e-6 && fp_err <= 1e-6 && conv_err <= 1e-9,
        format!("logistic error {traj_err:.2e}, fixed point {capacity:.6} error {fp_err:.2e}, convolution error {conv_err:.2e}"),
    ))
}

fn micro_meso() -> Outcome {
    let dir = tempfile::tempdir()?;
    let mut cfg = ExperimentConfig::load(None, Some("noninteracting"), &[])?;
    cfg.mode = Some(Mode::Compare);
    let linear = run_experiment(&cfg, &dir.path().join("noninteracting"))?;
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("noninteracting/compare.json"))?)?;
    let rows = report["rows"].as_array().ok_or("compare.json has no rows")?;
    let within = rows.iter().all(|r| r["z_closed"].as_f64().is_some_and(|z| z.abs() <= 3.0));

    let mut cfg = ExperimentConfig::load(None, Some("full-long"), &[])?;
    cfg.mode = Some(Mode::Compare);
    run_experiment(&cfg, &dir.path().join("full-long"))?;
    let report: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("full-long/compare.json"))?)?;
    let gap = report["rows"]
        .as_array()
        .ok_or("compare.json has no rows")?
        .iter()
        .filter_map(|r| r["relative_gap"].as_f64())
        .map(f64::abs)
        .fold(0.0, f64::max);
    Ok((
        linear.passed && within && rows.len() == 7 && report["asserted"] == false,
        format!(
            "non-interacting max |z| {:.2} over {} snapshots; full-long reported max relative gap {:.2}%",
            rows.iter().filter_map(|r| r["z_closed"].as_f64()).map(f64::abs).fold(0.0, f64::max),
            rows.len(),
            100.0 * gap
        ),
    ))
}

fn main() {
    let criteria: [Criterion; 9] = [
        ("non-interacting equilibrium", noninteracting_equilibrium),
        ("sub-Poisson preservation", subpoisson_preserved),
        ("contact clustering", contact_clustering),
        ("extinction", extinction),
        ("moment identity", moment_identity),
        ("duality", duality),
        ("Poisson functional identities", poisson_functionals),
        ("kinetic solver", kinetic_solver),
        ("micro/meso comparison", micro_meso),
    ];
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (pass, detail) = match catch_unwind(AssertUnwindSafe(check)) {
            Ok(Ok(r)) => r,
            Ok(Err(e)) => (false, format!("error: {e}")),
            Err(_) => (false, "panicked".to_string()),
        };
        if !pass {
            failures += 1;
        }
        println!(
            "{} {}. {name}: {detail} [{:.1}s]",
            if pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}
