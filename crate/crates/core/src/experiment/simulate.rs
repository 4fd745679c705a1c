use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::output::{csv_hash, csv_reader, Output};
use super::ExperimentConfig;
use crate::configuration::{AxisBox, Position};
use crate::dynamics::{replicate_seed, run_ensemble, EventKind, ReplicateRecord};
use crate::error::{Error, Result};
use crate::estimators::{
    box_counts, chi_square_poisson, pair_correlation, subpoisson_certificate, Bootstrap, Certificate, EnsembleStats, GoodnessOfFit, RadialBins,
    Verdict, CERTIFICATE_MIN_REPLICATES,
};
use crate::kernels::ModelParams;

#[derive(Serialize)]
struct ReplicatesReport<'a> {
    replicates: usize,
    events: u64,
    births: u64,
    deaths: u64,
    absorbed_empty: usize,
    records: &'a [ReplicateRecord],
}

#[derive(Serialize)]
struct ProbeReport {
    probe: AxisBox,
    stats: EnsembleStats,
    /// Against `Poisson(mean count)`, one fitted parameter.
    goodness_of_fit: Option<GoodnessOfFit>,
    certificate: Option<Certificate>,
}

#[derive(Serialize)]
struct TimeReport {
    time: f64,
    mean_population: f64,
    population_se: f64,
    mean_density: f64,
    probes: Vec<ProbeReport>,
    pair_correlation: Option<String>,
}

#[derive(Serialize)]
struct StatsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    source_config_hash: Option<String>,
    replicates: usize,
    snapshots: Vec<TimeReport>,
}

fn coords(p: &Position, d: usize) -> impl Iterator<Item = String> + '_ {
    p.0[..d].iter().map(f64::to_string)
}

fn axis_header(d: usize) -> impl Iterator<Item = &'static str> {
    ["x1", "x2"].into_iter().take(d)
}

pub(super) fn simulate(cfg: &ExperimentConfig, o: &mut Output) -> Result<(bool, Vec<String>)> {
    let model = cfg.model()?;
    let run = cfg.run()?;
    let p = model.params()?;
    let d = model.dimension;
    let init = run.initial.condition(d)?;
    let records = run_ensemble(&p, &init, &run.options(), run.master_seed, run.replicates, run.threads)?;

    o.json(
        "replicates.json",
        &ReplicatesReport {
            replicates: records.len(),
            events: records.iter().map(|r| r.events).sum(),
            births: records.iter().map(|r| r.births).sum(),
            deaths: records.iter().map(|r| r.deaths).sum(),
            absorbed_empty: records.iter().filter(|r| r.absorbed_empty).count(),
            records: &records,
        },
    )?;

    let header: Vec<&str> = ["replicate_id", "time", "point_id"].into_iter().chain(axis_header(d)).collect();
    let mut snaps = o.csv("snapshots.csv", &header)?;
    let mut pops = o.csv("populations.csv", &["replicate_id", "time", "population"])?;
    for r in &records {
        for s in &r.snapshots {
            pops.write_record([r.replicate_id.to_string(), s.time.to_string(), s.population().to_string()])?;
            for (id, x) in &s.points {
                let row = [r.replicate_id.to_string(), s.time.to_string(), id.0.to_string()].into_iter().chain(coords(x, d));
                snaps.write_record(row)?;
            }
        }
    }
    snaps.flush()?;
    pops.flush()?;

    if run.record_events {
        let header: Vec<&str> = ["time", "kind", "point_id"].into_iter().chain(axis_header(d)).collect();
        for r in &records {
            let mut w = o.csv(&format!("events/replicate_{}.csv", r.replicate_id), &header)?;
            for ev in &r.event_log {
                let kind = match ev.kind {
                    EventKind::Birth => "birth",
                    EventKind::Death => "death",
                };
                let row = [ev.time.to_string(), kind.to_string(), ev.point_id.0.to_string()].into_iter().chain(coords(&ev.position, d));
                w.write_record(row)?;
            }
            w.flush()?;
        }
    }

    let times = run.times();
    let ensembles: Vec<Vec<Vec<Position>>> = (0..times.len())
        .map(|k| records.iter().map(|r| r.snapshots[k].positions().copied().collect()).collect())
        .collect();
    let mut summary = vec![format!(
        "simulated {} replicates, {} events",
        records.len(),
        records.iter().map(|r| r.events).sum::<u64>()
    )];
    summary.extend(analyze_ensembles(cfg, &p, &times, &ensembles, None, o)?);
    Ok((true, summary))
}

#[derive(Deserialize)]
struct PopulationRow {
    replicate_id: u64,
    time: f64,
    population: usize,
}

#[derive(Deserialize)]
struct SnapshotRow {
    replicate_id: u64,
    time: f64,
    #[allow(dead_code)]
    point_id: u64,
    x1: f64,
    #[serde(default)]
    x2: Option<f64>,
}

fn stored(msg: impl Into<String>) -> Error {
    Error::Config {
        key: "analysis.input".into(),
        message: msg.into(),
    }
}

pub(super) fn analyze(cfg: &ExperimentConfig, o: &mut Output) -> Result<(bool, Vec<String>)> {
    let p = cfg.model()?.params()?;
    let d = p.dimension();
    let dir = cfg.analysis.input.clone().unwrap_or_else(|| o.dir.clone());
    let pop_path = dir.join("populations.csv");
    let snap_path = dir.join("snapshots.csv");
    let source_hash = csv_hash(&pop_path)?;

    let rows: Vec<PopulationRow> = csv_reader(&pop_path)?.deserialize().collect::<std::result::Result<_, _>>()?;
    let mut times: Vec<f64> = rows.iter().map(|r| r.time).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let ids: Vec<u64> = rows.iter().map(|r| r.replicate_id).collect::<BTreeSet<_>>().into_iter().collect();
    if ids.is_empty() {
        return Err(stored(format!("{} holds no rows", pop_path.display())));
    }
    let locate = |rid: u64, t: f64| -> Result<(usize, usize)> {
        let k = times.binary_search_by(|x| x.total_cmp(&t)).map_err(|_| stored(format!("time {t} missing from populations.csv")))?;
        let r = ids.binary_search(&rid).map_err(|_| stored(format!("replicate {rid} missing from populations.csv")))?;
        Ok((k, r))
    };
    let mut expected = vec![vec![None; ids.len()]; times.len()];
    for row in &rows {
        let (k, r) = locate(row.replicate_id, row.time)?;
        expected[k][r] = Some(row.population);
    }
    let mut ensembles: Vec<Vec<Vec<Position>>> = vec![vec![Vec::new(); ids.len()]; times.len()];
    for row in csv_reader(&snap_path)?.deserialize() {
        let row: SnapshotRow = row?;
        let (k, r) = locate(row.replicate_id, row.time)?;
        let x = match (d, row.x2) {
            (1, None) => Position::new1(row.x1),
            (2, Some(x2)) => Position::new2(row.x1, x2),
            _ => return Err(stored(format!("snapshot coordinates do not match dimension {d}"))),
        };
        ensembles[k][r].push(x);
    }
    for (k, per_time) in expected.iter().enumerate() {
        for (r, n) in per_time.iter().enumerate() {
            match n {
                None => return Err(stored(format!("replicate {} has no record at time {}", ids[r], times[k]))),
                Some(n) if *n != ensembles[k][r].len() => {
                    return Err(stored(format!(
                        "replicate {} at time {}: population {} but {} stored points",
                        ids[r],
                        times[k],
                        n,
                        ensembles[k][r].len()
                    )))
                }
                _ => {}
            }
        }
    }
    let mut summary = vec![format!("analyzed {} replicates at {} times from {}", ids.len(), times.len(), dir.display())];
    summary.extend(analyze_ensembles(cfg, &p, &times, &ensembles, source_hash, o)?);
    Ok((true, summary))
}

fn analyze_ensembles(
    cfg: &ExperimentConfig,
    p: &ModelParams,
    times: &[f64],
    ensembles: &[Vec<Vec<Position>>],
    source_config_hash: Option<String>,
    o: &mut Output,
) -> Result<Vec<String>> {
    let a = &cfg.analysis;
    let window = p.window();
    let probes = a.probe_boxes(window)?;
    let boot = Bootstrap {
        resamples: a.bootstrap_resamples,
        seed: replicate_seed(cfg.run()?.master_seed, u64::MAX),
    };
    let bins = match a.r_bins {
        0 => None,
        n => Some(RadialBins::uniform(a.r_max.unwrap_or(window.side() / 2.0), n)?),
    };
    let mut summary = Vec::new();
    let mut snapshots = Vec::with_capacity(times.len());
    for (k, (&time, ens)) in times.iter().zip(ensembles).enumerate() {
        let r = ens.len() as f64;
        let sizes: Vec<f64> = ens.iter().map(|c| c.len() as f64).collect();
        let mean = sizes.iter().sum::<f64>() / r;
        let var = if ens.len() > 1 {
            sizes.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (r - 1.0)
        } else {
            0.0
        };
        let se = (var / r).sqrt();
        let mut line = format!("t={time}: mean population {mean:.3} (SE {se:.3})");
        let mut reports = Vec::with_capacity(probes.len());
        for (j, probe) in probes.iter().enumerate() {
            let stats = EnsembleStats::compute(time, ens, probe, a.n_max, a.confidence, &boot)?;
            let counts = box_counts(ens, probe);
            let mean_count = stats.count_law.mean();
            let goodness_of_fit = match chi_square_poisson(&counts, mean_count, 1) {
                Ok(g) => Some(g),
                Err(Error::Statistics(_) | Error::Argument(_)) => None,
                Err(e) => return Err(e),
            };
            let certificate = if ens.len() >= CERTIFICATE_MIN_REPLICATES {
                Some(subpoisson_certificate(&counts, probe.volume(), a.n_max, a.confidence, &boot)?)
            } else {
                None
            };
            line.push_str(&format!("; probe {j}: mean count {mean_count:.3}"));
            if let Some(di) = stats.dispersion {
                line.push_str(&format!(", dispersion {:.3} [{:.3}, {:.3}]", di.value, di.ci_lo, di.ci_hi));
            }
            if let Some(c) = &certificate {
                let verdict = match c.verdict {
                    Verdict::Pass => "PASS",
                    Verdict::Fail => "FAIL",
                };
                line.push_str(&format!(", certificate {verdict}"));
            }
            reports.push(ProbeReport {
                probe: *probe,
                stats,
                goodness_of_fit,
                certificate,
            });
        }
        let pair_file = match &bins {
            Some(bins) => {
                let name = format!("pair_correlation_{k}.csv");
                let mut w = o.csv(&name, &["r_lo", "r_hi", "r_mid", "pairs", "g_hat", "ci_lo", "ci_hi"])?;
                for b in pair_correlation(ens, window, bins, a.confidence, &boot)? {
                    w.write_record([b.r_lo, b.r_hi, b.r_mid, b.pairs as f64, b.g.value, b.g.ci_lo, b.g.ci_hi].map(|v| v.to_string()))?;
                }
                w.flush()?;
                Some(name)
            }
            None => None,
        };
        summary.push(line);
        snapshots.push(TimeReport {
            time,
            mean_population: mean,
            population_se: se,
            mean_density: mean / window.volume(),
            probes: reports,
            pair_correlation: pair_file,
        });
    }
    o.json(
        "stats.json",
        &StatsReport {
            source_config_hash,
            replicates: ensembles.first().map_or(0, Vec::len),
            snapshots,
        },
    )?;
    Ok(summary)
}
