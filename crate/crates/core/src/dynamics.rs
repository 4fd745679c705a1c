//! Exact event-driven simulation of the immigration-emigration process.
//!
//! Direct-method Gillespie: the holding time is exponential with rate
//! `B(γ) + D(γ)`, where `B(γ) = ∫_T b⁺ + |γ| A⁺` is the total immigration rate
//! and `D(γ) = Σ_x E⁻(x, γ∖x)` the total emigration rate. Per-particle death
//! rates are cached and updated incrementally on each event (only neighbours
//! within the `a⁻` cutoff change); a Fenwick tree over the cached rates gives
//! O(log n) death selection.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::configuration::{Configuration, PointId, Position};
use crate::error::{arg, Error, Result};
use crate::kernels::{Kernel, ModelParams};

/// Default cap on events per replicate.
pub const DEFAULT_EVENT_CAP: u64 = 100_000_000;

/// Events between from-scratch checks of the death-rate cache.
pub const DRIFT_CHECK_INTERVAL: u64 = 10_000;

/// Relative tolerance of the death-rate cache against recomputation.
pub const DRIFT_TOLERANCE: f64 = 1e-9;

fn kernel_sum(cfg: &Configuration, k: &Kernel, x: &Position, skip: Option<usize>) -> f64 {
    if k.is_zero() {
        return 0.0;
    }
    let mut sum = 0.0;
    let rc = k.cutoff();
    if rc <= cfg.cell_side() {
        cfg.for_each_within(x, rc, skip, |_, d| sum += k.profile(d));
    } else {
        let w = cfg.window();
        for (slot, p) in cfg.positions().iter().enumerate() {
            if Some(slot) != skip {
                sum += k.profile(w.distance(x, p));
            }
        }
    }
    sum
}

/// `E⁺(x, γ) = b⁺(x) + Σ_{y∈γ} a⁺(x − y)`.
pub fn immigration_rate_at(x: &Position, cfg: &Configuration, p: &ModelParams) -> f64 {
    p.b_plus().value_at(x, p.window()) + kernel_sum(cfg, p.a_plus(), x, None)
}

/// `E⁻(x, γ) = b⁻(x) + Σ_{y∈γ} a⁻(x − y)`; pass the configuration without `x`.
pub fn emigration_rate_at(x: &Position, cfg_without_x: &Configuration, p: &ModelParams) -> f64 {
    p.b_minus().value_at(x, p.window()) + kernel_sum(cfg_without_x, p.a_minus(), x, None)
}

fn emigration_rate_of_slot(cfg: &Configuration, p: &ModelParams, slot: usize) -> f64 {
    let x = cfg.positions()[slot];
    p.b_minus().value_at(&x, p.window()) + kernel_sum(cfg, p.a_minus(), &x, Some(slot))
}

/// Draws a birth location with density `E⁺(·, γ) / B(γ)` on the torus.
pub fn sample_birth_location<R: Rng + ?Sized>(cfg: &Configuration, p: &ModelParams, rng: &mut R) -> Result<Position> {
    let background = p.background_birth_mass();
    let total = background + cfg.len() as f64 * p.attraction_mass();
    if !(total > 0.0) {
        return arg("birth requested with zero total immigration rate");
    }
    let w = p.window();
    if rng.random::<f64>() * total < background {
        let b = p.b_plus();
        if b.modulation().is_none() {
            return Ok(w.uniform(rng));
        }
        let sup = b.sup_norm();
        loop {
            let x = w.uniform(rng);
            if rng.random::<f64>() * sup <= b.value_at(&x, w) {
                return Ok(x);
            }
        }
    }
    let parent = cfg.positions()[rng.random_range(0..cfg.len())];
    let r = p.a_plus().sample_radius(rng.random::<f64>());
    let mut x = parent;
    match w.dimension() {
        1 => {
            x.0[0] += if rng.random::<bool>() { r } else { -r };
        }
        _ => {
            let phi = 2.0 * PI * rng.random::<f64>();
            x.0[0] += r * phi.cos();
            x.0[1] += r * phi.sin();
        }
    }
    Ok(w.wrap(x))
}

/// Binary indexed tree over nonnegative rates.
#[derive(Debug, Clone, Default)]
struct FenwickTree {
    tree: Vec<f64>,
}

impl FenwickTree {
    fn build(values: &[f64]) -> Self {
        let cap = values.len().next_power_of_two().max(16);
        let mut tree = vec![0.0; cap + 1];
        for (i, v) in values.iter().enumerate() {
            tree[i + 1] = *v;
        }
        for i in 1..=cap {
            let j = i + (i & i.wrapping_neg());
            if j <= cap {
                tree[j] += tree[i];
            }
        }
        FenwickTree { tree }
    }

    fn capacity(&self) -> usize {
        self.tree.len() - 1
    }

    fn add(&mut self, index: usize, delta: f64) {
        let mut i = index + 1;
        while i < self.tree.len() {
            self.tree[i] += delta;
            i += i & i.wrapping_neg();
        }
    }

    fn total(&self) -> f64 {
        let mut i = self.capacity();
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let mut pos = 0;
        let mut step = self.capacity();
        while step > 0 {
            let next = pos + step;
            if next < self.tree.len() && self.tree[next] <= target {
                pos = next;
                target -= self.tree[next];
            }
            step >>= 1;
        }
        pos
    }
}

/// Per-particle death rates (slot-aligned with the configuration) and the
/// fixed pieces of the total birth rate.
#[derive(Debug, Clone)]
pub struct RateCache {
    death: Vec<f64>,
    tree: FenwickTree,
    background_birth_mass: f64,
    attraction_mass: f64,
}

impl RateCache {
    /// Computes every death rate from scratch.
    pub fn build(cfg: &Configuration, p: &ModelParams) -> Self {
        let death: Vec<f64> = (0..cfg.len()).map(|s| emigration_rate_of_slot(cfg, p, s)).collect();
        let tree = FenwickTree::build(&death);
        RateCache {
            death,
            tree,
            background_birth_mass: p.background_birth_mass(),
            attraction_mass: p.attraction_mass(),
        }
    }

    /// Cached `E⁻(x, γ∖x)` for the point in `slot`.
    pub fn death_rate(&self, slot: usize) -> f64 {
        self.death[slot]
    }

    pub fn death_rates(&self) -> &[f64] {
        &self.death
    }

    /// `D(γ)`; exactly zero for the empty configuration.
    pub fn total_death_rate(&self) -> f64 {
        if self.death.is_empty() {
            0.0
        } else {
            self.tree.total().max(0.0)
        }
    }

    /// `B(γ) = ∫_T b⁺ + |γ| A⁺`.
    pub fn total_birth_rate(&self) -> f64 {
        self.background_birth_mass + self.death.len() as f64 * self.attraction_mass
    }

    pub fn background_birth_mass(&self) -> f64 {
        self.background_birth_mass
    }

    pub fn attraction_mass(&self) -> f64 {
        self.attraction_mass
    }

    fn add(&mut self, slot: usize, delta: f64) {
        let old = self.death[slot];
        let new = (old + delta).max(0.0);
        self.death[slot] = new;
        self.tree.add(slot, new - old);
    }

    fn push(&mut self, rate: f64) {
        let slot = self.death.len();
        self.death.push(rate);
        if slot >= self.tree.capacity() {
            self.tree = FenwickTree::build(&self.death);
        } else {
            self.tree.add(slot, rate);
        }
    }

    fn swap_remove(&mut self, slot: usize) {
        let last = self.death.len() - 1;
        let removed = self.death[slot];
        if slot != last {
            let moved = self.death[last];
            self.tree.add(slot, moved - removed);
            self.tree.add(last, -moved);
        } else {
            self.tree.add(slot, -removed);
        }
        self.death.swap_remove(slot);
        if self.death.is_empty() {
            self.tree = FenwickTree::build(&[]);
        }
    }

    fn select_death(&self, u: f64) -> usize {
        let total = self.total_death_rate();
        let target = u * total;
        let slot = self.tree.find(target);
        if slot < self.death.len() && self.death[slot] > 0.0 {
            return slot;
        }
        // rounding pushed the search past the live slots
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, r) in self.death.iter().enumerate() {
            if *r > 0.0 {
                last_positive = i;
                acc += r;
                if acc > target {
                    return i;
                }
            }
        }
        last_positive
    }

    fn rebuild_tree(&mut self) {
        self.tree = FenwickTree::build(&self.death);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Birth,
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub time: f64,
    pub position: Position,
    pub point_id: PointId,
}

/// Initial state of a replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialCondition {
    Empty,
    /// `Poisson(κ |T|)` points placed uniformly: the Poisson measure `π_κ` on the window.
    Poisson { kappa: f64 },
    Points { points: Vec<Position> },
}

impl InitialCondition {
    pub fn realize<R: Rng + ?Sized>(&self, p: &ModelParams, rng: &mut R) -> Result<Configuration> {
        let w = *p.window();
        let mut cfg = Configuration::new(w, p.interaction_reach());
        match self {
            InitialCondition::Empty => {}
            InitialCondition::Poisson { kappa } => {
                if !(*kappa >= 0.0) || !kappa.is_finite() {
                    return arg(format!("Poisson intensity {kappa} must be finite and >= 0"));
                }
                let mass = kappa * w.volume();
                let n = if mass > 0.0 {
                    Poisson::new(mass).map_err(|e| Error::Argument(e.to_string()))?.sample(rng) as usize
                } else {
                    0
                };
                for _ in 0..n {
                    let x = w.uniform(rng);
                    cfg.insert(x);
                }
            }
            InitialCondition::Points { points } => {
                for x in points {
                    if x.0.iter().any(|c| !c.is_finite()) {
                        return arg("initial point with non-finite coordinate");
                    }
                    cfg.insert(*x);
                }
            }
        }
        Ok(cfg)
    }
}

/// Seed for replicate `id`: SplitMix64 finalizer over the master seed and id.
pub fn replicate_seed(master_seed: u64, replicate_id: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(master_seed ^ mix(replicate_id))
}

/// One replicate's evolving state.
#[derive(Debug, Clone)]
pub struct Simulation<'p> {
    params: &'p ModelParams,
    cfg: Configuration,
    cache: RateCache,
    rng: ChaCha8Rng,
    time: f64,
    events: u64,
    replicate_id: u64,
}

impl<'p> Simulation<'p> {
    pub fn new(params: &'p ModelParams, cfg: Configuration, seed: u64) -> Result<Self> {
        if cfg.window() != params.window() {
            return arg("configuration window differs from model window");
        }
        if cfg.cell_side() < params.interaction_reach() {
            let pts = cfg.positions().to_vec();
            return Self::new(params, Configuration::from_points(*params.window(), params.interaction_reach(), pts), seed);
        }
        let cache = RateCache::build(&cfg, params);
        Ok(Simulation {
            params,
            cfg,
            cache,
            rng: ChaCha8Rng::seed_from_u64(seed),
            time: 0.0,
            events: 0,
            replicate_id: 0,
        })
    }

    /// Realizes `init` with the replicate's own random stream, then starts the clock.
    pub fn from_initial(params: &'p ModelParams, init: &InitialCondition, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = init.realize(params, &mut rng)?;
        let mut sim = Self::new(params, cfg, seed)?;
        sim.rng = rng;
        Ok(sim)
    }

    fn with_replicate_id(mut self, id: u64) -> Self {
        self.replicate_id = id;
        self
    }

    pub fn configuration(&self) -> &Configuration {
        &self.cfg
    }

    pub fn cache(&self) -> &RateCache {
        &self.cache
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn total_rate(&self) -> f64 {
        self.cache.total_birth_rate() + self.cache.total_death_rate()
    }

    /// Draws the time of the next event, or `None` when `B + D = 0`.
    pub fn next_event_time(&mut self) -> Option<f64> {
        let total = self.total_rate();
        if !(total > 0.0) {
            return None;
        }
        let e: f64 = Exp1.sample(&mut self.rng);
        Some(self.time + e / total)
    }

    /// Fires one event at time `at` (from [`Self::next_event_time`]).
    pub fn fire(&mut self, at: f64) -> Result<Event> {
        let birth = self.cache.total_birth_rate();
        let death = self.cache.total_death_rate();
        let u: f64 = self.rng.random::<f64>() * (birth + death);
        self.time = at;
        self.events += 1;
        let event = if u < birth || death == 0.0 {
            let x = sample_birth_location(&self.cfg, self.params, &mut self.rng)?;
            let id = self.insert(x);
            Event {
                kind: EventKind::Birth,
                time: at,
                position: x,
                point_id: id,
            }
        } else {
            let slot = self.cache.select_death(self.rng.random::<f64>());
            let (id, x) = self.remove_slot(slot);
            Event {
                kind: EventKind::Death,
                time: at,
                position: x,
                point_id: id,
            }
        };
        if self.events.is_multiple_of(DRIFT_CHECK_INTERVAL) {
            self.check_drift()?;
        }
        Ok(event)
    }

    /// One Gillespie step; `None` when the process is absorbed in the empty state.
    pub fn step(&mut self) -> Result<Option<Event>> {
        match self.next_event_time() {
            None => Ok(None),
            Some(t) => self.fire(t).map(Some),
        }
    }

    fn insert(&mut self, x: Position) -> PointId {
        let am = self.params.a_minus();
        let w = self.params.window();
        let mut own = self.params.b_minus().value_at(&x, w);
        if !am.is_zero() {
            let mut touched = Vec::new();
            self.cfg.for_each_within(&x, am.cutoff(), None, |slot, d| {
                touched.push((slot, am.profile(d)));
            });
            for (slot, a) in touched {
                own += a;
                self.cache.add(slot, a);
            }
        }
        let id = self.cfg.insert(x);
        self.cache.push(own);
        id
    }

    fn remove_slot(&mut self, slot: usize) -> (PointId, Position) {
        let am = self.params.a_minus();
        if !am.is_zero() {
            let x = self.cfg.positions()[slot];
            let mut touched = Vec::new();
            self.cfg.for_each_within(&x, am.cutoff(), Some(slot), |s, d| {
                touched.push((s, am.profile(d)));
            });
            for (s, a) in touched {
                self.cache.add(s, -a);
            }
        }
        self.cache.swap_remove(slot);
        self.cfg.remove_slot(slot)
    }

    /// Recomputes every death rate and compares with the cache; resynchronizes
    /// on success.
    pub fn check_drift(&mut self) -> Result<()> {
        let scale = self.params.b_minus().sup_norm() + self.params.a_minus().sup_norm();
        for slot in 0..self.cfg.len() {
            let fresh = emigration_rate_of_slot(&self.cfg, self.params, slot);
            let cached = self.cache.death[slot];
            if (cached - fresh).abs() > DRIFT_TOLERANCE * fresh.abs().max(scale) {
                return Err(Error::RateDrift {
                    replicate: self.replicate_id,
                    point: self.cfg.ids()[slot].0,
                    cached,
                    fresh,
                });
            }
            self.cache.death[slot] = fresh;
        }
        self.cache.rebuild_tree();
        Ok(())
    }

    /// Points with their ids at the current time.
    pub fn snapshot(&self, time: f64) -> Snapshot {
        Snapshot {
            time,
            points: self.cfg.iter().collect(),
        }
    }
}

/// State of one replicate at an observation time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub points: Vec<(PointId, Position)>,
}

impl Snapshot {
    pub fn population(&self) -> usize {
        self.points.len()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Position> {
        self.points.iter().map(|(_, p)| p)
    }
}

/// Run controls for [`run_replicate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub t_end: f64,
    /// Observation times in `[0, t_end]`; sorted internally.
    pub snapshot_times: Vec<f64>,
    pub event_cap: u64,
    pub record_events: bool,
}

impl RunOptions {
    pub fn new(t_end: f64, snapshot_times: Vec<f64>) -> Self {
        RunOptions {
            t_end,
            snapshot_times,
            event_cap: DEFAULT_EVENT_CAP,
            record_events: false,
        }
    }

    fn validate(&self) -> Result<Vec<f64>> {
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            return arg(format!("t_end {} must be finite and >= 0", self.t_end));
        }
        let mut times = self.snapshot_times.clone();
        if times.iter().any(|t| !(*t >= 0.0 && *t <= self.t_end)) {
            return arg("snapshot times must lie in [0, t_end]");
        }
        times.sort_by(f64::total_cmp);
        times.dedup();
        Ok(times)
    }
}

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate_id: u64,
    pub seed: u64,
    pub events: u64,
    pub births: u64,
    pub deaths: u64,
    pub initial_population: usize,
    pub final_population: usize,
    pub final_time: f64,
    pub absorbed_empty: bool,
    #[serde(skip)]
    pub snapshots: Vec<Snapshot>,
    #[serde(skip)]
    pub event_log: Vec<Event>,
}

/// Simulates one replicate up to `t_end`, recording the configured snapshots.
pub fn run_replicate(p: &ModelParams, init: &InitialCondition, opts: &RunOptions, master_seed: u64, replicate_id: u64) -> Result<ReplicateRecord> {
    let times = opts.validate()?;
    let seed = replicate_seed(master_seed, replicate_id);
    let mut sim = Simulation::from_initial(p, init, seed)?.with_replicate_id(replicate_id);
    let mut record = ReplicateRecord {
        replicate_id,
        seed,
        events: 0,
        births: 0,
        deaths: 0,
        initial_population: sim.cfg.len(),
        final_population: 0,
        final_time: opts.t_end,
        absorbed_empty: false,
        snapshots: Vec::with_capacity(times.len()),
        event_log: Vec::new(),
    };
    let mut pending = times.into_iter().peekable();
    loop {
        let next = sim.next_event_time();
        let horizon = next.unwrap_or(f64::INFINITY).min(f64::INFINITY);
        while let Some(&ts) = pending.peek() {
            if ts < horizon {
                record.snapshots.push(sim.snapshot(ts));
                pending.next();
            } else {
                break;
            }
        }
        let Some(t) = next else {
            record.absorbed_empty = true;
            break;
        };
        if t > opts.t_end {
            break;
        }
        if sim.events >= opts.event_cap {
            return Err(Error::ExplosionSuspected {
                replicate: replicate_id,
                cap: opts.event_cap,
                time: sim.time,
            });
        }
        let ev = sim.fire(t)?;
        match ev.kind {
            EventKind::Birth => record.births += 1,
            EventKind::Death => record.deaths += 1,
        }
        if opts.record_events {
            record.event_log.push(ev);
        }
    }
    record.events = sim.events;
    record.final_population = sim.cfg.len();
    Ok(record)
}

/// Runs `replicates` independent replicates on at most `threads` workers
/// (0 = all logical cores). Results are ordered by replicate id and do not
/// depend on the worker count.
pub fn run_ensemble(
    p: &ModelParams,
    init: &InitialCondition,
    opts: &RunOptions,
    master_seed: u64,
    replicates: u64,
    threads: usize,
) -> Result<Vec<ReplicateRecord>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Argument(e.to_string()))?;
    pool.install(|| {
        (0..replicates)
            .into_par_iter()
            .map(|id| run_replicate(p, init, opts, master_seed, id))
            .collect()
    })
}
