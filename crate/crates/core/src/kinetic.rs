//! Mean-field density equation on a periodic lattice.
//!
//! `dρ/dt = (b⁺ − b⁻) ρ + a⁺ * ρ − ρ (a⁻ * ρ)` by default; the additive
//! source variant replaces the first term with `b⁺ − b⁻ ρ`. Convolutions are
//! circular, computed with FFTs of kernels tabulated at node offsets
//! (cell-centre sampling times `h^d`), so lattice masses differ slightly from
//! the continuum masses `A±`.

use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::configuration::{Position, TorusWindow};
use crate::error::{arg, Error, Result};
use crate::kernels::{Kernel, ModelParams};

/// Values below this are treated as stepping failures rather than rounding.
pub const NEGATIVITY_TOLERANCE: f64 = 1e-6;

/// Smallest step before the solver gives up.
pub const MIN_STEP: f64 = 1e-12;

/// Fraction of node-steps that may be clipped over a run.
pub const MAX_CLIP_FRACTION: f64 = 1e-3;

/// Periodic lattice with `nodes` points per axis on `[0, L)^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lattice {
    pub side: f64,
    pub nodes: usize,
    pub dimension: usize,
}

impl Lattice {
    pub fn new(side: f64, nodes: usize, dimension: usize) -> Result<Self> {
        if !(side > 0.0) || nodes == 0 || !(1..=2).contains(&dimension) {
            return arg(format!("invalid lattice: side {side}, {nodes} nodes, d = {dimension}"));
        }
        Ok(Lattice { side, nodes, dimension })
    }

    pub fn for_window(window: &TorusWindow, nodes: usize) -> Result<Self> {
        Self::new(window.side(), nodes, window.dimension())
    }

    pub fn spacing(&self) -> f64 {
        self.side / self.nodes as f64
    }

    /// `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dimension as i32)
    }

    pub fn len(&self) -> usize {
        self.nodes.pow(self.dimension as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Position of flat index `k` (row-major, last axis fastest).
    pub fn position(&self, k: usize) -> Position {
        let h = self.spacing();
        match self.dimension {
            1 => Position::new1(k as f64 * h),
            _ => Position::new2((k / self.nodes) as f64 * h, (k % self.nodes) as f64 * h),
        }
    }

    fn window(&self) -> TorusWindow {
        TorusWindow::new(self.side, self.dimension).expect("lattice geometry was validated")
    }
}

/// Grid values of a density at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub lattice: Lattice,
    pub values: Vec<f64>,
    pub time: f64,
}

#[derive(Serialize, Deserialize)]
struct DumpHeader {
    dims: Vec<usize>,
    h: f64,
    time: f64,
}

impl DensityField {
    pub fn constant(lattice: Lattice, c: f64) -> Self {
        DensityField {
            lattice,
            values: vec![c; lattice.len()],
            time: 0.0,
        }
    }

    pub fn from_fn(lattice: Lattice, f: impl Fn(&Position) -> f64) -> Self {
        DensityField {
            lattice,
            values: (0..lattice.len()).map(|k| f(&lattice.position(k))).collect(),
            time: 0.0,
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `Σ ρ h^d`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lattice.cell_volume()
    }

    /// One JSON header line (`dims`, `h`, `time`) then little-endian `f64`
    /// values in row-major order.
    pub fn write_dump(&self, mut w: impl Write) -> Result<()> {
        let header = DumpHeader {
            dims: vec![self.lattice.nodes; self.lattice.dimension],
            h: self.lattice.spacing(),
            time: self.time,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_dump(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Argument("field dump without header".into()))?;
        let header: DumpHeader = serde_json::from_slice(&bytes[..nl])?;
        let nodes = *header.dims.first().ok_or_else(|| Error::Argument("empty dims".into()))?;
        let lattice = Lattice::new(header.h * nodes as f64, nodes, header.dims.len())?;
        let body = &bytes[nl + 1..];
        if body.len() != 8 * lattice.len() {
            return arg("field dump length does not match its header");
        }
        let values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(DensityField {
            lattice,
            values,
            time: header.time,
        })
    }
}

/// Periodic FFT on the lattice (row-column for `d = 2`).
#[derive(Clone)]
struct LatticeFft {
    lattice: Lattice,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for LatticeFft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LatticeFft").field("lattice", &self.lattice).finish()
    }
}

impl LatticeFft {
    fn new(lattice: Lattice) -> Self {
        let mut planner = FftPlanner::new();
        LatticeFft {
            lattice,
            forward: planner.plan_fft_forward(lattice.nodes),
            inverse: planner.plan_fft_inverse(lattice.nodes),
        }
    }

    fn transform(&self, data: &mut [Complex<f64>], fft: &Arc<dyn Fft<f64>>) {
        let n = self.lattice.nodes;
        fft.process(data);
        if self.lattice.dimension == 2 {
            let mut column = vec![Complex::default(); n];
            for j in 0..n {
                for i in 0..n {
                    column[i] = data[i * n + j];
                }
                fft.process(&mut column);
                for i in 0..n {
                    data[i * n + j] = column[i];
                }
            }
        }
    }

    fn forward(&self, values: &[f64]) -> Vec<Complex<f64>> {
        let mut data: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.transform(&mut data, &self.forward);
        data
    }

    fn inverse(&self, mut data: Vec<Complex<f64>>) -> Vec<f64> {
        self.transform(&mut data, &self.inverse);
        let scale = 1.0 / self.lattice.len() as f64;
        data.iter().map(|c| c.re * scale).collect()
    }
}

/// A kernel tabulated as convolution weights `a(offset) h^d` on a lattice.
#[derive(Debug, Clone)]
pub struct LatticeKernel {
    lattice: Lattice,
    weights: Vec<f64>,
    spectrum: Vec<Complex<f64>>,
    fft: LatticeFft,
}

impl LatticeKernel {
    /// Cell-centre sampling: weight at offset `k` is `a(|x_k|) h^d` with the
    /// torus distance of the node from the origin.
    pub fn from_kernel(k: &Kernel, lattice: Lattice) -> Result<Self> {
        if k.dimension() != lattice.dimension {
            return arg("kernel and lattice dimensions differ");
        }
        let w = lattice.window();
        let origin = Position::origin();
        let hd = lattice.cell_volume();
        let weights = (0..lattice.len()).map(|i| k.profile(w.distance(&lattice.position(i), &origin)) * hd).collect();
        Self::from_weights(lattice, weights)
    }

    /// Explicit weights indexed by lattice offset.
    pub fn from_weights(lattice: Lattice, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != lattice.len() {
            return arg("weight table does not match the lattice");
        }
        let fft = LatticeFft::new(lattice);
        let spectrum = fft.forward(&weights);
        Ok(LatticeKernel {
            lattice,
            weights,
            spectrum,
            fft,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `Â = Σ weights`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// `(a * ρ)_i = Σ_j w_{i−j} ρ_j` on the periodic lattice.
pub fn circular_convolve(field: &DensityField, k: &LatticeKernel) -> Result<DensityField> {
    if field.lattice != k.lattice {
        return arg("field and kernel lattices differ");
    }
    let mut spec = k.fft.forward(&field.values);
    for (s, w) in spec.iter_mut().zip(&k.spectrum) {
        *s *= w;
    }
    Ok(DensityField {
        lattice: field.lattice,
        values: k.fft.inverse(spec),
        time: field.time,
    })
}

/// How the background rates enter the equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTerm {
    /// `(b⁺ − b⁻) ρ`.
    #[default]
    Proportional,
    /// `b⁺ − b⁻ ρ`: the mean-field density of the particle system.
    Additive,
}

/// The equation's coefficients on a lattice.
#[derive(Debug, Clone)]
pub struct KineticModel {
    lattice: Lattice,
    b_plus: Vec<f64>,
    b_minus: Vec<f64>,
    a_plus: Option<LatticeKernel>,
    a_minus: Option<LatticeKernel>,
    source: SourceTerm,
}

impl KineticModel {
    pub fn new(p: &ModelParams, nodes: usize, source: SourceTerm) -> Result<Self> {
        let lattice = Lattice::for_window(p.window(), nodes)?;
        let w = p.window();
        let sample = |k: &Kernel| (0..lattice.len()).map(|i| k.value_at(&lattice.position(i), w)).collect();
        let tab = |k: &Kernel| -> Result<Option<LatticeKernel>> {
            if k.is_zero() {
                Ok(None)
            } else {
                LatticeKernel::from_kernel(k, lattice).map(Some)
            }
        };
        Ok(KineticModel {
            lattice,
            b_plus: sample(p.b_plus()),
            b_minus: sample(p.b_minus()),
            a_plus: tab(p.a_plus())?,
            a_minus: tab(p.a_minus())?,
            source,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn source(&self) -> SourceTerm {
        self.source
    }

    /// Lattice mass `Â⁺`.
    pub fn attraction_mass(&self) -> f64 {
        self.a_plus.as_ref().map_or(0.0, LatticeKernel::mass)
    }

    /// Lattice mass `Â⁻`.
    pub fn competition_mass(&self) -> f64 {
        self.a_minus.as_ref().map_or(0.0, LatticeKernel::mass)
    }

    pub fn a_plus(&self) -> Option<&LatticeKernel> {
        self.a_plus.as_ref()
    }

    pub fn a_minus(&self) -> Option<&LatticeKernel> {
        self.a_minus.as_ref()
    }

    pub fn b_plus(&self) -> &[f64] {
        &self.b_plus
    }

    pub fn b_minus(&self) -> &[f64] {
        &self.b_minus
    }

    /// `0.5 / (sup|b⁺ − b⁻| + Â⁺ + 4 Â⁻ max ρ₀)`, plus `sup b⁻` for the additive form.
    pub fn stability_bound(&self, rho0: &DensityField) -> f64 {
        let mut rate = self.b_plus.iter().zip(&self.b_minus).map(|(p, m)| (p - m).abs()).fold(0.0, f64::max);
        if self.source == SourceTerm::Additive {
            rate = rate.max(self.b_minus.iter().copied().fold(0.0, f64::max));
        }
        rate += self.attraction_mass() + 4.0 * self.competition_mass() * rho0.max().max(0.0);
        if rate > 0.0 {
            0.5 / rate
        } else {
            f64::INFINITY
        }
    }
}

/// Time derivative of the density.
pub fn ke_rhs(rho: &DensityField, m: &KineticModel) -> Result<DensityField> {
    if rho.lattice != m.lattice {
        return arg("field and model lattices differ");
    }
    let mut out: Vec<f64> = match m.source {
        SourceTerm::Proportional => rho.values.iter().zip(m.b_plus.iter().zip(&m.b_minus)).map(|(r, (p, q))| (p - q) * r).collect(),
        SourceTerm::Additive => rho.values.iter().zip(m.b_plus.iter().zip(&m.b_minus)).map(|(r, (p, q))| p - q * r).collect(),
    };
    if let Some(ap) = &m.a_plus {
        for (o, c) in out.iter_mut().zip(circular_convolve(rho, ap)?.values) {
            *o += c;
        }
    }
    if let Some(am) = &m.a_minus {
        for ((o, c), r) in out.iter_mut().zip(circular_convolve(rho, am)?.values).zip(&rho.values) {
            *o -= r * c;
        }
    }
    Ok(DensityField {
        lattice: rho.lattice,
        values: out,
        time: rho.time,
    })
}

/// Step controls for [`integrate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Times at which full fields are kept; `t_end` is always included.
    pub snapshot_times: Vec<f64>,
}

/// One row of the trajectory summary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub time: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl TrajectoryRow {
    fn of(f: &DensityField) -> Self {
        TrajectoryRow {
            time: f.time,
            mean: f.mean(),
            min: f.min(),
            max: f.max(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct KineticRun {
    pub trajectory: Vec<TrajectoryRow>,
    pub snapshots: Vec<DensityField>,
    pub steps: u64,
    pub clipped: u64,
    pub halvings: u32,
    /// Step in use at the end of the run.
    pub final_dt: f64,
    pub attraction_mass: f64,
    pub competition_mass: f64,
}

impl KineticRun {
    pub fn final_field(&self) -> &DensityField {
        self.snapshots.last().expect("a run always keeps the final field")
    }
}

fn axpy(base: &[f64], k: &[f64], a: f64) -> Vec<f64> {
    base.iter().zip(k).map(|(b, k)| b + a * k).collect()
}

fn rk4(rho: &DensityField, m: &KineticModel, dt: f64) -> Result<Vec<f64>> {
    let with = |values: Vec<f64>| DensityField {
        lattice: rho.lattice,
        values,
        time: rho.time,
    };
    let k1 = ke_rhs(rho, m)?.values;
    let k2 = ke_rhs(&with(axpy(&rho.values, &k1, dt / 2.0)), m)?.values;
    let k3 = ke_rhs(&with(axpy(&rho.values, &k2, dt / 2.0)), m)?.values;
    let k4 = ke_rhs(&with(axpy(&rho.values, &k3, dt)), m)?.values;
    Ok((0..rho.values.len())
        .map(|i| rho.values[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Classical RK4 with step halving whenever a step would leave values below
/// `−1e−6`; smaller negatives are clipped to zero and counted.
pub fn integrate(rho0: &DensityField, m: &KineticModel, opts: &IntegrateOptions) -> Result<KineticRun> {
    integrate_from(rho0, m, opts, true)
}

fn integrate_from(rho0: &DensityField, m: &KineticModel, opts: &IntegrateOptions, clamp_to_bound: bool) -> Result<KineticRun> {
    if !(opts.t_end >= 0.0) || !opts.t_end.is_finite() {
        return arg(format!("t_end {} must be finite and >= 0", opts.t_end));
    }
    if !(opts.dt > 0.0) {
        return arg(format!("dt {} must be positive", opts.dt));
    }
    if rho0.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return arg("initial density must be finite and nonnegative");
    }
    let mut stops: Vec<f64> = opts.snapshot_times.iter().copied().filter(|t| *t <= opts.t_end).collect();
    if opts.snapshot_times.iter().any(|t| !(*t >= 0.0 && *t <= opts.t_end)) {
        return arg("snapshot times must lie in [0, t_end]");
    }
    stops.push(opts.t_end);
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut dt = if clamp_to_bound { opts.dt.min(m.stability_bound(rho0)) } else { opts.dt };
    let mut rho = DensityField {
        time: 0.0,
        ..rho0.clone()
    };
    let mut run = KineticRun {
        trajectory: vec![TrajectoryRow::of(&rho)],
        snapshots: Vec::new(),
        steps: 0,
        clipped: 0,
        halvings: 0,
        final_dt: dt,
        attraction_mass: m.attraction_mass(),
        competition_mass: m.competition_mass(),
    };
    for stop in stops {
        while rho.time < stop {
            let remaining = stop - rho.time;
            let h = dt.min(remaining);
            let next = rk4(&rho, m, h)?;
            if next.iter().any(|v| !v.is_finite() || *v < -NEGATIVITY_TOLERANCE) {
                dt = h / 2.0;
                run.halvings += 1;
                if dt < MIN_STEP {
                    return Err(Error::Stiffness { time: rho.time, dt });
                }
                continue;
            }
            rho.values = next;
            for v in rho.values.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                    run.clipped += 1;
                }
            }
            // land exactly on the stop despite rounding in the accumulated time
            rho.time = if h == remaining { stop } else { rho.time + h };
            run.steps += 1;
            run.trajectory.push(TrajectoryRow::of(&rho));
        }
        run.snapshots.push(rho.clone());
    }
    let node_steps = run.steps * rho.lattice.len() as u64;
    if run.clipped as f64 > MAX_CLIP_FRACTION * node_steps as f64 {
        return Err(Error::PersistentClipping {
            clipped: run.clipped,
            node_steps,
        });
    }
    run.final_dt = dt;
    Ok(run)
}

/// Homogeneous equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum FixedPoint {
    /// Positive attracting level.
    Stable(f64),
    /// Decay to zero.
    Extinction,
    /// Growth without competition.
    Unbounded,
}

/// Proportional-source equilibrium `ρ* = (b⁺ − b⁻ + A⁺) / A⁻`, extinction
/// when the net growth `b⁺ − b⁻ + A⁺ ≤ 0`.
pub fn fixed_point_for(b_plus: f64, b_minus: f64, attraction_mass: f64, competition_mass: f64) -> FixedPoint {
    let growth = b_plus - b_minus + attraction_mass;
    if growth <= 0.0 {
        FixedPoint::Extinction
    } else if competition_mass > 0.0 {
        FixedPoint::Stable(growth / competition_mass)
    } else {
        FixedPoint::Unbounded
    }
}

/// Homogeneous equilibrium of the additive-source equation: the nonnegative
/// root of `A⁻ρ² − (A⁺ − b⁻)ρ − b⁺ = 0`.
pub fn additive_fixed_point(b_plus: f64, b_minus: f64, attraction_mass: f64, competition_mass: f64) -> FixedPoint {
    let g = attraction_mass - b_minus;
    let root = if competition_mass > 0.0 {
        let disc = (g * g + 4.0 * competition_mass * b_plus).sqrt();
        if g >= 0.0 {
            (g + disc) / (2.0 * competition_mass)
        } else {
            2.0 * b_plus / (disc - g)
        }
    } else if g < 0.0 {
        b_plus / -g
    } else if b_plus > 0.0 || g > 0.0 {
        return FixedPoint::Unbounded;
    } else {
        0.0
    };
    if root > 0.0 {
        FixedPoint::Stable(root)
    } else {
        FixedPoint::Extinction
    }
}

fn constant_level(k: &Kernel, name: &str) -> Result<f64> {
    if k.modulation().is_some() {
        return arg(format!("{name} must be constant for a homogeneous fixed point"));
    }
    Ok(k.amplitude())
}

/// Fixed point with the continuum masses `A±`; requires constant `b±`.
pub fn homogeneous_fixed_point(p: &ModelParams) -> Result<FixedPoint> {
    Ok(fixed_point_for(
        constant_level(p.b_plus(), "b+")?,
        constant_level(p.b_minus(), "b-")?,
        p.attraction_mass(),
        p.competition_mass(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(ap: Kernel, am: Kernel, bp: f64, bm: f64, side: f64, d: usize) -> ModelParams {
        ModelParams::new(
            ap,
            am,
            Kernel::constant(bp, d).unwrap(),
            Kernel::constant(bm, d).unwrap(),
            TorusWindow::new(side, d).unwrap(),
        )
        .unwrap()
    }

    fn direct_convolve(field: &DensityField, k: &LatticeKernel) -> Vec<f64> {
        let lat = field.lattice;
        let n = lat.nodes;
        let offset = |i: usize, j: usize| -> usize {
            match lat.dimension {
                1 => (i + n - j) % n,
                _ => {
                    let (ia, ib) = (i / n, i % n);
                    let (ja, jb) = (j / n, j % n);
                    ((ia + n - ja) % n) * n + (ib + n - jb) % n
                }
            }
        };
        (0..lat.len())
            .map(|i| (0..lat.len()).map(|j| k.weights()[offset(i, j)] * field.values[j]).sum())
            .collect()
    }

    fn random_field(lat: Lattice, seed: u64) -> DensityField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DensityField {
            lattice: lat,
            values: (0..lat.len()).map(|_| rng.random::<f64>() * 3.0).collect(),
            time: 0.0,
        }
    }

    #[test]
    fn convolution_examples() {
        for d in [1, 2] {
            let lat = Lattice::new(10.0, 32, d).unwrap();
            let k = LatticeKernel::from_kernel(&Kernel::gaussian(1.3, 0.7, d).unwrap(), lat).unwrap();
            let c = DensityField::constant(lat, 2.5);
            let out = circular_convolve(&c, &k).unwrap();
            assert!(out.values.iter().all(|v| (v - 2.5 * k.mass()).abs() < 1e-12));

            let mut spike = vec![0.0; lat.len()];
            spike[0] = 1.0;
            let delta = LatticeKernel::from_weights(lat, spike).unwrap();
            let f = random_field(lat, 1);
            let same = circular_convolve(&f, &delta).unwrap();
            assert!(f.values.iter().zip(&same.values).all(|(a, b)| (a - b).abs() < 1e-10));

            let want = direct_convolve(&f, &k);
            let got = circular_convolve(&f, &k).unwrap();
            let err = want.iter().zip(&got.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-9, "d={d}: {err}");

            let other = Lattice::new(10.0, 16, d).unwrap();
            assert!(circular_convolve(&DensityField::constant(other, 1.0), &k).is_err());
        }
    }

    #[test]
    fn lattice_mass_close_to_continuum() {
        let k = Kernel::gaussian(1.0, 0.8, 2).unwrap();
        let lat = Lattice::new(10.0, 64, 2).unwrap();
        let lk = LatticeKernel::from_kernel(&k, lat).unwrap();
        assert!((lk.mass() - k.l1_norm().unwrap()).abs() < 1e-3);
    }

    #[test]
    fn rhs_examples() {
        let p = params(Kernel::tophat(0.7, 1.0, 2).unwrap(), Kernel::gaussian(0.4, 0.6, 2).unwrap(), 1.2, 0.9, 10.0, 2);
        let m = KineticModel::new(&p, 32, SourceTerm::Proportional).unwrap();
        let zero = ke_rhs(&DensityField::constant(*m.lattice(), 0.0), &m).unwrap();
        assert!(zero.values.iter().all(|v| *v == 0.0));
        let c = 1.7;
        let rhs = ke_rhs(&DensityField::constant(*m.lattice(), c), &m).unwrap();
        let want = (1.2 - 0.9) * c + m.attraction_mass() * c - m.competition_mass() * c * c;
        assert!(rhs.values.iter().all(|v| (v - want).abs() < 1e-12));

        let f = random_field(*m.lattice(), 2);
        let conv_p = direct_convolve(&f, m.a_plus().unwrap());
        let conv_m = direct_convolve(&f, m.a_minus().unwrap());
        let got = ke_rhs(&f, &m).unwrap();
        for i in 0..f.values.len() {
            let r = f.values[i];
            let want = 0.3 * r + conv_p[i] - r * conv_m[i];
            assert!((got.values[i] - want).abs() < 1e-9);
        }

        // scaling ρ by 2 scales the linear part by 2 and the competition part by 4
        let double = DensityField {
            values: f.values.iter().map(|v| 2.0 * v).collect(),
            ..f.clone()
        };
        let r2 = ke_rhs(&double, &m).unwrap();
        for i in 0..f.values.len() {
            let lin = 0.3 * f.values[i] + conv_p[i];
            let quad = f.values[i] * conv_m[i];
            assert!((r2.values[i] - (2.0 * lin - 4.0 * quad)).abs() < 1e-9);
        }

        let add = KineticModel::new(&p, 32, SourceTerm::Additive).unwrap();
        let rhs = ke_rhs(&DensityField::constant(*add.lattice(), 0.0), &add).unwrap();
        assert!(rhs.values.iter().all(|v| (v - 1.2).abs() < 1e-15));
    }

    #[test]
    fn linear_growth_closed_form() {
        let p = params(Kernel::zero(1).unwrap(), Kernel::zero(1).unwrap(), 1.3, 0.8, 10.0, 1);
        let m = KineticModel::new(&p, 16, SourceTerm::Proportional).unwrap();
        let rho0 = DensityField::constant(*m.lattice(), 0.6);
        let run = integrate(
            &rho0,
            &m,
            &IntegrateOptions {
                t_end: 1.0,
                dt: 0.01,
                snapshot_times: vec![],
            },
        )
        .unwrap();
        let want = 0.6 * (0.5f64).exp();
        assert!((run.final_field().mean() - want).abs() < 1e-8 * want);
        assert_eq!(run.final_field().time, 1.0);
    }

    #[test]
    fn logistic_reference() {
        let p = params(Kernel::gaussian(0.9, 0.5, 2).unwrap(), Kernel::tophat(0.6, 0.8, 2).unwrap(), 0.5, 0.7, 8.0, 2);
        let m = KineticModel::new(&p, 16, SourceTerm::Proportional).unwrap();
        let r = 0.5 - 0.7 + m.attraction_mass();
        let a = m.competition_mass();
        let c0 = 0.2;
        let run = integrate(
            &DensityField::constant(*m.lattice(), c0),
            &m,
            &IntegrateOptions {
                t_end: 5.0,
                dt: 0.01,
                snapshot_times: vec![1.0, 2.5],
            },
        )
        .unwrap();
        for row in &run.trajectory {
            let e = (r * row.time).exp();
            let exact = r * c0 * e / (r + a * c0 * (e - 1.0));
            assert!((row.mean - exact).abs() < 1e-6);
            assert!(row.max - row.min < 1e-10);
        }
        assert_eq!(run.snapshots.iter().map(|s| s.time).collect::<Vec<_>>(), vec![1.0, 2.5, 5.0]);
    }

    #[test]
    fn zero_density_is_stationary() {
        let p = params(Kernel::gaussian(0.9, 0.5, 2).unwrap(), Kernel::tophat(0.6, 0.8, 2).unwrap(), 0.5, 0.7, 8.0, 2);
        let m = KineticModel::new(&p, 16, SourceTerm::Proportional).unwrap();
        let run = integrate(
            &DensityField::constant(*m.lattice(), 0.0),
            &m,
            &IntegrateOptions {
                t_end: 3.0,
                dt: 0.05,
                snapshot_times: vec![],
            },
        )
        .unwrap();
        assert!(run.final_field().values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn mass_conserved_without_interaction() {
        let p = params(Kernel::zero(2).unwrap(), Kernel::zero(2).unwrap(), 0.8, 0.8, 8.0, 2);
        let m = KineticModel::new(&p, 16, SourceTerm::Proportional).unwrap();
        let f = random_field(*m.lattice(), 3);
        let run = integrate(
            &f,
            &m,
            &IntegrateOptions {
                t_end: 2.0,
                dt: 0.1,
                snapshot_times: vec![],
            },
        )
        .unwrap();
        assert!((run.final_field().mass() - f.mass()).abs() < 2e-10 * f.mass());
    }

    #[test]
    fn converges_to_fixed_point() {
        let p = params(Kernel::gaussian(1.0, 0.5, 2).unwrap(), Kernel::gaussian(0.8, 0.6, 2).unwrap(), 0.6, 1.0, 8.0, 2);
        let m = KineticModel::new(&p, 16, SourceTerm::Proportional).unwrap();
        let star = match fixed_point_for(0.6, 1.0, m.attraction_mass(), m.competition_mass()) {
            FixedPoint::Stable(s) => s,
            other => panic!("{other:?}"),
        };
        let f = random_field(*m.lattice(), 4);
        let run = integrate(
            &f,
            &m,
            &IntegrateOptions {
                t_end: 50.0 / m.competition_mass(),
                dt: 0.05,
                snapshot_times: vec![],
            },
        )
        .unwrap();
        assert!(run.final_field().values.iter().all(|v| (v - star).abs() < 1e-6));
    }

    #[test]
    fn fixed_point_examples() {
        assert_eq!(fixed_point_for(1.0, 1.0, 2.0, 1.0), FixedPoint::Stable(2.0));
        assert_eq!(fixed_point_for(0.0, 1.0, 0.8, 1.0), FixedPoint::Extinction);
        assert_eq!(fixed_point_for(0.0, 1.0, 1.0, 1.0), FixedPoint::Extinction);
        assert_eq!(fixed_point_for(0.0, 0.5, 1.0, 0.0), FixedPoint::Unbounded);
        assert_eq!(additive_fixed_point(1.0, 0.5, 0.5, 1.0), FixedPoint::Stable(1.0));
        assert_eq!(additive_fixed_point(0.5, 1.0, 0.0, 0.0), FixedPoint::Stable(0.5));
        assert_eq!(additive_fixed_point(0.0, 1.0, 0.5, 1.0), FixedPoint::Extinction);
        assert_eq!(additive_fixed_point(0.0, 0.2, 1.0, 0.5), FixedPoint::Stable(1.6));
        assert_eq!(additive_fixed_point(0.1, 0.2, 1.0, 0.0), FixedPoint::Unbounded);
        match additive_fixed_point(1e-12, 2.0, 1.0, 1.0) {
            FixedPoint::Stable(r) => assert!((r - 1e-12).abs() < 1e-20),
            other => panic!("{other:?}"),
        }
        let p = params(Kernel::tophat(1.0, 1.0, 2).unwrap(), Kernel::zero(2).unwrap(), 0.0, 0.5, 8.0, 2);
        assert_eq!(homogeneous_fixed_point(&p).unwrap(), FixedPoint::Unbounded);
    }

    #[test]
    fn step_halving_and_stiffness() {
        // pure competition: dρ/dt = −Â ρ², and one RK4 step with Â ρ dt = 2 lands below zero
        let p = params(Kernel::zero(1).unwrap(), Kernel::tophat(1.0, 1.0, 1).unwrap(), 0.0, 0.0, 10.0, 1);
        let m = KineticModel::new(&p, 40, SourceTerm::Proportional).unwrap();
        let a = m.competition_mass();
        let rho0 = DensityField::constant(*m.lattice(), 1.0);
        let opts = IntegrateOptions {
            t_end: 4.0,
            dt: 2.0 / a,
            snapshot_times: vec![],
        };
        let run = integrate_from(&rho0, &m, &opts, false).unwrap();
        assert!(run.halvings > 0);
        assert!(run.final_dt < opts.dt);
        let exact = 1.0 / (1.0 + a * 4.0);
        assert!(run.final_field().values.iter().all(|v| (v - exact).abs() < 1e-3));
        assert_eq!(integrate(&rho0, &m, &opts).unwrap().halvings, 0);

        let bad = DensityField::constant(*m.lattice(), f64::NAN);
        assert!(integrate(
            &bad,
            &m,
            &IntegrateOptions {
                t_end: 1.0,
                dt: 0.1,
                snapshot_times: vec![]
            }
        )
        .is_err());
    }

    #[test]
    fn dump_round_trip() {
        let lat = Lattice::new(6.0, 8, 2).unwrap();
        let mut f = random_field(lat, 5);
        f.time = 2.5;
        let mut buf = Vec::new();
        f.write_dump(&mut buf).unwrap();
        let header_end = buf.iter().position(|&b| b == b'\n').unwrap();
        let header: serde_json::Value = serde_json::from_slice(&buf[..header_end]).unwrap();
        assert_eq!(header["dims"], serde_json::json!([8, 8]));
        assert_eq!(DensityField::read_dump(&buf[..]).unwrap(), f);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn field(lattice: Lattice, seed: u64) -> DensityField {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            DensityField {
                lattice,
                values: (0..lattice.len()).map(|_| rng.random_range(0.0..3.0)).collect(),
                time: 0.0,
            }
        }

        proptest! {
            #[test]
            fn convolution_scales_mass(seed in any::<u64>(), amp in 0.1f64..3.0, scale in 0.2f64..1.5, d in 1usize..=2) {
                let lattice = Lattice::new(9.0, if d == 1 { 48 } else { 12 }, d).unwrap();
                let k = LatticeKernel::from_kernel(&Kernel::gaussian(amp, scale, d).unwrap(), lattice).unwrap();
                let f = field(lattice, seed);
                let c = circular_convolve(&f, &k).unwrap();
                let expect = k.mass() * f.values.iter().sum::<f64>();
                prop_assert!((c.values.iter().sum::<f64>() - expect).abs() <= 1e-10 * expect.max(1.0));
            }

            #[test]
            fn convolution_is_linear(seed in any::<u64>(), alpha in -2.0f64..2.0) {
                let lattice = Lattice::new(8.0, 16, 2).unwrap();
                let k = LatticeKernel::from_kernel(&Kernel::exponential(1.0, 0.5, 2).unwrap(), lattice).unwrap();
                let (f, g) = (field(lattice, seed), field(lattice, seed ^ 1));
                let mix = DensityField {
                    values: f.values.iter().zip(&g.values).map(|(a, b)| alpha * a + b).collect(),
                    ..f.clone()
                };
                let (cf, cg, cm) = (circular_convolve(&f, &k).unwrap(), circular_convolve(&g, &k).unwrap(), circular_convolve(&mix, &k).unwrap());
                for i in 0..lattice.len() {
                    prop_assert!((cm.values[i] - alpha * cf.values[i] - cg.values[i]).abs() < 1e-10);
                }
            }

            #[test]
            fn constant_fields_stay_constant(rho in 0.0f64..3.0, bp in 0.0f64..2.0, bm in 0.0f64..2.0, additive in any::<bool>()) {
                let p = params(Kernel::gaussian(0.7, 0.5, 2).unwrap(), Kernel::tophat(0.4, 0.8, 2).unwrap(), bp, bm, 8.0, 2);
                let source = if additive { SourceTerm::Additive } else { SourceTerm::Proportional };
                let m = KineticModel::new(&p, 16, source).unwrap();
                let r = ke_rhs(&DensityField::constant(*m.lattice(), rho), &m).unwrap();
                let expect = match source {
                    SourceTerm::Proportional => (bp - bm) * rho,
                    SourceTerm::Additive => bp - bm * rho,
                } + m.attraction_mass() * rho - m.competition_mass() * rho * rho;
                for v in r.values {
                    prop_assert!((v - expect).abs() < 1e-12 * expect.abs().max(1.0));
                }
            }
        }
    }
}
