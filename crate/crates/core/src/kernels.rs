//! Interaction and background kernels.
//!
//! Interaction kernels (`a⁺`, `a⁻`) are radial profiles `a(|x|)` with closed-form
//! radial mass functions, truncated at the radius where the profile drops below
//! `eps_cut · sup`. Truncation is not renormalized; the lost fraction is kept in
//! [`Kernel::truncated_mass`]. Background kernels (`b⁺`, `b⁻`) are bounded
//! functions of position: a constant level plus at most one cosine mode over the
//! torus.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erf_inv};

use crate::configuration::{Position, TorusWindow};
use crate::error::{arg, Error, Result};

/// Default relative threshold for truncating decaying profiles.
pub const DEFAULT_EPS_CUT: f64 = 1e-6;

/// Number of probe radii used by [`default_probe_radii`].
pub const DEFAULT_PROBE_COUNT: usize = 64;

/// Smallest ratio `a⁻/a⁺` accepted as a positive witness of long competition.
pub const MIN_THETA: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    TopHat,
    Gaussian,
    Exponential,
    ConstantBackground,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::TopHat => "tophat",
            Family::Gaussian => "gaussian",
            Family::Exponential => "exponential",
            Family::ConstantBackground => "constant-background",
        }
    }

    pub fn is_background(self) -> bool {
        matches!(self, Family::ConstantBackground)
    }
}

/// One cosine mode `m · cos(2π k·x / L)` added to a background level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineMode {
    pub amplitude: f64,
    /// Integer wave numbers per axis (the second entry is ignored in d = 1).
    pub wave: [i32; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Kernel {
    family: Family,
    amplitude: f64,
    scale: f64,
    dimension: usize,
    eps_cut: f64,
    cutoff: f64,
    truncated_mass: f64,
    modulation: Option<CosineMode>,
}

fn unit_ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => unreachable!("dimension validated at construction"),
    }
}

fn check_common(amplitude: f64, scale: f64, d: usize) -> Result<()> {
    if !(1..=3).contains(&d) {
        return arg(format!("kernel dimension {d} not in 1..=3"));
    }
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return arg(format!("kernel amplitude {amplitude} must be finite and >= 0"));
    }
    if !(scale > 0.0) || !scale.is_finite() {
        return arg(format!("kernel scale {scale} must be finite and > 0"));
    }
    Ok(())
}

impl Kernel {
    fn interaction(family: Family, amplitude: f64, scale: f64, d: usize, eps_cut: f64) -> Result<Self> {
        check_common(amplitude, scale, d)?;
        if !(0.0..1.0).contains(&eps_cut) {
            return arg(format!("eps_cut {eps_cut} must lie in [0, 1)"));
        }
        let mut k = Kernel {
            family,
            amplitude,
            scale,
            dimension: d,
            eps_cut,
            cutoff: 0.0,
            truncated_mass: 0.0,
            modulation: None,
        };
        k.cutoff = k.compute_cutoff();
        let full = k.full_mass();
        k.truncated_mass = if full > 0.0 {
            (1.0 - k.mass_within(k.cutoff) / full).max(0.0)
        } else {
            0.0
        };
        Ok(k)
    }

    /// Constant `amplitude` on the closed ball of the given radius.
    pub fn tophat(amplitude: f64, radius: f64, d: usize) -> Result<Self> {
        Self::interaction(Family::TopHat, amplitude, radius, d, DEFAULT_EPS_CUT)
    }

    /// `amplitude · exp(-r² / 2σ²)`.
    pub fn gaussian(amplitude: f64, sigma: f64, d: usize) -> Result<Self> {
        Self::interaction(Family::Gaussian, amplitude, sigma, d, DEFAULT_EPS_CUT)
    }

    /// `amplitude · exp(-r / scale)`.
    pub fn exponential(amplitude: f64, scale: f64, d: usize) -> Result<Self> {
        Self::interaction(Family::Exponential, amplitude, scale, d, DEFAULT_EPS_CUT)
    }

    /// The identically zero interaction kernel.
    pub fn zero(d: usize) -> Result<Self> {
        Self::tophat(0.0, 1.0, d)
    }

    /// Spatially constant background level.
    pub fn constant(level: f64, d: usize) -> Result<Self> {
        Self::background(level, None, d)
    }

    /// Background `level + m cos(2π k·x / L)`; requires `|m| <= level`.
    pub fn background(level: f64, modulation: Option<CosineMode>, d: usize) -> Result<Self> {
        check_common(level, 1.0, d)?;
        let modulation = modulation.filter(|m| m.amplitude != 0.0);
        if let Some(m) = modulation {
            if !m.amplitude.is_finite() || m.amplitude.abs() > level {
                return arg(format!(
                    "cosine amplitude {} exceeds background level {level}",
                    m.amplitude
                ));
            }
            if m.wave.iter().take(d.min(2)).all(|&w| w == 0) {
                return arg("cosine mode needs a nonzero wave number");
            }
        }
        Ok(Kernel {
            family: Family::ConstantBackground,
            amplitude: level,
            scale: 1.0,
            dimension: d,
            eps_cut: 0.0,
            cutoff: f64::INFINITY,
            truncated_mass: 0.0,
            modulation,
        })
    }

    /// Rebuilds the kernel with a different truncation threshold
    /// (`0` keeps the full, untruncated profile).
    pub fn with_eps_cut(&self, eps_cut: f64) -> Result<Self> {
        if self.family.is_background() {
            return Ok(self.clone());
        }
        Self::interaction(self.family, self.amplitude, self.scale, self.dimension, eps_cut)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn eps_cut(&self) -> f64 {
        self.eps_cut
    }

    /// Radius beyond which the profile is zero. Infinite for backgrounds and
    /// for decaying families built with `eps_cut = 0`; zero for a zero kernel.
    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Fraction of the untruncated L¹ mass removed by the cutoff.
    pub fn truncated_mass(&self) -> f64 {
        self.truncated_mass
    }

    pub fn modulation(&self) -> Option<CosineMode> {
        self.modulation
    }

    /// True when the kernel vanishes everywhere.
    pub fn is_zero(&self) -> bool {
        self.amplitude == 0.0
    }

    fn compute_cutoff(&self) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        match self.family {
            Family::TopHat => self.scale,
            Family::ConstantBackground => f64::INFINITY,
            _ if self.eps_cut == 0.0 => f64::INFINITY,
            Family::Gaussian => self.scale * (2.0 * (1.0 / self.eps_cut).ln()).sqrt(),
            Family::Exponential => self.scale * (1.0 / self.eps_cut).ln(),
        }
    }

    /// Untruncated profile at radius `r >= 0`.
    fn raw_profile(&self, r: f64) -> f64 {
        match self.family {
            Family::TopHat => {
                if r <= self.scale {
                    self.amplitude
                } else {
                    0.0
                }
            }
            Family::Gaussian => {
                let s = r / self.scale;
                self.amplitude * (-0.5 * s * s).exp()
            }
            Family::Exponential => self.amplitude * (-r / self.scale).exp(),
            Family::ConstantBackground => self.amplitude,
        }
    }

    /// Truncated radial profile without argument checks; used in hot loops.
    #[inline]
    pub fn profile(&self, r: f64) -> f64 {
        if r > self.cutoff {
            0.0
        } else {
            self.raw_profile(r)
        }
    }

    /// Radial profile value at `r`.
    pub fn value(&self, r: f64) -> Result<f64> {
        if !(r >= 0.0) {
            return arg(format!("radius {r} must be >= 0"));
        }
        if self.modulation.is_some() {
            return arg("modulated background has no radial profile; use value_at");
        }
        Ok(self.profile(r))
    }

    /// Background value at a torus position. Interaction kernels are evaluated
    /// at the distance of `x` from the origin.
    pub fn value_at(&self, x: &Position, window: &TorusWindow) -> f64 {
        match self.family {
            Family::ConstantBackground => {
                let Some(m) = self.modulation else {
                    return self.amplitude;
                };
                let l = window.side();
                let phase: f64 = (0..window.dimension())
                    .map(|i| m.wave[i] as f64 * x.0[i])
                    .sum();
                self.amplitude + m.amplitude * (2.0 * PI * phase / l).cos()
            }
            _ => self.profile(window.distance(x, &Position::origin())),
        }
    }

    /// L¹ mass of the untruncated profile.
    pub fn full_mass(&self) -> f64 {
        let d = self.dimension;
        let a = self.amplitude;
        let s = self.scale;
        match self.family {
            Family::TopHat => a * unit_ball_volume(d) * s.powi(d as i32),
            Family::Gaussian => a * (2.0 * PI * s * s).powf(d as f64 / 2.0),
            Family::Exponential => {
                let fact: f64 = (1..=d).map(|k| k as f64).product();
                a * s.powi(d as i32) * fact * unit_ball_volume(d)
            }
            Family::ConstantBackground => f64::INFINITY,
        }
    }

    /// `∫_{|x| <= r} profile(|x|) dx` of the untruncated profile, closed form.
    pub fn mass_within(&self, r: f64) -> f64 {
        let d = self.dimension;
        if r <= 0.0 || self.amplitude == 0.0 {
            return 0.0;
        }
        if r.is_infinite() {
            return self.full_mass();
        }
        match self.family {
            Family::TopHat => self.amplitude * unit_ball_volume(d) * r.min(self.scale).powi(d as i32),
            Family::Gaussian => {
                let s = r / self.scale;
                let frac = match d {
                    1 => erf(s / 2f64.sqrt()),
                    2 => -(-0.5 * s * s).exp_m1(),
                    _ => erf(s / 2f64.sqrt()) - (2.0 / PI).sqrt() * s * (-0.5 * s * s).exp(),
                };
                self.full_mass() * frac
            }
            Family::Exponential => {
                let s = r / self.scale;
                // regularized lower incomplete gamma P(d, s)
                let mut term = 1.0;
                let mut partial = 1.0;
                for k in 1..d {
                    term *= s / k as f64;
                    partial += term;
                }
                let frac = if d == 1 {
                    -(-s).exp_m1()
                } else {
                    1.0 - (-s).exp() * partial
                };
                self.full_mass() * frac
            }
            Family::ConstantBackground => f64::INFINITY,
        }
    }

    /// `∫ k(x) dx` of the truncated profile.
    pub fn l1_norm(&self) -> Result<f64> {
        if self.family.is_background() {
            return Err(Error::NoL1Norm(self.family.name()));
        }
        Ok(self.mass_within(self.cutoff))
    }

    /// Supremum over space.
    pub fn sup_norm(&self) -> f64 {
        match self.modulation {
            Some(m) => self.amplitude + m.amplitude.abs(),
            None => self.amplitude,
        }
    }

    /// Inverse of the truncated radial CDF `mass_within(r) / l1_norm` at `u ∈ [0, 1)`.
    pub fn sample_radius(&self, u: f64) -> f64 {
        let rc = self.cutoff;
        match (self.family, self.dimension) {
            (Family::TopHat, d) => self.scale * u.powf(1.0 / d as f64),
            (Family::Gaussian, 1) => {
                let top = if rc.is_finite() { erf(rc / (self.scale * 2f64.sqrt())) } else { 1.0 };
                self.scale * 2f64.sqrt() * erf_inv(u * top)
            }
            (Family::Gaussian, 2) => {
                let top = if rc.is_finite() {
                    -(-0.5 * (rc / self.scale).powi(2)).exp_m1()
                } else {
                    1.0
                };
                self.scale * (-2.0 * (-u * top).ln_1p()).sqrt()
            }
            (Family::Exponential, 1) => {
                let top = if rc.is_finite() { -(-rc / self.scale).exp_m1() } else { 1.0 };
                -self.scale * (-u * top).ln_1p()
            }
            _ => {
                let total = self.mass_within(rc);
                let target = u * total;
                let mut lo = 0.0;
                let mut hi = if rc.is_finite() { rc } else { self.scale * 60.0 };
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    if self.mass_within(mid) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi.max(1e-300) {
                        break;
                    }
                }
                0.5 * (lo + hi)
            }
        }
    }
}

/// Competition regime of a pair of interaction kernels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Competition {
    /// `a⁻ >= θ a⁺` on every probe radius, with the witnessing `θ`.
    Long { theta: f64 },
    /// `a⁺` reaches where `a⁻` vanishes or decays relatively to zero.
    Short,
    Indeterminate,
}

/// 64 log-spaced radii up to `2 · max(cutoff)`, plus the origin.
pub fn default_probe_radii(a_plus: &Kernel, a_minus: &Kernel) -> Vec<f64> {
    let reach = |k: &Kernel| {
        if k.cutoff().is_finite() {
            k.cutoff()
        } else {
            40.0 * k.scale()
        }
    };
    let top = 2.0 * reach(a_plus).max(reach(a_minus)).max(f64::MIN_POSITIVE);
    let bottom = top * 1e-4;
    let n = DEFAULT_PROBE_COUNT;
    let mut radii = vec![0.0];
    radii.extend((0..n).map(|i| bottom * (top / bottom).powf(i as f64 / (n - 1) as f64)));
    radii
}

/// Classifies the competition regime on a finite probe grid.
pub fn classify_competition(a_plus: &Kernel, a_minus: &Kernel, probe_radii: &[f64]) -> Result<Competition> {
    if probe_radii.is_empty() {
        return arg("empty probe radius list");
    }
    if a_plus.family().is_background() || a_minus.family().is_background() {
        return arg("competition is defined for interaction kernels only");
    }
    if a_plus.dimension() != a_minus.dimension() {
        return arg("kernels of different dimension");
    }
    let mut radii: Vec<f64> = probe_radii.to_vec();
    if radii.iter().any(|r| !(*r >= 0.0)) {
        return arg("probe radii must be >= 0");
    }
    radii.sort_by(f64::total_cmp);

    let mut ratios = Vec::new();
    for &r in &radii {
        let p = a_plus.profile(r);
        if p > 0.0 {
            let m = a_minus.profile(r);
            if m == 0.0 {
                return Ok(Competition::Short);
            }
            ratios.push(m / p);
        }
    }
    let Some(theta) = ratios.iter().copied().reduce(f64::min) else {
        // a⁺ vanishes on every probe: any θ works
        return Ok(Competition::Long { theta: f64::INFINITY });
    };
    if theta >= MIN_THETA {
        return Ok(Competition::Long { theta });
    }
    let tail = &ratios[ratios.len().saturating_sub(4)..];
    let decaying = tail.windows(2).all(|w| w[1] <= w[0]);
    if decaying && *ratios.last().unwrap() < MIN_THETA {
        Ok(Competition::Short)
    } else {
        Ok(Competition::Indeterminate)
    }
}

/// The four kernels of the model together with the simulation window.
#[derive(Debug, Clone)]
pub struct ModelParams {
    a_plus: Kernel,
    a_minus: Kernel,
    b_plus: Kernel,
    b_minus: Kernel,
    window: TorusWindow,
    attraction_mass: f64,
    competition_mass: f64,
}

impl ModelParams {
    pub fn new(a_plus: Kernel, a_minus: Kernel, b_plus: Kernel, b_minus: Kernel, window: TorusWindow) -> Result<Self> {
        let d = window.dimension();
        for (name, k) in [("a_plus", &a_plus), ("a_minus", &a_minus), ("b_plus", &b_plus), ("b_minus", &b_minus)] {
            if k.dimension() != d {
                return arg(format!("{name} has dimension {} but window has {d}", k.dimension()));
            }
        }
        for (name, k) in [("a_plus", &a_plus), ("a_minus", &a_minus)] {
            if k.family().is_background() {
                return arg(format!("{name} must be an interaction kernel"));
            }
            if !k.cutoff().is_finite() {
                return arg(format!("{name} needs a finite cutoff (eps_cut > 0) for simulation"));
            }
        }
        for (name, k) in [("b_plus", &b_plus), ("b_minus", &b_minus)] {
            if !k.family().is_background() {
                return arg(format!("{name} must be a background kernel"));
            }
        }
        let reach = a_plus.cutoff().max(a_minus.cutoff());
        if !(window.side() > 2.0 * reach) {
            return arg(format!(
                "window side {} must exceed twice the interaction cutoff {reach}",
                window.side()
            ));
        }
        let attraction_mass = a_plus.l1_norm()?;
        let competition_mass = a_minus.l1_norm()?;
        Ok(ModelParams {
            a_plus,
            a_minus,
            b_plus,
            b_minus,
            window,
            attraction_mass,
            competition_mass,
        })
    }

    pub fn a_plus(&self) -> &Kernel {
        &self.a_plus
    }

    pub fn a_minus(&self) -> &Kernel {
        &self.a_minus
    }

    pub fn b_plus(&self) -> &Kernel {
        &self.b_plus
    }

    pub fn b_minus(&self) -> &Kernel {
        &self.b_minus
    }

    pub fn window(&self) -> &TorusWindow {
        &self.window
    }

    /// `A⁺ = ‖a⁺‖₁`.
    pub fn attraction_mass(&self) -> f64 {
        self.attraction_mass
    }

    /// `A⁻ = ‖a⁻‖₁`.
    pub fn competition_mass(&self) -> f64 {
        self.competition_mass
    }

    /// `∫_T b⁺(x) dx`; the cosine mode integrates to zero over the torus.
    pub fn background_birth_mass(&self) -> f64 {
        self.b_plus.amplitude() * self.window.volume()
    }

    /// Largest interaction cutoff; sets the cell-list cell side.
    pub fn interaction_reach(&self) -> f64 {
        self.a_plus.cutoff().max(self.a_minus.cutoff())
    }

    pub fn dimension(&self) -> usize {
        self.window.dimension()
    }

    pub fn competition(&self) -> Result<Competition> {
        classify_competition(&self.a_plus, &self.a_minus, &default_probe_radii(&self.a_plus, &self.a_minus))
    }
}
