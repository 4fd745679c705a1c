//! Finite-configuration analysis: the K-transform, the Lebesgue-Poisson
//! integral, the monomials `e_n(θ; ·)`, `F^θ`, and the lifted generator `L̂`.
//!
//! Everything here runs at tiny cardinalities. Integrals over positions are
//! tensor midpoint sums on the support box of the test function, and both
//! sides of the duality `L K G = K L̂ G` use the same nodes, so the
//! discretization cancels.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_bigint::BigUint;
use rand::Rng;

use crate::combinatorics::{binomial, factorial, StirlingTable};
use crate::configuration::{AxisBox, Position};
use crate::error::{arg, Error, Result};
use crate::kernels::ModelParams;

/// Cap on the configuration size for subset enumeration.
pub const K_TRANSFORM_CAP: usize = 24;

/// Cap on the number of points passed to [`check_duality`].
pub const DUALITY_CAP: usize = 5;

/// Cap on `|η|` in [`lhat_apply`].
pub const LHAT_CAP: usize = 6;

/// Largest component order supported by [`lebesgue_poisson_integral`].
pub const INTEGRAL_MAX_ORDER: usize = 4;

type Component = Arc<dyn Fn(&[Position]) -> f64 + Send + Sync>;

/// A function on finite configurations with bounded support: components
/// `G⁽ⁿ⁾` for `n ≤ N_max` that vanish outside the support box.
#[derive(Clone)]
pub struct FiniteFunction {
    support: AxisBox,
    bound: f64,
    components: Vec<Component>,
}

impl fmt::Debug for FiniteFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FiniteFunction")
            .field("support", &self.support)
            .field("bound", &self.bound)
            .field("max_order", &self.max_order())
            .finish()
    }
}

impl FiniteFunction {
    /// `components[n]` is `G⁽ⁿ⁾`; each must be symmetric in its arguments.
    pub fn new(support: AxisBox, bound: f64, components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return arg("a finite function needs at least the empty-set component");
        }
        if !(bound >= 0.0) {
            return arg(format!("bound {bound} must be >= 0"));
        }
        Ok(FiniteFunction {
            support,
            bound,
            components,
        })
    }

    /// Builds a function from closures without type-erasure boilerplate.
    pub fn from_fns<F>(support: AxisBox, bound: f64, fns: Vec<F>) -> Result<Self>
    where
        F: Fn(&[Position]) -> f64 + Send + Sync + 'static,
    {
        Self::new(support, bound, fns.into_iter().map(|f| Arc::new(f) as Component).collect())
    }

    pub fn zero(support: AxisBox) -> Self {
        FiniteFunction {
            support,
            bound: 0.0,
            components: vec![Arc::new(|_: &[Position]| 0.0)],
        }
    }

    /// `G(∅) = c`, zero elsewhere.
    pub fn empty_set_only(c: f64, support: AxisBox) -> Self {
        FiniteFunction {
            support,
            bound: c.abs(),
            components: vec![Arc::new(move |_: &[Position]| c)],
        }
    }

    /// `G⁽¹⁾ = 1` on the box, zero elsewhere; `KG` counts points in the box.
    pub fn singleton_indicator(support: AxisBox) -> Self {
        FiniteFunction {
            support,
            bound: 1.0,
            components: vec![Arc::new(|_: &[Position]| 0.0), Arc::new(|_: &[Position]| 1.0)],
        }
    }

    /// `Σ_{n ≤ N_max} e_n(θ; ·)`, so that `KG(γ) = F^θ(γ)` whenever `|γ ∩ Λ| ≤ N_max`.
    pub fn theta_series(theta: &ThetaFunction, max_order: usize) -> Self {
        let components = (0..=max_order)
            .map(|_| {
                let t = *theta;
                Arc::new(move |eta: &[Position]| eta.iter().map(|x| t.value(x)).product::<f64>()) as Component
            })
            .collect();
        FiniteFunction {
            support: theta.support,
            bound: 1.0,
            components,
        }
    }

    /// Random symmetric components `c_n Π cos(k·x) + d_n Σ_{i<j} exp(−|x_i − x_j|²)`
    /// with `|c_n|, |d_n| < 1`.
    pub fn random_smooth<R: Rng + ?Sized>(support: AxisBox, n_max: usize, rng: &mut R) -> Self {
        let components = (0..=n_max)
            .map(|_| {
                let c = rng.random_range(-1.0..1.0);
                let d = rng.random_range(-1.0..1.0);
                let k = [rng.random_range(0.2..2.0), rng.random_range(0.2..2.0)];
                Arc::new(move |eta: &[Position]| {
                    let prod: f64 = eta.iter().map(|x| (k[0] * x.0[0] + k[1] * x.0[1]).cos()).product();
                    let mut pair = 0.0;
                    for i in 0..eta.len() {
                        for j in i + 1..eta.len() {
                            let dx = eta[i].0[0] - eta[j].0[0];
                            let dy = eta[i].0[1] - eta[j].0[1];
                            pair += (-(dx * dx + dy * dy)).exp();
                        }
                    }
                    c * prod + d * pair
                }) as Component
            })
            .collect();
        let pairs = (n_max * n_max.saturating_sub(1) / 2) as f64;
        FiniteFunction {
            support,
            bound: 1.0 + pairs,
            components,
        }
    }

    pub fn support(&self) -> &AxisBox {
        &self.support
    }

    pub fn bound(&self) -> f64 {
        self.bound
    }

    /// `N_max`.
    pub fn max_order(&self) -> usize {
        self.components.len() - 1
    }

    /// `G(η)`; zero when `|η| > N_max` or a point leaves the support.
    pub fn eval(&self, eta: &[Position]) -> f64 {
        match self.components.get(eta.len()) {
            Some(g) if eta.iter().all(|x| self.support.contains(x)) => g(eta),
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum ThetaShape {
    Constant,
    Bump,
}

/// A profile `θ` with values in `(−1, 0]` and compact box support.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaFunction {
    shape: ThetaShape,
    depth: f64,
    support: AxisBox,
}

impl ThetaFunction {
    fn checked(shape: ThetaShape, depth: f64, support: AxisBox) -> Result<Self> {
        if !(0.0..1.0).contains(&depth) {
            return arg(format!("θ depth {depth} must lie in [0, 1)"));
        }
        Ok(ThetaFunction { shape, depth, support })
    }

    /// `θ = −depth` on the box.
    pub fn constant(depth: f64, support: AxisBox) -> Result<Self> {
        Self::checked(ThetaShape::Constant, depth, support)
    }

    /// `θ = −depth · Π sin²(π (x_i − lo_i) / w_i)` on the box.
    pub fn bump(depth: f64, support: AxisBox) -> Result<Self> {
        Self::checked(ThetaShape::Bump, depth, support)
    }

    pub fn support(&self) -> &AxisBox {
        &self.support
    }

    pub fn value(&self, x: &Position) -> f64 {
        if !self.support.contains(x) || self.depth == 0.0 {
            return 0.0;
        }
        match self.shape {
            ThetaShape::Constant => -self.depth,
            ThetaShape::Bump => {
                let mut v = -self.depth;
                for i in 0..self.support.dimension {
                    v *= (PI * (x.0[i] - self.support.lo[i]) / self.support.width(i)).sin().powi(2);
                }
                v
            }
        }
    }

    /// `‖θ‖ = ∫ |θ|`.
    pub fn l1_norm(&self) -> f64 {
        let v = self.depth * self.support.volume();
        match self.shape {
            ThetaShape::Constant => v,
            ThetaShape::Bump => v / f64::from(1u32 << self.support.dimension),
        }
    }
}

/// `e_n(θ; η) = Π_{x∈η} θ(x)` when `|η| = n`, else 0.
pub fn e_n_eval(theta: &ThetaFunction, n: usize, eta: &[Position]) -> f64 {
    if eta.len() != n {
        return 0.0;
    }
    eta.iter().map(|x| theta.value(x)).product()
}

/// `F^θ(γ) = Π_{x∈γ} (1 + θ(x))`.
pub fn f_theta_eval(theta: &ThetaFunction, gamma: &[Position]) -> f64 {
    gamma.iter().map(|x| 1.0 + theta.value(x)).product()
}

fn subsets_sum(points: &[Position], max_len: usize, f: &mut impl FnMut(&[Position]) -> f64) -> f64 {
    fn rec(points: &[Position], start: usize, buf: &mut Vec<Position>, max_len: usize, f: &mut impl FnMut(&[Position]) -> f64) -> f64 {
        let mut s = f(buf);
        if buf.len() == max_len {
            return s;
        }
        for i in start..points.len() {
            buf.push(points[i]);
            s += rec(points, i + 1, buf, max_len, f);
            buf.pop();
        }
        s
    }
    rec(points, 0, &mut Vec::with_capacity(max_len), max_len, f)
}

/// `(KG)(γ) = Σ_{η⊆γ} G(η)`. Only points in the support and subsets of size
/// at most `N_max` are enumerated.
pub fn k_transform(g: &FiniteFunction, gamma: &[Position]) -> Result<f64> {
    if gamma.len() > K_TRANSFORM_CAP {
        return Err(Error::Size {
            size: gamma.len(),
            cap: K_TRANSFORM_CAP,
        });
    }
    let inside: Vec<Position> = gamma.iter().copied().filter(|x| g.support.contains(x)).collect();
    Ok(subsets_sum(&inside, g.max_order(), &mut |eta| g.eval(eta)))
}

/// Tensor midpoint rule on axis-aligned boxes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuadratureGrid {
    pub nodes_per_axis: usize,
    pub max_evaluations: u128,
}

impl Default for QuadratureGrid {
    fn default() -> Self {
        QuadratureGrid {
            nodes_per_axis: 32,
            max_evaluations: 200_000_000,
        }
    }
}

impl QuadratureGrid {
    pub fn new(nodes_per_axis: usize) -> Result<Self> {
        if nodes_per_axis == 0 {
            return arg("quadrature needs at least one node per axis");
        }
        Ok(QuadratureGrid {
            nodes_per_axis,
            ..Self::default()
        })
    }

    /// Midpoint nodes of the box with a common weight.
    pub fn nodes(&self, b: &AxisBox) -> (Vec<Position>, f64) {
        let m = self.nodes_per_axis;
        let d = b.dimension;
        let h: Vec<f64> = (0..d).map(|i| b.width(i) / m as f64).collect();
        let count = m.pow(d as u32);
        let nodes = (0..count)
            .map(|k| {
                let mut p = Position::origin();
                let mut rest = k;
                for i in 0..d {
                    p.0[i] = b.lo[i] + (rest % m) as f64 * h[i] + 0.5 * h[i];
                    rest /= m;
                }
                p
            })
            .collect();
        (nodes, h.iter().product())
    }
}

/// `G(∅) + Σ_{n=1}^{N_max} Cⁿ/n! ∫_{Λⁿ} G⁽ⁿ⁾`.
pub fn lebesgue_poisson_integral(g: &FiniteFunction, weight: f64, quad: &QuadratureGrid) -> Result<f64> {
    let n_max = g.max_order();
    if n_max > INTEGRAL_MAX_ORDER {
        return arg(format!("component order {n_max} above {INTEGRAL_MAX_ORDER}"));
    }
    let (nodes, w) = quad.nodes(&g.support);
    let per_axis = nodes.len() as u128;
    let evaluations: u128 = (1..=n_max as u32).map(|n| per_axis.saturating_pow(n)).fold(0u128, u128::saturating_add);
    if evaluations > quad.max_evaluations {
        return Err(Error::Resource {
            evaluations,
            limit: quad.max_evaluations,
        });
    }
    let mut total = g.eval(&[]);
    let mut inv_fact = 1.0;
    for n in 1..=n_max {
        inv_fact /= n as f64;
        let mut idx = vec![0usize; n];
        let mut eta = vec![nodes[0]; n];
        let mut sum = 0.0;
        loop {
            for (e, &i) in eta.iter_mut().zip(&idx) {
                *e = nodes[i];
            }
            sum += g.eval(&eta);
            let mut k = 0;
            while k < n {
                idx[k] += 1;
                if idx[k] < nodes.len() {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == n {
                break;
            }
        }
        total += weight.powi(n as i32) * inv_fact * w.powi(n as i32) * sum;
    }
    Ok(total)
}

fn pair_sum(p: &ModelParams, x: &Position, others: impl Iterator<Item = Position>, plus: bool) -> f64 {
    let k = if plus { p.a_plus() } else { p.a_minus() };
    if k.is_zero() {
        return 0.0;
    }
    others.map(|y| k.profile(p.window().distance(x, &y))).sum()
}

fn e_plus(p: &ModelParams, x: &Position, eta: &[Position]) -> f64 {
    p.b_plus().value_at(x, p.window()) + pair_sum(p, x, eta.iter().copied(), true)
}

fn e_minus_excluding(p: &ModelParams, eta: &[Position], i: usize) -> f64 {
    let x = eta[i];
    let others = eta.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, y)| *y);
    p.b_minus().value_at(&x, p.window()) + pair_sum(p, &x, others, false)
}

fn without(eta: &[Position], i: usize) -> Vec<Position> {
    let mut v = eta.to_vec();
    v.remove(i);
    v
}

fn check_window(p: &ModelParams, g: &FiniteFunction) -> Result<()> {
    if g.support.dimension != p.dimension() || !g.support.within(p.window()) {
        return arg("support box must lie inside the model window with matching dimension");
    }
    Ok(())
}

/// `(L̂G)(η)`: birth integral with `E⁺`, dispersal exchange with `a⁺`, the
/// diagonal `−Σ E⁻` term, and the `a⁻` removal term. Position integrals run
/// over the quadrature nodes of the support of `G`.
pub fn lhat_apply(g: &FiniteFunction, eta: &[Position], p: &ModelParams, quad: &QuadratureGrid) -> Result<f64> {
    if eta.len() > LHAT_CAP {
        return Err(Error::Size {
            size: eta.len(),
            cap: LHAT_CAP,
        });
    }
    check_window(p, g)?;
    let (nodes, w) = quad.nodes(&g.support);
    Ok(lhat_on_nodes(g, eta, p, &nodes, w))
}

fn lhat_on_nodes(g: &FiniteFunction, eta: &[Position], p: &ModelParams, nodes: &[Position], w: f64) -> f64 {
    let n = eta.len();
    let mut buf = eta.to_vec();
    let mut total = 0.0;
    if n < g.max_order() {
        buf.push(Position::origin());
        for x in nodes {
            buf[n] = *x;
            let gv = g.eval(&buf);
            if gv != 0.0 {
                total += w * e_plus(p, x, eta) * gv;
            }
        }
        buf.pop();
    }
    if !p.a_plus().is_zero() {
        for i in 0..n {
            let x = eta[i];
            for y in nodes {
                buf[i] = *y;
                let gv = g.eval(&buf);
                if gv != 0.0 {
                    total += w * p.a_plus().profile(p.window().distance(&x, y)) * gv;
                }
            }
            buf[i] = x;
        }
    }
    let g_eta = g.eval(eta);
    if g_eta != 0.0 {
        total -= (0..n).map(|i| e_minus_excluding(p, eta, i)).sum::<f64>() * g_eta;
    }
    if !p.a_minus().is_zero() {
        for i in 0..n {
            let rest = without(eta, i);
            let gv = g.eval(&rest);
            if gv != 0.0 {
                total -= pair_sum(p, &eta[i], rest.iter().copied(), false) * gv;
            }
        }
    }
    total
}

/// Both sides of the duality at `γ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualityCheck {
    /// `(L KG)(γ)`.
    pub generator_side: f64,
    /// `(K L̂G)(γ)`.
    pub lifted_side: f64,
}

impl DualityCheck {
    pub fn residual(&self) -> f64 {
        (self.generator_side - self.lifted_side).abs()
    }
}

/// Evaluates `(L KG)(γ)` and `(K L̂G)(γ)` on the same quadrature nodes.
pub fn check_duality(g: &FiniteFunction, gamma: &[Position], p: &ModelParams, quad: &QuadratureGrid) -> Result<DualityCheck> {
    if gamma.len() > DUALITY_CAP {
        return Err(Error::Size {
            size: gamma.len(),
            cap: DUALITY_CAP,
        });
    }
    check_window(p, g)?;
    let (nodes, w) = quad.nodes(&g.support);

    let kg = |pts: &[Position]| subsets_sum(pts, pts.len(), &mut |eta| g.eval(eta));
    let base = kg(gamma);
    let mut generator_side = 0.0;
    let mut grown = gamma.to_vec();
    grown.push(Position::origin());
    for x in &nodes {
        *grown.last_mut().unwrap() = *x;
        let diff = kg(&grown) - base;
        if diff != 0.0 {
            generator_side += w * e_plus(p, x, gamma) * diff;
        }
    }
    for i in 0..gamma.len() {
        let diff = kg(&without(gamma, i)) - base;
        generator_side += e_minus_excluding(p, gamma, i) * diff;
    }

    let lifted_side = subsets_sum(gamma, gamma.len(), &mut |eta| lhat_on_nodes(g, eta, p, &nodes, w));
    Ok(DualityCheck {
        generator_side,
        lifted_side,
    })
}

/// Exact sides of `N_Λ(γ)ⁿ = Σ_{l=1}^n l! S(n,l) · #{l-subsets of γ∩Λ}`.
pub fn moment_identity_check(n: usize, b: &AxisBox, gamma: &[Position]) -> Result<(BigUint, BigUint)> {
    if n == 0 || n > 8 {
        return arg(format!("moment order {n} outside 1..=8"));
    }
    let count = gamma.iter().filter(|x| b.contains(x)).count() as u64;
    if count > 12 {
        return Err(Error::Size {
            size: count as usize,
            cap: 12,
        });
    }
    let lhs = BigUint::from(count).pow(n as u32);
    let table = StirlingTable::global();
    let mut rhs = BigUint::from(0u32);
    for l in 1..=n {
        rhs += factorial(l as u64) * table.get(n, l)? * binomial(count, l as u64);
    }
    Ok((lhs, rhs))
}
