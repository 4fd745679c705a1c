//! Stirling numbers of the second kind, Touchard polynomials and Poisson
//! count laws.
//!
//! All pmf and bound arithmetic runs in log space and exponentiates last.

use std::sync::OnceLock;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use statrs::function::gamma::ln_gamma;

use crate::error::{arg, Result};

/// Largest `n` held in the Stirling table.
pub const STIRLING_MAX_N: usize = 64;

/// Exact table of `S(n, l)` for `0 <= l <= n <= max_n`.
#[derive(Debug, Clone)]
pub struct StirlingTable {
    max_n: usize,
    rows: Vec<Vec<BigUint>>,
}

impl StirlingTable {
    /// Builds rows by `S(n, l) = l S(n-1, l) + S(n-1, l-1)`.
    pub fn new(max_n: usize) -> Self {
        let mut rows: Vec<Vec<BigUint>> = Vec::with_capacity(max_n + 1);
        rows.push(vec![BigUint::one()]);
        for n in 1..=max_n {
            let prev = &rows[n - 1];
            let mut row = vec![BigUint::zero(); n + 1];
            for l in 1..=n {
                let stay = if l < n { &prev[l] * BigUint::from(l) } else { BigUint::zero() };
                row[l] = stay + &prev[l - 1];
            }
            rows.push(row);
        }
        StirlingTable { max_n, rows }
    }

    /// Shared table with `max_n = 64`.
    pub fn global() -> &'static StirlingTable {
        static TABLE: OnceLock<StirlingTable> = OnceLock::new();
        TABLE.get_or_init(|| StirlingTable::new(STIRLING_MAX_N))
    }

    pub fn max_n(&self) -> usize {
        self.max_n
    }

    pub fn get(&self, n: usize, l: usize) -> Result<&BigUint> {
        if n > self.max_n || l > n {
            return arg(format!("S({n}, {l}) outside 0 <= l <= n <= {}", self.max_n));
        }
        Ok(&self.rows[n][l])
    }

    /// Bell number `B_n = Σ_l S(n, l)`.
    pub fn bell(&self, n: usize) -> Result<BigUint> {
        if n > self.max_n {
            return arg(format!("n = {n} exceeds table size {}", self.max_n));
        }
        Ok(self.rows[n].iter().sum())
    }

    /// `T_n(x) = Σ_{l=1..n} S(n, l) x^l`, with `T_0 = 1`.
    pub fn touchard(&self, n: usize, x: f64) -> Result<f64> {
        if n > self.max_n {
            return arg(format!("n = {n} exceeds table size {}", self.max_n));
        }
        if !(x >= 0.0) {
            return arg(format!("Touchard argument {x} must be >= 0"));
        }
        if n == 0 {
            return Ok(1.0);
        }
        // Horner over l = n..1
        let row = &self.rows[n];
        let mut acc = 0.0;
        for l in (1..=n).rev() {
            acc = acc * x + row[l].to_f64().unwrap_or(f64::INFINITY);
        }
        Ok(acc * x)
    }
}

/// `S(n, l)` from the shared table.
pub fn stirling2(n: usize, l: usize) -> Result<BigUint> {
    StirlingTable::global().get(n, l).cloned()
}

/// Touchard polynomial `T_n(x)`, the n-th moment of Poisson(x).
pub fn touchard(n: usize, x: f64) -> Result<f64> {
    StirlingTable::global().touchard(n, x)
}

/// `ln P(N = n)` for `N ~ Poisson(mass)`.
pub fn ln_poisson_pmf(n: u64, mass: f64) -> f64 {
    if mass == 0.0 {
        return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    n as f64 * mass.ln() - mass - ln_factorial(n)
}

/// `mass^n e^{-mass} / n!`.
pub fn poisson_count_pmf(n: u64, mass: f64) -> f64 {
    ln_poisson_pmf(n, mass).exp()
}

/// `ln n!`.
pub fn ln_factorial(n: u64) -> f64 {
    if n < 2 {
        0.0
    } else {
        ln_gamma(n as f64 + 1.0)
    }
}

/// `ln( n! (e/n)^n )`, the log of the heavy-tail allowance factor.
pub fn ln_tail_factor(n: u64) -> f64 {
    let nf = n as f64;
    ln_factorial(n) + nf * (1.0 - nf.ln())
}

/// Upper bound `n! (e/n)^n · π_κ(Γ^{Λ,n})` on `P(N_Λ = n)` for a sub-Poisson state.
pub fn subpoisson_pmf_bound(n: u64, kappa: f64, volume: f64) -> Result<f64> {
    if n == 0 {
        return arg("the sub-Poisson pmf bound is stated for n >= 1");
    }
    if !(kappa >= 0.0) || !(volume >= 0.0) {
        return arg("kappa and volume must be >= 0");
    }
    Ok((ln_tail_factor(n) + ln_poisson_pmf(n, kappa * volume)).exp())
}

/// `E[exp(β N)] = exp(mass (e^β - 1))` for `N ~ Poisson(mass)`.
pub fn poisson_mgf(beta: f64, mass: f64) -> Result<f64> {
    if !(mass >= 0.0) {
        return arg(format!("mass {mass} must be >= 0"));
    }
    Ok((mass * beta.exp_m1()).exp())
}

/// Truncated Touchard series `Σ_{n<terms} β^n T_n(mass) / n!`.
pub fn poisson_mgf_series(beta: f64, mass: f64, terms: usize) -> Result<f64> {
    let mut sum = 0.0;
    let mut coef = 1.0; // β^n / n!
    for n in 0..terms {
        if n > 0 {
            coef *= beta / n as f64;
        }
        sum += coef * touchard(n, mass)?;
    }
    Ok(sum)
}

/// `C(n, k)` as an exact integer.
pub fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

/// `n!` as an exact integer.
pub fn factorial(n: u64) -> BigUint {
    (1..=n).fold(BigUint::one(), |acc, k| acc * BigUint::from(k))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Poisson};

    /// Counts set partitions of `{0..n}` into exactly `l` blocks by restricted
    /// growth strings.
    fn enumerate_partitions(n: usize, l: usize) -> u64 {
        fn go(i: usize, n: usize, max_block: usize, l: usize) -> u64 {
            if i == n {
                return u64::from(max_block == l);
            }
            let mut total = 0;
            for b in 0..=max_block.min(l - 1) {
                let next = if b == max_block { max_block + 1 } else { max_block };
                if next <= l {
                    total += go(i + 1, n, next, l);
                }
            }
            total
        }
        if n == 0 {
            return u64::from(l == 0);
        }
        if l == 0 {
            return 0;
        }
        go(0, n, 0, l)
    }

    #[test]
    fn stirling_examples_against_enumeration() {
        assert_eq!(enumerate_partitions(3, 2), 3);
        assert_eq!(enumerate_partitions(4, 2), 7);
        assert_eq!(stirling2(3, 2).unwrap(), BigUint::from(3u32));
        assert_eq!(stirling2(4, 2).unwrap(), BigUint::from(7u32));
        for n in 0..=9 {
            for l in 0..=n {
                assert_eq!(stirling2(n, l).unwrap(), BigUint::from(enumerate_partitions(n, l)), "S({n},{l})");
            }
        }
    }

    #[test]
    fn stirling_table_invariants() {
        let t = StirlingTable::global();
        let bells = [1u64, 1, 2, 5, 15, 52, 203, 877, 4140, 21147, 115975];
        for (n, b) in bells.iter().enumerate() {
            assert_eq!(t.bell(n).unwrap(), BigUint::from(*b));
        }
        for n in 1..=STIRLING_MAX_N {
            assert!(t.get(n, 1).unwrap().is_one());
            assert!(t.get(n, n).unwrap().is_one());
            assert!(t.get(n, 0).unwrap().is_zero());
        }
        assert!(stirling2(65, 1).is_err());
        assert!(stirling2(3, 4).is_err());
    }

    #[test]
    fn touchard_values() {
        assert_eq!(touchard(0, 3.7).unwrap(), 1.0);
        assert_eq!(touchard(2, 5.0).unwrap(), 30.0);
        // second moment of Poisson(5) by summing the pmf
        let m2: f64 = (0..200u64).map(|k| (k * k) as f64 * poisson_count_pmf(k, 5.0)).sum();
        assert!((m2 - 30.0).abs() < 1e-10);
        assert!(touchard(2, -1.0).is_err());
    }

    #[test]
    fn touchard_matches_monte_carlo_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let samples = 200_000;
        for &x in &[0.5, 2.0, 10.0] {
            let draws: Vec<f64> = Poisson::new(x).unwrap().sample_iter(&mut rng).take(samples).collect();
            for n in 1..=6 {
                let vals: Vec<f64> = draws.iter().map(|k| k.powi(n as i32)).collect();
                let mean = vals.iter().sum::<f64>() / samples as f64;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (samples - 1) as f64;
                let se = (var / samples as f64).sqrt();
                let t = touchard(n, x).unwrap();
                assert!((mean - t).abs() <= 3.0 * se + 1e-12, "x={x} n={n} mean={mean} T={t} se={se}");
            }
        }
    }

    #[test]
    fn pmf_examples() {
        assert!((poisson_count_pmf(0, 2.5) - (-2.5f64).exp()).abs() < 1e-16);
        let want = 8.0 * (-2.0f64).exp() / 6.0;
        assert!((poisson_count_pmf(3, 2.0) - want).abs() < 1e-15);
        assert!((want - 0.1804).abs() < 1e-4);
        for &m in &[0.3, 7.0, 150.0, 1000.0] {
            let total: f64 = (0..5000u64).map(|n| poisson_count_pmf(n, m)).sum();
            assert!((total - 1.0).abs() < 1e-12, "mass {m}: {total}");
        }
        assert!(poisson_count_pmf(10_000, 1000.0).is_finite());
        assert_eq!(poisson_count_pmf(0, 0.0), 1.0);
        assert_eq!(poisson_count_pmf(2, 0.0), 0.0);
    }

    #[test]
    fn subpoisson_bound_examples() {
        let kv: f64 = 1.7;
        let b1 = subpoisson_pmf_bound(1, kv, 1.0).unwrap();
        assert!((b1 - std::f64::consts::E * kv * (-kv).exp()).abs() < 1e-14);
        // n = 10, κV = 5: 10!(e/10)^10 5^10 e^-5 / 10! = e^5 / 2^10
        let b10 = subpoisson_pmf_bound(10, 5.0, 1.0).unwrap();
        let exact = 5f64.exp() / 1024.0;
        assert!((b10 - exact).abs() / exact < 1e-13);
        for n in 1..400u64 {
            assert!(ln_tail_factor(n) >= -1e-12);
            assert!(subpoisson_pmf_bound(n, 3.0, 2.0).unwrap() >= poisson_count_pmf(n, 6.0));
        }
        assert!(subpoisson_pmf_bound(0, 1.0, 1.0).is_err());
    }

    #[test]
    fn mgf_closed_form_and_series() {
        assert_eq!(poisson_mgf(0.0, 3.0).unwrap(), 1.0);
        assert_eq!(poisson_mgf(0.7, 0.0).unwrap(), 1.0);
        let closed = poisson_mgf(0.5, 4.0).unwrap();
        let series = poisson_mgf_series(0.5, 4.0, 30).unwrap();
        assert!((closed - series).abs() / closed <= 1e-10);
        // 30 terms only converge to 1e-10 on part of the (β, mass) square;
        // e.g. β = 1, mass = 10 still has relative error ~0.36.
        for (beta, m) in [(0.1, 10.0), (0.25, 10.0), (0.5, 1.0), (0.75, 1.0), (-0.5, 1.0), (0.3, 0.0)] {
            let c = poisson_mgf(beta, m).unwrap();
            let s = poisson_mgf_series(beta, m, 30).unwrap();
            assert!((c - s).abs() / c <= 1e-10, "beta={beta} m={m}");
        }
    }

    #[test]
    fn exact_integer_helpers() {
        assert_eq!(binomial(5, 2), BigUint::from(10u32));
        assert_eq!(binomial(3, 5), BigUint::zero());
        assert_eq!(factorial(5), BigUint::from(120u32));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn falling_factorial_expansion(k in 0u64..40, n in 1usize..12) {
                let table = StirlingTable::global();
                let mut rhs = BigUint::zero();
                for l in 1..=n {
                    rhs += table.get(n, l).unwrap() * factorial(l as u64) * binomial(k, l as u64);
                }
                prop_assert_eq!(BigUint::from(k).pow(n as u32), rhs);
            }

            #[test]
            fn touchard_binomial_recurrence(n in 0usize..15, x in 0.0f64..5.0) {
                // T_{n+1}(x) = x Σ_k C(n, k) T_k(x)
                let lhs = touchard(n + 1, x).unwrap();
                let rhs: f64 = x * (0..=n)
                    .map(|k| binomial(n as u64, k as u64).to_f64().unwrap() * touchard(k, x).unwrap())
                    .sum::<f64>();
                prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0), "{lhs} {rhs}");
            }

            #[test]
            fn tail_factor_dominates_poisson(n in 1u64..60, kappa in 0.01f64..5.0, volume in 0.1f64..20.0) {
                let bound = subpoisson_pmf_bound(n, kappa, volume).unwrap();
                prop_assert!(bound >= poisson_count_pmf(n, kappa * volume) * (1.0 - 1e-12));
            }

            #[test]
            fn pmf_sums_to_one(mass in 0.0f64..30.0) {
                let total: f64 = (0..200).map(|n| poisson_count_pmf(n, mass)).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
            }
        }
    }
}
