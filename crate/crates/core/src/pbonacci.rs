//! Exact p-bonacci sequences and their partial sums.
//!
//! `X_1 = 1` and `X_n = Σ_{k=max(1, n−p)}^{n−1} X_k`, so the first `p + 1`
//! terms are `1, 1, 2, 4, …, 2^{p−1}` and later terms add exactly `p`
//! predecessors. `S_n = Σ_{k≤n} X_k` counts the macronodes of the unrolled
//! tree for the consecutive lag set `{1..p}` and satisfies
//! `√2^{n−1} ≤ S_n ≤ 2^{n−1}`. All arithmetic is checked `u128`.

use std::fmt::Write as _;

use serde::Serialize;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PbonacciTable {
    p: usize,
    values: Vec<u128>,
    sums: Vec<u128>,
}

impl PbonacciTable {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `X_1..X_n` (index 0 holds `X_1`).
    pub fn values(&self) -> &[u128] {
        &self.values
    }

    /// `S_1..S_n` (index 0 holds `S_1`).
    pub fn sums(&self) -> &[u128] {
        &self.sums
    }

    /// `X_n`, 1-based.
    pub fn x(&self, n: usize) -> u128 {
        self.values[n - 1]
    }

    /// `S_n`, 1-based.
    pub fn s(&self, n: usize) -> u128 {
        self.sums[n - 1]
    }

    /// Aligned text table `n  X_n  S_n`.
    pub fn to_text(&self) -> String {
        let w = self.sums.last().map_or(1, |s| s.to_string().len()).max(3);
        let mut out = format!("{:>4}  {:>w$}  {:>w$}\n", "n", "X_n", "S_n");
        for (i, (x, s)) in self.values.iter().zip(&self.sums).enumerate() {
            let _ = writeln!(out, "{:>4}  {x:>w$}  {s:>w$}", i + 1);
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,x,s\n");
        for (i, (x, s)) in self.values.iter().zip(&self.sums).enumerate() {
            let _ = writeln!(out, "{},{x},{s}", i + 1);
        }
        out
    }
}

fn overflow(p: usize, n: usize) -> Error {
    Error::Overflow(format!("p-bonacci p={p} overflows u128 at n={n}"))
}

pub fn build_table(p: usize, n: usize) -> Result<PbonacciTable> {
    if p < 2 {
        return Err(Error::InvalidArgument(format!(
            "p-bonacci order p={p}, need p >= 2"
        )));
    }
    if n < 1 {
        return Err(Error::InvalidArgument(
            "p-bonacci length n must be >= 1".into(),
        ));
    }
    let mut values: Vec<u128> = Vec::with_capacity(n);
    let mut sums: Vec<u128> = Vec::with_capacity(n);
    for i in 1..=n {
        let x = if i == 1 {
            1
        } else {
            // S_{i−1} − S_{i−p−1} = Σ_{k=max(1,i−p)}^{i−1} X_k
            let hi = sums[i - 2];
            let lo = if i > p + 1 { sums[i - p - 2] } else { 0 };
            hi - lo
        };
        let s = match sums.last() {
            Some(prev) => prev.checked_add(x).ok_or_else(|| overflow(p, i))?,
            None => x,
        };
        values.push(x);
        sums.push(s);
    }
    Ok(PbonacciTable { p, values, sums })
}

/// Exact verdict on `√2^{n−1} ≤ S_n ≤ 2^{n−1}` for one `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BoundCheck {
    pub n: usize,
    /// `S_n² ≥ 2^{n−1}`.
    pub lower_ok: bool,
    /// `S_n ≤ 2^{n−1}`.
    pub upper_ok: bool,
}

impl BoundCheck {
    pub fn passed(&self) -> bool {
        self.lower_ok && self.upper_ok
    }
}

/// `a²` as a 256-bit `(hi, lo)` pair.
fn square_wide(a: u128) -> (u128, u128) {
    let mask = u64::MAX as u128;
    let (a1, a0) = (a >> 64, a & mask);
    let lo_lo = a0 * a0;
    let cross = a0 * a1; // counted twice
    let hi_hi = a1 * a1;
    let (mid, mid_carry) = cross.overflowing_add(cross);
    let (lo, c1) = lo_lo.overflowing_add(mid << 64);
    let hi = hi_hi + (mid >> 64) + ((mid_carry as u128) << 64) + c1 as u128;
    (hi, lo)
}

/// `2^k` as a 256-bit `(hi, lo)` pair, `k < 256`.
fn pow2_wide(k: usize) -> (u128, u128) {
    if k < 128 {
        (0, 1u128 << k)
    } else {
        (1u128 << (k - 128), 0)
    }
}

pub fn check_bounds(table: &PbonacciTable) -> Vec<BoundCheck> {
    table
        .sums
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let n = i + 1;
            let e = n - 1;
            let upper_ok = e >= 128 || s <= 1u128 << e;
            let lower_ok = e >= 256 || square_wide(s) >= pow2_wide(e);
            BoundCheck {
                n,
                lower_ok,
                upper_ok,
            }
        })
        .collect()
}

/// Returns `(Σ_{i=1}^n F_i, F_{n+2} − 1)`.
pub fn fibonacci_sum_identity(n: usize) -> Result<(u128, u128)> {
    if n < 1 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let table = build_table(2, n + 2)?;
    Ok((table.s(n), table.x(n + 2) - 1))
}

/// Verdict on `S_n ≤ 2·S_{n−1}` for one `n ≥ 2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DoublingCheck {
    pub n: usize,
    pub holds: bool,
    pub equality: bool,
    /// Equality occurs exactly when `n ≤ p + 1`.
    pub equality_as_expected: bool,
}

impl DoublingCheck {
    pub fn passed(&self) -> bool {
        self.holds && self.equality_as_expected
    }
}

pub fn monotone_doubling_check(table: &PbonacciTable) -> Result<Vec<DoublingCheck>> {
    if table.len() < 2 {
        return Err(Error::InvalidArgument("doubling check needs n >= 2".into()));
    }
    Ok((2..=table.len())
        .map(|n| {
            let prev = table.s(n - 1);
            let cur = table.s(n);
            // S_n = S_{n−1} + X_n, so compare X_n with S_{n−1} to avoid doubling overflow
            let x = cur - prev;
            let holds = x <= prev;
            let equality = x == prev;
            DoublingCheck {
                n,
                holds,
                equality,
                equality_as_expected: equality == (n <= table.p + 1),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fibonacci_prefix() {
        let t = build_table(2, 7).unwrap();
        assert_eq!(t.values(), &[1, 1, 2, 3, 5, 8, 13]);
        assert_eq!(t.s(6), 20);
    }

    #[test]
    fn tribonacci_prefix() {
        let t = build_table(3, 5).unwrap();
        assert_eq!(t.values(), &[1, 1, 2, 4, 7]);
        assert_eq!(t.s(5), 15);
    }

    #[test]
    fn invalid_arguments() {
        assert!(build_table(1, 5).is_err());
        assert!(build_table(2, 0).is_err());
        assert!(fibonacci_sum_identity(0).is_err());
        assert!(monotone_doubling_check(&build_table(2, 1).unwrap()).is_err());
    }

    #[test]
    fn overflow_is_an_error() {
        assert!(matches!(build_table(2, 200), Err(Error::Overflow(_))));
        assert!(build_table(2, 180).is_ok());
    }

    #[test]
    fn bounds_examples() {
        let t = build_table(2, 1).unwrap();
        assert_eq!(
            check_bounds(&t),
            vec![BoundCheck {
                n: 1,
                lower_ok: true,
                upper_ok: true
            }]
        );
        let t = build_table(3, 5).unwrap();
        // 4 ≤ 15 ≤ 16
        assert!(check_bounds(&t)[4].passed());
        for p in 2..=6 {
            let t = build_table(p, 60).unwrap();
            assert!(check_bounds(&t).iter().all(BoundCheck::passed), "p={p}");
        }
    }

    #[test]
    fn bounds_reject_out_of_range_values() {
        let t = PbonacciTable {
            p: 2,
            values: vec![1, 2, 2],
            sums: vec![1, 3, 1],
        };
        let c = check_bounds(&t);
        assert!(!c[1].upper_ok); // 3 > 2
        assert!(!c[2].lower_ok); // 1 < 4
    }

    #[test]
    fn wide_square_matches_small_cases() {
        for a in [
            0u128,
            1,
            7,
            u64::MAX as u128,
            (u64::MAX as u128) + 5,
            u128::MAX >> 1,
        ] {
            let (hi, lo) = square_wide(a);
            if a <= u64::MAX as u128 {
                assert_eq!((hi, lo), (0, a * a));
            } else {
                assert!(hi > 0);
            }
        }
        // (2^64)^2 = 2^128
        assert_eq!(square_wide(1u128 << 64), (1, 0));
        assert_eq!(pow2_wide(130), (4, 0));
    }

    #[test]
    fn fibonacci_identity_examples() {
        assert_eq!(fibonacci_sum_identity(1).unwrap(), (1, 1));
        assert_eq!(fibonacci_sum_identity(5).unwrap(), (12, 12));
        let (l, r) = fibonacci_sum_identity(80).unwrap();
        assert_eq!(l, r);
    }

    #[test]
    fn doubling_examples() {
        let t = build_table(2, 10).unwrap();
        let c = monotone_doubling_check(&t).unwrap();
        assert!(c[0].equality); // n = 2
        assert!(!c[2].equality && c[2].holds); // n = 4: 7 < 8
        let t = build_table(3, 10).unwrap();
        let c = monotone_doubling_check(&t).unwrap();
        assert!(c[2].equality); // n = 4: 8 = 8
        for p in 2..=6 {
            let t = build_table(p, 60).unwrap();
            assert!(monotone_doubling_check(&t)
                .unwrap()
                .iter()
                .all(DoublingCheck::passed));
        }
    }

    #[test]
    fn binet_agrees_up_to_seventy() {
        let sqrt5 = 5f64.sqrt();
        let phi = (1.0 + sqrt5) / 2.0;
        let t = build_table(2, 70).unwrap();
        for n in 1..=70 {
            let binet = (phi.powi(n as i32) / sqrt5).round();
            // f64 keeps 53 bits; F_70 < 2^49 so rounding is exact
            assert_eq!(t.x(n), binet as u128, "n={n}");
        }
    }

    #[test]
    fn sums_non_decreasing_in_p() {
        for n in 1..=60 {
            let mut prev = 0;
            for p in 2..=8 {
                let s = build_table(p, n).unwrap().s(n);
                assert!(s >= prev);
                prev = s;
            }
        }
    }

    #[test]
    fn text_and_csv() {
        let t = build_table(2, 3).unwrap();
        assert_eq!(t.to_csv(), "n,x,s\n1,1,1\n2,1,2\n3,2,4\n");
        assert!(t.to_text().lines().count() == 4);
    }

    proptest::proptest! {
        #[test]
        fn strictly_increasing_after_first(p in 2usize..10, n in 2usize..120) {
            let t = build_table(p, n).unwrap();
            for i in 2..n {
                proptest::prop_assert!(t.x(i + 1) > t.x(i));
            }
        }
    }
}
