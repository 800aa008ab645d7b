//! Exact rational helpers shared by the budget machinery.

use num::{BigInt, BigRational, One, Zero};

pub fn rat(n: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(n))
}

pub fn ratio(n: i64, d: i64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

/// `base^exp` for integer `exp`, exact.
pub fn pow_int(base: &BigRational, exp: i64) -> BigRational {
    if exp == 0 {
        return BigRational::one();
    }
    let mut acc = BigRational::one();
    let b = if exp > 0 {
        base.clone()
    } else {
        base.recip()
    };
    for _ in 0..exp.unsigned_abs() {
        acc *= &b;
    }
    acc
}

/// Smallest power of `base` (> 1) that is >= `x`, as (exponent, value).
/// `x` must be positive.
pub fn ceil_pow(base: &BigRational, x: &BigRational) -> (i64, BigRational) {
    assert!(x > &BigRational::zero());
    let mut k: i64 = 0;
    let mut cur = BigRational::one();
    if cur >= *x {
        while &cur / base >= *x {
            cur /= base;
            k -= 1;
        }
    } else {
        while cur < *x {
            cur *= base;
            k += 1;
        }
    }
    (k, cur)
}

/// Largest exponent k with `base^k <= x`, for positive `x` and `base > 1`.
pub fn floor_log(base: &BigRational, x: &BigRational) -> i64 {
    assert!(x > &BigRational::zero());
    let mut k: i64 = 0;
    let mut cur = BigRational::one();
    if cur <= *x {
        while &cur * base <= *x {
            cur *= base;
            k += 1;
        }
    } else {
        while cur > *x {
            cur /= base;
            k -= 1;
        }
    }
    k
}

/// Smallest integral multiple of `step` that is >= `x` (zero step requires x <= 0).
pub fn ceil_multiple(step: &BigRational, x: &BigRational) -> BigRational {
    if step.is_zero() {
        assert!(x <= &BigRational::zero(), "cannot round {x} up to a multiple of zero");
        return BigRational::zero();
    }
    let q = x / step;
    let c = q.ceil();
    &c * step
}

/// Smallest integral multiple of `step` strictly greater than `x`.
pub fn next_multiple(step: &BigRational, x: &BigRational) -> BigRational {
    if step.is_zero() {
        assert!(x < &BigRational::zero() || x.is_zero());
        return BigRational::zero();
    }
    let q = x / step;
    let f = q.floor();
    (&f + BigRational::one()) * step
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ceil_pow_basics() {
        let two = rat(2);
        assert_eq!(ceil_pow(&two, &rat(1)), (0, rat(1)));
        assert_eq!(ceil_pow(&two, &rat(3)), (2, rat(4)));
        assert_eq!(ceil_pow(&two, &ratio(1, 3)), (-1, ratio(1, 2)));
        let three_half = ratio(3, 2);
        assert_eq!(ceil_pow(&three_half, &rat(2)).1, ratio(9, 4));
    }

    #[test]
    fn floor_log_basics() {
        let two = rat(2);
        assert_eq!(floor_log(&two, &rat(1)), 0);
        assert_eq!(floor_log(&two, &rat(3)), 1);
        assert_eq!(floor_log(&two, &rat(4)), 2);
        assert_eq!(floor_log(&two, &ratio(1, 3)), -2);
    }

    #[test]
    fn multiples() {
        assert_eq!(ceil_multiple(&rat(3), &rat(7)), rat(9));
        assert_eq!(ceil_multiple(&rat(3), &rat(9)), rat(9));
        assert_eq!(next_multiple(&rat(3), &rat(9)), rat(12));
        assert_eq!(next_multiple(&rat(3), &rat(0)), rat(3));
    }

    #[test]
    fn pow_negative() {
        assert_eq!(pow_int(&rat(2), -2), ratio(1, 4));
        assert_eq!(pow_int(&ratio(3, 2), 2), ratio(9, 4));
    }
}
