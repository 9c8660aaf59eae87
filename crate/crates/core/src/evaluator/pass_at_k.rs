//! Unbiased Pass@k from `n` samples with `c` correct.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PassAtKError {
    #[error("need 0 <= c <= n, got c = {c}, n = {n}")]
    CorrectOutOfRange { n: u64, c: u64 },
    #[error("need 1 <= k <= n, got k = {k}, n = {n}")]
    BudgetOutOfRange { n: u64, k: u64 },
}

fn check(n: u64, c: u64, k: u64) -> Result<(), PassAtKError> {
    if c > n {
        return Err(PassAtKError::CorrectOutOfRange { n, c });
    }
    if k == 0 || k > n {
        return Err(PassAtKError::BudgetOutOfRange { n, k });
    }
    Ok(())
}

/// `1 - C(n-c, k) / C(n, k)` as an exact fraction. The binomial ratio is
/// the product over `i < k` of `(n-c-i) / (n-i)`, so no factorial is ever
/// formed.
pub fn pass_at_k_exact(n: u64, c: u64, k: u64) -> Result<BigRational, PassAtKError> {
    check(n, c, k)?;
    if k > n - c {
        return Ok(BigRational::one());
    }
    let mut miss = BigRational::one();
    for i in 0..k {
        miss *= BigRational::new(BigInt::from(n - c - i), BigInt::from(n - i));
        if miss.is_zero() {
            break;
        }
    }
    Ok(BigRational::one() - miss)
}

/// [`pass_at_k_exact`] rounded once to the nearest `f64`.
pub fn pass_at_k(n: u64, c: u64, k: u64) -> Result<f64, PassAtKError> {
    let exact = pass_at_k_exact(n, c, k)?;
    Ok(exact.to_f64().expect("value lies in [0, 1]"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassAtK {
    pub n: u64,
    pub c: u64,
    pub k: u64,
    pub value: f64,
}

impl PassAtK {
    pub fn compute(n: u64, c: u64, k: u64) -> Result<Self, PassAtKError> {
        Ok(Self {
            n,
            c,
            k,
            value: pass_at_k(n, c, k)?,
        })
    }
}
