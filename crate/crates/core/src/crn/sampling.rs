use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};

/// `C(n, k)`, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) stays integral at every step
        let Some(next) = acc.checked_mul((n - i) as u128) else {
            return u128::MAX;
        };
        acc = next / (i as u128 + 1);
    }
    acc
}

/// Draws `t` subsets of size `k` from `0..n`.
///
/// Each draw picks `k` distinct indices uniformly; draws are independent of
/// each other, so the same subset may come up twice. Indices inside a subset
/// are sorted ascending, which keeps temporal order for sequence-aware
/// conditioning.
pub fn sample_subsets<R: Rng + ?Sized>(n: usize, k: usize, t: usize, rng: &mut R) -> Result<Vec<Vec<usize>>> {
    if k < 2 || k > n {
        return Err(Error::Contract(format!(
            "subset size must satisfy 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    let combinations = binomial(n, k);
    if t as u128 >= combinations {
        return Err(Error::Sampling { n, k, t, combinations });
    }
    Ok(draw(n, k, t, rng))
}

pub(crate) fn draw<R: Rng + ?Sized>(n: usize, k: usize, t: usize, rng: &mut R) -> Vec<Vec<usize>> {
    (0..t)
        .map(|_| {
            let mut s = index::sample(rng, n, k).into_vec();
            s.sort_unstable();
            s
        })
        .collect()
}
