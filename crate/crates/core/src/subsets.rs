//! Size-K subsets of `0..n`: counting, lexicographic enumeration and
//! validation of played actions.

use crate::{Error, Result};

/// Default cap on the number of subsets any enumeration will visit.
pub const DEFAULT_SUBSET_CAP: u128 = 1_000_000;

/// `C(n, k)` without overflow for the sizes we care about.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// Fails with [`Error::Capacity`] when `C(n, k)` exceeds `cap`.
pub fn check_capacity(n: usize, k: usize, cap: u128, advice: &'static str) -> Result<()> {
    let count = binomial(n, k);
    if count > cap {
        return Err(Error::Capacity { count, cap, advice });
    }
    Ok(())
}

/// Iterator over all size-`k` subsets of `0..n` in lexicographic order.
#[derive(Debug, Clone)]
pub struct Combinations {
    n: usize,
    current: Option<Vec<usize>>,
}

impl Combinations {
    pub fn new(n: usize, k: usize) -> Self {
        let current = if k <= n { Some((0..k).collect()) } else { None };
        Combinations { n, current }
    }
}

impl Iterator for Combinations {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let cur = self.current.as_mut().unwrap();
        let k = cur.len();
        // rightmost position that can still advance
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if cur[i] < self.n - k + i {
                cur[i] += 1;
                for j in i + 1..k {
                    cur[j] = cur[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Checks that `s` is a valid action: exactly `k` distinct indices below `n`.
pub fn validate_action(s: &[usize], n: usize, k: usize) -> Result<()> {
    if s.len() != k {
        return Err(Error::input(format!("action has {} arms, expected K = {k}", s.len())));
    }
    validate_indices(s, n)
}

/// Checks that `s` is nonempty, in range and duplicate-free.
pub fn validate_indices(s: &[usize], n: usize) -> Result<()> {
    if s.is_empty() {
        return Err(Error::input("empty action set"));
    }
    for (pos, &i) in s.iter().enumerate() {
        if i >= n {
            return Err(Error::input(format!("arm index {i} out of range (N = {n})")));
        }
        if s[..pos].contains(&i) {
            return Err(Error::input(format!("arm index {i} repeated")));
        }
    }
    Ok(())
}

/// Formats an action as semicolon-joined indices, e.g. `0;3;4`.
pub fn format_action(s: &[usize]) -> String {
    s.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

/// Inverse of [`format_action`].
pub fn parse_action(text: &str) -> Result<Vec<usize>> {
    text.split(';')
        .map(|tok| {
            tok.trim()
                .parse::<usize>()
                .map_err(|_| Error::input(format!("bad arm index {tok:?}")))
        })
        .collect()
}
