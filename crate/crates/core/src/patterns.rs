//! Sums over index tuples, naive and reduced by exchangeability.
//!
//! For a summand invariant under every permutation of `0..n` that fixes the
//! given labels, the sum over all `n^free` tuples equals a sum over equality
//! patterns: each free index either repeats a fixed label or joins a block of
//! fresh labels, and a pattern with `b` fresh blocks stands for
//! `(n - d)(n - d - 1)...(n - d - b + 1)` tuples, `d` the number of fixed labels.

/// Falling factorial `m (m - 1) ... (m - r + 1)`.
pub fn falling(m: usize, r: usize) -> f64 {
    if r > m {
        return 0.0;
    }
    (0..r).fold(1.0, |acc, i| acc * (m - i) as f64)
}

fn check_fixed(n: usize, fixed: &[usize]) {
    for (a, &x) in fixed.iter().enumerate() {
        assert!(x < n, "fixed label {x} out of range for n = {n}");
        assert!(!fixed[..a].contains(&x), "fixed labels must be distinct");
    }
}

/// `Σ_{t ∈ [n]^free} f(fixed ++ t)` by direct enumeration (lexicographic order).
pub fn naive_sum(n: usize, fixed: &[usize], free: usize, mut f: impl FnMut(&[usize]) -> f64) -> f64 {
    check_fixed(n, fixed);
    let d = fixed.len();
    let mut labels: Vec<usize> = fixed.to_vec();
    labels.resize(d + free, 0);
    if free == 0 {
        return f(&labels);
    }
    if n == 0 {
        return 0.0;
    }
    let mut acc = 0.0;
    loop {
        acc += f(&labels);
        let mut pos = d + free;
        loop {
            if pos == d {
                return acc;
            }
            pos -= 1;
            labels[pos] += 1;
            if labels[pos] < n {
                break;
            }
            labels[pos] = 0;
        }
    }
}

/// Same sum as [`naive_sum`], evaluated once per equality pattern and weighted by its size.
pub fn exchangeable_sum(n: usize, fixed: &[usize], free: usize, mut f: impl FnMut(&[usize]) -> f64) -> f64 {
    check_fixed(n, fixed);
    let d = fixed.len();
    // fresh labels are the smallest values not among the fixed ones
    let fresh: Vec<usize> = (0..n).filter(|x| !fixed.contains(x)).collect();
    let mut labels: Vec<usize> = fixed.to_vec();
    labels.resize(d + free, 0);
    let mut acc = 0.0;
    walk(n - d, &fresh, fixed, &mut labels, d, 0, &mut f, &mut acc);
    acc
}

#[allow(clippy::too_many_arguments)]
fn walk(
    room: usize,
    fresh: &[usize],
    fixed: &[usize],
    labels: &mut Vec<usize>,
    pos: usize,
    blocks: usize,
    f: &mut impl FnMut(&[usize]) -> f64,
    acc: &mut f64,
) {
    if pos == labels.len() {
        *acc += falling(room, blocks) * f(labels);
        return;
    }
    for &x in fixed {
        labels[pos] = x;
        walk(room, fresh, fixed, labels, pos + 1, blocks, f, acc);
    }
    for b in 0..blocks {
        labels[pos] = fresh[b];
        walk(room, fresh, fixed, labels, pos + 1, blocks, f, acc);
    }
    if blocks < room {
        labels[pos] = fresh[blocks];
        walk(room, fresh, fixed, labels, pos + 1, blocks + 1, f, acc);
    }
}

/// Number of patterns [`exchangeable_sum`] visits (for budgeting).
pub fn pattern_count(n: usize, fixed: usize, free: usize) -> f64 {
    // dp over positions: state = fresh blocks opened so far
    let room = n.saturating_sub(fixed);
    let mut ways = vec![0.0f64; free + 2];
    ways[0] = 1.0;
    for _ in 0..free {
        let mut next = vec![0.0f64; free + 2];
        for (b, &w) in ways.iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            next[b] += w * (fixed + b) as f64;
            if b < room {
                next[b + 1] += w;
            }
        }
        ways = next;
    }
    ways.iter().sum()
}
