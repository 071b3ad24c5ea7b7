//! Wick's formula and exact trace moments of Gaussian models.
//!
//! `E Tr[(n^{-1/2} X)^{2k}] = n^{-k} Σ_{i_1..i_{2k}} E[X_{i_1 i_2} X_{i_2 i_3} ... X_{i_{2k} i_1}]`,
//! and each expectation is a sum over the `(2k-1)!!` pair partitions of the
//! factors. Exchangeable models are summed over index-equality patterns
//! (see [`crate::patterns`]); the naive tuple loop is kept for cross-checks.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::budget::Budget;
use crate::ensembles::Ensemble;
use crate::error::{Error, Result};
use crate::fk::{classify_sentence_edges, Edge, Word};
use crate::matrix::{Entry, SymMatrix};
use crate::patterns::{exchangeable_sum, naive_sum, pattern_count};
use crate::rng::RngStream;

pub const MAX_PAIRING_K: usize = 8;

/// `(2k - 1)!!`.
pub fn double_factorial_odd(k: usize) -> f64 {
    (1..=k).fold(1.0, |acc, i| acc * (2 * i - 1) as f64)
}

/// A perfect matching of `{0, .., 2k-1}`; `partner[a]` is the element paired with `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairPartition {
    k: u8,
    partner: [u8; 2 * MAX_PAIRING_K],
}

impl PairPartition {
    pub fn k(&self) -> usize {
        self.k as usize
    }

    pub fn partner(&self, a: usize) -> usize {
        self.partner[a] as usize
    }

    /// Pairs `(a, b)` with `a < b`, sorted by `a`.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..2 * self.k())
            .filter_map(|a| {
                let b = self.partner(a);
                (a < b).then_some((a, b))
            })
            .collect()
    }
}

impl fmt::Display for PairPartition {
    /// One-based, e.g. `{1,2}{3,4}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (a, b) in self.pairs() {
            write!(f, "{{{},{}}}", a + 1, b + 1)?;
        }
        Ok(())
    }
}

/// Visits every pairing of `0..2k`: the smallest unpaired element is matched
/// with each later unpaired element in increasing order.
pub fn for_each_pairing(k: usize, mut visit: impl FnMut(&PairPartition)) {
    assert!(k <= MAX_PAIRING_K, "k = {k} exceeds {MAX_PAIRING_K}");
    let mut p = PairPartition {
        k: k as u8,
        partner: [u8::MAX; 2 * MAX_PAIRING_K],
    };
    fn rec(p: &mut PairPartition, visit: &mut impl FnMut(&PairPartition)) {
        let m = 2 * p.k();
        let Some(a) = (0..m).find(|&a| p.partner[a] == u8::MAX) else {
            visit(p);
            return;
        };
        for b in a + 1..m {
            if p.partner[b] == u8::MAX {
                p.partner[a] = b as u8;
                p.partner[b] = a as u8;
                rec(p, visit);
                p.partner[a] = u8::MAX;
                p.partner[b] = u8::MAX;
            }
        }
    }
    rec(&mut p, &mut visit);
}

/// All `(2k - 1)!!` pairings in the order of [`for_each_pairing`].
pub fn enumerate_pairings(k: usize, budget: &Budget) -> Result<Vec<PairPartition>> {
    if k == 0 || k > MAX_PAIRING_K {
        return Err(Error::invalid("k", format!("must be in 1..={MAX_PAIRING_K}")));
    }
    budget.check("enumerate_pairings", double_factorial_odd(k) * k as f64)?;
    let mut out = Vec::with_capacity(double_factorial_odd(k) as usize);
    for_each_pairing(k, |p| out.push(*p));
    Ok(out)
}

/// Calls `visit(partner, product)` for each pairing in enumeration order,
/// the product taken over pairs in order of their smaller element.
/// Pairings whose partial product is already zero are skipped.
fn for_each_pairing_product(c: &[f64], m: usize, mut visit: impl FnMut(&[u8], f64)) {
    fn rec(c: &[f64], m: usize, partner: &mut [u8], acc: f64, visit: &mut impl FnMut(&[u8], f64)) {
        let Some(a) = (0..m).find(|&a| partner[a] == u8::MAX) else {
            visit(partner, acc);
            return;
        };
        for b in a + 1..m {
            if partner[b] != u8::MAX {
                continue;
            }
            let v = acc * c[a * m + b];
            if v == 0.0 {
                continue;
            }
            partner[a] = b as u8;
            partner[b] = a as u8;
            rec(c, m, partner, v, visit);
            partner[a] = u8::MAX;
            partner[b] = u8::MAX;
        }
    }
    let mut partner = vec![u8::MAX; m];
    rec(c, m, &mut partner, 1.0, &mut visit);
}

fn factor_cov_table(factors: &[Entry], cov: &impl Fn(Entry, Entry) -> f64) -> Vec<f64> {
    let m = factors.len();
    let mut c = vec![0.0; m * m];
    for a in 0..m {
        for b in a + 1..m {
            c[a * m + b] = cov(factors[a], factors[b]);
        }
    }
    c
}

/// `E[Π X_f]` for a centered Gaussian vector by Wick's formula.
///
/// Odd products vanish; the empty product is 1. `factors.len()` may not exceed 16.
pub fn wick_expectation(factors: &[Entry], cov: impl Fn(Entry, Entry) -> f64) -> f64 {
    let m = factors.len();
    if m % 2 == 1 {
        return 0.0;
    }
    assert!(m <= 2 * MAX_PAIRING_K, "at most {} factors", 2 * MAX_PAIRING_K);
    let c = factor_cov_table(factors, &cov);
    let mut total = 0.0;
    for_each_pairing_product(&c, m, |_, v| total += v);
    total
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MomentMethod {
    /// Reduced when the model is exchangeable, naive otherwise.
    #[default]
    Auto,
    Naive,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentResult {
    pub n: usize,
    pub two_k: usize,
    pub value: f64,
    /// Index tuples (or patterns) times pairings evaluated.
    pub term_count: f64,
    pub method: MomentMethod,
}

/// Replaces `Auto` by the route the model supports.
pub(crate) fn resolve_method(model: &dyn Ensemble, method: MomentMethod) -> Result<MomentMethod> {
    match method {
        MomentMethod::Auto if model.is_exchangeable() => Ok(MomentMethod::Reduced),
        MomentMethod::Auto => Ok(MomentMethod::Naive),
        MomentMethod::Reduced if !model.is_exchangeable() => {
            Err(Error::invalid("method", "pattern reduction needs an exchangeable model"))
        }
        m => Ok(m),
    }
}

fn cycle_factors(labels: &[usize], out: &mut Vec<Entry>) {
    out.clear();
    let m = labels.len();
    for a in 0..m {
        out.push(Entry::new(labels[a], labels[(a + 1) % m]));
    }
}

/// Exact `E Tr[(n^{-1/2} X)^{two_k}]`.
pub fn exact_trace_moment(
    model: &dyn Ensemble,
    two_k: usize,
    method: MomentMethod,
    budget: &Budget,
) -> Result<MomentResult> {
    let n = model.n();
    if !model.is_gaussian() {
        return Err(Error::invalid("model", "exact moments require jointly Gaussian entries"));
    }
    if two_k % 2 == 1 {
        return Err(Error::invalid("two_k", "must be even"));
    }
    if two_k > 2 * MAX_PAIRING_K {
        return Err(Error::invalid("two_k", format!("at most {}", 2 * MAX_PAIRING_K)));
    }
    let method = resolve_method(model, method)?;
    if two_k == 0 {
        return Ok(MomentResult {
            n,
            two_k,
            value: n as f64,
            term_count: 0.0,
            method,
        });
    }
    let k = two_k / 2;
    let pairings = double_factorial_odd(k);
    let tuples = match method {
        MomentMethod::Reduced => pattern_count(n, 0, two_k),
        _ => (n as f64).powi(two_k as i32),
    };
    budget.check("exact_trace_moment", tuples * pairings * k as f64)?;

    let cov = |a: Entry, b: Entry| model.entry_cov(a, b);
    let mut factors = Vec::with_capacity(two_k);
    let summand = |labels: &[usize]| {
        cycle_factors(labels, &mut factors);
        wick_expectation(&factors, cov)
    };
    let sum = match method {
        MomentMethod::Reduced => exchangeable_sum(n, &[], two_k, summand),
        _ => naive_sum(n, &[], two_k, summand),
    };
    let value = sum / (n as f64).powi(k as i32);
    if !value.is_finite() {
        return Err(Error::NonFinite);
    }
    Ok(MomentResult {
        n,
        two_k,
        value,
        term_count: tuples * pairings,
        method,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McMoment {
    pub mean: f64,
    pub std_err: f64,
    pub reps: usize,
}

/// `Tr[(n^{-1/2} X)^{two_k}]` for one matrix.
pub fn normalized_trace_power(x: &SymMatrix, two_k: usize) -> f64 {
    let n = x.n();
    if two_k == 0 {
        return n as f64;
    }
    let k = two_k / 2;
    let sq = x.square();
    let tr = if k == 1 {
        x.frobenius_sq()
    } else {
        let mut p = sq.clone();
        for _ in 2..k {
            p = p.mul_sym(&sq);
        }
        // Tr(P S) for symmetric P, S
        p.as_slice().iter().zip(sq.as_slice()).map(|(a, b)| a * b).sum()
    };
    tr / (n as f64).powi(k as i32)
}

/// Monte Carlo estimate from `reps` sequential draws of one stream.
pub fn mc_trace_moment(model: &dyn Ensemble, two_k: usize, reps: usize, rng: &mut RngStream) -> Result<McMoment> {
    if two_k % 2 == 1 {
        return Err(Error::invalid("two_k", "must be even"));
    }
    if reps == 0 {
        return Err(Error::invalid("reps", "must be at least 1"));
    }
    if two_k == 0 {
        return Ok(McMoment {
            mean: model.n() as f64,
            std_err: 0.0,
            reps,
        });
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for r in 0..reps {
        let v = normalized_trace_power(&model.sample(rng), two_k);
        let d = v - mean;
        mean += d / (r + 1) as f64;
        m2 += d * (v - mean);
    }
    let var = if reps > 1 { m2 / (reps - 1) as f64 } else { 0.0 };
    Ok(McMoment {
        mean,
        std_err: (var / reps as f64).sqrt(),
        reps,
    })
}

/// How a Wick pair relates the edge classes of its two factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchCase {
    /// E¹ with E².
    I,
    /// E¹ with E³.
    Ii,
    /// E² with E³.
    Iii,
    /// E¹ among themselves.
    Iv,
    /// E² self-matched or with one another.
    V,
    /// E³ among themselves.
    Vi,
}

impl MatchCase {
    pub fn of_classes(a: u8, b: u8) -> MatchCase {
        match (a.min(b), a.max(b)) {
            (1, 2) => MatchCase::I,
            (1, 3) => MatchCase::Ii,
            (2, 3) => MatchCase::Iii,
            (1, 1) => MatchCase::Iv,
            (2, 2) => MatchCase::V,
            _ => MatchCase::Vi,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            MatchCase::I => "i",
            MatchCase::Ii => "ii",
            MatchCase::Iii => "iii",
            MatchCase::Iv => "iv",
            MatchCase::V => "v",
            MatchCase::Vi => "vi",
        }
    }
}

impl fmt::Display for MatchCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditBucket {
    /// Sorted set of cases occurring among the pairing's pairs.
    pub cases: Vec<MatchCase>,
    /// Pairings with nonzero product.
    pub pairings: usize,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseAudit {
    pub word: Word,
    pub factor_count: usize,
    pub buckets: Vec<AuditBucket>,
    /// Contribution of pairs by case: each pairing's product is credited to every case it contains.
    pub per_case: BTreeMap<MatchCase, f64>,
    /// Flat sum over pairings, in the order used by [`wick_expectation`].
    pub total: f64,
}

/// The edge class of each step of `word`.
fn step_classes(word: &Word) -> Vec<u8> {
    let classes = classify_sentence_edges(std::slice::from_ref(word));
    word.steps()
        .map(|e: Edge| classes.class_of(e).expect("step edge lies in the word graph"))
        .collect()
}

/// Cases present in one pairing of the word's factors.
pub fn pairing_cases(word: &Word, pairs: &[(usize, usize)]) -> Vec<MatchCase> {
    let cls = step_classes(word);
    let mut cases: Vec<MatchCase> = pairs.iter().map(|&(a, b)| MatchCase::of_classes(cls[a], cls[b])).collect();
    cases.sort();
    cases.dedup();
    cases
}

/// The word's factors `X_{s_1 s_2} X_{s_2 s_3} ...`; letter `s` is index `s - 1`.
pub fn word_factors(word: &Word) -> Vec<Entry> {
    word.steps()
        .map(|e| Entry::new(e.0 as usize - 1, e.1 as usize - 1))
        .collect()
}

/// Buckets the Wick expansion of a closed word by matching cases.
///
/// A word of length 1 has no factors: its expectation is the empty product 1,
/// reported as a single bucket with no cases.
pub fn matching_case_audit(word: &Word, cov: impl Fn(Entry, Entry) -> f64) -> Result<CaseAudit> {
    if !word.is_closed() {
        return Err(Error::invalid("word", "must be closed"));
    }
    let factors = word_factors(word);
    let m = factors.len();
    if m > 2 * MAX_PAIRING_K {
        return Err(Error::invalid("word", format!("at most {} steps", 2 * MAX_PAIRING_K)));
    }
    let cls = step_classes(word);
    let mut buckets: BTreeMap<Vec<MatchCase>, AuditBucket> = BTreeMap::new();
    let mut per_case = BTreeMap::new();
    let mut total = 0.0;
    if m.is_multiple_of(2) {
        let c = factor_cov_table(&factors, &cov);
        for_each_pairing_product(&c, m, |partner, v| {
            total += v;
            let mut cases: Vec<MatchCase> = (0..m)
                .filter(|&a| (partner[a] as usize) > a)
                .map(|a| MatchCase::of_classes(cls[a], cls[partner[a] as usize]))
                .collect();
            cases.sort();
            cases.dedup();
            for &cs in &cases {
                *per_case.entry(cs).or_insert(0.0) += v;
            }
            let b = buckets.entry(cases.clone()).or_insert(AuditBucket {
                cases,
                pairings: 0,
                total: 0.0,
            });
            b.pairings += 1;
            b.total += v;
        });
    }
    Ok(CaseAudit {
        word: word.clone(),
        factor_count: m,
        buckets: buckets.into_values().collect(),
        per_case,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensembles::{EnsembleSpec, VDist};

    fn unit(a: Entry, b: Entry) -> f64 {
        if a == b {
            1.0
        } else {
            0.0
        }
    }

    #[test]
    fn pairing_counts() {
        let b = Budget::new(1e9);
        for k in 1..=6 {
            let ps = enumerate_pairings(k, &b).unwrap();
            assert_eq!(ps.len() as f64, double_factorial_odd(k));
            let distinct: std::collections::HashSet<_> = ps.iter().collect();
            assert_eq!(distinct.len(), ps.len());
        }
        assert_eq!(enumerate_pairings(1, &b).unwrap()[0].to_string(), "{1,2}");
        assert!(enumerate_pairings(9, &b).is_err());
        assert!(enumerate_pairings(8, &Budget::new(10.0)).is_err());
    }

    #[test]
    fn scalar_gaussian_moments() {
        let e = Entry::new(0, 1);
        assert_eq!(wick_expectation(&[e, e], unit), 1.0);
        assert_eq!(wick_expectation(&[e; 4], unit), 3.0);
        assert_eq!(wick_expectation(&[e; 6], unit), 15.0);
        assert_eq!(wick_expectation(&[e; 3], unit), 0.0);
        assert_eq!(wick_expectation(&[], unit), 1.0);
    }

    #[test]
    fn test_model_four_factors() {
        let n = 6;
        let m = TestModelFixture::new(n, 1.0);
        let f = [Entry::new(0, 1), Entry::new(0, 1), Entry::new(0, 2), Entry::new(0, 2)];
        let a2 = (n as f64).powf(-2.0);
        let v = wick_expectation(&f, |a, b| m.0.entry_cov(a, b));
        // Var = 1 + α², cross covariance α²
        let expect = (1.0 + a2) * (1.0 + a2) + 2.0 * a2 * a2;
        assert!((v - expect).abs() < 1e-15, "{v} vs {expect}");
    }

    struct TestModelFixture(Box<dyn Ensemble>);

    impl TestModelFixture {
        fn new(n: usize, eps: f64) -> Self {
            TestModelFixture(
                EnsembleSpec::TestModel {
                    n,
                    epsilon: eps,
                    v_dist: VDist::Gaussian,
                }
                .build()
                .unwrap(),
            )
        }
    }

    #[test]
    fn trivial_trace_moments() {
        let b = Budget::new(1e9);
        for n in 1..5 {
            let m = EnsembleSpec::IidGaussian { n }.build().unwrap();
            for method in [MomentMethod::Naive, MomentMethod::Reduced] {
                let r = exact_trace_moment(m.as_ref(), 2, method, &b).unwrap();
                assert_eq!(r.value, n as f64);
                assert_eq!(exact_trace_moment(m.as_ref(), 0, method, &b).unwrap().value, n as f64);
            }
        }
        let m = EnsembleSpec::IidGaussian { n: 1 }.build().unwrap();
        assert_eq!(exact_trace_moment(m.as_ref(), 4, MomentMethod::Auto, &b).unwrap().value, 3.0);
        assert!(exact_trace_moment(m.as_ref(), 3, MomentMethod::Auto, &b).is_err());
    }

    #[test]
    fn reduced_matches_naive() {
        let b = Budget::new(1e9);
        let specs = [
            EnsembleSpec::IidGaussian { n: 4 },
            EnsembleSpec::TestModel {
                n: 4,
                epsilon: 0.3,
                v_dist: VDist::Gaussian,
            },
            EnsembleSpec::ThreeParam {
                n: 4,
                epsilon: 0.5,
                gamma: 0.8,
            },
        ];
        for s in specs {
            let m = s.build().unwrap();
            for two_k in [2, 4, 6] {
                let a = exact_trace_moment(m.as_ref(), two_k, MomentMethod::Naive, &b).unwrap();
                let r = exact_trace_moment(m.as_ref(), two_k, MomentMethod::Reduced, &b).unwrap();
                assert!((a.value - r.value).abs() <= 1e-12 * a.value, "{s:?} {two_k}: {} {}", a.value, r.value);
                assert!(r.term_count < a.term_count);
            }
        }
    }

    #[test]
    fn iid_fourth_moment_closed_form() {
        // [[a, b], [b, c]]: Tr X⁴ = (a² + b²)² + (b² + c²)² + 2b²(a + c)², expectation 8 + 8 + 4
        let m = EnsembleSpec::IidGaussian { n: 2 }.build().unwrap();
        let r = exact_trace_moment(m.as_ref(), 4, MomentMethod::Naive, &Budget::new(1e9)).unwrap();
        assert!((r.value - 20.0 / 4.0).abs() < 1e-14, "{}", r.value);
    }

    #[test]
    fn refuses_non_gaussian_and_budget() {
        let m = EnsembleSpec::TestModel {
            n: 3,
            epsilon: 1.0,
            v_dist: VDist::Rademacher,
        }
        .build()
        .unwrap();
        assert!(exact_trace_moment(m.as_ref(), 2, MomentMethod::Auto, &Budget::new(1e9)).is_err());
        let m = EnsembleSpec::IidGaussian { n: 30 }.build().unwrap();
        let err = exact_trace_moment(m.as_ref(), 8, MomentMethod::Naive, &Budget::new(1e9)).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("exact_trace_moment"), "{err}");
    }

    #[test]
    fn normalized_trace_power_matches_eigenvalues() {
        let x = SymMatrix::from_row_major(3, &[1.0, 2.0, 0.0, 2.0, -1.0, 0.5, 0.0, 0.5, 3.0]);
        let ev = crate::spectral::eigen_sym(&x, true).unwrap();
        for two_k in [2, 4, 6, 8] {
            let direct: f64 = ev.eigenvalues.iter().map(|l| l.powi(two_k as i32)).sum();
            let t = normalized_trace_power(&x, two_k);
            assert!((t - direct).abs() < 1e-10 * direct, "{two_k}: {t} {direct}");
        }
    }

    #[test]
    fn mc_zero_moment() {
        let m = EnsembleSpec::IidGaussian { n: 4 }.build().unwrap();
        let r = mc_trace_moment(m.as_ref(), 0, 10, &mut RngStream::from_seed(1)).unwrap();
        assert_eq!((r.mean, r.std_err), (4.0, 0.0));
    }

    #[test]
    fn audit_wigner_word() {
        let w: Word = "12321".parse().unwrap();
        let a = matching_case_audit(&w, unit).unwrap();
        assert_eq!(a.total, 1.0);
        assert_eq!(a.buckets.len(), 1);
        assert_eq!(a.buckets[0].cases, vec![MatchCase::V]);
        assert_eq!(a.buckets[0].pairings, 1);
    }

    #[test]
    fn audit_single_letter() {
        let w: Word = "3".parse().unwrap();
        let a = matching_case_audit(&w, unit).unwrap();
        assert_eq!(a.factor_count, 0);
        assert_eq!(a.total, 1.0);
        assert_eq!(a.buckets.len(), 1);
        assert!(a.buckets[0].cases.is_empty());
    }

    #[test]
    fn audit_total_equals_wick() {
        let w: Word = "12134321451".parse().unwrap();
        let m = TestModelFixture::new(5, 0.5);
        let cov = |a, b| m.0.entry_cov(a, b);
        let a = matching_case_audit(&w, cov).unwrap();
        assert_eq!(a.total, wick_expectation(&word_factors(&w), cov));
        let bucket_sum: f64 = a.buckets.iter().map(|b| b.total).sum();
        assert!((bucket_sum - a.total).abs() <= 1e-14 * a.total.abs());
        assert_eq!(a.buckets.iter().map(|b| b.pairings).sum::<usize>(), 945);
    }

    #[test]
    fn worked_decompositions_have_expected_cases() {
        // steps: X12 X21 X13 X34 X43 X32 X21 X14 X45 X51 at positions 0..9
        let w: Word = "12134321451".parse().unwrap();
        use MatchCase::*;
        let first = [(2, 3), (0, 5), (1, 4), (6, 7), (8, 9)];
        assert_eq!(pairing_cases(&w, &first), vec![I, Ii, Iii, Iv]);
        let second = [(0, 2), (1, 6), (3, 4), (7, 8), (5, 9)];
        assert_eq!(pairing_cases(&w, &second), vec![Ii, Iv, V, Vi]);
    }
}
