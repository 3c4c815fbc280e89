//! Orthogonal Weingarten calculus.
//!
//! Haar moments of `O(d)` are pairing sums:
//!
//! ```text
//! E[R_{i1 j1} ... R_{i2k j2k}] = sum_{p, q} Delta^p(i) Delta^q(j) Wg(p, q)
//! ```
//!
//! where `Wg` is the inverse of the Gram matrix `d^loop(p, q)`. The mixed
//! moments of `M = R diag(v) Q^T` are evaluated here by contracting those
//! deltas symbolically: every index variable carries a weight vector, the
//! deltas merge variables into connected components, and each component
//! contributes `sum_x prod_w w[x]`. No matrix samples are involved.
//!
//! Monte Carlo estimators over Haar and Gaussian matrices are provided as
//! independent oracles.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::ensembles::{mix, sample_gaussian_matrix, sample_haar_orthogonal, stream};
use crate::error::{Error, Result};
use crate::linalg::{dot, hadamard, norm2_sq, Lu, Matrix};
use crate::stats::RunningMoments;

/// Largest `2k` accepted by [`enumerate_pairings`].
pub const MAX_TWO_K: usize = 12;

/// Minimum Monte Carlo sample count.
pub const MIN_SAMPLES: usize = 10_000;

/// Agreement threshold in standard errors.
pub const AGREEMENT_SIGMAS: f64 = 4.0;

/// A perfect matching of `{1, ..., 2k}` in canonical form: each pair is
/// `(small, large)` and pairs are sorted by their smaller element.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pairing {
    pairs: Vec<(usize, usize)>,
}

impl Pairing {
    /// Canonicalizes `pairs` and checks that they partition `{1, ..., 2k}`.
    pub fn new(pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut pairs: Vec<(usize, usize)> = pairs
            .into_iter()
            .map(|(a, b)| if a <= b { (a, b) } else { (b, a) })
            .collect();
        pairs.sort_unstable();
        let two_k = 2 * pairs.len();
        let mut seen = vec![false; two_k + 1];
        for &(a, b) in &pairs {
            for x in [a, b] {
                if x == 0 || x > two_k || seen[x] {
                    return Err(Error::InvalidConfig(alloc::format!(
                        "pairs do not partition 1..={two_k}"
                    )));
                }
                seen[x] = true;
            }
        }
        Ok(Self { pairs })
    }

    pub fn k(&self) -> usize {
        self.pairs.len()
    }

    pub fn two_k(&self) -> usize {
        2 * self.pairs.len()
    }

    /// One-based pairs.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }
}

impl core::fmt::Display for Pairing {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("(")?;
        for (i, (a, b)) in self.pairs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "({a},{b})")?;
        }
        f.write_str(")")
    }
}

/// All `(2k-1)!!` pairings of `{1, ..., two_k}` in lexicographic order.
pub fn enumerate_pairings(two_k: usize) -> Result<Vec<Pairing>> {
    if two_k > MAX_TWO_K {
        return Err(Error::TooLarge {
            what: "2k",
            value: two_k,
            max: MAX_TWO_K,
        });
    }
    if !two_k.is_multiple_of(2) {
        return Err(Error::InvalidConfig(alloc::format!(
            "pairings need an even number of points, got {two_k}"
        )));
    }
    let mut out = Vec::new();
    let mut used = vec![false; two_k + 1];
    let mut current = Vec::with_capacity(two_k / 2);
    extend_pairings(two_k, &mut used, &mut current, &mut out);
    Ok(out)
}

fn extend_pairings(
    two_k: usize,
    used: &mut [bool],
    current: &mut Vec<(usize, usize)>,
    out: &mut Vec<Pairing>,
) {
    let Some(first) = (1..=two_k).find(|&i| !used[i]) else {
        out.push(Pairing {
            pairs: current.clone(),
        });
        return;
    };
    used[first] = true;
    for partner in first + 1..=two_k {
        if used[partner] {
            continue;
        }
        used[partner] = true;
        current.push((first, partner));
        extend_pairings(two_k, used, current, out);
        current.pop();
        used[partner] = false;
    }
    used[first] = false;
}

/// `true` iff every pair of positions in `p` carries equal values.
pub fn pairing_delta<T: PartialEq>(p: &Pairing, indices: &[T]) -> Result<bool> {
    if indices.len() != p.two_k() {
        return Err(Error::LengthMismatch {
            expected: p.two_k(),
            got: indices.len(),
        });
    }
    Ok(p.pairs
        .iter()
        .all(|&(a, b)| indices[a - 1] == indices[b - 1]))
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    fn components(&mut self) -> usize {
        (0..self.parent.len()).filter(|&x| self.find(x) == x).count()
    }
}

/// Connected components of the graph on `{1, ..., 2k}` whose edges are the
/// pairs of `p1` and `p2`.
pub fn loop_count(p1: &Pairing, p2: &Pairing) -> Result<usize> {
    if p1.two_k() != p2.two_k() {
        return Err(Error::SizeMismatch {
            left: p1.two_k(),
            right: p2.two_k(),
        });
    }
    let mut uf = UnionFind::new(p1.two_k());
    for &(a, b) in p1.pairs.iter().chain(&p2.pairs) {
        uf.union(a - 1, b - 1);
    }
    Ok(uf.components())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeingartenTable {
    pub k: usize,
    pub d: usize,
    pub pairings: Vec<Pairing>,
    /// `gram[i][j] = d^loop(p_i, p_j)`
    pub gram: Matrix,
    pub wg: Matrix,
}

impl WeingartenTable {
    /// `Wg(p_i, p_j)`
    pub fn wg(&self, i: usize, j: usize) -> f64 {
        self.wg.get(i, j)
    }

    /// `max |Wg * Gram - I|`
    pub fn inverse_residual(&self) -> f64 {
        crate::ensembles::max_deviation_from_identity(&self.wg.matmul(&self.gram))
    }
}

/// Largest `k` accepted by [`weingarten_table`].
pub const MAX_TABLE_K: usize = 6;

pub fn weingarten_table(k: usize, d: usize) -> Result<WeingartenTable> {
    if k > MAX_TABLE_K {
        return Err(Error::TooLarge {
            what: "k",
            value: k,
            max: MAX_TABLE_K,
        });
    }
    if d == 0 {
        return Err(Error::SingularGram { k, d });
    }
    let pairings = enumerate_pairings(2 * k)?;
    let m = pairings.len();
    let df = d as f64;
    let mut gram = Matrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let g = libm::pow(df, loop_count(&pairings[i], &pairings[j])? as f64);
            gram.set(i, j, g);
            gram.set(j, i, g);
        }
    }
    let lu = Lu::factor(gram.clone());
    if !(lu.rcond() > 1e-12) {
        return Err(Error::SingularGram { k, d });
    }
    let wg = lu.inverse();
    let table = WeingartenTable {
        k,
        d,
        pairings,
        gram,
        wg,
    };
    if !(table.inverse_residual() <= 1e-8) {
        return Err(Error::SingularGram { k, d });
    }
    Ok(table)
}

/// Exact `Wg` entries for `k = 2` as `(diagonal, off_diagonal)`:
/// `(d + 1) / (d (d - 1) (d + 2))` and `-1 / (d (d - 1) (d + 2))`.
pub fn wg_k2_closed(d: usize) -> (f64, f64) {
    let df = d as f64;
    let q = df * (df - 1.0) * (df + 2.0);
    ((df + 1.0) / q, -1.0 / q)
}

/// The frequently quoted `k = 2` values `1/(d^2 - 1)` and
/// `-1/(d (d^2 - 1))`. They do not invert the Gram matrix: the product has
/// diagonal `(d^2 - 2)/(d^2 - 1)`. Kept for comparison only.
pub fn wg_k2_printed(d: usize) -> (f64, f64) {
    let df = d as f64;
    let q = df * df - 1.0;
    (1.0 / q, -1.0 / (df * q))
}

fn check_lengths(v: &[f64], b: &[f64], c: &[f64]) -> Result<usize> {
    let d = v.len();
    for w in [b, c] {
        if w.len() != d {
            return Err(Error::LengthMismatch {
                expected: d,
                got: w.len(),
            });
        }
    }
    if d == 0 {
        return Err(Error::InvalidConfig("moment vectors must be non-empty".into()));
    }
    Ok(d)
}

/// `E[(c^T M b)^2] = ||v||^2 ||b||^2 ||c||^2 / d^2`.
pub fn second_moment_closed(v: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    let d = check_lengths(v, b, c)? as f64;
    Ok(norm2_sq(v) * norm2_sq(b) * norm2_sq(c) / (d * d))
}

/// Products of Haar matrix entries whose row and column positions are given
/// by index variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HaarFactor {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

/// `sum over all index variables of prod(weights) * prod_f E[factor_f]`
/// with every factor drawn from an independent Haar matrix in `O(d)`.
#[derive(Debug, Clone)]
pub struct IndexContraction<'a> {
    pub weights: Vec<&'a [f64]>,
    pub factors: Vec<HaarFactor>,
}

impl IndexContraction<'_> {
    pub fn evaluate(&self) -> Result<f64> {
        let Some(d) = self.weights.first().map(|w| w.len()) else {
            return Ok(1.0);
        };
        if let Some(w) = self.weights.iter().find(|w| w.len() != d) {
            return Err(Error::LengthMismatch {
                expected: d,
                got: w.len(),
            });
        }
        let nvars = self.weights.len();
        let mut tables = Vec::with_capacity(self.factors.len());
        for f in &self.factors {
            if f.rows.len() != f.cols.len() {
                return Err(Error::SizeMismatch {
                    left: f.rows.len(),
                    right: f.cols.len(),
                });
            }
            if let Some(&bad) = f.rows.iter().chain(&f.cols).find(|&&x| x >= nvars) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "index variable {bad} out of range"
                )));
            }
            if f.rows.len() % 2 == 1 {
                // odd moments of a Haar orthogonal matrix vanish
                return Ok(0.0);
            }
            tables.push(weingarten_table(f.rows.len() / 2, d)?);
        }
        let mut total = 0.0;
        let mut choice = vec![(0usize, 0usize); self.factors.len()];
        self.accumulate(&tables, 0, &mut choice, &mut total);
        Ok(total)
    }

    fn accumulate(
        &self,
        tables: &[WeingartenTable],
        depth: usize,
        choice: &mut [(usize, usize)],
        total: &mut f64,
    ) {
        if depth == tables.len() {
            let mut coeff = 1.0;
            let mut uf = UnionFind::new(self.weights.len());
            for ((f, t), &(p, q)) in self.factors.iter().zip(tables).zip(choice.iter()) {
                coeff *= t.wg(p, q);
                for &(a, b) in t.pairings[p].pairs() {
                    uf.union(f.rows[a - 1], f.rows[b - 1]);
                }
                for &(a, b) in t.pairings[q].pairs() {
                    uf.union(f.cols[a - 1], f.cols[b - 1]);
                }
            }
            if coeff != 0.0 {
                *total += coeff * self.component_product(&mut uf);
            }
            return;
        }
        let m = tables[depth].pairings.len();
        for p in 0..m {
            for q in 0..m {
                choice[depth] = (p, q);
                self.accumulate(tables, depth + 1, choice, total);
            }
        }
    }

    fn component_product(&self, uf: &mut UnionFind) -> f64 {
        let nvars = self.weights.len();
        let d = self.weights[0].len();
        let mut out = 1.0;
        for root in 0..nvars {
            if uf.find(root) != root {
                continue;
            }
            let members: Vec<usize> = (0..nvars).filter(|&x| uf.find(x) == root).collect();
            let s: f64 = (0..d)
                .map(|x| members.iter().map(|&m| self.weights[m][x]).product::<f64>())
                .sum();
            out *= s;
        }
        out
    }
}

/// `E[(c^T M b)^2]` by contraction, `M = R diag(v) Q^T`.
pub fn second_moment_pairing_sum(v: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    check_lengths(v, b, c)?;
    // variables: i1 i2 (c), j1 j2 (v), l1 l2 (b)
    // (c^T M b)^2 = sum c_i1 c_i2 R_i1j1 R_i2j2 v_j1 v_j2 Q_l1j1 Q_l2j2 b_l1 b_l2
    IndexContraction {
        weights: vec![c, c, v, v, b, b],
        factors: vec![
            HaarFactor {
                rows: vec![0, 1],
                cols: vec![2, 3],
            },
            HaarFactor {
                rows: vec![4, 5],
                cols: vec![2, 3],
            },
        ],
    }
    .evaluate()
}

/// `E[||M b ⊙ M^T c||^2]` for `M = R diag(v) Q^T`, evaluated by the pairing
/// contraction. Requires `d >= 4`.
pub fn fourth_moment_pairing_sum(v: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    let d = check_lengths(v, b, c)?;
    if d < 4 {
        return Err(Error::SingularGram { k: 2, d });
    }
    let ones = vec![1.0; d];
    // variables: 0 i, 1 j1, 2 j2, 3 k1, 4 k2, 5 l1, 6 l2, 7 m1, 8 m2
    // (Mb)_i^2 = sum R_{i j1} R_{i j2} v_j1 v_j2 Q_{l1 j1} Q_{l2 j2} b_l1 b_l2
    // (M^T c)_i^2 = sum Q_{i k1} Q_{i k2} v_k1 v_k2 R_{m1 k1} R_{m2 k2} c_m1 c_m2
    IndexContraction {
        weights: vec![&ones, v, v, v, v, b, b, c, c],
        factors: vec![
            HaarFactor {
                rows: vec![0, 0, 7, 8],
                cols: vec![1, 2, 3, 4],
            },
            HaarFactor {
                rows: vec![5, 6, 0, 0],
                cols: vec![1, 2, 3, 4],
            },
        ],
    }
    .evaluate()
}

fn chi_denominator(d: f64) -> f64 {
    let q = d * d - 1.0;
    d * d * q * q
}

fn v_norms(v: &[f64]) -> (f64, f64) {
    let sq = norm2_sq(v);
    (sq * sq, v.iter().map(|x| x * x * x * x).sum())
}

/// `((d^2 + 2) ||v||^4 - (4d - 2) ||v||_4^4) / (d^2 (d^2 - 1)^2)`, the
/// diagonal of `W V W` for `W` from [`wg_k2_printed`].
pub fn chi_eq_printed(v: &[f64]) -> f64 {
    let d = v.len() as f64;
    let (n4, q4) = v_norms(v);
    ((d * d + 2.0) * n4 - (4.0 * d - 2.0) * q4) / chi_denominator(d)
}

/// `(-(2d - 1) ||v||^4 + (d^2 - 2d + 3) ||v||_4^4) / (d^2 (d^2 - 1)^2)`, the
/// off-diagonal of `W V W` for `W` from [`wg_k2_printed`].
pub fn chi_ueq_printed(v: &[f64]) -> f64 {
    let d = v.len() as f64;
    let (n4, q4) = v_norms(v);
    (-(2.0 * d - 1.0) * n4 + (d * d - 2.0 * d + 3.0) * q4) / chi_denominator(d)
}

/// `(chi_eq, chi_ueq)` from the exact `k = 2` Weingarten function:
/// `chi = W V W` with `V(p, p') = ||v||^4` if `p = p'` and `||v||_4^4`
/// otherwise.
pub fn chi_haar(v: &[f64]) -> Result<(f64, f64)> {
    let d = v.len();
    if d < 4 {
        return Err(Error::SingularGram { k: 2, d });
    }
    let (n4, q4) = v_norms(v);
    let (wd, wo) = wg_k2_closed(d);
    // 3x3 matrices a I + b J multiply as
    // (a I + b J)(c I + e J) = ac I + (ae + bc + 3be) J
    let mul = |(a, b): (f64, f64), (c, e): (f64, f64)| (a * c, a * e + b * c + 3.0 * b * e);
    let w = (wd - wo, wo);
    let vm = (n4 - q4, q4);
    let (a, b) = mul(mul(w, vm), w);
    Ok((a + b, b))
}

/// `chi_eq (d ||b||^2 ||c||^2 + 2 ||b⊙c||^2) + 6 chi_ueq ||b||^2 ||c||^2`
/// with the printed chi coefficients. Kept for comparison only; see
/// [`fourth_moment_closed`].
pub fn fourth_moment_printed(v: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    let d = check_lengths(v, b, c)?;
    if d < 2 {
        return Err(Error::SingularGram { k: 2, d });
    }
    let bc = norm2_sq(b) * norm2_sq(c);
    let cross = norm2_sq(&hadamard(b, c));
    Ok(chi_eq_printed(v) * (d as f64 * bc + 2.0 * cross) + 6.0 * chi_ueq_printed(v) * bc)
}

/// Closed form of [`fourth_moment_pairing_sum`] with `chi` from
/// [`chi_haar`]:
/// `chi_eq (d ||b||^2 ||c||^2 + 2 ||b⊙c||^2) + chi_ueq (4 ||b||^2 ||c||^2 + 2 ||b⊙c||^2)`.
pub fn fourth_moment_closed(v: &[f64], b: &[f64], c: &[f64]) -> Result<f64> {
    let d = check_lengths(v, b, c)?;
    let (eq, ueq) = chi_haar(v)?;
    let bc = norm2_sq(b) * norm2_sq(c);
    let cross = norm2_sq(&hadamard(b, c));
    Ok(eq * (d as f64 * bc + 2.0 * cross) + ueq * (4.0 * bc + 2.0 * cross))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MomentOrder {
    /// `(c^T M b)^2`
    Second,
    /// `||M b ⊙ M^T c||^2`
    Fourth,
}

impl MomentOrder {
    pub fn from_order(order: u32) -> Result<Self> {
        match order {
            2 => Ok(Self::Second),
            4 => Ok(Self::Fourth),
            other => Err(Error::InvalidConfig(alloc::format!(
                "moment order must be 2 or 4, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub samples: u64,
}

impl MomentEstimate {
    pub fn from_moments(m: &RunningMoments) -> Self {
        Self {
            estimate: m.mean(),
            stderr: m.stderr(),
            samples: m.count(),
        }
    }

    /// `(value - estimate) / stderr`; zero stderr gives `0` on exact
    /// agreement and infinity otherwise.
    pub fn z_score(&self, value: f64) -> f64 {
        let diff = value - self.estimate;
        if self.stderr > 0.0 {
            diff / self.stderr
        } else if diff.abs() <= 1e-12 * (1.0 + value.abs()) {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn agrees_with(&self, value: f64) -> bool {
        self.z_score(value).abs() <= AGREEMENT_SIGMAS
    }
}

fn check_samples(samples: usize) -> Result<()> {
    if samples < MIN_SAMPLES {
        return Err(Error::InvalidConfig(alloc::format!(
            "Monte Carlo needs at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    Ok(())
}

/// One sample of the order-`order` statistic of `M = R diag(v) Q^T`.
pub fn orthogonal_moment_sample<R: Rng + ?Sized>(
    v: &[f64],
    b: &[f64],
    c: &[f64],
    order: MomentOrder,
    rng: &mut R,
) -> f64 {
    let d = v.len();
    let r = sample_haar_orthogonal(d, rng);
    let q = sample_haar_orthogonal(d, rng);
    let mb = r.mul_vec(&hadamard(v, &q.tr_mul_vec(b)));
    match order {
        MomentOrder::Second => {
            let s = dot(c, &mb);
            s * s
        }
        MomentOrder::Fourth => {
            let mtc = q.mul_vec(&hadamard(v, &r.tr_mul_vec(c)));
            mb.iter().zip(&mtc).map(|(x, y)| x * x * y * y).sum()
        }
    }
}

/// Accumulates `samples` draws from the substream `mix(seed, block)`.
pub fn mc_orthogonal_block(
    v: &[f64],
    b: &[f64],
    c: &[f64],
    order: MomentOrder,
    samples: usize,
    seed: u64,
    block: u64,
) -> Result<RunningMoments> {
    check_lengths(v, b, c)?;
    let mut rng = stream(mix(seed, block));
    let mut acc = RunningMoments::new();
    for _ in 0..samples {
        acc.push(orthogonal_moment_sample(v, b, c, order, &mut rng));
    }
    Ok(acc)
}

/// Sample mean and standard error of the order-`order` statistic.
pub fn mc_orthogonal_moment<R: Rng + ?Sized>(
    v: &[f64],
    b: &[f64],
    c: &[f64],
    order: MomentOrder,
    samples: usize,
    rng: &mut R,
) -> Result<MomentEstimate> {
    check_lengths(v, b, c)?;
    check_samples(samples)?;
    let mut acc = RunningMoments::new();
    for _ in 0..samples {
        acc.push(orthogonal_moment_sample(v, b, c, order, rng));
    }
    Ok(MomentEstimate::from_moments(&acc))
}

/// One draw of `(|c^T G b|^2, ||G b ⊙ G^T c||^2)` for iid standard normal `G`.
pub fn gaussian_moment_sample<R: Rng + ?Sized>(b: &[f64], c: &[f64], rng: &mut R) -> (f64, f64) {
    let n = b.len();
    let g = sample_gaussian_matrix(n, n, rng);
    let gb = g.mul_vec(b);
    let gtc = g.tr_mul_vec(c);
    let s = dot(c, &gb);
    let prod = gb.iter().zip(&gtc).map(|(x, y)| x * x * y * y).sum();
    (s * s, prod)
}

/// Accumulates Gaussian moment draws from the substream `mix(seed, block)`.
pub fn gaussian_moment_block(
    b: &[f64],
    c: &[f64],
    samples: usize,
    seed: u64,
    block: u64,
) -> Result<(RunningMoments, RunningMoments)> {
    if b.len() != c.len() {
        return Err(Error::LengthMismatch {
            expected: b.len(),
            got: c.len(),
        });
    }
    let mut rng = stream(mix(seed, block));
    let mut overlap = RunningMoments::new();
    let mut product = RunningMoments::new();
    for _ in 0..samples {
        let (o, p) = gaussian_moment_sample(b, c, &mut rng);
        overlap.push(o);
        product.push(p);
    }
    Ok((overlap, product))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianMomentReport {
    pub n: usize,
    /// MC estimate of `E|c^T G b|^2`.
    pub overlap: MomentEstimate,
    /// `||b||^2 ||c||^2`
    pub overlap_expected: f64,
    /// MC estimate of `E||G b ⊙ G^T c||^2`.
    pub product: MomentEstimate,
    /// `n ||b||^2 ||c||^2 + ||b⊙c||^2`
    pub product_printed: f64,
    /// `n ||b||^2 ||c||^2 + 2 ||b⊙c||^2`
    pub product_alternative: f64,
}

impl GaussianMomentReport {
    pub fn from_moments(
        b: &[f64],
        c: &[f64],
        overlap: &RunningMoments,
        product: &RunningMoments,
    ) -> Self {
        let n = b.len();
        let bc = norm2_sq(b) * norm2_sq(c);
        let cross = norm2_sq(&hadamard(b, c));
        Self {
            n,
            overlap: MomentEstimate::from_moments(overlap),
            overlap_expected: bc,
            product: MomentEstimate::from_moments(product),
            product_printed: n as f64 * bc + cross,
            product_alternative: n as f64 * bc + 2.0 * cross,
        }
    }

    pub fn overlap_agrees(&self) -> bool {
        self.overlap.agrees_with(self.overlap_expected)
    }

    pub fn printed_agrees(&self) -> bool {
        self.product.agrees_with(self.product_printed)
    }

    pub fn alternative_agrees(&self) -> bool {
        self.product.agrees_with(self.product_alternative)
    }
}

pub fn gaussian_moment_suite<R: Rng + ?Sized>(
    b: &[f64],
    c: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<GaussianMomentReport> {
    if b.len() != c.len() {
        return Err(Error::LengthMismatch {
            expected: b.len(),
            got: c.len(),
        });
    }
    if b.is_empty() {
        return Err(Error::InvalidConfig("moment vectors must be non-empty".into()));
    }
    check_samples(samples)?;
    let mut overlap = RunningMoments::new();
    let mut product = RunningMoments::new();
    for _ in 0..samples {
        let (o, p) = gaussian_moment_sample(b, c, rng);
        overlap.push(o);
        product.push(p);
    }
    Ok(GaussianMomentReport::from_moments(b, c, &overlap, &product))
}

/// Contraction value, printed reduction and an MC estimate side by side.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourthMomentComparison {
    pub pairing_sum: f64,
    pub printed: f64,
    pub mc: MomentEstimate,
}

impl FourthMomentComparison {
    pub fn pairing_sum_agrees(&self) -> bool {
        self.mc.agrees_with(self.pairing_sum)
    }

    pub fn printed_agrees(&self) -> bool {
        self.mc.agrees_with(self.printed)
    }

    /// `printed - pairing_sum`
    pub fn discrepancy(&self) -> f64 {
        self.printed - self.pairing_sum
    }
}

pub fn compare_fourth_moment(
    v: &[f64],
    b: &[f64],
    c: &[f64],
    mc: MomentEstimate,
) -> Result<FourthMomentComparison> {
    Ok(FourthMomentComparison {
        pairing_sum: fourth_moment_pairing_sum(v, b, c)?,
        printed: fourth_moment_printed(v, b, c)?,
        mc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;

    fn p(pairs: &[(usize, usize)]) -> Pairing {
        Pairing::new(pairs.iter().copied()).unwrap()
    }

    fn double_factorial(two_k: usize) -> usize {
        (1..two_k).step_by(2).product::<usize>().max(1)
    }

    #[test]
    fn pairing_counts() {
        assert_eq!(enumerate_pairings(2).unwrap(), vec![p(&[(1, 2)])]);
        assert_eq!(
            enumerate_pairings(4).unwrap(),
            vec![p(&[(1, 2), (3, 4)]), p(&[(1, 3), (2, 4)]), p(&[(1, 4), (2, 3)])]
        );
        for two_k in [2usize, 4, 6, 8, 10] {
            assert_eq!(enumerate_pairings(two_k).unwrap().len(), double_factorial(two_k));
        }
        assert!(matches!(enumerate_pairings(14), Err(Error::TooLarge { .. })));
        assert!(enumerate_pairings(3).is_err());
    }

    #[test]
    fn enumeration_is_sorted_and_distinct() {
        let ps = enumerate_pairings(8).unwrap();
        assert!(ps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn canonical_form_ignores_order() {
        assert_eq!(p(&[(4, 3), (2, 1)]), p(&[(1, 2), (3, 4)]));
        assert!(Pairing::new([(1, 2), (2, 3)]).is_err());
        assert!(Pairing::new([(1, 5), (2, 3)]).is_err());
        assert_eq!(p(&[(1, 3), (2, 4)]).to_string(), "((1,3),(2,4))");
    }

    #[test]
    fn delta_examples() {
        assert!(pairing_delta(&p(&[(1, 2), (3, 4)]), &[5, 5, 7, 7]).unwrap());
        assert!(!pairing_delta(&p(&[(1, 3), (2, 4)]), &[5, 5, 7, 7]).unwrap());
        for q in enumerate_pairings(6).unwrap() {
            assert!(pairing_delta(&q, &[2; 6]).unwrap());
        }
        assert!(matches!(
            pairing_delta(&p(&[(1, 2)]), &[1, 1, 1]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn loop_examples() {
        let p4 = enumerate_pairings(4).unwrap();
        for (i, a) in p4.iter().enumerate() {
            for (j, b) in p4.iter().enumerate() {
                assert_eq!(loop_count(a, b).unwrap(), if i == j { 2 } else { 1 });
            }
        }
        let one = p(&[(1, 2)]);
        assert_eq!(loop_count(&one, &one).unwrap(), 1);
        assert!(matches!(loop_count(&one, &p4[0]), Err(Error::SizeMismatch { .. })));
    }

    #[test]
    fn loop_symmetry_and_diagonal() {
        let p6 = enumerate_pairings(6).unwrap();
        for a in &p6 {
            assert_eq!(loop_count(a, a).unwrap(), 3);
            for b in &p6 {
                assert_eq!(loop_count(a, b).unwrap(), loop_count(b, a).unwrap());
            }
        }
    }

    #[test]
    fn k2_tables_match_closed_form() {
        for d in 3..=10 {
            let t = weingarten_table(2, d).unwrap();
            let (on, off) = wg_k2_closed(d);
            for i in 0..3 {
                for j in 0..3 {
                    let want = if i == j { on } else { off };
                    assert!((t.wg(i, j) - want).abs() <= 1e-12, "d={d}");
                }
            }
        }
        let t3 = weingarten_table(2, 3).unwrap();
        assert!((t3.wg(0, 0) - 4.0 / 30.0).abs() < 1e-15);
        assert!((t3.wg(0, 1) + 1.0 / 30.0).abs() < 1e-15);
    }

    #[test]
    fn printed_k2_values_do_not_invert_the_gram() {
        for d in [3usize, 10] {
            let t = weingarten_table(2, d).unwrap();
            let (on, off) = wg_k2_printed(d);
            let w = Matrix::from_fn(3, 3, |i, j| if i == j { on } else { off });
            let prod = w.matmul(&t.gram);
            let df = d as f64;
            assert!((prod.get(0, 0) - (df * df - 2.0) / (df * df - 1.0)).abs() < 1e-12);
            assert!((t.wg(0, 0) - on).abs() > 1e-3 * on);
        }
        assert_eq!(wg_k2_printed(3), (1.0 / 8.0, -1.0 / 24.0));
        let (on, off) = wg_k2_printed(10);
        assert!((on - 1.0 / 99.0).abs() < 1e-18 && (off + 1.0 / 990.0).abs() < 1e-18);
    }

    #[test]
    fn k1_table() {
        for d in [1usize, 2, 7] {
            let t = weingarten_table(1, d).unwrap();
            assert!((t.wg(0, 0) - 1.0 / d as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn gram_properties_and_inverse() {
        for k in 1..=3 {
            for d in 4..=10 {
                let t = weingarten_table(k, d).unwrap();
                let m = t.pairings.len();
                for i in 0..m {
                    assert_eq!(t.gram.get(i, i), libm::pow(d as f64, k as f64));
                    for j in 0..m {
                        assert_eq!(t.gram.get(i, j), t.gram.get(j, i));
                    }
                }
                assert!(t.inverse_residual() <= 1e-10, "k={k} d={d}");
            }
        }
    }

    #[test]
    fn singular_gram_is_reported() {
        assert!(matches!(weingarten_table(2, 1), Err(Error::SingularGram { .. })));
        assert!(matches!(weingarten_table(3, 1), Err(Error::SingularGram { .. })));
        assert!(matches!(weingarten_table(7, 10), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn second_moment_examples() {
        assert_eq!(second_moment_closed(&[1.0], &[1.0], &[1.0]).unwrap(), 1.0);
        let mut e1 = vec![0.0; 8];
        e1[0] = 1.0;
        let ones = vec![1.0; 8];
        assert_eq!(second_moment_closed(&ones, &e1, &e1).unwrap(), 0.125);
        assert!(second_moment_closed(&ones, &e1[..4], &e1).is_err());
    }

    #[test]
    fn second_moment_contraction_agrees_with_closed_form() {
        let v = [0.3, -1.2, 2.0, 0.5, 1.1];
        let b = [1.0, 0.0, -2.0, 0.5, 0.0];
        let c = [0.0, 1.5, 1.0, -1.0, 0.25];
        let closed = second_moment_closed(&v, &b, &c).unwrap();
        let contracted = second_moment_pairing_sum(&v, &b, &c).unwrap();
        assert!((closed - contracted).abs() <= 1e-12 * closed);
    }

    /// Weingarten expansion summed over every index assignment explicitly.
    fn fourth_moment_brute(v: &[f64], b: &[f64], c: &[f64]) -> f64 {
        let d = v.len();
        let t = weingarten_table(2, d).unwrap();
        let ps = &t.pairings;
        let mut total = 0.0;
        let mut idx = [0usize; 9];
        let count = d.pow(9);
        for code in 0..count {
            let mut rest = code;
            for slot in idx.iter_mut() {
                *slot = rest % d;
                rest /= d;
            }
            let [i, j1, j2, k1, k2, l1, l2, m1, m2] = idx;
            let w = v[j1] * v[j2] * v[k1] * v[k2] * b[l1] * b[l2] * c[m1] * c[m2];
            if w == 0.0 {
                continue;
            }
            let r_rows = [i, i, m1, m2];
            let q_rows = [l1, l2, i, i];
            let cols = [j1, j2, k1, k2];
            let mut coeff = 0.0;
            for (a, pa) in ps.iter().enumerate() {
                if !pairing_delta(pa, &r_rows).unwrap() {
                    continue;
                }
                for (bq, pb) in ps.iter().enumerate() {
                    if !pairing_delta(pb, &cols).unwrap() {
                        continue;
                    }
                    for (cq, pc) in ps.iter().enumerate() {
                        if !pairing_delta(pc, &q_rows).unwrap() {
                            continue;
                        }
                        for (dq, pd) in ps.iter().enumerate() {
                            if pairing_delta(pd, &cols).unwrap() {
                                coeff += t.wg(a, bq) * t.wg(cq, dq);
                            }
                        }
                    }
                }
            }
            total += coeff * w;
        }
        total
    }

    #[test]
    fn fourth_moment_contraction_matches_brute_force() {
        let v = [1.0, 0.5, -0.7, 2.0];
        let b = [1.0, -1.0, 0.0, 0.5];
        let c = [0.25, 1.0, 1.0, 0.0];
        let brute = fourth_moment_brute(&v, &b, &c);
        let fast = fourth_moment_pairing_sum(&v, &b, &c).unwrap();
        assert!((brute - fast).abs() <= 1e-12 * brute.abs(), "{brute} vs {fast}");
    }

    #[test]
    fn fourth_moment_closed_form_matches_contraction() {
        let triples: [([f64; 6], [f64; 6], [f64; 6]); 3] = [
            ([1.0; 6], [1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0, 0.0, 0.0]),
            (
                [0.5, 1.5, -1.0, 2.0, 0.1, 1.0],
                [1.0, -2.0, 0.0, 0.5, 0.0, 1.0],
                [1.0, 1.0, 0.5, 0.0, -1.0, 0.0],
            ),
            ([1.0, 2.0, 3.0, 4.0, 5.0, 6.0], [1.0; 6], [1.0; 6]),
        ];
        for (v, b, c) in &triples {
            let contracted = fourth_moment_pairing_sum(v, b, c).unwrap();
            let closed = fourth_moment_closed(v, b, c).unwrap();
            assert!((contracted - closed).abs() <= 1e-12 * contracted.abs());
        }
    }

    #[test]
    fn fourth_moment_is_symmetric_in_b_and_c() {
        let v = [0.2, 1.0, -0.4, 0.9, 1.3];
        let b = [1.0, 0.0, 2.0, -1.0, 0.0];
        let c = [0.0, 0.5, 0.5, 1.0, 3.0];
        let bc = fourth_moment_pairing_sum(&v, &b, &c).unwrap();
        let cb = fourth_moment_pairing_sum(&v, &c, &b).unwrap();
        assert!((bc - cb).abs() <= 1e-12 * bc.abs());
    }

    #[test]
    fn fourth_moment_depends_on_summary_statistics_only() {
        let v = [1.0, 0.5, 2.0, -1.0];
        let c = [1.0, 1.0, 0.0, 0.0];
        // both have ||b||^2 = 2 and ||b⊙c||^2 = 1
        let b1 = [1.0, 0.0, 1.0, 0.0];
        let b2 = [0.0, -1.0, 0.0, 1.0];
        let x = fourth_moment_pairing_sum(&v, &b1, &c).unwrap();
        let y = fourth_moment_pairing_sum(&v, &b2, &c).unwrap();
        assert!((x - y).abs() <= 1e-12 * x.abs());
    }

    #[test]
    fn small_dimensions_rejected() {
        let v = [1.0; 3];
        assert!(matches!(
            fourth_moment_pairing_sum(&v, &v, &v),
            Err(Error::SingularGram { .. })
        ));
        assert!(fourth_moment_printed(&[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn chi_examples() {
        assert!((chi_eq_printed(&[1.0, 1.0]) - 1.0 / 3.0).abs() < 1e-15);
        let v = vec![1.0; 50];
        assert!(chi_ueq_printed(&v) < 0.0);
        assert!(chi_haar(&v).unwrap().1 < 0.0);
    }

    #[test]
    fn chi_haar_is_w_v_w() {
        let v = [0.5, 1.0, -2.0, 0.25, 1.5];
        let t = weingarten_table(2, v.len()).unwrap();
        let (n4, q4) = v_norms(&v);
        let vm = Matrix::from_fn(3, 3, |i, j| if i == j { n4 } else { q4 });
        let chi = t.wg.matmul(&vm).matmul(&t.wg);
        let (eq, ueq) = chi_haar(&v).unwrap();
        assert!((chi.get(1, 1) - eq).abs() <= 1e-12 * eq.abs());
        assert!((chi.get(0, 2) - ueq).abs() <= 1e-12 * ueq.abs());
    }

    #[test]
    fn printed_chi_is_w_v_w_with_printed_weights() {
        let v = [0.5, 1.0, -2.0, 0.25, 1.5];
        let (on, off) = wg_k2_printed(v.len());
        let w = Matrix::from_fn(3, 3, |i, j| if i == j { on } else { off });
        let (n4, q4) = v_norms(&v);
        let vm = Matrix::from_fn(3, 3, |i, j| if i == j { n4 } else { q4 });
        let chi = w.matmul(&vm).matmul(&w);
        assert!((chi.get(0, 0) - chi_eq_printed(&v)).abs() <= 1e-14);
        assert!((chi.get(0, 1) - chi_ueq_printed(&v)).abs() <= 1e-14);
    }

    #[test]
    fn printed_formula_arithmetic() {
        let v = [1.0; 8];
        let mut b = [0.0; 8];
        b[0] = 1.0;
        let printed = fourth_moment_printed(&v, &b, &b).unwrap();
        let want = chi_eq_printed(&v) * (8.0 + 2.0) + 6.0 * chi_ueq_printed(&v);
        assert!((printed - want).abs() < 1e-16);
        let exact = fourth_moment_pairing_sum(&v, &b, &b).unwrap();
        assert!((printed - exact).abs() > 1e-3 * exact);
    }

    #[test]
    fn mc_scalar_is_deterministic() {
        let est = mc_orthogonal_moment(
            &[2.0],
            &[3.0],
            &[0.5],
            MomentOrder::Second,
            MIN_SAMPLES,
            &mut stream(1),
        )
        .unwrap();
        assert_eq!(est.estimate, 9.0);
        assert_eq!(est.stderr, 0.0);
        assert!(est.agrees_with(9.0));
    }

    #[test]
    fn mc_rejects_small_sample_counts() {
        let one = [1.0];
        assert!(mc_orthogonal_moment(&one, &one, &one, MomentOrder::Second, 10, &mut stream(0)).is_err());
        assert!(MomentOrder::from_order(3).is_err());
    }

    #[test]
    fn mc_second_moment_at_d8() {
        let v: Vec<f64> = (0..8).map(|i| 0.5 + i as f64 * 0.25).collect();
        let mut b = vec![0.0; 8];
        b[1] = 1.0;
        b[5] = -1.0;
        let mut c = vec![0.0; 8];
        c[2] = 1.0;
        let est = mc_orthogonal_moment(&v, &b, &c, MomentOrder::Second, 20_000, &mut stream(4)).unwrap();
        let closed = second_moment_closed(&v, &b, &c).unwrap();
        assert!(est.agrees_with(closed), "{est:?} vs {closed}");
    }

    #[test]
    fn block_merge_is_deterministic() {
        let v = [1.0, 2.0, 0.5, 1.0];
        let b = [1.0, 0.0, 0.0, 0.0];
        let c = [0.0, 0.0, 1.0, 0.0];
        let run = || {
            let mut acc = RunningMoments::new();
            for block in 0..4 {
                acc.merge(&mc_orthogonal_block(&v, &b, &c, MomentOrder::Fourth, 500, 77, block).unwrap());
            }
            acc
        };
        assert_eq!(run(), run());
        assert_eq!(run().count(), 2000);
    }

    #[test]
    fn gaussian_overlap_e1_case() {
        let mut e1 = vec![0.0; 4];
        e1[0] = 1.0;
        let r = gaussian_moment_suite(&e1, &e1, 20_000, &mut stream(2)).unwrap();
        assert_eq!(r.overlap_expected, 1.0);
        assert_eq!(r.product_printed, 5.0);
        assert_eq!(r.product_alternative, 6.0);
        assert!(r.overlap_agrees());
    }
}
