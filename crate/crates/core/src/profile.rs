//! Variance profiles and the kernel operators built from them.
//!
//! A profile is a nonnegative `p × n` matrix of variances `s_kq` together with
//! atom masses on the row space (size `p`) and the column space (size `n`).
//! The operators
//!
//! ```text
//! (S v)_k  = Σ_q s_kq w2_q v_q        (length n → length p)
//! (Sᵗu)_q  = Σ_k s_kq w1_k u_k        (length p → length n)
//! 𝐒 w      = (S w_tail, Sᵗ w_head)    (length p+n → length p+n)
//! ```
//!
//! are applied matrix-free. The combined index space puts the `p` row indices
//! first and the `n` column indices last.

use std::collections::HashMap;
use std::ops::{AddAssign, Mul};

use num_complex::Complex64;
use num_traits::Zero;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Element type the kernel operators can act on (real or complex vectors).
pub trait Scalar: Copy + Zero + Mul<f64, Output = Self> + AddAssign + Send + Sync {}
impl Scalar for f64 {}
impl Scalar for Complex64 {}

/// Which block a row or column index falls into, for profiles built from blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockLayout {
    pub row_block: Vec<usize>,
    pub col_block: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceProfile {
    p: usize,
    n: usize,
    /// Row-major `p × n`.
    s: Vec<f64>,
    weight1: Vec<f64>,
    weight2: Vec<f64>,
    layout: Option<BlockLayout>,
}

impl VarianceProfile {
    /// Profile with unit (counting-measure) weights.
    pub fn from_dense(p: usize, n: usize, s: Vec<f64>) -> Result<Self> {
        Self::with_weights(p, n, s, vec![1.0; p], vec![1.0; n])
    }

    pub fn with_weights(
        p: usize,
        n: usize,
        s: Vec<f64>,
        weight1: Vec<f64>,
        weight2: Vec<f64>,
    ) -> Result<Self> {
        if p == 0 || n == 0 {
            return Err(Error::InvalidProfile("p and n must be positive".into()));
        }
        if s.len() != p * n {
            return Err(Error::DimensionMismatch {
                expected: p * n,
                got: s.len(),
            });
        }
        if weight1.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: weight1.len(),
            });
        }
        if weight2.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: weight2.len(),
            });
        }
        if let Some(bad) = s.iter().position(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidProfile(format!(
                "variance s[{}][{}] = {} is negative or not finite",
                bad / n,
                bad % n,
                s[bad]
            )));
        }
        if weight1
            .iter()
            .chain(weight2.iter())
            .any(|w| !w.is_finite() || *w <= 0.0)
        {
            return Err(Error::InvalidProfile(
                "measure weights must be positive and finite".into(),
            ));
        }
        Ok(Self {
            p,
            n,
            s,
            weight1,
            weight2,
            layout: None,
        })
    }

    /// Constant profile `s_kq = value` with unit weights.
    pub fn constant(p: usize, n: usize, value: f64) -> Result<Self> {
        Self::from_dense(p, n, vec![value; p * n])
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Size of the combined index space.
    pub fn dim(&self) -> usize {
        self.p + self.n
    }

    #[inline]
    pub fn s(&self, k: usize, q: usize) -> f64 {
        self.s[k * self.n + q]
    }

    pub fn entries(&self) -> &[f64] {
        &self.s
    }

    pub fn weight1(&self) -> &[f64] {
        &self.weight1
    }

    pub fn weight2(&self) -> &[f64] {
        &self.weight2
    }

    pub fn layout(&self) -> Option<&BlockLayout> {
        self.layout.as_ref()
    }

    /// π₁(𝔛₁).
    pub fn mass1(&self) -> f64 {
        self.weight1.iter().sum()
    }

    /// π₂(𝔛₂).
    pub fn mass2(&self) -> f64 {
        self.weight2.iter().sum()
    }

    pub fn is_zero(&self) -> bool {
        self.s.iter().all(|v| *v == 0.0)
    }

    /// Weights of the normalized probability measure π on the combined space.
    pub fn pi_weights(&self) -> Vec<f64> {
        let total = self.mass1() + self.mass2();
        self.weight1
            .iter()
            .chain(self.weight2.iter())
            .map(|w| w / total)
            .collect()
    }

    /// Normalized weights π₁/π₁(𝔛₁) on the row space.
    pub fn row_average_weights(&self) -> Vec<f64> {
        let total = self.mass1();
        self.weight1.iter().map(|w| w / total).collect()
    }

    /// The sign vector e₋: +1 on rows, −1 on columns.
    pub fn e_minus(&self) -> Vec<f64> {
        let mut e = vec![1.0; self.dim()];
        e[self.p..].iter_mut().for_each(|v| *v = -1.0);
        e
    }

    /// ⟨e₋⟩ under π.
    pub fn e_minus_average(&self) -> f64 {
        let (a, b) = (self.mass1(), self.mass2());
        (a - b) / (a + b)
    }

    pub fn apply_s<T: Scalar>(&self, v: &[T]) -> Result<Vec<T>> {
        check_len(self.n, v.len())?;
        let mut out = vec![T::zero(); self.p];
        self.apply_s_into(v, &mut out);
        Ok(out)
    }

    pub fn apply_st<T: Scalar>(&self, u: &[T]) -> Result<Vec<T>> {
        check_len(self.p, u.len())?;
        let mut out = vec![T::zero(); self.n];
        self.apply_st_into(u, &mut out);
        Ok(out)
    }

    pub fn apply_bold_s<T: Scalar>(&self, w: &[T]) -> Result<Vec<T>> {
        check_len(self.dim(), w.len())?;
        let mut out = vec![T::zero(); self.dim()];
        self.apply_bold_s_into(w, &mut out);
        Ok(out)
    }

    pub(crate) fn apply_s_into<T: Scalar>(&self, v: &[T], out: &mut [T]) {
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.s[k * self.n..(k + 1) * self.n];
            let mut acc = T::zero();
            for ((s, w), x) in row.iter().zip(&self.weight2).zip(v) {
                acc += *x * (s * w);
            }
            *o = acc;
        }
    }

    pub(crate) fn apply_st_into<T: Scalar>(&self, u: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for (k, x) in u.iter().enumerate() {
            let row = &self.s[k * self.n..(k + 1) * self.n];
            let xw = *x * self.weight1[k];
            for (o, s) in out.iter_mut().zip(row) {
                *o += xw * *s;
            }
        }
    }

    pub(crate) fn apply_bold_s_into<T: Scalar>(&self, w: &[T], out: &mut [T]) {
        let (head, tail) = w.split_at(self.p);
        let (out_head, out_tail) = out.split_at_mut(self.p);
        self.apply_s_into(tail, out_head);
        self.apply_st_into(head, out_tail);
    }

    /// max_k Σ_q s_kq w2_q, the sup-norm operator norm of S.
    pub fn norm_s_inf(&self) -> f64 {
        (0..self.p)
            .map(|k| {
                (0..self.n)
                    .map(|q| self.s(k, q) * self.weight2[q])
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// max_q Σ_k s_kq w1_k, the sup-norm operator norm of Sᵗ.
    pub fn norm_st_inf(&self) -> f64 {
        (0..self.n)
            .map(|q| {
                (0..self.p)
                    .map(|k| self.s(k, q) * self.weight1[k])
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    /// Σ = 4 max{‖S‖, ‖Sᵗ‖}; the Gram density is supported in [0, Σ].
    pub fn sigma_bound(&self) -> f64 {
        4.0 * self.norm_s_inf().max(self.norm_st_inf())
    }

    /// Multiply every variance by `t`.
    pub fn scaled(&self, t: f64) -> Result<Self> {
        let mut out = Self::with_weights(
            self.p,
            self.n,
            self.s.iter().map(|v| v * t).collect(),
            self.weight1.clone(),
            self.weight2.clone(),
        )?;
        out.layout = self.layout.clone();
        Ok(out)
    }

    /// Merge identical rows and identical columns into single atoms carrying
    /// the summed weights. The Dyson solution is constant on each merged class,
    /// so solving the reduced problem and expanding is exact.
    pub fn compress(&self) -> Compressed {
        let row_class = classify(self.p, |k| {
            self.s[k * self.n..(k + 1) * self.n]
                .iter()
                .map(|v| v.to_bits())
                .collect()
        });
        let col_class = classify(self.n, |q| {
            (0..self.p).map(|k| self.s(k, q).to_bits()).collect()
        });
        let (p_red, row_rep, w1) = reduce_classes(&row_class, &self.weight1);
        let (n_red, col_rep, w2) = reduce_classes(&col_class, &self.weight2);
        let mut s = Vec::with_capacity(p_red * n_red);
        for &k in &row_rep {
            for &q in &col_rep {
                s.push(self.s(k, q));
            }
        }
        let reduced = VarianceProfile {
            p: p_red,
            n: n_red,
            s,
            weight1: w1,
            weight2: w2,
            layout: None,
        };
        Compressed {
            reduced,
            row_class,
            col_class,
        }
    }

    /// SHA-256 over dimensions, variances and weights (little-endian bits).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.p as u64).to_le_bytes());
        h.update((self.n as u64).to_le_bytes());
        for v in self.s.iter().chain(&self.weight1).chain(&self.weight2) {
            h.update(v.to_bits().to_le_bytes());
        }
        h.finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect::<String>()
    }

    /// min/mean of (SSᵗ)^L 1 (rows) or (SᵗS)^L 1 (columns).
    fn kappa_estimate(&self, rows: bool, l: usize) -> f64 {
        let (mut x, w) = if rows {
            (vec![1.0; self.p], self.row_average_weights())
        } else {
            let total = self.mass2();
            (
                vec![1.0; self.n],
                self.weight2.iter().map(|v| v / total).collect(),
            )
        };
        for _ in 0..l {
            x = if rows {
                self.apply_s(&self.apply_st(&x).expect("length"))
                    .expect("length")
            } else {
                self.apply_st(&self.apply_s(&x).expect("length"))
                    .expect("length")
            };
        }
        let mean: f64 = x.iter().zip(&w).map(|(a, b)| a * b).sum();
        let min = x.iter().cloned().fold(f64::INFINITY, f64::min);
        if mean > 0.0 {
            min / mean
        } else {
            0.0
        }
    }

    /// Diagnostics for the model assumptions (never an error).
    pub fn check_assumptions(&self, l_max: usize) -> AssumptionReport {
        let mass1 = self.mass1();
        let mass2 = self.mass2();
        let compressed = self.compress();
        let red = &compressed.reduced;
        let a2_rows = power_level(red, true, l_max).map(|l| IrreducibilityEstimate {
            l,
            kappa: self.kappa_estimate(true, l),
        });
        let a2_cols = power_level(red, false, l_max).map(|l| IrreducibilityEstimate {
            l,
            kappa: self.kappa_estimate(false, l),
        });

        let psi1 = (0..self.p)
            .map(|k| {
                let sq: f64 = (0..self.n)
                    .map(|q| self.weight2[q] * self.s(k, q).powi(2))
                    .sum();
                (mass2 * sq).sqrt()
            })
            .fold(0.0, f64::max);
        let psi2 = (0..self.n)
            .map(|q| {
                let sq: f64 = (0..self.p)
                    .map(|k| self.weight1[k] * self.s(k, q).powi(2))
                    .sum();
                (mass1 * sq).sqrt()
            })
            .fold(0.0, f64::max);

        let irreducible = a2_rows.is_some() && a2_cols.is_some();
        AssumptionReport {
            mass_ratio: mass1 / mass2,
            irreducible,
            a2_rows,
            a2_cols,
            psi1,
            psi2,
            distinct_rows: compressed.reduced.p,
            distinct_cols: compressed.reduced.n,
            a3_block_structured: self.layout.is_some(),
            max_variance_times_dim: self.s.iter().cloned().fold(0.0, f64::max)
                * (self.p + self.n) as f64,
        }
    }
}

/// Smallest L ≤ l_max with (SSᵗ)^L (or (SᵗS)^L) entrywise positive.
///
/// Positivity only depends on the bipartite graph k ~ q ⟺ s_kq > 0: the
/// (k,l) entry of (SSᵗ)^L is positive iff some walk of length 2L joins k and l,
/// and walks may backtrack, so this holds iff dist(k,l) ≤ 2L.
fn power_level(prof: &VarianceProfile, rows: bool, l_max: usize) -> Option<usize> {
    let (p, n) = (prof.p, prof.n);
    let dim = p + n;
    let mut adj = vec![Vec::new(); dim];
    for k in 0..p {
        for q in 0..n {
            if prof.s(k, q) > 0.0 {
                adj[k].push(p + q);
                adj[p + q].push(k);
            }
        }
    }
    let sources: Vec<usize> = if rows {
        (0..p).collect()
    } else {
        (p..dim).collect()
    };
    let mut worst = 0;
    for &src in &sources {
        if adj[src].is_empty() {
            return None;
        }
        let mut dist = vec![usize::MAX; dim];
        dist[src] = 0;
        let mut queue = std::collections::VecDeque::from([src]);
        while let Some(x) = queue.pop_front() {
            for &y in &adj[x] {
                if dist[y] == usize::MAX {
                    dist[y] = dist[x] + 1;
                    queue.push_back(y);
                }
            }
        }
        for &t in &sources {
            if dist[t] == usize::MAX {
                return None;
            }
            worst = worst.max(dist[t]);
        }
    }
    let l = (worst / 2).max(1);
    (l <= l_max).then_some(l)
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

fn classify(count: usize, key: impl Fn(usize) -> Vec<u64>) -> Vec<usize> {
    let mut seen: HashMap<Vec<u64>, usize> = HashMap::new();
    (0..count)
        .map(|i| {
            let next = seen.len();
            *seen.entry(key(i)).or_insert(next)
        })
        .collect()
}

fn reduce_classes(class: &[usize], weights: &[f64]) -> (usize, Vec<usize>, Vec<f64>) {
    let count = class.iter().max().map_or(0, |m| m + 1);
    let mut rep = vec![usize::MAX; count];
    let mut w = vec![0.0; count];
    for (i, &c) in class.iter().enumerate() {
        if rep[c] == usize::MAX {
            rep[c] = i;
        }
        w[c] += weights[i];
    }
    (count, rep, w)
}

/// A profile with identical rows/columns merged, plus the class maps.
#[derive(Clone, Debug)]
pub struct Compressed {
    pub reduced: VarianceProfile,
    pub row_class: Vec<usize>,
    pub col_class: Vec<usize>,
}

impl Compressed {
    pub fn is_trivial(&self) -> bool {
        self.reduced.p == self.row_class.len() && self.reduced.n == self.col_class.len()
    }

    /// Combined-space vector on the full profile → reduced profile (takes the
    /// first member of each class).
    pub fn restrict<T: Copy>(&self, full: &[T]) -> Vec<T> {
        let p = self.row_class.len();
        let mut head: Vec<Option<T>> = vec![None; self.reduced.p];
        let mut tail: Vec<Option<T>> = vec![None; self.reduced.n];
        for (k, &c) in self.row_class.iter().enumerate() {
            head[c].get_or_insert(full[k]);
        }
        for (q, &c) in self.col_class.iter().enumerate() {
            tail[c].get_or_insert(full[p + q]);
        }
        head.into_iter()
            .chain(tail)
            .map(|v| v.expect("every class has a member"))
            .collect()
    }

    /// Reduced combined-space vector → full profile.
    pub fn expand<T: Copy>(&self, reduced: &[T]) -> Vec<T> {
        let pr = self.reduced.p;
        self.row_class
            .iter()
            .map(|&c| reduced[c])
            .chain(self.col_class.iter().map(|&c| reduced[pr + c]))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrreducibilityEstimate {
    /// Smallest power L with (SSᵗ)^L entrywise positive.
    pub l: usize,
    /// min/mean of (SSᵗ)^L 1, the κ estimate from the all-ones test vector.
    pub kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// π₁(𝔛₁)/π₂(𝔛₂).
    pub mass_ratio: f64,
    pub irreducible: bool,
    pub a2_rows: Option<IrreducibilityEstimate>,
    pub a2_cols: Option<IrreducibilityEstimate>,
    /// L²(π₂/π₂(𝔛₂)) → sup-norm bound for S.
    pub psi1: f64,
    /// L²(π₁/π₁(𝔛₁)) → sup-norm bound for Sᵗ.
    pub psi2: f64,
    pub distinct_rows: usize,
    pub distinct_cols: usize,
    /// Piecewise-constant rows and columns, which is sufficient for A3.
    pub a3_block_structured: bool,
    /// (p+n)·max s_kq, the s* of the variance upper bound.
    pub max_variance_times_dim: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    /// Divide block values by p+n.
    #[default]
    Dimension,
    Raw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSpec {
    pub block_values: Vec<Vec<f64>>,
    pub row_fractions: Vec<f64>,
    pub col_fractions: Vec<f64>,
    pub normalization: Normalization,
}

impl BlockSpec {
    /// Blocks with equal fractions along each axis.
    pub fn uniform(block_values: Vec<Vec<f64>>, normalization: Normalization) -> Self {
        let r = block_values.len();
        let c = block_values.first().map_or(0, Vec::len);
        Self {
            block_values,
            row_fractions: vec![1.0 / r as f64; r],
            col_fractions: vec![1.0 / c.max(1) as f64; c],
            normalization,
        }
    }

    /// The 2×2 block profile with values 6, 4, 4, 3.
    pub fn cusp_blocks() -> Self {
        Self::uniform(vec![vec![6.0, 4.0], vec![4.0, 3.0]], Normalization::Dimension)
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.block_values.len();
        if r == 0 {
            return Err(Error::config("block_values", "must have at least one row"));
        }
        let c = self.block_values[0].len();
        if c == 0 || self.block_values.iter().any(|row| row.len() != c) {
            return Err(Error::config(
                "block_values",
                "rows must be non-empty and of equal length",
            ));
        }
        if self
            .block_values
            .iter()
            .flatten()
            .any(|v| !v.is_finite() || *v < 0.0)
        {
            return Err(Error::config(
                "block_values",
                "values must be finite and ≥ 0",
            ));
        }
        check_fractions("row_fractions", &self.row_fractions, r)?;
        check_fractions("col_fractions", &self.col_fractions, c)?;
        Ok(())
    }
}

fn check_fractions(key: &str, fractions: &[f64], expected: usize) -> Result<()> {
    if fractions.len() != expected {
        return Err(Error::config(
            key,
            format!("expected {expected} entries, got {}", fractions.len()),
        ));
    }
    if fractions.iter().any(|f| !f.is_finite() || *f <= 0.0) {
        return Err(Error::config(key, "fractions must be positive"));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-12 {
        return Err(Error::config(key, format!("fractions sum to {sum}, not 1")));
    }
    Ok(())
}

/// Block index for each of `dim` positions: position i belongs to the first
/// block whose cumulative boundary floor(cum·dim) exceeds i.
fn block_assignment(axis: &'static str, fractions: &[f64], dim: usize) -> Result<Vec<usize>> {
    let mut bounds = Vec::with_capacity(fractions.len());
    let mut cum = 0.0;
    for (i, f) in fractions.iter().enumerate() {
        cum += f;
        let b = if i + 1 == fractions.len() {
            dim
        } else {
            // guard against cum·dim landing a few ulps below an integer
            ((cum * dim as f64) + 1e-9).floor() as usize
        };
        bounds.push(b.min(dim));
    }
    let mut start = 0;
    let mut assign = Vec::with_capacity(dim);
    for (i, &end) in bounds.iter().enumerate() {
        if end <= start {
            return Err(Error::DegenerateBlock {
                axis,
                index: i,
                fraction: fractions[i],
                dim,
            });
        }
        assign.extend(std::iter::repeat_n(i, end - start));
        start = end;
    }
    Ok(assign)
}

/// Expand a block specification to a `p × n` profile with unit weights.
pub fn build_block_profile(spec: &BlockSpec, p: usize, n: usize) -> Result<VarianceProfile> {
    spec.validate()?;
    if p == 0 || n == 0 {
        return Err(Error::InvalidProfile("p and n must be positive".into()));
    }
    let row_block = block_assignment("row", &spec.row_fractions, p)?;
    let col_block = block_assignment("column", &spec.col_fractions, n)?;
    let factor = match spec.normalization {
        Normalization::Dimension => 1.0 / (p + n) as f64,
        Normalization::Raw => 1.0,
    };
    let mut s = Vec::with_capacity(p * n);
    for &i in &row_block {
        for &j in &col_block {
            s.push(spec.block_values[i][j] * factor);
        }
    }
    let mut profile = VarianceProfile::from_dense(p, n, s)?;
    profile.layout = Some(BlockLayout {
        row_block,
        col_block,
    });
    Ok(profile)
}

/// One index per block, weighted by fraction·dimension, for real-valued
/// dimensions p, n > 0. Equals the merged form of `build_block_profile`
/// whenever fraction·dimension are integers.
pub fn build_weighted_block_profile(spec: &BlockSpec, p: f64, n: f64) -> Result<VarianceProfile> {
    spec.validate()?;
    if !(p > 0.0 && n > 0.0 && p.is_finite() && n.is_finite()) {
        return Err(Error::InvalidProfile("p and n must be positive".into()));
    }
    let factor = match spec.normalization {
        Normalization::Dimension => 1.0 / (p + n),
        Normalization::Raw => 1.0,
    };
    let s = spec
        .block_values
        .iter()
        .flatten()
        .map(|v| v * factor)
        .collect();
    let w1 = spec.row_fractions.iter().map(|f| f * p).collect();
    let w2 = spec.col_fractions.iter().map(|f| f * n).collect();
    VarianceProfile::with_weights(spec.block_values.len(), spec.col_fractions.len(), s, w1, w2)
}
