//! Truncated multivariate power-series algebra.
//!
//! A series lives on an [`IndexSet`]: all exponent tuples of total degree
//! up to `M` in `D` variables, stored in graded-lexicographic order
//! (degree first, then descending lexicographic within a degree, so the
//! degree-1 shell reads `s1, s2, ..., sD`). Coefficients are dense in
//! rank order, which is also the canonical on-disk order.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use num_complex::Complex64;
use num_traits::Float;

use crate::error::{Error, Result};

/// One exponent tuple `(n1, ..., nD)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exps: Vec<u32>,
}

impl MultiIndex {
    pub fn new(exps: Vec<u32>) -> Self {
        Self { exps }
    }

    /// The all-zero index of the given dimension count.
    pub fn zero(dims: usize) -> Self {
        Self { exps: vec![0; dims] }
    }

    /// Unit index `e_dim`.
    pub fn unit(dims: usize, dim: usize) -> Self {
        let mut exps = vec![0; dims];
        exps[dim] = 1;
        Self { exps }
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exps
    }

    pub fn dims(&self) -> usize {
        self.exps.len()
    }

    /// Total degree, the sum of all entries.
    pub fn degree(&self) -> u32 {
        self.exps.iter().sum()
    }
}

/// Count of exponent tuples of exact total degree `order` in `dims`
/// variables: `C(order + dims - 1, order)`.
pub fn n_col(dims: usize, order: usize) -> Result<u64> {
    if dims == 0 {
        return Err(Error::CountOverflow { dims, order });
    }
    binomial(order + dims - 1, order).ok_or(Error::CountOverflow { dims, order })
}

/// Count of exponent tuples of total degree up to `order` in `dims`
/// variables: the sum of [`n_col`] over all lower orders, which
/// telescopes to `C(order + dims, order)`.
pub fn n_term(dims: usize, order: usize) -> Result<u64> {
    if dims == 0 {
        return Err(Error::CountOverflow { dims, order });
    }
    binomial(order + dims, order).ok_or(Error::CountOverflow { dims, order })
}

fn binomial(n: usize, k: usize) -> Option<u64> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 1..=k {
        acc = acc.checked_mul((n - k + i) as u128)?;
        acc /= i as u128;
    }
    if acc > u64::MAX as u128 {
        None
    } else {
        Some(acc as u64)
    }
}

fn lex_cmp(a: &[u32], b: &[u32]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// All multi-indices of total degree `<= max_degree` in `dims` variables,
/// in graded-lexicographic order, with rank lookup in both directions.
#[derive(Debug, PartialEq, Eq)]
pub struct IndexSet {
    dims: usize,
    max_degree: usize,
    exps: Vec<u32>,
    shell_offsets: Vec<usize>,
}

impl IndexSet {
    pub fn new(dims: usize, max_degree: usize) -> Result<Arc<Self>> {
        if dims == 0 {
            return Err(Error::CountOverflow { dims, order: max_degree });
        }
        let total = n_term(dims, max_degree)?;
        if total > (u32::MAX as u64) {
            return Err(Error::CountOverflow { dims, order: max_degree });
        }
        let mut exps = Vec::with_capacity(total as usize * dims);
        let mut shell_offsets = Vec::with_capacity(max_degree + 2);
        let mut scratch = vec![0u32; dims];
        for degree in 0..=max_degree {
            shell_offsets.push(exps.len() / dims);
            push_shell(&mut exps, &mut scratch, 0, degree as u32);
        }
        shell_offsets.push(exps.len() / dims);
        Ok(Arc::new(Self { dims, max_degree, exps, shell_offsets }))
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Number of indices in the set.
    pub fn len(&self) -> usize {
        self.exps.len() / self.dims
    }

    pub fn is_empty(&self) -> bool {
        self.exps.is_empty()
    }

    /// Exponent tuple at `rank`.
    pub fn exponents(&self, rank: usize) -> &[u32] {
        &self.exps[rank * self.dims..(rank + 1) * self.dims]
    }

    pub fn degree_of(&self, rank: usize) -> usize {
        self.exponents(rank).iter().sum::<u32>() as usize
    }

    /// Rank range of the exact-degree shell.
    pub fn shell(&self, degree: usize) -> core::ops::Range<usize> {
        self.shell_offsets[degree]..self.shell_offsets[degree + 1]
    }

    /// Rank of an exponent tuple, if it lies in the set.
    pub fn rank_of(&self, target: &[u32]) -> Option<usize> {
        if target.len() != self.dims {
            return None;
        }
        let degree = target.iter().sum::<u32>() as usize;
        if degree > self.max_degree {
            return None;
        }
        let range = self.shell(degree);
        // Shells are sorted by descending lexicographic order.
        let mut lo = range.start;
        let mut hi = range.end;
        while lo < hi {
            let mid = lo + (hi - lo) / 2;
            match lex_cmp(self.exponents(mid), target) {
                Ordering::Greater => lo = mid + 1,
                Ordering::Equal => return Some(mid),
                Ordering::Less => hi = mid,
            }
        }
        None
    }

    /// Rank of the tuple at `rank` with `exps[dim]` decremented by one,
    /// or `None` when that entry is already zero.
    pub fn rank_shift_down(&self, rank: usize, dim: usize) -> Option<usize> {
        let e = self.exponents(rank);
        if e[dim] == 0 {
            return None;
        }
        let mut shifted: Vec<u32> = e.to_vec();
        shifted[dim] -= 1;
        self.rank_of(&shifted)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[u32])> {
        (0..self.len()).map(move |r| (r, self.exponents(r)))
    }
}

fn push_shell(exps: &mut Vec<u32>, scratch: &mut [u32], dim: usize, remaining: u32) {
    if dim == scratch.len() - 1 {
        scratch[dim] = remaining;
        exps.extend_from_slice(scratch);
        return;
    }
    for e in (0..=remaining).rev() {
        scratch[dim] = e;
        push_shell(exps, scratch, dim + 1, remaining - e);
    }
}

/// Truncated multivariate power series with complex coefficients, dense
/// in graded-lexicographic rank order over a shared [`IndexSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct MpSeries {
    index_set: Arc<IndexSet>,
    coeffs: Vec<Complex64>,
}

impl MpSeries {
    pub fn zero(index_set: Arc<IndexSet>) -> Self {
        let coeffs = vec![Complex64::new(0.0, 0.0); index_set.len()];
        Self { index_set, coeffs }
    }

    /// Series equal to the constant `c`.
    pub fn constant(index_set: Arc<IndexSet>, c: Complex64) -> Self {
        let mut s = Self::zero(index_set);
        s.coeffs[0] = c;
        s
    }

    /// The multiplicative unit series.
    pub fn unit(index_set: Arc<IndexSet>) -> Self {
        Self::constant(index_set, Complex64::new(1.0, 0.0))
    }

    pub fn from_coeffs(index_set: Arc<IndexSet>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != index_set.len() {
            return Err(Error::ShapeMismatch);
        }
        Ok(Self { index_set, coeffs })
    }

    pub fn index_set(&self) -> &Arc<IndexSet> {
        &self.index_set
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn get(&self, rank: usize) -> Complex64 {
        self.coeffs[rank]
    }

    pub fn set(&mut self, rank: usize, c: Complex64) {
        self.coeffs[rank] = c;
    }

    pub fn at(&self, exps: &[u32]) -> Result<Complex64> {
        let rank = self.index_set.rank_of(exps).ok_or(Error::IndexOutOfRange)?;
        Ok(self.coeffs[rank])
    }

    fn check_shape(&self, other: &MpSeries) -> Result<()> {
        if self.index_set.dims() != other.index_set.dims()
            || self.index_set.max_degree() != other.index_set.max_degree()
        {
            return Err(Error::ShapeMismatch);
        }
        Ok(())
    }

    /// Truncated convolution coefficient at `n`:
    /// `sum over 0 <= tau <= n (componentwise) of self[n - tau] * g[tau]`,
    /// optionally excluding the `tau = 0` and/or `tau = n` boundary terms.
    /// The both-boundaries-excluded variant is the interior convolution
    /// used by the PV-bus recursions.
    pub fn conv_at(&self, g: &MpSeries, n: &[u32], lo_excl: bool, hi_excl: bool) -> Result<Complex64> {
        self.check_shape(g)?;
        let rank = self.index_set.rank_of(n).ok_or(Error::IndexOutOfRange)?;
        Ok(conv_kernel(
            &self.index_set,
            &self.coeffs,
            &g.coeffs,
            rank,
            lo_excl,
            hi_excl,
            false,
            false,
        ))
    }

    /// [`Self::conv_at`] addressed by rank; the index sets must already match.
    pub fn conv_at_rank(&self, g: &MpSeries, rank: usize, lo_excl: bool, hi_excl: bool) -> Complex64 {
        conv_kernel(&self.index_set, &self.coeffs, &g.coeffs, rank, lo_excl, hi_excl, false, false)
    }

    /// Coefficient-wise product truncated to the index set's max degree.
    pub fn truncated_product(&self, g: &MpSeries) -> Result<MpSeries> {
        self.check_shape(g)?;
        let mut out = MpSeries::zero(self.index_set.clone());
        for rank in 0..self.index_set.len() {
            out.coeffs[rank] = conv_kernel(
                &self.index_set,
                &self.coeffs,
                &g.coeffs,
                rank,
                false,
                false,
                false,
                false,
            );
        }
        Ok(out)
    }

    /// Reciprocal series `W` with `W * self = 1` up to the truncation
    /// order, computed by the graded recurrence
    /// `W[n] = -(sum over tau < n of W[tau] * self[n - tau]) / self[0]`.
    pub fn reciprocal(&self) -> Result<MpSeries> {
        let v0 = self.coeffs[0];
        if v0 == Complex64::new(0.0, 0.0) {
            return Err(Error::SingularReciprocal);
        }
        let mut w = MpSeries::zero(self.index_set.clone());
        w.coeffs[0] = Complex64::new(1.0, 0.0) / v0;
        for rank in 1..self.index_set.len() {
            // tau = n (the W[n] term itself) excluded; tau = 0 keeps
            // self[n] * W[0].
            let s = conv_kernel(
                &self.index_set,
                &self.coeffs,
                &w.coeffs,
                rank,
                false,
                true,
                false,
                false,
            );
            w.coeffs[rank] = -s / v0;
        }
        Ok(w)
    }

    /// One step of the reciprocal recurrence: seal `self[rank]` so that
    /// `conv(v, self)` vanishes at `rank`, given all strictly lower
    /// degrees of `self` are already sealed.
    pub(crate) fn seal_reciprocal_at(&mut self, v: &MpSeries, rank: usize) {
        let s = conv_kernel(
            &self.index_set,
            &v.coeffs,
            &self.coeffs,
            rank,
            false,
            true,
            false,
            false,
        );
        self.coeffs[rank] = -s / v.coeffs[0];
    }

    /// Series with every coefficient conjugated. For real scale values
    /// this realizes `f*(s1*, ..., sD*)`.
    pub fn conj_coeffs(&self) -> MpSeries {
        let coeffs = self.coeffs.iter().map(|c| c.conj()).collect();
        Self { index_set: self.index_set.clone(), coeffs }
    }

    /// Evaluate at a real scale vector, accumulating in graded order.
    pub fn evaluate(&self, s: &[f64]) -> Result<Complex64> {
        if s.len() != self.index_set.dims() {
            return Err(Error::DimensionMismatch {
                expected: self.index_set.dims(),
                got: s.len(),
            });
        }
        let mut acc = Complex64::new(0.0, 0.0);
        for (rank, exps) in self.index_set.iter() {
            let mut mono = 1.0f64;
            for (value, &e) in s.iter().zip(exps) {
                if e != 0 {
                    mono *= value.powi(e as i32);
                }
            }
            acc += self.coeffs[rank] * mono;
        }
        Ok(acc)
    }

    /// Largest coefficient modulus in the exact-degree shell.
    pub fn max_abs_in_shell(&self, degree: usize) -> f64 {
        self.index_set
            .shell(degree)
            .map(|r| self.coeffs[r].norm())
            .fold(0.0, f64::max)
    }

    /// Copy truncated to a lower max degree (coefficients preserved
    /// rank-for-rank; graded order makes the prefix identical).
    pub fn truncated_to(&self, index_set: Arc<IndexSet>) -> Result<MpSeries> {
        if index_set.dims() != self.index_set.dims()
            || index_set.max_degree() > self.index_set.max_degree()
        {
            return Err(Error::ShapeMismatch);
        }
        let coeffs = self.coeffs[..index_set.len()].to_vec();
        Ok(MpSeries { index_set, coeffs })
    }
}

/// Shared convolution kernel. Interior terms are accumulated in odometer
/// order (last dimension fastest); boundary terms, when included, are
/// added afterwards (`tau = 0` first, then `tau = n`) so that the
/// no-exclusion result equals the both-excluded result plus the two
/// boundary products exactly, not just to rounding.
pub(crate) fn conv_kernel(
    ix: &IndexSet,
    f: &[Complex64],
    g: &[Complex64],
    n_rank: usize,
    lo_excl: bool,
    hi_excl: bool,
    conj_f: bool,
    conj_g: bool,
) -> Complex64 {
    let n = ix.exponents(n_rank);
    let dims = ix.dims();
    let pick_f = |r: usize| if conj_f { f[r].conj() } else { f[r] };
    let pick_g = |r: usize| if conj_g { g[r].conj() } else { g[r] };

    if ix.degree_of(n_rank) == 0 {
        // tau = 0 and tau = n coincide.
        return if lo_excl || hi_excl {
            Complex64::new(0.0, 0.0)
        } else {
            pick_f(0) * pick_g(0)
        };
    }

    let mut tau = vec![0u32; dims];
    let mut co_tau: Vec<u32> = n.to_vec();
    let mut acc = Complex64::new(0.0, 0.0);
    loop {
        let at_zero = tau.iter().all(|&t| t == 0);
        let at_n = co_tau.iter().all(|&t| t == 0);
        if !at_zero && !at_n {
            let rt = ix.rank_of(&tau).expect("tau within set");
            let rc = ix.rank_of(&co_tau).expect("n - tau within set");
            acc += pick_f(rc) * pick_g(rt);
        }
        // Odometer increment with per-dimension bound n[d].
        let mut d = dims;
        loop {
            if d == 0 {
                if !lo_excl {
                    let rn = n_rank;
                    acc += pick_f(rn) * pick_g(0);
                }
                if !hi_excl {
                    acc += pick_f(0) * pick_g(n_rank);
                }
                return acc;
            }
            d -= 1;
            if tau[d] < n[d] {
                tau[d] += 1;
                co_tau[d] -= 1;
                break;
            }
            co_tau[d] += tau[d];
            tau[d] = 0;
        }
    }
}
