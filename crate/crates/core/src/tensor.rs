//! Dense tensor storage and the re-arrangements the decomposition needs.
//!
//! Entries are stored in canonical order with mode 1 varying fastest: the
//! zero-based index `(i_1, .., i_N)` lives at `i_1 + I_1 (i_2 + I_2 (i_3 + ..))`.
//! That order *is* the vectorization, and it makes the vectorized rank-1 term
//! `a_1 ∘ .. ∘ a_N` equal to the Kronecker product `a_N ⊗ .. ⊗ a_1`, which is
//! how [`crate::linalg::khatri_rao`] orders its operands.
//!
//! Mode indices in this API are zero-based. The only one-based surface is the
//! textual split grammar parsed by [`ModeSplit::parse`].

use std::fmt;

use ndarray::{Array2, ArrayView2, Axis, ShapeBuilder};

use crate::error::{CpdError, Result};
use crate::linalg::khatri_rao_with_rank;
use crate::scalar::Scalar;

/// N-dimensional real array with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> DenseTensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        validate_shape(&shape)?;
        let len: usize = shape.iter().product();
        if data.len() != len {
            return Err(CpdError::ShapeMismatch(format!(
                "shape {shape:?} holds {len} entries but {} were supplied",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        let len = shape.iter().product();
        Ok(Self {
            shape,
            data: vec![T::zero(); len],
        })
    }

    /// Builds a tensor by evaluating `f` at every multi-index, in canonical order.
    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(&[usize]) -> T) -> Result<Self> {
        validate_shape(&shape)?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        let mut idx = vec![0usize; shape.len()];
        for _ in 0..len {
            data.push(f(&idx));
            increment(&mut idx, &shape);
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn order(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Canonical-order entries; this is the vectorization of the tensor.
    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn vectorize(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.shape.len());
        let mut lin = 0;
        for (&i, &n) in idx.iter().zip(&self.shape).rev() {
            lin = lin * n + i;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> T {
        self.data[self.linear_index(idx)]
    }

    pub fn frobenius_norm(&self) -> T {
        frobenius_norm(self)
    }

    /// Entrywise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a - b).collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Entrywise `self + other`.
    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect();
        Ok(Self {
            shape: self.shape.clone(),
            data,
        })
    }

    pub fn scale(&self, alpha: T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| alpha * x).collect(),
        }
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(CpdError::ShapeMismatch(format!(
                "{:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Sizes of the modes before and after `n`, i.e. the tensor viewed as
    /// `left × I_n × right` in canonical order.
    pub(crate) fn split_sizes(&self, n: usize) -> (usize, usize, usize) {
        let left = self.shape[..n].iter().product();
        let right = self.shape[n + 1..].iter().product();
        (left, self.shape[n], right)
    }

    fn check_mode(&self, n: usize) -> Result<()> {
        if n >= self.order() {
            return Err(CpdError::ModeOutOfRange {
                mode: n,
                order: self.order(),
            });
        }
        Ok(())
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(CpdError::ShapeMismatch("tensor order must be at least 1".into()));
    }
    if shape.contains(&0) {
        return Err(CpdError::ShapeMismatch(format!(
            "every mode size must be positive, got {shape:?}"
        )));
    }
    Ok(())
}

/// Advances a multi-index in canonical (first index fastest) order.
#[inline]
fn increment(idx: &mut [usize], shape: &[usize]) {
    for (i, &n) in idx.iter_mut().zip(shape) {
        *i += 1;
        if *i < n {
            return;
        }
        *i = 0;
    }
}

/// Mode-`n` matricization: an `I_n × Π_{p≠n} I_p` matrix whose column index
/// runs over the remaining modes with the lower-numbered ones varying fastest.
pub fn matricize<T: Scalar>(t: &DenseTensor<T>, n: usize) -> Result<Array2<T>> {
    t.check_mode(n)?;
    let (left, size, right) = t.split_sizes(n);
    let mut out = Array2::zeros((size, left * right));
    let data = t.data();
    for r in 0..right {
        for i in 0..size {
            let src = &data[left * (i + size * r)..left * (i + size * r + 1)];
            let mut row = out.row_mut(i);
            let dst = row
                .as_slice_mut()
                .expect("freshly allocated matrix is contiguous");
            dst[left * r..left * (r + 1)].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Inverse of [`matricize`].
pub fn tensorize<T: Scalar>(m: &Array2<T>, shape: &[usize], n: usize) -> Result<DenseTensor<T>> {
    let mut t = DenseTensor::zeros(shape.to_vec())?;
    t.check_mode(n)?;
    let (left, size, right) = t.split_sizes(n);
    if m.dim() != (size, left * right) {
        return Err(CpdError::ShapeMismatch(format!(
            "matrix of shape {:?} cannot be folded into mode {n} of {shape:?}",
            m.dim()
        )));
    }
    for (i, row) in m.axis_iter(Axis(0)).enumerate() {
        for r in 0..right {
            let dst = &mut t.data[left * (i + size * r)..left * (i + size * r + 1)];
            for (l, d) in dst.iter_mut().enumerate() {
                *d = row[left * r + l];
            }
        }
    }
    Ok(t)
}

pub(crate) fn validate_perm(perm: &[usize], order: usize) -> Result<()> {
    let mut seen = vec![false; order];
    if perm.len() != order {
        return Err(CpdError::InvalidPermutation(perm.to_vec()));
    }
    for &p in perm {
        if p >= order || seen[p] {
            return Err(CpdError::InvalidPermutation(perm.to_vec()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// Tensor transpose: output mode `k` is input mode `perm[k]`.
pub fn transpose_modes<T: Scalar>(t: &DenseTensor<T>, perm: &[usize]) -> Result<DenseTensor<T>> {
    validate_perm(perm, t.order())?;
    if perm.iter().enumerate().all(|(k, &p)| k == p) {
        return Ok(t.clone());
    }
    let mut in_strides = vec![1usize; t.order()];
    for k in 1..t.order() {
        in_strides[k] = in_strides[k - 1] * t.shape[k - 1];
    }
    let shape: Vec<usize> = perm.iter().map(|&p| t.shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();

    let mut data = Vec::with_capacity(t.len());
    let mut idx = vec![0usize; shape.len()];
    let mut offset = 0usize;
    let (n0, s0) = (shape[0], strides[0]);
    // the innermost mode is walked directly; the odometer handles the rest
    let outer = t.len() / n0;
    for _ in 0..outer {
        for i in 0..n0 {
            data.push(t.data[offset + i * s0]);
        }
        for k in 1..shape.len() {
            idx[k] += 1;
            offset += strides[k];
            if idx[k] < shape[k] {
                break;
            }
            offset -= strides[k] * shape[k];
            idx[k] = 0;
        }
    }
    Ok(DenseTensor { shape, data })
}

pub fn inverse_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    inv
}

/// A transpose followed by a grouping of consecutive permuted modes.
///
/// `boundaries` are the cut points `0 = n_0 < n_1 < .. < n_K = N` into
/// `perm`; group `k` holds original modes `perm[n_k .. n_{k+1}]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModeSplit {
    perm: Vec<usize>,
    boundaries: Vec<usize>,
}

impl ModeSplit {
    pub fn new(perm: Vec<usize>, boundaries: Vec<usize>) -> Result<Self> {
        let order = perm.len();
        validate_perm(&perm, order)
            .map_err(|_| CpdError::InvalidSplit(format!("{perm:?} is not a permutation")))?;
        if boundaries.len() < 3 {
            return Err(CpdError::InvalidSplit("a split needs at least two groups".into()));
        }
        if boundaries[0] != 0 || *boundaries.last().unwrap() != order {
            return Err(CpdError::InvalidSplit(format!(
                "boundaries {boundaries:?} must start at 0 and end at {order}"
            )));
        }
        if boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CpdError::InvalidSplit(format!(
                "boundaries {boundaries:?} must be strictly ascending"
            )));
        }
        Ok(Self { perm, boundaries })
    }

    /// Builds a split from explicit groups of zero-based original modes.
    pub fn from_groups(groups: &[Vec<usize>]) -> Result<Self> {
        let mut perm = Vec::new();
        let mut boundaries = vec![0];
        for g in groups {
            if g.is_empty() {
                return Err(CpdError::InvalidSplit("empty group".into()));
            }
            perm.extend_from_slice(g);
            boundaries.push(perm.len());
        }
        Self::new(perm, boundaries)
    }

    /// Identity permutation cut at the given sizes.
    pub fn contiguous(group_sizes: &[usize]) -> Result<Self> {
        let order = group_sizes.iter().sum();
        let mut boundaries = vec![0];
        for &s in group_sizes {
            boundaries.push(boundaries.last().unwrap() + s);
        }
        Self::new((0..order).collect(), boundaries)
    }

    /// Parses the textual grammar `"1|2,3|4,5"`: groups separated by `|`,
    /// modes by `,`, one-based original indices, permutation implied by the
    /// listing order.
    pub fn parse(text: &str) -> Result<Self> {
        let mut groups = Vec::new();
        for part in text.split('|') {
            let mut g = Vec::new();
            for tok in part.split(',') {
                let tok = tok.trim();
                let mode: usize = tok
                    .parse()
                    .map_err(|_| CpdError::InvalidSplit(format!("bad mode {tok:?} in {text:?}")))?;
                if mode == 0 {
                    return Err(CpdError::InvalidSplit("modes are one-based".into()));
                }
                g.push(mode - 1);
            }
            groups.push(g);
        }
        Self::from_groups(&groups)
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    pub fn boundaries(&self) -> &[usize] {
        &self.boundaries
    }

    pub fn order(&self) -> usize {
        self.perm.len()
    }

    pub fn num_groups(&self) -> usize {
        self.boundaries.len() - 1
    }

    /// Original modes in group `k`, in merge order (first varies fastest).
    pub fn group(&self, k: usize) -> &[usize] {
        &self.perm[self.boundaries[k]..self.boundaries[k + 1]]
    }

    pub fn groups(&self) -> Vec<Vec<usize>> {
        (0..self.num_groups()).map(|k| self.group(k).to_vec()).collect()
    }

    /// Sizes of the merged modes for a tensor of the given shape.
    pub fn reduced_shape(&self, shape: &[usize]) -> Vec<usize> {
        (0..self.num_groups())
            .map(|k| self.group(k).iter().map(|&p| shape[p]).product())
            .collect()
    }

    pub(crate) fn check_order(&self, order: usize) -> Result<()> {
        if self.order() != order {
            return Err(CpdError::InvalidSplit(format!(
                "split covers {} modes but the tensor has order {order}",
                self.order()
            )));
        }
        Ok(())
    }
}

impl fmt::Display for ModeSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.num_groups() {
            if k > 0 {
                f.write_str("|")?;
            }
            for (i, m) in self.group(k).iter().enumerate() {
                if i > 0 {
                    f.write_str(",")?;
                }
                write!(f, "{}", m + 1)?;
            }
        }
        Ok(())
    }
}

/// Mode reduction: transpose by `split.perm()` and merge each group into a
/// single mode. After the transpose this is a pure reshape.
pub fn reduce_modes<T: Scalar>(t: &DenseTensor<T>, split: &ModeSplit) -> Result<DenseTensor<T>> {
    split.check_order(t.order())?;
    let shape = split.reduced_shape(t.shape());
    let transposed = transpose_modes(t, split.perm())?;
    Ok(DenseTensor {
        shape,
        data: transposed.data,
    })
}

/// Contracts every mode except `k` with the matching vector; `vectors` lists
/// one vector per remaining mode in ascending mode order.
pub fn mode_contract<T: Scalar>(t: &DenseTensor<T>, k: usize, vectors: &[&[T]]) -> Result<Vec<T>> {
    t.check_mode(k)?;
    if vectors.len() + 1 != t.order() {
        return Err(CpdError::ShapeMismatch(format!(
            "expected {} vectors, got {}",
            t.order() - 1,
            vectors.len()
        )));
    }
    let mut it = vectors.iter();
    let mut left_vecs = Vec::new();
    let mut right_vecs = Vec::new();
    for p in 0..t.order() {
        if p == k {
            continue;
        }
        let v = it.next().unwrap();
        if v.len() != t.shape[p] {
            return Err(CpdError::ShapeMismatch(format!(
                "vector for mode {p} has length {}, expected {}",
                v.len(),
                t.shape[p]
            )));
        }
        if p < k {
            left_vecs.push(*v);
        } else {
            right_vecs.push(*v);
        }
    }
    let wl = kron_vectors(&left_vecs);
    let wr = kron_vectors(&right_vecs);
    let (left, size, _) = t.split_sizes(k);
    let mut out = vec![T::zero(); size];
    for (r, &w) in wr.iter().enumerate() {
        if w == T::zero() {
            continue;
        }
        for (i, o) in out.iter_mut().enumerate() {
            let base = left * (i + size * r);
            let s = crate::scalar::dot(&t.data[base..base + left], &wl);
            *o += w * s;
        }
    }
    Ok(out)
}

/// Kronecker product of vectors with the first listed varying fastest.
pub(crate) fn kron_vectors<T: Scalar>(vs: &[&[T]]) -> Vec<T> {
    let mut out = vec![T::one()];
    for v in vs {
        let mut next = Vec::with_capacity(out.len() * v.len());
        for &x in v.iter() {
            next.extend(out.iter().map(|&o| o * x));
        }
        out = next;
    }
    out
}

pub fn frobenius_norm<T: Scalar>(t: &DenseTensor<T>) -> T {
    crate::scalar::norm2(t.data())
}

/// Matricized tensor times Khatri-Rao product for mode `n`:
/// `matricize(t, n) · khatri_rao(factors without n)`, computed with one large
/// matrix product on a reshaped view instead of materializing the unfolding.
pub fn mttkrp<T: Scalar>(t: &DenseTensor<T>, factors: &[Array2<T>], n: usize) -> Result<Array2<T>> {
    t.check_mode(n)?;
    if factors.len() != t.order() {
        return Err(CpdError::ShapeMismatch(format!(
            "{} factors for a tensor of order {}",
            factors.len(),
            t.order()
        )));
    }
    let rank = factors[0].ncols();
    for (p, f) in factors.iter().enumerate() {
        if f.nrows() != t.shape[p] || f.ncols() != rank {
            return Err(CpdError::ShapeMismatch(format!(
                "factor {p} is {:?}, expected ({}, {rank})",
                f.dim(),
                t.shape[p]
            )));
        }
    }
    let (left, size, right) = t.split_sizes(n);
    let left_kr = khatri_rao_with_rank(&factors[..n], rank)?;
    let right_kr = khatri_rao_with_rank(&factors[n + 1..], rank)?;
    let mut out = Array2::zeros((size, rank));
    if right >= left {
        // (left·size × right) · (right × J), then fold the left modes in
        let view = ArrayView2::from_shape((left * size, right).f(), t.data()).expect("sizes agree");
        let w = view.dot(&right_kr);
        for i in 0..size {
            for l in 0..left {
                let wrow = w.row(l + left * i);
                let krow = left_kr.row(l);
                let mut orow = out.row_mut(i);
                for j in 0..rank {
                    orow[j] += wrow[j] * krow[j];
                }
            }
        }
    } else {
        // (size·right × left) · (left × J), then fold the right modes in
        let view = ArrayView2::from_shape((left, size * right).f(), t.data()).expect("sizes agree");
        let w = view.t().dot(&left_kr);
        for r in 0..right {
            let krow = right_kr.row(r);
            for i in 0..size {
                let wrow = w.row(i + size * r);
                let mut orow = out.row_mut(i);
                for j in 0..rank {
                    orow[j] += wrow[j] * krow[j];
                }
            }
        }
    }
    Ok(out)
}
