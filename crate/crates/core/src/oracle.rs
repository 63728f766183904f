//! Brute-force exact computations on small finite trees.
//!
//! Everything here enumerates complete tree configurations (leaf states plus
//! innovation symbols), so it is exponentially expensive and capped hard; its
//! only purpose is to provide ground truth for the analytic identities used
//! elsewhere in the crate. No sampling, ever.
//!
//! Index conventions: tree vertices are heap-ordered (root `0`, daughters of
//! `v` at `2v+1` and `2v+2`), which is breadth-first and, within a level,
//! lexicographic in the vertex path. Configuration indices are mixed-radix
//! with the leaf digits most significant (leaf order as above), innovation
//! digits following.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::RtpModel;
use crate::scalar::Scalar;

/// Hard cap on the number of enumerated assignments.
pub const ENUMERATION_CAP: u128 = 100_000_000;

/// One complete configuration of the depth-`n` tree.
#[derive(Clone, Debug)]
pub struct TreeAssignment<T> {
    pub level: usize,
    /// States of all vertices of the first `n + 1` levels, heap-ordered;
    /// internal entries are derived from the leaves bottom-up.
    pub states: Vec<usize>,
    /// Innovation symbols of the internal vertices, heap-ordered.
    pub innovations: Vec<usize>,
    /// Product of the leaf masses and the innovation masses.
    pub weight: T,
}

impl<T> TreeAssignment<T> {
    pub fn root_state(&self) -> usize {
        self.states[0]
    }
}

pub fn n_leaves(level: usize) -> usize {
    1 << level
}

pub fn n_internal(level: usize) -> usize {
    (1 << level) - 1
}

/// Number of assignments enumerated at depth `level`.
pub fn enumeration_count<T: Scalar>(model: &RtpModel<T>, level: usize) -> u128 {
    let s = model.n_states() as u128;
    let e = model.n_innovations() as u128;
    let mut count: u128 = 1;
    for _ in 0..n_leaves(level) {
        count = count.saturating_mul(s);
    }
    for _ in 0..n_internal(level) {
        count = count.saturating_mul(e);
    }
    count
}

fn check_budget<T: Scalar>(model: &RtpModel<T>, level: usize) -> Result<usize> {
    let required = enumeration_count(model, level);
    if required > ENUMERATION_CAP {
        return Err(Error::ResourceCap {
            required,
            cap: ENUMERATION_CAP,
        });
    }
    Ok(required as usize)
}

/// Mixed-radix layout of the configuration space at one tree depth.
#[derive(Clone, Debug)]
pub(crate) struct ConfigSpace {
    pub s: usize,
    pub e: usize,
    pub leaves: usize,
    pub internal: usize,
    pub total: usize,
    leaf_stride: Vec<usize>,
    innov_stride: Vec<usize>,
}

impl ConfigSpace {
    pub fn new<T: Scalar>(model: &RtpModel<T>, level: usize) -> Result<Self> {
        let total = check_budget(model, level)?;
        let s = model.n_states();
        let e = model.n_innovations();
        let leaves = n_leaves(level);
        let internal = n_internal(level);
        let mut innov_stride = vec![0usize; internal];
        let mut stride = 1usize;
        for v in (0..internal).rev() {
            innov_stride[v] = stride;
            stride *= e;
        }
        let mut leaf_stride = vec![0usize; leaves];
        for u in (0..leaves).rev() {
            leaf_stride[u] = stride;
            stride *= s;
        }
        debug_assert_eq!(stride, total);
        Ok(ConfigSpace {
            s,
            e,
            leaves,
            internal,
            total,
            leaf_stride,
            innov_stride,
        })
    }

    #[inline]
    pub fn leaf_digit(&self, idx: usize, u: usize) -> usize {
        (idx / self.leaf_stride[u]) % self.s
    }

    #[inline]
    pub fn innov_digit(&self, idx: usize, v: usize) -> usize {
        (idx / self.innov_stride[v]) % self.e
    }

    pub fn leaf_stride(&self, u: usize) -> usize {
        self.leaf_stride[u]
    }

    /// Derive all vertex states bottom-up for one configuration.
    pub fn fill_states<T: Scalar>(&self, model: &RtpModel<T>, idx: usize, states: &mut Vec<usize>) {
        states.clear();
        states.resize(2 * self.leaves - 1, 0);
        for u in 0..self.leaves {
            states[self.internal + u] = self.leaf_digit(idx, u);
        }
        for v in (0..self.internal).rev() {
            states[v] = model.phi.get(
                states[2 * v + 1],
                states[2 * v + 2],
                self.innov_digit(idx, v),
            );
        }
    }

    /// Configuration weight under the product measure.
    pub fn weight<T: Scalar>(&self, model: &RtpModel<T>, idx: usize) -> T {
        let mut w = T::one();
        for u in 0..self.leaves {
            w = w * model.mu[self.leaf_digit(idx, u)];
        }
        for v in 0..self.internal {
            w = w * model.nu[self.innov_digit(idx, v)];
        }
        w
    }
}

/// Exhaustive stream of tree assignments with exact weights.
pub fn enumerate<T: Scalar>(
    model: &RtpModel<T>,
    level: usize,
) -> Result<impl Iterator<Item = TreeAssignment<T>> + '_> {
    let space = ConfigSpace::new(model, level)?;
    let mut scratch = Vec::new();
    Ok((0..space.total).map(move |idx| {
        space.fill_states(model, idx, &mut scratch);
        TreeAssignment {
            level,
            states: scratch.clone(),
            innovations: (0..space.internal)
                .map(|v| space.innov_digit(idx, v))
                .collect(),
            weight: space.weight(model, idx),
        }
    }))
}

/// Precomputed per-configuration weights and root states.
struct Enumerated<T> {
    space: ConfigSpace,
    weights: Vec<T>,
    root: Vec<usize>,
}

impl<T: Scalar> Enumerated<T> {
    fn new(model: &RtpModel<T>, level: usize) -> Result<Self> {
        let space = ConfigSpace::new(model, level)?;
        let mut weights = Vec::with_capacity(space.total);
        let mut root = Vec::with_capacity(space.total);
        let mut states = Vec::new();
        for idx in 0..space.total {
            space.fill_states(model, idx, &mut states);
            root.push(states[0]);
            weights.push(space.weight(model, idx));
        }
        Ok(Enumerated {
            space,
            weights,
            root,
        })
    }

    fn observable(&self, f: &[T]) -> Vec<T> {
        self.root.iter().map(|&r| f[r]).collect()
    }

    fn inner(&self, a: &[T], b: &[T]) -> T {
        let mut acc = T::zero();
        for i in 0..self.space.total {
            acc = acc + self.weights[i] * a[i] * b[i];
        }
        acc
    }

    /// Replace the values along one leaf axis by their `mu`-average.
    fn mean_at_leaf(&self, mu: &[T], u: usize, f: &mut [T]) {
        let stride = self.space.leaf_stride(u);
        let s = self.space.s;
        for idx in 0..self.space.total {
            if !(idx / stride).is_multiple_of(s) {
                continue;
            }
            let mut mean = T::zero();
            for x in 0..s {
                mean = mean + mu[x] * f[idx + x * stride];
            }
            for x in 0..s {
                f[idx + x * stride] = mean;
            }
        }
    }

    /// Apply an `s x s` matrix along one leaf axis.
    fn matrix_at_leaf(&self, m: &Mat<T>, u: usize, f: &[T]) -> Vec<T> {
        let stride = self.space.leaf_stride(u);
        let s = self.space.s;
        let mut out = vec![T::zero(); f.len()];
        for idx in 0..self.space.total {
            if !(idx / stride).is_multiple_of(s) {
                continue;
            }
            for x in 0..s {
                let mut acc = T::zero();
                for xp in 0..s {
                    acc = acc + m[(x, xp)] * f[idx + xp * stride];
                }
                out[idx + x * stride] = acc;
            }
        }
        out
    }
}

/// Squared norms of the projections of a root observable onto the subspaces
/// indexed by subsets of the level-`n` leaves (bit `u` of the mask selects
/// the mean-removing projection at leaf `u`). The values sum to the squared
/// norm of the observable.
pub fn exact_subset_norms<T: Scalar>(model: &RtpModel<T>, f: &[T], level: usize) -> Result<Vec<T>> {
    let en = Enumerated::new(model, level)?;
    let leaves = en.space.leaves;
    if leaves > 24 {
        return Err(Error::ResourceCap {
            required: 1u128 << leaves,
            cap: 1 << 24,
        });
    }
    let base = en.observable(f);
    let mut out = Vec::with_capacity(1 << leaves);
    for mask in 0..(1usize << leaves) {
        let mut g = base.clone();
        for u in 0..leaves {
            if mask & (1 << u) != 0 {
                // Mean-removing projection at leaf u.
                let mut mean = g.clone();
                en.mean_at_leaf(&model.mu, u, &mut mean);
                for (gv, mv) in g.iter_mut().zip(&mean) {
                    *gv = *gv - *mv;
                }
            } else {
                en.mean_at_leaf(&model.mu, u, &mut g);
            }
        }
        out.push(en.inner(&g, &g));
    }
    Ok(out)
}

/// Exact level-`n` spectral measure of a root observable: mass at `k` is the
/// total subset norm over subsets of size `k`.
pub fn exact_spectral_measure<T: Scalar>(
    model: &RtpModel<T>,
    f: &[T],
    level: usize,
) -> Result<Vec<T>> {
    let norms = exact_subset_norms(model, f, level)?;
    let leaves = n_leaves(level);
    let mut masses = vec![T::zero(); leaves + 1];
    for (mask, &v) in norms.iter().enumerate() {
        masses[mask.count_ones() as usize] = masses[mask.count_ones() as usize] + v;
    }
    Ok(masses)
}

/// Both sides of the projection inequality at depth `n`: the squared distance
/// of a root observable from the innovation-measurable subspace, and the
/// number-operator form that bounds it.
pub fn exact_innovation_residual<T: Scalar>(
    model: &RtpModel<T>,
    f: &[T],
    level: usize,
) -> Result<(T, T)> {
    let en = Enumerated::new(model, level)?;
    let base = en.observable(f);

    // Conditional mean given the innovations: average over every leaf.
    let mut conditional = base.clone();
    for u in 0..en.space.leaves {
        en.mean_at_leaf(&model.mu, u, &mut conditional);
    }
    let mut residual = T::zero();
    for i in 0..en.space.total {
        let d = base[i] - conditional[i];
        residual = residual + en.weights[i] * d * d;
    }

    let mut number_form = T::zero();
    for u in 0..en.space.leaves {
        let mut projected = base.clone();
        en.mean_at_leaf(&model.mu, u, &mut projected);
        for (pv, bv) in projected.iter_mut().zip(&base) {
            *pv = *bv - *pv;
        }
        number_form = number_form + en.inner(&projected, &projected);
    }
    Ok((residual, number_form))
}

/// Exact probability that two roots differ when the innovations are shared
/// and the two leaf configurations are drawn independently.
pub fn exact_coupling_disagreement<T: Scalar>(model: &RtpModel<T>, level: usize) -> Result<T> {
    // The doubled leaf space must fit the budget.
    let s = model.n_states() as u128;
    let mut doubled = enumeration_count(model, level);
    for _ in 0..n_leaves(level) {
        doubled = doubled.saturating_mul(s);
    }
    if doubled > ENUMERATION_CAP {
        return Err(Error::ResourceCap {
            required: doubled,
            cap: ENUMERATION_CAP,
        });
    }
    let en = Enumerated::new(model, level)?;
    let space = &en.space;
    // For each innovation assignment, the root law over independent leaf
    // draws; the disagreement is 1 - sum_y h(y)^2, averaged over innovations.
    let innov_total: usize = space.e.pow(space.internal as u32);
    let mut acc = T::zero();
    let mut states = Vec::new();
    for innov in 0..innov_total {
        let mut h = vec![T::zero(); space.s];
        let mut innov_weight = T::one();
        // Leaf digits are most significant, so configurations sharing this
        // innovation block are idx = leaf_part * innov_total + innov.
        for leaf_part in 0..(space.total / innov_total) {
            let idx = leaf_part * innov_total + innov;
            space.fill_states(model, idx, &mut states);
            let mut leaf_weight = T::one();
            for u in 0..space.leaves {
                leaf_weight = leaf_weight * model.mu[space.leaf_digit(idx, u)];
            }
            h[states[0]] = h[states[0]] + leaf_weight;
        }
        for v in 0..space.internal {
            innov_weight = innov_weight * model.nu[(innov / space.innov_stride[v]) % space.e];
        }
        let mut same = T::zero();
        for &hy in &h {
            same = same + hy * hy;
        }
        acc = acc + innov_weight * (T::one() - same);
    }
    Ok(acc)
}

/// Exact squared norm of the rescaled level-`n` generator sum applied to a
/// root observable: `|| speed * sum_u Q^(u) f ||^2` under the tree measure.
pub fn exact_generator_square_form<T: Scalar>(
    model: &RtpModel<T>,
    q: &Mat<T>,
    speed: T,
    f: &[T],
    level: usize,
) -> Result<T> {
    let en = Enumerated::new(model, level)?;
    let base = en.observable(f);
    let mut total = vec![T::zero(); base.len()];
    for u in 0..en.space.leaves {
        let applied = en.matrix_at_leaf(q, u, &base);
        for (t, a) in total.iter_mut().zip(&applied) {
            *t = *t + speed * *a;
        }
    }
    Ok(en.inner(&total, &total))
}

/// Spectral radius of a nonnegative matrix by repeated squaring with
/// per-step normalization (a stabilized Gelfand limit). Independent of the
/// power-iteration route and accurate to roughly machine precision.
pub fn spectral_radius_by_squaring<T: Scalar>(m: &Mat<T>) -> T {
    let n = m.rows();
    if n == 0 {
        return T::zero();
    }
    let mut current = m.clone();
    let mut log_sum = 0.0f64;
    let mut weight = 1.0f64;
    const SQUARINGS: usize = 60;
    for _ in 0..SQUARINGS {
        let norm = current.inf_norm();
        if norm == T::zero() {
            return T::zero();
        }
        log_sum += weight * norm.as_f64().ln();
        weight *= 0.5;
        let scaled = current.scale(T::one() / norm);
        current = scaled.matmul(&scaled);
    }
    let final_norm = current.inf_norm();
    if final_norm > T::zero() {
        log_sum += weight * final_norm.as_f64().ln();
    }
    T::of(log_sum.exp())
}
