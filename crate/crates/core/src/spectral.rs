//! Perron analysis of the off-diagonal two-point kernel: spectral radius,
//! the symmetric left eigenvector and its right companion, irreducibility
//! and primitivity flags, and the rank-one limit diagnostics.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::kernels::{PairIndex, PairKernel};
use crate::linalg::Mat;
use crate::scalar::Scalar;

/// Default tolerance on the Collatz–Wielandt bracket of the power iteration.
pub const POWER_TOL: f64 = 1e-13;
/// Default iteration budget of the power iteration.
pub const POWER_MAX_ITER: usize = 500_000;

/// Default bracket tolerance, floored at what the scalar type can resolve.
pub fn default_power_tol<T: Scalar>() -> T {
    T::of(POWER_TOL).max(T::epsilon() * T::of(100.0))
}
/// Dominant classes are those within this relative band of the spectral radius.
const DOMINANT_BAND: f64 = 1e-10;

/// Connectivity flags of the support digraph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StructureFlags {
    pub irreducible: bool,
    pub primitive: bool,
    /// Gcd of cycle lengths through the dominant structure; `0` marks the
    /// degenerate no-cycle case (including the empty matrix).
    pub period: usize,
}

/// Perron eigenvector data for the off-diagonal kernel.
#[derive(Clone, Debug)]
pub struct PerronVectors<T> {
    /// Left eigenvector, symmetric under the pair swap, scaled so that the
    /// pairing with `theta` is one.
    pub kappa: Vec<T>,
    /// Right eigenvector, scaled so that its integral against `mu (x) mu`
    /// over the off-diagonal pairs is one.
    pub theta: Vec<T>,
    /// Extension of `kappa` to all of `S^2`: off-diagonal entries from
    /// `kappa`, diagonal entries the negated off-diagonal row sums.
    pub kappa_star: Vec<T>,
    /// True when the kernel is reducible and the eigenvector required an
    /// arbitrary (equal weight per dominant class) symmetric choice.
    pub flagged: bool,
    /// Sup-norm residual of `kappa P = rho kappa`.
    pub left_residual: T,
    /// Sup-norm residual of `P theta = rho theta`.
    pub right_residual: T,
}

/// Spectral summary of the off-diagonal kernel.
#[derive(Clone, Debug)]
pub struct SpectralData<T> {
    pub rho: T,
    pub irreducible: bool,
    pub primitive: bool,
    pub period: usize,
    /// Eigenvector data; absent when `rho = 0`.
    pub vectors: Option<PerronVectors<T>>,
    pub messages: Vec<String>,
}

impl<T: Scalar> SpectralData<T> {
    /// Full Perron analysis of a two-point kernel.
    pub fn compute(kernel: &PairKernel<T>, mu: &[T]) -> Result<Self> {
        let tol = default_power_tol::<T>();
        let rho = perron_root(&kernel.off_diag, tol, POWER_MAX_ITER)?;
        let flags = structure_flags(&kernel.off_diag);
        let mut messages = Vec::new();
        let vectors = if rho > T::zero() {
            let v = eigenvectors(&kernel.off_diag, &kernel.pairs, mu, tol)?;
            if v.flagged {
                messages.push(
                    "off-diagonal kernel is reducible: eigenvector choice is a flagged \
                     equal-weight symmetric selection over the dominant classes"
                        .into(),
                );
            }
            Some(v)
        } else {
            None
        };
        Ok(SpectralData {
            rho,
            irreducible: flags.irreducible,
            primitive: flags.primitive,
            period: flags.period,
            vectors,
            messages,
        })
    }

    pub fn two_rho(&self) -> T {
        T::of(2.0) * self.rho
    }

    pub fn to_json(&self, pairs: &PairIndex, states: &[String]) -> Value {
        let keyed = |v: &[T]| -> Value {
            let mut map = serde_json::Map::new();
            for (off, &w) in v.iter().enumerate() {
                map.insert(pairs.off_label(off, states), json!(w.as_f64()));
            }
            Value::Object(map)
        };
        let keyed_full = |v: &[T]| -> Value {
            let mut map = serde_json::Map::new();
            for (full, &w) in v.iter().enumerate() {
                map.insert(pairs.full_label(full, states), json!(w.as_f64()));
            }
            Value::Object(map)
        };
        json!({
            "rho": self.rho.as_f64(),
            "two_rho": self.two_rho().as_f64(),
            "irreducible": self.irreducible,
            "primitive": self.primitive,
            "period": self.period,
            "kappa": self.vectors.as_ref().map(|v| keyed(&v.kappa)),
            "theta": self.vectors.as_ref().map(|v| keyed(&v.theta)),
            "kappa_star": self.vectors.as_ref().map(|v| keyed_full(&v.kappa_star)),
            "flagged_eigenvector_choice": self.vectors.as_ref().map(|v| v.flagged),
            "messages": self.messages,
        })
    }
}

/// Adjacency lists of the support digraph of a nonnegative matrix.
fn support_adjacency<T: Scalar>(m: &Mat<T>) -> Vec<Vec<usize>> {
    (0..m.rows())
        .map(|i| {
            m.row(i)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v > T::zero())
                .map(|(j, _)| j)
                .collect()
        })
        .collect()
}

/// Strongly connected components by Kosaraju's algorithm with explicit
/// stacks; components are returned in no particular order.
fn strongly_connected_components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let n = adj.len();
    let mut rev = vec![Vec::new(); n];
    for (u, outs) in adj.iter().enumerate() {
        for &v in outs {
            rev[v].push(u);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    for start in 0..n {
        if seen[start] {
            continue;
        }
        let mut stack = vec![(start, 0usize)];
        seen[start] = true;
        while let Some(&mut (u, ref mut next)) = stack.last_mut() {
            if *next < adj[u].len() {
                let v = adj[u][*next];
                *next += 1;
                if !seen[v] {
                    seen[v] = true;
                    stack.push((v, 0));
                }
            } else {
                order.push(u);
                stack.pop();
            }
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut comps = Vec::new();
    for &start in order.iter().rev() {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = comps.len();
        let mut members = vec![start];
        comp[start] = id;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &v in &rev[u] {
                if comp[v] == usize::MAX {
                    comp[v] = id;
                    members.push(v);
                    stack.push(v);
                }
            }
        }
        comps.push(members);
    }
    comps
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Gcd of cycle lengths inside one strongly connected component; `0` when the
/// component carries no edge.
fn component_period<T: Scalar>(m: &Mat<T>, comp: &[usize]) -> usize {
    let inside = |v: usize| comp.contains(&v);
    let has_edge = comp.iter().any(|&u| {
        m.row(u)
            .iter()
            .enumerate()
            .any(|(v, &w)| w > T::zero() && inside(v))
    });
    if !has_edge {
        return 0;
    }
    // BFS levels from an arbitrary root; the period is the gcd of
    // level(u) + 1 - level(v) over intra-component edges u -> v.
    let root = comp[0];
    let mut level = vec![usize::MAX; m.rows()];
    level[root] = 0;
    let mut queue = std::collections::VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for (v, &w) in m.row(u).iter().enumerate() {
            if w > T::zero() && inside(v) && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut period = 0usize;
    for &u in comp {
        for (v, &w) in m.row(u).iter().enumerate() {
            if w > T::zero() && inside(v) {
                let signed = level[u] as i64 + 1 - level[v] as i64;
                period = gcd(period, signed.unsigned_abs() as usize);
            }
        }
    }
    period
}

/// Connectivity flags of the support digraph. A single node without a self
/// loop does not count as irreducible; the empty matrix is degenerate.
pub fn structure_flags<T: Scalar>(m: &Mat<T>) -> StructureFlags {
    let n = m.rows();
    if n == 0 {
        return StructureFlags {
            irreducible: false,
            primitive: false,
            period: 0,
        };
    }
    let adj = support_adjacency(m);
    let comps = strongly_connected_components(&adj);
    if comps.len() == 1 {
        // A single class covering everything; a lone node still needs a self
        // loop (period != 0) to count as irreducible.
        let period = component_period(m, &comps[0]);
        let irreducible = period != 0;
        StructureFlags {
            irreducible,
            primitive: irreducible && period == 1,
            period,
        }
    } else {
        // Reducible: report the gcd of the dominant-class periods for
        // information, with both flags false.
        let mut period = 0usize;
        for comp in &comps {
            let p = component_period(m, comp);
            if p != 0 {
                period = gcd(period, p);
            }
        }
        StructureFlags {
            irreducible: false,
            primitive: false,
            period,
        }
    }
}

/// Power iteration on `M + I` restricted to one strongly connected component;
/// returns the component spectral radius with a Collatz–Wielandt certificate.
fn component_root<T: Scalar>(
    m: &Mat<T>,
    comp: &[usize],
    tol: T,
    max_iter: usize,
) -> Result<(T, Vec<T>, Vec<T>)> {
    let k = comp.len();
    let mut sub = Mat::zeros(k, k);
    for (i, &u) in comp.iter().enumerate() {
        for (j, &v) in comp.iter().enumerate() {
            sub[(i, j)] = m[(u, v)];
        }
    }
    // Shifted matrix M + I: the spectral radius moves by exactly one and the
    // positive diagonal makes the restricted power iteration primitive.
    let mut shifted = sub.clone();
    for i in 0..k {
        shifted[(i, i)] = shifted[(i, i)] + T::one();
    }
    let normalize = |v: &mut Vec<T>| {
        let total: T = v.iter().copied().sum();
        for x in v.iter_mut() {
            *x = *x / total;
        }
    };
    let mut right = vec![T::one() / T::of(k as f64); k];
    let mut left = right.clone();
    let mut bracket = T::infinity();
    for _ in 0..max_iter {
        let right_next = shifted.mul_vec(&right);
        let left_next = shifted.vec_mul(&left);
        let (mut lo, mut hi) = (T::infinity(), T::zero());
        for i in 0..k {
            let ratio = right_next[i] / right[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        for i in 0..k {
            let ratio = left_next[i] / left[i];
            lo = lo.min(ratio);
            hi = hi.max(ratio);
        }
        right = right_next;
        left = left_next;
        normalize(&mut right);
        normalize(&mut left);
        bracket = hi - lo;
        if bracket <= tol * hi.max(T::one()) {
            let value = (lo + hi) * T::of(0.5) - T::one();
            return Ok((value.max(T::zero()), left, right));
        }
    }
    Err(Error::NoConvergence {
        what: "power iteration",
        iterations: max_iter,
        residual: bracket.as_f64(),
    })
}

/// Spectral radius of a nonnegative square matrix: the maximum of the
/// per-component Perron roots, each found by power iteration on the shifted
/// component. The empty matrix has radius zero by convention.
pub fn perron_root<T: Scalar>(m: &Mat<T>, tol: T, max_iter: usize) -> Result<T> {
    let n = m.rows();
    if n == 0 {
        return Ok(T::zero());
    }
    let adj = support_adjacency(m);
    let comps = strongly_connected_components(&adj);
    let mut rho = T::zero();
    for comp in &comps {
        if comp.len() == 1 && m[(comp[0], comp[0])] == T::zero() {
            continue;
        }
        let (root, _, _) = component_root(m, comp, tol, max_iter)?;
        rho = rho.max(root);
    }
    Ok(rho)
}

/// Perron eigenvectors of the off-diagonal kernel, symmetrized and normalized.
///
/// `kappa` is the left eigenvector, symmetrized under the pair swap (exact
/// for symmetric recursions, where the kernel commutes with the swap);
/// `theta` is the right eigenvector scaled so that its integral against
/// `mu (x) mu` is one, after which `kappa` is scaled so the pairing
/// `sum theta kappa` is one. In the reducible case the choice is the equal
/// weight combination of per-dominant-class eigenvectors, propagated through
/// the transient states where that is solvable, and flagged.
pub fn eigenvectors<T: Scalar>(
    pminus: &Mat<T>,
    pairs: &PairIndex,
    mu: &[T],
    tol: T,
) -> Result<PerronVectors<T>> {
    let n = pminus.rows();
    assert_eq!(n, pairs.n_off(), "kernel does not match the pair index");
    let rho = perron_root(pminus, tol, POWER_MAX_ITER)?;
    if rho <= T::zero() {
        return Err(Error::NoPerronVector);
    }
    let adj = support_adjacency(pminus);
    let comps = strongly_connected_components(&adj);
    let single_class = comps.len() == 1;

    let (mut kappa, mut theta, flagged) = if single_class {
        let (_, left, right) = component_root(pminus, &comps[0], tol, POWER_MAX_ITER)?;
        // component_root returns vectors in component order; scatter back.
        let mut left_full = vec![T::zero(); n];
        let mut right_full = vec![T::zero(); n];
        for (i, &u) in comps[0].iter().enumerate() {
            left_full[u] = left[i];
            right_full[u] = right[i];
        }
        (left_full, right_full, false)
    } else {
        let mut roots = Vec::with_capacity(comps.len());
        for comp in &comps {
            if comp.len() == 1 && pminus[(comp[0], comp[0])] == T::zero() {
                roots.push(T::zero());
                continue;
            }
            let (root, _, _) = component_root(pminus, comp, tol, POWER_MAX_ITER)?;
            roots.push(root);
        }
        let band = T::of(DOMINANT_BAND) * rho.max(T::one());
        let dominant: Vec<usize> = (0..comps.len())
            .filter(|&c| roots[c] >= rho - band)
            .collect();
        let mut kappa = vec![T::zero(); n];
        let mut theta = vec![T::zero(); n];
        for &c in &dominant {
            let comp = &comps[c];
            let (_, left, right) = component_root(pminus, comp, tol, POWER_MAX_ITER)?;
            let mut left_full = vec![T::zero(); n];
            let mut right_full = vec![T::zero(); n];
            for (i, &u) in comp.iter().enumerate() {
                left_full[u] = left[i];
                right_full[u] = right[i];
            }
            propagate_left(pminus, rho, comp, &mut left_full);
            propagate_right(pminus, rho, comp, &mut right_full);
            let lsum: T = left_full.iter().copied().sum();
            let rsum: T = right_full.iter().copied().sum();
            for i in 0..n {
                kappa[i] = kappa[i] + left_full[i] / lsum;
                theta[i] = theta[i] + right_full[i] / rsum;
            }
        }
        (kappa, theta, true)
    };

    // Symmetrize the left eigenvector under the swap.
    let symmetrized: Vec<T> = (0..n)
        .map(|i| (kappa[i] + kappa[pairs.swap_off(i)]) * T::of(0.5))
        .collect();
    kappa = symmetrized;

    // Normalizations: integral of theta against mu (x) mu equals one, then
    // the pairing of theta with kappa equals one.
    let mut theta_mass = T::zero();
    for (off, &t) in theta.iter().enumerate() {
        let (x, y) = pairs.decode(pairs.full_of_off(off));
        theta_mass = theta_mass + t * mu[x] * mu[y];
    }
    if theta_mass > T::zero() {
        for t in theta.iter_mut() {
            *t = *t / theta_mass;
        }
    }
    let pairing = crate::linalg::dot(&theta, &kappa);
    if pairing > T::zero() {
        for k in kappa.iter_mut() {
            *k = *k / pairing;
        }
    }

    let left_image = pminus.vec_mul(&kappa);
    let left_residual = (0..n).fold(T::zero(), |acc, i| {
        acc.max((left_image[i] - rho * kappa[i]).abs())
    });
    let right_image = pminus.mul_vec(&theta);
    let right_residual = (0..n).fold(T::zero(), |acc, i| {
        acc.max((right_image[i] - rho * theta[i]).abs())
    });

    let s = pairs.n_states();
    let mut kappa_star = vec![T::zero(); pairs.n_full()];
    for (off, &k) in kappa.iter().enumerate() {
        kappa_star[pairs.full_of_off(off)] = k;
    }
    for x in 0..s {
        let mut row_sum = T::zero();
        for y in 0..s {
            if y != x {
                row_sum = row_sum + kappa_star[pairs.full(x, y)];
            }
        }
        kappa_star[pairs.full(x, x)] = -row_sum;
    }

    Ok(PerronVectors {
        kappa,
        theta,
        kappa_star,
        flagged,
        left_residual,
        right_residual,
    })
}

/// Extend a left eigenvector supported on `comp` through the states reachable
/// from it: solve `x (rho I - P_DD) = l P_CD` on the downstream set `D`.
/// Skipped silently when the downstream system is singular (another dominant
/// class downstream), which leaves the flagged residual visible.
fn propagate_left<T: Scalar>(pminus: &Mat<T>, rho: T, comp: &[usize], vec: &mut [T]) {
    let n = pminus.rows();
    let mut downstream = Vec::new();
    let mut seen: Vec<bool> = (0..n).map(|i| comp.contains(&i)).collect();
    let mut stack: Vec<usize> = comp.to_vec();
    while let Some(u) = stack.pop() {
        for (v, &w) in pminus.row(u).iter().enumerate() {
            if w > T::zero() && !seen[v] {
                seen[v] = true;
                downstream.push(v);
                stack.push(v);
            }
        }
    }
    if downstream.is_empty() {
        return;
    }
    let d = downstream.len();
    // (rho I - P_DD)^T x = (l P_CD)^T, solved as a plain linear system.
    let mut a = Mat::zeros(d, d);
    for (i, &u) in downstream.iter().enumerate() {
        for (j, &v) in downstream.iter().enumerate() {
            let val = if i == j { rho } else { T::zero() };
            a[(j, i)] = val - pminus[(u, v)];
        }
    }
    let mut b = vec![T::zero(); d];
    for &u in comp {
        for (j, &v) in downstream.iter().enumerate() {
            b[j] = b[j] + vec[u] * pminus[(u, v)];
        }
    }
    if let Some(x) = a.solve(&b, T::of(1e-12)) {
        for (j, &v) in downstream.iter().enumerate() {
            vec[v] = x[j];
        }
    }
}

/// Extend a right eigenvector supported on `comp` through the states that can
/// reach it: solve `(rho I - P_UU) x = P_UC r` on the upstream set `U`.
fn propagate_right<T: Scalar>(pminus: &Mat<T>, rho: T, comp: &[usize], vec: &mut [T]) {
    let n = pminus.rows();
    let mut upstream = Vec::new();
    let mut seen: Vec<bool> = (0..n).map(|i| comp.contains(&i)).collect();
    // Reverse reachability.
    let mut stack: Vec<usize> = comp.to_vec();
    while let Some(u) = stack.pop() {
        for w in 0..n {
            if pminus[(w, u)] > T::zero() && !seen[w] {
                seen[w] = true;
                upstream.push(w);
                stack.push(w);
            }
        }
    }
    if upstream.is_empty() {
        return;
    }
    let d = upstream.len();
    let mut a = Mat::zeros(d, d);
    for (i, &u) in upstream.iter().enumerate() {
        for (j, &v) in upstream.iter().enumerate() {
            let val = if i == j { rho } else { T::zero() };
            a[(i, j)] = val - pminus[(u, v)];
        }
    }
    let mut b = vec![T::zero(); d];
    for (i, &u) in upstream.iter().enumerate() {
        for v in 0..n {
            if !upstream.contains(&v) {
                b[i] = b[i] + pminus[(u, v)] * vec[v];
            }
        }
    }
    if let Some(x) = a.solve(&b, T::of(1e-12)) {
        for (i, &u) in upstream.iter().enumerate() {
            vec[u] = x[i];
        }
    }
}

/// Sup-norm distance of the rescaled `n`-step kernel from its rank-one limit,
/// `rho^-n P^n (x, y) - theta(x) kappa(y)`. Requires a primitive kernel.
pub fn rank_one_limit_residual<T: Scalar>(
    pminus: &Mat<T>,
    spectral: &SpectralData<T>,
    n: usize,
) -> Result<T> {
    if !spectral.primitive {
        return Err(Error::NotPrimitive);
    }
    let vectors = spectral.vectors.as_ref().ok_or(Error::NoPerronVector)?;
    let dim = pminus.rows();
    let mut power = Mat::identity(dim);
    for _ in 0..n {
        power = power.matmul(pminus);
    }
    let scale = spectral.rho.powi(n as i32);
    let mut residual = T::zero();
    for i in 0..dim {
        for j in 0..dim {
            let limit = vectors.theta[i] * vectors.kappa[j];
            residual = residual.max((power[(i, j)] / scale - limit).abs());
        }
    }
    Ok(residual)
}

/// Running maximum of the doubled `n`-step kernel norms
/// `max_{n <= n_max} ||2^n P^n||_inf`; supporting evidence in the critical
/// case, where the sequence must stay bounded.
pub fn critical_boundedness_probe<T: Scalar>(pminus: &Mat<T>, n_max: usize) -> T {
    let dim = pminus.rows();
    if dim == 0 {
        return T::zero();
    }
    let mut power = Mat::identity(dim);
    let mut best = power.inf_norm();
    let two = T::of(2.0);
    let mut factor = T::one();
    for _ in 1..=n_max {
        power = power.matmul(pminus);
        factor = factor * two;
        best = best.max(power.inf_norm() * factor);
    }
    best
}
