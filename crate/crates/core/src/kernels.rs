//! One-point and two-point transition kernels, the bilinear two-point map on
//! pair measures, exact bivariate iteration, and the number-operator form.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::RtpModel;
use crate::scalar::Scalar;

/// Marginal drift beyond this value aborts the bivariate iteration.
const MARGINAL_DRIFT_LIMIT: f64 = 1e-8;

/// Ordered enumeration of `S^2` with the diagonal/off-diagonal split and the
/// swap involution `(x, x') -> (x', x)`.
///
/// Full indices run row-major over `(x, x')`; off-diagonal indices enumerate
/// the pairs with `x != x'` in the same order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairIndex {
    n_states: usize,
    off_of_full: Vec<Option<usize>>,
    full_of_off: Vec<usize>,
}

impl PairIndex {
    pub fn new(n_states: usize) -> Self {
        let mut off_of_full = vec![None; n_states * n_states];
        let mut full_of_off = Vec::with_capacity(n_states * n_states.saturating_sub(1));
        for x in 0..n_states {
            for y in 0..n_states {
                if x != y {
                    off_of_full[x * n_states + y] = Some(full_of_off.len());
                    full_of_off.push(x * n_states + y);
                }
            }
        }
        PairIndex {
            n_states,
            off_of_full,
            full_of_off,
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_full(&self) -> usize {
        self.n_states * self.n_states
    }

    pub fn n_off(&self) -> usize {
        self.full_of_off.len()
    }

    #[inline]
    pub fn full(&self, x: usize, y: usize) -> usize {
        x * self.n_states + y
    }

    #[inline]
    pub fn decode(&self, full: usize) -> (usize, usize) {
        (full / self.n_states, full % self.n_states)
    }

    #[inline]
    pub fn is_diagonal(&self, full: usize) -> bool {
        let (x, y) = self.decode(full);
        x == y
    }

    #[inline]
    pub fn off_index(&self, full: usize) -> Option<usize> {
        self.off_of_full[full]
    }

    #[inline]
    pub fn full_of_off(&self, off: usize) -> usize {
        self.full_of_off[off]
    }

    /// Swap involution on full indices.
    #[inline]
    pub fn swap_full(&self, full: usize) -> usize {
        let (x, y) = self.decode(full);
        self.full(y, x)
    }

    /// Swap involution on off-diagonal indices.
    #[inline]
    pub fn swap_off(&self, off: usize) -> usize {
        self.off_of_full[self.swap_full(self.full_of_off[off])]
            .expect("swap keeps off-diagonal pairs off-diagonal")
    }

    /// Label of an off-diagonal pair, e.g. `(-1,+1)`.
    pub fn off_label(&self, off: usize, states: &[String]) -> String {
        let (x, y) = self.decode(self.full_of_off[off]);
        format!("({},{})", states[x], states[y])
    }

    /// Label of a full pair.
    pub fn full_label(&self, full: usize, states: &[String]) -> String {
        let (x, y) = self.decode(full);
        format!("({},{})", states[x], states[y])
    }
}

/// Two-point transition kernel: the full row-stochastic matrix on `S^2`
/// (diagonal rows absorb exactly) plus its off-diagonal restriction.
#[derive(Clone, Debug)]
pub struct PairKernel<T> {
    pub pairs: PairIndex,
    /// Row-stochastic matrix on `S^2`.
    pub full: Mat<T>,
    /// Restriction to the off-diagonal pairs (substochastic).
    pub off_diag: Mat<T>,
}

/// Weight per `S^2` index; probability instances are nonnegative with total
/// mass one, signed instances are allowed for bilinear calculus.
#[derive(Clone, Debug, PartialEq)]
pub struct PairMeasure<T> {
    n_states: usize,
    pub weights: Vec<T>,
}

impl<T: Scalar> PairMeasure<T> {
    pub fn zeros(n_states: usize) -> Self {
        PairMeasure {
            n_states,
            weights: vec![T::zero(); n_states * n_states],
        }
    }

    pub fn from_weights(n_states: usize, weights: Vec<T>) -> Self {
        assert_eq!(weights.len(), n_states * n_states);
        PairMeasure { n_states, weights }
    }

    /// Product coupling `a (x) b`.
    pub fn product(a: &[T], b: &[T]) -> Self {
        let s = a.len();
        assert_eq!(b.len(), s);
        let mut weights = Vec::with_capacity(s * s);
        for &wa in a {
            for &wb in b {
                weights.push(wa * wb);
            }
        }
        PairMeasure {
            n_states: s,
            weights,
        }
    }

    /// Coupling carried by the diagonal with both marginals `mu`.
    pub fn diagonal(mu: &[T]) -> Self {
        let s = mu.len();
        let mut m = PairMeasure::zeros(s);
        for (x, &w) in mu.iter().enumerate() {
            m.weights[x * s + x] = w;
        }
        m
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.weights[x * self.n_states + y]
    }

    pub fn total_mass(&self) -> T {
        self.weights.iter().copied().sum()
    }

    /// Sum of the off-diagonal weights.
    pub fn off_diagonal_mass(&self) -> T {
        let s = self.n_states;
        let mut acc = T::zero();
        for x in 0..s {
            for y in 0..s {
                if x != y {
                    acc = acc + self.weights[x * s + y];
                }
            }
        }
        acc
    }

    pub fn is_signed(&self) -> bool {
        self.weights.iter().any(|&w| w < T::zero())
    }

    /// Both marginals, first and second coordinate.
    pub fn marginals(&self) -> (Vec<T>, Vec<T>) {
        let s = self.n_states;
        let mut first = vec![T::zero(); s];
        let mut second = vec![T::zero(); s];
        for x in 0..s {
            for y in 0..s {
                let w = self.weights[x * s + y];
                first[x] = first[x] + w;
                second[y] = second[y] + w;
            }
        }
        (first, second)
    }

    /// Integral of a function on `S^2` given as full-indexed values.
    pub fn integrate(&self, f: &[T]) -> T {
        crate::linalg::dot(&self.weights, f)
    }
}

/// One-point backward kernel on `S`; `mu` is stationary for it.
pub fn one_point_kernel<T: Scalar>(model: &RtpModel<T>) -> Mat<T> {
    let s = model.n_states();
    let e = model.n_innovations();
    let mut p = Mat::zeros(s, s);
    for x0 in 0..s {
        for x1 in 0..s {
            for z in 0..e {
                let w = model.mu[x1] * model.nu[z];
                let y = model.phi.get(x0, x1, z);
                p[(x0, y)] = p[(x0, y)] + w;
            }
        }
    }
    p
}

/// Two-point motion kernel: both coordinates share the second input and the
/// innovation, so diagonal rows place mass only on the diagonal (the zero
/// off-diagonal entries are exact, not rounded).
pub fn two_point_kernel<T: Scalar>(model: &RtpModel<T>) -> PairKernel<T> {
    let s = model.n_states();
    let e = model.n_innovations();
    let pairs = PairIndex::new(s);
    let mut full = Mat::zeros(pairs.n_full(), pairs.n_full());
    for x0 in 0..s {
        for x0p in 0..s {
            let row = pairs.full(x0, x0p);
            for x1 in 0..s {
                for z in 0..e {
                    let w = model.mu[x1] * model.nu[z];
                    let y = model.phi.get(x0, x1, z);
                    let yp = model.phi.get(x0p, x1, z);
                    let col = pairs.full(y, yp);
                    full[(row, col)] = full[(row, col)] + w;
                }
            }
        }
    }
    let mut off_diag = Mat::zeros(pairs.n_off(), pairs.n_off());
    for roff in 0..pairs.n_off() {
        let rfull = pairs.full_of_off(roff);
        for coff in 0..pairs.n_off() {
            off_diag[(roff, coff)] = full[(rfull, pairs.full_of_off(coff))];
        }
    }
    PairKernel {
        pairs,
        full,
        off_diag,
    }
}

/// Image of `a (x) b (x) nu` under the paired recursion
/// `((x0, x0'), (x1, x1'), z) -> (phi(x0, x1, z), phi(x0', x1', z))`.
///
/// Bilinear and symmetric in `(a, b)`; defined for signed measures as well.
pub fn two_point_map<T: Scalar>(
    model: &RtpModel<T>,
    a: &PairMeasure<T>,
    b: &PairMeasure<T>,
) -> PairMeasure<T> {
    let s = model.n_states();
    let e = model.n_innovations();
    assert_eq!(a.n_states(), s);
    assert_eq!(b.n_states(), s);
    let mut out = PairMeasure::zeros(s);
    for x0 in 0..s {
        for x0p in 0..s {
            let wa = a.get(x0, x0p);
            if wa == T::zero() {
                continue;
            }
            for x1 in 0..s {
                for x1p in 0..s {
                    let w = wa * b.get(x1, x1p);
                    if w == T::zero() {
                        continue;
                    }
                    for z in 0..e {
                        let y = model.phi.get(x0, x1, z);
                        let yp = model.phi.get(x0p, x1p, z);
                        out.weights[y * s + yp] = out.weights[y * s + yp] + w * model.nu[z];
                    }
                }
            }
        }
    }
    out
}

/// Trace of the bivariate fixed-point iteration `lambda -> map(lambda, lambda)`.
#[derive(Clone, Debug)]
pub struct BivariateTrace<T> {
    /// Off-diagonal masses `d_0, ..., d_k`, one per iterate including the start.
    pub masses: Vec<T>,
    /// Final iterate.
    pub terminal: PairMeasure<T>,
    /// Geometric mean of the last few mass ratios, when defined.
    pub decay_ratio: Option<T>,
    /// Largest marginal deviation from `mu` seen along the run.
    pub max_marginal_drift: T,
}

/// Iterate the two-point map from `start`, recording off-diagonal masses.
///
/// Stops early once the mass falls below `tol`. Every iterate must keep both
/// marginals equal to `mu`; drift beyond an internal limit is an error.
pub fn bivariate_iterate<T: Scalar>(
    model: &RtpModel<T>,
    start: PairMeasure<T>,
    n_max: usize,
    tol: T,
) -> Result<BivariateTrace<T>> {
    let drift_limit = T::of(MARGINAL_DRIFT_LIMIT);
    let mut current = start;
    let mut masses = Vec::with_capacity(n_max + 1);
    let mut max_drift = T::zero();

    let check = |m: &PairMeasure<T>, step: usize, max_drift: &mut T| -> Result<()> {
        let (first, second) = m.marginals();
        let drift = crate::linalg::sup_distance(&first, &model.mu)
            .max(crate::linalg::sup_distance(&second, &model.mu));
        *max_drift = (*max_drift).max(drift);
        if drift > drift_limit {
            return Err(Error::MarginalDrift {
                step,
                drift: drift.as_f64(),
            });
        }
        Ok(())
    };

    check(&current, 0, &mut max_drift)?;
    masses.push(current.off_diagonal_mass());
    for step in 1..=n_max {
        if *masses.last().expect("non-empty") < tol {
            break;
        }
        current = two_point_map(model, &current, &current);
        // The iteration squares the total mass, so rounding noise along the
        // mass direction doubles per step; renormalizing is the identity in
        // exact arithmetic and removes that unstable direction.
        let mass = current.total_mass();
        if mass > T::zero() && mass != T::one() {
            for w in current.weights.iter_mut() {
                *w = *w / mass;
            }
        }
        check(&current, step, &mut max_drift)?;
        masses.push(current.off_diagonal_mass());
    }

    // Geometric mean over the last few ratios damps transients from
    // non-dominant eigenvalues.
    let decay_ratio = {
        let k = masses.len().saturating_sub(1).min(5);
        if k == 0 {
            None
        } else {
            let window = &masses[masses.len() - 1 - k..];
            if window.iter().any(|&d| d <= T::zero()) {
                if window.last() == Some(&T::zero()) {
                    Some(T::zero())
                } else {
                    None
                }
            } else {
                let log_sum: T = window.windows(2).map(|w| (w[1] / w[0]).ln()).sum();
                Some((log_sum / T::of(k as f64)).exp())
            }
        }
    };

    Ok(BivariateTrace {
        masses,
        terminal: current,
        decay_ratio,
        max_marginal_drift: max_drift,
    })
}

/// Quadratic form of the level-`n` number operator against a root observable:
/// `2^n * (mu (x) mu) P^(2)_n g` with `g(x, x') = (f(x) - f(x'))^2 / 2`,
/// computed by `n` kernel applications.
pub fn number_operator_form<T: Scalar>(model: &RtpModel<T>, f: &[T], n: usize) -> T {
    polarized_number_form(model, f, f, n)
}

/// Polarized variant: `g(x, x') = (f(x) - f(x'))(g(x) - g(x')) / 2`.
pub fn polarized_number_form<T: Scalar>(model: &RtpModel<T>, f: &[T], g: &[T], n: usize) -> T {
    let kernel = two_point_kernel(model);
    polarized_number_form_with(&kernel, &model.mu, f, g, n)
}

/// As [`polarized_number_form`], reusing a prebuilt kernel.
pub fn polarized_number_form_with<T: Scalar>(
    kernel: &PairKernel<T>,
    mu: &[T],
    f: &[T],
    g: &[T],
    n: usize,
) -> T {
    let s = mu.len();
    assert_eq!(f.len(), s);
    assert_eq!(g.len(), s);
    let half = T::of(0.5);
    let mut weights = PairMeasure::product(mu, mu).weights;
    for _ in 0..n {
        weights = kernel.full.vec_mul(&weights);
    }
    let mut form = T::zero();
    for x in 0..s {
        for y in 0..s {
            let gv = half * (f[x] - f[y]) * (g[x] - g[y]);
            form = form + weights[x * s + y] * gv;
        }
    }
    form * T::of(2.0).powi(n as i32)
}

/// Render a matrix as CSV with a header row and row labels in the first
/// column.
pub fn matrix_to_csv<T: Scalar>(
    m: &Mat<T>,
    row_labels: &[String],
    col_labels: &[String],
) -> String {
    assert_eq!(row_labels.len(), m.rows());
    assert_eq!(col_labels.len(), m.cols());
    let mut out = String::from("label");
    for l in col_labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (i, l) in row_labels.iter().enumerate() {
        out.push_str(l);
        for j in 0..m.cols() {
            out.push_str(&format!(",{}", m[(i, j)].as_f64()));
        }
        out.push('\n');
    }
    out
}

/// Render a pair measure as CSV keyed by pair labels.
pub fn pair_measure_to_csv<T: Scalar>(m: &PairMeasure<T>, states: &[String]) -> String {
    let pairs = PairIndex::new(m.n_states());
    let mut out = String::from("pair,weight\n");
    for full in 0..pairs.n_full() {
        out.push_str(&format!(
            "\"{}\",{}\n",
            pairs.full_label(full, states),
            m.weights[full].as_f64()
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin, validate, Tolerances};

    fn valid(name: &str) -> RtpModel<f64> {
        let m = builtin::<f64>(name).unwrap();
        validate(&m, &Tolerances::default()).unwrap().model
    }

    #[test]
    fn select_one_point_kernel() {
        let p = one_point_kernel(&valid("SELECT"));
        assert_eq!(p[(0, 0)], 0.75);
        assert_eq!(p[(0, 1)], 0.25);
        assert_eq!(p[(1, 0)], 0.25);
        assert_eq!(p[(1, 1)], 0.75);
    }

    #[test]
    fn pure_innovation_rows_equal_nu() {
        let m = valid("PURE-INNOVATION");
        let p = one_point_kernel(&m);
        for i in 0..m.n_states() {
            assert_eq!(p.row(i), &m.nu[..]);
        }
    }

    #[test]
    fn const_kernel_is_scalar_one() {
        let p = one_point_kernel(&valid("CONST"));
        assert_eq!(p.rows(), 1);
        assert_eq!(p[(0, 0)], 1.0);
    }

    #[test]
    fn mu_is_stationary_for_one_point_kernel() {
        for name in crate::model::BUILTIN_NAMES {
            let m = valid(name);
            let p = one_point_kernel(&m);
            let image = p.vec_mul(&m.mu);
            assert!(
                crate::linalg::sup_distance(&image, &m.mu) <= 1e-10,
                "{name} stationarity"
            );
        }
    }

    #[test]
    fn select_off_diagonal_kernel_is_half_identity_bitexact() {
        let k = two_point_kernel(&valid("SELECT"));
        assert_eq!(k.off_diag.rows(), 2);
        assert_eq!(k.off_diag[(0, 0)], 0.5);
        assert_eq!(k.off_diag[(0, 1)], 0.0);
        assert_eq!(k.off_diag[(1, 0)], 0.0);
        assert_eq!(k.off_diag[(1, 1)], 0.5);
    }

    #[test]
    fn xor_off_diagonal_kernel_is_flat() {
        let k = two_point_kernel(&valid("XOR"));
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(k.off_diag[(i, j)], 0.5);
            }
        }
    }

    #[test]
    fn andor_noise_off_diagonal_kernel_is_quarter_identity() {
        let k = two_point_kernel(&valid("ANDOR-NOISE"));
        assert_eq!(k.off_diag[(0, 0)], 0.25);
        assert_eq!(k.off_diag[(0, 1)], 0.0);
        assert_eq!(k.off_diag[(1, 0)], 0.0);
        assert_eq!(k.off_diag[(1, 1)], 0.25);
    }

    #[test]
    fn diagonal_rows_absorb_exactly() {
        for name in crate::model::BUILTIN_NAMES {
            let m = valid(name);
            let k = two_point_kernel(&m);
            for x in 0..m.n_states() {
                let row = k.pairs.full(x, x);
                for col in 0..k.pairs.n_full() {
                    if !k.pairs.is_diagonal(col) {
                        assert_eq!(k.full[(row, col)], 0.0, "{name} absorption");
                    }
                }
            }
        }
    }

    #[test]
    fn rows_are_stochastic() {
        for name in crate::model::BUILTIN_NAMES {
            let m = valid(name);
            let k = two_point_kernel(&m);
            for r in 0..k.pairs.n_full() {
                let sum: f64 = k.full.row(r).iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12, "{name} row {r}");
            }
        }
    }

    #[test]
    fn diagonal_coupling_is_a_fixed_point() {
        for name in crate::model::BUILTIN_NAMES {
            let m = valid(name);
            let diag = PairMeasure::diagonal(&m.mu);
            let image = two_point_map(&m, &diag, &diag);
            assert!(
                crate::linalg::sup_distance(&image.weights, &diag.weights) <= 1e-14,
                "{name} diagonal fixed point"
            );
        }
    }

    #[test]
    fn select_product_coupling_keeps_half_off_diagonal() {
        let m = valid("SELECT");
        let prod = PairMeasure::product(&m.mu, &m.mu);
        let image = two_point_map(&m, &prod, &prod);
        assert_eq!(image.off_diagonal_mass(), 0.5);
    }

    #[test]
    fn kernel_application_matches_pair_map_against_diagonal() {
        // The one-step kernel action on a measure coincides with the
        // two-point map against the diagonal coupling.
        for name in crate::model::BUILTIN_NAMES {
            let m = valid(name);
            let k = two_point_kernel(&m);
            let s = m.n_states();
            let mut lambda = PairMeasure::zeros(s);
            for (i, w) in lambda.weights.iter_mut().enumerate() {
                // Deterministic signed test weights.
                *w = ((i * 7 % 5) as f64 - 2.0) / 4.0;
            }
            let via_kernel = k.full.vec_mul(&lambda.weights);
            let via_map = two_point_map(&m, &lambda, &PairMeasure::diagonal(&m.mu));
            assert!(
                crate::linalg::sup_distance(&via_kernel, &via_map.weights) <= 1e-12,
                "{name} linearization identity"
            );
        }
    }

    #[test]
    fn bivariate_iteration_examples() {
        // Subcritical decay with ratio near 2*rho = 1/2.
        let m = valid("ANDOR-NOISE");
        let trace = bivariate_iterate(&m, PairMeasure::product(&m.mu, &m.mu), 60, 1e-300).unwrap();
        let ratio = trace.decay_ratio.unwrap();
        assert!((ratio - 0.5).abs() < 1e-6, "ratio {ratio}");

        // The selection model holds its off-diagonal mass forever.
        let m = valid("SELECT");
        let trace = bivariate_iterate(&m, PairMeasure::product(&m.mu, &m.mu), 50, 1e-300).unwrap();
        assert!(trace.masses.iter().all(|&d| (d - 0.5).abs() <= 1e-12));

        // The diagonal start never leaves the diagonal.
        let trace = bivariate_iterate(&m, PairMeasure::diagonal(&m.mu), 10, 1e-300).unwrap();
        assert!(trace.masses.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn number_form_examples() {
        let select = valid("SELECT");
        let f = [-1.0, 1.0];
        for n in 0..12 {
            assert!((number_operator_form(&select, &f, n) - 1.0).abs() <= 1e-12);
        }
        let xor = valid("XOR");
        for n in 0..12 {
            let expect = (2.0f64).powi(n as i32);
            assert!((number_operator_form(&xor, &f, n) - expect).abs() <= 1e-9 * expect);
        }
        // Constant observables have a vanishing form.
        assert_eq!(number_operator_form(&xor, &[3.0, 3.0], 5), 0.0);
    }

    #[test]
    fn swap_involution_properties() {
        let pairs = PairIndex::new(4);
        for off in 0..pairs.n_off() {
            assert_eq!(pairs.swap_off(pairs.swap_off(off)), off);
            assert!(!pairs.is_diagonal(pairs.swap_full(pairs.full_of_off(off))));
        }
    }

    #[test]
    fn csv_exports_carry_labels() {
        let m = valid("SELECT");
        let k = two_point_kernel(&m);
        let labels: Vec<String> = (0..k.pairs.n_full())
            .map(|full| k.pairs.full_label(full, &m.states))
            .collect();
        let csv = matrix_to_csv(&k.full, &labels, &labels);
        assert!(csv.starts_with("label,(-1,-1),(-1,+1),(+1,-1),(+1,+1)\n"));
        assert_eq!(csv.lines().count(), 5);

        let csv = pair_measure_to_csv(&PairMeasure::product(&m.mu, &m.mu), &m.states);
        assert!(csv.starts_with("pair,weight\n"));
        assert!(csv.contains("\"(-1,+1)\",0.25\n"));
    }

    #[test]
    fn kernels_work_in_single_precision() {
        let m = builtin::<f32>("XOR").unwrap();
        let m = validate(&m, &Tolerances::default()).unwrap().model;
        let k = two_point_kernel(&m);
        assert_eq!(k.off_diag[(0, 0)], 0.5f32);
        let trace =
            bivariate_iterate(&m, PairMeasure::product(&m.mu, &m.mu), 10, 1e-30f32).unwrap();
        assert!(trace.masses.iter().all(|&d| (d - 0.5).abs() <= 1e-6));
        assert_eq!(number_operator_form(&m, &[-1.0f32, 1.0], 3), 8.0);
    }
}
