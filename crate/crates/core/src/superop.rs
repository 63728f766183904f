//! Operator calculus over the state space: the linear and quadratic
//! superoperators induced by the two-point kernel and the two-point map, the
//! jump generator built from the Perron eigenvector, spectral-measure
//! generating functions of the leaf-refresh number operator, and the
//! semigroup limit diagnostics.

use crate::error::{Error, Result};
use crate::kernels::{self, PairKernel, PairMeasure};
use crate::linalg::Mat;
use crate::model::RtpModel;
use crate::scalar::Scalar;
use crate::spectral::SpectralData;

/// Real matrix acting on functions over the state set, with the
/// `mu`-weighted inner product `(f, g) = sum_x mu(x) f(x) g(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorOnS<T> {
    pub mat: Mat<T>,
}

impl<T: Scalar> OperatorOnS<T> {
    pub fn from_mat(mat: Mat<T>) -> Self {
        assert_eq!(mat.rows(), mat.cols(), "operators are square");
        OperatorOnS { mat }
    }

    pub fn identity(s: usize) -> Self {
        OperatorOnS {
            mat: Mat::identity(s),
        }
    }

    /// Projection onto constants: every row is `mu`.
    pub fn projection_onto_constants(mu: &[T]) -> Self {
        let s = mu.len();
        let mut mat = Mat::zeros(s, s);
        for x in 0..s {
            for y in 0..s {
                mat[(x, y)] = mu[y];
            }
        }
        OperatorOnS { mat }
    }

    /// Mean-removing projection: identity minus the projection onto
    /// constants.
    pub fn mean_zero_projection(mu: &[T]) -> Self {
        let s = mu.len();
        let mut mat = Mat::zeros(s, s);
        for x in 0..s {
            for y in 0..s {
                let delta = if x == y { T::one() } else { T::zero() };
                mat[(x, y)] = delta - mu[y];
            }
        }
        OperatorOnS { mat }
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn apply(&self, f: &[T]) -> Vec<T> {
        self.mat.mul_vec(f)
    }

    /// Row sums, i.e. the image of the constant one.
    pub fn row_sums(&self) -> Vec<T> {
        (0..self.dim())
            .map(|i| self.mat.row(i).iter().copied().sum())
            .collect()
    }

    /// Upper bound on the operator norm in the `mu`-weighted space
    /// (Frobenius norm of the similarity-transformed matrix).
    pub fn mu_norm_bound(&self, mu: &[T]) -> T {
        let s = self.dim();
        let mut acc = T::zero();
        for i in 0..s {
            for j in 0..s {
                let v = self.mat[(i, j)] * (mu[i] / mu[j]).sqrt();
                acc = acc + v * v;
            }
        }
        acc.sqrt()
    }
}

/// `mu`-weighted inner product.
pub fn inner<T: Scalar>(mu: &[T], f: &[T], g: &[T]) -> T {
    let mut acc = T::zero();
    for i in 0..mu.len() {
        acc = acc + mu[i] * f[i] * g[i];
    }
    acc
}

/// Quadratic form `(f, L g)` in the `mu`-weighted inner product.
pub fn operator_form<T: Scalar>(mu: &[T], f: &[T], l: &OperatorOnS<T>, g: &[T]) -> T {
    inner(mu, f, &l.apply(g))
}

/// Superoperator context: a validated model plus its two-point kernel.
#[derive(Clone, Debug)]
pub struct Superops<T> {
    model: RtpModel<T>,
    kernel: PairKernel<T>,
}

impl<T: Scalar> Superops<T> {
    pub fn new(model: &RtpModel<T>) -> Self {
        Superops {
            model: model.clone(),
            kernel: kernels::two_point_kernel(model),
        }
    }

    pub fn model(&self) -> &RtpModel<T> {
        &self.model
    }

    pub fn kernel(&self) -> &PairKernel<T> {
        &self.kernel
    }

    pub fn mu(&self) -> &[T] {
        &self.model.mu
    }

    /// Weight an operator into a (signed) pair measure `mu (x) L`.
    fn weighted(&self, l: &OperatorOnS<T>) -> PairMeasure<T> {
        let s = self.model.n_states();
        let mut weights = Vec::with_capacity(s * s);
        for x in 0..s {
            for y in 0..s {
                weights.push(self.model.mu[x] * l.mat[(x, y)]);
            }
        }
        PairMeasure::from_weights(s, weights)
    }

    /// Factor a pair measure back into an operator: `w = mu (x) M`.
    fn factored(&self, w: &PairMeasure<T>) -> OperatorOnS<T> {
        let s = self.model.n_states();
        let mut mat = Mat::zeros(s, s);
        for x in 0..s {
            for y in 0..s {
                mat[(x, y)] = w.get(x, y) / self.model.mu[x];
            }
        }
        OperatorOnS { mat }
    }

    /// Linear superoperator: push `mu (x) L` one step through the two-point
    /// kernel and factor `mu` back out. Preserves the class `L 1 = 0`.
    pub fn linear(&self, l: &OperatorOnS<T>) -> OperatorOnS<T> {
        let weighted = self.weighted(l);
        let image = self.kernel.full.vec_mul(&weighted.weights);
        self.factored(&PairMeasure::from_weights(self.model.n_states(), image))
    }

    /// Quadratic superoperator: the two-point map applied to `mu (x) L` with
    /// itself; homogeneous of degree two in `L`.
    pub fn quadratic(&self, l: &OperatorOnS<T>) -> OperatorOnS<T> {
        self.quadratic_bilinear(l, l)
    }

    /// Bilinear extension of the quadratic superoperator to two operators.
    pub fn quadratic_bilinear(&self, a: &OperatorOnS<T>, b: &OperatorOnS<T>) -> OperatorOnS<T> {
        let wa = self.weighted(a);
        let wb = self.weighted(b);
        let image = kernels::two_point_map(&self.model, &wa, &wb);
        self.factored(&image)
    }
}

/// Markov jump generator built from the symmetric left Perron eigenvector:
/// off-diagonal rates `kappa(x, x') / mu(x)`, diagonal balancing the rows.
#[derive(Clone, Debug)]
pub struct GeneratorQ<T> {
    pub op: OperatorOnS<T>,
}

impl<T: Scalar> GeneratorQ<T> {
    pub fn from_spectral(
        model: &RtpModel<T>,
        pairs: &crate::kernels::PairIndex,
        spectral: &SpectralData<T>,
    ) -> Result<Self> {
        let vectors = spectral.vectors.as_ref().ok_or(Error::NoPerronVector)?;
        let s = model.n_states();
        let mut mat = Mat::zeros(s, s);
        for off in 0..pairs.n_off() {
            let (x, y) = pairs.decode(pairs.full_of_off(off));
            mat[(x, y)] = vectors.kappa[off] / model.mu[x];
        }
        for x in 0..s {
            let mut row = T::zero();
            for y in 0..s {
                if y != x {
                    row = row + mat[(x, y)];
                }
            }
            mat[(x, x)] = -row;
        }
        Ok(GeneratorQ {
            op: OperatorOnS { mat },
        })
    }

    pub fn dim(&self) -> usize {
        self.op.dim()
    }

    /// Largest absolute row sum (rows of a generator vanish).
    pub fn row_sum_residual(&self) -> T {
        crate::linalg::sup_norm(&self.op.row_sums())
    }

    /// Largest deviation from detailed balance `mu(x) Q(x, x') = mu(x') Q(x', x)`.
    pub fn reversibility_residual(&self, mu: &[T]) -> T {
        let s = self.dim();
        let mut worst = T::zero();
        for x in 0..s {
            for y in 0..s {
                worst =
                    worst.max((mu[x] * self.op.mat[(x, y)] - mu[y] * self.op.mat[(y, x)]).abs());
            }
        }
        worst
    }
}

/// Dirichlet form of the generator expressed through the eigenvector weights:
/// `-(1/2) sum_{x != x'} (f(x') - f(x)) (g(x') - g(x)) kappa(x, x')`.
pub fn kappa_form<T: Scalar>(
    pairs: &crate::kernels::PairIndex,
    kappa: &[T],
    f: &[T],
    g: &[T],
) -> T {
    let mut acc = T::zero();
    for off in 0..pairs.n_off() {
        let (x, y) = pairs.decode(pairs.full_of_off(off));
        acc = acc + (f[y] - f[x]) * (g[y] - g[x]) * kappa[off];
    }
    -acc * T::of(0.5)
}

/// Sup-norm residual of the fixed-point relation of the generator under the
/// linear superoperator. Vanishes because the weighted generator restricts to
/// the left eigenvector off the diagonal.
pub fn generator_fixed_point_residual<T: Scalar>(
    superops: &Superops<T>,
    rho: T,
    q: &GeneratorQ<T>,
) -> T {
    let image = superops.linear(&q.op);
    image.mat.sub(&q.op.mat.scale(rho)).sup_norm()
}

/// Operator controlling the level-to-level increment of the squared norm of
/// the rescaled generator sums:
/// `2 (2 rho)^-2 (quadratic(Q) + linear(Q^2)) - Q^2`. Kills constants.
pub fn norm_increment_operator<T: Scalar>(
    superops: &Superops<T>,
    rho: T,
    q: &GeneratorQ<T>,
) -> OperatorOnS<T> {
    let two_rho = T::of(2.0) * rho;
    let q_squared = OperatorOnS::from_mat(q.op.mat.matmul(&q.op.mat));
    let quad = superops.quadratic(&q.op);
    let lin = superops.linear(&q_squared);
    let scale = T::of(2.0) / (two_rho * two_rho);
    OperatorOnS::from_mat(quad.mat.add(&lin.mat).scale(scale).sub(&q_squared.mat))
}

/// Generating function of the level-`n` spectral measure of the refresh
/// number operator against a root observable: `n` quadratic-superoperator
/// applications to `P1 + z P1perp`, then the `mu`-form.
///
/// `G_n(1)` is the squared norm of `f`, and the derivative at `1` is the
/// number-operator form.
pub fn spectral_pgf<T: Scalar>(superops: &Superops<T>, f: &[T], n: usize, z: T) -> T {
    let mu = superops.mu();
    let p1 = OperatorOnS::projection_onto_constants(mu);
    let p1perp = OperatorOnS::mean_zero_projection(mu);
    let mut l = OperatorOnS::from_mat(p1.mat.add(&p1perp.mat.scale(z)));
    for _ in 0..n {
        l = superops.quadratic(&l);
    }
    operator_form(mu, f, &l, f)
}

/// Maximum level for exact mass recovery.
pub const MASS_RECOVERY_MAX_LEVEL: usize = 6;

/// Exact masses of the level-`n` spectral measure, recovered by propagating
/// the polynomial coefficients of `P1 + z P1perp` through the bilinear
/// superoperator (a degree-doubling convolution per level).
pub fn spectral_masses<T: Scalar>(superops: &Superops<T>, f: &[T], n: usize) -> Result<Vec<T>> {
    if n > MASS_RECOVERY_MAX_LEVEL {
        return Err(Error::Unsupported(format!(
            "mass recovery is limited to levels up to {MASS_RECOVERY_MAX_LEVEL} (asked for {n})"
        )));
    }
    let mu = superops.mu();
    let mut coeffs = vec![
        OperatorOnS::projection_onto_constants(mu),
        OperatorOnS::mean_zero_projection(mu),
    ];
    for _ in 0..n {
        let degree = coeffs.len() - 1;
        let mut next = vec![OperatorOnS::from_mat(Mat::zeros(mu.len(), mu.len())); 2 * degree + 1];
        for i in 0..=degree {
            for j in 0..=degree {
                let term = superops.quadratic_bilinear(&coeffs[i], &coeffs[j]);
                next[i + j] = OperatorOnS::from_mat(next[i + j].mat.add(&term.mat));
            }
        }
        coeffs = next;
    }
    Ok(coeffs.iter().map(|c| operator_form(mu, f, c, f)).collect())
}

/// Values of the rescaled Laplace functional along the levels, with the last
/// value standing in for the limit.
#[derive(Clone, Debug)]
pub struct LaplaceTrace<T> {
    pub t: T,
    /// `v_n = G_n(exp(-(2 rho)^-n t))` for `n = 0..=n_max`.
    pub values: Vec<T>,
    /// `|v_{n+1} - v_n|`.
    pub increments: Vec<T>,
    pub limit: T,
}

/// Rescaled Laplace values of the spectral measures; their limit is the
/// semigroup form of the limiting generator. Requires the supercritical
/// primitive regime.
pub fn laplace_limit<T: Scalar>(
    superops: &Superops<T>,
    spectral: &SpectralData<T>,
    f: &[T],
    t: T,
    n_max: usize,
) -> Result<LaplaceTrace<T>> {
    let two_rho = spectral.two_rho();
    if two_rho <= T::one() {
        return Err(Error::NotSupercritical {
            two_rho: two_rho.as_f64(),
        });
    }
    if !spectral.primitive {
        return Err(Error::NotPrimitive);
    }
    if t <= T::zero() {
        return Err(Error::Unsupported("laplace time must be positive".into()));
    }
    let values: Vec<T> = (0..=n_max)
        .map(|n| {
            let z = (-t / two_rho.powi(n as i32)).exp();
            spectral_pgf(superops, f, n, z)
        })
        .collect();
    let increments = values.windows(2).map(|w| (w[1] - w[0]).abs()).collect();
    let limit = *values.last().expect("n_max >= 0");
    Ok(LaplaceTrace {
        t,
        values,
        increments,
        limit,
    })
}

/// Series value of the squared norm of the limiting generator applied to a
/// root observable, with a geometric tail bound.
#[derive(Clone, Debug)]
pub struct LimitNormEstimate<T> {
    pub value: T,
    pub tail_bound: T,
    pub terms: Vec<T>,
}

/// `2 sum_r (2 rho)^(-2r-2) 2^r (f, linear^r(quadratic(Q)) f)` truncated at
/// `r_max`, plus a tail bound from the eigenvector decay of the linear
/// superoperator. Only defined in the supercritical regime.
pub fn limit_generator_norm<T: Scalar>(
    superops: &Superops<T>,
    spectral: &SpectralData<T>,
    q: &GeneratorQ<T>,
    f: &[T],
    r_max: usize,
) -> Result<LimitNormEstimate<T>> {
    let rho = spectral.rho;
    let two_rho = spectral.two_rho();
    if two_rho <= T::one() {
        return Err(Error::NotSupercritical {
            two_rho: two_rho.as_f64(),
        });
    }
    let mu = superops.mu();
    let two = T::of(2.0);
    let mut m = superops.quadratic(&q.op);
    let mut value = T::zero();
    let mut terms = Vec::with_capacity(r_max + 1);
    let mut norm_ratio_max = T::zero();
    for r in 0..=r_max {
        let coeff = two * two_rho.powi(-(2 * r as i32) - 2) * two.powi(r as i32);
        let term = coeff * operator_form(mu, f, &m, f);
        terms.push(term);
        value = value + term;
        norm_ratio_max = norm_ratio_max.max(m.mu_norm_bound(mu) / rho.powi(r as i32));
        if r < r_max {
            m = superops.linear(&m);
        }
    }
    let f_norm2 = inner(mu, f, f);
    let tail_bound =
        two * norm_ratio_max * f_norm2 * two_rho.powi(-2) * two_rho.powi(-(r_max as i32) - 1)
            / (T::one() - T::one() / two_rho);
    Ok(LimitNormEstimate {
        value,
        tail_bound,
        terms,
    })
}

/// Rescaled polarized number forms along the levels against their limiting
/// Dirichlet form `-(f, Q g)`.
#[derive(Clone, Debug)]
pub struct FormTrace<T> {
    /// `(2 rho)^-n (f, A_n g)` for `n = 0..=n_max`.
    pub values: Vec<T>,
    /// The limit form `-(f, Q g)`.
    pub target: T,
    /// `|values[n] - target|`.
    pub deviations: Vec<T>,
}

/// Convergence trace of the rescaled number forms towards the Dirichlet form
/// of the generator.
pub fn rescaled_number_form_trace<T: Scalar>(
    superops: &Superops<T>,
    spectral: &SpectralData<T>,
    q: &GeneratorQ<T>,
    f: &[T],
    g: &[T],
    n_max: usize,
) -> FormTrace<T> {
    let mu = superops.mu();
    let two_rho = spectral.two_rho();
    let values: Vec<T> = (0..=n_max)
        .map(|n| {
            let form = kernels::polarized_number_form_with(superops.kernel(), mu, f, g, n);
            form / two_rho.powi(n as i32)
        })
        .collect();
    let target = -operator_form(mu, f, &q.op, g);
    let deviations = values.iter().map(|&v| (v - target).abs()).collect();
    FormTrace {
        values,
        target,
        deviations,
    }
}

/// Tabulated spectral-measure data for one observable and level.
#[derive(Clone, Debug)]
pub struct SpectralMeasureReport<T> {
    pub level: usize,
    pub z_grid: Vec<T>,
    pub pgf_values: Vec<T>,
    /// Exact masses, available for small levels only.
    pub masses: Option<Vec<T>>,
    /// `G_n(1)`, the squared norm of the observable.
    pub norm_squared: T,
    /// Mean of the spectral measure, i.e. the number-operator form.
    pub mean: T,
    /// `(t, G_n(exp(-(2 rho)^-n t)))` pairs.
    pub laplace: Vec<(T, T)>,
}

impl<T: Scalar> SpectralMeasureReport<T> {
    pub fn compute(
        superops: &Superops<T>,
        spectral: &SpectralData<T>,
        f: &[T],
        level: usize,
        z_grid: &[T],
        t_grid: &[T],
    ) -> Result<Self> {
        let mu = superops.mu();
        let pgf_values = z_grid
            .iter()
            .map(|&z| spectral_pgf(superops, f, level, z))
            .collect();
        let masses = if level <= MASS_RECOVERY_MAX_LEVEL {
            Some(spectral_masses(superops, f, level)?)
        } else {
            None
        };
        let norm_squared = inner(mu, f, f);
        let mean = kernels::polarized_number_form_with(superops.kernel(), mu, f, f, level);
        let mut laplace = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            let trace = laplace_limit(superops, spectral, f, t, level)?;
            laplace.push((t, *trace.values.last().expect("level >= 0")));
        }
        Ok(SpectralMeasureReport {
            level,
            z_grid: z_grid.to_vec(),
            pgf_values,
            masses,
            norm_squared,
            mean,
            laplace,
        })
    }

    /// CSV rows `quantity,n,x,value`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("quantity,n,x,value\n");
        for (z, v) in self.z_grid.iter().zip(&self.pgf_values) {
            out.push_str(&format!(
                "pgf,{},{},{}\n",
                self.level,
                z.as_f64(),
                v.as_f64()
            ));
        }
        if let Some(masses) = &self.masses {
            for (k, m) in masses.iter().enumerate() {
                out.push_str(&format!("mass,{},{},{}\n", self.level, k, m.as_f64()));
            }
        }
        out.push_str(&format!(
            "norm_squared,{},1,{}\n",
            self.level,
            self.norm_squared.as_f64()
        ));
        out.push_str(&format!("mean,{},1,{}\n", self.level, self.mean.as_f64()));
        for (t, v) in &self.laplace {
            out.push_str(&format!(
                "laplace,{},{},{}\n",
                self.level,
                t.as_f64(),
                v.as_f64()
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::two_point_kernel;
    use crate::model::{builtin, validate, Tolerances};

    struct Ctx {
        model: RtpModel<f64>,
        superops: Superops<f64>,
        spectral: SpectralData<f64>,
    }

    fn ctx(name: &str) -> Ctx {
        let model = builtin::<f64>(name).unwrap();
        let model = validate(&model, &Tolerances::default()).unwrap().model;
        let kernel = two_point_kernel(&model);
        let spectral = SpectralData::compute(&kernel, &model.mu).unwrap();
        let superops = Superops::new(&model);
        Ctx {
            model,
            superops,
            spectral,
        }
    }

    fn generator(ctx: &Ctx) -> GeneratorQ<f64> {
        GeneratorQ::from_spectral(&ctx.model, &ctx.superops.kernel().pairs, &ctx.spectral).unwrap()
    }

    #[test]
    fn projections_are_idempotent_and_orthogonal() {
        let c = ctx("ANDOR-NOISE");
        let p1 = OperatorOnS::projection_onto_constants(&c.model.mu);
        let p1perp = OperatorOnS::mean_zero_projection(&c.model.mu);
        assert!(p1.mat.matmul(&p1.mat).sub(&p1.mat).sup_norm() <= 1e-13);
        assert!(p1perp.mat.matmul(&p1perp.mat).sub(&p1perp.mat).sup_norm() <= 1e-13);
        assert!(p1.mat.matmul(&p1perp.mat).sup_norm() <= 1e-13);
    }

    #[test]
    fn linear_superoperator_preserves_row_kernels() {
        // (PL) 1 = 0 whenever L 1 = 0, and row sums of PL match those of L
        // for stochastic-like operators.
        for name in ["SELECT", "XOR", "ANDOR-NOISE"] {
            let c = ctx(name);
            let p1perp = OperatorOnS::mean_zero_projection(&c.model.mu);
            let image = c.superops.linear(&p1perp);
            assert!(
                crate::linalg::sup_norm(&image.row_sums()) <= 1e-13,
                "{name}"
            );
            let id = OperatorOnS::identity(c.model.n_states());
            let image = c.superops.linear(&id);
            let sums = image.row_sums();
            assert!(sums.iter().all(|&s| (s - 1.0).abs() <= 1e-13), "{name}");
        }
    }

    #[test]
    fn linear_superoperator_is_linear() {
        let c = ctx("ANDOR-NOISE");
        let mut rng = crate::rng::RngStream::new(13, 2);
        let s = c.model.n_states();
        let random_op = |rng: &mut crate::rng::RngStream| {
            let mut mat = Mat::zeros(s, s);
            for i in 0..s {
                for j in 0..s {
                    mat[(i, j)] = rng.next_f64() * 2.0 - 1.0;
                }
            }
            OperatorOnS::from_mat(mat)
        };
        for _ in 0..5 {
            let a = random_op(&mut rng);
            let b = random_op(&mut rng);
            let (alpha, beta) = (rng.next_f64() * 4.0 - 2.0, rng.next_f64() * 4.0 - 2.0);
            let combined = OperatorOnS::from_mat(a.mat.scale(alpha).add(&b.mat.scale(beta)));
            let lhs = c.superops.linear(&combined);
            let rhs = c
                .superops
                .linear(&a)
                .mat
                .scale(alpha)
                .add(&c.superops.linear(&b).mat.scale(beta));
            assert!(lhs.mat.sub(&rhs).sup_norm() <= 1e-12);
        }
    }

    #[test]
    fn quadratic_superoperator_is_degree_two() {
        let c = ctx("ANDOR-NOISE");
        let mut rng = crate::rng::RngStream::new(11, 0);
        let s = c.model.n_states();
        for _ in 0..5 {
            let mut mat = Mat::zeros(s, s);
            for i in 0..s {
                for j in 0..s {
                    mat[(i, j)] = rng.next_f64() * 2.0 - 1.0;
                }
            }
            let l = OperatorOnS::from_mat(mat);
            let doubled = OperatorOnS::from_mat(l.mat.scale(2.0));
            let lhs = c.superops.quadratic(&doubled);
            let rhs = c.superops.quadratic(&l).mat.scale(4.0);
            assert!(lhs.mat.sub(&rhs).sup_norm() <= 1e-12);
        }
    }

    #[test]
    fn quadratic_preserves_markov_normalization() {
        let c = ctx("XOR");
        let p1 = OperatorOnS::projection_onto_constants(&c.model.mu);
        let image = c.superops.quadratic(&p1);
        let sums = image.row_sums();
        assert!(sums.iter().all(|&s| (s - 1.0).abs() <= 1e-13));
    }

    #[test]
    fn xor_generator_matrix() {
        let c = ctx("XOR");
        let q = generator(&c);
        assert!((q.op.mat[(0, 0)] + 0.5).abs() <= 1e-10);
        assert!((q.op.mat[(0, 1)] - 0.5).abs() <= 1e-10);
        assert!((q.op.mat[(1, 0)] - 0.5).abs() <= 1e-10);
        assert!((q.op.mat[(1, 1)] + 0.5).abs() <= 1e-10);
        assert!(q.row_sum_residual() <= 1e-12);
        assert!(q.reversibility_residual(&c.model.mu) <= 1e-14);
    }

    #[test]
    fn select_generator_rows_vanish() {
        let c = ctx("SELECT");
        let q = generator(&c);
        assert!(q.row_sum_residual() <= 1e-12);
        // Flagged symmetric choice still yields equal off-diagonal rates.
        assert!((q.op.mat[(0, 1)] - q.op.mat[(1, 0)]).abs() <= 1e-12);
    }

    #[test]
    fn generator_form_identity_and_negativity() {
        let c = ctx("XOR");
        let q = generator(&c);
        let pairs = &c.superops.kernel().pairs;
        let kappa = &c.spectral.vectors.as_ref().unwrap().kappa;
        let mut rng = crate::rng::RngStream::new(5, 9);
        for _ in 0..20 {
            let f: Vec<f64> = (0..2).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let g: Vec<f64> = (0..2).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let direct = operator_form(&c.model.mu, &f, &q.op, &g);
            let via_kappa = kappa_form(pairs, kappa, &f, &g);
            assert!((direct - via_kappa).abs() <= 1e-12);
            // Negative semidefinite quadratic form.
            assert!(operator_form(&c.model.mu, &f, &q.op, &f) <= 1e-13);
        }
    }

    #[test]
    fn weighted_generator_equals_kappa_star() {
        let c = ctx("XOR");
        let q = generator(&c);
        let star = &c.spectral.vectors.as_ref().unwrap().kappa_star;
        let s = c.model.n_states();
        for x in 0..s {
            for y in 0..s {
                let w = c.model.mu[x] * q.op.mat[(x, y)];
                assert!((w - star[x * s + y]).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn fixed_point_residual_vanishes_and_detects_violations() {
        for name in ["XOR", "ANDOR-NOISE", "SELECT"] {
            let c = ctx(name);
            let q = generator(&c);
            let residual = generator_fixed_point_residual(&c.superops, c.spectral.rho, &q);
            assert!(residual <= 1e-10, "{name}: {residual}");
        }
        // A perturbed generator is caught.
        let c = ctx("XOR");
        let q = generator(&c);
        let mut perturbed = q.op.mat.clone();
        perturbed[(0, 0)] += 1e-3;
        let bad = GeneratorQ {
            op: OperatorOnS::from_mat(perturbed),
        };
        assert!(generator_fixed_point_residual(&c.superops, c.spectral.rho, &bad) > 1e-5);
    }

    #[test]
    fn xor_quadratic_of_generator_is_its_negation() {
        // Hand computation: pushing the weighted generator through the
        // two-point map flips its sign, and the generator squares to its own
        // negation, so the norm-increment operator vanishes identically.
        let c = ctx("XOR");
        let q = generator(&c);
        let quad = c.superops.quadratic(&q.op);
        assert!(quad.mat.add(&q.op.mat).sup_norm() <= 1e-12);
        let q_squared = q.op.mat.matmul(&q.op.mat);
        assert!(q_squared.add(&q.op.mat).sup_norm() <= 1e-12);
        let hat = norm_increment_operator(&c.superops, c.spectral.rho, &q);
        assert!(hat.mat.sup_norm() <= 1e-12);
    }

    #[test]
    fn norm_increment_operator_kills_constants() {
        let c = ctx("XOR");
        let q = generator(&c);
        let hat = norm_increment_operator(&c.superops, c.spectral.rho, &q);
        assert!(crate::linalg::sup_norm(&hat.row_sums()) <= 1e-12);
        // Self-adjoint in the mu-weighted inner product.
        let s = c.model.n_states();
        for x in 0..s {
            for y in 0..s {
                let lhs = c.model.mu[x] * hat.mat[(x, y)];
                let rhs = c.model.mu[y] * hat.mat[(y, x)];
                assert!((lhs - rhs).abs() <= 1e-12);
            }
        }
        assert!(hat.mat.sup_norm().is_finite());
    }

    #[test]
    fn norm_increment_scales_quartically_in_kappa_scale() {
        // Doubling kappa doubles Q, and every term of the increment operator
        // is quadratic in Q.
        let c = ctx("XOR");
        let q = generator(&c);
        let doubled = GeneratorQ {
            op: OperatorOnS::from_mat(q.op.mat.scale(2.0)),
        };
        let hat = norm_increment_operator(&c.superops, c.spectral.rho, &q);
        let hat2 = norm_increment_operator(&c.superops, c.spectral.rho, &doubled);
        assert!(hat2.mat.sub(&hat.mat.scale(4.0)).sup_norm() <= 1e-12);
    }

    #[test]
    fn pgf_baseline_examples() {
        // Level zero, unit-norm mean-zero observable: G_0(z) = z.
        let c = ctx("XOR");
        let f = [-1.0, 1.0];
        for &z in &[0.0, 0.3, 1.0] {
            assert!((spectral_pgf(&c.superops, &f, 0, z) - z).abs() <= 1e-13);
        }
        // The selection model keeps G_n(z) = z at every level.
        let c = ctx("SELECT");
        for n in 0..6 {
            for &z in &[0.0, 0.25, 0.5, 0.75, 1.0] {
                assert!((spectral_pgf(&c.superops, &f, n, z) - z).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn pgf_mean_matches_number_form_by_finite_differences() {
        let c = ctx("XOR");
        let f = [-1.0, 1.0];
        let h = 1e-6;
        for n in 0..=8 {
            let derivative = (spectral_pgf(&c.superops, &f, n, 1.0 + h)
                - spectral_pgf(&c.superops, &f, n, 1.0 - h))
                / (2.0 * h);
            let form = kernels::number_operator_form(&c.model, &f, n);
            assert!(
                (derivative - form).abs() <= 1e-5 * form.max(1.0),
                "n = {n}: {derivative} vs {form}"
            );
        }
    }

    #[test]
    fn masses_match_pgf_and_stay_nonnegative() {
        let c = ctx("ANDOR-NOISE");
        let f = [-1.0, 1.0];
        for n in 0..=3 {
            let masses = spectral_masses(&c.superops, &f, n).unwrap();
            let total: f64 = masses.iter().sum();
            assert!((total - inner(&c.model.mu, &f, &f)).abs() <= 1e-12);
            assert!(masses.iter().all(|&m| m >= -1e-9));
            for &z in &[0.0, 0.5, 1.0] {
                let horner = masses.iter().rev().fold(0.0, |acc, &m| acc * z + m);
                let pgf = spectral_pgf(&c.superops, &f, n, z);
                assert!((horner - pgf).abs() <= 1e-12);
            }
        }
        assert!(matches!(
            spectral_masses(&c.superops, &f, 9),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn pgf_is_nondecreasing_on_the_unit_interval() {
        let c = ctx("ANDOR-NOISE");
        let f = [0.25, -1.5];
        for n in 0..=4 {
            let mut last = f64::NEG_INFINITY;
            for step in 0..=10 {
                let z = step as f64 / 10.0;
                let v = spectral_pgf(&c.superops, &f, n, z);
                assert!(v >= last - 1e-12);
                last = v;
            }
        }
    }

    #[test]
    fn iterated_linear_superoperator_converges_to_minus_q() {
        // Rescaled iterates of the mean-zero projection approach the negated
        // generator in the primitive case.
        let c = ctx("XOR");
        let q = generator(&c);
        let mut l = OperatorOnS::mean_zero_projection(&c.model.mu);
        for _ in 0..30 {
            l = c.superops.linear(&l);
        }
        let scaled = l.mat.scale(c.spectral.rho.powi(-30));
        assert!(scaled.add(&q.op.mat).sup_norm() <= 1e-10);
    }

    #[test]
    fn laplace_trace_for_xor_is_flat() {
        let c = ctx("XOR");
        let f = [-1.0, 1.0];
        let trace = laplace_limit(&c.superops, &c.spectral, &f, 1.0, 20).unwrap();
        let expect = (-1.0f64).exp();
        assert!((trace.limit - expect).abs() <= 1e-10);
        assert!(trace.increments.iter().all(|&inc| inc <= 1e-10));
        // Small-time limit approaches the squared norm.
        let trace = laplace_limit(&c.superops, &c.spectral, &f, 1e-8, 5).unwrap();
        assert!((trace.limit - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn laplace_requires_supercritical_primitive() {
        let c = ctx("ANDOR-NOISE");
        assert!(matches!(
            laplace_limit(&c.superops, &c.spectral, &[-1.0, 1.0], 1.0, 5),
            Err(Error::NotSupercritical { .. })
        ));
        let c = ctx("XOR");
        assert!(matches!(
            laplace_limit(&c.superops, &c.spectral, &[-1.0, 1.0], 0.0, 5),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn limit_norm_series_matches_oracle() {
        let c = ctx("XOR");
        let q = generator(&c);
        let f = [-1.0, 1.0];
        let estimate = limit_generator_norm(&c.superops, &c.spectral, &q, &f, 40).unwrap();
        // Exact value: every term of the series is 2 * 4^-(r+1) * 2^r, which
        // sums to one; the sign observable is a generator eigenvector.
        assert!((estimate.value - 1.0).abs() <= 1e-9, "{}", estimate.value);
        // Constant observables are annihilated.
        let zero = limit_generator_norm(&c.superops, &c.spectral, &q, &[1.0, 1.0], 10).unwrap();
        assert!(zero.value.abs() <= 1e-13);
        // The finite-level oracle values increase towards the series value.
        let speed = |n: i32| (2.0 * c.spectral.rho).powi(-n);
        let oracle1 =
            crate::oracle::exact_generator_square_form(&c.model, &q.op.mat, speed(1), &f, 1)
                .unwrap();
        let oracle2 =
            crate::oracle::exact_generator_square_form(&c.model, &q.op.mat, speed(2), &f, 2)
                .unwrap();
        // The finite-level values already sit at the limit here (the sign
        // observable is an eigenvector at every level).
        assert!((oracle1 - 1.0).abs() <= 1e-12);
        assert!(oracle1 <= oracle2 + 1e-12);
        assert!((oracle2 - estimate.value).abs() <= estimate.tail_bound + 1e-9);
        // Cauchy-Schwarz consistency with the Dirichlet form.
        let dirichlet = -operator_form(&c.model.mu, &f, &q.op, &f);
        let f_norm = inner(&c.model.mu, &f, &f).sqrt();
        assert!(estimate.value.sqrt() >= dirichlet.abs() / f_norm - 1e-9);
    }

    #[test]
    fn rescaled_forms_are_constant_for_xor() {
        let c = ctx("XOR");
        let q = generator(&c);
        let f = [-1.0, 1.0];
        let trace = rescaled_number_form_trace(&c.superops, &c.spectral, &q, &f, &f, 12);
        assert!((trace.target - 1.0).abs() <= 1e-12);
        assert!(trace.deviations.iter().all(|&d| d <= 1e-12));
        // Constant observables vanish identically.
        let trace =
            rescaled_number_form_trace(&c.superops, &c.spectral, &q, &[2.0, 2.0], &[2.0, 2.0], 6);
        assert!(trace.values.iter().all(|&v| v.abs() <= 1e-13));
        // Random observables settle onto the limit form by level 30.
        let mut rng = crate::rng::RngStream::new(21, 4);
        for _ in 0..5 {
            let f = [rng.next_f64() * 4.0 - 2.0, rng.next_f64() * 4.0 - 2.0];
            let g = [rng.next_f64() * 4.0 - 2.0, rng.next_f64() * 4.0 - 2.0];
            let trace = rescaled_number_form_trace(&c.superops, &c.spectral, &q, &f, &g, 30);
            assert!(
                *trace.deviations.last().unwrap() <= 1e-8,
                "deviation {:?}",
                trace.deviations.last()
            );
        }
    }

    #[test]
    fn report_renders_csv() {
        let c = ctx("XOR");
        let report = SpectralMeasureReport::compute(
            &c.superops,
            &c.spectral,
            &[-1.0, 1.0],
            2,
            &[0.0, 0.5, 1.0],
            &[0.5],
        )
        .unwrap();
        let csv = report.to_csv();
        assert!(csv.starts_with("quantity,n,x,value\n"));
        assert!(csv.contains("pgf,2,0.5,"));
        assert!(csv.contains("laplace,2,0.5,"));
        assert!((report.mean - 4.0).abs() <= 1e-10);
    }
}
