//! Stochastic verification at scales the enumeration oracle cannot reach:
//! shared-innovation coupling estimates, event-driven leaf dynamics, random
//! model generation, and the random search for critical symmetric models.

use crate::endogeny;
use crate::error::{Error, Result};
use crate::kernels::{self, PairMeasure};
use crate::model::{self, RtpModel};
use crate::scalar::Scalar;
use crate::spectral::SpectralData;
use crate::superop::GeneratorQ;

pub use crate::rng::RngStream;

/// Mutable configuration of the depth-`n` tree: leaf states move, innovations
/// stay fixed, internal states are recomputed along the changed path.
#[derive(Clone, Debug)]
pub struct TreeConfig {
    pub level: usize,
    /// Heap-ordered states of all vertices of the first `n + 1` levels.
    pub states: Vec<usize>,
    /// Heap-ordered innovations of the internal vertices.
    pub innovations: Vec<usize>,
    /// Vertices recomputed by leaf updates; each update touches exactly the
    /// root path.
    pub recompute_count: u64,
}

impl TreeConfig {
    pub fn n_leaves(&self) -> usize {
        1 << self.level
    }

    pub fn n_internal(&self) -> usize {
        (1 << self.level) - 1
    }

    pub fn root(&self) -> usize {
        self.states[0]
    }

    pub fn leaf_state(&self, leaf: usize) -> usize {
        self.states[self.n_internal() + leaf]
    }

    /// Set one leaf and recompute its root path; returns the new root state.
    pub fn set_leaf<T: Scalar>(&mut self, model: &RtpModel<T>, leaf: usize, state: usize) -> usize {
        let mut v = self.n_internal() + leaf;
        self.states[v] = state;
        while v > 0 {
            v = (v - 1) / 2;
            self.states[v] = model.phi.get(
                self.states[2 * v + 1],
                self.states[2 * v + 2],
                self.innovations[v],
            );
            self.recompute_count += 1;
        }
        self.states[0]
    }

    fn rebuild<T: Scalar>(&mut self, model: &RtpModel<T>) {
        for v in (0..self.n_internal()).rev() {
            self.states[v] = model.phi.get(
                self.states[2 * v + 1],
                self.states[2 * v + 2],
                self.innovations[v],
            );
        }
    }

    /// Check the recursion relation at every internal vertex.
    pub fn recursion_holds<T: Scalar>(&self, model: &RtpModel<T>) -> bool {
        (0..self.n_internal()).all(|v| {
            self.states[v]
                == model.phi.get(
                    self.states[2 * v + 1],
                    self.states[2 * v + 2],
                    self.innovations[v],
                )
        })
    }
}

/// Draw a stationary configuration: leaves i.i.d. `mu`, innovations i.i.d.
/// `nu`, internal states filled bottom-up.
pub fn sample_config<T: Scalar>(
    model: &RtpModel<T>,
    level: usize,
    rng: &mut RngStream,
) -> TreeConfig {
    let leaves = 1usize << level;
    let internal = leaves - 1;
    let mut config = TreeConfig {
        level,
        states: vec![0; 2 * leaves - 1],
        innovations: (0..internal)
            .map(|_| rng.sample_discrete(&model.nu))
            .collect(),
        recompute_count: 0,
    };
    for leaf in 0..leaves {
        config.states[internal + leaf] = rng.sample_discrete(&model.mu);
    }
    config.rebuild(model);
    config
}

/// Shared-innovation coupling estimate: probability that two roots differ
/// when the innovations agree and the leaf sets are independent.
///
/// Trials are assigned their own derived streams, so the estimate is
/// bit-identical for any worker count.
pub fn coupling_estimate<T: Scalar>(
    model: &RtpModel<T>,
    level: usize,
    trials: usize,
    threads: usize,
    rng: &RngStream,
) -> Result<(T, T)> {
    if trials < 100 {
        return Err(Error::Simulation(format!(
            "coupling estimate needs at least 100 trials (got {trials})"
        )));
    }
    let run_range = |lo: usize, hi: usize| -> u64 {
        let mut disagreements = 0u64;
        for trial in lo..hi {
            let mut trial_rng = rng.substream(trial as u64);
            let mut config = sample_config(model, level, &mut trial_rng);
            let root_a = config.root();
            for leaf in 0..config.n_leaves() {
                let state = trial_rng.sample_discrete(&model.mu);
                config.set_leaf(model, leaf, state);
            }
            if config.root() != root_a {
                disagreements += 1;
            }
        }
        disagreements
    };

    let workers = threads.max(1).min(trials);
    let disagreements: u64 = if workers == 1 {
        run_range(0, trials)
    } else {
        let chunk = trials.div_ceil(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let run = &run_range;
                    scope.spawn(move || run(w * chunk, ((w + 1) * chunk).min(trials)))
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker")).sum()
        })
    };

    let p = T::of(disagreements as f64 / trials as f64);
    let se = (p * (T::one() - p) / T::of(trials as f64)).sqrt();
    Ok((p, se))
}

/// Piecewise-constant root path of an event-driven simulation.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    /// Times of root changes; `times[0] = 0` carries the initial state.
    pub times: Vec<T>,
    pub states: Vec<usize>,
    pub t_end: T,
    pub events: u64,
    /// `(seed, stream)` of the generator that produced the run.
    pub seed: (u64, u64),
}

impl<T: Scalar> Trajectory<T> {
    pub fn state_at(&self, t: T) -> usize {
        match self.times.iter().rposition(|&u| u <= t) {
            Some(i) => self.states[i],
            None => self.states[0],
        }
    }

    /// CSV with the seed in the header comment.
    pub fn to_csv(&self, state_labels: &[String]) -> String {
        let mut out = format!(
            "# seed={} stream={}\ntime,state\n",
            self.seed.0, self.seed.1
        );
        for (t, s) in self.times.iter().zip(&self.states) {
            out.push_str(&format!("{},{}\n", t.as_f64(), state_labels[*s]));
        }
        out
    }
}

fn push_root_change<T: Scalar>(traj: &mut Trajectory<T>, t: T, root: usize) {
    if *traj.states.last().expect("initialized") != root {
        traj.times.push(t);
        traj.states.push(root);
    }
}

/// Event-driven simulation of the slowed leaf-jump dynamics: every leaf is an
/// independent copy of the jump process of the generator, slowed by
/// `(2 rho)^-level`, with the innovations frozen.
pub fn gillespie_generator_dynamics<T: Scalar>(
    model: &RtpModel<T>,
    rho: T,
    q: &GeneratorQ<T>,
    level: usize,
    t_end: T,
    rng: &mut RngStream,
) -> Result<Trajectory<T>> {
    let s = model.n_states();
    for x in 0..s {
        for y in 0..s {
            if x != y && q.op.mat[(x, y)] < T::zero() {
                return Err(Error::Simulation(
                    "generator has a negative off-diagonal rate; refusing to simulate".into(),
                ));
            }
        }
    }
    let speed = (T::of(2.0) * rho).powi(-(level as i32));
    let exit_rate: Vec<T> = (0..s).map(|x| -q.op.mat[(x, x)] * speed).collect();
    // Jump distribution per state (off-diagonal row, normalized).
    let jump: Vec<Vec<T>> = (0..s)
        .map(|x| {
            let total = -q.op.mat[(x, x)];
            (0..s)
                .map(|y| {
                    if y == x || total <= T::zero() {
                        T::zero()
                    } else {
                        q.op.mat[(x, y)] / total
                    }
                })
                .collect()
        })
        .collect();

    let mut config = sample_config(model, level, rng);
    let leaves = config.n_leaves();
    let mut rates: Vec<T> = (0..leaves)
        .map(|u| exit_rate[config.leaf_state(u)])
        .collect();
    let mut total_rate: T = rates.iter().copied().sum();

    let mut traj = Trajectory {
        times: vec![T::zero()],
        states: vec![config.root()],
        t_end,
        events: 0,
        seed: rng.id(),
    };
    let mut t = T::zero();
    while total_rate > T::zero() {
        let dt = T::of(rng.next_exponential(total_rate.as_f64()));
        t = t + dt;
        if t > t_end {
            break;
        }
        // Pick the jumping leaf proportionally to its rate; the fallback on
        // boundary roundoff is the last leaf with a positive rate.
        let mut target = T::of(rng.next_f64()) * total_rate;
        let mut leaf = 0;
        for (u, &r) in rates.iter().enumerate() {
            if r <= T::zero() {
                continue;
            }
            leaf = u;
            if target < r {
                break;
            }
            target = target - r;
        }
        let from = config.leaf_state(leaf);
        let to = rng.sample_discrete(&jump[from]);
        let root = config.set_leaf(model, leaf, to);
        total_rate = total_rate - rates[leaf];
        rates[leaf] = exit_rate[to];
        total_rate = total_rate + rates[leaf];
        traj.events += 1;
        push_root_change(&mut traj, t, root);
    }
    Ok(traj)
}

/// Event-driven simulation of the unit-rate leaf refresh dynamics: each leaf
/// resamples from `mu` at rate one, innovations frozen.
pub fn refresh_dynamics<T: Scalar>(
    model: &RtpModel<T>,
    level: usize,
    t_end: T,
    rng: &mut RngStream,
) -> Trajectory<T> {
    let mut config = sample_config(model, level, rng);
    let leaves = config.n_leaves();
    let total_rate = leaves as f64;
    let mut traj = Trajectory {
        times: vec![T::zero()],
        states: vec![config.root()],
        t_end,
        events: 0,
        seed: rng.id(),
    };
    let mut t = T::zero();
    loop {
        let dt = T::of(rng.next_exponential(total_rate));
        t = t + dt;
        if t > t_end {
            break;
        }
        let leaf = rng.next_range(leaves);
        let state = rng.sample_discrete(&model.mu);
        let root = config.set_leaf(model, leaf, state);
        traj.events += 1;
        push_root_change(&mut traj, t, root);
    }
    traj
}

/// One autocovariance estimate.
#[derive(Clone, Copy, Debug)]
pub struct Autocov<T> {
    pub lag: T,
    pub estimate: T,
    pub se: T,
}

/// Number of batches for the batch-means standard errors.
pub const AUTOCOV_BATCHES: usize = 32;

/// Time-average estimate of `E[f(X_0) f(X_lag)]` over a stationary-start
/// trajectory, with batch-means standard errors over 32 batches.
pub fn autocovariance<T: Scalar>(traj: &Trajectory<T>, f: &[T], lags: &[T]) -> Vec<Autocov<T>> {
    lags.iter()
        .map(|&lag| {
            let window = traj.t_end - lag;
            assert!(window > T::zero(), "lag exceeds the trajectory length");
            let batches = AUTOCOV_BATCHES;
            let bsize = window / T::of(batches as f64);
            let mut batch_integrals = vec![T::zero(); batches];

            let times = &traj.times;
            let states = &traj.states;
            let next_time = |i: usize| -> T {
                if i + 1 < times.len() {
                    times[i + 1]
                } else {
                    T::infinity()
                }
            };
            let mut a = 0usize;
            let mut b = times.iter().rposition(|&u| u <= lag).unwrap_or(0);
            let mut u = T::zero();
            let mut k = 0usize;
            while u < window {
                let batch_edge = if k + 1 < batches {
                    T::of((k + 1) as f64) * bsize
                } else {
                    window
                };
                let next = next_time(a)
                    .min(next_time(b) - lag)
                    .min(batch_edge)
                    .min(window);
                let g = f[states[a]] * f[states[b]];
                batch_integrals[k] = batch_integrals[k] + (next - u) * g;
                u = next;
                if u >= window {
                    break;
                }
                if next_time(a) <= u {
                    a += 1;
                }
                while next_time(b) - lag <= u {
                    b += 1;
                }
                if batch_edge <= u && k + 1 < batches {
                    k += 1;
                }
            }

            let means: Vec<T> = batch_integrals.iter().map(|&v| v / bsize).collect();
            let mean: T = means.iter().copied().sum::<T>() / T::of(batches as f64);
            let var: T = means.iter().map(|&m| (m - mean) * (m - mean)).sum::<T>()
                / T::of((batches - 1) as f64);
            let se = (var / T::of(batches as f64)).sqrt();
            Autocov {
                lag,
                estimate: mean,
                se,
            }
        })
        .collect()
}

/// Retry budget of [`random_model`].
const RANDOM_MODEL_RETRIES: usize = 60;

/// Draw a random total recursion table (symmetrized on request) and a random
/// innovation measure, then solve for the invariant state measure. The
/// returned model has passed validation (zero-mass states trimmed).
pub fn random_model<T: Scalar>(
    n_states: usize,
    n_innovations: usize,
    symmetric: bool,
    rng: &mut RngStream,
) -> Result<RtpModel<T>> {
    for _ in 0..RANDOM_MODEL_RETRIES {
        let mut table = vec![0usize; n_states * n_states * n_innovations];
        for x0 in 0..n_states {
            for x1 in 0..n_states {
                for z in 0..n_innovations {
                    let idx = (x0 * n_states + x1) * n_innovations + z;
                    if symmetric && x1 < x0 {
                        table[idx] = table[(x1 * n_states + x0) * n_innovations + z];
                    } else {
                        table[idx] = rng.next_range(n_states);
                    }
                }
            }
        }
        let phi = model::PhiTable::new(n_states, n_innovations, table).expect("targets in range");
        // Innovation masses bounded away from zero keep the model generic.
        let raw: Vec<f64> = (0..n_innovations)
            .map(|_| 0.05 + 0.95 * rng.next_f64())
            .collect();
        let total: f64 = raw.iter().sum();
        let nu: Vec<T> = raw.iter().map(|&w| T::of(w / total)).collect();
        let mu = match model::find_invariant(&phi, &nu, 4000, T::of(1e-13)) {
            Ok(mu) => mu,
            Err(_) => continue,
        };
        let candidate = RtpModel::new(
            (0..n_states).map(|i| format!("s{i}")).collect(),
            (0..n_innovations).map(|i| format!("e{i}")).collect(),
            mu,
            nu,
            phi,
        )?;
        let validated = model::validate(&candidate, &model::Tolerances::default())?;
        if validated.report.ok {
            return Ok(validated.model);
        }
    }
    Err(Error::Simulation(format!(
        "no valid random model found in {RANDOM_MODEL_RETRIES} attempts"
    )))
}

/// Random coupling of `mu` with itself: a positive random matrix scaled to
/// both marginals by Sinkhorn iteration.
pub fn random_coupling<T: Scalar>(mu: &[T], rng: &mut RngStream) -> PairMeasure<T> {
    let s = mu.len();
    let mut w = vec![T::zero(); s * s];
    for entry in w.iter_mut() {
        *entry = T::of(0.05 + rng.next_f64());
    }
    for _ in 0..400 {
        let mut worst = T::zero();
        for x in 0..s {
            let row: T = (0..s).map(|y| w[x * s + y]).sum();
            let scale = mu[x] / row;
            worst = worst.max((scale - T::one()).abs());
            for y in 0..s {
                w[x * s + y] = w[x * s + y] * scale;
            }
        }
        for y in 0..s {
            let col: T = (0..s).map(|x| w[x * s + y]).sum();
            let scale = mu[y] / col;
            worst = worst.max((scale - T::one()).abs());
            for x in 0..s {
                w[x * s + y] = w[x * s + y] * scale;
            }
        }
        if worst <= T::of(1e-15) {
            break;
        }
    }
    PairMeasure::from_weights(s, w)
}

/// A model retained by the critical search.
#[derive(Clone, Debug)]
pub struct SearchCandidate<T> {
    pub model: RtpModel<T>,
    pub rho: T,
    /// Coercivity eigenvalues per probed depth.
    pub coercivity_trace: Vec<(usize, T)>,
}

/// Filter one model against the critical-search criteria: symmetric, spectral
/// radius within `band` of the threshold, irreducible off-diagonal kernel,
/// and an unresolved coercivity check with a tiny final eigenvalue.
pub fn evaluate_candidate<T: Scalar>(
    model: &RtpModel<T>,
    band: T,
) -> Result<Option<SearchCandidate<T>>> {
    if !model.is_symmetric() {
        return Ok(None);
    }
    let kernel = kernels::two_point_kernel(model);
    let spectral = SpectralData::compute(&kernel, &model.mu)?;
    if (spectral.two_rho() - T::one()).abs() >= band {
        return Ok(None);
    }
    if !spectral.irreducible {
        return Ok(None);
    }
    let coercivity = endogeny::innovation_coercivity(model, 3, 1)?;
    if coercivity.resolved.is_some() {
        return Ok(None);
    }
    let last = coercivity
        .trace
        .last()
        .map(|&(_, eps)| eps)
        .unwrap_or_else(T::zero);
    if last >= T::of(1e-6) {
        return Ok(None);
    }
    Ok(Some(SearchCandidate {
        model: model.clone(),
        rho: spectral.rho,
        coercivity_trace: coercivity.trace,
    }))
}

/// Random scan for symmetric models that sit in the critical band with an
/// irreducible off-diagonal kernel yet an unresolved coercivity check.
/// Emits candidates for human inspection; no claim of success attaches.
pub fn search_critical_symmetric<T: Scalar>(
    rng: &mut RngStream,
    budget: usize,
    band: T,
) -> Vec<SearchCandidate<T>> {
    let mut found = Vec::new();
    for _ in 0..budget {
        let s = 2 + rng.next_range(3);
        let e = 2 + rng.next_range(3);
        let model = match random_model::<T>(s, e, true, rng) {
            Ok(m) => m,
            Err(_) => continue,
        };
        if let Ok(Some(candidate)) = evaluate_candidate(&model, band) {
            found.push(candidate);
        }
    }
    found
}
