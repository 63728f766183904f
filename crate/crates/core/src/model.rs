//! Finite recursive-tree-process models: alphabets, measures, and the
//! recursion table, together with validation, invariant-measure search,
//! builtin instances and the canonical JSON file format.

use std::collections::HashSet;
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Total recursion table `phi: (state, state, innovation) -> state`.
///
/// Stored flat, indexed `(x0 * s + x1) * e + z`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhiTable {
    n_states: usize,
    n_innovations: usize,
    table: Vec<usize>,
}

impl PhiTable {
    pub fn new(n_states: usize, n_innovations: usize, table: Vec<usize>) -> Result<Self> {
        if n_states == 0 || n_innovations == 0 {
            return Err(Error::InvalidModel(
                "state and innovation sets must be non-empty".into(),
            ));
        }
        if table.len() != n_states * n_states * n_innovations {
            return Err(Error::InvalidModel(format!(
                "recursion table has {} entries, expected {}",
                table.len(),
                n_states * n_states * n_innovations
            )));
        }
        if let Some(&bad) = table.iter().find(|&&t| t >= n_states) {
            return Err(Error::InvalidModel(format!(
                "recursion table targets state index {bad}, but only {n_states} states exist"
            )));
        }
        Ok(PhiTable {
            n_states,
            n_innovations,
            table,
        })
    }

    pub fn from_fn(
        n_states: usize,
        n_innovations: usize,
        f: impl Fn(usize, usize, usize) -> usize,
    ) -> Self {
        let mut table = Vec::with_capacity(n_states * n_states * n_innovations);
        for x0 in 0..n_states {
            for x1 in 0..n_states {
                for z in 0..n_innovations {
                    table.push(f(x0, x1, z));
                }
            }
        }
        PhiTable::new(n_states, n_innovations, table).expect("table built in range")
    }

    #[inline]
    pub fn get(&self, x0: usize, x1: usize, z: usize) -> usize {
        self.table[(x0 * self.n_states + x1) * self.n_innovations + z]
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_innovations(&self) -> usize {
        self.n_innovations
    }

    /// Exact check of `phi(x0, x1, z) == phi(x1, x0, z)` over the whole table.
    pub fn is_symmetric(&self) -> bool {
        for x0 in 0..self.n_states {
            for x1 in 0..x0 {
                for z in 0..self.n_innovations {
                    if self.get(x0, x1, z) != self.get(x1, x0, z) {
                        return false;
                    }
                }
            }
        }
        true
    }
}

/// A finite recursive-tree-process model; the single source of truth for all
/// downstream kernels and operators.
#[derive(Clone, Debug, PartialEq)]
pub struct RtpModel<T> {
    pub states: Vec<String>,
    pub innovations: Vec<String>,
    pub mu: Vec<T>,
    pub nu: Vec<T>,
    pub phi: PhiTable,
}

impl<T: Scalar> RtpModel<T> {
    pub fn new(
        states: Vec<String>,
        innovations: Vec<String>,
        mu: Vec<T>,
        nu: Vec<T>,
        phi: PhiTable,
    ) -> Result<Self> {
        if states.len() != phi.n_states() || innovations.len() != phi.n_innovations() {
            return Err(Error::InvalidModel(
                "label lists do not match the recursion table dimensions".into(),
            ));
        }
        if mu.len() != states.len() || nu.len() != innovations.len() {
            return Err(Error::InvalidModel(
                "measure vectors do not match the label lists".into(),
            ));
        }
        for (name, labels) in [("state", &states), ("innovation", &innovations)] {
            let mut seen = HashSet::new();
            for l in labels.iter() {
                if !seen.insert(l) {
                    return Err(Error::InvalidModel(format!("duplicate {name} label `{l}`")));
                }
            }
        }
        Ok(RtpModel {
            states,
            innovations,
            mu,
            nu,
            phi,
        })
    }

    pub fn n_states(&self) -> usize {
        self.states.len()
    }

    pub fn n_innovations(&self) -> usize {
        self.innovations.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.phi.is_symmetric()
    }

    /// Image of `a (x) b (x) nu` under the recursion table.
    pub fn pushforward(&self, a: &[T], b: &[T]) -> Vec<T> {
        let s = self.n_states();
        let e = self.n_innovations();
        let mut out = vec![T::zero(); s];
        for x0 in 0..s {
            if a[x0] == T::zero() {
                continue;
            }
            for x1 in 0..s {
                let w = a[x0] * b[x1];
                if w == T::zero() {
                    continue;
                }
                for z in 0..e {
                    out[self.phi.get(x0, x1, z)] = out[self.phi.get(x0, x1, z)] + w * self.nu[z];
                }
            }
        }
        out
    }

    /// Sup-norm deviation of the pushforward of `mu (x) mu (x) nu` from `mu`.
    pub fn invariance_residual(&self) -> T {
        let image = self.pushforward(&self.mu, &self.mu);
        crate::linalg::sup_distance(&image, &self.mu)
    }

    /// Relabel states and innovations: position `i` of the new model is the
    /// old position `state_perm[i]` (resp. `innov_perm[i]`).
    pub fn permuted(&self, state_perm: &[usize], innov_perm: &[usize]) -> Self {
        let s = self.n_states();
        let e = self.n_innovations();
        assert_eq!(state_perm.len(), s);
        assert_eq!(innov_perm.len(), e);
        let mut new_of_old = vec![0usize; s];
        for (new, &old) in state_perm.iter().enumerate() {
            new_of_old[old] = new;
        }
        let phi = PhiTable::from_fn(s, e, |x0, x1, z| {
            new_of_old[self.phi.get(state_perm[x0], state_perm[x1], innov_perm[z])]
        });
        RtpModel {
            states: state_perm.iter().map(|&i| self.states[i].clone()).collect(),
            innovations: innov_perm
                .iter()
                .map(|&i| self.innovations[i].clone())
                .collect(),
            mu: state_perm.iter().map(|&i| self.mu[i]).collect(),
            nu: innov_perm.iter().map(|&i| self.nu[i]).collect(),
            phi,
        }
    }
}

/// Numerical tolerances for [`validate`].
#[derive(Clone, Copy, Debug)]
pub struct Tolerances<T> {
    /// Allowed deviation of the mass sums of `mu` and `nu` from one.
    pub mass_sum: T,
    /// Allowed sup-norm invariance residual.
    pub invariance: T,
    /// States with `mu` at or below this threshold are trimmed.
    pub trim: T,
}

impl<T: Scalar> Default for Tolerances<T> {
    fn default() -> Self {
        Tolerances {
            mass_sum: T::of(1e-12),
            invariance: T::of(1e-10),
            trim: T::of(1e-12),
        }
    }
}

/// Findings of [`validate`].
#[derive(Clone, Debug)]
pub struct ValidationReport<T> {
    /// All hard invariants hold after trimming.
    pub ok: bool,
    /// Recursion table symmetric in its first two arguments (warning only).
    pub symmetric: bool,
    /// Sup-norm invariance residual of the retained model.
    pub invariance_residual: T,
    /// Labels of removed zero-mass states.
    pub trimmed_states: Vec<String>,
    pub messages: Vec<String>,
}

impl<T: Scalar> ValidationReport<T> {
    pub fn to_json(&self) -> Value {
        json!({
            "ok": self.ok,
            "symmetric": self.symmetric,
            "invariance_residual": self.invariance_residual.as_f64(),
            "trimmed_states": self.trimmed_states,
            "messages": self.messages,
        })
    }
}

/// Outcome of [`validate`]: the retained model plus the report.
#[derive(Clone, Debug)]
pub struct Validated<T> {
    pub model: RtpModel<T>,
    pub report: ValidationReport<T>,
}

/// Check the numeric invariants of a model, trimming zero-mass states.
///
/// Structural problems (out-of-range recursion targets and friends) are hard
/// errors and are already rejected by the constructors; this function reports
/// on the probabilistic invariants. Asymmetry of the recursion table is a
/// warning, not a failure: only the two-point classification needs it.
pub fn validate<T: Scalar>(model: &RtpModel<T>, tol: &Tolerances<T>) -> Result<Validated<T>> {
    let mut messages = Vec::new();
    let mut ok = true;

    for (name, v) in [("mu", &model.mu), ("nu", &model.nu)] {
        let total: T = v.iter().copied().sum();
        let dev = (total - T::one()).abs();
        if dev > tol.mass_sum {
            ok = false;
            messages.push(format!(
                "{name} sums to {total}, deviating from 1 by {:.3e}",
                dev.as_f64()
            ));
        }
        if v.iter().any(|&p| p < T::zero()) {
            ok = false;
            messages.push(format!("{name} has a negative entry"));
        }
    }

    let symmetric = model.is_symmetric();
    if !symmetric {
        messages.push(
            "recursion table is not symmetric in its first two arguments; \
             the two-point classification will be indeterminate"
                .into(),
        );
    }

    // Trim states carrying no mass, re-indexing the recursion table.
    let keep: Vec<usize> = (0..model.n_states())
        .filter(|&x| model.mu[x] > tol.trim)
        .collect();
    let mut trimmed_states = Vec::new();
    let mut retained = model.clone();
    if keep.is_empty() {
        ok = false;
        messages.push("mu carries no mass above the trim threshold".into());
    } else if keep.len() < model.n_states() {
        trimmed_states = (0..model.n_states())
            .filter(|x| !keep.contains(x))
            .map(|x| model.states[x].clone())
            .collect();
        // The retained states must be closed under the recursion wherever the
        // innovation carries mass; otherwise trimming would corrupt the table.
        let mut escapes = false;
        for &x0 in &keep {
            for &x1 in &keep {
                for z in 0..model.n_innovations() {
                    if model.nu[z] > tol.trim && !keep.contains(&model.phi.get(x0, x1, z)) {
                        escapes = true;
                    }
                }
            }
        }
        if escapes {
            ok = false;
            messages.push(format!(
                "states {:?} carry no mass but are reachable from the retained states; \
                 not trimmed",
                trimmed_states
            ));
            trimmed_states.clear();
        } else {
            let mut index_of = vec![usize::MAX; model.n_states()];
            for (new, &old) in keep.iter().enumerate() {
                index_of[old] = new;
            }
            let total: T = keep.iter().map(|&x| model.mu[x]).sum();
            let states = keep.iter().map(|&x| model.states[x].clone()).collect();
            let mu = keep.iter().map(|&x| model.mu[x] / total).collect();
            let phi = PhiTable::from_fn(keep.len(), model.n_innovations(), |x0, x1, z| {
                index_of[model.phi.get(keep[x0], keep[x1], z)]
            });
            retained = RtpModel::new(states, model.innovations.clone(), mu, model.nu.clone(), phi)?;
            messages.push(format!("trimmed zero-mass states {:?}", trimmed_states));
        }
    }

    let invariance_residual = retained.invariance_residual();
    if invariance_residual > tol.invariance {
        ok = false;
        messages.push(format!(
            "mu is not invariant under the recursion: residual {:.3e}",
            invariance_residual.as_f64()
        ));
    }

    Ok(Validated {
        model: retained,
        report: ValidationReport {
            ok,
            symmetric,
            invariance_residual,
            trimmed_states,
            messages,
        },
    })
}

/// Search for an invariant measure by fixed-point iteration of
/// `mu -> pushforward(mu, mu)` from the uniform start.
///
/// Failure to converge does not prove that no invariant measure exists.
pub fn find_invariant<T: Scalar>(
    phi: &PhiTable,
    nu: &[T],
    max_iter: usize,
    tol: T,
) -> Result<Vec<T>> {
    let s = phi.n_states();
    let e = phi.n_innovations();
    assert_eq!(nu.len(), e, "nu does not match the recursion table");
    let mut mu = vec![T::one() / T::of(s as f64); s];
    let mut residual = T::infinity();
    for _ in 0..max_iter {
        let mut image = vec![T::zero(); s];
        for x0 in 0..s {
            for x1 in 0..s {
                let w = mu[x0] * mu[x1];
                if w == T::zero() {
                    continue;
                }
                for z in 0..e {
                    image[phi.get(x0, x1, z)] = image[phi.get(x0, x1, z)] + w * nu[z];
                }
            }
        }
        residual = crate::linalg::sup_distance(&image, &mu);
        if residual <= tol {
            return Ok(mu);
        }
        // The exact iteration preserves total mass one; renormalizing removes
        // the rounding drift along the mass direction, which the squaring
        // otherwise amplifies doubly exponentially.
        let total: T = image.iter().copied().sum();
        if total <= T::zero() {
            break;
        }
        mu = image.iter().map(|&w| w / total).collect();
    }
    Err(Error::NoConvergence {
        what: "invariant measure iteration",
        iterations: max_iter,
        residual: residual.as_f64(),
    })
}

/// Names of the builtin models.
pub const BUILTIN_NAMES: [&str; 6] = [
    "SELECT",
    "CONST",
    "PURE-INNOVATION",
    "XOR",
    "ANDOR",
    "ANDOR-NOISE",
];

/// Construct a builtin model by name.
///
/// * `SELECT` — the innovation picks which of the two daughter states the
///   vertex copies; critical and not symmetric.
/// * `CONST` — every recursion output is one fixed state; the second state
///   carries no mass and is trimmed by validation.
/// * `PURE-INNOVATION` — the vertex state is the innovation itself.
/// * `XOR` — sign states, output is the product of both daughters and the
///   innovation; supercritical.
/// * `ANDOR` — boolean states, the innovation selects min or max; critical.
/// * `ANDOR-NOISE` — as `ANDOR` plus two refresh symbols that overwrite the
///   output with a constant; subcritical.
pub fn builtin<T: Scalar>(name: &str) -> Result<RtpModel<T>> {
    let half = T::of(0.5);
    let quarter = T::of(0.25);
    match name {
        "SELECT" => RtpModel::new(
            vec!["-1".into(), "+1".into()],
            vec!["0".into(), "1".into()],
            vec![half, half],
            vec![half, half],
            PhiTable::from_fn(2, 2, |x0, x1, z| if z == 0 { x0 } else { x1 }),
        ),
        "CONST" => RtpModel::new(
            vec!["a".into(), "b".into()],
            vec!["z".into()],
            vec![T::one(), T::zero()],
            vec![T::one()],
            PhiTable::from_fn(2, 1, |_, _, _| 0),
        ),
        "PURE-INNOVATION" => RtpModel::new(
            vec!["0".into(), "1".into()],
            vec!["0".into(), "1".into()],
            vec![half, half],
            vec![half, half],
            PhiTable::from_fn(2, 2, |_, _, z| z),
        ),
        "XOR" => RtpModel::new(
            vec!["-1".into(), "+1".into()],
            vec!["-1".into(), "+1".into()],
            vec![half, half],
            vec![half, half],
            // States and innovations encode -1 as index 0 and +1 as index 1;
            // the sign product of all three is the bit parity.
            PhiTable::from_fn(2, 2, |x0, x1, z| x0 ^ x1 ^ z),
        ),
        "ANDOR" => RtpModel::new(
            vec!["0".into(), "1".into()],
            vec!["and".into(), "or".into()],
            vec![half, half],
            vec![half, half],
            PhiTable::from_fn(
                2,
                2,
                |x0, x1, z| if z == 0 { x0.min(x1) } else { x0.max(x1) },
            ),
        ),
        "ANDOR-NOISE" => RtpModel::new(
            vec!["0".into(), "1".into()],
            vec!["and".into(), "or".into(), "fresh0".into(), "fresh1".into()],
            vec![half, half],
            vec![quarter, quarter, quarter, quarter],
            PhiTable::from_fn(2, 4, |x0, x1, z| match z {
                0 => x0.min(x1),
                1 => x0.max(x1),
                2 => 0,
                _ => 1,
            }),
        ),
        other => Err(Error::UnknownBuiltin(other.to_string())),
    }
}

fn parse_probability<T: Scalar>(v: &Value, what: &str, notes: &mut Vec<String>) -> Result<T> {
    match v {
        Value::Number(n) => n
            .as_f64()
            .map(T::of)
            .ok_or_else(|| Error::ModelFile(format!("{what}: number out of range"))),
        Value::String(s) => {
            if let Some((p, q)) = s.split_once('/') {
                let p: f64 = p
                    .trim()
                    .parse()
                    .map_err(|_| Error::ModelFile(format!("{what}: bad rational `{s}`")))?;
                let q: f64 = q
                    .trim()
                    .parse()
                    .map_err(|_| Error::ModelFile(format!("{what}: bad rational `{s}`")))?;
                if q == 0.0 {
                    return Err(Error::ModelFile(format!(
                        "{what}: zero denominator in `{s}`"
                    )));
                }
                notes.push(format!(
                    "{what}: rational `{s}` parsed to nearest binary double {}",
                    p / q
                ));
                Ok(T::of(p / q))
            } else {
                let x: f64 = s
                    .trim()
                    .parse()
                    .map_err(|_| Error::ModelFile(format!("{what}: bad number `{s}`")))?;
                Ok(T::of(x))
            }
        }
        _ => Err(Error::ModelFile(format!(
            "{what}: expected a number or a rational string"
        ))),
    }
}

fn string_array(v: &Value, key: &str) -> Result<Vec<String>> {
    v.get(key)
        .and_then(Value::as_array)
        .ok_or_else(|| Error::ModelFile(format!("missing array `{key}`")))?
        .iter()
        .map(|s| {
            s.as_str()
                .map(str::to_string)
                .ok_or_else(|| Error::ModelFile(format!("`{key}` entries must be strings")))
        })
        .collect()
}

impl<T: Scalar> RtpModel<T> {
    /// Parse the canonical JSON object; returns the model plus parser notes
    /// (for example rational entries rounded to binary doubles).
    pub fn from_json(v: &Value) -> Result<(Self, Vec<String>)> {
        let mut notes = Vec::new();
        let states = string_array(v, "states")?;
        let innovations = string_array(v, "innovations")?;
        let s = states.len();
        let e = innovations.len();
        let state_index = |label: &str| -> Result<usize> {
            states
                .iter()
                .position(|l| l == label)
                .ok_or_else(|| Error::ModelFile(format!("phi targets unknown state `{label}`")))
        };

        let measure = |key: &str, len: usize, notes: &mut Vec<String>| -> Result<Vec<T>> {
            let arr = v
                .get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| Error::ModelFile(format!("missing array `{key}`")))?;
            if arr.len() != len {
                return Err(Error::ModelFile(format!(
                    "`{key}` has {} entries, expected {len}",
                    arr.len()
                )));
            }
            arr.iter()
                .enumerate()
                .map(|(i, x)| parse_probability(x, &format!("{key}[{i}]"), notes))
                .collect()
        };
        let mu = measure("mu", s, &mut notes)?;
        let nu = measure("nu", e, &mut notes)?;

        let phi_rows = v
            .get("phi")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::ModelFile("missing array `phi`".into()))?;
        if phi_rows.len() != s {
            return Err(Error::ModelFile(format!(
                "`phi` has {} first-index entries, expected {s}",
                phi_rows.len()
            )));
        }
        let mut table = Vec::with_capacity(s * s * e);
        for (x0, row) in phi_rows.iter().enumerate() {
            let row = row
                .as_array()
                .filter(|r| r.len() == s)
                .ok_or_else(|| Error::ModelFile(format!("`phi[{x0}]` must have {s} entries")))?;
            for (x1, cell) in row.iter().enumerate() {
                let cell = cell.as_array().filter(|c| c.len() == e).ok_or_else(|| {
                    Error::ModelFile(format!("`phi[{x0}][{x1}]` must have {e} entries"))
                })?;
                for entry in cell {
                    let label = entry.as_str().ok_or_else(|| {
                        Error::ModelFile("`phi` entries must be state labels".into())
                    })?;
                    table.push(state_index(label)?);
                }
            }
        }
        let phi = PhiTable::new(s, e, table)?;
        Ok((RtpModel::new(states, innovations, mu, nu, phi)?, notes))
    }

    /// Render as the canonical JSON object.
    pub fn to_json(&self) -> Value {
        let s = self.n_states();
        let e = self.n_innovations();
        let phi: Vec<Value> = (0..s)
            .map(|x0| {
                Value::Array(
                    (0..s)
                        .map(|x1| {
                            Value::Array(
                                (0..e)
                                    .map(|z| {
                                        Value::String(self.states[self.phi.get(x0, x1, z)].clone())
                                    })
                                    .collect(),
                            )
                        })
                        .collect(),
                )
            })
            .collect();
        json!({
            "states": self.states,
            "innovations": self.innovations,
            "mu": self.mu.iter().map(|p| p.as_f64()).collect::<Vec<_>>(),
            "nu": self.nu.iter().map(|p| p.as_f64()).collect::<Vec<_>>(),
            "phi": phi,
        })
    }
}

/// Load a model from the canonical JSON file format.
pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<(RtpModel<T>, Vec<String>)> {
    let text = std::fs::read_to_string(path)?;
    let value: Value =
        serde_json::from_str(&text).map_err(|e| Error::ModelFile(format!("bad JSON: {e}")))?;
    RtpModel::from_json(&value)
}

/// Save a model in the canonical JSON file format.
pub fn save<T: Scalar>(model: &RtpModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(&model.to_json()).expect("JSON rendering");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances<f64> {
        Tolerances::default()
    }

    #[test]
    fn select_validates_asymmetric_with_zero_residual() {
        let m: RtpModel<f64> = builtin("SELECT").unwrap();
        let v = validate(&m, &tol()).unwrap();
        assert!(v.report.ok);
        assert!(!v.report.symmetric);
        assert_eq!(v.report.invariance_residual, 0.0);
        assert!(v.report.trimmed_states.is_empty());
    }

    #[test]
    fn const_trims_to_single_state() {
        let m: RtpModel<f64> = builtin("CONST").unwrap();
        let v = validate(&m, &tol()).unwrap();
        assert!(v.report.ok);
        assert!(v.report.symmetric);
        assert_eq!(v.report.trimmed_states, vec!["b".to_string()]);
        assert_eq!(v.model.n_states(), 1);
        // Trimming is idempotent.
        let again = validate(&v.model, &tol()).unwrap();
        assert!(again.report.trimmed_states.is_empty());
        assert_eq!(again.model, v.model);
    }

    #[test]
    fn xor_validates_symmetric_with_zero_residual() {
        let m: RtpModel<f64> = builtin("XOR").unwrap();
        let v = validate(&m, &tol()).unwrap();
        assert!(v.report.ok);
        assert!(v.report.symmetric);
        assert_eq!(v.report.invariance_residual, 0.0);
    }

    #[test]
    fn all_builtins_validate_and_only_select_is_asymmetric() {
        for name in BUILTIN_NAMES {
            let m: RtpModel<f64> = builtin(name).unwrap();
            let v = validate(&m, &tol()).unwrap();
            assert!(v.report.ok, "{name} failed validation");
            assert_eq!(v.report.symmetric, name != "SELECT", "{name} symmetry");
        }
    }

    #[test]
    fn find_invariant_examples() {
        let xor: RtpModel<f64> = builtin("XOR").unwrap();
        let mu = find_invariant(&xor.phi, &xor.nu, 100, 1e-14).unwrap();
        assert_eq!(mu, vec![0.5, 0.5]);

        let cst: RtpModel<f64> = builtin("CONST").unwrap();
        let mu = find_invariant(&cst.phi, &cst.nu, 100, 1e-14).unwrap();
        assert_eq!(mu, vec![1.0, 0.0]);

        let an: RtpModel<f64> = builtin("ANDOR-NOISE").unwrap();
        let mu = find_invariant(&an.phi, &an.nu, 100, 1e-14).unwrap();
        assert!((mu[0] - 0.5).abs() < 1e-13 && (mu[1] - 0.5).abs() < 1e-13);
    }

    #[test]
    fn unknown_builtin_is_an_error() {
        assert!(matches!(
            builtin::<f64>("NOPE"),
            Err(Error::UnknownBuiltin(_))
        ));
    }

    #[test]
    fn save_load_round_trip() {
        let m: RtpModel<f64> = builtin("XOR").unwrap();
        let dir = std::env::temp_dir().join("endotree-model-roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("xor.json");
        save(&m, &path).unwrap();
        let (back, notes) = load::<f64>(&path).unwrap();
        assert_eq!(back, m);
        assert!(notes.is_empty());
    }

    #[test]
    fn short_mass_fails_validation_with_residual() {
        let mut m: RtpModel<f64> = builtin("XOR").unwrap();
        m.mu = vec![0.5, 0.4];
        let v = validate(&m, &tol()).unwrap();
        assert!(!v.report.ok);
        assert!(v
            .report
            .messages
            .iter()
            .any(|msg| msg.contains("deviating from 1 by 1.000e-1")));
    }

    #[test]
    fn rational_entries_are_flagged() {
        let text = r#"{
            "states": ["a", "b"],
            "innovations": ["z"],
            "mu": ["1/3", "2/3"],
            "nu": [1.0],
            "phi": [[["a"], ["b"]], [["b"], ["a"]]]
        }"#;
        let value: Value = serde_json::from_str(text).unwrap();
        let (m, notes) = RtpModel::<f64>::from_json(&value).unwrap();
        assert!((m.mu[0] - 1.0 / 3.0).abs() < 1e-16);
        assert_eq!(notes.len(), 2);
        assert!(notes[0].contains("rational"));
    }

    #[test]
    fn out_of_range_phi_is_a_hard_error() {
        assert!(matches!(
            PhiTable::new(2, 1, vec![0, 1, 2, 0]),
            Err(Error::InvalidModel(_))
        ));
    }

    #[test]
    fn duplicate_labels_are_rejected() {
        let err = RtpModel::new(
            vec!["a".into(), "a".into()],
            vec!["z".into()],
            vec![0.5, 0.5],
            vec![1.0],
            PhiTable::from_fn(2, 1, |x0, _, _| x0),
        );
        assert!(matches!(err, Err(Error::InvalidModel(msg)) if msg.contains("duplicate")));
    }

    #[test]
    fn phi_escaping_into_trimmed_state_fails() {
        // mu carries no mass on state 1 but the recursion still reaches it.
        let m = RtpModel::new(
            vec!["a".into(), "b".into()],
            vec!["z".into()],
            vec![1.0, 0.0],
            vec![1.0],
            PhiTable::from_fn(2, 1, |_, _, _| 1),
        )
        .unwrap();
        let v = validate(&m, &tol()).unwrap();
        assert!(!v.report.ok);
        assert!(v.report.trimmed_states.is_empty());
    }
}
