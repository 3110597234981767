//! Weighted least-squares fits of decay curves and charge scans, with
//! parameters optionally fixed per dataset or shared across datasets.
//!
//! ```
//! use oam_dephasing::analytic::DecayCurve;
//! use oam_dephasing::fitting::{fit, FitModel, FitProblem};
//!
//! let times: Vec<f64> = (0..30).map(|i| i as f64 * 0.2e-6).collect();
//! let eff = times.iter().map(|t| 0.05 + 0.4 * (-(t / 2e-6).powi(2)).exp()).collect();
//! let curve = DecayCurve::new(times, eff, None).unwrap();
//! let result = fit(&FitProblem::new(FitModel::SingleGaussian).curve("data", &curve)).unwrap();
//! assert!((result.value(0, "tau").unwrap() / 2e-6 - 1.0).abs() < 1e-8);
//! ```

mod lm;
mod model;

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use lm::{minimize, LeastSquares, LmOutcome, LmSettings};
pub use model::{jacobian, FitModel, InputKind, ParamKind};

use crate::analytic::DecayCurve;
use crate::error::{config, Result};

/// One set of observations: storage times in seconds, or control charges.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub label: String,
    pub kind: InputKind,
    pub inputs: Vec<f64>,
    pub values: Vec<f64>,
    pub stderrs: Option<Vec<f64>>,
}

impl Dataset {
    pub fn from_curve(label: impl Into<String>, curve: &DecayCurve<f64>) -> Self {
        Dataset {
            label: label.into(),
            kind: InputKind::Time,
            inputs: curve.times().to_vec(),
            values: curve.efficiencies().to_vec(),
            stderrs: curve.stderrs().map(<[f64]>::to_vec),
        }
    }

    pub fn scan(
        label: impl Into<String>,
        charges: &[i32],
        values: Vec<f64>,
        stderrs: Option<Vec<f64>>,
    ) -> Result<Self> {
        let label = label.into();
        if charges.len() != values.len() || stderrs.as_ref().is_some_and(|s| s.len() != values.len()) {
            return Err(config(format!("scan `{label}`: column lengths differ")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(config(format!("scan `{label}`: efficiencies must be finite")));
        }
        Ok(Dataset {
            label,
            kind: InputKind::Charge,
            inputs: charges.iter().map(|&m| f64::from(m)).collect(),
            values,
            stderrs,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Per-point weights `1/σ`. Zero standard errors are raised to the
    /// smallest positive one in the set; unit weights when none is positive.
    fn weights(&self) -> Vec<f64> {
        let Some(se) = &self.stderrs else {
            return vec![1.0; self.len()];
        };
        let floor = se.iter().copied().filter(|s| *s > 0.0 && s.is_finite()).fold(f64::INFINITY, f64::min);
        if floor.is_infinite() {
            return vec![1.0; self.len()];
        }
        se.iter().map(|&s| 1.0 / if s > 0.0 && s.is_finite() { s } else { floor }).collect()
    }
}

/// Closed or half-open interval a parameter is confined to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub const UNBOUNDED: Bounds = Bounds { lower: f64::NEG_INFINITY, upper: f64::INFINITY };
    pub const POSITIVE: Bounds = Bounds { lower: 0.0, upper: f64::INFINITY };

    fn default_for(kind: ParamKind) -> Bounds {
        match kind {
            ParamKind::Offset | ParamKind::Amplitude | ParamKind::Center => Bounds::UNBOUNDED,
            ParamKind::GaussianLifetime | ParamKind::ExponentialLifetime | ParamKind::Curvature => {
                Bounds::POSITIVE
            }
        }
    }

    fn contains_strictly(self, v: f64) -> bool {
        v > self.lower && v < self.upper
    }

    /// Moves `v` strictly inside the interval if it is not already.
    fn pull_inside(self, v: f64) -> f64 {
        if self.contains_strictly(v) {
            return v;
        }
        match (self.lower.is_finite(), self.upper.is_finite()) {
            (true, true) => {
                let span = self.upper - self.lower;
                v.clamp(self.lower + 1e-3 * span, self.upper - 1e-3 * span)
            }
            (true, false) => self.lower + self.lower.abs().max(1e-300).max(v.abs()) * 1e-3 + f64::MIN_POSITIVE,
            (false, true) => self.upper - self.upper.abs().max(1e-300).max(v.abs()) * 1e-3 - f64::MIN_POSITIVE,
            (false, false) => if v.is_finite() { v } else { 0.0 },
        }
    }

    fn map(self) -> Map {
        match (self.lower.is_finite(), self.upper.is_finite()) {
            (true, true) => Map::Logistic(self.lower, self.upper),
            (true, false) => Map::Lower(self.lower),
            (false, true) => Map::Upper(self.upper),
            (false, false) => Map::Identity,
        }
    }
}

/// Smooth bijection from an unconstrained internal coordinate onto the bounds.
#[derive(Debug, Clone, Copy)]
enum Map {
    Identity,
    Lower(f64),
    Upper(f64),
    Logistic(f64, f64),
}

impl Map {
    fn external(self, theta: f64) -> f64 {
        match self {
            Map::Identity => theta,
            Map::Lower(lo) => lo + theta.exp(),
            Map::Upper(hi) => hi - theta.exp(),
            Map::Logistic(lo, hi) => lo + (hi - lo) / (1.0 + (-theta).exp()),
        }
    }

    fn internal(self, p: f64) -> f64 {
        match self {
            Map::Identity => p,
            Map::Lower(lo) => (p - lo).ln(),
            Map::Upper(hi) => (hi - p).ln(),
            Map::Logistic(lo, hi) => ((p - lo) / (hi - p)).ln(),
        }
    }

    fn derivative(self, theta: f64) -> f64 {
        match self {
            Map::Identity => 1.0,
            Map::Lower(_) => theta.exp(),
            Map::Upper(_) => -theta.exp(),
            Map::Logistic(lo, hi) => {
                let s = 1.0 / (1.0 + (-theta).exp());
                (hi - lo) * s * (1.0 - s)
            }
        }
    }
}

/// A fit specification, assembled with builder calls and checked by [`fit`].
#[derive(Debug, Clone)]
pub struct FitProblem {
    model: FitModel,
    datasets: Vec<Dataset>,
    fixed: BTreeMap<String, f64>,
    fixed_in: BTreeMap<(usize, String), f64>,
    shared: BTreeSet<String>,
    init: BTreeMap<String, f64>,
    init_in: BTreeMap<(usize, String), f64>,
    bounds: BTreeMap<String, Bounds>,
    settings: LmSettings,
}

impl FitProblem {
    pub fn new(model: FitModel) -> Self {
        FitProblem {
            model,
            datasets: Vec::new(),
            fixed: BTreeMap::new(),
            fixed_in: BTreeMap::new(),
            shared: BTreeSet::new(),
            init: BTreeMap::new(),
            init_in: BTreeMap::new(),
            bounds: BTreeMap::new(),
            settings: LmSettings::default(),
        }
    }

    pub fn model(&self) -> FitModel {
        self.model
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn dataset(mut self, data: Dataset) -> Self {
        self.datasets.push(data);
        self
    }

    pub fn curve(self, label: impl Into<String>, curve: &DecayCurve<f64>) -> Self {
        self.dataset(Dataset::from_curve(label, curve))
    }

    /// Holds `name` at `value` in every dataset. Lifetimes may be fixed to `+∞`.
    pub fn fix(mut self, name: &str, value: f64) -> Self {
        self.fixed.insert(name.to_string(), value);
        self
    }

    /// Holds `name` at `value` in dataset `index` only.
    pub fn fix_in(mut self, index: usize, name: &str, value: f64) -> Self {
        self.fixed_in.insert((index, name.to_string()), value);
        self
    }

    /// Makes `name` a single parameter common to all datasets.
    pub fn share(mut self, name: &str) -> Self {
        self.shared.insert(name.to_string());
        self
    }

    pub fn init(mut self, name: &str, value: f64) -> Self {
        self.init.insert(name.to_string(), value);
        self
    }

    pub fn init_in(mut self, index: usize, name: &str, value: f64) -> Self {
        self.init_in.insert((index, name.to_string()), value);
        self
    }

    pub fn bounds(mut self, name: &str, lower: f64, upper: f64) -> Self {
        self.bounds.insert(name.to_string(), Bounds { lower, upper });
        self
    }

    pub fn settings(mut self, settings: LmSettings) -> Self {
        self.settings = settings;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Free,
    Shared,
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEstimate {
    pub name: String,
    pub value: f64,
    /// Absent for fixed parameters and when the normal matrix is singular.
    pub stderr: Option<f64>,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetFit {
    pub label: String,
    pub n_points: usize,
    /// Parameters fixed to an infinite lifetime are left out.
    pub params: Vec<ParamEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: FitModel,
    pub datasets: Vec<DatasetFit>,
    pub shared: Vec<ParamEstimate>,
    /// Weighted sum of squared residuals at the estimate.
    pub residual_norm: f64,
    pub n_iterations: usize,
    pub converged: bool,
    pub diagnostics: Vec<String>,
    pub cost_history: Vec<f64>,
}

impl FitResult {
    pub fn param(&self, dataset: usize, name: &str) -> Option<&ParamEstimate> {
        self.datasets.get(dataset)?.params.iter().find(|p| p.name == name)
    }

    pub fn value(&self, dataset: usize, name: &str) -> Option<f64> {
        self.param(dataset, name).map(|p| p.value)
    }

    pub fn stderr(&self, dataset: usize, name: &str) -> Option<f64> {
        self.param(dataset, name).and_then(|p| p.stderr)
    }

    pub fn shared(&self, name: &str) -> Option<&ParamEstimate> {
        self.shared.iter().find(|p| p.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Slot {
    Fixed(f64),
    Free(usize),
    Shared(usize),
}

/// The resolved problem: where each model parameter of each dataset comes from.
struct Layout {
    model: FitModel,
    slots: Vec<Vec<Slot>>,
    maps: Vec<Map>,
    names: Vec<String>,
    datasets: Vec<Dataset>,
    weights: Vec<Vec<f64>>,
    n_residuals: usize,
}

impl Layout {
    fn params(&self, k: usize, theta: &DVector<f64>, out: &mut [f64]) {
        for (j, slot) in self.slots[k].iter().enumerate() {
            out[j] = match *slot {
                Slot::Fixed(v) => v,
                Slot::Free(g) | Slot::Shared(g) => self.maps[g].external(theta[g]),
            };
        }
    }
}

impl LeastSquares for Layout {
    fn n_residuals(&self) -> usize {
        self.n_residuals
    }

    fn n_params(&self) -> usize {
        self.maps.len()
    }

    fn residuals(&self, theta: &DVector<f64>, out: &mut DVector<f64>) {
        let mut p = vec![0.0; self.model.param_names().len()];
        let mut row = 0;
        for (k, data) in self.datasets.iter().enumerate() {
            self.params(k, theta, &mut p);
            for ((x, y), w) in data.inputs.iter().zip(&data.values).zip(&self.weights[k]) {
                out[row] = w * (y - self.model.eval(&p, *x));
                row += 1;
            }
        }
    }

    fn jacobian(&self, theta: &DVector<f64>, out: &mut DMatrix<f64>) {
        let n = self.model.param_names().len();
        let mut p = vec![0.0; n];
        let mut grad = vec![0.0; n];
        out.fill(0.0);
        let mut row = 0;
        for (k, data) in self.datasets.iter().enumerate() {
            self.params(k, theta, &mut p);
            for (x, w) in data.inputs.iter().zip(&self.weights[k]) {
                self.model.gradient(&p, *x, &mut grad);
                for (j, slot) in self.slots[k].iter().enumerate() {
                    if let Slot::Free(g) | Slot::Shared(g) = *slot {
                        out[(row, g)] = -w * grad[j] * self.maps[g].derivative(theta[g]);
                    }
                }
                row += 1;
            }
        }
    }
}

fn resolve(problem: &FitProblem) -> Result<(Layout, DVector<f64>)> {
    let model = problem.model;
    let names = model.param_names();
    let kinds = model.param_kinds();
    if problem.datasets.is_empty() {
        return Err(config("fit needs at least one dataset"));
    }
    for data in &problem.datasets {
        if data.kind != model.input_kind() {
            return Err(config(format!(
                "dataset `{}` holds {:?} inputs but model {model} expects {:?}",
                data.label,
                data.kind,
                model.input_kind()
            )));
        }
    }
    let n_data = problem.datasets.len();
    for name in problem
        .fixed
        .keys()
        .chain(&problem.shared)
        .chain(problem.init.keys())
        .chain(problem.bounds.keys())
        .chain(problem.fixed_in.keys().map(|(_, n)| n))
        .chain(problem.init_in.keys().map(|(_, n)| n))
    {
        model.require_param(name)?;
    }
    for &(k, _) in problem.fixed_in.keys().chain(problem.init_in.keys()) {
        if k >= n_data {
            return Err(config(format!("dataset index {k} out of range ({n_data} datasets)")));
        }
    }

    let bounds: Vec<Bounds> = names
        .iter()
        .zip(kinds)
        .map(|(name, kind)| problem.bounds.get(*name).copied().unwrap_or(Bounds::default_for(*kind)))
        .collect();
    for (name, b) in names.iter().zip(&bounds) {
        if !(b.lower < b.upper) || b.lower.is_nan() || b.upper.is_nan() {
            return Err(config(format!("bounds for `{name}` need lower < upper")));
        }
    }

    let fixed_value = |k: usize, name: &str| -> Option<f64> {
        problem.fixed_in.get(&(k, name.to_string())).or_else(|| problem.fixed.get(name)).copied()
    };
    for k in 0..n_data {
        for (name, kind) in names.iter().zip(kinds) {
            let Some(v) = fixed_value(k, name) else { continue };
            let lifetime = matches!(kind, ParamKind::GaussianLifetime | ParamKind::ExponentialLifetime);
            let ok = if lifetime { v > 0.0 } else { v.is_finite() };
            if !ok || v.is_nan() {
                return Err(config(format!("cannot fix `{name}` to {v}")));
            }
            if problem.shared.contains(*name) {
                return Err(config(format!("`{name}` is both shared and fixed")));
            }
        }
    }

    // global ordering: shared parameters first, then per-dataset free ones
    let mut maps = Vec::new();
    let mut global_names = Vec::new();
    let mut shared_index = BTreeMap::new();
    for (j, name) in names.iter().enumerate() {
        if problem.shared.contains(*name) {
            shared_index.insert(j, maps.len());
            maps.push(bounds[j].map());
            global_names.push(name.to_string());
        }
    }
    let mut slots = Vec::with_capacity(n_data);
    for (k, data) in problem.datasets.iter().enumerate() {
        let mut row = Vec::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            row.push(if let Some(v) = fixed_value(k, name) {
                Slot::Fixed(v)
            } else if let Some(&g) = shared_index.get(&j) {
                Slot::Shared(g)
            } else {
                maps.push(bounds[j].map());
                global_names.push(format!("{}:{name}", data.label));
                Slot::Free(maps.len() - 1)
            });
        }
        slots.push(row);
    }

    check_identifiable(model, &slots, &problem.datasets)?;

    let n_residuals: usize = problem.datasets.iter().map(Dataset::len).sum();
    if n_residuals <= maps.len() {
        return Err(config(format!(
            "{n_residuals} data points cannot determine {} free parameters",
            maps.len()
        )));
    }

    // starting point in external coordinates
    let mut start = vec![f64::NAN; maps.len()];
    let mut shared_guesses: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for (k, data) in problem.datasets.iter().enumerate() {
        let guess = initial_guess(model, data, &slots[k]);
        for (j, slot) in slots[k].iter().enumerate() {
            let explicit = problem
                .init_in
                .get(&(k, names[j].to_string()))
                .or_else(|| problem.init.get(names[j]))
                .copied();
            match *slot {
                Slot::Fixed(_) => {}
                Slot::Free(g) => start[g] = explicit.unwrap_or(guess[j]),
                Slot::Shared(g) => match problem.init.get(names[j]) {
                    Some(&v) => start[g] = v,
                    None => shared_guesses.entry(g).or_default().push(guess[j]),
                },
            }
        }
    }
    for (g, guesses) in shared_guesses {
        start[g] = guesses.iter().sum::<f64>() / guesses.len() as f64;
    }

    let mut theta = DVector::zeros(maps.len());
    for k in 0..n_data {
        for (j, slot) in slots[k].iter().enumerate() {
            let (Slot::Free(g) | Slot::Shared(g)) = *slot else { continue };
            let b = bounds[j];
            let mut v = start[g];
            if !b.contains_strictly(v) {
                let user_given = problem.init.contains_key(names[j])
                    || problem.init_in.contains_key(&(k, names[j].to_string()));
                if user_given {
                    return Err(config(format!(
                        "initial value {v} for `{}` lies outside ({}, {})",
                        names[j], b.lower, b.upper
                    )));
                }
                v = b.pull_inside(v);
            }
            theta[g] = maps[g].internal(v);
        }
    }

    let weights = problem.datasets.iter().map(Dataset::weights).collect();
    let layout = Layout {
        model,
        slots,
        maps,
        names: global_names,
        datasets: problem.datasets.clone(),
        weights,
        n_residuals,
    };
    Ok((layout, theta))
}

/// Refuses splits of one decay factor into two indistinguishable ones.
///
/// Both members of a degenerate pair may vary on a dataset only when one is
/// shared and the other is held fixed on some dataset, which pins the shared
/// one there.
fn check_identifiable(model: FitModel, slots: &[Vec<Slot>], datasets: &[Dataset]) -> Result<()> {
    let fixed_somewhere = |j: usize| slots.iter().any(|row| matches!(row[j], Slot::Fixed(_)));
    for &(a, b) in model.degenerate_pairs() {
        let (ia, ib) = (model.param_index(a).unwrap(), model.param_index(b).unwrap());
        for (k, row) in slots.iter().enumerate() {
            let varies = |s: Slot| !matches!(s, Slot::Fixed(_));
            if !(varies(row[ia]) && varies(row[ib])) {
                continue;
            }
            let anchored = (matches!(row[ia], Slot::Shared(_)) && fixed_somewhere(ib))
                || (matches!(row[ib], Slot::Shared(_)) && fixed_somewhere(ia));
            if !anchored {
                return Err(config(format!(
                    "`{a}` and `{b}` cannot both be free on dataset `{}`: their factors have the \
                     same form; fix one, or share one and fix the other on another dataset",
                    datasets[k].label
                )));
            }
        }
    }
    Ok(())
}

/// Heuristic start for every model parameter of one dataset.
fn initial_guess(model: FitModel, data: &Dataset, slots: &[Slot]) -> Vec<f64> {
    let names = model.param_names();
    let kinds = model.param_kinds();
    let lo = data.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = data.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let fixed = |j: usize| match slots[j] {
        Slot::Fixed(v) => Some(v),
        _ => None,
    };
    let c1 = fixed(0).unwrap_or(lo);
    let mut guess = vec![0.0; names.len()];
    guess[0] = c1;
    guess[1] = if hi - c1 > 0.0 { hi - c1 } else { hi.abs().max(1e-3) };

    if model == FitModel::EtaOam {
        let peak = (0..data.len()).max_by(|&a, &b| data.values[a].total_cmp(&data.values[b])).unwrap_or(0);
        let center = data.inputs.get(peak).copied().unwrap_or(0.0);
        let width = oam_width(data, peak, lo, hi).unwrap_or_else(|| {
            let span = data.inputs.iter().fold(0.0f64, |s, x| s.max((x - center).abs()));
            span.max(1.0)
        });
        guess[2] = 1.0 / (width * width);
        guess[3] = center;
        return guess;
    }

    let t_e = one_over_e_time(data, lo, hi);
    let mut budget = 1.0;
    let mut free = 0usize;
    for j in 2..names.len() {
        match fixed(j) {
            Some(tau) => budget -= model::decay_exponent(kinds[j], tau, t_e),
            None => free += 1,
        }
    }
    let share = budget.max(0.1) / free.max(1) as f64;
    for j in 2..names.len() {
        guess[j] = match kinds[j] {
            ParamKind::GaussianLifetime => t_e / share.sqrt(),
            _ => t_e / share,
        };
    }
    guess
}

/// First time the min-max normalized curve falls below `1/e`, interpolated.
fn one_over_e_time(data: &Dataset, lo: f64, hi: f64) -> f64 {
    let last = data.inputs.iter().copied().fold(0.0f64, f64::max);
    let smallest = data.inputs.iter().copied().filter(|t| *t > 0.0).fold(f64::INFINITY, f64::min);
    let fallback = if last > 0.0 { last } else { 1.0 };
    if !(hi > lo) {
        return fallback;
    }
    let target = (-1.0f64).exp();
    let norm = |i: usize| (data.values[i] - lo) / (hi - lo);
    for i in 1..data.len() {
        let (a, b) = (norm(i - 1), norm(i));
        if a >= target && b < target {
            let (t0, t1) = (data.inputs[i - 1], data.inputs[i]);
            let t = t0 + (a - target) / (a - b) * (t1 - t0);
            return if t > 0.0 { t } else { smallest.min(fallback) };
        }
    }
    fallback
}

/// Mean distance from the peak to the `1/e` level on each side that reaches it.
fn oam_width(data: &Dataset, peak: usize, lo: f64, hi: f64) -> Option<f64> {
    if !(hi > lo) {
        return None;
    }
    let target = (-1.0f64).exp();
    let norm = |i: usize| (data.values[i] - lo) / (hi - lo);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.inputs[a].total_cmp(&data.inputs[b]));
    let pos = order.iter().position(|&i| i == peak)?;
    let crossing = |path: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = peak;
        for i in path {
            if norm(i) < target {
                let (a, b) = (norm(prev), norm(i));
                let x = data.inputs[prev] + (a - target) / (a - b) * (data.inputs[i] - data.inputs[prev]);
                return Some((x - data.inputs[peak]).abs());
            }
            prev = i;
        }
        None
    };
    let right = crossing(&mut order[pos + 1..].iter().copied());
    let left = crossing(&mut order[..pos].iter().rev().copied());
    match (left, right) {
        (Some(a), Some(b)) => Some(0.5 * (a + b)),
        (a, b) => a.or(b),
    }
}

/// Runs the fit described by `problem`.
pub fn fit(problem: &FitProblem) -> Result<FitResult> {
    let (layout, theta0) = resolve(problem)?;
    let outcome = minimize(&layout, theta0, &layout.names, &problem.settings);
    Ok(assemble(&layout, &outcome))
}

fn assemble(layout: &Layout, outcome: &LmOutcome) -> FitResult {
    let model = layout.model;
    let names = model.param_names();
    let n_free = layout.maps.len();
    let mut diagnostics = outcome.diagnostics.clone();

    let covariance = if n_free == 0 {
        None
    } else {
        let dof = (layout.n_residuals - n_free) as f64;
        let s2 = outcome.cost / dof;
        match outcome.normal_matrix.clone().cholesky() {
            Some(chol) => Some(chol.inverse() * s2),
            None => {
                diagnostics.push("normal matrix is singular; standard errors unavailable".into());
                None
            }
        }
    };
    let stderr_of = |g: usize| -> Option<f64> {
        let c = covariance.as_ref()?;
        let d = layout.maps[g].derivative(outcome.theta[g]);
        Some(d.abs() * c[(g, g)].max(0.0).sqrt())
    };
    let estimate = |name: &str, slot: Slot| -> Option<ParamEstimate> {
        let (value, stderr, role) = match slot {
            Slot::Fixed(v) if v.is_infinite() => return None,
            Slot::Fixed(v) => (v, None, Role::Fixed),
            Slot::Free(g) => (layout.maps[g].external(outcome.theta[g]), stderr_of(g), Role::Free),
            Slot::Shared(g) => (layout.maps[g].external(outcome.theta[g]), stderr_of(g), Role::Shared),
        };
        Some(ParamEstimate { name: name.to_string(), value, stderr, role })
    };

    let datasets = layout
        .datasets
        .iter()
        .zip(&layout.slots)
        .map(|(data, row)| DatasetFit {
            label: data.label.clone(),
            n_points: data.len(),
            params: names.iter().zip(row).filter_map(|(n, s)| estimate(n, *s)).collect(),
        })
        .collect();
    let mut shared = Vec::new();
    for (j, name) in names.iter().enumerate() {
        if let Some(Slot::Shared(g)) = layout.slots.first().map(|row| row[j]) {
            shared.extend(estimate(name, Slot::Shared(g)));
        }
    }
    FitResult {
        model,
        datasets,
        shared,
        residual_norm: outcome.cost,
        n_iterations: outcome.iterations,
        converged: outcome.converged,
        diagnostics,
        cost_history: outcome.cost_history.clone(),
    }
}

/// Joint fit of decay curves recorded with different spin-wave charges.
///
/// The composite law with a Gaussian longitudinal factor is fitted with `tau0`
/// and `tau1` common to all curves, `c1` and `c2` per curve, and `tau_d` per
/// curve except for charge 0, where it is infinite.
pub fn joint_fit_fig2(curves: &[(i32, DecayCurve<f64>)]) -> Result<FitResult> {
    fit(&fig2_problem(curves))
}

pub fn fig2_problem(curves: &[(i32, DecayCurve<f64>)]) -> FitProblem {
    let mut problem = FitProblem::new(FitModel::Eq6GaussianTau0).share("tau0").share("tau1");
    for (k, (l, curve)) in curves.iter().enumerate() {
        problem = problem.curve(format!("l={l}"), curve);
        if *l == 0 {
            problem = problem.fix_in(k, "tau_d", f64::INFINITY);
        }
    }
    problem
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn grid(n: usize, end: f64) -> Vec<f64> {
        (0..n).map(|i| end * i as f64 / (n - 1) as f64).collect()
    }

    fn synth(model: FitModel, p: &[f64], xs: &[f64], sigma: f64, seed: u64) -> Vec<f64> {
        let mut rng = Stream::new(seed, 0);
        xs.iter().map(|&x| model.eval(p, x) + sigma * rng.normal_pair().0).collect()
    }

    fn curve(model: FitModel, p: &[f64], sigma: f64, seed: u64) -> DecayCurve<f64> {
        let t = grid(30, 6e-6);
        let y = synth(model, p, &t, sigma, seed);
        DecayCurve::new(t, y, None).unwrap()
    }

    const FIG2_LIFETIMES: [(i32, f64); 3] = [(0, f64::INFINITY), (2, 1.6e-6), (4, 0.74e-6)];

    fn fig2_curves(sigma: f64, seed: u64) -> Vec<(i32, DecayCurve<f64>)> {
        FIG2_LIFETIMES
            .iter()
            .enumerate()
            .map(|(k, &(l, tau_d))| {
                let p = [0.02, 0.30, tau_d, 1.81e-6, 3.78e-6];
                (l, curve(FitModel::Eq6GaussianTau0, &p, sigma, seed * 3 + k as u64))
            })
            .collect()
    }

    #[test]
    fn single_gaussian_exact_recovery() {
        let c = curve(FitModel::SingleGaussian, &[0.01, 0.5, 2.2e-6], 0.0, 0);
        let r = fit(&FitProblem::new(FitModel::SingleGaussian).curve("c", &c)).unwrap();
        assert!(r.converged);
        assert!((r.value(0, "tau").unwrap() / 2.2e-6 - 1.0).abs() < 1e-9);
        assert!(r.residual_norm < 1e-20);
    }

    #[test]
    fn zero_noise_from_truth_stops_quickly() {
        let cases: [(FitModel, Vec<f64>); 4] = [
            (FitModel::SingleGaussian, vec![0.01, 0.5, 2.2e-6]),
            (FitModel::SingleExponential, vec![0.01, 0.5, 2.2e-6]),
            (FitModel::Eq6GaussianTau0, vec![0.02, 0.3, 1.6e-6, 1.81e-6, 3.78e-6]),
            (FitModel::Eq6ExpTau0, vec![0.02, 0.3, 1.6e-6, 1.81e-6, 3.78e-6]),
        ];
        for (model, p) in cases {
            let c = curve(model, &p, 0.0, 0);
            let mut problem = FitProblem::new(model).curve("c", &c);
            for (name, v) in model.param_names().iter().zip(&p) {
                problem = problem.init(name, *v);
            }
            // break the degenerate pair by fixing its second member
            if let Some(&(_, b)) = model.degenerate_pairs().first() {
                problem = problem.fix(b, p[model.param_index(b).unwrap()]);
            }
            let r = fit(&problem).unwrap();
            assert!(r.converged, "{model}: {:?}", r.diagnostics);
            assert!(r.n_iterations <= 2, "{model}: {}", r.n_iterations);
            assert!(r.residual_norm < 1e-20, "{model}: {}", r.residual_norm);
        }
        let ms: Vec<i32> = (-10..=10).collect();
        let p = [0.05, 0.4, 0.02, 0.0];
        let y = ms.iter().map(|&m| FitModel::EtaOam.eval(&p, f64::from(m))).collect();
        let d = Dataset::scan("s", &ms, y, None).unwrap();
        let mut problem = FitProblem::new(FitModel::EtaOam).dataset(d);
        for (name, v) in ["c1", "c2", "b", "center"].iter().zip(&p) {
            problem = problem.init(name, *v);
        }
        let r = fit(&problem).unwrap();
        assert!(r.converged && r.n_iterations <= 2 && r.residual_norm < 1e-20);
    }

    #[test]
    fn identifiability_guard() {
        let c = curve(FitModel::Eq6GaussianTau0, &[0.02, 0.3, 1.6e-6, 1.81e-6, 3.78e-6], 0.0, 0);
        let both_free = FitProblem::new(FitModel::Eq6GaussianTau0).curve("c", &c);
        let err = fit(&both_free).unwrap_err().to_string();
        assert!(err.contains("tau_d") && err.contains("tau0"), "{err}");
        // sharing alone is not enough
        let shared = FitProblem::new(FitModel::Eq6GaussianTau0).curve("a", &c).curve("b", &c).share("tau0");
        assert!(fit(&shared).is_err());
        assert!(fit(&FitProblem::new(FitModel::Eq6GaussianTau0).curve("c", &c).fix("tau0", 1.81e-6)).is_ok());
        let exp = FitProblem::new(FitModel::Eq6ExpTau0).curve("c", &c).fix("tau_d", 1e-6);
        assert!(fit(&exp).is_err());
    }

    #[test]
    fn configuration_errors() {
        let c = curve(FitModel::SingleGaussian, &[0.0, 1.0, 1e-6], 0.0, 0);
        let base = || FitProblem::new(FitModel::SingleGaussian).curve("c", &c);
        let bad = [
            base().fix("tau_d", 1.0),
            base().share("c1").fix("c1", 0.0),
            base().bounds("tau", 2.0, 1.0),
            base().init("tau", -1.0),
            base().fix_in(3, "c1", 0.0),
            FitProblem::new(FitModel::SingleGaussian),
            FitProblem::new(FitModel::EtaOam).curve("c", &c),
        ];
        for p in bad {
            assert!(matches!(fit(&p), Err(crate::Error::Config(_))));
        }
        let short = DecayCurve::new(vec![0.0, 1e-6, 2e-6], vec![1.0, 0.5, 0.2], None).unwrap();
        let err = fit(&FitProblem::new(FitModel::SingleGaussian).curve("c", &short)).unwrap_err();
        assert!(matches!(err, crate::Error::Config(_)));
    }

    #[test]
    fn unknown_parameter_named_in_error() {
        let c = curve(FitModel::SingleGaussian, &[0.0, 1.0, 1e-6], 0.0, 0);
        let err = fit(&FitProblem::new(FitModel::SingleGaussian).curve("c", &c).fix("tau9", 1.0)).unwrap_err();
        assert!(err.to_string().contains("tau9"));
    }

    #[test]
    fn all_fixed_reports_residual_only() {
        let c = curve(FitModel::SingleGaussian, &[0.0, 1.0, 1e-6], 0.0, 0);
        let r = fit(
            &FitProblem::new(FitModel::SingleGaussian).curve("c", &c).fix("c1", 0.0).fix("c2", 1.0).fix("tau", 2e-6),
        )
        .unwrap();
        assert_eq!(r.n_iterations, 0);
        assert!(r.converged);
        assert!(r.residual_norm > 0.0);
        assert!(r.datasets[0].params.iter().all(|p| p.role == Role::Fixed && p.stderr.is_none()));
    }

    #[test]
    fn flat_parameter_does_not_crash() {
        // every point at t = 0, where the lifetime has no influence
        let c = DecayCurve::new(vec![0.0; 5], vec![1.0, 1.01, 0.99, 1.0, 1.0], None);
        let Ok(c) = c else { return };
        let r = fit(&FitProblem::new(FitModel::SingleGaussian).curve("c", &c).fix("c1", 0.0)).unwrap();
        assert!(!r.converged);
        assert!(!r.diagnostics.is_empty());
    }

    #[test]
    fn joint_fit_structure() {
        let r = joint_fit_fig2(&fig2_curves(0.003, 1)).unwrap();
        assert!(r.converged, "{:?}", r.diagnostics);
        assert!(r.param(0, "tau_d").is_none());
        assert!(r.param(1, "tau_d").is_some() && r.param(2, "tau_d").is_some());
        assert_eq!(r.shared.len(), 2);
        for name in ["tau0", "tau1"] {
            let s = r.shared(name).unwrap();
            for k in 0..3 {
                assert_eq!(r.param(k, name).unwrap(), s);
            }
        }
        let ratio = r.value(2, "tau_d").unwrap() / r.value(1, "tau_d").unwrap();
        assert!((ratio / 0.4625 - 1.0).abs() < 0.05, "{ratio}");
    }

    #[test]
    fn cost_history_strictly_decreasing() {
        let r = joint_fit_fig2(&fig2_curves(0.003, 9)).unwrap();
        assert!(r.cost_history.windows(2).all(|w| w[1] < w[0]));
        assert_eq!(*r.cost_history.last().unwrap(), r.residual_norm);
    }

    #[test]
    fn estimates_respect_bounds() {
        let c = curve(FitModel::SingleGaussian, &[0.01, 0.5, 2.2e-6], 0.003, 4);
        let r = fit(
            &FitProblem::new(FitModel::SingleGaussian)
                .curve("c", &c)
                .bounds("tau", 0.5e-6, 1.5e-6)
                .bounds("c2", 0.0, 0.4),
        )
        .unwrap();
        let tau = r.value(0, "tau").unwrap();
        assert!((0.5e-6..=1.5e-6).contains(&tau));
        assert!((0.0..=0.4).contains(&r.value(0, "c2").unwrap()));
        assert!(r.datasets[0].params.iter().all(|p| p.stderr.map_or(true, |s| s >= 0.0)));
    }

    #[test]
    fn oam_center_on_symmetric_scan() {
        for n in [0, 2, 20] {
            let ms: Vec<i32> = (n - 16..=n + 16).collect();
            let p = [0.03, 0.5, 0.005, f64::from(n)];
            let y: Vec<f64> = ms.iter().map(|&m| FitModel::EtaOam.eval(&p, f64::from(m))).collect();
            // symmetric perturbation keeps the scan symmetric about n
            let y = y.iter().zip(&ms).map(|(v, m)| v + 1e-3 * f64::from((m - n).abs() % 3)).collect();
            let r = fit(&FitProblem::new(FitModel::EtaOam).dataset(Dataset::scan("s", &ms, y, None).unwrap()))
                .unwrap();
            assert!(r.converged);
            assert!((r.value(0, "center").unwrap() - f64::from(n)).abs() < 1e-6);
        }
    }

    #[test]
    fn efficiency_scaling_leaves_lifetimes() {
        let c = curve(FitModel::SingleExponential, &[0.02, 0.4, 1.5e-6], 0.003, 2);
        let kappa = 3.7;
        let scaled = c.affine(0.0, kappa);
        let a = fit(&FitProblem::new(FitModel::SingleExponential).curve("c", &c)).unwrap();
        let b = fit(&FitProblem::new(FitModel::SingleExponential).curve("c", &scaled)).unwrap();
        let rel = |x: f64, y: f64| (x / y - 1.0).abs();
        assert!(rel(b.value(0, "tau").unwrap(), a.value(0, "tau").unwrap()) < 1e-8);
        assert!(rel(b.value(0, "c2").unwrap(), kappa * a.value(0, "c2").unwrap()) < 1e-8);
        assert!(rel(b.value(0, "c1").unwrap(), kappa * a.value(0, "c1").unwrap()) < 1e-8);
    }

    #[test]
    fn weights_floor_zero_stderr() {
        let d = Dataset {
            label: "d".into(),
            kind: InputKind::Time,
            inputs: vec![0.0, 1.0, 2.0],
            values: vec![1.0, 0.5, 0.2],
            stderrs: Some(vec![0.0, 0.01, 0.02]),
        };
        assert_eq!(d.weights(), vec![100.0, 100.0, 50.0]);
        let z = Dataset { stderrs: Some(vec![0.0; 3]), ..d };
        assert_eq!(z.weights(), vec![1.0; 3]);
    }

    #[test]
    fn maps_invert() {
        for map in [Map::Identity, Map::Lower(0.0), Map::Upper(2.0), Map::Logistic(-1.0, 3.0)] {
            for p in [-0.5f64, 0.3, 1.9] {
                let p = match map {
                    Map::Lower(lo) => lo + p.abs(),
                    _ => p,
                };
                let back = map.external(map.internal(p));
                assert!((back - p).abs() < 1e-14, "{map:?} {p} {back}");
                let h = 1e-6;
                let th = map.internal(p);
                let fd = (map.external(th + h) - map.external(th - h)) / (2.0 * h);
                assert!((fd - map.derivative(th)).abs() < 1e-8);
            }
        }
    }
}
