//! Model functions the fitter knows, with their analytic derivatives.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitModel {
    /// `c1 + c2·e^{-t²/τ_D²}·e^{-t²/τ₀²}·e^{-t/τ₁}`
    #[serde(rename = "eq6-gaussian-tau0")]
    Eq6GaussianTau0,
    /// `c1 + c2·e^{-t²/τ_D²}·e^{-t/τ₀}·e^{-t/τ₁}`
    #[serde(rename = "eq6-exp-tau0")]
    Eq6ExpTau0,
    /// `c1 + c2·e^{-t²/τ²}`
    SingleGaussian,
    /// `c1 + c2·e^{-t/τ}`
    SingleExponential,
    /// `c1 + c2·e^{-b(m-center)²}`
    EtaOam,
}

/// Whether a model is a function of storage time or of control-beam charge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputKind {
    Time,
    Charge,
}

/// How a parameter enters the model; picks the default bounds and the heuristic start.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Offset,
    Amplitude,
    GaussianLifetime,
    ExponentialLifetime,
    Curvature,
    Center,
}

impl FitModel {
    pub const ALL: [FitModel; 5] = [
        FitModel::Eq6GaussianTau0,
        FitModel::Eq6ExpTau0,
        FitModel::SingleGaussian,
        FitModel::SingleExponential,
        FitModel::EtaOam,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FitModel::Eq6GaussianTau0 => "eq6-gaussian-tau0",
            FitModel::Eq6ExpTau0 => "eq6-exp-tau0",
            FitModel::SingleGaussian => "single-gaussian",
            FitModel::SingleExponential => "single-exponential",
            FitModel::EtaOam => "eta-oam",
        }
    }

    pub fn param_names(self) -> &'static [&'static str] {
        match self {
            FitModel::Eq6GaussianTau0 | FitModel::Eq6ExpTau0 => &["c1", "c2", "tau_d", "tau0", "tau1"],
            FitModel::SingleGaussian | FitModel::SingleExponential => &["c1", "c2", "tau"],
            FitModel::EtaOam => &["c1", "c2", "b", "center"],
        }
    }

    pub fn param_kinds(self) -> &'static [ParamKind] {
        use ParamKind::*;
        match self {
            FitModel::Eq6GaussianTau0 => {
                &[Offset, Amplitude, GaussianLifetime, GaussianLifetime, ExponentialLifetime]
            }
            FitModel::Eq6ExpTau0 => {
                &[Offset, Amplitude, GaussianLifetime, ExponentialLifetime, ExponentialLifetime]
            }
            FitModel::SingleGaussian => &[Offset, Amplitude, GaussianLifetime],
            FitModel::SingleExponential => &[Offset, Amplitude, ExponentialLifetime],
            FitModel::EtaOam => &[Offset, Amplitude, Curvature, Center],
        }
    }

    pub fn param_index(self, name: &str) -> Option<usize> {
        self.param_names().iter().position(|&p| p == name)
    }

    /// Like [`param_index`](Self::param_index) but with an error naming the bad key.
    pub fn require_param(self, name: &str) -> crate::Result<usize> {
        self.param_index(name).ok_or_else(|| {
            config(format!(
                "model {} has no parameter `{name}` (expected one of {})",
                self.name(),
                self.param_names().join(", ")
            ))
        })
    }

    pub fn input_kind(self) -> InputKind {
        match self {
            FitModel::EtaOam => InputKind::Charge,
            _ => InputKind::Time,
        }
    }

    /// Pairs of parameters whose factors have the same functional form, so
    /// that on a single curve only their combination is identifiable.
    pub fn degenerate_pairs(self) -> &'static [(&'static str, &'static str)] {
        match self {
            FitModel::Eq6GaussianTau0 => &[("tau_d", "tau0")],
            FitModel::Eq6ExpTau0 => &[("tau0", "tau1")],
            _ => &[],
        }
    }

    /// Model prediction at input `x` (seconds, or the control charge as a float).
    pub fn eval(self, p: &[f64], x: f64) -> f64 {
        match self {
            FitModel::EtaOam => {
                let d = x - p[3];
                p[0] + p[1] * (-p[2] * d * d).exp()
            }
            _ => p[0] + p[1] * self.envelope(p, x),
        }
    }

    /// The product of decay factors multiplying `c2`.
    fn envelope(self, p: &[f64], t: f64) -> f64 {
        let exponent: f64 = self
            .param_kinds()
            .iter()
            .zip(p)
            .map(|(kind, &tau)| decay_exponent(*kind, tau, t))
            .sum();
        (-exponent).exp()
    }

    /// Gradient of the prediction at `x` with respect to every parameter, in
    /// [`param_names`](Self::param_names) order.
    pub fn gradient(self, p: &[f64], x: f64, out: &mut [f64]) {
        match self {
            FitModel::EtaOam => {
                let d = x - p[3];
                let e = (-p[2] * d * d).exp();
                out[0] = 1.0;
                out[1] = e;
                out[2] = -p[1] * d * d * e;
                out[3] = 2.0 * p[1] * p[2] * d * e;
            }
            _ => {
                let env = self.envelope(p, x);
                out[0] = 1.0;
                out[1] = env;
                for (j, kind) in self.param_kinds().iter().enumerate().skip(2) {
                    out[j] = p[1] * env * decay_exponent_slope(*kind, p[j], x);
                }
            }
        }
    }
}

/// Exponent `t²/τ²` or `t/τ` contributed by one lifetime; zero for other kinds.
pub(crate) fn decay_exponent(kind: ParamKind, tau: f64, t: f64) -> f64 {
    if tau.is_infinite() {
        return 0.0;
    }
    match kind {
        ParamKind::GaussianLifetime => (t / tau) * (t / tau),
        ParamKind::ExponentialLifetime => t / tau,
        _ => 0.0,
    }
}

/// `-∂(exponent)/∂τ`, the factor by which a lifetime enters the gradient.
fn decay_exponent_slope(kind: ParamKind, tau: f64, t: f64) -> f64 {
    if tau.is_infinite() {
        return 0.0;
    }
    match kind {
        ParamKind::GaussianLifetime => 2.0 * t * t / (tau * tau * tau),
        ParamKind::ExponentialLifetime => t / (tau * tau),
        _ => 0.0,
    }
}

/// Jacobian of the model over `inputs`, one row per input and one column per
/// model parameter.
pub fn jacobian(model: FitModel, params: &[f64], inputs: &[f64]) -> DMatrix<f64> {
    let n = model.param_names().len();
    assert_eq!(params.len(), n, "{} takes {n} parameters", model.name());
    let mut j = DMatrix::zeros(inputs.len(), n);
    let mut row = vec![0.0; n];
    for (i, &x) in inputs.iter().enumerate() {
        model.gradient(params, x, &mut row);
        for (k, v) in row.iter().enumerate() {
            j[(i, k)] = *v;
        }
    }
    j
}

impl fmt::Display for FitModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FitModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        FitModel::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = FitModel::ALL.iter().map(|m| m.name()).collect();
                config(format!("unknown model `{s}` (expected one of {})", names.join(", ")))
            })
    }
}
