//! Azimuthal dephasing of spin waves carrying orbital angular momentum in a
//! warm atomic vapor: closed-form lifetimes, Monte Carlo ensembles, decay-law
//! fitting and scripted reruns of the storage experiments.

pub mod analytic;
pub mod bessel;
pub mod ensemble;
pub mod error;
pub mod fitting;
pub mod io;
pub mod model;
pub mod num;
pub mod quadrature;
pub mod rng;
pub mod scenarios;

pub use error::{Error, Result};
pub use num::Scalar;

pub type ThermalGas = model::ThermalGas<f64>;
pub type OamMode = model::OamMode<f64>;
pub type SpinWave = model::SpinWave<f64>;
pub type DecayModel = model::DecayModel<f64>;
pub type OamEfficiencyModel = model::OamEfficiencyModel<f64>;
pub type Lifetime = model::Lifetime<f64>;
pub type DecayCurve = analytic::DecayCurve<f64>;

pub type ThermalGasF32 = model::ThermalGas<f32>;
pub type SpinWaveF32 = model::SpinWave<f32>;
pub type DecayModelF32 = model::DecayModel<f32>;
pub type DecayCurveF32 = analytic::DecayCurve<f32>;
