//! Physical constants and the value types shared by every other module.
//!
//! All quantities are strict SI internally: seconds, meters, kelvin, kilograms.
//! Unit conversion to the microsecond / millimeter / Celsius conventions of the
//! command line happens only at the I/O boundary.

use std::fmt;

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{config, domain, Result};
use crate::num::Scalar;

/// Boltzmann constant, J/K (exact by SI definition).
pub const BOLTZMANN: f64 = 1.380649e-23;

/// Unified atomic mass unit, kg.
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Offset between the Celsius and Kelvin scales.
pub const ZERO_CELSIUS: f64 = 273.15;

/// Relative tolerance when checking that probe and control share one waist.
pub const WAIST_MATCH_TOLERANCE: f64 = 1e-9;

/// Alkali species with pinned isotope masses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Species {
    Rb85,
    Rb87,
    Cs133,
}

impl Species {
    pub const ALL: [Species; 3] = [Species::Rb85, Species::Rb87, Species::Cs133];

    /// Isotope mass in unified atomic mass units.
    pub fn mass_u(self) -> f64 {
        match self {
            Species::Rb85 => 84.911_789_7,
            Species::Rb87 => 86.909_180_527,
            Species::Cs133 => 132.905_451_961,
        }
    }

    /// Isotope mass in kilograms.
    pub fn mass_kg(self) -> f64 {
        self.mass_u() * ATOMIC_MASS_UNIT
    }

    pub fn name(self) -> &'static str {
        match self {
            Species::Rb85 => "rb85",
            Species::Rb87 => "rb87",
            Species::Cs133 => "cs133",
        }
    }
}

impl std::str::FromStr for Species {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "rb85" | "85rb" => Ok(Species::Rb85),
            "rb87" | "87rb" => Ok(Species::Rb87),
            "cs133" | "cs" | "133cs" => Ok(Species::Cs133),
            other => Err(format!("unknown species `{other}` (expected rb85, rb87 or cs133)")),
        }
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A decay time that may be absent altogether.
///
/// `Infinite` means the corresponding decay factor is identically one, which is
/// what a spin wave without azimuthal phase gradient (`l = 0`) produces.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Lifetime<T> {
    Finite(T),
    Infinite,
}

impl<T: Scalar> Lifetime<T> {
    /// Builds a lifetime from a float; `+inf` maps to [`Lifetime::Infinite`].
    pub fn new(value: T) -> Result<Self> {
        if value.is_infinite() && value > T::zero() {
            Ok(Lifetime::Infinite)
        } else if value.is_finite() && value > T::zero() {
            Ok(Lifetime::Finite(value))
        } else {
            Err(domain(format!("lifetime must be positive, got {value}")))
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Lifetime::Infinite)
    }

    pub fn finite(&self) -> Option<T> {
        match *self {
            Lifetime::Finite(v) => Some(v),
            Lifetime::Infinite => None,
        }
    }

    /// Decay rate `1/τ`, zero for an infinite lifetime.
    pub fn rate(&self) -> T {
        match *self {
            Lifetime::Finite(v) => v.recip(),
            Lifetime::Infinite => T::zero(),
        }
    }

    /// IEEE view of the lifetime (`+inf` for `Infinite`), for arithmetic and display only.
    pub fn as_float(&self) -> T {
        self.finite().unwrap_or_else(T::infinity)
    }

    pub fn map<U: Scalar>(self, f: impl FnOnce(T) -> U) -> Lifetime<U> {
        match self {
            Lifetime::Finite(v) => Lifetime::Finite(f(v)),
            Lifetime::Infinite => Lifetime::Infinite,
        }
    }
}

impl<T: Scalar> fmt::Display for Lifetime<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Lifetime::Finite(v) => write!(f, "{v}"),
            Lifetime::Infinite => f.write_str("infinite"),
        }
    }
}

impl<T: Scalar + Serialize> Serialize for Lifetime<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Lifetime::Finite(v) => v.serialize(serializer),
            Lifetime::Infinite => serializer.serialize_str("infinite"),
        }
    }
}

impl<'de, T: Scalar + Deserialize<'de>> Deserialize<'de> for Lifetime<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr<T> {
            Number(T),
            Word(String),
        }
        match Repr::<T>::deserialize(deserializer)? {
            Repr::Number(v) => Lifetime::new(v).map_err(de::Error::custom),
            Repr::Word(w) if matches!(w.as_str(), "infinite" | "inf" | "infinity") => {
                Ok(Lifetime::Infinite)
            }
            Repr::Word(w) => Err(de::Error::custom(format!(
                "expected a positive number or \"infinite\", got \"{w}\""
            ))),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ThermalGasFields<T> {
    temperature: T,
    atomic_mass: T,
}

/// Atomic vapor at a given temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "ThermalGasFields<T>",
    bound(deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct ThermalGas<T> {
    temperature: T,
    atomic_mass: T,
}

impl<T: Scalar> TryFrom<ThermalGasFields<T>> for ThermalGas<T> {
    type Error = crate::Error;

    fn try_from(f: ThermalGasFields<T>) -> Result<Self> {
        ThermalGas::new(f.temperature, f.atomic_mass)
    }
}

impl<T: Scalar> ThermalGas<T> {
    /// Temperature in kelvin, atomic mass in kilograms.
    pub fn new(temperature: T, atomic_mass: T) -> Result<Self> {
        if !(temperature.is_finite() && temperature > T::zero()) {
            return Err(domain(format!("temperature must be positive, got {temperature} K")));
        }
        if !(atomic_mass.is_finite() && atomic_mass > T::zero()) {
            return Err(domain(format!("atomic mass must be positive, got {atomic_mass} kg")));
        }
        Ok(ThermalGas { temperature, atomic_mass })
    }

    pub fn from_species(species: Species, temperature: T) -> Result<Self> {
        Self::new(temperature, T::lit(species.mass_kg()))
    }

    pub fn from_celsius(species: Species, celsius: T) -> Result<Self> {
        Self::from_species(species, celsius + T::lit(ZERO_CELSIUS))
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn atomic_mass(&self) -> T {
        self.atomic_mass
    }

    /// One-dimensional thermal speed `sqrt(k_B T / m)`.
    pub fn thermal_speed(&self) -> T {
        thermal_speed(self)
    }
}

/// One-dimensional thermal speed `sqrt(k_B T / m)` in m/s.
pub fn thermal_speed<T: Scalar>(gas: &ThermalGas<T>) -> T {
    (T::lit(BOLTZMANN) * gas.temperature / gas.atomic_mass).sqrt()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct OamModeFields<T> {
    charge: i32,
    waist: T,
}

/// A Laguerre-Gaussian beam: topological charge and waist at the cell center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "OamModeFields<T>",
    bound(deserialize = "T: Scalar + Deserialize<'de>")
)]
pub struct OamMode<T> {
    charge: i32,
    waist: T,
}

impl<T: Scalar> TryFrom<OamModeFields<T>> for OamMode<T> {
    type Error = crate::Error;

    fn try_from(f: OamModeFields<T>) -> Result<Self> {
        OamMode::new(f.charge, f.waist)
    }
}

impl<T: Scalar> OamMode<T> {
    pub fn new(charge: i32, waist: T) -> Result<Self> {
        if !(waist.is_finite() && waist > T::zero()) {
            return Err(domain(format!("beam waist must be positive, got {waist} m")));
        }
        Ok(OamMode { charge, waist })
    }

    pub fn charge(&self) -> i32 {
        self.charge
    }

    pub fn waist(&self) -> T {
        self.waist
    }
}

/// Stored ground-state coherence carrying the azimuthal phase `e^{i l α}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinWave<T> {
    /// `l = n - m`, probe charge minus control charge.
    pub topological_charge: i32,
    pub waist: T,
    /// Residual longitudinal wavevector mismatch Δk, rad/m.
    pub longitudinal_mismatch: T,
}

impl<T: Scalar> SpinWave<T> {
    pub fn new(topological_charge: i32, waist: T, longitudinal_mismatch: T) -> Result<Self> {
        if !(waist.is_finite() && waist > T::zero()) {
            return Err(domain(format!("spin-wave waist must be positive, got {waist} m")));
        }
        if !(longitudinal_mismatch.is_finite() && longitudinal_mismatch >= T::zero()) {
            return Err(domain(format!(
                "longitudinal mismatch must be non-negative, got {longitudinal_mismatch} rad/m"
            )));
        }
        Ok(SpinWave { topological_charge, waist, longitudinal_mismatch })
    }

    /// Writes a probe mode into the medium with a control mode.
    ///
    /// The spin wave inherits the azimuthal phase difference of the two beams.
    pub fn from_modes(probe: &OamMode<T>, control: &OamMode<T>, mismatch: T) -> Result<Self> {
        make_spinwave(probe, control, mismatch)
    }
}

/// Spin wave written by `probe` and `control`; requires a common waist.
pub fn make_spinwave<T: Scalar>(
    probe: &OamMode<T>,
    control: &OamMode<T>,
    mismatch: T,
) -> Result<SpinWave<T>> {
    let (wp, wc) = (probe.waist, control.waist);
    if (wp - wc).abs() > T::lit(WAIST_MATCH_TOLERANCE) * wp.max(wc) {
        return Err(config(format!(
            "probe waist {wp} m and control waist {wc} m differ"
        )));
    }
    let l = probe
        .charge
        .checked_sub(control.charge)
        .ok_or_else(|| domain("topological charge overflows i32"))?;
    SpinWave::new(l, wp, mismatch)
}

/// Form of the longitudinal decay factor in the composite decay law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LongitudinalForm {
    /// `e^{-t²/τ₀²}`
    #[default]
    Gaussian,
    /// `e^{-t/τ₀}`
    Exponential,
}

/// Composite retrieval-efficiency law
/// `η(t) = C₁ + C₂ · e^{-t²/τ_D²} · g₀(t) · e^{-t/τ₁}`
/// where `g₀` is Gaussian or exponential in `t/τ₀`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct DecayModel<T> {
    pub c1: T,
    pub c2: T,
    pub tau_d: Lifetime<T>,
    pub tau_0: Lifetime<T>,
    pub tau_1: Lifetime<T>,
    #[serde(default)]
    pub longitudinal: LongitudinalForm,
}

impl<T: Scalar> DecayModel<T> {
    pub fn new(
        c1: T,
        c2: T,
        tau_d: Lifetime<T>,
        tau_0: Lifetime<T>,
        tau_1: Lifetime<T>,
    ) -> Result<Self> {
        let model = DecayModel { c1, c2, tau_d, tau_0, tau_1, longitudinal: LongitudinalForm::Gaussian };
        model.validate()?;
        Ok(model)
    }

    pub fn with_longitudinal(mut self, form: LongitudinalForm) -> Self {
        self.longitudinal = form;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, c) in [("c1", self.c1), ("c2", self.c2)] {
            if !(c.is_finite() && c >= T::zero()) {
                return Err(domain(format!("{name} must be finite and non-negative, got {c}")));
            }
        }
        for (name, tau) in [("tau_d", self.tau_d), ("tau_0", self.tau_0), ("tau_1", self.tau_1)] {
            if let Lifetime::Finite(v) = tau {
                if !(v.is_finite() && v > T::zero()) {
                    return Err(domain(format!("{name} must be positive, got {v}")));
                }
            }
        }
        Ok(())
    }

    /// Efficiency at storage time `t`.
    pub fn eval(&self, t: T) -> T {
        crate::analytic::eta_total(t, self)
    }
}

/// Gaussian dependence of the retrieval efficiency on the control charge `m`:
/// `η(m) = C₁ + C₂ e^{-B (m - n)²}` with `n` the probe charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OamEfficiencyModel<T> {
    pub c1: T,
    pub c2: T,
    pub b: T,
    pub center: i32,
}

impl<T: Scalar> OamEfficiencyModel<T> {
    pub fn new(c1: T, c2: T, b: T, center: i32) -> Result<Self> {
        if !(b.is_finite() && b >= T::zero()) {
            return Err(domain(format!("curvature B must be non-negative, got {b}")));
        }
        if !(c1.is_finite() && c2.is_finite()) {
            return Err(domain("efficiency coefficients must be finite"));
        }
        Ok(OamEfficiencyModel { c1, c2, b, center })
    }

    /// Inserts the waist-averaged azimuthal lifetime into a decay law and
    /// freezes the storage time, leaving only the charge dependence.
    ///
    /// The returned peak `C₂` is `decay.c2` times the non-azimuthal factors at
    /// `t`; the curvature is `B = t² (4 ν_s / (√(2π) W₀))²`.
    pub fn from_decay(
        decay: &DecayModel<T>,
        storage_time: T,
        waist: T,
        nu_s: T,
        center: i32,
    ) -> Result<Self> {
        if !(waist > T::zero() && nu_s > T::zero()) {
            return Err(domain("waist and thermal speed must be positive"));
        }
        let without_azimuthal = DecayModel { c1: T::zero(), tau_d: Lifetime::Infinite, ..*decay };
        let peak = without_azimuthal.eval(storage_time);
        let k = T::lit(4.0) * nu_s / ((T::lit(2.0) * T::PI()).sqrt() * waist);
        let b = storage_time * storage_time * k * k;
        OamEfficiencyModel::new(decay.c1, peak, b, center)
    }

    pub fn eval(&self, m: i32) -> T {
        crate::analytic::eta_oam(m, self)
    }
}
