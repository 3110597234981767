//! Closed-form and quadrature evaluation of azimuthal dephasing.
//!
//! An atom at radius `r` moving with tangential speed `v` advances its
//! azimuthal angle by `v t / r`, so a spin wave with charge `l` accumulates a
//! phase `l v t / r`. Averaging over a Maxwell-Boltzmann velocity distribution
//! gives the local lifetime `τ_D(r) = r / (|l| ν_s)`; the beam-weighted picture
//! follows by averaging over the Gaussian radial profile
//! `(4r/W₀²) e^{-2r²/W₀²}`.

use serde::{Deserialize, Serialize};

use crate::bessel::x_k1;
use crate::error::{domain, Error, Result};
use crate::model::{DecayModel, Lifetime, LongitudinalForm, OamEfficiencyModel, ThermalGas};
use crate::num::Scalar;
use crate::quadrature::{integrate_to_infinity, Tolerance};

/// Absolute tolerance of the radial average quadrature (f64).
pub const RADIAL_ABS_TOLERANCE: f64 = 1e-10;

/// Sampled efficiency curve, times in seconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "T: Scalar + Serialize",
    deserialize = "T: Scalar + Deserialize<'de>"
))]
pub struct DecayCurve<T> {
    times: Vec<T>,
    efficiencies: Vec<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    stderrs: Option<Vec<T>>,
}

impl<T: Scalar> DecayCurve<T> {
    pub fn new(times: Vec<T>, efficiencies: Vec<T>, stderrs: Option<Vec<T>>) -> Result<Self> {
        validate_times(&times)?;
        if efficiencies.len() != times.len() {
            return Err(domain(format!(
                "{} times but {} efficiencies",
                times.len(),
                efficiencies.len()
            )));
        }
        if efficiencies.iter().any(|e| !e.is_finite()) {
            return Err(domain("efficiencies must be finite"));
        }
        if let Some(se) = &stderrs {
            if se.len() != times.len() {
                return Err(domain("stderr column length differs from time column"));
            }
            if se.iter().any(|s| !(s.is_finite() && *s >= T::zero())) {
                return Err(domain("standard errors must be finite and non-negative"));
            }
        }
        Ok(DecayCurve { times, efficiencies, stderrs })
    }

    /// Samples a decay law on a time grid.
    pub fn from_model(times: Vec<T>, model: &DecayModel<T>) -> Result<Self> {
        let eff = times.iter().map(|&t| eta_total(t, model)).collect();
        Self::new(times, eff, None)
    }

    pub fn times(&self) -> &[T] {
        &self.times
    }

    pub fn efficiencies(&self) -> &[T] {
        &self.efficiencies
    }

    pub fn stderrs(&self) -> Option<&[T]> {
        self.stderrs.as_deref()
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Applies `η → a + b·η` to every point; standard errors scale by `|b|`.
    pub fn affine(&self, a: T, b: T) -> Self {
        DecayCurve {
            times: self.times.clone(),
            efficiencies: self.efficiencies.iter().map(|&e| a + b * e).collect(),
            stderrs: self.stderrs.as_ref().map(|s| s.iter().map(|&x| x * b.abs()).collect()),
        }
    }
}

/// Time grids must be non-empty, start at `t ≥ 0` and increase strictly.
pub fn validate_times<T: Scalar>(times: &[T]) -> Result<()> {
    if times.is_empty() {
        return Err(domain("time grid is empty"));
    }
    if !(times[0].is_finite() && times[0] >= T::zero()) {
        return Err(domain(format!("first time must be >= 0, got {}", times[0])));
    }
    for w in times.windows(2) {
        if !(w[1] > w[0] && w[1].is_finite()) {
            return Err(domain(format!("times must increase strictly ({} then {})", w[0], w[1])));
        }
    }
    Ok(())
}

fn check_speed<T: Scalar>(nu_s: T) -> Result<()> {
    if nu_s.is_finite() && nu_s > T::zero() {
        Ok(())
    } else {
        Err(domain(format!("thermal speed must be positive, got {nu_s}")))
    }
}

fn check_time<T: Scalar>(t: T) -> Result<()> {
    if t.is_finite() && t >= T::zero() {
        Ok(())
    } else {
        Err(domain(format!("storage time must be >= 0, got {t}")))
    }
}

/// Local azimuthal lifetime `r / (|l| ν_s)`.
pub fn tau_d_local<T: Scalar>(radius: T, l: i32, nu_s: T) -> Result<Lifetime<T>> {
    if !(radius.is_finite() && radius >= T::zero()) {
        return Err(domain(format!("radius must be >= 0, got {radius}")));
    }
    check_speed(nu_s)?;
    if l == 0 {
        return Ok(Lifetime::Infinite);
    }
    Ok(Lifetime::Finite(radius / (T::from_charge(l).abs() * nu_s)))
}

/// Beam-averaged azimuthal lifetime `√(2π) W₀ / (4 |l| ν_s)`.
pub fn tau_d_avg<T: Scalar>(waist: T, l: i32, nu_s: T) -> Result<Lifetime<T>> {
    if !(waist.is_finite() && waist > T::zero()) {
        return Err(domain(format!("waist must be positive, got {waist}")));
    }
    check_speed(nu_s)?;
    if l == 0 {
        return Ok(Lifetime::Infinite);
    }
    let four = T::lit(4.0);
    Ok(Lifetime::Finite(
        (T::lit(2.0) * T::PI()).sqrt() * waist / (four * T::from_charge(l).abs() * nu_s),
    ))
}

/// Gaussian dephasing factor `e^{-t²/τ²}`; one for an infinite lifetime.
pub fn gamma_single<T: Scalar>(t: T, tau_d: Lifetime<T>) -> T {
    let x = t * tau_d.rate();
    (-(x * x)).exp()
}

/// Velocity-averaged phase factor `⟨e^{i l v t / r}⟩` over a thermal 1D velocity
/// distribution, equal to `e^{-t²/(2 τ_D(r)²)}`.
///
/// The distribution is symmetric so the average is real.
pub fn velocity_averaged_phase<T: Scalar>(
    t: T,
    radius: T,
    l: i32,
    gas: &ThermalGas<T>,
) -> Result<T> {
    check_time(t)?;
    if radius == T::zero() {
        return Err(Error::Singularity("azimuthal phase undefined at r = 0".into()));
    }
    if !(radius.is_finite() && radius > T::zero()) {
        return Err(domain(format!("radius must be positive, got {radius}")));
    }
    let x = t * tau_d_local(radius, l, gas.thermal_speed())?.rate();
    Ok((-(x * x) / T::lit(2.0)).exp())
}

/// Dimensionless argument `x = 2√2 |l| ν_s t / W₀` of the radial average.
pub fn radial_argument<T: Scalar>(t: T, waist: T, l: i32, nu_s: T) -> T {
    T::lit(2.0 * std::f64::consts::SQRT_2) * T::from_charge(l).abs() * nu_s * t / waist
}

/// Exact radial average `∫₀^∞ (4r/W₀²) e^{-2r²/W₀²} e^{-t²/τ_D(r)²} dr` by
/// adaptive quadrature in `u = 2r²/W₀²`, where the integrand becomes
/// `e^{-u - c/u}` with `c = 2 (l ν_s t / W₀)²`.
pub fn gamma_radial_avg<T: Scalar>(t: T, waist: T, l: i32, nu_s: T) -> Result<T> {
    let tol = Tolerance::absolute(T::lit(RADIAL_ABS_TOLERANCE).max(T::epsilon() * T::lit(16.0)));
    gamma_radial_avg_with(t, waist, l, nu_s, tol)
}

pub fn gamma_radial_avg_with<T: Scalar>(
    t: T,
    waist: T,
    l: i32,
    nu_s: T,
    tol: Tolerance<T>,
) -> Result<T> {
    check_time(t)?;
    check_speed(nu_s)?;
    if !(waist.is_finite() && waist > T::zero()) {
        return Err(domain(format!("waist must be positive, got {waist}")));
    }
    if l == 0 || t == T::zero() {
        return Ok(T::one());
    }
    let k = T::from_charge(l).abs() * nu_s * t / waist;
    let c = T::lit(2.0) * k * k;
    let integral = integrate_to_infinity(
        |u: T| {
            if u <= T::zero() {
                T::zero()
            } else {
                (-u - c / u).exp()
            }
        },
        T::zero(),
        tol,
    )?;
    if !integral.converged {
        return Err(domain(format!("radial quadrature did not converge (x = {})", T::lit(2.0) * c.sqrt())));
    }
    Ok(integral.value.min(T::one()))
}

/// Closed form of [`gamma_radial_avg`]: `x K₁(x)`.
pub fn gamma_radial_avg_bessel<T: Scalar>(t: T, waist: T, l: i32, nu_s: T) -> T {
    x_k1(radial_argument(t, waist, l, nu_s))
}

/// Squared beam average of the velocity-averaged amplitude, `(y K₁(y))²` with
/// `y = 2 |l| ν_s t / W₀`: the limit of a coherent phasor sum over the ensemble.
pub fn coherent_radial_avg_bessel<T: Scalar>(t: T, waist: T, l: i32, nu_s: T) -> T {
    let y = T::lit(2.0) * T::from_charge(l).abs() * nu_s * t / waist;
    let a = x_k1(y);
    a * a
}

/// Composite decay law evaluated at `t`; infinite lifetimes drop their factor.
pub fn eta_total<T: Scalar>(t: T, model: &DecayModel<T>) -> T {
    let d = t * model.tau_d.rate();
    let one = t * model.tau_1.rate();
    let longitudinal = match model.longitudinal {
        LongitudinalForm::Gaussian => {
            let z = t * model.tau_0.rate();
            (-(z * z)).exp()
        }
        LongitudinalForm::Exponential => (-(t * model.tau_0.rate())).exp(),
    };
    model.c1 + model.c2 * (-(d * d)).exp() * longitudinal * (-one).exp()
}

/// `C₁ + C₂ e^{-B (m - center)²}`.
pub fn eta_oam<T: Scalar>(m: i32, model: &OamEfficiencyModel<T>) -> T {
    let d = T::from_charge(m) - T::from_charge(model.center);
    model.c1 + model.c2 * (-(model.b * d * d)).exp()
}
