//! Monte Carlo ensembles of thermal atoms carrying a stored spin wave.
//!
//! Atoms are sampled from the beam's radial profile with Maxwell-Boltzmann
//! velocities, moved for a storage time, and the retrieval efficiency is read
//! out from the overlap of the perturbed spin wave with the original one.
//!
//! Every output is a pure function of the seed and parameters. Per-atom random
//! numbers come from a counter-based stream addressed by atom index, and all
//! reductions use a fixed pairwise summation tree, so the worker count never
//! changes a single bit of the result.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::DecayCurve;
use crate::error::{domain, Error, Result};
use crate::model::{SpinWave, ThermalGas};
use crate::rng::Stream;

/// Default vapor cell length, m.
pub const DEFAULT_CELL_LENGTH: f64 = 0.05;

const PAIRWISE_BLOCK: usize = 256;

/// One atom. Position is kept in cylindrical coordinates, velocity in Cartesian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub r: f64,
    /// Azimuth in `[0, 2π)`.
    pub alpha: f64,
    pub z: f64,
    pub velocity: [f64; 3],
}

impl Atom {
    /// Spin-wave phase `l·α + Δk·z` imprinted on this atom.
    pub fn phase(&self, sw: &SpinWave<f64>) -> f64 {
        f64::from(sw.topological_charge) * self.alpha + sw.longitudinal_mismatch * self.z
    }

    /// Velocity component along the azimuthal unit vector at the atom's position.
    pub fn tangential_velocity(&self) -> f64 {
        let (s, c) = self.alpha.sin_cos();
        -self.velocity[0] * s + self.velocity[1] * c
    }

    /// Velocity component along the radial unit vector.
    pub fn radial_velocity(&self) -> f64 {
        let (s, c) = self.alpha.sin_cos();
        self.velocity[0] * c + self.velocity[1] * s
    }
}

/// Radial density from which atoms are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Weighting {
    /// `(4r/W₀²) e^{-2r²/W₀²}`.
    GaussianBeam,
    /// `|LG₀^l|² ∝ r^{2|l|} e^{-2r²/W₀²}`.
    LgDonut { charge: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    /// Radius and height frozen, azimuth advanced by `v_φ t / r`.
    #[default]
    PaperAzimuthal,
    /// Straight-line free flight in three dimensions.
    Ballistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EfficiencyEstimator {
    /// `|⟨e^{iΔφ}⟩|²`, the squared mean phasor.
    #[default]
    Coherent,
    /// Mean of per-atom velocity-averaged efficiencies at the initial radius.
    ConditionalIncoherent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub efficiency: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    atoms: Vec<Atom>,
    seed: u64,
    weighting: Weighting,
    gas: ThermalGas<f64>,
    waist: f64,
    cell_length: f64,
    /// Total storage time applied since sampling.
    elapsed: f64,
}

impl Ensemble {
    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn weighting(&self) -> Weighting {
        self.weighting
    }

    pub fn gas(&self) -> &ThermalGas<f64> {
        &self.gas
    }

    pub fn waist(&self) -> f64 {
        self.waist
    }

    pub fn cell_length(&self) -> f64 {
        self.cell_length
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }
}

/// Sum with a fixed binary tree over blocks of `PAIRWISE_BLOCK` elements.
///
/// The tree shape depends only on the slice length, so the result is the
/// same whether the halves are evaluated on one thread or several.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= PAIRWISE_BLOCK {
        return values.iter().sum();
    }
    let mid = values.len() / 2;
    let (a, b) = values.split_at(mid);
    if values.len() >= 1 << 16 {
        let (x, y) = rayon::join(|| pairwise_sum(a), || pairwise_sum(b));
        x + y
    } else {
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Inverse CDF of the Gamma(k, 1) distribution for integer shape `k ≥ 1`.
///
/// Solves `P(k, u) = p` with `1 - P(k, u) = e^{-u} Σ_{j<k} u^j / j!` by
/// safeguarded Newton iteration.
pub fn gamma_integer_quantile(shape: u32, p: f64) -> f64 {
    debug_assert!(shape >= 1 && p > 0.0 && p < 1.0);
    if shape == 1 {
        return -(-p).ln_1p();
    }
    let k = f64::from(shape);
    let upper = |u: f64| {
        // e^{-u} Σ_{j<k} u^j/j!, summed in a stable order
        let mut term = 1.0;
        let mut sum = 1.0;
        for j in 1..shape {
            term *= u / f64::from(j);
            sum += term;
        }
        (-u).exp() * sum
    };
    let ln_gamma_k: f64 = (1..shape).map(|j| f64::from(j).ln()).sum();
    let density = |u: f64| ((k - 1.0) * u.ln() - u - ln_gamma_k).exp();
    let q = 1.0 - p;
    let (mut lo, mut hi) = (0.0, k + 10.0 * k.sqrt() + 50.0);
    while upper(hi) > q {
        hi *= 2.0;
    }
    let mut u = k;
    for _ in 0..200 {
        // residual in CDF space: P(u) - p = q - upper(u)
        let f = q - upper(u);
        if f > 0.0 {
            hi = u;
        } else {
            lo = u;
        }
        let d = density(u);
        let mut next = if d > 0.0 { u - f / d } else { 0.5 * (lo + hi) };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - u).abs() <= 1e-15 * u.max(1e-300) {
            return next;
        }
        u = next;
    }
    u
}

fn sample_atom(
    seed: u64,
    index: u64,
    waist: f64,
    nu_s: f64,
    weighting: Weighting,
    cell_length: f64,
) -> Atom {
    let mut stream = Stream::new(seed, index);
    let p = stream.uniform_open();
    let u = match weighting {
        Weighting::GaussianBeam => -(-p).ln_1p(),
        Weighting::LgDonut { charge } => gamma_integer_quantile(charge + 1, p),
    };
    let r = waist * (0.5 * u).sqrt();
    let alpha = TAU * stream.uniform_open();
    let z = cell_length * (stream.uniform_open() - 0.5);
    let (vx, vy) = stream.normal_pair();
    let (vz, _) = stream.normal_pair();
    Atom { r, alpha: wrap_angle(alpha), z, velocity: [nu_s * vx, nu_s * vy, nu_s * vz] }
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Samples `n_atoms` atoms over the default 5 cm cell.
pub fn sample_ensemble(
    n_atoms: usize,
    waist: f64,
    gas: &ThermalGas<f64>,
    weighting: Weighting,
    seed: u64,
) -> Result<Ensemble> {
    sample_ensemble_in_cell(n_atoms, waist, gas, weighting, seed, DEFAULT_CELL_LENGTH)
}

pub fn sample_ensemble_in_cell(
    n_atoms: usize,
    waist: f64,
    gas: &ThermalGas<f64>,
    weighting: Weighting,
    seed: u64,
    cell_length: f64,
) -> Result<Ensemble> {
    if n_atoms == 0 {
        return Err(domain("ensemble needs at least one atom"));
    }
    if !(waist.is_finite() && waist > 0.0) {
        return Err(domain(format!("waist must be positive, got {waist}")));
    }
    if !(cell_length.is_finite() && cell_length >= 0.0) {
        return Err(domain(format!("cell length must be non-negative, got {cell_length}")));
    }
    let nu_s = gas.thermal_speed();
    let atoms = (0..n_atoms as u64)
        .into_par_iter()
        .map(|i| sample_atom(seed, i, waist, nu_s, weighting, cell_length))
        .collect();
    Ok(Ensemble { atoms, seed, weighting, gas: *gas, waist, cell_length, elapsed: 0.0 })
}

fn move_atom(atom: &Atom, t: f64, motion: MotionModel) -> Atom {
    match motion {
        MotionModel::PaperAzimuthal => Atom {
            alpha: wrap_angle(atom.alpha + atom.tangential_velocity() / atom.r * t),
            ..*atom
        },
        MotionModel::Ballistic => {
            let (s, c) = atom.alpha.sin_cos();
            let x = atom.r * c + atom.velocity[0] * t;
            let y = atom.r * s + atom.velocity[1] * t;
            Atom {
                r: x.hypot(y),
                alpha: wrap_angle(y.atan2(x)),
                z: atom.z + atom.velocity[2] * t,
                velocity: atom.velocity,
            }
        }
    }
}

/// Moves every atom for storage time `t`.
pub fn evolve(ensemble: &Ensemble, t: f64, motion: MotionModel) -> Result<Ensemble> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(domain(format!("storage time must be >= 0, got {t}")));
    }
    if motion == MotionModel::PaperAzimuthal && ensemble.atoms.par_iter().any(|a| a.r == 0.0) {
        return Err(Error::Singularity("azimuthal motion undefined for an atom at r = 0".into()));
    }
    let atoms = if t == 0.0 {
        ensemble.atoms.clone()
    } else {
        ensemble.atoms.par_iter().map(|a| move_atom(a, t, motion)).collect()
    };
    Ok(Ensemble { atoms, elapsed: ensemble.elapsed + t, ..ensemble.clone() })
}

fn check_pair(before: &Ensemble, after: &Ensemble) -> Result<f64> {
    if before.atoms.len() != after.atoms.len()
        || before.seed != after.seed
        || before.weighting != after.weighting
        || before.waist != after.waist
        || before.gas != after.gas
    {
        return Err(Error::Contract("ensembles do not describe the same atoms".into()));
    }
    let t = after.elapsed - before.elapsed;
    if t < 0.0 {
        return Err(Error::Contract("`after` ensemble precedes `before`".into()));
    }
    Ok(t)
}

/// Retrieval efficiency of `sw` after the atoms moved from `before` to `after`.
pub fn estimate_efficiency(
    before: &Ensemble,
    after: &Ensemble,
    sw: &SpinWave<f64>,
    estimator: EfficiencyEstimator,
) -> Result<Estimate> {
    let t = check_pair(before, after)?;
    let n = before.atoms.len();
    match estimator {
        EfficiencyEstimator::Coherent => {
            let l = f64::from(sw.topological_charge);
            let dk = sw.longitudinal_mismatch;
            let (re, im): (Vec<f64>, Vec<f64>) = before
                .atoms
                .par_iter()
                .zip(after.atoms.par_iter())
                .map(|(a, b)| {
                    let phase = l * (b.alpha - a.alpha) + dk * (b.z - a.z);
                    let (s, c) = phase.sin_cos();
                    (c, s)
                })
                .unzip();
            Ok(coherent_jackknife(&re, &im))
        }
        EfficiencyEstimator::ConditionalIncoherent => {
            let rate_l = f64::from(sw.topological_charge.unsigned_abs()) * before.gas.thermal_speed() * t;
            let longitudinal = sw.longitudinal_mismatch * before.gas.thermal_speed() * t;
            let long_factor = (-(longitudinal * longitudinal)).exp();
            let values: Vec<f64> = before
                .atoms
                .par_iter()
                .map(|a| {
                    let x = if rate_l == 0.0 { 0.0 } else { rate_l / a.r };
                    (-(x * x)).exp() * long_factor
                })
                .collect();
            let mean = pairwise_sum(&values) / n as f64;
            let stderr = if n > 1 {
                let dev: Vec<f64> = values.par_iter().map(|v| (v - mean) * (v - mean)).collect();
                (pairwise_sum(&dev) / ((n - 1) as f64 * n as f64)).sqrt()
            } else {
                0.0
            };
            Ok(Estimate { efficiency: mean, stderr })
        }
    }
}

/// `|mean phasor|²` with its leave-one-out jackknife standard error.
fn coherent_jackknife(re: &[f64], im: &[f64]) -> Estimate {
    let n = re.len();
    let sr = pairwise_sum(re);
    let si = pairwise_sum(im);
    let nf = n as f64;
    let efficiency = (sr * sr + si * si) / (nf * nf);
    if n < 2 {
        return Estimate { efficiency, stderr: 0.0 };
    }
    let m = nf - 1.0;
    let loo: Vec<f64> = re
        .par_iter()
        .zip(im.par_iter())
        .map(|(&c, &s)| {
            let (a, b) = ((sr - c) / m, (si - s) / m);
            a * a + b * b
        })
        .collect();
    let mean = pairwise_sum(&loo) / nf;
    let dev: Vec<f64> = loo.par_iter().map(|v| (v - mean) * (v - mean)).collect();
    let stderr = (m / nf * pairwise_sum(&dev)).sqrt();
    Estimate { efficiency, stderr }
}

/// Parameters of a Monte Carlo decay-curve run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSettings {
    pub n_atoms: usize,
    pub motion: MotionModel,
    pub estimator: EfficiencyEstimator,
    pub weighting: Weighting,
    pub cell_length: f64,
    pub seed: u64,
}

impl McSettings {
    pub fn new(n_atoms: usize, seed: u64) -> Self {
        McSettings {
            n_atoms,
            motion: MotionModel::default(),
            estimator: EfficiencyEstimator::default(),
            weighting: Weighting::GaussianBeam,
            cell_length: DEFAULT_CELL_LENGTH,
            seed,
        }
    }
}

/// Decay curve from one ensemble written once and read out after each storage time.
pub fn decay_curve_mc(
    sw: &SpinWave<f64>,
    gas: &ThermalGas<f64>,
    times: &[f64],
    n_atoms: usize,
    motion: MotionModel,
    estimator: EfficiencyEstimator,
    seed: u64,
) -> Result<DecayCurve<f64>> {
    let settings = McSettings { motion, estimator, ..McSettings::new(n_atoms, seed) };
    decay_curve_with(sw, gas, times, &settings)
}

pub fn decay_curve_with(
    sw: &SpinWave<f64>,
    gas: &ThermalGas<f64>,
    times: &[f64],
    settings: &McSettings,
) -> Result<DecayCurve<f64>> {
    crate::analytic::validate_times(times)?;
    let initial = sample_ensemble_in_cell(
        settings.n_atoms,
        sw.waist,
        gas,
        settings.weighting,
        settings.seed,
        settings.cell_length,
    )?;
    let mut eff = Vec::with_capacity(times.len());
    let mut se = Vec::with_capacity(times.len());
    for &t in times {
        let moved = evolve(&initial, t, settings.motion)?;
        let est = estimate_efficiency(&initial, &moved, sw, settings.estimator)?;
        eff.push(est.efficiency);
        se.push(est.stderr);
    }
    DecayCurve::new(times.to_vec(), eff, Some(se))
}

/// Efficiency after a single storage time, one estimate per spin wave, all
/// read from the same initial ensemble.
pub fn efficiency_scan(
    spin_waves: &[SpinWave<f64>],
    gas: &ThermalGas<f64>,
    storage_time: f64,
    settings: &McSettings,
) -> Result<Vec<Estimate>> {
    let waist = match spin_waves.first() {
        Some(sw) => sw.waist,
        None => return Ok(Vec::new()),
    };
    if spin_waves.iter().any(|sw| sw.waist != waist) {
        return Err(domain("all spin waves in a scan must share one waist"));
    }
    let initial = sample_ensemble_in_cell(
        settings.n_atoms,
        waist,
        gas,
        settings.weighting,
        settings.seed,
        settings.cell_length,
    )?;
    let moved = evolve(&initial, storage_time, settings.motion)?;
    spin_waves
        .iter()
        .map(|sw| estimate_efficiency(&initial, &moved, sw, settings.estimator))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Species;

    fn gas() -> ThermalGas<f64> {
        ThermalGas::from_celsius(Species::Rb85, 55.0).unwrap()
    }

    fn sw(l: i32) -> SpinWave<f64> {
        SpinWave::new(l, 2e-3, 0.0).unwrap()
    }

    fn mean_and_se(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
        let n = xs.clone().count() as f64;
        let mean = xs.clone().sum::<f64>() / n;
        let var = xs.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    #[test]
    fn rejects_empty_ensemble() {
        assert!(sample_ensemble(0, 2e-3, &gas(), Weighting::GaussianBeam, 1).is_err());
    }

    #[test]
    fn radial_second_moment() {
        let w = 2e-3;
        let e = sample_ensemble(200_000, w, &gas(), Weighting::GaussianBeam, 11).unwrap();
        let (m, se) = mean_and_se(e.atoms().iter().map(|a| a.r * a.r));
        assert!((m - w * w / 2.0).abs() < 3.0 * se, "{m} vs {}", w * w / 2.0);
    }

    #[test]
    fn donut_second_moment() {
        // u = 2r²/W² ~ Gamma(|l|+1), so E[r²] = (|l|+1) W² / 2
        let w = 2e-3;
        let e = sample_ensemble(100_000, w, &gas(), Weighting::LgDonut { charge: 3 }, 5).unwrap();
        let (m, se) = mean_and_se(e.atoms().iter().map(|a| a.r * a.r));
        assert!((m - 4.0 * w * w / 2.0).abs() < 3.0 * se, "{m}");
    }

    #[test]
    fn velocity_components_centered() {
        let g = gas();
        let e = sample_ensemble(200_000, 2e-3, &g, Weighting::GaussianBeam, 3).unwrap();
        for k in 0..3 {
            let (m, se) = mean_and_se(e.atoms().iter().map(|a| a.velocity[k]));
            assert!(m.abs() < 3.0 * se, "component {k}: {m} ± {se}");
            let (v2, _) = mean_and_se(e.atoms().iter().map(|a| a.velocity[k].powi(2)));
            let nu = g.thermal_speed();
            assert!((v2 / (nu * nu) - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn azimuth_and_height_ranges() {
        let e = sample_ensemble(10_000, 2e-3, &gas(), Weighting::GaussianBeam, 3).unwrap();
        for a in e.atoms() {
            assert!(a.r > 0.0);
            assert!((0.0..TAU).contains(&a.alpha));
            assert!(a.z.abs() <= DEFAULT_CELL_LENGTH / 2.0);
        }
    }

    #[test]
    fn same_seed_same_atoms() {
        let a = sample_ensemble(5_000, 2e-3, &gas(), Weighting::GaussianBeam, 99).unwrap();
        let b = sample_ensemble(5_000, 2e-3, &gas(), Weighting::GaussianBeam, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_ensemble(5_000, 2e-3, &gas(), Weighting::GaussianBeam, 100).unwrap();
        assert_ne!(a.atoms()[0], c.atoms()[0]);
        // prefix property: atom i does not depend on the ensemble size
        let d = sample_ensemble(100, 2e-3, &gas(), Weighting::GaussianBeam, 99).unwrap();
        assert_eq!(&a.atoms()[..100], d.atoms());
    }

    #[test]
    fn gamma_quantile_inverts_cdf() {
        for shape in [1u32, 2, 3, 5, 9] {
            for p in [1e-6, 0.01, 0.3, 0.5, 0.9, 0.999_999] {
                let u = gamma_integer_quantile(shape, p);
                let mut term = 1.0;
                let mut sum = 1.0;
                for j in 1..shape {
                    term *= u / f64::from(j);
                    sum += term;
                }
                let cdf = 1.0 - (-u).exp() * sum;
                assert!((cdf - p).abs() < 1e-12 * p.max(1e-3), "shape {shape} p {p}: {cdf}");
            }
        }
    }

    #[test]
    fn zero_time_leaves_ensemble_unchanged() {
        let e = sample_ensemble(1000, 2e-3, &gas(), Weighting::GaussianBeam, 1).unwrap();
        for motion in [MotionModel::PaperAzimuthal, MotionModel::Ballistic] {
            assert_eq!(evolve(&e, 0.0, motion).unwrap(), e);
        }
    }

    #[test]
    fn azimuthal_motion_keeps_radius_and_height() {
        let e = sample_ensemble(1000, 2e-3, &gas(), Weighting::GaussianBeam, 1).unwrap();
        let moved = evolve(&e, 3e-6, MotionModel::PaperAzimuthal).unwrap();
        for (a, b) in e.atoms().iter().zip(moved.atoms()) {
            assert_eq!(a.r, b.r);
            assert_eq!(a.z, b.z);
            assert!((0.0..TAU).contains(&b.alpha));
        }
        assert_eq!(moved.elapsed(), 3e-6);
    }

    #[test]
    fn ballistic_radius_identity() {
        let e = sample_ensemble(1000, 2e-3, &gas(), Weighting::GaussianBeam, 8).unwrap();
        let t = 4e-6;
        let moved = evolve(&e, t, MotionModel::Ballistic).unwrap();
        for (a, b) in e.atoms().iter().zip(moved.atoms()) {
            let vperp2 = a.velocity[0].powi(2) + a.velocity[1].powi(2);
            let want = a.r * a.r + 2.0 * a.r * a.radial_velocity() * t + vperp2 * t * t;
            assert!((b.r * b.r - want).abs() <= 1e-12 * want, "{} vs {want}", b.r * b.r);
            assert!((b.z - (a.z + a.velocity[2] * t)).abs() < 1e-15);
        }
    }

    #[test]
    fn axis_atom_rejected_for_azimuthal_motion() {
        let mut e = sample_ensemble(10, 2e-3, &gas(), Weighting::GaussianBeam, 1).unwrap();
        e.atoms[3].r = 0.0;
        assert!(matches!(evolve(&e, 1e-6, MotionModel::PaperAzimuthal), Err(Error::Singularity(_))));
        assert!(evolve(&e, 1e-6, MotionModel::Ballistic).is_ok());
    }

    #[test]
    fn no_charge_no_dephasing() {
        let e = sample_ensemble(20_000, 2e-3, &gas(), Weighting::GaussianBeam, 2).unwrap();
        for motion in [MotionModel::PaperAzimuthal, MotionModel::Ballistic] {
            for t in [1e-7, 3e-6, 1e-4] {
                let moved = evolve(&e, t, motion).unwrap();
                for est in [EfficiencyEstimator::Coherent, EfficiencyEstimator::ConditionalIncoherent] {
                    let r = estimate_efficiency(&e, &moved, &sw(0), est).unwrap();
                    assert_eq!(r.efficiency, 1.0);
                }
            }
        }
    }

    #[test]
    fn zero_time_gives_unit_efficiency() {
        let e = sample_ensemble(5_000, 2e-3, &gas(), Weighting::GaussianBeam, 2).unwrap();
        let same = evolve(&e, 0.0, MotionModel::PaperAzimuthal).unwrap();
        let sw = SpinWave::new(3, 2e-3, 40.0).unwrap();
        for est in [EfficiencyEstimator::Coherent, EfficiencyEstimator::ConditionalIncoherent] {
            assert_eq!(estimate_efficiency(&e, &same, &sw, est).unwrap().efficiency, 1.0);
        }
    }

    #[test]
    fn mismatched_ensembles_rejected() {
        let a = sample_ensemble(100, 2e-3, &gas(), Weighting::GaussianBeam, 1).unwrap();
        let b = sample_ensemble(101, 2e-3, &gas(), Weighting::GaussianBeam, 1).unwrap();
        let c = sample_ensemble(100, 2e-3, &gas(), Weighting::GaussianBeam, 2).unwrap();
        let est = EfficiencyEstimator::Coherent;
        assert!(matches!(estimate_efficiency(&a, &b, &sw(1), est), Err(Error::Contract(_))));
        assert!(matches!(estimate_efficiency(&a, &c, &sw(1), est), Err(Error::Contract(_))));
        let later = evolve(&a, 1e-6, MotionModel::PaperAzimuthal).unwrap();
        assert!(matches!(estimate_efficiency(&later, &a, &sw(1), est), Err(Error::Contract(_))));
    }

    #[test]
    fn incoherent_estimator_sign_symmetric() {
        let e = sample_ensemble(10_000, 2e-3, &gas(), Weighting::GaussianBeam, 4).unwrap();
        let moved = evolve(&e, 2e-6, MotionModel::PaperAzimuthal).unwrap();
        let est = EfficiencyEstimator::ConditionalIncoherent;
        let p = estimate_efficiency(&e, &moved, &sw(3), est).unwrap();
        let m = estimate_efficiency(&e, &moved, &sw(-3), est).unwrap();
        assert_eq!(p, m);
    }

    #[test]
    fn coherent_estimator_sign_symmetric_statistically() {
        let e = sample_ensemble(10_000, 2e-3, &gas(), Weighting::GaussianBeam, 4).unwrap();
        let moved = evolve(&e, 2e-6, MotionModel::PaperAzimuthal).unwrap();
        let est = EfficiencyEstimator::Coherent;
        let p = estimate_efficiency(&e, &moved, &sw(3), est).unwrap();
        let m = estimate_efficiency(&e, &moved, &sw(-3), est).unwrap();
        assert!((p.efficiency - m.efficiency).abs() <= 3.0 * (p.stderr + m.stderr));
    }

    #[test]
    fn curve_at_zero_only() {
        let c = decay_curve_mc(
            &sw(2),
            &gas(),
            &[0.0],
            1000,
            MotionModel::PaperAzimuthal,
            EfficiencyEstimator::Coherent,
            1,
        )
        .unwrap();
        assert_eq!(c.efficiencies(), &[1.0]);
    }

    #[test]
    fn curve_is_monotone_within_noise() {
        let times: Vec<f64> = (0..12).map(|i| i as f64 * 0.5e-6).collect();
        for est in [EfficiencyEstimator::Coherent, EfficiencyEstimator::ConditionalIncoherent] {
            let c = decay_curve_mc(&sw(2), &gas(), &times, 50_000, MotionModel::PaperAzimuthal, est, 17)
                .unwrap();
            let se = c.stderrs().unwrap();
            for i in 1..c.len() {
                let (a, b) = (c.efficiencies()[i - 1], c.efficiencies()[i]);
                assert!(b <= a + 3.0 * (se[i] + se[i - 1]), "{est:?} step {i}: {a} -> {b}");
            }
        }
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (0..100_000).map(|i| (i % 7) as f64).collect();
        assert_eq!(pairwise_sum(&v), v.iter().sum::<f64>());
        assert_eq!(pairwise_sum(&[]), 0.0);
    }

    #[test]
    fn jackknife_matches_delta_method_scale() {
        // Independent uniform phases: efficiency ≈ 1/N, jackknife se of the same order.
        let e = sample_ensemble(4_000, 2e-3, &gas(), Weighting::GaussianBeam, 6).unwrap();
        let moved = evolve(&e, 1e-3, MotionModel::PaperAzimuthal).unwrap();
        let r = estimate_efficiency(&e, &moved, &sw(5), EfficiencyEstimator::Coherent).unwrap();
        assert!(r.efficiency < 5e-3);
        assert!(r.stderr > 0.0 && r.stderr < 5e-3);
    }
}
