//! Globally adaptive Gauss-Kronrod (7-15) quadrature.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{domain, Result};
use crate::num::Scalar;

// 15-point Kronrod abscissae (non-negative half); odd indices are the 7-point Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];

const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

/// Stopping rule: the summed error estimate must fall below `max(abs, rel·|I|)`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance<T> {
    pub abs: T,
    pub rel: T,
    pub max_intervals: usize,
}

impl<T: Scalar> Tolerance<T> {
    pub fn absolute(abs: T) -> Self {
        Tolerance { abs, rel: T::zero(), max_intervals: 2000 }
    }

    pub fn relative(rel: T) -> Self {
        Tolerance { abs: T::zero(), rel, max_intervals: 2000 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Integral<T> {
    pub value: T,
    pub error: T,
    pub intervals: usize,
    /// False when the interval budget ran out before the tolerance was met.
    pub converged: bool,
}

struct Segment<T> {
    a: T,
    b: T,
    value: T,
    error: T,
}

impl<T: Scalar> PartialEq for Segment<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<T: Scalar> Eq for Segment<T> {}
impl<T: Scalar> PartialOrd for Segment<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<T: Scalar> Ord for Segment<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.partial_cmp(&other.error).unwrap_or(Ordering::Equal)
    }
}

/// One 15-point Kronrod rule on `[a, b]`; error estimate is `|K15 - G7|`.
fn kronrod<T: Scalar>(f: &mut impl FnMut(T) -> T, a: T, b: T) -> (T, T) {
    let half = T::lit(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let fc = f(center);
    let mut kron = fc * T::lit(WGK[7]);
    let mut gauss = fc * T::lit(WG[3]);
    for j in 0..7 {
        let dx = half_len * T::lit(XGK[j]);
        let pair = f(center - dx) + f(center + dx);
        kron = kron + T::lit(WGK[j]) * pair;
        if j % 2 == 1 {
            gauss = gauss + T::lit(WG[j / 2]) * pair;
        }
    }
    (kron * half_len, ((kron - gauss) * half_len).abs())
}

/// Integrates `f` over the finite interval `[a, b]`.
pub fn integrate<T: Scalar>(
    mut f: impl FnMut(T) -> T,
    a: T,
    b: T,
    tol: Tolerance<T>,
) -> Result<Integral<T>> {
    if !(a.is_finite() && b.is_finite()) {
        return Err(domain("finite integration limits required"));
    }
    if a == b {
        return Ok(Integral { value: T::zero(), error: T::zero(), intervals: 0, converged: true });
    }
    let (value, error) = kronrod(&mut f, a, b);
    let mut heap = BinaryHeap::new();
    heap.push(Segment { a, b, value, error });
    let mut total = value;
    let mut total_err = error;
    let mut intervals = 1;
    loop {
        let target = tol.abs.max(tol.rel * total.abs());
        if total_err <= target {
            break;
        }
        if intervals >= tol.max_intervals {
            return Ok(Integral { value: total, error: total_err, intervals, converged: false });
        }
        let worst = heap.pop().expect("heap holds at least one segment");
        let mid = T::lit(0.5) * (worst.a + worst.b);
        let (lv, le) = kronrod(&mut f, worst.a, mid);
        let (rv, re) = kronrod(&mut f, mid, worst.b);
        total = total - worst.value + lv + rv;
        total_err = total_err - worst.error + le + re;
        heap.push(Segment { a: worst.a, b: mid, value: lv, error: le });
        heap.push(Segment { a: mid, b: worst.b, value: rv, error: re });
        intervals += 1;
        // Re-sum occasionally so cancellation in the running totals cannot drift.
        if intervals % 64 == 0 {
            total = heap.iter().fold(T::zero(), |s, seg| s + seg.value);
            total_err = heap.iter().fold(T::zero(), |s, seg| s + seg.error);
        }
    }
    let value = heap.iter().fold(T::zero(), |s, seg| s + seg.value);
    Ok(Integral { value, error: total_err, intervals, converged: true })
}

/// Integrates `f` over `[a, ∞)` through the map `x = a + s/(1-s)`, `s ∈ [0, 1)`.
pub fn integrate_to_infinity<T: Scalar>(
    mut f: impl FnMut(T) -> T,
    a: T,
    tol: Tolerance<T>,
) -> Result<Integral<T>> {
    let one = T::one();
    integrate(
        move |s: T| {
            let w = one - s;
            let x = a + s / w;
            let v = f(x);
            if v == T::zero() {
                v
            } else {
                v / (w * w)
            }
        },
        T::zero(),
        one,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_exact_for_low_degree_polynomials() {
        // K15 integrates polynomials up to degree 22 exactly.
        for deg in 0..=22 {
            let (v, _) = kronrod(&mut |x: f64| x.powi(deg), 0.0, 1.0);
            let exact = 1.0 / (deg as f64 + 1.0);
            assert!((v - exact).abs() < 1e-15, "degree {deg}: {v} vs {exact}");
        }
    }

    #[test]
    fn gauss_part_exact_to_degree_13() {
        // error estimate vanishes when both rules are exact
        let (_, err) = kronrod(&mut |x: f64| x.powi(13) + x.powi(4), -1.0, 2.0);
        assert!(err < 1e-12, "{err}");
    }

    #[test]
    fn weights_sum_to_interval_length() {
        let (v, _) = kronrod(&mut |_: f64| 1.0, -3.0, 5.0);
        assert!((v - 8.0).abs() < 1e-14);
    }

    #[test]
    fn oscillatory_integral() {
        let r = integrate(|x: f64| (10.0 * x).sin(), 0.0, std::f64::consts::PI, Tolerance::absolute(1e-13))
            .unwrap();
        assert!(r.converged);
        assert!(r.value.abs() < 1e-12, "{}", r.value);
        let r = integrate(|x: f64| x.cos(), 0.0, 1.0, Tolerance::relative(1e-13)).unwrap();
        assert!((r.value - 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn semi_infinite_gaussian() {
        let r = integrate_to_infinity(|x: f64| (-x * x).exp(), 0.0, Tolerance::relative(1e-13)).unwrap();
        let exact = std::f64::consts::PI.sqrt() / 2.0;
        assert!((r.value / exact - 1.0).abs() < 1e-13, "{}", r.value);
    }

    #[test]
    fn semi_infinite_with_shifted_origin() {
        let r = integrate_to_infinity(|x: f64| (-x).exp(), 2.0, Tolerance::relative(1e-13)).unwrap();
        assert!((r.value / (-2f64).exp() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn endpoint_singularity_converges() {
        let r = integrate(|x: f64| 1.0 / x.sqrt(), 0.0, 1.0, Tolerance::relative(1e-10)).unwrap();
        assert!(r.converged);
        assert!((r.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn exhausted_budget_reported() {
        let tol = Tolerance { abs: 0.0, rel: 1e-300, max_intervals: 3 };
        let r = integrate(|x: f64| (50.0 * x).sin().abs(), 0.0, 1.0, tol).unwrap();
        assert!(!r.converged);
    }

    #[test]
    fn works_in_f32() {
        let r = integrate(|x: f32| x * x, 0.0, 3.0, Tolerance::relative(1e-5)).unwrap();
        assert!((r.value - 9.0).abs() < 1e-4);
    }

    #[test]
    fn rejects_infinite_limits() {
        assert!(integrate(|x: f64| x, 0.0, f64::INFINITY, Tolerance::relative(1e-6)).is_err());
    }
}
