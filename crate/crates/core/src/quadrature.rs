//! Globally adaptive Gauss-Kronrod (7/15) quadrature with QUADPACK-style
//! error estimates, plus a rational map for semi-infinite ranges.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

#[allow(clippy::excessive_precision)]
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

#[allow(clippy::excessive_precision)]
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

// Gauss weights for XGK[1], XGK[3], XGK[5], XGK[7].
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_SUBDIVISIONS: usize = 5000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Copy)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

impl PartialEq for Panel {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Panel {}
impl PartialOrd for Panel {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Panel {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Panel {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resg = fc * WG[3];
    let mut resk = fc * WGK[7];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * resk;
    let mut resasc = WGK[7] * (fc - mean).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - mean).abs() + (fv2[j] - mean).abs());
    }
    let value = resk * half;
    let resabs = resabs * half.abs();
    let resasc = resasc * half.abs();
    let mut error = ((resk - resg) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        error = error.max(50.0 * f64::EPSILON * resabs);
    }
    Panel { a, b, value, error }
}

/// Adaptive integral of `f` over the finite interval `[a, b]`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64) -> Result<Estimate> {
    integrate_pieces(&f, &[a, b], abs_tol)
}

/// Adaptive integral over `[points[0], points[last]]`, with the interior
/// points treated as known breakpoints of `f`.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: &F, points: &[f64], abs_tol: f64) -> Result<Estimate> {
    if points.len() < 2 {
        return Ok(Estimate { value: 0.0, error: 0.0 });
    }
    let mut heap = BinaryHeap::new();
    let mut settled = Estimate { value: 0.0, error: 0.0 };
    for w in points.windows(2) {
        if w[1] > w[0] {
            heap.push(kronrod(f, w[0], w[1]));
        }
    }
    let mut subdivisions = 0;
    loop {
        let (value, error) = heap
            .iter()
            .fold((settled.value, settled.error), |(v, e), p| (v + p.value, e + p.error));
        if !value.is_finite() || !error.is_finite() {
            return Err(Error::QuadratureFailed { value, error });
        }
        if error <= abs_tol {
            return Ok(Estimate { value, error });
        }
        let Some(worst) = heap.pop() else {
            return Err(Error::QuadratureFailed { value, error });
        };
        let mid = 0.5 * (worst.a + worst.b);
        if subdivisions >= MAX_SUBDIVISIONS {
            return Err(Error::QuadratureFailed { value, error });
        }
        if mid <= worst.a || mid >= worst.b {
            // cannot split further in floating point
            settled.value += worst.value;
            settled.error += worst.error;
            if settled.error > abs_tol {
                return Err(Error::QuadratureFailed { value, error });
            }
            continue;
        }
        heap.push(kronrod(f, worst.a, mid));
        heap.push(kronrod(f, mid, worst.b));
        subdivisions += 1;
    }
}

/// Integral of `f` over `[a, inf)` via `u = a + s/(1-s)`, `s in [0, 1)`.
pub fn integrate_upper<F: Fn(f64) -> f64>(f: F, a: f64, abs_tol: f64) -> Result<Estimate> {
    let g = |s: f64| {
        let one_minus = 1.0 - s;
        if one_minus <= 0.0 {
            return 0.0;
        }
        let u = a + s / one_minus;
        let v = f(u) / (one_minus * one_minus);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    integrate(g, 0.0, 1.0, abs_tol)
}
