//! Globally adaptive Gauss–Kronrod (10/21-point) quadrature.
//!
//! Infinite ranges are mapped onto `(0, 1]` by `x = a + (1 - t)/t`. The
//! interval with the largest error estimate is bisected until the summed
//! error meets `max(abs_tol, rel_tol·|I|)`.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_980_306_690,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

// Gauss weights for XGK[1], XGK[3], ..., XGK[9].
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 0.0,
            rel_tol: 1e-10,
            max_intervals: 2000,
        }
    }
}

impl QuadOptions {
    pub fn rel(rel_tol: f64) -> Self {
        QuadOptions {
            rel_tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy)]
enum Map {
    Finite,
    // x = a + (1 - t)/t
    Upper(f64),
    // x = b - (1 - t)/t
    Lower(f64),
}

struct Piece {
    lo: f64,
    hi: f64,
    map: Map,
    value: f64,
    error: f64,
}

impl PartialEq for Piece {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Piece {}
impl PartialOrd for Piece {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Piece {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn eval_mapped<F: Fn(f64) -> f64>(f: &F, map: Map, t: f64) -> f64 {
    match map {
        Map::Finite => f(t),
        Map::Upper(a) => {
            let v = f(a + (1.0 - t) / t);
            if v == 0.0 { 0.0 } else { v / (t * t) }
        }
        Map::Lower(b) => {
            let v = f(b - (1.0 - t) / t);
            if v == 0.0 { 0.0 } else { v / (t * t) }
        }
    }
}

fn gk21<F: Fn(f64) -> f64>(f: &F, map: Map, lo: f64, hi: f64) -> (f64, f64) {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = eval_mapped(f, map, center);
    let mut resk = WGK[10] * fc;
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 10];
    let mut fv2 = [0.0; 10];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = eval_mapped(f, map, center - dx);
        let f2 = eval_mapped(f, map, center + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let reskh = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - reskh).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let result = resk * half;
    resabs *= half.abs();
    resasc *= half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (result, err)
}

/// Integrates `f` over `[a, b]`; either end may be infinite.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> QuadResult {
    integrate_with_breaks(f, a, b, &[], opts)
}

/// Integrates `f` over `[a, b]`, splitting first at every interior point of
/// `breaks` (kinks, modes, centers). Points outside `(a, b)` are ignored.
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    opts: QuadOptions,
) -> QuadResult {
    if a == b {
        return QuadResult {
            value: 0.0,
            error: 0.0,
            evaluations: 0,
            converged: true,
        };
    }
    if a > b {
        let r = integrate_with_breaks(f, b, a, breaks, opts);
        return QuadResult {
            value: -r.value,
            ..r
        };
    }
    let mut points: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|x| x.is_finite() && *x > a && *x < b)
        .collect();
    points.sort_by(f64::total_cmp);
    points.dedup();
    let mut edges = Vec::with_capacity(points.len() + 2);
    edges.push(a);
    edges.extend(points);
    edges.push(b);

    let mut heap = BinaryHeap::new();
    let mut evaluations = 0;
    for w in edges.windows(2) {
        let (lo, hi, map) = match (w[0].is_finite(), w[1].is_finite()) {
            (true, true) => (w[0], w[1], Map::Finite),
            (true, false) => (0.0, 1.0, Map::Upper(w[0])),
            (false, true) => (0.0, 1.0, Map::Lower(w[1])),
            (false, false) => {
                // Whole line without breakpoints: split at zero.
                for (lo, hi, map) in [(0.0, 1.0, Map::Lower(0.0)), (0.0, 1.0, Map::Upper(0.0))] {
                    let (value, error) = gk21(&f, map, lo, hi);
                    evaluations += 21;
                    heap.push(Piece { lo, hi, map, value, error });
                }
                continue;
            }
        };
        let (value, error) = gk21(&f, map, lo, hi);
        evaluations += 21;
        heap.push(Piece { lo, hi, map, value, error });
    }

    let mut converged = false;
    loop {
        let total: f64 = heap.iter().map(|p| p.value).sum();
        let err: f64 = heap.iter().map(|p| p.error).sum();
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()) {
            converged = true;
            break;
        }
        if heap.len() >= opts.max_intervals {
            break;
        }
        let worst = heap.pop().expect("non-empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if mid <= worst.lo || mid >= worst.hi {
            heap.push(worst);
            break;
        }
        for (lo, hi) in [(worst.lo, mid), (mid, worst.hi)] {
            let (value, error) = gk21(&f, worst.map, lo, hi);
            evaluations += 21;
            heap.push(Piece { lo, hi, map: worst.map, value, error });
        }
    }
    // Sum small contributions first.
    let mut parts: Vec<(f64, f64)> = heap.iter().map(|p| (p.value, p.error)).collect();
    parts.sort_by(|x, y| x.0.abs().total_cmp(&y.0.abs()));
    QuadResult {
        value: parts.iter().map(|p| p.0).sum(),
        error: parts.iter().map(|p| p.1).sum(),
        evaluations,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn polynomial_exact() {
        let r = integrate(|x| 3.0 * x * x - x + 1.0, -1.0, 2.0, QuadOptions::default());
        // [x^3 - x^2/2 + x] from -1 to 2
        let exact = (8.0 - 2.0 + 2.0) - (-1.0 - 0.5 - 1.0);
        assert!((r.value - exact).abs() < 1e-13);
        assert!(r.converged);
    }

    #[test]
    fn gaussian_over_real_line() {
        let r = integrate(|x: f64| (-0.5 * x * x).exp(), f64::NEG_INFINITY, f64::INFINITY, QuadOptions::default());
        assert!((r.value - (2.0 * PI).sqrt()).abs() < 1e-11, "{}", r.value);
    }

    #[test]
    fn kink_with_break() {
        let r = integrate_with_breaks(
            |x: f64| (-x.abs()).exp(),
            f64::NEG_INFINITY,
            f64::INFINITY,
            &[0.0],
            QuadOptions::default(),
        );
        assert!((r.value - 2.0).abs() < 1e-11);
    }

    #[test]
    fn reversed_limits_negate() {
        let a = integrate(|x: f64| x.sin(), 0.0, 1.0, QuadOptions::default());
        let b = integrate(|x: f64| x.sin(), 1.0, 0.0, QuadOptions::default());
        assert_eq!(a.value, -b.value);
    }

    #[test]
    fn polynomial_tail() {
        // ∫_1^∞ x^-4 dx = 1/3
        let r = integrate(|x: f64| x.powi(-4), 1.0, f64::INFINITY, QuadOptions::default());
        assert!((r.value - 1.0 / 3.0).abs() < 1e-12);
    }
}
