//! Adaptive Gauss–Kronrod (G10/K21) quadrature for vector-valued integrands.
//!
//! The integrator bisects the panel with the largest error estimate until the
//! summed estimate falls under `max(abs_tol, rel_tol * |I_0|)`. Component 0
//! drives the relative tolerance; the other components share the same panels.

use crate::error::{Error, Result};

const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689,
    0.973_906_528_517_171_720_077_964_012_084,
    0.930_157_491_355_708_226_001_207_180_060,
    0.865_063_366_688_984_510_732_096_688_423,
    0.780_817_726_586_416_897_063_717_578_345,
    0.679_409_568_299_024_406_234_327_365_115,
    0.562_757_134_668_604_683_339_000_099_273,
    0.433_395_394_129_247_190_799_265_943_166,
    0.294_392_862_701_460_198_131_126_603_104,
    0.148_874_338_981_631_210_884_826_001_130,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062,
    0.032_558_162_307_964_727_478_818_972_459,
    0.054_755_896_574_351_996_031_381_300_245,
    0.075_039_674_810_919_952_767_043_140_916,
    0.093_125_454_583_697_605_535_065_465_083,
    0.109_387_158_802_297_641_899_210_590_326,
    0.123_491_976_262_065_851_077_208_626_368,
    0.134_709_217_311_473_325_928_054_001_772,
    0.142_775_938_577_060_080_797_094_273_139,
    0.147_739_104_901_338_491_374_841_515_972,
    0.149_445_554_002_916_905_664_936_468_390,
];

const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893,
    0.149_451_349_150_580_593_145_776_339_658,
    0.219_086_362_515_982_043_995_534_934_228,
    0.269_266_719_309_996_355_091_226_921_569,
    0.295_524_224_714_752_870_173_892_994_651,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_panels: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { abs_tol: 0.0, rel_tol: 1e-12, max_panels: 400 }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<const K: usize> {
    pub value: [f64; K],
    pub error: f64,
    pub panels: usize,
}

#[derive(Clone, Copy)]
struct Panel<const K: usize> {
    a: f64,
    b: f64,
    value: [f64; K],
    error: f64,
}

fn rescale_error(err: f64, res_abs: f64, res_asc: f64) -> f64 {
    let mut e = err.abs();
    if res_asc != 0.0 && e != 0.0 {
        let scale = (200.0 * e / res_asc).powf(1.5);
        e = if scale < 1.0 { res_asc * scale } else { res_asc };
    }
    if res_abs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        e = e.max(50.0 * f64::EPSILON * res_abs);
    }
    e
}

fn kronrod21<const K: usize, F: Fn(f64) -> [f64; K]>(f: &F, a: f64, b: f64) -> Panel<K> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kron = [0.0; K];
    let mut gauss = [0.0; K];
    let mut res_abs = [0.0; K];
    let mut fv1 = [[0.0; K]; 10];
    let mut fv2 = [[0.0; K]; 10];
    for c in 0..K {
        kron[c] = fc[c] * WGK[10];
        res_abs[c] = kron[c].abs();
    }
    for j in 0..10 {
        let x = half * XGK[j];
        let f1 = f(center - x);
        let f2 = f(center + x);
        fv1[j] = f1;
        fv2[j] = f2;
        for c in 0..K {
            let s = f1[c] + f2[c];
            kron[c] += WGK[j] * s;
            res_abs[c] += WGK[j] * (f1[c].abs() + f2[c].abs());
            if j % 2 == 1 {
                gauss[c] += WG[j / 2] * s;
            }
        }
    }
    let mut error: f64 = 0.0;
    let mut value = [0.0; K];
    for c in 0..K {
        let mean = kron[c] * 0.5;
        let mut asc = WGK[10] * (fc[c] - mean).abs();
        for j in 0..10 {
            asc += WGK[j] * ((fv1[j][c] - mean).abs() + (fv2[j][c] - mean).abs());
        }
        let e = rescale_error(
            (kron[c] - gauss[c]) * half,
            res_abs[c] * half.abs(),
            asc * half.abs(),
        );
        error = error.max(e);
        value[c] = kron[c] * half;
    }
    Panel { a, b, value, error }
}

/// Integrate `f` over the finite interval `[a, b]`, splitting first at the
/// interior `breakpoints`.
pub fn integrate<const K: usize, F>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    cfg: QuadConfig,
) -> Result<QuadResult<K>>
where
    F: Fn(f64) -> [f64; K],
{
    if !(a.is_finite() && b.is_finite()) || b < a {
        return Err(Error::domain(format!("invalid quadrature interval [{a}, {b}]")));
    }
    if a == b {
        return Ok(QuadResult { value: [0.0; K], error: 0.0, panels: 0 });
    }
    let mut cuts = vec![a];
    let mut bps: Vec<f64> = breakpoints.iter().copied().filter(|&x| x > a && x < b).collect();
    bps.sort_by(|x, y| x.total_cmp(y));
    cuts.extend(bps);
    cuts.push(b);
    let mut panels: Vec<Panel<K>> = cuts
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| kronrod21(&f, w[0], w[1]))
        .collect();

    loop {
        let mut total = [0.0; K];
        let mut err = 0.0;
        for p in &panels {
            for c in 0..K {
                total[c] += p.value[c];
            }
            err += p.error;
        }
        if total.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite quadrature value".into()));
        }
        let tol = cfg.abs_tol.max(cfg.rel_tol * total[0].abs());
        if err <= tol || panels.len() >= cfg.max_panels {
            return Ok(QuadResult { value: total, error: err, panels: panels.len() });
        }
        let (worst, _) = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .expect("at least one panel");
        let p = panels.swap_remove(worst);
        let mid = 0.5 * (p.a + p.b);
        if mid <= p.a || mid >= p.b {
            // Panel cannot be split further in floating point.
            return Ok(QuadResult { value: total, error: err, panels: panels.len() + 1 });
        }
        panels.push(kronrod21(&f, p.a, mid));
        panels.push(kronrod21(&f, mid, p.b));
    }
}

/// Scalar convenience wrapper.
pub fn integrate_scalar<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    cfg: QuadConfig,
) -> Result<f64> {
    integrate(|x| [f(x)], a, b, breakpoints, cfg).map(|r| r.value[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomials_are_exact() {
        let v = integrate_scalar(|x| x.powi(7) - 3.0 * x * x + 1.0, -1.0, 2.0, &[], QuadConfig::default())
            .unwrap();
        let exact = (2f64.powi(8) - 1.0) / 8.0 - (8.0 + 1.0) + 3.0;
        assert!((v - exact).abs() < 1e-13);
    }

    #[test]
    fn gaussian_integral() {
        let v = integrate_scalar(|x| (-0.5 * x * x).exp(), -40.0, 40.0, &[0.0], QuadConfig::default())
            .unwrap();
        assert!((v - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn kink_with_breakpoint() {
        let v = integrate_scalar(|x: f64| (-x.abs()).exp(), -30.0, 30.0, &[0.0], QuadConfig::default())
            .unwrap();
        assert!((v - 2.0 * (1.0 - (-30f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn vector_components_share_panels() {
        let r = integrate(|x: f64| [x.exp(), x * x.exp()], 0.0, 1.0, &[], QuadConfig::default()).unwrap();
        assert!((r.value[0] - (1f64.exp() - 1.0)).abs() < 1e-13);
        assert!((r.value[1] - 1.0).abs() < 1e-13);
    }
}
