//! Special functions: log-Gamma, normal distribution helpers and the
//! bivariate normal CDF.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::sync::OnceLock;

use libm::erfc;

const LANCZOS: [f64; 14] = [
    57.156_235_665_862_923_5,
    -59.597_960_355_475_491_2,
    14.136_097_974_741_747_1,
    -0.491_913_816_097_620_199,
    0.339_946_499_848_118_887e-4,
    0.465_236_289_270_485_756e-4,
    -0.983_744_753_048_795_646e-4,
    0.158_088_703_224_912_494e-3,
    -0.210_264_441_724_104_883e-3,
    0.217_439_618_115_212_643e-3,
    -0.164_318_106_536_763_890e-3,
    0.844_182_239_838_527_433e-4,
    -0.261_908_384_015_814_087e-4,
    0.368_991_826_595_316_234e-5,
];

/// ln Γ(x) for x > 0 (Lanczos, g = 671/128, relative error below 1e-15).
pub fn ln_gamma(x: f64) -> f64 {
    debug_assert!(x > 0.0, "ln_gamma needs a positive argument");
    let mut y = x;
    let tmp = x + 5.242_187_5;
    let tmp = (x + 0.5) * tmp.ln() - tmp;
    let mut ser = 0.999_999_999_999_997_092;
    for c in LANCZOS {
        y += 1.0;
        ser += c / y;
    }
    tmp + (2.506_628_274_631_000_5 * ser / x).ln()
}

/// Γ(x) for real x, using reflection below 1/2. Poles return NaN.
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        if x == x.floor() {
            return f64::NAN;
        }
        PI / ((PI * x).sin() * gamma(1.0 - x))
    } else {
        ln_gamma(x).exp()
    }
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Φ(x), accurate in both tails.
pub fn norm_cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        return 1.0;
    }
    if x == f64::NEG_INFINITY {
        return 0.0;
    }
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// ln Φ(x), finite far into the left tail where Φ underflows.
pub fn ln_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        return norm_cdf(x).ln();
    }
    // Asymptotic Mills-ratio series.
    let z2 = x * x;
    let series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2);
    -0.5 * z2 - (-x).ln() - 0.5 * (2.0 * PI).ln() + series.ln()
}

/// Inverse standard normal CDF (Wichura's AS 241, about 1e-16 relative).
pub fn norm_inv_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180_625 - q * q;
        let num = ((((((2.509_080_928_730_122_672_7e3 * r + 3.343_057_558_358_812_810_5e4) * r
            + 6.726_577_092_700_870_085_3e4)
            * r
            + 4.592_195_393_154_987_145_7e4)
            * r
            + 1.373_169_376_550_946_112_5e4)
            * r
            + 1.971_590_950_306_551_442_7e3)
            * r
            + 1.331_416_678_917_843_774_5e2)
            * r
            + 3.387_132_872_796_366_608;
        let den = ((((((5.226_495_278_852_854_561e3 * r + 2.872_908_573_572_194_267_4e4) * r
            + 3.930_789_580_009_271_061e4)
            * r
            + 2.121_379_430_158_659_586_7e4)
            * r
            + 5.394_196_021_424_751_107_7e3)
            * r
            + 6.871_870_074_920_579_083e2)
            * r
            + 4.231_333_070_160_091_125_2e1)
            * r
            + 1.0;
        return q * num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414_076_4e-4 * r + 2.272_384_498_926_918_458_33e-2) * r
            + 2.417_807_251_774_506_117_7e-1)
            * r
            + 1.270_458_252_452_368_382_58)
            * r
            + 3.647_848_324_763_204_605_04)
            * r
            + 5.769_497_221_460_691_405_5)
            * r
            + 4.630_337_846_156_545_295_9)
            * r
            + 1.423_437_110_749_683_577_34;
        let den = ((((((1.050_750_071_644_416_843_24e-9 * r + 5.475_938_084_995_344_946e-4) * r
            + 1.519_866_656_361_645_719_66e-2)
            * r
            + 1.481_039_764_274_800_745_9e-1)
            * r
            + 6.897_673_349_851_000_045_5e-1)
            * r
            + 1.676_384_830_183_803_849_4)
            * r
            + 2.053_191_626_637_758_821_87)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_132_65e-7 * r + 2.711_555_568_743_487_578_15e-5) * r
            + 1.242_660_947_388_078_438_6e-3)
            * r
            + 2.653_218_952_657_612_309_3e-2)
            * r
            + 2.965_605_718_285_048_912_3e-1)
            * r
            + 1.784_826_539_917_291_335_8)
            * r
            + 5.463_784_911_164_114_369_9)
            * r
            + 6.657_904_643_501_103_777_2;
        let den = ((((((2.044_263_103_389_939_785_64e-15 * r + 1.421_511_758_316_445_888_7e-7) * r
            + 1.846_318_317_510_054_681_8e-5)
            * r
            + 7.868_691_311_456_132_591e-4)
            * r
            + 1.487_536_129_085_061_485_25e-2)
            * r
            + 1.369_298_809_227_358_053_1e-1)
            * r
            + 5.998_322_065_558_879_376_9e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    // Newton iteration on P_n; returns the positive half of the nodes.
    let mut out = Vec::with_capacity(n / 2);
    for i in 0..n / 2 {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        out.push((x, 2.0 / ((1.0 - x * x) * dp * dp)));
    }
    out
}

fn gl_table(level: usize) -> &'static [(f64, f64)] {
    static TABLES: OnceLock<[Vec<(f64, f64)>; 3]> = OnceLock::new();
    let t = TABLES.get_or_init(|| [gauss_legendre(6), gauss_legendre(12), gauss_legendre(20)]);
    &t[level]
}

/// P(X > h, Y > k) for a standard bivariate normal with correlation `r`
/// (Genz's BVND, double precision).
fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let table = if r.abs() < 0.3 {
        gl_table(0)
    } else if r.abs() < 0.75 {
        gl_table(1)
    } else {
        gl_table(2)
    };
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = r.asin();
        for &(x, w) in table {
            for sign in [-1.0, 1.0] {
                let sn = (asr * (1.0 + sign * x) * 0.5).sin();
                bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        return bvn * asr / (2.0 * two_pi) + norm_cdf(-h) * norm_cdf(-k);
    }
    let mut k = k;
    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    if r.abs() < 1.0 {
        let as_ = (1.0 - r) * (1.0 + r);
        let mut a = as_.sqrt();
        let bs = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        bvn = a
            * (-(bs / as_ + hk) / 2.0).exp()
            * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
        if hk > -160.0 {
            let b = bs.sqrt();
            bvn -= (-hk / 2.0).exp()
                * two_pi.sqrt()
                * norm_cdf(-b / a)
                * b
                * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
        }
        a /= 2.0;
        for &(x, w) in table {
            for sign in [-1.0, 1.0] {
                let xs = (a * (sign * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -(bs / xs + hk) / 2.0;
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * xs / (2.0 * (1.0 + rs).powi(2))).exp() / rs
                            - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn / two_pi;
    }
    if r > 0.0 {
        bvn + norm_cdf(-h.max(k))
    } else {
        -bvn + (norm_cdf(-h) - norm_cdf(-k)).max(0.0)
    }
}

/// P(X ≤ h, Y ≤ k) for a standard bivariate normal with correlation `rho`.
/// Infinite limits are allowed.
pub fn bvn_cdf(h: f64, k: f64, rho: f64) -> f64 {
    if h == f64::NEG_INFINITY || k == f64::NEG_INFINITY {
        return 0.0;
    }
    if h == f64::INFINITY {
        return norm_cdf(k);
    }
    if k == f64::INFINITY {
        return norm_cdf(h);
    }
    if rho >= 1.0 {
        return norm_cdf(h.min(k));
    }
    if rho <= -1.0 {
        return (norm_cdf(h) - norm_cdf(-k)).max(0.0);
    }
    bvn_upper(-h, -k, rho).clamp(0.0, 1.0)
}

/// P(a1 ≤ X ≤ b1, a2 ≤ Y ≤ b2) for a standard bivariate normal.
pub fn bvn_rectangle(a1: f64, b1: f64, a2: f64, b2: f64, rho: f64) -> f64 {
    let p = bvn_cdf(b1, b2, rho) - bvn_cdf(a1, b2, rho) - bvn_cdf(b1, a2, rho) + bvn_cdf(a1, a2, rho);
    p.max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{integrate, QuadratureConfig};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn gamma_known_values() {
        assert_relative_eq!(gamma(1.0), 1.0, max_relative = 1e-14);
        assert_relative_eq!(gamma(0.5), PI.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(gamma(5.0), 24.0, max_relative = 1e-14);
        assert_relative_eq!(gamma(-0.5), -2.0 * PI.sqrt(), max_relative = 1e-14);
        assert!(gamma(-2.0).is_nan());
    }

    #[test]
    fn ln_gamma_matches_statrs() {
        for i in 1..200 {
            let x = i as f64 * 0.037;
            let ours = ln_gamma(x);
            let theirs = statrs::function::gamma::ln_gamma(x);
            assert!((ours - theirs).abs() <= 1e-13 * theirs.abs().max(1.0), "x = {x}");
        }
    }

    #[test]
    fn inverse_cdf_round_trips() {
        for &p in &[1e-300, 1e-20, 1e-8, 0.01, 0.2, 0.5, 0.7, 0.975, 1.0 - 1e-10] {
            let x = norm_inv_cdf(p);
            assert_relative_eq!(norm_cdf(x), p, max_relative = 1e-12);
        }
        assert_relative_eq!(norm_inv_cdf(0.975), 1.959_963_984_540_054, max_relative = 1e-15);
    }

    #[test]
    fn ln_norm_cdf_is_continuous_at_switch() {
        let below = ln_norm_cdf(-30.0 - 1e-9);
        let above = ln_norm_cdf(-30.0 + 1e-9);
        assert!((below - above).abs() < 1e-6);
        assert!(ln_norm_cdf(-100.0).is_finite());
    }

    fn bvn_by_quadrature(h: f64, k: f64, rho: f64) -> f64 {
        // P(X ≤ h, Y ≤ k) = ∫_{-∞}^{h} φ(x) Φ((k - ρx)/sqrt(1-ρ²)) dx
        let s = (1.0 - rho * rho).sqrt();
        let q = QuadratureConfig { rel_tol: 1e-13, abs_tol: 1e-15, max_subdivisions: 5000 };
        integrate(|x| norm_pdf(x) * norm_cdf((k - rho * x) / s), -40.0, h, &q).unwrap().value
    }

    #[test]
    fn bvn_limits() {
        assert_eq!(bvn_cdf(f64::NEG_INFINITY, 0.3, 0.4), 0.0);
        assert_relative_eq!(bvn_cdf(f64::INFINITY, 0.3, 0.4), norm_cdf(0.3));
        assert_relative_eq!(bvn_cdf(0.0, 0.0, 0.0), 0.25, max_relative = 1e-14);
        // P(X<0,Y<0) = 1/4 + asin(ρ)/(2π)
        assert_relative_eq!(bvn_cdf(0.0, 0.0, 0.5), 0.25 + 0.5f64.asin() / (2.0 * PI), max_relative = 1e-14);
        assert_relative_eq!(bvn_cdf(0.3, -0.2, 1.0), norm_cdf(-0.2));
    }

    proptest! {
        #[test]
        fn bvn_matches_one_dimensional_integral(h in -4.0f64..4.0, k in -4.0f64..4.0, rho in -0.99f64..0.999) {
            let fast = bvn_cdf(h, k, rho);
            let slow = bvn_by_quadrature(h, k, rho);
            prop_assert!((fast - slow).abs() < 1e-12, "h={h} k={k} rho={rho}: {fast} vs {slow}");
        }
    }
}
