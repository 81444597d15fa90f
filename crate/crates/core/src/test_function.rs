//! Test functions whose Gaussian expectations have closed forms.
//!
//! Constants, boxes and Gaussian bumps factor over coordinates, so every
//! expectation reduces to one-dimensional identities. The exponential
//! envelope `e^{−|x|/a}` does not factor and is supported in d = 1 only.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature::{integrate_with_breaks, QuadratureConfig};
use crate::special::{bvn_rectangle, ln_gamma, norm_cdf};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestFunction {
    Constant { value: f64 },
    /// Indicator of `Π_i [lower_i, upper_i]`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `amplitude · exp(−|x|² / (2 width²))`.
    Bump { amplitude: f64, width: f64 },
    /// `exp(−|x| / scale)`.
    Envelope { scale: f64 },
}

/// One coordinate of a separable test function, without its scale factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    One,
    Box(f64, f64),
    /// `exp(−x²/(2w²))`.
    Gauss(f64),
    /// `exp(−|x|/a)`, d = 1 only.
    Envelope(f64),
}

impl TestFunction {
    /// The symmetric box `[−h, h]^d`.
    pub fn centered_box(half_width: f64, dim: usize) -> Self {
        Self::Box { lower: vec![-half_width; dim], upper: vec![half_width; dim] }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        match self {
            Self::Constant { value } if !value.is_finite() => domain("constant test function must be finite"),
            Self::Box { lower, upper } => {
                if lower.len() != dim || upper.len() != dim {
                    return domain(format!("box needs {dim} lower and upper bounds"));
                }
                if lower.iter().zip(upper).any(|(a, b)| !(a < b)) {
                    return domain("box needs lower < upper in every coordinate");
                }
                Ok(())
            }
            Self::Bump { amplitude, width } => {
                if !(*width > 0.0) || !amplitude.is_finite() {
                    return domain("bump needs a finite amplitude and positive width");
                }
                Ok(())
            }
            Self::Envelope { scale } => {
                if !(*scale > 0.0) {
                    return domain("envelope needs a positive scale");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant { .. })
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Self::Constant { value } => *value,
            Self::Box { lower, upper } => {
                let inside = x.iter().zip(lower.iter().zip(upper)).all(|(v, (a, b))| *a <= *v && *v <= *b);
                if inside {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Bump { amplitude, width } => {
                let r2: f64 = x.iter().map(|v| v * v).sum();
                amplitude * (-0.5 * r2 / (width * width)).exp()
            }
            Self::Envelope { scale } => {
                let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                (-r / scale).exp()
            }
        }
    }

    /// `(scale, per-coordinate factors)` with `f(x) = scale · Π_i factor_i(x_i)`.
    pub fn separable(&self, dim: usize) -> Result<(f64, Vec<Factor>)> {
        self.validate(dim)?;
        Ok(match self {
            Self::Constant { value } => (*value, vec![Factor::One; dim]),
            Self::Box { lower, upper } => (1.0, lower.iter().zip(upper).map(|(&a, &b)| Factor::Box(a, b)).collect()),
            Self::Bump { amplitude, width } => (*amplitude, vec![Factor::Gauss(*width); dim]),
            Self::Envelope { scale } => {
                if dim != 1 {
                    return Err(Error::Unsupported("the exponential envelope has closed-form moments only for d = 1".into()));
                }
                (1.0, vec![Factor::Envelope(*scale)])
            }
        })
    }

    /// `∫_{ℝ^d} f`, infinite for constants.
    pub fn lebesgue_integral(&self, dim: usize) -> Result<f64> {
        self.validate(dim)?;
        Ok(match self {
            Self::Constant { value } if *value == 0.0 => 0.0,
            Self::Constant { .. } => f64::INFINITY,
            Self::Box { lower, upper } => lower.iter().zip(upper).map(|(a, b)| b - a).product(),
            Self::Bump { amplitude, width } => amplitude * ((2.0 * PI).sqrt() * width).powi(dim as i32),
            Self::Envelope { scale } => {
                // Surface area of the unit sphere times ∫_0^∞ r^{d−1} e^{−r/a} dr.
                let d = dim as f64;
                let ln_area = (2.0f64).ln() + 0.5 * d * PI.ln() - ln_gamma(0.5 * d);
                (ln_area + ln_gamma(d) + d * scale.ln()).exp()
            }
        })
    }

    /// `∫ f²`, infinite for nonzero constants.
    pub fn l2_norm_sq(&self, dim: usize) -> Result<f64> {
        self.validate(dim)?;
        Ok(match self {
            Self::Constant { value } if *value == 0.0 => 0.0,
            Self::Constant { .. } => f64::INFINITY,
            Self::Box { .. } => self.lebesgue_integral(dim)?,
            Self::Bump { amplitude, width } => amplitude * amplitude * (PI.sqrt() * width).powi(dim as i32),
            Self::Envelope { scale } => Self::Envelope { scale: scale / 2.0 }.lebesgue_integral(dim)?,
        })
    }
}

/// `E g(m + sZ)` for one factor, `Z ~ N(0,1)`.
pub fn factor_mean(f: Factor, m: f64, s: f64) -> f64 {
    if s == 0.0 {
        return factor_eval(f, m);
    }
    match f {
        Factor::One => 1.0,
        Factor::Box(a, b) => box_mass(a, b, m, s),
        Factor::Gauss(w) => gauss_mean(w * w, m, s * s),
        Factor::Envelope(a) => {
            // E e^{−|m+sZ|/a} = e^{s²/(2a²)} [e^{−m/a} Φ(m/s − s/a) + e^{m/a} Φ(−m/s − s/a)],
            // with the exponentials folded in to avoid overflow.
            let k = s / a;
            let left = ln_phi(m / s - k) + 0.5 * k * k - m / a;
            let right = ln_phi(-m / s - k) + 0.5 * k * k + m / a;
            left.exp() + right.exp()
        }
    }
}

fn ln_phi(x: f64) -> f64 {
    crate::special::ln_norm_cdf(x)
}

fn factor_eval(f: Factor, x: f64) -> f64 {
    match f {
        Factor::One => 1.0,
        Factor::Box(a, b) => {
            if a <= x && x <= b {
                1.0
            } else {
                0.0
            }
        }
        Factor::Gauss(w) => (-0.5 * x * x / (w * w)).exp(),
        Factor::Envelope(a) => (-x.abs() / a).exp(),
    }
}

/// `P(a ≤ m + sZ ≤ b)`, computed on the tail side for accuracy.
fn box_mass(a: f64, b: f64, m: f64, s: f64) -> f64 {
    let (lo, hi) = ((a - m) / s, (b - m) / s);
    if lo > 0.0 {
        norm_cdf(-lo) - norm_cdf(-hi)
    } else {
        norm_cdf(hi) - norm_cdf(lo)
    }
}

/// `E exp(−Y²/(2τ²))` for `Y ~ N(m, v)`.
fn gauss_mean(tau2: f64, m: f64, v: f64) -> f64 {
    (tau2 / (tau2 + v)).sqrt() * (-0.5 * m * m / (tau2 + v)).exp()
}

/// `E[g₁(Y) g₂(Y)]` where `Y ~ N(m, v)` and `g_i(y) = E f_i(y + sZ_i)` with
/// independent `Z_i`: the expectation of a product of two conditional
/// expectations given the part of the path known at an intermediate time.
pub fn factor_pair(f1: Factor, f2: Factor, m: f64, v: f64, s: f64, q: &QuadratureConfig) -> Result<f64> {
    use Factor::*;
    let s2 = s * s;
    match (f1, f2) {
        (One, g) | (g, One) => Ok(factor_mean(g, m, (v + s2).sqrt())),
        (Box(a1, b1), Box(a2, b2)) => {
            let total = v + s2;
            if total == 0.0 {
                return Ok(factor_eval(f1, m) * factor_eval(f2, m));
            }
            if s == 0.0 {
                let (a, b) = (a1.max(a2), b1.min(b2));
                return Ok(if a < b { box_mass(a, b, m, v.sqrt()) } else { 0.0 });
            }
            let sd = total.sqrt();
            let rho = v / total;
            Ok(bvn_rectangle((a1 - m) / sd, (b1 - m) / sd, (a2 - m) / sd, (b2 - m) / sd, rho))
        }
        (Gauss(w1), Gauss(w2)) => {
            let (t1, t2) = (w1 * w1 + s2, w2 * w2 + s2);
            let amp = (w1 * w1 / t1).sqrt() * (w2 * w2 / t2).sqrt();
            // exp(−y²/(2t₁)) exp(−y²/(2t₂)) = exp(−y²/(2τ²)) with 1/τ² = 1/t₁ + 1/t₂.
            let tau2 = t1 * t2 / (t1 + t2);
            Ok(amp * gauss_mean(tau2, m, v))
        }
        (Box(a, b), Gauss(w)) | (Gauss(w), Box(a, b)) => {
            let big = w * w + s2;
            let amp = (w * w / big).sqrt();
            if v == 0.0 {
                return Ok(amp * (-0.5 * m * m / big).exp() * factor_mean(Box(a, b), m, s));
            }
            // Tilt N(m, v) by exp(−y²/(2W²)): mass gauss_mean, new law N(m', v').
            let mass = gauss_mean(big, m, v);
            let vp = v * big / (v + big);
            let mp = vp * m / v;
            Ok(amp * mass * box_mass(a, b, mp, (vp + s2).sqrt()))
        }
        _ => pair_by_quadrature(f1, f2, m, v, s, q),
    }
}

fn pair_by_quadrature(f1: Factor, f2: Factor, m: f64, v: f64, s: f64, q: &QuadratureConfig) -> Result<f64> {
    if v == 0.0 {
        return Ok(factor_mean(f1, m, s) * factor_mean(f2, m, s));
    }
    if s == 0.0 {
        // g_i = f_i: integrate the product against N(m, v) directly.
        return gaussian_quadrature(|y| factor_eval(f1, y) * factor_eval(f2, y), m, v, &kinks(f1, f2), q);
    }
    gaussian_quadrature(|y| factor_mean(f1, y, s) * factor_mean(f2, y, s), m, v, &[], q)
}

fn kinks(f1: Factor, f2: Factor) -> Vec<f64> {
    let mut out = Vec::new();
    for f in [f1, f2] {
        match f {
            Factor::Box(a, b) => out.extend([a, b]),
            Factor::Envelope(_) => out.push(0.0),
            _ => {}
        }
    }
    out
}

/// `∫ g(y) φ_{m,v}(y) dy` over `m ± 12√v`, split at the given kinks.
fn gaussian_quadrature<G: Fn(f64) -> f64>(g: G, m: f64, v: f64, kinks: &[f64], q: &QuadratureConfig) -> Result<f64> {
    let sd = v.sqrt();
    let (lo, hi) = (m - 12.0 * sd, m + 12.0 * sd);
    let mut pts = vec![lo, m];
    pts.extend(kinks.iter().copied().filter(|&k| k > lo && k < hi));
    pts.push(hi);
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    let norm = 1.0 / (2.0 * PI * v).sqrt();
    Ok(integrate_with_breaks(|y| g(y) * norm * (-0.5 * (y - m) * (y - m) / v).exp(), &pts, q)?.value)
}

/// `E f(m + sZ)` with `Z ~ N(0, I_d)`.
pub fn gaussian_mean(f: &TestFunction, m: &[f64], s: f64) -> Result<f64> {
    let (scale, factors) = f.separable(m.len())?;
    Ok(scale * factors.iter().zip(m).map(|(&g, &mi)| factor_mean(g, mi, s)).product::<f64>())
}

/// `E[f₁(Y + sZ₁) f₂(Y + sZ₂)]` averaged as in [`factor_pair`], coordinatewise.
pub fn gaussian_pair(f1: &TestFunction, f2: &TestFunction, m: &[f64], v: f64, s: f64, q: &QuadratureConfig) -> Result<f64> {
    let d = m.len();
    let (c1, g1) = f1.separable(d)?;
    let (c2, g2) = f2.separable(d)?;
    let mut prod = c1 * c2;
    for i in 0..d {
        prod *= factor_pair(g1[i], g2[i], m[i], v, s, q)?;
    }
    Ok(prod)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn q() -> QuadratureConfig {
        QuadratureConfig { rel_tol: 1e-11, abs_tol: 1e-14, max_subdivisions: 4000 }
    }

    const FACTORS: [Factor; 5] = [
        Factor::One,
        Factor::Box(-1.0, 1.0),
        Factor::Box(0.2, 2.5),
        Factor::Gauss(0.7),
        Factor::Envelope(0.8),
    ];

    #[test]
    fn means_match_quadrature() {
        for f in FACTORS {
            for (m, s) in [(0.0, 1.0), (0.7, 0.3), (-2.0, 1.5)] {
                let exact = factor_mean(f, m, s);
                let num = gaussian_quadrature(|y| factor_eval(f, y), m, s * s, &kinks(f, Factor::One), &q()).unwrap();
                assert_relative_eq!(exact, num, max_relative = 1e-9, epsilon = 1e-14);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn pairs_match_nested_quadrature(i in 0usize..5, j in 0usize..5, m in -2.0f64..2.0, v in 0.01f64..3.0, s in 0.05f64..2.0) {
            let (f1, f2) = (FACTORS[i], FACTORS[j]);
            let closed = factor_pair(f1, f2, m, v, s, &q()).unwrap();
            let slow = gaussian_quadrature(|y| factor_mean(f1, y, s) * factor_mean(f2, y, s), m, v, &[], &q()).unwrap();
            prop_assert!((closed - slow).abs() <= 1e-9 * slow.abs().max(1e-3), "{f1:?} {f2:?}: {closed} vs {slow}");
        }
    }

    #[test]
    fn pair_degenerate_cases() {
        // s = 0: the product of the functions themselves.
        let b = Factor::Box(-1.0, 1.0);
        assert_relative_eq!(factor_pair(b, b, 0.0, 1.0, 0.0, &q()).unwrap(), norm_cdf(1.0) - norm_cdf(-1.0), max_relative = 1e-14);
        // v = 0: both conditional expectations are evaluated at the known point.
        let g = Factor::Gauss(1.0);
        assert_relative_eq!(
            factor_pair(b, g, 0.3, 0.0, 0.5, &q()).unwrap(),
            factor_mean(b, 0.3, 0.5) * factor_mean(g, 0.3, 0.5),
            max_relative = 1e-14
        );
    }

    #[test]
    fn half_space_symmetry() {
        let f = TestFunction::Box { lower: vec![0.0], upper: vec![f64::INFINITY] };
        assert_relative_eq!(gaussian_mean(&f, &[0.0], 2.3).unwrap(), 0.5);
    }

    #[test]
    fn integrals() {
        let b = TestFunction::centered_box(1.0, 2);
        assert_eq!(b.lebesgue_integral(2).unwrap(), 4.0);
        let e = TestFunction::Envelope { scale: 0.5 };
        assert_relative_eq!(e.lebesgue_integral(1).unwrap(), 1.0, max_relative = 1e-14);
        // 2π a² in the plane.
        assert_relative_eq!(e.lebesgue_integral(2).unwrap(), 2.0 * PI * 0.25, max_relative = 1e-13);
        assert_relative_eq!(e.l2_norm_sq(1).unwrap(), 0.5, max_relative = 1e-14);
        let g = TestFunction::Bump { amplitude: 2.0, width: 0.5 };
        assert_relative_eq!(g.l2_norm_sq(1).unwrap(), 4.0 * PI.sqrt() * 0.5, max_relative = 1e-14);
        assert_eq!(TestFunction::Constant { value: 1.0 }.lebesgue_integral(1).unwrap(), f64::INFINITY);
    }

    #[test]
    fn validation() {
        assert!(TestFunction::Box { lower: vec![1.0], upper: vec![0.0] }.validate(1).is_err());
        assert!(TestFunction::centered_box(1.0, 2).validate(1).is_err());
        assert!(TestFunction::Bump { amplitude: 1.0, width: 0.0 }.validate(1).is_err());
        assert!(matches!(TestFunction::Envelope { scale: 1.0 }.separable(2), Err(Error::Unsupported(_))));
    }

    #[test]
    fn eval_points() {
        let b = TestFunction::centered_box(1.0, 1);
        assert_eq!(b.eval(&[1.0]), 1.0);
        assert_eq!(b.eval(&[1.01]), 0.0);
        assert_relative_eq!(TestFunction::Envelope { scale: 2.0 }.eval(&[3.0, 4.0]), (-2.5f64).exp());
    }
}
