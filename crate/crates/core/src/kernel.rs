//! The Volterra kernels of fractional Brownian motion (μ = 0) and the
//! fractional Ornstein–Uhlenbeck process (μ < 0), their variance integrals
//! and piecewise-constant discretisation weights.
//!
//! With γ = H − 1/2 the kernel is
//!
//! ```text
//! H < 1/2:  K(t,s) = c₂ [ (t/s)^γ (t−s)^γ − s^{−γ} ∫_s^t e^{μ(t−u)} (γ − μu) u^{γ−1} (u−s)^γ du ]
//! H > 1/2:  K(t,s) = γ c₂ s^{−γ} ∫_s^t e^{μ(t−u)} u^γ (u−s)^{γ−1} du
//! H = 1/2:  K(t,s) = e^{μ(t−s)}
//! ```
//!
//! and every public value is multiplied by the intensity λ. All inner
//! integrals carry an algebraic factor `(u − s)^{a}` with `a > −1` which is
//! removed by `u = s + v^{1/(a+1)}` before adaptive Gauss–Kronrod.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::quadrature::{
    integrate, integrate_algebraic_left, integrate_algebraic_right, integrate_with_breaks, QuadratureConfig,
};
use crate::special::{gamma, ln_gamma};

/// Parameters of `ξ_t = e^{μt} ξ₀ + λ ∫₀ᵗ K_H^μ(t,s) dW_s` in `dim` independent coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub hurst: f64,
    pub mu: f64,
    pub lambda: f64,
    pub dim: usize,
}

impl KernelSpec {
    pub fn new(hurst: f64, mu: f64, lambda: f64, dim: usize) -> Result<Self> {
        let spec = Self { hurst, mu, lambda, dim };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fbm(hurst: f64, lambda: f64, dim: usize) -> Result<Self> {
        Self::new(hurst, 0.0, lambda, dim)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 0.0 && self.hurst < 1.0) {
            return domain(format!("hurst must lie in (0,1), got {}", self.hurst));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return domain(format!("lambda must be positive, got {}", self.lambda));
        }
        if !self.mu.is_finite() {
            return domain("mu must be finite");
        }
        if self.dim == 0 {
            return domain("dim must be at least 1");
        }
        Ok(())
    }

    /// The scalar multiplying ξ₀ in `U_t ξ₀ = e^{μt} ξ₀`.
    pub fn flow(&self, t: f64) -> f64 {
        (self.mu * t).exp()
    }

    fn is_brownian(&self) -> bool {
        self.hurst == 0.5
    }
}

/// Which of the two algebraically equivalent kernel expressions to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelForm {
    /// `(t/s)^γ (t−s)^γ` minus the memory integral; valid for every H ≠ 1/2.
    Direct,
    /// The integrated-by-parts expression; only valid for H > 1/2.
    IntegratedByParts,
}

/// `c₁(H) = (2 ∫_ℝ (1 − cos x)/|x|^{2H+1} dx)^{-1}`, by quadrature.
pub fn c1(h: f64) -> Result<f64> {
    check_hurst(h)?;
    let q = QuadratureConfig { rel_tol: 1e-13, abs_tol: 1e-15, max_subdivisions: 4000 };
    let p = 2.0 * h + 1.0;
    let cut = 10.0;
    // ∫_0^A (1 − cos x) x^{-p} dx, with (1 − cos x)/x² smooth and x^{1−2H} absorbed.
    let smooth = |x: f64| {
        let half = (0.5 * x).sin();
        if x == 0.0 {
            0.5
        } else {
            2.0 * half * half / (x * x)
        }
    };
    let head = integrate_algebraic_left(smooth, 0.0, cut, 2.0 - 2.0 * h, &q)?.value;
    // ∫_A^∞ x^{-p} dx in closed form.
    let power_tail = cut.powf(1.0 - p) / (p - 1.0);
    // ∫_A^∞ cos(x) x^{-p} dx along x = A + iy, where the integrand decays like e^{-y}.
    let cos_tail = -integrate(
        |y: f64| {
            let r = cut.hypot(y);
            let theta = y.atan2(cut);
            (-y).exp() * r.powf(-p) * (cut - p * theta).sin()
        },
        0.0,
        60.0,
        &q,
    )?
    .value;
    let half_line = head + power_tail - cos_tail;
    Ok(1.0 / (4.0 * half_line))
}

/// Closed form of [`c1`]: `Γ(2H+1) sin(πH) / (2π)`.
pub fn c1_closed_form(h: f64) -> Result<f64> {
    check_hurst(h)?;
    Ok(gamma(2.0 * h + 1.0) * (PI * h).sin() / (2.0 * PI))
}

/// `c₂(H) = (2H Γ(3/2 − H) / (Γ(H + 1/2) Γ(2 − 2H)))^{1/2}`.
pub fn c2(h: f64) -> Result<f64> {
    check_hurst(h)?;
    let ln = (2.0 * h).ln() + ln_gamma(1.5 - h) - ln_gamma(h + 0.5) - ln_gamma(2.0 - 2.0 * h);
    Ok((0.5 * ln).exp())
}

fn check_hurst(h: f64) -> Result<()> {
    if h > 0.0 && h < 1.0 {
        Ok(())
    } else {
        domain(format!("hurst must lie in (0,1), got {h}"))
    }
}

/// `∫_s^t g(u) (u − s)^{γ−1} du` where g may vary steeply near small u.
fn singular_inner<G: Fn(f64) -> f64>(g: G, s: f64, t: f64, gamma_exp: f64, mu: f64, q: &QuadratureConfig) -> Result<f64> {
    let split = (2.0 * s).min(t);
    let near = integrate_algebraic_left(&g, s, split, gamma_exp, q)?.value;
    if split >= t {
        return Ok(near);
    }
    let mut breaks = vec![split.ln()];
    if mu < 0.0 {
        for k in [64.0, 16.0, 4.0, 1.0] {
            let u = t - k / mu.abs();
            if u > split {
                breaks.push(u.ln());
            }
        }
    }
    breaks.push(t.ln());
    let far = integrate_with_breaks(
        |w: f64| {
            let u = w.exp();
            g(u) * (u - s).powf(gamma_exp - 1.0) * u
        },
        &breaks,
        q,
    )?
    .value;
    Ok(near + far)
}

/// K_H^μ(t, s) without the λ factor.
fn unit_kernel(h: f64, mu: f64, t: f64, s: f64, form: KernelForm, q: &QuadratureConfig) -> Result<f64> {
    if h == 0.5 {
        return Ok((mu * (t - s)).exp());
    }
    let g = h - 0.5;
    let c = c2(h)?;
    match form {
        KernelForm::IntegratedByParts => {
            if h < 0.5 {
                return domain("the integrated-by-parts kernel form needs H > 1/2");
            }
            let inner = singular_inner(|u| (mu * (t - u)).exp() * u.powf(g), s, t, g, mu, q)?;
            Ok(g * c * s.powf(-g) * inner)
        }
        KernelForm::Direct => {
            let head = (t / s).powf(g) * (t - s).powf(g);
            let inner = singular_inner(
                |u| (mu * (t - u)).exp() * (g - mu * u) * u.powf(g - 1.0),
                s,
                t,
                g + 1.0,
                mu,
                q,
            )?;
            Ok(c * (head - s.powf(-g) * inner))
        }
    }
}

fn default_form(h: f64) -> KernelForm {
    if h > 0.5 {
        KernelForm::IntegratedByParts
    } else {
        KernelForm::Direct
    }
}

/// λ K_H^μ(t, s) for `0 < s < t`.
pub fn eval_kernel(spec: &KernelSpec, t: f64, s: f64, q: &QuadratureConfig) -> Result<f64> {
    eval_kernel_form(spec, t, s, default_form(spec.hurst), q)
}

/// As [`eval_kernel`] with an explicit choice of expression.
pub fn eval_kernel_form(spec: &KernelSpec, t: f64, s: f64, form: KernelForm, q: &QuadratureConfig) -> Result<f64> {
    spec.validate()?;
    if !(s > 0.0 && s < t) {
        return domain(format!("kernel needs 0 < s < t, got t = {t}, s = {s}"));
    }
    Ok(spec.lambda * unit_kernel(spec.hurst, spec.mu, t, s, form, &q.inner())?)
}

/// Breakpoints in (lo, hi) on the unit time scale where an exponentially
/// decaying kernel changes behaviour.
fn unit_breaks(lo: f64, hi: f64, mu_unit: f64) -> Vec<f64> {
    let mut pts = vec![lo];
    let mut interior = vec![0.5];
    if mu_unit < 0.0 {
        for k in [256.0, 64.0, 16.0, 4.0, 1.0] {
            interior.push(1.0 - k / mu_unit.abs());
        }
    }
    interior.sort_by(f64::total_cmp);
    pts.extend(interior.into_iter().filter(|&x| x > lo && x < hi));
    pts.push(hi);
    pts
}

/// `∫_lo^hi F(v) dv` on the unit scale, where F behaves like `v^{γ₀−1}` at 0
/// and like `(1−v)^{γ₁−1}` at 1; pieces touching those ends are integrated
/// after the matching substitution.
fn unit_piecewise<F: Fn(f64) -> f64>(
    f: F,
    lo: f64,
    hi: f64,
    gamma_left: f64,
    gamma_right: f64,
    mu_unit: f64,
    q: &QuadratureConfig,
) -> Result<f64> {
    let pts = unit_breaks(lo, hi, mu_unit);
    let mut total = 0.0;
    for (i, w) in pts.windows(2).enumerate() {
        let (a, b) = (w[0], w[1]);
        let first = i == 0 && a == 0.0;
        let last = i == pts.len() - 2 && b == 1.0;
        let piece = if first && !(last && gamma_right < gamma_left) {
            integrate_algebraic_left(
                |v| if v <= 0.0 { 0.0 } else { f(v) * v.powf(1.0 - gamma_left) },
                a,
                b,
                gamma_left,
                q,
            )?
        } else if last {
            integrate_algebraic_right(
                |v| if v >= 1.0 { 0.0 } else { f(v) * (1.0 - v).powf(1.0 - gamma_right) },
                a,
                b,
                gamma_right,
                q,
            )?
        } else {
            integrate(&f, a, b, q)?
        };
        total += piece.value;
    }
    Ok(total)
}

/// `∫_a^b |λK(t,s)|² ds` for `0 ≤ a ≤ b ≤ t`, evaluated on the unit time
/// scale through `K^μ(t,s) = t^{H−1/2} K^{μt}(1, s/t)`.
pub fn kernel_sq_integral(spec: &KernelSpec, t: f64, a: f64, b: f64, q: &QuadratureConfig) -> Result<f64> {
    spec.validate()?;
    if !(t > 0.0) || a < 0.0 || b > t || a > b {
        return domain(format!("need 0 <= a <= b <= t, got a = {a}, b = {b}, t = {t}"));
    }
    if a == b {
        return Ok(0.0);
    }
    let h = spec.hurst;
    let lam2 = spec.lambda * spec.lambda;
    if spec.is_brownian() {
        if spec.mu == 0.0 {
            return Ok(lam2 * (b - a));
        }
        let m = spec.mu;
        return Ok(lam2 * ((2.0 * m * (t - a)).exp() - (2.0 * m * (t - b)).exp()) / (2.0 * m));
    }
    let mu_unit = spec.mu * t;
    let inner = q.inner();
    let form = default_form(h);
    let sq = |v: f64| -> f64 {
        match unit_kernel(h, mu_unit, 1.0, v, form, &inner) {
            Ok(k) => k * k,
            Err(_) => f64::NAN,
        }
    };
    let gamma_left = 1.0 - (2.0 * h - 1.0).abs();
    let gamma_right = 2.0 * h;
    let lo = a / t;
    let hi = if b == t { 1.0 } else { b / t };
    let unit = unit_piecewise(sq, lo, hi, gamma_left, gamma_right, mu_unit, q)?;
    if !unit.is_finite() {
        return Err(Error::NotConverged { value: unit, achieved: f64::NAN, requested: q.rel_tol, subdivisions: 0 });
    }
    Ok(lam2 * t.powf(2.0 * h) * unit)
}

/// σ²(t) = ∫₀ᵗ |λK(t,s)|² ds. Closed forms for μ = 0 and for H = 1/2.
pub fn sigma_sq(spec: &KernelSpec, t: f64, q: &QuadratureConfig) -> Result<f64> {
    spec.validate()?;
    if !(t > 0.0) {
        return domain(format!("sigma_sq needs t > 0, got {t}"));
    }
    let lam2 = spec.lambda * spec.lambda;
    if spec.mu == 0.0 {
        if spec.is_brownian() {
            return Ok(lam2 * t);
        }
        return Ok(lam2 * t.powf(2.0 * spec.hurst));
    }
    if spec.is_brownian() {
        let m = spec.mu;
        return Ok(lam2 * (2.0 * m * t).exp_m1() / (2.0 * m));
    }
    kernel_sq_integral(spec, t, 0.0, t, q)
}

/// σ²(t) by quadrature regardless of closed forms.
pub fn sigma_sq_quadrature(spec: &KernelSpec, t: f64, q: &QuadratureConfig) -> Result<f64> {
    if !(t > 0.0) {
        return domain(format!("sigma_sq needs t > 0, got {t}"));
    }
    if spec.is_brownian() {
        // Quadrature of the constant-in-form kernel keeps this path independent.
        let lam = spec.lambda;
        let m = spec.mu;
        return Ok(integrate(|s| (lam * (m * (t - s)).exp()).powi(2), 0.0, t, q)?.value);
    }
    kernel_sq_integral(spec, t, 0.0, t, q)
}

/// `(σ₁²(t,s), σ₂²(t,s))`: the variance carried by the noise before and after s.
pub fn sigma_split(spec: &KernelSpec, t: f64, s: f64, q: &QuadratureConfig) -> Result<(f64, f64)> {
    spec.validate()?;
    if !(t > 0.0) || !(0.0..=t).contains(&s) {
        return domain(format!("sigma_split needs 0 <= s <= t and t > 0, got t = {t}, s = {s}"));
    }
    if s == 0.0 {
        return Ok((0.0, sigma_sq(spec, t, q)?));
    }
    if s == t {
        return Ok((sigma_sq(spec, t, q)?, 0.0));
    }
    let first = kernel_sq_integral(spec, t, 0.0, s, q)?;
    let second = kernel_sq_integral(spec, t, s, t, q)?;
    Ok((first, second))
}

/// The limit ℓ of σ(t): infinite for μ = 0, `ℓ_H` for μ < 0.
pub fn ell_limit(spec: &KernelSpec, q: &QuadratureConfig) -> Result<f64> {
    spec.validate()?;
    if spec.mu > 0.0 {
        return Err(Error::Unsupported(
            "mu > 0: the variance grows exponentially and no finite or polynomial limit exists".into(),
        ));
    }
    if spec.mu == 0.0 {
        return Ok(f64::INFINITY);
    }
    let h = spec.hurst;
    let spectral = 2.0 * spectral_half_line(h, q)?;
    let ell_sq = c1(h)? * spec.lambda * spec.lambda * spec.mu.abs().powf(-2.0 * h) * spectral;
    Ok(ell_sq.sqrt())
}

/// `∫_0^∞ x^{1−2H}/(1+x²) dx`, folded onto `[0,1]` by `x ↦ 1/x` on `[1,∞)`.
pub(crate) fn spectral_half_line(h: f64, q: &QuadratureConfig) -> Result<f64> {
    let inv = |x: f64| 1.0 / (1.0 + x * x);
    let a = integrate_algebraic_left(inv, 0.0, 1.0, 2.0 - 2.0 * h, q)?.value;
    let b = integrate_algebraic_left(inv, 0.0, 1.0, 2.0 * h, q)?.value;
    Ok(a + b)
}

/// Cell-averaged kernel weights `k_j(t) = (1/Δ_j) ∫_{s_j}^{s_{j+1}} λK(t,s) ds`
/// over consecutive grid points. Grid must start at 0, increase strictly and
/// end at or before t.
pub fn cell_weights(spec: &KernelSpec, t: f64, grid: &[f64], q: &QuadratureConfig) -> Result<Vec<f64>> {
    spec.validate()?;
    if grid.len() < 2 {
        return Ok(Vec::new());
    }
    if grid[0] < 0.0 || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return domain("grid must be nonnegative and strictly increasing");
    }
    let last = grid[grid.len() - 1];
    if last > t * (1.0 + 1e-12) {
        return domain(format!("grid ends at {last}, after t = {t}"));
    }
    let h = spec.hurst;
    let lam = spec.lambda;
    let mu = spec.mu;
    if spec.is_brownian() {
        return Ok(grid
            .windows(2)
            .map(|w| {
                if mu == 0.0 {
                    lam
                } else {
                    lam * ((mu * (t - w[0])).exp() - (mu * (t - w[1])).exp()) / (mu * (w[1] - w[0]))
                }
            })
            .collect());
    }
    let mu_unit = mu * t;
    let inner = q.inner();
    let form = default_form(h);
    let k = |v: f64| unit_kernel(h, mu_unit, 1.0, v, form, &inner).unwrap_or(f64::NAN);
    let gamma_left = 1.0 - (h - 0.5).abs();
    let gamma_right = h + 0.5;
    let scale = lam * t.powf(h - 0.5) * t;
    let mut out = Vec::with_capacity(grid.len() - 1);
    for w in grid.windows(2) {
        let lo = w[0] / t;
        let hi = (w[1] / t).min(1.0);
        let touches_end = (w[1] - t).abs() <= 1e-12 * t;
        let unit = if lo == 0.0 && !touches_end {
            integrate_algebraic_left(
                |v| if v <= 0.0 { 0.0 } else { k(v) * v.powf(1.0 - gamma_left) },
                0.0,
                hi,
                gamma_left,
                q,
            )?
            .value
        } else if touches_end && lo > 0.0 {
            integrate_algebraic_right(
                |v| if v >= 1.0 { 0.0 } else { k(v) * (1.0 - v).powf(1.0 - gamma_right) },
                lo,
                1.0,
                gamma_right,
                q,
            )?
            .value
        } else if touches_end {
            unit_piecewise(&k, 0.0, 1.0, gamma_left, gamma_right, mu_unit, q)?
        } else {
            integrate(&k, lo, hi, q)?.value
        };
        if !unit.is_finite() {
            return Err(Error::NotConverged { value: unit, achieved: f64::NAN, requested: q.rel_tol, subdivisions: 0 });
        }
        out.push(scale * unit / (w[1] - w[0]));
    }
    Ok(out)
}

/// Variances at one `(t, s)` pair together with the long-time limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceProfile {
    pub t: f64,
    pub s: f64,
    pub sigma_sq: f64,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    pub ell: f64,
}

pub fn variance_profile(spec: &KernelSpec, t: f64, s: f64, q: &QuadratureConfig) -> Result<VarianceProfile> {
    let sigma_sq = sigma_sq(spec, t, q)?;
    let (sigma1_sq, sigma2_sq) = sigma_split(spec, t, s, q)?;
    let ell = if spec.mu > 0.0 { f64::INFINITY } else { ell_limit(spec, q)? };
    Ok(VarianceProfile { t, s, sigma_sq, sigma1_sq, sigma2_sq, ell })
}

/// Small-s behaviour of the unscaled μ = 0 kernel at t = 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelLimitReport {
    pub hurst: f64,
    pub target: f64,
    /// `(s, s^{|H−1/2|} K(1,s), relative error against target)`.
    pub samples: Vec<(f64, f64, f64)>,
    /// Relative errors shrink (weakly) as s decreases.
    pub converging: bool,
}

pub fn kernel_limit_checks(spec: &KernelSpec) -> Result<KernelLimitReport> {
    spec.validate()?;
    if spec.mu != 0.0 {
        return Err(Error::Unsupported("small-s kernel limits are only tabulated for mu = 0".into()));
    }
    let h = spec.hurst;
    let q = QuadratureConfig::default();
    let target = if h > 0.5 {
        c2(h)? / 2.0
    } else if h < 0.5 {
        h / c2(h)?
    } else {
        1.0
    };
    let scale_exp = (h - 0.5).abs();
    let mut samples = Vec::new();
    for s in [1e-3, 1e-4, 1e-5, 1e-6, 1e-7] {
        let k = eval_kernel(spec, 1.0, s, &q)? / spec.lambda;
        let scaled = s.powf(scale_exp) * k;
        samples.push((s, scaled, ((scaled - target) / target).abs()));
    }
    let converging = samples.windows(2).all(|w| w[1].2 <= w[0].2 * (1.0 + 1e-9) + 1e-12);
    Ok(KernelLimitReport { hurst: h, target, samples, converging })
}

/// Kernel-family interface used by the simulator, so that flows outside the
/// `K_H^μ` family can drive the same particle machinery.
pub trait VolterraKernel: Send + Sync {
    fn dim(&self) -> usize;
    /// Scalar multiplying ξ₀ in `U_t ξ₀`.
    fn flow(&self, t: f64) -> f64;
    fn sigma_sq(&self, t: f64) -> Result<f64>;
    fn sigma_split(&self, t: f64, s: f64) -> Result<(f64, f64)>;
    fn cell_weights(&self, t: f64, grid: &[f64]) -> Result<Vec<f64>>;
}

impl VolterraKernel for KernelSpec {
    fn dim(&self) -> usize {
        self.dim
    }

    fn flow(&self, t: f64) -> f64 {
        KernelSpec::flow(self, t)
    }

    fn sigma_sq(&self, t: f64) -> Result<f64> {
        sigma_sq(self, t, &QuadratureConfig::default())
    }

    fn sigma_split(&self, t: f64, s: f64) -> Result<(f64, f64)> {
        sigma_split(self, t, s, &QuadratureConfig::default())
    }

    fn cell_weights(&self, t: f64, grid: &[f64]) -> Result<Vec<f64>> {
        cell_weights(self, t, grid, &QuadratureConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    #[test]
    fn c1_at_half_is_inverse_two_pi() {
        assert_relative_eq!(c1(0.5).unwrap(), 1.0 / (2.0 * PI), max_relative = 1e-10);
    }

    #[test]
    fn c1_integral_matches_corrected_closed_form() {
        for h in [0.1, 0.25, 0.3, 0.5, 0.7, 0.75, 0.9] {
            assert_relative_eq!(c1(h).unwrap(), c1_closed_form(h).unwrap(), max_relative = 1e-9);
        }
    }

    #[test]
    fn c2_at_half_is_one() {
        assert_relative_eq!(c2(0.5).unwrap(), 1.0, max_relative = 1e-14);
    }

    #[test]
    fn constants_reject_out_of_range_hurst() {
        for h in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(c1(h).is_err());
            assert!(c2(h).is_err());
        }
    }

    #[test]
    fn brownian_kernel_is_exponential() {
        let spec = KernelSpec::new(0.5, -1.0, 1.0, 1).unwrap();
        assert_eq!(eval_kernel(&spec, 2.0, 1.0, &q()).unwrap(), (-1.0f64).exp());
    }

    #[test]
    fn kernel_domain_errors() {
        let spec = KernelSpec::fbm(0.7, 1.0, 1).unwrap();
        assert!(eval_kernel(&spec, 1.0, 0.0, &q()).is_err());
        assert!(eval_kernel(&spec, 1.0, 1.0, &q()).is_err());
        assert!(eval_kernel(&spec, 1.0, 2.0, &q()).is_err());
        let rough = KernelSpec::fbm(0.3, 1.0, 1).unwrap();
        assert!(eval_kernel_form(&rough, 1.0, 0.5, KernelForm::IntegratedByParts, &q()).is_err());
    }

    #[test]
    fn kernel_forms_agree_for_smooth_hurst() {
        for h in [0.6, 0.7, 0.9] {
            for mu in [0.0, -0.8] {
                let spec = KernelSpec::new(h, mu, 1.3, 1).unwrap();
                for (t, s) in [(1.0, 0.3), (2.5, 0.01), (4.0, 3.9)] {
                    let a = eval_kernel_form(&spec, t, s, KernelForm::Direct, &q()).unwrap();
                    let b = eval_kernel_form(&spec, t, s, KernelForm::IntegratedByParts, &q()).unwrap();
                    assert_relative_eq!(a, b, max_relative = 1e-8);
                }
            }
        }
    }

    #[test]
    fn small_s_limit_rough() {
        let spec = KernelSpec::fbm(0.3, 1.0, 1).unwrap();
        let target = 0.3 / c2(0.3).unwrap();
        // Reference from 30-digit quadrature of the same expression.
        let s: f64 = 1e-6;
        let scaled = s.powf(0.2) * eval_kernel(&spec, 1.0, s, &q()).unwrap();
        assert_relative_eq!(scaled, 0.412_253_340_846_022_15, max_relative = 1e-9);
        // The approach to the limit is O(s^{2|H-1/2|}), not faster.
        for s in [1e-6f64, 1e-8, 1e-10] {
            let scaled = s.powf(0.2) * eval_kernel(&spec, 1.0, s, &q()).unwrap();
            let rel = (scaled - target).abs() / target;
            assert!(rel < s.powf(0.4), "s = {s}: {rel}");
        }
    }

    #[test]
    fn limit_reports() {
        let smooth = kernel_limit_checks(&KernelSpec::fbm(0.75, 1.0, 1).unwrap()).unwrap();
        assert_relative_eq!(smooth.target, c2(0.75).unwrap() / 2.0);
        assert!(smooth.converging);
        assert!(smooth.samples.last().unwrap().2 < 1e-2);
        let rough = kernel_limit_checks(&KernelSpec::fbm(0.25, 1.0, 1).unwrap()).unwrap();
        assert_relative_eq!(rough.target, 0.25 / c2(0.25).unwrap());
        assert!(rough.converging);
        let bm = kernel_limit_checks(&KernelSpec::fbm(0.5, 2.0, 1).unwrap()).unwrap();
        assert!(bm.converging);
        assert!(bm.samples.iter().all(|s| s.2 == 0.0));
        assert!(kernel_limit_checks(&KernelSpec::new(0.3, -1.0, 1.0, 1).unwrap()).is_err());
    }

    #[test]
    fn sigma_known_values() {
        let bm = KernelSpec::fbm(0.5, 1.0, 1).unwrap();
        assert_eq!(sigma_sq(&bm, 3.0, &q()).unwrap(), 3.0);
        let f = KernelSpec::fbm(0.7, 2.0, 1).unwrap();
        assert_relative_eq!(sigma_sq(&f, 2.0, &q()).unwrap(), 4.0 * 2f64.powf(1.4), max_relative = 1e-14);
        let ou = KernelSpec::new(0.5, -1.0, 1.0, 1).unwrap();
        assert!((sigma_sq(&ou, 20.0, &q()).unwrap() - 0.5).abs() < 1e-8);
        assert!(sigma_sq(&ou, 0.0, &q()).is_err());
    }

    #[test]
    fn quadrature_sigma_matches_closed_form() {
        for h in [0.3, 0.5, 0.7] {
            let spec = KernelSpec::fbm(h, 1.0, 1).unwrap();
            for t in [0.5, 1.0, 4.0] {
                let quad = sigma_sq_quadrature(&spec, t, &q()).unwrap();
                assert_relative_eq!(quad, t.powf(2.0 * h), max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn split_edges_and_brownian_additivity() {
        let bm = KernelSpec::fbm(0.5, 1.0, 1).unwrap();
        assert_eq!(sigma_split(&bm, 4.0, 1.0, &q()).unwrap(), (1.0, 3.0));
        let spec = KernelSpec::fbm(0.3, 1.0, 1).unwrap();
        let total = sigma_sq(&spec, 2.0, &q()).unwrap();
        assert_eq!(sigma_split(&spec, 2.0, 0.0, &q()).unwrap(), (0.0, total));
        assert_eq!(sigma_split(&spec, 2.0, 2.0, &q()).unwrap(), (total, 0.0));
        assert!(sigma_split(&spec, 2.0, 2.5, &q()).is_err());
        assert!(sigma_split(&spec, 2.0, -0.1, &q()).is_err());
    }

    #[test]
    fn ell_values() {
        let ou = KernelSpec::new(0.5, -1.0, 1.0, 1).unwrap();
        assert_relative_eq!(ell_limit(&ou, &q()).unwrap().powi(2), 0.5, max_relative = 1e-9);
        let ou2 = KernelSpec::new(0.5, -2.0, 1.0, 1).unwrap();
        assert_relative_eq!(ell_limit(&ou2, &q()).unwrap().powi(2), 0.25, max_relative = 1e-9);
        for h in [0.3, 0.7] {
            assert_eq!(ell_limit(&KernelSpec::fbm(h, 1.0, 1).unwrap(), &q()).unwrap(), f64::INFINITY);
            // λ²Γ(2H+1)/(2|μ|^{2H}) is the textbook stationary fOU variance.
            let spec = KernelSpec::new(h, -1.5, 0.8, 1).unwrap();
            let expect = 0.64 * gamma(2.0 * h + 1.0) / (2.0 * 1.5f64.powf(2.0 * h));
            assert_relative_eq!(ell_limit(&spec, &q()).unwrap().powi(2), expect, max_relative = 1e-8);
        }
        assert!(matches!(ell_limit(&KernelSpec::new(0.5, 0.3, 1.0, 1).unwrap(), &q()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn brownian_weights_are_constant() {
        let spec = KernelSpec::fbm(0.5, 1.7, 1).unwrap();
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 * 0.1).collect();
        assert!(cell_weights(&spec, 1.0, &grid, &q()).unwrap().iter().all(|&w| w == 1.7));
    }

    #[test]
    fn weights_reject_bad_grids() {
        let spec = KernelSpec::fbm(0.7, 1.0, 1).unwrap();
        assert!(cell_weights(&spec, 1.0, &[0.0, 0.5, 0.5, 1.0], &q()).is_err());
        assert!(cell_weights(&spec, 1.0, &[0.0, 0.5, 1.5], &q()).is_err());
    }

    #[test]
    fn weights_refine_monotonically_toward_sigma() {
        let spec = KernelSpec::fbm(0.7, 1.0, 1).unwrap();
        let mut prev_gap = f64::INFINITY;
        let mut prev_var = 0.0;
        for m in 1..=7 {
            let n = 1usize << m;
            let grid: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let w = cell_weights(&spec, 1.0, &grid, &q()).unwrap();
            let var: f64 = w.iter().map(|k| k * k / n as f64).sum();
            let gap = 1.0 - var;
            assert!(var <= 1.0 + 1e-12);
            assert!(var >= prev_var - 1e-12);
            assert!(gap < prev_gap);
            prev_gap = gap;
            prev_var = var;
        }
    }

    #[test]
    fn rough_weights_bounded_by_sigma() {
        for mu in [0.0, -1.0] {
            let spec = KernelSpec::new(0.3, mu, 1.0, 1).unwrap();
            let t = 2.5;
            // Partial last cell, as the simulator produces for off-grid times.
            let mut grid: Vec<f64> = (0..=24).map(|i| i as f64 * 0.1).collect();
            grid.push(t);
            let w = cell_weights(&spec, t, &grid, &q()).unwrap();
            let var: f64 = w.iter().zip(grid.windows(2)).map(|(k, c)| k * k * (c[1] - c[0])).sum();
            let total = sigma_sq(&spec, t, &q()).unwrap();
            assert!(var < total && var > 0.8 * total, "{var} vs {total}");
        }
    }

    #[test]
    fn weights_integrate_kernel() {
        // Σ k_j Δ_j = ∫_0^t λK ds independently of the grid.
        let spec = KernelSpec::new(0.3, -0.5, 1.2, 1).unwrap();
        let coarse = cell_weights(&spec, 3.0, &[0.0, 3.0], &q()).unwrap()[0] * 3.0;
        let grid: Vec<f64> = (0..=30).map(|i| i as f64 * 0.1).collect();
        let fine: f64 = cell_weights(&spec, 3.0, &grid, &q()).unwrap().iter().map(|k| k * 0.1).sum();
        assert_relative_eq!(coarse, fine, max_relative = 1e-8);
    }

    #[test]
    fn fou_variance_tends_to_ell() {
        for h in [0.3, 0.7] {
            let spec = KernelSpec::new(h, -1.0, 1.0, 1).unwrap();
            let ell = ell_limit(&spec, &q()).unwrap();
            let s40 = sigma_sq(&spec, 40.0, &q()).unwrap();
            assert!((s40 - ell * ell).abs() < 0.02 * ell * ell, "H = {h}: {s40} vs {}", ell * ell);
        }
    }

    #[test]
    fn variance_profile_fields() {
        let spec = KernelSpec::new(0.5, -1.0, 1.0, 1).unwrap();
        let p = variance_profile(&spec, 2.0, 0.5, &q()).unwrap();
        assert_relative_eq!(p.sigma1_sq + p.sigma2_sq, p.sigma_sq, max_relative = 1e-14);
        assert_relative_eq!(p.ell, 0.5f64.sqrt(), max_relative = 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(40))]

            #[test]
            fn scaling_law(h in prop_oneof![Just(0.3), Just(0.7), 0.05f64..0.95], mu in -2.0f64..0.0,
                           kappa in 0.2f64..5.0, t in 0.2f64..4.0, frac in 0.01f64..0.99) {
                let s = frac * t;
                let a = KernelSpec::new(h, mu, 1.0, 1).unwrap();
                let b = KernelSpec::new(h, kappa * mu, 1.0, 1).unwrap();
                let lhs = eval_kernel(&a, kappa * t, kappa * s, &q()).unwrap();
                let rhs = kappa.powf(h - 0.5) * eval_kernel(&b, t, s, &q()).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-8 * rhs.abs(), "{lhs} vs {rhs}");
            }

            #[test]
            fn split_is_additive(h in 0.1f64..0.9, mu in -1.5f64..0.0, t in 0.3f64..6.0, frac in 0.0f64..1.0) {
                let spec = KernelSpec::new(h, mu, 0.7, 1).unwrap();
                let s = frac * t;
                let (a, b) = sigma_split(&spec, t, s, &q()).unwrap();
                let total = sigma_sq(&spec, t, &q()).unwrap();
                prop_assert!(a >= 0.0 && b >= 0.0);
                prop_assert!(((a + b) - total).abs() <= 10.0 * q().rel_tol * total, "{a} + {b} vs {total}");
            }

            #[test]
            fn sigma1_nondecreasing(h in 0.1f64..0.9, t in 0.5f64..3.0, f1 in 0.0f64..1.0, f2 in 0.0f64..1.0) {
                let spec = KernelSpec::new(h, -0.3, 1.0, 1).unwrap();
                let (lo, hi) = if f1 < f2 { (f1, f2) } else { (f2, f1) };
                let a = sigma_split(&spec, t, lo * t, &q()).unwrap().0;
                let b = sigma_split(&spec, t, hi * t, &q()).unwrap().0;
                prop_assert!(b >= a - 1e-12);
            }
        }
    }
}
