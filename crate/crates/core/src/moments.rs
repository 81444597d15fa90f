//! First and second moments of `X_t(f)`, conditional decompositions and
//! the spectral form of the fractional Ornstein–Uhlenbeck variance.
//!
//! Throughout, `center` is the mean of a particle position at time t given
//! the memory: `U_t ξ₀ + ∫_0^r K(t,u) dW_u`. Conditioned on the path up to
//! `u ≥ r` the position splits into the part known at `u`, Gaussian with
//! variance `∫_r^u K(t,·)²` around `center`, and an independent remainder
//! with variance `σ₂²(t,u)`.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;

use crate::branching::BranchingLaw;
use crate::error::{domain, Error, Result};
use crate::kernel::{c1, kernel_sq_integral, spectral_half_line, KernelSpec};
use crate::quadrature::{integrate, integrate_algebraic_left, integrate_with_breaks, QuadratureConfig};
use crate::sim::{PathTree, Simulator};
use crate::stats::pairwise_sum;
use crate::test_function::{gaussian_mean, gaussian_pair, TestFunction};

/// Tolerances for the outer time integrals.
pub fn outer_quadrature() -> QuadratureConfig {
    QuadratureConfig { rel_tol: 1e-8, abs_tol: 1e-12, max_subdivisions: 2000 }
}

fn check_order(r: f64, t: f64) -> Result<()> {
    if r >= 0.0 && t >= r {
        Ok(())
    } else {
        domain(format!("need 0 <= r <= t, got r = {r}, t = {t}"))
    }
}

fn check_center(kernel: &KernelSpec, center: &[f64]) -> Result<()> {
    if center.len() == kernel.dim {
        Ok(())
    } else {
        domain(format!("center has {} coordinates, kernel has dim {}", center.len(), kernel.dim))
    }
}

/// `U_t ξ₀ + shift`.
pub fn center(kernel: &KernelSpec, x0: &[f64], t: f64, memory_shift: &[f64]) -> Vec<f64> {
    let u = kernel.flow(t);
    x0.iter().zip(memory_shift).map(|(x, m)| u * x + m).collect()
}

/// Outer integral over a time variable of an integrand that may fail.
fn time_integral<G: Fn(f64) -> Result<f64>>(g: G, a: f64, b: f64) -> Result<f64> {
    let failure = RefCell::new(None);
    let value = integrate(
        |u| {
            g(u).unwrap_or_else(|e| {
                failure.borrow_mut().get_or_insert(e);
                0.0
            })
        },
        a,
        b,
        &outer_quadrature(),
    )?
    .value;
    match failure.into_inner() {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// `E[E_u f₁(ξ_t) · E_u f₂(ξ_t)]` for a system started at r.
fn inner_pair(
    kernel: &KernelSpec,
    f1: &TestFunction,
    f2: &TestFunction,
    t: f64,
    r: f64,
    u: f64,
    center: &[f64],
    q: &QuadratureConfig,
) -> Result<f64> {
    let known = kernel_sq_integral(kernel, t, r, u, q)?;
    let rest = kernel_sq_integral(kernel, t, u, t, q)?;
    gaussian_pair(f1, f2, center, known, rest.sqrt(), q)
}

/// `m_f(t) = e^{β(t−r)} E f(ξ_t)` with `ξ_t ~ N(center, σ₂²(t,r) I)`.
pub fn mean_functional(
    kernel: &KernelSpec,
    law: &BranchingLaw,
    f: &TestFunction,
    t: f64,
    r: f64,
    center: &[f64],
    q: &QuadratureConfig,
) -> Result<f64> {
    check_order(r, t)?;
    check_center(kernel, center)?;
    let spread = if t > r { kernel_sq_integral(kernel, t, r, t, q)?.sqrt() } else { 0.0 };
    Ok((law.beta() * (t - r)).exp() * gaussian_mean(f, center, spread)?)
}

/// `E X_t(f₁) X_t(f₂)`: the diagonal term plus the genealogical integral over
/// the death time u of the last common ancestor.
#[allow(clippy::too_many_arguments)]
pub fn second_moment_functional(
    kernel: &KernelSpec,
    law: &BranchingLaw,
    f1: &TestFunction,
    f2: &TestFunction,
    t: f64,
    r: f64,
    center: &[f64],
    q: &QuadratureConfig,
) -> Result<f64> {
    check_order(r, t)?;
    check_center(kernel, center)?;
    let beta = law.beta();
    let tau = t - r;
    let spread_sq = if tau > 0.0 { kernel_sq_integral(kernel, t, r, t, q)? } else { 0.0 };
    let diagonal = (beta * tau).exp() * gaussian_pair(f1, f2, center, spread_sq, 0.0, q)?;
    let vpsi = law.rate() * law.offspring().psi_double_prime1();
    if vpsi == 0.0 || tau == 0.0 {
        return Ok(diagonal);
    }
    let integral = time_integral(
        |u| Ok(inner_pair(kernel, f1, f2, t, r, u, center, q)? * (beta * (2.0 * tau - (u - r))).exp()),
        r,
        t,
    )?;
    Ok(diagonal + vpsi * integral)
}

/// `Var(X_t(f) | F_s)` averaged over `F_s`, i.e. `E(X_t(f) − E(X_t(f)|F_s))²`.
#[allow(clippy::too_many_arguments)]
pub fn conditional_variance(
    kernel: &KernelSpec,
    law: &BranchingLaw,
    f: &TestFunction,
    t: f64,
    s: f64,
    r: f64,
    center: &[f64],
    q: &QuadratureConfig,
) -> Result<f64> {
    check_order(r, t)?;
    check_center(kernel, center)?;
    if !(r <= s && s <= t) {
        return domain(format!("need r <= s <= t, got r = {r}, s = {s}, t = {t}"));
    }
    if s == t {
        return Ok(0.0);
    }
    let beta = law.beta();
    let spread_sq = kernel_sq_integral(kernel, t, r, t, q)?;
    let first = (beta * (t - r)).exp() * gaussian_pair(f, f, center, spread_sq, 0.0, q)?;
    let second = (beta * (2.0 * t - s - r)).exp() * inner_pair(kernel, f, f, t, r, s, center, q)?;
    let vpsi = law.rate() * law.offspring().psi_double_prime1();
    let third = if vpsi == 0.0 {
        0.0
    } else {
        vpsi * time_integral(|u| Ok(inner_pair(kernel, f, f, t, r, u, center, q)? * (beta * (2.0 * t - r - u)).exp()), s, t)?
    };
    Ok(first - second + third)
}

/// `C e^{2βt−βs−βr} σ₂^{−d}(t,r) ‖f‖²_{L²}` with `C = max(1, Vψ″(1)/β) (2π)^{−d/2}`.
///
/// Where the constant comes from: both `E f²(ξ_t)` and every `E(E_u f(ξ_t))²`
/// are at most `M = (2πσ₂²(t,r))^{−d/2}‖f‖²`. Dropping the negative middle
/// term and writing `c = Vψ″/β`, the first and third terms are bounded by
/// `M[(1 − c) e^{β(t−r)} + c e^{2βt−βs−βr}]`. Since `e^{β(t−r)} ≤ e^{2βt−βs−βr}`,
/// this is at most `M e^{2βt−βs−βr}` when `c ≤ 1` and at most
/// `c M e^{2βt−βs−βr}` when `c > 1`.
pub fn variance_bound(
    kernel: &KernelSpec,
    law: &BranchingLaw,
    f: &TestFunction,
    t: f64,
    s: f64,
    r: f64,
    q: &QuadratureConfig,
) -> Result<f64> {
    check_order(r, t)?;
    if !(r <= s && s <= t) {
        return domain(format!("need r <= s <= t, got r = {r}, s = {s}, t = {t}"));
    }
    law.require_supercritical()?;
    let d = kernel.dim as f64;
    let beta = law.beta();
    let c = (law.rate() * law.offspring().psi_double_prime1() / beta).max(1.0) * (2.0 * PI).powf(-0.5 * d);
    let norm = f.l2_norm_sq(kernel.dim)?;
    if norm.is_infinite() {
        return Ok(f64::INFINITY);
    }
    let spread_sq = kernel_sq_integral(kernel, t, r, t, q)?;
    Ok(c * (beta * (2.0 * t - s - r)).exp() * spread_sq.powf(-0.5 * d) * norm)
}

/// `E(X_t(f) | F_s) = e^{β(t−s)} Σ_{α ∈ I_s} E(f(ξ^α_t) | G^α_s)` evaluated on a
/// simulated tree, using each particle's discrete memory up to the grid time s.
pub fn conditional_mean_decomposition(sim: &Simulator, tree: &PathTree, f: &TestFunction, s: f64, t: f64) -> Result<f64> {
    ConditionalMean::new(sim, s, t)?.evaluate(tree, f)
}

/// The per-time work of [`conditional_mean_decomposition`], reusable across trees.
pub struct ConditionalMean {
    s: f64,
    n_s: usize,
    flow: f64,
    weights: Vec<f64>,
    spread: f64,
    growth: f64,
    x0: Vec<f64>,
}

impl ConditionalMean {
    pub fn new(sim: &Simulator, s: f64, t: f64) -> Result<Self> {
        let cfg = sim.config();
        if !(cfg.memory_length <= s && s <= t) {
            return domain(format!("need r <= s <= t, got r = {}, s = {s}, t = {t}", cfg.memory_length));
        }
        let at_t = sim.weights_at(t)?;
        let n_s = sim.weights_at(s)?.n_cells;
        let spread = if s == t { 0.0 } else { sim.kernel().sigma_split(t, s)?.1.sqrt() };
        Ok(Self {
            s,
            n_s,
            flow: at_t.flow,
            weights: at_t.weights,
            spread,
            growth: (cfg.law.beta() * (t - s)).exp(),
            x0: cfg.x0.clone(),
        })
    }

    pub fn evaluate(&self, tree: &PathTree, f: &TestFunction) -> Result<f64> {
        let d = tree.dim;
        let sums = tree.all_sums(self.s, self.n_s, &self.weights);
        let mut terms = Vec::new();
        for (id, seg) in tree.segments.iter().enumerate() {
            if !seg.alive_at(self.s) {
                continue;
            }
            let mean: Vec<f64> = (0..d).map(|c| self.flow * self.x0[c] + sums[id * d + c]).collect();
            terms.push(gaussian_mean(f, &mean, self.spread)?);
        }
        Ok(self.growth * pairwise_sum(&terms))
    }
}

/// `E|ξ_t − e^{μt}ξ₀|²` per coordinate from the spectral representation
/// `c₁λ² ∫_ℝ (1 − 2e^{μt}cos(xt) + e^{2μt}) |x|^{1−2H} / (μ² + x²) dx`.
pub fn fou_second_moment(kernel: &KernelSpec, t: f64, q: &QuadratureConfig) -> Result<f64> {
    kernel.validate()?;
    if kernel.mu >= 0.0 {
        return Err(Error::Unsupported("the spectral variance formula is used for mu < 0 only".into()));
    }
    if !(t >= 0.0) {
        return domain(format!("need t >= 0, got {t}"));
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let h = kernel.hurst;
    let m = kernel.mu.abs();
    let scale = 2.0 * c1(h)? * kernel.lambda * kernel.lambda;
    // Non-oscillating part: (1 + e^{2μt}) ∫_0^∞ x^{1−2H}/(μ²+x²) dx.
    let flat = (1.0 + (2.0 * kernel.mu * t).exp()) * m.powf(-2.0 * h) * spectral_half_line(h, q)?;
    // Oscillating part after y = xt: t^{2H} ∫_0^∞ cos(y) y^{1−2H} / (a² + y²) dy with a = |μ|t.
    let a = m * t;
    let osc = 2.0 * (kernel.mu * t).exp() * t.powf(2.0 * h) * cosine_transform(h, a, q)?;
    Ok(scale * (flat - osc))
}

/// `∫_0^∞ cos(y) y^{1−2H} / (a² + y²) dy`.
fn cosine_transform(h: f64, a: f64, q: &QuadratureConfig) -> Result<f64> {
    let cut = 10.0;
    let p = 1.0 - 2.0 * h;
    let head = integrate_algebraic_left(|y| y.cos() / (a * a + y * y), 0.0, cut, 2.0 - 2.0 * h, q)?.value;
    // ∫_A^∞ e^{iy} g(y) dy = i ∫_0^∞ e^{i(A+iη)} g(A+iη) dη, with g analytic in Re y > 0.
    let g = |z: Complex64| z.powf(p) / (a * a + z * z);
    let tail = integrate_with_breaks(
        |eta| {
            let z = Complex64::new(cut, eta);
            (Complex64::i() * (Complex64::i() * z).exp() * g(z)).re
        },
        &[0.0, 5.0, 20.0, 60.0],
        q,
    )?
    .value;
    Ok(head + tail)
}

/// `lim_{t→∞} E|ξ_t|² = c₁λ²|μ|^{−2H} ∫_ℝ |x|^{1−2H}/(1+x²) dx` for μ < 0.
pub fn fou_limit(kernel: &KernelSpec, q: &QuadratureConfig) -> Result<f64> {
    kernel.validate()?;
    if kernel.mu >= 0.0 {
        return Err(Error::Unsupported("the stationary limit exists for mu < 0 only".into()));
    }
    let h = kernel.hurst;
    Ok(c1(h)? * kernel.lambda * kernel.lambda * kernel.mu.abs().powf(-2.0 * h) * 2.0 * spectral_half_line(h, q)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching::{expected_count, second_moment_count, OffspringDistribution, OffspringKind};
    use crate::kernel::sigma_sq;
    use crate::sim::SimConfig;
    use crate::stats::MeanSe;
    use crate::special::norm_cdf;
    use approx::assert_relative_eq;

    fn q() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn law(kind: OffspringKind, rate: f64) -> BranchingLaw {
        BranchingLaw::new(OffspringDistribution::new(kind).unwrap(), rate).unwrap()
    }

    fn bm() -> KernelSpec {
        KernelSpec::fbm(0.5, 1.0, 1).unwrap()
    }

    #[test]
    fn mean_examples() {
        let two = law(OffspringKind::Deterministic { k: 2 }, 1.0);
        let one = TestFunction::Constant { value: 1.0 };
        assert_relative_eq!(mean_functional(&bm(), &two, &one, 2.0, 0.5, &[0.0], &q()).unwrap(), 1.5f64.exp());
        let unit = TestFunction::Box { lower: vec![0.0], upper: vec![1.0] };
        let v = mean_functional(&bm(), &two, &unit, 1.0, 0.0, &[0.0], &q()).unwrap();
        assert_relative_eq!(v, 1f64.exp() * (norm_cdf(1.0) - 0.5), max_relative = 1e-14);
        assert_relative_eq!(v, 0.927_871_220_478, max_relative = 1e-11);
        let half = TestFunction::Box { lower: vec![0.0], upper: vec![f64::INFINITY] };
        let fbm = KernelSpec::fbm(0.3, 1.0, 1).unwrap();
        assert_relative_eq!(mean_functional(&fbm, &two, &half, 3.0, 0.0, &[0.0], &q()).unwrap(), 0.5 * 3f64.exp());
        assert!(mean_functional(&bm(), &two, &one, 1.0, 2.0, &[0.0], &q()).is_err());
    }

    #[test]
    fn constant_second_moment_is_galton_watson() {
        let one = TestFunction::Constant { value: 1.0 };
        for (kind, rate) in [
            (OffspringKind::Deterministic { k: 2 }, 1.0),
            (OffspringKind::Binary { p0: 0.25, p2: 0.75 }, 1.0),
            (OffspringKind::Poisson { m: 2.0 }, 0.7),
        ] {
            let l = law(kind, rate);
            for k in [bm(), KernelSpec::new(0.3, -1.0, 1.0, 1).unwrap()] {
                let m2 = second_moment_functional(&k, &l, &one, &one, 3.0, 0.5, &[0.0], &q()).unwrap();
                assert_relative_eq!(m2, second_moment_count(&l, 3.0, 0.5).unwrap(), max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn second_moment_at_start_is_pointwise() {
        let two = law(OffspringKind::Deterministic { k: 2 }, 1.0);
        let g = TestFunction::Bump { amplitude: 2.0, width: 0.5 };
        let v = second_moment_functional(&bm(), &two, &g, &g, 1.0, 1.0, &[0.3], &q()).unwrap();
        assert_relative_eq!(v, g.eval(&[0.3]).powi(2), max_relative = 1e-14);
    }

    #[test]
    fn cauchy_schwarz() {
        let two = law(OffspringKind::Binary { p0: 0.2, p2: 0.8 }, 1.3);
        let fs = [
            TestFunction::centered_box(1.0, 1),
            TestFunction::Bump { amplitude: 1.0, width: 0.4 },
            TestFunction::Envelope { scale: 0.7 },
        ];
        for k in [bm(), KernelSpec::fbm(0.7, 1.0, 1).unwrap()] {
            for f in &fs {
                let m1 = mean_functional(&k, &two, f, 2.0, 0.0, &[0.2], &q()).unwrap();
                let m2 = second_moment_functional(&k, &two, f, f, 2.0, 0.0, &[0.2], &q()).unwrap();
                assert!(m2 >= m1 * m1, "{f:?}: {m2} < {m1}²");
            }
        }
    }

    #[test]
    fn conditional_variance_edges() {
        let two = law(OffspringKind::Deterministic { k: 2 }, 1.0);
        let f = TestFunction::centered_box(1.0, 1);
        assert_eq!(conditional_variance(&bm(), &two, &f, 2.0, 2.0, 0.0, &[0.0], &q()).unwrap(), 0.0);
        let one = TestFunction::Constant { value: 1.0 };
        let v = conditional_variance(&bm(), &two, &one, 2.5, 0.5, 0.5, &[0.0], &q()).unwrap();
        let m = expected_count(&two, 2.5, 0.5).unwrap();
        assert_relative_eq!(v, second_moment_count(&two, 2.5, 0.5).unwrap() - m * m, max_relative = 1e-8);
    }

    #[test]
    fn total_variance_decomposition() {
        // Var X_t(f) = E Var(X_t(f)|F_r) at s = r, so with the first moment
        // it reproduces the second moment.
        let l = law(OffspringKind::Binary { p0: 0.25, p2: 0.75 }, 1.0);
        let f = TestFunction::Bump { amplitude: 1.0, width: 0.8 };
        let k = KernelSpec::fbm(0.7, 1.0, 1).unwrap();
        let (t, r) = (2.0, 0.0);
        let var = conditional_variance(&k, &l, &f, t, r, r, &[0.1], &q()).unwrap();
        let m1 = mean_functional(&k, &l, &f, t, r, &[0.1], &q()).unwrap();
        let m2 = second_moment_functional(&k, &l, &f, &f, t, r, &[0.1], &q()).unwrap();
        assert_relative_eq!(var + m1 * m1, m2, max_relative = 1e-7);
    }

    #[test]
    fn bound_dominates() {
        let two = law(OffspringKind::Deterministic { k: 2 }, 1.0);
        let f = TestFunction::centered_box(1.0, 1);
        for (t, s, r) in [(2.0, 1.0, 0.0), (3.0, 2.9, 1.0), (1.0, 0.0, 0.0)] {
            let v = conditional_variance(&bm(), &two, &f, t, s, r, &[0.0], &q()).unwrap();
            let b = variance_bound(&bm(), &two, &f, t, s, r, &q()).unwrap();
            assert!(v <= b, "{v} > {b}");
        }
        let one = TestFunction::Constant { value: 1.0 };
        assert_eq!(variance_bound(&bm(), &two, &one, 2.0, 1.0, 0.0, &q()).unwrap(), f64::INFINITY);
    }

    fn bm_sim(snapshots: Vec<f64>) -> Simulator {
        let two = law(OffspringKind::Deterministic { k: 2 }, 1.0);
        let mut cfg = SimConfig::new(KernelSpec::fbm(0.3, 1.0, 1).unwrap(), two, 0.05, 2.0);
        cfg.snapshot_times = snapshots;
        cfg.root_seed = 17;
        Simulator::new(&cfg).unwrap()
    }

    #[test]
    fn decomposition_edges() {
        let sim = bm_sim(vec![1.0, 2.0]);
        let f = TestFunction::Bump { amplitude: 1.0, width: 0.7 };
        let one = TestFunction::Constant { value: 1.0 };
        for rep in 0..4 {
            let out = sim.run_replicate(rep).unwrap();
            let at_t = &out.snapshots[1];
            let direct: f64 = at_t.particles.iter().map(|p| f.eval(&p.position)).sum();
            let v = conditional_mean_decomposition(&sim, &out.tree, &f, 2.0, 2.0).unwrap();
            assert_relative_eq!(v, direct, max_relative = 1e-12);
            let c = conditional_mean_decomposition(&sim, &out.tree, &one, 1.0, 2.0).unwrap();
            assert_relative_eq!(c, 1f64.exp() * out.snapshots[0].count as f64, max_relative = 1e-14);
        }
        let out = sim.run_replicate(0).unwrap();
        assert!(conditional_mean_decomposition(&sim, &out.tree, &f, 2.5, 2.0).is_err());
    }

    #[test]
    fn decomposition_tower_property() {
        let sim = bm_sim(vec![2.0]);
        let f = TestFunction::centered_box(1.0, 1);
        let cm = ConditionalMean::new(&sim, 1.0, 2.0).unwrap();
        let vals: Vec<f64> = (0..400).map(|rep| cm.evaluate(&sim.run_replicate(rep).unwrap().tree, &f).unwrap()).collect();
        let m = MeanSe::from_samples(&vals);
        let exact = mean_functional(&sim.config().kernel, &sim.config().law, &f, 2.0, 0.0, &[0.0], &q()).unwrap();
        assert!(m.within(exact, 3.0), "{m:?} vs {exact}");
    }

    #[test]
    fn spectral_matches_time_domain() {
        for h in [0.3, 0.7] {
            let k = KernelSpec::new(h, -1.0, 1.0, 1).unwrap();
            for t in [1.0, 5.0, 20.0] {
                let spectral = fou_second_moment(&k, t, &q()).unwrap();
                let time = sigma_sq(&k, t, &q()).unwrap();
                assert_relative_eq!(spectral, time, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn spectral_edges() {
        let ou = KernelSpec::new(0.5, -1.0, 1.0, 1).unwrap();
        assert_eq!(fou_second_moment(&ou, 0.0, &q()).unwrap(), 0.0);
        assert_relative_eq!(fou_second_moment(&ou, 2.0, &q()).unwrap(), (1.0 - (-4f64).exp()) / 2.0, max_relative = 1e-9);
        assert_relative_eq!(fou_limit(&ou, &q()).unwrap(), 0.5, max_relative = 1e-10);
        assert!(fou_second_moment(&bm(), 1.0, &q()).is_err());
    }
}
