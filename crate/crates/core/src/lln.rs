//! Scaled statistics, limit targets and numerical checks of the conditions
//! under which `e^{−βt}σ^d(t)X_t(f)` converges.

use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::branching::{BranchingLaw, OffspringDistribution, OffspringKind};
use crate::error::{domain, Error, Result};
use crate::experiment::{run_replicates, ReplicateRecord};
use crate::kernel::{ell_limit, sigma_sq, KernelSpec, VolterraKernel};
use crate::quadrature::{integrate_semi_infinite, QuadratureConfig};
use crate::sim::{path_modulus, PathTree, SimConfig, Simulator};
use crate::stats::{pairwise_sum, MeanSe};
use crate::test_function::{gaussian_mean, TestFunction};

/// The smoothing in `Tf(z) = (2π)^{−d/2} ∫ exp{−½|z − y/ℓ|²} f(y) dy`, with
/// `y/ℓ = 0` when `ℓ = ∞`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitTarget {
    pub ell: f64,
    /// `U_∞ ξ₀`, the point at which `Tf` is evaluated.
    pub u_infinity_x0: Vec<f64>,
}

impl LimitTarget {
    pub fn new(ell: f64, u_infinity_x0: Vec<f64>) -> Result<Self> {
        if !(ell > 0.0) {
            return domain(format!("ell must lie in (0, inf], got {ell}"));
        }
        if u_infinity_x0.is_empty() || u_infinity_x0.iter().any(|x| !x.is_finite()) {
            return domain("U_inf x0 must be a finite vector of dimension >= 1");
        }
        Ok(Self { ell, u_infinity_x0 })
    }

    /// Target for the `K_H^μ` family with μ ≤ 0, where `U_t x/σ(t) → 0`.
    pub fn for_kernel(kernel: &KernelSpec, q: &QuadratureConfig) -> Result<Self> {
        Self::new(ell_limit(kernel, q)?, vec![0.0; kernel.dim])
    }

    pub fn dim(&self) -> usize {
        self.u_infinity_x0.len()
    }

    pub fn density(&self, z: &[f64], y: &[f64]) -> f64 {
        let d = z.len() as f64;
        let r2: f64 = if self.ell.is_infinite() {
            z.iter().map(|a| a * a).sum()
        } else {
            z.iter().zip(y).map(|(a, b)| (a - b / self.ell).powi(2)).sum()
        };
        (2.0 * PI).powf(-0.5 * d) * (-0.5 * r2).exp()
    }
}

/// `Tf(U_∞ξ₀)`.
///
/// For finite ℓ, `y = ℓ(z + w)` turns the integral into `ℓ^d E f(ℓz + ℓZ)`.
pub fn transform_tf(f: &TestFunction, target: &LimitTarget) -> Result<f64> {
    let d = target.dim();
    f.validate(d)?;
    let z = &target.u_infinity_x0;
    if target.ell.is_finite() {
        let ell = target.ell;
        let m: Vec<f64> = z.iter().map(|x| ell * x).collect();
        return Ok(ell.powi(d as i32) * gaussian_mean(f, &m, ell)?);
    }
    let mass = f.lebesgue_integral(d)?;
    if !mass.is_finite() {
        return Err(Error::Divergent(format!("{f:?} is not integrable, so Tf is infinite when ell = inf")));
    }
    Ok(target.density(z, z) * mass)
}

/// Ensemble statistics at one time.
#[derive(Debug, Clone, Serialize)]
pub struct LlnRow {
    pub t: f64,
    pub sigma: f64,
    /// `e^{−βt}σ^d(t)X_t(f)` over all uncapped replicates.
    pub scaled: MeanSe,
    /// `e^{−βt}X_t(1)` over the same replicates.
    pub scaled_count: MeanSe,
    /// `σ^d(t)X_t(f)/X_t(1)` over replicates alive at the horizon.
    pub ratio: Option<MeanSe>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LlnReport {
    pub times: Vec<f64>,
    pub replicates: usize,
    pub capped: usize,
    pub surviving: usize,
    /// `Tf(U_∞ξ₀)`, the limit of the ratio.
    pub target: f64,
    /// `e^{−βr}Tf(U_∞ξ₀)`, the limit of the mean of the scaled statistic.
    pub target_scaled: f64,
    pub rows: Vec<LlnRow>,
    pub f_estimate: Option<MeanSe>,
    /// No replicate survived to the horizon.
    pub degenerate: bool,
    /// Per time and replicate, in replicate order.
    #[serde(skip)]
    pub scaled_values: Vec<Vec<f64>>,
    #[serde(skip)]
    pub ratio_values: Vec<Vec<Option<f64>>>,
}

impl LlnReport {
    /// Ratio mean at the last recorded time.
    pub fn final_ratio(&self) -> Option<MeanSe> {
        self.rows.last().and_then(|r| r.ratio)
    }

    /// `|ratio_mean(t) − Tf|` is nonincreasing over the last `k` recorded times.
    pub fn approaches_target(&self, k: usize) -> bool {
        let errs: Vec<f64> = self.rows.iter().filter_map(|r| r.ratio.map(|m| (m.mean - self.target).abs())).collect();
        errs.len() >= k && errs[errs.len() - k..].windows(2).all(|w| w[1] <= w[0])
    }
}

/// Statistics of test function `f_index` at the snapshot `times` of `records`.
/// Capped replicates are left out; a replicate survives when its count at
/// the last time is positive.
pub fn lln_statistics(
    records: &[ReplicateRecord],
    times: &[f64],
    kernel: &dyn VolterraKernel,
    law: &BranchingLaw,
    r: f64,
    f_index: usize,
    target: f64,
) -> Result<LlnReport> {
    law.require_supercritical()?;
    let beta = law.beta();
    let d = kernel.dim() as i32;
    let used: Vec<&ReplicateRecord> = records.iter().filter(|r| !r.capped()).collect();
    for rec in &used {
        if rec.counts.len() != times.len() || rec.values.len() != times.len() {
            return domain(format!("replicate {} does not have values at all {} times", rec.index, times.len()));
        }
        if rec.values.iter().any(|v| v.len() <= f_index) {
            return domain(format!("replicate {} has no test function {f_index}", rec.index));
        }
    }
    let alive_at_end = |rec: &ReplicateRecord| rec.counts.last().is_some_and(|&c| c > 0);
    let surviving = used.iter().filter(|r| alive_at_end(r)).count();
    let mut rows = Vec::with_capacity(times.len());
    let mut scaled_values = Vec::with_capacity(times.len());
    let mut ratio_values = Vec::with_capacity(times.len());
    for (i, &t) in times.iter().enumerate() {
        let sigma = if t > 0.0 { kernel.sigma_sq(t)?.sqrt() } else { 0.0 };
        let sd = sigma.powi(d);
        let damp = (-beta * t).exp();
        let scaled: Vec<f64> = used.iter().map(|rec| damp * sd * rec.values[i][f_index]).collect();
        let counts: Vec<f64> = used.iter().map(|rec| damp * rec.counts[i] as f64).collect();
        let ratios: Vec<Option<f64>> = used
            .iter()
            .map(|rec| (alive_at_end(rec) && rec.counts[i] > 0).then(|| sd * rec.values[i][f_index] / rec.counts[i] as f64))
            .collect();
        let live: Vec<f64> = ratios.iter().flatten().copied().collect();
        rows.push(LlnRow {
            t,
            sigma,
            scaled: MeanSe::from_samples(&scaled),
            scaled_count: MeanSe::from_samples(&counts),
            ratio: (!live.is_empty()).then(|| MeanSe::from_samples(&live)),
        });
        scaled_values.push(scaled);
        ratio_values.push(ratios);
    }
    let fs: Vec<f64> = used.iter().filter_map(|r| r.f_estimate).collect();
    Ok(LlnReport {
        times: times.to_vec(),
        replicates: used.len(),
        capped: records.len() - used.len(),
        surviving,
        target,
        target_scaled: (-beta * r).exp() * target,
        rows,
        f_estimate: (!fs.is_empty()).then(|| MeanSe::from_samples(&fs)),
        degenerate: surviving == 0,
        scaled_values,
        ratio_values,
    })
}

/// The separation time `b(t)` in the conditions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BSchedule {
    Sqrt,
    Power { delta: f64 },
}

impl BSchedule {
    /// `√t` for fBM and `t^δ` with [`default_delta`] for fOU.
    pub fn default_for(kernel: &KernelSpec) -> Self {
        if kernel.mu < 0.0 {
            Self::Power { delta: default_delta(kernel.hurst) }
        } else {
            Self::Sqrt
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Self::Sqrt => t.sqrt(),
            Self::Power { delta } => t.powf(delta),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Power { delta } if !(delta > 0.0 && delta < 1.0) => domain(format!("delta must lie in (0, 1), got {delta}")),
            _ => Ok(()),
        }
    }
}

/// `0.9·min(1/2, 2γ/(1+2γ))` with `γ = |H − 1/2|`, or `0.45` at H = 1/2 where
/// the window is not binding.
pub fn default_delta(hurst: f64) -> f64 {
    let g = (hurst - 0.5).abs();
    if g == 0.0 {
        return 0.45;
    }
    0.9 * (2.0 * g / (1.0 + 2.0 * g)).min(0.5)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSettings {
    pub b: BSchedule,
    /// `t_n = r + n^κ`.
    pub kappa: f64,
    pub r: f64,
    pub probes: Vec<f64>,
    /// Number of explicitly summed terms in the `t_n` series.
    pub series_terms: usize,
}

impl ConditionSettings {
    pub fn default_for(kernel: &KernelSpec) -> Self {
        let (probes, terms) = if kernel.mu < 0.0 {
            (vec![20.0, 50.0, 100.0, 200.0], 100_000)
        } else {
            (vec![1e2, 1e3, 1e4, 1e5, 1e6], 1_000_000)
        };
        Self { b: BSchedule::default_for(kernel), kappa: 0.5, r: 0.0, probes, series_terms: terms }
    }

    pub fn validate(&self) -> Result<()> {
        self.b.validate()?;
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return domain(format!("kappa must lie in (0, 1), got {}", self.kappa));
        }
        if !(self.r >= 0.0) {
            return domain(format!("r must be nonnegative, got {}", self.r));
        }
        if self.probes.is_empty() || self.probes.windows(2).any(|w| !(w[1] > w[0])) || self.probes[0] <= 1.0 {
            return domain("probes must increase strictly and exceed 1");
        }
        if self.series_terms < 2 {
            return domain("series_terms must be at least 2");
        }
        Ok(())
    }

    pub fn t_n(&self, n: f64) -> f64 {
        self.r + n.powf(self.kappa)
    }
}

/// σ²(t) for long series. Quadrature for fOU loses accuracy once |μ|t is in
/// the thousands, so past `cap` the stationary limit ℓ² is used instead and
/// in between values are interpolated in log-log on a fixed table.
struct SigmaCurve {
    kernel: KernelSpec,
    table: Option<(Vec<f64>, Vec<f64>)>,
    cap: f64,
    ell_sq: f64,
}

const TABLE_START: f64 = 1.0;
const TABLE_PER_DECADE: usize = 48;

impl SigmaCurve {
    fn new(kernel: &KernelSpec, q: &QuadratureConfig) -> Result<Self> {
        let exact = kernel.mu == 0.0 || kernel.hurst == 0.5;
        if exact || kernel.mu > 0.0 {
            return Ok(Self { kernel: *kernel, table: None, cap: f64::INFINITY, ell_sq: f64::NAN });
        }
        let cap = 500.0 / kernel.mu.abs();
        let decades = (cap / TABLE_START).log10().max(0.0);
        let n = (decades * TABLE_PER_DECADE as f64).ceil() as usize + 1;
        let mut lt = Vec::with_capacity(n);
        let mut ls = Vec::with_capacity(n);
        for i in 0..n {
            let t = TABLE_START * (cap / TABLE_START).powf(i as f64 / (n - 1).max(1) as f64);
            lt.push(t.ln());
            ls.push(sigma_sq(kernel, t, q)?.ln());
        }
        Ok(Self { kernel: *kernel, table: Some((lt, ls)), cap, ell_sq: ell_limit(kernel, q)?.powi(2) })
    }

    fn sigma_sq(&self, t: f64, q: &QuadratureConfig) -> Result<f64> {
        let Some((lt, ls)) = &self.table else {
            return sigma_sq(&self.kernel, t, q);
        };
        if t < TABLE_START {
            return sigma_sq(&self.kernel, t, q);
        }
        if t >= self.cap {
            return Ok(self.ell_sq);
        }
        let x = t.ln();
        let j = lt.partition_point(|&v| v <= x).clamp(1, lt.len() - 1);
        let w = (x - lt[j - 1]) / (lt[j] - lt[j - 1]);
        Ok((ls[j - 1] + w * (ls[j] - ls[j - 1])).exp())
    }
}

/// A quantity evaluated on the probe grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trace {
    pub t: Vec<f64>,
    pub value: Vec<f64>,
    pub strictly_decreasing: bool,
}

impl Trace {
    fn new(t: Vec<f64>, value: Vec<f64>) -> Self {
        let strictly_decreasing = value.windows(2).all(|w| w[1] < w[0]);
        Self { t, value, strictly_decreasing }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MeshRow {
    pub n: u64,
    pub gap: f64,
    /// `max σ / σ(t_n)` and `min σ / σ(t_n)` over the ends and midpoint of `[t_n, t_{n+1}]`.
    pub sup_ratio: f64,
    pub inf_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeriesReport {
    /// `(N, Σ_{n=2}^N e^{−βb(t_{n−1})}σ^d(t_n))` at powers of ten and at the last term.
    pub partial_sums: Vec<(u64, f64)>,
    /// Integral-test bound on the terms past the last one summed.
    pub tail_bound: f64,
    /// `tail_bound < 1e-6 × head`.
    pub cauchy: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub settings: ConditionSettings,
    pub sigma: Trace,
    /// `ln(e^{−βt}σ^d(t))`; logs keep large probes representable.
    pub c1_log: Trace,
    /// `U_t/σ(t)`, the scalar flow over σ.
    pub c2: Trace,
    /// `ln(e^{−βb(t)}σ^d(t))`.
    pub c3_damping_log: Trace,
    /// `σ₁(t, b(t))√(ln t)/σ(t)`.
    pub c3: Trace,
    /// `σ₁(t, b(t))/σ(t)`.
    pub c3_prime: Trace,
    pub mesh: Vec<MeshRow>,
    pub series: SeriesReport,
}

/// Deterministic traces of the convergence conditions; see [`sum_pmax`] for
/// the one needing simulated paths.
pub fn check_conditions(kernel: &KernelSpec, law: &BranchingLaw, settings: &ConditionSettings, q: &QuadratureConfig) -> Result<ConditionReport> {
    settings.validate()?;
    kernel.validate()?;
    let beta = law.beta();
    let d = kernel.dim as f64;
    let probes = settings.probes.clone();
    let (mut sig, mut c1, mut c2, mut damp, mut c3, mut c3p) = (vec![], vec![], vec![], vec![], vec![], vec![]);
    for &t in &probes {
        let b = settings.b.eval(t);
        if !(b < t) {
            return domain(format!("b(t) = {b} is not below t = {t}"));
        }
        let s2 = sigma_sq(kernel, t, q)?;
        let (s1, _) = crate::kernel::sigma_split(kernel, t, b, q)?;
        let ratio = (s1 / s2).sqrt();
        sig.push(s2.sqrt());
        c1.push(-beta * t + 0.5 * d * s2.ln());
        c2.push(kernel.flow(t) / s2.sqrt());
        damp.push(-beta * b + 0.5 * d * s2.ln());
        c3.push(ratio * t.ln().sqrt());
        c3p.push(ratio);
    }
    let curve = SigmaCurve::new(kernel, q)?;
    let sigma_at = |t: f64| curve.sigma_sq(t, q).map(f64::sqrt);
    let n_max = settings.series_terms as u64;
    let mut mesh = Vec::new();
    let mut n = 1u64;
    while n <= n_max {
        let (a, c) = (settings.t_n(n as f64), settings.t_n(n as f64 + 1.0));
        let s = [sigma_at(a)?, sigma_at(0.5 * (a + c))?, sigma_at(c)?];
        mesh.push(MeshRow {
            n,
            gap: c - a,
            sup_ratio: s.iter().copied().fold(f64::MIN, f64::max) / s[0],
            inf_ratio: s.iter().copied().fold(f64::MAX, f64::min) / s[0],
        });
        n *= 10;
    }
    let term = |x: f64, y: f64| -> Result<f64> { Ok((-beta * settings.b.eval(settings.t_n(x))).exp() * sigma_at(settings.t_n(y))?.powf(d)) };
    let mut terms = Vec::with_capacity(n_max as usize);
    for n in 2..=n_max {
        terms.push(term((n - 1) as f64, n as f64)?);
    }
    let mut partial_sums = Vec::new();
    let mut checkpoint = 10u64;
    while checkpoint < n_max {
        partial_sums.push((checkpoint, pairwise_sum(&terms[..(checkpoint - 1) as usize])));
        checkpoint *= 10;
    }
    let head = pairwise_sum(&terms);
    partial_sums.push((n_max, head));
    // For n > N with b and σ nondecreasing, a_n ≤ ∫_{n−1}^{n} e^{−βb(t_x)}σ^d(t_{x+1}) dx.
    let nf = n_max as f64;
    let tail_bound = integrate_semi_infinite(|x| term(x, x + 1.0).unwrap_or(f64::NAN), nf, q)
        .ok()
        .map(|e| e.value)
        .filter(|v| v.is_finite())
        .unwrap_or(f64::INFINITY);
    Ok(ConditionReport {
        settings: settings.clone(),
        sigma: Trace::new(probes.clone(), sig),
        c1_log: Trace::new(probes.clone(), c1),
        c2: Trace::new(probes.clone(), c2),
        c3_damping_log: Trace::new(probes.clone(), damp),
        c3: Trace::new(probes.clone(), c3),
        c3_prime: Trace::new(probes, c3p),
        mesh,
        series: SeriesReport { partial_sums, tail_bound, cauchy: tail_bound < 1e-6 * head },
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SumPmaxReport {
    pub eps: f64,
    pub paths: u64,
    /// `(n, t_n, t_{n+1}, exceedance frequency, σ^d(t_n) × frequency)` with the
    /// interval widened to the simulation grid.
    pub terms: Vec<(u64, f64, f64, f64, f64)>,
    pub partial_sums: Vec<f64>,
}

/// Partial sums of `Σ σ^d(t_n) P(sup_{u,v ∈ [t_n, t_{n+1}]} |ξ_u − ξ_v| ≥ ε)`
/// with the probabilities estimated from `paths` independent single-particle
/// lines on a grid of step `grid_dt`.
pub fn sum_pmax(
    kernel: &KernelSpec,
    settings: &ConditionSettings,
    eps: f64,
    intervals: u64,
    paths: u64,
    grid_dt: f64,
    seed: u64,
) -> Result<SumPmaxReport> {
    settings.validate()?;
    if !(eps > 0.0) || intervals == 0 || paths == 0 {
        return domain("sum_pmax needs eps > 0, intervals >= 1 and paths >= 1");
    }
    let line = BranchingLaw::new(OffspringDistribution::new(OffspringKind::Deterministic { k: 1 })?, 1.0)?;
    let snap = |t: f64, up: bool| {
        let k = t / grid_dt;
        (if up { (k - 1e-9).ceil() } else { (k + 1e-9).floor() }) * grid_dt
    };
    let horizon = snap(settings.t_n(intervals as f64 + 1.0), true);
    let mut cfg = SimConfig::new(*kernel, line, grid_dt, horizon);
    cfg.memory_length = snap(settings.r, false);
    cfg.snapshot_times = vec![horizon];
    cfg.root_seed = seed;
    let sim = Simulator::new(&cfg)?;
    let trees: Vec<PathTree> = run_trees(&sim, paths)?;
    let d = kernel.dim as f64;
    let q = QuadratureConfig::default();
    let mut terms = Vec::new();
    let mut partial_sums = Vec::new();
    let mut acc = 0.0;
    for n in 1..=intervals {
        let (a, b) = (snap(settings.t_n(n as f64), false), snap(settings.t_n(n as f64 + 1.0), true));
        let freq = path_modulus(&sim, &trees, a, b, eps)?.exceed_frequency;
        let tn = settings.t_n(n as f64);
        let w = sigma_sq(kernel, tn, &q)?.sqrt().powf(d) * freq;
        acc += w;
        terms.push((n, a, b, freq, w));
        partial_sums.push(acc);
    }
    Ok(SumPmaxReport { eps, paths, terms, partial_sums })
}

fn run_trees(sim: &Simulator, n: u64) -> Result<Vec<PathTree>> {
    use rayon::prelude::*;
    let root = sim.config().root_seed;
    (0..n).into_par_iter().map(|i| Ok(sim.run_seed(crate::sim::replicate_seed(root, i))?.tree)).collect()
}

/// `ξ_t = e^t ξ₀ + ∫_0^t e^s dW_s` coordinatewise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpFlowKernel {
    pub dim: usize,
}

impl VolterraKernel for ExpFlowKernel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn flow(&self, t: f64) -> f64 {
        t.exp()
    }

    fn sigma_sq(&self, t: f64) -> Result<f64> {
        if !(t >= 0.0) {
            return domain(format!("need t >= 0, got {t}"));
        }
        Ok(0.5 * (2.0 * t).exp_m1())
    }

    fn sigma_split(&self, t: f64, s: f64) -> Result<(f64, f64)> {
        if !(0.0 <= s && s <= t) {
            return domain(format!("need 0 <= s <= t, got s = {s}, t = {t}"));
        }
        let first = 0.5 * (2.0 * s).exp_m1();
        Ok((first, 0.5 * ((2.0 * t).exp() - (2.0 * s).exp())))
    }

    fn cell_weights(&self, t: f64, grid: &[f64]) -> Result<Vec<f64>> {
        if grid.last().is_some_and(|&g| g > t * (1.0 + 1e-12)) {
            return domain("grid ends after t");
        }
        Ok(grid.windows(2).map(|w| (w[1].exp() - w[0].exp()) / (w[1] - w[0])).collect())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpFlowMc {
    pub horizon: f64,
    pub replicates: u64,
    /// `σ^d(t)X_t(f)/X_t(1)` over surviving replicates.
    pub ratio: Option<MeanSe>,
    /// Its exact mean `σ^d(t) E f(ξ_t)` for one particle at the horizon.
    pub finite_t_expectation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct UInfinityReport {
    pub sigma_sq_at_1: f64,
    /// `(t, e^t/σ(t))`.
    pub flow_ratio: Vec<(f64, f64)>,
    pub u_infinity: f64,
    /// `e^{−βr}(2π)^{−d/2}e^{−|U_∞ξ₀|²/2}∫f`, the mean of the scaled statistic divided by `E F`.
    pub target: f64,
    /// `Tf(U_∞ξ₀)`, the limit of the ratio statistic.
    pub ratio_target: f64,
    pub beta: f64,
    /// The law requires β > d; false means the prediction is outside its range.
    pub beta_exceeds_dim: bool,
    pub mc: Option<ExpFlowMc>,
}

/// Settings for the small Monte Carlo comparison in [`u_infinity_demo`].
#[derive(Debug, Clone, Copy)]
pub struct McSettings {
    pub horizon: f64,
    pub grid_dt: f64,
    pub replicates: u64,
    pub seed: u64,
}

/// Limits for the exponential flow, where `U_t x/σ(t)` has a nonzero limit.
pub fn u_infinity_demo(x0: &[f64], f: &TestFunction, law: &BranchingLaw, r: f64, mc: Option<McSettings>) -> Result<UInfinityReport> {
    let kernel = ExpFlowKernel { dim: x0.len() };
    if x0.is_empty() {
        return domain("x0 must have at least one coordinate");
    }
    let d = kernel.dim as f64;
    let flow_ratio: Vec<(f64, f64)> = [1.0, 5.0, 10.0, 20.0]
        .iter()
        .map(|&t| Ok((t, kernel.flow(t) / kernel.sigma_sq(t)?.sqrt())))
        .collect::<Result<_>>()?;
    let u_inf = std::f64::consts::SQRT_2;
    let z: Vec<f64> = x0.iter().map(|x| u_inf * x).collect();
    let target_obj = LimitTarget::new(f64::INFINITY, z)?;
    let ratio_target = transform_tf(f, &target_obj)?;
    let beta = law.beta();
    let mc = match mc {
        None => None,
        Some(m) => {
            let mut cfg = SimConfig::new(KernelSpec::fbm(0.5, 1.0, kernel.dim)?, law.clone(), m.grid_dt, m.horizon);
            cfg.x0 = x0.to_vec();
            cfg.root_seed = m.seed;
            let sim = Simulator::with_kernel(Arc::new(kernel), &cfg)?;
            let recs = run_replicates(&sim, std::slice::from_ref(f), m.replicates)?;
            let sigma = kernel.sigma_sq(m.horizon)?.sqrt();
            let ratios: Vec<f64> = recs
                .iter()
                .filter(|r| !r.capped() && r.counts[0] > 0)
                .map(|r| sigma.powf(d) * r.values[0][0] / r.counts[0] as f64)
                .collect();
            let mean: Vec<f64> = x0.iter().map(|x| kernel.flow(m.horizon) * x).collect();
            Some(ExpFlowMc {
                horizon: m.horizon,
                replicates: m.replicates,
                ratio: (!ratios.is_empty()).then(|| MeanSe::from_samples(&ratios)),
                finite_t_expectation: sigma.powf(d) * gaussian_mean(f, &mean, sigma)?,
            })
        }
    };
    Ok(UInfinityReport {
        sigma_sq_at_1: kernel.sigma_sq(1.0)?,
        flow_ratio,
        u_infinity: u_inf,
        target: (-beta * r).exp() * ratio_target,
        ratio_target,
        beta,
        beta_exceeds_dim: beta > d,
        mc,
    })
}
