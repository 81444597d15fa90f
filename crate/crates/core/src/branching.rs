//! Offspring laws, exponential lifetimes and the Galton–Watson moment identities.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Offspring law as written in a config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OffspringKind {
    /// Exactly `k` children.
    Deterministic { k: u32 },
    /// Zero children with probability `p0`, two with probability `p2`.
    Binary { p0: f64, p2: f64 },
    /// `p_k = (1 − q) q^k`.
    Geometric { q: f64 },
    Poisson { m: f64 },
    /// `probs[k]` is the probability of k children.
    Table { probs: Vec<f64> },
}

/// A validated offspring law with its factorial moments `ψ′(1)` and `ψ″(1)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "OffspringKind", into = "OffspringKind")]
pub struct OffspringDistribution {
    kind: OffspringKind,
    psi_prime1: f64,
    psi_double_prime1: f64,
    cumulative: Vec<f64>,
    poisson: Option<Poisson<f64>>,
}

impl PartialEq for OffspringDistribution {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

const PROB_TOL: f64 = 1e-12;

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        domain(format!("{name} must be a probability, got {p}"))
    }
}

impl OffspringDistribution {
    pub fn new(kind: OffspringKind) -> Result<Self> {
        let mut cumulative = Vec::new();
        let mut poisson = None;
        let (d1, d2) = match &kind {
            OffspringKind::Deterministic { k } => {
                let k = *k as f64;
                (k, k * (k - 1.0))
            }
            OffspringKind::Binary { p0, p2 } => {
                check_prob("p0", *p0)?;
                check_prob("p2", *p2)?;
                if (p0 + p2 - 1.0).abs() > PROB_TOL {
                    return domain(format!("binary offspring needs p0 + p2 = 1, got {}", p0 + p2));
                }
                (2.0 * p2, 2.0 * p2)
            }
            OffspringKind::Geometric { q } => {
                if !(0.0..1.0).contains(q) {
                    return domain(format!("geometric offspring needs 0 <= q < 1, got {q}"));
                }
                let r = q / (1.0 - q);
                (r, 2.0 * r * r)
            }
            OffspringKind::Poisson { m } => {
                if !(*m >= 0.0 && m.is_finite()) {
                    return domain(format!("poisson offspring needs a finite mean m >= 0, got {m}"));
                }
                if *m > 0.0 {
                    poisson = Some(Poisson::new(*m).map_err(|e| Error::Domain(e.to_string()))?);
                }
                (*m, m * m)
            }
            OffspringKind::Table { probs } => {
                if probs.is_empty() {
                    return domain("offspring table is empty");
                }
                for (k, &p) in probs.iter().enumerate() {
                    check_prob(&format!("probs[{k}]"), p)?;
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > PROB_TOL {
                    return domain(format!("offspring table sums to {total}, not 1"));
                }
                let mut acc = 0.0;
                for &p in probs {
                    acc += p;
                    cumulative.push(acc);
                }
                let d1 = probs.iter().enumerate().map(|(k, p)| k as f64 * p).sum();
                let d2 = probs.iter().enumerate().map(|(k, p)| (k * k.saturating_sub(1)) as f64 * p).sum();
                (d1, d2)
            }
        };
        Ok(Self { kind, psi_prime1: d1, psi_double_prime1: d2, cumulative, poisson })
    }

    pub fn kind(&self) -> &OffspringKind {
        &self.kind
    }

    /// `ψ′(1⁻) = Σ k p_k`.
    pub fn psi_prime1(&self) -> f64 {
        self.psi_prime1
    }

    /// `ψ″(1⁻) = Σ k(k−1) p_k`.
    pub fn psi_double_prime1(&self) -> f64 {
        self.psi_double_prime1
    }

    /// The generating function `ψ(s) = Σ p_k s^k`.
    pub fn pgf(&self, s: f64) -> f64 {
        match &self.kind {
            OffspringKind::Deterministic { k } => s.powi(*k as i32),
            OffspringKind::Binary { p0, p2 } => p0 + p2 * s * s,
            OffspringKind::Geometric { q } => (1.0 - q) / (1.0 - q * s),
            OffspringKind::Poisson { m } => (m * (s - 1.0)).exp(),
            OffspringKind::Table { probs } => probs.iter().rev().fold(0.0, |acc, p| acc * s + p),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match &self.kind {
            OffspringKind::Deterministic { k } => *k,
            OffspringKind::Binary { p0, .. } => {
                if rng.random::<f64>() < *p0 {
                    0
                } else {
                    2
                }
            }
            OffspringKind::Geometric { q } => {
                if *q == 0.0 {
                    return 0;
                }
                // P(N ≥ k) = q^k.
                let u = 1.0 - rng.random::<f64>();
                (u.ln() / q.ln()).floor() as u32
            }
            OffspringKind::Poisson { .. } => match &self.poisson {
                Some(p) => p.sample(rng) as u32,
                None => 0,
            },
            OffspringKind::Table { .. } => {
                let u = rng.random::<f64>();
                let k = self.cumulative.partition_point(|&c| c <= u);
                k.min(self.cumulative.len() - 1) as u32
            }
        }
    }
}

impl TryFrom<OffspringKind> for OffspringDistribution {
    type Error = Error;

    fn try_from(kind: OffspringKind) -> Result<Self> {
        Self::new(kind)
    }
}

impl From<OffspringDistribution> for OffspringKind {
    fn from(d: OffspringDistribution) -> Self {
        d.kind
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawLaw {
    offspring: OffspringDistribution,
    rate: f64,
}

/// Offspring law, exponential lifetime rate V and branching factor `β = V(ψ′(1) − 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLaw", into = "RawLaw")]
pub struct BranchingLaw {
    offspring: OffspringDistribution,
    rate: f64,
    beta: f64,
}

impl TryFrom<RawLaw> for BranchingLaw {
    type Error = Error;

    fn try_from(raw: RawLaw) -> Result<Self> {
        Self::new(raw.offspring, raw.rate)
    }
}

impl From<BranchingLaw> for RawLaw {
    fn from(law: BranchingLaw) -> Self {
        RawLaw { offspring: law.offspring, rate: law.rate }
    }
}

impl BranchingLaw {
    pub fn new(offspring: OffspringDistribution, rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return domain(format!("lifetime rate must be positive, got {rate}"));
        }
        let beta = rate * (offspring.psi_prime1() - 1.0);
        Ok(Self { offspring, rate, beta })
    }

    pub fn offspring(&self) -> &OffspringDistribution {
        &self.offspring
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Requires a supercritical law, as the laws of large numbers do.
    pub fn require_supercritical(&self) -> Result<()> {
        if self.beta > 0.0 {
            Ok(())
        } else {
            Err(Error::Unsupported(format!("branching factor beta = {} must be positive", self.beta)))
        }
    }

    /// Exponential lifetime from a uniform `u ∈ [0,1)` by inverse transform.
    pub fn lifetime_quantile(&self, u: f64) -> f64 {
        -(-u).ln_1p() / self.rate
    }

    pub fn sample_lifetime<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.lifetime_quantile(rng.random::<f64>())
    }

    pub fn sample_offspring<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        self.offspring.sample(rng)
    }
}

fn check_times(t: f64, r: f64) -> Result<()> {
    if t >= r {
        Ok(())
    } else {
        domain(format!("need t >= r, got t = {t}, r = {r}"))
    }
}

/// `E X_t(1) = e^{β(t−r)}` for a single particle born at r.
pub fn expected_count(law: &BranchingLaw, t: f64, r: f64) -> Result<f64> {
    check_times(t, r)?;
    Ok((law.beta * (t - r)).exp())
}

/// `E X_t(1)²`.
pub fn second_moment_count(law: &BranchingLaw, t: f64, r: f64) -> Result<f64> {
    check_times(t, r)?;
    let b = law.beta;
    if b < 0.0 {
        return Err(Error::Unsupported(format!("second moment needs beta >= 0, got {b}")));
    }
    let tau = t - r;
    let vpsi = law.rate * law.offspring.psi_double_prime1();
    if b == 0.0 {
        return Ok(1.0 + vpsi * tau);
    }
    let e1 = (b * tau).exp();
    // e^{2βτ} − e^{βτ} = e^{βτ}(e^{βτ} − 1), kept accurate for small βτ.
    Ok(e1 + vpsi / b * e1 * (b * tau).exp_m1())
}

/// Limit estimate of the count martingale from a recorded count trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FEstimate {
    pub value: f64,
    /// `(t_i, e^{−β(t_i−r)} X_{t_i}(1))`.
    pub trace: Vec<(f64, f64)>,
}

pub fn estimate_f(counts: &[(f64, u64)], beta: f64, r: f64) -> Result<FEstimate> {
    if counts.is_empty() {
        return domain("count trace is empty");
    }
    if !(beta > 0.0) {
        return Err(Error::Unsupported(format!("F is defined for beta > 0, got {beta}")));
    }
    if counts.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return domain("count trace times must increase");
    }
    let trace: Vec<(f64, f64)> = counts.iter().map(|&(t, x)| (t, (-beta * (t - r)).exp() * x as f64)).collect();
    Ok(FEstimate { value: trace[trace.len() - 1].1, trace })
}
