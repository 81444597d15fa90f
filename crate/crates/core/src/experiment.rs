//! Parallel replicate execution with results independent of the thread count.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::{replicate_seed, Simulator, Snapshot};
use crate::test_function::TestFunction;

/// What one replicate contributes to the ensemble statistics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRecord {
    pub index: u64,
    pub seed: u64,
    /// Time at which the alive cap was hit; snapshots after it are missing.
    pub cap_time: Option<f64>,
    /// `X_t(1)` at each recorded snapshot time.
    pub counts: Vec<u64>,
    /// `X_t(f)` as `[snapshot][test function]`; empty when positions are not tracked.
    pub values: Vec<Vec<f64>>,
    pub f_estimate: Option<f64>,
}

impl ReplicateRecord {
    pub fn capped(&self) -> bool {
        self.cap_time.is_some()
    }
}

/// `Σ_α f(x_α)` over the particles of a snapshot.
pub fn functional(snapshot: &Snapshot, f: &TestFunction) -> f64 {
    let vals: Vec<f64> = snapshot.particles.iter().map(|p| f.eval(&p.position)).collect();
    crate::stats::pairwise_sum(&vals)
}

fn record(index: u64, seed: u64, snapshots: &[Snapshot], counts: &[(f64, u64)], fs: &[TestFunction], tracked: bool) -> ReplicateRecord {
    ReplicateRecord {
        index,
        seed,
        cap_time: None,
        counts: counts.iter().map(|&(_, c)| c).collect(),
        values: if tracked { snapshots.iter().map(|s| fs.iter().map(|f| functional(s, f)).collect()).collect() } else { Vec::new() },
        f_estimate: None,
    }
}

/// Run replicates `0..n` of `sim` on the current rayon pool. Records come back
/// in index order, and each depends only on its seed, so the output is the
/// same for any number of threads.
pub fn run_replicates(sim: &Simulator, fs: &[TestFunction], n: u64) -> Result<Vec<ReplicateRecord>> {
    let tracked = sim.config().track_positions;
    let root = sim.config().root_seed;
    (0..n)
        .into_par_iter()
        .map(|index| {
            let seed = replicate_seed(root, index);
            match sim.run_seed(seed) {
                Ok(out) => {
                    let mut rec = record(index, seed, &out.snapshots, &out.counts, fs, tracked);
                    rec.f_estimate = out.f_estimate;
                    Ok(rec)
                }
                Err(Error::Capped(run)) => {
                    let mut rec = record(index, seed, &run.snapshots, &run.counts, fs, tracked);
                    rec.cap_time = Some(run.cap_time);
                    Ok(rec)
                }
                Err(e) => Err(e),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::branching::{BranchingLaw, OffspringDistribution, OffspringKind};
    use crate::kernel::KernelSpec;
    use crate::sim::SimConfig;

    fn sim(max: usize) -> Simulator {
        let law = BranchingLaw::new(OffspringDistribution::new(OffspringKind::Deterministic { k: 2 }).unwrap(), 1.0).unwrap();
        let mut cfg = SimConfig::new(KernelSpec::fbm(0.3, 1.0, 1).unwrap(), law, 0.1, 3.0);
        cfg.snapshot_times = vec![1.0, 2.0, 3.0];
        cfg.max_particles = max;
        cfg.root_seed = 9;
        Simulator::new(&cfg).unwrap()
    }

    #[test]
    fn thread_count_does_not_matter() {
        let s = sim(100_000);
        let fs = [TestFunction::centered_box(1.0, 1), TestFunction::Constant { value: 1.0 }];
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| run_replicates(&s, &fs, 24)).unwrap();
        let b = four.install(|| run_replicates(&s, &fs, 24)).unwrap();
        assert_eq!(a, b);
        for r in &a {
            for (v, &c) in r.values.iter().zip(&r.counts) {
                assert_eq!(v[1], c as f64);
            }
        }
    }

    #[test]
    fn capped_replicates_keep_partial_data() {
        let recs = run_replicates(&sim(8), &[TestFunction::Constant { value: 1.0 }], 6).unwrap();
        assert!(recs.iter().any(ReplicateRecord::capped));
        for r in recs.iter().filter(|r| r.capped()) {
            assert!(r.counts.len() < 3);
            assert!(r.f_estimate.is_none());
        }
    }
}
