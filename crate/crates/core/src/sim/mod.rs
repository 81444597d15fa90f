//! Branching particle simulation with shared-ancestry Volterra motion.
//!
//! Every particle draws its lifetime and offspring count from a stream keyed
//! by its genealogical stream id, and its driving noise from a separate keyed
//! path, so the count process never depends on the kernel and every replicate
//! is a pure function of its seed.

mod memory;
mod modulus;
mod tree;

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::sync::Arc;

use serde::Serialize;

use crate::branching::{estimate_f, BranchingLaw};
use crate::brownian::DyadicBrownian;
use crate::error::{domain, Error, Result};
use crate::kernel::{KernelSpec, VolterraKernel};
use crate::rng::{hash_words, StreamRng};

pub use memory::{load_memory, typical_memory_check, Memory, TypicalMemoryReport};
pub use modulus::{path_modulus, ModulusReport};
pub use tree::{ParticleLabel, PathTree, Segment};

use tree::IncrementBuilder;

const ROOT_TAG: u64 = 0x524f_4f54;
const BRANCH_TAG: u64 = 0x4252_4e43;
const SPATIAL_TAG: u64 = 0x5350_4154;
const MEMORY_TAG: u64 = 0x4d45_4d4f;
const REPLICATE_TAG: u64 = 0x5245_504c;

pub const DEFAULT_MAX_PARTICLES: usize = 2_000_000;

/// Seed of replicate `index` in an experiment seeded with `seed`.
pub fn replicate_seed(seed: u64, index: u64) -> u64 {
    hash_words(&[seed, REPLICATE_TAG, index])
}

#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub kernel: KernelSpec,
    pub law: BranchingLaw,
    pub x0: Vec<f64>,
    pub memory_length: f64,
    pub grid_dt: f64,
    /// Width of the cells on which the keyed Brownian paths are anchored.
    /// Runs whose grids divide the same coupling width share their noise.
    pub coupling_dt: Option<f64>,
    pub horizon: f64,
    pub snapshot_times: Vec<f64>,
    pub max_particles: usize,
    pub root_seed: u64,
    /// Without positions only the count process is simulated.
    pub track_positions: bool,
    pub log_events: bool,
}

impl SimConfig {
    pub fn new(kernel: KernelSpec, law: BranchingLaw, grid_dt: f64, horizon: f64) -> Self {
        Self {
            x0: vec![0.0; kernel.dim],
            kernel,
            law,
            memory_length: 0.0,
            grid_dt,
            coupling_dt: None,
            horizon,
            snapshot_times: vec![horizon],
            max_particles: DEFAULT_MAX_PARTICLES,
            root_seed: 0,
            track_positions: true,
            log_events: false,
        }
    }
}

/// `X_t`: the alive particles and their positions at one time.
#[derive(Debug, Clone, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub count: usize,
    pub particles: Vec<SnapshotParticle>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SnapshotParticle {
    /// Index in the replicate's [`PathTree`].
    pub id: usize,
    pub generation: u32,
    pub position: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventRecord {
    Birth { id: usize, parent: Option<usize>, t: f64, generation: u32 },
    Death { id: usize, t: f64, offspring: u32 },
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub root_seed: u64,
    pub snapshots: Vec<Snapshot>,
    /// `(t, X_t(1))` at every snapshot time.
    pub counts: Vec<(f64, u64)>,
    pub events: Vec<EventRecord>,
    /// Last value of the count martingale, when β > 0.
    pub f_estimate: Option<f64>,
    pub tree: PathTree,
}

/// Everything computed before a run hit `max_particles`.
#[derive(Debug)]
pub struct CappedRun {
    pub max_particles: usize,
    pub cap_time: f64,
    pub root_seed: u64,
    /// Snapshots and counts at the requested times before `cap_time`.
    pub snapshots: Vec<Snapshot>,
    pub counts: Vec<(f64, u64)>,
}

/// Kernel weights for one snapshot time, shared by every particle and replicate.
#[derive(Debug, Clone)]
pub struct TimeWeights {
    pub t: f64,
    pub n_cells: usize,
    pub flow: f64,
    pub weights: Vec<f64>,
}

/// Validated settings plus precomputed per-time weights; runs replicates.
pub struct Simulator {
    kernel: Arc<dyn VolterraKernel>,
    cfg: SimConfig,
    refine: u32,
    brownian: DyadicBrownian,
    horizon_cells: usize,
    plan: Vec<Arc<TimeWeights>>,
    memory: Option<Memory>,
}

pub(crate) fn grid_index(t: f64, dt: f64, what: &str) -> Result<usize> {
    let n = (t / dt).round();
    if (n * dt - t).abs() > 1e-9 * t.abs().max(1.0) || n < 0.0 {
        return domain(format!("{what} = {t} is not a multiple of grid_dt = {dt}"));
    }
    Ok(n as usize)
}

impl Simulator {
    pub fn new(cfg: &SimConfig) -> Result<Self> {
        Self::with_kernel(Arc::new(cfg.kernel), cfg)
    }

    /// Drive the particles with an arbitrary kernel family; `cfg.kernel` is ignored.
    pub fn with_kernel(kernel: Arc<dyn VolterraKernel>, cfg: &SimConfig) -> Result<Self> {
        let dt = cfg.grid_dt;
        if !(dt > 0.0 && dt.is_finite()) {
            return domain(format!("grid_dt must be positive, got {dt}"));
        }
        let coupling = cfg.coupling_dt.unwrap_or(dt);
        let ratio = coupling / dt;
        let refine = ratio.log2().round();
        if !(0.0..=20.0).contains(&refine) || (2f64.powf(refine) - ratio).abs() > 1e-9 * ratio {
            return domain(format!("coupling_dt = {coupling} must be grid_dt times a power of two"));
        }
        if kernel.dim() != cfg.x0.len() {
            return domain(format!("x0 has {} coordinates, kernel has dim {}", cfg.x0.len(), kernel.dim()));
        }
        let r = cfg.memory_length;
        if !(r >= 0.0 && r.is_finite()) {
            return domain(format!("memory_length must be nonnegative, got {r}"));
        }
        if !(cfg.horizon >= r) {
            return domain(format!("horizon {} precedes memory_length {r}", cfg.horizon));
        }
        let horizon_cells = grid_index(cfg.horizon, dt, "horizon")?;
        if cfg.max_particles == 0 {
            return domain("max_particles must be at least 1");
        }
        if cfg.snapshot_times.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("snapshot_times must increase strictly");
        }
        for &t in &cfg.snapshot_times {
            if !(t >= r && t <= cfg.horizon) {
                return domain(format!("snapshot time {t} lies outside [{r}, {}]", cfg.horizon));
            }
            grid_index(t, dt, "snapshot time")?;
        }
        let mut sim = Self {
            kernel,
            cfg: cfg.clone(),
            refine: refine as u32,
            brownian: DyadicBrownian::new(coupling),
            horizon_cells,
            plan: Vec::new(),
            memory: None,
        };
        for &t in &cfg.snapshot_times {
            let tw = if cfg.track_positions {
                sim.weights_at(t)?
            } else {
                TimeWeights { t, n_cells: grid_index(t, dt, "snapshot time")?, flow: sim.kernel.flow(t), weights: Vec::new() }
            };
            sim.plan.push(Arc::new(tw));
        }
        Ok(sim)
    }

    /// Kernel weights and flow at an arbitrary grid time.
    pub fn weights_at(&self, t: f64) -> Result<TimeWeights> {
        let dt = self.cfg.grid_dt;
        let n = grid_index(t, dt, "time")?;
        let weights = if n > 0 {
            let mut grid: Vec<f64> = (0..=n).map(|j| j as f64 * dt).collect();
            grid[n] = t;
            self.kernel.cell_weights(t, &grid)?
        } else {
            Vec::new()
        };
        Ok(TimeWeights { t, n_cells: n, flow: self.kernel.flow(t), weights })
    }

    /// Use a fixed memory for `[0, r)` instead of drawing one per replicate.
    pub fn set_memory(&mut self, memory: Memory) -> Result<()> {
        if memory.r != self.cfg.memory_length || memory.grid_dt != self.cfg.grid_dt || memory.dim != self.kernel.dim() {
            return domain("memory does not match the configured grid, memory_length or dimension");
        }
        self.memory = Some(memory);
        Ok(())
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn kernel(&self) -> &dyn VolterraKernel {
        self.kernel.as_ref()
    }

    pub fn plan(&self) -> &[Arc<TimeWeights>] {
        &self.plan
    }

    pub(crate) fn builder(&self) -> IncrementBuilder<'_> {
        IncrementBuilder { bm: &self.brownian, grid_dt: self.cfg.grid_dt, refine: self.refine, dim: self.kernel.dim() }
    }

    /// Replicate `index` of the experiment seeded by `cfg.root_seed`.
    pub fn run_replicate(&self, index: u64) -> Result<SimOutput> {
        self.run_seed(replicate_seed(self.cfg.root_seed, index))
    }

    /// One full run with the given root seed.
    pub fn run_seed(&self, seed: u64) -> Result<SimOutput> {
        let cfg = &self.cfg;
        let law = &cfg.law;
        let horizon = cfg.horizon;
        let r = cfg.memory_length;
        let mut segments: Vec<Segment> = Vec::new();
        let mut events = Vec::new();
        let mut heap: BinaryHeap<Reverse<(OrdF64, usize)>> = BinaryHeap::new();

        let root_stream = hash_words(&[seed, ROOT_TAG]);
        let root_death = r + law.sample_lifetime(&mut branch_rng(seed, root_stream));
        segments.push(Segment {
            parent: None,
            ordinal: 1,
            generation: 0,
            birth: r,
            death: root_death,
            stream_id: root_stream,
            first_cell: 0,
            increments: Vec::new(),
        });
        if cfg.log_events {
            events.push(EventRecord::Birth { id: 0, parent: None, t: r, generation: 0 });
        }
        heap.push(Reverse((OrdF64(root_death), 0)));
        let mut alive = 1usize;
        let mut cap_time = None;

        while let Some(Reverse((OrdF64(t), id))) = heap.pop() {
            if t >= horizon {
                break;
            }
            let parent_stream = segments[id].stream_id;
            let mut rng = branch_rng(seed, parent_stream);
            let _lifetime = rng.uniform();
            let k = law.sample_offspring(&mut rng);
            if cfg.log_events {
                events.push(EventRecord::Death { id, t, offspring: k });
            }
            let generation = segments[id].generation + 1;
            for ordinal in 1..=k {
                let stream_id = hash_words(&[seed, parent_stream, ordinal as u64]);
                let death = t + law.sample_lifetime(&mut branch_rng(seed, stream_id));
                let child = segments.len();
                segments.push(Segment {
                    parent: Some(id),
                    ordinal,
                    generation,
                    birth: t,
                    death,
                    stream_id,
                    first_cell: 0,
                    increments: Vec::new(),
                });
                if cfg.log_events {
                    events.push(EventRecord::Birth { id: child, parent: Some(id), t, generation });
                }
                heap.push(Reverse((OrdF64(death), child)));
            }
            alive = alive + k as usize - 1;
            if alive > cfg.max_particles {
                cap_time = Some(t);
                break;
            }
        }

        let limit = cap_time.unwrap_or(horizon);
        let mut tree = PathTree { dim: self.kernel.dim(), grid_dt: cfg.grid_dt, memory: None, segments };
        if cfg.track_positions {
            self.fill_increments(&mut tree, seed, limit, cap_time.is_none());
        }

        let mut snapshots = Vec::new();
        let mut counts = Vec::new();
        for tw in &self.plan {
            if cap_time.is_some_and(|c| tw.t >= c) {
                break;
            }
            let count = tree.segments.iter().filter(|s| s.alive_at(tw.t)).count();
            counts.push((tw.t, count as u64));
            if cfg.track_positions {
                snapshots.push(self.snapshot(&tree, tw));
            }
        }

        if let Some(cap_time) = cap_time {
            return Err(Error::Capped(Box::new(CappedRun {
                max_particles: cfg.max_particles,
                cap_time,
                root_seed: seed,
                snapshots,
                counts,
            })));
        }
        let f_estimate = if law.beta() > 0.0 && !counts.is_empty() {
            Some(estimate_f(&counts, law.beta(), r)?.value)
        } else {
            None
        };
        Ok(SimOutput { root_seed: seed, snapshots, counts, events, f_estimate, tree })
    }

    fn fill_increments(&self, tree: &mut PathTree, seed: u64, limit: f64, limit_on_grid: bool) {
        let b = self.builder();
        let mut path = Vec::new();
        let r = self.cfg.memory_length;
        if r > 0.0 {
            tree.memory = Some(match &self.memory {
                Some(m) => m.segment(),
                None => {
                    let key = hash_words(&[seed, MEMORY_TAG]);
                    let end_grid = grid_index(r, self.cfg.grid_dt, "").ok();
                    let (first, inc) = b.build(key, 0.0, r, end_grid, &mut path);
                    Segment {
                        parent: None,
                        ordinal: 0,
                        generation: 0,
                        birth: 0.0,
                        death: r,
                        stream_id: 0,
                        first_cell: first,
                        increments: inc,
                    }
                }
            });
        }
        for seg in tree.segments.iter_mut() {
            if seg.birth >= limit {
                continue;
            }
            let (end, end_grid) = if seg.death >= limit {
                (limit, if limit_on_grid { Some(self.horizon_cells) } else { None })
            } else {
                (seg.death, None)
            };
            let key = hash_words(&[seed, SPATIAL_TAG, seg.stream_id]);
            let (first, inc) = b.build(key, seg.birth, end, end_grid, &mut path);
            seg.first_cell = first;
            seg.increments = inc;
        }
    }

    fn snapshot(&self, tree: &PathTree, tw: &TimeWeights) -> Snapshot {
        let d = tree.dim;
        let sums = tree.all_sums(tw.t, tw.n_cells, &tw.weights);
        let x0 = &self.cfg.x0;
        let particles: Vec<SnapshotParticle> = tree
            .segments
            .iter()
            .enumerate()
            .filter(|(_, s)| s.alive_at(tw.t))
            .map(|(id, s)| SnapshotParticle {
                id,
                generation: s.generation,
                position: (0..d).map(|c| tw.flow * x0[c] + sums[id * d + c]).collect(),
            })
            .collect();
        Snapshot { t: tw.t, count: particles.len(), particles }
    }

    /// Position of one particle at a planned snapshot time, by ancestor-chain walk.
    pub fn position_of(&self, tree: &PathTree, id: usize, time_index: usize) -> Result<Vec<f64>> {
        let tw = self.plan.get(time_index).ok_or_else(|| Error::Domain(format!("no snapshot time {time_index}")))?;
        tree.position_of(id, tw.t, tw.n_cells, &tw.weights, tw.flow, &self.cfg.x0)
    }
}

/// Convenience wrapper: one run of `cfg` with seed `cfg.root_seed`.
pub fn simulate(cfg: &SimConfig) -> Result<SimOutput> {
    Simulator::new(cfg)?.run_seed(cfg.root_seed)
}

fn branch_rng(seed: u64, stream: u64) -> StreamRng {
    StreamRng::new(hash_words(&[seed, BRANCH_TAG, stream]))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF64(f64);

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}
