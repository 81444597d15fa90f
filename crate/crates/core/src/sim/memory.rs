//! Fixed initial memories `ξ[0, r]` and the typical-memory diagnostic.

use serde::Serialize;

use crate::brownian::DyadicBrownian;
use crate::error::{domain, Result};
use crate::kernel::VolterraKernel;
use crate::rng::hash_words;

use super::tree::{IncrementBuilder, Segment};

/// Driving increments on the grid cells of `[0, r)`; the last cell may be partial.
#[derive(Debug, Clone, PartialEq)]
pub struct Memory {
    pub r: f64,
    pub grid_dt: f64,
    pub dim: usize,
    /// Cell-major `[cell][coord]`.
    pub increments: Vec<f64>,
}

fn memory_cells(r: f64, dt: f64) -> usize {
    let n = (r / dt).round();
    if (n * dt - r).abs() <= 1e-9 * r.max(1.0) {
        n as usize
    } else {
        (r / dt).floor() as usize + 1
    }
}

impl Memory {
    /// A Brownian memory drawn from its own keyed path.
    pub fn draw(dim: usize, r: f64, grid_dt: f64, seed: u64) -> Result<Self> {
        if !(r >= 0.0) || !(grid_dt > 0.0) || dim == 0 {
            return domain("memory needs r >= 0, grid_dt > 0 and dim >= 1");
        }
        let bm = DyadicBrownian::new(grid_dt);
        let b = IncrementBuilder { bm: &bm, grid_dt, refine: 0, dim };
        let n = memory_cells(r, grid_dt);
        let on_grid = (n as f64 * grid_dt - r).abs() <= 1e-9 * r.max(1.0);
        let (_, increments) = b.build(hash_words(&[seed, 0x4d45_4d4f]), 0.0, r, on_grid.then_some(n), &mut Vec::new());
        Ok(Self { r, grid_dt, dim, increments })
    }

    pub(crate) fn segment(&self) -> Segment {
        Segment {
            parent: None,
            ordinal: 0,
            generation: 0,
            birth: 0.0,
            death: self.r,
            stream_id: 0,
            first_cell: 0,
            increments: self.increments.clone(),
        }
    }

    /// Grid `0, Δ, 2Δ, …, r` matching the memory cells.
    fn grid(&self) -> Vec<f64> {
        let n = self.increments.len() / self.dim;
        let mut g: Vec<f64> = (0..=n).map(|j| j as f64 * self.grid_dt).collect();
        if n > 0 {
            g[n] = self.r;
        }
        g
    }
}

/// Install user-supplied increments, one `dim`-vector per grid cell of `[0, r)`.
pub fn load_memory(increments: &[Vec<f64>], r: f64, grid_dt: f64) -> Result<Memory> {
    if !(r >= 0.0) || !(grid_dt > 0.0) {
        return domain("memory needs r >= 0 and grid_dt > 0");
    }
    let n = if r == 0.0 { 0 } else { memory_cells(r, grid_dt) };
    if increments.len() != n {
        return domain(format!("memory on [0, {r}) with grid_dt {grid_dt} needs {n} cells, got {}", increments.len()));
    }
    let dim = increments.first().map_or(1, Vec::len);
    if dim == 0 || increments.iter().any(|v| v.len() != dim) {
        return domain("memory increments must all have the same positive dimension");
    }
    Ok(Memory { r, grid_dt, dim, increments: increments.concat() })
}

#[derive(Debug, Clone, Serialize)]
pub struct TypicalMemoryReport {
    /// `(t, |Σ_j k_j(t) ΔW_j| / σ(t))` over the memory cells.
    pub trace: Vec<(f64, f64)>,
    pub strictly_decreasing: bool,
}

/// Ratio of the memory's kernel-weighted contribution to σ(t) at each probe time.
pub fn typical_memory_check(memory: &Memory, kernel: &dyn VolterraKernel, probe_times: &[f64]) -> Result<TypicalMemoryReport> {
    if memory.dim != kernel.dim() {
        return domain("memory dimension differs from the kernel's");
    }
    let d = memory.dim;
    let grid = memory.grid();
    let mut trace = Vec::with_capacity(probe_times.len());
    for &t in probe_times {
        if !(t > memory.r) {
            return domain(format!("probe time {t} must exceed r = {}", memory.r));
        }
        if memory.increments.is_empty() {
            trace.push((t, 0.0));
            continue;
        }
        let w = kernel.cell_weights(t, &grid)?;
        let mut acc = vec![0.0; d];
        for (j, k) in w.iter().enumerate() {
            for c in 0..d {
                acc[c] += k * memory.increments[j * d + c];
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        trace.push((t, norm / kernel.sigma_sq(t)?.sqrt()));
    }
    let strictly_decreasing = trace.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(TypicalMemoryReport { trace, strictly_decreasing })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use approx::assert_relative_eq;

    #[test]
    fn empty_memory_is_typical() {
        let m = load_memory(&[], 0.0, 0.1).unwrap();
        let k = KernelSpec::fbm(0.7, 1.0, 1).unwrap();
        let rep = typical_memory_check(&m, &k, &[10.0, 100.0]).unwrap();
        assert!(rep.trace.iter().all(|&(_, v)| v == 0.0));
    }

    #[test]
    fn brownian_ratio_is_total_increment_over_root_t() {
        let inc = vec![vec![0.3], vec![-0.1], vec![0.4]];
        let m = load_memory(&inc, 0.25, 0.1).unwrap();
        let k = KernelSpec::fbm(0.5, 2.0, 1).unwrap();
        let rep = typical_memory_check(&m, &k, &[100.0]).unwrap();
        assert_relative_eq!(rep.trace[0].1, 0.6 / 10.0, max_relative = 1e-12);
    }

    #[test]
    fn grid_mismatch_rejected() {
        assert!(load_memory(&[vec![0.1]], 0.25, 0.1).is_err());
        assert!(load_memory(&[vec![0.1], vec![0.1, 0.2], vec![0.0]], 0.25, 0.1).is_err());
    }

    #[test]
    fn random_memories_are_typical() {
        let k = KernelSpec::fbm(0.7, 1.0, 1).unwrap();
        let mut ok = 0;
        for seed in 0..100 {
            let m = Memory::draw(1, 1.0, 0.05, seed).unwrap();
            let rep = typical_memory_check(&m, &k, &[10.0, 100.0, 1000.0]).unwrap();
            if rep.strictly_decreasing {
                ok += 1;
            }
        }
        assert!(ok >= 95, "{ok}");
    }
}
