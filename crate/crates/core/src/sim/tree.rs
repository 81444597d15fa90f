//! Arena of path segments: one per particle lifetime, plus the optional
//! memory segment on `[0, r)` that every particle inherits.

use serde::Serialize;

use crate::brownian::DyadicBrownian;
use crate::error::{domain, Result};

/// One particle's stretch of driving noise.
#[derive(Debug, Clone)]
pub struct Segment {
    pub parent: Option<usize>,
    /// 1-based position among its siblings.
    pub ordinal: u32,
    pub generation: u32,
    pub birth: f64,
    pub death: f64,
    pub stream_id: u64,
    /// Index of the first grid cell the segment touches.
    pub first_cell: usize,
    /// Cell-major `[cell][coord]` increments over `[birth, min(death, horizon))`.
    pub increments: Vec<f64>,
}

impl Segment {
    pub fn cell_count(&self, dim: usize) -> usize {
        self.increments.len() / dim
    }

    /// `Σ_j k_j ΔW_j` over the segment's cells below `n_cells`, per coordinate, into `out`.
    #[inline]
    pub fn partial_sum(&self, weights: &[f64], n_cells: usize, dim: usize, out: &mut [f64]) {
        out.fill(0.0);
        if self.first_cell >= n_cells {
            return;
        }
        let end = (self.first_cell + self.cell_count(dim)).min(n_cells);
        let ks = &weights[self.first_cell..end];
        if dim == 1 {
            let mut acc = 0.0;
            for (k, w) in ks.iter().zip(&self.increments) {
                acc += k * w;
            }
            out[0] = acc;
        } else {
            for (j, k) in ks.iter().enumerate() {
                let row = &self.increments[j * dim..(j + 1) * dim];
                for c in 0..dim {
                    out[c] += k * row[c];
                }
            }
        }
    }

    pub fn alive_at(&self, t: f64) -> bool {
        self.birth <= t && t < self.death
    }
}

/// Immutable genealogy with shared ancestral increments.
#[derive(Debug, Clone)]
pub struct PathTree {
    pub dim: usize,
    pub grid_dt: f64,
    pub memory: Option<Segment>,
    /// Parents precede children, so index order is a topological order.
    pub segments: Vec<Segment>,
}

/// Multi-index label of a particle: sibling ordinals from the root down.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParticleLabel(pub Vec<u32>);

impl ParticleLabel {
    pub fn generation(&self) -> usize {
        self.0.len() - 1
    }

    /// Longest common prefix, i.e. the greatest common ancestor.
    pub fn common_prefix(&self, other: &Self) -> usize {
        self.0.iter().zip(&other.0).take_while(|(a, b)| a == b).count()
    }
}

/// Ordinals joined by dots, e.g. `1.2.1`.
impl std::fmt::Display for ParticleLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, o) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(".")?;
            }
            write!(f, "{o}")?;
        }
        Ok(())
    }
}

impl PathTree {
    pub fn label(&self, id: usize) -> ParticleLabel {
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(i) = cur {
            out.push(self.segments[i].ordinal);
            cur = self.segments[i].parent;
        }
        out.reverse();
        ParticleLabel(out)
    }

    /// Indices from the root down to `id`.
    pub fn lineage(&self, id: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = Some(id);
        while let Some(i) = cur {
            out.push(i);
            cur = self.segments[i].parent;
        }
        out.reverse();
        out
    }

    /// Position of particle `id` at the grid time with `n_cells` cells, by
    /// walking its ancestor chain. Adds in the same order as [`Self::all_sums`].
    pub fn position_of(&self, id: usize, t: f64, n_cells: usize, weights: &[f64], flow: f64, x0: &[f64]) -> Result<Vec<f64>> {
        let seg = self.segments.get(id).ok_or_else(|| crate::Error::Domain(format!("no particle {id}")))?;
        if !seg.alive_at(t) {
            return domain(format!("particle {id} is not alive at t = {t} (lives on [{}, {}))", seg.birth, seg.death));
        }
        let d = self.dim;
        let mut acc = vec![0.0; d];
        let mut part = vec![0.0; d];
        if let Some(m) = &self.memory {
            m.partial_sum(weights, n_cells, d, &mut part);
            add(&mut acc, &part);
        }
        for i in self.lineage(id) {
            self.segments[i].partial_sum(weights, n_cells, d, &mut part);
            add(&mut acc, &part);
        }
        Ok(acc.iter().zip(x0).map(|(s, x)| flow * x + s).collect())
    }

    /// Cumulative ancestral sums for every segment born by `t`, `[segment][coord]`.
    pub fn all_sums(&self, t: f64, n_cells: usize, weights: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut base = vec![0.0; d];
        let mut part = vec![0.0; d];
        if let Some(m) = &self.memory {
            m.partial_sum(weights, n_cells, d, &mut part);
            add(&mut base, &part);
        }
        let mut sums = vec![0.0; self.segments.len() * d];
        for (i, seg) in self.segments.iter().enumerate() {
            if seg.birth > t {
                continue;
            }
            seg.partial_sum(weights, n_cells, d, &mut part);
            let (done, rest) = sums.split_at_mut(i * d);
            let parent = match seg.parent {
                Some(p) => &done[p * d..(p + 1) * d],
                None => &base[..],
            };
            for c in 0..d {
                rest[c] = parent[c] + part[c];
            }
        }
        sums
    }
}

#[inline]
fn add(acc: &mut [f64], part: &[f64]) {
    for (a, p) in acc.iter_mut().zip(part) {
        *a += p;
    }
}

/// Fills `increments` for a segment living on `[birth, end)` from a keyed path.
pub(crate) struct IncrementBuilder<'a> {
    pub bm: &'a DyadicBrownian,
    pub grid_dt: f64,
    /// `grid_dt = base / 2^refine`.
    pub refine: u32,
    pub dim: usize,
}

impl IncrementBuilder<'_> {
    /// Grid cell containing `t`.
    pub fn cell_of(&self, t: f64) -> usize {
        (t / self.grid_dt).floor() as usize
    }

    /// Increments of the path `key` on `[birth, end)`, split along grid cells.
    /// `end_cell` is the exclusive upper cell index when `end` is a grid point.
    pub fn build(&self, key: u64, birth: f64, end: f64, end_grid: Option<usize>, path: &mut Vec<f64>) -> (usize, Vec<f64>) {
        let d = self.dim;
        let first = self.cell_of(birth);
        let birth_on_grid = birth == first as f64 * self.grid_dt;
        let (last, end_on_grid) = match end_grid {
            Some(n) => (n.saturating_sub(1).max(first), true),
            None => (self.cell_of(end).max(first), false),
        };
        if end <= birth {
            return (first, Vec::new());
        }
        let per_base = 1usize << self.refine;
        let base = self.bm.base();
        let n = last - first + 1;
        let mut out = vec![0.0; n * d];
        for coord in 0..d {
            let mut c = first / per_base;
            while c * per_base <= last {
                self.bm.cell_path(key, coord as u64, c as u64, self.refine, path);
                let lo = (c * per_base).max(first);
                let hi = ((c + 1) * per_base - 1).min(last);
                for j in lo..=hi {
                    let sub = j - c * per_base;
                    let left = if j == first && !birth_on_grid {
                        self.bm.value_at(key, coord as u64, c as u64, birth - c as f64 * base)
                    } else {
                        path[sub]
                    };
                    let right = if j == last && !end_on_grid {
                        self.bm.value_at(key, coord as u64, c as u64, end - c as f64 * base)
                    } else {
                        path[sub + 1]
                    };
                    out[(j - first) * d + coord] = right - left;
                }
                c += 1;
            }
        }
        (first, out)
    }
}
