//! Keyed Brownian paths built by dyadic midpoint refinement.
//!
//! Time is cut into base cells of width `B`. Inside base cell `c` the path
//! starts at 0, its endpoint is `√B·Z`, and each dyadic midpoint is the
//! Brownian-bridge mean plus an independent keyed normal. Every value is a
//! pure function of `(key, coordinate, c, node)`, so a simulation on grid
//! `B/2^m` sees exactly the same path as one on `B/2^{m+1}`: refining the grid
//! only reveals more of it.

use crate::rng::keyed_normal;

/// Depth of the dyadic descent used for off-grid times; below it a final
/// keyed bridge draw fills the remaining ~B·6e-8 interval.
const MAX_LEVEL: u32 = 24;
const BRIDGE_TAG: u64 = 1 << 62;

#[derive(Debug, Clone)]
pub struct DyadicBrownian {
    base: f64,
    /// `sd[l]` is the bridge standard deviation of a level-l midpoint.
    sd: Vec<f64>,
}

impl DyadicBrownian {
    pub fn new(base: f64) -> Self {
        let sd = (0..=MAX_LEVEL as u64)
            .map(|l| if l == 0 { base.sqrt() } else { (base / (1u64 << (l + 1)) as f64).sqrt() })
            .collect();
        Self { base, sd }
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    fn endpoint(&self, key: u64, coord: u64, cell: u64) -> f64 {
        self.sd[0] * keyed_normal(&[key, coord, cell, 1])
    }

    #[inline]
    fn midpoint(&self, key: u64, coord: u64, cell: u64, level: u32, index: u64, left: f64, right: f64) -> f64 {
        0.5 * (left + right) + self.sd[level as usize] * keyed_normal(&[key, coord, cell, (1u64 << level) + index])
    }

    /// Path values at the `2^m + 1` points `i·B/2^m` of base cell `cell`.
    pub fn cell_path(&self, key: u64, coord: u64, cell: u64, m: u32, out: &mut Vec<f64>) {
        let n = 1usize << m;
        out.clear();
        out.resize(n + 1, 0.0);
        out[n] = self.endpoint(key, coord, cell);
        for level in 1..=m {
            let step = n >> level;
            for i in (1..(1usize << level)).step_by(2) {
                let idx = i * step;
                out[idx] = self.midpoint(key, coord, cell, level, i as u64, out[idx - step], out[idx + step]);
            }
        }
    }

    /// Path value at local time `x ∈ [0, B]` of base cell `cell`.
    pub fn value_at(&self, key: u64, coord: u64, cell: u64, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let (mut lo, mut hi) = (0.0, self.base);
        let (mut wl, mut wh) = (0.0, self.endpoint(key, coord, cell));
        if x >= hi {
            return wh;
        }
        let mut lo_index = 0u64;
        for level in 1..=MAX_LEVEL {
            let mid = 0.5 * (lo + hi);
            let index = 2 * lo_index + 1;
            let wm = self.midpoint(key, coord, cell, level, index, wl, wh);
            if x == mid {
                return wm;
            }
            if x < mid {
                hi = mid;
                wh = wm;
                lo_index *= 2;
            } else {
                lo = mid;
                wl = wm;
                lo_index = index;
            }
        }
        let frac = (x - lo) / (hi - lo);
        let sd = ((x - lo) * (hi - x) / (hi - lo)).sqrt();
        wl + frac * (wh - wl) + sd * keyed_normal(&[key, coord, cell, BRIDGE_TAG | lo_index, x.to_bits()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn value_at_agrees_with_cell_path_on_dyadic_points() {
        let base = 0.02;
        let bm = DyadicBrownian::new(base);
        let mut path = Vec::new();
        bm.cell_path(11, 0, 5, 3, &mut path);
        let half = 0.5 * (0.0 + base);
        let quarter = 0.5 * (0.0 + half);
        let three_quarters = 0.5 * (half + base);
        assert_eq!(bm.value_at(11, 0, 5, half), path[4]);
        assert_eq!(bm.value_at(11, 0, 5, quarter), path[2]);
        assert_eq!(bm.value_at(11, 0, 5, three_quarters), path[6]);
        assert_eq!(bm.value_at(11, 0, 5, base), path[8]);
    }

    #[test]
    fn coarse_path_is_a_subsequence_of_fine_path() {
        let bm = DyadicBrownian::new(0.5);
        let (mut coarse, mut fine) = (Vec::new(), Vec::new());
        bm.cell_path(3, 1, 9, 2, &mut coarse);
        bm.cell_path(3, 1, 9, 4, &mut fine);
        for (i, &v) in coarse.iter().enumerate() {
            assert_eq!(fine[4 * i], v);
        }
    }

    #[test]
    fn increments_have_brownian_variance() {
        let bm = DyadicBrownian::new(1.0);
        let mut path = Vec::new();
        let n = 40_000;
        let mut sums = [0.0; 4];
        let mut cross = 0.0;
        for cell in 0..n {
            bm.cell_path(77, 0, cell, 2, &mut path);
            for j in 0..4 {
                sums[j] += (path[j + 1] - path[j]).powi(2);
            }
            cross += (path[1] - path[0]) * (path[2] - path[1]);
        }
        for s in sums {
            let v = s / n as f64;
            assert!((v - 0.25).abs() < 4.0 * 0.25 * (2.0 / n as f64).sqrt(), "{v}");
        }
        assert!((cross / n as f64).abs() < 4.0 * 0.25 / (n as f64).sqrt());
    }

    #[test]
    fn off_grid_values_have_bridge_variance() {
        let bm = DyadicBrownian::new(1.0);
        let x = 0.3141;
        let n = 40_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for cell in 0..n {
            let v = bm.value_at(5, 2, cell, x);
            s += v;
            s2 += v * v;
        }
        let var = s2 / n as f64 - (s / n as f64).powi(2);
        assert_relative_eq!(var, x, max_relative = 4.0 * (2.0 / n as f64).sqrt());
    }

    #[test]
    fn keys_and_coordinates_are_independent_streams() {
        let bm = DyadicBrownian::new(1.0);
        assert_ne!(bm.value_at(1, 0, 0, 1.0), bm.value_at(2, 0, 0, 1.0));
        assert_ne!(bm.value_at(1, 0, 0, 1.0), bm.value_at(1, 1, 0, 1.0));
        assert_eq!(bm.value_at(1, 0, 0, 0.0), 0.0);
    }
}
