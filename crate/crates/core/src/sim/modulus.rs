//! Grid-maximum proxy for the oscillation of particle paths over `[t_a, t_b]`.

use serde::Serialize;

use crate::error::{domain, Result};

use super::{grid_index, PathTree, Simulator};

#[derive(Debug, Clone, Serialize)]
pub struct ModulusReport {
    /// For each particle alive at `t_b`: `max |ξ_u − ξ_v|` over grid points `u, v ∈ [t_a, t_b]`
    /// along its ancestral line.
    pub displacements: Vec<f64>,
    /// Fraction of those particles whose displacement reaches `eps`.
    pub exceed_frequency: f64,
}

/// The supremum over `[t_a, t_b]` is replaced by the maximum over grid points,
/// which can only underestimate it. Particles from all `trees` are pooled.
pub fn path_modulus(sim: &Simulator, trees: &[PathTree], t_a: f64, t_b: f64, eps: f64) -> Result<ModulusReport> {
    let dt = sim.config().grid_dt;
    let na = grid_index(t_a, dt, "t_a")?;
    let nb = grid_index(t_b, dt, "t_b")?;
    if nb < na {
        return domain(format!("need t_a <= t_b, got {t_a} > {t_b}"));
    }
    let alive: Vec<(&PathTree, usize)> = trees
        .iter()
        .flat_map(|tree| (0..tree.segments.len()).filter(|&i| tree.segments[i].alive_at(t_b)).map(move |i| (tree, i)))
        .collect();
    if na == nb || alive.is_empty() {
        return Ok(ModulusReport { displacements: vec![0.0; alive.len()], exceed_frequency: 0.0 });
    }
    let x0 = &sim.config().x0;
    let d = x0.len();
    // paths[p][u][c]
    let mut paths = vec![Vec::with_capacity(nb - na + 1); alive.len()];
    for n in na..=nb {
        let u = if n == nb { t_b } else { n as f64 * dt };
        let tw = sim.weights_at(u)?;
        for (p, &(tree, id)) in alive.iter().enumerate() {
            let mut acc = vec![0.0; d];
            let mut part = vec![0.0; d];
            if let Some(m) = &tree.memory {
                m.partial_sum(&tw.weights, n, d, &mut part);
                acc.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
            }
            for i in tree.lineage(id) {
                tree.segments[i].partial_sum(&tw.weights, n, d, &mut part);
                acc.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
            }
            paths[p].push(acc.iter().zip(x0).map(|(s, x)| tw.flow * x + s).collect::<Vec<f64>>());
        }
    }
    let displacements: Vec<f64> = paths
        .iter()
        .map(|path| {
            let mut best: f64 = 0.0;
            for i in 0..path.len() {
                for j in i + 1..path.len() {
                    let dist = path[i].iter().zip(&path[j]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    best = best.max(dist);
                }
            }
            best
        })
        .collect();
    let exceed = displacements.iter().filter(|&&x| x >= eps).count();
    Ok(ModulusReport { exceed_frequency: exceed as f64 / displacements.len() as f64, displacements })
}
