//! The five subcommands. Each writes its artifacts and reports how it ended.

use anyhow::{anyhow, Result};
use serde::Serialize;
use serde_json::json;
use volterra_branching::branching::{expected_count, second_moment_count};
use volterra_branching::experiment::{run_replicates, ReplicateRecord};
use volterra_branching::kernel::{c1, c2, ell_limit, sigma_sq, KernelSpec};
use volterra_branching::lln::{check_conditions, lln_statistics, sum_pmax, transform_tf, LimitTarget, LlnReport};
use volterra_branching::moments::{fou_second_moment, mean_functional, second_moment_functional};
use volterra_branching::quadrature::QuadratureConfig;
use volterra_branching::sim::{typical_memory_check, Memory, Simulator};
use volterra_branching::stats::MeanSe;
use volterra_branching::Error;

use crate::config::{ExperimentConfig, InvalidInput};
use crate::output::{Artifacts, Cell};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    ToleranceViolated,
    Capped,
}

/// Library errors that stem from the inputs rather than from the run.
fn input_error(e: Error) -> anyhow::Error {
    match e {
        Error::Domain(_) | Error::Unsupported(_) | Error::Divergent(_) => InvalidInput(e.to_string()).into(),
        other => other.into(),
    }
}

trait InputResult<T> {
    fn input(self) -> Result<T>;
}

impl<T> InputResult<T> for volterra_branching::Result<T> {
    fn input(self) -> Result<T> {
        self.map_err(input_error)
    }
}

fn simulator(cfg: &ExperimentConfig) -> Result<(Simulator, Option<Memory>)> {
    let mut sim = Simulator::new(&cfg.sim_config().input()?).input()?;
    let memory = cfg.memory()?;
    if let Some(m) = &memory {
        sim.set_memory(m.clone()).input()?;
    }
    Ok((sim, memory))
}

/// `Σ_j k_j(t) ΔW_j` over the cells of a fixed memory.
fn memory_shift(sim: &Simulator, memory: &Memory, t: f64) -> Result<Vec<f64>> {
    let d = memory.dim;
    let w = sim.weights_at(t).input()?.weights;
    let cells = memory.increments.len() / d;
    let mut shift = vec![0.0; d];
    for (j, k) in w.iter().take(cells).enumerate() {
        for c in 0..d {
            shift[c] += k * memory.increments[j * d + c];
        }
    }
    Ok(shift)
}

/// `U_t ξ₀` plus the memory's contribution, or `None` when every replicate
/// draws its own memory and no single centre exists.
fn center(cfg: &ExperimentConfig, sim: &Simulator, memory: Option<&Memory>, t: f64) -> Result<Option<Vec<f64>>> {
    let kernel = cfg.kernel_spec();
    let flow = kernel.flow(t);
    let base: Vec<f64> = cfg.x0().iter().map(|x| flow * x).collect();
    match memory {
        Some(m) => Ok(Some(base.iter().zip(memory_shift(sim, m, t)?).map(|(a, b)| a + b).collect())),
        None if cfg.simulation.memory_length > 0.0 => Ok(None),
        None => Ok(Some(base)),
    }
}

fn artifacts(cfg: &ExperimentConfig, command: &'static str) -> Result<Artifacts> {
    Artifacts::new(&cfg.output.dir, command, cfg.echo(), cfg.simulation.seed)
}

fn capped(records: &[ReplicateRecord]) -> usize {
    records.iter().filter(|r| r.capped()).count()
}

#[derive(Serialize)]
struct OracleCheck {
    oracle: f64,
    within: bool,
}

fn check(m: &MeanSe, oracle: Option<f64>, k: f64) -> Option<OracleCheck> {
    oracle.filter(|o| o.is_finite()).map(|o| OracleCheck { oracle: o, within: m.within(o, k) })
}

#[derive(Serialize)]
struct FunctionStats {
    mean: MeanSe,
    second_moment: MeanSe,
    mean_check: Option<OracleCheck>,
    second_moment_check: Option<OracleCheck>,
}

#[derive(Serialize)]
struct TimeStats {
    t: f64,
    mean_count: MeanSe,
    count_second_moment: MeanSe,
    /// `e^{−β(t−r)} X_t(1)`, mean 1.
    martingale: MeanSe,
    mean_count_check: Option<OracleCheck>,
    count_second_moment_check: Option<OracleCheck>,
    martingale_check: Option<OracleCheck>,
    functions: Vec<FunctionStats>,
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (sim, memory) = simulator(cfg)?;
    let law = &cfg.branching;
    let kernel = cfg.kernel_spec();
    let r = cfg.simulation.memory_length;
    let fs = &cfg.test_functions;
    let k = cfg.tolerances.mc_sigmas;
    let q = QuadratureConfig::default();
    let records = run_replicates(&sim, fs, cfg.simulation.replicates).input()?;
    let done: Vec<&ReplicateRecord> = records.iter().filter(|r| !r.capped()).collect();
    let times = cfg.snapshot_times();
    let mut per_time = Vec::new();
    for (i, &t) in times.iter().enumerate() {
        let counts: Vec<f64> = done.iter().map(|r| r.counts[i] as f64).collect();
        let squares: Vec<f64> = counts.iter().map(|c| c * c).collect();
        let growth = (law.beta() * (t - r)).exp();
        let mart: Vec<f64> = counts.iter().map(|c| c / growth).collect();
        let (mean_count, count_second_moment, martingale) = (MeanSe::from_samples(&counts), MeanSe::from_samples(&squares), MeanSe::from_samples(&mart));
        let centre = if cfg.simulation.track_positions { center(cfg, &sim, memory.as_ref(), t)? } else { None };
        let mut functions = Vec::new();
        if cfg.simulation.track_positions {
            for (j, f) in fs.iter().enumerate() {
                let vals: Vec<f64> = done.iter().map(|r| r.values[i][j]).collect();
                let sq: Vec<f64> = vals.iter().map(|v| v * v).collect();
                let (mean, second_moment) = (MeanSe::from_samples(&vals), MeanSe::from_samples(&sq));
                let (m1, m2) = match &centre {
                    Some(c) => (mean_functional(&kernel, law, f, t, r, c, &q).ok(), second_moment_functional(&kernel, law, f, f, t, r, c, &q).ok()),
                    None => (None, None),
                };
                functions.push(FunctionStats { mean_check: check(&mean, m1, k), second_moment_check: check(&second_moment, m2, k), mean, second_moment });
            }
        }
        per_time.push(TimeStats {
            t,
            mean_count_check: check(&mean_count, expected_count(law, t, r).ok(), k),
            count_second_moment_check: check(&count_second_moment, second_moment_count(law, t, r).ok(), k),
            martingale_check: check(&martingale, Some(1.0), k),
            mean_count,
            count_second_moment,
            martingale,
            functions,
        });
    }
    let n_capped = capped(&records);
    let mut out = artifacts(cfg, "simulate")?;
    let mut rows = Vec::new();
    for rec in &records {
        for (i, &t) in times.iter().enumerate().take(rec.counts.len()) {
            let mut row: Vec<Cell> = vec![rec.index.into(), rec.seed.into(), t.into(), rec.counts[i].into()];
            if let Some(vals) = rec.values.get(i) {
                row.extend(vals.iter().map(|&v| Cell::from(v)));
            }
            rows.push(row);
        }
    }
    let mut cols = vec!["replicate".to_string(), "seed".into(), "t".into(), "count".into()];
    if cfg.simulation.track_positions {
        cols.extend((0..fs.len()).map(|j| format!("f{j}")));
    }
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    out.csv("simulate_replicates.csv", &col_refs, rows)?;
    if cfg.simulation.track_positions {
        match sim.run_replicate(0) {
            Ok(first) => {
                if let Some(snap) = first.snapshots.last() {
                    let rows = snap
                        .particles
                        .iter()
                        .map(|p| {
                            let mut row: Vec<Cell> = vec![p.id.into(), (p.generation as u64).into(), first.tree.label(p.id).to_string().as_str().into()];
                            row.extend(p.position.iter().map(|&x| Cell::from(x)));
                            row
                        })
                        .collect();
                    let mut cols = vec!["id".to_string(), "generation".into(), "label".into()];
                    cols.extend((1..=kernel.dim).map(|c| format!("x{c}")));
                    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
                    out.csv("simulate_particles.csv", &col_refs, rows)?;
                }
            }
            Err(Error::Capped(_)) => {}
            Err(e) => return Err(input_error(e)),
        }
    }
    out.json(
        "simulate_summary.json",
        &json!({
            "replicates": records.len(),
            "capped": n_capped,
            "partial": n_capped > 0,
            "mean_count": per_time.last().map(|p| p.mean_count),
            "times": per_time,
        }),
    )?;
    Ok(if n_capped > 0 { Outcome::Capped } else { Outcome::Pass })
}

#[derive(Serialize)]
struct FunctionMoments {
    index: usize,
    mean: f64,
    second_moment: f64,
    variance: f64,
}

#[derive(Serialize)]
struct MomentsAt {
    t: f64,
    sigma_sq: f64,
    expected_count: f64,
    second_moment_count: Option<f64>,
    center: Vec<f64>,
    functions: Vec<FunctionMoments>,
}

pub fn moments(cfg: &ExperimentConfig) -> Result<(Outcome, serde_json::Value)> {
    let (sim, memory) = simulator(cfg)?;
    let law = &cfg.branching;
    let kernel = cfg.kernel_spec();
    let r = cfg.simulation.memory_length;
    let q = QuadratureConfig::default();
    let mut rows = Vec::new();
    for t in cfg.snapshot_times() {
        let c = center(cfg, &sim, memory.as_ref(), t)?
            .ok_or_else(|| InvalidInput("moments with memory_length > 0 need simulation.memory_file".into()))?;
        let mut functions = Vec::new();
        for (index, f) in cfg.test_functions.iter().enumerate() {
            let m1 = mean_functional(&kernel, law, f, t, r, &c, &q).input()?;
            let m2 = second_moment_functional(&kernel, law, f, f, t, r, &c, &q).input()?;
            functions.push(FunctionMoments { index, mean: m1, second_moment: m2, variance: m2 - m1 * m1 });
        }
        rows.push(MomentsAt {
            t,
            sigma_sq: sigma_sq(&kernel, t, &q).input()?,
            expected_count: expected_count(law, t, r).input()?,
            second_moment_count: second_moment_count(law, t, r).ok(),
            center: c,
            functions,
        });
    }
    let mut out = artifacts(cfg, "moments")?;
    let doc = out.json("moments.json", &json!({ "beta": law.beta(), "times": rows }))?;
    Ok((Outcome::Pass, doc))
}

fn default_table_times(horizon: f64) -> Vec<f64> {
    (1..=20).map(|i| horizon * i as f64 / 20.0).collect()
}

pub fn kernel(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec: KernelSpec = cfg.kernel_spec();
    spec.validate().input()?;
    let q = QuadratureConfig::default();
    let times = cfg.kernel.table_times.clone().unwrap_or_else(|| default_table_times(cfg.simulation.horizon));
    let spectral = spec.mu < 0.0;
    let mut rows = Vec::new();
    for &t in &times {
        let s2 = sigma_sq(&spec, t, &q).input()?;
        let mut row: Vec<Cell> = vec![t.into(), s2.into(), s2.sqrt().into(), spec.flow(t).into()];
        if spectral {
            row.push(fou_second_moment(&spec, t, &q).input()?.into());
        }
        rows.push(row);
    }
    let mut cols = vec!["t", "sigma_sq", "sigma", "flow"];
    if spectral {
        cols.push("sigma_sq_spectral");
    }
    let mut out = artifacts(cfg, "kernel")?;
    out.csv("kernel.csv", &cols, rows)?;
    let ell = if spec.mu > 0.0 { None } else { Some(ell_limit(&spec, &q).input()?) };
    out.json(
        "kernel.json",
        &json!({
            "c1": c1(spec.hurst).input()?,
            "c2": c2(spec.hurst).ok(),
            "ell": ell.map(|e| if e.is_finite() { json!(e) } else { json!("inf") }),
        }),
    )?;
    Ok(Outcome::Pass)
}

pub fn conditions(cfg: &ExperimentConfig) -> Result<Outcome> {
    let spec = cfg.kernel_spec();
    let settings = cfg.condition_settings();
    let q = QuadratureConfig::default();
    let rep = check_conditions(&spec, &cfg.branching, &settings, &q).input()?;
    let pmax = if cfg.lln.pmax_intervals > 0 {
        Some(sum_pmax(&spec, &settings, cfg.lln.eps, cfg.lln.pmax_intervals, cfg.lln.pmax_paths, cfg.simulation.grid_dt, cfg.simulation.seed).input()?)
    } else {
        None
    };
    let memory = match cfg.memory()? {
        Some(m) => Some(typical_memory_check(&m, &spec, &settings.probes.iter().copied().filter(|&t| t > m.r).collect::<Vec<_>>()).input()?),
        None => None,
    };
    let ok = [&rep.c1_log, &rep.c3_damping_log, &rep.c3, &rep.c3_prime].iter().all(|t| t.strictly_decreasing);
    let rows = (0..rep.sigma.t.len())
        .map(|i| {
            vec![
                rep.sigma.t[i].into(),
                rep.sigma.value[i].into(),
                rep.c1_log.value[i].into(),
                rep.c2.value[i].into(),
                rep.c3_damping_log.value[i].into(),
                rep.c3.value[i].into(),
                rep.c3_prime.value[i].into(),
            ]
        })
        .collect();
    let mut out = artifacts(cfg, "conditions")?;
    out.csv("conditions.csv", &["t", "sigma", "c1_log", "c2", "c3_damping_log", "c3", "c3_prime"], rows)?;
    out.json("conditions.json", &json!({ "decreasing": ok, "report": rep, "sum_pmax": pmax, "typical_memory": memory }))?;
    Ok(if ok { Outcome::Pass } else { Outcome::ToleranceViolated })
}

#[derive(Serialize)]
struct LlnVerdict {
    index: usize,
    target: f64,
    final_ratio: Option<MeanSe>,
    relative_error: Option<f64>,
    pass: bool,
    report: LlnReport,
}

pub fn lln(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (sim, _) = simulator(cfg)?;
    let spec = cfg.kernel_spec();
    let law = &cfg.branching;
    let q = QuadratureConfig::default();
    if cfg.test_functions.is_empty() {
        return Err(InvalidInput("lln needs at least one entry in test_functions".into()).into());
    }
    if !cfg.simulation.track_positions {
        return Err(InvalidInput("lln needs simulation.track_positions = true".into()).into());
    }
    let target = LimitTarget::for_kernel(&spec, &q).input()?;
    let tfs = cfg
        .test_functions
        .iter()
        .enumerate()
        .map(|(i, f)| transform_tf(f, &target).map_err(|e| anyhow!(InvalidInput(format!("test_functions[{i}]: {e}")))))
        .collect::<Result<Vec<f64>>>()?;
    let records = run_replicates(&sim, &cfg.test_functions, cfg.simulation.replicates).input()?;
    let times = cfg.snapshot_times();
    let r = cfg.simulation.memory_length;
    let mut verdicts = Vec::new();
    for (i, &tf) in tfs.iter().enumerate() {
        let report = lln_statistics(&records, &times, &spec, law, r, i, tf).input()?;
        let final_ratio = report.final_ratio();
        let relative_error = final_ratio.map(|m| m.relative_error(tf));
        let pass = relative_error.is_some_and(|e| e <= cfg.tolerances.ratio_relative);
        verdicts.push(LlnVerdict { index: i, target: tf, final_ratio, relative_error, pass, report });
    }
    let conditions = check_conditions(&spec, law, &cfg.condition_settings(), &q).input()?;
    let n_capped = capped(&records);
    let mut out = artifacts(cfg, "lln")?;
    let mut rows = Vec::new();
    let mut rep_rows = Vec::new();
    for v in &verdicts {
        for row in &v.report.rows {
            let (rm, rs, rn) = row.ratio.map_or((f64::NAN, f64::NAN, 0), |m| (m.mean, m.se, m.n));
            rows.push(vec![
                v.index.into(),
                row.t.into(),
                row.sigma.into(),
                row.scaled.mean.into(),
                row.scaled.se.into(),
                row.scaled_count.mean.into(),
                row.scaled_count.se.into(),
                rm.into(),
                rs.into(),
                rn.into(),
                v.target.into(),
            ]);
        }
        for (ti, &t) in v.report.times.iter().enumerate() {
            for (j, &s) in v.report.scaled_values[ti].iter().enumerate() {
                let ratio = v.report.ratio_values[ti][j].unwrap_or(f64::NAN);
                rep_rows.push(vec![v.index.into(), j.into(), t.into(), s.into(), ratio.into()]);
            }
        }
    }
    out.csv(
        "lln.csv",
        &["f", "t", "sigma", "scaled_mean", "scaled_se", "scaled_count_mean", "scaled_count_se", "ratio_mean", "ratio_se", "ratio_n", "target"],
        rows,
    )?;
    out.csv("lln_replicates.csv", &["f", "replicate", "t", "scaled", "ratio"], rep_rows)?;
    let pass = verdicts.iter().all(|v| v.pass);
    out.json(
        "lln.json",
        &json!({
            "pass": pass,
            "tolerance": cfg.tolerances.ratio_relative,
            "capped": n_capped,
            "partial": n_capped > 0,
            "limit": target,
            "functions": verdicts,
            "conditions": conditions,
        }),
    )?;
    Ok(if n_capped > 0 {
        Outcome::Capped
    } else if pass {
        Outcome::Pass
    } else {
        Outcome::ToleranceViolated
    })
}
