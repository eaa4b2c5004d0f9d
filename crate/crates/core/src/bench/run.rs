use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attention::{
    lowrank_attention, project_dense, project_qkv, standard_attention, AttentionConfig, AttentionWeights,
};
use crate::bench::counter::measure;
use crate::bench::predict::{predicted_ops, predicted_peak_bytes, BenchDims, BenchMode, StageCounts};
use crate::error::{Error, Result};
use crate::linalg::alternating_lowrank_with_rng;
use crate::matrix::Matrix;
use crate::scalar::{Dtype, Real};

pub const DEFAULT_LENGTHS: [usize; 5] = [512, 1024, 2048, 4096, 8192];
pub const DEFAULT_RANK: usize = 128;
// The default rank of 128 needs a model width of at least 128.
pub const DEFAULT_DIM: usize = 128;
pub const DEFAULT_HIDDEN: usize = 64;
pub const DEFAULT_REPEATS: usize = 5;
pub const DEFAULT_BUDGET_BYTES: u64 = 4 << 30;
pub const BUDGET_ENV: &str = "ATP_MEMORY_BUDGET_BYTES";

/// Budget from `ATP_MEMORY_BUDGET_BYTES`, falling back to 4 GiB.
pub fn budget_from_env() -> Result<u64> {
    match std::env::var(BUDGET_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::invalid(format!("{BUDGET_ENV} must be a byte count, got {v:?}"))),
        Err(_) => Ok(DEFAULT_BUDGET_BYTES),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub dims: BenchDims,
    pub mode: BenchMode,
    pub seed: u64,
    pub repeats: usize,
    pub precision: Dtype,
    pub budget_bytes: u64,
}

/// Deterministic part of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    #[serde(rename = "L")]
    pub length: usize,
    pub r: usize,
    pub d: usize,
    #[serde(rename = "d_prime")]
    pub hidden: usize,
    pub mode: BenchMode,
    pub multiplies: u64,
    pub adds: u64,
    pub elementwise: u64,
    pub peak_values_held: u64,
    pub peak_score_entries: u64,
    pub stages: StageCounts,
    pub predicted: StageCounts,
    pub repeats: usize,
}

impl RunRecord {
    pub fn matches_prediction(&self) -> bool {
        self.stages.same_tally(&self.predicted)
    }
}

/// Wall-clock medians in nanoseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    #[serde(rename = "L")]
    pub length: usize,
    pub mode: BenchMode,
    pub wall_ns: u64,
    pub decomposition_ns: u64,
    pub projection_ns: u64,
    pub attention_ns: u64,
}

struct Inputs<T> {
    x: Matrix<T>,
    weights: AttentionWeights<T>,
}

fn inputs<T: Real>(dims: &BenchDims, seed: u64) -> Result<Inputs<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Matrix = Matrix::random_normal(dims.length, dims.d, &mut rng);
    let s = 1.0 / (dims.d as f64).sqrt();
    let mut w = || -> Matrix { Matrix::random_normal(dims.d, dims.hidden, &mut rng).scale(s) };
    let (wq, wk, wv) = (w(), w(), w());
    Ok(Inputs { x: x.cast(), weights: AttentionWeights::new(wq.cast(), wk.cast(), wv.cast(), 1)? })
}

/// One pass through the pipeline: stage tallies and stage wall times.
fn pipeline<T: Real>(inp: &Inputs<T>, dims: &BenchDims, mode: BenchMode, seed: u64) -> Result<(StageCounts, [u64; 3])> {
    let config = AttentionConfig::default();
    let mut counts = StageCounts::default();
    let mut ns = [0u64; 3];
    match mode {
        BenchMode::Standard => {
            let t = Instant::now();
            let (qkv, c) = measure(|| project_dense(&inp.x, &inp.weights));
            let (q, k, v) = qkv?;
            ns[1] = t.elapsed().as_nanos() as u64;
            counts.projection = c;
            let t = Instant::now();
            let (out, c) = measure(|| standard_attention(&q, &k, &v, &config));
            out?;
            ns[2] = t.elapsed().as_nanos() as u64;
            counts.attention = c;
        }
        BenchMode::Lowrank => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            let t = Instant::now();
            let (factors, c) = measure(|| alternating_lowrank_with_rng(&inp.x, dims.r, dims.inner_iters, &mut rng));
            let factors = factors?;
            ns[0] = t.elapsed().as_nanos() as u64;
            counts.decomposition = c;
            let t = Instant::now();
            let (p, c) = measure(|| project_qkv(&factors, &inp.weights));
            let p = p?;
            ns[1] = t.elapsed().as_nanos() as u64;
            counts.projection = c;
            let t = Instant::now();
            let (out, c) = measure(|| lowrank_attention(&p.q, &p.kp, &p.vp, &factors.u, &config));
            out?;
            ns[2] = t.elapsed().as_nanos() as u64;
            counts.attention = c;
        }
    }
    Ok((counts, ns))
}

fn median(mut v: Vec<u64>) -> u64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2
    }
}

/// Refuse runs whose predicted footprint exceeds the budget.
pub fn check_budget(dims: &BenchDims, mode: BenchMode, precision: Dtype, budget_bytes: u64) -> Result<()> {
    let predicted_bytes = predicted_peak_bytes(dims, mode, precision.size());
    if predicted_bytes > budget_bytes {
        return Err(Error::ResourceRefused { predicted_bytes, budget_bytes });
    }
    Ok(())
}

fn run_typed<T: Real>(cfg: &RunConfig) -> Result<(RunRecord, RunTiming)> {
    let dims = &cfg.dims;
    let inp = inputs::<T>(dims, cfg.seed)?;
    // Warm-up pass; its tallies are the run's tallies (they do not vary).
    let (counts, _) = pipeline(&inp, dims, cfg.mode, cfg.seed)?;
    let mut walls = Vec::with_capacity(cfg.repeats);
    let mut stage_walls = [Vec::new(), Vec::new(), Vec::new()];
    for _ in 0..cfg.repeats {
        let (again, ns) = pipeline(&inp, dims, cfg.mode, cfg.seed)?;
        debug_assert!(again.same_tally(&counts));
        walls.push(ns.iter().sum());
        for (k, v) in ns.into_iter().enumerate() {
            stage_walls[k].push(v);
        }
    }
    let total = counts.total();
    let [dec, proj, att] = stage_walls.map(median);
    Ok((
        RunRecord {
            length: dims.length,
            r: dims.r,
            d: dims.d,
            hidden: dims.hidden,
            mode: cfg.mode,
            multiplies: total.multiplies,
            adds: total.adds,
            elementwise: total.elementwise,
            peak_values_held: total.peak_values_held,
            peak_score_entries: total.peak_score_entries,
            stages: counts,
            predicted: predicted_ops(dims, cfg.mode),
            repeats: cfg.repeats,
        },
        RunTiming {
            length: dims.length,
            mode: cfg.mode,
            wall_ns: median(walls),
            decomposition_ns: dec,
            projection_ns: proj,
            attention_ns: att,
        },
    ))
}

/// Seed an input, run the pipeline once to warm up and `repeats` more times
/// under the timer, and report stage tallies with median wall times.
pub fn measured_run(cfg: &RunConfig) -> Result<(RunRecord, RunTiming)> {
    cfg.dims.validate()?;
    if cfg.repeats == 0 {
        return Err(Error::invalid("repeats must be positive"));
    }
    check_budget(&cfg.dims, cfg.mode, cfg.precision, cfg.budget_bytes)?;
    match cfg.precision {
        Dtype::F64 => run_typed::<f64>(cfg),
        Dtype::F32 => run_typed::<f32>(cfg),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub lengths: Vec<usize>,
    pub r: usize,
    pub d: usize,
    #[serde(rename = "d_prime")]
    pub hidden: usize,
    pub inner_iters: usize,
    pub repeats: usize,
    pub seed: u64,
    pub precision: Dtype,
    #[serde(skip)]
    pub budget_bytes: u64,
    #[serde(skip)]
    pub parallel: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            lengths: DEFAULT_LENGTHS.to_vec(),
            r: DEFAULT_RANK,
            d: DEFAULT_DIM,
            hidden: DEFAULT_HIDDEN,
            inner_iters: crate::linalg::DEFAULT_INNER_ITERS,
            repeats: DEFAULT_REPEATS,
            seed: 0,
            precision: Dtype::F64,
            budget_bytes: DEFAULT_BUDGET_BYTES,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Slopes {
    pub standard: f64,
    pub lowrank: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub runs: Vec<RunTiming>,
    /// Log-log slope of total pipeline wall time against `L`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slopes: Option<Slopes>,
    /// Same, attention stage only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention_slopes: Option<Slopes>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub config: SweepConfig,
    pub runs: Vec<RunRecord>,
    /// Log-log slope of attention-stage multiplies against `L`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub op_slopes: Option<Slopes>,
    /// Everything wall-clock lives here so the rest is reproducible.
    pub timing: TimingReport,
}

impl ScalingReport {
    pub fn run(&self, length: usize, mode: BenchMode) -> Option<(&RunRecord, &RunTiming)> {
        let i = self.runs.iter().position(|r| r.length == length && r.mode == mode)?;
        Some((&self.runs[i], &self.timing.runs[i]))
    }

    /// `L,r,d,d_prime,mode,multiplies,adds,elementwise,peak_values_held,peak_score_entries,wall_ns`
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "L,r,d,d_prime,mode,multiplies,adds,elementwise,peak_values_held,peak_score_entries,wall_ns\n",
        );
        for (r, t) in self.runs.iter().zip(&self.timing.runs) {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.length,
                r.r,
                r.d,
                r.hidden,
                r.mode.name(),
                r.multiplies,
                r.adds,
                r.elementwise,
                r.peak_values_held,
                r.peak_score_entries,
                t.wall_ns
            ));
        }
        out
    }
}

/// Least-squares slope of `ln y` against `ln x`. `None` for fewer than two
/// distinct points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return None;
    }
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

fn slopes_by(runs: &[(BenchMode, usize, f64)]) -> Option<Slopes> {
    let of = |mode| loglog_slope(&runs.iter().filter(|r| r.0 == mode).map(|r| (r.1 as f64, r.2)).collect::<Vec<_>>());
    Some(Slopes { standard: of(BenchMode::Standard)?, lowrank: of(BenchMode::Lowrank)? })
}

/// `measured_run` for every length and both modes.
pub fn scaling_sweep(cfg: &SweepConfig) -> Result<ScalingReport> {
    if cfg.lengths.is_empty() {
        return Err(Error::invalid("no sequence lengths given"));
    }
    if cfg.lengths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("lengths must be strictly ascending"));
    }
    let jobs: Vec<RunConfig> = cfg
        .lengths
        .iter()
        .flat_map(|&length| {
            BenchMode::ALL.map(|mode| RunConfig {
                dims: BenchDims { length, r: cfg.r, d: cfg.d, hidden: cfg.hidden, inner_iters: cfg.inner_iters },
                mode,
                seed: cfg.seed,
                repeats: cfg.repeats,
                precision: cfg.precision,
                budget_bytes: cfg.budget_bytes,
            })
        })
        .collect();
    // Validate and check every budget before spending time on any run.
    for job in &jobs {
        job.dims.validate()?;
        check_budget(&job.dims, job.mode, job.precision, job.budget_bytes)?;
    }
    let results: Vec<(RunRecord, RunTiming)> = if cfg.parallel {
        jobs.par_iter().map(measured_run).collect::<Result<_>>()?
    } else {
        jobs.iter().map(measured_run).collect::<Result<_>>()?
    };
    let (runs, timings): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let op_points: Vec<_> = runs.iter().map(|r| (r.mode, r.length, r.stages.attention.multiplies as f64)).collect();
    let wall_points: Vec<_> = timings.iter().map(|t| (t.mode, t.length, t.wall_ns as f64)).collect();
    let att_points: Vec<_> = timings.iter().map(|t| (t.mode, t.length, t.attention_ns as f64)).collect();
    Ok(ScalingReport {
        config: cfg.clone(),
        op_slopes: slopes_by(&op_points),
        timing: TimingReport {
            slopes: slopes_by(&wall_points),
            attention_slopes: slopes_by(&att_points),
            runs: timings,
        },
        runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(length: usize, mode: BenchMode, repeats: usize) -> RunConfig {
        RunConfig {
            dims: BenchDims { length, r: 8, d: 16, hidden: 12, inner_iters: 2 },
            mode,
            seed: 3,
            repeats,
            precision: Dtype::F64,
            budget_bytes: DEFAULT_BUDGET_BYTES,
        }
    }

    #[test]
    fn instrumented_equals_predicted() {
        for mode in BenchMode::ALL {
            for precision in [Dtype::F64, Dtype::F32] {
                let (rec, _) = measured_run(&RunConfig { precision, ..cfg(40, mode, 1) }).unwrap();
                assert!(rec.matches_prediction(), "{mode:?} {:#?} vs {:#?}", rec.stages, rec.predicted);
            }
        }
    }

    #[test]
    fn repeats_do_not_change_counts() {
        let (a, _) = measured_run(&cfg(32, BenchMode::Lowrank, 1)).unwrap();
        let (b, _) = measured_run(&cfg(32, BenchMode::Lowrank, 5)).unwrap();
        assert_eq!(a.stages, b.stages);
    }

    #[test]
    fn budget_refusal_carries_prediction() {
        let c = RunConfig { budget_bytes: 1000, ..cfg(64, BenchMode::Standard, 1) };
        match measured_run(&c) {
            Err(Error::ResourceRefused { predicted_bytes, budget_bytes: 1000 }) => assert!(predicted_bytes > 1000),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn sweep_slopes() {
        let sweep = SweepConfig { lengths: vec![16, 32, 64], r: 8, d: 16, hidden: 8, repeats: 1, ..Default::default() };
        let report = scaling_sweep(&sweep).unwrap();
        assert_eq!(report.runs.len(), 6);
        let s = report.op_slopes.unwrap();
        assert!((s.standard - 2.0).abs() < 1e-12);
        assert!((s.lowrank - 1.0).abs() < 1e-12);
        let single = scaling_sweep(&SweepConfig { lengths: vec![16], ..sweep.clone() }).unwrap();
        assert!(single.op_slopes.is_none() && single.timing.slopes.is_none());
        assert!(scaling_sweep(&SweepConfig { lengths: vec![], ..sweep.clone() }).is_err());
        assert!(scaling_sweep(&SweepConfig { lengths: vec![32, 16], ..sweep }).is_err());
    }

    #[test]
    fn slope_fit() {
        let pts: Vec<(f64, f64)> = [1.0, 2.0, 4.0, 8.0].iter().map(|&x| (x, 3.0 * x * x)).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
        assert!(loglog_slope(&pts[..1]).is_none());
    }
}
