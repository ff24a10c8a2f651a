//! Evaluation: density-weighted MAE per predicted feature, expected vs.
//! actual planning cost across methods, and inference latency.

use std::io::Write;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::forecast::{Forecaster, Predictor};
use crate::grid::{rasterize_sequence, FieldSequence, GridSpec};
use crate::invasive::trajectory_cost;
use crate::par;
use crate::plan::{plan_once, plan_once_omniscient, plan_online, PlanConfig};
use crate::sim::{simulate, ScenarioSpec};

/// Running mean/std accumulator (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Stat {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Stat {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn from_values(values: &[f64]) -> Self {
        let mut s = Self::default();
        for &v in values {
            s.push(v);
        }
        s
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.mean
        }
    }

    /// Sample standard deviation (n − 1); zero for fewer than two values.
    pub fn std(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).sqrt()
        }
    }
}

/// Per-window prediction errors over non-empty target cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowMetrics {
    /// Mean |rho_hat − rho| over V.
    pub density_mae: f64,
    /// Σ_V rho·‖mu_hat − mu‖₁ / Σ_V rho.
    pub velocity_mae: f64,
    /// Σ_V rho·|sigma²_hat − sigma²| / Σ_V rho.
    pub variance_mae: f64,
}

/// Density-weighted MAE between a prediction and its target, pooled over all
/// frames' non-empty target cells.
pub fn prediction_metrics(pred: &FieldSequence, target: &FieldSequence) -> Result<WindowMetrics> {
    if pred.len() != target.len()
        || pred.spec.height != target.spec.height
        || pred.spec.width != target.spec.width
    {
        return Err(Error::ShapeMismatch {
            expected: format!("{} frames on {}x{}", target.len(), target.spec.height, target.spec.width),
            got: format!("{} frames on {}x{}", pred.len(), pred.spec.height, pred.spec.width),
        });
    }
    let mut v_count = 0usize;
    let mut density_sum = 0.0;
    let mut weight_sum = 0.0;
    let mut velocity_sum = 0.0;
    let mut variance_sum = 0.0;
    for (pf, tf) in pred.frames.iter().zip(&target.frames) {
        for (pc, tc) in pf.cells.iter().zip(&tf.cells) {
            if tc.rho <= 0.0 {
                continue;
            }
            v_count += 1;
            density_sum += (pc.rho - tc.rho).abs();
            weight_sum += tc.rho;
            velocity_sum += tc.rho * ((pc.mu_v[0] - tc.mu_v[0]).abs() + (pc.mu_v[1] - tc.mu_v[1]).abs());
            variance_sum += tc.rho * (pc.sigma2_v - tc.sigma2_v).abs();
        }
    }
    if v_count == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(WindowMetrics {
        density_mae: density_sum / v_count as f64,
        velocity_mae: velocity_sum / weight_sum,
        variance_mae: variance_sum / weight_sum,
    })
}

/// Mean ± std of the per-window metrics.
#[derive(Debug, Clone, Default)]
pub struct PredictionMetrics {
    pub density_mae: Stat,
    pub velocity_mae: Stat,
    pub variance_mae: Stat,
}

pub fn aggregate_prediction(windows: &[WindowMetrics]) -> PredictionMetrics {
    let mut out = PredictionMetrics::default();
    for w in windows {
        out.density_mae.push(w.density_mae);
        out.velocity_mae.push(w.velocity_mae);
        out.variance_mae.push(w.variance_mae);
    }
    out
}

/// Wall-clock forward-pass timing.
#[derive(Debug, Clone, Copy)]
pub struct LatencyReport {
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub trials: usize,
}

/// Times single-threaded forward passes on the model's own grid with `k`
/// input frames and `tau` forecast frames; five warm-up passes are discarded.
pub fn benchmark_inference(model: &Forecaster<f32>, k: usize, tau: usize, n_trials: usize) -> Result<LatencyReport> {
    let cfg = model.config();
    let spec = GridSpec::new([0.0, 0.0], 1.0, cfg.height, cfg.width, 1.0)?;
    // A deterministic moving blob as input.
    let mut frames = Vec::with_capacity(k);
    for t in 0..k {
        let mut f = crate::grid::CrowdField::zeros(spec.clone(), t as i64);
        for i in 0..cfg.height {
            for j in 0..cfg.width {
                let (x, y) = (j as f64 + 0.5 - t as f64, i as f64 + 0.5);
                let d2 = (x - 6.0).powi(2) + (y - cfg.height as f64 / 2.0).powi(2);
                if d2 < 9.0 {
                    let c = f.cell_mut(i, j);
                    c.rho = (1.5 - d2 / 9.0).max(0.0);
                    c.mu_v = [1.0, 0.0];
                    c.sigma2_v = 0.05;
                }
            }
        }
        frames.push(f);
    }
    let input = FieldSequence::new(spec, frames, 0.0)?;

    par::with_threads(1, || {
        for _ in 0..5 {
            model.predict_fields(&input, tau)?;
        }
        let mut times = Vec::with_capacity(n_trials);
        for _ in 0..n_trials {
            let t0 = Instant::now();
            let out = model.predict_fields(&input, tau)?;
            times.push(t0.elapsed().as_secs_f64());
            debug_assert_eq!(out.len(), tau);
        }
        let stat = Stat::from_values(&times);
        Ok(LatencyReport {
            mean: stat.mean(),
            std: stat.std(),
            max: times.iter().copied().fold(0.0, f64::max),
            trials: n_trials,
        })
    })
}

/// Planning protocol under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    Once,
    Online,
    Omniscient,
}

/// A named (protocol, predictor) pair. Omniscient carries no predictor.
pub struct PlanningMethod<'a> {
    pub name: String,
    pub protocol: Protocol,
    pub predictor: Option<&'a (dyn Predictor + Sync)>,
}

/// One planning task: a scenario plus the robot's endpoints.
#[derive(Debug, Clone)]
pub struct EvalScenario {
    pub scenario: ScenarioSpec,
    pub x_start: [f64; 2],
    pub x_goal: [f64; 2],
}

/// Expected/actual cost aggregate for one method.
#[derive(Debug, Clone)]
pub struct PlanningMetrics {
    pub method: String,
    pub expected: Stat,
    pub actual: Stat,
    /// Scenarios that ended infeasible or over budget (excluded from stats).
    pub failures: usize,
    pub runs: usize,
}

/// Runs one method on one pre-rasterized world. Returns (expected, actual).
fn run_method(
    method: &PlanningMethod,
    world: &FieldSequence,
    task: &EvalScenario,
    plan_cfg: &PlanConfig,
    k: usize,
    tau: usize,
) -> Result<(f64, f64)> {
    let depart = world.frame_time(k - 1);
    match method.protocol {
        Protocol::Once => {
            let predictor = method
                .predictor
                .ok_or_else(|| Error::InvalidConfig(format!("method {} needs a predictor", method.name)))?;
            let observed = world.slice(0, k)?;
            let plan = plan_once(plan_cfg, predictor, tau, &observed, task.x_start, task.x_goal)?;
            if plan.waypoints.len() < 2 {
                return Ok((0.0, 0.0));
            }
            let actual = trajectory_cost(world, &plan.shifted(depart).waypoints, plan_cfg.beta)?;
            Ok((plan.expected_cost, actual.total))
        }
        Protocol::Online => {
            let predictor = method
                .predictor
                .ok_or_else(|| Error::InvalidConfig(format!("method {} needs a predictor", method.name)))?;
            let out = plan_online(plan_cfg, predictor, tau, world, k, task.x_start, task.x_goal)?;
            Ok((out.expected_cost, out.actual_cost))
        }
        Protocol::Omniscient => {
            let plan = plan_once_omniscient(plan_cfg, world, depart, task.x_start, task.x_goal)?;
            if plan.waypoints.len() < 2 {
                return Ok((0.0, 0.0));
            }
            let actual = trajectory_cost(world, &plan.shifted(depart).waypoints, plan_cfg.beta)?;
            Ok((plan.expected_cost, actual.total))
        }
    }
}

/// Evaluates every method on every scenario, mirroring the expected/actual
/// cost comparison table. Worlds are simulated and rasterized once per
/// scenario; failures are counted per method and excluded from the means.
pub fn planning_table(
    methods: &[PlanningMethod],
    scenarios: &[EvalScenario],
    grid: &GridSpec,
    plan_cfg: &PlanConfig,
    k: usize,
    tau: usize,
) -> Result<Vec<PlanningMetrics>> {
    let worlds: Vec<Result<FieldSequence>> = par::map_indexed(scenarios.len(), |i| {
        let trajs = simulate(&scenarios[i].scenario)?;
        let n_frames = (scenarios[i].scenario.duration / grid.frame_dt).ceil() as usize;
        rasterize_sequence(&trajs, grid, 0.0, n_frames.max(k + 1))
    });
    let worlds = worlds.into_iter().collect::<Result<Vec<_>>>()?;

    let mut table = Vec::with_capacity(methods.len());
    for method in methods {
        let outcomes: Vec<Result<(f64, f64)>> = par::map_indexed(scenarios.len(), |i| {
            run_method(method, &worlds[i], &scenarios[i], plan_cfg, k, tau)
        });
        let mut expected = Stat::default();
        let mut actual = Stat::default();
        let mut failures = 0usize;
        for o in outcomes {
            match o {
                Ok((e, a)) => {
                    expected.push(e);
                    actual.push(a);
                }
                Err(Error::Infeasible(_)) | Err(Error::Timeout { .. }) => failures += 1,
                Err(e) => return Err(e),
            }
        }
        table.push(PlanningMetrics {
            method: method.name.clone(),
            expected,
            actual,
            failures,
            runs: scenarios.len(),
        });
    }
    Ok(table)
}

/// Prediction table CSV: one row per (method, scenario family).
pub fn write_prediction_csv<W: Write>(w: &mut W, rows: &[(String, String, PredictionMetrics)]) -> Result<()> {
    writeln!(
        w,
        "method,scenario,density_mae_mean,density_mae_std,velocity_mae_mean,velocity_mae_std,variance_mae_mean,variance_mae_std,windows"
    )?;
    for (name, scenario, m) in rows {
        writeln!(
            w,
            "{name},{scenario},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{:.6e},{}",
            m.density_mae.mean(),
            m.density_mae.std(),
            m.velocity_mae.mean(),
            m.velocity_mae.std(),
            m.variance_mae.mean(),
            m.variance_mae.std(),
            m.density_mae.n()
        )?;
    }
    Ok(())
}

/// Planning table CSV: one row per (method, scenario family).
pub fn write_planning_csv<W: Write>(w: &mut W, rows: &[(String, PlanningMetrics)]) -> Result<()> {
    writeln!(w, "method,scenario,expected_mean,expected_std,actual_mean,actual_std,failures,runs")?;
    for (scenario, r) in rows {
        writeln!(
            w,
            "{},{scenario},{:.6e},{:.6e},{:.6e},{:.6e},{},{}",
            r.method,
            r.expected.mean(),
            r.expected.std(),
            r.actual.mean(),
            r.actual.std(),
            r.failures,
            r.runs
        )?;
    }
    Ok(())
}

/// Aligned-text rendering of the planning table.
pub fn format_planning_table(rows: &[PlanningMetrics]) -> String {
    let mut out = String::from(format!(
        "{:<24} {:>22} {:>22} {:>9}\n",
        "method", "expected cost", "actual cost", "failures"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<24} {:>10.4} ± {:<9.4} {:>10.4} ± {:<9.4} {:>9}\n",
            r.method,
            r.expected.mean(),
            r.expected.std(),
            r.actual.mean(),
            r.actual.std(),
            r.failures
        ));
    }
    out
}
