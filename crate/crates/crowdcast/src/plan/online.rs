//! Planning protocols: one fixed forecast ("once"), periodically refreshed
//! forecasts ("online"), and ground-truth fields ("omniscient").
//!
//! All planning happens on a local clock where 0 is the moment of the last
//! observation; forecast frames therefore sit at local times dt, 2·dt, …
//! and sampling holds the last frame beyond the horizon.

use crate::error::{Error, Result};
use crate::forecast::Predictor;
use crate::grid::FieldSequence;
use crate::invasive::{trajectory_cost, RobotState};
use crate::sim::derive_seed;

use super::roadmap::{build_roadmap, search};
use super::{Plan, PlanConfig};

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn trivial_plan(x_curr: [f64; 2]) -> Plan {
    Plan {
        waypoints: vec![RobotState { pos: x_curr, vel: [0.0, 0.0], time: 0.0 }],
        expected_cost: 0.0,
        arrival_time: 0.0,
    }
}

/// Plans through an already-built cost field sequence on the local clock
/// (robot at `x_curr` at time 0). A start already within `goal_radius` of
/// the goal yields an empty-motion plan of cost 0.
pub fn plan_once_with_fields(
    cfg: &PlanConfig,
    cost_fields: &FieldSequence,
    x_curr: [f64; 2],
    x_goal: [f64; 2],
) -> Result<Plan> {
    if dist(x_curr, x_goal) <= cfg.goal_radius {
        return Ok(trivial_plan(x_curr));
    }
    let mut roadmap = build_roadmap(cfg, x_curr, x_goal, cost_fields.spec.bounds())?;
    search(&mut roadmap, cost_fields, cfg)
}

/// Shifts a sequence to the local clock where `now` (absolute) is 0.
fn to_local(seq: &FieldSequence, now: f64) -> FieldSequence {
    seq.with_t0(seq.t0 - now)
}

/// Offline protocol: one forecast from the observed window, one roadmap, one
/// search; the plan is fixed thereafter. Waypoint times are local (0 = the
/// last observed frame).
pub fn plan_once<P: Predictor + ?Sized>(
    cfg: &PlanConfig,
    predictor: &P,
    tau: usize,
    observed: &FieldSequence,
    x_curr: [f64; 2],
    x_goal: [f64; 2],
) -> Result<Plan> {
    if observed.is_empty() {
        return Err(Error::InvalidConfig("observed window is empty".into()));
    }
    let now = observed.frame_time(observed.len() - 1);
    let predicted = predictor.predict(observed, tau)?;
    plan_once_with_fields(cfg, &to_local(&predicted, now), x_curr, x_goal)
}

/// Upper-bound protocol: plans through the ground-truth future itself.
/// `now` is the absolute time at which the robot departs.
pub fn plan_once_omniscient(
    cfg: &PlanConfig,
    world: &FieldSequence,
    now: f64,
    x_curr: [f64; 2],
    x_goal: [f64; 2],
) -> Result<Plan> {
    plan_once_with_fields(cfg, &to_local(world, now), x_curr, x_goal)
}

/// Result of an online replanning run.
#[derive(Debug, Clone)]
pub struct OnlineOutcome {
    /// Executed waypoints on the absolute clock.
    pub executed: Vec<RobotState>,
    /// Sum of the per-cycle expected costs of the executed pieces, each under
    /// the forecast that was current while that piece ran.
    pub expected_cost: f64,
    /// Cost of the executed trajectory under the ground-truth fields.
    pub actual_cost: f64,
    /// Absolute arrival time.
    pub arrival_time: f64,
    pub cycles: usize,
}

/// Online protocol: every `replan_interval` the trailing `k` ground-truth
/// frames are re-observed, the forecast is refreshed, and a new roadmap is
/// searched from the robot's current space-time state; the robot executes
/// the first interval of each plan at constant speed per edge.
///
/// The robot departs at the time of frame `k − 1` of `world` (the first
/// moment a full observation window exists). Each cycle's roadmap draws its
/// sample stream from (seed, cycle).
pub fn plan_online<P: Predictor + ?Sized>(
    cfg: &PlanConfig,
    predictor: &P,
    tau: usize,
    world: &FieldSequence,
    k: usize,
    x_curr: [f64; 2],
    x_goal: [f64; 2],
) -> Result<OnlineOutcome> {
    let budget = ((4.0 * cfg.t_max / cfg.replan_interval).ceil() as usize).max(4);
    plan_online_with_budget(cfg, predictor, tau, world, k, x_curr, x_goal, budget)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn plan_online_with_budget<P: Predictor + ?Sized>(
    cfg: &PlanConfig,
    predictor: &P,
    tau: usize,
    world: &FieldSequence,
    k: usize,
    x_curr: [f64; 2],
    x_goal: [f64; 2],
    budget: usize,
) -> Result<OnlineOutcome> {
    cfg.validate()?;
    if k == 0 || world.len() < k {
        return Err(Error::InvalidConfig(format!(
            "world must supply at least k = {k} frames, has {}",
            world.len()
        )));
    }
    let dt = world.spec.frame_dt;
    let depart = world.frame_time(k - 1);

    let mut pos = x_curr;
    let mut now = depart;
    let mut executed = vec![RobotState { pos, vel: [0.0, 0.0], time: now }];
    let mut expected_total = 0.0;
    let mut cycles = 0usize;

    while dist(pos, x_goal) > cfg.goal_radius {
        if cycles >= budget {
            return Err(Error::Timeout { cycles, partial: executed });
        }

        // Trailing k observed frames (hold the last window if the run outlives
        // the recorded world).
        let f_now = (((now - world.t0) / dt).floor() as usize).min(world.len() - 1);
        let first = f_now + 1 - k.min(f_now + 1);
        let observed = world.slice(first, k.min(f_now + 1))?;
        let predicted = predictor.predict(&observed, tau)?;
        let local_fields = to_local(&predicted, now);

        let cycle_cfg = PlanConfig { seed: derive_seed(cfg.seed, cycles as u64), ..cfg.clone() };
        let plan = plan_once_with_fields(&cycle_cfg, &local_fields, pos, x_goal)?;
        if plan.waypoints.len() < 2 {
            break; // already within the goal radius
        }

        // Execute the first replan_interval seconds (or to arrival).
        let horizon = cfg.replan_interval.min(plan.arrival_time);
        let mut piece = vec![plan.waypoints[0]];
        for w in &plan.waypoints[1..] {
            if w.time <= horizon + 1e-12 {
                piece.push(*w);
                if (w.time - horizon).abs() <= 1e-12 {
                    break;
                }
            } else {
                // Cut mid-edge at the horizon.
                let prev = *piece.last().unwrap();
                let frac = (horizon - prev.time) / (w.time - prev.time);
                piece.push(RobotState {
                    pos: [
                        prev.pos[0] + frac * (w.pos[0] - prev.pos[0]),
                        prev.pos[1] + frac * (w.pos[1] - prev.pos[1]),
                    ],
                    vel: prev.vel,
                    time: horizon,
                });
                break;
            }
        }

        expected_total += trajectory_cost(&local_fields, &piece, cfg.beta)?.total;
        for w in &piece[1..] {
            executed.push(RobotState { time: w.time + now, ..*w });
        }
        pos = piece.last().unwrap().pos;
        now += piece.last().unwrap().time;
        cycles += 1;
    }

    let actual_cost = if executed.len() >= 2 {
        trajectory_cost(world, &executed, cfg.beta)?.total
    } else {
        0.0
    };
    Ok(OnlineOutcome { executed, expected_cost: expected_total, actual_cost, arrival_time: now, cycles })
}
