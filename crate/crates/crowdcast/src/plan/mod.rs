//! Spatiotemporal roadmap planning: sample nodes in space and time, connect
//! forward-time neighbors under the speed bound, search with Dijkstra using
//! lazily evaluated social costs, and run the offline / online / omniscient
//! planning protocols.

mod online;
mod roadmap;

pub use online::{plan_once, plan_once_omniscient, plan_once_with_fields, plan_online, OnlineOutcome};
pub use roadmap::{build_roadmap, evaluate_all_costs, search, Roadmap, RoadmapEdge, RoadmapNode};

use std::io::Write;

use crate::error::{Error, Result};
use crate::invasive::RobotState;

/// Planner configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanConfig {
    /// Random space-time samples per roadmap.
    pub n_samples: usize,
    /// Robot speed bound, m/s.
    pub v_max: f64,
    /// Arrival tolerance around the goal, meters.
    pub goal_radius: f64,
    /// Distance regularization weight.
    pub beta: f64,
    /// Planning horizon, seconds.
    pub t_max: f64,
    /// Replanning period for the online protocol, seconds.
    pub replan_interval: f64,
    pub seed: u64,
}

impl PlanConfig {
    pub fn new(t_max: f64) -> Self {
        Self {
            n_samples: 2000,
            v_max: 1.5,
            goal_radius: 0.5,
            beta: 1e-4,
            t_max,
            replan_interval: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_samples < 10 {
            return Err(Error::InvalidConfig(format!("n_samples must be at least 10, got {}", self.n_samples)));
        }
        if !(self.v_max > 0.0) {
            return Err(Error::InvalidConfig(format!("v_max must be positive, got {}", self.v_max)));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::InvalidConfig(format!("t_max must be positive, got {}", self.t_max)));
        }
        if !(self.replan_interval > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "replan_interval must be positive, got {}",
                self.replan_interval
            )));
        }
        if self.goal_radius < 0.0 || self.beta < 0.0 {
            return Err(Error::InvalidConfig("goal_radius and beta must be non-negative".into()));
        }
        Ok(())
    }
}

/// A planned trajectory: timed waypoints, the cost the planner expects under
/// its cost fields, and the arrival time.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub waypoints: Vec<RobotState>,
    pub expected_cost: f64,
    pub arrival_time: f64,
}

impl Plan {
    /// Waypoints shifted by a constant time offset (local → absolute clock).
    pub fn shifted(&self, dt: f64) -> Plan {
        Plan {
            waypoints: self.waypoints.iter().map(|w| RobotState { time: w.time + dt, ..*w }).collect(),
            expected_cost: self.expected_cost,
            arrival_time: self.arrival_time + dt,
        }
    }
}

/// Writes plan output as JSON lines: one `{"t":..,"x":..,"y":..}` record per
/// waypoint, then a summary record with expected cost, actual cost (null if
/// not evaluated), and arrival time.
pub fn write_plan_jsonl<W: Write>(
    w: &mut W,
    waypoints: &[RobotState],
    expected_cost: f64,
    actual_cost: Option<f64>,
    arrival_time: f64,
) -> Result<()> {
    for p in waypoints {
        writeln!(w, "{{\"t\":{},\"x\":{},\"y\":{}}}", p.time, p.pos[0], p.pos[1])?;
    }
    match actual_cost {
        Some(a) => writeln!(
            w,
            "{{\"expected_cost\":{expected_cost},\"actual_cost\":{a},\"arrival_T\":{arrival_time}}}"
        )?,
        None => writeln!(
            w,
            "{{\"expected_cost\":{expected_cost},\"actual_cost\":null,\"arrival_T\":{arrival_time}}}"
        )?,
    }
    Ok(())
}

/// Reads the waypoint records back from plan JSON lines (summary records are
/// skipped). The accepted syntax is exactly what [`write_plan_jsonl`] emits.
pub fn read_plan_jsonl(bytes: &[u8]) -> Result<Vec<RobotState>> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| Error::Parse { line: 0, msg: format!("not valid UTF-8: {e}") })?;
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = raw.trim();
        if body.is_empty() || !body.contains("\"t\"") {
            continue;
        }
        let inner = body
            .strip_prefix('{')
            .and_then(|s| s.strip_suffix('}'))
            .ok_or_else(|| Error::Parse { line, msg: "expected a JSON object".into() })?;
        let (mut t, mut x, mut y) = (None, None, None);
        for field in inner.split(',') {
            let Some((key, value)) = field.split_once(':') else {
                return Err(Error::Parse { line, msg: format!("bad field {field:?}") });
            };
            let value: f64 = value.trim().parse().map_err(|_| Error::Parse {
                line,
                msg: format!("cannot parse number from {value:?}"),
            })?;
            match key.trim().trim_matches('"') {
                "t" => t = Some(value),
                "x" => x = Some(value),
                "y" => y = Some(value),
                other => return Err(Error::Parse { line, msg: format!("unknown key {other:?}") }),
            }
        }
        match (t, x, y) {
            (Some(t), Some(x), Some(y)) => {
                out.push(RobotState { pos: [x, y], vel: [0.0, 0.0], time: t })
            }
            _ => return Err(Error::Parse { line, msg: "waypoint needs t, x, and y".into() }),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_roundtrip_recovers_waypoints() {
        let wp = vec![
            RobotState { pos: [2.0, 6.0], vel: [1.0, 0.0], time: 0.0 },
            RobotState { pos: [5.5, 7.25], vel: [0.0, 0.0], time: 3.125 },
        ];
        let mut bytes = Vec::new();
        write_plan_jsonl(&mut bytes, &wp, 0.0123, Some(0.02), 3.125).unwrap();
        assert_eq!(bytes.iter().filter(|&&b| b == b'\n').count(), 3);
        let back = read_plan_jsonl(&bytes).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].pos, wp[0].pos);
        assert_eq!(back[1].time, wp[1].time);

        assert!(read_plan_jsonl(b"{\"t\":oops}\n").is_err());
    }
}
