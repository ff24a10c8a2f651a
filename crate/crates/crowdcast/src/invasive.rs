//! Social invasiveness: how much a robot state disturbs the predicted crowd
//! flow, at points and integrated along straight space-time segments.
//!
//! The point metric is rho·(‖mu_v − v_r‖² + sigma²_v): zero in empty space,
//! zero when the robot moves with the crowd, and growing with local density,
//! velocity mismatch, and motion uncertainty.

use crate::error::{Error, Result};
use crate::grid::{sample_field, CellState, FieldSequence};

/// Robot point state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub pos: [f64; 2],
    pub vel: [f64; 2],
    pub time: f64,
}

/// Cost of a path piece: the integrated invasiveness, the traveled distance,
/// and their beta-weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SegmentCost {
    /// ∫ I_r dt along the segment (invasiveness · s).
    pub invasive: f64,
    /// Euclidean length, meters.
    pub distance: f64,
    /// invasive + beta · distance.
    pub total: f64,
}

impl SegmentCost {
    pub fn accumulate(&mut self, other: &SegmentCost) {
        self.invasive += other.invasive;
        self.distance += other.distance;
        self.total += other.total;
    }
}

/// Fixed quadrature step for segment integration, seconds.
pub const DT_INT: f64 = 0.1;

/// Point invasiveness rho·(‖mu_v − v_r‖² + sigma²_v).
pub fn point_invasiveness(field_at: &CellState, v_r: [f64; 2]) -> f64 {
    let dv = [field_at.mu_v[0] - v_r[0], field_at.mu_v[1] - v_r[1]];
    field_at.rho * (dv[0] * dv[0] + dv[1] * dv[1] + field_at.sigma2_v)
}

fn segment_cost_with_step(
    seq: &FieldSequence,
    a: &RobotState,
    b_pos: [f64; 2],
    b_time: f64,
    beta: f64,
    dt_int: f64,
) -> Result<SegmentCost> {
    let duration = b_time - a.time;
    if !(duration > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "segment must advance in time: {} -> {}",
            a.time, b_time
        )));
    }
    let delta = [b_pos[0] - a.pos[0], b_pos[1] - a.pos[1]];
    let distance = (delta[0] * delta[0] + delta[1] * delta[1]).sqrt();
    let v_r = [delta[0] / duration, delta[1] / duration];

    // Midpoint rule with at least two samples.
    let n = ((duration / dt_int).ceil() as usize).max(2);
    let h = duration / n as f64;
    let mut invasive = 0.0;
    for m in 0..n {
        let frac = (m as f64 + 0.5) / n as f64;
        let t = a.time + frac * duration;
        let pos = [a.pos[0] + frac * delta[0], a.pos[1] + frac * delta[1]];
        // Outside the grid there is no crowd to disturb.
        let i_r = match sample_field(seq, pos, t) {
            Ok(cell) => point_invasiveness(&cell, v_r),
            Err(Error::OutOfDomain { .. }) => 0.0,
            Err(e) => return Err(e),
        };
        invasive += h * i_r;
    }
    Ok(SegmentCost { invasive, distance, total: invasive + beta * distance })
}

/// Integrates invasiveness along the straight segment from `a` to
/// `(b_pos, b_time)` traversed at constant velocity, and adds the
/// beta-weighted distance term.
pub fn segment_cost(
    seq: &FieldSequence,
    a: &RobotState,
    b_pos: [f64; 2],
    b_time: f64,
    beta: f64,
) -> Result<SegmentCost> {
    segment_cost_with_step(seq, a, b_pos, b_time, beta, DT_INT)
}

/// Same segment evaluated at half the quadrature step (convergence checks).
pub fn segment_cost_refined(
    seq: &FieldSequence,
    a: &RobotState,
    b_pos: [f64; 2],
    b_time: f64,
    beta: f64,
) -> Result<SegmentCost> {
    segment_cost_with_step(seq, a, b_pos, b_time, beta, DT_INT / 2.0)
}

/// Total cost of a waypoint chain: the sum of its segment costs.
pub fn trajectory_cost(seq: &FieldSequence, waypoints: &[RobotState], beta: f64) -> Result<SegmentCost> {
    if waypoints.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "trajectory needs at least 2 waypoints, got {}",
            waypoints.len()
        )));
    }
    let mut total = SegmentCost::default();
    for pair in waypoints.windows(2) {
        let seg = segment_cost(seq, &pair[0], pair[1].pos, pair[1].time, beta)?;
        total.accumulate(&seg);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CrowdField, GridSpec};

    fn uniform_seq(rho: f64, mu: [f64; 2], sigma2: f64) -> FieldSequence {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 12, 36, 1.0).unwrap();
        let mut frames = Vec::new();
        for t in 0..5 {
            let mut f = CrowdField::zeros(spec.clone(), t);
            for c in &mut f.cells {
                *c = CellState { rho, mu_v: mu, sigma2_v: sigma2 };
            }
            frames.push(f);
        }
        FieldSequence::new(spec, frames, 0.0).unwrap()
    }

    #[test]
    fn point_invasiveness_hand_values() {
        let empty = CellState::default();
        assert_eq!(point_invasiveness(&empty, [3.0, -1.0]), 0.0);

        let matched = CellState { rho: 1.0, mu_v: [1.2, -0.3], sigma2_v: 0.0 };
        assert_eq!(point_invasiveness(&matched, [1.2, -0.3]), 0.0);

        let c = CellState { rho: 0.5, mu_v: [0.0, 0.0], sigma2_v: 0.25 };
        assert!((point_invasiveness(&c, [1.0, 0.0]) - 0.625).abs() < 1e-15);
    }

    #[test]
    fn velocity_matching_minimizes_invasiveness() {
        let c = CellState { rho: 0.8, mu_v: [0.7, -0.2], sigma2_v: 0.3 };
        let at_match = point_invasiveness(&c, c.mu_v);
        assert!((at_match - 0.8 * 0.3).abs() < 1e-15);
        for d in [[0.1, 0.0], [-0.2, 0.3], [0.0, -0.5]] {
            let v = [c.mu_v[0] + d[0], c.mu_v[1] + d[1]];
            assert!(point_invasiveness(&c, v) > at_match);
        }
    }

    #[test]
    fn density_scaling_is_exact() {
        let seq1 = uniform_seq(0.6, [1.0, 0.0], 0.2);
        let seq3 = uniform_seq(1.8, [1.0, 0.0], 0.2);
        let a = RobotState { pos: [5.0, 5.0], vel: [0.0, 0.0], time: 0.0 };
        let c1 = segment_cost(&seq1, &a, [8.0, 6.0], 3.0, 0.0).unwrap();
        let c3 = segment_cost(&seq3, &a, [8.0, 6.0], 3.0, 0.0).unwrap();
        assert!((c3.invasive - 3.0 * c1.invasive).abs() < 1e-12 * c3.invasive.abs().max(1.0));
    }

    #[test]
    fn empty_field_costs_beta_distance() {
        let seq = uniform_seq(0.0, [0.0, 0.0], 0.0);
        let a = RobotState { pos: [2.0, 2.0], vel: [0.0, 0.0], time: 0.0 };
        let c = segment_cost(&seq, &a, [12.0, 2.0], 8.0, 1e-4).unwrap();
        assert_eq!(c.invasive, 0.0);
        assert!((c.total - 1e-3).abs() < 1e-15);
        // With beta = 0 an empty-field segment costs nothing at all.
        let c0 = segment_cost(&seq, &a, [12.0, 2.0], 8.0, 0.0).unwrap();
        assert_eq!(c0.total, 0.0);
    }

    #[test]
    fn stationary_robot_in_flow_pays_density_times_mismatch() {
        // rho = 1, mu = (1,0), sigma² = 0, robot parked for 2 s:
        // I_r = 1·‖(1,0)‖² = 1, integral = 2.
        let seq = uniform_seq(1.0, [1.0, 0.0], 0.0);
        let a = RobotState { pos: [10.0, 6.0], vel: [0.0, 0.0], time: 0.0 };
        let c = segment_cost(&seq, &a, [10.0, 6.0], 2.0, 1e-4).unwrap();
        assert!((c.invasive - 2.0).abs() / 2.0 < 0.02, "invasive {}", c.invasive);
        assert_eq!(c.distance, 0.0);
    }

    #[test]
    fn quadrature_refinement_changes_little_on_smooth_fields() {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 12, 36, 1.0).unwrap();
        let mut frames = Vec::new();
        for t in 0..6 {
            let mut f = CrowdField::zeros(spec.clone(), t);
            for i in 0..12 {
                for j in 0..36 {
                    let (x, y) = (j as f64 + 0.5, i as f64 + 0.5);
                    let c = f.cell_mut(i, j);
                    c.rho = 0.5 + 0.4 * ((0.2 * x).sin() * (0.3 * y).cos() + t as f64 * 0.05);
                    c.mu_v = [0.8 * (0.1 * y).cos(), 0.3 * (0.15 * x).sin()];
                    c.sigma2_v = 0.1 + 0.05 * (0.25 * (x + y)).sin().abs();
                }
            }
            frames.push(f);
        }
        let seq = FieldSequence::new(spec, frames, 0.0).unwrap();
        let a = RobotState { pos: [3.0, 2.5], vel: [0.0, 0.0], time: 0.2 };
        let coarse = segment_cost(&seq, &a, [30.0, 9.0], 4.7, 1e-4).unwrap();
        let fine = segment_cost_refined(&seq, &a, [30.0, 9.0], 4.7, 1e-4).unwrap();
        let rel = (coarse.invasive - fine.invasive).abs() / fine.invasive;
        assert!(rel < 0.01, "refinement moved the integral by {rel}");
    }

    #[test]
    fn trajectory_cost_is_additive_and_validates() {
        let seq = uniform_seq(0.3, [0.5, 0.0], 0.1);
        let wp = [
            RobotState { pos: [2.0, 2.0], vel: [1.0, 0.0], time: 0.0 },
            RobotState { pos: [5.0, 3.0], vel: [1.0, 0.0], time: 2.5 },
            RobotState { pos: [9.0, 3.0], vel: [1.0, 0.0], time: 5.5 },
        ];
        let whole = trajectory_cost(&seq, &wp, 1e-4).unwrap();
        let s1 = segment_cost(&seq, &wp[0], wp[1].pos, wp[1].time, 1e-4).unwrap();
        let s2 = segment_cost(&seq, &wp[1], wp[2].pos, wp[2].time, 1e-4).unwrap();
        assert_eq!(whole.total, s1.total + s2.total);
        assert_eq!(whole.distance, s1.distance + s2.distance);

        assert!(trajectory_cost(&seq, &wp[..1], 1e-4).is_err());
        assert!(segment_cost(&seq, &wp[1], [1.0, 1.0], wp[1].time, 1e-4).is_err());
    }

    #[test]
    fn out_of_bounds_samples_are_crowd_free() {
        let seq = uniform_seq(2.0, [1.0, 0.0], 0.5);
        // Segment entirely outside the grid on the left.
        let a = RobotState { pos: [-10.0, 6.0], vel: [0.0, 0.0], time: 0.0 };
        let c = segment_cost(&seq, &a, [-2.0, 6.0], 4.0, 0.0).unwrap();
        assert_eq!(c.invasive, 0.0);
    }
}
