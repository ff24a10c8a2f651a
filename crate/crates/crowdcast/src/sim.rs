//! Synthetic pedestrian scenarios: a minimal social-force-style simulator and
//! canonical scenario families, so training and planning run at desk scale
//! without external recordings.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{PedObservation, Trajectory};

/// One scripted agent.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentSpec {
    pub start: [f64; 2],
    pub goal: [f64; 2],
    /// Preferred walking speed, m/s, in (0, 2.5].
    pub preferred_speed: f64,
    /// Time the agent enters the scene, seconds.
    pub spawn_time: f64,
}

/// Continuous stream of agents between an entrance and an exit segment.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    /// Mean spawn rate, agents per second.
    pub rate: f64,
    /// Entrance segment endpoints; spawn positions are sampled along it.
    pub entrance: [[f64; 2]; 2],
    /// Exit segment endpoints; goals are sampled along it.
    pub exit: [[f64; 2]; 2],
    /// Preferred speed range sampled per agent, m/s.
    pub speed_range: [f64; 2],
}

/// Full scenario description; [`simulate`] is a pure function of this.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    /// Rectangle (min, max) the agents are confined to.
    pub bounds: [[f64; 2]; 2],
    pub agents: Vec<AgentSpec>,
    pub flows: Vec<FlowSpec>,
    /// Simulated time span, seconds.
    pub duration: f64,
    pub seed: u64,
    /// Neighbor repulsion strength (added speed at zero distance), m/s.
    pub repulsion_gain: f64,
    /// Neighbor repulsion cutoff radius, meters.
    pub repulsion_radius: f64,
    /// Integration step, seconds.
    pub dt_sim: f64,
}

impl ScenarioSpec {
    fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::InvalidConfig(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.dt_sim > 0.0) {
            return Err(Error::InvalidConfig(format!("dt_sim must be positive, got {}", self.dt_sim)));
        }
        if self.flows.iter().any(|f| f.rate < 0.0) {
            return Err(Error::InvalidConfig("flow rates must be non-negative".into()));
        }
        for a in &self.agents {
            if !(a.preferred_speed > 0.0 && a.preferred_speed <= 2.5) {
                return Err(Error::InvalidConfig(format!(
                    "preferred_speed must lie in (0, 2.5], got {}",
                    a.preferred_speed
                )));
            }
        }
        Ok(())
    }
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

/// Expands flow descriptors into concrete agents using the scenario rng.
fn spawn_flow_agents(spec: &ScenarioSpec, rng: &mut ChaCha8Rng) -> Vec<AgentSpec> {
    let mut agents = Vec::new();
    for flow in &spec.flows {
        if flow.rate <= 0.0 {
            continue;
        }
        let mut t = 0.0;
        loop {
            // Exponential inter-arrival times give a Poisson stream.
            let u: f64 = rng.gen_range(f64::EPSILON..1.0);
            t += -u.ln() / flow.rate;
            if t >= spec.duration {
                break;
            }
            let start = lerp(flow.entrance[0], flow.entrance[1], rng.gen_range(0.0..1.0));
            let goal = lerp(flow.exit[0], flow.exit[1], rng.gen_range(0.0..1.0));
            let preferred_speed = rng.gen_range(flow.speed_range[0]..=flow.speed_range[1]);
            agents.push(AgentSpec { start, goal, preferred_speed, spawn_time: t });
        }
    }
    agents
}

/// Integrates the scenario and returns one trajectory per agent that ever
/// entered the scene. Deterministic in the seed.
pub fn simulate(spec: &ScenarioSpec) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut agents = spec.agents.clone();
    agents.extend(spawn_flow_agents(spec, &mut rng));

    const GOAL_RADIUS: f64 = 0.3;
    let n = agents.len();
    let mut pos: Vec<[f64; 2]> = agents.iter().map(|a| a.start).collect();
    let mut alive = vec![false; n];
    let mut done = vec![false; n];
    let mut trajs: Vec<Trajectory> = (0..n).map(|i| Trajectory { pid: i as u64, samples: Vec::new() }).collect();

    let steps = (spec.duration / spec.dt_sim).ceil() as usize;
    for step in 0..steps {
        let t = step as f64 * spec.dt_sim;
        for i in 0..n {
            if !done[i] && !alive[i] && t >= agents[i].spawn_time {
                alive[i] = true;
                pos[i] = agents[i].start;
            }
        }

        // Synchronous update: forces read the previous step's positions.
        let mut vel = vec![[0.0f64; 2]; n];
        for i in 0..n {
            if !alive[i] {
                continue;
            }
            let to_goal = [agents[i].goal[0] - pos[i][0], agents[i].goal[1] - pos[i][1]];
            let d_goal = (to_goal[0] * to_goal[0] + to_goal[1] * to_goal[1]).sqrt();
            let mut v = if d_goal > 1e-12 {
                [
                    agents[i].preferred_speed * to_goal[0] / d_goal,
                    agents[i].preferred_speed * to_goal[1] / d_goal,
                ]
            } else {
                [0.0, 0.0]
            };
            if spec.repulsion_gain > 0.0 && spec.repulsion_radius > 0.0 {
                for j in 0..n {
                    if i == j || !alive[j] {
                        continue;
                    }
                    let away = [pos[i][0] - pos[j][0], pos[i][1] - pos[j][1]];
                    let d = (away[0] * away[0] + away[1] * away[1]).sqrt();
                    if d >= spec.repulsion_radius {
                        continue;
                    }
                    let mag = spec.repulsion_gain * (1.0 - d / spec.repulsion_radius);
                    let dir = if d > 1e-9 { [away[0] / d, away[1] / d] } else { [1.0, 0.0] };
                    v[0] += mag * dir[0];
                    v[1] += mag * dir[1];
                }
            }
            // Speed cap keeps dense interactions physical.
            let cap = 1.5 * agents[i].preferred_speed;
            let speed = (v[0] * v[0] + v[1] * v[1]).sqrt();
            if speed > cap {
                v[0] *= cap / speed;
                v[1] *= cap / speed;
            }
            vel[i] = v;
        }

        for i in 0..n {
            if !alive[i] {
                continue;
            }
            trajs[i].samples.push(PedObservation { time: t, pid: i as u64, pos: pos[i], vel: vel[i] });
            pos[i][0] = (pos[i][0] + vel[i][0] * spec.dt_sim).clamp(spec.bounds[0][0], spec.bounds[1][0]);
            pos[i][1] = (pos[i][1] + vel[i][1] * spec.dt_sim).clamp(spec.bounds[0][1], spec.bounds[1][1]);
            let dg = [agents[i].goal[0] - pos[i][0], agents[i].goal[1] - pos[i][1]];
            if (dg[0] * dg[0] + dg[1] * dg[1]).sqrt() <= GOAL_RADIUS {
                alive[i] = false;
                done[i] = true;
            }
        }
    }

    Ok(trajs.into_iter().filter(|t| !t.samples.is_empty()).collect())
}

/// Canonical scenario families on the 36 m × 12 m domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusKind {
    /// Two opposing flows along x.
    CorridorBidirectional,
    /// Two orthogonal flows.
    Crossing,
    /// One dense cluster translating at constant velocity.
    Blob,
}

impl CorpusKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "corridor_bidirectional" | "corridor" => Some(Self::CorridorBidirectional),
            "crossing" => Some(Self::Crossing),
            "blob" => Some(Self::Blob),
            _ => None,
        }
    }

    pub const NAMES: &'static [&'static str] = &["corridor_bidirectional", "crossing", "blob"];
}

/// Splits one seed into independent per-run streams.
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    // SplitMix64 step over (seed, stream).
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Builds `n_runs` scenario specs of the given family. Deterministic in
/// (kind, seed).
pub fn make_corpus(kind: CorpusKind, seed: u64, n_runs: usize) -> Vec<ScenarioSpec> {
    (0..n_runs).map(|r| make_scenario(kind, derive_seed(seed, r as u64))).collect()
}

fn make_scenario(kind: CorpusKind, seed: u64) -> ScenarioSpec {
    let bounds = [[0.0, 0.0], [36.0, 12.0]];
    let base = ScenarioSpec {
        bounds,
        agents: Vec::new(),
        flows: Vec::new(),
        duration: 60.0,
        seed,
        repulsion_gain: 2.0,
        repulsion_radius: 0.8,
        dt_sim: 0.1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x5CE0));
    match kind {
        CorpusKind::CorridorBidirectional => ScenarioSpec {
            flows: vec![
                FlowSpec {
                    rate: 0.7,
                    entrance: [[0.5, 3.0], [0.5, 5.5]],
                    exit: [[35.5, 3.0], [35.5, 5.5]],
                    speed_range: [0.9, 1.4],
                },
                FlowSpec {
                    rate: 0.7,
                    entrance: [[35.5, 6.5], [35.5, 9.0]],
                    exit: [[0.5, 6.5], [0.5, 9.0]],
                    speed_range: [0.9, 1.4],
                },
            ],
            ..base
        },
        CorpusKind::Crossing => ScenarioSpec {
            flows: vec![
                FlowSpec {
                    rate: 0.6,
                    entrance: [[0.5, 4.0], [0.5, 8.0]],
                    exit: [[35.5, 4.0], [35.5, 8.0]],
                    speed_range: [0.9, 1.4],
                },
                FlowSpec {
                    rate: 0.6,
                    entrance: [[14.0, 0.5], [22.0, 0.5]],
                    exit: [[14.0, 11.5], [22.0, 11.5]],
                    speed_range: [0.9, 1.4],
                },
            ],
            ..base
        },
        CorpusKind::Blob => {
            let n = rng.gen_range(25..=40);
            let cy = rng.gen_range(4.5..7.5);
            let speed = rng.gen_range(0.8..1.2);
            let agents = (0..n)
                .map(|_| {
                    // Uniform in a disc of radius 2 around (6, cy).
                    let (dx, dy) = loop {
                        let dx: f64 = rng.gen_range(-2.0..2.0);
                        let dy: f64 = rng.gen_range(-2.0..2.0);
                        if dx * dx + dy * dy <= 4.0 {
                            break (dx, dy);
                        }
                    };
                    let start = [6.0 + dx, (cy + dy).clamp(0.5, 11.5)];
                    AgentSpec {
                        start,
                        goal: [start[0] + 28.0, start[1]],
                        preferred_speed: speed,
                        spawn_time: 0.0,
                    }
                })
                .collect();
            ScenarioSpec {
                agents,
                // No repulsion: the cluster translates rigidly so every agent
                // shares one velocity.
                repulsion_gain: 0.0,
                duration: 45.0,
                ..base
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{rasterize_sequence, GridSpec};

    fn solo(start: [f64; 2], goal: [f64; 2], speed: f64) -> ScenarioSpec {
        ScenarioSpec {
            bounds: [[-5.0, -5.0], [40.0, 12.0]],
            agents: vec![AgentSpec { start, goal, preferred_speed: speed, spawn_time: 0.0 }],
            flows: vec![],
            duration: 20.0,
            seed: 1,
            repulsion_gain: 2.0,
            repulsion_radius: 0.8,
            dt_sim: 0.1,
        }
    }

    #[test]
    fn lone_agent_walks_straight_to_goal() {
        let trajs = simulate(&solo([0.0, 0.0], [10.0, 0.0], 1.0)).unwrap();
        assert_eq!(trajs.len(), 1);
        let samples = &trajs[0].samples;
        let arrival = samples.last().unwrap().time;
        assert!((arrival - 10.0).abs() <= 0.5, "arrival {arrival}");
        for s in samples {
            assert!(s.pos[1].abs() < 1e-9, "path must stay on the segment");
            assert!((s.vel[0] - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_specs_give_identical_trajectories() {
        let spec = make_corpus(CorpusKind::CorridorBidirectional, 42, 1).remove(0);
        let a = simulate(&spec).unwrap();
        let b = simulate(&spec).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn head_on_agents_keep_their_distance() {
        let mut spec = solo([0.0, 0.0], [10.0, 0.0], 1.0);
        spec.agents.push(AgentSpec {
            start: [10.0, 0.0],
            goal: [0.0, 0.0],
            preferred_speed: 1.0,
            spawn_time: 0.0,
        });
        let trajs = simulate(&spec).unwrap();
        assert_eq!(trajs.len(), 2);
        let min_d = trajs[0]
            .samples
            .iter()
            .zip(&trajs[1].samples)
            .map(|(a, b)| ((a.pos[0] - b.pos[0]).powi(2) + (a.pos[1] - b.pos[1]).powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        assert!(min_d > 0.2, "minimum distance {min_d}");
    }

    #[test]
    fn speed_and_bounds_invariants() {
        for spec in make_corpus(CorpusKind::Crossing, 7, 2) {
            let speed_cap = 1.5 * 1.4 + 1e-9;
            for traj in simulate(&spec).unwrap() {
                for s in &traj.samples {
                    let speed = (s.vel[0] * s.vel[0] + s.vel[1] * s.vel[1]).sqrt();
                    assert!(speed <= speed_cap, "speed {speed}");
                    assert!(s.pos[0] >= 0.0 && s.pos[0] <= 36.0);
                    assert!(s.pos[1] >= 0.0 && s.pos[1] <= 12.0);
                }
                for pair in traj.samples.windows(2) {
                    assert!(pair[1].time > pair[0].time);
                    let ds = ((pair[1].pos[0] - pair[0].pos[0]).powi(2)
                        + (pair[1].pos[1] - pair[0].pos[1]).powi(2))
                    .sqrt();
                    assert!(ds <= 2.0 * spec.dt_sim * speed_cap);
                }
            }
        }
    }

    #[test]
    fn blob_shares_one_velocity() {
        let spec = make_corpus(CorpusKind::Blob, 3, 1).remove(0);
        let trajs = simulate(&spec).unwrap();
        assert!(trajs.len() >= 25);
        let grid = GridSpec::new([0.0, 0.0], 1.0, 12, 36, 1.0).unwrap();
        let seq = rasterize_sequence(&trajs, &grid, 0.0, 10).unwrap();
        // Everyone moves at the same constant velocity, so mu_v is uniform
        // wherever rho > 0.
        let mut seen: Option<[f64; 2]> = None;
        for c in seq.frames[3].cells.iter().filter(|c| c.rho > 1e-9) {
            match seen {
                None => seen = Some(c.mu_v),
                Some(v) => {
                    assert!((c.mu_v[0] - v[0]).abs() < 1e-9);
                    assert!((c.mu_v[1] - v[1]).abs() < 1e-9);
                }
            }
        }
        assert!(seen.is_some());
    }

    #[test]
    fn corpus_is_deterministic_and_rate_zero_is_empty() {
        let a = make_corpus(CorpusKind::Blob, 11, 3);
        let b = make_corpus(CorpusKind::Blob, 11, 3);
        assert_eq!(a, b);

        let mut spec = make_corpus(CorpusKind::CorridorBidirectional, 1, 1).remove(0);
        for f in &mut spec.flows {
            f.rate = 0.0;
        }
        assert!(simulate(&spec).unwrap().is_empty());
    }
}
