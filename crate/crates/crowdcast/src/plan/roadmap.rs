//! Roadmap construction and Dijkstra search with lazy edge costs.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::FieldSequence;
use crate::invasive::{segment_cost, RobotState, SegmentCost};

use super::{Plan, PlanConfig};

/// Out-degree cap: each node keeps its 16 nearest admissible successors.
const MAX_SUCCESSORS: usize = 16;

/// A space-time sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoadmapNode {
    pub id: usize,
    pub pos: [f64; 2],
    pub time: f64,
}

/// Forward-time connection with a lazily evaluated cost.
#[derive(Debug, Clone, Copy)]
pub struct RoadmapEdge {
    pub from: usize,
    pub to: usize,
    /// Set on first relaxation.
    pub cost: Option<SegmentCost>,
}

/// Directed acyclic space-time graph. Node 0 is the start state; `goals`
/// index the goal nodes at their staggered arrival times.
#[derive(Debug, Clone)]
pub struct Roadmap {
    pub nodes: Vec<RoadmapNode>,
    pub edges: Vec<RoadmapEdge>,
    /// Outgoing edge ids per node.
    pub adjacency: Vec<Vec<usize>>,
    pub start: usize,
    pub goals: Vec<usize>,
}

impl Roadmap {
    /// Whether every edge satisfies time ordering and the speed bound.
    pub fn edges_admissible(&self, v_max: f64) -> bool {
        self.edges.iter().all(|e| {
            let (a, b) = (&self.nodes[e.from], &self.nodes[e.to]);
            let dt = b.time - a.time;
            dt > 0.0 && dist(a.pos, b.pos) <= v_max * dt + 1e-9
        })
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Samples `n_samples` nodes uniformly over bounds × (0, t_max], adds the
/// start node at (x_curr, 0) and evenly spaced goal nodes at x_goal, and
/// connects each node to its nearest admissible successors in the space-time
/// metric sqrt(‖Δp‖² + (v_max·Δt)²). Deterministic in the seed.
pub fn build_roadmap(
    cfg: &PlanConfig,
    x_curr: [f64; 2],
    x_goal: [f64; 2],
    bounds: ([f64; 2], [f64; 2]),
) -> Result<Roadmap> {
    cfg.validate()?;
    let (lo, hi) = bounds;
    if !(lo[0] < hi[0] && lo[1] < hi[1]) {
        return Err(Error::InvalidConfig(format!("degenerate bounds {bounds:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut nodes = Vec::with_capacity(cfg.n_samples + 1 + 8);
    nodes.push(RoadmapNode { id: 0, pos: x_curr, time: 0.0 });
    let n_goals = (cfg.t_max / cfg.replan_interval).ceil().max(1.0) as usize;
    let mut goals = Vec::with_capacity(n_goals);
    for g in 1..=n_goals {
        let id = nodes.len();
        goals.push(id);
        nodes.push(RoadmapNode { id, pos: x_goal, time: cfg.t_max * g as f64 / n_goals as f64 });
    }
    for _ in 0..cfg.n_samples {
        let id = nodes.len();
        nodes.push(RoadmapNode {
            id,
            pos: [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1])],
            time: rng.gen_range(0.0..cfg.t_max),
        });
    }

    let mut edges = Vec::new();
    let mut adjacency = vec![Vec::new(); nodes.len()];
    let mut candidates: Vec<(f64, usize)> = Vec::with_capacity(nodes.len());
    for i in 0..nodes.len() {
        candidates.clear();
        for (j, nj) in nodes.iter().enumerate() {
            let dt = nj.time - nodes[i].time;
            if dt <= 0.0 {
                continue;
            }
            let dp = dist(nodes[i].pos, nj.pos);
            if dp > cfg.v_max * dt {
                continue;
            }
            let metric = (dp * dp + (cfg.v_max * dt) * (cfg.v_max * dt)).sqrt();
            candidates.push((metric, j));
        }
        candidates.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        candidates.truncate(MAX_SUCCESSORS);
        for &(_, j) in candidates.iter() {
            adjacency[i].push(edges.len());
            edges.push(RoadmapEdge { from: i, to: j, cost: None });
        }
    }

    if adjacency[0].is_empty() {
        return Err(Error::Infeasible("no admissible edge out of the start state".into()));
    }
    Ok(Roadmap { nodes, edges, adjacency, start: 0, goals })
}

#[derive(PartialEq)]
struct HeapItem {
    cost: f64,
    node: usize,
}

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        // Reversed for a min-heap; node id breaks ties deterministically.
        other.cost.total_cmp(&self.cost).then(other.node.cmp(&self.node))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn edge_cost(
    roadmap: &mut Roadmap,
    edge_id: usize,
    seq: &FieldSequence,
    beta: f64,
) -> Result<SegmentCost> {
    if let Some(c) = roadmap.edges[edge_id].cost {
        return Ok(c);
    }
    let e = roadmap.edges[edge_id];
    let (a, b) = (roadmap.nodes[e.from], roadmap.nodes[e.to]);
    let dt = b.time - a.time;
    let state = RobotState {
        pos: a.pos,
        vel: [(b.pos[0] - a.pos[0]) / dt, (b.pos[1] - a.pos[1]) / dt],
        time: a.time,
    };
    let c = segment_cost(seq, &state, b.pos, b.time, beta)?;
    roadmap.edges[edge_id].cost = Some(c);
    Ok(c)
}

/// Forces evaluation of every edge cost (for lazy-vs-eager comparisons).
pub fn evaluate_all_costs(roadmap: &mut Roadmap, seq: &FieldSequence, cfg: &PlanConfig) -> Result<()> {
    for id in 0..roadmap.edges.len() {
        edge_cost(roadmap, id, seq, cfg.beta)?;
    }
    Ok(())
}

/// Dijkstra over the roadmap with edge costs computed on first relaxation.
/// The first goal node settled is the cheapest, fixing the arrival time.
pub fn search(roadmap: &mut Roadmap, seq: &FieldSequence, cfg: &PlanConfig) -> Result<Plan> {
    if roadmap.goals.is_empty() {
        return Err(Error::Infeasible("roadmap has no goal nodes".into()));
    }
    let n = roadmap.nodes.len();
    let mut dist_to = vec![f64::INFINITY; n];
    let mut parent: Vec<Option<usize>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist_to[roadmap.start] = 0.0;
    heap.push(HeapItem { cost: 0.0, node: roadmap.start });

    let mut reached_goal = None;
    while let Some(HeapItem { cost, node }) = heap.pop() {
        if settled[node] {
            continue;
        }
        settled[node] = true;
        if roadmap.goals.contains(&node) {
            reached_goal = Some(node);
            break;
        }
        for ei in 0..roadmap.adjacency[node].len() {
            let edge_id = roadmap.adjacency[node][ei];
            let to = roadmap.edges[edge_id].to;
            if settled[to] {
                continue;
            }
            let c = edge_cost(roadmap, edge_id, seq, cfg.beta)?;
            let next = cost + c.total;
            if next < dist_to[to] {
                dist_to[to] = next;
                parent[to] = Some(edge_id);
                heap.push(HeapItem { cost: next, node: to });
            }
        }
    }

    let goal = reached_goal.ok_or_else(|| Error::Infeasible("goal unreachable on the roadmap".into()))?;

    let mut chain = vec![goal];
    let mut cur = goal;
    while let Some(edge_id) = parent[cur] {
        cur = roadmap.edges[edge_id].from;
        chain.push(cur);
    }
    chain.reverse();

    let waypoints: Vec<RobotState> = chain
        .iter()
        .enumerate()
        .map(|(i, &id)| {
            let node = roadmap.nodes[id];
            let vel = if i + 1 < chain.len() {
                let next = roadmap.nodes[chain[i + 1]];
                let dt = next.time - node.time;
                [(next.pos[0] - node.pos[0]) / dt, (next.pos[1] - node.pos[1]) / dt]
            } else {
                [0.0, 0.0]
            };
            RobotState { pos: node.pos, vel, time: node.time }
        })
        .collect();

    Ok(Plan {
        waypoints,
        expected_cost: dist_to[goal],
        arrival_time: roadmap.nodes[goal].time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{CrowdField, GridSpec};

    pub(crate) fn empty_seq() -> FieldSequence {
        let spec = GridSpec::new([0.0, 0.0], 1.0, 12, 36, 1.0).unwrap();
        let frames = (0..4).map(|t| CrowdField::zeros(spec.clone(), t)).collect();
        FieldSequence::new(spec, frames, 0.0).unwrap()
    }

    fn cfg(seed: u64) -> PlanConfig {
        PlanConfig { seed, ..PlanConfig::new(40.0) }
    }

    #[test]
    fn roadmap_is_deterministic_and_admissible() {
        let bounds = ([0.0, 0.0], [36.0, 12.0]);
        let a = build_roadmap(&cfg(3), [2.0, 6.0], [34.0, 6.0], bounds).unwrap();
        let b = build_roadmap(&cfg(3), [2.0, 6.0], [34.0, 6.0], bounds).unwrap();
        assert_eq!(a.nodes, b.nodes);
        assert_eq!(a.adjacency, b.adjacency);
        assert!(a.edges_admissible(1.5));
        assert!(a.adjacency.iter().all(|adj| adj.len() <= MAX_SUCCESSORS));
        assert_eq!(a.goals.len(), 40);
    }

    #[test]
    fn zero_speed_bound_is_infeasible() {
        let bad = PlanConfig { v_max: 1e-12, ..cfg(1) };
        let r = build_roadmap(&bad, [2.0, 6.0], [34.0, 6.0], ([0.0, 0.0], [36.0, 12.0]));
        assert!(matches!(r, Err(Error::Infeasible(_))));
    }

    #[test]
    fn empty_field_plan_approaches_straight_line() {
        let seq = empty_seq();
        let (start, goal) = ([2.0, 6.0], [34.0, 6.0]);
        let straight = 32.0;
        for seed in 0..3u64 {
            let c = cfg(seed);
            let mut rm = build_roadmap(&c, start, goal, seq.spec.bounds()).unwrap();
            let plan = search(&mut rm, &seq, &c).unwrap();
            let ratio = plan.expected_cost / (c.beta * straight);
            assert!(ratio < 1.05, "seed {seed}: cost ratio {ratio}");
            assert!(plan.arrival_time <= c.t_max);
            // Speed feasibility along the found path.
            for pair in plan.waypoints.windows(2) {
                let d = dist(pair[0].pos, pair[1].pos);
                let dt = pair[1].time - pair[0].time;
                assert!(d <= c.v_max * dt + 1e-9);
            }
        }
    }

    #[test]
    fn lazy_and_eager_costs_give_identical_plans() {
        let seq = empty_seq();
        let c = cfg(9);
        let bounds = seq.spec.bounds();
        let mut lazy = build_roadmap(&c, [2.0, 6.0], [30.0, 9.0], bounds).unwrap();
        let lazy_plan = search(&mut lazy, &seq, &c).unwrap();

        let mut eager = build_roadmap(&c, [2.0, 6.0], [30.0, 9.0], bounds).unwrap();
        evaluate_all_costs(&mut eager, &seq, &c).unwrap();
        let eager_plan = search(&mut eager, &seq, &c).unwrap();
        assert_eq!(lazy_plan, eager_plan);
        // Laziness actually pays: the lazy search leaves edges unevaluated.
        assert!(lazy.edges.iter().any(|e| e.cost.is_none()));
    }

    /// Dijkstra against exhaustive path enumeration on small random graphs.
    #[test]
    fn search_matches_exhaustive_enumeration() {
        let seq = empty_seq();
        let mut solved = 0;
        let mut attempts = 0;
        while solved < 100 {
            attempts += 1;
            assert!(attempts < 1000, "too many infeasible random graphs");
            let c = PlanConfig {
                n_samples: 10,
                t_max: 20.0,
                replan_interval: 10.0,
                seed: attempts,
                ..PlanConfig::new(20.0)
            };
            let mut rm = match build_roadmap(&c, [4.0, 4.0], [30.0, 8.0], seq.spec.bounds()) {
                Ok(r) => r,
                Err(_) => continue,
            };
            let plan = match search(&mut rm, &seq, &c) {
                Ok(p) => p,
                Err(_) => continue,
            };

            // Brute force: enumerate every start-to-goal path by DFS over the
            // (time-acyclic) graph, summing the same cached edge costs.
            fn dfs(rm: &mut Roadmap, seq: &FieldSequence, c: &PlanConfig, node: usize, cost: f64, best: &mut f64) {
                if rm.goals.contains(&node) {
                    if cost < *best {
                        *best = cost;
                    }
                    return;
                }
                for ei in 0..rm.adjacency[node].len() {
                    let edge_id = rm.adjacency[node][ei];
                    let to = rm.edges[edge_id].to;
                    let ec = edge_cost(rm, edge_id, seq, c.beta).unwrap();
                    dfs(rm, seq, c, to, cost + ec.total, best);
                }
            }
            let mut best = f64::INFINITY;
            let start = rm.start;
            dfs(&mut rm, &seq, &c, start, 0.0, &mut best);
            assert!(best.is_finite());
            assert_eq!(plan.expected_cost, best, "graph seed {attempts}");
            solved += 1;
        }
    }
}
