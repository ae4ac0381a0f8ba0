//! Multi-agent LiDAR environments: dynamics, sensing, graph observations,
//! costs, and constraint functions.
//!
//! Simulation runs in `f64`. All state is held in plain values so many
//! instances can be stepped from different threads.

mod geometry;
mod spec;
mod trajectory;


use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use geometry::{cast_rays, dist, lidar_scan, norm, ray_direction, sub, LidarHit, Obstacle, Vec2};
pub use spec::{EnvKind, EnvSpec, ACCEL_LIMIT, MAX_ATTEMPTS, STEER_LIMIT, VELOCITY_LIMIT};
pub use trajectory::{read_trajectory, safety_rate, write_trajectory, StepRecord};

use crate::error::{Error, Result};

/// Number of constraint functions per agent.
pub const N_CONSTRAINTS: usize = 2;

/// State of one agent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum AgentState {
    DoubleIntegrator { pos: Vec2, vel: Vec2 },
    /// `heading` holds `(cos θ, sin θ)`.
    Bicycle { pos: Vec2, heading: Vec2, speed: f64 },
}

impl AgentState {
    pub fn pos(&self) -> Vec2 {
        match *self {
            AgentState::DoubleIntegrator { pos, .. } | AgentState::Bicycle { pos, .. } => pos,
        }
    }

    /// World-frame velocity.
    pub fn velocity(&self) -> Vec2 {
        match *self {
            AgentState::DoubleIntegrator { vel, .. } => vel,
            AgentState::Bicycle { heading, speed, .. } => [speed * heading[0], speed * heading[1]],
        }
    }

    /// Extra node features: `(cos θ, sin θ, v)` for bicycles, zeros otherwise.
    pub fn extra_features(&self) -> [f64; 3] {
        match *self {
            AgentState::DoubleIntegrator { .. } => [0.0; 3],
            AgentState::Bicycle { heading, speed, .. } => [heading[0], heading[1], speed],
        }
    }

    fn translated(self, d: Vec2) -> Self {
        let shift = |p: Vec2| [p[0] + d[0], p[1] + d[1]];
        match self {
            AgentState::DoubleIntegrator { pos, vel } => AgentState::DoubleIntegrator { pos: shift(pos), vel },
            AgentState::Bicycle { pos, heading, speed } => AgentState::Bicycle {
                pos: shift(pos),
                heading,
                speed,
            },
        }
    }
}

/// Full simulator state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub agents: Vec<AgentState>,
    /// Target/Bicycle: goal `i` belongs to agent `i`. Spread/Line: shared goals.
    pub goals: Vec<Vec2>,
    /// Line task endpoints.
    pub landmarks: Option<[Vec2; 2]>,
    pub obstacles: Vec<Obstacle>,
    pub k: usize,
}

impl JointState {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn positions(&self) -> Vec<Vec2> {
        self.agents.iter().map(AgentState::pos).collect()
    }

    pub fn velocities(&self) -> Vec<Vec2> {
        self.agents.iter().map(AgentState::velocity).collect()
    }

    /// Copy with every position shifted by `d`.
    pub fn translated(&self, d: Vec2) -> Self {
        let shift = |p: Vec2| [p[0] + d[0], p[1] + d[1]];
        JointState {
            agents: self.agents.iter().map(|a| a.translated(d)).collect(),
            goals: self.goals.iter().map(|&g| shift(g)).collect(),
            landmarks: self.landmarks.map(|[a, b]| [shift(a), shift(b)]),
            obstacles: self
                .obstacles
                .iter()
                .map(|o| Obstacle {
                    center: shift(o.center),
                    ..*o
                })
                .collect(),
            k: self.k,
        }
    }
}

/// Node category in an observation graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Agent,
    Goal,
    Hit,
}

impl NodeKind {
    pub fn one_hot(self) -> [f64; 3] {
        match self {
            NodeKind::Agent => [1.0, 0.0, 0.0],
            NodeKind::Goal => [0.0, 1.0, 0.0],
            NodeKind::Hit => [0.0, 0.0, 1.0],
        }
    }
}

/// One node of an agent's local graph.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObsNode {
    pub kind: NodeKind,
    pub pos: Vec2,
    pub vel: Vec2,
    pub extra: [f64; 3],
    /// Agent index for agent nodes.
    pub agent: Option<usize>,
}

/// Local graph observed by one receiving agent. Node 0 is the receiver;
/// every node (including the receiver) sends one edge to it.
#[derive(Clone, Debug, PartialEq)]
pub struct ObsGraph {
    pub receiver: usize,
    pub nodes: Vec<ObsNode>,
}

impl ObsGraph {
    pub fn ego(&self) -> &ObsNode {
        &self.nodes[0]
    }

    /// Edge feature from node `j` to the receiver: relative position and
    /// relative velocity, sender minus receiver.
    pub fn edge_feature(&self, j: usize) -> [f64; 4] {
        let (e, n) = (self.ego(), &self.nodes[j]);
        [n.pos[0] - e.pos[0], n.pos[1] - e.pos[1], n.vel[0] - e.vel[0], n.vel[1] - e.vel[1]]
    }

    /// Indices of neighbor agent nodes (receiver excluded).
    pub fn neighbor_agents(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.nodes.len()).filter(|&j| self.nodes[j].kind == NodeKind::Agent)
    }

    pub fn hits(&self) -> impl Iterator<Item = usize> + '_ {
        (1..self.nodes.len()).filter(|&j| self.nodes[j].kind == NodeKind::Hit)
    }
}

/// Simulator for one [`EnvSpec`].
#[derive(Clone, Debug)]
pub struct Env {
    spec: EnvSpec,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn sample_point(&self, rng: &mut ChaCha8Rng) -> Vec2 {
        let s = self.spec.arena_side;
        [rng.random_range(0.0..s), rng.random_range(0.0..s)]
    }

    fn clear_of_obstacles(&self, p: Vec2, obstacles: &[Obstacle]) -> bool {
        obstacles.iter().all(|o| o.distance(p) > self.spec.agent_radius)
    }

    /// Rejection-samples a point satisfying `ok`.
    fn place(
        &self,
        rng: &mut ChaCha8Rng,
        what: &'static str,
        mut ok: impl FnMut(Vec2) -> bool,
    ) -> Result<Vec2> {
        for _ in 0..MAX_ATTEMPTS {
            let p = self.sample_point(rng);
            if ok(p) {
                return Ok(p);
            }
        }
        Err(Error::Infeasible {
            what,
            attempts: MAX_ATTEMPTS,
        })
    }

    /// Samples a fresh initial state; deterministic in `seed`.
    pub fn reset(&self, seed: u64) -> Result<JointState> {
        let spec = &self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obstacles: Vec<Obstacle> = (0..spec.n_obstacles)
            .map(|_| {
                let center = self.sample_point(&mut rng);
                let w = rng.random_range(0.1..0.4);
                let h = rng.random_range(0.1..0.4);
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                Obstacle {
                    center,
                    half: [w / 2.0, h / 2.0],
                    angle,
                }
            })
            .collect();

        let sep = 4.0 * spec.agent_radius;
        let mut positions: Vec<Vec2> = Vec::with_capacity(spec.n_agents);
        for _ in 0..spec.n_agents {
            let p = self.place(&mut rng, "agent placement", |p| {
                self.clear_of_obstacles(p, &obstacles) && positions.iter().all(|&q| dist(p, q) > sep)
            })?;
            positions.push(p);
        }

        let (goals, landmarks) = match spec.kind {
            EnvKind::Line => {
                let n = spec.n_agents;
                let mut found = None;
                for _ in 0..MAX_ATTEMPTS {
                    let a = self.sample_point(&mut rng);
                    let b = self.sample_point(&mut rng);
                    let pts = line_points(a, b, n);
                    let spaced = n == 1 || dist(a, b) / (n - 1) as f64 > sep;
                    if spaced && pts.iter().all(|&p| self.clear_of_obstacles(p, &obstacles)) {
                        found = Some((pts, [a, b]));
                        break;
                    }
                }
                let (pts, lm) = found.ok_or_else(|| Error::Infeasible {
                    what: "line landmarks",
                    attempts: MAX_ATTEMPTS,
                })?;
                (pts, Some(lm))
            }
            _ => {
                let mut goals: Vec<Vec2> = Vec::with_capacity(spec.n_agents);
                for _ in 0..spec.n_agents {
                    let g = self.place(&mut rng, "goal placement", |p| {
                        self.clear_of_obstacles(p, &obstacles) && goals.iter().all(|&q| dist(p, q) > sep)
                    })?;
                    goals.push(g);
                }
                (goals, None)
            }
        };

        let agents = positions
            .into_iter()
            .map(|pos| match spec.kind {
                EnvKind::Bicycle => {
                    let theta = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
                    AgentState::Bicycle {
                        pos,
                        heading: [theta.cos(), theta.sin()],
                        speed: 0.0,
                    }
                }
                _ => AgentState::DoubleIntegrator { pos, vel: [0.0, 0.0] },
            })
            .collect();

        Ok(JointState {
            agents,
            goals,
            landmarks,
            obstacles,
            k: 0,
        })
    }

    /// Clamps a raw action to the control bounds of the agent type.
    pub fn clamp_action(&self, a: Vec2) -> Vec2 {
        match self.spec.kind {
            EnvKind::Bicycle => [a[0].clamp(-STEER_LIMIT, STEER_LIMIT), a[1].clamp(-ACCEL_LIMIT, ACCEL_LIMIT)],
            _ => [a[0].clamp(-ACCEL_LIMIT, ACCEL_LIMIT), a[1].clamp(-ACCEL_LIMIT, ACCEL_LIMIT)],
        }
    }

    /// Forward-Euler step; positions advance with the pre-step velocity.
    pub fn step(&self, state: &JointState, actions: &[Vec2]) -> Result<JointState> {
        if actions.len() != state.n_agents() {
            return Err(Error::ShapeMismatch {
                context: "step actions".into(),
                expected: vec![state.n_agents(), 2],
                got: vec![actions.len(), 2],
            });
        }
        let dt = self.spec.dt;
        let mut next = state.clone();
        for (agent, (a, raw)) in next.agents.iter_mut().zip(actions.iter().enumerate()) {
            if !(raw[0].is_finite() && raw[1].is_finite()) {
                return Err(Error::NonFiniteAction { agent: a });
            }
            let u = self.clamp_action(*raw);
            *agent = match *agent {
                AgentState::DoubleIntegrator { pos, vel } => AgentState::DoubleIntegrator {
                    pos: [pos[0] + vel[0] * dt, pos[1] + vel[1] * dt],
                    vel: [
                        (vel[0] + u[0] * dt).clamp(-VELOCITY_LIMIT, VELOCITY_LIMIT),
                        (vel[1] + u[1] * dt).clamp(-VELOCITY_LIMIT, VELOCITY_LIMIT),
                    ],
                },
                AgentState::Bicycle { pos, heading, speed } => {
                    let [c, s] = heading;
                    let turn = speed * u[0].tan();
                    let (c2, s2) = (c - s * turn * dt, s + c * turn * dt);
                    let n = c2.hypot(s2);
                    AgentState::Bicycle {
                        pos: [pos[0] + speed * c * dt, pos[1] + speed * s * dt],
                        heading: [c2 / n, s2 / n],
                        speed: (speed + u[1] * dt).clamp(-VELOCITY_LIMIT, VELOCITY_LIMIT),
                    }
                }
            };
        }
        next.k += 1;
        Ok(next)
    }

    /// LiDAR returns of agent `i`.
    pub fn lidar(&self, state: &JointState, i: usize) -> Vec<LidarHit> {
        lidar_scan(
            state.agents[i].pos(),
            &state.obstacles,
            self.spec.sensing_radius,
            self.spec.n_rays,
            self.spec.n_hits,
        )
    }

    /// Local graph of agent `i`: itself, agents within the sensing radius
    /// (boundary inclusive), its goal node(s), and LiDAR hits.
    pub fn observe(&self, state: &JointState, i: usize) -> ObsGraph {
        let me = &state.agents[i];
        let mut nodes = Vec::with_capacity(1 + state.n_agents() + state.goals.len() + self.spec.n_hits);
        nodes.push(ObsNode {
            kind: NodeKind::Agent,
            pos: me.pos(),
            vel: me.velocity(),
            extra: me.extra_features(),
            agent: Some(i),
        });
        for (j, other) in state.agents.iter().enumerate() {
            if j != i && dist(other.pos(), me.pos()) <= self.spec.sensing_radius {
                nodes.push(ObsNode {
                    kind: NodeKind::Agent,
                    pos: other.pos(),
                    vel: other.velocity(),
                    extra: other.extra_features(),
                    agent: Some(j),
                });
            }
        }
        let goal_node = |g: Vec2| ObsNode {
            kind: NodeKind::Goal,
            pos: g,
            vel: [0.0, 0.0],
            extra: [0.0; 3],
            agent: None,
        };
        if self.spec.kind.is_reach() {
            nodes.push(goal_node(state.goals[i]));
        } else {
            nodes.extend(state.goals.iter().map(|&g| goal_node(g)));
        }
        for hit in self.lidar(state, i) {
            nodes.push(ObsNode {
                kind: NodeKind::Hit,
                pos: hit.point,
                vel: [0.0, 0.0],
                extra: [0.0; 3],
                agent: None,
            });
        }
        ObsGraph { receiver: i, nodes }
    }

    pub fn observe_all(&self, state: &JointState) -> Vec<ObsGraph> {
        (0..state.n_agents()).map(|i| self.observe(state, i)).collect()
    }

    /// `[h¹, h²]`: inter-agent and obstacle clearance violations; positive
    /// means unsafe. Empty neighborhoods saturate at the sensing radius.
    pub fn constraints(&self, obs: &ObsGraph) -> [f64; N_CONSTRAINTS] {
        let ego = obs.ego().pos;
        let r_sense = self.spec.sensing_radius;
        let r = self.spec.agent_radius;
        let min_agent = obs
            .neighbor_agents()
            .map(|j| dist(obs.nodes[j].pos, ego))
            .fold(r_sense, f64::min);
        let min_hit = obs.hits().map(|j| dist(obs.nodes[j].pos, ego)).fold(r_sense, f64::min);
        [2.0 * r - min_agent, r - min_hit]
    }

    /// Constraint values of every agent at `state`.
    pub fn all_constraints(&self, state: &JointState) -> Vec<[f64; N_CONSTRAINTS]> {
        (0..state.n_agents()).map(|i| self.constraints(&self.observe(state, i))).collect()
    }

    /// Stage cost of applying `actions` (after clamping) at `state`.
    pub fn cost(&self, state: &JointState, actions: &[Vec2]) -> f64 {
        let n = state.n_agents() as f64;
        let control = |a: Vec2| {
            let u = self.clamp_action(a);
            u[0] * u[0] + u[1] * u[1]
        };
        let term = |d: f64, u2: f64| 0.01 * d + 0.001 * step_indicator(d - 0.01) + 0.0001 * u2;
        if self.spec.kind.is_reach() {
            state
                .agents
                .iter()
                .zip(&state.goals)
                .zip(actions)
                .map(|((a, &g), &u)| term(dist(a.pos(), g), control(u)))
                .sum::<f64>()
                / n
        } else {
            state
                .goals
                .iter()
                .zip(actions)
                .map(|(&g, &u)| {
                    let d = state
                        .agents
                        .iter()
                        .map(|a| dist(a.pos(), g))
                        .fold(f64::INFINITY, f64::min);
                    term(d, control(u))
                })
                .sum::<f64>()
                / n
        }
    }
}

/// `sign(relu(x))`: 1 for positive inputs, else 0.
fn step_indicator(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        0.0
    }
}

/// `n` points evenly spaced from `a` to `b`, endpoints included.
pub fn line_points(a: Vec2, b: Vec2, n: usize) -> Vec<Vec2> {
    if n == 1 {
        return vec![[(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0]];
    }
    (0..n)
        .map(|j| {
            let t = j as f64 / (n - 1) as f64;
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect()
}
