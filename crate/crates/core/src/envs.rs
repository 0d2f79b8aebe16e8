//! Toy continuous navigation tasks with a car-like 2-d action.
//!
//! Three tasks share one arena and dynamics:
//!
//! * `Goal`: drive to a goal disc while avoiding hazard discs.
//! * `Circle`: drive counter-clockwise along a circle around the origin.
//! * `Button`: drive to the one of several buttons marked as the target.
//!
//! Observation layout (every feature scaled to roughly `[-1, 1]`):
//!
//! | index | feature |
//! |---|---|
//! | 0, 1 | sin, cos of heading |
//! | 2 | speed |
//! | 3, 4 | unit vector to the target in the body frame (goal, target button, or circle centre) |
//! | 5 | target distance / 3, clamped to 1 |
//! | 6..22 | 16-bin hazard pseudo-lidar, `min(1, hazard_radius / d)` within range 3, else 0 |
//! | Circle 22 | signed radial error `(r − R) / R`, clamped to `[-1, 1]` |
//! | Button 22..31 | per button: body-frame unit vector (2) and distance / 3 |
//! | Button 31..34 | one-hot target button |
//!
//! Lidar bin `k` covers body-frame bearings `[k, k+1)·2π/16` measured
//! counter-clockwise from straight ahead, so a hazard due left is in bin 4.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::Observation;
use crate::seed;

pub const LIDAR_BINS: usize = 16;
pub const LIDAR_RANGE: f64 = 3.0;
const BASE_DIM: usize = 6 + LIDAR_BINS;
const STEP_COST: f64 = 0.01;
const GOAL_BONUS: f64 = 1.0;
const HAZARD_PENALTY: f64 = 0.5;
const BOUNDARY_PENALTY: f64 = 0.5;
const TURN_RATE: f64 = 2.0;
const PLACEMENT_ATTEMPTS: usize = 1000;
/// Objects are kept this far inside the arena wall.
const WALL_MARGIN: f64 = 0.5;
/// Extra gap between a hazard's edge and the start position.
const START_GAP: f64 = 1.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Task {
    Goal,
    Circle,
    Button,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Goal, Task::Circle, Task::Button];

    pub fn label(self) -> &'static str {
        match self {
            Task::Goal => "Goal",
            Task::Circle => "Circle",
            Task::Button => "Button",
        }
    }

    pub fn id(self) -> u64 {
        match self {
            Task::Goal => 1,
            Task::Circle => 2,
            Task::Button => 3,
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            Task::Goal => BASE_DIM,
            Task::Circle => BASE_DIM + 1,
            Task::Button => BASE_DIM + 12,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "goal" => Ok(Task::Goal),
            "circle" => Ok(Task::Circle),
            "button" => Ok(Task::Button),
            _ => Err(Error::InvalidConfig(format!("unknown task {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub task: Task,
    pub half_width: f64,
    pub dt: f64,
    pub horizon: usize,
    pub hazard_count: usize,
    pub hazard_radius: f64,
    pub goal_radius: f64,
    pub button_count: usize,
    pub circle_radius: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            task: Task::Goal,
            half_width: 3.0,
            dt: 0.1,
            horizon: 300,
            hazard_count: 4,
            hazard_radius: 0.4,
            goal_radius: 0.3,
            button_count: 3,
            circle_radius: 1.5,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("half_width", self.half_width),
            ("dt", self.dt),
            ("hazard_radius", self.hazard_radius),
            ("goal_radius", self.goal_radius),
            ("circle_radius", self.circle_radius),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if self.horizon < 1 {
            return Err(Error::InvalidConfig("horizon must be at least 1".into()));
        }
        if self.half_width <= WALL_MARGIN {
            return Err(Error::InvalidConfig(format!("half_width must exceed {WALL_MARGIN}")));
        }
        if self.task == Task::Button && self.button_count != 3 {
            // the observation layout reserves exactly three button slots
            return Err(Error::InvalidConfig("Button task needs button_count = 3".into()));
        }
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.task.obs_dim()
    }

    /// Half-width of the box outside which the Circle task is penalised.
    pub fn circle_boundary(&self) -> f64 {
        (self.circle_radius + 0.5).min(self.half_width)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub position: [f64; 2],
    /// Radians in `[-π, π)`.
    pub heading: f64,
    pub speed: f64,
    pub goal: [f64; 2],
    pub buttons: Vec<[f64; 2]>,
    pub target_button: usize,
    pub hazards: Vec<[f64; 2]>,
    pub t: usize,
}

impl EnvState {
    /// Point the agent is rewarded for approaching.
    pub fn target(&self, task: Task) -> [f64; 2] {
        match task {
            Task::Goal => self.goal,
            Task::Circle => [0.0, 0.0],
            Task::Button => self.buttons[self.target_button],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation<f64>,
    pub action: [f64; 2],
    pub reward: f64,
    pub next_obs: Observation<f64>,
    pub done: bool,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Wraps an angle into `[-π, π)`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// World-frame offset rotated into the agent's body frame.
fn to_body(offset: [f64; 2], heading: f64) -> [f64; 2] {
    let (s, c) = heading.sin_cos();
    [c * offset[0] + s * offset[1], -s * offset[0] + c * offset[1]]
}

fn compass(from: [f64; 2], to: [f64; 2], heading: f64) -> [f64; 2] {
    let d = dist(from, to);
    if d == 0.0 {
        return [0.0, 0.0];
    }
    to_body([(to[0] - from[0]) / d, (to[1] - from[1]) / d], heading)
}

/// Lidar bin for a body-frame bearing.
pub fn lidar_bin(bearing: f64) -> usize {
    let frac = bearing.rem_euclid(2.0 * PI) / (2.0 * PI);
    ((frac * LIDAR_BINS as f64) as usize).min(LIDAR_BINS - 1)
}

/// Samples the layout for one episode. The agent starts at the origin with
/// a uniform random heading; objects keep `hazard_radius + goal_radius`
/// clearance from each other and from the start, and hazards additionally
/// keep a gap of 1.5 between their edge and the start.
pub fn reset(cfg: &EnvConfig, episode_seed: u64) -> Result<(EnvState, Observation<f64>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(&[cfg.seed, cfg.task.id(), episode_seed]));
    let heading = rng.random_range(-PI..PI);
    let clearance = cfg.hazard_radius + cfg.goal_radius;
    let reach = cfg.half_width - WALL_MARGIN;
    let mut placed: Vec<[f64; 2]> = Vec::new();
    let mut place = |rng: &mut ChaCha8Rng, what: &'static str| -> Result<[f64; 2]> {
        let from_start = if what == "hazard" {
            clearance.max(cfg.hazard_radius + START_GAP)
        } else {
            clearance
        };
        for _ in 0..PLACEMENT_ATTEMPTS {
            let p = [rng.random_range(-reach..reach), rng.random_range(-reach..reach)];
            if dist(p, [0.0, 0.0]) >= from_start && placed.iter().all(|q| dist(p, *q) >= clearance) {
                placed.push(p);
                return Ok(p);
            }
        }
        Err(Error::Placement {
            what,
            attempts: PLACEMENT_ATTEMPTS,
        })
    };
    let mut state = EnvState {
        position: [0.0, 0.0],
        heading,
        speed: 0.0,
        goal: [0.0, 0.0],
        buttons: Vec::new(),
        target_button: 0,
        hazards: Vec::new(),
        t: 0,
    };
    match cfg.task {
        Task::Goal => state.goal = place(&mut rng, "goal")?,
        Task::Button => {
            for _ in 0..cfg.button_count {
                state.buttons.push(place(&mut rng, "button")?);
            }
            state.target_button = rng.random_range(0..cfg.button_count);
        }
        Task::Circle => {}
    }
    if cfg.task != Task::Circle {
        for _ in 0..cfg.hazard_count {
            state.hazards.push(place(&mut rng, "hazard")?);
        }
    }
    let obs = observe(cfg, &state);
    Ok((state, obs))
}

/// Observation for `state`; see the module docs for the layout.
pub fn observe(cfg: &EnvConfig, state: &EnvState) -> Observation<f64> {
    let mut o = Vec::with_capacity(cfg.obs_dim());
    let (s, c) = state.heading.sin_cos();
    o.extend([s, c, state.speed]);
    let target = state.target(cfg.task);
    o.extend(compass(state.position, target, state.heading));
    o.push((dist(state.position, target) / 3.0).min(1.0));
    let mut lidar = [0.0f64; LIDAR_BINS];
    for h in &state.hazards {
        let d = dist(state.position, *h);
        if d > LIDAR_RANGE {
            continue;
        }
        let rel = to_body([h[0] - state.position[0], h[1] - state.position[1]], state.heading);
        let bin = lidar_bin(rel[1].atan2(rel[0]));
        let value = if d == 0.0 { 1.0 } else { (cfg.hazard_radius / d).min(1.0) };
        lidar[bin] = lidar[bin].max(value);
    }
    o.extend(lidar);
    match cfg.task {
        Task::Goal => {}
        Task::Circle => {
            let r = dist(state.position, [0.0, 0.0]);
            o.push(((r - cfg.circle_radius) / cfg.circle_radius).clamp(-1.0, 1.0));
        }
        Task::Button => {
            for b in &state.buttons {
                o.extend(compass(state.position, *b, state.heading));
                o.push((dist(state.position, *b) / 3.0).min(1.0));
            }
            for i in 0..state.buttons.len() {
                o.push(if i == state.target_button { 1.0 } else { 0.0 });
            }
        }
    }
    Observation::new(o).expect("observation features are finite")
}

fn in_hazard(cfg: &EnvConfig, state: &EnvState) -> bool {
    state
        .hazards
        .iter()
        .any(|h| dist(state.position, *h) < cfg.hazard_radius)
}

/// Advances `state` by one step under `action = (velocity_cmd, steering_cmd)`,
/// each clamped to `[-1, 1]`.
pub fn step(cfg: &EnvConfig, state: &mut EnvState, action: &[f64]) -> Result<Transition> {
    if action.len() != 2 {
        return Err(Error::DimMismatch {
            context: "env action",
            expected: 2,
            got: action.len(),
        });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::NonFinite("env action".into()));
    }
    let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
    let obs = observe(cfg, state);
    let target = state.target(cfg.task);
    let before = dist(state.position, target);

    state.heading = wrap_angle(state.heading + a[1] * cfg.dt * TURN_RATE);
    state.speed = 0.9 * state.speed + 0.1 * a[0];
    let (s, c) = state.heading.sin_cos();
    let hw = cfg.half_width;
    state.position = [
        (state.position[0] + state.speed * cfg.dt * c).clamp(-hw, hw),
        (state.position[1] + state.speed * cfg.dt * s).clamp(-hw, hw),
    ];
    state.t += 1;

    let mut reward;
    let mut reached = false;
    match cfg.task {
        Task::Goal | Task::Button => {
            let after = dist(state.position, target);
            reward = before - after - STEP_COST;
            if after <= cfg.goal_radius {
                reward += GOAL_BONUS;
                reached = true;
            }
            if in_hazard(cfg, state) {
                reward -= HAZARD_PENALTY;
            }
        }
        Task::Circle => {
            let [x, y] = state.position;
            let r = x.hypot(y);
            reward = 0.0;
            if r > 0.0 {
                // velocity projected on the counter-clockwise tangent
                let tangential = state.speed * (c * -y + s * x) / r;
                reward = tangential * (-(r - cfg.circle_radius).abs()).exp();
            }
            let bound = cfg.circle_boundary();
            if x.abs() > bound || y.abs() > bound {
                reward -= BOUNDARY_PENALTY;
            }
        }
    }
    let done = reached || state.t >= cfg.horizon;
    Ok(Transition {
        obs,
        action: a,
        reward,
        next_obs: observe(cfg, state),
        done,
    })
}

/// Owned environment instance for rollout loops.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    state: EnvState,
}

impl Env {
    pub fn new(cfg: EnvConfig, episode_seed: u64) -> Result<(Self, Observation<f64>)> {
        let (state, obs) = reset(&cfg, episode_seed)?;
        Ok((Self { cfg, state }, obs))
    }

    pub fn reset(&mut self, episode_seed: u64) -> Result<Observation<f64>> {
        let (state, obs) = reset(&self.cfg, episode_seed)?;
        self.state = state;
        Ok(obs)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<Transition> {
        step(&self.cfg, &mut self.state, action)
    }

    pub fn observe(&self) -> Observation<f64> {
        observe(&self.cfg, &self.state)
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }
}

#[derive(Serialize)]
struct TraceRecord<'a> {
    t: usize,
    obs: &'a [f64],
    action: [f64; 2],
    reward: f64,
    done: bool,
}

/// Writes one JSON object per transition: `{t, obs, action, reward, done}`.
pub fn write_trace<W: Write>(mut out: W, transitions: &[Transition]) -> Result<()> {
    for (t, tr) in transitions.iter().enumerate() {
        let rec = TraceRecord {
            t,
            obs: tr.obs.as_slice(),
            action: tr.action,
            reward: tr.reward,
            done: tr.done,
        };
        serde_json::to_writer(&mut out, &rec)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_trace(path: &Path, transitions: &[Transition]) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trace(file, transitions)
}

/// Steers straight at the current target at full throttle, easing off
/// while the target is behind. Used as a scripted reference controller.
pub fn go_to_target(obs: &[f64]) -> [f64; 2] {
    let bearing = obs[4].atan2(obs[3]);
    let steer = (2.0 * bearing).clamp(-1.0, 1.0);
    let throttle = if obs[3] > 0.0 { 1.0 } else { 0.2 };
    [throttle, steer]
}
