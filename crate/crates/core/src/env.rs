//! Environments and expert data.
//!
//! Two worlds are provided:
//!
//! - **Sine**: one-step episodes with a 1-D state and action; experts follow
//!   `a = sin(20 pi s) + N(0, 0.05^2)` on a union of disjoint state intervals.
//! - **PointReach**: a point mass in `[-1, 1]^2` accelerating toward a goal.
//!   The 6-D state is `(position, velocity, goal)`.
//!
//! Expert demonstrations are stored as an [`ExpertDataset`] with a small
//! binary file format (`"DRLD"`).

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};
use crate::nn::ByteReader;
use crate::rng::Rng;

/// Anything that maps a state to an action deterministically.
pub trait Actor {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub done: bool,
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

pub const DATASET_MAGIC: [u8; 4] = *b"DRLD";
pub const DATASET_VERSION: u32 = 1;
pub const DATASET_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertDataset {
    pub state_dim: usize,
    pub action_dim: usize,
    pub transitions: Vec<Transition>,
}

impl ExpertDataset {
    pub fn new(state_dim: usize, action_dim: usize, transitions: Vec<Transition>) -> Result<Self> {
        let ds = Self {
            state_dim,
            action_dim,
            transitions,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Non-empty, consistent dims, finite values, last transition done.
    pub fn validate(&self) -> Result<()> {
        if self.transitions.is_empty() {
            return Err(Error::Invalid("expert dataset is empty".into()));
        }
        for t in &self.transitions {
            if t.state.len() != self.state_dim {
                return Err(Error::Dim {
                    context: "dataset state",
                    expected: self.state_dim,
                    actual: t.state.len(),
                });
            }
            if t.action.len() != self.action_dim {
                return Err(Error::Dim {
                    context: "dataset action",
                    expected: self.action_dim,
                    actual: t.action.len(),
                });
            }
            check_finite(&t.state, "dataset state")?;
            check_finite(&t.action, "dataset action")?;
        }
        if !self.transitions.last().is_some_and(|t| t.done) {
            return Err(Error::Invalid(
                "last dataset transition must end a trajectory".into(),
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn num_trajectories(&self) -> usize {
        self.transitions.iter().filter(|t| t.done).count()
    }

    /// The first `k` trajectories.
    pub fn truncate_trajectories(&self, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("cannot keep zero trajectories".into()));
        }
        let mut seen = 0;
        let end = self
            .transitions
            .iter()
            .position(|t| {
                if t.done {
                    seen += 1;
                }
                seen == k
            })
            .map_or(self.len(), |i| i + 1);
        Self::new(
            self.state_dim,
            self.action_dim,
            self.transitions[..end].to_vec(),
        )
    }

    /// At most `k` transitions, cut at the last trajectory boundary that fits.
    pub fn truncate_transitions(&self, k: usize) -> Result<Self> {
        let end = self.transitions[..k.min(self.len())]
            .iter()
            .rposition(|t| t.done)
            .map(|i| i + 1)
            .ok_or_else(|| {
                Error::Invalid(format!(
                    "no complete trajectory within the first {k} transitions"
                ))
            })?;
        Self::new(
            self.state_dim,
            self.action_dim,
            self.transitions[..end].to_vec(),
        )
    }

    pub fn file_size(&self) -> usize {
        DATASET_HEADER_LEN + self.len() * ((self.state_dim + self.action_dim) * 8 + 1)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.file_size());
        out.extend_from_slice(&DATASET_MAGIC);
        out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.state_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.action_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for t in &self.transitions {
            for v in t.state.iter().chain(&t.action) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(u8::from(t.done));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != DATASET_MAGIC {
            return Err(Error::BadMagic {
                expected: DATASET_MAGIC,
                found: magic.to_vec(),
            });
        }
        let version = r.u32()?;
        if version != DATASET_VERSION {
            return Err(Error::Version {
                expected: DATASET_VERSION,
                found: version,
            });
        }
        let state_dim = r.u32()? as usize;
        let action_dim = r.u32()? as usize;
        let n = r.u64()?;
        let record = ((state_dim + action_dim) * 8 + 1) as u64;
        let expected = DATASET_HEADER_LEN as u64 + n.saturating_mul(record);
        if (bytes.len() as u64) < expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len() as u64,
            });
        }
        if (bytes.len() as u64) > expected {
            return Err(Error::Format(format!(
                "{} trailing bytes after {n} transitions",
                bytes.len() as u64 - expected
            )));
        }
        let mut transitions = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let state = r.f64s(state_dim)?;
            let action = r.f64s(action_dim)?;
            let done = match r.u8()? {
                0 => false,
                1 => true,
                other => {
                    return Err(Error::Format(format!(
                        "done flag must be 0 or 1, got {other}"
                    )))
                }
            };
            transitions.push(Transition {
                state,
                action,
                done,
            });
        }
        Self::new(state_dim, action_dim, transitions)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

// ---------------------------------------------------------------------------
// Sine world
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SineWorldSpec {
    /// Angular frequency of the expert curve in `sin(frequency * s)`.
    pub frequency: f64,
    pub noise_std: f64,
    /// Disjoint sub-intervals of `[0, 1]` where expert states live.
    pub support: Vec<(f64, f64)>,
    /// Agent actions are clamped to `[-action_limit, action_limit]`.
    pub action_limit: f64,
    /// An action within this distance of the curve counts as a success.
    pub success_tolerance: f64,
}

impl Default for SineWorldSpec {
    fn default() -> Self {
        Self {
            frequency: 20.0 * PI,
            noise_std: 0.05,
            support: vec![(0.0, 0.2), (0.3, 0.5), (0.6, 0.8)],
            action_limit: 1.5,
            success_tolerance: 0.15,
        }
    }
}

impl SineWorldSpec {
    pub fn validate(&self) -> Result<()> {
        if self.support.is_empty() {
            return Err(Error::Invalid("sine support is empty".into()));
        }
        let mut sorted = self.support.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for &(lo, hi) in &sorted {
            if !(0.0 <= lo && lo < hi && hi <= 1.0) {
                return Err(Error::Invalid(format!(
                    "sine support interval [{lo}, {hi}] is not inside [0, 1]"
                )));
            }
        }
        if sorted.windows(2).any(|w| w[1].0 < w[0].1) {
            return Err(Error::Invalid("sine support intervals overlap".into()));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Invalid("sine noise_std must be >= 0".into()));
        }
        Ok(())
    }

    pub fn curve(&self, s: f64) -> f64 {
        (self.frequency * s).sin()
    }

    /// `s` uniform over the union of support intervals.
    pub fn sample_state(&self, rng: &mut Rng) -> f64 {
        let total: f64 = self.support.iter().map(|(lo, hi)| hi - lo).sum();
        let mut u = rng.random_range(0.0..total);
        for &(lo, hi) in &self.support {
            let w = hi - lo;
            if u < w {
                return lo + u;
            }
            u -= w;
        }
        let (_, hi) = self.support[self.support.len() - 1];
        hi
    }

    pub fn in_support(&self, s: f64) -> bool {
        self.support.iter().any(|&(lo, hi)| lo <= s && s <= hi)
    }
}

/// `n` one-step expert trajectories from the Sine world.
pub fn sine_expert_sample(spec: &SineWorldSpec, n: usize, rng: &mut Rng) -> Result<ExpertDataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::Invalid("need at least one expert sample".into()));
    }
    let transitions = (0..n)
        .map(|_| {
            let s = spec.sample_state(rng);
            let z: f64 = rng.sample(StandardNormal);
            Transition {
                state: vec![s],
                action: vec![spec.curve(s) + spec.noise_std * z],
                done: true,
            }
        })
        .collect();
    ExpertDataset::new(1, 1, transitions)
}

/// Axis-aligned lattice over the Sine `(s, a)` plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub s_min: f64,
    pub s_max: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for GridBounds {
    fn default() -> Self {
        Self {
            s_min: 0.0,
            s_max: 1.0,
            a_min: -1.5,
            a_max: 1.5,
        }
    }
}

/// `n` evenly spaced points over `[lo, hi]`, endpoints included.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { hi } else { lo + step * i as f64 })
        .collect()
}

/// Axes of the lattice: `(s_axis, a_axis)`.
pub fn sine_axes(s_res: usize, a_res: usize, bounds: GridBounds) -> Result<(Vec<f64>, Vec<f64>)> {
    if s_res < 2 || a_res < 2 {
        return Err(Error::Invalid(
            "grid resolution must be >= 2 per axis".into(),
        ));
    }
    Ok((
        linspace(bounds.s_min, bounds.s_max, s_res),
        linspace(bounds.a_min, bounds.a_max, a_res),
    ))
}

/// Row-major lattice points (s outer, a inner).
pub fn sine_grid(s_res: usize, a_res: usize, bounds: GridBounds) -> Result<Vec<(f64, f64)>> {
    let (s_axis, a_axis) = sine_axes(s_res, a_res, bounds)?;
    Ok(s_axis
        .iter()
        .flat_map(|&s| a_axis.iter().map(move |&a| (s, a)))
        .collect())
}

// ---------------------------------------------------------------------------
// PointReach
// ---------------------------------------------------------------------------

pub const ARENA: f64 = 1.0;
pub const MAX_SPEED: f64 = 0.2;
pub const ACCEL_GAIN: f64 = 0.05;
pub const SUCCESS_RADIUS: f64 = 0.1;
pub const HORIZON: usize = 200;
pub const EXPERT_KP: f64 = 4.0;
pub const EXPERT_KD: f64 = 6.0;

const START_CENTER: f64 = -0.7;
const GOAL_CENTER: f64 = 0.7;
const HALF_SPREAD: f64 = 0.2;

/// Wall segment for the walled variant: `|x| <= WALL_HALF_WIDTH`, `y <= WALL_TOP`.
pub const WALL_HALF_WIDTH: f64 = 0.05;
pub const WALL_TOP: f64 = 0.3;
const WALL_WAYPOINT: [f64; 2] = [-0.2, 0.6];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointReachState {
    pub position: [f64; 2],
    pub velocity: [f64; 2],
    pub goal: [f64; 2],
}

impl PointReachState {
    pub fn to_vec(&self) -> Vec<f64> {
        vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
            self.goal[0],
            self.goal[1],
        ]
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        if s.len() != 6 {
            return Err(Error::Dim {
                context: "point-reach state",
                expected: 6,
                actual: s.len(),
            });
        }
        Ok(Self {
            position: [s[0], s[1]],
            velocity: [s[2], s[3]],
            goal: [s[4], s[5]],
        })
    }

    pub fn goal_distance(&self) -> f64 {
        let dx = self.goal[0] - self.position[0];
        let dy = self.goal[1] - self.position[1];
        (dx * dx + dy * dy).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointReachConfig {
    /// Multiplies the spread of the start and goal distributions.
    pub noise_scale: f64,
    pub wall: bool,
    pub horizon: usize,
}

impl Default for PointReachConfig {
    fn default() -> Self {
        Self {
            noise_scale: 1.0,
            wall: false,
            horizon: HORIZON,
        }
    }
}

/// Start in `-0.7 +- 0.2 * noise_scale`, goal in `0.7 +- 0.2 * noise_scale`
/// (per coordinate), at rest.
pub fn point_reset(noise_scale: f64, rng: &mut Rng) -> Result<PointReachState> {
    if !(noise_scale >= 0.0 && noise_scale.is_finite()) {
        return Err(Error::Invalid(format!(
            "noise_scale must be finite and >= 0, got {noise_scale}"
        )));
    }
    let mut draw = |center: f64| {
        let u: f64 = rng.random_range(-1.0..=1.0);
        (center + noise_scale * HALF_SPREAD * u).clamp(-ARENA, ARENA)
    };
    let position = [draw(START_CENTER), draw(START_CENTER)];
    let goal = [draw(GOAL_CENTER), draw(GOAL_CENTER)];
    Ok(PointReachState {
        position,
        velocity: [0.0, 0.0],
        goal,
    })
}

fn crosses_wall(from: [f64; 2], to: [f64; 2]) -> bool {
    let inside = |p: [f64; 2]| p[0].abs() <= WALL_HALF_WIDTH && p[1] <= WALL_TOP;
    if inside(to) {
        return true;
    }
    // Jumped over the wall band in one step.
    let jumped = (from[0] < -WALL_HALF_WIDTH && to[0] > WALL_HALF_WIDTH)
        || (from[0] > WALL_HALF_WIDTH && to[0] < -WALL_HALF_WIDTH);
    if jumped {
        let t = (0.0 - from[0]) / (to[0] - from[0]);
        let y = from[1] + t * (to[1] - from[1]);
        return y <= WALL_TOP;
    }
    false
}

/// One integrator step. Returns the next state and whether the goal was reached.
pub fn point_step(
    state: &PointReachState,
    action: &[f64],
    wall: bool,
) -> Result<(PointReachState, bool)> {
    if action.len() != 2 {
        return Err(Error::Dim {
            context: "point-reach action",
            expected: 2,
            actual: action.len(),
        });
    }
    check_finite(action, "point-reach action")?;
    let mut next = *state;
    for (i, &raw) in action.iter().enumerate() {
        let a = raw.clamp(-1.0, 1.0);
        next.velocity[i] = (state.velocity[i] + ACCEL_GAIN * a).clamp(-MAX_SPEED, MAX_SPEED);
        next.position[i] = (state.position[i] + next.velocity[i]).clamp(-ARENA, ARENA);
    }
    if wall && crosses_wall(state.position, next.position) {
        next.position[0] = state.position[0];
        next.velocity[0] = 0.0;
    }
    let success = next.goal_distance() < SUCCESS_RADIUS;
    Ok((next, success))
}

/// PD controller `clamp(kp (target - p) - kd v)`; the target is the goal, or
/// a waypoint above the wall while the wall is in the way.
pub fn scripted_expert(state: &PointReachState, wall: bool) -> [f64; 2] {
    let target = if wall && state.position[0] < 0.0 && state.position[1] < WALL_WAYPOINT[1] - 0.15 {
        WALL_WAYPOINT
    } else {
        state.goal
    };
    let mut a = [0.0; 2];
    for i in 0..2 {
        a[i] = (EXPERT_KP * (target[i] - state.position[i]) - EXPERT_KD * state.velocity[i])
            .clamp(-1.0, 1.0);
    }
    a
}

/// The scripted controller as an [`Actor`] over flat states.
#[derive(Debug, Clone, Copy, Default)]
pub struct ScriptedExpert {
    pub wall: bool,
}

impl Actor for ScriptedExpert {
    fn act(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(scripted_expert(&PointReachState::from_slice(state)?, self.wall).to_vec())
    }
}

/// Episode-stateful point-reach environment.
#[derive(Debug, Clone, PartialEq)]
pub struct PointReach {
    pub config: PointReachConfig,
    pub state: PointReachState,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: Vec<f64>,
    /// Environment reward; 1 on success, else 0. Training never uses it.
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

impl PointReach {
    pub fn new(config: PointReachConfig, rng: &mut Rng) -> Result<Self> {
        let state = point_reset(config.noise_scale, rng)?;
        Ok(Self {
            config,
            state,
            steps: 0,
        })
    }

    pub fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>> {
        self.state = point_reset(self.config.noise_scale, rng)?;
        self.steps = 0;
        Ok(self.state.to_vec())
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        let (next, success) = point_step(&self.state, action, self.config.wall)?;
        self.state = next;
        self.steps += 1;
        Ok(StepOutcome {
            state: next.to_vec(),
            reward: if success { 1.0 } else { 0.0 },
            done: success || self.steps >= self.config.horizon,
            success,
        })
    }
}

/// Rolls the scripted expert and keeps `n` successful trajectories.
pub fn gen_expert_dataset(
    config: &PointReachConfig,
    n: usize,
    rng: &mut Rng,
) -> Result<ExpertDataset> {
    if n == 0 {
        return Err(Error::Invalid("need at least one expert trajectory".into()));
    }
    let mut env = PointReach::new(config.clone(), rng)?;
    let mut transitions = Vec::new();
    let mut kept = 0;
    let max_attempts = 10 * n;
    let mut attempts = 0;
    while kept < n && attempts < max_attempts {
        attempts += 1;
        let mut s = env.reset(rng)?;
        let mut episode = Vec::new();
        loop {
            let a = scripted_expert(&env.state, config.wall).to_vec();
            let out = env.step(&a)?;
            episode.push(Transition {
                state: s,
                action: a,
                done: out.done,
            });
            s = out.state;
            if out.done {
                if out.success {
                    transitions.extend(episode);
                    kept += 1;
                }
                break;
            }
        }
    }
    if kept < n {
        return Err(Error::Invalid(format!(
            "scripted expert succeeded in only {kept} of {attempts} episodes (needed {n}); controller misconfigured"
        )));
    }
    ExpertDataset::new(6, 2, transitions)
}

// ---------------------------------------------------------------------------
// Uniform env interface used by the trainer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Sine,
    PointReach,
}

impl EnvKind {
    pub const NAMES: [&'static str; 2] = ["sine", "point_reach"];

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "sine" => Some(EnvKind::Sine),
            "point_reach" | "point-reach" => Some(EnvKind::PointReach),
            _ => None,
        }
    }

    pub fn dims(self) -> (usize, usize) {
        match self {
            EnvKind::Sine => (1, 1),
            EnvKind::PointReach => (6, 2),
        }
    }
}

/// Sine world as a one-step episodic environment.
#[derive(Debug, Clone, PartialEq)]
pub struct SineEnv {
    pub spec: SineWorldSpec,
    pub state: f64,
}

impl SineEnv {
    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.len() != 1 {
            return Err(Error::Dim {
                context: "sine action",
                expected: 1,
                actual: action.len(),
            });
        }
        check_finite(action, "sine action")?;
        let a = action[0].clamp(-self.spec.action_limit, self.spec.action_limit);
        let err = (a - self.spec.curve(self.state)).abs();
        Ok(StepOutcome {
            state: vec![self.state],
            reward: -err,
            done: true,
            success: err < self.spec.success_tolerance,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub kind: EnvKind,
    pub point_reach: PointReachConfig,
    pub sine: SineWorldSpec,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            kind: EnvKind::PointReach,
            point_reach: PointReachConfig::default(),
            sine: SineWorldSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    Sine(SineEnv),
    PointReach(PointReach),
}

impl Env {
    pub fn new(config: &EnvConfig, rng: &mut Rng) -> Result<Self> {
        match config.kind {
            EnvKind::Sine => {
                config.sine.validate()?;
                let state = config.sine.sample_state(rng);
                Ok(Env::Sine(SineEnv {
                    spec: config.sine.clone(),
                    state,
                }))
            }
            EnvKind::PointReach => Ok(Env::PointReach(PointReach::new(
                config.point_reach.clone(),
                rng,
            )?)),
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        match self {
            Env::Sine(_) => EnvKind::Sine.dims(),
            Env::PointReach(_) => EnvKind::PointReach.dims(),
        }
    }

    pub fn reset(&mut self, rng: &mut Rng) -> Result<Vec<f64>> {
        match self {
            Env::Sine(e) => {
                e.state = e.spec.sample_state(rng);
                Ok(vec![e.state])
            }
            Env::PointReach(e) => e.reset(rng),
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        match self {
            Env::Sine(e) => vec![e.state],
            Env::PointReach(e) => e.state.to_vec(),
        }
    }

    /// The action the environment actually applies.
    pub fn clamp_action(&self, action: &[f64]) -> Vec<f64> {
        match self {
            Env::Sine(e) => action
                .iter()
                .map(|a| a.clamp(-e.spec.action_limit, e.spec.action_limit))
                .collect(),
            Env::PointReach(_) => action.iter().map(|a| a.clamp(-1.0, 1.0)).collect(),
        }
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        match self {
            Env::Sine(e) => e.step(action),
            Env::PointReach(e) => e.step(action),
        }
    }
}
