//! Deterministic point-mass stand-ins for a driving simulator.
//!
//! Two scenarios ship: a lead vehicle braking in front of the ego vehicle, and
//! a pedestrian crossing in front of it. Both use explicit Euler integration
//! and never halt on contact: a negative gap encodes how deep the collision
//! went. The ego controller is a fixed stub that brakes at a constant rate
//! after a reaction delay.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, EvalError, Result};
use crate::scenario::{BlackBox, MeasureTrace, ParamSpace, ParamVector};

/// Parameters of the lead-vehicle braking scenario, in physical units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BrakingScenarioParams {
    /// m/s
    pub npc_speed: f64,
    /// m/s^2
    pub npc_decel: f64,
    /// m
    pub init_gap: f64,
    /// m/s
    pub ego_speed: f64,
    /// The ego starts reacting once the gap is at most this, m.
    pub trigger_gap: f64,
}

impl BrakingScenarioParams {
    pub const NAMES: [&'static str; 5] = [
        "npc_speed",
        "npc_decel",
        "init_gap",
        "ego_speed",
        "trigger_gap",
    ];
    pub const DEFAULTS: [f64; 5] = [10.0, 4.0, 20.0, 15.0, 20.0];

    fn from_slice(v: &[f64]) -> Self {
        Self {
            npc_speed: v[0],
            npc_decel: v[1],
            init_gap: v[2],
            ego_speed: v[3],
            trigger_gap: v[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.npc_speed >= 0.0
            && self.ego_speed >= 0.0
            && self.npc_decel > 0.0
            && self.init_gap > 0.0
            && self.trigger_gap >= 0.0
            && [self.npc_speed, self.npc_decel, self.init_gap, self.ego_speed, self.trigger_gap]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid braking parameters {self:?}")))
        }
    }
}

/// Parameters of the pedestrian-crossing scenario.
///
/// The ego drives along `+x` from the origin. The pedestrian stands at
/// `(crossing_x, ped_offset)` and walks across the ego's lane at `ped_speed`
/// once the ego is within `trigger_dist` of `crossing_x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossingParams {
    pub ego_speed: f64,
    pub ped_speed: f64,
    pub ped_offset: f64,
    pub trigger_dist: f64,
    pub crossing_x: f64,
}

impl CrossingParams {
    pub const NAMES: [&'static str; 5] = [
        "ego_speed",
        "ped_speed",
        "ped_offset",
        "trigger_dist",
        "crossing_x",
    ];
    pub const DEFAULTS: [f64; 5] = [10.0, 1.5, 4.0, 20.0, 40.0];

    fn from_slice(v: &[f64]) -> Self {
        Self {
            ego_speed: v[0],
            ped_speed: v[1],
            ped_offset: v[2],
            trigger_dist: v[3],
            crossing_x: v[4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.ego_speed >= 0.0
            && self.ped_speed >= 0.0
            && self.trigger_dist >= 0.0
            && [self.ego_speed, self.ped_speed, self.ped_offset, self.trigger_dist, self.crossing_x]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid crossing parameters {self:?}")))
        }
    }

    /// Unit direction of the pedestrian's walk along `y`: towards and then
    /// across the ego lane.
    pub fn walk_dir(&self) -> f64 {
        if self.ped_offset > 0.0 {
            -1.0
        } else {
            1.0
        }
    }
}

/// Stand-in for the system under test: constant-rate braking after a delay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoControllerStub {
    /// s
    pub reaction_delay: f64,
    /// m/s^2
    pub ego_decel: f64,
}

impl Default for EgoControllerStub {
    fn default() -> Self {
        Self {
            reaction_delay: 0.5,
            ego_decel: 6.0,
        }
    }
}

impl EgoControllerStub {
    pub fn validate(&self) -> Result<()> {
        if self.reaction_delay >= 0.0 && self.ego_decel > 0.0 && self.reaction_delay.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid controller {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimClock {
    pub dt: f64,
    pub t_max: f64,
}

impl Default for SimClock {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            t_max: 30.0,
        }
    }
}

impl SimClock {
    pub fn new(dt: f64, t_max: f64) -> Result<Self> {
        let clock = Self { dt, t_max };
        clock.validate()?;
        Ok(clock)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dt > 0.0 && self.dt <= 0.1 && self.t_max >= self.dt && self.t_max.is_finite() {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid clock {self:?}")))
        }
    }

    /// Maximum number of integration steps; traces hold at most one more value.
    pub fn max_steps(&self) -> usize {
        (self.t_max / self.dt + 1e-9).floor() as usize
    }

    /// Whole steps closest to `seconds`.
    fn steps_for(&self, seconds: f64) -> usize {
        (seconds / self.dt).round().max(0.0) as usize
    }
}

/// Streams the bumper gap of the braking scenario into `sink`.
fn run_braking(
    p: &BrakingScenarioParams,
    c: &EgoControllerStub,
    clock: &SimClock,
    mut sink: impl FnMut(f64),
) {
    let (mut x_npc, mut v_npc) = (p.init_gap, p.npc_speed);
    let (mut x_ego, mut v_ego) = (0.0, p.ego_speed);
    let delay_steps = clock.steps_for(c.reaction_delay);
    let mut brake_from = (p.init_gap <= p.trigger_gap).then_some(delay_steps);
    let dt = clock.dt;

    sink(x_npc - x_ego);
    for k in 0..clock.max_steps() {
        if v_npc == 0.0 && v_ego == 0.0 {
            break;
        }
        let a_ego = match brake_from {
            Some(s) if k >= s => c.ego_decel,
            _ => 0.0,
        };
        x_npc += v_npc * dt;
        x_ego += v_ego * dt;
        v_npc = (v_npc - p.npc_decel * dt).max(0.0);
        v_ego = (v_ego - a_ego * dt).max(0.0);

        let gap = x_npc - x_ego;
        sink(gap);
        if brake_from.is_none() && gap <= p.trigger_gap {
            brake_from = Some(k + 1 + delay_steps);
        }
    }
}

/// Gap trace of the braking scenario: the NPC brakes from `t = 0` until it
/// stops, the ego reacts once the gap drops to `trigger_gap`. The run ends
/// when both vehicles stand still or at `t_max`.
pub fn simulate_braking(
    p: &BrakingScenarioParams,
    c: &EgoControllerStub,
    clock: &SimClock,
) -> Result<MeasureTrace> {
    p.validate()?;
    c.validate()?;
    clock.validate()?;
    let mut values = Vec::new();
    run_braking(p, c, clock, |g| values.push(g));
    MeasureTrace::new(values)
}

/// Minimum gap of the continuous-time braking model.
///
/// Positions are closed-form piecewise quadratics, so the gap is piecewise
/// quadratic with breakpoints at the NPC stop time `t_npc = v_npc / a_npc`,
/// the ego brake onset `t_brake = t_trigger + delay` and the ego stop time
/// `t_ego = t_brake + v_ego / a_ego`. The cases:
///
/// - The ego never triggers (`ego_speed = 0` and `init_gap > trigger_gap`):
///   the NPC only moves away, the minimum is `init_gap`.
/// - The ego stops before the NPC (`t_ego <= t_npc`): the last segment is the
///   NPC alone decelerating, the gap is concave there and increasing
///   (the ego stands still, the NPC still moves forward).
/// - The NPC stops first: the gap keeps closing until the ego stops, and
///   while both brake the gap is convex with its vertex where speeds match.
///
/// Each segment is minimized at its endpoints or, when convex, at its vertex.
pub fn analytic_min_gap(p: &BrakingScenarioParams, c: &EgoControllerStub) -> f64 {
    let t_npc = p.npc_speed / p.npc_decel;
    let npc_pos = |t: f64| {
        let t = t.min(t_npc);
        p.init_gap + p.npc_speed * t - 0.5 * p.npc_decel * t * t
    };
    let npc_vel = |t: f64| (p.npc_speed - p.npc_decel * t).max(0.0);

    let t_trigger = if p.init_gap <= p.trigger_gap {
        Some(0.0)
    } else if p.ego_speed == 0.0 {
        None
    } else {
        // Before t_npc: a_npc/2 t^2 - (v_npc - v_ego) t - (gap0 - trigger) = 0,
        // positive root (the roots have opposite signs).
        let dv = p.npc_speed - p.ego_speed;
        let t1 = (dv + (dv * dv + 2.0 * p.npc_decel * (p.init_gap - p.trigger_gap)).sqrt())
            / p.npc_decel;
        if t1 <= t_npc {
            Some(t1)
        } else {
            Some((npc_pos(t_npc) - p.trigger_gap) / p.ego_speed)
        }
    };

    let Some(t_trigger) = t_trigger else {
        return p.init_gap;
    };
    let t_brake = t_trigger + c.reaction_delay;
    let t_ego = t_brake + p.ego_speed / c.ego_decel;
    let ego_pos = |t: f64| {
        if t <= t_brake {
            p.ego_speed * t
        } else {
            let s = t.min(t_ego) - t_brake;
            p.ego_speed * t_brake + p.ego_speed * s - 0.5 * c.ego_decel * s * s
        }
    };
    let ego_vel = |t: f64| {
        if t <= t_brake {
            p.ego_speed
        } else {
            (p.ego_speed - c.ego_decel * (t - t_brake)).max(0.0)
        }
    };
    let gap = |t: f64| npc_pos(t) - ego_pos(t);

    let end = t_npc.max(t_ego);
    let mut cuts = vec![0.0, t_npc, t_brake.min(end), t_ego, end];
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let mut best = gap(0.0).min(gap(end));
    for w in cuts.windows(2) {
        let (s0, s1) = (w[0], w[1]);
        if s1 <= s0 {
            continue;
        }
        best = best.min(gap(s0)).min(gap(s1));
        let mid = 0.5 * (s0 + s1);
        let npc_acc = if mid < t_npc { -p.npc_decel } else { 0.0 };
        let ego_acc = if mid > t_brake && mid < t_ego {
            -c.ego_decel
        } else {
            0.0
        };
        let curvature = npc_acc - ego_acc;
        if curvature > 0.0 {
            let slope = npc_vel(s0) - ego_vel(s0);
            let vertex = s0 - slope / curvature;
            if vertex > s0 && vertex < s1 {
                best = best.min(gap(vertex));
            }
        }
    }
    best
}

/// Pedestrian and ego positions over time in the crossing scenario; shared by
/// the integrator below.
fn run_crossing(
    p: &CrossingParams,
    c: &EgoControllerStub,
    clock: &SimClock,
    mut sink: impl FnMut(f64),
) {
    let dir = p.walk_dir();
    let (mut x_ego, mut v_ego) = (0.0f64, p.ego_speed);
    let mut y_ped = p.ped_offset;
    let dt = clock.dt;
    let delay_steps = clock.steps_for(c.reaction_delay);
    let moving = p.ped_speed > 0.0;

    let separation = |x_ego: f64, y_ped: f64| (p.crossing_x - x_ego).hypot(y_ped);
    let mut started = p.crossing_x - x_ego <= p.trigger_dist;
    let mut brake_from = (started && moving).then_some(delay_steps);

    sink(separation(x_ego, y_ped));
    for k in 0..clock.max_steps() {
        let ego_done = v_ego == 0.0 || x_ego >= p.crossing_x;
        let ped_done = !moving || (started && y_ped * dir >= 0.0) || (!started && v_ego == 0.0);
        if ego_done && ped_done {
            break;
        }
        let a_ego = match brake_from {
            Some(s) if k >= s => c.ego_decel,
            _ => 0.0,
        };
        x_ego += v_ego * dt;
        v_ego = (v_ego - a_ego * dt).max(0.0);
        if started {
            y_ped += dir * p.ped_speed * dt;
        }
        sink(separation(x_ego, y_ped));
        if !started && p.crossing_x - x_ego <= p.trigger_dist {
            started = true;
            if moving {
                brake_from = Some(k + 1 + delay_steps);
            }
        }
    }
}

/// Euclidean separation trace of the crossing scenario. The ego brakes
/// (after the reaction delay) only if the pedestrian actually walks.
pub fn simulate_crossing(
    p: &CrossingParams,
    c: &EgoControllerStub,
    clock: &SimClock,
) -> Result<MeasureTrace> {
    p.validate()?;
    c.validate()?;
    clock.validate()?;
    let mut values = Vec::new();
    run_crossing(p, c, clock, |g| values.push(g));
    MeasureTrace::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuiltinScenario {
    Braking,
    Crossing,
}

impl BuiltinScenario {
    pub fn parse(id: &str) -> Result<Self> {
        match id {
            "braking" => Ok(Self::Braking),
            "crossing" => Ok(Self::Crossing),
            other => Err(Error::UnknownScenario(other.to_string())),
        }
    }

    pub fn id(self) -> &'static str {
        match self {
            Self::Braking => "braking",
            Self::Crossing => "crossing",
        }
    }

    pub fn param_names(self) -> [&'static str; 5] {
        match self {
            Self::Braking => BrakingScenarioParams::NAMES,
            Self::Crossing => CrossingParams::NAMES,
        }
    }

    pub fn defaults(self) -> [f64; 5] {
        match self {
            Self::Braking => BrakingScenarioParams::DEFAULTS,
            Self::Crossing => CrossingParams::DEFAULTS,
        }
    }
}

/// Integration step of the builtin black boxes. Finer than [`SimClock`]'s
/// default so that fitness values agree with the analytic oracle to a few
/// millimetres.
pub const BUILTIN_DT: f64 = 1e-4;

/// `blackbox` section for `"kind": "builtin"`.
///
/// Scenario parameters that do not appear in the parameter space are held at
/// the value in `fixed` (or the scenario default). Space parameters whose
/// name starts with `weather` are inert pass-through dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuiltinConfig {
    pub scenario: BuiltinScenario,
    #[serde(default)]
    pub fixed: BTreeMap<String, f64>,
    #[serde(default)]
    pub controller: EgoControllerStub,
    #[serde(default = "builtin_clock")]
    pub clock: SimClock,
}

fn builtin_clock() -> SimClock {
    SimClock {
        dt: BUILTIN_DT,
        t_max: 30.0,
    }
}

impl BuiltinConfig {
    pub fn new(scenario: BuiltinScenario) -> Self {
        Self {
            scenario,
            fixed: BTreeMap::new(),
            controller: EgoControllerStub::default(),
            clock: builtin_clock(),
        }
    }

    /// Measure trace for all five scenario parameters given physically, in
    /// [`BuiltinScenario::param_names`] order.
    pub fn trace_physical(&self, values: &[f64]) -> Result<MeasureTrace> {
        if values.len() != 5 {
            return Err(Error::DimensionMismatch {
                expected: 5,
                got: values.len(),
            });
        }
        let c = &self.controller;
        match self.scenario {
            BuiltinScenario::Braking => {
                simulate_braking(&BrakingScenarioParams::from_slice(values), c, &self.clock)
            }
            BuiltinScenario::Crossing => {
                simulate_crossing(&CrossingParams::from_slice(values), c, &self.clock)
            }
        }
    }

    /// Same configuration with every fixed scenario parameter spelled out, so
    /// emitted scenario files record the defaults in force.
    pub fn resolved(&self, space: &ParamSpace) -> Self {
        let mut out = self.clone();
        let names = self.scenario.param_names();
        for (name, default) in names.iter().zip(self.scenario.defaults()) {
            if space.index_of(name).is_none() {
                out.fixed.entry(name.to_string()).or_insert(default);
            }
        }
        out
    }
}

/// Where each scenario parameter comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
enum Source {
    Space(usize),
    Fixed(f64),
}

/// `fitness_of_trace . simulate_* . denormalize` for a builtin scenario.
#[derive(Debug, Clone)]
pub struct BuiltinBlackBox {
    config: BuiltinConfig,
    space: ParamSpace,
    sources: [Source; 5],
}

impl BuiltinBlackBox {
    pub fn config(&self) -> &BuiltinConfig {
        &self.config
    }

    pub fn space(&self) -> &ParamSpace {
        &self.space
    }

    /// Physical scenario parameters for `theta`, in the scenario's own order.
    pub fn physical(&self, theta: &[f64]) -> Result<[f64; 5]> {
        let phys = self.space.denormalize(theta)?;
        Ok(self.sources.map(|s| match s {
            Source::Space(i) => phys[i],
            Source::Fixed(v) => v,
        }))
    }

    /// Full measure trace at `theta`.
    pub fn trace(&self, theta: &[f64]) -> Result<MeasureTrace> {
        self.config.trace_physical(&self.physical(theta)?)
    }

    /// Closed-form minimum gap (braking only).
    pub fn analytic(&self, theta: &[f64]) -> Result<f64> {
        match self.config.scenario {
            BuiltinScenario::Braking => {
                let v = self.physical(theta)?;
                Ok(analytic_min_gap(
                    &BrakingScenarioParams::from_slice(&v),
                    &self.config.controller,
                ))
            }
            BuiltinScenario::Crossing => Err(Error::Config(
                "no closed-form oracle for the crossing scenario".into(),
            )),
        }
    }

    fn min_gap(&self, theta: &[f64]) -> Result<f64> {
        let v = self.physical(theta)?;
        let c = &self.config.controller;
        let clock = &self.config.clock;
        let mut min = f64::INFINITY;
        let mut bad = None;
        let mut index = 0usize;
        let mut sink = |g: f64| {
            if !g.is_finite() && bad.is_none() {
                bad = Some((index, g));
            }
            min = min.min(g);
            index += 1;
        };
        match self.config.scenario {
            BuiltinScenario::Braking => {
                let p = BrakingScenarioParams::from_slice(&v);
                p.validate()?;
                run_braking(&p, c, clock, &mut sink);
            }
            BuiltinScenario::Crossing => {
                let p = CrossingParams::from_slice(&v);
                p.validate()?;
                run_crossing(&p, c, clock, &mut sink);
            }
        }
        match bad {
            Some((index, value)) => Err(Error::NonFinite { index, value }),
            None => Ok(min),
        }
    }
}

impl BlackBox for BuiltinBlackBox {
    fn evaluate(&self, theta: &ParamVector) -> std::result::Result<f64, EvalError> {
        self.min_gap(theta).map_err(|e| EvalError::new(e.to_string()))
    }

    fn descriptor(&self) -> String {
        format!("builtin:{}", self.config.scenario.id())
    }
}

/// Builtin black box with default controller and clock.
pub fn builtin_blackbox(scenario_id: &str, space: &ParamSpace) -> Result<BuiltinBlackBox> {
    builtin_blackbox_with(&BuiltinConfig::new(BuiltinScenario::parse(scenario_id)?), space)
}

pub fn builtin_blackbox_with(config: &BuiltinConfig, space: &ParamSpace) -> Result<BuiltinBlackBox> {
    config.controller.validate()?;
    config.clock.validate()?;
    let names = config.scenario.param_names();
    for p in space.params() {
        if !names.contains(&p.name.as_str()) && !p.name.starts_with("weather") {
            return Err(Error::Config(format!(
                "parameter `{}` is not part of the {} scenario (expected one of {:?} or a weather_* dimension)",
                p.name,
                config.scenario.id(),
                names
            )));
        }
    }
    for key in config.fixed.keys() {
        if !names.contains(&key.as_str()) {
            return Err(Error::Config(format!("cannot fix unknown parameter `{key}`")));
        }
        if space.index_of(key).is_some() {
            return Err(Error::Config(format!(
                "`{key}` is both fixed and part of the parameter space"
            )));
        }
    }
    let defaults = config.scenario.defaults();
    let mut sources = [Source::Fixed(0.0); 5];
    for (k, name) in names.iter().enumerate() {
        sources[k] = match space.index_of(name) {
            Some(i) => Source::Space(i),
            None => Source::Fixed(config.fixed.get(*name).copied().unwrap_or(defaults[k])),
        };
    }
    Ok(BuiltinBlackBox {
        config: config.clone(),
        space: space.clone(),
        sources,
    })
}
