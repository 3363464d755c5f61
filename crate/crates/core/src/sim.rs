//! Desk-scale kinematic tabletop simulator.
//!
//! The gripper teleports to each commanded pose. Closing near a cube grasps
//! it, opening drops it onto the highest cube beneath it or the table, and
//! entering a button's press zone without holding anything presses it. There
//! are no dynamics or collisions.

use std::f64::consts::{FRAC_PI_4, PI, TAU};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::llm::SEGMENT_SEPARATOR;
use crate::model::{
    Action, Episode, GripperState, JointVelocities, ObjectObservation, Pose6, WorkspaceBounds,
    JOINT_COUNT,
};

/// Geometry and tolerance constants. All lengths in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub cube_edge: f64,
    pub button_radius: f64,
    pub target_half_size: f64,
    /// Max gripper-to-cube-center distance at which closing grasps.
    pub grasp_threshold: f64,
    /// Gripper height above a button's base at or below which it presses.
    pub press_height: f64,
    /// Gripper height the expert uses when pressing.
    pub press_target_z: f64,
    /// Absolute height for approach and carry waypoints.
    pub hover_z: f64,
    pub min_separation: f64,
    pub max_placement_draws: u32,
    /// Vertical tolerance of the stacking and on-table predicates.
    pub height_tolerance: f64,
    /// Commands outside the bounds grown by this fraction are rejected.
    pub bounds_margin: f64,
    pub step_length: f64,
    pub dwell_steps: usize,
    /// Object placement region as fractions of the workspace span.
    pub region_x: [f64; 2],
    pub region_y: [f64; 2],
    /// Home position as fractions of the workspace span.
    pub home: [f64; 3],
    /// Distance from the stack at which the destack expert sets a cube down.
    pub destack_offset: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            cube_edge: 0.04,
            button_radius: 0.025,
            target_half_size: 0.05,
            grasp_threshold: 0.02,
            press_height: 0.01,
            press_target_z: 0.004,
            hover_z: 0.15,
            min_separation: 0.08,
            max_placement_draws: 1000,
            height_tolerance: 0.01,
            bounds_margin: 0.10,
            step_length: 0.02,
            dwell_steps: 3,
            region_x: [0.45, 0.85],
            region_y: [0.2, 0.8],
            home: [0.15, 0.5, 0.8],
            destack_offset: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskId {
    StackCube,
    DestackCube,
    PushButton,
    PushMultipleButtons,
    SlideBlock,
}

impl TaskId {
    pub const ALL: [TaskId; 5] = [
        TaskId::StackCube,
        TaskId::DestackCube,
        TaskId::PushButton,
        TaskId::PushMultipleButtons,
        TaskId::SlideBlock,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskId::StackCube => "stack-cube",
            TaskId::DestackCube => "destack-cube",
            TaskId::PushButton => "push-button",
            TaskId::PushMultipleButtons => "push-multiple-buttons",
            TaskId::SlideBlock => "slide-block",
        }
    }

    fn stream(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskId::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown task {s:?}")))
    }
}

pub const CUBE_COLORS: [&str; 2] = ["blue", "yellow"];
pub const BUTTON_COLORS: [&str; 4] = ["red", "yellow", "green", "blue"];
pub const MAX_BUTTON_SEQUENCE: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObjectKind {
    Cube { edge: f64 },
    Button { radius: f64, pressed: bool },
    /// Flat square target region lying on the table.
    Pad { half_size: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimObject {
    pub name: String,
    pub kind: ObjectKind,
    pub pose: Pose6,
    pub attached: bool,
    pub supported_by: Option<String>,
}

impl SimObject {
    fn cube_edge(&self) -> Option<f64> {
        match self.kind {
            ObjectKind::Cube { edge } => Some(edge),
            _ => None,
        }
    }

    pub fn is_pressed(&self) -> bool {
        matches!(self.kind, ObjectKind::Button { pressed: true, .. })
    }
}

/// Rigid attachment of a cube to the gripper.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Grasp {
    object: usize,
    offset: [f64; 3],
    yaw_offset: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub objects: Vec<SimObject>,
    pub gripper: Action,
    pub time: u64,
    /// Names of buttons in the order their presses occurred.
    pub press_log: Vec<String>,
    grasp: Option<Grasp>,
}

impl WorldState {
    pub fn object(&self, name: &str) -> Option<&SimObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn attached(&self) -> Option<&SimObject> {
        self.grasp.map(|g| &self.objects[g.object])
    }

    /// Current name and pose of every object, in roster order.
    pub fn observations(&self) -> Vec<ObjectObservation> {
        self.objects
            .iter()
            .map(|o| ObjectObservation {
                name: o.name.clone(),
                pose: o.pose,
            })
            .collect()
    }

    fn check_invariants(&self) -> Result<()> {
        let attached = self.objects.iter().filter(|o| o.attached).count();
        if attached > 1 {
            return Err(Error::Execution(format!("{attached} objects attached at once")));
        }
        if attached == 1 && self.gripper.gripper != GripperState::Closed {
            return Err(Error::Execution("object attached to an open gripper".into()));
        }
        Ok(())
    }
}

/// Which instance of a task is being asked for.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variation {
    /// Indices into [`CUBE_COLORS`].
    Stack { top: usize, bottom: usize },
    Destack { top: usize, bottom: usize },
    /// Index into [`BUTTON_COLORS`].
    Button(usize),
    /// Button indices in the order they must be pressed.
    Sequence(Vec<usize>),
    Slide,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub id: TaskId,
    pub instruction_template: String,
    pub roster: Vec<(String, ObjectKind)>,
}

impl TaskSpec {
    pub fn new(id: TaskId, cfg: &SimConfig) -> Self {
        let cube = ObjectKind::Cube { edge: cfg.cube_edge };
        let button = ObjectKind::Button {
            radius: cfg.button_radius,
            pressed: false,
        };
        let cubes = || CUBE_COLORS.iter().map(|c| (format!("{c} cube"), cube)).collect();
        let buttons = || {
            BUTTON_COLORS
                .iter()
                .map(|c| (format!("{c} button"), button))
                .collect()
        };
        let (template, roster) = match id {
            TaskId::StackCube => ("stack the {top} cube on the {bottom} cube", cubes()),
            TaskId::DestackCube => ("destack the {top} cube that is on the {bottom} cube", cubes()),
            TaskId::PushButton => ("push the {color} button", buttons()),
            TaskId::PushMultipleButtons => ("push the {color} button[, then push the {color} button]", buttons()),
            TaskId::SlideBlock => (
                "slide the block onto the target square",
                vec![
                    ("block".to_string(), cube),
                    (
                        "target square".to_string(),
                        ObjectKind::Pad {
                            half_size: cfg.target_half_size,
                        },
                    ),
                ],
            ),
        };
        Self {
            id,
            instruction_template: template.to_string(),
            roster,
        }
    }

    /// Every variation, in a fixed order. For the multi-button task these
    /// are the single-button sequences used as demonstrations.
    pub fn variations(&self) -> Vec<Variation> {
        match self.id {
            TaskId::StackCube => vec![
                Variation::Stack { top: 0, bottom: 1 },
                Variation::Stack { top: 1, bottom: 0 },
            ],
            TaskId::DestackCube => vec![
                Variation::Destack { top: 0, bottom: 1 },
                Variation::Destack { top: 1, bottom: 0 },
            ],
            TaskId::PushButton => (0..BUTTON_COLORS.len()).map(Variation::Button).collect(),
            TaskId::PushMultipleButtons => (0..BUTTON_COLORS.len())
                .map(|b| Variation::Sequence(vec![b]))
                .collect(),
            TaskId::SlideBlock => vec![Variation::Slide],
        }
    }

    fn sample_variation(&self, rng: &mut impl Rng) -> Variation {
        match self.id {
            TaskId::StackCube | TaskId::DestackCube => {
                let top = rng.random_range(0..CUBE_COLORS.len());
                let bottom = 1 - top;
                if self.id == TaskId::StackCube {
                    Variation::Stack { top, bottom }
                } else {
                    Variation::Destack { top, bottom }
                }
            }
            TaskId::PushButton => Variation::Button(rng.random_range(0..BUTTON_COLORS.len())),
            TaskId::PushMultipleButtons => {
                let n = rng.random_range(1..=MAX_BUTTON_SEQUENCE);
                Variation::Sequence(
                    (0..n)
                        .map(|_| rng.random_range(0..BUTTON_COLORS.len()))
                        .collect(),
                )
            }
            TaskId::SlideBlock => Variation::Slide,
        }
    }

    pub fn validate_variation(&self, v: &Variation) -> Result<()> {
        let ok = match (self.id, v) {
            (TaskId::StackCube, Variation::Stack { top, bottom })
            | (TaskId::DestackCube, Variation::Destack { top, bottom }) => {
                *top < CUBE_COLORS.len() && *bottom < CUBE_COLORS.len() && top != bottom
            }
            (TaskId::PushButton, Variation::Button(b)) => *b < BUTTON_COLORS.len(),
            (TaskId::PushMultipleButtons, Variation::Sequence(seq)) => {
                !seq.is_empty() && seq.iter().all(|&b| b < BUTTON_COLORS.len())
            }
            (TaskId::SlideBlock, Variation::Slide) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Predicate(format!("unknown variation {v:?} for task {}", self.id)))
        }
    }

    pub fn render_instruction(&self, v: &Variation) -> Result<String> {
        self.validate_variation(v)?;
        Ok(match v {
            Variation::Stack { top, bottom } => format!(
                "stack the {} cube on the {} cube",
                CUBE_COLORS[*top], CUBE_COLORS[*bottom]
            ),
            Variation::Destack { top, bottom } => format!(
                "destack the {} cube that is on the {} cube",
                CUBE_COLORS[*top], CUBE_COLORS[*bottom]
            ),
            Variation::Button(b) => format!("push the {} button", BUTTON_COLORS[*b]),
            Variation::Sequence(seq) => seq
                .iter()
                .map(|&b| format!("push the {} button", BUTTON_COLORS[b]))
                .collect::<Vec<_>>()
                .join(SEGMENT_SEPARATOR),
            Variation::Slide => self.instruction_template.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResetOutcome {
    pub world: WorldState,
    pub instruction: String,
    pub variation: Variation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    pub config: SimConfig,
    pub bounds: WorkspaceBounds,
}

impl Simulator {
    pub fn new(config: SimConfig, bounds: WorkspaceBounds) -> Result<Self> {
        bounds.validate()?;
        let c = &config;
        let positive = [
            c.cube_edge,
            c.button_radius,
            c.target_half_size,
            c.grasp_threshold,
            c.press_height,
            c.step_length,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::Config("geometry constants must be positive".into()));
        }
        if c.dwell_steps == 0 {
            return Err(Error::Config("dwell_steps must be at least 1".into()));
        }
        let frac_ok = |r: [f64; 2]| 0.0 <= r[0] && r[0] < r[1] && r[1] <= 1.0;
        if !frac_ok(c.region_x) || !frac_ok(c.region_y) {
            return Err(Error::Config("placement region fractions must lie in [0, 1]".into()));
        }
        let sim = Self { config, bounds };
        let home = sim.home_pose().translation();
        let hover_ok = sim.bounds.contains([home[0], home[1], sim.config.hover_z]);
        if !bounds.contains(home) || !hover_ok {
            return Err(Error::Config("home pose or hover height outside the workspace".into()));
        }
        Ok(sim)
    }

    pub fn task(&self, id: TaskId) -> TaskSpec {
        TaskSpec::new(id, &self.config)
    }

    /// Gripper pose at the start of every episode, pointing down.
    pub fn home_pose(&self) -> Pose6 {
        let b = &self.bounds;
        let h = self.config.home;
        let t = [0, 1, 2].map(|a| b.min[a] + h[a] * b.span(a));
        Pose6::from_parts(t, [PI, 0.0, 0.0]).expect("finite home pose")
    }

    fn region(&self) -> ([f64; 2], [f64; 2]) {
        let b = &self.bounds;
        let c = &self.config;
        let rx = c.region_x.map(|f| b.min[0] + f * b.span(0));
        let ry = c.region_y.map(|f| b.min[1] + f * b.span(1));
        (rx, ry)
    }

    fn in_region(&self, x: f64, y: f64) -> bool {
        let (rx, ry) = self.region();
        (rx[0]..=rx[1]).contains(&x) && (ry[0]..=ry[1]).contains(&y)
    }

    /// Fresh world for `task` with the variation drawn from `seed`.
    pub fn reset(&self, task: TaskId, seed: u64) -> Result<ResetOutcome> {
        self.reset_with(task, seed, None)
    }

    /// Fresh world whose layout depends only on `(task, seed)`. The variation
    /// is drawn from an independent stream unless given explicitly, so forcing
    /// a variation leaves the layout unchanged.
    pub fn reset_with(&self, task: TaskId, seed: u64, variation: Option<Variation>) -> Result<ResetOutcome> {
        let spec = self.task(task);
        let variation = match variation {
            Some(v) => {
                spec.validate_variation(&v)?;
                v
            }
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(task.stream() * 2 + 1);
                spec.sample_variation(&mut rng)
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(task.stream() * 2);

        // Destacking starts from a stack, which occupies one footprint.
        let footprints = match task {
            TaskId::DestackCube => 1,
            _ => spec.roster.len(),
        };
        let xy = self.place_footprints(footprints, &mut rng)?;
        let mut yaw = || rng.random_range(0.0..TAU);

        let mut objects = Vec::with_capacity(spec.roster.len());
        for (i, (name, kind)) in spec.roster.iter().enumerate() {
            let [x, y] = xy[i.min(footprints - 1)];
            let z = match kind {
                ObjectKind::Cube { edge } => edge / 2.0,
                _ => 0.0,
            };
            objects.push(SimObject {
                name: name.clone(),
                kind: *kind,
                pose: Pose6::new(x, y, z, 0.0, 0.0, yaw())?,
                attached: false,
                supported_by: None,
            });
        }
        if let Variation::Destack { top, bottom } = variation {
            let base = objects[bottom].clone();
            let base_top = base.pose.z() + base.cube_edge().unwrap_or(0.0) / 2.0;
            let top_obj = &mut objects[top];
            let half = top_obj.cube_edge().unwrap_or(0.0) / 2.0;
            top_obj.pose = top_obj
                .pose
                .with_translation([base.pose.x(), base.pose.y(), base_top + half])?;
            top_obj.supported_by = Some(base.name);
        }
        let world = WorldState {
            objects,
            gripper: Action::new(self.home_pose(), GripperState::Open),
            time: 0,
            press_log: Vec::new(),
            grasp: None,
        };
        Ok(ResetOutcome {
            instruction: spec.render_instruction(&variation)?,
            world,
            variation,
        })
    }

    fn place_footprints(&self, count: usize, rng: &mut impl Rng) -> Result<Vec<[f64; 2]>> {
        let (rx, ry) = self.region();
        let min_sep = self.config.min_separation;
        let mut placed: Vec<[f64; 2]> = Vec::with_capacity(count);
        let mut draws = 0;
        while placed.len() < count {
            if draws >= self.config.max_placement_draws {
                return Err(Error::Placement(format!(
                    "placed {} of {count} objects after {draws} draws",
                    placed.len()
                )));
            }
            draws += 1;
            let p = [rng.random_range(rx[0]..=rx[1]), rng.random_range(ry[0]..=ry[1])];
            if placed
                .iter()
                .all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= min_sep)
            {
                placed.push(p);
            }
        }
        Ok(placed)
    }

    /// Moves the gripper to `action.pose` in one macro-step, then applies the
    /// grasp, release and press rules.
    pub fn execute_action(&self, world: &WorldState, action: &Action) -> Result<WorldState> {
        let limits = self.bounds.inflated(self.config.bounds_margin);
        if !limits.contains(action.pose.translation()) {
            return Err(Error::Execution(format!(
                "target {:?} outside the workspace",
                action.pose.translation()
            )));
        }
        let mut next = world.clone();
        let previous = world.gripper;
        next.gripper = *action;
        next.time += 1;

        if let Some(g) = next.grasp {
            self.carry(&mut next, g)?;
        }
        match (previous.gripper, action.gripper) {
            (GripperState::Open, GripperState::Closed) if next.grasp.is_none() => {
                self.try_grasp(&mut next)?;
            }
            (GripperState::Closed, GripperState::Open) => {
                if let Some(g) = next.grasp.take() {
                    next.objects[g.object].attached = false;
                    self.settle(&mut next, g.object)?;
                }
            }
            _ => {}
        }
        if next.grasp.is_none() {
            self.press_buttons(&mut next, &previous.pose);
        }
        next.check_invariants()?;
        Ok(next)
    }

    fn carry(&self, world: &mut WorldState, g: Grasp) -> Result<()> {
        let gp = world.gripper.pose;
        let t = gp.translation();
        let obj = &mut world.objects[g.object];
        let r = obj.pose.rotation();
        obj.pose = Pose6::from_parts(
            [t[0] + g.offset[0], t[1] + g.offset[1], t[2] + g.offset[2]],
            [r[0], r[1], gp.yaw() + g.yaw_offset],
        )?;
        Ok(())
    }

    fn try_grasp(&self, world: &mut WorldState) -> Result<()> {
        let gp = world.gripper.pose;
        let nearest = world
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.cube_edge().is_some() && !o.attached)
            .map(|(i, o)| (o.pose.distance(&gp), i))
            .filter(|&(d, _)| d <= self.config.grasp_threshold)
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((_, idx)) = nearest else {
            return Ok(());
        };
        let name = world.objects[idx].name.clone();
        let op = world.objects[idx].pose;
        let (o, g) = (op.translation(), gp.translation());
        world.grasp = Some(Grasp {
            object: idx,
            offset: [o[0] - g[0], o[1] - g[1], o[2] - g[2]],
            yaw_offset: op.yaw() - gp.yaw(),
        });
        let obj = &mut world.objects[idx];
        obj.attached = true;
        obj.supported_by = None;
        // Anything resting on the lifted cube drops to whatever lies below.
        let riders: Vec<usize> = world
            .objects
            .iter()
            .enumerate()
            .filter(|(_, o)| o.supported_by.as_deref() == Some(name.as_str()))
            .map(|(i, _)| i)
            .collect();
        for i in riders {
            world.objects[i].supported_by = None;
            self.settle(world, i)?;
        }
        Ok(())
    }

    /// Drops a released cube onto the highest cube top beneath its center, or
    /// the table.
    fn settle(&self, world: &mut WorldState, idx: usize) -> Result<()> {
        let obj = &world.objects[idx];
        let half = obj.cube_edge().unwrap_or(0.0) / 2.0;
        let support = world
            .objects
            .iter()
            .enumerate()
            .filter(|&(i, o)| i != idx && !o.attached)
            .filter_map(|(_, o)| {
                let edge = o.cube_edge()?;
                let top = o.pose.z() + edge / 2.0;
                let beneath = o.pose.xy_distance(&obj.pose) < edge / 2.0 && top <= obj.pose.z();
                beneath.then_some((top, o.name.clone()))
            })
            .max_by(|a, b| a.0.total_cmp(&b.0));
        let (z, supported_by) = match support {
            Some((top, name)) => (top + half, Some(name)),
            None => (half, None),
        };
        let obj = &mut world.objects[idx];
        obj.pose = obj.pose.with_translation([obj.pose.x(), obj.pose.y(), z])?;
        obj.supported_by = supported_by;
        Ok(())
    }

    fn in_press_zone(&self, button: &SimObject, gripper: &Pose6) -> bool {
        match button.kind {
            ObjectKind::Button { radius, .. } => {
                gripper.xy_distance(&button.pose) <= radius
                    && gripper.z() <= button.pose.z() + self.config.press_height
            }
            _ => false,
        }
    }

    fn press_buttons(&self, world: &mut WorldState, previous: &Pose6) {
        let now = world.gripper.pose;
        for i in 0..world.objects.len() {
            let entered = self.in_press_zone(&world.objects[i], &now)
                && !self.in_press_zone(&world.objects[i], previous);
            if entered {
                let obj = &mut world.objects[i];
                if let ObjectKind::Button { pressed, .. } = &mut obj.kind {
                    *pressed = true;
                }
                world.press_log.push(obj.name.clone());
            }
        }
    }

    pub fn check_success(&self, task: TaskId, world: &WorldState, variation: &Variation) -> Result<bool> {
        let spec = self.task(task);
        spec.validate_variation(variation)?;
        let get = |name: &str| {
            world
                .object(name)
                .ok_or_else(|| Error::Predicate(format!("world has no object {name:?}")))
        };
        let tol = self.config.height_tolerance;
        Ok(match variation {
            Variation::Stack { top, bottom } => {
                let t = get(&format!("{} cube", CUBE_COLORS[*top]))?;
                let b = get(&format!("{} cube", CUBE_COLORS[*bottom]))?;
                let (te, be) = (t.cube_edge().unwrap_or(0.0), b.cube_edge().unwrap_or(0.0));
                world.grasp.is_none()
                    && t.pose.xy_distance(&b.pose) < be / 2.0
                    && ((t.pose.z() - te / 2.0) - (b.pose.z() + be / 2.0)).abs() <= tol
            }
            Variation::Destack { top, .. } => {
                let t = get(&format!("{} cube", CUBE_COLORS[*top]))?;
                !t.attached && t.pose.z() <= t.cube_edge().unwrap_or(0.0) / 2.0 + tol
            }
            Variation::Button(b) => get(&format!("{} button", BUTTON_COLORS[*b]))?.is_pressed(),
            Variation::Sequence(seq) => {
                let expected: Vec<String> = seq
                    .iter()
                    .map(|&b| format!("{} button", BUTTON_COLORS[b]))
                    .collect();
                world.press_log == expected
            }
            Variation::Slide => {
                let block = get("block")?;
                let pad = get("target square")?;
                let ObjectKind::Pad { half_size } = pad.kind else {
                    return Err(Error::Predicate("target square is not a pad".into()));
                };
                let (dx, dy) = (block.pose.x() - pad.pose.x(), block.pose.y() - pad.pose.y());
                let (s, c) = pad.pose.yaw().sin_cos();
                let (lx, ly) = (c * dx + s * dy, -s * dx + c * dy);
                !block.attached
                    && block.pose.z() <= block.cube_edge().unwrap_or(0.0) / 2.0 + tol
                    && lx.abs() <= half_size
                    && ly.abs() <= half_size
            }
        })
    }

    /// Waypoints (pose, gripper) that solve the task from `world`.
    pub fn expert_waypoints(&self, task: TaskId, world: &WorldState, variation: &Variation) -> Result<Vec<Action>> {
        self.task(task).validate_variation(variation)?;
        let get = |name: String| {
            world
                .object(&name)
                .cloned()
                .ok_or_else(|| Error::Expert(format!("world has no object {name:?}")))
        };
        let hover = self.config.hover_z;
        let down = |x: f64, y: f64, z: f64, yaw: f64| Pose6::new(x, y, z, PI, 0.0, yaw);
        let open = GripperState::Open;
        let closed = GripperState::Closed;
        let mut wps = Vec::new();

        let mut pick_and_place = |src: &SimObject, dest: [f64; 3]| -> Result<()> {
            let (x, y, z, yaw) = (src.pose.x(), src.pose.y(), src.pose.z(), src.pose.yaw());
            wps.push(Action::new(down(x, y, hover, yaw)?, open));
            wps.push(Action::new(down(x, y, z, yaw)?, closed));
            wps.push(Action::new(down(x, y, hover, yaw)?, closed));
            wps.push(Action::new(down(dest[0], dest[1], hover, yaw)?, closed));
            wps.push(Action::new(down(dest[0], dest[1], dest[2], yaw)?, open));
            wps.push(Action::new(down(dest[0], dest[1], hover, yaw)?, open));
            Ok(())
        };

        match variation {
            Variation::Stack { top, bottom } => {
                let src = get(format!("{} cube", CUBE_COLORS[*top]))?;
                let dst = get(format!("{} cube", CUBE_COLORS[*bottom]))?;
                let half = src.cube_edge().unwrap_or(0.0) / 2.0;
                let dst_top = dst.pose.z() + dst.cube_edge().unwrap_or(0.0) / 2.0;
                pick_and_place(&src, [dst.pose.x(), dst.pose.y(), dst_top + half])?;
            }
            Variation::Destack { top, bottom } => {
                let src = get(format!("{} cube", CUBE_COLORS[*top]))?;
                let base = get(format!("{} cube", CUBE_COLORS[*bottom]))?;
                let [x, y] = self.free_spot(world, &base)?;
                pick_and_place(&src, [x, y, src.cube_edge().unwrap_or(0.0) / 2.0])?;
            }
            Variation::Slide => {
                let block = get("block".into())?;
                let pad = get("target square".into())?;
                let z = block.cube_edge().unwrap_or(0.0) / 2.0;
                pick_and_place(&block, [pad.pose.x(), pad.pose.y(), z])?;
            }
            Variation::Button(_) | Variation::Sequence(_) => {
                let seq = match variation {
                    Variation::Button(b) => vec![*b],
                    Variation::Sequence(s) => s.clone(),
                    _ => unreachable!(),
                };
                let mut last = None;
                for b in seq {
                    let btn = get(format!("{} button", BUTTON_COLORS[b]))?;
                    let (x, y) = (btn.pose.x(), btn.pose.y());
                    let press_z = btn.pose.z() + self.config.press_target_z;
                    wps.push(Action::new(down(x, y, hover, 0.0)?, open));
                    wps.push(Action::new(down(x, y, press_z, 0.0)?, open));
                    last = Some((x, y));
                }
                if let Some((x, y)) = last {
                    wps.push(Action::new(down(x, y, hover, 0.0)?, open));
                }
            }
        }
        wps.push(Action::new(self.home_pose(), GripperState::Open));
        Ok(wps)
    }

    /// Table spot near `base` for setting a destacked cube down: the first of
    /// eight compass directions that lands inside the placement region and
    /// clear of every other object.
    fn free_spot(&self, world: &WorldState, base: &SimObject) -> Result<[f64; 2]> {
        let r = self.config.destack_offset;
        (0..8)
            .map(|k| {
                let a = f64::from(k) * FRAC_PI_4;
                [base.pose.x() + r * a.cos(), base.pose.y() + r * a.sin()]
            })
            .find(|&[x, y]| {
                self.in_region(x, y)
                    && world.objects.iter().all(|o| {
                        (o.pose.x() - x).hypot(o.pose.y() - y) >= self.config.min_separation
                    })
            })
            .ok_or_else(|| Error::Expert("no free table spot for destacking".into()))
    }

    /// Dense demonstration: straight-line moves at `step_length` per step
    /// between waypoints, each followed by a dwell. Gripper changes happen on
    /// the second dwell step. The result is replayed and must succeed.
    pub fn scripted_expert(
        &self,
        task: TaskId,
        world: &WorldState,
        variation: &Variation,
        instruction: &str,
    ) -> Result<Episode> {
        let waypoints = self.expert_waypoints(task, world, variation)?;
        let actions = self.interpolate(world.gripper, &waypoints)?;
        let velocities = synth_joint_velocities(&actions);

        let mut replay = world.clone();
        for a in &actions {
            replay = self
                .execute_action(&replay, a)
                .map_err(|e| Error::Expert(format!("replay failed: {e}")))?;
        }
        if !self.check_success(task, &replay, variation)? {
            return Err(Error::Expert(format!("{task} demonstration does not succeed")));
        }
        Episode::new(instruction, world.observations(), velocities, actions)
    }

    fn interpolate(&self, start: Action, waypoints: &[Action]) -> Result<Vec<Action>> {
        let step = self.config.step_length;
        let mut out = vec![start];
        let mut current = start;
        for wp in waypoints {
            let from = current.pose.translation();
            let to = wp.pose.translation();
            let dist = current.pose.distance(&wp.pose);
            let n = (dist / step).ceil() as usize;
            for j in 1..=n {
                let f = j as f64 / n as f64;
                let t = [0, 1, 2].map(|a| from[a] + f * (to[a] - from[a]));
                out.push(Action::new(Pose6::from_parts(t, wp.pose.rotation())?, current.gripper));
            }
            for d in 0..self.config.dwell_steps {
                let g = if d == 0 && self.config.dwell_steps > 1 {
                    current.gripper
                } else {
                    wp.gripper
                };
                out.push(Action::new(wp.pose, g));
            }
            current = *wp;
        }
        Ok(out)
    }

    /// Object observations after each action of an episode replayed from
    /// `world`; index `t` holds the state after action `t`.
    pub fn observations_along(&self, world: &WorldState, actions: &[Action]) -> Result<Vec<Vec<ObjectObservation>>> {
        let mut state = world.clone();
        let mut out = Vec::with_capacity(actions.len());
        for a in actions {
            state = self.execute_action(&state, a)?;
            out.push(state.observations());
        }
        Ok(out)
    }
}

/// Per-step joint velocities whose norm equals the end-effector's
/// translational speed (meters per step); the first step is at rest.
pub fn synth_joint_velocities(trajectory: &[Action]) -> Vec<JointVelocities> {
    let scale = (JOINT_COUNT as f64).sqrt();
    let mut out = Vec::with_capacity(trajectory.len());
    let mut previous: Option<&Pose6> = None;
    for a in trajectory {
        let speed = previous.map_or(0.0, |p| p.distance(&a.pose));
        let v = [speed / scale; JOINT_COUNT];
        out.push(JointVelocities::new(&v).expect("finite speed"));
        previous = Some(&a.pose);
    }
    out
}

/// Base pose-estimation error magnitudes: 1.68 cm and 4.61°.
pub const BASE_SIGMA_TRANSLATION: f64 = 0.0168;
pub const BASE_SIGMA_ROTATION_DEG: f64 = 4.61;

/// Adds zero-mean Gaussian noise with standard deviation `k * base_sigma_t`
/// per translation axis and `k * base_sigma_r` per rotation axis.
pub fn add_pose_noise(
    obs: &[ObjectObservation],
    k: f64,
    base_sigma_t: f64,
    base_sigma_r: f64,
    seed: u64,
) -> Result<Vec<ObjectObservation>> {
    if !(k.is_finite() && k >= 0.0) {
        return Err(Error::Argument(format!("noise scale {k} must be ≥ 0")));
    }
    if !(base_sigma_t.is_finite() && base_sigma_t >= 0.0 && base_sigma_r.is_finite() && base_sigma_r >= 0.0) {
        return Err(Error::Argument("noise sigmas must be ≥ 0".into()));
    }
    if k == 0.0 {
        return Ok(obs.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nt = Normal::new(0.0, k * base_sigma_t).map_err(|e| Error::Argument(e.to_string()))?;
    let nr = Normal::new(0.0, k * base_sigma_r).map_err(|e| Error::Argument(e.to_string()))?;
    obs.iter()
        .map(|o| {
            let t = o.pose.translation().map(|v| v + nt.sample(&mut rng));
            let r = o.pose.rotation().map(|v| v + nr.sample(&mut rng));
            Ok(ObjectObservation {
                name: o.name.clone(),
                pose: Pose6::from_parts(t, r)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim() -> Simulator {
        Simulator::new(SimConfig::default(), WorkspaceBounds::default()).unwrap()
    }

    fn cube_world(sim: &Simulator) -> WorldState {
        sim.reset_with(TaskId::StackCube, 7, Some(Variation::Stack { top: 0, bottom: 1 }))
            .unwrap()
            .world
    }

    #[test]
    fn reset_is_deterministic() {
        let s = sim();
        for task in TaskId::ALL {
            assert_eq!(s.reset(task, 42).unwrap(), s.reset(task, 42).unwrap());
        }
    }

    #[test]
    fn forced_variation_keeps_layout() {
        let s = sim();
        let a = s.reset_with(TaskId::PushButton, 3, Some(Variation::Button(0))).unwrap();
        let b = s.reset_with(TaskId::PushButton, 3, Some(Variation::Button(2))).unwrap();
        assert_eq!(a.world, b.world);
        assert_eq!(b.instruction, "push the green button");
        assert!(s.reset_with(TaskId::PushButton, 3, Some(Variation::Button(9))).is_err());
        assert!(s.reset_with(TaskId::PushButton, 3, Some(Variation::Slide)).is_err());
    }

    #[test]
    fn instructions_render() {
        let s = sim();
        let spec = s.task(TaskId::StackCube);
        assert_eq!(
            spec.render_instruction(&Variation::Stack { top: 0, bottom: 1 }).unwrap(),
            "stack the blue cube on the yellow cube"
        );
        let spec = s.task(TaskId::DestackCube);
        assert_eq!(
            spec.render_instruction(&Variation::Destack { top: 1, bottom: 0 }).unwrap(),
            "destack the yellow cube that is on the blue cube"
        );
        let spec = s.task(TaskId::PushMultipleButtons);
        assert_eq!(
            spec.render_instruction(&Variation::Sequence(vec![0, 3])).unwrap(),
            "push the red button, then push the blue button"
        );
    }

    #[test]
    fn grasp_threshold() {
        let s = sim();
        let w = cube_world(&s);
        let cube = w.object("blue cube").unwrap().pose;
        let near = cube.with_translation([cube.x() + 0.019, cube.y(), cube.z()]).unwrap();
        let w1 = s.execute_action(&w, &Action::new(near, GripperState::Closed)).unwrap();
        assert_eq!(w1.attached().map(|o| o.name.as_str()), Some("blue cube"));

        let far = cube.with_translation([cube.x() + 0.021, cube.y(), cube.z()]).unwrap();
        let w2 = s.execute_action(&w, &Action::new(far, GripperState::Closed)).unwrap();
        assert!(w2.attached().is_none());
    }

    #[test]
    fn attached_cube_follows_and_settles_on_cube() {
        let s = sim();
        let w = cube_world(&s);
        let blue = w.object("blue cube").unwrap().pose;
        let yellow = w.object("yellow cube").unwrap().pose;
        let w = s.execute_action(&w, &Action::new(blue, GripperState::Closed)).unwrap();
        let above = Pose6::at(yellow.x() + 0.01, yellow.y(), 0.2).unwrap();
        let w = s.execute_action(&w, &Action::new(above, GripperState::Closed)).unwrap();
        let carried = w.object("blue cube").unwrap();
        assert!(carried.attached && (carried.pose.z() - 0.2).abs() < 1e-12);
        let w = s.execute_action(&w, &Action::new(above, GripperState::Open)).unwrap();
        let placed = w.object("blue cube").unwrap();
        assert_eq!(placed.supported_by.as_deref(), Some("yellow cube"));
        assert!((placed.pose.z() - 0.06).abs() < 1e-12);
        assert!(s.check_success(TaskId::StackCube, &w, &Variation::Stack { top: 0, bottom: 1 }).unwrap());
        assert!(!s.check_success(TaskId::StackCube, &w, &Variation::Stack { top: 1, bottom: 0 }).unwrap());
    }

    #[test]
    fn release_off_target_lands_on_table() {
        let s = sim();
        let w = cube_world(&s);
        let blue = w.object("blue cube").unwrap().pose;
        let w = s.execute_action(&w, &Action::new(blue, GripperState::Closed)).unwrap();
        let lifted = blue.with_translation([blue.x(), blue.y(), 0.3]).unwrap();
        let w = s.execute_action(&w, &Action::new(lifted, GripperState::Open)).unwrap();
        let c = w.object("blue cube").unwrap();
        assert!(c.supported_by.is_none() && (c.pose.z() - 0.02).abs() < 1e-12);
    }

    #[test]
    fn press_rule() {
        let s = sim();
        let w = s.reset_with(TaskId::PushButton, 1, Some(Variation::Button(0))).unwrap().world;
        let red = w.object("red button").unwrap().pose;
        let r = s.config.button_radius - 1e-6;
        let p = Pose6::at(red.x() + r, red.y(), 0.005).unwrap();
        let pressed = s.execute_action(&w, &Action::new(p, GripperState::Closed)).unwrap();
        assert!(pressed.object("red button").unwrap().is_pressed());
        assert_eq!(pressed.press_log, vec!["red button".to_string()]);

        let wide = Pose6::at(red.x() + s.config.button_radius + 1e-3, red.y(), 0.005).unwrap();
        let missed = s.execute_action(&w, &Action::new(wide, GripperState::Open)).unwrap();
        assert!(!missed.object("red button").unwrap().is_pressed());
        let high = Pose6::at(red.x(), red.y(), 0.011).unwrap();
        let hover = s.execute_action(&w, &Action::new(high, GripperState::Open)).unwrap();
        assert!(hover.press_log.is_empty());
    }

    #[test]
    fn out_of_bounds_command_fails() {
        let s = sim();
        let w = cube_world(&s);
        let inside = Pose6::at(0.59, 0.0, 0.1).unwrap();
        assert!(s.execute_action(&w, &Action::new(inside, GripperState::Open)).is_ok());
        let outside = Pose6::at(0.61, 0.0, 0.1).unwrap();
        assert!(matches!(
            s.execute_action(&w, &Action::new(outside, GripperState::Open)),
            Err(Error::Execution(_))
        ));
    }

    #[test]
    fn velocity_synthesis() {
        let p0 = Pose6::at(0.0, 0.0, 0.0).unwrap();
        let p1 = Pose6::at(0.02, 0.0, 0.0).unwrap();
        let traj = [p0, p0, p1, p1].map(|p| Action::new(p, GripperState::Open));
        let v = synth_joint_velocities(&traj);
        assert_eq!(v[0], JointVelocities::zero());
        assert_eq!(v[1].norm(), 0.0);
        assert!((v[2].norm() - 0.02).abs() < 1e-12);
        assert_eq!(v[3].norm(), 0.0);
    }

    #[test]
    fn noise_zero_scale_is_identity_and_negative_rejected() {
        let obs = vec![ObjectObservation::new("a", Pose6::new(0.1, 0.2, 0.3, 1.0, 2.0, 3.0).unwrap()).unwrap()];
        assert_eq!(add_pose_noise(&obs, 0.0, 0.0168, 0.08, 1).unwrap(), obs);
        assert!(add_pose_noise(&obs, -0.5, 0.0168, 0.08, 1).is_err());
        let a = add_pose_noise(&obs, 1.0, 0.0168, 0.08, 1).unwrap();
        let b = add_pose_noise(&obs, 1.0, 0.0168, 0.08, 1).unwrap();
        let c = add_pose_noise(&obs, 1.0, 0.0168, 0.08, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fresh_worlds_are_not_solved() {
        let s = sim();
        for task in TaskId::ALL {
            for seed in 0..20 {
                let r = s.reset(task, seed).unwrap();
                assert!(!s.check_success(task, &r.world, &r.variation).unwrap(), "{task} {seed}");
            }
        }
    }

    #[test]
    fn unknown_variation_is_predicate_error() {
        let s = sim();
        let r = s.reset(TaskId::StackCube, 0).unwrap();
        assert!(matches!(
            s.check_success(TaskId::StackCube, &r.world, &Variation::Button(0)),
            Err(Error::Predicate(_))
        ));
    }

    #[test]
    fn task_ids_parse() {
        for t in TaskId::ALL {
            assert_eq!(t.as_str().parse::<TaskId>().unwrap(), t);
        }
        assert!("fold-laundry".parse::<TaskId>().is_err());
    }
}
