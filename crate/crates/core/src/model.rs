//! Domain types shared across the crate and the line-delimited episode file.
//!
//! Every type validates on construction and is immutable afterwards, so a
//! value that exists is a value that satisfies its invariants.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Wraps a finite angle into `[0, 2π)`.
pub fn normalize_angle(angle: f64) -> f64 {
    let wrapped = angle.rem_euclid(TAU);
    // rem_euclid can round up to exactly TAU for tiny negative inputs
    if wrapped >= TAU {
        0.0
    } else {
        wrapped
    }
}

/// Smallest absolute difference between two angles, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = normalize_angle(a - b);
    d.min(TAU - d)
}

/// Translation in meters plus roll/pitch/yaw Euler angles in radians, world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6 {
    translation: [f64; 3],
    rotation: [f64; 3],
}

impl Pose6 {
    pub fn new(x: f64, y: f64, z: f64, roll: f64, pitch: f64, yaw: f64) -> Result<Self> {
        Self::from_parts([x, y, z], [roll, pitch, yaw])
    }

    pub fn from_parts(translation: [f64; 3], rotation: [f64; 3]) -> Result<Self> {
        if let Some(v) = translation.iter().chain(&rotation).find(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("Pose6 component {v} is not finite")));
        }
        Ok(Self {
            translation,
            rotation: rotation.map(normalize_angle),
        })
    }

    /// Translation-only pose with zero rotation.
    pub fn at(x: f64, y: f64, z: f64) -> Result<Self> {
        Self::new(x, y, z, 0.0, 0.0, 0.0)
    }

    pub fn translation(&self) -> [f64; 3] {
        self.translation
    }

    pub fn rotation(&self) -> [f64; 3] {
        self.rotation
    }

    pub fn x(&self) -> f64 {
        self.translation[0]
    }

    pub fn y(&self) -> f64 {
        self.translation[1]
    }

    pub fn z(&self) -> f64 {
        self.translation[2]
    }

    pub fn roll(&self) -> f64 {
        self.rotation[0]
    }

    pub fn pitch(&self) -> f64 {
        self.rotation[1]
    }

    pub fn yaw(&self) -> f64 {
        self.rotation[2]
    }

    /// `[x, y, z, roll, pitch, yaw]`
    pub fn to_array(&self) -> [f64; 6] {
        let [x, y, z] = self.translation;
        let [r, p, w] = self.rotation;
        [x, y, z, r, p, w]
    }

    pub fn from_array(v: [f64; 6]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    pub fn with_translation(&self, translation: [f64; 3]) -> Result<Self> {
        Self::from_parts(translation, self.rotation)
    }

    pub fn distance(&self, other: &Pose6) -> f64 {
        self.translation
            .iter()
            .zip(other.translation)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn xy_distance(&self, other: &Pose6) -> f64 {
        (self.x() - other.x()).hypot(self.y() - other.y())
    }
}

/// Binary gripper state. Encoded as `1` for open and `0` for closed everywhere,
/// including the episode file and the prompt grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GripperState {
    Open,
    Closed,
}

impl GripperState {
    pub fn bit(self) -> u8 {
        match self {
            GripperState::Open => 1,
            GripperState::Closed => 0,
        }
    }

    pub fn from_bit(bit: u8) -> Result<Self> {
        match bit {
            1 => Ok(GripperState::Open),
            0 => Ok(GripperState::Closed),
            other => Err(Error::Validation(format!("gripper bit {other} is not 0 or 1"))),
        }
    }
}

/// End-effector command: target pose plus gripper state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Action {
    pub pose: Pose6,
    pub gripper: GripperState,
}

impl Action {
    pub fn new(pose: Pose6, gripper: GripperState) -> Self {
        Self { pose, gripper }
    }
}

pub const JOINT_COUNT: usize = 7;

/// One timestep of arm joint velocities in rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointVelocities([f64; JOINT_COUNT]);

impl JointVelocities {
    pub fn new(values: &[f64]) -> Result<Self> {
        if values.len() != JOINT_COUNT {
            return Err(Error::Validation(format!(
                "JointVelocities length {} ≠ {JOINT_COUNT}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("JointVelocities contains a non-finite value".into()));
        }
        let mut arr = [0.0; JOINT_COUNT];
        arr.copy_from_slice(values);
        Ok(Self(arr))
    }

    pub fn zero() -> Self {
        Self([0.0; JOINT_COUNT])
    }

    pub fn values(&self) -> &[f64; JOINT_COUNT] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectObservation {
    pub name: String,
    pub pose: Pose6,
}

impl ObjectObservation {
    pub fn new(name: impl Into<String>, pose: Pose6) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::Validation("object name is empty".into()));
        }
        Ok(Self { name, pose })
    }
}

/// A single demonstration: instruction, object poses at the first timestep, and
/// dense per-timestep joint velocities and end-effector actions.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    instruction: String,
    objects: Vec<ObjectObservation>,
    velocities: Vec<JointVelocities>,
    actions: Vec<Action>,
}

impl Episode {
    pub fn new(
        instruction: impl Into<String>,
        objects: Vec<ObjectObservation>,
        velocities: Vec<JointVelocities>,
        actions: Vec<Action>,
    ) -> Result<Self> {
        let instruction = instruction.into();
        if instruction.is_empty() {
            return Err(Error::Validation("instruction is empty".into()));
        }
        if objects.is_empty() {
            return Err(Error::Validation("episode has no objects".into()));
        }
        let mut seen = HashSet::new();
        for obj in &objects {
            if obj.name.is_empty() {
                return Err(Error::Validation("object name is empty".into()));
            }
            if !seen.insert(obj.name.as_str()) {
                return Err(Error::Validation(format!("duplicate object name {:?}", obj.name)));
            }
        }
        if velocities.len() != actions.len() {
            return Err(Error::Validation(format!(
                "velocities length {} ≠ actions length {}",
                velocities.len(),
                actions.len()
            )));
        }
        if actions.len() < 2 {
            return Err(Error::Validation(format!(
                "episode length {} < 2",
                actions.len()
            )));
        }
        Ok(Self {
            instruction,
            objects,
            velocities,
            actions,
        })
    }

    pub fn instruction(&self) -> &str {
        &self.instruction
    }

    pub fn objects(&self) -> &[ObjectObservation] {
        &self.objects
    }

    pub fn velocities(&self) -> &[JointVelocities] {
        &self.velocities
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    /// Always false; an episode holds at least two timesteps.
    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Same episode with the initial object observations replaced. Names and
    /// order must match the originals.
    pub fn with_objects(&self, objects: Vec<ObjectObservation>) -> Result<Self> {
        let same_roster = objects.len() == self.objects.len()
            && objects.iter().zip(&self.objects).all(|(a, b)| a.name == b.name);
        if !same_roster {
            return Err(Error::Validation("replacement objects change the roster".into()));
        }
        Ok(Self {
            objects,
            ..self.clone()
        })
    }
}

/// Checks that every episode lists the same object names in the same order.
pub fn check_consistent_roster(episodes: &[Episode]) -> Result<()> {
    let Some(first) = episodes.first() else {
        return Ok(());
    };
    let names: Vec<&str> = first.objects.iter().map(|o| o.name.as_str()).collect();
    for (i, ep) in episodes.iter().enumerate().skip(1) {
        let other: Vec<&str> = ep.objects.iter().map(|o| o.name.as_str()).collect();
        if other != names {
            return Err(Error::Validation(format!(
                "episode {i} object roster {other:?} differs from {names:?}"
            )));
        }
    }
    Ok(())
}

/// Per-axis translation range of the workspace, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkspaceBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl WorkspaceBounds {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        let bounds = Self { min, max };
        bounds.validate()?;
        Ok(bounds)
    }

    pub fn validate(&self) -> Result<()> {
        for axis in 0..3 {
            let (lo, hi) = (self.min[axis], self.max[axis]);
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::Validation(format!(
                    "workspace axis {axis}: min {lo} must be below max {hi}"
                )));
            }
        }
        Ok(())
    }

    pub fn span(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.min[a] && p[a] <= self.max[a])
    }

    /// Bounds grown by `fraction` of the span on both sides of every axis.
    pub fn inflated(&self, fraction: f64) -> Self {
        let mut out = *self;
        for a in 0..3 {
            let pad = self.span(a) * fraction;
            out.min[a] -= pad;
            out.max[a] += pad;
        }
        out
    }
}

impl Default for WorkspaceBounds {
    fn default() -> Self {
        Self {
            min: [-0.5, -0.5, 0.0],
            max: [0.5, 0.5, 0.5],
        }
    }
}

// On-disk records. Kept separate from the domain types so loading can report
// the offending line and field before invariants are checked.

#[derive(Serialize, Deserialize)]
struct ObjectRecord {
    name: String,
    pose: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ActionRecord {
    pose: Vec<f64>,
    gripper: u8,
}

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    instruction: String,
    objects: Vec<ObjectRecord>,
    velocities: Vec<Vec<f64>>,
    actions: Vec<ActionRecord>,
}

impl From<&Episode> for EpisodeRecord {
    fn from(ep: &Episode) -> Self {
        Self {
            instruction: ep.instruction.clone(),
            objects: ep
                .objects
                .iter()
                .map(|o| ObjectRecord {
                    name: o.name.clone(),
                    pose: o.pose.to_array().to_vec(),
                })
                .collect(),
            velocities: ep.velocities.iter().map(|v| v.values().to_vec()).collect(),
            actions: ep
                .actions
                .iter()
                .map(|a| ActionRecord {
                    pose: a.pose.to_array().to_vec(),
                    gripper: a.gripper.bit(),
                })
                .collect(),
        }
    }
}

fn pose_from_vec(field: &str, v: &[f64]) -> Result<Pose6> {
    let arr: [f64; 6] = v
        .try_into()
        .map_err(|_| Error::Validation(format!("{field} length {} ≠ 6", v.len())))?;
    Pose6::from_array(arr).map_err(|e| Error::Validation(format!("{field}: {e}")))
}

impl TryFrom<EpisodeRecord> for Episode {
    type Error = Error;

    fn try_from(rec: EpisodeRecord) -> Result<Self> {
        let objects = rec
            .objects
            .into_iter()
            .enumerate()
            .map(|(i, o)| {
                let pose = pose_from_vec(&format!("objects[{i}].pose"), &o.pose)?;
                ObjectObservation::new(o.name, pose)
            })
            .collect::<Result<Vec<_>>>()?;
        let velocities = rec
            .velocities
            .iter()
            .map(|v| JointVelocities::new(v))
            .collect::<Result<Vec<_>>>()?;
        let actions = rec
            .actions
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let pose = pose_from_vec(&format!("actions[{i}].pose"), &a.pose)?;
                let gripper = GripperState::from_bit(a.gripper)
                    .map_err(|e| Error::Validation(format!("actions[{i}].gripper: {e}")))?;
                Ok(Action::new(pose, gripper))
            })
            .collect::<Result<Vec<_>>>()?;
        Episode::new(rec.instruction, objects, velocities, actions)
    }
}

/// Serializes one episode to its single-line JSON record.
pub fn episode_to_line(episode: &Episode) -> String {
    serde_json::to_string(&EpisodeRecord::from(episode)).expect("episode record serializes")
}

/// Parses one JSON record line into a validated episode.
pub fn episode_from_line(line: &str) -> Result<Episode> {
    let rec: EpisodeRecord =
        serde_json::from_str(line).map_err(|e| Error::Validation(e.to_string()))?;
    Episode::try_from(rec)
}

/// Writes one JSON record per line. An empty list produces an empty file.
pub fn save_episodes(episodes: &[Episode], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for ep in episodes {
        writeln!(out, "{}", episode_to_line(ep)).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Reads an episode file. Blank lines are skipped; any other line that fails
/// to parse or validate aborts with its 1-based line number.
pub fn load_episodes(path: impl AsRef<Path>) -> Result<Vec<Episode>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut episodes = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ep = episode_from_line(&line).map_err(|e| Error::Persistence {
            path: path.to_path_buf(),
            line: idx + 1,
            message: match e {
                Error::Validation(m) => m,
                other => other.to_string(),
            },
        })?;
        episodes.push(ep);
    }
    Ok(episodes)
}
