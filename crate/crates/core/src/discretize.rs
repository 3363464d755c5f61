//! Uniform binning of poses: 100 bins per translation axis across the
//! workspace span, 72 rotation bins of 5° each, and a binary gripper.

use crate::error::{Error, Result};
use crate::model::{normalize_angle, Action, GripperState, Pose6, WorkspaceBounds};

pub const TRANSLATION_BINS: u16 = 100;
pub const ROTATION_BINS: u16 = 72;
pub const ROTATION_BIN_DEGREES: f64 = 5.0;

/// Bin indices for one pose: `[tx, ty, tz]` in `[0, 100)` and `[rr, rp, ry]`
/// in `[0, 72)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DiscretePose {
    translation: [u16; 3],
    rotation: [u16; 3],
}

impl DiscretePose {
    pub fn new(translation: [u16; 3], rotation: [u16; 3]) -> Result<Self> {
        if let Some(b) = translation.iter().find(|&&b| b >= TRANSLATION_BINS) {
            return Err(Error::Validation(format!(
                "translation bin {b} outside [0, {TRANSLATION_BINS})"
            )));
        }
        if let Some(b) = rotation.iter().find(|&&b| b >= ROTATION_BINS) {
            return Err(Error::Validation(format!(
                "rotation bin {b} outside [0, {ROTATION_BINS})"
            )));
        }
        Ok(Self {
            translation,
            rotation,
        })
    }

    pub fn from_bins(bins: [u16; 6]) -> Result<Self> {
        Self::new([bins[0], bins[1], bins[2]], [bins[3], bins[4], bins[5]])
    }

    pub fn translation(&self) -> [u16; 3] {
        self.translation
    }

    pub fn rotation(&self) -> [u16; 3] {
        self.rotation
    }

    /// `[tx, ty, tz, rr, rp, ry]`
    pub fn bins(&self) -> [u16; 6] {
        let [a, b, c] = self.translation;
        let [d, e, f] = self.rotation;
        [a, b, c, d, e, f]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DiscreteAction {
    pub pose: DiscretePose,
    pub gripper: GripperState,
}

impl DiscreteAction {
    pub fn new(pose: DiscretePose, gripper: GripperState) -> Self {
        Self { pose, gripper }
    }

    /// Pose bins followed by the gripper bit.
    pub fn values(&self) -> [u16; 7] {
        let b = self.pose.bins();
        [b[0], b[1], b[2], b[3], b[4], b[5], u16::from(self.gripper.bit())]
    }
}

/// Bin index of `v` on an axis spanning `[axis_min, axis_max]`. Values outside
/// the span clamp to the boundary bins.
pub fn discretize_translation(v: f64, axis_min: f64, axis_max: f64) -> Result<u16> {
    if !v.is_finite() {
        return Err(Error::Argument(format!("translation {v} is not finite")));
    }
    if !(axis_min.is_finite() && axis_max.is_finite() && axis_min < axis_max) {
        return Err(Error::Argument(format!(
            "axis range [{axis_min}, {axis_max}] is empty"
        )));
    }
    let scaled = ((v - axis_min) / (axis_max - axis_min) * f64::from(TRANSLATION_BINS)).floor();
    Ok(scaled.clamp(0.0, f64::from(TRANSLATION_BINS - 1)) as u16)
}

/// Bin index of an angle after wrapping it into `[0°, 360°)`.
pub fn discretize_rotation(angle: f64) -> Result<u16> {
    if !angle.is_finite() {
        return Err(Error::Argument(format!("angle {angle} is not finite")));
    }
    let degrees = normalize_angle(angle).to_degrees();
    let bin = (degrees / ROTATION_BIN_DEGREES).floor() as u16;
    Ok(bin.min(ROTATION_BINS - 1))
}

pub fn discretize_pose(pose: &Pose6, bounds: &WorkspaceBounds) -> Result<DiscretePose> {
    let t = pose.translation();
    let mut translation = [0; 3];
    for axis in 0..3 {
        translation[axis] = discretize_translation(t[axis], bounds.min[axis], bounds.max[axis])?;
    }
    let r = pose.rotation();
    let rotation = [
        discretize_rotation(r[0])?,
        discretize_rotation(r[1])?,
        discretize_rotation(r[2])?,
    ];
    DiscretePose::new(translation, rotation)
}

pub fn discretize_action(action: &Action, bounds: &WorkspaceBounds) -> Result<DiscreteAction> {
    Ok(DiscreteAction::new(
        discretize_pose(&action.pose, bounds)?,
        action.gripper,
    ))
}

/// Continuous pose at the center of each bin.
pub fn dediscretize_pose(d: &DiscretePose, bounds: &WorkspaceBounds) -> Result<Pose6> {
    // Fields are private and validated, but a DiscretePose could in principle
    // be built against a different bin layout; recheck before decoding.
    let d = DiscretePose::new(d.translation, d.rotation)?;
    let translation = [0, 1, 2].map(|axis| {
        let width = bounds.span(axis) / f64::from(TRANSLATION_BINS);
        bounds.min[axis] + (f64::from(d.translation[axis]) + 0.5) * width
    });
    let rotation = d
        .rotation
        .map(|b| ((f64::from(b) + 0.5) * ROTATION_BIN_DEGREES).to_radians());
    Pose6::from_parts(translation, rotation)
}

pub fn dediscretize_action(d: &DiscreteAction, bounds: &WorkspaceBounds) -> Result<Action> {
    Ok(Action::new(dediscretize_pose(&d.pose, bounds)?, d.gripper))
}
