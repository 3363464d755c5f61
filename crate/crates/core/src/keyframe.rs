//! Keyframe selection from joint-velocity and gripper signals, plus the
//! uniform-interval sampler used as an ablation baseline.

use crate::error::{Error, Result};
use crate::model::Episode;

/// Strictly increasing timestep indices into an episode, always ending at the
/// final frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyframeIndices(Vec<usize>);

impl KeyframeIndices {
    /// Validates ordering, range, and the final-frame rule against an episode
    /// of length `episode_len`.
    pub fn new(indices: Vec<usize>, episode_len: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::Validation("keyframe list is empty".into()));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Validation("keyframes must be strictly increasing".into()));
        }
        if *indices.last().unwrap() != episode_len.saturating_sub(1) {
            return Err(Error::Validation(format!(
                "last keyframe must be the final frame {}",
                episode_len.saturating_sub(1)
            )));
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[usize]> for KeyframeIndices {
    fn as_ref(&self) -> &[usize] {
        &self.0
    }
}

/// Timesteps satisfying the keyframe criterion before run-collapse: the
/// joint-velocity norm is below `delta`, or the gripper state differs from
/// the next timestep's.
pub fn qualifying_frames(episode: &Episode, delta: f64) -> Result<Vec<usize>> {
    check_delta(delta)?;
    let actions = episode.actions();
    Ok(episode
        .velocities()
        .iter()
        .enumerate()
        .filter(|&(t, s)| {
            s.norm() < delta
                || actions
                    .get(t + 1)
                    .is_some_and(|next| next.gripper != actions[t].gripper)
        })
        .map(|(t, _)| t)
        .collect())
}

/// Keyframes of an episode. Each maximal run of consecutive qualifying frames
/// contributes its last frame; the final frame is always included.
pub fn extract_keyframes(episode: &Episode, delta: f64) -> Result<KeyframeIndices> {
    let qualifying = qualifying_frames(episode, delta)?;
    let mut out = collapse_runs(&qualifying);
    let last = episode.len() - 1;
    if out.last() != Some(&last) {
        out.push(last);
    }
    Ok(KeyframeIndices(out))
}

/// Keeps the last index of every run of consecutive integers.
pub fn collapse_runs(sorted: &[usize]) -> Vec<usize> {
    sorted
        .iter()
        .enumerate()
        .filter(|&(i, &t)| sorted.get(i + 1) != Some(&(t + 1)))
        .map(|(_, &t)| t)
        .collect()
}

/// Every `interval`-th frame starting at 0, plus the final frame.
pub fn sample_uniform(episode_length: usize, interval: usize) -> Result<KeyframeIndices> {
    if interval == 0 {
        return Err(Error::Argument("sampling interval must be at least 1".into()));
    }
    if episode_length < 2 {
        return Err(Error::Argument(format!(
            "episode length {episode_length} < 2"
        )));
    }
    let mut out: Vec<usize> = (0..episode_length).step_by(interval).collect();
    if out.last() != Some(&(episode_length - 1)) {
        out.push(episode_length - 1);
    }
    Ok(KeyframeIndices(out))
}

fn check_delta(delta: f64) -> Result<()> {
    if delta.is_finite() && delta > 0.0 {
        Ok(())
    } else {
        Err(Error::Argument(format!("velocity threshold {delta} must be positive")))
    }
}
