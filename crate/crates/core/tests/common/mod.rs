#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tabletop_icl::model::{
    Action, Episode, GripperState, JointVelocities, ObjectObservation, Pose6, WorkspaceBounds,
};
use tabletop_icl::prompt::IclExample;
use tabletop_icl::{DiscreteAction, DiscretePose};

pub const GOLDEN_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

pub fn golden(name: &str) -> String {
    let path = format!("{GOLDEN_DIR}/{name}");
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

/// Random episode whose velocities hover around the keyframe threshold so
/// both branches of the criterion fire often.
pub fn random_episode(rng: &mut ChaCha8Rng) -> Episode {
    let len = rng.random_range(2..300);
    let mut gripper = GripperState::Open;
    let mut velocities = Vec::with_capacity(len);
    let mut actions = Vec::with_capacity(len);
    for _ in 0..len {
        let scale = match rng.random_range(0..4) {
            0 => 0.0,
            1 => 0.001,
            2 => 0.005,
            _ => 0.1,
        };
        let v: Vec<f64> = (0..7).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
        velocities.push(JointVelocities::new(&v).unwrap());
        if rng.random_bool(0.08) {
            gripper = match gripper {
                GripperState::Open => GripperState::Closed,
                GripperState::Closed => GripperState::Open,
            };
        }
        actions.push(Action::new(random_pose(rng), gripper));
    }
    let objects = vec![ObjectObservation::new("cube", random_pose(rng)).unwrap()];
    Episode::new("do something", objects, velocities, actions).unwrap()
}

pub fn random_pose(rng: &mut ChaCha8Rng) -> Pose6 {
    let b = WorkspaceBounds::default();
    let t = [0, 1, 2].map(|a| rng.random_range(b.min[a]..b.max[a]));
    let r = [0, 1, 2].map(|_| rng.random_range(-7.0..7.0));
    Pose6::from_parts(t, r).unwrap()
}

pub fn random_discrete_action(rng: &mut ChaCha8Rng) -> DiscreteAction {
    let pose = DiscretePose::new(
        [0, 1, 2].map(|_| rng.random_range(0..100)),
        [0, 1, 2].map(|_| rng.random_range(0..72)),
    )
    .unwrap();
    let g = if rng.random_bool(0.5) { GripperState::Open } else { GripperState::Closed };
    DiscreteAction::new(pose, g)
}

/// Literal reading of the keyframe criterion, written independently of the
/// library: t qualifies when sqrt(sum s_i^2) < delta or the gripper flips
/// between t and t + 1.
pub fn brute_force_qualifying(ep: &Episode, delta: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let n = ep.actions().len();
    for t in 0..n {
        let mut sq = 0.0;
        for s in ep.velocities()[t].values() {
            sq += s * s;
        }
        let still = sq.sqrt() < delta;
        let flips = t + 1 < n && ep.actions()[t].gripper != ep.actions()[t + 1].gripper;
        if still || flips {
            out.push(t);
        }
    }
    out
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn at(x: f64, y: f64, z: f64, yaw: f64) -> Pose6 {
    Pose6::new(x, y, z, 0.0, 0.0, yaw).unwrap()
}

const BASE_ACTIONS: [([f64; 3], GripperState, f64); 8] = [
    ([-0.305, 0.005, 0.4025], GripperState::Open, 0.0),
    ([-0.095, -0.105, 0.2025], GripperState::Open, 0.3),
    ([0.105, -0.205, 0.1025], GripperState::Open, 0.005),
    ([0.105, -0.205, 0.0225], GripperState::Open, 0.2),
    ([0.105, -0.205, 0.0225], GripperState::Closed, 0.0),
    ([0.185, 0.005, 0.1525], GripperState::Closed, 0.4),
    ([0.255, 0.155, 0.0625], GripperState::Closed, 0.3),
    ([0.255, 0.155, 0.0625], GripperState::Open, 0.0),
];

pub fn fixture_objects(dx: f64, dy: f64) -> Vec<ObjectObservation> {
    vec![
        ObjectObservation::new("blue cube", at(0.105 + dx, -0.205 + dy, 0.0225, 0.3)).unwrap(),
        ObjectObservation::new("yellow cube", at(0.255 + dx, 0.155 + dy, 0.0225, -0.4)).unwrap(),
    ]
}

/// Hand-written pick-and-place episode shifted in the plane by `(dx, dy)`.
pub fn fixture_episode(dx: f64, dy: f64, instruction: &str) -> Episode {
    let mut velocities = Vec::new();
    let mut actions = Vec::new();
    for ([x, y, z], g, speed) in BASE_ACTIONS {
        let mut v = [0.0; 7];
        v[0] = speed;
        velocities.push(JointVelocities::new(&v).unwrap());
        let pose = Pose6::new(x + dx, y + dy, z, 3.0, 0.0, 0.3).unwrap();
        actions.push(Action::new(pose, g));
    }
    Episode::new(instruction, fixture_objects(dx, dy), velocities, actions).unwrap()
}

/// Object poses of a fixture episode at timestep `t`: the blue cube rides
/// with the gripper from the grasp onward.
pub fn fixture_objects_at(ep: &Episode, t: usize) -> Option<Vec<ObjectObservation>> {
    let mut objects = ep.objects().to_vec();
    if t >= 4 {
        let p = ep.actions().get(t)?.pose;
        objects[0].pose = at(p.x(), p.y(), p.z(), 0.3);
    }
    Some(objects)
}

pub fn fixture_test_input() -> String {
    tabletop_icl::prompt::format_input(
        &fixture_objects(0.05, -0.1),
        "stack the blue cube on the yellow cube",
        &WorkspaceBounds::default(),
    )
    .unwrap()
}

pub fn fixture_demos() -> [Episode; 3] {
    [
        fixture_episode(0.0, 0.0, "stack the blue cube on the yellow cube"),
        fixture_episode(0.1, 0.05, "stack the yellow cube on the blue cube"),
        fixture_episode(-0.2, 0.1, "stack the blue cube on the yellow cube"),
    ]
}

pub fn fixture_examples(n: usize, closed: bool) -> Vec<IclExample> {
    use tabletop_icl::keyframe::extract_keyframes;
    use tabletop_icl::prompt::{build_closed_loop_example, build_icl_example};
    let b = WorkspaceBounds::default();
    fixture_demos()[..n]
        .iter()
        .map(|ep| {
            let kf = extract_keyframes(ep, 0.01).unwrap();
            if closed {
                build_closed_loop_example(ep, &kf, &b, |t| fixture_objects_at(ep, t)).unwrap()
            } else {
                build_icl_example(ep, &kf, &b).unwrap()
            }
        })
        .collect()
}
