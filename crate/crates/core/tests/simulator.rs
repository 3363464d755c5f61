use tabletop_icl::keyframe::extract_keyframes;
use tabletop_icl::model::{GripperState, Pose6, WorkspaceBounds};
use tabletop_icl::sim::{SimConfig, Simulator, TaskId, Variation, MAX_BUTTON_SEQUENCE};

fn sim() -> Simulator {
    Simulator::new(SimConfig::default(), WorkspaceBounds::default()).unwrap()
}

#[test]
fn placement_keeps_minimum_separation() {
    let s = sim();
    for task in [TaskId::StackCube, TaskId::PushButton, TaskId::SlideBlock] {
        for seed in 0..1000 {
            let w = s.reset(task, seed).unwrap().world;
            for (i, a) in w.objects.iter().enumerate() {
                for b in &w.objects[i + 1..] {
                    assert!(a.pose.xy_distance(&b.pose) >= 0.08, "{task} seed {seed}");
                }
                assert_eq!(a.pose.roll(), 0.0);
                assert_eq!(a.pose.pitch(), 0.0);
            }
            assert_eq!(w.gripper.gripper, GripperState::Open);
            assert_eq!(w.gripper.pose, s.home_pose());
        }
    }
}

#[test]
fn multi_button_sequences_span_one_to_six() {
    let s = sim();
    let mut seen = [false; MAX_BUTTON_SEQUENCE + 1];
    for seed in 0..500 {
        let r = s.reset(TaskId::PushMultipleButtons, seed).unwrap();
        let Variation::Sequence(seq) = &r.variation else { panic!() };
        assert!((1..=MAX_BUTTON_SEQUENCE).contains(&seq.len()));
        assert_eq!(r.instruction.matches("push the").count(), seq.len());
        seen[seq.len()] = true;
    }
    assert!(seen[1..].iter().all(|&s| s));
}

#[test]
fn destack_starts_stacked() {
    let s = sim();
    let r = s
        .reset_with(TaskId::DestackCube, 4, Some(Variation::Destack { top: 0, bottom: 1 }))
        .unwrap();
    let top = r.world.object("blue cube").unwrap();
    let bottom = r.world.object("yellow cube").unwrap();
    assert_eq!(top.supported_by.as_deref(), Some("yellow cube"));
    assert!((top.pose.z() - 0.06).abs() < 1e-12);
    assert!(top.pose.xy_distance(&bottom.pose) < 1e-12);
}

#[test]
fn expert_episodes_replay_and_have_compact_keyframes() {
    let s = sim();
    for task in TaskId::ALL {
        for seed in 0..100 {
            let r = s.reset(task, seed).unwrap();
            let ep = s
                .scripted_expert(task, &r.world, &r.variation, &r.instruction)
                .unwrap_or_else(|e| panic!("{task} seed {seed}: {e}"));
            assert!(ep.len() >= 60, "{task} seed {seed}: length {}", ep.len());
            let kf = extract_keyframes(&ep, 0.01).unwrap();
            assert!(
                (5..=15).contains(&kf.len()),
                "{task} seed {seed}: {} keyframes",
                kf.len()
            );
            let mut world = r.world.clone();
            for &t in kf.as_slice() {
                world = s.execute_action(&world, &ep.actions()[t]).unwrap();
                assert!(world.objects.iter().filter(|o| o.attached).count() <= 1);
            }
            assert!(s.check_success(task, &world, &r.variation).unwrap(), "{task} seed {seed}");
        }
    }
}

#[test]
fn long_stack_episode_still_yields_few_keyframes() {
    let bounds = WorkspaceBounds::new([-1.0, -1.0, 0.0], [1.0, 1.0, 0.5]).unwrap();
    let s = Simulator::new(SimConfig::default(), bounds).unwrap();
    let mut r = s
        .reset_with(TaskId::StackCube, 0, Some(Variation::Stack { top: 0, bottom: 1 }))
        .unwrap();
    // Push the cubes to opposite corners of the placement region.
    let corners = [[0.7, -0.6], [-0.1, 0.6]];
    for (obj, [x, y]) in r.world.objects.iter_mut().zip(corners) {
        obj.pose = obj.pose.with_translation([x, y, obj.pose.z()]).unwrap();
    }
    let ep = s
        .scripted_expert(TaskId::StackCube, &r.world, &r.variation, &r.instruction)
        .unwrap();
    assert!(ep.len() > 200, "length {}", ep.len());
    let kf = extract_keyframes(&ep, 0.01).unwrap();
    assert!((5..=15).contains(&kf.len()), "{}", kf.len());
}

#[test]
fn push_button_expert_has_one_press_waypoint() {
    let s = sim();
    let r = s.reset_with(TaskId::PushButton, 9, Some(Variation::Button(1))).unwrap();
    let wps = s.expert_waypoints(TaskId::PushButton, &r.world, &r.variation).unwrap();
    let low: Vec<_> = wps.iter().filter(|a| a.pose.z() <= s.config.press_height).collect();
    assert_eq!(low.len(), 1);
    let ep = s
        .scripted_expert(TaskId::PushButton, &r.world, &r.variation, &r.instruction)
        .unwrap();
    let v = ep.velocities();
    let dwells = (1..v.len())
        .filter(|&t| v[t].norm() == 0.0 && v[t - 1].norm() > 0.0)
        .count();
    assert!(dwells >= 2, "{dwells}");
}

#[test]
fn wrong_press_order_fails() {
    let s = sim();
    let r = s
        .reset_with(TaskId::PushMultipleButtons, 2, Some(Variation::Sequence(vec![0, 3])))
        .unwrap();
    let swapped = Variation::Sequence(vec![3, 0]);
    let wps = s
        .expert_waypoints(TaskId::PushMultipleButtons, &r.world, &swapped)
        .unwrap();
    let mut world = r.world.clone();
    for a in &wps {
        world = s.execute_action(&world, a).unwrap();
    }
    assert!(world.object("red button").unwrap().is_pressed());
    assert!(world.object("blue button").unwrap().is_pressed());
    assert!(!s.check_success(TaskId::PushMultipleButtons, &world, &r.variation).unwrap());
    assert!(s.check_success(TaskId::PushMultipleButtons, &world, &swapped).unwrap());
}

#[test]
fn velocity_norm_tracks_speed() {
    let s = sim();
    let r = s.reset(TaskId::SlideBlock, 11).unwrap();
    let ep = s
        .scripted_expert(TaskId::SlideBlock, &r.world, &r.variation, &r.instruction)
        .unwrap();
    for t in 1..ep.len() {
        let speed = ep.actions()[t].pose.distance(&ep.actions()[t - 1].pose);
        assert!((ep.velocities()[t].norm() - speed).abs() < 1e-12);
        assert!(speed <= 0.02 + 1e-12);
    }
}

#[test]
fn observations_track_the_carried_cube() {
    let s = sim();
    let r = s.reset(TaskId::StackCube, 5).unwrap();
    let ep = s
        .scripted_expert(TaskId::StackCube, &r.world, &r.variation, &r.instruction)
        .unwrap();
    let along = s.observations_along(&r.world, ep.actions()).unwrap();
    assert_eq!(along.len(), ep.len());
    assert_eq!(along[0], r.world.observations());
    assert_ne!(along[ep.len() - 1], r.world.observations());
    let home = Pose6::from_parts(s.home_pose().translation(), s.home_pose().rotation()).unwrap();
    assert_eq!(ep.actions()[ep.len() - 1].pose, home);
}
