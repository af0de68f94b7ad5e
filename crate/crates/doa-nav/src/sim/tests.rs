use super::*;
use crate::rng::substream;

fn desk_config() -> WorldConfig {
    WorldConfig { num_classes: 8, ..WorldConfig::default() }
}

/// Hand-built rectangular world with no obstacles and explicit objects.
fn hand_world(
    w: usize,
    h: usize,
    objects: &[(usize, i32, i32, HeightBand)],
    tweak: impl FnOnce(&mut WorldConfig),
) -> World {
    let mut config = desk_config();
    config.grid_w = w;
    config.grid_h = h;
    config.obstacle_density = 0.0;
    config.conf_noise_sigma = 0.0;
    config.feature_noise_sigma = 0.0;
    config.image_noise_sigma = 0.0;
    tweak(&mut config);
    let objects = objects
        .iter()
        .map(|&(class_id, x, y, height_band)| ObjectInstance {
            class_id,
            x,
            y,
            height_band,
            size: config.base_size(class_id),
        })
        .collect();
    World { obstacles: vec![false; w * h], objects, config, seed: 0 }
}

#[test]
fn generation_is_deterministic() {
    let cfg = desk_config();
    let a = generate_world(42, &cfg).unwrap();
    let b = generate_world(42, &cfg).unwrap();
    assert_eq!(a, b);
    let c = generate_world(43, &cfg).unwrap();
    assert_ne!(a, c);
}

#[test]
fn generation_places_all_classes_on_free_distinct_cells() {
    let cfg = desk_config();
    for seed in 0..20 {
        let world = generate_world(seed, &cfg).unwrap();
        assert_eq!(world.objects.len(), cfg.num_classes);
        let mut cells = std::collections::HashSet::new();
        for obj in &world.objects {
            assert!(world.is_free(obj.x, obj.y));
            assert!(cells.insert((obj.x, obj.y)), "objects share a cell");
        }
        for class in 0..cfg.num_classes {
            assert!(world.has_class(class));
        }
    }
}

#[test]
fn block_affinity_clusters_related_classes() {
    // Two affinity blocks: classes 0-3 and 4-7. Measure how often each
    // instance has a same-block neighbour within 2 cells.
    let mut cfg = desk_config();
    let mut aff = vec![vec![0.0; 8]; 8];
    for i in 0..8 {
        for j in 0..8 {
            if i != j && (i < 4) == (j < 4) {
                aff[i][j] = 1.0;
            }
        }
    }
    cfg.class_affinity = Some(aff);

    let mut with_neighbor = 0usize;
    let mut total = 0usize;
    for seed in 0..100 {
        let world = generate_world(seed, &cfg).unwrap();
        for obj in &world.objects {
            total += 1;
            let near = world.objects.iter().any(|o| {
                o.class_id != obj.class_id
                    && (o.class_id < 4) == (obj.class_id < 4)
                    && (((o.x - obj.x).pow(2) + (o.y - obj.y).pow(2)) as f64).sqrt() <= 2.0
            });
            if near {
                with_neighbor += 1;
            }
        }
    }
    let freq = with_neighbor as f64 / total as f64;
    assert!(freq > 0.8, "same-block neighbour frequency {freq}");
}

#[test]
fn generation_fails_when_objects_cannot_fit() {
    let mut cfg = desk_config();
    cfg.grid_w = 3;
    cfg.grid_h = 3;
    cfg.num_classes = 20;
    assert!(matches!(generate_world(0, &cfg), Err(SimError::Infeasible(_))));
}

#[test]
fn obstacles_leave_free_region_connected() {
    let mut cfg = desk_config();
    cfg.obstacle_density = 0.3;
    for seed in 0..10 {
        let world = generate_world(seed, &cfg).unwrap();
        assert!(free_cells_connected(cfg.grid_w, cfg.grid_h, &world.obstacles));
    }
}

#[test]
fn episode_with_absent_target_is_rejected() {
    let world = hand_world(5, 5, &[(0, 2, 2, HeightBand::Mid)], |_| {});
    assert!(matches!(NavEnv::new(world, 3, 7), Err(SimError::TargetAbsent(3))));
}

#[test]
fn done_next_to_visible_target_succeeds() {
    let world = hand_world(5, 5, &[(7, 2, 2, HeightBand::Mid)], |_| {});
    let (mut env, _) = NavEnv::new(world.clone(), 7, 1).unwrap();
    // Force a pose adjacent to the target, facing it.
    let mut env2 = env.clone();
    env2 = NavEnv { state: AgentState { x: 1, y: 2, yaw: 0, pitch: Pitch::Level }, ..env2 };
    std::mem::swap(&mut env, &mut env2);
    let out = env.step(Action::Done).unwrap();
    assert!(out.success && out.done);
    assert_eq!(out.reward, 5.0);
}

#[test]
fn done_with_target_behind_agent_fails() {
    let world = hand_world(5, 5, &[(7, 2, 2, HeightBand::Mid)], |_| {});
    let (env, _) = NavEnv::new(world, 7, 1).unwrap();
    let mut env = NavEnv { state: AgentState { x: 1, y: 2, yaw: 180, pitch: Pitch::Level }, ..env };
    assert_eq!(env.world.dist_to_class(&env.state(), 7), 1.0);
    let out = env.step(Action::Done).unwrap();
    assert!(!out.success && out.done);
    assert_eq!(out.reward, env.world.config.reward_step);
}

#[test]
fn move_into_wall_is_a_collision_noop() {
    let world = hand_world(5, 5, &[(7, 2, 2, HeightBand::Mid)], |_| {});
    let (env, _) = NavEnv::new(world, 7, 1).unwrap();
    let mut env = NavEnv { state: AgentState { x: 0, y: 0, yaw: 180, pitch: Pitch::Level }, ..env };
    let out = env.step(Action::MoveAhead).unwrap();
    assert!(out.info.collided);
    assert_eq!((out.next_state.x, out.next_state.y), (0, 0));
}

#[test]
fn episode_truncates_at_max_steps_without_success() {
    let world = hand_world(5, 5, &[(7, 4, 4, HeightBand::Mid)], |c| c.max_steps = 4);
    let (env, _) = NavEnv::new(world, 7, 1).unwrap();
    let mut env = NavEnv { state: AgentState { x: 0, y: 0, yaw: 0, pitch: Pitch::Level }, ..env };
    for i in 0..4 {
        let out = env.step(Action::RotateLeft).unwrap();
        assert_eq!(out.done, i == 3);
        assert!(!out.success);
    }
    assert!(matches!(env.step(Action::RotateLeft), Err(SimError::EpisodeFinished)));
}

#[test]
fn observe_with_nothing_visible_is_all_zero() {
    let world = hand_world(9, 9, &[(7, 8, 8, HeightBand::Mid)], |c| c.view_range = 2.0);
    let state = AgentState { x: 0, y: 0, yaw: 0, pitch: Pitch::Level };
    let mut rng = substream(5, "obs", 0);
    let obs = observe(&world, &state, 7, &mut rng);
    assert_eq!(obs.detections.len(), world.config.num_classes);
    for det in &obs.detections {
        assert_eq!(det.conf, 0.0);
        assert!(det.visual.iter().all(|&v| v == 0.0));
        assert!(!det.target_flag);
    }
}

#[test]
fn ground_truth_mode_gives_exact_unit_confidence() {
    let world = hand_world(5, 5, &[(0, 3, 2, HeightBand::Mid)], |c| {
        c.ground_truth_detections = true;
        c.conf_noise_sigma = 0.05;
        c.feature_noise_sigma = 0.5;
    });
    let state = AgentState { x: 1, y: 2, yaw: 0, pitch: Pitch::Level };
    let mut rng = substream(6, "obs", 0);
    let obs = observe(&world, &state, 0, &mut rng);
    assert_eq!(obs.detections[0].conf, 1.0);
    assert_eq!(obs.detections[0].visual, class_signature(0, world.config.d_vis));
    assert!(obs.detections[0].target_flag);
}

#[test]
fn confidence_vanishes_at_view_range_and_decreases_with_distance() {
    let world = hand_world(9, 1, &[(7, 5, 0, HeightBand::Mid)], |c| c.view_range = 5.0);
    let mut prev = f64::INFINITY;
    for x in (0..=5).rev() {
        let state = AgentState { x, y: 0, yaw: 0, pitch: Pitch::Level };
        let mut rng = substream(7, "obs", 0);
        let obs = observe(&world, &state, 7, &mut rng);
        let conf = obs.detections[7].conf;
        assert!(conf <= prev + 1e-12, "conf not monotone at x={x}");
        prev = conf;
    }
    // At exactly view_range distance the noise-free confidence is zero.
    let state = AgentState { x: 0, y: 0, yaw: 0, pitch: Pitch::Level };
    let mut rng = substream(7, "obs", 1);
    let obs = observe(&world, &state, 7, &mut rng);
    assert_eq!(obs.detections[7].conf, 0.0);
}

#[test]
fn detection_rows_are_well_formed() {
    let cfg = desk_config();
    let world = generate_world(3, &cfg).unwrap();
    let mut rng = substream(8, "obs", 0);
    for trial in 0..50 {
        let free = world.free_cells();
        let (x, y) = free[trial % free.len()];
        let state = AgentState { x, y, yaw: 90, pitch: Pitch::Level };
        let obs = observe(&world, &state, trial % cfg.num_classes, &mut rng);
        assert_eq!(obs.image.len(), cfg.m_cells * cfg.d_img);
        assert_eq!(obs.detections.len(), cfg.num_classes);
        for (c, det) in obs.detections.iter().enumerate() {
            assert_eq!(det.class_id, c);
            assert!((0.0..=1.0).contains(&det.conf));
            assert!(det.bbox.iter().all(|b| (0.0..=1.0).contains(b)));
            assert_eq!(det.visual.len(), cfg.d_vis);
        }
    }
}

#[test]
fn engineered_visibility_bias_is_at_least_threefold() {
    // Average detection confidence of the most detectable class vs the
    // least detectable one over 1000 random observations.
    let cfg = desk_config();
    let mut rng = substream(99, "bias", 0);
    let mut sums = vec![0.0f64; cfg.num_classes];
    let mut count = 0;
    for seed in 0..25 {
        let world = generate_world(seed, &cfg).unwrap();
        let free = world.free_cells();
        for _ in 0..40 {
            let (x, y) = free[rng.random_range(0..free.len())];
            let yaw = [0u16, 90, 180, 270][rng.random_range(0..4)];
            let state = AgentState { x, y, yaw, pitch: Pitch::Level };
            let obs = observe(&world, &state, 0, &mut rng);
            for (c, det) in obs.detections.iter().enumerate() {
                sums[c] += det.conf;
            }
            count += 1;
        }
    }
    assert_eq!(count, 1000);
    let largest = sums[cfg.num_classes - 1] / count as f64;
    let smallest = sums[0] / count as f64;
    assert!(
        largest >= 3.0 * smallest,
        "bias ratio {:.2} (largest {largest:.4}, smallest {smallest:.4})",
        largest / smallest
    );
}

#[test]
fn identical_seeds_and_actions_replay_bit_exact() {
    let cfg = desk_config();
    let world = generate_world(11, &cfg).unwrap();
    let actions = [
        Action::MoveAhead,
        Action::RotateLeft,
        Action::MoveAhead,
        Action::LookDown,
        Action::MoveAhead,
        Action::RotateRight,
        Action::LookUp,
        Action::MoveAhead,
    ];
    let run = |world: World| {
        let (mut env, first) = NavEnv::new(world, 2, 31).unwrap();
        let mut trace = vec![first];
        let mut rewards = Vec::new();
        for &a in &actions {
            let out = env.step(a).unwrap();
            rewards.push(out.reward);
            trace.push(out.observation);
        }
        (trace, rewards, env.state())
    };
    let (t1, r1, s1) = run(world.clone());
    let (t2, r2, s2) = run(world);
    assert_eq!(s1, s2);
    assert_eq!(r1, r2);
    assert_eq!(t1, t2);
}

#[test]
fn success_implies_distance_within_threshold() {
    let cfg = desk_config();
    let mut rng = substream(13, "randomwalk", 0);
    for seed in 0..30 {
        let world = generate_world(seed, &cfg).unwrap();
        let (mut env, _) = NavEnv::new(world, seed as usize % cfg.num_classes, seed).unwrap();
        loop {
            let a = Action::ALL[rng.random_range(0..NUM_ACTIONS)];
            let out = env.step(a).unwrap();
            if out.success {
                assert!(out.info.dist_to_target <= cfg.success_dist + 1e-9);
            }
            if out.done {
                break;
            }
        }
    }
}

#[test]
fn shortest_path_zero_when_already_successful() {
    let world = hand_world(5, 5, &[(7, 2, 2, HeightBand::Mid)], |_| {});
    let start = AgentState { x: 1, y: 2, yaw: 0, pitch: Pitch::Level };
    assert!(satisfies_success(&world, &start, 7));
    assert_eq!(shortest_path_length(&world, &start, 7), Some(0));
}

#[test]
fn shortest_path_in_corridor_counts_moves() {
    // 5x1 corridor, target at the far end, tight success distance: the agent
    // must advance three cells before Done becomes legal.
    let world = hand_world(5, 1, &[(7, 4, 0, HeightBand::Mid)], |c| c.success_dist = 1.0);
    let start = AgentState { x: 0, y: 0, yaw: 0, pitch: Pitch::Level };
    assert_eq!(shortest_path_length(&world, &start, 7), Some(3));
}

#[test]
fn shortest_path_includes_rotations() {
    // Facing away from the corridor adds exactly two rotate actions.
    let world = hand_world(5, 1, &[(7, 4, 0, HeightBand::Mid)], |c| c.success_dist = 1.0);
    let start = AgentState { x: 0, y: 0, yaw: 180, pitch: Pitch::Level };
    assert_eq!(shortest_path_length(&world, &start, 7), Some(5));
}

#[test]
fn walled_off_target_is_unreachable() {
    let mut world = hand_world(3, 3, &[(7, 2, 1, HeightBand::Mid)], |c| {
        c.success_dist = 1.0;
        c.view_range = 1.0;
    });
    for y in 0..3 {
        let idx = world.cell_index(1, y);
        world.obstacles[idx] = true;
    }
    let start = AgentState { x: 0, y: 1, yaw: 0, pitch: Pitch::Level };
    assert_eq!(shortest_path_length(&world, &start, 7), None);
}

#[test]
fn low_band_objects_need_pitch_or_proximity() {
    let world = hand_world(9, 1, &[(7, 4, 0, HeightBand::Low)], |_| {});
    let far = AgentState { x: 0, y: 0, yaw: 0, pitch: Pitch::Level };
    let far_down = AgentState { x: 0, y: 0, yaw: 0, pitch: Pitch::Down };
    let near = AgentState { x: 3, y: 0, yaw: 0, pitch: Pitch::Level };
    let obj = &world.objects[0];
    assert!(!object_visible(&world, &far, obj));
    assert!(object_visible(&world, &far_down, obj));
    assert!(object_visible(&world, &near, obj));
}

#[test]
fn world_json_round_trip_is_exact() {
    let cfg = desk_config();
    let world = generate_world(21, &cfg).unwrap();
    let json = world.to_json();
    let back = World::from_json(&json).unwrap();
    assert_eq!(world, back);
}

#[test]
fn action_index_round_trip_and_bounds() {
    for (i, a) in Action::ALL.iter().enumerate() {
        assert_eq!(a.index(), i);
        assert_eq!(Action::from_index(i).unwrap(), *a);
    }
    assert!(matches!(Action::from_index(6), Err(SimError::InvalidAction(6))));
    assert_eq!(Action::Done.index(), DONE_INDEX);
}

#[test]
fn config_validation_catches_bad_fields() {
    let mut cfg = desk_config();
    cfg.num_classes = 3;
    assert!(cfg.validate().is_err());

    let mut cfg = desk_config();
    cfg.m_cells = 15;
    assert!(cfg.validate().is_err());

    let mut cfg = desk_config();
    cfg.class_affinity = Some(vec![vec![0.0; 8]; 7]);
    assert!(cfg.validate().is_err());

    let mut cfg = desk_config();
    let mut aff = vec![vec![0.0; 8]; 8];
    aff[0][1] = 1.0; // asymmetric
    cfg.class_affinity = Some(aff);
    assert!(cfg.validate().is_err());

    let mut cfg = desk_config();
    cfg.class_base_size = Some(vec![0.2; 8]);
    assert!(cfg.validate().is_err());
}
