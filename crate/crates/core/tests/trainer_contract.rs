mod common;

use std::sync::Arc;

use crd_core::checkpoint::Container;
use crd_core::evalkit::ScenarioSource;
use crd_core::policy::ActionMode;
use crd_core::trainer::{run_ablation, write_ablation_csv};
use crd_core::{BlockMask, CoreError, Trainer};
use crd_diffcore::{ParamId, Tensor};
use crd_world::{generate_scenario, EpisodeConfig, UavState, Vec3, World};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(t: &Trainer) -> Vec<Tensor> {
    let ids: Vec<ParamId> = t.agent.store.ids().collect();
    ids.iter().map(|&id| t.agent.store.value(id).clone()).collect()
}

#[test]
fn smoke_run_emits_one_record_per_episode() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(common::smoke_config(dir.path())).unwrap();
    let log = t.train().unwrap();
    assert_eq!(log.records.len(), 2);
    assert_eq!(log.records.iter().map(|r| r.episode).collect::<Vec<_>>(), vec![0, 1]);
    for r in &log.records {
        assert!(r.l_vae.unwrap().is_finite() && r.l_q.unwrap().is_finite());
    }
    for f in ["config.toml", "final.ckpt", "train_log.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(dir.path().join("train_log.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn same_seed_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let run = || {
        let mut t = Trainer::new(common::smoke_config(dir.path())).unwrap();
        let log = t.train().unwrap();
        (log, params(&t))
    };
    assert_eq!(run(), run());
    let mut other = common::smoke_config(dir.path());
    other.seed = 1;
    let mut t = Trainer::new(other).unwrap();
    assert_ne!(t.train().unwrap(), run().0);
}

#[test]
fn buffer_counts_every_uav_step() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::smoke_config(dir.path());
    cfg.train.num_uavs = 3;
    cfg.episode.max_steps = 5;
    cfg.train.warmup_transitions = 1000;
    let mut t = Trainer::new(cfg.clone()).unwrap();
    let (_, _, _, steps) = t.collect_episode().unwrap();
    let dones = t.buffer.iter_ordered().filter(|x| x.done).count();
    assert_eq!(dones, 0, "scripted rollout should keep every UAV flying");
    assert_eq!(t.buffer.len(), 3 * steps);

    cfg.sac.buffer_capacity = 7;
    let mut t = Trainer::new(cfg).unwrap();
    t.collect_episode().unwrap();
    assert_eq!(t.buffer.len(), 7);
}

#[test]
fn update_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = common::smoke_config(dir.path());
    cfg.train.max_episodes = 3;
    cfg.train.updates_per_episode = 5;
    let mut t = Trainer::new(cfg).unwrap();
    let log = t.train().unwrap();
    assert_eq!(log.total_updates(), 3 * 5);
    assert_eq!(t.agent.updates, 15);
    assert_eq!(t.agent.opt_main.steps(), 15);
}

#[test]
fn actions_depend_only_on_own_observation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::smoke_config(dir.path());
    let t = Trainer::new(cfg.clone()).unwrap();
    let spec = Arc::new(generate_scenario("playground", 0).unwrap());
    let ecfg = EpisodeConfig {
        num_uavs: 3,
        ..cfg.episode_config()
    };
    let state = |x: f64, y: f64, gx: f64| UavState {
        position: Vec3::new(x, y, 2.0),
        yaw: 0.0,
        velocity: [0.0; 3],
        goal: Vec3::new(gx, y, 2.0),
        alive: true,
        arrived: false,
        path_length: 0.0,
    };
    let me = state(-8.0, -8.0, 2.0);
    let (a, b) = (state(10.0, 10.0, 0.0), state(-5.0, 12.0, 3.0));
    let act = |uavs: Vec<UavState>, idx: usize| {
        let (_, obs) = World::from_states(spec.clone(), ecfg.clone(), uavs).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        (
            obs[idx].clone(),
            t.agent.select_action(&obs[idx], ActionMode::Deterministic, &mut rng).unwrap(),
        )
    };
    let (o1, a1) = act(vec![me.clone(), a.clone(), b.clone()], 0);
    let (o2, a2) = act(vec![me.clone(), b.clone(), a.clone()], 0);
    let (o3, a3) = act(vec![b, me, a], 1);
    assert_eq!(o1.depth, o2.depth);
    assert_eq!(o1.depth, o3.depth);
    assert_eq!(a1, a2);
    assert_eq!(a1, a3);
}

fn warm_trainer(dir: &std::path::Path) -> Trainer {
    let mut cfg = common::smoke_config(dir);
    cfg.train.max_episodes = 1;
    let mut t = Trainer::new(cfg).unwrap();
    t.train().unwrap();
    t
}

#[test]
fn resume_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = warm_trainer(dir.path());
    let path = dir.path().join("resume.ckpt");
    a.save(&path).unwrap();
    let mut b = Trainer::load(&path).unwrap();
    let sa: Vec<_> = (0..5).map(|_| a.update().unwrap()).collect();
    let sb: Vec<_> = (0..5).map(|_| b.update().unwrap()).collect();
    assert_eq!(sa, sb);
    assert_eq!(params(&a), params(&b));
    assert_eq!(a.agent.updates, b.agent.updates);
    assert_eq!(a.to_container().unwrap().to_bytes(), b.to_container().unwrap().to_bytes());
    // a further full episode also agrees
    assert_eq!(a.run_episode().unwrap(), b.run_episode().unwrap());
}

#[test]
fn layout_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let t = warm_trainer(dir.path());
    let path = dir.path().join("x.ckpt");
    t.save(&path).unwrap();
    let mut other = t.cfg.clone();
    other.latent.n3 += 1;
    let err = Trainer::load_expecting(&path, &other).unwrap_err();
    assert!(matches!(err, CoreError::Layout { .. }), "{err}");
    let mut masked = t.cfg.clone();
    masked.train.ablation_mask = BlockMask::all();
    assert!(matches!(Trainer::load_expecting(&path, &masked), Err(CoreError::Layout { .. })));
    assert!(Trainer::load_expecting(&path, &t.cfg).is_ok());
}

#[test]
fn damaged_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let t = warm_trainer(dir.path());
    let bytes = t.to_container().unwrap().to_bytes();
    assert!(Container::from_bytes(&bytes).is_ok());

    let mut flipped = bytes.clone();
    let mid = 20 + (bytes.len() - 24) / 2;
    flipped[mid] ^= 0x01;
    assert!(matches!(Container::from_bytes(&flipped), Err(CoreError::Integrity(_))));

    let truncated = &bytes[..bytes.len() - 100];
    assert!(matches!(Container::from_bytes(truncated), Err(CoreError::Integrity(_))));

    let mut versioned = bytes.clone();
    versioned[8] = 99;
    assert!(matches!(
        Container::from_bytes(&versioned),
        Err(CoreError::Version { found: 99, expected: 1 })
    ));
}

#[test]
fn non_finite_loss_aborts_with_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = warm_trainer(dir.path());
    let id = t.agent.decoder.params()[0];
    let shape = t.agent.store.value(id).shape().to_vec();
    t.agent.store.set_value(id, Tensor::full(&shape, f64::NAN)).unwrap();
    let err = t.update().unwrap_err();
    assert!(matches!(err, CoreError::Numeric(_)), "{err}");
    let snap = Container::load(dir.path().join("abort.ckpt")).unwrap();
    assert!(snap.tensor("abort/batch_images").is_ok());
    assert!(snap.tensor("abort/batch_indices").is_ok());
}

#[test]
fn ablation_rows_follow_masks() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = common::smoke_config(dir.path());
    let masks = BlockMask::ablation_set();
    let rows = run_ablation(&cfg, &masks, &ScenarioSource::named("forest"), 2).unwrap();
    assert_eq!(rows.len(), 4);
    let widths: Vec<usize> = rows.iter().map(|r| r.policy_input_width).collect();
    // layout 2/2/4 plus goal and velocity
    assert_eq!(widths, vec![2 + 4 + 6, 2 + 6, 4 + 6, 2 + 2 + 4 + 6]);
    for (r, m) in rows.iter().zip(&masks) {
        assert_eq!(r.mask, *m);
        assert_eq!(r.log.records.len(), 2);
        assert_eq!(r.report.episodes, 2);
    }
    let out = dir.path().join("ablation.csv");
    write_ablation_csv(&rows, &out).unwrap();
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.contains("\"{z2,z3}\"") || text.contains("{z2,z3}"));
}
