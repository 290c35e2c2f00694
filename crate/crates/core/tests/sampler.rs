use relbin::config::{ModelConfig, Schedule};
use relbin::data::RelationalDataset;
use relbin::gibbs::{self, RunOptions};
use relbin::init::{simulate_data, Shape};
use relbin::latent::{self, ModelState};
use relbin::workers::Workers;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(seed: u64) -> (ModelConfig, RelationalDataset) {
    let config: ModelConfig = serde_json::from_str(
        r#"{"features": 4, "factors": {"rows": 2, "choices": 2, "reals": 2}}"#,
    )
    .unwrap();
    let shape = Shape {
        n_rows: 12,
        category_counts: vec![2, 3, 4],
        n_real: 3,
    };
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = ModelState::sample_prior(&shape, &config, &mut g).unwrap();
    let mut ds = simulate_data(&mut truth, &mut g).unwrap();
    ds.set_cat(0, 1, None).unwrap();
    ds.set_real(2, 0, None).unwrap();
    (config, ds)
}

#[test]
fn retained_count_follows_schedule() {
    let (config, ds) = tiny(1);
    let out = gibbs::run(&ds, &config, &RunOptions::in_memory(Schedule::new(9, 3, 3), 4), &Workers::sequential()).unwrap();
    assert_eq!(out.trace.len(), 2);
    assert_eq!(out.trace.samples[0].iteration, 6);
    assert_eq!(out.trace.samples[1].iteration, 9);
    assert_eq!(out.log_joint.len(), 9);
}

#[test]
fn log_joint_stays_finite_and_state_valid() {
    let (config, ds) = tiny(2);
    let out = gibbs::run(&ds, &config, &RunOptions::in_memory(Schedule::new(300, 100, 1), 7), &Workers::sequential()).unwrap();
    assert!(out.log_joint.iter().all(|v| v.is_finite()));
    out.final_state.validate(&ds).unwrap();
    let lj = latent::log_joint(&out.final_state, &ds).unwrap().total();
    assert_eq!(lj, *out.log_joint.last().unwrap());
    for r in out.mh.rates().into_iter().flatten() {
        assert!((0.0..=1.0).contains(&r));
    }
}

#[test]
fn worker_count_does_not_change_the_trace() {
    let (config, ds) = tiny(3);
    let opts = RunOptions::in_memory(Schedule::new(40, 10, 2), 11);
    let a = gibbs::run(&ds, &config, &opts, &Workers::sequential()).unwrap();
    let b = gibbs::run(&ds, &config, &opts, &Workers::new(4).unwrap()).unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.final_state, b.final_state);
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let (config, ds) = tiny(4);
    let dir = tempfile::tempdir().unwrap();
    let full_dir = dir.path().join("full");
    let part_dir = dir.path().join("part");
    let mut schedule = Schedule::new(30, 6, 2);
    schedule.checkpoint_every = 10;
    let mut opts = RunOptions::in_memory(schedule.clone(), 5);
    opts.config_hash = "h".into();
    opts.out_dir = Some(full_dir.clone());
    let full = gibbs::run(&ds, &config, &opts, &Workers::sequential()).unwrap();

    // Killed after 17 sweeps: the last checkpoint is at 10 and the files run past it.
    let mut short = opts.clone();
    short.out_dir = Some(part_dir.clone());
    short.halt_after = Some(17);
    let partial = gibbs::run(&ds, &config, &short, &Workers::sequential()).unwrap();
    assert_eq!(partial.log_joint.len(), 17);
    let ck = gibbs::Checkpoint::read(&part_dir.join(gibbs::CHECKPOINT_FILE)).unwrap();
    assert_eq!(ck.iteration, 10);
    let mut resumed_opts = opts.clone();
    resumed_opts.out_dir = Some(part_dir.clone());
    let resumed = gibbs::resume(&ds, &config, &resumed_opts, &Workers::new(3).unwrap()).unwrap();
    assert_eq!(resumed.trace, full.trace);
    assert_eq!(resumed.final_state, full.final_state);
    for f in [gibbs::TRACE_FILE, gibbs::PROGRESS_FILE] {
        let a = std::fs::read(full_dir.join(f)).unwrap();
        let b = std::fs::read(part_dir.join(f)).unwrap();
        assert_eq!(a, b, "{f} differs");
    }
}
