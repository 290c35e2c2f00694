use relbin::config::{ModelConfig, PriorMode, Schedule};
use relbin::data::{hold_out, MatrixKind, RelationalDataset};
use relbin::evaluation::{fit_and_score, missing_fraction_sweep, Prediction, SweepConfig};
use relbin::init::{simulate_data, Shape};
use relbin::latent::ModelState;
use relbin::workers::Workers;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small(seed: u64) -> (ModelConfig, RelationalDataset) {
    let config: ModelConfig = serde_json::from_str(
        r#"{"features": 3, "factors": {"rows": 1, "choices": 1, "reals": 1}}"#,
    )
    .unwrap();
    let shape = Shape {
        n_rows: 10,
        category_counts: vec![2, 3, 2],
        n_real: 2,
    };
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let mut truth = ModelState::sample_prior(&shape, &config, &mut g).unwrap();
    (config.clone(), simulate_data(&mut truth, &mut g).unwrap())
}

#[test]
fn heldout_values_never_reach_the_fit() {
    let (config, ds) = small(5);
    let split = hold_out(&ds, 0.2, 9).unwrap();
    let mut poisoned = ds.clone();
    for e in &split.heldout {
        match e.matrix {
            MatrixKind::Categorical => {
                let q = ds.category_counts()[e.col] as u32;
                poisoned.set_cat(e.row, e.col, Some((e.value as u32 + 1) % q)).unwrap();
            }
            MatrixKind::Real => poisoned.set_real(e.row, e.col, Some(e.value * 1e3 + 7.0)).unwrap(),
        }
    }
    let split_p = hold_out(&poisoned, 0.2, 9).unwrap();
    assert_eq!(split_p.train, split.train);
    assert_ne!(split_p.heldout, split.heldout);
    let schedule = Schedule::new(30, 10, 2);
    let w = Workers::sequential();
    let a = fit_and_score(&split.train, &split.heldout, &config, &schedule, 50, 3, &w).unwrap();
    let b = fit_and_score(&split_p.train, &split_p.heldout, &config, &schedule, 50, 3, &w).unwrap();
    let ja = serde_json::to_string(&a.trace.samples).unwrap();
    let jb = serde_json::to_string(&b.trace.samples).unwrap();
    assert_eq!(ja, jb);
    // Predicted categories agree; only the scoring against truth changes.
    for (p, q) in a.predictions.iter().zip(&b.predictions) {
        if let (Prediction::Category { value: x, .. }, Prediction::Category { value: y, .. }) = (p, q) {
            assert_eq!(x, y);
        }
    }
}

fn sweep_config(config: ModelConfig) -> SweepConfig {
    SweepConfig {
        fractions: vec![0.1, 0.2],
        repeats: 2,
        variants: vec![PriorMode::Correlated, PriorMode::IndependentBernoulli],
        n_mc: 20,
        model: config,
        schedule: Schedule::new(12, 4, 2),
    }
}

#[test]
fn sweep_is_deterministic_and_paired() {
    let (config, ds) = small(6);
    let cfg = sweep_config(config);
    let a = missing_fraction_sweep(&ds, &cfg, 21, &Workers::sequential()).unwrap();
    let b = missing_fraction_sweep(&ds, &cfg, 21, &Workers::new(3).unwrap()).unwrap();
    assert_eq!(a.without_timings(), b.without_timings());
    assert_eq!(a.runs.len(), 8);
    assert_eq!(a.summary.len(), 4);
    for pair in a.runs.chunks(2) {
        assert_eq!(pair[0].split_seed, pair[1].split_seed);
        assert_eq!(pair[0].fit_seed, pair[1].fit_seed);
        assert_ne!(pair[0].variant, pair[1].variant);
    }
    assert_ne!(a.runs[0].split_seed, a.runs[2].split_seed);
    for r in &a.runs {
        assert!(r.error.is_none(), "{:?}", r.error);
        let acc = r.accuracy.unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(r.rmse.unwrap() >= 0.0);
    }
    let c = missing_fraction_sweep(&ds, &cfg, 22, &Workers::sequential()).unwrap();
    assert_ne!(a.runs[0].split_seed, c.runs[0].split_seed);
}

#[test]
fn invalid_config_is_fatal_but_failing_runs_are_recorded() {
    let (config, ds) = small(7);
    let mut cfg = sweep_config(config);
    cfg.fractions = vec![0.1];
    cfg.repeats = 1;
    cfg.variants = vec![PriorMode::Correlated];
    cfg.model.features_rows = Some(0);
    assert!(missing_fraction_sweep(&ds, &cfg, 1, &Workers::sequential()).is_err());

    let mut cfg = sweep_config(small(7).0);
    // Nearly everything held out leaves no real column to standardize.
    cfg.fractions = vec![0.1, 0.9999];
    cfg.repeats = 1;
    let dir = tempfile::tempdir().unwrap();
    let r = missing_fraction_sweep(&ds, &cfg, 1, &Workers::sequential()).unwrap();
    r.write_json(&dir.path().join("eval.json")).unwrap();
    r.write_runs_csv(&dir.path().join("runs.csv")).unwrap();
    r.write_summary_csv(&dir.path().join("summary.csv")).unwrap();
    assert!(r.runs[..2].iter().all(|x| x.error.is_none()));
    assert!(r.runs[2..].iter().all(|x| x.error.is_some() && x.accuracy.is_none()));
    assert_eq!(r.summary[2].failed, 1);
    let rows = std::fs::read_to_string(dir.path().join("runs.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + r.runs.len());
}
