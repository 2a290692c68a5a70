use rtsa_core::evaluation::{
    confusion, nominal_exit_rate, run_batch, run_batch_with, run_episode, soc_point, sweep_baseline, sweep_learned,
    SeedRange, TrainingPlan, DEFAULT_ALERT_PENALTIES, DEFAULT_BASELINE_DELTAS,
};
use rtsa_core::learning::LearnConfig;
use rtsa_core::{MetaPolicy, Scenario, World};

fn demo() -> World {
    World::new(Scenario::demo()).unwrap()
}

#[test]
fn batch_equals_serial_episodes_in_seed_order() {
    let world = demo();
    let seeds = SeedRange::new(300, 24).seeds();
    let policy = MetaPolicy::Baseline { delta: 2.4 };
    let batch = run_batch(&policy, &world, &seeds);
    for (rec, &seed) in batch.iter().zip(&seeds) {
        assert_eq!(*rec, run_episode(&policy, &world, seed, true));
    }
    let summary = run_batch_with(&policy, &world, &seeds, false);
    for (full, short) in batch.iter().zip(&summary) {
        assert!(short.trajectory.is_empty());
        assert_eq!((full.outcome, full.deploy_step, full.steps), (short.outcome, short.deploy_step, short.steps));
    }
}

#[test]
fn trajectories_share_a_prefix_until_the_first_deploy() {
    let world = demo();
    for seed in 0..40 {
        let nominal = run_episode(&MetaPolicy::Nominal, &world, seed, true);
        let base = run_episode(&MetaPolicy::Baseline { delta: 1.2 }, &world, seed, true);
        let k = base.deploy_step.unwrap_or(base.steps).min(nominal.steps);
        for i in 0..k {
            assert_eq!(nominal.trajectory[i].state, base.trajectory[i].state, "seed {seed} step {i}");
        }
    }
}

#[test]
fn episode_records_are_consistent() {
    let world = demo();
    for rec in run_batch(&MetaPolicy::Baseline { delta: 0.6 }, &world, &SeedRange::new(0, 60).seeds()) {
        assert_eq!(rec.trajectory.len(), rec.steps);
        let ret: f64 = rec.trajectory.iter().map(|p| p.reward).sum();
        assert!((ret - rec.episode_return).abs() < 1e-12);
        assert_eq!(rec.deployed, rec.deploy_step.is_some());
        assert_eq!(rec.deployed, rec.final_state.deployed);
        assert!(rec.outcome.is_terminal());
        if let Some(k) = rec.deploy_step {
            assert!(!rec.trajectory[k].state.deployed);
            assert!(rec.trajectory[k..].iter().all(|p| p.action == rtsa_core::Action::Deploy));
        }
    }
}

#[test]
fn exit_rate_grows_with_wind() {
    let world = demo();
    let seeds = SeedRange::new(20_000, 400).seeds();
    let rates: Vec<f64> = [0.5, 1.5, 3.0, 6.0, 12.0]
        .iter()
        .map(|&s| nominal_exit_rate(&World::new(world.scenario.with_wind_sigma(s)).unwrap(), &seeds))
        .collect();
    assert!(rates.windows(2).all(|w| w[0] <= w[1]), "{rates:?}");
    assert!(rates[0] < 0.05 && rates[4] > 0.6, "{rates:?}");
}

#[test]
fn baseline_sweep_shape() {
    let world = demo();
    let seeds = SeedRange::new(40_000, 300).seeds();
    let sweep = sweep_baseline(&world, &DEFAULT_BASELINE_DELTAS, &seeds).unwrap();
    assert!(sweep.windows(2).all(|w| w[0].soc.alert_rate <= w[1].soc.alert_rate));
    for p in &sweep {
        assert_eq!(p.confusion.total(), seeds.len());
    }
    // a threshold past the start clearance deploys immediately
    let all = sweep_baseline(&world, &[world.scenario.start_clearance() + 0.01], &seeds).unwrap();
    assert_eq!(all[0].soc.alert_rate, 1.0);
    assert!(sweep_baseline(&world, &[2.0, 1.0], &seeds).is_err());
}

#[test]
fn confusion_counts_exits_anywhere_in_the_trajectory() {
    let world = demo();
    let recs = run_batch(&MetaPolicy::Nominal, &world, &SeedRange::new(0, 200).seeds());
    let cm = confusion(&recs, &world);
    assert_eq!(cm.total(), 200);
    assert_eq!(cm.deployed(), 0);
    assert_eq!(cm.unsafe_not_deployed, recs.iter().filter(|r| r.ever_exited).count());
    let p = soc_point(&cm, 0.0).unwrap();
    assert_eq!(p.alert_rate, 0.0);
}

#[test]
fn learned_sweep_rejects_overlap_and_orders_by_penalty() {
    let world = demo();
    let plan = TrainingPlan::default();
    let err = sweep_learned(&world, &[0.2], &plan, SeedRange::new(0, 5000), SeedRange::new(4000, 100));
    assert!(err.is_err());

    // the default plan trains its full episode count even from a short range
    let plan = TrainingPlan { learn: LearnConfig { ..plan.learn }, ..plan };
    let pts = sweep_learned(
        &world,
        &DEFAULT_ALERT_PENALTIES,
        &plan,
        SeedRange::new(0, plan.learn.episodes as u64),
        SeedRange::new(2_000_000, 600),
    )
    .unwrap();
    let alert: Vec<f64> = pts.iter().map(|p| p.point.soc.alert_rate).collect();
    // Spearman correlation of penalty vs alert rate; all penalties distinct
    let n = alert.len() as f64;
    let rank = |v: &[f64]| -> Vec<f64> {
        v.iter().map(|x| v.iter().filter(|y| *y < x).count() as f64 + 0.5 * (v.iter().filter(|y| *y == x).count() as f64 - 1.0) + 1.0).collect()
    };
    let (ra, rp) = (rank(&alert), rank(&DEFAULT_ALERT_PENALTIES));
    let d2: f64 = ra.iter().zip(&rp).map(|(a, b)| (a - b).powi(2)).sum();
    let rho = 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
    // one-sided 5% critical value for n = 5 is 0.9
    assert!(rho <= -0.9, "rho {rho}, alert rates {alert:?}");
    for p in &pts {
        assert_eq!(p.log.len(), plan.learn.episodes);
        assert_eq!(p.point.confusion.total(), 600);
    }
}
