use redsim::scalar::Fixed;
use redsim::sim::Draining;
use redsim::stochastics::{JobTag, Placement};
use redsim::{
    first_synchronization_time, generate_stream, run_simulation, Error, ExactWorkload, ScenarioConfig, SimMetrics,
    Workload, Workload32,
};

fn w(values: &[f64]) -> Workload {
    Workload::from_reals(values).unwrap()
}

#[test]
fn drain_clamps_at_zero() {
    let mut s = w(&[3.0, 1.0]);
    s.drain(2.0).unwrap();
    assert_eq!(s.workloads(), &[1.0, 0.0]);
    assert_eq!(s.clock(), 2.0);
}

#[test]
fn drain_keeps_equal_entries_equal() {
    let mut s = w(&[4.0, 4.0]);
    s.drain(1.0).unwrap();
    assert_eq!(s.workloads(), &[3.0, 3.0]);
    assert!(s.is_synchronized());
}

#[test]
fn drain_to_empty() {
    let mut s = w(&[2.0, 1.0, 1.0]);
    s.drain(5.0).unwrap();
    assert_eq!(s.workloads(), &[0.0; 3]);
}

#[test]
fn drain_rejects_negative_interval() {
    assert!(matches!(w(&[1.0]).drain(-0.5), Err(Error::InvalidArgument(_))));
}

#[test]
fn arrival_worked_example() {
    let mut s = w(&[4.1, 4.1, 3.5, 2.3]);
    // servers 2 and 4, one-based
    let out = s.apply_arrival(&[1, 3], &[2.2, 1.5]).unwrap();
    assert_eq!(s.workloads(), &[4.1, 4.1, 3.5, 2.3 + 1.5]);
    assert_eq!(out.latency, 2.3 + 1.5);
    assert_eq!(out.waiting, (2.3 + 1.5) - 1.5);
    assert!((out.waiting - 2.3).abs() < 1e-15);
    assert_eq!(out.completing_server, 3);
    assert_eq!(out.tag, JobTag::A);
    assert!((s.surplus() - 0.9).abs() < 1e-12);
}

#[test]
fn arrival_worked_example_exact() {
    let mut s = ExactWorkload::from_reals(&[4.1, 4.1, 3.5, 2.3]).unwrap();
    let b = [fx(2.2), fx(1.5)];
    let out = s.apply_arrival(&[1, 3], &b).unwrap();
    assert_eq!(out.waiting, fx(2.3));
    assert_eq!(out.latency - out.waiting, b[1]);
}

#[test]
fn zero_requirements_leave_state_unchanged() {
    let mut s = w(&[5.0, 2.0, 7.0, 1.0]);
    let out = s.apply_arrival(&[0, 1, 2], &[0.0, 0.0, 0.0]).unwrap();
    assert_eq!(s.workloads(), &[5.0, 2.0, 7.0, 1.0]);
    assert_eq!(out.latency, 2.0);
    assert_eq!(out.waiting, 2.0);
    assert_eq!(out.tag, JobTag::C);
}

#[test]
fn type_a_from_synchronicity_raises_max_by_min_requirement() {
    let mut s = w(&[6.0; 5]);
    let out = s.apply_arrival(&[4, 0], &[3.0, 2.5]).unwrap();
    assert_eq!(s.max(), 8.5);
    assert_eq!(s.workloads(), &[8.5, 6.0, 6.0, 6.0, 8.5]);
    assert_eq!(out.waiting, 6.0);
}

#[test]
fn arrival_input_errors() {
    let mut s = w(&[1.0, 2.0, 3.0]);
    assert!(s.apply_arrival(&[0, 0], &[1.0, 1.0]).is_err());
    assert!(s.apply_arrival(&[0, 3], &[1.0, 1.0]).is_err());
    assert!(s.apply_arrival(&[0, 1], &[1.0]).is_err());
    assert!(s.apply_arrival(&[0, 1], &[1.0, -1.0]).is_err());
    assert_eq!(s.workloads(), &[1.0, 2.0, 3.0]);
}

#[test]
fn surplus_examples() {
    assert!((w(&[4.1, 4.1, 3.5, 3.8]).surplus() - 0.9).abs() < 1e-12);
    assert_eq!(w(&[2.5; 6]).surplus(), 0.0);
    assert_eq!(w(&[0.0; 3]).surplus(), 0.0);
}

#[test]
fn synchronicity_is_exact() {
    assert!(!w(&[1.0, 1.0 + 1e-12]).is_synchronized());
    assert!(w(&[5.0, 5.0]).is_synchronized());
    assert!(w(&[0.0, 0.0, 0.0]).is_synchronized());
}

#[test]
fn sync_time_examples() {
    assert_eq!(w(&[2.0, 1.0, 1.0]).sync_time_in_interval(5.0), 3.0);
    assert_eq!(w(&[3.0, 3.0]).sync_time_in_interval(7.25), 7.25);
    assert_eq!(w(&[3.0, 1.0]).sync_time_in_interval(2.0), 0.0);
    assert_eq!(w(&[3.0, 1.0]).sync_time(2.0), 0.0);
}

#[test]
fn truncated_space_examples() {
    assert!(w(&[4.0, 4.0, 3.0, 2.0]).in_truncated_space(2));
    assert!(!w(&[4.0, 3.0, 3.0, 2.0]).in_truncated_space(2));
    assert!(w(&[4.0, 3.0, 3.0, 2.0]).in_truncated_space(1));
}

#[test]
fn ordering_breaks_ties_by_index() {
    let s = w(&[1.0, 3.0, 1.0, 3.0]);
    assert_eq!(s.ordering().as_slice(), &[1, 3, 0, 2]);
    assert_eq!(s.ordered(), vec![3.0, 3.0, 1.0, 1.0]);
}

#[test]
fn position_marks_resolve_through_own_ordering() {
    let mut s = w(&[1.0, 9.0, 4.0]);
    let ev = redsim::ArrivalEvent {
        index: 0,
        time: 1.0,
        tag: JobTag::B1,
        placement: Placement::Positions([0, 2].into_iter().collect()),
        requirements: [0.0, 2.0].into_iter().collect(),
    };
    let out = s.apply_event(&ev).unwrap();
    // rank 0 is server 1, rank 2 is server 0
    assert_eq!(s.workloads(), &[3.0, 9.0, 4.0]);
    assert_eq!(out.tag, JobTag::B1);
}

#[test]
fn rejects_invalid_workloads() {
    assert!(Workload::from_reals(&[]).is_err());
    assert!(Workload::from_reals(&[1.0, -0.5]).is_err());
    assert!(Workload::from_reals(&[f64::NAN]).is_err());
    assert!(Workload::from_reals(&[f64::INFINITY]).is_err());
}

#[test]
fn single_precision_state_works() {
    let mut s = Workload32::from_reals(&[2.0, 2.0, 1.0]).unwrap();
    s.apply_arrival(&[2, 0], &[0.5f32, 4.0]).unwrap();
    assert_eq!(s.workloads(), &[2.0f32, 2.0, 1.5]);
}

#[test]
fn full_redundancy_is_always_synchronized() {
    let cfg = ScenarioConfig::new(2, 2, 20.0, 10.0).horizon(10_000.0);
    let m = run_simulation::<f64>(&cfg, 9).unwrap();
    assert_eq!(m.time_in_sync, m.total_time);
    assert!((m.total_time - 9_000.0).abs() < 1e-9);
}

#[test]
fn overloaded_full_redundancy_drifts() {
    // λ·E[min X]/K^(d−1) = 1.5
    let cfg = ScenarioConfig::new(2, 2, 20.0, 30.0).horizon(40_000.0);
    let m = run_simulation::<f64>(&cfg, 2).unwrap();
    assert!(m.final_max > 10.0 * 20.0);
    let half = m.max_samples.len() / 2;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    assert!(mean(&m.max_samples[half..]) > 1.5 * mean(&m.max_samples[..half]));
}

#[test]
fn simulation_is_deterministic_in_seed() {
    let cfg = ScenarioConfig::new(4, 2, 10.0, 4.0).horizon(2_000.0);
    let a = run_simulation::<f64>(&cfg, 5).unwrap();
    let b = run_simulation::<f64>(&cfg, 5).unwrap();
    let c = run_simulation::<f64>(&cfg, 6).unwrap();
    assert_eq!(a.summary().mean_waiting, b.summary().mean_waiting);
    assert_eq!(a.max_samples, b.max_samples);
    assert_ne!(a.sum_waiting, c.sum_waiting);
}

#[test]
fn latency_minus_waiting_is_min_requirement() {
    let cfg = ScenarioConfig::new(3, 2, 5.0, 2.0).horizon(500.0).warmup(0.0);
    let mut s = ExactWorkload::empty(3);
    let mut prev = Fixed::from_raw(0);
    for ev in generate_stream(&cfg, 4, cfg.horizon).unwrap() {
        let ev = ev.unwrap();
        let t = fx(ev.time);
        s.drain(t - prev).unwrap();
        prev = t;
        let out = s.apply_event(&ev).unwrap();
        assert!(out.waiting >= Fixed::from_raw(0));
        assert_eq!(out.latency - out.waiting, fx(ev.min_requirement()));
    }
}

#[test]
fn metrics_merge_is_order_insensitive() {
    let cfg = ScenarioConfig::new(3, 2, 4.0, 1.5).horizon(3_000.0);
    let runs: Vec<SimMetrics> = (0..3).map(|s| run_simulation::<f64>(&cfg, s).unwrap()).collect();
    let mut fwd = runs[0].clone();
    fwd.merge(&runs[1]);
    fwd.merge(&runs[2]);
    let mut rev = runs[2].clone();
    rev.merge(&runs[1]);
    rev.merge(&runs[0]);
    let (a, b) = (fwd.summary(), rev.summary());
    assert!((a.mean_waiting - b.mean_waiting).abs() <= 1e-12 * a.mean_waiting);
    assert!((a.sync_fraction - b.sync_fraction).abs() <= 1e-12);
    assert_eq!(a.jobs, b.jobs);
    let total: u64 = runs.iter().map(|r| r.total_jobs()).sum();
    assert_eq!(fwd.total_jobs(), total);
}

/// Synchronicity indicator integrated on a fine time grid, with transition
/// instants located by bisection. Independent of the event-wise rule.
fn integrate_sync_indicator(cfg: &ScenarioConfig, seed: u64) -> (f64, f64) {
    let events: Vec<_> = generate_stream(cfg, seed, cfg.horizon)
        .unwrap()
        .map(Result::unwrap)
        .collect();
    let step = 1e-3 / cfg.lambda();
    let mut state = w(&vec![0.0; cfg.n]);
    let mut t0 = 0.0;
    let mut total = 0.0;
    let synced_at = |s: &Workload, dt: f64| {
        let v: Vec<f64> = s.workloads().iter().map(|x| (x - dt).max(0.0)).collect();
        v.iter().all(|&x| x == v[0])
    };
    let boundaries: Vec<f64> = events.iter().map(|e| e.time).chain([cfg.horizon]).collect();
    for (i, &t1) in boundaries.iter().enumerate() {
        let mut a = 0.0;
        while a < t1 - t0 {
            let b = (a + step).min(t1 - t0);
            let (sa, sb) = (synced_at(&state, a), synced_at(&state, b));
            if sa && sb {
                total += b - a;
            } else if sa != sb {
                let (mut lo, mut hi) = (a, b);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if synced_at(&state, mid) == sa {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                total += if sa { lo - a } else { b - hi };
            }
            a = b;
        }
        state.drain(t1 - t0).unwrap();
        t0 = t1;
        if let Some(ev) = events.get(i) {
            state.apply_event(ev).unwrap();
        }
    }
    (total, cfg.horizon)
}

#[test]
fn time_accounting_matches_fine_integration() {
    for (n, d, k, lambda, seed) in [(3, 2, 2.0, 1.0, 1), (4, 2, 3.0, 0.8, 2), (3, 1, 1.0, 0.5, 3)] {
        let cfg = ScenarioConfig::new(n, d, k, lambda).horizon(60.0).warmup(0.0);
        let m = run_simulation::<f64>(&cfg, seed).unwrap();
        let (sync, total) = integrate_sync_indicator(&cfg, seed);
        assert!((m.total_time - total).abs() < 1e-9);
        assert!(sync > 0.0);
        assert!(
            (m.time_in_sync - sync).abs() <= 1e-6 * sync,
            "event-wise {} vs integrated {sync}",
            m.time_in_sync
        );
    }
}

#[test]
fn warmup_is_excluded() {
    let cfg = ScenarioConfig::new(3, 2, 2.0, 1.0).horizon(100.0).warmup(40.0);
    let m = run_simulation::<f64>(&cfg, 1).unwrap();
    assert!((m.total_time - 60.0).abs() < 1e-9);
    let events = generate_stream(&cfg, 1, 100.0)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().time >= 40.0)
        .count() as u64;
    assert_eq!(m.total_jobs(), events);
}

#[test]
fn first_synchronization_from_arbitrary_state() {
    let cfg = ScenarioConfig::new(4, 2, 10.0, 2.0).horizon(1e5);
    let t = first_synchronization_time::<f64>(&cfg, 3, &[30.0, 0.0, 12.0, 5.0]).unwrap();
    assert!(t.is_some_and(|t| t > 0.0));
    assert_eq!(
        first_synchronization_time::<f64>(&cfg, 3, &[2.0; 4]).unwrap(),
        Some(0.0)
    );
    assert!(first_synchronization_time::<f64>(&cfg, 3, &[1.0; 3]).is_err());
    // Drains to empty before the first arrival can intervene.
    let slow = ScenarioConfig::new(3, 2, 1.0, 1e-9).horizon(100.0);
    assert_eq!(
        first_synchronization_time::<f64>(&slow, 1, &[2.0, 0.0, 1.0]).unwrap(),
        Some(2.0)
    );
}

fn fx(v: f64) -> Fixed {
    redsim::Scalar::from_real(v)
}
