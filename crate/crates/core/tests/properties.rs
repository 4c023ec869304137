use proptest::prelude::*;
use redsim::auxiliary::run_coupled_observed;
use redsim::stochastics::{expected_min_x, ServiceSpec};
use redsim::{
    generate_coupled_stream, generate_stream, job_type_probabilities, latency_upper_bound, renewal_function,
    run_coupled, sufficient_condition, AuxState, CoupledOptions, Fixed, Scalar, ScenarioConfig, TraceRecord,
    WorkloadState, XSpec,
};

const ZERO: Fixed = Fixed::from_raw(0);

fn fx(v: f64) -> Fixed {
    Fixed::from_real(v)
}

/// Workloads on a 1/16 grid so that every value is exact in `Fixed`.
fn workloads(n: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Vec<Fixed>> {
    prop::collection::vec(0u32..4000, n).prop_map(|v| v.into_iter().map(|w| fx(f64::from(w) / 16.0)).collect())
}

/// A state with `n` servers whose top `d` workloads are equal.
fn truncated_state() -> impl Strategy<Value = (WorkloadState<Fixed>, usize)> {
    workloads(2..=7).prop_flat_map(|w| {
        let n = w.len();
        (1..=n).prop_map(move |d| {
            let mut w = w.clone();
            let top = w.iter().copied().max().unwrap();
            w.sort_unstable_by(|a, b| b.cmp(a));
            for v in w.iter_mut().take(d) {
                *v = top;
            }
            (WorkloadState::from_workloads(w).unwrap(), d)
        })
    })
}

fn arrival() -> impl Strategy<Value = (Vec<Fixed>, Vec<usize>, Vec<Fixed>)> {
    workloads(1..=7).prop_flat_map(|w| {
        let n = w.len();
        (1..=n).prop_flat_map(move |d| {
            let w = w.clone();
            (
                Just(w),
                Just((0..n).collect::<Vec<usize>>())
                    .prop_shuffle()
                    .prop_map(move |s| s[..d].to_vec()),
                prop::collection::vec(prop_oneof![Just(0u32), 1u32..800], d)
                    .prop_map(|b| b.into_iter().map(|x| fx(f64::from(x) / 16.0)).collect::<Vec<_>>()),
            )
        })
    })
}

fn x_kind() -> impl Strategy<Value = XSpec> {
    prop_oneof![
        Just(XSpec::Deterministic1),
        Just(XSpec::Exponential1),
        Just(XSpec::Uniform02)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn arrival_touches_only_sampled_servers((w, servers, reqs) in arrival()) {
        let mut state = WorkloadState::from_workloads(w.clone()).unwrap();
        let was_synced = state.is_synchronized();
        let old_max = state.max();
        let out = state.apply_arrival(&servers, &reqs).unwrap();
        let min_b = reqs.iter().copied().min().unwrap();
        for (i, (&before, &after)) in w.iter().zip(state.workloads()).enumerate() {
            if servers.contains(&i) {
                prop_assert!(after >= before);
                prop_assert_eq!(after, before.max(out.latency));
            } else {
                prop_assert_eq!(after, before);
            }
        }
        prop_assert!(out.waiting >= ZERO);
        prop_assert_eq!(out.latency, out.waiting + min_b);
        prop_assert!(state.max() - old_max <= min_b);
        if was_synced && servers.len() == w.len() {
            prop_assert_eq!(state.max() - old_max, min_b);
        }
    }

    #[test]
    fn truncated_space_is_closed(
        (state, d) in truncated_state(),
        picks in prop::collection::vec((any::<prop::sample::Index>(), 0u32..800, 0u32..400), 1..40),
    ) {
        let mut state = state;
        let n = state.n();
        for (pick, b, gap) in picks {
            state.drain(fx(f64::from(gap) / 16.0)).unwrap();
            prop_assert!(state.in_truncated_space(d));
            let first = pick.index(n);
            let servers: Vec<usize> = (0..d).map(|j| (first + j) % n).collect();
            let reqs: Vec<Fixed> = (0..d).map(|j| fx(f64::from((b + 37 * j as u32) % 800) / 16.0)).collect();
            state.apply_arrival(&servers, &reqs).unwrap();
            prop_assert!(state.in_truncated_space(d));
        }
    }

    #[test]
    fn surplus_vanishes_exactly_when_synchronized(w in workloads(1..=7), delta in 0u32..10_000) {
        let mut state = WorkloadState::from_workloads(w).unwrap();
        prop_assert_eq!(state.surplus() == ZERO, state.is_synchronized());
        let was = state.is_synchronized();
        state.drain(fx(f64::from(delta) / 16.0)).unwrap();
        if was {
            prop_assert!(state.is_synchronized());
        }
        prop_assert_eq!(state.surplus() == ZERO, state.is_synchronized());
    }

    #[test]
    fn auxiliary_surplus_jumps(
        (state, d) in truncated_state(),
        ops in prop::collection::vec((0u8..3, 0u32..800), 1..40),
    ) {
        let n = state.n();
        let mut aux = AuxState::new(state, d).unwrap();
        for (op, raw) in ops {
            let v = fx(f64::from(raw) / 16.0);
            let before = aux.surplus();
            match op {
                0 => {
                    let reqs: Vec<Fixed> = (0..d).map(|j| if j == 0 { v } else { v + fx(j as f64) }).collect();
                    aux.apply_type_a(&reqs).unwrap();
                    let jump = Fixed::from_raw((n - d) as i128 * v.raw());
                    prop_assert_eq!(aux.surplus(), before + jump);
                }
                1 => {
                    let low = *aux.state().ordered().last().unwrap();
                    let gap = aux.state().max() - low;
                    aux.apply_type_b1(v).unwrap();
                    prop_assert_eq!(aux.surplus(), before - v.min(gap));
                }
                _ => {
                    aux.drain(v).unwrap();
                    if before == ZERO {
                        prop_assert_eq!(aux.surplus(), ZERO);
                    } else {
                        prop_assert_eq!(aux.surplus(), before);
                    }
                }
            }
            prop_assert!(aux.state().in_truncated_space(d));
        }
    }

    #[test]
    fn type_probabilities_sum_to_one(n in 1usize..12, d_frac in 0.0f64..1.0, k in 1.0f64..500.0, x in x_kind()) {
        let d = 1 + ((n - 1) as f64 * d_frac) as usize;
        let spec = ServiceSpec::new(x, k).unwrap();
        let p = job_type_probabilities(&spec, n, d).unwrap();
        prop_assert!((p.a + p.b + p.c - 1.0).abs() <= f64::EPSILON);
        prop_assert!(p.a >= 0.0 && p.b >= 0.0 && p.c >= 0.0);
    }

    #[test]
    fn renewal_function_is_monotone(x in x_kind(), t in 0.0f64..40.0, dt in 0.0f64..5.0) {
        let a: f64 = renewal_function(&x, t).unwrap();
        let b: f64 = renewal_function(&x, t + dt).unwrap();
        prop_assert!(b >= a - 1e-9);
    }

    #[test]
    fn rho_and_latency_gap_are_consistent(
        n in 2usize..9,
        d_frac in 0.0f64..1.0,
        k in 1.0f64..300.0,
        ratio in 0.05f64..1.5,
        x in x_kind(),
    ) {
        let d = 1 + ((n - 1) as f64 * d_frac) as usize;
        let cfg = ScenarioConfig::with_load_ratio(n, d, k, ratio).x(x.clone());
        let rep = sufficient_condition(&cfg).unwrap();
        prop_assert!((rep.rho - rep.reduced_load).abs() <= 1e-12 * rep.rho.abs().max(1e-300));
        if let Ok(lat) = latency_upper_bound(&cfg) {
            let e_min = expected_min_x(&x, d).unwrap().value * k.powi(1 - d as i32);
            prop_assert_eq!(lat.latency, lat.waiting + lat.e_min_b);
            prop_assert!((lat.e_min_b - e_min).abs() <= 1e-12 * e_min);
        } else {
            prop_assert!(!rep.sufficient_stable);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fixed_arithmetic_is_exact(a in -1_000_000i64..1_000_000, b in -1_000_000i64..1_000_000, c in -1_000_000i64..1_000_000) {
        let (x, y, z) = (fx(a as f64 / 64.0), fx(b as f64 / 64.0), fx(c as f64 / 64.0));
        prop_assert_eq!((x + y) + z, x + (y + z));
        prop_assert_eq!((x + y) - y, x);
        prop_assert_eq!((x + y).real(), (a + b) as f64 / 64.0);
        prop_assert_eq!(x < y, a < b);
        prop_assert_eq!(x.max_of(y), if a >= b { x } else { y });
    }

    #[test]
    fn streams_are_deterministic_and_ordered(seed in any::<u64>(), n in 2usize..6, k in 2.0f64..50.0, x in x_kind()) {
        let cfg = ScenarioConfig::with_load_ratio(n, 2, k, 0.7).x(x);
        for coupled in [false, true] {
            let make = || if coupled {
                generate_coupled_stream(&cfg, seed, 200.0).unwrap()
            } else {
                generate_stream(&cfg, seed, 200.0).unwrap()
            };
            let a: Vec<_> = make().map(Result::unwrap).collect();
            let b: Vec<_> = make().map(Result::unwrap).collect();
            prop_assert_eq!(&a, &b);
            prop_assert!(a.windows(2).all(|w| w[0].time < w[1].time));
            prop_assert!(a.iter().all(|e| e.time <= 200.0));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn auxiliary_surplus_dominates_original(seed in any::<u64>(), n in 2usize..6, k in 2.0f64..30.0, ratio in 0.2f64..0.9) {
        let cfg = ScenarioConfig::with_load_ratio(n, 2, k, ratio).horizon(300.0);
        let mut worst: Option<(f64, f64)> = None;
        let mut check = |r: &TraceRecord| {
            if r.aux_surplus < r.surplus && worst.is_none() {
                worst = Some((r.aux_surplus, r.surplus));
            }
            Ok(())
        };
        let run = run_coupled_observed::<Fixed>(&cfg, seed, CoupledOptions::default(), Some(&mut check)).unwrap();
        prop_assert!(run.passed());
        prop_assert_eq!(worst, None);
    }

    #[test]
    fn max_equals_mg1_when_n_equals_d(seed in any::<u64>(), d in 1usize..5, k in 2.0f64..30.0, ratio in 0.2f64..0.9) {
        let cfg = ScenarioConfig::with_load_ratio(d, d, k, ratio).horizon(300.0);
        let opts = CoupledOptions { record_trace: true, ..CoupledOptions::default() };
        let run = run_coupled::<Fixed>(&cfg, seed, opts).unwrap();
        prop_assert!(run.trace.records.iter().all(|r| r.max_workload() == r.mg1));
    }
}
