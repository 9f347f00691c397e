//! End-to-end checks of the dynamic scheduler against hand-simulated traces
//! and trace-level invariants on random workloads.

use iqsched_core::simulator::validate_trace;
use iqsched_core::{
    check_non_idling, compute_metrics, run_dynamic, AggCostModel, ArrivalProfile, BaselineMode,
    CostModel, Duration, DynamicEvent, EventKind, Fraction, Policy, Query, SchedulerConfig,
    SimTrace, Time,
};
use proptest::prelude::*;

fn ms(v: i64) -> Duration {
    Duration::from_millis(v)
}

/// 100 ms per tuple plus 1 s per batch; free aggregation.
fn query(id: &str, start_s: i64, rate: i64, total: u64, deadline_s: i64) -> Query {
    Query::new(
        id,
        ArrivalProfile::fixed(
            Time::from_secs(start_s),
            Fraction::from_integer(rate),
            total,
        )
        .unwrap(),
        Time::from_secs(deadline_s),
        CostModel::linear(ms(100), ms(1000)).unwrap(),
        AggCostModel::free(1),
    )
    .unwrap()
}

fn three_queries() -> Vec<DynamicEvent> {
    [
        query("q1", 0, 1, 20, 30),
        query("q2", 5, 2, 30, 28),
        query("q3", 10, 4, 40, 26),
    ]
    .into_iter()
    .map(|q| DynamicEvent::Add {
        time: q.profile.start(),
        query: q,
        expected: None,
    })
    .collect()
}

fn batches(trace: &SimTrace) -> Vec<(i64, &str, u64)> {
    trace
        .rows_of(EventKind::BatchStart)
        .map(|r| (r.time.0 / 1000, r.query_id.as_str(), r.tuples))
        .collect()
}

// Minimum batches with rsf 1/2 are 10, 10 and 14 tuples. Greedy EDF then
// runs whatever has piled up whenever some query reaches its minimum.
#[test]
fn three_query_edf_matches_hand_simulation() {
    let config = SchedulerConfig::new(Fraction::new(1, 2), Duration::from_secs(100), Policy::Edf);
    let events = three_queries();
    let run = run_dynamic(&events, &config).unwrap();
    let mins: Vec<u64> = run.reports.iter().map(|r| r.min_batch_size).collect();
    assert_eq!(mins, vec![10, 10, 14]);
    assert_eq!(
        batches(&run.trace),
        vec![
            (9_000, "q1", 10),
            (11_000, "q2", 13),
            (13_300, "q3", 14),
            (16_000, "q2", 10),
            (18_000, "q3", 19),
            (20_900, "q3", 7),
            (22_600, "q2", 7),
            (24_300, "q1", 10),
        ]
    );
    let completions: Vec<(i64, &str)> = run
        .trace
        .rows_of(EventKind::AggEnd)
        .map(|r| (r.time.0 / 1000, r.query_id.as_str()))
        .collect();
    assert_eq!(
        completions,
        vec![(22_600, "q3"), (24_300, "q2"), (26_300, "q1")]
    );

    let queries: Vec<Query> = events
        .iter()
        .map(|e| match e {
            DynamicEvent::Add { query, .. } => query.clone(),
            DynamicEvent::Remove { .. } => unreachable!(),
        })
        .collect();
    let m = compute_metrics(&run.trace, &queries, BaselineMode::SingleBatchMin);
    let costs: Vec<Duration> = m.per_query.iter().map(|q| q.total_cost).collect();
    assert_eq!(costs, vec![ms(4000), ms(6000), ms(7000)]);
    assert!(m.all_deadlines_met());
    assert_eq!(m.deadline_miss_count, 0);
    assert!(m.per_query.iter().all(|q| q.normalized_cost <= 1.5));

    let marks: Vec<i64> = run
        .trace
        .rows_of(EventKind::ArrivalMark)
        .map(|r| r.time.0 / 1000)
        .collect();
    assert_eq!(marks, vec![19_000, 19_500, 19_750]);
    assert!(validate_trace(&run.trace, Some(config.cmax)).is_empty());
    assert!(check_non_idling(&events, &config, &run.trace).is_empty());
}

#[test]
fn trace_survives_csv_round_trip() {
    let config = SchedulerConfig::new(Fraction::new(1, 2), Duration::from_secs(100), Policy::Llf);
    let run = run_dynamic(&three_queries(), &config).unwrap();
    let mut bytes = Vec::new();
    run.trace.write_csv(&mut bytes).unwrap();
    let back = SimTrace::read_csv(bytes.as_slice()).unwrap();
    assert_eq!(back, run.trace);
}

#[test]
fn every_policy_completes_the_golden_workload() {
    for policy in Policy::ALL {
        let config = SchedulerConfig::new(Fraction::new(1, 2), Duration::from_secs(100), policy);
        let events = three_queries();
        let run = run_dynamic(&events, &config).unwrap();
        assert_eq!(run.trace.rows_of(EventKind::AggEnd).count(), 3, "{policy}");
        assert!(
            validate_trace(&run.trace, Some(config.cmax)).is_empty(),
            "{policy}"
        );
        assert!(
            check_non_idling(&events, &config, &run.trace).is_empty(),
            "{policy}"
        );
    }
}

fn arb_events() -> impl Strategy<Value = Vec<DynamicEvent>> {
    let one = (
        0i64..20,
        1i64..=4,
        1u64..60,
        1i64..40,
        0i64..1500,
        5i64..120,
    );
    prop::collection::vec(one, 1..5).prop_map(|qs| {
        let mut events: Vec<DynamicEvent> = qs
            .into_iter()
            .enumerate()
            .map(|(i, (start, rate, total, per_tuple, overhead, slack))| {
                let profile = ArrivalProfile::fixed(
                    Time::from_secs(start),
                    Fraction::from_integer(rate),
                    total,
                )
                .unwrap();
                let deadline = profile.window_end() + Duration::from_secs(slack);
                let q = Query::new(
                    format!("p{i}"),
                    profile,
                    deadline,
                    CostModel::linear(ms(per_tuple), ms(overhead)).unwrap(),
                    AggCostModel::per_extra_batch(ms(200), 2).unwrap(),
                )
                .unwrap();
                DynamicEvent::Add {
                    time: q.profile.start(),
                    query: q,
                    expected: None,
                }
            })
            .collect();
        events.sort_by_key(|e| e.time());
        events
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_workloads_keep_trace_invariants(
        events in arb_events(),
        policy in prop::sample::select(Policy::ALL.to_vec()),
        greedy in any::<bool>(),
    ) {
        let mut config = SchedulerConfig::new(Fraction::new(1, 2), Duration::from_secs(5), policy);
        config.greedy_batch = greedy;
        let run = run_dynamic(&events, &config).unwrap();
        prop_assert!(validate_trace(&run.trace, Some(config.cmax)).is_empty());
        prop_assert!(check_non_idling(&events, &config, &run.trace).is_empty());
        prop_assert_eq!(run.trace.rows_of(EventKind::AggEnd).count(), events.len());
        let again = run_dynamic(&events, &config).unwrap();
        prop_assert_eq!(again, run);
    }
}
