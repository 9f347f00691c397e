//! Synthetic scenarios: deadline scaling and staggering, rate profiles,
//! a catalog of query cost templates, and seeded generators.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::arrival::ArrivalProfile;
use crate::cost_model::{AggCostModel, CostModel};
use crate::dynamic_sched::{DynamicEvent, SchedulerConfig};
use crate::error::{Error, Result};
use crate::rational::{scale_round, Fraction};
use crate::single_query::Query;
use crate::time::{Duration, Time, MICROS_PER_SEC};

/// Deadline at `window end + factor · single-batch cost`; factor 1 leaves zero slack.
pub fn scale_deadline(query: &Query, factor: Fraction) -> Result<Query> {
    if factor <= Fraction::from_integer(0) {
        return Err(Error::InvalidConfig(
            "deadline factor must be positive".into(),
        ));
    }
    let room = scale_round(query.min_comp_cost().0, factor);
    let mut out = query.clone();
    out.deadline = query.window_end() + Duration(room);
    Ok(out)
}

/// Assigns chained deadlines. Queries are processed in window-end order
/// (ties by id) and returned in that order.
///
/// The first query, and any query whose window ends after its predecessor's
/// deadline, gets `window end + δ·cost + cmax`; otherwise the deadline is
/// the predecessor's deadline plus `δ·cost`.
pub fn stagger_deadlines(
    mut queries: Vec<Query>,
    delta: Fraction,
    cmax: Duration,
) -> Result<Vec<Query>> {
    if queries.is_empty() {
        return Err(Error::InvalidConfig("no queries to stagger".into()));
    }
    if delta < Fraction::from_integer(0) {
        return Err(Error::InvalidConfig("delta must be non-negative".into()));
    }
    queries.sort_by(|a, b| (a.window_end(), &a.id).cmp(&(b.window_end(), &b.id)));
    let mut prev: Option<Time> = None;
    for q in &mut queries {
        let share = Duration(scale_round(q.min_comp_cost().0, delta));
        let end = q.window_end();
        q.deadline = match prev {
            Some(p) if end <= p => p + share,
            _ => end + share + cmax,
        };
        prev = Some(q.deadline);
    }
    Ok(queries)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RateKind {
    /// Constant rate.
    Fr,
    /// Uniformly faster: done at 0.9 of the horizon.
    Vr1,
    /// Front-loaded bursts, done at 0.9 of the horizon.
    Vr2,
    /// Uniformly slower: the last tuple is 20 s late per 4500 s of horizon.
    Vr3,
    /// Slow start, then catching up: 7 s late per 4500 s of horizon.
    Vr4,
}

impl RateKind {
    pub const ALL: [RateKind; 5] = [
        RateKind::Fr,
        RateKind::Vr1,
        RateKind::Vr2,
        RateKind::Vr3,
        RateKind::Vr4,
    ];
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RateKind::Fr => "fr",
            RateKind::Vr1 => "vr1",
            RateKind::Vr2 => "vr2",
            RateKind::Vr3 => "vr3",
            RateKind::Vr4 => "vr4",
        })
    }
}

impl FromStr for RateKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RateKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown rate kind {s:?}")))
    }
}

/// Reference horizon that the VR3/VR4 lateness figures are quoted against.
const REFERENCE_HORIZON_S: i64 = 4500;

fn frac_of(d: Duration, num: i64, den: i64) -> Duration {
    Duration(scale_round(d.0, Fraction::new(num, den)))
}

fn count_frac(total: u64, num: u64, den: u64) -> u64 {
    ((total * num + den / 2) / den).clamp(1, total)
}

/// Builds an arrival profile delivering `total` tuples, starting at `start`,
/// shaped after `kind` over `horizon`.
pub fn make_rate_profile(
    kind: RateKind,
    total: u64,
    horizon: Duration,
    start: Time,
) -> Result<ArrivalProfile> {
    if total == 0 || horizon <= Duration::ZERO {
        return Err(Error::InvalidProfile(
            "total and horizon must be positive".into(),
        ));
    }
    if kind == RateKind::Fr {
        let rate = Fraction::new(
            i64::try_from(total as i128 * MICROS_PER_SEC as i128)
                .map_err(|_| Error::InvalidProfile("total too large".into()))?,
            horizon.0,
        );
        return ArrivalProfile::fixed(start, rate, total);
    }
    if total == 1 {
        return ArrivalProfile::trace(vec![(start, 1)]);
    }
    let lateness = |secs: i64| {
        Duration(scale_round(
            horizon.0,
            Fraction::new(secs, REFERENCE_HORIZON_S),
        ))
    };
    let at = |d: Duration, c: u64| (start + d, c);
    let points = match kind {
        RateKind::Fr => unreachable!(),
        RateKind::Vr1 => vec![at(Duration::ZERO, 1), at(frac_of(horizon, 9, 10), total)],
        RateKind::Vr2 => {
            let span = frac_of(horizon, 9, 10);
            let step =
                |num: i64, share: u64| at(frac_of(span, num, 100), count_frac(total, share, 100));
            vec![
                at(Duration::ZERO, 1),
                step(5, 40),
                step(30, 40),
                step(35, 70),
                step(60, 70),
                step(65, 90),
                at(span, total),
            ]
        }
        RateKind::Vr3 => vec![at(Duration::ZERO, 1), at(horizon + lateness(20), total)],
        RateKind::Vr4 => {
            let span = horizon + lateness(7);
            vec![
                at(Duration::ZERO, 1),
                at(frac_of(span, 1, 2), count_frac(total, 3, 10)),
                at(span, total),
            ]
        }
    };
    ArrivalProfile::trace(points)
}

/// A synthetic query shape: concave two-slope processing cost plus a
/// per-extra-batch aggregation cost tied to the group count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueryTemplate {
    pub name: &'static str,
    /// Fixed cost of any non-empty batch.
    pub intercept: Duration,
    /// Per-tuple cost up to `knee` tuples.
    pub slope_low: Duration,
    pub knee: u64,
    /// Per-tuple cost beyond the knee.
    pub slope_high: Duration,
    pub num_groups: u64,
    /// Aggregation cost of each batch beyond the first.
    pub agg_step: Duration,
}

const fn ms(v: i64) -> Duration {
    Duration::from_millis(v)
}

const fn us(v: i64) -> Duration {
    Duration::from_micros(v)
}

const fn template(
    name: &'static str,
    intercept: Duration,
    slope_low: Duration,
    knee: u64,
    slope_high: Duration,
    num_groups: u64,
) -> QueryTemplate {
    let agg_step = match num_groups {
        0..=1 => ms(100),
        2..=10 => ms(250),
        11..=500 => ms(1500),
        _ => ms(4000),
    };
    QueryTemplate {
        name,
        intercept,
        slope_low,
        knee,
        slope_high,
        num_groups,
        agg_step,
    }
}

/// Twelve templates. `t05`–`t07` are the expensive-at-small-batch ones.
pub const CATALOG: [QueryTemplate; 12] = [
    template("t01", ms(1000), us(20_000), 1000, us(10_000), 1),
    template("t02", ms(1500), us(15_000), 2000, us(8_000), 5),
    template("t03", ms(500), us(30_000), 500, us(20_000), 360),
    template("t04", ms(2000), us(10_000), 1500, us(6_000), 1500),
    template("t05", ms(8000), us(40_000), 300, us(12_000), 1),
    template("t06", ms(7000), us(35_000), 400, us(15_000), 5),
    template("t07", ms(6000), us(50_000), 200, us(10_000), 360),
    template("t08", ms(800), us(12_000), 3000, us(9_000), 1500),
    template("t09", ms(1200), us(25_000), 1000, us(15_000), 1),
    template("t10", ms(300), us(8_000), 2500, us(5_000), 5),
    template("t11", ms(2500), us(18_000), 1500, us(12_000), 360),
    template("t12", ms(1000), us(22_000), 800, us(16_000), 1500),
];

pub fn template_by_name(name: &str) -> Option<&'static QueryTemplate> {
    CATALOG.iter().find(|t| t.name == name)
}

impl QueryTemplate {
    /// Piecewise-linear cost with knots at 0, the knee and `max_tuples`.
    pub fn cost_model(&self, max_tuples: u64) -> CostModel {
        let at_knee = self.intercept + self.slope_low * self.knee as i64;
        let end = max_tuples.max(self.knee + 1);
        let at_end = at_knee + self.slope_high * (end - self.knee) as i64;
        CostModel::piecewise(vec![
            (0, self.intercept),
            (self.knee, at_knee),
            (end, at_end),
        ])
        .expect("catalog curves are monotone")
    }

    pub fn agg_model(&self) -> AggCostModel {
        AggCostModel::per_extra_batch(self.agg_step, self.num_groups).expect("non-negative step")
    }

    pub fn instantiate(&self, id: &str, profile: ArrivalProfile, deadline: Time) -> Result<Query> {
        let cost = self.cost_model(profile.total());
        Query::new(id, profile, deadline, cost, self.agg_model())
    }
}

/// One query of a scenario and when it is admitted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioQuery {
    pub arrival: Time,
    pub query: Query,
    /// The profile the scheduler plans with, when it differs from reality.
    pub expected: Option<ArrivalProfile>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub label: String,
    pub seed: u64,
    pub config: SchedulerConfig,
    pub queries: Vec<ScenarioQuery>,
}

impl Scenario {
    /// Admissions sorted by time, then query id.
    pub fn events(&self) -> Vec<DynamicEvent> {
        let mut qs: Vec<&ScenarioQuery> = self.queries.iter().collect();
        qs.sort_by(|a, b| (a.arrival, &a.query.id).cmp(&(b.arrival, &b.query.id)));
        qs.into_iter()
            .map(|q| DynamicEvent::Add {
                time: q.arrival,
                query: q.query.clone(),
                expected: q.expected.clone(),
            })
            .collect()
    }

    pub fn plain_queries(&self) -> Vec<Query> {
        self.queries.iter().map(|q| q.query.clone()).collect()
    }
}

/// Parameters of a multi-query experiment with staggered windows and deadlines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StaggerSpec {
    pub num_queries: usize,
    /// Inclusive range of tuples per window; arrivals average one per second.
    pub min_tuples: u64,
    pub max_tuples: u64,
    /// Nominal gap between consecutive window starts.
    pub spacing: Duration,
    pub rate: RateKind,
    pub delta: Fraction,
    pub seed: u64,
}

impl Default for StaggerSpec {
    fn default() -> Self {
        StaggerSpec {
            num_queries: 12,
            min_tuples: 3000,
            max_tuples: 4500,
            spacing: Duration::from_secs(300),
            rate: RateKind::Fr,
            delta: Fraction::from_integer(1),
            seed: 1,
        }
    }
}

/// Builds the staggered multi-query scenario. Deadlines are derived from the
/// fixed-rate expectation; with a variable `rate` the real arrivals deviate
/// from it and the expectation is handed to the scheduler.
pub fn staggered_scenario(spec: &StaggerSpec, config: SchedulerConfig) -> Result<Scenario> {
    if spec.num_queries == 0 || spec.min_tuples == 0 || spec.min_tuples > spec.max_tuples {
        return Err(Error::InvalidConfig("bad stagger spec".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut templates: Vec<&QueryTemplate> = CATALOG.iter().collect();
    templates.shuffle(&mut rng);

    let mut planned = Vec::with_capacity(spec.num_queries);
    for i in 0..spec.num_queries {
        let tpl = templates[i % templates.len()];
        let total = rng.gen_range(spec.min_tuples..=spec.max_tuples);
        let jitter = Duration::from_secs(rng.gen_range(0..=spec.spacing.0 / MICROS_PER_SEC / 2));
        let start = Time::ZERO + spec.spacing * i as i64 + jitter;
        let horizon = Duration::from_secs(total as i64);
        let expected = make_rate_profile(RateKind::Fr, total, horizon, start)?;
        let placeholder = expected.window_end() + Duration::from_secs(1);
        let id = format!("q{:02}-{}", i + 1, tpl.name);
        planned.push((
            tpl.instantiate(&id, expected, placeholder)?,
            tpl,
            horizon,
            start,
        ));
    }
    let staggered = stagger_deadlines(
        planned.iter().map(|p| p.0.clone()).collect(),
        spec.delta,
        config.cmax,
    )?;

    let mut queries = Vec::with_capacity(staggered.len());
    for q in staggered {
        let (_, _, horizon, start) = planned.iter().find(|p| p.0.id == q.id).expect("same ids");
        let (query, expected) = if spec.rate == RateKind::Fr {
            (q, None)
        } else {
            let actual = make_rate_profile(spec.rate, q.total_tuples(), *horizon, *start)?;
            let expected = q.profile.clone();
            let mut real = q;
            real.profile = actual;
            (real, Some(expected))
        };
        queries.push(ScenarioQuery {
            arrival: query.profile.start(),
            query,
            expected,
        });
    }
    Ok(Scenario {
        label: format!(
            "stagger-{}-d{}-s{}",
            spec.rate,
            crate::rational::to_f64(spec.delta),
            spec.seed
        ),
        seed: spec.seed,
        config,
        queries,
    })
}

/// Small single-query instances on an integer-second grid: rates of 1 or
/// 1/2 tuples per second, whole-second linear costs, optional 1 s
/// aggregation per extra batch, and deadlines from the window end up to a
/// few seconds past the single-batch finish.
pub fn small_instance_corpus(seed: u64, count: usize, max_tuples: u64) -> Vec<Query> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let total = rng.gen_range(1..=max_tuples.max(1));
            let rate = if rng.gen_bool(0.5) {
                Fraction::from_integer(1)
            } else {
                Fraction::new(1, 2)
            };
            let start = Time::from_secs(rng.gen_range(0..=4));
            let per_tuple = Duration::from_secs(rng.gen_range(1..=2));
            let overhead = Duration::from_secs(rng.gen_range(0..=2));
            let cost = CostModel::linear(per_tuple, overhead).expect("non-negative");
            let agg = if rng.gen_bool(0.5) {
                AggCostModel::free(1)
            } else {
                AggCostModel::per_extra_batch(Duration::from_secs(1), 1).expect("non-negative")
            };
            let profile = ArrivalProfile::fixed(start, rate, total).expect("positive rate");
            let single = cost.eval(total).0 / MICROS_PER_SEC;
            let k = rng.gen_range(0..=single + 3);
            let deadline = profile.window_end() + Duration::from_secs(k);
            let deadline = deadline.max(start + Duration::from_secs(1));
            Query::new(format!("c{i:04}"), profile, deadline, cost, agg)
                .expect("deadline after start")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::single_query::compute_slack;
    use crate::single_query::tests::worked_case;

    #[test]
    fn deadline_scaling_reproduces_worked_geometry() {
        let q = worked_case(16);
        let d = |f: Fraction| scale_deadline(&q, f).unwrap().deadline;
        assert_eq!(d(Fraction::from_integer(1)), Time::from_secs(15));
        assert_eq!(d(Fraction::new(2, 5)), Time::from_secs(12));
        assert_eq!(d(Fraction::new(1, 5)), Time::from_secs(11));
        assert_eq!(
            compute_slack(&scale_deadline(&q, Fraction::from_integer(1)).unwrap()),
            Duration::ZERO
        );
        assert!(scale_deadline(&q, Fraction::from_integer(0)).is_err());
    }

    fn at_end(id: &str, end_s: i64, cost_s: i64) -> Query {
        // One tuple that arrives at `end_s`, costing `cost_s`.
        Query::new(
            id,
            ArrivalProfile::fixed(Time::from_secs(end_s), Fraction::from_integer(1), 1).unwrap(),
            Time::from_secs(end_s + 1),
            CostModel::linear(Duration::from_secs(cost_s), Duration::ZERO).unwrap(),
            AggCostModel::free(1),
        )
        .unwrap()
    }

    #[test]
    fn staggering_rules() {
        let cmax = Duration::from_secs(5);
        let delta = Fraction::new(1, 2);
        let one = stagger_deadlines(vec![at_end("a", 100, 20)], delta, cmax).unwrap();
        assert_eq!(one[0].deadline, Time::from_secs(100 + 10 + 5));

        // b's window ends before a's deadline: chained.
        let two = stagger_deadlines(
            vec![at_end("b", 110, 40), at_end("a", 100, 20)],
            delta,
            cmax,
        )
        .unwrap();
        assert_eq!(two[0].id, "a");
        assert_eq!(two[1].deadline, Time::from_secs(115 + 20));

        // c's window ends after b's deadline: restarts from its own window end.
        let three = stagger_deadlines(
            vec![at_end("a", 100, 20), at_end("c", 200, 10)],
            delta,
            cmax,
        )
        .unwrap();
        assert_eq!(three[1].deadline, Time::from_secs(200 + 5 + 5));

        let zero =
            stagger_deadlines(vec![at_end("a", 100, 20)], Fraction::from_integer(0), cmax).unwrap();
        assert_eq!(zero[0].deadline, Time::from_secs(105));
    }

    #[test]
    fn rate_profiles() {
        let h = Duration::from_secs(4500);
        let fr = make_rate_profile(RateKind::Fr, 4500, h, Time::ZERO).unwrap();
        assert_eq!(
            fr,
            ArrivalProfile::FixedRate {
                start: Time::ZERO,
                rate: Fraction::from_integer(1),
                total: 4500
            }
        );
        let vr3 = make_rate_profile(RateKind::Vr3, 4500, h, Time::ZERO).unwrap();
        assert_eq!(vr3.window_end(), Time::from_secs(4520));
        let vr4 = make_rate_profile(RateKind::Vr4, 4500, h, Time::ZERO).unwrap();
        assert_eq!(vr4.window_end(), Time::from_secs(4507));
        let short = Duration::from_secs(450);
        let vr3_small = make_rate_profile(RateKind::Vr3, 450, short, Time::ZERO).unwrap();
        assert_eq!(vr3_small.window_end(), Time::from_secs(452));
        for kind in RateKind::ALL {
            for total in [1, 2, 17, 4500] {
                let p = make_rate_profile(kind, total, h, Time::from_secs(3)).unwrap();
                assert_eq!(p.total(), total, "{kind}");
                assert_eq!(p.start(), Time::from_secs(3));
            }
        }
        let vr1 =
            make_rate_profile(RateKind::Vr1, 100, Duration::from_secs(100), Time::ZERO).unwrap();
        assert_eq!(vr1.window_end(), Time::from_secs(90));
        let vr2 =
            make_rate_profile(RateKind::Vr2, 100, Duration::from_secs(100), Time::ZERO).unwrap();
        assert_eq!(vr2.window_end(), Time::from_secs(90));
        // Front-loaded: well ahead of the fixed-rate curve early on.
        assert!(vr2.tuples_available_at(Time::from_secs(10)) >= 40);
        assert!(make_rate_profile(RateKind::Fr, 0, h, Time::ZERO).is_err());
    }

    #[test]
    fn catalog_is_well_formed() {
        assert_eq!(CATALOG.len(), 12);
        let groups: std::collections::BTreeSet<u64> =
            CATALOG.iter().map(|t| t.num_groups).collect();
        assert_eq!(
            groups.into_iter().collect::<Vec<_>>(),
            vec![1, 5, 360, 1500]
        );
        for t in &CATALOG {
            let m = t.cost_model(4500);
            assert!(m.eval(1) > Duration::ZERO);
            assert!(m.eval(4500) >= m.eval(1000));
            assert_eq!(t.agg_model().eval(1), Duration::ZERO);
        }
        assert!(template_by_name("t07").is_some());
        assert!(template_by_name("nope").is_none());
    }

    #[test]
    fn staggered_scenario_is_reproducible() {
        let config = SchedulerConfig::new(
            Fraction::new(1, 2),
            Duration::from_secs(20),
            crate::dynamic_sched::Policy::Edf,
        );
        let spec = StaggerSpec::default();
        let a = staggered_scenario(&spec, config.clone()).unwrap();
        let b = staggered_scenario(&spec, config.clone()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.queries.len(), 12);
        let deadlines: Vec<Time> = a.queries.iter().map(|q| q.query.deadline).collect();
        assert!(deadlines.windows(2).all(|w| w[0] <= w[1]));
        let other = staggered_scenario(
            &StaggerSpec {
                seed: 2,
                ..spec.clone()
            },
            config.clone(),
        )
        .unwrap();
        assert_ne!(a, other);

        let slow = staggered_scenario(
            &StaggerSpec {
                rate: RateKind::Vr3,
                ..spec
            },
            config,
        )
        .unwrap();
        for (fast, slow) in a.queries.iter().zip(&slow.queries) {
            assert_eq!(fast.query.deadline, slow.query.deadline);
            assert!(slow.query.window_end() > fast.query.window_end());
            assert_eq!(slow.expected.as_ref(), Some(&fast.query.profile));
        }
    }

    #[test]
    fn corpus_is_valid_and_seeded() {
        let a = small_instance_corpus(7, 200, 12);
        assert_eq!(a, small_instance_corpus(7, 200, 12));
        assert_ne!(a, small_instance_corpus(8, 200, 12));
        for q in &a {
            assert!(q.total_tuples() >= 1 && q.total_tuples() <= 12);
            assert!(q.deadline > q.profile.start());
            assert!(q.deadline >= q.window_end());
        }
    }
}
