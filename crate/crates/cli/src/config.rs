//! Scenario files: a line-oriented, sectioned key/value format.
//!
//! ```text
//! # comment
//! [scheduler]
//! policy = edf
//! rsf = 0.5
//! cmax_ms = 20000
//!
//! [query q1]
//! arrival_ms = 0
//! deadline_ms = 12000
//! cost = linear{500000, 0}
//!
//! [profile q1]
//! actual = fixed{1000, 1, 10}
//! ```
//!
//! The README lists every section and key.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use iqsched_core::arrival::{parse_fraction, parse_ms};
use iqsched_core::workload::{template_by_name, RateKind, StaggerSpec};
use iqsched_core::{
    AggCostModel, ArrivalProfile, BaselineMode, CostModel, Duration, Fraction, Policy, RateMode,
    SchedulerConfig, Time,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{path}:{line}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DeadlineSpec {
    At(Time),
    /// Window end plus this multiple of the single-batch cost.
    Factor(Fraction),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuerySpec {
    pub id: String,
    pub line: usize,
    /// Admission time; defaults to the window start.
    pub arrival: Option<Time>,
    pub deadline: Option<DeadlineSpec>,
    pub cost: CostModel,
    pub agg: AggCostModel,
    pub actual: ArrivalProfile,
    pub expected: Option<ArrivalProfile>,
    pub remove: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioFile {
    pub label: String,
    pub scheduler: SchedulerConfig,
    pub baseline: BaselineMode,
    pub workload: Option<StaggerSpec>,
    /// In file order.
    pub queries: Vec<QuerySpec>,
}

#[derive(Default)]
struct RawQuery {
    line: usize,
    template: Option<(usize, String)>,
    cost: Option<(usize, String)>,
    agg: Option<(usize, String)>,
    groups: Option<(usize, String)>,
    arrival: Option<Time>,
    deadline: Option<DeadlineSpec>,
    remove: Option<Time>,
}

#[derive(Default)]
struct RawProfile {
    actual: Option<ArrivalProfile>,
    expected: Option<ArrivalProfile>,
}

enum Section {
    None,
    Scheduler,
    Workload,
    Query(String),
    Profile(String),
}

struct Parser<'a> {
    path: &'a str,
    line: usize,
}

impl Parser<'_> {
    fn err(&self, message: impl Into<String>) -> ConfigError {
        self.err_at(self.line, message)
    }

    fn err_at(&self, line: usize, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.to_string(),
            line,
            message: message.into(),
        }
    }

    fn field<T, E: std::fmt::Display>(
        &self,
        key: &str,
        r: std::result::Result<T, E>,
    ) -> Result<T, ConfigError> {
        r.map_err(|e| self.err(format!("field `{key}`: {e}")))
    }
}

pub fn parse_switch(text: &str) -> Option<bool> {
    match text {
        "on" | "true" | "yes" => Some(true),
        "off" | "false" | "no" => Some(false),
        _ => None,
    }
}

pub fn parse_baseline(text: &str) -> Option<BaselineMode> {
    match text {
        "sum" => Some(BaselineMode::SumSingleBatchMin),
        "per-query" => Some(BaselineMode::SingleBatchMin),
        _ => None,
    }
}

fn default_label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile, ConfigError> {
    let shown = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| ConfigError {
        path: shown.clone(),
        line: 0,
        message: format!("cannot read: {e}"),
    })?;
    parse_scenario(&text, &shown, &default_label(path))
}

pub fn parse_scenario(text: &str, path: &str, label: &str) -> Result<ScenarioFile, ConfigError> {
    let mut p = Parser { path, line: 0 };
    let mut label = label.to_string();
    let mut scheduler =
        SchedulerConfig::new(Fraction::new(1, 2), Duration::from_secs(20), Policy::Edf);
    let mut baseline = BaselineMode::SumSingleBatchMin;
    let mut workload: Option<StaggerSpec> = None;
    let mut queries: BTreeMap<String, RawQuery> = BTreeMap::new();
    let mut query_order: Vec<String> = Vec::new();
    let mut profiles: BTreeMap<String, (usize, RawProfile)> = BTreeMap::new();
    let mut section = Section::None;

    for (idx, raw) in text.lines().enumerate() {
        p.line = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(head) = line.strip_prefix('[') {
            let head = head
                .strip_suffix(']')
                .ok_or_else(|| p.err("section header is missing `]`"))?
                .trim();
            let mut parts = head.split_whitespace();
            let kind = parts.next().unwrap_or("");
            let id = parts.next();
            if parts.next().is_some() {
                return Err(p.err(format!("malformed section header [{head}]")));
            }
            section = match (kind, id) {
                ("scheduler", None) => Section::Scheduler,
                ("workload", None) => {
                    workload.get_or_insert_with(StaggerSpec::default);
                    Section::Workload
                }
                ("query", Some(id)) => {
                    if queries.contains_key(id) {
                        return Err(p.err(format!("query {id} declared twice")));
                    }
                    queries.insert(
                        id.to_string(),
                        RawQuery {
                            line: p.line,
                            ..RawQuery::default()
                        },
                    );
                    query_order.push(id.to_string());
                    Section::Query(id.to_string())
                }
                ("profile", Some(id)) => {
                    if profiles.contains_key(id) {
                        return Err(p.err(format!("profile {id} declared twice")));
                    }
                    profiles.insert(id.to_string(), (p.line, RawProfile::default()));
                    Section::Profile(id.to_string())
                }
                _ => return Err(p.err(format!("unknown section [{head}]"))),
            };
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| p.err("expected `key = value`"))?;
        let (key, value) = (key.trim(), value.trim());
        if value.is_empty() {
            return Err(p.err(format!("field `{key}` has no value")));
        }
        match &section {
            Section::None => match key {
                "label" => label = value.to_string(),
                _ => return Err(p.err(format!("field `{key}` outside any section"))),
            },
            Section::Scheduler => match key {
                "policy" => scheduler.policy = p.field(key, value.parse())?,
                "rsf" => scheduler.rsf = p.field(key, parse_fraction(value))?,
                "cmax_ms" => scheduler.cmax = Duration(p.field(key, parse_ms(value))?),
                "rate_mode" => scheduler.rate_mode = p.field::<RateMode, _>(key, value.parse())?,
                "greedy_batch" => {
                    scheduler.greedy_batch = parse_switch(value)
                        .ok_or_else(|| p.err(format!("field `{key}`: expected on|off")))?
                }
                "strict_polling" => {
                    scheduler.strict_polling = parse_switch(value)
                        .ok_or_else(|| p.err(format!("field `{key}`: expected on|off")))?
                }
                "baseline" => {
                    baseline = parse_baseline(value)
                        .ok_or_else(|| p.err(format!("field `{key}`: expected sum|per-query")))?
                }
                _ => return Err(p.err(format!("unknown field `{key}` in [scheduler]"))),
            },
            Section::Workload => {
                let w = workload.as_mut().expect("created with the section");
                match key {
                    "queries" => w.num_queries = p.field(key, value.parse())?,
                    "min_tuples" => w.min_tuples = p.field(key, value.parse())?,
                    "max_tuples" => w.max_tuples = p.field(key, value.parse())?,
                    "spacing_ms" => w.spacing = Duration(p.field(key, parse_ms(value))?),
                    "rate" => w.rate = p.field::<RateKind, _>(key, value.parse())?,
                    "delta" => w.delta = p.field(key, parse_fraction(value))?,
                    "seed" => w.seed = p.field(key, value.parse())?,
                    _ => return Err(p.err(format!("unknown field `{key}` in [workload]"))),
                }
            }
            Section::Query(id) => {
                let q = queries.get_mut(id).expect("created with the section");
                let here = Some((p.line, value.to_string()));
                match key {
                    "template" => q.template = here,
                    "cost" => q.cost = here,
                    "agg" => q.agg = here,
                    "groups" => q.groups = here,
                    "arrival_ms" => q.arrival = Some(Time(p.field(key, parse_ms(value))?)),
                    "remove_ms" => q.remove = Some(Time(p.field(key, parse_ms(value))?)),
                    "deadline_ms" | "deadline_factor" if q.deadline.is_some() => {
                        return Err(p.err(format!("query {id}: deadline given twice")))
                    }
                    "deadline_ms" => {
                        q.deadline = Some(DeadlineSpec::At(Time(p.field(key, parse_ms(value))?)))
                    }
                    "deadline_factor" => {
                        q.deadline =
                            Some(DeadlineSpec::Factor(p.field(key, parse_fraction(value))?))
                    }
                    _ => return Err(p.err(format!("unknown field `{key}` in [query {id}]"))),
                }
            }
            Section::Profile(id) => {
                let pr = &mut profiles.get_mut(id).expect("created with the section").1;
                match key {
                    "actual" => pr.actual = Some(p.field(key, value.parse())?),
                    "expected" => pr.expected = Some(p.field(key, value.parse())?),
                    _ => return Err(p.err(format!("unknown field `{key}` in [profile {id}]"))),
                }
            }
        }
    }

    p.line = 0;
    if scheduler.cmax <= Duration::ZERO {
        return Err(p.err("field `cmax_ms` must be positive"));
    }
    if scheduler.rsf < Fraction::from_integer(0) {
        return Err(p.err("field `rsf` must be non-negative"));
    }

    let mut specs = Vec::with_capacity(query_order.len());
    for id in &query_order {
        let raw = queries.remove(id).expect("ordered ids");
        let (_, prof) = profiles.remove(id).ok_or_else(|| {
            p.err_at(
                raw.line,
                format!("query {id} has no [profile {id}] section"),
            )
        })?;
        let actual = prof
            .actual
            .ok_or_else(|| p.err_at(raw.line, format!("profile {id} lacks field `actual`")))?;
        specs.push(finish_query(&p, id, raw, actual, prof.expected)?);
    }
    if let Some((id, (line, _))) = profiles.into_iter().next() {
        return Err(p.err_at(line, format!("profile {id} has no matching [query {id}]")));
    }
    if workload.is_some() && !specs.is_empty() {
        return Err(p.err("[workload] and [query] sections cannot be combined"));
    }
    if workload.is_none() && specs.is_empty() {
        return Err(p.err("scenario declares no queries and no [workload]"));
    }
    Ok(ScenarioFile {
        label,
        scheduler,
        baseline,
        workload,
        queries: specs,
    })
}

fn finish_query(
    p: &Parser<'_>,
    id: &str,
    raw: RawQuery,
    actual: ArrivalProfile,
    expected: Option<ArrivalProfile>,
) -> Result<QuerySpec, ConfigError> {
    let template = match &raw.template {
        Some((line, name)) => Some(
            template_by_name(name)
                .ok_or_else(|| p.err_at(*line, format!("unknown template `{name}`")))?,
        ),
        None => None,
    };
    let groups = match &raw.groups {
        Some((line, g)) => g
            .parse::<u64>()
            .map_err(|e| p.err_at(*line, format!("field `groups`: {e}")))?,
        None => template.map(|t| t.num_groups).unwrap_or(1),
    };
    let cost = match (&raw.cost, template) {
        (Some((line, text)), _) => text
            .parse::<CostModel>()
            .map_err(|e| p.err_at(*line, format!("field `cost`: {e}")))?,
        (None, Some(t)) => t.cost_model(actual.total()),
        (None, None) => {
            return Err(p.err_at(raw.line, format!("query {id} needs `cost` or `template`")))
        }
    };
    let agg = match (&raw.agg, template) {
        (Some((line, text)), _) => AggCostModel::parse(text, groups)
            .map_err(|e| p.err_at(*line, format!("field `agg`: {e}")))?,
        (None, Some(t)) => {
            let mut m = t.agg_model();
            m.num_groups = groups;
            m
        }
        (None, None) => AggCostModel::free(groups),
    };
    if let Some(DeadlineSpec::At(d)) = raw.deadline {
        if d <= actual.start() {
            return Err(p.err_at(
                raw.line,
                format!("query {id}: deadline is not after the window start"),
            ));
        }
    }
    Ok(QuerySpec {
        id: id.to_string(),
        line: raw.line,
        arrival: raw.arrival,
        deadline: raw.deadline,
        cost,
        agg,
        actual,
        expected,
        remove: raw.remove,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const CASE3: &str = "\
# worked example with a 12 s deadline
[scheduler]
policy = llf
rsf = 1/2
cmax_ms = 8000.5

[query q1]
deadline_ms = 12000
cost = linear{500000, 0}

[profile q1]
actual = fixed{1000, 1, 10}
";

    #[test]
    fn parses_sections() {
        let s = parse_scenario(CASE3, "t.conf", "t").unwrap();
        assert_eq!(s.scheduler.policy, Policy::Llf);
        assert_eq!(s.scheduler.cmax, Duration(8_000_500));
        assert_eq!(s.queries.len(), 1);
        let q = &s.queries[0];
        assert_eq!(q.deadline, Some(DeadlineSpec::At(Time::from_secs(12))));
        assert_eq!(q.actual.total(), 10);
        assert_eq!(q.agg, AggCostModel::free(1));
    }

    #[test]
    fn diagnostics_name_line_and_field() {
        let bad = CASE3.replace("rsf = 1/2", "rsf = fast");
        let e = parse_scenario(&bad, "t.conf", "t").unwrap_err();
        assert_eq!(e.line, 4);
        assert!(e.message.contains("`rsf`"), "{e}");
        assert!(e.to_string().starts_with("t.conf:4:"));

        let e =
            parse_scenario(&CASE3.replace("[profile q1]", "[profile q2]"), "t", "t").unwrap_err();
        assert_eq!(e.line, 7);
        assert!(e.message.contains("no [profile q1]"));

        let e = parse_scenario(&CASE3.replace("cost = ", "costs = "), "t", "t").unwrap_err();
        assert_eq!(e.line, 9);
        assert!(e.message.contains("unknown field `costs`"));
    }

    #[test]
    fn template_fills_cost_and_agg() {
        let text = "[query a]\ntemplate = t01\ndeadline_factor = 1.2\n[profile a]\nactual = fixed{0, 1, 100}\n";
        let s = parse_scenario(text, "t", "t").unwrap();
        let tpl = template_by_name("t01").unwrap();
        assert_eq!(s.queries[0].cost, tpl.cost_model(100));
        assert_eq!(
            s.queries[0].deadline,
            Some(DeadlineSpec::Factor(Fraction::new(6, 5)))
        );
    }

    #[test]
    fn workload_section_uses_defaults() {
        let s = parse_scenario("[workload]\nseed = 9\nrate = vr3\n", "t", "t").unwrap();
        let w = s.workload.unwrap();
        assert_eq!(w.seed, 9);
        assert_eq!(w.rate, RateKind::Vr3);
        assert_eq!(w.num_queries, StaggerSpec::default().num_queries);
        assert!(parse_scenario("[scheduler]\n", "t", "t").is_err());
    }
}
