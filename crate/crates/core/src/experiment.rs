//! Seeded experiment sweeps: plans, result tables and trend assertions.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marl::{train, write_records_csv, Algorithm, Architecture, Hyperparams, OnOffPolicy, RunSetup};
use crate::scenario::ScenarioConfig;

/// Scenario parameter varied by a plan.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    /// Total users K, apportioned over regions by width.
    Users,
    /// Elements per surface N.
    Elements,
    /// Number of surfaces V, with V + 1 regions.
    Surfaces,
    /// BS antennas M.
    Antennas,
    /// Surface spacing, metres.
    Spacing,
}

fn as_count(value: f64, what: &str) -> Result<usize> {
    if value >= 1.0 && value.fract() == 0.0 {
        Ok(value as usize)
    } else {
        Err(Error::Config(format!("{what} must be a positive integer, got {value}")))
    }
}

impl Axis {
    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &ScenarioConfig, value: f64) -> Result<ScenarioConfig> {
        let mut c = base.clone();
        match self {
            Axis::Users => {
                let k = as_count(value, "user count")?;
                c.users_per_region = c.apportion_users(k)?;
            }
            Axis::Elements => c.n_elements = as_count(value, "element count")?,
            Axis::Surfaces => {
                c.v_surfaces = as_count(value, "surface count")?;
                c.i_regions = c.v_surfaces + 1;
                c.users_per_region = c.apportion_users(base.total_users())?;
            }
            Axis::Antennas => c.m_antennas = as_count(value, "antenna count")?,
            Axis::Spacing => c.surface_spacing_m = value,
        }
        c.validate()?;
        Ok(c)
    }
}

/// Which factor an assertion compares across.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    Axis,
    Algorithm,
    Baseline,
    Policy,
}

/// Restricts an assertion to a subset of rows.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Filter {
    pub axis_value: Option<f64>,
    pub algorithm: Option<Algorithm>,
    pub baseline: Option<Architecture>,
    pub policy: Option<OnOffPolicy>,
}

impl Filter {
    fn matches(&self, row: &ResultRow) -> bool {
        self.axis_value.is_none_or(|v| v == row.axis_value)
            && self.algorithm.is_none_or(|a| a == row.algorithm)
            && self.baseline.is_none_or(|b| b == row.baseline)
            && self.policy.is_none_or(|p| p == row.policy)
    }
}

/// Trend check evaluated on a finished table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Assertion {
    /// Seed-averaged final EE is non-increasing along `order`; with
    /// `strict`, every gap must be positive.
    MeanOrder {
        name: String,
        #[serde(default)]
        filter: Filter,
        factor: Factor,
        order: Vec<String>,
        #[serde(default)]
        strict: bool,
    },
    /// Final EE at level `higher` is at least that at `lower` on at least
    /// `min_fraction` of seeds.
    SeedWise {
        name: String,
        #[serde(default)]
        filter: Filter,
        factor: Factor,
        higher: String,
        lower: String,
        min_fraction: f64,
    },
    /// Final-window mean beats first-window mean on at least `min_fraction`
    /// of the matching runs.
    Improves {
        name: String,
        #[serde(default)]
        filter: Filter,
        min_fraction: f64,
    },
    /// The seed-averaged maximum over the axis is at neither end.
    InteriorPeak {
        name: String,
        #[serde(default)]
        filter: Filter,
    },
    /// Seed-averaged EE at axis value `at` is at least that at both ends.
    PeakAt {
        name: String,
        #[serde(default)]
        filter: Filter,
        at: f64,
    },
}

impl Assertion {
    pub fn name(&self) -> &str {
        match self {
            Assertion::MeanOrder { name, .. }
            | Assertion::SeedWise { name, .. }
            | Assertion::Improves { name, .. }
            | Assertion::InteriorPeak { name, .. }
            | Assertion::PeakAt { name, .. } => name,
        }
    }
}

/// A sweep over one scenario axis for every algorithm/baseline/policy/seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub base: ScenarioConfig,
    #[serde(default)]
    pub hyper: Hyperparams,
    pub axis: Axis,
    pub values: Vec<f64>,
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    #[serde(default = "default_baselines")]
    pub baselines: Vec<Architecture>,
    #[serde(default = "default_policies")]
    pub policies: Vec<OnOffPolicy>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub assertions: Vec<Assertion>,
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Magar]
}

fn default_baselines() -> Vec<Architecture> {
    vec![Architecture::Es]
}

fn default_policies() -> Vec<OnOffPolicy> {
    vec![OnOffPolicy::Optimized]
}

/// Identity of one run inside a plan.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanTuple {
    pub axis_value: f64,
    pub setup: RunSetup,
}

impl ExperimentPlan {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let plan: Self = serde_json::from_str(text)?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("plan needs axis values and seeds".into()));
        }
        if self.algorithms.is_empty() || self.baselines.is_empty() || self.policies.is_empty() {
            return Err(Error::Config("plan needs algorithms, baselines and policies".into()));
        }
        if self.baselines.contains(&Architecture::None) && self.policies.len() > 1 {
            return Err(Error::Config("the NONE baseline has no elements to switch; use a single policy".into()));
        }
        self.base.validate()?;
        self.hyper.validate()?;
        for &v in &self.values {
            self.axis.apply(&self.base, v)?;
        }
        for a in &self.assertions {
            if let Assertion::SeedWise { min_fraction, .. } | Assertion::Improves { min_fraction, .. } = a {
                if !(0.0..=1.0).contains(min_fraction) {
                    return Err(Error::Config(format!("assertion `{}`: min_fraction outside [0, 1]", a.name())));
                }
            }
        }
        Ok(())
    }

    /// Every run of the plan in canonical order.
    pub fn tuples(&self) -> Result<Vec<PlanTuple>> {
        let mut out = Vec::new();
        for &value in &self.values {
            let config = self.axis.apply(&self.base, value)?;
            for &algorithm in &self.algorithms {
                for &architecture in &self.baselines {
                    for &policy in &self.policies {
                        for &seed in &self.seeds {
                            out.push(PlanTuple {
                                axis_value: value,
                                setup: RunSetup {
                                    config: config.clone(),
                                    hyper: self.hyper.clone(),
                                    algorithm,
                                    architecture,
                                    policy,
                                    master_seed: seed,
                                },
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Scalar summary of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub final_ee: f64,
    pub first_ee: f64,
    pub final_rate_bps: f64,
    pub final_power_watt: f64,
    pub failed: Option<String>,
}

/// Train `setup` and reduce its records to window means.
pub fn run_one(setup: &RunSetup) -> RunSummary {
    match train(setup.clone()) {
        Ok(out) if out.diverged.is_none() && !out.records.is_empty() => RunSummary {
            final_ee: out.final_mean(|r| r.energy_efficiency),
            first_ee: out.first_mean(|r| r.energy_efficiency),
            final_rate_bps: out.final_mean(|r| r.sum_rate_bps),
            final_power_watt: out.final_mean(|r| r.total_power_watt),
            failed: None,
        },
        Ok(out) => failed_summary(out.diverged.unwrap_or_else(|| "no records".into())),
        Err(e) => failed_summary(e.to_string()),
    }
}

fn failed_summary(msg: String) -> RunSummary {
    RunSummary {
        final_ee: f64::NAN,
        first_ee: f64::NAN,
        final_rate_bps: f64::NAN,
        final_power_watt: f64::NAN,
        failed: Some(msg),
    }
}

/// One row of a result table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub axis_value: f64,
    pub algorithm: Algorithm,
    pub baseline: Architecture,
    pub policy: OnOffPolicy,
    pub seed: u64,
    /// Mean EE over the last 10% of slots, bits/J.
    pub final_ee: f64,
    /// Mean EE over the first 10% of slots, bits/J.
    pub first_ee: f64,
    pub mean_rate_bps: f64,
    pub mean_power_watt: f64,
    pub failed: Option<String>,
}

/// Rows of a finished plan in canonical order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn sort(&mut self) {
        self.rows.sort_by(|a, b| {
            a.axis_value
                .total_cmp(&b.axis_value)
                .then(a.algorithm.cmp(&b.algorithm))
                .then(a.baseline.cmp(&b.baseline))
                .then(a.policy.cmp(&b.policy))
                .then(a.seed.cmp(&b.seed))
        });
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "axis_value",
            "algorithm",
            "baseline",
            "policy",
            "seed",
            "final_ee",
            "first_ee",
            "mean_rate_bps",
            "mean_power_watt",
            "failed",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.axis_value.to_string(),
                r.algorithm.name().to_string(),
                r.baseline.name().to_string(),
                r.policy.name().to_string(),
                r.seed.to_string(),
                r.final_ee.to_string(),
                r.first_ee.to_string(),
                r.mean_rate_bps.to_string(),
                r.mean_power_watt.to_string(),
                r.failed.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(input: R) -> Result<Self> {
        let mut rows = Vec::new();
        let mut reader = csv::Reader::from_reader(input);
        for rec in reader.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("").to_string();
            let num = |i: usize| -> Result<f64> {
                field(i).parse().map_err(|_| Error::Config(format!("bad number `{}` in column {i}", field(i))))
            };
            let name = |i: usize| -> Result<serde_json::Value> { Ok(serde_json::Value::String(field(i))) };
            let failed = field(9);
            rows.push(ResultRow {
                axis_value: num(0)?,
                algorithm: serde_json::from_value(name(1)?)?,
                baseline: serde_json::from_value(name(2)?)?,
                policy: serde_json::from_value(name(3)?)?,
                seed: field(4).parse().map_err(|_| Error::Config(format!("bad seed `{}`", field(4))))?,
                final_ee: num(5)?,
                first_ee: num(6)?,
                mean_rate_bps: num(7)?,
                mean_power_watt: num(8)?,
                failed: (!failed.is_empty()).then_some(failed),
            });
        }
        Ok(Self { rows })
    }
}

/// Run every tuple of `plan` through `runner` in parallel.
pub fn run_plan_with<F>(plan: &ExperimentPlan, runner: F) -> Result<ResultTable>
where
    F: Fn(&RunSetup) -> RunSummary + Sync,
{
    plan.validate()?;
    let tuples = plan.tuples()?;
    let rows: Vec<ResultRow> = tuples
        .par_iter()
        .map(|t| {
            let s = runner(&t.setup);
            if let Some(msg) = &s.failed {
                log::warn!("run {:?} seed {} failed: {msg}", t.setup.algorithm, t.setup.master_seed);
            }
            ResultRow {
                axis_value: t.axis_value,
                algorithm: t.setup.algorithm,
                baseline: t.setup.architecture,
                policy: t.setup.policy,
                seed: t.setup.master_seed,
                final_ee: s.final_ee,
                first_ee: s.first_ee,
                mean_rate_bps: s.final_rate_bps,
                mean_power_watt: s.final_power_watt,
                failed: s.failed,
            }
        })
        .collect();
    let mut table = ResultTable { rows };
    table.sort();
    Ok(table)
}

pub fn run_plan(plan: &ExperimentPlan) -> Result<ResultTable> {
    run_plan_with(plan, run_one)
}

/// Mean and sample standard deviation over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub axis_value: f64,
    pub algorithm: Algorithm,
    pub baseline: Architecture,
    pub policy: OnOffPolicy,
    pub seeds: usize,
    pub failed: usize,
    pub mean_ee: f64,
    pub std_ee: f64,
}

/// Outcome of one assertion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssertionOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub groups: Vec<GroupStats>,
    pub assertions: Vec<AssertionOutcome>,
    pub note: String,
}

impl Summary {
    pub fn all_passed(&self) -> bool {
        self.assertions.iter().all(|a| a.passed)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("axis      algorithm  baseline policy     seeds  mean EE (bits/J)   std\n");
        for g in &self.groups {
            s.push_str(&format!(
                "{:<9} {:<10} {:<8} {:<10} {:>5}  {:>16.6e}  {:.3e}{}\n",
                g.axis_value,
                g.algorithm.name(),
                g.baseline.name(),
                g.policy.name(),
                g.seeds,
                g.mean_ee,
                g.std_ee,
                if g.failed > 0 { format!("  ({} failed)", g.failed) } else { String::new() }
            ));
        }
        for a in &self.assertions {
            s.push_str(&format!("[{}] {}: {}\n", if a.passed { "PASS" } else { "FAIL" }, a.name, a.detail));
        }
        s.push_str(&self.note);
        s.push('\n');
        s
    }
}

/// Mean and sample standard deviation; zero spread for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

fn level_matches(row: &ResultRow, factor: Factor, level: &str) -> bool {
    match factor {
        Factor::Axis => level.parse::<f64>() == Ok(row.axis_value),
        Factor::Algorithm => row.algorithm.name() == level,
        Factor::Baseline => row.baseline.name() == level,
        Factor::Policy => row.policy.name() == level,
    }
}

fn ok_rows<'a>(table: &'a ResultTable, filter: &'a Filter) -> impl Iterator<Item = &'a ResultRow> + 'a {
    table.rows.iter().filter(move |r| r.failed.is_none() && filter.matches(r))
}

fn level_mean(table: &ResultTable, filter: &Filter, factor: Factor, level: &str) -> Option<f64> {
    let vals: Vec<f64> = ok_rows(table, filter)
        .filter(|r| level_matches(r, factor, level))
        .map(|r| r.final_ee)
        .collect();
    (!vals.is_empty()).then(|| mean_std(&vals).0)
}

fn axis_means(table: &ResultTable, filter: &Filter) -> Vec<(f64, f64)> {
    let mut by: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in ok_rows(table, filter) {
        by.entry(r.axis_value.to_bits()).or_insert((r.axis_value, Vec::new())).1.push(r.final_ee);
    }
    let mut out: Vec<(f64, f64)> = by.into_values().map(|(v, xs)| (v, mean_std(&xs).0)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}

/// Evaluate one assertion against a table.
pub fn evaluate(table: &ResultTable, assertion: &Assertion) -> AssertionOutcome {
    let (passed, detail) = match assertion {
        Assertion::MeanOrder { filter, factor, order, strict, .. } => {
            let means: Vec<Option<f64>> = order.iter().map(|l| level_mean(table, filter, *factor, l)).collect();
            let detail = order
                .iter()
                .zip(&means)
                .map(|(l, m)| format!("{l}={}", m.map_or("missing".into(), |m| format!("{m:.4e}"))))
                .collect::<Vec<_>>()
                .join(" >= ");
            let passed = means.iter().all(Option::is_some)
                && means.windows(2).all(|w| {
                    let (a, b) = (w[0].unwrap(), w[1].unwrap());
                    if *strict {
                        a > b
                    } else {
                        a >= b
                    }
                });
            (passed, detail)
        }
        Assertion::SeedWise { filter, factor, higher, lower, min_fraction, .. } => {
            let mut by_seed: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
            for r in ok_rows(table, filter) {
                if level_matches(r, *factor, higher) {
                    by_seed.entry(r.seed).or_default().0 = Some(r.final_ee);
                } else if level_matches(r, *factor, lower) {
                    by_seed.entry(r.seed).or_default().1 = Some(r.final_ee);
                }
            }
            let pairs: Vec<(f64, f64)> = by_seed.values().filter_map(|&(h, l)| Some((h?, l?))).collect();
            let wins = pairs.iter().filter(|(h, l)| h >= l).count();
            let passed = !pairs.is_empty() && wins as f64 >= min_fraction * pairs.len() as f64;
            (passed, format!("{higher} >= {lower} on {wins}/{} seeds (need {min_fraction})", pairs.len()))
        }
        Assertion::Improves { filter, min_fraction, .. } => {
            let rows: Vec<&ResultRow> = ok_rows(table, filter).collect();
            let wins = rows.iter().filter(|r| r.final_ee > r.first_ee).count();
            let passed = !rows.is_empty() && wins as f64 >= min_fraction * rows.len() as f64;
            (passed, format!("final > first window on {wins}/{} runs (need {min_fraction})", rows.len()))
        }
        Assertion::InteriorPeak { filter, .. } => {
            let means = axis_means(table, filter);
            let best = means
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(i, _)| i);
            let passed = matches!(best, Some(i) if means.len() >= 3 && i > 0 && i + 1 < means.len());
            let curve = means.iter().map(|(v, m)| format!("{v}:{m:.4e}")).collect::<Vec<_>>().join(", ");
            (passed, format!("argmax at {:?} over [{curve}]", best.map(|i| means[i].0)))
        }
        Assertion::PeakAt { filter, at, .. } => {
            let means = axis_means(table, filter);
            let peak = means.iter().find(|(v, _)| v == at).map(|x| x.1);
            let passed = match (peak, means.first(), means.last()) {
                (Some(p), Some(first), Some(last)) => p >= first.1 && p >= last.1,
                _ => false,
            };
            let curve = means.iter().map(|(v, m)| format!("{v}:{m:.4e}")).collect::<Vec<_>>().join(", ");
            (passed, format!("EE({at}) vs ends over [{curve}]"))
        }
    };
    AssertionOutcome { name: assertion.name().to_string(), passed, detail }
}

/// Per-group statistics and the outcome of every assertion.
pub fn summarize(table: &ResultTable, assertions: &[Assertion]) -> Result<Summary> {
    if table.rows.is_empty() {
        return Err(Error::InvalidArgument("empty result table".into()));
    }
    let mut groups: Vec<GroupStats> = Vec::new();
    for r in &table.rows {
        let same = |g: &GroupStats| {
            g.axis_value == r.axis_value && g.algorithm == r.algorithm && g.baseline == r.baseline && g.policy == r.policy
        };
        if !groups.iter().any(same) {
            let members: Vec<&ResultRow> = table
                .rows
                .iter()
                .filter(|x| {
                    x.axis_value == r.axis_value && x.algorithm == r.algorithm && x.baseline == r.baseline && x.policy == r.policy
                })
                .collect();
            let ok: Vec<f64> = members.iter().filter(|x| x.failed.is_none()).map(|x| x.final_ee).collect();
            let (mean_ee, std_ee) = mean_std(&ok);
            groups.push(GroupStats {
                axis_value: r.axis_value,
                algorithm: r.algorithm,
                baseline: r.baseline,
                policy: r.policy,
                seeds: ok.len(),
                failed: members.len() - ok.len(),
                mean_ee,
                std_ee,
            });
        }
    }
    Ok(Summary {
        groups,
        assertions: assertions.iter().map(|a| evaluate(table, a)).collect(),
        note: "reward = instantaneous energy efficiency (bits/J); EE per run = mean over the last 10% of slots".into(),
    })
}

/// Run a plan and write `results.csv`, `summary.json` and `manifest.json`
/// into `out_dir`.
pub fn run_plan_to_dir(plan: &ExperimentPlan, out_dir: &Path) -> Result<Summary> {
    let table = run_plan(plan)?;
    write_outputs(plan, &table, out_dir)
}

pub fn write_outputs(plan: &ExperimentPlan, table: &ResultTable, out_dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(out_dir)?;
    table.write_csv(std::fs::File::create(out_dir.join("results.csv"))?)?;
    let summary = summarize(table, &plan.assertions)?;
    std::fs::write(out_dir.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
    let manifest = serde_json::json!({
        "plan": plan,
        "code_version": env!("CARGO_PKG_VERSION"),
        "runs": table.rows.len(),
    });
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(summary)
}

/// Write the per-slot records of one run as CSV.
pub fn write_run_records(setup: &RunSetup, path: &Path) -> Result<()> {
    let out = train(setup.clone())?;
    write_records_csv(&out.records, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(axis: f64, alg: Algorithm, seed: u64, ee: f64) -> ResultRow {
        ResultRow {
            axis_value: axis,
            algorithm: alg,
            baseline: Architecture::Es,
            policy: OnOffPolicy::Optimized,
            seed,
            final_ee: ee,
            first_ee: ee / 2.0,
            mean_rate_bps: 1.0,
            mean_power_watt: 1.0,
            failed: None,
        }
    }

    fn plan_json() -> &'static str {
        r#"{
            "axis": "elements",
            "values": [4, 8, 16, 32, 64],
            "policies": ["ALL_ON", "HALF_ON", "OPTIMIZED"],
            "seeds": [1],
            "base": {"v_surfaces": 3, "i_regions": 4, "users_per_region": [2, 2, 2, 4]}
        }"#
    }

    #[test]
    fn mean_and_sample_std() {
        assert_eq!(mean_std(&[5.0]), (5.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn tuple_counts() {
        let plan = ExperimentPlan::from_json_str(plan_json()).unwrap();
        assert_eq!(plan.tuples().unwrap().len(), 15);
        let single = ExperimentPlan { values: vec![16.0], policies: vec![OnOffPolicy::AllOn], ..plan };
        assert_eq!(single.tuples().unwrap().len(), 1);
    }

    #[test]
    fn none_baseline_rejects_policy_sweeps() {
        let mut plan = ExperimentPlan::from_json_str(plan_json()).unwrap();
        plan.baselines = vec![Architecture::Es, Architecture::None];
        assert!(plan.validate().is_err());
        plan.policies = vec![OnOffPolicy::AllOn];
        plan.validate().unwrap();
    }

    #[test]
    fn axis_application() {
        let base = ScenarioConfig::default();
        assert_eq!(Axis::Users.apply(&base, 5.0).unwrap().users_per_region, vec![1, 1, 3]);
        let v3 = Axis::Surfaces.apply(&base, 3.0).unwrap();
        assert_eq!((v3.v_surfaces, v3.i_regions, v3.total_users()), (3, 4, 10));
        assert!(Axis::Elements.apply(&base, 2.5).is_err());
        assert_eq!(Axis::Spacing.apply(&base, 50.0).unwrap().surface_spacing_m, 50.0);
    }

    #[test]
    fn assertions_on_a_synthetic_table() {
        let mut rows = Vec::new();
        for seed in 0..5 {
            rows.push(row(1.0, Algorithm::Magar, seed, 3.0 + seed as f64));
            rows.push(row(1.0, Algorithm::Madqn, seed, 2.0 + seed as f64));
            rows.push(row(2.0, Algorithm::Magar, seed, 9.0));
            rows.push(row(3.0, Algorithm::Magar, seed, 4.0));
        }
        let mut table = ResultTable { rows };
        table.sort();
        let order = Assertion::MeanOrder {
            name: "order".into(),
            filter: Filter { axis_value: Some(1.0), ..Default::default() },
            factor: Factor::Algorithm,
            order: vec!["MAGAR".into(), "MADQN".into()],
            strict: true,
        };
        assert!(evaluate(&table, &order).passed);
        let seedwise = Assertion::SeedWise {
            name: "sw".into(),
            filter: Filter { algorithm: Some(Algorithm::Magar), ..Default::default() },
            factor: Factor::Axis,
            higher: "1".into(),
            lower: "3".into(),
            min_fraction: 0.8,
        };
        // 3,4 >= 4 but 5,6,7 >= 4 too: 5/5
        assert!(evaluate(&table, &seedwise).passed);
        let peak = Assertion::InteriorPeak {
            name: "peak".into(),
            filter: Filter { algorithm: Some(Algorithm::Magar), ..Default::default() },
        };
        assert!(evaluate(&table, &peak).passed);
        let at = Assertion::PeakAt {
            name: "at".into(),
            filter: Filter { algorithm: Some(Algorithm::Magar), ..Default::default() },
            at: 3.0,
        };
        assert!(!evaluate(&table, &at).passed);
        let improves = Assertion::Improves { name: "imp".into(), filter: Filter::default(), min_fraction: 1.0 };
        assert!(evaluate(&table, &improves).passed);

        let summary = summarize(&table, &[order, seedwise, peak, at, improves]).unwrap();
        assert_eq!(summary.assertions.len(), 5);
        assert_eq!(summary.groups.len(), 4);
        assert!(!summary.all_passed());
        let g = &summary.groups[0];
        assert_eq!((g.seeds, g.mean_ee), (5, 5.0));
    }

    #[test]
    fn failed_rows_are_excluded() {
        let mut table = ResultTable { rows: vec![row(1.0, Algorithm::Magar, 0, 2.0), row(1.0, Algorithm::Magar, 1, 4.0)] };
        table.rows[1].failed = Some("diverged".into());
        let s = summarize(&table, &[]).unwrap();
        assert_eq!((s.groups[0].seeds, s.groups[0].failed, s.groups[0].mean_ee), (1, 1, 2.0));
    }

    #[test]
    fn csv_round_trip() {
        let mut table = ResultTable { rows: vec![row(16.0, Algorithm::QLearning, 3, 1.25e8)] };
        table.rows[0].failed = Some("diverged, at slot 3".into());
        let mut buf = Vec::new();
        table.write_csv(&mut buf).unwrap();
        let back = ResultTable::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, table);
    }

    #[test]
    fn plan_runs_and_is_deterministic() {
        let mut plan = ExperimentPlan::from_json_str(plan_json()).unwrap();
        plan.values = vec![4.0];
        plan.policies = vec![OnOffPolicy::Optimized];
        plan.base.v_surfaces = 1;
        plan.base.i_regions = 2;
        plan.base.users_per_region = vec![1, 1];
        plan.base.m_antennas = 2;
        plan.hyper.episodes = 2;
        plan.hyper.slots_per_episode = 10;
        plan.hyper.hidden = vec![8];
        plan.hyper.batch_size = 4;
        plan.seeds = vec![2, 1];
        let a = run_plan(&plan).unwrap();
        let b = run_plan(&plan).unwrap();
        assert_eq!(a.rows.len(), 2);
        assert_eq!(a.rows[0].seed, 1);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        a.write_csv(&mut x).unwrap();
        b.write_csv(&mut y).unwrap();
        assert_eq!(x, y);
    }
}
