//! Remove-and-retrain: rank feature groups, physically delete the extreme
//! ones, retrain from scratch on the smaller data, re-explain, repeat.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::{aggregate_rank, explain, EstimatorSpec, ExplainBudget, ExplainInputs, GroupingAxis, ImportanceRanking};
use crate::data::{FeatureSchema, SplitTriple};
use crate::error::{Error, Result};
use crate::models::{resize_for_input, ModelSpec};
use crate::training::{evaluate, train, MetricValue, TrainConfig, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeletionOrder {
    MostFirst,
    LeastFirst,
}

impl DeletionOrder {
    pub fn name(&self) -> &'static str {
        match self {
            DeletionOrder::MostFirst => "most_first",
            DeletionOrder::LeastFirst => "least_first",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeletionPlan {
    pub axis: GroupingAxis,
    pub order: DeletionOrder,
    /// Groups removed per cycle. `None` means 1, or `ceil(T/20)` when
    /// deleting time steps from a series longer than 30.
    #[serde(default)]
    pub step: Option<usize>,
    pub estimator: EstimatorSpec,
    #[serde(default)]
    pub budget: ExplainBudget,
    /// Sufficiency margin below the baseline metric.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.02
}

impl DeletionPlan {
    pub fn new(axis: GroupingAxis, order: DeletionOrder, estimator: EstimatorSpec) -> Self {
        DeletionPlan {
            axis,
            order,
            step: None,
            estimator,
            budget: ExplainBudget::default(),
            tolerance: default_tolerance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.axis == GroupingAxis::Singleton {
            return Err(Error::Config("deletion works on bands or time steps, not single cells".into()));
        }
        if self.step == Some(0) {
            return Err(Error::Config("deletion step must be at least 1".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be non-negative".into()));
        }
        self.budget.validate()
    }

    pub fn effective_step(&self, schema: &FeatureSchema) -> usize {
        match (self.step, self.axis) {
            (Some(k), _) => k,
            (None, GroupingAxis::ByTimestep) if schema.n_steps() > 30 => schema.n_steps().div_ceil(20),
            (None, _) => 1,
        }
    }
}

/// One retraining on the data that survived cycles `1..=cycle`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    /// Stable ids deleted right before this cycle's training.
    pub removed: Vec<usize>,
    pub survivors: Vec<usize>,
    pub report: TrainReport,
    pub validation: MetricValue,
    pub test: MetricValue,
    /// Ranking of the survivors by this cycle's model; absent once a single
    /// group is left.
    pub ranking: Option<ImportanceRanking>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub adjustments: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleFailure {
    pub cycle: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionCurve {
    pub plan: DeletionPlan,
    pub seed: u64,
    pub groups: Vec<usize>,
    /// `records[0]` is the baseline on the full data.
    pub records: Vec<CycleRecord>,
    pub failure: Option<CycleFailure>,
}

impl DeletionCurve {
    pub fn baseline(&self) -> MetricValue {
        self.records[0].validation
    }

    pub fn is_complete(&self) -> bool {
        self.failure.is_none() && self.records.last().is_some_and(|r| r.survivors.len() == 1)
    }

    pub fn fraction_removed(&self, record: &CycleRecord) -> f64 {
        1.0 - record.survivors.len() as f64 / self.groups.len() as f64
    }

    /// Largest fraction of groups removed while the validation metric stayed
    /// within `tolerance` of the baseline.
    pub fn max_fraction_within(&self, tolerance: f64) -> f64 {
        let floor = self.baseline().value - tolerance;
        self.records
            .iter()
            .filter(|r| r.validation.value >= floor)
            .map(|r| self.fraction_removed(r))
            .fold(0.0, f64::max)
    }

    /// `cycle,fraction_removed,val_metric,test_metric`, one row per record.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("cycle,fraction_removed,val_metric,test_metric\n");
        for r in &self.records {
            let _ = writeln!(
                out,
                "{},{:.6},{},{}",
                r.cycle,
                self.fraction_removed(r),
                r.validation.value,
                r.test.value
            );
        }
        out
    }

    /// A header line, one line per cycle, and a failure line if the run
    /// aborted.
    pub fn to_jsonl(&self) -> String {
        let header = CurveLine::Header {
            plan: self.plan.clone(),
            seed: self.seed,
            groups: self.groups.clone(),
        };
        let mut out = serde_json::to_string(&header).expect("serializable") + "\n";
        for r in &self.records {
            out += &serde_json::to_string(&CurveLine::Cycle(r.clone())).expect("serializable");
            out.push('\n');
        }
        if let Some(f) = &self.failure {
            out += &serde_json::to_string(&CurveLine::Failure(f.clone())).expect("serializable");
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(path: &Path, text: &str) -> Result<DeletionCurve> {
        let bad = |reason: String| Error::Curve(format!("{}: {reason}", path.display()));
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| bad("empty curve file".into()))?;
        let CurveLine::Header { plan, seed, groups } =
            serde_json::from_str(first).map_err(|e| bad(e.to_string()))?
        else {
            return Err(bad("first line is not a header".into()));
        };
        let mut curve = DeletionCurve {
            plan,
            seed,
            groups,
            records: Vec::new(),
            failure: None,
        };
        for (n, line) in lines.enumerate() {
            match serde_json::from_str(line).map_err(|e| bad(format!("line {}: {e}", n + 2)))? {
                CurveLine::Cycle(r) if curve.failure.is_none() => {
                    if r.cycle != curve.records.len() {
                        return Err(bad(format!("cycle {} out of order", r.cycle)));
                    }
                    curve.records.push(r)
                }
                CurveLine::Failure(f) if curve.failure.is_none() => curve.failure = Some(f),
                _ => return Err(bad(format!("unexpected line {}", n + 2))),
            }
        }
        if curve.records.is_empty() {
            return Err(bad("no baseline record".into()));
        }
        Ok(curve)
    }

    pub fn load(path: &Path) -> Result<DeletionCurve> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(path, &text)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum CurveLine {
    Header {
        plan: DeletionPlan,
        seed: u64,
        groups: Vec<usize>,
    },
    Cycle(CycleRecord),
    Failure(CycleFailure),
}

/// Survivors of the deepest cycle that kept the validation metric within
/// the plan's tolerance of the baseline.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientSet {
    pub ids: Vec<usize>,
    pub cycle: usize,
    pub metric: MetricValue,
}

pub fn sufficient_set(curve: &DeletionCurve) -> Result<SufficientSet> {
    expect_order(curve, DeletionOrder::LeastFirst)?;
    let floor = curve.baseline().value - curve.plan.tolerance;
    let best = curve
        .records
        .iter()
        .filter(|r| r.validation.value >= floor)
        .min_by_key(|r| r.survivors.len())
        .expect("baseline is within tolerance of itself");
    Ok(SufficientSet {
        ids: best.survivors.clone(),
        cycle: best.cycle,
        metric: best.validation,
    })
}

/// Groups removed up to and including the first cycle whose validation
/// metric falls below `floor`; empty if it never does.
pub fn necessary_set(curve: &DeletionCurve, floor: f64) -> Result<Vec<usize>> {
    expect_order(curve, DeletionOrder::MostFirst)?;
    let mut removed = Vec::new();
    for r in &curve.records {
        removed.extend_from_slice(&r.removed);
        if r.validation.value < floor {
            removed.sort_unstable();
            return Ok(removed);
        }
    }
    Ok(Vec::new())
}

fn expect_order(curve: &DeletionCurve, order: DeletionOrder) -> Result<()> {
    if curve.plan.order != order {
        return Err(Error::Curve(format!(
            "needs a {} curve, got {}",
            order.name(),
            curve.plan.order.name()
        )));
    }
    if curve.records.is_empty() {
        return Err(Error::Curve("curve has no baseline".into()));
    }
    Ok(())
}

/// Seed for everything random in one cycle.
fn cycle_seed(seed: u64, cycle: usize) -> u64 {
    seed ^ (cycle as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn survivors(schema: &FeatureSchema, axis: GroupingAxis) -> Vec<usize> {
    match axis {
        GroupingAxis::ByBand => schema.band_ids(),
        _ => schema.step_ids(),
    }
}

fn delete(splits: &SplitTriple, axis: GroupingAxis, ids: &[usize]) -> Result<SplitTriple> {
    let ids: BTreeSet<usize> = ids.iter().copied().collect();
    match axis {
        GroupingAxis::ByBand => splits.delete_bands(&ids),
        _ => splits.delete_timesteps(&ids),
    }
}

/// Trains, scores and ranks on one cycle's data.
fn run_cycle(
    cycle: usize,
    removed: Vec<usize>,
    splits: &SplitTriple,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    plan: &DeletionPlan,
    sample_ids: &[usize],
    seed: u64,
) -> Result<CycleRecord> {
    let cseed = cycle_seed(seed, cycle);
    let schema = splits.train.schema();
    let model = resize_for_input(spec, schema.task, splits.train.n_steps(), splits.train.n_bands(), cseed)?;
    let adjustments = model.adjustments().to_vec();
    let cfg = TrainConfig {
        seed: cseed,
        ..cfg.clone()
    };
    let (model, report) = train(model, &splits.train, &splits.validation, &cfg)?;
    let test = evaluate(&model, &splits.test)?;
    let survivors = survivors(schema, plan.axis);
    let ranking = if survivors.len() > 1 {
        let inputs = ExplainInputs::from_training(&splits.train, sample_ids);
        let m = explain(&model, &inputs, plan.axis, plan.estimator, &plan.budget, cseed)?;
        Some(aggregate_rank(&m)?)
    } else {
        None
    };
    log::info!(
        "cycle {cycle}: removed {removed:?}, {} left, validation {}",
        survivors.len(),
        report.validation
    );
    Ok(CycleRecord {
        cycle,
        removed,
        survivors,
        validation: report.validation,
        report,
        test,
        ranking,
        adjustments,
    })
}

/// Runs (or resumes) a deletion campaign until one group is left.
///
/// `on_cycle` sees the curve after every finished or failed cycle. A
/// failing cycle ends the run with `failure` set; only a failing baseline
/// is an error. `resume` must come from the same plan, seed and data; its
/// completed cycles are replayed without retraining.
pub fn run_roar(
    splits: &SplitTriple,
    spec: &ModelSpec,
    cfg: &TrainConfig,
    plan: &DeletionPlan,
    seed: u64,
    resume: Option<DeletionCurve>,
    on_cycle: &mut dyn FnMut(&DeletionCurve) -> Result<()>,
) -> Result<DeletionCurve> {
    plan.validate()?;
    cfg.validate()?;
    spec.validate()?;
    let groups = survivors(splits.train.schema(), plan.axis);
    let k = plan.effective_step(splits.train.schema());
    let sample_ids = plan.budget.select_samples(splits.train.len(), seed);

    let mut current = splits.clone();
    let mut curve = match resume {
        Some(mut prev) => {
            if prev.plan != *plan || prev.seed != seed || prev.groups != groups {
                return Err(Error::Curve("resumed curve was produced by a different plan, seed or dataset".into()));
            }
            prev.failure = None;
            for r in &prev.records[1..] {
                current = delete(&current, plan.axis, &r.removed)?;
            }
            log::info!("resuming after cycle {}", prev.records.len() - 1);
            prev
        }
        None => {
            let base = run_cycle(0, Vec::new(), &current, spec, cfg, plan, &sample_ids, seed)?;
            let curve = DeletionCurve {
                plan: plan.clone(),
                seed,
                groups,
                records: vec![base],
                failure: None,
            };
            on_cycle(&curve)?;
            curve
        }
    };

    loop {
        let last = curve.records.last().expect("baseline present");
        let Some(ranking) = &last.ranking else { break };
        let take = k.min(last.survivors.len() - 1);
        let removed: Vec<usize> = match plan.order {
            DeletionOrder::MostFirst => ranking.most_important(take).to_vec(),
            DeletionOrder::LeastFirst => ranking.least_important(take).to_vec(),
        };
        let cycle = curve.records.len();
        let step = delete(&current, plan.axis, &removed)
            .and_then(|next| Ok((run_cycle(cycle, removed, &next, spec, cfg, plan, &sample_ids, seed)?, next)));
        match step {
            Ok((record, next)) => {
                current = next;
                curve.records.push(record);
                on_cycle(&curve)?;
            }
            Err(e) => {
                log::error!("cycle {cycle} failed: {e}");
                curve.failure = Some(CycleFailure {
                    cycle,
                    reason: e.to_string(),
                });
                on_cycle(&curve)?;
                break;
            }
        }
    }
    Ok(curve)
}
