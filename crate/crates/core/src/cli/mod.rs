//! Run configs and the batch commands behind the `roar-eo` binary.
//!
//! Every command validates its whole config before touching the output
//! directory and writes files through a temp-then-rename step.

mod svg;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attribution::{EstimatorSpec, ExplainBudget, GroupingAxis};
use crate::data::io::write_file;
use crate::data::{load_dataset, save_dataset, split_by_year, SplitTriple};
use crate::error::{Error, Result};
use crate::models::ModelSpec;
use crate::roar::{necessary_set, run_roar, sufficient_set, DeletionCurve, DeletionOrder, DeletionPlan};
use crate::synthetic::{generate, PlantSpec};
use crate::training::{select_model, Candidate, SelectionEvent, TrainConfig};

pub use svg::curve_svg;

/// Environment variable holding the worker thread count.
pub const WORKERS_ENV: &str = "ROAR_EO_WORKERS";

pub const EFFECTIVE_CONFIG: &str = "effective_config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// MMTS directory read by `select` and `roar`, written by `generate`.
    pub path: PathBuf,
    #[serde(default = "default_holdout")]
    pub holdout_years: usize,
    /// Defaults to the run seed.
    #[serde(default)]
    pub split_seed: Option<u64>,
}

fn default_holdout() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoarConfig {
    pub axes: Vec<GroupingAxis>,
    pub orders: Vec<DeletionOrder>,
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub step: Option<usize>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.02
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub generate: Option<PlantSpec>,
    /// `train.seed` is replaced by the run seed.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub grid: Vec<ModelSpec>,
    #[serde(default)]
    pub model: Option<ModelSpec>,
    #[serde(default)]
    pub budget: ExplainBudget,
    #[serde(default)]
    pub roar: Option<RoarConfig>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads, applies the seed override, fills defaults and validates.
    pub fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.resolve();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self) {
        self.train.seed = self.seed;
        self.dataset.split_seed.get_or_insert(self.seed);
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.budget.validate()?;
        if self.dataset.holdout_years == 0 {
            return Err(Error::Config("holdout_years must be at least 1".into()));
        }
        if let Some(g) = &self.generate {
            g.validate()?;
        }
        for spec in self.grid.iter().chain(&self.model) {
            spec.validate().map_err(|e| Error::Config(e.to_string()))?;
        }
        if let Some(r) = &self.roar {
            if r.axes.is_empty() || r.orders.is_empty() || r.estimators.is_empty() {
                return Err(Error::Config("roar needs at least one axis, order and estimator".into()));
            }
            for plan in self.plans() {
                plan.validate()?;
            }
        }
        Ok(())
    }

    /// Every (estimator, order, axis) combination of the `roar` section.
    pub fn plans(&self) -> Vec<DeletionPlan> {
        let Some(r) = &self.roar else { return Vec::new() };
        let mut plans = Vec::new();
        for &estimator in &r.estimators {
            for &order in &r.orders {
                for &axis in &r.axes {
                    plans.push(DeletionPlan {
                        axis,
                        order,
                        step: r.step,
                        estimator,
                        budget: self.budget.clone(),
                        tolerance: r.tolerance,
                    });
                }
            }
        }
        plans
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    fn out_dir(&self, flag: Option<&Path>) -> Result<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.out.clone())
            .ok_or_else(|| Error::Config("no output directory: pass --out or set `out`".into()))
    }

    fn splits(&self) -> Result<SplitTriple> {
        let data = load_dataset(&self.dataset.path)?;
        split_by_year(&data, self.dataset.holdout_years, self.dataset.split_seed.unwrap_or(self.seed))
    }
}

/// 2 for configuration problems, 3 for everything that fails at run time.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::ModelSpec(_) => 2,
        _ => 3,
    }
}

/// Sizes the global thread pool from [`WORKERS_ENV`]; unset means one
/// thread per core.
pub fn configure_workers() -> Result<()> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else { return Ok(()) };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{WORKERS_ENV} must be a positive integer, got {raw:?}")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_file(path, text.as_bytes())
}

/// Writes the planted dataset of the `generate` section to `out`, or to
/// `dataset.path` when `out` is absent.
pub fn cmd_generate(cfg: &RunConfig, out: Option<&Path>) -> Result<PathBuf> {
    let spec = cfg
        .generate
        .as_ref()
        .ok_or_else(|| Error::Config("config has no [generate] section".into()))?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.dataset.path.clone());
    let data = generate(spec, cfg.seed)?;
    save_dataset(&data, &dir)?;
    log::info!("wrote {} samples to {}", data.len(), dir.display());
    Ok(dir)
}

/// One row of the selection table: the best candidate of an architecture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRow {
    pub rank: usize,
    pub candidate: usize,
    pub spec: ModelSpec,
    pub best_epoch: Option<usize>,
    pub validation: Option<f64>,
    pub test: Option<f64>,
    pub note: String,
}

/// Trains the grid and writes `selection.csv` and `selection.json` with
/// the best validation and test score per architecture.
pub fn cmd_select(
    cfg: &RunConfig,
    out: Option<&Path>,
    probe: &(dyn Fn(SelectionEvent) + Sync),
) -> Result<Vec<SelectionRow>> {
    if cfg.grid.is_empty() {
        return Err(Error::Config("model grid is empty".into()));
    }
    let dir = cfg.out_dir(out)?;
    let splits = cfg.splits()?;
    create_dir(&dir)?;
    write_text(&dir.join(EFFECTIVE_CONFIG), &cfg.to_toml())?;

    let grid: Vec<Candidate> = cfg
        .grid
        .iter()
        .map(|spec| Candidate {
            spec: spec.clone(),
            train: cfg.train.clone(),
        })
        .collect();
    let selection = select_model(&grid, &splits, cfg.seed, probe)?;

    let mut rows: Vec<SelectionRow> = Vec::new();
    let mut prev: Option<(usize, f64)> = None;
    for r in &selection.ranked {
        if rows.iter().any(|row| row.spec.architecture == r.candidate.spec.architecture) {
            continue;
        }
        let mut row = SelectionRow {
            rank: rows.len() + 1,
            candidate: r.index,
            spec: r.candidate.spec.clone(),
            best_epoch: None,
            validation: None,
            test: None,
            note: String::new(),
        };
        match &r.outcome {
            Ok(s) => {
                row.best_epoch = Some(s.report.best_epoch);
                row.validation = Some(s.validation.value);
                row.test = Some(s.test.value);
                if let Some((other, _)) = prev.filter(|p| p.1 == s.validation.value) {
                    row.note = format!("ties candidate {other}; earlier grid entry ranks first");
                }
                prev = Some((r.index, s.validation.value));
            }
            Err(e) => row.note = format!("failed: {e}"),
        }
        rows.push(row);
    }

    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    let mut csv = String::from("rank,candidate,architecture,hidden,depth,kernel,dense,dropout,best_epoch,validation,test,note\n");
    for r in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{},{},\"{}\"",
            r.rank,
            r.candidate,
            r.spec.architecture,
            r.spec.hidden,
            r.spec.depth,
            r.spec.kernel,
            r.spec.dense,
            r.spec.dropout,
            r.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            opt(r.validation),
            opt(r.test),
            r.note.replace('"', "'"),
        );
    }
    write_text(&dir.join("selection.csv"), &csv)?;
    write_text(
        &dir.join("selection.json"),
        &(serde_json::to_string_pretty(&rows).expect("rows serialize") + "\n"),
    )?;
    Ok(rows)
}

/// File stem of one campaign, e.g. `band_least_first_svs`.
pub fn run_name(plan: &DeletionPlan) -> String {
    format!("{}_{}_{}", plan.axis.name(), plan.order.name(), plan.estimator)
}

fn partial(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".partial");
    PathBuf::from(s)
}

/// Runs every deletion campaign of the `roar` section and writes, per
/// campaign, `<name>.csv`, `<name>.jsonl` and `<name>.svg`.
///
/// Progress goes to `<name>.jsonl.partial` after each cycle; with `resume`
/// an existing curve or partial curve is continued instead of restarted.
/// Campaigns that fail leave `*.partial` files and make the command fail
/// after the remaining campaigns have run.
pub fn cmd_roar(cfg: &RunConfig, out: Option<&Path>, resume: bool) -> Result<Vec<PathBuf>> {
    let model = cfg
        .model
        .as_ref()
        .ok_or_else(|| Error::Config("roar needs a [model] section".into()))?;
    let plans = cfg.plans();
    if plans.is_empty() {
        return Err(Error::Config("config has no [roar] section".into()));
    }
    let dir = cfg.out_dir(out)?;
    let splits = cfg.splits()?;
    create_dir(&dir)?;
    let mut effective = cfg.clone();
    effective.budget.n_samples = Some(effective.budget.n_samples.unwrap_or(ExplainBudget::DEFAULT_SAMPLES).min(splits.train.len()));
    write_text(&dir.join(EFFECTIVE_CONFIG), &effective.to_toml())?;

    let mut written = Vec::new();
    let mut failed = Vec::new();
    for plan in plans {
        let name = run_name(&plan);
        let jsonl = dir.join(format!("{name}.jsonl"));
        let pending = partial(&jsonl);
        let previous = if !resume {
            None
        } else if jsonl.exists() {
            Some(DeletionCurve::load(&jsonl)?)
        } else if pending.exists() {
            Some(DeletionCurve::load(&pending)?)
        } else {
            None
        };
        log::info!("campaign {name}");
        let outcome = run_roar(&splits, model, &cfg.train, &plan, cfg.seed, previous, &mut |c| {
            write_text(&pending, &c.to_jsonl())
        });
        let csv = dir.join(format!("{name}.csv"));
        match outcome {
            Ok(curve) if curve.failure.is_none() => {
                write_text(&csv, &curve.to_csv())?;
                write_text(&dir.join(format!("{name}.svg")), &curve_svg(&curve, &name))?;
                write_text(&jsonl, &curve.to_jsonl())?;
                if pending.exists() {
                    fs::remove_file(&pending).map_err(|e| Error::io(&pending, e))?;
                }
                written.push(csv);
            }
            Ok(curve) => {
                write_text(&partial(&csv), &curve.to_csv())?;
                failed.push(format!("{name}: {}", curve.failure.expect("failed").reason));
            }
            Err(e) => failed.push(format!("{name}: {e}")),
        }
    }
    if !failed.is_empty() {
        return Err(Error::Curve(format!("campaigns failed: {}", failed.join("; "))));
    }
    Ok(written)
}

/// Summarizes saved curves: sufficient set for least-first curves,
/// necessary set (floor = `floor_fraction` × baseline) for most-first
/// curves, and the largest fraction removable within the plan tolerance.
pub fn cmd_report(paths: &[PathBuf], floor_fraction: f64) -> Result<String> {
    if paths.is_empty() {
        return Err(Error::Config("report needs at least one curve file".into()));
    }
    let mut out = String::new();
    for path in paths {
        let curve = DeletionCurve::load(path)?;
        let baseline = curve.baseline();
        let _ = writeln!(out, "{}", path.display());
        let _ = writeln!(
            out,
            "  {} deletion by {} with {}, baseline {baseline}",
            curve.plan.order.name(),
            curve.plan.axis.name(),
            curve.plan.estimator
        );
        if let Some(f) = &curve.failure {
            let _ = writeln!(out, "  incomplete: cycle {} failed: {}", f.cycle, f.reason);
        }
        match curve.plan.order {
            DeletionOrder::LeastFirst => {
                let s = sufficient_set(&curve)?;
                let _ = writeln!(out, "  sufficient: {:?} (cycle {}, {})", s.ids, s.cycle, s.metric);
            }
            DeletionOrder::MostFirst => {
                let floor = floor_fraction * baseline.value;
                let _ = writeln!(out, "  necessary (floor {floor:.4}): {:?}", necessary_set(&curve, floor)?);
            }
        }
        let _ = writeln!(
            out,
            "  max fraction removed within {}: {:.3}",
            curve.plan.tolerance,
            curve.max_fraction_within(curve.plan.tolerance)
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        seed = 3
        [dataset]
        path = "data"
    "#;

    #[test]
    fn defaults_are_echoed() {
        let mut cfg = RunConfig::parse(MINIMAL).unwrap();
        cfg.resolve();
        let text = cfg.to_toml();
        assert!(text.contains("holdout_years = 2"));
        assert!(text.contains("split_seed = 3"));
        assert!(text.contains("patience = 10"));
        assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let e = RunConfig::parse(&format!("{MINIMAL}\nbogus = 1")).unwrap_err();
        assert_eq!(exit_code(&e), 2);
        assert!(RunConfig::parse("seed = 1\n[dataset]\npath = \"d\"\nholdout = 2").is_err());
        assert!(RunConfig::parse("seed = 1").is_err());
    }

    #[test]
    fn plan_enumeration() {
        let cfg = RunConfig::parse(&format!(
            "{MINIMAL}\n[roar]\naxes = [\"by_band\"]\norders = [\"most_first\", \"least_first\"]\nestimators = [\"svs\", \"gb-sgs\"]"
        ))
        .unwrap();
        let names: Vec<String> = cfg.plans().iter().map(run_name).collect();
        assert_eq!(
            names,
            ["band_most_first_svs", "band_least_first_svs", "band_most_first_gb-sgs", "band_least_first_gb-sgs"]
        );
    }

    #[test]
    fn plant_spec_round_trips_through_toml() {
        let text = format!(
            "{MINIMAL}\n[generate]\nn = 10\nt = 3\nb = 4\nsignal_bands = [1, 2]\nnoise_std = 0.5\n[generate.weights]\n1 = 2.0"
        );
        let mut cfg = RunConfig::parse(&text).unwrap();
        cfg.resolve();
        cfg.validate().unwrap();
        assert_eq!(cfg.generate.as_ref().unwrap().weight(1), 2.0);
        assert_eq!(RunConfig::parse(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn svg_is_stable() {
        use crate::training::{MetricKind, MetricValue, TrainReport};
        let m = |v| MetricValue {
            kind: MetricKind::R2,
            value: v,
        };
        let rec = |c: usize, v| crate::roar::CycleRecord {
            cycle: c,
            removed: if c == 0 { vec![] } else { vec![c - 1] },
            survivors: (c..3).collect(),
            report: TrainReport {
                best_epoch: 1,
                epochs_run: 1,
                train_loss: vec![0.1],
                val_loss: vec![0.1],
                validation: m(v),
            },
            validation: m(v),
            test: m(v),
            ranking: None,
            adjustments: vec![],
        };
        let curve = DeletionCurve {
            plan: DeletionPlan::new(GroupingAxis::ByBand, DeletionOrder::LeastFirst, "svs".parse().unwrap()),
            seed: 0,
            groups: vec![0, 1, 2],
            records: vec![rec(0, 0.9), rec(1, 0.8), rec(2, 0.2)],
            failure: None,
        };
        let a = curve_svg(&curve, "a <b>");
        assert_eq!(a, curve_svg(&curve, "a <b>"));
        assert!(a.contains("stroke-dasharray"));
        assert!(a.contains("a &lt;b&gt;"));
        assert_eq!(a.matches("<circle").count(), 3);
    }

    #[test]
    fn report_requires_paths() {
        assert_eq!(exit_code(&cmd_report(&[], 0.5).unwrap_err()), 2);
        let e = cmd_report(&[PathBuf::from("/nonexistent/curve.jsonl")], 0.5).unwrap_err();
        assert_eq!(exit_code(&e), 3);
    }
}
