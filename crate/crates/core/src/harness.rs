//! Experiment orchestration: training curves for two dataset sizes, a
//! beam-waist sweep and a sum-rate CDF over random user drops, each written
//! as CSV, plus SVG plots of those CSVs.
//!
//! Every random draw comes from a seed derived from the experiment seed and
//! a fixed stream tag, so identical configs and seeds give identical CSV
//! bytes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::{Deserialize, Serialize};

use crate::allocator::{
    solve_dual, uniform_allocation, AllocationProblem, AllocationSolution, Method,
};
use crate::config::Config;
use crate::dataset::{
    derive_seed, generate_dataset, sample_scenario, split_dataset, Dataset, GenConfig,
    RequirementRanges, Scenario,
};
use crate::error::{invalid, Error, Result};
use crate::surrogate::{parse_arch, predict_and_repair, Normalizers, SurrogateModel};

const POOL_STREAM: u64 = 0;
const SPLIT_STREAM: u64 = 1;
const INIT_STREAM: u64 = 2;
const SHUFFLE_STREAM: u64 = 3;
const SWEEP_STREAM: u64 = 4;
const CDF_STREAM: u64 = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentsConfig {
    pub seeds: Vec<u64>,
    pub dataset_sizes: Vec<usize>,
    pub train_fraction: f64,
    pub beam_waists_um: Vec<f64>,
    /// User drops averaged at every beam-waist point.
    pub sweep_drops: usize,
    /// User drops in the CDF experiment.
    pub drops: usize,
    pub out_dir: PathBuf,
    pub requirements: RequirementRanges,
}

impl Default for ExperimentsConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3],
            dataset_sizes: vec![5000, 10_000],
            train_fraction: 0.9,
            beam_waists_um: vec![10.0, 15.0, 20.0, 25.0, 30.0],
            sweep_drops: 20,
            drops: 100,
            out_dir: PathBuf::from("results"),
            requirements: RequirementRanges::default(),
        }
    }
}

impl ExperimentsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.dataset_sizes.is_empty() || self.beam_waists_um.is_empty()
        {
            return Err(Error::Config(
                "seed, dataset size and beam waist lists must be non-empty".into(),
            ));
        }
        if self.dataset_sizes.iter().any(|n| *n < 2) {
            return Err(Error::Config("dataset sizes must be at least 2".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1)".into()));
        }
        if self
            .beam_waists_um
            .iter()
            .any(|w| !(w.is_finite() && *w > 0.0))
        {
            return Err(Error::Config("beam waists must be positive".into()));
        }
        if self.sweep_drops == 0 || self.drops == 0 {
            return Err(Error::Config("drop counts must be at least 1".into()));
        }
        self.requirements.validate()
    }
}

fn stream(seed: u64, tag: u64) -> u64 {
    derive_seed(seed, tag)
}

/// One method's allocation for one problem, with its sum rate recomputed
/// from the stored allocation.
#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: Method,
    pub solution: AllocationSolution,
    pub sum_rate: f64,
}

/// Dual, surrogate (when a model is given) and uniform allocations.
pub fn evaluate_methods(
    problem: &AllocationProblem,
    cfg: &Config,
    model: Option<&SurrogateModel>,
) -> Result<Vec<MethodResult>> {
    let mut out = Vec::with_capacity(3);
    let mut push = |solution: AllocationSolution| {
        out.push(MethodResult {
            method: solution.method,
            sum_rate: solution.sum_rate(problem),
            solution,
        })
    };
    push(solve_dual(problem, &cfg.solver)?);
    if let Some(m) = model {
        push(predict_and_repair(
            m,
            problem,
            cfg.surrogate.refine,
            &cfg.solver,
        )?);
    }
    push(uniform_allocation(problem));
    Ok(out)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurveRow {
    pub seed: u64,
    pub dataset_size: usize,
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub seed: u64,
    pub dataset_size: usize,
    pub model: SurrogateModel,
}

#[derive(Clone, Debug, Default)]
pub struct TrainingCurves {
    pub rows: Vec<CurveRow>,
    pub runs: Vec<TrainingRun>,
}

pub const CURVES_HEADER: &str = "seed,dataset_size,epoch,train_mse,val_mse";

impl TrainingCurves {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CURVES_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.seed,
                r.dataset_size,
                r.epoch,
                fmt_f64(r.train_mse),
                fmt_f64(r.val_mse)
            );
        }
        out
    }

    pub fn curve(&self, seed: u64, dataset_size: usize) -> Vec<CurveRow> {
        self.rows
            .iter()
            .filter(|r| r.seed == seed && r.dataset_size == dataset_size)
            .copied()
            .collect()
    }

    pub fn model(&self, seed: u64, dataset_size: usize) -> Option<&SurrogateModel> {
        self.runs
            .iter()
            .find(|r| r.seed == seed && r.dataset_size == dataset_size)
            .map(|r| &r.model)
    }

    pub fn extend(&mut self, other: TrainingCurves) {
        self.rows.extend(other.rows);
        self.runs.extend(other.runs);
    }
}

/// Labelled pool large enough for every configured dataset size.
pub fn training_pool(cfg: &Config, seed: u64) -> Result<Dataset> {
    let n = cfg
        .experiments
        .dataset_sizes
        .iter()
        .copied()
        .max()
        .unwrap_or(0);
    generate_dataset(
        n,
        stream(seed, POOL_STREAM),
        &GenConfig::from_config(cfg),
        &cfg.solver,
    )
}

/// Train one model per dataset size on nested prefixes of `pool`, sharing
/// the pool's normalization constants so the losses are comparable.
pub fn run_training_curves(cfg: &Config, seed: u64, pool: &Dataset) -> Result<TrainingCurves> {
    cfg.validate()?;
    let exp = &cfg.experiments;
    let arch = parse_arch(&cfg.surrogate.arch)?;
    let norm = Normalizers::fit(pool, cfg.surrogate.output)?;
    let mut sizes = exp.dataset_sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let mut curves = TrainingCurves::default();
    for n in sizes {
        let tag = |e: Error| e.context(format!("dataset size {n}, seed {seed}"));
        let subset = pool.truncate(n).map_err(tag)?;
        let (train, val) =
            split_dataset(&subset, exp.train_fraction, stream(seed, SPLIT_STREAM)).map_err(tag)?;
        let mut model = SurrogateModel::init(
            &arch,
            pool.layout,
            cfg.surrogate.output,
            norm.clone(),
            stream(seed, INIT_STREAM),
        )?;
        model
            .train(&train, &val, &cfg.surrogate, stream(seed, SHUFFLE_STREAM))
            .map_err(tag)?;
        curves.rows.extend(model.history.iter().map(|h| CurveRow {
            seed,
            dataset_size: n,
            epoch: h.epoch,
            train_mse: h.train_mse,
            val_mse: h.val_mse,
        }));
        curves.runs.push(TrainingRun {
            seed,
            dataset_size: n,
            model,
        });
    }
    Ok(curves)
}

/// Training curves for every configured seed, each on its own pool.
pub fn run_training_curves_all(cfg: &Config) -> Result<TrainingCurves> {
    let mut all = TrainingCurves::default();
    for &seed in &cfg.experiments.seeds {
        let pool = training_pool(cfg, seed)?;
        all.extend(run_training_curves(cfg, seed, &pool)?);
    }
    Ok(all)
}

#[derive(Clone, Debug)]
pub struct SweepPoint {
    pub w0_um: f64,
    pub drop: usize,
    pub scenario: Scenario,
    pub results: Vec<MethodResult>,
}

#[derive(Clone, Debug, Default)]
pub struct BeamwaistSweep {
    pub points: Vec<SweepPoint>,
    /// Candidate drops rejected because some beam waist left a user
    /// without a full-rank channel.
    pub rejected_drops: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub w0_um: f64,
    pub method: Method,
    /// Mean over drops.
    pub sum_rate: f64,
}

pub const SWEEP_HEADER: &str = "w0_um,method,sum_rate";

impl BeamwaistSweep {
    /// One row per (W0, method) in sweep order.
    pub fn rows(&self) -> Vec<SweepRow> {
        let mut rows: Vec<(SweepRow, usize)> = Vec::new();
        for p in &self.points {
            for r in &p.results {
                match rows
                    .iter_mut()
                    .find(|(row, _)| row.w0_um == p.w0_um && row.method == r.method)
                {
                    Some((row, n)) => {
                        row.sum_rate += r.sum_rate;
                        *n += 1;
                    }
                    None => rows.push((
                        SweepRow {
                            w0_um: p.w0_um,
                            method: r.method,
                            sum_rate: r.sum_rate,
                        },
                        1,
                    )),
                }
            }
        }
        rows.into_iter()
            .map(|(mut row, n)| {
                row.sum_rate /= n as f64;
                row
            })
            .collect()
    }

    pub fn series(&self, method: Method) -> Vec<(f64, f64)> {
        self.rows()
            .into_iter()
            .filter(|r| r.method == method)
            .map(|r| (r.w0_um, r.sum_rate))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{SWEEP_HEADER}\n");
        for r in self.rows() {
            let _ = writeln!(
                out,
                "{},{},{}",
                fmt_f64(r.w0_um),
                r.method,
                fmt_f64(r.sum_rate)
            );
        }
        out
    }
}

/// Fixed user drops (positions sampled at the configured beam waist) seen
/// through every beam waist in the sweep.
pub fn run_beamwaist_sweep(
    cfg: &Config,
    seed: u64,
    model: Option<&SurrogateModel>,
) -> Result<BeamwaistSweep> {
    cfg.validate()?;
    let exp = &cfg.experiments;
    let mut gen = GenConfig::from_config(cfg);
    gen.requirements.beam_waist_um = None;
    let base = stream(seed, SWEEP_STREAM);
    let mut sweep = BeamwaistSweep::default();
    let mut drops: Vec<Vec<Scenario>> = Vec::with_capacity(exp.sweep_drops);
    let mut candidate = 0u64;
    let max_candidates = (exp.sweep_drops * gen.requirements.max_retries.max(1)) as u64;
    while drops.len() < exp.sweep_drops {
        if candidate >= max_candidates {
            return Err(Error::Infeasible(format!(
                "only {} of {} sweep drops have full-rank channels at every beam waist",
                drops.len(),
                exp.sweep_drops
            )));
        }
        let base_scenario = sample_scenario(derive_seed(base, candidate), &gen)?;
        candidate += 1;
        let views: Result<Vec<Scenario>> = exp
            .beam_waists_um
            .iter()
            .map(|w| base_scenario.with_beam_waist(*w, &gen))
            .collect();
        match views {
            Ok(v) => drops.push(v),
            Err(Error::DegenerateGeometry { .. } | Error::Infeasible(_)) => {
                sweep.rejected_drops += 1
            }
            Err(e) => return Err(e),
        }
    }
    for (wi, w0) in exp.beam_waists_um.iter().enumerate() {
        for (d, views) in drops.iter().enumerate() {
            let scenario = views[wi].clone();
            let results = evaluate_methods(&scenario.problem, cfg, model)
                .map_err(|e| e.context(format!("beam waist {w0} um, drop {d}")))?;
            sweep.points.push(SweepPoint {
                w0_um: *w0,
                drop: d,
                scenario,
                results,
            });
        }
    }
    Ok(sweep)
}

#[derive(Clone, Debug)]
pub struct DropResult {
    pub drop: usize,
    pub scenario: Scenario,
    pub results: Vec<MethodResult>,
}

#[derive(Clone, Debug, Default)]
pub struct CdfExperiment {
    pub drops: Vec<DropResult>,
}

pub const CDF_HEADER: &str = "drop,method,sum_rate";

impl CdfExperiment {
    pub fn methods(&self) -> Vec<Method> {
        self.drops
            .first()
            .map(|d| d.results.iter().map(|r| r.method).collect())
            .unwrap_or_default()
    }

    /// Sum rates of `method` in drop order.
    pub fn samples(&self, method: Method) -> Vec<f64> {
        self.drops
            .iter()
            .filter_map(|d| {
                d.results
                    .iter()
                    .find(|r| r.method == method)
                    .map(|r| r.sum_rate)
            })
            .collect()
    }

    /// Grouped by method, drops in order within each method.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{CDF_HEADER}\n");
        for m in self.methods() {
            for (d, v) in self.drops.iter().zip(self.samples(m)) {
                let _ = writeln!(out, "{},{},{}", d.drop, m, fmt_f64(v));
            }
        }
        out
    }
}

/// Sorted samples paired with their empirical CDF values `i / n`.
pub fn empirical_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.into_iter()
        .enumerate()
        .map(|(i, x)| (x, (i + 1) as f64 / n))
        .collect()
}

/// Empirical quantile by the nearest-rank rule, `q` in `[0, 1]`.
pub fn quantile(samples: &[f64], q: f64) -> f64 {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let rank = (q * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

/// Independent random drops (positions and requirements redrawn each time).
pub fn run_cdf_experiment(
    cfg: &Config,
    seed: u64,
    model: Option<&SurrogateModel>,
) -> Result<CdfExperiment> {
    cfg.validate()?;
    let n = cfg.experiments.drops;
    if n < 100 {
        return Err(invalid(format!(
            "the CDF experiment needs at least 100 drops, got {n}"
        )));
    }
    let gen = GenConfig::from_config(cfg);
    let base = stream(seed, CDF_STREAM);
    let mut out = CdfExperiment::default();
    for d in 0..n {
        let scenario = sample_scenario(derive_seed(base, d as u64), &gen)
            .map_err(|e| e.context(format!("drop {d}")))?;
        let results = evaluate_methods(&scenario.problem, cfg, model)
            .map_err(|e| e.context(format!("drop {d}")))?;
        out.drops.push(DropResult {
            drop: d,
            scenario,
            results,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReportKind {
    TrainingCurves,
    BeamwaistSweep,
    SumRateCdf,
}

impl ReportKind {
    fn from_header(header: &str) -> Option<Self> {
        match header.trim() {
            CURVES_HEADER => Some(ReportKind::TrainingCurves),
            SWEEP_HEADER => Some(ReportKind::BeamwaistSweep),
            CDF_HEADER => Some(ReportKind::SumRateCdf),
            _ => None,
        }
    }

    fn file_name(self) -> &'static str {
        match self {
            ReportKind::TrainingCurves => "training_curves.svg",
            ReportKind::BeamwaistSweep => "beamwaist_sweep.svg",
            ReportKind::SumRateCdf => "sum_rate_cdf.svg",
        }
    }
}

struct Table {
    kind: ReportKind,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let ctx = |e: Error| e.context(path.display().to_string());
    let text = std::fs::read_to_string(path).map_err(|e| ctx(e.into()))?;
    let header = text.lines().next().ok_or_else(|| {
        ctx(Error::Parse {
            line: 1,
            msg: "empty CSV".into(),
        })
    })?;
    let kind = ReportKind::from_header(header).ok_or_else(|| {
        ctx(Error::Parse {
            line: 1,
            msg: format!("unrecognized header {header:?}"),
        })
    })?;
    let width = header.split(',').count();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| ctx(e.into()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != width {
            return Err(ctx(Error::Parse {
                line,
                msg: format!("row has {} fields, expected {width}", record.len()),
            }));
        }
        // numeric columns must parse; the method column is text
        for (i, field) in record.iter().enumerate() {
            let is_text = kind != ReportKind::TrainingCurves && i == 1;
            if !is_text && field.parse::<f64>().is_err() {
                return Err(ctx(Error::Parse {
                    line,
                    msg: format!("bad number {field:?}"),
                }));
            }
        }
        rows.push(record.iter().map(str::to_string).collect());
    }
    if rows.is_empty() {
        return Err(ctx(Error::Parse {
            line: 1,
            msg: "CSV has a header but no rows".into(),
        }));
    }
    Ok(Table { kind, rows })
}

type Series = Vec<(String, Vec<(f64, f64)>)>;

fn num(s: &str) -> f64 {
    s.parse().unwrap_or(f64::NAN)
}

fn table_series(t: &Table) -> (Series, &'static str, &'static str, &'static str) {
    match t.kind {
        ReportKind::TrainingCurves => {
            // mean over seeds for every (dataset size, epoch)
            let mut acc: BTreeMap<(usize, usize), (f64, f64, usize)> = BTreeMap::new();
            for r in &t.rows {
                let e = acc
                    .entry((num(&r[1]) as usize, num(&r[2]) as usize))
                    .or_insert((0.0, 0.0, 0));
                e.0 += num(&r[3]);
                e.1 += num(&r[4]);
                e.2 += 1;
            }
            let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            for ((n, epoch), (tr, va, c)) in acc {
                series
                    .entry(format!("train N={n}"))
                    .or_default()
                    .push((epoch as f64, tr / c as f64));
                series
                    .entry(format!("val N={n}"))
                    .or_default()
                    .push((epoch as f64, va / c as f64));
            }
            (
                series.into_iter().collect(),
                "Training curves",
                "epoch",
                "MSE (normalized)",
            )
        }
        ReportKind::BeamwaistSweep => {
            let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
            for r in &t.rows {
                series
                    .entry(r[1].clone())
                    .or_default()
                    .push((num(&r[0]), num(&r[2])));
            }
            for v in series.values_mut() {
                v.sort_by(|a, b| a.0.total_cmp(&b.0));
            }
            (
                series.into_iter().collect(),
                "Sum rate vs beam waist",
                "beam waist (um)",
                "sum rate",
            )
        }
        ReportKind::SumRateCdf => {
            let mut samples: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &t.rows {
                samples.entry(r[1].clone()).or_default().push(num(&r[2]));
            }
            let series = samples
                .into_iter()
                .map(|(m, v)| (m, empirical_cdf(&v)))
                .collect();
            (series, "Sum-rate CDF", "sum rate", "CDF")
        }
    }
}

fn plot(path: &Path, series: &Series, title: &str, x_label: &str, y_label: &str) -> Result<()> {
    let draw_err = |e: String| Error::Context {
        context: path.display().to_string(),
        source: Box::new(Error::Config(format!("plotting failed: {e}"))),
    };
    let points = series.iter().flat_map(|(_, v)| v.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !(x0.is_finite() && y0.is_finite()) {
        return Err(draw_err("no finite points".into()));
    }
    let pad = |lo: f64, hi: f64| {
        let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
        (lo - 0.05 * span, hi + 0.05 * span)
    };
    let (x0, x1) = pad(x0, x1);
    let (y0, y1) = pad(y0, y1);

    let root = SVGBackend::new(path, (800, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| draw_err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 24))
        .margin(15)
        .x_label_area_size(45)
        .y_label_area_size(65)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| draw_err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(|e| draw_err(e.to_string()))?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(pts.iter().copied(), color.stroke_width(2)))
            .map_err(|e| draw_err(e.to_string()))?
            .label(name.as_str())
            .legend(move |(x, y)| {
                PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2))
            });
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| draw_err(e.to_string()))?;
    root.present().map_err(|e| draw_err(e.to_string()))?;
    Ok(())
}

/// One SVG per experiment CSV, named after the experiment type and written
/// to `out_dir`. Returns the plot paths in input order.
pub fn emit_report(csv_paths: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if csv_paths.is_empty() {
        return Err(invalid("no CSV files given"));
    }
    let tables = csv_paths
        .iter()
        .map(|p| read_table(p))
        .collect::<Result<Vec<_>>>()?;
    let mut seen = Vec::new();
    for t in &tables {
        if seen.contains(&t.kind) {
            return Err(invalid(format!(
                "more than one CSV for {}",
                t.kind.file_name()
            )));
        }
        seen.push(t.kind);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(tables.len());
    for t in &tables {
        let (series, title, xl, yl) = table_series(t);
        let path = out_dir.join(t.kind.file_name());
        plot(&path, &series, title, xl, yl)?;
        written.push(path);
    }
    Ok(written)
}

/// Write `text` to `dir/name`, creating `dir`.
pub fn write_csv(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(name);
    std::fs::write(&path, text)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_and_cdf() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 0.5), 2.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        let cdf = empirical_cdf(&v);
        assert_eq!(cdf.first(), Some(&(1.0, 0.25)));
        assert!(cdf.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
    }

    #[test]
    fn defaults_validate() {
        let exp = ExperimentsConfig::default();
        exp.validate().unwrap();
        assert_eq!(exp.dataset_sizes, vec![5000, 10_000]);
        let bad = ExperimentsConfig {
            beam_waists_um: vec![],
            ..exp
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn report_kinds_from_headers() {
        assert_eq!(
            ReportKind::from_header(CURVES_HEADER),
            Some(ReportKind::TrainingCurves)
        );
        assert_eq!(
            ReportKind::from_header("w0_um,method,sum_rate\r"),
            Some(ReportKind::BeamwaistSweep)
        );
        assert_eq!(ReportKind::from_header("x,y"), None);
    }
}
