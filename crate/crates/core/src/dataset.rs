//! Scenario sampling and solver-labelled datasets.
//!
//! A scenario drops `K` users uniformly on the receiving plane, draws their
//! requirements and the AP capacities, and turns the resulting channels into
//! a per-link rate matrix. Datasets pair the scenario's feature vector
//! `[e_min(K), e_max(K), xi(K), rho(L), r(K*L, row-major)]` with the dual
//! solver's allocation, flattened row-major.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::allocator::{
    is_feasible, solve_dual, AllocationProblem, AllocationSolution, SolverConfig,
};
use crate::bia::link_rates;
use crate::channel::{build_channel_matrix, ChannelConfig, NetworkTopology, Point};
use crate::config::{Config, RoomConfig};
use crate::error::{invalid, Error, Result};

/// Sampling ranges for user requirements and AP capacities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequirementRanges {
    pub e_max: [f64; 2],
    /// `e_min` is uniform in `[e_min_floor, e_min_fraction * e_max]`.
    pub e_min_floor: f64,
    pub e_min_fraction: f64,
    /// `rho_l` is uniform in `K/L * [lo, hi]`.
    pub capacity_factor: [f64; 2],
    pub weight: [f64; 2],
    /// Per-scenario beam waist range in micrometres; `None` keeps the
    /// channel section's value.
    pub beam_waist_um: Option<[f64; 2]>,
    /// Users whose channel matrix is rank-deficient are redrawn.
    pub require_full_rank: bool,
    pub max_retries: usize,
}

impl Default for RequirementRanges {
    fn default() -> Self {
        Self {
            e_max: [1.0, 5.0],
            e_min_floor: 0.1,
            e_min_fraction: 0.5,
            capacity_factor: [1.0, 3.0],
            weight: [1.0, 1.0],
            beam_waist_um: Some([10.0, 30.0]),
            require_full_rank: true,
            max_retries: 200,
        }
    }
}

fn check_range(name: &str, r: [f64; 2], positive: bool) -> Result<()> {
    let ok = r[0].is_finite()
        && r[1].is_finite()
        && r[0] <= r[1]
        && if positive { r[0] > 0.0 } else { r[0] >= 0.0 };
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("{name} range {r:?} is invalid")))
    }
}

impl RequirementRanges {
    pub fn validate(&self) -> Result<()> {
        check_range("e_max", self.e_max, false)?;
        check_range("capacity_factor", self.capacity_factor, true)?;
        check_range("weight", self.weight, true)?;
        if let Some(w) = self.beam_waist_um {
            check_range("beam_waist_um", w, true)?;
        }
        if !(self.e_min_floor >= 0.0 && (0.0..=1.0).contains(&self.e_min_fraction)) {
            return Err(invalid(
                "e_min_floor must be >= 0 and e_min_fraction in [0, 1]",
            ));
        }
        if self.e_min_floor > self.e_min_fraction * self.e_max[0] {
            return Err(invalid("e_min_floor exceeds e_min_fraction * e_max"));
        }
        if self.max_retries == 0 {
            return Err(invalid("max_retries must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GenConfig {
    pub room: RoomConfig,
    pub channel: ChannelConfig,
    pub requirements: RequirementRanges,
}

impl GenConfig {
    pub fn from_config(cfg: &Config) -> Self {
        Self {
            room: cfg.room.clone(),
            channel: cfg.channel.clone(),
            requirements: cfg.experiments.requirements.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.channel.validate()?;
        self.requirements.validate()
    }

    pub fn layout(&self) -> FeatureLayout {
        FeatureLayout {
            k: self.room.users,
            l: self.room.num_aps(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub beam_waist_um: f64,
    pub user_positions: Vec<Point>,
    pub problem: AllocationProblem,
}

/// Independent per-index seed derived from a base seed.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base);
    rng.set_stream(index);
    rng.next_u64()
}

fn uniform(rng: &mut ChaCha8Rng, r: [f64; 2]) -> f64 {
    rng.random_range(r[0]..=r[1])
}

/// Per-link rates for users at `positions` under `channel`.
pub fn rate_matrix(
    room: &RoomConfig,
    channel: &ChannelConfig,
    positions: &[Point],
) -> Result<DMatrix<f64>> {
    let topo = NetworkTopology::new(
        room.dims,
        room.ap_positions(),
        positions.to_vec(),
        room.plane_gap,
        channel,
    )?;
    let k = positions.len();
    let p_str = channel.stream_power();
    let mut rates = DMatrix::zeros(k, room.num_aps());
    for u in 0..k {
        let h = build_channel_matrix(&topo, channel, u)?;
        for (a, r) in link_rates(&h, p_str, k)?.into_iter().enumerate() {
            rates[(u, a)] = r;
        }
    }
    Ok(rates)
}

fn sample_position(
    rng: &mut ChaCha8Rng,
    gen: &GenConfig,
    channel: &ChannelConfig,
    aps: &[Point],
) -> Result<Point> {
    let room = &gen.room;
    for _ in 0..gen.requirements.max_retries {
        let p = Vector3::new(
            rng.random_range(0.0..=room.dims[0]),
            rng.random_range(0.0..=room.dims[1]),
            room.plane_height(),
        );
        if !gen.requirements.require_full_rank {
            return Ok(p);
        }
        let topo = NetworkTopology::new(room.dims, aps.to_vec(), vec![p], room.plane_gap, channel)?;
        match build_channel_matrix(&topo, channel, 0) {
            Ok(_) => return Ok(p),
            Err(Error::DegenerateGeometry { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible(format!(
        "no user position with a full-rank channel after {} draws",
        gen.requirements.max_retries
    )))
}

/// Draw one scenario; identical seeds give identical scenarios.
pub fn sample_scenario(seed: u64, gen: &GenConfig) -> Result<Scenario> {
    gen.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let req = &gen.requirements;
    let (k, l) = (gen.room.users, gen.room.num_aps());

    let beam_waist_um = match req.beam_waist_um {
        Some(range) => uniform(&mut rng, range),
        None => gen.channel.beam_waist_um,
    };
    let channel = gen.channel.with_beam_waist_um(beam_waist_um);
    let aps = gen.room.ap_positions();
    let positions = (0..k)
        .map(|_| sample_position(&mut rng, gen, &channel, &aps))
        .collect::<Result<Vec<_>>>()?;
    let rates = rate_matrix(&gen.room, &channel, &positions)?;

    let share = k as f64 / l as f64;
    for _ in 0..req.max_retries {
        let mut e_min = Vec::with_capacity(k);
        let mut e_max = Vec::with_capacity(k);
        while e_max.len() < k {
            let hi = uniform(&mut rng, req.e_max);
            let lo = uniform(&mut rng, [req.e_min_floor, req.e_min_fraction * hi]);
            // requirements must differ across users
            if e_min.iter().zip(&e_max).any(|(a, b)| *a == lo && *b == hi) {
                continue;
            }
            e_min.push(lo);
            e_max.push(hi);
        }
        let weights = (0..k).map(|_| uniform(&mut rng, req.weight)).collect();
        let capacity = (0..l)
            .map(|_| share * uniform(&mut rng, req.capacity_factor))
            .collect();
        match AllocationProblem::new(rates.clone(), e_min, e_max, capacity, weights) {
            Ok(problem) => {
                return Ok(Scenario {
                    seed,
                    beam_waist_um,
                    user_positions: positions,
                    problem,
                })
            }
            Err(Error::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible(format!(
        "requirements exceeded capacity in {} consecutive draws",
        req.max_retries
    )))
}

impl Scenario {
    /// Same users and requirements seen through a different beam waist.
    pub fn with_beam_waist(&self, beam_waist_um: f64, gen: &GenConfig) -> Result<Scenario> {
        let channel = gen.channel.with_beam_waist_um(beam_waist_um);
        let mut problem = self.problem.clone();
        problem.rates = rate_matrix(&gen.room, &channel, &self.user_positions)?;
        problem.validate()?;
        Ok(Scenario {
            seed: self.seed,
            beam_waist_um,
            user_positions: self.user_positions.clone(),
            problem,
        })
    }

    pub fn features(&self) -> Vec<f64> {
        problem_features(&self.problem)
    }

    pub fn to_toml(&self) -> String {
        let file = ScenarioFile {
            seed: self.seed,
            beam_waist_um: self.beam_waist_um,
            users: self
                .user_positions
                .iter()
                .map(|p| [p.x, p.y, p.z])
                .collect(),
            problem: ProblemFile::from_problem(&self.problem),
        };
        toml::to_string(&file).expect("scenario serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Scenario {
            seed: file.seed,
            beam_waist_um: file.beam_waist_um,
            user_positions: file
                .users
                .iter()
                .map(|p| Vector3::new(p[0], p[1], p[2]))
                .collect(),
            problem: file.problem.into_problem()?,
        })
    }
}

/// On-disk form of an allocation problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub e_min: Vec<f64>,
    pub e_max: Vec<f64>,
    pub capacity: Vec<f64>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// One row per user.
    pub rates: Vec<Vec<f64>>,
}

impl ProblemFile {
    pub fn from_problem(p: &AllocationProblem) -> Self {
        Self {
            e_min: p.e_min.clone(),
            e_max: p.e_max.clone(),
            capacity: p.capacity.clone(),
            weights: Some(p.weights.clone()),
            rates: (0..p.num_users())
                .map(|k| p.rates.row(k).iter().copied().collect())
                .collect(),
        }
    }

    pub fn into_problem(self) -> Result<AllocationProblem> {
        let k = self.rates.len();
        let l = self.rates.first().map_or(0, Vec::len);
        if self.rates.iter().any(|r| r.len() != l) {
            return Err(invalid("rate rows have different lengths"));
        }
        let flat: Vec<f64> = self.rates.into_iter().flatten().collect();
        let rates = DMatrix::from_row_slice(k, l, &flat);
        let weights = self.weights.unwrap_or_else(|| vec![1.0; k]);
        AllocationProblem::new(rates, self.e_min, self.e_max, self.capacity, weights)
    }

    pub fn from_toml(text: &str) -> Result<AllocationProblem> {
        let file: ProblemFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        file.into_problem()
    }
}

/// On-disk form of a solved allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionFile {
    pub method: String,
    pub utility: f64,
    pub sum_rate: f64,
    pub feasible: bool,
    pub converged: bool,
    pub iterations: usize,
    pub dual_bound: Option<f64>,
    pub diagnostic: Option<String>,
    /// One row per user.
    pub allocation: Vec<Vec<f64>>,
}

impl SolutionFile {
    pub fn from_solution(sol: &AllocationSolution, problem: &AllocationProblem) -> Self {
        let e = &sol.allocation;
        Self {
            method: sol.method.to_string(),
            utility: sol.utility,
            sum_rate: sol.sum_rate(problem),
            feasible: sol.feasible,
            converged: sol.converged,
            iterations: sol.iterations,
            dual_bound: sol.dual_bound,
            diagnostic: sol.diagnostic.clone(),
            allocation: (0..e.nrows())
                .map(|k| e.row(k).iter().copied().collect())
                .collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("solution serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    seed: u64,
    beam_waist_um: f64,
    users: Vec<[f64; 3]>,
    problem: ProblemFile,
}

/// Shape of feature and label vectors for `K` users and `L` APs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub k: usize,
    pub l: usize,
}

impl FeatureLayout {
    pub fn feature_len(&self) -> usize {
        3 * self.k + self.l + self.k * self.l
    }

    pub fn label_len(&self) -> usize {
        self.k * self.l
    }

    pub fn feature_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.feature_len());
        for prefix in ["e_min", "e_max", "xi"] {
            names.extend((0..self.k).map(|u| format!("{prefix}_{u}")));
        }
        names.extend((0..self.l).map(|a| format!("rho_{a}")));
        names.extend(self.pair_names("r"));
        names
    }

    pub fn label_names(&self) -> Vec<String> {
        self.pair_names("e")
    }

    fn pair_names(&self, prefix: &str) -> Vec<String> {
        (0..self.k)
            .flat_map(|u| (0..self.l).map(move |a| format!("{prefix}_{u}_{a}")))
            .collect()
    }

    fn header(&self) -> Vec<String> {
        let mut h = vec!["seed".to_string()];
        h.extend(self.feature_names());
        h.extend(self.label_names());
        h
    }
}

pub fn problem_features(p: &AllocationProblem) -> Vec<f64> {
    let mut v = Vec::with_capacity(3 * p.num_users() + p.num_aps() * (1 + p.num_users()));
    v.extend_from_slice(&p.e_min);
    v.extend_from_slice(&p.e_max);
    v.extend_from_slice(&p.weights);
    v.extend_from_slice(&p.capacity);
    for k in 0..p.num_users() {
        v.extend(p.rates.row(k).iter());
    }
    v
}

/// Inverse of [`problem_features`].
pub fn problem_from_features(layout: FeatureLayout, v: &[f64]) -> Result<AllocationProblem> {
    let (k, l) = (layout.k, layout.l);
    if v.len() != layout.feature_len() {
        return Err(invalid(format!(
            "feature vector has {} values, expected {}",
            v.len(),
            layout.feature_len()
        )));
    }
    AllocationProblem::new(
        DMatrix::from_row_slice(k, l, &v[3 * k + l..]),
        v[..k].to_vec(),
        v[k..2 * k].to_vec(),
        v[3 * k..3 * k + l].to_vec(),
        v[2 * k..3 * k].to_vec(),
    )
}

pub fn label_matrix(layout: FeatureLayout, label: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(layout.k, layout.l, label)
}

pub fn flatten_allocation(e: &DMatrix<f64>) -> Vec<f64> {
    (0..e.nrows())
        .flat_map(|k| e.row(k).iter().copied().collect::<Vec<_>>())
        .collect()
}

/// Per-component min-max scaling to `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let mut it = rows.into_iter();
        let first = it
            .next()
            .ok_or_else(|| invalid("cannot fit normalization to no data"))?;
        let mut min = first.to_vec();
        let mut max = first.to_vec();
        for row in it {
            if row.len() != min.len() {
                return Err(invalid("rows have different lengths"));
            }
            for (i, v) in row.iter().enumerate() {
                min[i] = min[i].min(*v);
                max[i] = max[i].max(*v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn len(&self) -> usize {
        self.min.len()
    }

    pub fn is_empty(&self) -> bool {
        self.min.is_empty()
    }

    /// Constant components map to 0.
    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub features: Vec<f64>,
    pub label: Vec<f64>,
}

/// Raw (unnormalized) samples plus the min-max constants fitted when the
/// dataset was generated; subsets keep their parent's constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub layout: FeatureLayout,
    pub samples: Vec<Sample>,
    pub dropped: usize,
    pub feature_norm: MinMax,
    pub label_norm: MinMax,
}

impl Dataset {
    pub fn from_samples(
        layout: FeatureLayout,
        samples: Vec<Sample>,
        dropped: usize,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(invalid("a dataset needs at least one sample"));
        }
        for s in &samples {
            if s.features.len() != layout.feature_len() || s.label.len() != layout.label_len() {
                return Err(invalid(format!(
                    "sample {} does not match the layout",
                    s.seed
                )));
            }
        }
        let feature_norm = MinMax::fit(samples.iter().map(|s| s.features.as_slice()))?;
        let label_norm = MinMax::fit(samples.iter().map(|s| s.label.as_slice()))?;
        Ok(Self {
            layout,
            samples,
            dropped,
            feature_norm,
            label_norm,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn subset(&self, samples: Vec<Sample>) -> Dataset {
        Dataset {
            layout: self.layout,
            samples,
            dropped: 0,
            feature_norm: self.feature_norm.clone(),
            label_norm: self.label_norm.clone(),
        }
    }

    /// The first `n` samples.
    pub fn truncate(&self, n: usize) -> Result<Dataset> {
        if n == 0 || n > self.len() {
            return Err(invalid(format!(
                "cannot take {n} of {} samples",
                self.len()
            )));
        }
        Ok(self.subset(self.samples[..n].to_vec()))
    }

    pub fn problem(&self, index: usize) -> Result<AllocationProblem> {
        let s = self.samples.get(index).ok_or(Error::Index {
            index,
            len: self.len(),
        })?;
        problem_from_features(self.layout, &s.features)
    }

    pub fn to_csv_string(&self) -> String {
        let join = |v: &[f64]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        };
        let mut out = String::new();
        let _ = writeln!(out, "# owalloc dataset v1");
        let _ = writeln!(out, "# layout k={} l={}", self.layout.k, self.layout.l);
        let _ = writeln!(out, "# dropped {}", self.dropped);
        let _ = writeln!(out, "# feature_min {}", join(&self.feature_norm.min));
        let _ = writeln!(out, "# feature_max {}", join(&self.feature_norm.max));
        let _ = writeln!(out, "# label_min {}", join(&self.label_norm.min));
        let _ = writeln!(out, "# label_max {}", join(&self.label_norm.max));
        out.push_str(&self.layout.header().join(","));
        out.push('\n');
        for s in &self.samples {
            out.push_str(&s.seed.to_string());
            for v in s.features.iter().chain(&s.label) {
                out.push(',');
                out.push_str(&v.to_string());
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str) -> Result<Dataset> {
        let parse_err = |line: usize, msg: String| Error::Parse { line, msg };
        let lines: Vec<&str> = text.lines().collect();
        let meta_len = lines.iter().take_while(|l| l.starts_with('#')).count();
        let meta = |i: usize, key: &str| -> Result<&str> {
            lines
                .get(i)
                .and_then(|l| l.strip_prefix("# "))
                .and_then(|l| l.strip_prefix(key))
                .map(str::trim)
                .ok_or_else(|| parse_err(i + 1, format!("expected `# {key}` metadata")))
        };
        if meta_len != 7 || meta(0, "owalloc dataset v1").is_err() {
            return Err(parse_err(
                1,
                "missing or unsupported dataset metadata".into(),
            ));
        }
        let layout_text = meta(1, "layout")?;
        let layout = parse_layout(layout_text)
            .ok_or_else(|| parse_err(2, format!("bad layout {layout_text:?}")))?;
        let dropped = meta(2, "dropped")?
            .parse()
            .map_err(|_| parse_err(3, "bad dropped count".into()))?;
        let floats = |i: usize, key: &str, n: usize| -> Result<Vec<f64>> {
            let v = meta(i, key)?
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| parse_err(i + 1, e.to_string()))?;
            if v.len() != n {
                return Err(parse_err(
                    i + 1,
                    format!("{key} has {} values, expected {n}", v.len()),
                ));
            }
            Ok(v)
        };
        let (nf, nl) = (layout.feature_len(), layout.label_len());
        let feature_norm = MinMax {
            min: floats(3, "feature_min", nf)?,
            max: floats(4, "feature_max", nf)?,
        };
        let label_norm = MinMax {
            min: floats(5, "label_min", nl)?,
            max: floats(6, "label_max", nl)?,
        };

        let body = lines[meta_len..].join("\n");
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .from_reader(body.as_bytes());
        let header_line = meta_len + 1;
        let header = reader
            .headers()
            .map_err(|e| parse_err(header_line, e.to_string()))?;
        if header.iter().ne(layout.header().iter().map(String::as_str)) {
            return Err(parse_err(
                header_line,
                "header does not match the declared layout".into(),
            ));
        }
        let width = 1 + nf + nl;
        let mut samples = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = meta_len + record.position().map_or(0, |p| p.line() as usize);
            if record.len() != width {
                return Err(parse_err(
                    line,
                    format!("row has {} fields, expected {width}", record.len()),
                ));
            }
            let seed = record[0]
                .parse()
                .map_err(|_| parse_err(line, format!("bad seed {:?}", &record[0])))?;
            let values = record
                .iter()
                .skip(1)
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| parse_err(line, format!("bad number {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            samples.push(Sample {
                seed,
                features: values[..nf].to_vec(),
                label: values[nf..].to_vec(),
            });
        }
        if samples.is_empty() {
            return Err(parse_err(header_line, "dataset has no rows".into()));
        }
        Ok(Dataset {
            layout,
            samples,
            dropped,
            feature_norm,
            label_norm,
        })
    }
}

fn parse_layout(text: &str) -> Option<FeatureLayout> {
    let mut parts = text.split_whitespace();
    let k = parts.next()?.strip_prefix("k=")?.parse().ok()?;
    let l = parts.next()?.strip_prefix("l=")?.parse().ok()?;
    (parts.next().is_none() && k > 0 && l > 0).then_some(FeatureLayout { k, l })
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    std::fs::write(path, ds.to_csv_string())?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    Dataset::from_csv_str(&std::fs::read_to_string(path)?)
}

/// `n` scenarios labelled by the dual solver. Samples whose scenario or
/// solve fails are dropped and counted.
pub fn generate_dataset(
    n: usize,
    seed: u64,
    gen: &GenConfig,
    solver: &SolverConfig,
) -> Result<Dataset> {
    if n == 0 {
        return Err(invalid("dataset size must be at least 1"));
    }
    gen.validate()?;
    let mut samples = Vec::with_capacity(n);
    let mut dropped = 0;
    for i in 0..n {
        let sample_seed = derive_seed(seed, i as u64);
        let labelled = sample_scenario(sample_seed, gen).and_then(|sc| {
            let sol = solve_dual(&sc.problem, solver)?;
            if !is_feasible(&sol.allocation, &sc.problem) {
                return Err(Error::Infeasible(
                    "solver returned an infeasible label".into(),
                ));
            }
            Ok(Sample {
                seed: sample_seed,
                features: sc.features(),
                label: flatten_allocation(&sol.allocation),
            })
        });
        match labelled {
            Ok(s) => samples.push(s),
            Err(_) => dropped += 1,
        }
    }
    if samples.is_empty() {
        return Err(Error::Infeasible(format!("all {n} samples were dropped")));
    }
    Dataset::from_samples(gen.layout(), samples, dropped)
}

/// Deterministic shuffled partition into training and validation sets.
pub fn split_dataset(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(invalid(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    if n < 2 {
        return Err(invalid("splitting needs at least two samples"));
    }
    let n_train = ((train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (mut train_idx, mut val_idx) = (order[..n_train].to_vec(), order[n_train..].to_vec());
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let pick = |idx: &[usize]| ds.subset(idx.iter().map(|&i| ds.samples[i].clone()).collect());
    Ok((pick(&train_idx), pick(&val_idx)))
}
