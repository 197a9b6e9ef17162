//! Experiment orchestration: datasets, training, solver comparisons,
//! corrupted-CSI robustness, generalization to larger networks and runtime
//! benchmarks, with CSV/JSON outputs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{
    closest_split, exhaustive, random_alloc, round_robin, wmmse_allocation, ClosestOrder, WmmseConfig, DEFAULT_GUARD,
};
use crate::error::{Error, Result};
use crate::jcpgnn::{forward, forward_fixed_channel, train, History, JcpgnnParams, Mode, TrainConfig};
use crate::metrics::{objective, Allocation};
use crate::netgen::{generate_dataset, Dataset, FadingConfig, GeometryConfig, NetworkInstance};
use crate::rng::{derive_labeled, derive_seed, rng_from_seed};

pub const RESULTS_FILE: &str = "results.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Solver {
    Exhaustive,
    Jcpgnn,
    /// Round-robin channels, GNN power.
    RrGnn,
    /// Round-robin channels, WMMSE power.
    RrWmmse,
    /// Closest-split channels, WMMSE power.
    Closest,
    Random,
}

impl Solver {
    pub const ALL: [Solver; 6] = [
        Solver::Exhaustive,
        Solver::Jcpgnn,
        Solver::RrGnn,
        Solver::RrWmmse,
        Solver::Closest,
        Solver::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Solver::Exhaustive => "exhaustive",
            Solver::Jcpgnn => "jcpgnn",
            Solver::RrGnn => "rr-gnn",
            Solver::RrWmmse => "rr-wmmse",
            Solver::Closest => "closest",
            Solver::Random => "random",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, Solver::Jcpgnn | Solver::RrGnn)
    }
}

impl fmt::Display for Solver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Solver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Solver::ALL
            .into_iter()
            .find(|v| v.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown solver {s:?}")))
    }
}

impl From<Solver> for String {
    fn from(s: Solver) -> String {
        s.name().to_string()
    }
}

impl TryFrom<String> for Solver {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

pub fn parse_solvers(list: &str) -> Result<Vec<Solver>> {
    let solvers: Vec<Solver> = list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect::<Result<_>>()?;
    if solvers.is_empty() {
        return Err(Error::Config("empty solver list".into()));
    }
    Ok(solvers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    pub fading: FadingConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Share of the training set held out for model selection.
    pub val_fraction: f64,
    pub seed: u64,
    pub train: TrainConfig,
    pub wmmse: WmmseConfig,
    pub exhaustive_guard: u64,
    pub closest_order: ClosestOrder,
    pub solvers: Vec<Solver>,
    pub robustness_fractions: Vec<f64>,
    /// Number of pairs in robustness instances (same density as the base geometry).
    pub robustness_d: usize,
    pub scale_factors: Vec<f64>,
    /// Instances per generalization scale.
    pub n_generalize: usize,
    pub bench_sizes: Vec<usize>,
    pub bench_solvers: Vec<Solver>,
    pub timing_reps: usize,
    pub timing_instances: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ExperimentConfig {
    /// D=10, M=2 with 2000 training and 500 test instances.
    pub fn desk() -> Self {
        Self {
            geometry: GeometryConfig::new(10, 2),
            fading: FadingConfig::default(),
            n_train: 2000,
            n_test: 500,
            val_fraction: 0.1,
            seed: 1,
            train: TrainConfig::default(),
            wmmse: WmmseConfig::default(),
            exhaustive_guard: DEFAULT_GUARD,
            closest_order: ClosestOrder::Proximity,
            solvers: Solver::ALL.to_vec(),
            robustness_fractions: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            robustness_d: 20,
            scale_factors: vec![1.0, 2.0, 3.0],
            n_generalize: 200,
            bench_sizes: vec![15, 50],
            bench_solvers: vec![Solver::Exhaustive, Solver::Jcpgnn, Solver::Closest],
            timing_reps: 3,
            timing_instances: 5,
        }
    }

    /// D=15, M=2 with 10000 training and 1000 test instances.
    pub fn paper_scale() -> Self {
        Self {
            geometry: GeometryConfig::new(15, 2),
            n_train: 10_000,
            n_test: 1000,
            scale_factors: vec![1.0, 2.0, 10.0 / 3.0, 16.0 / 3.0],
            n_generalize: 1000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.fading.validate()?;
        self.train.validate()?;
        self.wmmse.validate()?;
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.n_train == 0 || self.n_test == 0 {
            return bad("n_train and n_test must be positive");
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must lie in (0, 1)");
        }
        if self.robustness_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return bad("robustness fractions must lie in [0, 1]");
        }
        if self.scale_factors.iter().any(|&k| !(k > 0.0)) {
            return bad("scale factors must be positive");
        }
        if self.timing_reps < 3 {
            return bad("timing_reps must be at least 3");
        }
        if self.timing_instances == 0 || self.robustness_d == 0 || self.n_generalize == 0 {
            return bad("timing_instances, robustness_d and n_generalize must be positive");
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            msg: e.to_string(),
        })
    }

    /// Geometry with `d` pairs at the base pair density.
    pub fn geometry_for(&self, d: usize) -> GeometryConfig {
        let base = &self.geometry;
        GeometryConfig {
            d_pairs: d,
            area_side: base.area_side * (d as f64 / base.d_pairs as f64).sqrt(),
            ..*base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub solver: String,
    pub d: usize,
    pub m: usize,
    pub mean_objective: f64,
    pub std_objective: f64,
    pub mean_time_s: f64,
    pub seed: u64,
    pub config_hash: String,
}

/// Fixed inputs shared by all solvers of one experiment.
pub struct SolveContext<'a> {
    pub model: Option<&'a JcpgnnParams>,
    pub wmmse: WmmseConfig,
    pub guard: u64,
    pub closest_order: ClosestOrder,
    /// Seed for the random baseline; instance `k` uses `derive_seed(seed, k)`.
    pub seed: u64,
}

impl<'a> SolveContext<'a> {
    pub fn new(cfg: &ExperimentConfig, model: Option<&'a JcpgnnParams>) -> Self {
        Self {
            model,
            wmmse: cfg.wmmse,
            guard: cfg.exhaustive_guard,
            closest_order: cfg.closest_order,
            seed: derive_labeled(cfg.seed, "random-baseline"),
        }
    }

    fn model(&self, solver: Solver) -> Result<&'a JcpgnnParams> {
        self.model
            .ok_or_else(|| Error::Config(format!("solver {solver} needs a checkpoint")))
    }
}

/// Run `solver` on the model input `inst` (instance `index` of the experiment).
pub fn solve(solver: Solver, inst: &NetworkInstance, index: usize, ctx: &SolveContext) -> Result<Allocation> {
    let (d, m) = (inst.d_pairs, inst.m_channels);
    match solver {
        Solver::Exhaustive => exhaustive(inst, &ctx.wmmse, ctx.guard),
        Solver::Jcpgnn => {
            let params = ctx.model(solver)?;
            forward(&params.graph(inst), params, Mode::Hard)
        }
        Solver::RrGnn => {
            let params = ctx.model(solver)?;
            forward_fixed_channel(&params.graph(inst), params, &round_robin(d, m))
        }
        Solver::RrWmmse => wmmse_allocation(inst, &round_robin(d, m), &ctx.wmmse),
        Solver::Closest => wmmse_allocation(inst, &closest_split(inst, ctx.closest_order), &ctx.wmmse),
        Solver::Random => Ok(random_alloc(d, m, inst.p_max, derive_seed(ctx.seed, index as u64))),
    }
}

/// Per-instance objectives on the true instances and the mean solve time.
///
/// `inputs[k]` is what the solver sees for `truth[k]`.
pub fn evaluate(
    solver: Solver,
    truth: &[NetworkInstance],
    inputs: &[NetworkInstance],
    ctx: &SolveContext,
) -> Result<(Vec<f64>, f64)> {
    let mut values = Vec::with_capacity(truth.len());
    let mut elapsed = 0.0;
    for (k, (t, x)) in truth.iter().zip(inputs).enumerate() {
        let start = Instant::now();
        let alloc = solve(solver, x, k, ctx)?;
        elapsed += start.elapsed().as_secs_f64();
        alloc.validate(t.p_max)?;
        values.push(objective(t, &alloc)?);
    }
    Ok((values, elapsed / truth.len().max(1) as f64))
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn row(cfg: &ExperimentConfig, experiment: &str, solver: Solver, d: usize, m: usize, values: &[f64], time: f64) -> ResultRow {
    let (mean, std) = mean_std(values);
    ResultRow {
        experiment: experiment.to_string(),
        solver: solver.name().to_string(),
        d,
        m,
        mean_objective: mean,
        std_objective: std,
        mean_time_s: time,
        seed: cfg.seed,
        config_hash: cfg.hash(),
    }
}

fn check_model(model: Option<&JcpgnnParams>, solvers: &[Solver], m: usize, d: Option<usize>) -> Result<()> {
    let needed = solvers.iter().any(|s| s.needs_model());
    match model {
        None if needed => Err(Error::Config("a checkpoint is required for jcpgnn and rr-gnn".into())),
        Some(p) if needed => {
            if p.meta.m_channels != m {
                return Err(Error::Dimension(format!(
                    "checkpoint has M={}, dataset has M={m}",
                    p.meta.m_channels
                )));
            }
            match (d, p.meta.d_pairs) {
                (Some(d), Some(trained)) if d != trained => Err(Error::Dimension(format!(
                    "checkpoint was trained with D={trained}, dataset has D={d}"
                ))),
                _ => Ok(()),
            }
        }
        _ => Ok(()),
    }
}

/// Training and test sets of the configured geometry.
pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    cfg.validate()?;
    let train = generate_dataset(&cfg.geometry, &cfg.fading, cfg.n_train, derive_labeled(cfg.seed, "train"))?;
    let test = generate_dataset(&cfg.geometry, &cfg.fading, cfg.n_test, derive_labeled(cfg.seed, "test"))?;
    Ok((train, test))
}

/// Train on all but the held-out tail of `train_ds`.
pub fn cmd_train(cfg: &ExperimentConfig, train_ds: &Dataset) -> Result<(JcpgnnParams, History)> {
    cfg.validate()?;
    let n_val = ((train_ds.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, train_ds.len().saturating_sub(1).max(1));
    if train_ds.len() < 2 {
        return Err(Error::Config("training needs at least two instances".into()));
    }
    let (fit, val) = train_ds.clone().split_tail(n_val);
    train(&fit, &val, &cfg.train)
}

/// Objective of every solver on the same test set (experiment `fig3`).
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    test_ds: &Dataset,
    solvers: &[Solver],
    model: Option<&JcpgnnParams>,
) -> Result<Vec<ResultRow>> {
    if solvers.is_empty() {
        return Err(Error::Config("no solvers selected".into()));
    }
    let (d, m) = (test_ds.geometry.d_pairs, test_ds.geometry.m_channels);
    check_model(model, solvers, m, Some(d))?;
    let ctx = SolveContext::new(cfg, model);
    solvers
        .iter()
        .map(|&s| {
            let (values, time) = evaluate(s, &test_ds.instances, &test_ds.instances, &ctx)?;
            Ok(row(cfg, "fig3", s, d, m, &values, time))
        })
        .collect()
}

/// Copy of `inst` with `round(fraction · D(D-1)M)` off-diagonal gains set to zero.
pub fn corrupt_csi(inst: &NetworkInstance, fraction: f64, seed: u64) -> Result<NetworkInstance> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::Config(format!("corruption fraction {fraction} outside [0, 1]")));
    }
    let (d, m) = (inst.d_pairs, inst.m_channels);
    let slots: Vec<(usize, usize, usize)> = (0..d)
        .flat_map(|i| (0..d).filter(move |&j| j != i).flat_map(move |j| (0..m).map(move |c| (i, j, c))))
        .collect();
    let count = (fraction * slots.len() as f64).round() as usize;
    let mut out = inst.clone();
    let mut rng = rng_from_seed(seed);
    for k in sample(&mut rng, slots.len(), count) {
        let (i, j, c) = slots[k];
        *out.gain_mut(i, j, c) = 0.0;
    }
    Ok(out)
}

/// Test instances for robustness runs: the given dataset or a fresh one at `robustness_d`.
pub fn robustness_instances(cfg: &ExperimentConfig) -> Result<Dataset> {
    generate_dataset(
        &cfg.geometry_for(cfg.robustness_d),
        &cfg.fading,
        cfg.n_test,
        derive_labeled(cfg.seed, "robustness"),
    )
}

/// JCPGNN fed corrupted CSI, scored on the true instances (experiments `fig5-f<fraction>`).
pub fn cmd_robustness(
    cfg: &ExperimentConfig,
    test_ds: &Dataset,
    model: &JcpgnnParams,
    fractions: &[f64],
) -> Result<Vec<ResultRow>> {
    let (d, m) = (test_ds.geometry.d_pairs, test_ds.geometry.m_channels);
    check_model(Some(model), &[Solver::Jcpgnn], m, None)?;
    let ctx = SolveContext::new(cfg, Some(model));
    let corrupt_seed = derive_labeled(cfg.seed, "corrupt");
    fractions
        .iter()
        .map(|&f| {
            let inputs = test_ds
                .instances
                .iter()
                .enumerate()
                .map(|(k, x)| corrupt_csi(x, f, derive_seed(corrupt_seed, k as u64)))
                .collect::<Result<Vec<_>>>()?;
            let (values, time) = evaluate(Solver::Jcpgnn, &test_ds.instances, &inputs, &ctx)?;
            Ok(row(cfg, &format!("fig5-f{f:.2}"), Solver::Jcpgnn, d, m, &values, time))
        })
        .collect()
}

/// Solvers compared on networks scaled at fixed density (experiments `table1-k<factor>`).
pub const GENERALIZE_SOLVERS: [Solver; 3] = [Solver::Jcpgnn, Solver::RrGnn, Solver::Closest];

pub fn cmd_generalize(cfg: &ExperimentConfig, model: &JcpgnnParams, factors: &[f64]) -> Result<Vec<ResultRow>> {
    check_model(Some(model), &GENERALIZE_SOLVERS, cfg.geometry.m_channels, None)?;
    let ctx = SolveContext::new(cfg, Some(model));
    let mut rows = Vec::new();
    for (k, &factor) in factors.iter().enumerate() {
        let d = (cfg.geometry.d_pairs as f64 * factor).round().max(1.0) as usize;
        let ds = generate_dataset(
            &cfg.geometry_for(d),
            &cfg.fading,
            cfg.n_generalize,
            derive_seed(derive_labeled(cfg.seed, "generalize"), k as u64),
        )?;
        for s in GENERALIZE_SOLVERS {
            let (values, time) = evaluate(s, &ds.instances, &ds.instances, &ctx)?;
            rows.push(row(cfg, &format!("table1-k{factor:.2}"), s, d, cfg.geometry.m_channels, &values, time));
        }
    }
    Ok(rows)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Median (over repetitions) of the mean per-instance solve time, single-threaded
/// (experiments `fig6-d<D>`). Exhaustive search beyond the guard yields a row
/// with NaN objective and time.
pub fn cmd_bench(
    cfg: &ExperimentConfig,
    model: Option<&JcpgnnParams>,
    sizes: &[usize],
    solvers: &[Solver],
) -> Result<Vec<ResultRow>> {
    if cfg.timing_reps < 3 {
        return Err(Error::Config("timing needs at least 3 repetitions".into()));
    }
    let m = cfg.geometry.m_channels;
    check_model(model, solvers, m, None)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let ctx = SolveContext::new(cfg, model);
    let mut rows = Vec::new();
    for (k, &d) in sizes.iter().enumerate() {
        let ds = generate_dataset(
            &cfg.geometry_for(d),
            &cfg.fading,
            cfg.timing_instances,
            derive_seed(derive_labeled(cfg.seed, "bench"), k as u64),
        )?;
        let experiment = format!("fig6-d{d}");
        for &s in solvers {
            if s == Solver::Exhaustive && (m as f64).powi(d as i32) > cfg.exhaustive_guard as f64 {
                rows.push(row(cfg, &experiment, s, d, m, &[], f64::NAN));
                continue;
            }
            let result = pool.install(|| -> Result<(Vec<f64>, f64)> {
                solve(s, &ds.instances[0], 0, &ctx)?; // warm-up
                let mut times = Vec::with_capacity(cfg.timing_reps);
                let mut values = Vec::new();
                for _ in 0..cfg.timing_reps {
                    let (v, t) = evaluate(s, &ds.instances, &ds.instances, &ctx)?;
                    times.push(t);
                    values = v;
                }
                Ok((values, median(&mut times)))
            })?;
            rows.push(row(cfg, &experiment, s, d, m, &result.0, result.1));
        }
    }
    Ok(rows)
}

/// Append rows to `path`, writing the header only when the file is new.
pub fn append_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let exists = path.exists() && fs::metadata(path).map(|m| m.len() > 0).unwrap_or(false);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub solver: String,
    pub d: usize,
    pub m: usize,
    pub runs: usize,
    pub mean_objective: f64,
    pub std_objective: f64,
    pub mean_time_s: f64,
}

/// One row per (experiment, solver): averages over all runs in the results.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.experiment.clone(), r.solver.clone())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((experiment, solver), rs)| {
            let avg = |f: fn(&ResultRow) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
            SummaryRow {
                experiment,
                solver,
                d: rs[0].d,
                m: rs[0].m,
                runs: rs.len(),
                mean_objective: avg(|r| r.mean_objective),
                std_objective: avg(|r| r.std_objective),
                mean_time_s: avg(|r| r.mean_time_s),
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Validation(format!("{}: {other:?}", path.display())),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct Fig3Row<'a> {
    solver: &'a str,
    d: usize,
    m: usize,
    mean_objective: f64,
    std_objective: f64,
    ratio_to_exhaustive: f64,
}

#[derive(Debug, Serialize)]
struct Fig5Row {
    fraction: f64,
    d: usize,
    m: usize,
    mean_objective: f64,
    normalized: f64,
}

#[derive(Debug, Serialize)]
struct Fig6Row<'a> {
    d: usize,
    solver: &'a str,
    median_time_s: f64,
    available: bool,
}

#[derive(Debug, Serialize)]
struct Table1Row {
    factor: f64,
    d: usize,
    m: usize,
    jcpgnn: f64,
    rr_gnn: f64,
    closest: f64,
    jcpgnn_over_closest: f64,
    jcpgnn_over_rr_gnn: f64,
}

/// Paths written by [`cmd_report`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub summary: PathBuf,
    pub figures: Vec<PathBuf>,
}

/// Summary JSON and per-figure CSVs from a results file.
pub fn cmd_report(results: &Path, out_dir: &Path) -> Result<ReportFiles> {
    let rows = read_results(results)?;
    let summary = summarize(&rows);
    let summary_path = out_dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary)?;
    fs::write(&summary_path, json).map_err(|e| Error::io(&summary_path, e))?;

    let mut figures = Vec::new();
    let lookup = |exp: &str, solver: &str| {
        summary
            .iter()
            .find(|r| r.experiment == exp && r.solver == solver)
            .map(|r| r.mean_objective)
    };

    let fig3: Vec<Fig3Row> = summary
        .iter()
        .filter(|r| r.experiment == "fig3")
        .map(|r| Fig3Row {
            solver: &r.solver,
            d: r.d,
            m: r.m,
            mean_objective: r.mean_objective,
            std_objective: r.std_objective,
            ratio_to_exhaustive: lookup("fig3", "exhaustive").map_or(f64::NAN, |e| r.mean_objective / e),
        })
        .collect();
    if !fig3.is_empty() {
        let p = out_dir.join("fig3.csv");
        write_csv(&p, &fig3)?;
        figures.push(p);
    }

    let base5 = summary
        .iter()
        .find(|r| r.experiment.strip_prefix("fig5-f").and_then(|f| f.parse::<f64>().ok()) == Some(0.0))
        .map(|r| r.mean_objective);
    let fig5: Vec<Fig5Row> = summary
        .iter()
        .filter_map(|r| {
            let fraction = r.experiment.strip_prefix("fig5-f")?.parse().ok()?;
            Some(Fig5Row {
                fraction,
                d: r.d,
                m: r.m,
                mean_objective: r.mean_objective,
                normalized: base5.map_or(f64::NAN, |b| r.mean_objective / b),
            })
        })
        .collect();
    if !fig5.is_empty() {
        let p = out_dir.join("fig5.csv");
        write_csv(&p, &fig5)?;
        figures.push(p);
    }

    let fig6: Vec<Fig6Row> = summary
        .iter()
        .filter_map(|r| {
            r.experiment.strip_prefix("fig6-d")?;
            Some(Fig6Row {
                d: r.d,
                solver: &r.solver,
                median_time_s: r.mean_time_s,
                available: r.mean_time_s.is_finite(),
            })
        })
        .collect();
    if !fig6.is_empty() {
        let p = out_dir.join("fig6.csv");
        write_csv(&p, &fig6)?;
        figures.push(p);
    }

    let mut table1 = Vec::new();
    let mut seen = Vec::new();
    for r in &summary {
        let Some(factor) = r.experiment.strip_prefix("table1-k").and_then(|f| f.parse::<f64>().ok()) else {
            continue;
        };
        if seen.contains(&r.experiment) {
            continue;
        }
        seen.push(r.experiment.clone());
        let get = |s: &str| lookup(&r.experiment, s).unwrap_or(f64::NAN);
        let (j, rr, cl) = (get("jcpgnn"), get("rr-gnn"), get("closest"));
        table1.push(Table1Row {
            factor,
            d: r.d,
            m: r.m,
            jcpgnn: j,
            rr_gnn: rr,
            closest: cl,
            jcpgnn_over_closest: j / cl,
            jcpgnn_over_rr_gnn: j / rr,
        });
    }
    if !table1.is_empty() {
        table1.sort_by(|a, b| a.factor.total_cmp(&b.factor));
        let p = out_dir.join("table1.csv");
        write_csv(&p, &table1)?;
        figures.push(p);
    }

    Ok(ReportFiles {
        summary: summary_path,
        figures,
    })
}
