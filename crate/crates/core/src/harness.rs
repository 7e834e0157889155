//! Dataset-level evaluation: per-pair runs, RMSE/MAE aggregation, CEM
//! hyperparameter sweeps and report files.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::baseline::{icp_register, IcpConfig};
use crate::dataio::{derive_seed, draw_ground_truth, write_atomic, PairSpec, RegistrationPair};
use crate::geometry::{registration_errors, Action};
use crate::latentmodel::DynamicModel;
use crate::planner::{plan, CemConfig, ChamferOracle, LatentOracle};
use crate::{Error, Exec, Result};

const PAIR_SEED_STREAM: u64 = 0x5041_4952;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// CEM scored by the learned latent model.
    LatentCem,
    /// CEM scored by the exact Chamfer distance.
    ChamferCem,
    Icp,
    /// A random action from the ground-truth distribution; a reference floor.
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::LatentCem,
        Method::ChamferCem,
        Method::Icp,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::LatentCem => "latent-cem",
            Method::ChamferCem => "chamfer-cem",
            Method::Icp => "icp",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method {s:?} (expected latent-cem, chamfer-cem, icp or random)"
                ))
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalSettings {
    pub cem: CemConfig,
    pub icp: IcpConfig,
    /// Range of the random reference method.
    pub random_spec: PairSpec,
    /// Pairs are evaluated concurrently under [`Exec::Parallel`].
    pub exec: Exec,
    /// Record wall-clock time per pair. Off by default so that reports are
    /// reproducible byte for byte.
    pub timing: bool,
    /// Echoed verbatim into reports.
    pub config_echo: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub index: usize,
    pub ground_truth: [f64; 6],
    /// `None` when the method failed on this pair.
    pub prediction: Option<[f64; 6]>,
    pub rotation_error_deg: Option<[f64; 3]>,
    pub translation_error: Option<[f64; 3]>,
    pub wall_time_s: Option<f64>,
    pub failure: Option<String>,
}

impl PairRecord {
    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }
}

/// Per-axis errors pooled over the three axes and every successful pair.
/// Metrics are `None` when no pair succeeded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub rmse_r_deg: Option<f64>,
    pub mae_r_deg: Option<f64>,
    pub rmse_t: Option<f64>,
    pub mae_t: Option<f64>,
    pub pairs: usize,
    pub failures: usize,
}

impl Aggregates {
    pub fn from_records(records: &[PairRecord]) -> Self {
        let mut sq_r = 0.0;
        let mut abs_r = 0.0;
        let mut sq_t = 0.0;
        let mut abs_t = 0.0;
        let mut ok = 0usize;
        for r in records {
            let (Some(er), Some(et)) = (r.rotation_error_deg, r.translation_error) else {
                continue;
            };
            if r.is_failure() {
                continue;
            }
            ok += 1;
            for v in er {
                sq_r += v * v;
                abs_r += v.abs();
            }
            for v in et {
                sq_t += v * v;
                abs_t += v.abs();
            }
        }
        let count = (3 * ok) as f64;
        let metric = |v: f64| (ok > 0).then_some(v / count);
        Self {
            rmse_r_deg: metric(sq_r).map(f64::sqrt),
            mae_r_deg: metric(abs_r),
            rmse_t: metric(sq_t).map(f64::sqrt),
            mae_t: metric(abs_t),
            pairs: records.len(),
            failures: records.iter().filter(|r| r.is_failure()).count(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub method: Method,
    pub seed: u64,
    pub config_echo: String,
    pub records: Vec<PairRecord>,
    pub aggregates: Aggregates,
}

/// Runs `method` on one pair. `seed` drives the stochastic methods.
pub fn register_pair(
    method: Method,
    pair: &RegistrationPair,
    model: Option<&DynamicModel>,
    settings: &EvalSettings,
    seed: u64,
    exec: Exec,
) -> Result<Action> {
    let cem = CemConfig {
        seed,
        ..settings.cem
    };
    match method {
        Method::ChamferCem => {
            Ok(plan(&ChamferOracle::new(&pair.source, &pair.target, exec), &cem)?.action)
        }
        Method::LatentCem => {
            let model = model
                .ok_or_else(|| Error::InvalidArgument("latent-cem needs a trained model".into()))?;
            Ok(plan(
                &LatentOracle::new(model, &pair.source, &pair.target, exec)?,
                &cem,
            )?
            .action)
        }
        Method::Icp => Ok(icp_register(&pair.source, &pair.target, &settings.icp)?.action),
        Method::Random => Ok(draw_ground_truth(&settings.random_spec, seed)?.0),
    }
}

fn evaluate_one(
    method: Method,
    index: usize,
    pair: &RegistrationPair,
    gt: Action,
    model: Option<&DynamicModel>,
    settings: &EvalSettings,
) -> PairRecord {
    let seed = derive_seed(settings.cem.seed, PAIR_SEED_STREAM, index as u64);
    let start = Instant::now();
    // concurrency lives at the pair level; each pair runs serially
    let outcome = register_pair(method, pair, model, settings, seed, Exec::Serial);
    let wall = settings.timing.then(|| start.elapsed().as_secs_f64());
    let mut record = PairRecord {
        index,
        ground_truth: gt.to_array(),
        prediction: None,
        rotation_error_deg: None,
        translation_error: None,
        wall_time_s: wall,
        failure: None,
    };
    match outcome {
        Ok(a) if a.to_array().iter().all(|v| v.is_finite()) => {
            let e = registration_errors(&a, &gt);
            record.prediction = Some(a.to_array());
            record.rotation_error_deg = Some(e.rotation_deg);
            record.translation_error = Some(e.translation);
        }
        Ok(a) => record.failure = Some(format!("non-finite prediction {:?}", a.to_array())),
        Err(e) => record.failure = Some(e.to_string()),
    }
    record
}

/// Runs `method` over every pair and aggregates the errors. Failures on
/// individual pairs become failure rows; configuration problems abort.
pub fn evaluate_method(
    method: Method,
    pairs: &[RegistrationPair],
    model: Option<&DynamicModel>,
    settings: &EvalSettings,
) -> Result<BenchmarkReport> {
    settings.cem.validate()?;
    settings.icp.validate()?;
    if method == Method::LatentCem && model.is_none() {
        return Err(Error::InvalidArgument(
            "latent-cem needs a trained model".into(),
        ));
    }
    let truths = pairs
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.ground_truth
                .ok_or_else(|| Error::InvalidArgument(format!("pair {i} has no ground truth")))
        })
        .collect::<Result<Vec<_>>>()?;
    let records = settings.exec.map_range(pairs.len(), |i| {
        evaluate_one(method, i, &pairs[i], truths[i], model, settings)
    });
    Ok(BenchmarkReport {
        method,
        seed: settings.cem.seed,
        config_echo: settings.config_echo.clone(),
        aggregates: Aggregates::from_records(&records),
        records,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub iterations: usize,
    pub candidates: usize,
    pub elites: usize,
    pub aggregates: Aggregates,
    pub wall_time_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub method: Method,
    pub iteration_values: Vec<usize>,
    pub candidate_values: Vec<usize>,
    /// Row-major: iterations outer, candidates inner.
    pub cells: Vec<SweepCell>,
}

impl SweepGrid {
    pub fn cell(&self, iterations: usize, candidates: usize) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.iterations == iterations && c.candidates == candidates)
    }
}

/// One evaluation per `(T, N)` cell with shared seeds. The elite count is
/// capped at `N`. Wall time is recorded when `settings.timing` is set.
pub fn sweep_cem(
    method: Method,
    pairs: &[RegistrationPair],
    model: Option<&DynamicModel>,
    settings: &EvalSettings,
    iteration_values: &[usize],
    candidate_values: &[usize],
) -> Result<SweepGrid> {
    if iteration_values.is_empty() || candidate_values.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    if !matches!(method, Method::LatentCem | Method::ChamferCem) {
        return Err(Error::Config(format!(
            "cannot sweep CEM parameters of {method}"
        )));
    }
    let mut cells = Vec::new();
    for &t in iteration_values {
        for &n in candidate_values {
            let cell_settings = EvalSettings {
                cem: CemConfig {
                    iterations: t,
                    candidates: n,
                    elites: settings.cem.elites.min(n),
                    ..settings.cem
                },
                ..settings.clone()
            };
            let start = Instant::now();
            let report = evaluate_method(method, pairs, model, &cell_settings)?;
            cells.push(SweepCell {
                iterations: t,
                candidates: n,
                elites: cell_settings.cem.elites,
                aggregates: report.aggregates,
                wall_time_s: settings.timing.then(|| start.elapsed().as_secs_f64()),
            });
        }
    }
    Ok(SweepGrid {
        method,
        iteration_values: iteration_values.to_vec(),
        candidate_values: candidate_values.to_vec(),
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    JsonLines,
    Csv,
    Text,
}

impl ReportFormat {
    /// Chosen from the file extension: `.jsonl`/`.json`, `.csv`, anything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => ReportFormat::JsonLines,
            Some("csv") => ReportFormat::Csv,
            _ => ReportFormat::Text,
        }
    }
}

/// Columns of the csv report.
pub const CSV_COLUMNS: [&str; 22] = [
    "index",
    "status",
    "gt_e1",
    "gt_e2",
    "gt_e3",
    "gt_t1",
    "gt_t2",
    "gt_t3",
    "pred_e1",
    "pred_e2",
    "pred_e3",
    "pred_t1",
    "pred_t2",
    "pred_t3",
    "err_r1_deg",
    "err_r2_deg",
    "err_r3_deg",
    "err_t1",
    "err_t2",
    "err_t3",
    "wall_time_s",
    "failure",
];

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum JsonLine {
    Pair(PairRecord),
    Aggregate {
        method: Method,
        seed: u64,
        config: String,
        #[serde(flatten)]
        aggregates: Aggregates,
    },
}

fn write_jsonl(w: &mut dyn Write, report: &BenchmarkReport) -> std::io::Result<()> {
    for r in &report.records {
        serde_json::to_writer(&mut *w, &JsonLine::Pair(r.clone()))?;
        writeln!(w)?;
    }
    let tail = JsonLine::Aggregate {
        method: report.method,
        seed: report.seed,
        config: report.config_echo.clone(),
        aggregates: report.aggregates,
    };
    serde_json::to_writer(&mut *w, &tail)?;
    writeln!(w)
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_csv(w: &mut dyn Write, report: &BenchmarkReport) -> std::io::Result<()> {
    for line in report.config_echo.lines() {
        writeln!(w, "# {line}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_COLUMNS)?;
    for r in &report.records {
        let mut row = vec![
            r.index.to_string(),
            if r.is_failure() { "failed" } else { "ok" }.to_string(),
        ];
        row.extend(r.ground_truth.iter().map(|v| v.to_string()));
        match r.prediction {
            Some(p) => row.extend(p.iter().map(|v| v.to_string())),
            None => row.extend(std::iter::repeat_n(String::new(), 6)),
        }
        for errs in [r.rotation_error_deg, r.translation_error] {
            match errs {
                Some(e) => row.extend(e.iter().map(|v| v.to_string())),
                None => row.extend(std::iter::repeat_n(String::new(), 3)),
            }
        }
        row.push(opt(r.wall_time_s));
        row.push(r.failure.clone().unwrap_or_default());
        out.write_record(&row)?;
    }
    out.flush()
}

fn fixed(v: Option<f64>, precision: usize) -> String {
    v.map(|v| format!("{v:.precision$}"))
        .unwrap_or_else(|| "-".into())
}

/// Plain-text table; also used for console output.
pub fn render_table(report: &BenchmarkReport) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "# method: {}\n# seed: {}\n",
        report.method, report.seed
    ));
    for line in report.config_echo.lines() {
        s.push_str(&format!("# {line}\n"));
    }
    s.push_str(&format!(
        "{:>5}  {:>6}  {:>9} {:>9} {:>9}  {:>9} {:>9} {:>9}\n",
        "pair", "status", "err_e1", "err_e2", "err_e3", "err_t1", "err_t2", "err_t3"
    ));
    for r in &report.records {
        let status = if r.is_failure() { "failed" } else { "ok" };
        let er = r
            .rotation_error_deg
            .map(|e| e.map(Some))
            .unwrap_or([None; 3]);
        let et = r
            .translation_error
            .map(|e| e.map(Some))
            .unwrap_or([None; 3]);
        s.push_str(&format!(
            "{:>5}  {:>6}  {:>9} {:>9} {:>9}  {:>9} {:>9} {:>9}\n",
            r.index,
            status,
            fixed(er[0], 3),
            fixed(er[1], 3),
            fixed(er[2], 3),
            fixed(et[0], 5),
            fixed(et[1], 5),
            fixed(et[2], 5)
        ));
    }
    let a = &report.aggregates;
    s.push_str(&format!(
        "RMSE(R) {} deg  MAE(R) {} deg  RMSE(t) {}  MAE(t) {}  pairs {}  failures {}\n",
        fixed(a.rmse_r_deg, 4),
        fixed(a.mae_r_deg, 4),
        fixed(a.rmse_t, 6),
        fixed(a.mae_t, 6),
        a.pairs,
        a.failures
    ));
    s
}

pub fn emit_report(report: &BenchmarkReport, path: &Path, format: ReportFormat) -> Result<()> {
    match format {
        ReportFormat::JsonLines => write_atomic(path, |w| write_jsonl(w, report)),
        ReportFormat::Csv => write_atomic(path, |w| write_csv(w, report)),
        ReportFormat::Text => write_atomic(path, |w| w.write_all(render_table(report).as_bytes())),
    }
}

/// Parses a json-lines report written by [`emit_report`].
pub fn read_jsonl_report(path: &Path) -> Result<BenchmarkReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut tail = None;
    for (i, line) in text.lines().enumerate() {
        let parsed: JsonLine = serde_json::from_str(line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        match parsed {
            JsonLine::Pair(r) if tail.is_none() => records.push(r),
            JsonLine::Pair(_) => {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: "pair record after the aggregate record".into(),
                })
            }
            JsonLine::Aggregate {
                method,
                seed,
                config,
                aggregates,
            } => tail = Some((method, seed, config, aggregates)),
        }
    }
    let (method, seed, config_echo, aggregates) = tail.ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        line: text.lines().count(),
        message: "missing aggregate record".into(),
    })?;
    Ok(BenchmarkReport {
        method,
        seed,
        config_echo,
        records,
        aggregates,
    })
}

/// Sweep grid as json-lines: one line per cell.
pub fn emit_sweep(grid: &SweepGrid, path: &Path) -> Result<()> {
    write_atomic(path, |w| {
        for cell in &grid.cells {
            serde_json::to_writer(&mut *w, cell)?;
            writeln!(w)?;
        }
        Ok(())
    })
}

/// Sweep grid as a text heatmap of MAE(R) (rows: iterations, columns: candidates).
pub fn render_sweep(grid: &SweepGrid) -> String {
    let mut s = format!(
        "# {} MAE(R) in degrees; rows T, columns N\n{:>6}",
        grid.method, "T\\N"
    );
    for n in &grid.candidate_values {
        s.push_str(&format!(" {n:>10}"));
    }
    s.push('\n');
    for &t in &grid.iteration_values {
        s.push_str(&format!("{t:>6}"));
        for &n in &grid.candidate_values {
            let v = grid.cell(t, n).and_then(|c| c.aggregates.mae_r_deg);
            s.push_str(&format!(" {:>10}", fixed(v, 4)));
        }
        s.push('\n');
    }
    if grid.cells.iter().any(|c| c.wall_time_s.is_some()) {
        s.push_str("# wall time (s)\n");
        for &t in &grid.iteration_values {
            s.push_str(&format!("{t:>6}"));
            for &n in &grid.candidate_values {
                let v = grid.cell(t, n).and_then(|c| c.wall_time_s);
                s.push_str(&format!(" {:>10}", fixed(v, 3)));
            }
            s.push('\n');
        }
    }
    s
}
