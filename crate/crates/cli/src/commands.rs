//! Subcommands. Variable indices are 1-based on the command line and in CSV
//! outputs; samples files store them 0-based.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use btpnn::bench::{export_csv, generate, run_benchmark, BenchSpec};
use btpnn::data::{load_csv, RawTable};
use btpnn::inference::{component_estimate, importance_scores, ImportanceMode, Posterior, PosteriorSamples};
use btpnn::likelihood::Family;
use btpnn::mcmc::TraceRow;
use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{format_set, parse_set, read_weights, RunConfig};
use crate::error::{invalid, CliError, Result};
use crate::manifest::{absolute, sha256_file, write_file, Manifest, MANIFEST_FILE};

pub const SAMPLES_FILE: &str = "samples.jsonl";
pub const TRACE_FILE: &str = "trace.csv";
pub const REPORT_FILE: &str = "report.json";
pub const DATA_FILE: &str = "data.csv";

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum Command {
    /// Sample the posterior for a CSV dataset.
    Fit(FitArgs),
    /// Posterior predictive summaries for new rows.
    Predict(PredictArgs),
    /// Rank variable sets by the size of their fitted component.
    Importance(ImportanceArgs),
    /// Posterior mean and 95% band of one component.
    Components(ComponentsArgs),
    /// Generate a synthetic dataset, fit it, and score the fit.
    Bench(BenchArgs),
    /// Repeat a recorded run and check its outputs are identical.
    Rerun(RerunArgs),
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Response column; overrides `target` in the config.
    #[arg(long)]
    pub target: Option<String>,
    /// gaussian, bernoulli or poisson; overrides `family` in the config.
    #[arg(long)]
    pub family: Option<String>,
    /// Flat JSON of prior and chain settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV of `index,weight` rows giving variable-selection weights.
    #[arg(long = "p-input")]
    pub p_input: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Central predictive interval level (gaussian only).
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    PosteriorMean,
    PerSampleMean,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ImportanceArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Rows to evaluate components on, usually the training CSV.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "posterior-mean")]
    pub mode: ModeArg,
    /// Divide scores by the largest one.
    #[arg(long)]
    pub normalize: bool,
    /// Keep only the first N sets.
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct ComponentsArgs {
    #[arg(long)]
    pub samples: PathBuf,
    /// Variable set, 1-based and comma separated, e.g. `3,5`.
    #[arg(long)]
    pub set: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Rows to evaluate on; required for sets of three or more variables.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct BenchArgs {
    /// JSON file describing the benchmark run.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize, Deserialize)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Write to this location instead of the recorded one.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub manifest: Option<PathBuf>,
    pub summary: String,
}

pub fn execute(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Fit(a) => cmd_fit(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Importance(a) => cmd_importance(a),
        Command::Components(a) => cmd_components(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Rerun(a) => cmd_rerun(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Write {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| CliError::Write {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_fail(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |e| CliError::Write {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Manifest path for a command writing a single file.
fn sidecar_manifest(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

struct Record<'a> {
    command: Command,
    config: Option<serde_json::Value>,
    data: Option<btpnn::data::DatasetFingerprint>,
    outputs: Vec<&'a Path>,
    manifest: PathBuf,
    started: Instant,
}

fn record(r: Record<'_>) -> Result<PathBuf> {
    let mut outputs = BTreeMap::new();
    for path in r.outputs {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        outputs.insert(name, sha256_file(path)?);
    }
    let manifest_abs = absolute(&r.manifest);
    let m = Manifest {
        tool: "btpnn".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: r.command,
        config: r.config,
        data: r.data,
        outputs,
        elapsed_seconds: r.started.elapsed().as_secs_f64(),
        rerun: format!("btpnn rerun --manifest {}", manifest_abs.display()),
    };
    m.save(&r.manifest)?;
    Ok(r.manifest)
}

pub fn cmd_fit(args: &FitArgs) -> Result<Outcome> {
    let started = Instant::now();
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(t) = &args.target {
        cfg.target = Some(t.clone());
    }
    if let Some(f) = &args.family {
        cfg.family = Some(f.parse::<Family>().map_err(|e| invalid(e.to_string()))?);
    }
    if let Some(seed) = args.seed {
        cfg.chain.seed = seed;
    }
    let target = cfg
        .target
        .clone()
        .ok_or_else(|| invalid("no response column: pass --target or set \"target\" in the config"))?;
    let family = *cfg.family.get_or_insert(Family::Gaussian);
    let ds = load_csv(&args.data, &target, family)?;
    if let Some(path) = &args.p_input {
        cfg.prior.omega = Some(read_weights(path, ds.p())?);
        cfg.prior.validate()?;
    }

    create_dir(&args.out)?;
    let fit = btpnn::fit(&ds, &cfg.prior, &cfg.chain)?;
    let samples_path = args.out.join(SAMPLES_FILE);
    let trace_path = args.out.join(TRACE_FILE);
    fit.samples.save(&samples_path)?;
    write_trace(&trace_path, &fit.trace)?;

    let command = Command::Fit(FitArgs {
        data: absolute(&args.data),
        config: args.config.as_deref().map(absolute),
        out: absolute(&args.out),
        p_input: args.p_input.as_deref().map(absolute),
        ..args.clone()
    });
    let manifest = record(Record {
        command,
        config: Some(cfg.to_json()),
        data: Some(ds.fingerprint()),
        outputs: vec![&samples_path, &trace_path],
        manifest: args.out.join(MANIFEST_FILE),
        started,
    })?;
    let s = &fit.stats;
    Ok(Outcome {
        manifest: Some(manifest),
        summary: format!(
            "{} draws from {} chain(s), n = {}, p = {}; acceptance birth {:.3} death {:.3} langevin {:.3}",
            fit.samples.len(),
            cfg.chain.n_chains,
            ds.n(),
            ds.p(),
            s.birth.rate(),
            s.death.rate(),
            s.langevin.rate()
        ),
    })
}

fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in trace {
        w.serialize(row).map_err(csv_fail(path))?;
    }
    w.flush().map_err(|e| CliError::Write {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Design rows of a CSV mapped through the preprocessing stored with the samples.
fn design_rows(samples: &PosteriorSamples, path: &Path) -> Result<Vec<Vec<f64>>> {
    let table = RawTable::read(path)?;
    let cols: Vec<Vec<f64>> = match &samples.meta.preprocessor {
        Some(pre) => pre.transform_table(&table)?,
        None => {
            // columns were used as given; they must already lie in [0, 1]
            samples
                .meta
                .columns
                .iter()
                .map(|c| {
                    let j = table
                        .column_index(&c.name)
                        .ok_or_else(|| invalid(format!("missing column '{}'", c.name)))?;
                    table
                        .records
                        .iter()
                        .enumerate()
                        .map(|(i, r)| match r[j].parse::<f64>() {
                            Ok(v) if (0.0..=1.0).contains(&v) => Ok(v),
                            _ => Err(invalid(format!("row {}, column '{}': expected a value in [0, 1]", i + 1, c.name))),
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    if cols.len() != samples.meta.p {
        return Err(invalid(format!("data has {} design columns, samples expect {}", cols.len(), samples.meta.p)));
    }
    let n = table.records.len();
    if n == 0 {
        return Err(invalid(format!("{}: no rows", path.display())));
    }
    Ok((0..n).map(|i| cols.iter().map(|c| c[i]).collect()).collect())
}

pub fn cmd_predict(args: &PredictArgs) -> Result<Outcome> {
    let started = Instant::now();
    if !(args.level > 0.0 && args.level < 1.0) {
        return Err(invalid(format!("--level {} outside (0, 1)", args.level)));
    }
    let samples = PosteriorSamples::load(&args.samples)?;
    let post = Posterior::new(&samples)?;
    let rows = design_rows(&samples, &args.data)?;
    let mut w = csv_writer(&args.out)?;
    let fail = csv_fail(&args.out);
    let family = post.family();
    match family {
        Family::Gaussian => w.write_record(["row", "mean", "lower", "upper"]),
        Family::Bernoulli => w.write_record(["row", "prob"]),
        Family::Poisson => w.write_record(["row", "mean"]),
    }
    .map_err(&fail)?;
    let tail = (1.0 - args.level) / 2.0;
    for (i, x) in rows.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string(), post.predictive_point(x)?.to_string()];
        if family == Family::Gaussian {
            rec.push(post.predictive_quantile(x, tail)?.to_string());
            rec.push(post.predictive_quantile(x, 1.0 - tail)?.to_string());
        }
        w.write_record(&rec).map_err(&fail)?;
    }
    w.flush().map_err(|e| CliError::Write {
        path: args.out.clone(),
        source: e,
    })?;
    let manifest = record(Record {
        command: Command::Predict(PredictArgs {
            samples: absolute(&args.samples),
            data: absolute(&args.data),
            out: absolute(&args.out),
            ..args.clone()
        }),
        config: None,
        data: None,
        outputs: vec![&args.out],
        manifest: sidecar_manifest(&args.out),
        started,
    })?;
    Ok(Outcome {
        manifest: Some(manifest),
        summary: format!("{} predictions from {} draws", rows.len(), post.len()),
    })
}

pub fn cmd_importance(args: &ImportanceArgs) -> Result<Outcome> {
    let started = Instant::now();
    let samples = PosteriorSamples::load(&args.samples)?;
    let post = Posterior::new(&samples)?;
    let rows = design_rows(&samples, &args.data)?;
    let mode = match args.mode {
        ModeArg::PosteriorMean => ImportanceMode::PosteriorMean,
        ModeArg::PerSampleMean => ImportanceMode::PerSampleMean,
    };
    let mut scores = importance_scores(&post, &rows, mode, args.normalize)?;
    if let Some(top) = args.top {
        scores.truncate(top);
    }
    let mut w = csv_writer(&args.out)?;
    let fail = csv_fail(&args.out);
    w.write_record(["set", "names", "order", "score"]).map_err(&fail)?;
    let names = &samples.meta.columns;
    for (s, score) in &scores {
        let label = s.iter().map(|&j| names[j].name.as_str()).collect::<Vec<_>>().join(":");
        w.write_record([format_set(s), label, s.len().to_string(), score.to_string()])
            .map_err(&fail)?;
    }
    w.flush().map_err(|e| CliError::Write {
        path: args.out.clone(),
        source: e,
    })?;
    let manifest = record(Record {
        command: Command::Importance(ImportanceArgs {
            samples: absolute(&args.samples),
            data: absolute(&args.data),
            out: absolute(&args.out),
            ..args.clone()
        }),
        config: None,
        data: None,
        outputs: vec![&args.out],
        manifest: sidecar_manifest(&args.out),
        started,
    })?;
    Ok(Outcome {
        manifest: Some(manifest),
        summary: format!("{} variable sets scored on {} rows", scores.len(), rows.len()),
    })
}

/// Evaluation rows for a component: a 101-point line for one variable, a
/// 21 x 21 grid for two, the given data rows otherwise. Variables outside
/// the set are held at 0.5, which does not affect the component.
fn component_rows(s: &[usize], p: usize, data: Option<Vec<Vec<f64>>>) -> Result<Vec<Vec<f64>>> {
    let at = |vals: &[f64]| {
        let mut x = vec![0.5; p];
        for (&j, &v) in s.iter().zip(vals) {
            x[j] = v;
        }
        x
    };
    match s.len() {
        1 => Ok((0..=100).map(|i| at(&[i as f64 / 100.0])).collect()),
        2 => Ok((0..=20)
            .flat_map(|a| (0..=20).map(move |b| (a, b)))
            .map(|(a, b)| at(&[a as f64 / 20.0, b as f64 / 20.0]))
            .collect()),
        _ => data.ok_or_else(|| invalid("sets of three or more variables need --data")),
    }
}

pub fn cmd_components(args: &ComponentsArgs) -> Result<Outcome> {
    let started = Instant::now();
    let samples = PosteriorSamples::load(&args.samples)?;
    let post = Posterior::new(&samples)?;
    let p = samples.meta.p;
    let s = parse_set(&args.set, p)?;
    let data = match &args.data {
        Some(path) if s.len() > 2 => Some(design_rows(&samples, path)?),
        _ => None,
    };
    let rows = component_rows(&s, p, data)?;
    let band = component_estimate(&post, &s, &rows)?;

    let mut w = csv_writer(&args.out)?;
    let fail = csv_fail(&args.out);
    let mut header: Vec<String> = s.iter().map(|j| format!("x{}", j + 1)).collect();
    header.extend(["mean", "lower", "upper"].map(String::from));
    w.write_record(&header).map_err(&fail)?;
    for (i, x) in rows.iter().enumerate() {
        let mut rec: Vec<String> = s.iter().map(|&j| x[j].to_string()).collect();
        rec.extend([band.mean[i], band.lo[i], band.hi[i]].map(|v| v.to_string()));
        w.write_record(&rec).map_err(&fail)?;
    }
    w.flush().map_err(|e| CliError::Write {
        path: args.out.clone(),
        source: e,
    })?;
    let manifest = record(Record {
        command: Command::Components(ComponentsArgs {
            samples: absolute(&args.samples),
            out: absolute(&args.out),
            data: args.data.as_deref().map(absolute),
            ..args.clone()
        }),
        config: None,
        data: None,
        outputs: vec![&args.out],
        manifest: sidecar_manifest(&args.out),
        started,
    })?;
    Ok(Outcome {
        manifest: Some(manifest),
        summary: format!("component {{{}}} on {} points", format_set(&s), rows.len()),
    })
}

pub fn cmd_bench(args: &BenchArgs) -> Result<Outcome> {
    let started = Instant::now();
    let text = std::fs::read_to_string(&args.spec)
        .map_err(|e| invalid(format!("cannot read {}: {e}", args.spec.display())))?;
    let spec: BenchSpec = serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", args.spec.display())))?;
    spec.synthetic.validate()?;
    spec.prior.validate()?;
    spec.chain.validate()?;

    create_dir(&args.out)?;
    let data_path = args.out.join(DATA_FILE);
    let data = generate(&spec.synthetic)?;
    export_csv(&spec.synthetic, &data, &data_path)?;
    let (report, samples) = run_benchmark(&spec)?;
    let samples_path = args.out.join(SAMPLES_FILE);
    samples.save(&samples_path)?;
    let report_path = args.out.join(REPORT_FILE);
    write_file(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serializes").as_bytes(),
    )?;
    let truth_path = data_path.with_extension("truth.json");
    let manifest = record(Record {
        command: Command::Bench(BenchArgs {
            spec: absolute(&args.spec),
            out: absolute(&args.out),
        }),
        config: Some(serde_json::to_value(&spec).expect("spec serializes")),
        data: Some(data.dataset.fingerprint()),
        outputs: vec![&data_path, &truth_path, &samples_path, &report_path],
        manifest: args.out.join(MANIFEST_FILE),
        started,
    })?;
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.3}"));
    Ok(Outcome {
        manifest: Some(manifest),
        summary: format!(
            "{:?}: rmse {:.4} (noise sd {:.4}), auroc order 1 {} / 2 {} / 3 {}",
            report.function,
            report.rmse,
            report.noise_sd,
            fmt(report.auroc.get(&1).copied().flatten()),
            fmt(report.auroc.get(&2).copied().flatten()),
            fmt(report.auroc.get(&3).copied().flatten()),
        ),
    })
}

/// Points a recorded command at a new output location.
fn redirect(cmd: &Command, out: &Path) -> Result<Command> {
    let mut cmd = cmd.clone();
    match &mut cmd {
        Command::Fit(a) => a.out = out.to_path_buf(),
        Command::Predict(a) => a.out = out.to_path_buf(),
        Command::Importance(a) => a.out = out.to_path_buf(),
        Command::Components(a) => a.out = out.to_path_buf(),
        Command::Bench(a) => a.out = out.to_path_buf(),
        Command::Rerun(_) => return Err(invalid("a manifest cannot record a rerun")),
    }
    Ok(cmd)
}

pub fn cmd_rerun(args: &RerunArgs) -> Result<Outcome> {
    let recorded = Manifest::load(&args.manifest)?;
    let cmd = match &args.out {
        Some(out) => redirect(&recorded.command, out)?,
        None => redirect(&recorded.command, &output_of(&recorded.command))?,
    };
    let outcome = execute(&cmd)?;
    let fresh_path = outcome
        .manifest
        .as_ref()
        .ok_or_else(|| invalid("rerun produced no manifest"))?;
    let fresh = Manifest::load(fresh_path)?;
    for (file, hash) in &recorded.outputs {
        if fresh.outputs.get(file) != Some(hash) {
            return Err(CliError::Mismatch {
                manifest: args.manifest.clone(),
                file: file.clone(),
            });
        }
    }
    Ok(Outcome {
        manifest: outcome.manifest,
        summary: format!("{} output file(s) reproduced exactly; {}", recorded.outputs.len(), outcome.summary),
    })
}

fn output_of(cmd: &Command) -> PathBuf {
    match cmd {
        Command::Fit(a) => a.out.clone(),
        Command::Predict(a) => a.out.clone(),
        Command::Importance(a) => a.out.clone(),
        Command::Components(a) => a.out.clone(),
        Command::Bench(a) => a.out.clone(),
        Command::Rerun(a) => a.manifest.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn component_grids() {
        let line = component_rows(&[1], 4, None).unwrap();
        assert_eq!(line.len(), 101);
        assert_eq!(line[0], vec![0.5, 0.0, 0.5, 0.5]);
        assert_eq!(line[100][1], 1.0);
        let grid = component_rows(&[0, 3], 4, None).unwrap();
        assert_eq!(grid.len(), 441);
        assert_eq!(grid[22], vec![0.05, 0.5, 0.5, 0.05]);
        assert!(component_rows(&[0, 1, 2], 4, None).is_err());
    }

    #[test]
    fn manifest_beside_output_file() {
        assert_eq!(sidecar_manifest(Path::new("/a/pred.csv")), PathBuf::from("/a/pred.csv.manifest.json"));
    }

    #[test]
    fn command_round_trips_through_json() {
        let cmd = Command::Importance(ImportanceArgs {
            samples: "/s.jsonl".into(),
            data: "/d.csv".into(),
            out: "/o.csv".into(),
            mode: ModeArg::PerSampleMean,
            normalize: true,
            top: Some(5),
        });
        let json = serde_json::to_string(&cmd).unwrap();
        assert!(json.contains("\"name\":\"importance\""));
        assert_eq!(serde_json::from_str::<Command>(&json).unwrap(), cmd);
    }
}
