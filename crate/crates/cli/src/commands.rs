use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Serialize;
use vigp::data::{
    apply_normalization, load_dataset, normalize_features, train_test_split, DataFormat, Dataset, LabelMap, SplitSpec,
};
use vigp::inducing::{kmeans_inducing, InducingSet, DEFAULT_MAX_ITER};
use vigp::kernels::KernelHyperparams;
use vigp::model_io::{load_model, save_model, SavedModel};
use vigp::optim::AdaDeltaConfig;
use vigp::trace_io::{write_json_trace, CsvTraceWriter, JsonTrace, TraceFormat};
use vigp::trainers::{evaluate_accuracy, fit_observed, FittedModel, Strategy, TrainConfig, TrainingTrace};

use crate::args::{BenchmarkArgs, DataArgs, EvaluateArgs, FitArgs, FormatArg, KernelArg, TraceFormatArg, TrainArgs};

fn data_format(arg: Option<FormatArg>, path: &Path) -> DataFormat {
    match arg {
        Some(FormatArg::Libsvm) => DataFormat::Libsvm,
        Some(FormatArg::Csv) => DataFormat::Csv,
        None => DataFormat::from_path(path),
    }
}

fn label_map(arg: &Option<String>) -> Result<Option<LabelMap>> {
    arg.as_deref().map(|s| s.parse::<LabelMap>().map_err(Into::into)).transpose()
}

fn load(path: &Path, format: DataFormat, map: Option<&LabelMap>) -> Result<Dataset> {
    load_dataset(path, format, map).with_context(|| format!("loading {}", path.display()))
}

/// Normalized train/test pair plus the inducing inputs shared by every run.
pub struct Prepared {
    pub name: String,
    pub train: Dataset,
    pub test: Dataset,
    pub z: InducingSet,
    pub split: String,
}

pub fn prepare(data: &DataArgs, fit: &FitArgs) -> Result<Prepared> {
    let format = data_format(data.format, &data.data);
    let map = label_map(&data.label_map)?;
    let full = load(&data.data, format, map.as_ref())?;
    let (train, test, split) = match &data.test_data {
        Some(tp) => {
            let test_format = data_format(data.format, tp);
            let mut test = load(tp, test_format, map.as_ref())?;
            let mut train = full;
            if format == DataFormat::Libsvm && test_format == DataFormat::Libsvm {
                let d = train.d().max(test.d());
                train = train.pad_features(d)?;
                test = test.pad_features(d)?;
            }
            if test.d() != train.d() {
                bail!("test data has {} features but training data has {}", test.d(), train.d());
            }
            (train, test, format!("test file {}", tp.display()))
        }
        None => {
            let spec = SplitSpec { test_fraction: data.test_fraction, seed: fit.seed };
            let (a, b) = train_test_split(&full, &spec)?;
            (a, b, format!("random split, test fraction {}, seed {}", data.test_fraction, fit.seed))
        }
    };
    let (train, mut others) = normalize_features(&train, &[&test])?;
    let test = others.remove(0);
    if fit.m == 0 || fit.m > train.n() {
        bail!("--m must be between 1 and the number of training points ({}), got {}", train.n(), fit.m);
    }
    let z = kmeans_inducing(&train.x, fit.m, fit.seed, DEFAULT_MAX_ITER)?;
    let name = match &data.name {
        Some(n) => n.clone(),
        None => data.data.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_string(),
    };
    Ok(Prepared { name, train, test, z, split })
}

fn initial_kernel(fit: &FitArgs, d: usize) -> KernelHyperparams {
    let l = fit.length_scale.unwrap_or((d.max(1) as f64).sqrt());
    let k = match fit.kernel {
        KernelArg::Se => KernelHyperparams::squared_exponential(fit.variance, l),
        KernelArg::Matern => KernelHyperparams::matern(fit.variance, l, fit.smoothness),
    };
    let jitter = fit.jitter.unwrap_or(1e-6 * fit.variance);
    k.with_noise(fit.noise).with_jitter(jitter)
}

pub fn train_config(fit: &FitArgs, strategy: Strategy, step_rate: f64, d: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(strategy, initial_kernel(fit, d));
    cfg.n_upd = fit.n_upd;
    cfg.n_fun = fit.n_fun;
    cfg.max_iters = fit.max_epochs;
    cfg.adadelta = AdaDeltaConfig::new(step_rate, fit.batch_size);
    cfg.quad_order = fit.quad_order;
    cfg.max_seconds = fit.max_seconds;
    cfg.seed = fit.seed;
    cfg
}

pub fn parse_strategies(s: &str) -> Result<Vec<Strategy>> {
    let out = s.split(',').filter(|t| !t.trim().is_empty()).map(str::parse).collect::<vigp::Result<Vec<Strategy>>>()?;
    if out.is_empty() {
        bail!("empty strategy list");
    }
    Ok(out)
}

pub fn parse_rates(s: &str) -> Result<Vec<f64>> {
    let rates = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(|t| t.trim().parse::<f64>().map_err(|_| anyhow!("bad step rate '{t}'")))
        .collect::<Result<Vec<f64>>>()?;
    if rates.is_empty() || rates.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        bail!("step rates must be positive numbers, got '{s}'");
    }
    Ok(rates)
}

fn trace_format(arg: TraceFormatArg) -> TraceFormat {
    match arg {
        TraceFormatArg::Csv => TraceFormat::Csv,
        TraceFormatArg::Json => TraceFormat::Json,
    }
}

/// `<dataset>_<strategy>[_lr<rate>]`
pub fn run_stem(dataset: &str, strategy: Strategy, rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{dataset}_{strategy}_lr{r}"),
        None => format!("{dataset}_{strategy}"),
    }
}

pub struct RunOutcome {
    pub stem: String,
    pub trace_path: PathBuf,
    pub result: Result<(FittedModel, TrainingTrace)>,
}

/// Fits one configuration, streaming the trace to disk as it grows.
pub fn run_one(prep: &Prepared, cfg: &TrainConfig, rate: Option<f64>, format: TraceFormat, out: &Path) -> RunOutcome {
    let stem = run_stem(&prep.name, cfg.strategy, rate);
    let trace_path = out.join(format!("{stem}.{}", format.extension()));
    let result = (|| {
        let mut records = Vec::new();
        let mut csv = match format {
            TraceFormat::Csv => Some(CsvTraceWriter::new(BufWriter::new(
                File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?,
            ))?),
            TraceFormat::Json => None,
        };
        let mut io_err = None;
        let fitted = fit_observed(&prep.train, &prep.z, cfg, Some(&prep.test), &mut |r| {
            if let Some(w) = csv.as_mut() {
                if let Err(e) = w.write(r) {
                    io_err.get_or_insert(e);
                }
            }
            records.push(r.clone());
        });
        if format == TraceFormat::Json {
            let doc = JsonTrace {
                dataset: prep.name.clone(),
                strategy: cfg.strategy,
                step_rate: rate,
                stop_reason: fitted.as_ref().ok().map(|(_, t)| t.stop_reason),
                error: fitted.as_ref().err().map(|e| e.to_string()),
                records,
            };
            let f = File::create(&trace_path).with_context(|| format!("creating {}", trace_path.display()))?;
            write_json_trace(&doc, BufWriter::new(f))?;
        }
        if let Some(e) = io_err {
            return Err(anyhow::Error::from(e).context(format!("writing {}", trace_path.display())));
        }
        fitted.with_context(|| format!("run {stem} failed; partial trace in {}", trace_path.display()))
    })();
    RunOutcome { stem, trace_path, result }
}

fn summary_line(stem: &str, trace: &TrainingTrace) -> String {
    let last = trace.records.last();
    format!(
        "{stem}: accuracy {} elbo {} iterations {} stop {:?} time {:.2}s",
        trace.final_accuracy().map(|a| format!("{a:.4}")).unwrap_or_else(|| "-".into()),
        last.map(|r| format!("{:.4}", r.elbo)).unwrap_or_else(|| "-".into()),
        last.map(|r| r.outer_iter).unwrap_or(0),
        trace.stop_reason,
        last.map(|r| r.wall_seconds).unwrap_or(0.0),
    )
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let strategy: Strategy = args.strategy.parse()?;
    let rates = parse_rates(&args.step_rates)?;
    if rates.len() != 1 {
        bail!("train takes a single step rate; use benchmark for a grid");
    }
    std::fs::create_dir_all(&args.fit.out).with_context(|| format!("creating {}", args.fit.out.display()))?;
    let prep = prepare(&args.data, &args.fit)?;
    let cfg = train_config(&args.fit, strategy, rates[0], prep.train.d());
    let format = trace_format(args.fit.trace_format);
    let outcome = run_one(&prep, &cfg, None, format, &args.fit.out);
    let (model, trace) = outcome.result?;
    let model_path = args.model.clone().unwrap_or_else(|| args.fit.out.join(format!("{}.model", outcome.stem)));
    let saved = SavedModel {
        model,
        normalization: prep.train.feature_means.clone().zip(prep.train.feature_stds.clone()),
    };
    save_model(&saved, &model_path).with_context(|| format!("writing {}", model_path.display()))?;
    println!("{}", summary_line(&outcome.stem, &trace));
    println!("model: {}", model_path.display());
    println!("trace: {}", outcome.trace_path.display());
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let saved = load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let format = data_format(args.format, &args.data);
    let map = label_map(&args.label_map)?;
    let mut data = load(&args.data, format, map.as_ref())?;
    let model_d = saved.model.z.z.ncols();
    if format == DataFormat::Libsvm && data.d() < model_d {
        data = data.pad_features(model_d)?;
    }
    if data.d() != model_d {
        bail!("{} has {} features but the model expects {}", args.data.display(), data.d(), model_d);
    }
    if let Some((means, stds)) = &saved.normalization {
        data = apply_normalization(&data, means, stds)?;
    }
    let acc = evaluate_accuracy(&saved.model, &data, args.quad_order)?;
    println!("accuracy {acc:.6} on {} points", data.n());
    Ok(())
}

#[derive(Serialize)]
struct BenchmarkSummary<'a> {
    dataset: &'a str,
    data: String,
    split: &'a str,
    n_train: usize,
    n_test: usize,
    d: usize,
    m: usize,
    seed: u64,
    runs: Vec<RunSummary>,
}

#[derive(Serialize)]
struct RunSummary {
    name: String,
    strategy: Strategy,
    step_rate: Option<f64>,
    trace: String,
    final_accuracy: Option<f64>,
    final_elbo: Option<f64>,
    stop_reason: Option<String>,
    error: Option<String>,
}

pub fn benchmark(args: &BenchmarkArgs) -> Result<bool> {
    let strategies = match &args.strategies {
        Some(s) => parse_strategies(s)?,
        None => Strategy::ALL.to_vec(),
    };
    let rates = parse_rates(&args.step_rates)?;
    std::fs::create_dir_all(&args.fit.out).with_context(|| format!("creating {}", args.fit.out.display()))?;
    let prep = prepare(&args.data, &args.fit)?;
    let format = trace_format(args.fit.trace_format);
    let mut jobs = Vec::new();
    for &s in &strategies {
        if s == Strategy::SviAdadelta {
            jobs.extend(rates.iter().map(|&r| (train_config(&args.fit, s, r, prep.train.d()), Some(r))));
        } else {
            jobs.push((train_config(&args.fit, s, rates[0], prep.train.d()), None));
        }
    }
    let outcomes: Vec<RunOutcome> = if args.parallel {
        std::thread::scope(|scope| {
            let handles: Vec<_> = jobs
                .iter()
                .map(|(cfg, rate)| scope.spawn(|| run_one(&prep, cfg, *rate, format, &args.fit.out)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("benchmark worker panicked")).collect()
        })
    } else {
        jobs.iter().map(|(cfg, rate)| run_one(&prep, cfg, *rate, format, &args.fit.out)).collect()
    };
    let mut ok = true;
    let mut runs = Vec::new();
    for (o, (cfg, rate)) in outcomes.iter().zip(&jobs) {
        let mut run = RunSummary {
            name: o.stem.clone(),
            strategy: cfg.strategy,
            step_rate: *rate,
            trace: o.trace_path.display().to_string(),
            final_accuracy: None,
            final_elbo: None,
            stop_reason: None,
            error: None,
        };
        match &o.result {
            Ok((_, trace)) => {
                println!("{}", summary_line(&o.stem, trace));
                run.final_accuracy = trace.final_accuracy();
                run.final_elbo = trace.records.last().map(|r| r.elbo);
                run.stop_reason = Some(format!("{:?}", trace.stop_reason));
            }
            Err(e) => {
                ok = false;
                eprintln!("error: {e:#}");
                run.error = Some(format!("{e:#}"));
            }
        }
        runs.push(run);
    }
    let summary = BenchmarkSummary {
        dataset: &prep.name,
        data: args.data.data.display().to_string(),
        split: &prep.split,
        n_train: prep.train.n(),
        n_test: prep.test.n(),
        d: prep.train.d(),
        m: prep.z.m(),
        seed: args.fit.seed,
        runs,
    };
    let path = args.fit.out.join(format!("{}_benchmark.summary.json", prep.name));
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(BufWriter::new(f), &summary)?;
    Ok(ok)
}
