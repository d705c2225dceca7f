//! Command-line interface: `generate`, `train`, `evaluate`, `predict` and
//! `explain`.
//!
//! Every option may also come from a flat `key = value` file given with
//! `--config`; keys are the long option names (`_` and `-` are equivalent)
//! and flags on the command line win over the file. Exit status is 0 on
//! success, 1 on a runtime error and 2 on a usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::booster::{LossKind, TargetTransform};
use crate::data::{
    filter_outliers, load_flows, load_incidents, load_incidents_unlabeled, load_sections, FlowStore, IncidentRecord,
    RoadSection, SchemaPolicy,
};
use crate::flow::{build_features, dv_sensitivity, write_dv_csv, FeatureSet, FeatureSetSpec};
use crate::learner::{Family, LearnerSpec, ParamSet, Task};
use crate::metrics::Metric;
use crate::pipeline::{
    fit_bilevel, label, load_bundle, predict_bilevel_many, save_bundle, write_predictions, BiLevelConfig, Stage1,
    StageTuning,
};
use crate::shapley::{
    explain_prediction, sample_background, shap_summary, EstimatorConfig, DEFAULT_BACKGROUND_SEED,
};
use crate::synth::{generate, write_dataset, GeneratorConfig};
use crate::tuning::{default_objective, nested_evaluate, FitCounter, NestedConfig, SearchSpace};

#[derive(Debug, Parser)]
#[command(name = "incident", about = "Traffic incident duration prediction", version)]
pub struct Cli {
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Flat `key = value` file with defaults for the subcommand's options.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Fit the two-stage model and write a model bundle.
    Train(TrainArgs),
    /// Nested cross-validation of both stages and the feature-set comparison.
    Evaluate(EvaluateArgs),
    /// Predict with a model bundle.
    Predict(PredictArgs),
    /// Shapley explanations of a bundle's models.
    Explain(ExplainArgs),
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct GenerateArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 574)]
    pub n_incidents: usize,
    #[arg(long, default_value_t = 235)]
    pub n_sections: usize,
    #[arg(long, default_value_t = 27)]
    pub outlier_count: usize,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    /// Identical flow counts everywhere.
    #[arg(long)]
    pub flat_flows: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Directory holding incidents.csv, sections.csv and flows.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Incidents shorter than this many minutes are dropped.
    #[arg(long, default_value_t = 5.0)]
    pub min_duration: f64,
}

#[derive(Debug, Args)]
pub struct TuningArgs {
    #[arg(long, default_value_t = 10)]
    pub outer_k: usize,
    #[arg(long, default_value_t = 5)]
    pub inner_k: usize,
    #[arg(long, default_value_t = 20)]
    pub n_iter: usize,
    /// Skip the search and use the family defaults.
    #[arg(long)]
    pub fixed: bool,
    /// Search space file for the classifier (default: built-in space).
    #[arg(long)]
    pub classifier_space: Option<PathBuf>,
    /// Search space file for the regressor (default: built-in space).
    #[arg(long)]
    pub regressor_space: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long, default_value_t = 45.0)]
    pub threshold: f64,
    #[arg(long, default_value = "booster")]
    pub classifier_family: String,
    /// Regressor family.
    #[arg(long, default_value = "booster")]
    pub family: String,
    /// Regressor training loss (boosting families only).
    #[arg(long)]
    pub loss: Option<String>,
    /// Train the regressor on log-durations.
    #[arg(long)]
    pub log_space: bool,
    #[arg(long, default_value_t = 5)]
    pub k_nearest: usize,
    /// Vicinity radius in meters (FSD only).
    #[arg(long)]
    pub dv: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Bundle directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Regressor feature set.
    #[arg(long, default_value = "FSC")]
    pub feature_set: String,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Report directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated regressor feature sets.
    #[arg(long, default_value = "BFS,FSA,FSB,FSC,FSD")]
    pub feature_sets: String,
    /// Comma-separated regressor losses (boosting families only).
    #[arg(long)]
    pub losses: Option<String>,
    /// `classifier`, `regressor` or `both`.
    #[arg(long, default_value = "both")]
    pub stage: String,
    /// Comma-separated radii for an FSD sensitivity table.
    #[arg(long)]
    pub dv_sweep: Option<String>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub tuning: TuningArgs,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct PredictArgs {
    /// Bundle directory written by `train`.
    #[arg(long)]
    pub model: PathBuf,
    /// Directory holding sections.csv and flows.csv.
    #[arg(long)]
    pub data: PathBuf,
    /// Incidents to predict (default: <data>/incidents.csv). Durations may be blank.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Predictions CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `regressor` or `classifier`.
    #[arg(long, default_value = "regressor")]
    pub stage: String,
    /// `auto`, `exact` or `mc`.
    #[arg(long, default_value = "auto")]
    pub estimator: String,
    #[arg(long, default_value_t = 100)]
    pub permutations: usize,
    #[arg(long, default_value_t = 100)]
    pub background: usize,
    /// Explain at most this many incidents in the summary.
    #[arg(long)]
    pub max_rows: Option<usize>,
    /// Also write the breakdown of this incident.
    #[arg(long)]
    pub instance: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Run(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Run(m) => f.write_str(m),
        }
    }
}

fn run_err<E: std::fmt::Display>(context: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Run(format!("{context}: {e}"))
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Parses the config file into `key = value` pairs.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected `key = value`", i + 1))?;
        out.push((k.trim().replace('_', "-"), v.trim().to_string()));
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<PathBuf> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(p));
        }
    }
    None
}

/// Inserts the config file's options right after the subcommand name so
/// that later command-line occurrences override them.
fn expand_config(args: Vec<OsString>) -> Result<Vec<OsString>, CliError> {
    let Some(path) = config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).map_err(|e| usage(format!("cannot read config {}: {e}", path.display())))?;
    let pairs = parse_config(&text).map_err(usage)?;
    let command = Cli::command();
    let Some(pos) = args
        .iter()
        .position(|a| command.find_subcommand(a.to_string_lossy().as_ref()).is_some())
    else {
        return Ok(args);
    };
    let sub = command
        .find_subcommand(args[pos].to_string_lossy().as_ref())
        .expect("found above");
    let known: Vec<String> = sub.get_arguments().filter_map(|a| a.get_long().map(str::to_string)).collect();
    let mut injected = Vec::new();
    for (k, v) in pairs {
        let k = k.replace('_', "-");
        if k == "config" || k == "threads" {
            if k == "threads" {
                injected.push(OsString::from("--threads"));
                injected.push(OsString::from(v));
            }
            continue;
        }
        if !known.contains(&k) {
            eprintln!("warning: config key `{k}` is not an option of `{}`; ignored", sub.get_name());
            continue;
        }
        match v.as_str() {
            "true" => injected.push(OsString::from(format!("--{k}"))),
            "false" => {}
            _ => {
                injected.push(OsString::from(format!("--{k}")));
                injected.push(OsString::from(v));
            }
        }
    }
    let mut out = args[..=pos].to_vec();
    out.extend(injected);
    out.extend(args[pos + 1..].iter().cloned());
    Ok(out)
}

/// Runs the CLI on `args` (including the program name) and returns the exit status.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let result = expand_config(args).and_then(|args| match Cli::try_parse_from(args) {
        Ok(cli) => execute(cli),
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                print!("{e}");
                Ok(())
            }
            _ => Err(usage(e.render().to_string())),
        },
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(m) => eprint!("{}{}", m, if m.ends_with('\n') { "" } else { "\n" }),
                CliError::Run(m) => eprintln!("error: {m}"),
            }
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(run_err("thread pool"))?;
    pool.install(|| match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Explain(a) => cmd_explain(&a),
    })
}

pub fn cmd_generate(a: &GenerateArgs) -> Result<(), CliError> {
    let mut cfg = GeneratorConfig {
        n_incidents: a.n_incidents,
        n_sections: a.n_sections,
        outlier_count: a.outlier_count,
        flat_flows: a.flat_flows,
        ..GeneratorConfig::default()
    }
    .with_seed(a.seed);
    if let Some(s) = a.noise_sigma {
        cfg.noise_sigma = s;
    }
    let d = generate(&cfg).map_err(run_err("generate"))?;
    write_dataset(&d, &a.out).map_err(run_err("generate"))?;
    let short = d.incidents.iter().filter(|r| label(r.duration_min, 45.0) == 1).count();
    let below = d.incidents.iter().filter(|r| r.duration_min < cfg.min_duration).count();
    let mean = d.incidents.iter().map(|r| r.duration_min).sum::<f64>() / d.incidents.len() as f64;
    let max = d.incidents.iter().map(|r| r.duration_min).fold(0.0, f64::max);
    println!("incidents: {} (short {short}, long {}, below {} min: {below})", d.incidents.len(), d.incidents.len() - short, cfg.min_duration);
    println!("duration: mean {mean:.2} min, max {max:.2} min");
    println!(
        "sections: {} ({} with detectors)",
        d.sections.len(),
        d.sections.iter().filter(|s| s.has_detectors).count()
    );
    println!("flow observations: {}", d.flows.len());
    println!("written to {}", a.out.display());
    Ok(())
}

struct LoadedData {
    incidents: Vec<IncidentRecord>,
    sections: Vec<RoadSection>,
    flows: FlowStore,
}

fn load_sections_flows(dir: &Path) -> Result<(Vec<RoadSection>, FlowStore), CliError> {
    let sections = load_sections(dir.join("sections.csv")).map_err(run_err("sections.csv"))?;
    let obs = load_flows(dir.join("flows.csv")).map_err(run_err("flows.csv"))?;
    let flows = FlowStore::from_observations(&obs).map_err(run_err("flows.csv"))?;
    Ok((sections, flows))
}

fn load_data(a: &DataArgs) -> Result<LoadedData, CliError> {
    let all = load_incidents(a.data.join("incidents.csv")).map_err(run_err("incidents.csv"))?;
    let incidents = filter_outliers(&all, a.min_duration);
    let (sections, flows) = load_sections_flows(&a.data)?;
    println!(
        "loaded {} incidents ({} dropped below {} min), {} sections, {} flow observations",
        all.len(),
        all.len() - incidents.len(),
        a.min_duration,
        sections.len(),
        flows.len()
    );
    Ok(LoadedData {
        incidents,
        sections,
        flows,
    })
}

fn parse_with<T: std::str::FromStr<Err = String>>(s: &str) -> Result<T, CliError> {
    s.trim().parse().map_err(usage)
}

fn feature_spec(name: &str, m: &ModelArgs) -> Result<FeatureSetSpec, CliError> {
    let variant: FeatureSet = parse_with(name)?;
    let mut spec = FeatureSetSpec::new(variant).with_k(m.k_nearest);
    if let Some(dv) = m.dv {
        spec = spec.with_dv(dv);
    }
    spec.validate().map_err(|e| usage(e.to_string()))?;
    Ok(spec)
}

fn regressor_spec(m: &ModelArgs, loss: Option<&str>) -> Result<LearnerSpec, CliError> {
    let family: Family = parse_with(&m.family)?;
    let mut spec = LearnerSpec::new(family, Task::Regress);
    if matches!(family, Family::Booster | Family::Gbdt) {
        let loss = match loss {
            Some(l) => parse_with::<LossKind>(l)?,
            None if family == Family::Booster => LossKind::Mape,
            None => LossKind::SquaredError,
        };
        if loss == LossKind::Logistic {
            return Err(usage("the regressor cannot use the logistic loss"));
        }
        spec = spec.with_loss(loss);
    } else if loss.is_some() {
        return Err(usage(format!("--loss applies to boosting families only, not {family}")));
    }
    if m.log_space {
        spec = spec.with_transform(TargetTransform::Log);
    }
    Ok(spec)
}

fn classifier_spec(m: &ModelArgs) -> Result<LearnerSpec, CliError> {
    let family: Family = parse_with(&m.classifier_family)?;
    Ok(LearnerSpec::new(family, Task::Classify))
}

fn read_space(path: &Option<PathBuf>, family: Family) -> Result<SearchSpace, CliError> {
    match path {
        None => Ok(SearchSpace::default_for(family)),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("cannot read {}: {e}", p.display())))?;
            SearchSpace::parse(&text).map_err(|e| usage(e.to_string()))
        }
    }
}

fn stage_tuning(t: &TuningArgs, space_file: &Option<PathBuf>, spec: &LearnerSpec) -> Result<Option<StageTuning>, CliError> {
    if t.fixed {
        return Ok(None);
    }
    Ok(Some(StageTuning {
        outer_k: t.outer_k,
        inner_k: t.inner_k,
        n_iter: t.n_iter,
        space: read_space(space_file, spec.family)?,
    }))
}

fn check_dv(feature_sets: &[FeatureSet], dv: Option<f64>) -> Result<(), CliError> {
    if dv.is_some() && !feature_sets.contains(&FeatureSet::Fsd) {
        return Err(usage("--dv only applies to the FSD feature set"));
    }
    Ok(())
}

fn create_file(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

fn params_string(p: &ParamSet) -> String {
    p.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

pub fn cmd_train(a: &TrainArgs) -> Result<(), CliError> {
    let fs = feature_spec(&a.feature_set, &a.model)?;
    check_dv(&[fs.variant], a.model.dv)?;
    let classifier = classifier_spec(&a.model)?;
    let regressor = regressor_spec(&a.model, a.model.loss.as_deref())?;
    let config = BiLevelConfig {
        threshold: a.model.threshold,
        classifier_tuning: stage_tuning(&a.tuning, &a.tuning.classifier_space, &classifier)?,
        regressor_tuning: stage_tuning(&a.tuning, &a.tuning.regressor_space, &regressor)?,
        classifier,
        regressor,
        regressor_features: fs,
        seed: a.model.seed,
    };
    let data = load_data(&a.data)?;
    let (mut model, diag) =
        fit_bilevel::<f64>(&data.incidents, &data.sections, &data.flows, &config).map_err(run_err("train"))?;
    if model.is_degenerate() {
        println!("classifier: every training incident is short; Step 1 always answers short");
    }
    if config.classifier_tuning.is_some() {
        println!("classifier inner fits: {}", diag.classifier_inner_fits);
    }
    if config.regressor_tuning.is_some() {
        println!("regressor inner fits: {}", diag.regressor_inner_fits);
    }

    let mut settings = BTreeMap::new();
    let mut put = |k: &str, v: String| {
        settings.insert(k.to_string(), v);
    };
    put("feature_set", fs.variant.name().to_string());
    put("k_nearest", fs.k_nearest.to_string());
    put("dv", a.model.dv.map(|v| v.to_string()).unwrap_or_default());
    put("threshold", a.model.threshold.to_string());
    put("classifier_family", a.model.classifier_family.clone());
    put("family", a.model.family.clone());
    put("loss", config.regressor.loss_kind().name().to_string());
    put("log_space", a.model.log_space.to_string());
    put("outer_k", a.tuning.outer_k.to_string());
    put("inner_k", a.tuning.inner_k.to_string());
    put("n_iter", a.tuning.n_iter.to_string());
    put("fixed", a.tuning.fixed.to_string());
    put("seed", a.model.seed.to_string());
    put("min_duration", a.data.min_duration.to_string());
    if let Stage1::Model(m) = &model.classifier {
        put("classifier_params", params_string(&m.params));
    }
    put("regressor_params", params_string(&model.regressor.params));
    model.settings = settings;
    save_bundle(&model, &a.out).map_err(run_err("writing bundle"))?;

    for (stage, search, nested) in [
        ("classifier", &diag.classifier_search, &diag.classifier_nested),
        ("regressor", &diag.regressor_search, &diag.regressor_nested),
    ] {
        if let Some(s) = search {
            let mut w = csv::Writer::from_writer(create_file(&a.out.join(format!("trials_{stage}.csv")))?);
            s.write_csv(&mut w, None, true).map_err(run_err("trial log"))?;
            w.flush().map_err(run_err("trial log"))?;
        }
        if let Some(n) = nested {
            n.as_cv_report()
                .write_csv(create_file(&a.out.join(format!("nested_{stage}.csv")))?)
                .map_err(run_err("nested report"))?;
            n.write_trials_csv(create_file(&a.out.join(format!("nested_trials_{stage}.csv")))?)
                .map_err(run_err("nested trial log"))?;
        }
    }
    println!("bundle written to {}", a.out.display());
    Ok(())
}

fn nested_config(t: &TuningArgs, space_file: &Option<PathBuf>, spec: &LearnerSpec, seed: u64) -> Result<NestedConfig, CliError> {
    let (n_iter, space) = if t.fixed {
        (1, SearchSpace::point(&ParamSet::new()))
    } else {
        (t.n_iter, read_space(space_file, spec.family)?)
    };
    let metrics = match spec.task {
        Task::Classify => Metric::CLASSIFICATION.to_vec(),
        Task::Regress => Metric::REGRESSION.to_vec(),
    };
    Ok(NestedConfig {
        outer_k: t.outer_k,
        inner_k: t.inner_k,
        n_iter,
        space,
        metrics,
        objective: default_objective(spec.task),
        seed,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let (do_cls, do_reg) = match a.stage.as_str() {
        "classifier" => (true, false),
        "regressor" => (false, true),
        "both" => (true, true),
        s => return Err(usage(format!("unknown stage `{s}` (expected classifier, regressor or both)"))),
    };
    let sets: Vec<FeatureSetSpec> = a
        .feature_sets
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| feature_spec(s, &a.model))
        .collect::<Result<_, _>>()?;
    if sets.is_empty() {
        return Err(usage("--feature-sets is empty"));
    }
    check_dv(&sets.iter().map(|s| s.variant).collect::<Vec<_>>(), a.model.dv)?;
    let losses: Vec<Option<String>> = match &a.losses {
        None => vec![None],
        Some(l) => l.split(',').map(|s| Some(s.trim().to_string())).collect(),
    };
    let reg_specs: Vec<LearnerSpec> = losses
        .iter()
        .map(|l| regressor_spec(&a.model, l.as_deref()))
        .collect::<Result<_, _>>()?;
    let cls_spec = classifier_spec(&a.model)?;
    let dv_set: Option<Vec<f64>> = a
        .dv_sweep
        .as_ref()
        .map(|s| {
            s.split(',')
                .map(|v| v.trim().parse::<f64>().map_err(|_| usage(format!("bad radius `{v}` in --dv-sweep"))))
                .collect()
        })
        .transpose()?;
    let data = load_data(&a.data)?;
    fs::create_dir_all(&a.out).map_err(run_err("output directory"))?;

    if do_cls {
        let (m, _) = build_features::<f64>(
            &data.incidents,
            &data.sections,
            &data.flows,
            &FeatureSetSpec::new(FeatureSet::Bfs),
            SchemaPolicy::Learn,
        )
        .map_err(run_err("features"))?;
        let y: Vec<f64> = data.incidents.iter().map(|r| label(r.duration_min, a.model.threshold) as f64).collect();
        let cfg = nested_config(&a.tuning, &a.tuning.classifier_space, &cls_spec, a.model.seed)?;
        let counter = FitCounter::new();
        let report = nested_evaluate(&cls_spec, &m, &y, &cfg, Some(&counter)).map_err(run_err("classifier evaluation"))?;
        println!("classifier inner fits: {}", counter.get());
        report
            .as_cv_report()
            .write_csv(create_file(&a.out.join("classifier_folds.csv"))?)
            .map_err(run_err("classifier report"))?;
        report
            .write_trials_csv(create_file(&a.out.join("classifier_trials.csv"))?)
            .map_err(run_err("classifier trials"))?;
        let f1 = report.test_summary(Metric::F1).and_then(|s| s.mean);
        println!("classifier test F1: {}", fmt_opt(f1));
    }

    let short: Vec<IncidentRecord> = data
        .incidents
        .iter()
        .filter(|r| label(r.duration_min, a.model.threshold) == 1)
        .cloned()
        .collect();
    if do_reg {
        if short.is_empty() {
            return Err(CliError::Run("no short incidents to evaluate the regressor on".into()));
        }
        let mut table = csv::Writer::from_writer(create_file(&a.out.join("feature_sets.csv"))?);
        table
            .write_record([
                "feature_set", "loss", "n_features", "n_rows", "mape_mean", "mape_std", "r2_mean", "r2_std",
            ])
            .map_err(run_err("comparison table"))?;
        for fs in &sets {
            let (m, _) = build_features::<f64>(&short, &data.sections, &data.flows, fs, SchemaPolicy::Learn)
                .map_err(run_err("features"))?;
            let y = m.target().to_vec();
            for spec in &reg_specs {
                let cfg = nested_config(&a.tuning, &a.tuning.regressor_space, spec, a.model.seed)?;
                let counter = FitCounter::new();
                let report = nested_evaluate(spec, &m, &y, &cfg, Some(&counter))
                    .map_err(run_err(&format!("regressor evaluation on {}", fs.variant)))?;
                let loss = spec.loss_kind().name();
                let tag = if reg_specs.len() > 1 {
                    format!("{}_{loss}", fs.variant)
                } else {
                    fs.variant.to_string()
                };
                println!("regressor {tag} inner fits: {}", counter.get());
                report
                    .as_cv_report()
                    .write_csv(create_file(&a.out.join(format!("regressor_folds_{tag}.csv")))?)
                    .map_err(run_err("regressor report"))?;
                report
                    .write_trials_csv(create_file(&a.out.join(format!("regressor_trials_{tag}.csv")))?)
                    .map_err(run_err("regressor trials"))?;
                let mape = report.test_summary(Metric::Mape).expect("requested");
                let r2 = report.test_summary(Metric::R2).expect("requested");
                table
                    .write_record([
                        fs.variant.to_string(),
                        loss.to_string(),
                        m.n_cols().to_string(),
                        m.n_rows().to_string(),
                        fmt_opt(mape.mean),
                        fmt_opt(mape.std),
                        fmt_opt(r2.mean),
                        fmt_opt(r2.std),
                    ])
                    .map_err(run_err("comparison table"))?;
                println!("regressor {tag}: test MAPE {}", fmt_opt(mape.mean));
            }
        }
        table.flush().map_err(run_err("comparison table"))?;
    }

    if let Some(dvs) = dv_set {
        let spec = &reg_specs[0];
        let cfg = nested_config(&a.tuning, &a.tuning.regressor_space, spec, a.model.seed)?;
        let rows = dv_sensitivity(&short, &data.sections, &data.flows, &dvs, spec, &cfg).map_err(run_err("dv sweep"))?;
        write_dv_csv(&rows, create_file(&a.out.join("dv_sensitivity.csv"))?).map_err(run_err("dv table"))?;
    }
    println!("reports written to {}", a.out.display());
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = load_bundle::<f64>(&a.model).map_err(run_err("loading bundle"))?;
    let input = a.input.clone().unwrap_or_else(|| a.data.join("incidents.csv"));
    let incidents = load_incidents_unlabeled(&input).map_err(run_err(&input.display().to_string()))?;
    let (sections, flows) = load_sections_flows(&a.data)?;
    let outcomes = predict_bilevel_many(&model, &incidents, &sections, &flows).map_err(run_err("predict"))?;
    write_predictions(&outcomes, create_file(&a.out)?).map_err(run_err("writing predictions"))?;
    let short = outcomes.iter().filter(|o| o.duration.is_some()).count();
    println!(
        "{} predictions ({short} short, {} long) written to {}",
        outcomes.len(),
        outcomes.len() - short,
        a.out.display()
    );
    Ok(())
}

pub fn cmd_explain(a: &ExplainArgs) -> Result<(), CliError> {
    let config = match a.estimator.as_str() {
        "auto" => EstimatorConfig::Auto {
            permutations: a.permutations,
        },
        "exact" => EstimatorConfig::Exact,
        "mc" => EstimatorConfig::MonteCarlo {
            permutations: a.permutations,
        },
        s => return Err(usage(format!("unknown estimator `{s}` (expected auto, exact or mc)"))),
    };
    let bundle = load_bundle::<f64>(&a.model).map_err(run_err("loading bundle"))?;
    let data = load_data(&a.data)?;
    let (model, fs, population): (_, _, Vec<IncidentRecord>) = match a.stage.as_str() {
        "regressor" => (
            &bundle.regressor,
            bundle.regressor_features,
            data.incidents
                .iter()
                .filter(|r| r.duration_min.is_nan() || label(r.duration_min, bundle.threshold) == 1)
                .cloned()
                .collect(),
        ),
        "classifier" => match &bundle.classifier {
            Stage1::Model(m) => (m, bundle.classifier_features(), data.incidents.clone()),
            Stage1::Constant { .. } => return Err(CliError::Run("the bundle's classifier is constant".into())),
        },
        s => return Err(usage(format!("unknown stage `{s}` (expected regressor or classifier)"))),
    };
    if population.is_empty() {
        return Err(CliError::Run("no incidents to explain".into()));
    }
    let policy = SchemaPolicy::Frozen(&bundle.dictionary);
    let (m, _) =
        build_features::<f64>(&population, &data.sections, &data.flows, &fs, policy).map_err(run_err("features"))?;
    let background = sample_background(&m, a.background, DEFAULT_BACKGROUND_SEED);
    let rows = match a.max_rows {
        Some(n) if n < m.n_rows() => m.select_rows(&(0..n).collect::<Vec<_>>()),
        _ => m.clone(),
    };
    fs::create_dir_all(&a.out).map_err(run_err("output directory"))?;
    let summary = shap_summary(model, &rows, &background, config, a.seed).map_err(run_err("explain"))?;
    let path = a.out.join(format!("shap_summary_{}.csv", a.stage));
    summary.write_csv(create_file(&path)?).map_err(run_err("summary"))?;
    println!("top features: {}", summary.ranked_names().into_iter().take(5).collect::<Vec<_>>().join(", "));

    if let Some(id) = &a.instance {
        let all = load_incidents_unlabeled(a.data.data.join("incidents.csv")).map_err(run_err("incidents.csv"))?;
        let record = all
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| CliError::Run(format!("incident `{id}` not found")))?;
        let (one, _) = build_features::<f64>(std::slice::from_ref(record), &data.sections, &data.flows, &fs, policy)
            .map_err(run_err("features"))?;
        let names = one.column_names();
        let b = explain_prediction(model, &names, one.row(0), &background, config, a.seed).map_err(run_err("explain"))?;
        let path = a.out.join(format!("breakdown_{id}.csv"));
        b.write_csv(create_file(&path)?).map_err(run_err("breakdown"))?;
        println!("breakdown of {id}: base {} + contributions = {}", b.base_value, b.prediction);
    }
    println!("explanations written to {}", a.out.display());
    Ok(())
}
