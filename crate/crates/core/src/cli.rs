//! The `twinsys` command line: train a network, explain its predictions with
//! retrieved cases, draw feature-activation maps and compare weighting
//! schemes.
//!
//! Exit codes: 0 success, 1 runtime or domain error, 2 usage error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_csv, load_idx, normalize, Dataset, LabelColumn, LabelKind, NormMethod, NormStats, Task,
};
use crate::error::{Result, TwinError};
use crate::evaluation::{compare_schemes, render_table, reports_json};
use crate::explanation::{
    compute_fam_with, explain, mask_pgm, render, Format, Query, DEFAULT_QUANTILE,
};
use crate::network::{self, train, Hyper, LayerSpec, NetworkModel};
use crate::retrieval::build_index;
use crate::util::write_atomic;
use crate::weighting::{Scheme, SchemeSpec, Space, Weigher};

const THREADS_VAR: &str = "TWINSYS_THREADS";
const PREPROCESS_KEY: &str = "preprocess";

/// A CSV file, or an IDX image file and its label file joined by a comma.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DataSource {
    Csv(PathBuf),
    Idx { images: PathBuf, labels: PathBuf },
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.split_once(',') {
            Some((a, b)) if !a.is_empty() && !b.is_empty() && !b.contains(',') => {
                Ok(DataSource::Idx {
                    images: a.into(),
                    labels: b.into(),
                })
            }
            Some(_) => Err(format!("expected a CSV path or IMAGES,LABELS, got {s:?}")),
            None if s.is_empty() => Err("empty data path".into()),
            None => Ok(DataSource::Csv(s.into())),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "twinsys",
    version,
    about = "Explain neural network predictions with nearest training cases"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network from a JSON config and write the model file.
    Train(TrainArgs),
    /// Explain one prediction with its nearest training cases.
    Explain(ExplainArgs),
    /// Write the feature-activation map of one image query.
    Fam(FamArgs),
    /// Compare the twin fidelity of weighting schemes on a test set.
    Evaluate(EvaluateArgs),
    /// Summarise a model file or a dataset.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// CSV file, or IMAGES.idx,LABELS.idx
    #[arg(long)]
    pub data: DataSource,
    /// JSON training config (task, layers, hyper, optional label_column and normalize)
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the config seed; drives initialisation and shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OutFormat {
    Text,
    Json,
    Pgm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Text,
    Json,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Training data the case base is built from.
    #[arg(long)]
    pub train: DataSource,
    /// Index of the query case in --query-data (default: the training data).
    #[arg(
        long,
        required_unless_present = "query_file",
        conflicts_with = "query_file"
    )]
    pub query: Option<usize>,
    #[arg(long)]
    pub query_data: Option<DataSource>,
    /// Single-row CSV holding the query's feature columns.
    #[arg(long)]
    pub query_file: Option<PathBuf>,
    #[arg(long, value_parser = parse_scheme)]
    pub scheme: Scheme,
    /// `input` or `layer:NAME` (default: input for MLPs, the penultimate layer for CNNs).
    #[arg(long, value_parser = parse_space)]
    pub space: Option<Space>,
    #[arg(long, default_value_t = 3, value_parser = parse_positive)]
    pub k: usize,
    #[arg(long, value_parser = parse_positive)]
    pub top_m: Option<usize>,
    #[arg(long, value_enum, default_value_t = OutFormat::Text)]
    pub format: OutFormat,
    /// Add the feature-activation map (conv models only).
    #[arg(long)]
    pub fam: bool,
    /// Where the mask is written for text and json output.
    #[arg(long, default_value = "fam-mask.pgm")]
    pub fam_out: PathBuf,
    /// Output file (text, json) or directory (pgm); text and json go to stdout otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Perturbation count for the surrogate scheme.
    #[arg(long, value_parser = parse_positive)]
    pub samples: Option<usize>,
}

#[derive(Debug, Args)]
pub struct FamArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Image data holding the query.
    #[arg(long)]
    pub data: DataSource,
    #[arg(long)]
    pub query: usize,
    #[arg(long, default_value_t = DEFAULT_QUANTILE, value_parser = parse_quantile)]
    pub quantile: f64,
    #[arg(long, default_value = "fam-mask.pgm")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub train: DataSource,
    #[arg(long)]
    pub test: DataSource,
    /// Comma-separated scheme names.
    #[arg(long, value_delimiter = ',', required = true, value_parser = parse_scheme)]
    pub schemes: Vec<Scheme>,
    #[arg(long, value_parser = parse_space)]
    pub space: Option<Space>,
    #[arg(long, default_value_t = 3, value_parser = parse_positive)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_parser = parse_positive)]
    pub samples: Option<usize>,
    #[arg(long, value_enum, default_value_t = TableFormat::Text)]
    pub format: TableFormat,
    /// Include wall-clock timings (makes output run-dependent).
    #[arg(long)]
    pub timings: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("what").required(true).multiple(true).args(["model", "data"]))]
pub struct InspectArgs {
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<DataSource>,
    /// Label column of a CSV given with --data (default: the last column).
    #[arg(long)]
    pub label_column: Option<String>,
    #[arg(long, value_enum, default_value_t = TaskArg::Classification)]
    pub task: TaskArg,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Classification,
    Regression,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Task {
        match t {
            TaskArg::Classification => Task::Classification,
            TaskArg::Regression => Task::Regression,
        }
    }
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse().map_err(|e: TwinError| e.to_string())
}

fn parse_space(s: &str) -> std::result::Result<Space, String> {
    s.parse().map_err(|e: TwinError| e.to_string())
}

fn parse_positive(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(v) => Ok(v),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_quantile(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(q) if q > 0.0 && q <= 1.0 => Ok(q),
        Ok(q) => Err(format!("{q} is outside (0, 1]")),
        Err(e) => Err(e.to_string()),
    }
}

/// Training config file.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainConfig {
    task: Task,
    #[serde(default)]
    label_column: Option<LabelColumn>,
    /// Defaults to z-scores for CSV data and none for images.
    #[serde(default)]
    normalize: Option<NormMethod>,
    layers: Vec<LayerSpec>,
    hyper: HyperConfig,
    #[serde(default)]
    seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct HyperConfig {
    lr: f64,
    #[serde(default)]
    momentum: f64,
    epochs: usize,
    #[serde(default = "default_batch")]
    batch_size: usize,
}

fn default_batch() -> usize {
    32
}

/// How the training data was read and scaled; stored in the model file so
/// later commands prepare data identically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Preprocess {
    task: Task,
    #[serde(default)]
    label_column: Option<LabelColumn>,
    #[serde(default)]
    norm: Option<NormStats<f64>>,
    #[serde(default)]
    class_names: Vec<String>,
    feature_names: Vec<String>,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Errors are reported on stderr.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let threads = match std::env::var(THREADS_VAR) {
        Err(_) => 1,
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) => n.max(1),
            Err(_) => {
                eprintln!("error: {THREADS_VAR} must be a non-negative integer, got {v:?}");
                return 2;
            }
        },
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return 1;
        }
    };
    match pool.install(|| execute(cli.command)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Fam(a) => cmd_fam(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Inspect(a) => cmd_inspect(a),
    }
}

fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| TwinError::io("<stdout>", e))
        }
    }
}

/// Index of the last header column.
fn last_column(path: &Path) -> Result<LabelColumn> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| TwinError::Csv(e.to_string()))?;
    let n = reader
        .headers()
        .map_err(|e| TwinError::Csv(e.to_string()))?
        .len();
    if n < 2 {
        return Err(TwinError::UnknownLabelColumn(format!(
            "{} has no feature columns",
            path.display()
        )));
    }
    Ok(LabelColumn::Index(n - 1))
}

fn load_raw(src: &DataSource, label: Option<&LabelColumn>, task: Task) -> Result<Dataset<f64>> {
    match src {
        DataSource::Csv(path) => {
            let col = match label {
                Some(c) => c.clone(),
                None => last_column(path)?,
            };
            load_csv(path, &col, task)
        }
        DataSource::Idx { images, labels } => {
            if task != Task::Classification {
                return Err(TwinError::InvalidArgument(
                    "IDX data only supports classification".into(),
                ));
            }
            load_idx(images, labels)
        }
    }
}

fn preprocess_of(model: &NetworkModel<f64>) -> Result<Preprocess> {
    let v = model
        .metadata
        .get(PREPROCESS_KEY)
        .ok_or_else(|| TwinError::Malformed("model file has no preprocessing record".into()))?;
    serde_json::from_value(v.clone()).map_err(|e| TwinError::Malformed(e.to_string()))
}

/// Reads `src` the way the model's training data was read.
fn load_prepared(model: &NetworkModel<f64>, src: &DataSource) -> Result<Dataset<f64>> {
    let pre = preprocess_of(model)?;
    let mut ds = load_raw(src, pre.label_column.as_ref(), pre.task)?;
    if ds.schema.feature_names != pre.feature_names {
        return Err(TwinError::InvalidArgument(format!(
            "{} does not have the model's feature columns",
            source_name(src)
        )));
    }
    ds = ds.with_class_names(&pre.class_names)?;
    if let Some(stats) = &pre.norm {
        ds = ds.apply_norm(stats)?;
    }
    Ok(ds)
}

fn source_name(src: &DataSource) -> String {
    match src {
        DataSource::Csv(p) => p.display().to_string(),
        DataSource::Idx { images, .. } => images.display().to_string(),
    }
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.config).map_err(|e| TwinError::io(&a.config, e))?;
    let cfg: TrainConfig = serde_json::from_str(&text)
        .map_err(|e| TwinError::Malformed(format!("{}: {e}", a.config.display())))?;
    let seed = a.seed.or(cfg.seed).unwrap_or(0);
    let raw = load_raw(&a.data, cfg.label_column.as_ref(), cfg.task)?;
    let method = cfg
        .normalize
        .unwrap_or(if raw.schema.input_shape.is_image() {
            NormMethod::None
        } else {
            NormMethod::Zscore
        });
    let data = normalize(&raw, method)?;
    let mut model = NetworkModel::build(
        cfg.layers,
        data.schema.input_shape,
        data.schema.label_kind.clone(),
        seed,
    )?;
    let hyper = Hyper {
        lr: cfg.hyper.lr,
        momentum: cfg.hyper.momentum,
        epochs: cfg.hyper.epochs,
        batch_size: cfg.hyper.batch_size,
        seed,
    };
    let report = train(&mut model, &data, &hyper)?;
    let pre = Preprocess {
        task: cfg.task,
        label_column: cfg.label_column,
        norm: data.norm_stats.clone(),
        class_names: data.schema.class_names.clone(),
        feature_names: data.schema.feature_names.clone(),
    };
    model.metadata.insert(
        PREPROCESS_KEY.into(),
        serde_json::to_value(&pre).expect("preprocessing serializes"),
    );
    network::save(&model, &a.out)?;

    let mut s = String::new();
    let _ = writeln!(s, "# twinsys train  seed={seed}");
    let _ = writeln!(
        s,
        "data: {} ({} cases, input {})",
        source_name(&a.data),
        data.len(),
        data.schema.input_shape
    );
    let _ = writeln!(s, "parameters: {}", model.param_count());
    if let Some(l) = report.final_loss() {
        let _ = writeln!(s, "epochs: {}  final loss: {l:.6}", report.epochs.len());
    }
    if let Some(acc) = report.final_accuracy {
        let _ = writeln!(s, "train accuracy: {acc:.4}");
    }
    if let Some(mse) = report.final_mse {
        let _ = writeln!(s, "train mse: {mse:.6}");
    }
    let _ = writeln!(s, "model written to {}", a.out.display());
    emit(None, s.as_bytes())
}

/// Input space for MLPs, the layer feeding the final dense layer for CNNs.
fn default_space(model: &NetworkModel<f64>) -> Space {
    match (model.last_conv(), model.penultimate_layer()) {
        (Some(_), Some(l)) => Space::Layer(model.layers()[l].name.clone()),
        _ => Space::Input,
    }
}

fn scheme_spec(scheme: Scheme, samples: Option<usize>) -> SchemeSpec<f64> {
    let mut spec = SchemeSpec::from(scheme);
    if let (SchemeSpec::Surrogate(cfg), Some(n)) = (&mut spec, samples) {
        cfg.n_samples = n;
    }
    spec
}

/// Reads a one-row CSV whose header names the model's feature columns.
fn query_from_file(path: &Path, pre: &Preprocess) -> Result<Query<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| TwinError::Csv(e.to_string()))?;
    let header = reader
        .headers()
        .map_err(|e| TwinError::Csv(e.to_string()))?
        .clone();
    let mut rows = reader.records();
    let row = rows
        .next()
        .ok_or_else(|| TwinError::InvalidArgument(format!("{} has no data row", path.display())))?
        .map_err(|e| TwinError::Csv(e.to_string()))?;
    if rows.next().is_some() {
        return Err(TwinError::InvalidArgument(format!(
            "{} must hold exactly one row",
            path.display()
        )));
    }
    let features = pre
        .feature_names
        .iter()
        .map(|name| {
            let col = header.iter().position(|h| h == name).ok_or_else(|| {
                TwinError::InvalidArgument(format!("query file lacks column {name:?}"))
            })?;
            row[col]
                .parse::<f64>()
                .map_err(|_| TwinError::NonNumericCell {
                    row: 1,
                    column: name.clone(),
                    value: row[col].to_string(),
                })
        })
        .collect::<Result<Vec<f64>>>()?;
    let features = match &pre.norm {
        Some(stats) => stats.apply(&features),
        None => features,
    };
    Ok(Query::new(features))
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    let model: NetworkModel<f64> = network::load(&a.model)?;
    if a.fam && model.last_conv().is_none() {
        return Err(TwinError::NoConvLayer);
    }
    let pre = preprocess_of(&model)?;
    let train_data = load_prepared(&model, &a.train)?;
    let query = match (a.query, &a.query_file) {
        (_, Some(path)) => query_from_file(path, &pre)?,
        (Some(i), None) => {
            let qd = match &a.query_data {
                Some(src) => load_prepared(&model, src)?,
                None => train_data.clone(),
            };
            let case = qd.cases.get(i).ok_or_else(|| {
                TwinError::InvalidArgument(format!(
                    "query index {i} out of range (n = {})",
                    qd.len()
                ))
            })?;
            Query::from_case(case)
        }
        (None, None) => unreachable!("clap requires --query or --query-file"),
    };
    let space = a.space.clone().unwrap_or_else(|| default_space(&model));
    let index = build_index(&train_data, space.clone(), Some(&model))?;
    let weigher = Weigher::new(&model, &train_data, scheme_spec(a.scheme, a.samples), space)?;
    let weights = weigher.weights_for(&query.features, query.id, a.seed)?;
    let mut e = explain(&model, &index, &weights, &query, a.k, a.top_m)?;
    e.seed = Some(a.seed);
    if a.fam {
        let baseline = vec![0.0; query.features.len()];
        e.fam = Some(compute_fam_with(
            &model,
            &query.features,
            &baseline,
            DEFAULT_QUANTILE,
        )?);
    }

    match a.format {
        OutFormat::Pgm => {
            let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let files = render(&e, Format::Pgm)?;
            std::fs::create_dir_all(&dir).map_err(|err| TwinError::io(&dir, err))?;
            let mut listing = String::new();
            for f in files {
                let path = dir.join(&f.name);
                write_atomic(&path, &f.bytes)?;
                let _ = writeln!(listing, "{}", path.display());
            }
            emit(None, listing.as_bytes())
        }
        fmt => {
            let format = if fmt == OutFormat::Json {
                Format::Json
            } else {
                Format::Text
            };
            let out = render(&e, format)?.remove(0);
            if let Some(f) = &e.fam {
                write_atomic(&a.fam_out, &mask_pgm(f))?;
            }
            emit(a.out.as_deref(), &out.bytes)
        }
    }
}

fn cmd_fam(a: FamArgs) -> Result<()> {
    let model: NetworkModel<f64> = network::load(&a.model)?;
    if model.last_conv().is_none() {
        return Err(TwinError::NoConvLayer);
    }
    let data = load_prepared(&model, &a.data)?;
    let case = data.cases.get(a.query).ok_or_else(|| {
        TwinError::InvalidArgument(format!(
            "query index {} out of range (n = {})",
            a.query,
            data.len()
        ))
    })?;
    let baseline = vec![0.0; case.features.len()];
    let fam = compute_fam_with(&model, &case.features, &baseline, a.quantile)?;
    write_atomic(&a.out, &mask_pgm(&fam))?;
    let mut s = String::new();
    let _ = writeln!(s, "# twinsys fam  query={}", a.query);
    let _ = writeln!(
        s,
        "selected map: {}[{}]  contribution {:.6}{}",
        fam.layer,
        fam.map,
        fam.contribution_of_unit,
        if fam.degenerate { "  (degenerate)" } else { "" }
    );
    let _ = writeln!(s, "mask written to {}", a.out.display());
    emit(None, s.as_bytes())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let model: NetworkModel<f64> = network::load(&a.model)?;
    let train_data = load_prepared(&model, &a.train)?;
    let test_data = load_prepared(&model, &a.test)?;
    let space = a.space.clone().unwrap_or_else(|| default_space(&model));
    let index = build_index(&train_data, space.clone(), Some(&model))?;
    let specs: Vec<SchemeSpec<f64>> = a
        .schemes
        .iter()
        .map(|&s| scheme_spec(s, a.samples))
        .collect();
    let reports = compare_schemes(&model, &index, &specs, &test_data, a.k, a.seed)?;
    let body = match a.format {
        TableFormat::Text => {
            let mut s = format!(
                "# twinsys evaluate  seed={}  k={}  space={}  test={}\n",
                a.seed,
                a.k,
                space,
                test_data.len()
            );
            s.push_str(&render_table(&reports, a.timings));
            s
        }
        TableFormat::Json => {
            let reports: serde_json::Value =
                serde_json::from_str(&reports_json(&reports, a.timings))?;
            let doc = serde_json::json!({ "seed": a.seed, "k": a.k, "space": space.to_string(), "reports": reports });
            let mut s = serde_json::to_string_pretty(&doc)?;
            s.push('\n');
            s
        }
    };
    emit(a.out.as_deref(), body.as_bytes())
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let mut s = String::new();
    if let Some(path) = &a.model {
        let model: NetworkModel<f64> = network::load(path)?;
        let _ = writeln!(s, "model {}", path.display());
        let task = match model.task() {
            LabelKind::Classification { num_classes } => {
                format!("classification ({num_classes} classes)")
            }
            LabelKind::Regression => "regression".to_string(),
        };
        let _ = writeln!(s, "  task: {task}  seed: {}", model.seed());
        let _ = writeln!(s, "  input: {}", model.input_shape());
        let _ = writeln!(
            s,
            "  {:<16} {:<10} {:<20} {:>10}",
            "layer", "kind", "output", "params"
        );
        for (l, spec) in model.layers().iter().enumerate() {
            let n = model.params()[l]
                .as_ref()
                .map_or(0, |p| p.weight.len() + p.bias.len());
            let _ = writeln!(
                s,
                "  {:<16} {:<10} {:<20} {:>10}",
                spec.name,
                spec.kind.label(),
                model.layer_shape(l).to_string(),
                n
            );
        }
        let _ = writeln!(s, "  parameters: {}", model.param_count());
        let _ = writeln!(s, "  default retrieval space: {}", default_space(&model));
        if let Ok(pre) = preprocess_of(&model) {
            let norm = pre.norm.as_ref().map_or("none".to_string(), |n| {
                format!("{:?}", n.method).to_lowercase()
            });
            let _ = writeln!(s, "  normalization: {norm}");
            if !pre.class_names.is_empty() {
                let _ = writeln!(s, "  classes: {}", pre.class_names.join(", "));
            }
        }
    }
    if let Some(src) = &a.data {
        let label = a
            .label_column
            .as_deref()
            .map(|c| c.parse::<LabelColumn>().expect("infallible"));
        let ds = load_raw(src, label.as_ref(), a.task.into())?;
        let _ = writeln!(s, "data {}", source_name(src));
        let _ = writeln!(s, "  cases: {}  input: {}", ds.len(), ds.schema.input_shape);
        if !ds.schema.input_shape.is_image() {
            let _ = writeln!(s, "  features: {}", ds.schema.feature_names.join(", "));
        }
        if !ds.schema.class_names.is_empty() {
            let mut counts = vec![0usize; ds.schema.class_names.len()];
            for c in ds.labels().filter_map(|l| l.class()) {
                counts[c] += 1;
            }
            let parts: Vec<String> = ds
                .schema
                .class_names
                .iter()
                .zip(&counts)
                .map(|(n, c)| format!("{n}={c}"))
                .collect();
            let _ = writeln!(s, "  classes: {}", parts.join(" "));
        }
    }
    emit(None, s.as_bytes())
}
