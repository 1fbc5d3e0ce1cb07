//! Command-line front end.

mod cli;

use std::fmt;
use std::fs;
use std::io::{BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::Parser;
use serde::{de::DeserializeOwned, Deserialize, Serialize};
use serde_json::Value;

use cli::{
    Cli, Command, CompareArgs, DataArgs, GridArgs, HyperArgs, MatrixFormat, ModelArgs, ProfileArg, ReportArgs,
    RunArgs, ScaleArgs, StatsArgs, SynthArgs, TrainArgs,
};
use scalenet::graphdata::{
    compute_stats, generate_dsbm, load_dataset, make_imbalanced_split, random_splits, write_dataset, DatasetPaths,
    DirectionProfile, DsbmParams,
};
use scalenet::harness::{
    cross_validate, format_leaderboard_tsv, format_report_tsv, grid_search, per_scale_report, to_json_string, train,
    wilcoxon_with_method, GridSpace, ReportOptions, TrainHyper,
};
use scalenet::par::{self, Execution};
use scalenet::scales::{build_scaled_adjacency, proximity_matrix, remove_shared_edges, ScaleSpec};
use scalenet::sparse::{self, io as sparse_io};
use scalenet::{DirectedGraph, ModelConfig, SparseMatrix, SplitSet};

/// Marks errors that are the caller's fault rather than the data's.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Serialize, Deserialize)]
struct RunManifest {
    tool: String,
    version: String,
    command: String,
    /// Arguments after the program name, as given.
    args: Vec<String>,
    dataset: Option<DatasetPaths>,
    /// Effective settings after layering flags over the config file over defaults.
    config: Value,
    seed: Option<u64>,
    out_dir: PathBuf,
}

struct Context_ {
    args: Vec<String>,
    out_dir: Option<PathBuf>,
    exec: Execution,
}

impl Context_ {
    fn write_manifest(&self, command: &str, dataset: Option<DatasetPaths>, config: Value, seed: Option<u64>) -> Result<()> {
        let Some(dir) = &self.out_dir else {
            return Ok(());
        };
        let manifest = RunManifest {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            args: self.args.clone(),
            dataset,
            config,
            seed,
            out_dir: dir.clone(),
        };
        write_file(&dir.join("manifest.json"), &to_json_string(&manifest))
    }

    /// Prints `text` to stdout and, with an output directory, saves it as `name`.
    fn emit(&self, name: &str, text: &str) -> Result<()> {
        self.save(name, text)?;
        let mut out = std::io::stdout().lock();
        out.write_all(text.as_bytes())?;
        out.flush()?;
        Ok(())
    }

    fn save(&self, name: &str, text: &str) -> Result<()> {
        match &self.out_dir {
            Some(dir) => write_file(&dir.join(name), text),
            None => Ok(()),
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    scalenet::harness::write_text(path, text)?;
    Ok(())
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args_os()
        .skip(1)
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(usage("--threads must be at least 1"));
        }
        par::init_threads(threads);
    }
    let exec = if cli.sequential {
        Execution::Sequential
    } else {
        Execution::default()
    };
    let ctx = Context_ {
        args,
        out_dir: cli.out_dir,
        exec,
    };
    match cli.command {
        Command::Stats(a) => stats(&ctx, a),
        Command::Scale(a) => scale(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::ReportScales(a) => report(&ctx, a),
        Command::Gridsearch(a) => gridsearch(&ctx, a),
        Command::Compare(a) => compare(&ctx, a),
        Command::Synth(a) => synth(&ctx, a),
        Command::Replay(a) => replay(&ctx, &a.manifest),
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("settings serialize")
}

fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

/// `base` with the fields present in `patch` replaced.
fn layered<T: Serialize + DeserializeOwned>(base: &T, patch: Option<&Value>, what: &str) -> Result<T> {
    let Some(patch) = patch else {
        return Ok(serde_json::from_value(to_value(base))?);
    };
    let mut v = to_value(base);
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(|e| usage(format!("invalid {what}: {e}")))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn read_config_file(path: Option<&Path>) -> Result<(Option<Value>, Option<Value>)> {
    let Some(path) = path else {
        return Ok((None, None));
    };
    let Value::Object(mut obj) = read_json(path)? else {
        return Err(usage(format!("{}: expected a JSON object", path.display())));
    };
    let model = obj.remove("model");
    let train = obj.remove("train");
    if let Some(key) = obj.keys().next() {
        return Err(usage(format!("{}: unknown section '{key}'", path.display())));
    }
    Ok((model, train))
}

fn apply_model_flags(cfg: &mut ModelConfig, m: &ModelArgs) {
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = m.$field.clone() { cfg.$field = v; })* };
    }
    set!(family, alpha, beta, gamma, layers, hidden, comb1, comb2, selfloop, selfloop_higher, use_bn, use_relu, dropout, lr);
}

fn apply_hyper_flags(hyper: &mut TrainHyper, h: &HyperArgs) {
    macro_rules! set {
        ($($field:ident),*) => { $(if let Some(v) = h.$field { hyper.$field = v; })* };
    }
    set!(max_epochs, patience, lr_patience, lr_factor, min_lr, seed);
}

/// Defaults, then the config file, then flags.
fn resolve_settings(base: &ModelConfig, base_hyper: &TrainHyper, run: &RunArgs) -> Result<(ModelConfig, TrainHyper)> {
    let (model_patch, train_patch) = read_config_file(run.config.as_deref())?;
    let mut cfg = layered(base, model_patch.as_ref(), "model config")?;
    let mut hyper = layered(base_hyper, train_patch.as_ref(), "training config")?;
    apply_model_flags(&mut cfg, &run.model);
    apply_hyper_flags(&mut hyper, &run.hyper);
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    hyper.validate().map_err(|e| usage(e.to_string()))?;
    Ok((cfg, hyper))
}

fn load(data: &DataArgs) -> Result<(DirectedGraph, SplitSet)> {
    let paths = DatasetPaths::in_dir(&data.data);
    let (graph, splits) = load_dataset(&paths, data.classes)?;
    eprintln!(
        "loaded {} nodes, {} edges, {} features, {} classes, {} splits",
        graph.num_nodes(),
        graph.num_edges(),
        graph.num_features(),
        graph.num_classes(),
        splits.len()
    );
    Ok((graph, splits))
}

fn leading_splits(splits: &SplitSet, count: Option<usize>) -> Result<SplitSet> {
    let Some(count) = count else {
        return Ok(splits.clone());
    };
    if count == 0 || count > splits.len() {
        bail!(usage(format!("requested {count} splits, dataset has {}", splits.len())));
    }
    Ok(SplitSet {
        splits: splits.splits[..count].to_vec(),
    })
}

fn stats(ctx: &Context_, a: StatsArgs) -> Result<()> {
    let paths = DatasetPaths::in_dir(&a.data.data);
    ctx.write_manifest(
        "stats",
        Some(paths),
        serde_json::json!({ "classes": a.data.classes, "split": a.split }),
        None,
    )?;
    let (graph, splits) = load(&a.data)?;
    let Some(split) = splits.splits.get(a.split) else {
        bail!(usage(format!("split {} out of range ({} splits)", a.split, splits.len())));
    };
    let report = compute_stats(&graph, &split.train)?;
    ctx.emit("stats.json", &to_json_string(&report))
}

fn read_edges_file(path: &Path, nodes: Option<usize>) -> Result<SparseMatrix> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let edges = sparse_io::parse_edge_list(BufReader::new(file))?;
    let needed = edges.iter().map(|&(s, d)| s.max(d) + 1).max().unwrap_or(0);
    let n = nodes.unwrap_or(needed);
    if n < needed {
        bail!("edge list references node {} but --nodes is {n}", needed - 1);
    }
    Ok(SparseMatrix::from_edges(n, n, edges)?)
}

fn scale(ctx: &Context_, a: ScaleArgs) -> Result<()> {
    let dataset = a.data.as_ref().map(DatasetPaths::in_dir);
    let spec = match &a.word {
        Some(word) => Some(ScaleSpec::parse(word, a.selfloops).map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    if a.proximity.is_some_and(|k| k < 2) {
        return Err(usage("--proximity must be at least 2"));
    }
    let config = serde_json::json!({
        "edges": a.edges,
        "nodes": a.nodes,
        "word": a.word,
        "proximity": a.proximity,
        "combine": format!("{:?}", a.combine).to_lowercase(),
        "prune": !a.no_prune,
        "selfloops": a.selfloops,
        "remove_shared": a.remove_shared,
        "format": format!("{:?}", a.format).to_lowercase(),
    });
    ctx.write_manifest("scale", dataset.clone(), config, None)?;

    let adjacency = match (&dataset, &a.edges) {
        (Some(paths), _) => load_dataset(paths, None)?.0.adjacency().clone(),
        (None, Some(path)) => read_edges_file(path, a.nodes)?,
        (None, None) => unreachable!("clap requires an input"),
    };
    let mut matrix = match (spec, a.proximity) {
        (Some(spec), _) => build_scaled_adjacency(&adjacency, &spec)?.matrix,
        (None, Some(k)) => {
            let p = proximity_matrix(&adjacency, k, a.combine.into(), !a.no_prune)?;
            sparse::apply_self_loops(&p, a.selfloops)?
        }
        (None, None) => unreachable!("clap requires a matrix kind"),
    };
    if a.remove_shared {
        let forward = adjacency.pattern();
        let backward = sparse::transpose(&forward);
        matrix = remove_shared_edges(&matrix, &[&forward, &backward])?;
    }
    eprintln!("{} x {} matrix with {} entries", matrix.n_rows(), matrix.n_cols(), matrix.nnz());
    let (text, name) = match a.format {
        MatrixFormat::Mtx => (sparse_io::format_matrix_market(&matrix), "scale.mtx"),
        MatrixFormat::Edges => (sparse_io::format_edge_list(&matrix), "scale.tsv"),
    };
    match &a.out {
        Some(path) => {
            ctx.save(name, &text)?;
            write_file(path, &text)
        }
        None => ctx.emit(name, &text),
    }
}

fn train_cmd(ctx: &Context_, a: TrainArgs) -> Result<()> {
    let (cfg, hyper) = resolve_settings(&ModelConfig::default(), &TrainHyper::default(), &a.run)?;
    ctx.write_manifest(
        "train",
        Some(DatasetPaths::in_dir(&a.run.data.data)),
        serde_json::json!({ "model": cfg, "train": hyper, "classes": a.run.data.classes, "split": a.split }),
        Some(hyper.seed),
    )?;
    let (graph, splits) = load(&a.run.data)?;
    let text = match a.split {
        Some(k) => {
            let Some(split) = splits.splits.get(k) else {
                bail!(usage(format!("split {k} out of range ({} splits)", splits.len())));
            };
            let result = train(&cfg, &graph, split, &hyper)?;
            eprintln!(
                "split {k}: best val {:.4} at epoch {}, test {:.4}",
                result.best_val_acc, result.best_epoch, result.test_acc_at_best_val
            );
            to_json_string(&result)
        }
        None => {
            let result = cross_validate(&cfg, &graph, &splits, &hyper, ctx.exec)?;
            eprintln!("test accuracy {:.4} ± {:.4} over {} splits", result.mean, result.std, splits.len());
            to_json_string(&result)
        }
    };
    ctx.emit("results.json", &text)
}

fn report(ctx: &Context_, a: ReportArgs) -> Result<()> {
    let defaults = ReportOptions::default();
    let (config, hyper) = resolve_settings(&defaults.config, &defaults.hyper, &a.run)?;
    let options = ReportOptions {
        config,
        hyper,
        columns: a.columns.clone().unwrap_or(defaults.columns),
        remove_shared: !a.no_shared,
    };
    ctx.write_manifest(
        "report-scales",
        Some(DatasetPaths::in_dir(&a.run.data.data)),
        serde_json::json!({ "options": options, "classes": a.run.data.classes, "splits": a.splits }),
        Some(options.hyper.seed),
    )?;
    let (graph, splits) = load(&a.run.data)?;
    let splits = leading_splits(&splits, Some(a.splits))?;
    let result = per_scale_report(&graph, &splits.splits, &options, ctx.exec)?;
    ctx.save("results.json", &to_json_string(&result))?;
    ctx.emit("report.tsv", &format_report_tsv(&result))
}

fn gridsearch(ctx: &Context_, a: GridArgs) -> Result<()> {
    let (base, hyper) = resolve_settings(&ModelConfig::default(), &TrainHyper::default(), &a.run)?;
    let space = if a.full {
        GridSpace::full(base)
    } else {
        let patch = a.space.as_deref().map(read_json).transpose()?;
        layered(&GridSpace::singleton(base), patch.as_ref(), "search space")?
    };
    if space.is_empty() {
        return Err(usage("search space is empty"));
    }
    for cfg in space.enumerate() {
        cfg.validate().map_err(|e| usage(format!("search space: {e}")))?;
    }
    ctx.write_manifest(
        "gridsearch",
        Some(DatasetPaths::in_dir(&a.run.data.data)),
        serde_json::json!({ "space": space, "train": hyper, "classes": a.run.data.classes, "splits": a.splits }),
        Some(hyper.seed),
    )?;
    let (graph, splits) = load(&a.run.data)?;
    let splits = leading_splits(&splits, a.splits)?;
    eprintln!("searching {} configs over {} splits", space.len(), splits.len());
    let entries = grid_search(&space, &graph, &splits, &hyper, ctx.exec)?;
    ctx.save("results.json", &to_json_string(&entries))?;
    ctx.save("leaderboard.tsv", &format_leaderboard_tsv(&entries))?;
    let shown = a.top.map_or(entries.len(), |k| k.min(entries.len()));
    let text = format_leaderboard_tsv(&entries[..shown]);
    print!("{text}");
    Ok(())
}

/// Accuracy list from a results JSON (`test_accs`), a JSON array, or
/// numbers separated by whitespace or commas.
fn read_accuracies(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    if let Ok(value) = serde_json::from_str::<Value>(&text) {
        let list = match &value {
            Value::Object(obj) => obj.get("test_accs"),
            Value::Array(_) => Some(&value),
            _ => None,
        };
        let Some(list) = list else {
            bail!("{}: expected an array or an object with test_accs", path.display());
        };
        return serde_json::from_value(list.clone()).with_context(|| format!("{}: not a list of numbers", path.display()));
    }
    text.split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse::<f64>()
                .with_context(|| format!("{}: invalid number '{t}'", path.display()))
        })
        .collect()
}

fn compare(ctx: &Context_, a: CompareArgs) -> Result<()> {
    let method = a.method.map(scalenet::harness::TestMethod::from);
    ctx.write_manifest(
        "compare",
        None,
        serde_json::json!({ "a": a.a, "b": a.b, "method": method }),
        None,
    )?;
    let xs = read_accuracies(&a.a)?;
    let ys = read_accuracies(&a.b)?;
    let result = wilcoxon_with_method(&xs, &ys, method)?;
    ctx.emit("comparison.json", &to_json_string(&result))
}

fn synth(ctx: &Context_, a: SynthArgs) -> Result<()> {
    let Some(dir) = &ctx.out_dir else {
        return Err(usage("synth needs --out-dir for the dataset files"));
    };
    let mut params = match a.profile {
        ProfileArg::Homophilic => DsbmParams::homophilic(a.nodes, a.classes, a.seed),
        ProfileArg::Heterophilic => DsbmParams::heterophilic(a.nodes, a.classes, a.seed),
    };
    if let Some(p) = a.p_in {
        params.p_in = p;
    }
    if let Some(p) = a.p_out {
        params.p_out = p;
    }
    if let Some(noise) = a.noise {
        params.feature_noise = noise;
    }
    if let Some(f) = a.starved_fraction {
        match &mut params.profile {
            DirectionProfile::OutSignal { starved_fraction } => *starved_fraction = f,
            DirectionProfile::Symmetric => {
                return Err(usage("--starved-fraction applies to the heterophilic profile only"));
            }
        }
    }
    ctx.write_manifest(
        "synth",
        Some(DatasetPaths::in_dir(dir)),
        serde_json::json!({
            "params": params,
            "splits": a.splits,
            "train_frac": a.train_frac,
            "val_frac": a.val_frac,
            "imbalance": a.imbalance,
        }),
        Some(a.seed),
    )?;
    let graph = generate_dsbm(&params)?;
    let mut splits = random_splits(&graph, a.splits, a.train_frac, a.val_frac, a.seed)?;
    if let Some(ratio) = a.imbalance {
        for (k, split) in splits.splits.iter_mut().enumerate() {
            *split = make_imbalanced_split(&graph, split, ratio, scalenet::harness::mix_seed(a.seed, k as u64))?;
        }
    }
    let paths = write_dataset(dir, &graph, &splits)?;
    eprintln!(
        "wrote {} nodes and {} edges to {}",
        graph.num_nodes(),
        graph.num_edges(),
        dir.display()
    );
    print!("{}", to_json_string(&paths));
    Ok(())
}

/// Recorded arguments with any `--out-dir` removed.
fn strip_out_dir(args: &[String]) -> Vec<String> {
    let mut out = Vec::with_capacity(args.len());
    let mut iter = args.iter();
    while let Some(arg) = iter.next() {
        if arg == "--out-dir" {
            iter.next();
        } else if !arg.starts_with("--out-dir=") {
            out.push(arg.clone());
        }
    }
    out
}

fn replay(ctx: &Context_, manifest: &Path) -> Result<()> {
    let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let recorded: RunManifest =
        serde_json::from_str(&text).with_context(|| format!("{}: not a run manifest", manifest.display()))?;
    if recorded.version != env!("CARGO_PKG_VERSION") {
        eprintln!(
            "warning: manifest written by version {}, running {}",
            recorded.version,
            env!("CARGO_PKG_VERSION")
        );
    }
    let out_dir = ctx.out_dir.clone().unwrap_or_else(|| recorded.out_dir.clone());
    let mut argv = vec![env!("CARGO_PKG_NAME").to_string()];
    argv.extend(strip_out_dir(&recorded.args));
    argv.push("--out-dir".into());
    argv.push(out_dir.to_string_lossy().into_owned());
    let cli = Cli::try_parse_from(&argv).map_err(|e| usage(format!("manifest arguments: {e}")))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(usage("a manifest cannot record a replay"));
    }
    eprintln!("replaying '{}' into {}", cli.command.name(), out_dir.display());
    run(cli, argv[1..].to_vec())
}
