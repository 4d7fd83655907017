//! Command line front end: corpus generation, policy training, rollout
//! recording, budget curves, and feature-table subset selection.

use clap::{Parser, Subcommand, ValueEnum};
use scout_core::{
    budget_grid, curve_from_traces, curve_full_strategy, curve_proposal_rank,
    curve_scene_context, dagger_train, generate_corpus, read_corpus, save_model, seq_explore,
    select_subset, split_by_index, write_corpus, APCurve, APMode, ClassId, DaggerConfig, Error,
    EvalOptions, ExplorationTrace, FeatureSchema, GenConfig, Label, MatchMode, Policy,
    RolloutMode, Scene, SearchOptions, SubsetProblem,
};
use rayon::prelude::*;
use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug)]
pub enum AppError {
    /// Wrong invocation or bad settings; exit code 2.
    Usage(String),
    /// Unreadable or inconsistent inputs; exit code 3.
    Data(String),
    /// Broken internal assumption; exit code 4.
    Internal(String),
}

impl AppError {
    pub fn exit_code(&self) -> i32 {
        match self {
            AppError::Usage(_) => 2,
            AppError::Data(_) => 3,
            AppError::Internal(_) => 4,
        }
    }

    fn usage(msg: impl Into<String>) -> Self {
        AppError::Usage(msg.into())
    }

    fn data(msg: impl Into<String>) -> Self {
        AppError::Data(msg.into())
    }
}

impl fmt::Display for AppError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AppError::Usage(m) | AppError::Data(m) | AppError::Internal(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for AppError {}

impl From<Error> for AppError {
    fn from(e: Error) -> Self {
        match &e {
            Error::Config { .. } | Error::Argument(_) | Error::UnknownClass(_) => {
                AppError::Usage(e.to_string())
            }
            Error::UnknownRegion(_)
            | Error::SchemaMismatch { .. }
            | Error::DegenerateBox(_)
            | Error::DegenerateData(_)
            | Error::PredictionMismatch(_)
            | Error::Io(_)
            | Error::Json(_) => AppError::Data(e.to_string()),
            Error::ExchangeRejected | Error::Invariant(_) => AppError::Internal(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::Data(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "scout",
    version,
    about = "Context-guided sequential region search on synthetic indoor scenes"
)]
pub struct Cli {
    /// Worker threads for parallel sections (0 keeps the library default).
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FeatureChoice {
    /// Region features plus explored-detection context.
    Full,
    /// Region features only.
    Unary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SubsetPositives {
    /// Rows of the query class are always kept.
    Query,
    /// Rows of every non-background class are always kept.
    Objects,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ApChoice {
    /// One pooled precision-recall sweep over all scenes.
    Pooled,
    /// Mean of per-scene values over scenes with positives.
    PerScene,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a scene corpus and write it as JSON lines.
    Gen {
        /// Generator settings file (key=value lines).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of scenes.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output corpus path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train an exploration policy by iterative imitation of the
    /// groundtruth expert.
    Train {
        #[arg(long)]
        corpus: PathBuf,
        /// Generator settings the corpus was built with.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Query class name.
        #[arg(long)]
        query: String,
        #[arg(long, value_enum, default_value_t = FeatureChoice::Full)]
        features: FeatureChoice,
        #[arg(long, default_value_t = 3)]
        iterations: usize,
        /// Regions explored per training rollout (defaults to every region).
        #[arg(long)]
        budget: Option<usize>,
        /// Background example selection: none, doptimal, or doptimal:<k>.
        #[arg(long, default_value = "none")]
        subset: String,
        #[arg(long, value_enum, default_value_t = SubsetPositives::Query)]
        subset_positives: SubsetPositives,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Weight penalty strength.
        #[arg(long, default_value_t = 1e-4)]
        l2: f64,
        /// Tail fraction of the corpus held out for model selection.
        #[arg(long, default_value_t = 0.25)]
        val_fraction: f64,
        /// Expert mixing decay base for iterations past the first.
        #[arg(long, default_value_t = 0.0)]
        beta0: f64,
        #[arg(long, default_value_t = 0.3)]
        nms_iou: f64,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        /// Where to store the trained model.
        #[arg(long)]
        out_model: PathBuf,
        /// Optional per-iteration diagnostics JSON.
        #[arg(long)]
        diagnostics: Option<PathBuf>,
    },
    /// Roll the trained policy over a corpus and record traces.
    Search {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        /// Generator settings the corpus was built with.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Query class name (defaults to the class stored in the model).
        #[arg(long)]
        query: Option<String>,
        /// Regions to explore per scene (defaults to every region).
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        /// Rescore after background detections instead of reusing scores.
        #[arg(long)]
        no_skip: bool,
        #[arg(long, default_value_t = 0.3)]
        nms_iou: f64,
        /// Output trace path (JSON lines).
        #[arg(long)]
        out: PathBuf,
    },
    /// Average precision against processed-region budgets, per method.
    Eval {
        #[arg(long)]
        corpus: PathBuf,
        /// Generator settings the corpus was built with.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Query class name.
        #[arg(long)]
        query: String,
        /// Budget step between curve points.
        #[arg(long, default_value_t = 10)]
        interval: usize,
        /// Largest budget (defaults to the configured proposal count).
        #[arg(long)]
        budget_max: Option<usize>,
        /// Model used by the `full` method.
        #[arg(long)]
        model_full: Option<PathBuf>,
        /// Recorded traces replayed by the `full` method instead of fresh
        /// rollouts.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Model used by the `scene` method.
        #[arg(long)]
        model_unary: Option<PathBuf>,
        /// Comma list from proposal,scene,full (default: every method whose
        /// inputs were given).
        #[arg(long)]
        methods: Option<String>,
        #[arg(long, default_value_t = 0)]
        noise_seed: u64,
        #[arg(long, default_value_t = 0.3)]
        nms_iou: f64,
        #[arg(long, value_enum, default_value_t = ApChoice::Pooled)]
        ap: ApChoice,
        /// Detection matching: id, or iou:<threshold>.
        #[arg(long = "match", default_value = "id")]
        match_mode: String,
        /// CSV output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pick a determinant-optimal row subset from a feature table.
    Subset {
        /// CSV rows: id, feature columns, label; label 1 rows are always
        /// kept. A non-numeric first line is skipped as a header.
        #[arg(long)]
        features: PathBuf,
        /// Total rows to keep (defaults to 5x the labeled rows).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        max_passes: usize,
        /// Output path (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn execute(cli: Cli) -> Result<(), AppError> {
    if cli.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build()
            .map_err(|e| AppError::Internal(e.to_string()))?;
        pool.install(|| dispatch(cli.command))
    } else {
        dispatch(cli.command)
    }
}

fn dispatch(command: Command) -> Result<(), AppError> {
    match command {
        Command::Gen {
            config,
            n,
            seed,
            out,
        } => cmd_gen(config.as_deref(), n, seed, &out),
        Command::Train {
            corpus,
            config,
            query,
            features,
            iterations,
            budget,
            subset,
            subset_positives,
            seed,
            l2,
            val_fraction,
            beta0,
            nms_iou,
            noise_seed,
            out_model,
            diagnostics,
        } => cmd_train(TrainArgs {
            corpus,
            config,
            query,
            features,
            iterations,
            budget,
            subset,
            subset_positives,
            seed,
            l2,
            val_fraction,
            beta0,
            nms_iou,
            noise_seed,
            out_model,
            diagnostics,
        }),
        Command::Search {
            model,
            corpus,
            config,
            query,
            budget,
            noise_seed,
            no_skip,
            nms_iou,
            out,
        } => cmd_search(
            &model, &corpus, config.as_deref(), query, budget, noise_seed, no_skip, nms_iou, &out,
        ),
        Command::Eval {
            corpus,
            config,
            query,
            interval,
            budget_max,
            model_full,
            traces,
            model_unary,
            methods,
            noise_seed,
            nms_iou,
            ap,
            match_mode,
            out,
        } => cmd_eval(EvalArgs {
            corpus,
            config,
            query,
            interval,
            budget_max,
            model_full,
            traces,
            model_unary,
            methods,
            noise_seed,
            nms_iou,
            ap,
            match_mode,
            out,
        }),
        Command::Subset {
            features,
            k,
            seed,
            max_passes,
            out,
        } => cmd_subset(&features, k, seed, max_passes, out.as_deref()),
    }
}

fn load_config(path: Option<&Path>) -> Result<GenConfig, AppError> {
    match path {
        Some(p) => Ok(GenConfig::from_file(p)?),
        None => Ok(GenConfig::default()),
    }
}

fn load_corpus(config: &GenConfig, path: &Path) -> Result<Vec<Scene>, AppError> {
    let corpus = read_corpus(path)?;
    if let Some(first) = corpus.first() {
        if first.catalog != config.catalog {
            return Err(AppError::data(format!(
                "corpus classes {:?} do not match the configured classes {:?}",
                first.catalog.names(),
                config.catalog.names()
            )));
        }
    }
    Ok(corpus)
}

fn parse_query(config: &GenConfig, name: &str) -> Result<ClassId, AppError> {
    match config.catalog.parse_label(name)? {
        Label::Class(id) => Ok(id),
        Label::Background => Err(AppError::usage(
            "the query must be an object class, not background",
        )),
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), AppError> {
    std::fs::write(path, text)
        .map_err(|e| AppError::data(format!("cannot write {}: {e}", path.display())))
}

fn cmd_gen(config: Option<&Path>, n: usize, seed: u64, out: &Path) -> Result<(), AppError> {
    if n == 0 {
        return Err(AppError::usage("--n must be positive"));
    }
    let config = load_config(config)?;
    let corpus = generate_corpus(&config, n, seed)?;
    write_corpus(out, &corpus)?;

    let class_count = config.catalog.len();
    let mut region_counts = vec![0usize; class_count];
    let mut scene_counts = vec![0usize; class_count];
    let mut background_regions = 0usize;
    for scene in &corpus {
        let mut present = vec![false; class_count];
        for region in &scene.regions {
            match region.gt_class {
                Label::Background => background_regions += 1,
                Label::Class(c) => {
                    region_counts[c.0] += 1;
                    present[c.0] = true;
                }
            }
        }
        for (c, p) in present.iter().enumerate() {
            if *p {
                scene_counts[c] += 1;
            }
        }
    }
    println!("wrote {} scenes to {}", corpus.len(), out.display());
    for (i, name) in config.catalog.names().iter().enumerate() {
        println!(
            "  {name}: {} regions across {} scenes",
            region_counts[i], scene_counts[i]
        );
    }
    println!("  background: {background_regions} regions");
    Ok(())
}

struct TrainArgs {
    corpus: PathBuf,
    config: Option<PathBuf>,
    query: String,
    features: FeatureChoice,
    iterations: usize,
    budget: Option<usize>,
    subset: String,
    subset_positives: SubsetPositives,
    seed: u64,
    l2: f64,
    val_fraction: f64,
    beta0: f64,
    nms_iou: f64,
    noise_seed: u64,
    out_model: PathBuf,
    diagnostics: Option<PathBuf>,
}

/// Parses the --subset flag: none, doptimal, doptimal:<k>.
fn parse_subset_flag(value: &str) -> Result<Option<Option<usize>>, AppError> {
    if value == "none" {
        return Ok(None);
    }
    if value == "doptimal" {
        return Ok(Some(None));
    }
    if let Some(rest) = value.strip_prefix("doptimal:") {
        let k: usize = rest
            .parse()
            .map_err(|_| AppError::usage(format!("bad subset size `{rest}`")))?;
        return Ok(Some(Some(k)));
    }
    Err(AppError::usage(format!(
        "--subset must be none, doptimal, or doptimal:<k>, got `{value}`"
    )))
}

/// Runs row selection over the training split and returns the background
/// region keys to keep during example collection.
fn build_background_subset(
    corpus: &[Scene],
    query: ClassId,
    positives: SubsetPositives,
    k: Option<usize>,
    val_fraction: f64,
    seed: u64,
) -> Result<HashSet<(u64, u32)>, AppError> {
    let (train_scenes, _) = split_by_index(corpus, val_fraction);
    let mut rows: Vec<[f64; 6]> = Vec::new();
    let mut background_keys: Vec<(u64, u32)> = Vec::new();
    let mut fixed_count = 0usize;

    // fixed rows first, then background candidates
    for pass in 0..2 {
        for scene in train_scenes {
            for region in &scene.regions {
                let is_fixed = match positives {
                    SubsetPositives::Query => region.gt_class == Label::Class(query),
                    SubsetPositives::Objects => !region.gt_class.is_background(),
                };
                let take = if pass == 0 {
                    is_fixed
                } else {
                    region.gt_class.is_background()
                };
                if !take {
                    continue;
                }
                rows.push(scout_core::features::unary_features(region).0);
                if pass == 0 {
                    fixed_count += 1;
                } else {
                    background_keys.push((scene.id, region.id));
                }
            }
        }
    }
    if fixed_count == 0 {
        return Err(AppError::usage(
            "no rows qualify as always-kept; the query class never appears in the training split",
        ));
    }
    if background_keys.is_empty() {
        return Err(AppError::data(
            "the training split has no background regions to select from",
        ));
    }
    let total = rows.len();
    let k = k.unwrap_or(5 * fixed_count).min(total).max(fixed_count);
    let matrix = nalgebra_matrix(&rows);
    let problem = SubsetProblem::new(&matrix, (0..fixed_count).collect(), k)?;
    let solution = select_subset(&problem, 20, seed)?;
    let keep: HashSet<(u64, u32)> = solution
        .selection
        .iter()
        .filter(|&&i| i >= fixed_count)
        .map(|&i| background_keys[i - fixed_count])
        .collect();
    println!(
        "background subset: kept {} of {} candidates (logdet {})",
        keep.len(),
        background_keys.len(),
        solution.logdet
    );
    Ok(keep)
}

fn nalgebra_matrix(rows: &[[f64; 6]]) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(rows.len(), 6, |r, c| rows[r][c])
}

fn cmd_train(args: TrainArgs) -> Result<(), AppError> {
    let config = load_config(args.config.as_deref())?;
    let corpus = load_corpus(&config, &args.corpus)?;
    let query = parse_query(&config, &args.query)?;
    let schema = match args.features {
        FeatureChoice::Full => FeatureSchema::full(config.catalog.len()),
        FeatureChoice::Unary => FeatureSchema::unary_only(config.catalog.len()),
    };

    let mut dagger = DaggerConfig::new(schema);
    dagger.beta0 = args.beta0;
    dagger.val_fraction = args.val_fraction;
    dagger.nms_iou = args.nms_iou;
    dagger.noise_seed = args.noise_seed;
    dagger.seed = args.seed;
    dagger.train.l2 = args.l2;

    if let Some(k) = parse_subset_flag(&args.subset)? {
        dagger.background_subset = Some(build_background_subset(
            &corpus,
            query,
            args.subset_positives,
            k,
            args.val_fraction,
            args.seed,
        )?);
    }

    let (policy, diags) = dagger_train(
        &config,
        &corpus,
        query,
        args.iterations,
        args.budget,
        &dagger,
    )?;
    save_model(&args.out_model, &policy, &config.catalog, Some(query))?;

    for d in &diags {
        println!(
            "iteration {}: examples_added={} aggregate={} train_hamming={:.6} val_hamming={:.6}{}",
            d.iteration,
            d.examples_added,
            d.aggregate_size,
            d.train_hamming,
            d.val_hamming,
            if d.selected { " [selected]" } else { "" }
        );
    }
    println!("saved model to {}", args.out_model.display());
    if let Some(path) = &args.diagnostics {
        let text = serde_json::to_string_pretty(&diags)
            .map_err(|e| AppError::Internal(e.to_string()))?;
        write_text(path, &text)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    model: &Path,
    corpus_path: &Path,
    config: Option<&Path>,
    query: Option<String>,
    budget: Option<usize>,
    noise_seed: u64,
    no_skip: bool,
    nms_iou: f64,
    out: &Path,
) -> Result<(), AppError> {
    let (policy, model_catalog, model_query) = scout_core::load_model(model)?;
    let config = load_config(config)?;
    if config.catalog != model_catalog {
        return Err(AppError::data(
            "the model was trained on different classes than the configuration",
        ));
    }
    let corpus = load_corpus(&config, corpus_path)?;
    let query = match query {
        Some(name) => parse_query(&config, &name)?,
        None => model_query.ok_or_else(|| {
            AppError::usage("the model stores no query class; pass --query")
        })?,
    };
    let opts = SearchOptions {
        nms_iou,
        background_skip: !no_skip,
        noise_seed,
        mixture_seed: 0,
    };
    let traces: Vec<ExplorationTrace> = corpus
        .par_iter()
        .map(|scene| {
            let b = budget.unwrap_or(scene.regions.len()).max(1);
            seq_explore(
                &config,
                scene,
                query,
                b,
                RolloutMode::Policy,
                Some(&policy),
                &opts,
            )
        })
        .collect::<scout_core::Result<Vec<_>>>()?;

    let mut text = String::new();
    for trace in &traces {
        text.push_str(
            &serde_json::to_string(trace).map_err(|e| AppError::Internal(e.to_string()))?,
        );
        text.push('\n');
    }
    write_text(out, &text)?;

    let total_calls: usize = traces.iter().map(|t| t.classification_calls).sum();
    let found = traces
        .iter()
        .filter(|t| {
            t.steps
                .iter()
                .any(|s| s.detection.predicted_class == Label::Class(query))
        })
        .count();
    println!("wrote {} traces to {}", traces.len(), out.display());
    println!(
        "total classification calls: {total_calls} ({} per scene)",
        total_calls as f64 / traces.len().max(1) as f64
    );
    println!(
        "scenes with a detection of `{}`: {found}/{}",
        config.catalog.name(query),
        traces.len()
    );
    Ok(())
}

struct EvalArgs {
    corpus: PathBuf,
    config: Option<PathBuf>,
    query: String,
    interval: usize,
    budget_max: Option<usize>,
    model_full: Option<PathBuf>,
    traces: Option<PathBuf>,
    model_unary: Option<PathBuf>,
    methods: Option<String>,
    noise_seed: u64,
    nms_iou: f64,
    ap: ApChoice,
    match_mode: String,
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum MethodChoice {
    Proposal,
    Scene,
    Full,
}

fn parse_match_mode(value: &str) -> Result<MatchMode, AppError> {
    if value == "id" {
        return Ok(MatchMode::RegionId);
    }
    if let Some(rest) = value.strip_prefix("iou:") {
        let threshold: f64 = rest
            .parse()
            .map_err(|_| AppError::usage(format!("bad overlap threshold `{rest}`")))?;
        if !(0.0..=1.0).contains(&threshold) {
            return Err(AppError::usage("overlap threshold must lie in [0, 1]"));
        }
        return Ok(MatchMode::Iou(threshold));
    }
    Err(AppError::usage(format!(
        "--match must be id or iou:<threshold>, got `{value}`"
    )))
}

fn parse_methods(
    value: Option<&str>,
    have_full: bool,
    have_unary: bool,
) -> Result<Vec<MethodChoice>, AppError> {
    match value {
        None => {
            let mut methods = vec![MethodChoice::Proposal];
            if have_unary {
                methods.push(MethodChoice::Scene);
            }
            if have_full {
                methods.push(MethodChoice::Full);
            }
            Ok(methods)
        }
        Some(list) => {
            let mut methods = Vec::new();
            for part in list.split(',') {
                let m = match part.trim() {
                    "proposal" => MethodChoice::Proposal,
                    "scene" => MethodChoice::Scene,
                    "full" => MethodChoice::Full,
                    other => {
                        return Err(AppError::usage(format!(
                            "unknown method `{other}` (expected proposal, scene, full)"
                        )))
                    }
                };
                if !methods.contains(&m) {
                    methods.push(m);
                }
            }
            if methods.is_empty() {
                return Err(AppError::usage("--methods lists nothing"));
            }
            Ok(methods)
        }
    }
}

fn load_model_checked(path: &Path, config: &GenConfig) -> Result<Policy, AppError> {
    let (policy, catalog, _) = scout_core::load_model(path)?;
    if catalog != config.catalog {
        return Err(AppError::data(format!(
            "model {} was trained on different classes than the configuration",
            path.display()
        )));
    }
    Ok(policy)
}

fn cmd_eval(args: EvalArgs) -> Result<(), AppError> {
    let config = load_config(args.config.as_deref())?;
    let corpus = load_corpus(&config, &args.corpus)?;
    let query = parse_query(&config, &args.query)?;
    let budget_max = args.budget_max.unwrap_or(config.top_k);
    let budgets = budget_grid(args.interval, budget_max)?;
    let opts = EvalOptions {
        noise_seed: args.noise_seed,
        nms_iou: args.nms_iou,
        match_mode: parse_match_mode(&args.match_mode)?,
        ap_mode: match args.ap {
            ApChoice::Pooled => APMode::Pooled,
            ApChoice::PerScene => APMode::PerScene,
        },
    };
    let methods = parse_methods(
        args.methods.as_deref(),
        args.model_full.is_some() || args.traces.is_some(),
        args.model_unary.is_some(),
    )?;

    let mut curves: Vec<APCurve> = Vec::new();
    for method in &methods {
        let curve = match method {
            MethodChoice::Proposal => {
                curve_proposal_rank(&config, &corpus, query, &budgets, &opts)?
            }
            MethodChoice::Scene => {
                let path = args.model_unary.as_ref().ok_or_else(|| {
                    AppError::usage("method `scene` needs --model-unary")
                })?;
                let policy = load_model_checked(path, &config)?;
                curve_scene_context(&config, &corpus, query, &policy, &budgets, &opts)?
            }
            MethodChoice::Full => match (&args.traces, &args.model_full) {
                (Some(_), Some(_)) => {
                    return Err(AppError::usage(
                        "pass --traces or --model-full for the `full` method, not both",
                    ))
                }
                (Some(path), None) => {
                    let traces = read_traces(path)?;
                    curve_from_traces(&corpus, &traces, query, &budgets, &opts)?
                }
                (None, Some(path)) => {
                    let policy = load_model_checked(path, &config)?;
                    curve_full_strategy(
                        &config,
                        &corpus,
                        query,
                        Some(&policy),
                        RolloutMode::Policy,
                        &budgets,
                        &opts,
                    )?
                }
                (None, None) => {
                    return Err(AppError::usage(
                        "method `full` needs --model-full or --traces",
                    ))
                }
            },
        };
        curves.push(curve);
    }

    let mut csv = String::from("method,query_class,regions_processed,ap\n");
    let query_name = config.catalog.name(query);
    for curve in &curves {
        for point in &curve.points {
            csv.push_str(&format!(
                "{},{},{},{}\n",
                curve.method.as_str(),
                query_name,
                point.regions_processed,
                point.ap
            ));
        }
    }
    match &args.out {
        Some(path) => {
            write_text(path, &csv)?;
            println!("wrote {} curve rows to {}", curves.iter().map(|c| c.points.len()).sum::<usize>(), path.display());
        }
        None => print!("{csv}"),
    }
    Ok(())
}

/// One parsed feature-table row.
struct TableRow {
    id: String,
    features: Vec<f64>,
    fixed: bool,
}

fn parse_feature_table(text: &str) -> Result<Vec<TableRow>, AppError> {
    let mut rows: Vec<TableRow> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        if cols.len() < 3 {
            if lineno == 0 {
                continue; // header or stub line
            }
            return Err(AppError::data(format!(
                "line {}: need id, at least one feature, and a label",
                lineno + 1
            )));
        }
        let feature_cols = &cols[1..cols.len() - 1];
        let parsed: Option<Vec<f64>> = feature_cols
            .iter()
            .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
            .collect();
        let label_col = cols[cols.len() - 1];
        let label = match label_col {
            "1" | "true" => Some(true),
            "0" | "false" => Some(false),
            _ => None,
        };
        match (parsed, label) {
            (Some(features), Some(fixed)) => {
                if let Some(w) = width {
                    if features.len() != w {
                        return Err(AppError::data(format!(
                            "line {}: expected {} feature columns, found {}",
                            lineno + 1,
                            w,
                            features.len()
                        )));
                    }
                } else {
                    width = Some(features.len());
                }
                rows.push(TableRow {
                    id: cols[0].to_string(),
                    features,
                    fixed,
                });
            }
            _ if lineno == 0 => continue, // header
            _ => {
                return Err(AppError::data(format!(
                    "line {}: unparsable feature or label value",
                    lineno + 1
                )))
            }
        }
    }
    if rows.is_empty() {
        return Err(AppError::data("the feature table holds no data rows"));
    }
    Ok(rows)
}

fn cmd_subset(
    features: &Path,
    k: Option<usize>,
    seed: u64,
    max_passes: usize,
    out: Option<&Path>,
) -> Result<(), AppError> {
    let text = std::fs::read_to_string(features)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", features.display())))?;
    let rows = parse_feature_table(&text)?;
    let n = rows.len();
    let dim = rows[0].features.len();
    let fixed: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.fixed)
        .map(|(i, _)| i)
        .collect();
    let k = match k {
        Some(k) => k,
        None => {
            if fixed.is_empty() {
                return Err(AppError::usage(
                    "no labeled rows to size the subset from; pass --k",
                ));
            }
            (5 * fixed.len()).min(n)
        }
    };
    let matrix = nalgebra::DMatrix::from_fn(n, dim, |r, c| rows[r].features[c]);
    let problem = SubsetProblem::new(&matrix, fixed, k)?;
    let solution = select_subset(&problem, max_passes, seed)?;

    let mut text = String::new();
    for &i in &solution.selection {
        text.push_str(&rows[i].id);
        text.push('\n');
    }
    text.push_str(&format!("# logdet={}\n", solution.logdet));
    match out {
        Some(path) => {
            write_text(path, &text)?;
            println!(
                "kept {} of {} rows (logdet {})",
                solution.selection.len(),
                n,
                solution.logdet
            );
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn read_traces(path: &Path) -> Result<Vec<ExplorationTrace>, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::data(format!("cannot read {}: {e}", path.display())))?;
    let mut traces = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let trace: ExplorationTrace = serde_json::from_str(line).map_err(|e| {
            AppError::data(format!(
                "{}:{}: bad trace record: {e}",
                path.display(),
                lineno + 1
            ))
        })?;
        traces.push(trace);
    }
    Ok(traces)
}
