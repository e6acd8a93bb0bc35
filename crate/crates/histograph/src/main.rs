//! Thin command-line front end; all logic lives in the library.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use histograph::coarsen::{coarsen, flatten_labels, resolve_embeddings, EmbeddingSource};
use histograph::config::RunConfig;
use histograph::error::Error;
use histograph::eval::{t_test, Split};
use histograph::features::{
    extract_node_features, prune_correlated, FeatureCatalog, NucleiMap,
};
use histograph::pipeline::{
    self, explain_slide, predict_slide, run_pipeline, sweep, SlideFeatureFile, SweepParam,
    TrainMode,
};
use histograph::raster::RgbImage;
use histograph::superpixel::{build_rag, slic, target_region_count, LabelMap, RegionGraph};
use histograph::synth::{self, SynthParams};
use histograph::tissue::{segment_tissue, MaskParams, TissueMask};

#[derive(Parser)]
#[command(name = "histograph", version, about = "Tissue images to region graphs, graph attention classifiers, and attributed predictions")]
struct Cli {
    /// TOML run configuration; omitted fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed (pipeline and training).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Slide-level parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory for run artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tissue mask from saturation Otsu plus morphology.
    Mask(MaskArgs),
    /// Region graph construction and coarsening.
    #[command(subcommand)]
    Graph(GraphCmd),
    /// Node feature extraction and correlation pruning.
    #[command(subcommand)]
    Features(FeaturesCmd),
    /// Per-slide stages plus training and evaluation per the config.
    Run(ManifestArgs),
    /// Train a model (optionally with the random-search protocol).
    Train(TrainArgs),
    /// Class probabilities for one slide from a finished run.
    Predict(SlideArgs),
    /// Integrated-gradients explanation with overlay and feature report.
    Explain(ExplainArgs),
    /// Metrics of a finished run over a manifest split, or a t-test.
    Evaluate(EvaluateArgs),
    /// Table of metrics across tau or xi values.
    Sweep(SweepArgs),
    /// Generate the synthetic benchmark fixtures.
    Synth(SynthArgs),
}

#[derive(Args)]
struct MaskArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    out_mask: PathBuf,
    #[arg(long)]
    close_radius: Option<u32>,
    #[arg(long)]
    open_radius: Option<u32>,
    #[arg(long)]
    min_area: Option<u64>,
}

#[derive(Subcommand)]
enum GraphCmd {
    /// SLIC superpixels plus the region adjacency graph.
    Build(GraphBuildArgs),
    /// Greedy similarity merging down to the coarsened graph.
    Coarsen(GraphCoarsenArgs),
}

#[derive(Args)]
struct GraphBuildArgs {
    #[arg(long)]
    image: PathBuf,
    /// Precomputed mask PNG; segmented on the fly when absent.
    #[arg(long)]
    mask: Option<PathBuf>,
    #[arg(long)]
    out_labels: PathBuf,
    #[arg(long)]
    out_graph: PathBuf,
}

#[derive(Args)]
struct GraphCoarsenArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    tau: f64,
    /// `builtin` or a path to a per-region embedding file.
    #[arg(long, default_value = "builtin")]
    embeddings: String,
    #[arg(long)]
    out_graph: PathBuf,
    #[arg(long)]
    out_trace: PathBuf,
    #[arg(long)]
    out_labels: PathBuf,
}

#[derive(Subcommand)]
enum FeaturesCmd {
    /// Full texture + morphology + nuclei vector per region.
    Extract(FeaturesExtractArgs),
    /// Correlation pruning over pooled training feature files.
    Prune(FeaturesPruneArgs),
}

#[derive(Args)]
struct FeaturesExtractArgs {
    #[arg(long)]
    image: PathBuf,
    /// Flattened (coarsened) label map.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    graph: PathBuf,
    /// Nuclei instance PNG; its type sidecar sits next to it as .csv.
    #[arg(long)]
    nuclei: Option<PathBuf>,
    #[arg(long)]
    slide_id: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesPruneArgs {
    /// Feature files of the training split.
    #[arg(long, required = true, num_args = 1..)]
    features: Vec<PathBuf>,
    #[arg(long)]
    xi: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ManifestArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// 25-trial random search over learning rate and weight decay.
    #[arg(long)]
    search: bool,
}

#[derive(Args)]
struct SlideArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    slide: String,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    slide: String,
    /// Target class; the predicted class when omitted.
    #[arg(long)]
    class: Option<usize>,
    #[arg(long, default_value_t = 64)]
    steps: u32,
    #[arg(long, default_value_t = 10)]
    top_k: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Two JSON score arrays: prints the two-sample t-test p-value.
    #[arg(long, num_args = 2)]
    compare: Option<Vec<PathBuf>>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, value_parser = ["tau", "xi"])]
    param: String,
    /// Comma-separated values, e.g. 0.5,0.8,0.9,0.95,1.0
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    slides: usize,
    #[arg(long, default_value_t = 96)]
    size: u32,
}

fn load_config(cli: &Cli) -> Result<RunConfig, Error> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load_toml(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(Error::Config(msg)) => {
            eprintln!("configuration error: {msg}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Mask(args) => {
            let img = RgbImage::load(&args.image)?;
            let params = MaskParams {
                close_radius: args.close_radius.unwrap_or(cfg.mask.close_radius),
                open_radius: args.open_radius.unwrap_or(cfg.mask.open_radius),
                min_component_area: args.min_area.unwrap_or(cfg.mask.min_component_area),
            };
            let mask = segment_tissue(&img, &params)?;
            mask.save_png(&args.out_mask)?;
            println!(
                "mask: {} of {} pixels foreground",
                mask.area(),
                (mask.width as u64) * (mask.height as u64)
            );
        }
        Command::Graph(GraphCmd::Build(args)) => {
            let img = RgbImage::load(&args.image)?;
            let mask = match &args.mask {
                Some(p) => TissueMask::load(p)?,
                None => segment_tissue(&img, &cfg.mask.params())?,
            };
            let k = target_region_count(
                mask.area(),
                cfg.superpixel.seg_mag,
                cfg.superpixel.ref_mag,
                cfg.superpixel.target_side,
            )?;
            let k = (k as u64).min(mask.area()) as u32;
            let labels = slic(&img, &mask, k, &cfg.superpixel.slic_params())?;
            let mut graph = build_rag(&labels);
            graph.embeddings = Some(resolve_embeddings(
                &EmbeddingSource::Builtin,
                &img,
                &labels,
                &graph,
            )?);
            labels.save_png16(&args.out_labels)?;
            graph.save_json(&args.out_graph)?;
            println!(
                "graph: {} regions, {} edges",
                graph.nodes.len(),
                graph.edges.len()
            );
        }
        Command::Graph(GraphCmd::Coarsen(args)) => {
            let img = RgbImage::load(&args.image)?;
            let graph = RegionGraph::load_json(&args.graph)?;
            let labels = LabelMap::load_png16(&args.labels)?;
            let source = if args.embeddings == "builtin" {
                EmbeddingSource::Builtin
            } else {
                EmbeddingSource::File(PathBuf::from(&args.embeddings))
            };
            let embeddings = match (&source, &graph.embeddings) {
                (EmbeddingSource::Builtin, Some(e)) => e.clone(),
                _ => resolve_embeddings(&source, &img, &labels, &graph)?,
            };
            let (coarse, trace) = coarsen(&graph, &embeddings, args.tau)?;
            let flat = flatten_labels(&labels, &trace)?;
            coarse.save_json(&args.out_graph)?;
            trace.save_json(&args.out_trace)?;
            flat.save_png16(&args.out_labels)?;
            println!(
                "coarsen: {} -> {} nodes in {} merges",
                graph.nodes.len(),
                coarse.nodes.len(),
                trace.steps.len()
            );
        }
        Command::Features(FeaturesCmd::Extract(args)) => {
            let img = RgbImage::load(&args.image)?;
            let labels = LabelMap::load_png16(&args.labels)?;
            let graph = RegionGraph::load_json(&args.graph)?;
            let nuclei = match &args.nuclei {
                Some(p) => NucleiMap::load(p, &p.with_extension("csv"))?,
                None => NucleiMap::empty(labels.width, labels.height),
            };
            let catalog = FeatureCatalog::new(cfg.features.catalog_params());
            let mut rows = Vec::new();
            for node in &graph.nodes {
                rows.push(extract_node_features(&img, &labels, node, &nuclei, &catalog)?);
            }
            let file = SlideFeatureFile {
                slide_id: args
                    .slide_id
                    .clone()
                    .unwrap_or_else(|| args.image.file_stem().unwrap_or_default().to_string_lossy().into_owned()),
                feature_names: catalog.names(),
                node_ids: graph.nodes.iter().map(|n| n.id).collect(),
                rows,
            };
            let out = std::fs::File::create(&args.out).map_err(|e| Error::io(&args.out, e))?;
            serde_json::to_writer_pretty(std::io::BufWriter::new(out), &file)
                .map_err(|e| Error::format(&args.out, e.to_string()))?;
            println!("features: {} nodes x {} entries", file.rows.len(), catalog.len());
        }
        Command::Features(FeaturesCmd::Prune(args)) => {
            let mut rows = Vec::new();
            let mut catalog = FeatureCatalog::new(cfg.features.catalog_params());
            for path in &args.features {
                let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
                let parsed: SlideFeatureFile =
                    serde_json::from_reader(std::io::BufReader::new(file))
                        .map_err(|e| Error::format(path, e.to_string()))?;
                if parsed.feature_names != catalog.names() {
                    return Err(Error::format(path, "feature names do not match the catalog"));
                }
                rows.extend(parsed.rows);
            }
            catalog.active = prune_correlated(&rows, args.xi)?;
            catalog.save_json(&args.out)?;
            println!(
                "prune: {} of {} features active at xi = {}",
                catalog.active_indices().len(),
                catalog.len(),
                args.xi
            );
        }
        Command::Run(args) => {
            let summary = run_pipeline(&args.manifest, &cfg, &cli.out, None, TrainMode::Single)?;
            print_summary(&summary);
            if !summary.failures.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Train(args) => {
            let mode = if args.search {
                TrainMode::Search
            } else {
                TrainMode::Single
            };
            let summary = run_pipeline(&args.manifest, &cfg, &cli.out, None, mode)?;
            print_summary(&summary);
            if !summary.failures.is_empty() {
                return Ok(ExitCode::from(1));
            }
        }
        Command::Predict(args) => {
            let probs = predict_slide(&args.run, &args.manifest, &args.slide)?;
            println!("{}", serde_json::to_string(&probs).expect("serializes"));
        }
        Command::Explain(args) => {
            let report = explain_slide(
                &args.run,
                &args.manifest,
                &args.slide,
                args.class,
                args.steps,
                args.top_k,
            )?;
            println!(
                "explain: class {} gap {:.2e} (|delta| {:.3})",
                report.target_class,
                report.completeness_gap,
                report.output_delta.abs()
            );
            for f in &report.top_features {
                println!(
                    "  {:<44} attribution {:>9.4}  value {:>12.4}  pct {:>3.0}",
                    f.name, f.attribution, f.region_value, f.training_percentile
                );
            }
        }
        Command::Evaluate(args) => {
            if let Some(paths) = &args.compare {
                let read = |p: &PathBuf| -> Result<Vec<f64>, Error> {
                    let file = std::fs::File::open(p).map_err(|e| Error::io(p, e))?;
                    serde_json::from_reader(std::io::BufReader::new(file))
                        .map_err(|e| Error::format(p, e.to_string()))
                };
                let p = t_test(&read(&paths[0])?, &read(&paths[1])?)?;
                println!("t-test p-value: {p:.6}");
            } else {
                let (run, manifest) = match (&args.run, &args.manifest) {
                    (Some(r), Some(m)) => (r, m),
                    _ => {
                        return Err(Error::Config(
                            "evaluate needs --run and --manifest (or --compare)".to_string(),
                        ));
                    }
                };
                let split = match args.split.as_str() {
                    "train" => Split::Train,
                    "val" => Split::Val,
                    "test" => Split::Test,
                    other => {
                        return Err(Error::Config(format!("unknown split {other:?}")));
                    }
                };
                let report = pipeline::evaluate_run(run, manifest, split)?;
                print!("{}", report.render());
            }
        }
        Command::Sweep(args) => {
            let param = match args.param.as_str() {
                "tau" => SweepParam::Tau,
                _ => SweepParam::Xi,
            };
            let table = sweep(&args.manifest, &cfg, param, &args.values, &cli.out)?;
            print!("{}", table.render());
        }
        Command::Synth(args) => {
            let manifest = synth::generate(
                &cli.out,
                &SynthParams {
                    slides: args.slides,
                    seed: cfg.seed,
                    size: args.size,
                },
            )?;
            println!("synth: wrote {}", manifest.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn print_summary(summary: &pipeline::RunSummary) {
    println!(
        "slides: {} ok, {} failed; stage cache hits {}/{}",
        summary.slides.len(),
        summary.failures.len(),
        summary.cache_hits,
        summary.stages_run
    );
    for (id, err) in &summary.failures {
        println!("  failed {id}: {err}");
    }
    if let Some(m) = &summary.metrics {
        print!("{}", m.render());
    }
}
