//! Command-line entry point.

pub mod config;
pub mod manifest;

use std::collections::BTreeSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use crate::datagen::{CaptionItem, DatagenConfig, GeneratedPair, Generator, ObjectSource, Pipeline, RunOutput, VqaItem};
use crate::encoders::{EncoderBundle, ToyConfig};
use crate::error::{Error, Result};
use crate::eval::{self, BenchmarkReport, CommandAdapter};
use crate::finetune::{self, DataConfig, ImageEmbeddings, TrainConfig};
use crate::jsonl::{read_jsonl, write_json, write_jsonl};
use crate::model_clients::{CachedClient, ChatClient, ClientConfig, HttpClient, StubClient};
use crate::negref;
use crate::text_negation::{scan_file, CorpusFormat, NegationLexicon};

use config::FileConfig;
use manifest::ManifestBuilder;

#[derive(Debug, Parser)]
#[command(name = "negclip", version, about = "Negation-aware contrastive image-text toolkit")]
pub struct Cli {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Count negated captions and negation tokens in a corpus.
    Stats(StatsArgs),
    /// Generate negation-augmented caption pairs.
    Generate(GenerateArgs),
    /// Build the negation retrieval benchmark from region annotations.
    BuildBenchmark(BuildArgs),
    /// Create a seeded in-process bundle.
    InitBundle(InitArgs),
    /// Fine-tune a bundle's text tower on generated pairs.
    Finetune(FinetuneArgs),
    /// Score a bundle or generator with one protocol.
    Evaluate(EvaluateArgs),
    /// Replace a bundle's text tower with one from a checkpoint.
    SwapEncoder(SwapArgs),
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<CorpusFormat>,
    /// Comma-separated negation terms.
    #[arg(long)]
    pub lexicon: Option<String>,
    /// Report path; defaults to `<input>.stats.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PipelineArg {
    P1,
    P2,
    RandP1,
    Original,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_enum)]
    pub pipeline: PipelineArg,
    /// Caption items (p1, rand-p1), VQA items (p2) or generated pairs (original).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_items: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Answer both models from a stub map instead of HTTP endpoints.
    #[arg(long)]
    pub stub_map: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long)]
    pub lexicon: Option<String>,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long)]
    pub annotations: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub min_dim: Option<u32>,
    #[arg(long)]
    pub lexicon: Option<String>,
}

#[derive(Debug, Args)]
pub struct InitArgs {
    #[arg(long)]
    pub arch: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub buckets: Option<usize>,
    #[arg(long)]
    pub image_size: Option<u32>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    /// Generated-pair files.
    #[arg(long = "pairs", required = true, num_args = 1..)]
    pub pairs: Vec<PathBuf>,
    /// Output directory for the text-tower checkpoint and training log.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated subset of p1, p2, rand-p1, original.
    #[arg(long)]
    pub sources: Option<String>,
    /// Expected architecture tag of the bundle.
    #[arg(long)]
    pub arch: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Negrefcocog,
    Existence,
    BalancedAccuracy,
    ZeroShot,
    Recall,
    NegScore,
    Absence,
    Segmentation,
}

impl Protocol {
    fn needs_bundle(self) -> bool {
        matches!(
            self,
            Protocol::Negrefcocog
                | Protocol::Existence
                | Protocol::BalancedAccuracy
                | Protocol::ZeroShot
                | Protocol::Recall
        )
    }
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub protocol: Protocol,
    #[arg(long)]
    pub bundle: Option<PathBuf>,
    /// Protocol input; neg-score falls back to its bundled prompt table.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Adapter program for generation, detection or segmentation.
    #[arg(long)]
    pub adapter: Option<String>,
    #[arg(long = "adapter-arg", allow_hyphen_values = true)]
    pub adapter_args: Vec<String>,
    /// Comma-separated generation seeds.
    #[arg(long, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub image_root: Option<PathBuf>,
    /// Attribute prompt table (balanced-accuracy).
    #[arg(long)]
    pub prompts: Option<PathBuf>,
    /// Class names, one per line (zero-shot).
    #[arg(long)]
    pub classes: Option<PathBuf>,
    #[arg(long, default_value = eval::ZERO_SHOT_TEMPLATE)]
    pub template: String,
    /// Image pool (recall).
    #[arg(long)]
    pub pool: Option<PathBuf>,
    /// Stub map for the VQA model (neg-score).
    #[arg(long)]
    pub stub_map: Option<PathBuf>,
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SwapArgs {
    #[arg(long)]
    pub bundle: PathBuf,
    #[arg(long)]
    pub text_tower: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), e.to_string().replace('\n', " "));
            1
        }
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    match cli.command {
        Command::Stats(a) => stats(a, &file),
        Command::Generate(a) => generate(a, &file),
        Command::BuildBenchmark(a) => build_benchmark(a, &file),
        Command::InitBundle(a) => init_bundle(a),
        Command::Finetune(a) => finetune_cmd(a, &file),
        Command::Evaluate(a) => evaluate(a, &file),
        Command::SwapEncoder(a) => swap_encoder(a),
    }
}

fn lexicon(flag: Option<&str>, file: Option<&NegationLexicon>) -> Result<NegationLexicon> {
    match (flag, file) {
        (Some(list), _) => NegationLexicon::parse_list(list),
        (None, Some(l)) => Ok(l.clone()),
        (None, None) => Ok(NegationLexicon::default()),
    }
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn stats(a: StatsArgs, file: &FileConfig) -> Result<()> {
    let mut m = ManifestBuilder::start("stats");
    let format = a.format.or(file.stats.format).unwrap_or_else(|| CorpusFormat::from_path(&a.input));
    let lexicon = lexicon(a.lexicon.as_deref(), file.stats.lexicon.as_ref())?;
    let report = scan_file(&a.input, format, &lexicon)?;
    let out = a.out.unwrap_or_else(|| suffixed(&a.input, ".stats.json"));
    write_json(&out, &report)?;
    println!("{}", serde_json::to_string(&report).expect("report serializes"));
    m.config(json!({"format": format, "lexicon": lexicon}))
        .input(&a.input)?
        .output(&out)?;
    m.finish(&out)?;
    Ok(())
}

fn http_client(config: Option<&ClientConfig>, role: &str, cache: Option<&Path>) -> Result<Box<dyn ChatClient>> {
    let config = config
        .cloned()
        .ok_or_else(|| Error::Config(format!("no [{role}] client configured and no stub map given")))?;
    let cache = cache.map(Path::to_path_buf).or_else(|| config.cache_dir.clone());
    let client = HttpClient::new(config)?;
    Ok(match cache {
        Some(dir) => Box::new(CachedClient::new(client, dir.join(role))?),
        None => Box::new(client),
    })
}

fn generate(a: GenerateArgs, file: &FileConfig) -> Result<()> {
    let mut m = ManifestBuilder::start("generate");
    let g = &file.generate;
    let lexicon = lexicon(a.lexicon.as_deref(), g.lexicon.as_ref())?;
    let mut config = DatagenConfig {
        seed: a.seed.or(g.seed).unwrap_or(0),
        max_items: a.max_items.or(g.max_items),
        width: a.width.or(g.width).unwrap_or(1),
        image_root: a.image_root.clone().or_else(|| g.image_root.clone()),
        lexicon,
        ..DatagenConfig::default()
    };
    if let Some(v) = &g.vocabulary {
        config.vocabulary = v.clone();
    }
    m.input(&a.input)?;

    if a.pipeline == PipelineArg::Original {
        let source: Vec<GeneratedPair> = read_jsonl(&a.input)?;
        let pairs: Vec<GeneratedPair> = source.iter().map(|p| p.to_original_caption(&config.lexicon)).collect();
        write_jsonl(&a.out, &pairs)?;
        println!("{}", json!({"pairs": pairs.len()}));
        m.config(json!({"pipeline": "original"})).output(&a.out)?;
        m.finish(&a.out)?;
        return Ok(());
    }

    let stub_map = a.stub_map.clone().or_else(|| g.stub_map.clone());
    let (llm, mllm): (Box<dyn ChatClient>, Box<dyn ChatClient>) = match &stub_map {
        Some(path) => {
            m.input(path)?;
            (
                Box::new(StubClient::from_file("stub-llm", path)?),
                Box::new(StubClient::from_file("stub-mllm", path)?),
            )
        }
        None => {
            let cache = file.cache_dir(a.cache_dir.as_deref());
            (
                http_client(g.llm.as_ref(), "llm", cache.as_deref())?,
                http_client(g.mllm.as_ref(), "mllm", cache.as_deref())?,
            )
        }
    };
    let resolved = json!({
        "pipeline": format!("{:?}", a.pipeline),
        "seed": config.seed,
        "max_items": config.max_items,
        "width": config.width,
        "image_root": config.image_root,
        "lexicon": config.lexicon,
        "stub_map": stub_map,
        "llm": llm.model(),
        "mllm": mllm.model(),
    });
    let generator = Generator::new(llm.as_ref(), mllm.as_ref(), config);
    let output: RunOutput = match a.pipeline {
        PipelineArg::P1 | PipelineArg::RandP1 => {
            let items: Vec<CaptionItem> = read_jsonl(&a.input)?;
            let source = if a.pipeline == PipelineArg::P1 { ObjectSource::Plausible } else { ObjectSource::Random };
            generator.run_pipeline1(&items, source)?
        }
        PipelineArg::P2 => {
            let items: Vec<VqaItem> = read_jsonl(&a.input)?;
            generator.run_pipeline2(&items)?
        }
        PipelineArg::Original => unreachable!("handled above"),
    };
    let report_path = output.write(&a.out)?;
    println!("{}", serde_json::to_string(&output.report).expect("report serializes"));
    m.config(resolved).output(&a.out)?.output(&report_path)?;
    m.finish(&a.out)?;
    Ok(())
}

fn build_benchmark(a: BuildArgs, file: &FileConfig) -> Result<()> {
    let mut m = ManifestBuilder::start("build-benchmark");
    let lexicon = lexicon(a.lexicon.as_deref(), file.build_benchmark.lexicon.as_ref())?;
    let min_dim = a.min_dim.or(file.build_benchmark.min_dim).unwrap_or(negref::DEFAULT_MIN_DIM);
    let annotations = negref::load_annotations(&a.annotations)?;
    let triplets = negref::build(&annotations, &lexicon, min_dim);
    write_jsonl(&a.out, &triplets)?;
    println!("{}", json!({"annotations": annotations.len(), "triplets": triplets.len()}));
    m.config(json!({"min_dim": min_dim, "lexicon": lexicon}))
        .input(&a.annotations)?
        .output(&a.out)?;
    m.finish(&a.out)?;
    Ok(())
}

fn init_bundle(a: InitArgs) -> Result<()> {
    let mut m = ManifestBuilder::start("init-bundle");
    let defaults = ToyConfig::default();
    let config = ToyConfig {
        dim: a.dim.unwrap_or(defaults.dim),
        buckets: a.buckets.unwrap_or(defaults.buckets),
        image_size: a.image_size.unwrap_or(defaults.image_size),
        ..defaults
    };
    let bundle = EncoderBundle::init_toy(&a.arch, &config, a.seed)?;
    bundle.save(&a.out)?;
    m.config(json!({"arch": a.arch, "seed": a.seed, "toy": config})).output(&a.out)?;
    m.finish(&a.out)?;
    Ok(())
}

fn parse_sources(list: &[String]) -> Result<BTreeSet<Pipeline>> {
    list.iter().map(|s| s.trim().parse()).collect()
}

fn finetune_cmd(a: FinetuneArgs, file: &FileConfig) -> Result<()> {
    let mut m = ManifestBuilder::start("finetune");
    let f = &file.finetune;
    let bundle = EncoderBundle::load(&a.bundle)?;
    if let Some(arch) = &a.arch {
        if arch != &bundle.architecture {
            return Err(Error::ArchitectureMismatch {
                bundle: bundle.architecture.clone(),
                checkpoint: arch.clone(),
            });
        }
    }
    let sources = match (&a.sources, &f.sources) {
        (Some(s), _) => parse_sources(&s.split(',').map(str::to_string).collect::<Vec<_>>())?,
        (None, Some(list)) => parse_sources(list)?,
        (None, None) => DataConfig::default().sources,
    };
    let data = DataConfig {
        sources,
        split_seed: a.split_seed.or(f.split_seed).unwrap_or(0),
        train_fraction: f.train_fraction.unwrap_or(0.8),
    };
    let mut train = TrainConfig::for_architecture(&bundle.architecture, a.batch_size.or(f.batch_size))?;
    train.epochs = a.epochs.or(f.epochs).unwrap_or(train.epochs);
    train.seed = a.seed.or(f.seed).unwrap_or(train.seed);
    train.learning_rate = a.learning_rate.or(f.learning_rate).unwrap_or(train.learning_rate);
    train.weight_decay = f.weight_decay.unwrap_or(train.weight_decay);
    train.logit_scale_trainable = f.logit_scale_trainable.unwrap_or(false);
    train.validate()?;
    let image_root = a.image_root.clone().or_else(|| f.image_root.clone());

    for p in &a.pairs {
        m.input(p)?;
    }
    m.input(&a.bundle)?;
    let (train_set, val_set) = finetune::assemble(&a.pairs, &data)?;
    let images = ImageEmbeddings::compute(&bundle, train_set.iter().chain(&val_set), image_root.as_deref())?;
    let outcome = finetune::train(&bundle, &train_set, &val_set, &images, &train)?;
    outcome.bundle.export_text_tower(&a.out)?;
    let log_path = a.out.join("train_log.jsonl");
    write_jsonl(&log_path, &outcome.log)?;
    let summary = json!({
        "train_pairs": train_set.len(),
        "val_pairs": val_set.len(),
        "steps": outcome.steps,
        "best_epoch": outcome.best_epoch,
        "best_val_loss": outcome.best_val_loss,
        "text_digest": outcome.bundle.text_digest(),
        "vision_digest": outcome.vision_digest,
    });
    println!("{summary}");
    m.config(json!({"data": data, "train": train, "image_root": image_root, "summary": summary}))
        .output(&a.out)?;
    m.finish(&a.out)?;
    Ok(())
}

fn adapter(a: &EvaluateArgs, file: &FileConfig) -> Result<CommandAdapter> {
    match &a.adapter {
        Some(program) => Ok(CommandAdapter::new(program, a.adapter_args.clone())),
        None => file
            .evaluate
            .adapter
            .clone()
            .ok_or_else(|| Error::Config("this protocol needs --adapter".into())),
    }
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

fn evaluate(a: EvaluateArgs, file: &FileConfig) -> Result<()> {
    let mut m = ManifestBuilder::start("evaluate");
    let e = &file.evaluate;
    let bundle = if a.protocol.needs_bundle() {
        let dir = a.bundle.as_ref().ok_or_else(|| Error::Config("this protocol needs --bundle".into()))?;
        let bundle = EncoderBundle::load(dir)?;
        m.input(dir)?;
        Some(bundle)
    } else {
        None
    };
    let root = a.image_root.clone().or_else(|| e.image_root.clone());
    let root = root.as_deref();
    let seeds = a.seeds.clone().or_else(|| e.seeds.clone()).unwrap_or_else(|| vec![0, 1, 2, 3, 4]);
    let threshold = a.threshold.or(e.threshold).unwrap_or(0.3);
    let k = a.k.or(e.k).unwrap_or(5);
    let input = |what: &str| -> Result<PathBuf> {
        a.input.clone().ok_or_else(|| Error::Config(format!("{what} needs --input")))
    };
    if let Some(p) = &a.input {
        m.input(p)?;
    }
    let report: BenchmarkReport = match a.protocol {
        Protocol::Negrefcocog => {
            let triplets: Vec<negref::NegTriplet> = read_jsonl(&input("negrefcocog")?)?;
            eval::score_negrefcocog(&triplets, bundle.as_ref().expect("loaded"), root)?
        }
        Protocol::Existence => {
            let items: Vec<eval::ExistenceItem> = read_jsonl(&input("existence")?)?;
            eval::score_existence(&items, bundle.as_ref().expect("loaded"), root)?
        }
        Protocol::BalancedAccuracy => {
            let items: Vec<eval::AttributeItem> = read_jsonl(&input("balanced-accuracy")?)?;
            let prompts = match &a.prompts {
                Some(p) => {
                    m.input(p)?;
                    eval::assets::load_attribute_prompts(p)?
                }
                None => eval::celeba_prompts(),
            };
            eval::balanced_accuracy_attributes(&items, &prompts, bundle.as_ref().expect("loaded"), root)?
        }
        Protocol::ZeroShot => {
            let items: Vec<eval::ClassifyItem> = read_jsonl(&input("zero-shot")?)?;
            let classes = match &a.classes {
                Some(p) => {
                    m.input(p)?;
                    read_lines(p)?
                }
                None => items.iter().map(|i| i.label.clone()).collect::<BTreeSet<_>>().into_iter().collect(),
            };
            eval::zero_shot_classify(&items, &classes, &a.template, bundle.as_ref().expect("loaded"), root)?
        }
        Protocol::Recall => {
            let queries: Vec<eval::RecallQuery> = read_jsonl(&input("recall")?)?;
            let pool_path = a.pool.as_ref().ok_or_else(|| Error::Config("recall needs --pool".into()))?;
            m.input(pool_path)?;
            let pool: Vec<eval::PoolImage> = read_jsonl(pool_path)?;
            eval::recall_at_k(&queries, &pool, k, bundle.as_ref().expect("loaded"), root)?
        }
        Protocol::NegScore => {
            let prompts = match &a.input {
                Some(p) => eval::assets::load_neg_prompts(p)?,
                None => eval::neg_score_prompts(),
            };
            let generator = adapter(&a, file)?;
            let stub = a.stub_map.clone().or_else(|| e.stub_map.clone());
            let mllm: Box<dyn ChatClient> = match &stub {
                Some(p) => {
                    m.input(p)?;
                    Box::new(StubClient::from_file("stub-mllm", p)?)
                }
                None => http_client(e.mllm.as_ref(), "mllm", file.cache_dir(a.cache_dir.as_deref()).as_deref())?,
            };
            eval::neg_score(&prompts, &generator, mllm.as_ref(), &seeds)?
        }
        Protocol::Absence => {
            let objects = read_lines(&input("absence")?)?;
            let adapter = adapter(&a, file)?;
            eval::absence_check(&objects, &adapter, &adapter, &seeds)?
        }
        Protocol::Segmentation => {
            let items: Vec<eval::SegmentationItem> = read_jsonl(&input("segmentation")?)?;
            eval::segmentation_protocol(&items, &adapter(&a, file)?, threshold, root)?
        }
    };
    let out = a.out.clone().unwrap_or_else(|| PathBuf::from(format!("{}.report.json", report.protocol)));
    report.save(&out)?;
    println!(
        "{}",
        json!({"protocol": report.protocol, "aggregate": report.aggregate, "items": report.items.len(), "excluded": report.excluded.len(), "flagged": report.flagged()})
    );
    m.config(json!({
        "protocol": report.protocol,
        "bundle": a.bundle,
        "seeds": seeds,
        "threshold": threshold,
        "k": k,
        "image_root": root,
    }))
    .output(&out)?;
    m.finish(&out)?;
    Ok(())
}

fn swap_encoder(a: SwapArgs) -> Result<()> {
    let mut m = ManifestBuilder::start("swap-encoder");
    let bundle = EncoderBundle::load(&a.bundle)?;
    let swapped = bundle.swap_text_tower(&a.text_tower)?;
    swapped.save(&a.out)?;
    m.config(json!({"architecture": swapped.architecture}))
        .input(&a.bundle)?
        .input(&a.text_tower)?
        .output(&a.out)?;
    m.finish(&a.out)?;
    Ok(())
}
