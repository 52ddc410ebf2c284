use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use roadwatch::dedup::{self, dedup_scan};
use roadwatch::evaluate::{evaluate_split, MatrixTable};
use roadwatch::explain::{self, TsneConfig};
use roadwatch::harvest::{self, BlobStore, DefaultFetcher, HarvestOptions, ProvidersFile};
use roadwatch::manifest::{
    self, assign_splits, build_negatives, class_counts, geo_stratify, ManifestStore, NegativeListings, NegativesSpec,
    RegionMap, Split, SplitRatios, GEO_CLASSES,
};
use roadwatch::preprocess::{compute_norm_stats, Image, NormStats};
use roadwatch::querygen::{Language, Lexicon, QueryPlan, QuerySpec, DEFAULT_LEXICON, DEFAULT_QUERY_PLAN};
use roadwatch::taxonomy::{ClassId, Taxonomy};
use roadwatch::trainer::{class_weights, load_split, train, Checkpoint, ClassFrequencyTable, TrainConfig, WeightSource};
use roadwatch_server::AppState;

#[derive(Parser)]
#[command(name = "roadwatch", version, about = "Road-incident image dataset and classifier toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search-query planning.
    Queries {
        #[command(subcommand)]
        command: QueriesCommand,
    },
    /// Run a query plan against the configured providers.
    Harvest(HarvestArgs),
    /// Mark exact and near-duplicate images as rejected.
    Dedup(DedupArgs),
    /// Inspect and split the manifest.
    Manifest {
        #[command(subcommand)]
        command: ManifestCommand,
    },
    /// Compute per-channel normalisation statistics over a split.
    Preprocess(PreprocessArgs),
    /// Train a classifier on the manifest's train and val splits.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a split.
    Eval(EvalArgs),
    /// Class activation maps and embedding projections.
    Explain {
        #[command(subcommand)]
        command: ExplainCommand,
    },
    /// Serve the curation HTTP API.
    Serve(ServeArgs),
}

#[derive(Subcommand)]
enum QueriesCommand {
    /// Expand synonym pairs for the given classes and languages.
    Plan(PlanArgs),
}

#[derive(Args)]
struct PlanArgs {
    /// Incident classes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    class: Vec<ClassId>,
    /// Query languages, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "en")]
    langs: Vec<Language>,
    /// Synonym-set file; the shipped plan when omitted.
    #[arg(long)]
    synonyms: Option<PathBuf>,
    /// Lexicon file; the shipped lexicon when omitted.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Write the plan as JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct StoreArgs {
    /// Manifest file.
    #[arg(long, env = "ROADWATCH_MANIFEST", default_value = "manifest.db")]
    manifest: PathBuf,
    /// Blob store root; `blobs/` next to the manifest when omitted.
    #[arg(long, env = "ROADWATCH_BLOBS")]
    blobs: Option<PathBuf>,
}

impl StoreArgs {
    fn blob_store(&self) -> BlobStore {
        blob_store(&self.manifest, self.blobs.as_deref())
    }

    fn open(&self) -> Result<ManifestStore> {
        ManifestStore::open(&self.manifest).with_context(|| format!("opening {}", self.manifest.display()))
    }
}

fn blob_store(manifest: &Path, blobs: Option<&Path>) -> BlobStore {
    match blobs {
        Some(b) => BlobStore::new(b),
        None => BlobStore::new(manifest.parent().unwrap_or(Path::new(".")).join("blobs")),
    }
}

#[derive(Args)]
struct HarvestArgs {
    /// Query plan written by `queries plan --out`.
    #[arg(long)]
    plan: PathBuf,
    /// Manifest to add records to (created if missing).
    #[arg(long)]
    out: PathBuf,
    /// Provider configuration file.
    #[arg(long, env = "ROADWATCH_PROVIDERS", default_value = "providers.toml")]
    providers: PathBuf,
    #[arg(long, env = "ROADWATCH_BLOBS")]
    blobs: Option<PathBuf>,
}

#[derive(Args)]
struct DedupArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Maximum Hamming distance between near-duplicate hashes.
    #[arg(long, default_value_t = dedup::DEFAULT_THRESHOLD)]
    threshold: u32,
    /// Write the clusters as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Report only; leave the manifest unchanged.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum ManifestCommand {
    /// Accepted images per class and gathering type, and per-provider yield.
    Counts(StoreArgs),
    /// Stratified per-class split of the accepted records.
    Split(SplitArgs),
    /// Regional holdout split (Wales as test).
    GeoSplit(GeoSplitArgs),
    /// Sample negatives from source listings.
    Negatives(NegativesArgs),
    /// Write every record as one JSON object per line.
    Export(ExportArgs),
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Train, val and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.7, 0.2, 0.1])]
    ratios: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GeoSplitArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Region rule file; the shipped bounding boxes when omitted.
    #[arg(long)]
    regions: Option<PathBuf>,
    /// Classes taking part besides negatives.
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<ClassId>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct NegativesArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// JSON map from source (`bdd`, `cityscapes`, `geograph_road_transport`) to listing entries.
    #[arg(long)]
    listings: PathBuf,
    /// Quota file (TOML); the default quotas when omitted.
    #[arg(long)]
    quotas: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PreprocessArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long)]
    stats_out: PathBuf,
    #[arg(long, default_value = "train")]
    split: Split,
    /// Side length images are resized to before measuring.
    #[arg(long, default_value_t = roadwatch::preprocess::MODEL_INPUT)]
    size: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    store: StoreArgs,
    /// Training configuration (TOML); defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Checkpoint directory.
    #[arg(long)]
    out: PathBuf,
    /// Normalisation statistics from `preprocess`; measured on the train split when omitted.
    #[arg(long)]
    norm: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct CheckpointArg {
    /// Checkpoint file, or `best` / `last` inside `--ckpt-dir`.
    #[arg(long)]
    ckpt: String,
    #[arg(long, default_value = "ckpt")]
    ckpt_dir: PathBuf,
}

impl CheckpointArg {
    fn path(&self) -> PathBuf {
        let direct = PathBuf::from(&self.ckpt);
        if direct.is_file() {
            return direct;
        }
        match self.ckpt.as_str() {
            "best" | "last" => self.ckpt_dir.join(format!("{}.ckpt", self.ckpt)),
            _ => direct,
        }
    }

    fn load(&self) -> Result<Checkpoint> {
        let path = self.path();
        Checkpoint::load(&path).with_context(|| format!("loading checkpoint {}", path.display()))
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    ckpt: CheckpointArg,
    #[command(flatten)]
    store: StoreArgs,
    /// `train`, `val`, `test` or `all`.
    #[arg(long, default_value = "test")]
    split: String,
    /// JSON report path; the rendered table goes next to it with a `.txt` extension.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ExplainCommand {
    /// Class activation map overlay for one image.
    Cam(CamArgs),
    /// Two-dimensional t-SNE projection of the embeddings of a split.
    Tsne(TsneArgs),
}

#[derive(Args)]
struct CamArgs {
    #[command(flatten)]
    ckpt: CheckpointArg,
    #[arg(long)]
    image: PathBuf,
    /// Class to explain; the predicted class when omitted.
    #[arg(long)]
    class: Option<ClassId>,
    /// Overlay PNG. The raw map is written next to it as `<stem>.map.png`.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    alpha: f32,
}

#[derive(Args)]
struct TsneArgs {
    #[command(flatten)]
    ckpt: CheckpointArg,
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, default_value = "all")]
    split: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ServeArgs {
    #[command(flatten)]
    store: StoreArgs,
    #[arg(long, env = "ROADWATCH_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "ROADWATCH_BIND", default_value = "127.0.0.1")]
    bind: std::net::IpAddr,
    /// Taxonomy file; the shipped tree when omitted.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Queries {
            command: QueriesCommand::Plan(a),
        } => queries_plan(a),
        Command::Harvest(a) => harvest_cmd(a),
        Command::Dedup(a) => dedup_cmd(a),
        Command::Manifest { command } => manifest_cmd(command),
        Command::Preprocess(a) => preprocess_cmd(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Explain { command } => match command {
            ExplainCommand::Cam(a) => cam_cmd(a),
            ExplainCommand::Tsne(a) => tsne_cmd(a),
        },
        Command::Serve(a) => serve_cmd(a),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// `all` means every accepted record.
fn parse_split(s: &str) -> Result<Option<Split>> {
    if s == "all" {
        return Ok(None);
    }
    Ok(Some(s.parse()?))
}

fn queries_plan(a: PlanArgs) -> Result<()> {
    let plan = match &a.synonyms {
        Some(p) => QueryPlan::parse(&read(p)?)?,
        None => QueryPlan::parse(DEFAULT_QUERY_PLAN)?,
    };
    let lexicon = match &a.lexicon {
        Some(p) => Lexicon::parse(&read(p)?)?,
        None => Lexicon::parse(DEFAULT_LEXICON)?,
    };
    let mut queries = Vec::new();
    for class in &a.class {
        let t = plan.plan(*class, &a.langs, &lexicon)?;
        for gap in &t.gaps {
            log::warn!("no {} translation for {:?}: missing {:?}", gap.language, gap.query, gap.missing_terms);
        }
        queries.extend(t.queries);
    }
    match &a.out {
        Some(path) => {
            write_json(path, &queries)?;
            eprintln!("{} queries written to {}", queries.len(), path.display());
        }
        None => {
            let mut out = std::io::stdout().lock();
            for q in &queries {
                writeln!(out, "{}\t{}\t{}", q.class_id, q.language, q.text)?;
            }
        }
    }
    Ok(())
}

fn harvest_cmd(a: HarvestArgs) -> Result<()> {
    let queries: Vec<QuerySpec> =
        serde_json::from_str(&read(&a.plan)?).with_context(|| format!("parsing plan {}", a.plan.display()))?;
    let file = ProvidersFile::load(&a.providers).with_context(|| format!("loading {}", a.providers.display()))?;
    if file.providers.is_empty() {
        bail!("{} configures no providers", a.providers.display());
    }
    let providers = file
        .providers
        .into_iter()
        .map(|c| Ok((harvest::build_provider(&c)?, c)))
        .collect::<Result<Vec<_>>>()?;
    let store = ManifestStore::open(&a.out)?;
    let blobs = blob_store(&a.out, a.blobs.as_deref());
    let summary = harvest::harvest(&queries, &providers, &DefaultFetcher::default(), &blobs, &store, &HarvestOptions::default())?;
    for (what, why) in &summary.failures {
        log::warn!("{what}: {why}");
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn dedup_cmd(a: DedupArgs) -> Result<()> {
    let store = a.store.open()?;
    let blobs = a.store.blob_store();
    let (items, unreadable) = store.read(|m| dedup::manifest_items(m, &blobs));
    for (id, why) in &unreadable {
        log::warn!("{id}: {why}");
    }
    let outcome = dedup_scan(&items, a.threshold)?;
    for (id, why) in &outcome.quarantined {
        log::warn!("quarantined {id}: {why}");
    }
    let changed = if a.dry_run {
        0
    } else {
        store.transact(|m| Ok::<_, manifest::ManifestError>(dedup::apply_outcome(m, &outcome)))?
    };
    if let Some(path) = &a.report {
        write_json(
            path,
            &json!({
                "threshold": a.threshold,
                "scanned": items.len(),
                "kept": outcome.kept.len(),
                "duplicates": outcome.duplicates.len(),
                "clusters": outcome.clusters,
                "quarantined": outcome.quarantined,
                "unreadable": unreadable,
            }),
        )?;
    }
    println!(
        "scanned {}, kept {}, duplicates {}, clusters {}, quarantined {}, records rejected {}",
        items.len(),
        outcome.kept.len(),
        outcome.duplicates.len(),
        outcome.clusters.len(),
        outcome.quarantined.len(),
        changed
    );
    Ok(())
}

fn manifest_cmd(command: ManifestCommand) -> Result<()> {
    match command {
        ManifestCommand::Counts(s) => {
            let store = s.open()?;
            store.read(|m| {
                let table = class_counts(m);
                println!("{table}\nnegatives {}\n", table.negatives);
                println!("{}", harvest::harvest_report(m));
            });
        }
        ManifestCommand::Split(a) => {
            let ratios = SplitRatios::new(a.ratios[0], a.ratios[1], a.ratios[2])?;
            let store = a.store.open()?;
            store.transact(|m| {
                *m = assign_splits(m, ratios, a.seed)?;
                Ok::<_, manifest::ManifestError>(())
            })?;
            store.read(print_split_totals);
        }
        ManifestCommand::GeoSplit(a) => {
            let regions = match &a.regions {
                Some(p) => RegionMap::parse(&read(p)?)?,
                None => RegionMap::default(),
            };
            let classes = a.classes.unwrap_or_else(|| GEO_CLASSES.to_vec());
            let store = a.store.open()?;
            let summary = store.transact(|m| {
                let (out, summary) = geo_stratify(m, &regions, &classes, a.seed)?;
                *m = out;
                Ok::<_, manifest::ManifestError>(summary)
            })?;
            for w in &summary.warnings {
                log::warn!("{w}");
            }
            store.read(print_split_totals);
            let p = summary.geograph_pct;
            println!("geograph pool: train {:.2}%, val {:.2}%, test {:.2}%", p[0], p[1], p[2]);
        }
        ManifestCommand::Negatives(a) => {
            let listings: NegativeListings = serde_json::from_str(&read(&a.listings)?)
                .with_context(|| format!("parsing {}", a.listings.display()))?;
            let spec: NegativesSpec = match &a.quotas {
                Some(p) => toml::from_str(&read(p)?).with_context(|| format!("parsing {}", p.display()))?,
                None => NegativesSpec::default(),
            };
            let store = a.store.open()?;
            let before = store.read(|m| m.len());
            store.transact(|m| {
                *m = build_negatives(m, &spec, &listings, a.seed)?;
                Ok::<_, manifest::ManifestError>(())
            })?;
            println!("added {} negatives", store.read(|m| m.len()) - before);
        }
        ManifestCommand::Export(a) => {
            let store = a.store.open()?;
            let m = store.snapshot();
            match &a.out {
                Some(p) => {
                    let mut w = create(p)?;
                    m.export_jsonl(&mut w)?;
                    w.flush()?;
                }
                None => m.export_jsonl(std::io::stdout().lock())?,
            }
        }
    }
    Ok(())
}

fn print_split_totals(m: &manifest::Manifest) {
    let total = m.accepted().count().max(1) as f64;
    for s in Split::ALL {
        let n = m.in_split(s).count();
        println!("{:<6} {:>7} {:>6.2}%", s.as_str(), n, 100.0 * n as f64 / total);
    }
}

fn preprocess_cmd(a: PreprocessArgs) -> Result<()> {
    let store = a.store.open()?;
    let blobs = a.store.blob_store();
    let (samples, missing) = store.read(|m| load_split(m, &blobs, Some(a.split), a.size));
    for (id, why) in &missing {
        log::warn!("skipping {id}: {why}");
    }
    let stats = compute_norm_stats(samples.iter().map(|s| &s.image))
        .with_context(|| format!("measuring the {} split", a.split.as_str()))?;
    write_json(&a.stats_out, &stats)?;
    println!(
        "{} images; mean {:?}, std {:?}",
        samples.len(),
        stats.mean,
        stats.std
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let config = match &a.config {
        Some(p) => TrainConfig::parse(&read(p)?)?,
        None => TrainConfig::default(),
    };
    let store = a.store.open()?;
    let blobs = a.store.blob_store();
    let m = store.snapshot();
    let size = config.architecture.input_size;
    let (train_set, missing_train) = load_split(&m, &blobs, Some(Split::Train), size);
    let (val_set, missing_val) = load_split(&m, &blobs, Some(Split::Val), size);
    for (id, why) in missing_train.iter().chain(&missing_val) {
        log::warn!("skipping {id}: {why}");
    }
    let norm: NormStats = match &a.norm {
        Some(p) => serde_json::from_str(&read(p)?)?,
        None => compute_norm_stats(train_set.iter().map(|s| &s.image))?,
    };
    let weights = match config.weight_source {
        WeightSource::TrainingSplit => None,
        WeightSource::WholeDataset => Some(class_weights(&ClassFrequencyTable::from_manifest(&m, None))?),
    };
    log::info!("training on {} images, validating on {}", train_set.len(), val_set.len());
    let out = train(&config, &train_set, &val_set, &norm, weights, a.seed)?;
    fs::create_dir_all(&a.out)?;
    out.best.save(&a.out.join("best.ckpt"))?;
    out.last.save(&a.out.join("last.ckpt"))?;
    write_json(&a.out.join("history.json"), &out.last.history)?;
    for e in &out.last.history {
        println!(
            "epoch {:>3} lr {:.1e} train loss {:.4} acc {:.4} val loss {} acc {}",
            e.epoch,
            e.lr,
            e.train_loss,
            e.train_accuracy,
            e.val_loss.map_or("-".into(), |v| format!("{v:.4}")),
            e.val_accuracy.map_or("-".into(), |v| format!("{v:.4}")),
        );
    }
    println!("best checkpoint: epoch {}", out.best.epoch);
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ck = a.ckpt.load()?;
    let split = parse_split(&a.split)?;
    let store = a.store.open()?;
    let blobs = a.store.blob_store();
    let eval = store.read(|m| evaluate_split(&ck, m, &blobs, split))?;
    let table = MatrixTable {
        matrix: &eval.matrix,
        report: &eval.report,
    }
    .to_string();
    print!("{table}");
    if !eval.missing.is_empty() {
        println!("{} records could not be loaded", eval.missing.len());
    }
    if let Some(path) = &a.report {
        write_json(
            path,
            &json!({
                "split": a.split,
                "checkpoint_epoch": ck.epoch,
                "report": eval.report,
                "matrix": eval.matrix,
                "missing": eval.missing,
                "predictions": eval.predictions,
            }),
        )?;
        let mut w = create(&path.with_extension("txt"))?;
        w.write_all(table.as_bytes())?;
        w.flush()?;
    }
    Ok(())
}

fn cam_cmd(a: CamArgs) -> Result<()> {
    let ck = a.ckpt.load()?;
    let bytes = fs::read(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let image = Image::decode(&bytes)?;
    let class = match a.class {
        Some(c) => c,
        None => ck.predict(&image)?.class,
    };
    let map = explain::cam(&ck.model, &ck.norm, &image, class)?;
    let shown = explain::overlay(&image, &map, a.alpha)?;
    let mut w = create(&a.out)?;
    w.write_all(&shown.encode_png())?;
    w.flush()?;
    let raw = a.out.with_extension("map.png");
    fs::write(&raw, explain::map_png(&map))?;
    println!("{class}: overlay {}, map {}", a.out.display(), raw.display());
    Ok(())
}

fn tsne_cmd(a: TsneArgs) -> Result<()> {
    let ck = a.ckpt.load()?;
    let split = parse_split(&a.split)?;
    let store = a.store.open()?;
    let blobs = a.store.blob_store();
    let (set, missing) = store.read(|m| explain::collect_embeddings(&ck, m, &blobs, split))?;
    for (id, why) in &missing {
        log::warn!("skipping {id}: {why}");
    }
    let config = TsneConfig {
        perplexity: a.perplexity,
        iterations: a.iterations,
        seed: a.seed,
        ..TsneConfig::default()
    };
    let result = explain::tsne(&set, &config)?;
    let mut w = create(&a.out)?;
    explain::write_points_csv(&mut w, &set, &result.coords)?;
    w.flush()?;
    println!(
        "{} points, final KL {:.4}",
        set.len(),
        result.kl_history.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let taxonomy = match &a.taxonomy {
        Some(p) => Taxonomy::load(&read(p)?)?,
        None => Taxonomy::default_tree(),
    };
    let state = AppState::new(a.store.open()?, a.store.blob_store(), taxonomy);
    let addr = SocketAddr::new(a.bind, a.port);
    log::info!("serving {} on http://{addr}", a.store.manifest.display());
    tokio::runtime::Runtime::new()?.block_on(roadwatch_server::serve(addr, state))?;
    Ok(())
}
