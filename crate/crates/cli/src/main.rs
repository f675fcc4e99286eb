//! `parseid` command-line tool.
//!
//! Exit status is 0 when the command succeeded. `extract` also exits 0 when
//! some pairs failed to load; the summary's `failed` count reports them.
//! Any other error exits 1, and usage errors exit 2.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand};
use parseid_core::color::Channel;
use parseid_core::eval::{
    evaluate, load_split, read_id_list, write_per_query_csv, EvalConfig, ImageEntry, NamingRule, Protocol,
};
use parseid_core::query::{AttributeEntry, AttributeQuery, TexturePresetTable, DEFAULT_SPREAD};
use parseid_core::store::{build_from_dataset, FeatureStore};
use parseid_core::{EngineConfig, FeatureRecord};
use parseid_service::{search_attributes, search_by_example, ServiceConfig};

#[derive(Parser)]
#[command(name = "parseid", version, about = "Person re-identification from parsing masks, Lab color and LBP texture")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML file overriding feature/class weights and constants.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Worker threads; defaults to the number of logical CPUs.
    #[arg(long, global = true)]
    parallelism: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Extract descriptors for every image/mask pair into a store.
    Extract {
        #[arg(long)]
        images: PathBuf,
        /// Directory holding `<image stem>.png` label masks.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// Regex with two groups capturing person id and camera id.
        #[arg(long)]
        naming: Option<String>,
        /// Write the summary JSON here as well as to stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Rank every query against the gallery and report rank-r and mAP.
    Evaluate {
        /// Gallery directory.
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        query: PathBuf,
        #[arg(long)]
        store: PathBuf,
        /// File listing query ids or filenames to drop, one per line.
        #[arg(long)]
        clear_queries: Option<PathBuf>,
        /// Drop gallery images sharing person and camera with the query.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        cross_camera: bool,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        ranks: Vec<usize>,
        #[arg(long)]
        naming: Option<String>,
        /// Fail on filenames the naming rule cannot parse.
        #[arg(long)]
        strict: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Per-query CSV; defaults to the report path with a .csv extension.
        #[arg(long)]
        per_query: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Query the store by example image or by attribute description.
    Search {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, conflicts_with = "attr")]
        image_id: Option<String>,
        /// `class=#rrggbb[,preset]`, repeatable.
        #[arg(long)]
        attr: Vec<AttributeEntry>,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        /// Half-width in bins of the synthesized color windows.
        #[arg(long, default_value_t = DEFAULT_SPREAD)]
        spread: usize,
        /// Texture preset table replacing the bundled one.
        #[arg(long)]
        presets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the HTTP API.
    Serve {
        #[arg(long, env = "PARSEID_STORE")]
        store: PathBuf,
        #[arg(long, env = "PARSEID_LISTEN", default_value = parseid_service::DEFAULT_LISTEN)]
        listen: std::net::SocketAddr,
        /// Directory of static UI assets served at `/`.
        #[arg(long = "static", env = "PARSEID_STATIC")]
        static_dir: Option<PathBuf>,
        #[arg(long, env = "PARSEID_MAX_K", default_value_t = parseid_service::DEFAULT_MAX_K)]
        max_k: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Print the stored descriptors of one image.
    Inspect {
        #[arg(long)]
        store: PathBuf,
        image_id: String,
        /// Print the raw record JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

impl Common {
    fn engine(&self) -> Result<EngineConfig> {
        match &self.weights {
            Some(p) => EngineConfig::load(p).with_context(|| format!("loading weights {}", p.display())),
            None => Ok(EngineConfig::default()),
        }
    }

    fn workers(&self) -> Result<usize> {
        let n = self
            .parallelism
            .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
        if n == 0 {
            bail!("--parallelism must be at least 1");
        }
        Ok(n)
    }

    fn install_pool(&self) -> Result<()> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers()?)
            .build_global()
            .context("configuring worker pool")
    }
}

fn naming_rule(pattern: &Option<String>) -> Result<NamingRule> {
    Ok(match pattern {
        Some(p) => NamingRule::new(p)?,
        None => NamingRule::default(),
    })
}

fn open_store(path: &Path, engine: &EngineConfig) -> Result<FeatureStore> {
    let store = FeatureStore::open(path)?;
    if store.version() != engine.version() {
        bail!(
            "store {} was built with extractor {}, current configuration is {}; re-run extract into a new store",
            path.display(),
            store.version(),
            engine.version()
        );
    }
    Ok(store)
}

fn emit(value: &serde_json::Value, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    if let Some(path) = out {
        std::fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn extract(images: &Path, masks: &Path, store_dir: &Path, naming: &Option<String>, out: Option<&Path>, common: &Common) -> Result<()> {
    let engine = common.engine()?;
    if !images.is_dir() {
        bail!("image directory {} does not exist", images.display());
    }
    if !masks.is_dir() {
        bail!("mask directory {} does not exist", masks.display());
    }
    let rule = naming_rule(naming)?;
    let mut store = FeatureStore::open_or_create(store_dir, &engine.version())?;
    let summary = build_from_dataset(images, masks, &mut store, &engine, common.workers()?, Some(&rule))?;
    for f in &summary.failures {
        eprintln!("failed: {}: {}", f.image, f.message);
    }
    emit(&serde_json::to_value(&summary)?, out)
}

fn records_for(store: &FeatureStore, entries: &[ImageEntry]) -> Result<Vec<FeatureRecord>> {
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        match store.get(&e.image_id)? {
            Some(mut r) => {
                r.person_id = Some(e.person_id);
                r.camera_id = Some(e.camera_id);
                out.push(r);
            }
            None => missing.push(e.image_id.clone()),
        }
    }
    if !missing.is_empty() {
        bail!(
            "{} images have no stored record (first: {}); run extract first",
            missing.len(),
            missing[0]
        );
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn run_evaluate(
    test: &Path,
    query: &Path,
    store_dir: &Path,
    clear_queries: &Option<PathBuf>,
    cross_camera: bool,
    ranks: Vec<usize>,
    naming: &Option<String>,
    strict: bool,
    out: Option<&Path>,
    per_query: Option<&Path>,
    common: &Common,
) -> Result<()> {
    common.install_pool()?;
    let engine = common.engine()?;
    if ranks.contains(&0) {
        bail!("ranks must be at least 1");
    }
    let store = open_store(store_dir, &engine)?;
    let excluded = clear_queries.as_deref().map(read_id_list).transpose()?;
    let split = load_split(test, query, &naming_rule(naming)?, excluded.as_ref(), strict)?;
    let queries = records_for(&store, &split.queries)?;
    let gallery = records_for(&store, &split.gallery)?;
    let cfg = EvalConfig {
        ranks,
        protocol: Protocol { cross_camera },
    };
    let report = evaluate(&queries, &gallery, &cfg, &engine.scoring);

    let csv_path = per_query
        .map(Path::to_path_buf)
        .or_else(|| out.map(|o| o.with_extension("csv")));
    if let Some(p) = &csv_path {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        write_per_query_csv(BufWriter::new(f), &report.per_query)?;
    }
    let mut value = serde_json::to_value(&report.summary)?;
    value["removed_queries"] = split.removed_queries.into();
    value["unparsed_files"] = split.unparsed.into();
    value["gallery_size"] = gallery.len().into();
    value["cross_camera"] = cross_camera.into();
    value["extractor_version"] = engine.version().into();
    emit(&value, out)
}

#[allow(clippy::too_many_arguments)]
fn run_search(
    store_dir: &Path,
    image_id: &Option<String>,
    attr: Vec<AttributeEntry>,
    k: usize,
    spread: usize,
    presets: &Option<PathBuf>,
    out: Option<&Path>,
    common: &Common,
) -> Result<()> {
    common.install_pool()?;
    if k == 0 {
        bail!("k must be at least 1");
    }
    let engine = common.engine()?;
    let store = open_store(store_dir, &engine)?;
    let records = store.load_all()?;
    let value = match image_id {
        Some(id) => {
            let q = store.get(id)?.with_context(|| format!("unknown image id '{id}'"))?;
            serde_json::to_value(search_by_example(&q, &records, k, &engine))?
        }
        None => {
            if attr.is_empty() {
                bail!("give --image-id or at least one --attr");
            }
            let table = match presets {
                Some(p) => TexturePresetTable::load(p)?,
                None => TexturePresetTable::builtin(),
            };
            let q = AttributeQuery::new(attr);
            serde_json::to_value(search_attributes(&q, &table, spread, &records, k, &engine)?)?
        }
    };
    emit(&value, out)
}

fn inspect(store_dir: &Path, image_id: &str, json: bool) -> Result<()> {
    let store = FeatureStore::open(store_dir)?;
    let rec = store
        .get(image_id)?
        .with_context(|| format!("unknown image id '{image_id}'"))?;
    if json {
        println!("{}", serde_json::to_string_pretty(&rec)?);
        return Ok(());
    }
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "image {}", rec.image_id)?;
    if let (Some(p), Some(c)) = (rec.person_id, rec.camera_id) {
        writeln!(w, "person {p}, camera {c}")?;
    }
    writeln!(w, "extractor {}", rec.extractor_version)?;
    for (class, f) in &rec.classes {
        let m = f.color.mean.native();
        writeln!(w)?;
        writeln!(
            w,
            "{class}  pixels {}  Lab mean ({:.1}, {:.1}, {:.1}){}",
            f.n_pixels,
            m[0],
            m[1],
            m[2],
            if f.color.over_highlighted { "  OVER-HIGHLIGHTED" } else { "" }
        )?;
        for ch in [Channel::L, Channel::A, Channel::B] {
            let h = f.color.hist(ch);
            let name = match ch {
                Channel::L => "L",
                Channel::A => "a",
                Channel::B => "b",
            };
            writeln!(w, "  {name:<2} {}  {}", h.pattern(), h.to_hex())?;
        }
        for (name, h) in [("inner", &f.lbp_inner), ("contour", &f.lbp_contour)] {
            let top: Vec<String> = h.top_bins(5).iter().map(|(c, v)| format!("{c}:{v:.3}")).collect();
            writeln!(w, "  LBP {name:<7} n={:<5} {}", h.n_codes, top.join(" "))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Extract { images, masks, store, naming, out, common } => {
            extract(&images, &masks, &store, &naming, out.as_deref(), &common)
        }
        Command::Evaluate {
            test,
            query,
            store,
            clear_queries,
            cross_camera,
            ranks,
            naming,
            strict,
            out,
            per_query,
            common,
        } => run_evaluate(
            &test,
            &query,
            &store,
            &clear_queries,
            cross_camera,
            ranks,
            &naming,
            strict,
            out.as_deref(),
            per_query.as_deref(),
            &common,
        ),
        Command::Search { store, image_id, attr, k, spread, presets, out, common } => {
            run_search(&store, &image_id, attr, k, spread, &presets, out.as_deref(), &common)
        }
        Command::Serve { store, listen, static_dir, max_k, common } => {
            let engine_weights = common.weights.clone();
            let cfg = ServiceConfig {
                listen,
                store,
                weights: engine_weights,
                static_dir,
                max_k,
            };
            tokio::runtime::Builder::new_multi_thread()
                .worker_threads(common.workers()?)
                .enable_all()
                .build()?
                .block_on(parseid_service::serve(cfg))?;
            Ok(())
        }
        Command::Inspect { store, image_id, json } => inspect(&store, &image_id, json),
    }
}
