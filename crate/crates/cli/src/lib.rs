//! The `spinneret` command line: ingest, synth, dataset, stats, train, sample, eval,
//! assemble and mesh.
//!
//! Every subcommand reads its settings from flags, optionally layered over a table of the
//! same name in a TOML file given with `--config` (flags win). Each run writes a JSON
//! manifest next to its main output with the resolved settings and their hash.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use spinneret::assembly::{
    assemble, random_conditioning, GraphSource, Merge, Placement, StackPolicy,
};
use spinneret::checkpoint::{Checkpoint, Model, ModelConfig, ModelKind, MAGIC};
use spinneret::dataset::{
    build_dataset, load_dataset, load_graph, save_dataset, save_graph_with_meta, synthetic_web, DatasetConfig,
    SyntheticWebConfig,
};
use spinneret::diffusion::{DiffusionConfig, Preset};
use spinneret::argen::ArGenConfig;
use spinneret::meshing::{export_stl, mesh_graph, stl_header, MeshConfig};
use spinneret::stats::{
    clustering_coefficient, conditioning_vector, fiedler_projection, geodesic_field, per_node_mean_edge_length,
    reciprocal_neighbor_density, FEATURE_NAMES,
};
use spinneret::training::{evaluate_model, train, TrainConfig};
use spinneret::zspace::ZKind;
use spinneret::{Graph, Point3, MAX_NODES, NUM_FEATURES};

#[derive(Debug, Parser)]
#[command(name = "spinneret", version, about = "Generate, assemble and mesh 3D spider-web graphs")]
pub struct Cli {
    /// TOML file with one table per subcommand; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a "v x y z" / "l a b ..." text file into a graph document.
    Ingest(IngestArgs),
    /// Generate a synthetic stand-in web.
    Synth(SynthArgs),
    /// Sample every node's neighborhood, split and fit normalization.
    Dataset(DatasetArgs),
    /// Per-node heterogeneity fields and the conditioning vector as CSV.
    Stats(StatsArgs),
    /// Train a generator and write a checkpoint.
    Train(TrainArgs),
    /// Generate graphs from a checkpoint.
    Sample(SampleArgs),
    /// Conditioning fidelity on a dataset's test split.
    Eval(EvalArgs),
    /// Stack samples along a path into one large graph.
    Assemble(AssembleArgs),
    /// Mesh a graph with constant-radius struts and write binary STL.
    Mesh(MeshArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Synth(_) => "synth",
            Command::Dataset(_) => "dataset",
            Command::Stats(_) => "stats",
            Command::Train(_) => "train",
            Command::Sample(_) => "sample",
            Command::Eval(_) => "eval",
            Command::Assemble(_) => "assemble",
            Command::Mesh(_) => "mesh",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelArg {
    SparseDiffusion,
    FullDiffusion,
    Argen,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::SparseDiffusion => ModelKind::SparseDiffusion,
            ModelArg::FullDiffusion => ModelKind::FullDiffusion,
            ModelArg::Argen => ModelKind::Argen,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetArg {
    Desk,
    Paper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathArg {
    Helix,
    Parametric,
    Offset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MergeArg {
    Avg,
    Second,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Multiplier from file units to meters.
    #[arg(long)]
    pub scale: Option<f64>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthArgs {
    #[arg(long)]
    pub nodes: Option<usize>,
    /// Lattice spacing in meters.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Jitter as a fraction of the spacing.
    #[arg(long)]
    pub jitter: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub cap: Option<usize>,
    /// Train fraction.
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Per-node CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One-row conditioning-vector CSV; defaults to `<out>.features.csv`.
    #[arg(long)]
    pub features_out: Option<PathBuf>,
    /// Source node of the geodesic field.
    #[arg(long)]
    pub source: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainArgs {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub model: Option<ModelArg>,
    #[arg(long, value_enum)]
    pub preset: Option<PresetArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the preset learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overrides the preset batch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    #[arg(long)]
    pub log_every: Option<usize>,
    /// Per-step loss CSV.
    #[arg(long)]
    pub loss_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Seven comma-separated normalized features used for every sample.
    #[arg(long)]
    pub features: Option<String>,
    /// Take targets from this dataset's test split instead of random draws.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Evaluate only the first `limit` test samples.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Per-feature R² CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Scatter pairs CSV.
    #[arg(long)]
    pub pairs_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssembleArgs {
    /// A graph file, a directory of graph files, or a checkpoint.
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub path: Option<PathArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub overlap: Option<usize>,
    #[arg(long, value_enum)]
    pub merge: Option<MergeArg>,
    #[arg(long)]
    pub shuffle_seed: Option<u64>,
    /// Seed for conditioning draws and sampling when the source is a checkpoint.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Helix radius; defaults to twice the sample radius.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Helix angular step in radians.
    #[arg(long)]
    pub dphi: Option<f64>,
    /// Helix rise per step.
    #[arg(long)]
    pub slope: Option<f64>,
    /// Parametric curve scale; defaults to the sample radius.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Parametric step size.
    #[arg(long)]
    pub t_step: Option<f64>,
    /// Fixed offset "dx,dy,dz".
    #[arg(long)]
    pub offset: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshArgs {
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
    /// Strut radius in meters.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Voxels along the longest bounding dimension.
    #[arg(long)]
    pub res: Option<usize>,
    /// Explicit voxel size; overrides `res`.
    #[arg(long)]
    pub spacing: Option<f64>,
    /// Box-filter passes.
    #[arg(long)]
    pub smooth: Option<usize>,
    #[arg(long)]
    pub stl: Option<PathBuf>,
}

/// Keys that name files; they do not affect results and stay out of the config hash.
const PATH_KEYS: [&str; 11] = [
    "input", "in", "out", "out_dir", "dataset", "checkpoint", "source", "stl", "loss_out", "pairs_out", "features_out",
];

/// Layers non-null flag values over the config-file table.
fn resolve<T: Serialize + DeserializeOwned>(flags: &T, table: Option<&toml::Value>) -> Result<T> {
    let mut merged = match table {
        Some(t) => serde_json::to_value(t)?,
        None => json!({}),
    };
    let obj = merged.as_object_mut().ok_or_else(|| anyhow!("config section must be a table"))?;
    if let Value::Object(over) = serde_json::to_value(flags)? {
        for (k, v) in over {
            if !v.is_null() {
                obj.insert(k, v);
            }
        }
    }
    serde_json::from_value(merged).context("invalid configuration")
}

/// SHA-256 over the canonical JSON of the settings without file paths.
pub fn config_hash(settings: &Value) -> String {
    let mut v = settings.clone();
    if let Value::Object(m) = &mut v {
        m.retain(|k, val| !PATH_KEYS.contains(&k.as_str()) && !val.is_null());
    }
    let digest = Sha256::digest(v.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

fn write_manifest(command: &str, settings: &Value, seed: Option<u64>, out: &Path, summary: Value) -> Result<String> {
    let hash = config_hash(settings);
    let manifest = json!({
        "command": command,
        "version": env!("CARGO_PKG_VERSION"),
        "seed": seed,
        "config_hash": hash,
        "config": settings,
        "summary": summary,
    });
    let path = manifest_path(out);
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(hash)
}

fn required<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    v.as_ref().ok_or_else(|| anyhow!("missing required setting --{flag}"))
}

fn load_config(path: Option<&Path>) -> Result<toml::Table> {
    let Some(path) = path else { return Ok(toml::Table::new()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let table: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    const SECTIONS: [&str; 9] = ["ingest", "synth", "dataset", "stats", "train", "sample", "eval", "assemble", "mesh"];
    if let Some(k) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
        bail!("unknown config section [{k}]");
    }
    Ok(table)
}

pub fn run(cli: Cli) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    let table = config.get(cli.command.name());
    match &cli.command {
        Command::Ingest(a) => ingest(&resolve(a, table)?),
        Command::Synth(a) => synth(&resolve(a, table)?),
        Command::Dataset(a) => dataset(&resolve(a, table)?),
        Command::Stats(a) => stats(&resolve(a, table)?),
        Command::Train(a) => train_cmd(&resolve(a, table)?),
        Command::Sample(a) => sample(&resolve(a, table)?),
        Command::Eval(a) => eval(&resolve(a, table)?),
        Command::Assemble(a) => assemble_cmd(&resolve(a, table)?),
        Command::Mesh(a) => mesh(&resolve(a, table)?),
    }
}

/// Parses the ingest format: `v x y z` adds a node, `l a b [c ...]` adds a polyline over
/// zero-based node indices, `#` starts a comment. Repeated segments are merged.
pub fn parse_polyline_text(text: &str, scale: f64) -> Result<Graph> {
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tok = line.split_whitespace();
        let ctx = || format!("line {}: {raw:?}", no + 1);
        match tok.next() {
            Some("v") => {
                let v: Vec<f64> = tok.map(str::parse).collect::<std::result::Result<_, _>>().with_context(ctx)?;
                if v.len() != 3 {
                    bail!("{}: a vertex needs 3 coordinates", ctx());
                }
                nodes.push(Point3::new(v[0] * scale, v[1] * scale, v[2] * scale));
            }
            Some("l") => {
                let ids: Vec<usize> = tok.map(str::parse).collect::<std::result::Result<_, _>>().with_context(ctx)?;
                if ids.len() < 2 {
                    bail!("{}: a line needs at least 2 node indices", ctx());
                }
                edges.extend(ids.windows(2).map(|w| (w[0], w[1])));
            }
            Some(other) => bail!("{}: unknown record {other:?}", ctx()),
            None => unreachable!("blank lines are skipped"),
        }
    }
    Ok(Graph::from_edge_union(nodes, edges)?)
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let input = required(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let g = parse_polyline_text(&text, a.scale.unwrap_or(1.0))?;
    let violations = g.validate(true);
    if !violations.is_empty() {
        log::warn!("{} web-conformance violations (e.g. {})", violations.len(), violations[0]);
    }
    save_graph_with_meta(&g, None, out)?;
    let settings = serde_json::to_value(a)?;
    write_manifest("ingest", &settings, None, out, json!({"nodes": g.node_count(), "edges": g.edge_count()}))?;
    log::info!("ingested {} nodes, {} edges", g.node_count(), g.edge_count());
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let out = required(&a.out, "out")?;
    let cfg = SyntheticWebConfig {
        node_target: a.nodes.unwrap_or(500),
        spacing: a.spacing.unwrap_or(0.01),
        jitter: a.jitter.unwrap_or(0.3),
        seed: a.seed.unwrap_or(0),
    };
    let g = synthetic_web(&cfg)?;
    save_graph_with_meta(&g, Some(serde_json::to_value(cfg)?), out)?;
    write_manifest(
        "synth",
        &serde_json::to_value(cfg)?,
        Some(cfg.seed),
        out,
        json!({"nodes": g.node_count(), "edges": g.edge_count()}),
    )?;
    log::info!("synthesized {} nodes, {} edges", g.node_count(), g.edge_count());
    Ok(())
}

fn dataset(a: &DatasetArgs) -> Result<()> {
    let input = required(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    let cfg = DatasetConfig {
        depth: a.depth.unwrap_or(4),
        cap: a.cap.unwrap_or(MAX_NODES),
        train_fraction: a.split.unwrap_or(0.9),
        seed: a.seed.unwrap_or(0),
    };
    let g = load_graph(input).with_context(|| format!("loading {}", input.display()))?;
    let ds = build_dataset(&g, &cfg)?;
    let settings = serde_json::to_value(cfg)?;
    save_dataset(&ds, Some(settings.clone()), out)?;
    let (train, test) = (ds.train().count(), ds.test().count());
    write_manifest("dataset", &settings, Some(cfg.seed), out, json!({"train": train, "test": test}))?;
    log::info!("{} samples ({train} train, {test} test)", ds.len());
    Ok(())
}

fn stats(a: &StatsArgs) -> Result<()> {
    let input = required(&a.input, "input")?;
    let out = required(&a.out, "out")?;
    let g = load_graph(input)?;
    let source = a.source.unwrap_or(0);
    let len = per_node_mean_edge_length(&g);
    let clust = clustering_coefficient(&g);
    let recip = reciprocal_neighbor_density(&g);
    let geo = geodesic_field(&g, source)?;
    let fiedler = match fiedler_projection(&g) {
        Ok(f) => Some(f.vector.values),
        Err(e) => {
            log::warn!("no Fiedler vector: {e}");
            None
        }
    };
    let mut w = csv::Writer::from_path(out)?;
    w.write_record([
        "node_index", "x", "y", "z", "mean_edge_length", "clustering", "reciprocal_density", "geodesic", "fiedler",
    ])?;
    for (i, p) in g.positions().iter().enumerate() {
        let fied = fiedler.as_ref().map_or(String::new(), |f| f[i].to_string());
        w.write_record([
            i.to_string(),
            p.x.to_string(),
            p.y.to_string(),
            p.z.to_string(),
            len.values[i].to_string(),
            clust.values[i].to_string(),
            recip.values[i].to_string(),
            geo.values[i].to_string(),
            fied,
        ])?;
    }
    w.flush()?;

    let features_out = a.features_out.clone().unwrap_or_else(|| {
        let mut name = out.file_stem().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(".features.csv");
        out.with_file_name(name)
    });
    let c = conditioning_vector(&g)?;
    let mut w = csv::Writer::from_path(&features_out)?;
    w.write_record(FEATURE_NAMES)?;
    w.write_record(c.to_array().map(|v| v.to_string()))?;
    w.flush()?;
    write_manifest("stats", &serde_json::to_value(a)?, None, out, json!({"nodes": g.node_count()}))?;
    Ok(())
}

fn model_config(a: &TrainArgs) -> ModelConfig {
    let preset = match a.preset.unwrap_or(PresetArg::Desk) {
        PresetArg::Desk => Preset::Desk,
        PresetArg::Paper => Preset::Paper,
    };
    let n = a.max_nodes.unwrap_or(MAX_NODES);
    let mut cfg = match a.model.unwrap_or(ModelArg::Argen) {
        ModelArg::SparseDiffusion => ModelConfig::Diffusion(DiffusionConfig::preset(ZKind::Sparse, preset, n)),
        ModelArg::FullDiffusion => ModelConfig::Diffusion(DiffusionConfig::preset(ZKind::Full, preset, n)),
        ModelArg::Argen => ModelConfig::Argen(ArGenConfig::preset(preset, n)),
    };
    let (adam, batch) = match &mut cfg {
        ModelConfig::Diffusion(c) => (&mut c.adam, &mut c.batch_size),
        ModelConfig::Argen(c) => (&mut c.adam, &mut c.batch_size),
    };
    if let Some(lr) = a.lr {
        adam.lr = lr;
    }
    if let Some(b) = a.batch_size {
        *batch = b;
    }
    cfg
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let ds_path = required(&a.dataset, "dataset")?;
    let out = required(&a.out, "out")?;
    let ds = load_dataset(ds_path).with_context(|| format!("loading {}", ds_path.display()))?;
    let seed = a.seed.unwrap_or(0);
    let cfg = model_config(a);
    let mut model = Model::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(seed))?;
    let train_samples: Vec<_> = ds.train().collect();
    let items = model.items(&train_samples, &ds.scaling)?;
    let tcfg = TrainConfig { steps: a.steps.unwrap_or(1000), seed, log_every: a.log_every.unwrap_or(100) };
    log::info!("training {} on {} items for {} steps", model.kind(), items.len(), tcfg.steps);
    let log = train(&mut model, &items, &tcfg)?;
    model.store_mut().round_to_f32();

    let mut settings = serde_json::to_value(a)?;
    settings["model_config"] = serde_json::to_value(&cfg)?;
    let window = (tcfg.steps / 10).max(1);
    let summary = json!({
        "items": items.len(),
        "steps": tcfg.steps,
        "initial_loss": log.head_mean(window),
        "final_loss": log.tail_mean(window),
    });
    let hash = write_manifest("train", &settings, Some(seed), out, summary.clone())?;
    let ck = Checkpoint {
        model,
        normalization: ds.scaling,
        meta: json!({"config_hash": hash, "train": summary}),
    };
    ck.save(out)?;
    if let Some(p) = &a.loss_out {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["step", "loss"])?;
        for (i, l) in log.losses.iter().enumerate() {
            w.write_record([(i + 1).to_string(), l.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}

fn parse_features(s: &str) -> Result<[f64; NUM_FEATURES]> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .context("features must be comma-separated numbers")?;
    v.try_into().map_err(|v: Vec<f64>| anyhow!("expected {NUM_FEATURES} features, got {}", v.len()))
}

fn test_targets(path: &Path) -> Result<Vec<[f64; NUM_FEATURES]>> {
    let ds = load_dataset(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(ds.test().filter_map(|s| s.features.as_ref().map(|f| ds.scaling.normalize_features(f))).collect())
}

fn sample(a: &SampleArgs) -> Result<()> {
    let ck_path = required(&a.checkpoint, "checkpoint")?;
    let out_dir = required(&a.out_dir, "out-dir")?;
    let ck = Checkpoint::load(ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
    let count = a.count.unwrap_or(1);
    let seed = a.seed.unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fixed = a.features.as_deref().map(parse_features).transpose()?;
    let from_ds = a.dataset.as_deref().map(test_targets).transpose()?;
    fs::create_dir_all(out_dir)?;
    let mut nodes = Vec::with_capacity(count);
    for i in 0..count {
        let target = match (&fixed, &from_ds) {
            (Some(f), _) => *f,
            (None, Some(t)) if !t.is_empty() => t[i % t.len()],
            _ => random_conditioning(&ck.normalization, &mut rng),
        };
        let decoded = ck.model.generate(&target, &ck.normalization, &mut rng)?;
        let g = &decoded.sample.graph;
        nodes.push(g.node_count());
        let meta = json!({"target": target, "repairs": decoded.repairs.len()});
        save_graph_with_meta(g, Some(meta), out_dir.join(format!("sample_{i:03}.graph")))?;
    }
    let mut settings = serde_json::to_value(a)?;
    settings["checkpoint_config_hash"] = ck.meta.get("config_hash").cloned().unwrap_or(Value::Null);
    write_manifest("sample", &settings, Some(seed), &out_dir.join("samples"), json!({"node_counts": nodes}))?;
    Ok(())
}

fn eval(a: &EvalArgs) -> Result<()> {
    let ck_path = required(&a.checkpoint, "checkpoint")?;
    let ds_path = required(&a.dataset, "dataset")?;
    let out = required(&a.out, "out")?;
    let ck = Checkpoint::load(ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
    let mut targets = test_targets(ds_path)?;
    if let Some(l) = a.limit {
        targets.truncate(l);
    }
    let seed = a.seed.unwrap_or(0);
    let report = evaluate_model(&ck.model, &targets, &ck.normalization, seed)?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["feature", "r2"])?;
    for (name, r2) in FEATURE_NAMES.iter().zip(report.r2) {
        w.write_record([name.to_string(), r2.to_string()])?;
    }
    w.flush()?;
    if let Some(p) = &a.pairs_out {
        let mut w = csv::Writer::from_path(p)?;
        w.write_record(["sample", "feature", "target", "measured"])?;
        for (k, pairs) in report.pairs.iter().enumerate() {
            for (i, (t, m)) in pairs.iter().enumerate() {
                w.write_record([i.to_string(), FEATURE_NAMES[k].to_string(), t.to_string(), m.to_string()])?;
            }
        }
        w.flush()?;
    }
    if report.all_empty() {
        log::warn!("every generated graph was empty");
    }
    let summary = json!({
        "samples": report.samples(),
        "empty": report.empty,
        "all_empty": report.all_empty(),
        "aggregate_r2": report.aggregate,
        "r2": report.r2,
    });
    write_manifest("eval", &serde_json::to_value(a)?, Some(seed), out, summary)?;
    for (name, r2) in FEATURE_NAMES.iter().zip(report.r2) {
        log::info!("{name:>16}  R² {r2:.3}");
    }
    log::info!("aggregate R² {:.3} over {} samples", report.aggregate, report.samples());
    Ok(())
}

fn is_checkpoint(path: &Path) -> Result<bool> {
    use std::io::Read;
    let mut head = [0u8; 8];
    let mut f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(f.read(&mut head)? == 8 && &head == MAGIC)
}

fn parse_point(s: &str) -> Result<Point3> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .context("offset must be \"dx,dy,dz\"")?;
    match v.as_slice() {
        [x, y, z] => Ok(Point3::new(*x, *y, *z)),
        _ => bail!("offset needs 3 components"),
    }
}

/// Attempts per step before a checkpoint source gives up on producing a usable sample.
const GENERATION_ATTEMPTS: usize = 20;

fn assemble_cmd(a: &AssembleArgs) -> Result<()> {
    let src = required(&a.source, "source")?;
    let out = required(&a.out, "out")?;
    let steps = a.steps.unwrap_or(10);
    let overlap = a.overlap.unwrap_or(0);
    let seed = a.seed.unwrap_or(0);
    let policy = StackPolicy {
        overlap,
        merge: match a.merge.unwrap_or(MergeArg::Avg) {
            MergeArg::Avg => Merge::Average,
            MergeArg::Second => Merge::TakeSecond,
        },
        shuffle_seed: a.shuffle_seed,
    };

    let checkpoint;
    let (mut source, radius) = if src.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(src)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.retain(|p| p.extension().is_some_and(|e| e == "graph"));
        files.sort();
        if files.is_empty() {
            bail!("no .graph files in {}", src.display());
        }
        let graphs = files.iter().map(load_graph).collect::<spinneret::Result<Vec<_>>>()?;
        let r = graphs.iter().map(|g| g.centered().bounding_radius()).fold(0.0, f64::max);
        (GraphSource::Cycle(graphs), r)
    } else if is_checkpoint(src)? {
        checkpoint = Checkpoint::load(src)?;
        let ck = &checkpoint;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let generator = move |step: usize| -> spinneret::Result<Graph> {
            for _ in 0..GENERATION_ATTEMPTS {
                let c = random_conditioning(&ck.normalization, &mut rng);
                let g = ck.model.generate(&c, &ck.normalization, &mut rng)?.sample.graph;
                if g.edge_count() > 0 && g.node_count() >= overlap && g.validate(true).is_empty() {
                    return Ok(g);
                }
            }
            Err(spinneret::Error::InvalidArgument(format!(
                "no usable sample for step {step} after {GENERATION_ATTEMPTS} attempts"
            )))
        };
        (GraphSource::Generator(Box::new(generator)), ck.normalization.coord_scale)
    } else {
        let g = load_graph(src)?;
        let r = g.centered().bounding_radius();
        (GraphSource::Fixed(g), r)
    };

    let placement = match a.path.unwrap_or(PathArg::Helix) {
        PathArg::Helix => {
            let Placement::Helix { radius: r0, dphi, slope } = Placement::default_helix(radius) else {
                unreachable!()
            };
            Placement::Helix {
                radius: a.radius.unwrap_or(r0),
                dphi: a.dphi.unwrap_or(dphi),
                slope: a.slope.unwrap_or(slope),
            }
        }
        PathArg::Parametric => {
            let Placement::Parametric { a: ca, b, t_step, scale } = Placement::default_parametric(radius) else {
                unreachable!()
            };
            Placement::Parametric { a: ca, b, t_step: a.t_step.unwrap_or(t_step), scale: a.scale.unwrap_or(scale) }
        }
        PathArg::Offset => Placement::Offset {
            d: match &a.offset {
                Some(s) => parse_point(s)?,
                None => Point3::new(radius, 0.0, 0.0),
            },
        },
    };
    let assembly = assemble(&mut source, &placement, steps, &policy)?;
    let g = &assembly.graph;
    let mut settings = serde_json::to_value(a)?;
    settings["placement"] = serde_json::to_value(placement)?;
    let summary = json!({"nodes": g.node_count(), "edges": g.edge_count(), "steps": steps});
    let hash = write_manifest("assemble", &settings, Some(seed), out, summary)?;
    save_graph_with_meta(g, Some(json!({"config_hash": hash, "provenance": assembly.provenance})), out)?;
    log::info!("assembled {} nodes, {} edges", g.node_count(), g.edge_count());
    Ok(())
}

fn mesh(a: &MeshArgs) -> Result<()> {
    let input = required(&a.input, "in")?;
    let stl = required(&a.stl, "stl")?;
    let g = load_graph(input)?;
    let cfg = MeshConfig {
        radius: a.radius.unwrap_or(MeshConfig::default().radius),
        spacing: a.spacing,
        divisions: a.res.unwrap_or(MeshConfig::default().divisions),
        smooth_passes: a.smooth.unwrap_or(MeshConfig::default().smooth_passes),
    };
    let m = mesh_graph(&g, &cfg)?;
    if m.is_empty() {
        bail!("the mesh is empty; use a finer --spacing or a larger --radius");
    }
    let settings = serde_json::to_value(a)?;
    let hash = config_hash(&settings);
    export_stl(&m, &stl_header(&hash), stl)?;
    let watertight = m.is_watertight();
    if !watertight {
        log::warn!("mesh is not watertight");
    }
    write_manifest(
        "mesh",
        &settings,
        None,
        stl,
        json!({"triangles": m.triangles.len(), "vertices": m.vertices.len(), "watertight": watertight}),
    )?;
    log::info!("{} triangles", m.triangles.len());
    Ok(())
}
