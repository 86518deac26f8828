//! Staged command-line pipeline.
//!
//! Every stage reads its inputs from the output directory (or from paths in the
//! configuration), writes CSV outputs there, and puts a `.meta` sidecar next to
//! each output with input hashes, the seed and the parameters used.
//!
//! Configuration is a flat `key = value` file. Values given with `--set
//! key=value` or with subcommand flags override the file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, Subcommand};
use nalgebra::DMatrix;

use crate::corpus::{
    clean_doc, load_corpus, read_docs_csv, resolve_coords, write_corpus_csv, write_docs_csv,
    CorpusFormat, Gazetteer, Record, StopwordSet, TagPolicy,
};
use crate::embed::{
    embed_corpus, export_embeddings, fit_context, fit_context_with_ridge, import_embeddings,
    load_word_vectors, EmbeddingSpace,
};
use crate::error::{Error, Result};
use crate::evalkit::{
    compare_rankings, component_sweep, load_labels, pair_cosines, top_pair_quality_from_scores,
    write_pair_scores_csv, DEFAULT_TOP_N, DEFAULT_UNIFORM_THRESHOLD,
};
use crate::geotime::{build_feature_matrix, FeatureVariant};
use crate::par::derive_seed;
use crate::rankopt::{
    optimize_alphas, rank_matrix, read_label_scores, score_matrix, write_trace_csv, Batch,
    DistKind, GridConfig, SimKind, SimilarityParams, REFERENCE_PI_ALPHAS,
};
use crate::sidecar::{join_f64, sidecar_path, Sidecar};
use crate::spectra::{augment_variant, delta_cosine_experiment, fit_pca, transform};
use crate::tabular::{create, read_matrix_csv, write_matrix_csv};
use crate::tsne::{
    read_colors, run_tsne, write_coords_csv, write_svg, CostVariant, LowDimKernel, TsneConfig,
};

const RECORDS: &str = "records.csv";
const DOCS: &str = "docs.csv";
const EMBEDDINGS: &str = "embeddings.csv";
const REDUCED: &str = "reduced.csv";
const AUGMENTED: &str = "augmented.csv";

const TSNE_SEED_STREAM: u64 = 1;
const SWEEP_SEED_STREAM: u64 = 2;

/// Keys whose values are filesystem paths; relative values in a config file
/// are resolved against the file's directory.
const PATH_KEYS: &[&str] = &[
    "corpus",
    "gazetteer",
    "stopwords",
    "vectors",
    "labels",
    "batch_labels",
    "colors",
    "out_dir",
];

const KNOWN_KEYS: &[&str] = &[
    "corpus",
    "format",
    "gazetteer",
    "stopwords",
    "tags",
    "vectors",
    "ridge",
    "k",
    "variant",
    "sim_kind",
    "dist_kinds",
    "alphas",
    "batch_labels",
    "batch_ids",
    "grid.bounds",
    "grid.points",
    "grid.shrink",
    "grid.rounds",
    "uniform_threshold",
    "tsne.input",
    "tsne.seed",
    "tsne.perplexity",
    "tsne.iterations",
    "tsne.learning_rate",
    "tsne.momentum",
    "tsne.final_momentum",
    "tsne.momentum_switch",
    "tsne.exaggeration",
    "tsne.exaggeration_iters",
    "tsne.kernel",
    "tsne.cost",
    "colors",
    "labels",
    "scale_max",
    "top_n",
    "eval.input",
    "k_list",
    "sweep.trials",
    "sweep.pairs",
    "seed",
    "out_dir",
];

#[derive(Debug, Parser)]
#[command(
    name = "ctxsim",
    version,
    about = "Context-aware similarity pipeline for timestamped, geolocated short texts"
)]
pub struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed for every stochastic stage.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Directory holding stage inputs and outputs.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Override a configuration key.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load the corpus, resolve coordinates, clean the text.
    Ingest {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        gazetteer: Option<PathBuf>,
    },
    /// Build geotemporal feature matrices.
    Encode,
    /// Salience-weighted sentence embeddings.
    Embed {
        #[arg(long)]
        vectors: Option<PathBuf>,
    },
    /// PCA on the embeddings.
    Reduce {
        #[arg(long)]
        k: Option<usize>,
    },
    /// Append standardized features to the reduced embeddings.
    Augment {
        #[arg(long)]
        variant: Option<String>,
    },
    /// Pairwise context-aware similarity matrix.
    Score {
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated kernel weights.
        #[arg(long)]
        alphas: Option<String>,
    },
    /// Fit kernel weights against labeled batch scores.
    Optimize {
        #[arg(long)]
        batch_labels: Option<PathBuf>,
    },
    /// Two-dimensional layout of a stage output.
    Tsne {
        /// augmented, reduced or embeddings
        #[arg(long)]
        input: Option<String>,
    },
    /// Top-pair quality of a space against human labels.
    Eval {
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Component sweep and cosine-change experiments.
    Sweep {
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Encode => "encode",
            Command::Embed { .. } => "embed",
            Command::Reduce { .. } => "reduce",
            Command::Augment { .. } => "augment",
            Command::Score { .. } => "score",
            Command::Optimize { .. } => "optimize",
            Command::Tsne { .. } => "tsne",
            Command::Eval { .. } => "eval",
            Command::Sweep { .. } => "sweep",
        }
    }

    fn flag_overrides(&self) -> Vec<(String, String)> {
        let path = |k: &str, p: &Option<PathBuf>| {
            p.as_ref().map(|p| (k.to_string(), p.display().to_string()))
        };
        let text = |k: &str, v: &Option<String>| v.as_ref().map(|v| (k.to_string(), v.clone()));
        match self {
            Command::Ingest { corpus, gazetteer } => {
                [path("corpus", corpus), path("gazetteer", gazetteer)]
                    .into_iter()
                    .flatten()
                    .collect()
            }
            Command::Encode => Vec::new(),
            Command::Embed { vectors } => path("vectors", vectors).into_iter().collect(),
            Command::Reduce { k } => k
                .map(|k| ("k".to_string(), k.to_string()))
                .into_iter()
                .collect(),
            Command::Augment { variant } => text("variant", variant).into_iter().collect(),
            Command::Score { kind, alphas } => [text("sim_kind", kind), text("alphas", alphas)]
                .into_iter()
                .flatten()
                .collect(),
            Command::Optimize { batch_labels } => {
                path("batch_labels", batch_labels).into_iter().collect()
            }
            Command::Tsne { input } => text("tsne.input", input).into_iter().collect(),
            Command::Eval { labels } | Command::Sweep { labels } => {
                path("labels", labels).into_iter().collect()
            }
        }
    }
}

/// Resolved settings for one invocation.
#[derive(Debug, Clone)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    pub seed: u64,
    pub out_dir: PathBuf,
}

fn parse_assignment(line: &str) -> Result<(String, String)> {
    let (k, v) = line
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{line}`")))?;
    let key = k.trim().to_string();
    if !KNOWN_KEYS.contains(&key.as_str()) {
        return Err(Error::Config(format!("unknown configuration key `{key}`")));
    }
    Ok((key, v.trim().to_string()))
}

impl RunConfig {
    /// Parses flat `key = value` text; `#` starts a comment line.
    pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>> {
        let mut out = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = parse_assignment(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
            if out.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!(
                    "line {}: key `{k}` set twice",
                    n + 1
                )));
            }
        }
        Ok(out)
    }

    pub fn load(
        config: Option<&Path>,
        overrides: &[(String, String)],
        seed: Option<u64>,
        out_dir: Option<PathBuf>,
    ) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let base = path.parent().unwrap_or(Path::new(""));
            for (k, v) in Self::parse_flat(&text)? {
                let v = if PATH_KEYS.contains(&k.as_str()) {
                    base.join(&v).display().to_string()
                } else {
                    v
                };
                values.insert(k, v);
            }
        }
        for (k, v) in overrides {
            if !KNOWN_KEYS.contains(&k.as_str()) {
                return Err(Error::Config(format!("unknown configuration key `{k}`")));
            }
            values.insert(k.clone(), v.clone());
        }
        let seed = match seed {
            Some(s) => s,
            None => values
                .get("seed")
                .map(|s| {
                    s.parse()
                        .map_err(|_| Error::Config(format!("seed `{s}` is not an integer")))
                })
                .transpose()?
                .unwrap_or(0),
        };
        let out_dir = out_dir
            .or_else(|| values.get("out_dir").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Ok(Self {
            values,
            seed,
            out_dir,
        })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values
            .get(key)
            .map(String::as_str)
            .filter(|v| !v.is_empty())
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("`{key}` has invalid value `{v}`"))),
        }
    }

    fn parse_enum<T: FromStr<Err = Error>>(&self, key: &str, default: &str) -> Result<T> {
        self.raw(key).unwrap_or(default).parse()
    }

    pub fn list_or<T: FromStr>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v
                .split(',')
                .map(|s| {
                    s.trim().parse().map_err(|_| {
                        Error::Config(format!("`{key}` has invalid item `{}`", s.trim()))
                    })
                })
                .collect(),
        }
    }

    /// A user-supplied input path that must exist.
    pub fn input_path(&self, key: &str) -> Result<PathBuf> {
        self.optional_input_path(key)?
            .ok_or_else(|| Error::Config(format!("`{key}` is required for this stage")))
    }

    pub fn optional_input_path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.raw(key) {
            None => Ok(None),
            Some(p) => {
                let p = PathBuf::from(p);
                if p.is_file() {
                    Ok(Some(p))
                } else {
                    Err(Error::Config(format!(
                        "`{key}` points to missing file {}",
                        p.display()
                    )))
                }
            }
        }
    }

    /// A file produced by an earlier stage.
    fn stage_input(&self, file: &str, stage: &str) -> Result<PathBuf> {
        let p = self.out_dir.join(file);
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingStage {
                stage: stage.into(),
                path: p,
            })
        }
    }

    fn output(&self, file: &str) -> PathBuf {
        self.out_dir.join(file)
    }

    fn meta(&self, stage: &str) -> Sidecar {
        let mut m = Sidecar::new();
        m.set("stage", stage).set("seed", self.seed);
        m
    }

    fn grid_config(&self, n_alphas: usize) -> Result<GridConfig> {
        let d = GridConfig::default();
        let bounds = match self.raw("grid.bounds") {
            None => vec![d.bounds[0]; n_alphas],
            Some(v) => v
                .split(',')
                .map(|b| {
                    let (lo, hi) = b
                        .split_once(':')
                        .ok_or_else(|| Error::Config(format!("grid bound `{b}` is not `lo:hi`")))?;
                    let num = |s: &str| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("grid bound `{b}` is not numeric")))
                    };
                    Ok((num(lo)?, num(hi)?))
                })
                .collect::<Result<_>>()?,
        };
        Ok(GridConfig {
            bounds,
            points_per_axis: self.parse_or("grid.points", d.points_per_axis)?,
            shrink: self.parse_or("grid.shrink", d.shrink)?,
            rounds: self.parse_or("grid.rounds", d.rounds)?,
            seed: self.seed,
        })
    }

    fn tsne_config(&self) -> Result<TsneConfig> {
        let d = TsneConfig::default();
        Ok(TsneConfig {
            perplexity: self.parse_or("tsne.perplexity", d.perplexity)?,
            iterations: self.parse_or("tsne.iterations", d.iterations)?,
            learning_rate: self.parse_or("tsne.learning_rate", d.learning_rate)?,
            momentum: self.parse_or("tsne.momentum", d.momentum)?,
            final_momentum: self.parse_or("tsne.final_momentum", d.final_momentum)?,
            momentum_switch_iter: self.parse_or("tsne.momentum_switch", d.momentum_switch_iter)?,
            exaggeration: self.parse_or("tsne.exaggeration", d.exaggeration)?,
            exaggeration_iters: self.parse_or("tsne.exaggeration_iters", d.exaggeration_iters)?,
            seed: self.parse_or("tsne.seed", derive_seed(self.seed, TSNE_SEED_STREAM))?,
            kernel: self.parse_enum::<LowDimKernel>("tsne.kernel", "gaussian")?,
            cost: self.parse_enum::<CostVariant>("tsne.cost", "symmetric_joint")?,
        })
    }

    fn similarity_params(&self) -> Result<SimilarityParams> {
        let kind: SimKind = self.parse_enum("sim_kind", "pi")?;
        let dist_kinds: Vec<DistKind> = match self.raw("dist_kinds") {
            None => vec![DistKind::InvAbs, DistKind::FloorGeo],
            Some(v) => v.split(',').map(str::parse).collect::<Result<_>>()?,
        };
        let alphas = self.list_or("alphas", REFERENCE_PI_ALPHAS.to_vec())?;
        SimilarityParams::new(kind, alphas, dist_kinds)
    }
}

fn space_input(cfg: &RunConfig, key: &str) -> Result<(PathBuf, EmbeddingSpace)> {
    let (file, stage) = match cfg.raw(key).unwrap_or("augmented") {
        "augmented" => (AUGMENTED, "augment"),
        "reduced" => (REDUCED, "reduce"),
        "embeddings" => (EMBEDDINGS, "embed"),
        other => {
            return Err(Error::Usage(format!(
                "`{key}` must be augmented, reduced or embeddings, got `{other}`"
            )))
        }
    };
    let path = cfg.stage_input(file, stage)?;
    let (ids, _, m) = read_matrix_csv(&path)?;
    Ok((path, EmbeddingSpace::new(ids, m)?))
}

fn features_file(variant: FeatureVariant) -> String {
    format!(
        "features_{}.csv",
        match variant {
            FeatureVariant::AllFeatures => "all",
            FeatureVariant::CondensedTime => "condensed",
        }
    )
}

fn read_features(
    cfg: &RunConfig,
    variant: FeatureVariant,
    ids: &[String],
) -> Result<(PathBuf, DMatrix<f64>)> {
    let path = cfg.stage_input(&features_file(variant), "encode")?;
    let (fids, _, m) = read_matrix_csv(&path)?;
    if fids != ids {
        return Err(Error::domain(format!(
            "{} does not list the same ids in the same order as the embeddings",
            path.display()
        )));
    }
    Ok((path, m))
}

fn select_batch(cfg: &RunConfig, records: Vec<Record>) -> Result<Vec<Record>> {
    let Some(list) = cfg.raw("batch_ids") else {
        return Ok(records);
    };
    let mut by_id: BTreeMap<String, Record> =
        records.into_iter().map(|r| (r.id.clone(), r)).collect();
    list.split(',')
        .map(|id| {
            let id = id.trim();
            by_id
                .remove(id)
                .ok_or_else(|| Error::Reference(format!("batch id `{id}` (missing or repeated)")))
        })
        .collect()
}

fn cmd_ingest(cfg: &RunConfig) -> Result<()> {
    let corpus = cfg.input_path("corpus")?;
    let format = match cfg.raw("format") {
        Some(f) => f.parse()?,
        None => CorpusFormat::from_path(&corpus),
    };
    let mut records = load_corpus(&corpus, format)?;
    let mut meta = cfg.meta("ingest");
    meta.hash_input("corpus", &corpus)?;
    if let Some(g) = cfg.optional_input_path("gazetteer")? {
        resolve_coords(&mut records, &Gazetteer::load(&g)?)?;
        meta.hash_input("gazetteer", &g)?;
    }
    let stopwords = match cfg.optional_input_path("stopwords")? {
        Some(p) => {
            meta.hash_input("stopwords", &p)?;
            StopwordSet::load(&p)?
        }
        None => StopwordSet::english(),
    };
    let tags = match cfg.raw("tags").unwrap_or("keep") {
        "keep" => TagPolicy::Keep,
        "drop" => TagPolicy::Drop,
        other => {
            return Err(Error::Usage(format!(
                "tags must be keep or drop, got `{other}`"
            )))
        }
    };
    meta.set("tags", cfg.raw("tags").unwrap_or("keep"))
        .set("records", records.len());
    let docs: Vec<_> = records
        .iter()
        .map(|r| clean_doc(r, &stopwords, tags))
        .collect();

    let (rec_path, doc_path) = (cfg.output(RECORDS), cfg.output(DOCS));
    write_corpus_csv(&records, &rec_path)?;
    meta.write(&sidecar_path(&rec_path))?;
    write_docs_csv(&docs, &doc_path)?;
    meta.write(&sidecar_path(&doc_path))?;
    let located = records.iter().filter(|r| r.coords.is_some()).count();
    println!(
        "ingest: {} records ({located} with coordinates) -> {}",
        records.len(),
        rec_path.display()
    );
    Ok(())
}

fn cmd_encode(cfg: &RunConfig) -> Result<()> {
    let rec_path = cfg.stage_input(RECORDS, "ingest")?;
    let records = load_corpus(&rec_path, CorpusFormat::Csv)?;
    let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    for variant in [FeatureVariant::AllFeatures, FeatureVariant::CondensedTime] {
        let m = build_feature_matrix(&records, variant)?;
        let names: Vec<String> = variant
            .column_names()
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = cfg.output(&features_file(variant));
        write_matrix_csv(&out, &ids, &names, &m)?;
        let mut meta = cfg.meta("encode");
        meta.hash_input("records", &rec_path)?
            .set("variant", variant);
        meta.write(&sidecar_path(&out))?;
        println!(
            "encode: {variant} {}x{} -> {}",
            m.nrows(),
            m.ncols(),
            out.display()
        );
    }
    Ok(())
}

fn cmd_embed(cfg: &RunConfig) -> Result<()> {
    let doc_path = cfg.stage_input(DOCS, "ingest")?;
    let vec_path = cfg.input_path("vectors")?;
    let docs = read_docs_csv(&doc_path)?;
    let table = load_word_vectors(&vec_path)?;
    let ctx = match cfg.raw("ridge") {
        Some(_) => fit_context_with_ridge(&docs, &table, cfg.parse_or("ridge", 0.0)?)?,
        None => fit_context(&docs, &table)?,
    };
    let space = embed_corpus(&docs, &ctx, &table)?;
    let out = cfg.output(EMBEDDINGS);
    export_embeddings(&space, &out)?;
    let mut meta = cfg.meta("embed");
    meta.hash_input("docs", &doc_path)?
        .hash_input("vectors", &vec_path)?
        .set("ridge", ctx.ridge())
        .set("dim", space.dim());
    meta.write(&sidecar_path(&out))?;
    println!(
        "embed: {} documents, dim {} -> {}",
        space.len(),
        space.dim(),
        out.display()
    );
    Ok(())
}

fn cmd_reduce(cfg: &RunConfig) -> Result<()> {
    let in_path = cfg.stage_input(EMBEDDINGS, "embed")?;
    let space = import_embeddings(&in_path)?;
    let k: usize = cfg.parse_or("k", 8)?;
    let model = fit_pca(&space, k)?;
    let reduced = transform(&model, &space)?;
    let names: Vec<String> = (1..=k).map(|j| format!("c{j}")).collect();
    let out = cfg.output(REDUCED);
    write_matrix_csv(&out, space.ids(), &names, &reduced)?;
    let mut meta = cfg.meta("reduce");
    meta.hash_input("embeddings", &in_path)?
        .set("k", k)
        .set("explained_variance", join_f64(model.explained_variance()))
        .set("total_variance", model.total_variance());
    meta.write(&sidecar_path(&out))?;
    let kept: f64 = model.explained_variance().iter().sum();
    println!(
        "reduce: k={k}, {:.4} of variance kept -> {}",
        if model.total_variance() > 0.0 {
            kept / model.total_variance()
        } else {
            1.0
        },
        out.display()
    );
    Ok(())
}

fn cmd_augment(cfg: &RunConfig) -> Result<()> {
    let variant: FeatureVariant = cfg.parse_enum("variant", "all_features")?;
    let red_path = cfg.stage_input(REDUCED, "reduce")?;
    let feat_path = cfg.stage_input(&features_file(variant), "encode")?;
    let (ids, _, reduced) = read_matrix_csv(&red_path)?;
    let (fids, _, features) = read_matrix_csv(&feat_path)?;
    if reduced.nrows() != features.nrows() {
        return Err(Error::domain(format!(
            "{} has {} rows but {} has {}",
            red_path.display(),
            reduced.nrows(),
            feat_path.display(),
            features.nrows()
        )));
    }
    if ids != fids {
        return Err(Error::domain(format!(
            "{} and {} list different ids",
            red_path.display(),
            feat_path.display()
        )));
    }
    let space = augment_variant(&reduced, &features, &ids, variant)?;
    let out = cfg.output(AUGMENTED);
    let mut meta = cfg.meta("augment");
    meta.hash_input("reduced", &red_path)?
        .hash_input("features", &feat_path)?;
    space.write(&out, &meta)?;
    println!(
        "augment: {} rows, k={} + f={} ({variant}) -> {}",
        ids.len(),
        space.k,
        space.f,
        out.display()
    );
    Ok(())
}

fn load_batch(cfg: &RunConfig, meta: &mut Sidecar) -> Result<Batch> {
    let emb_path = cfg.stage_input(EMBEDDINGS, "embed")?;
    let rec_path = cfg.stage_input(RECORDS, "ingest")?;
    meta.hash_input("embeddings", &emb_path)?
        .hash_input("records", &rec_path)?;
    let space = import_embeddings(&emb_path)?;
    let records = select_batch(cfg, load_corpus(&rec_path, CorpusFormat::Csv)?)?;
    Batch::from_records(&records, &space)
}

fn describe_params(meta: &mut Sidecar, p: &SimilarityParams) {
    meta.set("sim_kind", p.kind)
        .set(
            "dist_kinds",
            p.dist_kinds
                .iter()
                .map(|d| d.as_str())
                .collect::<Vec<_>>()
                .join(","),
        )
        .set("alphas", join_f64(&p.alphas));
}

fn cmd_score(cfg: &RunConfig) -> Result<()> {
    let params = cfg.similarity_params()?;
    let mut meta = cfg.meta("score");
    let batch = load_batch(cfg, &mut meta)?;
    let scores = score_matrix(&batch, &params)?;
    let out = cfg.output("scores.csv");
    write_matrix_csv(&out, &batch.ids, &batch.ids, &scores)?;
    describe_params(&mut meta, &params);
    meta.write(&sidecar_path(&out))?;
    println!(
        "score: {} {}x{} -> {}",
        params.kind,
        scores.nrows(),
        scores.ncols(),
        out.display()
    );
    Ok(())
}

fn cmd_optimize(cfg: &RunConfig) -> Result<()> {
    let start = cfg.similarity_params()?;
    let label_path = cfg.input_path("batch_labels")?;
    let mut meta = cfg.meta("optimize");
    let batch = load_batch(cfg, &mut meta)?;
    meta.hash_input("batch_labels", &label_path)?;
    let labeled = rank_matrix(&read_label_scores(&label_path)?)?;
    let grid = cfg.grid_config(start.dist_kinds.len())?;
    let outcome = optimize_alphas(&batch, &labeled, start.kind, &start.dist_kinds, &grid)?;
    let predicted = rank_matrix(&score_matrix(&batch, &outcome.params)?)?;
    let report = compare_rankings(
        &predicted,
        &labeled,
        cfg.parse_or("uniform_threshold", DEFAULT_UNIFORM_THRESHOLD)?,
    )?;

    describe_params(&mut meta, &outcome.params);
    meta.set("loss", outcome.loss)
        .set(
            "grid.bounds",
            grid.bounds
                .iter()
                .map(|(l, h)| format!("{l}:{h}"))
                .collect::<Vec<_>>()
                .join(","),
        )
        .set("grid.points", grid.points_per_axis)
        .set("grid.shrink", grid.shrink)
        .set("grid.rounds", grid.rounds);
    let trace = cfg.output("trace.csv");
    write_trace_csv(&outcome.trace, &trace)?;
    meta.write(&sidecar_path(&trace))?;
    let heat = cfg.output("heatmap.csv");
    predicted.write_heatmap_csv(&heat)?;
    meta.write(&sidecar_path(&heat))?;
    let rep = cfg.output("ranking.csv");
    report.write_csv(&rep)?;
    meta.write(&sidecar_path(&rep))?;
    println!(
        "optimize: alphas [{}] loss {} ({} near-uniform columns) -> {}",
        join_f64(&outcome.params.alphas),
        outcome.loss,
        report.uniform_columns.len(),
        trace.display()
    );
    Ok(())
}

fn cmd_tsne(cfg: &RunConfig) -> Result<()> {
    let tcfg = cfg.tsne_config()?;
    let (in_path, space) = space_input(cfg, "tsne.input")?;
    let result = run_tsne(space.matrix(), &tcfg)?;
    let mut meta = cfg.meta("tsne");
    meta.hash_input("space", &in_path)?
        .set("tsne.seed", tcfg.seed)
        .set("tsne.perplexity", result.perplexity)
        .set("tsne.iterations", tcfg.iterations)
        .set("tsne.learning_rate", tcfg.learning_rate)
        .set(
            "tsne.step_sizes",
            join_f64(&[result.step_sizes.0, result.step_sizes.1]),
        )
        .set(
            "tsne.momentum",
            join_f64(&[tcfg.momentum, tcfg.final_momentum]),
        )
        .set("tsne.momentum_switch", tcfg.momentum_switch_iter)
        .set("tsne.exaggeration", tcfg.exaggeration)
        .set("tsne.exaggeration_iters", tcfg.exaggeration_iters)
        .set("tsne.kernel", tcfg.kernel)
        .set("tsne.cost", tcfg.cost)
        .set("kl.initial", result.cost_trace[0])
        .set(
            "kl.final",
            *result.cost_trace.last().expect("trace is nonempty"),
        );
    let colors = match cfg.optional_input_path("colors")? {
        Some(p) => {
            meta.hash_input("colors", &p)?;
            read_colors(&p)?
        }
        None => Default::default(),
    };
    let csv = cfg.output("tsne.csv");
    write_coords_csv(&csv, space.ids(), &result.coords)?;
    meta.write(&sidecar_path(&csv))?;
    let svg = cfg.output("tsne.svg");
    write_svg(&svg, space.ids(), &result.coords, &colors)?;
    meta.write(&sidecar_path(&svg))?;
    println!(
        "tsne: {} points, KL {} -> {} -> {}",
        space.len(),
        result.cost_trace[0],
        result.cost_trace.last().expect("trace is nonempty"),
        csv.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let (in_path, space) = space_input(cfg, "eval.input")?;
    let label_path = cfg.input_path("labels")?;
    let scale_max: f64 = cfg.parse_or("scale_max", 4.0)?;
    let top_n: usize = cfg.parse_or("top_n", DEFAULT_TOP_N)?;
    let labels = load_labels(&label_path, scale_max, Some(space.ids()))?;
    let scores = pair_cosines(&space, &labels)?;
    let quality = top_pair_quality_from_scores(&scores, &labels, top_n)?;
    let out = cfg.output("eval.csv");
    write_pair_scores_csv(&out, &labels, &scores)?;
    let mut meta = cfg.meta("eval");
    meta.hash_input("space", &in_path)?
        .hash_input("labels", &label_path)?
        .set("scale_max", scale_max)
        .set("top_n", top_n)
        .set("top_pair_quality", quality);
    meta.write(&sidecar_path(&out))?;
    println!(
        "eval: mean label of top {top_n} of {} pairs = {quality} -> {}",
        labels.len(),
        out.display()
    );
    Ok(())
}

fn cmd_sweep(cfg: &RunConfig) -> Result<()> {
    let emb_path = cfg.stage_input(EMBEDDINGS, "embed")?;
    let space = import_embeddings(&emb_path)?;
    let (all_path, all) = read_features(cfg, FeatureVariant::AllFeatures, space.ids())?;
    let (cond_path, condensed) = read_features(cfg, FeatureVariant::CondensedTime, space.ids())?;
    let label_path = cfg.input_path("labels")?;
    let scale_max: f64 = cfg.parse_or("scale_max", 4.0)?;
    let top_n: usize = cfg.parse_or("top_n", DEFAULT_TOP_N)?;
    let k_list: Vec<usize> = cfg.list_or("k_list", vec![2, 4, 8, 16, 32])?;
    let trials: usize = cfg.parse_or("sweep.trials", 10)?;
    let pairs: usize = cfg.parse_or("sweep.pairs", 500)?;
    let variant: FeatureVariant = cfg.parse_enum("variant", "all_features")?;
    let sweep_seed = derive_seed(cfg.seed, SWEEP_SEED_STREAM);

    let labels = load_labels(&label_path, scale_max, Some(space.ids()))?;
    let result = component_sweep(
        &space, &all, &condensed, &labels, &k_list, top_n, sweep_seed,
    )?;
    let delta_features = if variant == FeatureVariant::AllFeatures {
        &all
    } else {
        &condensed
    };
    let delta =
        delta_cosine_experiment(&space, delta_features, &k_list, trials, pairs, sweep_seed)?;

    let mut meta = cfg.meta("sweep");
    meta.hash_input("embeddings", &emb_path)?
        .hash_input("features_all", &all_path)?
        .hash_input("features_condensed", &cond_path)?
        .hash_input("labels", &label_path)?
        .set(
            "k_list",
            k_list
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(","),
        )
        .set("top_n", top_n)
        .set("scale_max", scale_max)
        .set("sweep.seed", sweep_seed)
        .set("sweep.trials", trials)
        .set("sweep.pairs", pairs)
        .set("variant", variant);
    let sweep_out = cfg.output("sweep.csv");
    result.write_csv(&sweep_out)?;
    meta.write(&sidecar_path(&sweep_out))?;

    let delta_out = cfg.output("delta_cosine.csv");
    let mut w = create(&delta_out)?;
    let mut write_delta = || -> std::io::Result<()> {
        use std::io::Write;
        writeln!(w, "k,mean_abs_delta,stderr")?;
        for p in &delta {
            writeln!(w, "{},{},{}", p.k, p.mean_abs_delta, p.stderr)?;
        }
        w.flush()
    };
    write_delta().map_err(|e| Error::io(&delta_out, e))?;
    meta.write(&sidecar_path(&delta_out))?;

    for row in &result.rows {
        println!(
            "sweep: {} k={} mean_label={}",
            row.variant, row.k, row.mean_label
        );
    }
    if let Some(r) = result.improvement_ratio() {
        println!("sweep: best augmented / best pca_only = {r}");
    }
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut overrides = cli
        .overrides
        .iter()
        .map(|s| parse_assignment(s))
        .collect::<Result<Vec<_>>>()?;
    overrides.extend(cli.command.flag_overrides());
    let cfg = RunConfig::load(
        cli.config.as_deref(),
        &overrides,
        cli.seed,
        cli.out_dir.clone(),
    )?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    log::info!(
        "{} (seed {}, out {})",
        cli.command.name(),
        cfg.seed,
        cfg.out_dir.display()
    );
    match &cli.command {
        Command::Ingest { .. } => cmd_ingest(&cfg),
        Command::Encode => cmd_encode(&cfg),
        Command::Embed { .. } => cmd_embed(&cfg),
        Command::Reduce { .. } => cmd_reduce(&cfg),
        Command::Augment { .. } => cmd_augment(&cfg),
        Command::Score { .. } => cmd_score(&cfg),
        Command::Optimize { .. } => cmd_optimize(&cfg),
        Command::Tsne { .. } => cmd_tsne(&cfg),
        Command::Eval { .. } => cmd_eval(&cfg),
        Command::Sweep { .. } => cmd_sweep(&cfg),
    }
}

/// 2 for invalid parameters or usage, 1 for every other failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) | Error::Usage(_) | Error::Config(_) => 2,
        _ => 1,
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
