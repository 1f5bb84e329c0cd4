//! Command-line driver: configuration merging and the `phf` subcommands.
//!
//! Settings come from built-in defaults, then an optional TOML file, then
//! command-line flags. The seed has no default and must be supplied by the
//! file or `--seed` for every subcommand that produces results.

use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use image::RgbImage;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::deepfeat::{self, DeepFeatureStore};
use crate::dwt::{build_pyramid, quantize_plane, texture_plane, Wavelet, PYRAMID_LEVELS};
use crate::error::{Error, Result};
use crate::eval::{self, EvalOptions, EvaluationReport, FoldSafeLearner, Learner, ReportSection, Scheme, SvmLearner};
use crate::fsutil;
use crate::fusion::{self, FeatureConfig, FeatureLayout, FeatureMatrix, TexturalCache};
use crate::imagecore::{self, DatasetLayout, DatasetManifest, CLASS_NAMES};
use crate::lbp::lbp_histogram;
use crate::lpq::{lpq_histogram, LpqConfig};
use crate::selection::{self, NcaParams, NormalizedMatrix};

/// Environment variable that overrides the cache directory.
pub const CACHE_ENV: &str = "PHF_CACHE_DIR";

pub const MATRIX_FILE: &str = "features.phfm";
pub const LAYOUT_FILE: &str = "layout.csv";
pub const SELECTION_FILE: &str = "selection.json";
pub const WEIGHTS_FILE: &str = "weights.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const MODEL_FILE: &str = "model.phsv";
const LOCK_FILE: &str = ".phf.lock";

#[derive(Debug, Parser)]
#[command(
    name = "phf",
    version,
    about = "Pyramidal hybrid texture/deep features with NCA selection and a cubic SVM"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the fused feature matrix.
    Extract {
        /// Also write the matrix as CSV.
        #[arg(long)]
        export_csv: bool,
    },
    /// Normalize, prune and rank columns; keep the top k.
    Select {
        #[arg(long)]
        matrix: Option<PathBuf>,
    },
    /// Run the configured validation schemes on the selected columns.
    Evaluate {
        #[arg(long)]
        matrix: Option<PathBuf>,
        #[arg(long)]
        selection: Option<PathBuf>,
    },
    /// Extract, select, evaluate and save a model trained on all images.
    All,
    /// Per-level, per-channel LBP and LPQ histograms of one image.
    Describe {
        image: PathBuf,
        /// Histogram CSV destination (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Dump every pyramid level as CSV planes plus a quantized PNG.
        #[arg(long)]
        pyramid_dir: Option<PathBuf>,
    },
    /// Write an all-zero deep feature store for the dataset.
    StubDeep {
        /// Destination (`.csv` selects the CSV variant).
        #[arg(long)]
        out: PathBuf,
    },
}

/// Flags that override configuration-file values.
#[derive(Debug, Default, Clone, Args)]
pub struct Overrides {
    /// Seed for splits and subsampling; required by every pipeline command.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Dataset root directory.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub layout: Option<DatasetLayout>,
    /// CSV manifest (`id,label`); paths inside are relative to the dataset root.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,
    /// Deep feature store (PHFD binary or CSV).
    #[arg(long, global = true)]
    pub deep_store: Option<PathBuf>,
    /// Use all-zero deep features instead of a store.
    #[arg(long, global = true)]
    pub deep_stub: bool,
    /// Artifact directory (default `phf-out`).
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Textural feature cache (default `<output>/cache`, or `PHF_CACHE_DIR`).
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    /// Recompute textural features without reading or writing the cache.
    #[arg(long, global = true)]
    pub no_cache: bool,
    /// Number of top-ranked columns to keep.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Validation scheme, repeatable: `90:10`, `kfold 10`, ...
    #[arg(long = "scheme", global = true)]
    pub schemes: Vec<String>,
    /// Hold-out repeats.
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// Draw splits without preserving class proportions.
    #[arg(long, global = true)]
    pub no_stratify: bool,
    /// Also evaluate with NCA refit inside every training partition.
    #[arg(long, global = true)]
    pub fold_safe: bool,
    /// Write a PNG bar chart per report section.
    #[arg(long, global = true)]
    pub chart: bool,
    /// LPQ window side (odd, default 5).
    #[arg(long, global = true)]
    pub lpq_window: Option<usize>,
    /// NCA regularization (default 1/n).
    #[arg(long, global = true)]
    pub nca_lambda: Option<f64>,
    #[arg(long, global = true)]
    pub nca_max_iter: Option<usize>,
    /// Fit NCA on a stratified subsample of at most this many rows.
    #[arg(long, global = true)]
    pub nca_max_samples: Option<usize>,
    #[arg(long, global = true)]
    pub svm_c: Option<f64>,
    /// Kernel scale s in (1 + <x,y>/s)^3 (default: number of selected columns).
    #[arg(long, global = true)]
    pub svm_scale: Option<f64>,
}

/// Shape of the TOML file; every key is optional.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub layout: Option<DatasetLayout>,
    pub manifest: Option<PathBuf>,
    pub deep_store: Option<PathBuf>,
    pub deep_stub: Option<bool>,
    pub output: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub cache: Option<bool>,
    pub k: Option<usize>,
    pub schemes: Option<Vec<String>>,
    pub repeats: Option<usize>,
    pub stratified: Option<bool>,
    pub fold_safe: Option<bool>,
    pub chart: Option<bool>,
    pub lpq: Option<LpqSection>,
    pub nca: Option<NcaSection>,
    pub svm: Option<SvmSection>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LpqSection {
    pub window: Option<usize>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcaSection {
    pub lambda: Option<f64>,
    pub initial_step: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub max_samples: Option<usize>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmSection {
    pub c: Option<f64>,
    pub scale: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
}

impl ConfigFile {
    /// Parses a TOML file; relative paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        let text = String::from_utf8(bytes).map_err(|_| Error::validation(format!("{}: not UTF-8", path.display())))?;
        let mut cfg: ConfigFile =
            toml::from_str(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.dataset,
            &mut cfg.manifest,
            &mut cfg.deep_store,
            &mut cfg.output,
            &mut cfg.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Fully resolved settings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipelineConfig {
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub layout: DatasetLayout,
    pub manifest: Option<PathBuf>,
    pub deep_store: Option<PathBuf>,
    pub deep_stub: bool,
    #[serde(skip)]
    pub output: PathBuf,
    #[serde(skip)]
    pub cache_dir: Option<PathBuf>,
    #[serde(skip)]
    pub cache: bool,
    #[serde(skip)]
    pub chart: bool,
    pub features: FeatureConfig,
    pub nca: NcaParams,
    pub k: usize,
    pub svm: SvmLearner,
    pub schemes: Vec<Scheme>,
    pub repeats: usize,
    pub stratified: bool,
    pub fold_safe: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: None,
            dataset: None,
            layout: DatasetLayout::ClassSubdirs,
            manifest: None,
            deep_store: None,
            deep_stub: false,
            output: PathBuf::from("phf-out"),
            cache_dir: None,
            cache: true,
            chart: false,
            features: FeatureConfig::default(),
            nca: NcaParams::default(),
            k: 1000,
            svm: SvmLearner::default(),
            schemes: Scheme::standard_set(),
            repeats: 10,
            stratified: true,
            fold_safe: false,
        }
    }
}

fn parse_schemes(list: &[String]) -> Result<Vec<Scheme>> {
    list.iter().map(|s| s.parse()).collect()
}

impl PipelineConfig {
    /// Defaults, then the file, then the flags.
    pub fn resolve(file: Option<&ConfigFile>, o: &Overrides) -> Result<Self> {
        let mut c = PipelineConfig::default();
        if let Some(f) = file {
            c.seed = f.seed.or(c.seed);
            c.dataset = f.dataset.clone().or(c.dataset);
            c.layout = f.layout.unwrap_or(c.layout);
            c.manifest = f.manifest.clone().or(c.manifest);
            c.deep_store = f.deep_store.clone().or(c.deep_store);
            c.deep_stub = f.deep_stub.unwrap_or(c.deep_stub);
            c.output = f.output.clone().unwrap_or(c.output);
            c.cache_dir = f.cache_dir.clone().or(c.cache_dir);
            c.cache = f.cache.unwrap_or(c.cache);
            c.k = f.k.unwrap_or(c.k);
            if let Some(s) = &f.schemes {
                c.schemes = parse_schemes(s)?;
            }
            c.repeats = f.repeats.unwrap_or(c.repeats);
            c.stratified = f.stratified.unwrap_or(c.stratified);
            c.fold_safe = f.fold_safe.unwrap_or(c.fold_safe);
            c.chart = f.chart.unwrap_or(c.chart);
            if let Some(l) = &f.lpq {
                if let Some(w) = l.window {
                    c.features.lpq = LpqConfig::with_window(w);
                }
                c.features.lpq.alpha = l.alpha.unwrap_or(c.features.lpq.alpha);
            }
            if let Some(n) = &f.nca {
                c.nca.lambda = n.lambda.or(c.nca.lambda);
                c.nca.initial_step = n.initial_step.unwrap_or(c.nca.initial_step);
                c.nca.max_iter = n.max_iter.unwrap_or(c.nca.max_iter);
                c.nca.tol = n.tol.unwrap_or(c.nca.tol);
                c.nca.max_samples = n.max_samples.or(c.nca.max_samples);
            }
            if let Some(s) = &f.svm {
                c.svm.c = s.c.unwrap_or(c.svm.c);
                c.svm.scale = s.scale.or(c.svm.scale);
                c.svm.options.tol = s.tol.unwrap_or(c.svm.options.tol);
                c.svm.options.max_iter = s.max_iter.or(c.svm.options.max_iter);
            }
        }

        // the environment sits between the file and the flags
        if let Ok(dir) = std::env::var(CACHE_ENV) {
            if !dir.is_empty() {
                c.cache_dir = Some(PathBuf::from(dir));
            }
        }

        c.seed = o.seed.or(c.seed);
        c.dataset = o.dataset.clone().or(c.dataset);
        c.layout = o.layout.unwrap_or(c.layout);
        c.manifest = o.manifest.clone().or(c.manifest);
        if o.deep_store.is_some() {
            c.deep_store = o.deep_store.clone();
            c.deep_stub = false;
        }
        c.deep_stub |= o.deep_stub;
        c.output = o.output.clone().unwrap_or(c.output);
        c.cache_dir = o.cache_dir.clone().or(c.cache_dir);
        c.cache &= !o.no_cache;
        c.k = o.k.unwrap_or(c.k);
        if !o.schemes.is_empty() {
            c.schemes = parse_schemes(&o.schemes)?;
        }
        c.repeats = o.repeats.unwrap_or(c.repeats);
        c.stratified &= !o.no_stratify;
        c.fold_safe |= o.fold_safe;
        c.chart |= o.chart;
        if let Some(w) = o.lpq_window {
            c.features.lpq = LpqConfig::with_window(w);
        }
        c.nca.lambda = o.nca_lambda.or(c.nca.lambda);
        c.nca.max_iter = o.nca_max_iter.unwrap_or(c.nca.max_iter);
        c.nca.max_samples = o.nca_max_samples.or(c.nca.max_samples);
        c.svm.c = o.svm_c.unwrap_or(c.svm.c);
        c.svm.scale = o.svm_scale.or(c.svm.scale);

        if let Some(seed) = c.seed {
            c.nca.seed = seed;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        if self.k == 0 {
            return Err(Error::validation("k must be at least 1"));
        }
        if self.schemes.is_empty() {
            return Err(Error::validation("at least one validation scheme is required"));
        }
        if self.repeats == 0 {
            return Err(Error::validation("repeats must be at least 1"));
        }
        if self.deep_stub && self.deep_store.is_some() {
            return Err(Error::validation(
                "choose either a deep store or the zero stub, not both",
            ));
        }
        self.svm.kernel::<f64>(1)?;
        Ok(())
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::validation("a seed is required: set `seed` in the config file or pass --seed"))
    }

    pub fn cache(&self) -> Option<TexturalCache> {
        self.cache
            .then(|| TexturalCache::new(self.cache_dir.clone().unwrap_or_else(|| self.output.join("cache"))))
    }

    pub fn provenance(&self) -> Value {
        let config = serde_json::to_value(self).expect("config serializes");
        let hash = fsutil::sha256_hex(config.to_string().as_bytes())[..16].to_string();
        json!({
            "tool": "phf",
            "version": env!("CARGO_PKG_VERSION"),
            "config_hash": hash,
            "config": config,
        })
    }

    fn csv_comment(&self) -> String {
        let prov = self.provenance();
        format!(
            "# config_hash={} seed={}\n",
            prov["config_hash"].as_str().unwrap_or(""),
            self.seed.map(|s| s.to_string()).unwrap_or_else(|| "-".into())
        )
    }

    pub fn load_manifest(&self) -> Result<DatasetManifest> {
        let root = self
            .dataset
            .as_deref()
            .ok_or_else(|| Error::validation("no dataset configured: pass --dataset"))?;
        if !root.is_dir() {
            return Err(Error::io(
                root,
                std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
            ));
        }
        match &self.manifest {
            Some(csv) => imagecore::read_manifest_csv(root, csv),
            None => imagecore::scan_dataset(root, self.layout),
        }
    }

    pub fn load_store(&self, manifest: &DatasetManifest) -> Result<DeepFeatureStore> {
        if self.deep_stub {
            return Ok(deepfeat::zero_stub_store(manifest));
        }
        match &self.deep_store {
            Some(p) => deepfeat::read_store(p),
            None => Err(Error::validation(
                "no deep feature store configured: pass --deep-store or --deep-stub",
            )),
        }
    }
}

/// Exclusive claim on an output directory, released on drop.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(OutputLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::io(
                &path,
                std::io::Error::new(
                    e.kind(),
                    "another phf run holds this output directory; remove the lock file if that run is gone",
                ),
            )),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Parses arguments and runs the command inside a pool of the requested size.
pub fn run(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref().map(ConfigFile::load).transpose()?;
    let cfg = PipelineConfig::resolve(file.as_ref(), &cli.overrides)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::validation("--threads must be at least 1"));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::validation(format!("cannot build thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &cfg))
}

fn dispatch(command: &Command, cfg: &PipelineConfig) -> Result<()> {
    match command {
        Command::Extract { export_csv } => {
            let _lock = OutputLock::acquire(&cfg.output)?;
            cmd_extract(cfg, *export_csv).map(|_| ())
        }
        Command::Select { matrix } => {
            let _lock = OutputLock::acquire(&cfg.output)?;
            let path = matrix.clone().unwrap_or_else(|| cfg.output.join(MATRIX_FILE));
            cmd_select(cfg, &path).map(|_| ())
        }
        Command::Evaluate { matrix, selection } => {
            let _lock = OutputLock::acquire(&cfg.output)?;
            let m = matrix.clone().unwrap_or_else(|| cfg.output.join(MATRIX_FILE));
            let s = selection.clone().unwrap_or_else(|| cfg.output.join(SELECTION_FILE));
            cmd_evaluate(cfg, &m, &s).map(|_| ())
        }
        Command::All => {
            let _lock = OutputLock::acquire(&cfg.output)?;
            cmd_all(cfg)
        }
        Command::Describe {
            image,
            out,
            pyramid_dir,
        } => cmd_describe(cfg, image, out.as_deref(), pyramid_dir.as_deref()),
        Command::StubDeep { out } => cmd_stub_deep(cfg, out),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fsutil::write_atomic(path, text.as_bytes())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("artifact serializes");
    bytes.push(b'\n');
    fsutil::write_atomic(path, &bytes)
}

fn layout_csv(layout: &FeatureLayout, comment: &str) -> String {
    let mut out = String::from(comment);
    out.push_str("column,name,source,level,channel,local\n");
    for (i, c) in layout.columns().iter().enumerate() {
        out.push_str(&format!(
            "{i},{c},{},{},{},{}\n",
            c.source,
            c.level,
            c.channel.map(|ch| ch.to_string()).unwrap_or_else(|| "-".into()),
            c.local
        ));
    }
    out
}

/// Writes `features.phfm` and `layout.csv`; returns the matrix path.
pub fn cmd_extract(cfg: &PipelineConfig, export_csv: bool) -> Result<PathBuf> {
    cfg.seed()?;
    let manifest = cfg.load_manifest()?;
    let store = cfg.load_store(&manifest)?;
    let cache = cfg.cache();
    let matrix: FeatureMatrix<f64> = fusion::fuse_dataset(&manifest, &store, &cfg.features, cache.as_ref())?;
    let mut prov = cfg.provenance();
    prov["deep_store"] = json!({ "stub": store.is_stub(), "metadata": store.metadata() });
    let path = cfg.output.join(MATRIX_FILE);
    fusion::write_matrix(&matrix, &prov, &path)?;
    write_text(
        &cfg.output.join(LAYOUT_FILE),
        &layout_csv(&matrix.layout, &cfg.csv_comment()),
    )?;
    if export_csv {
        let text = cfg.csv_comment() + &fusion::matrix_to_csv(&matrix);
        write_text(&cfg.output.join("features.csv"), &text)?;
    }
    println!(
        "extracted {} x {} feature matrix -> {}",
        matrix.rows(),
        matrix.cols(),
        path.display()
    );
    Ok(path)
}

/// Contents of `selection.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionFile {
    pub provenance: Value,
    pub layout_hash: String,
    pub matrix_digest: String,
    pub rows: usize,
    pub total_columns: usize,
    pub surviving_columns: usize,
    pub eliminated_columns: usize,
    pub eliminated_deep_columns: usize,
    pub k: usize,
    pub lambda: f64,
    pub iterations: usize,
    pub samples_used: usize,
    pub objective_trace: Vec<f64>,
    /// Original column indices in rank order.
    pub selected: Vec<usize>,
    pub selected_names: Vec<String>,
}

fn prepare(matrix: &FeatureMatrix<f64>) -> Result<NormalizedMatrix<f64>> {
    selection::eliminate_zero_sum(&selection::minmax_normalize(&matrix.values))
}

pub fn cmd_select(cfg: &PipelineConfig, matrix_path: &Path) -> Result<SelectionFile> {
    cfg.seed()?;
    let bytes = fsutil::read(matrix_path)?;
    let (matrix, _) = fusion::matrix_from_bytes::<f64>(&bytes)?;
    let pruned = prepare(&matrix)?;
    if cfg.k > pruned.ncols() {
        return Err(Error::validation(format!(
            "k = {} exceeds the {} columns left after zero-sum elimination",
            cfg.k,
            pruned.ncols()
        )));
    }
    let weights = selection::nca_fit(pruned.values.view(), &matrix.labels, &cfg.nca)?;
    let top = selection::select_top_k(&weights.weights, cfg.k)?;
    let selected: Vec<usize> = top.iter().map(|&p| pruned.columns[p]).collect();
    let eliminated: Vec<usize> = (0..matrix.cols()).filter(|c| !pruned.columns.contains(c)).collect();
    let eliminated_deep = eliminated
        .iter()
        .filter(|&&c| matrix.layout.get(c).is_some_and(|d| d.source.is_deep()))
        .count();

    let sel = SelectionFile {
        provenance: cfg.provenance(),
        layout_hash: matrix.layout.hash(),
        matrix_digest: fsutil::sha256_hex(&bytes),
        rows: matrix.rows(),
        total_columns: matrix.cols(),
        surviving_columns: pruned.ncols(),
        eliminated_columns: eliminated.len(),
        eliminated_deep_columns: eliminated_deep,
        k: cfg.k,
        lambda: weights.lambda,
        iterations: weights.iterations,
        samples_used: weights.samples_used,
        objective_trace: weights.trace.clone(),
        selected_names: selected
            .iter()
            .map(|&c| matrix.layout.get(c).map(|d| d.to_string()).unwrap_or_default())
            .collect(),
        selected,
    };
    write_json(&cfg.output.join(SELECTION_FILE), &sel)?;
    let csv = cfg.csv_comment() + &selection::weights_csv(&matrix.layout, &pruned.columns, &weights.weights);
    write_text(&cfg.output.join(WEIGHTS_FILE), &csv)?;
    println!(
        "kept {} of {} columns after zero-sum elimination; selected top {} (NCA: {} iterations on {} samples)",
        sel.surviving_columns, sel.total_columns, sel.k, sel.iterations, sel.samples_used
    );
    Ok(sel)
}

fn load_selection(path: &Path) -> Result<SelectionFile> {
    serde_json::from_slice(&fsutil::read(path)?).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

pub fn cmd_evaluate(cfg: &PipelineConfig, matrix_path: &Path, selection_path: &Path) -> Result<EvaluationReport> {
    let seed = cfg.seed()?;
    let bytes = fsutil::read(matrix_path)?;
    let (matrix, _) = fusion::matrix_from_bytes::<f64>(&bytes)?;
    let sel = load_selection(selection_path)?;
    if sel.layout_hash != matrix.layout.hash() || sel.matrix_digest != fsutil::sha256_hex(&bytes) {
        return Err(Error::validation(format!(
            "{} does not match {}; rerun `phf select`",
            selection_path.display(),
            matrix_path.display()
        )));
    }
    let pruned = prepare(&matrix)?;
    let chosen = pruned.select_original(&sel.selected)?;
    let opts = EvalOptions {
        seed,
        stratified: cfg.stratified,
        repeats: cfg.repeats,
    };

    let run_section = |name: &str, x: ndarray::ArrayView2<f64>, learner: &dyn Learner<f64>| -> Result<ReportSection> {
        let schemes = cfg
            .schemes
            .iter()
            .map(|&s| eval::run_scheme(x, &matrix.labels, s, &opts, learner))
            .collect::<Result<Vec<_>>>()?;
        Ok(ReportSection {
            name: name.into(),
            learner: learner.name(),
            schemes,
        })
    };

    let mut sections = vec![run_section("selection-before-split", chosen.values.view(), &cfg.svm)?];
    if cfg.fold_safe {
        let learner = FoldSafeLearner {
            nca: cfg.nca.clone(),
            k: sel.k,
            inner: cfg.svm.clone(),
        };
        sections.push(run_section("fold-safe", pruned.values.view(), &learner)?);
    }
    let report = EvaluationReport {
        provenance: cfg.provenance(),
        sections,
    };
    write_json(&cfg.output.join(REPORT_JSON), &report)?;
    let table = report.to_text_table();
    write_text(&cfg.output.join(REPORT_TEXT), &table)?;
    write_text(
        &cfg.output.join(REPORT_CSV),
        &(cfg.csv_comment() + &report.to_csv_table()),
    )?;
    write_text(
        &cfg.output.join(CONFUSION_CSV),
        &(cfg.csv_comment() + &report.confusion_csv()),
    )?;
    if cfg.chart {
        for section in &report.sections {
            let mut png = Vec::new();
            eval::render_bar_chart(section)
                .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)
                .map_err(|e| Error::format(format!("cannot encode chart: {e}")))?;
            fsutil::write_atomic(&cfg.output.join(format!("report-{}.png", section.name)), &png)?;
        }
    }
    print!("{table}");
    Ok(report)
}

pub fn cmd_all(cfg: &PipelineConfig) -> Result<()> {
    let matrix_path = cmd_extract(cfg, false)?;
    let sel = cmd_select(cfg, &matrix_path)?;
    cmd_evaluate(cfg, &matrix_path, &cfg.output.join(SELECTION_FILE))?;

    let (matrix, _) = fusion::read_matrix::<f64>(&matrix_path)?;
    let chosen = prepare(&matrix)?.select_original(&sel.selected)?;
    let model = cfg.svm.train(chosen.values.view(), &matrix.labels)?;
    model.save(&cfg.output.join(MODEL_FILE))?;
    println!(
        "final model: {} support vectors -> {}",
        model.dual_coef.len(),
        cfg.output.join(MODEL_FILE).display()
    );
    Ok(())
}

pub fn cmd_describe(
    cfg: &PipelineConfig,
    image_path: &Path,
    out: Option<&Path>,
    pyramid_dir: Option<&Path>,
) -> Result<()> {
    let id = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let img = imagecore::load_image(image_path, id)?;
    let pyramid = build_pyramid(&img, &Wavelet::<f64>::db4())?;

    let mut csv = String::from("level,channel,descriptor,bin,count\n");
    for (k, level) in pyramid.levels().iter().enumerate() {
        for plane in level {
            let tex = texture_plane(k, plane);
            let lpq = lpq_histogram(&tex, &cfg.features.lpq)?;
            for (b, v) in lpq.bins.iter().enumerate() {
                csv.push_str(&format!("{k},{},lpq,{b},{v}\n", plane.channel));
            }
            let lbp = lbp_histogram(&tex)?;
            for (b, v) in lbp.bins.iter().enumerate() {
                csv.push_str(&format!("{k},{},lbp,{b},{v}\n", plane.channel));
            }
        }
    }
    match out {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }

    if let Some(dir) = pyramid_dir {
        let mut files = Vec::new();
        for (k, level) in pyramid.levels().iter().enumerate() {
            let (h, w) = level[0].dim();
            let mut png = RgbImage::new(w as u32, h as u32);
            for plane in level {
                let name = format!("level{k}_{}.csv", plane.channel);
                let mut text = String::new();
                for row in plane.values.outer_iter() {
                    let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                    text.push_str(&cells.join(","));
                    text.push('\n');
                }
                write_text(&dir.join(&name), &text)?;
                let q = quantize_plane(&plane.values);
                for ((r, c), v) in q.indexed_iter() {
                    png.get_pixel_mut(c as u32, r as u32).0[plane.channel.index()] = *v as u8;
                }
                files.push(
                    json!({ "level": k, "channel": plane.channel.to_string(), "file": name, "height": h, "width": w }),
                );
            }
            let mut bytes = Vec::new();
            png.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
                .map_err(|e| Error::format(format!("cannot encode PNG: {e}")))?;
            fsutil::write_atomic(&dir.join(format!("level{k}_quantized.png")), &bytes)?;
        }
        let index = json!({
            "image": image_path.file_name().map(|s| s.to_string_lossy().into_owned()),
            "wavelet": "db4",
            "mode": "periodization",
            "levels": PYRAMID_LEVELS,
            "quantization": "per plane: round(255 * (x - min) / (max - min)), constant plane -> 0",
            "planes": files,
        });
        write_json(&dir.join("pyramid.json"), &index)?;
    }
    Ok(())
}

pub fn cmd_stub_deep(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let manifest = cfg.load_manifest()?;
    let store = deepfeat::zero_stub_store(&manifest);
    deepfeat::write_store(&store, out)?;
    println!(
        "wrote {} zero records ({} images, classes {}) -> {}",
        store.len(),
        manifest.len(),
        CLASS_NAMES.join("/"),
        out.display()
    );
    Ok(())
}
