//! The `tmm` command line.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};

use crate::biomarker::{feature_ablation_rank, ConnectivityExport};
use crate::checkpoint::{load_model, save_model};
use crate::confidence::{write_confidence_csv, ConfidenceRecord};
use crate::config::RunConfig;
use crate::data::{generate_synthetic, stratified_split, Dataset};
use crate::error::{Result, TmmError};
use crate::model::{ConfidenceMode, ModelConfig, ViewSet};
use crate::rri::{build_edge_matrix, EdgeSource};
use crate::train::{cross_validate, evaluate, fit, MetricsReport};

#[derive(Parser, Debug)]
#[command(name = "tmm", version, about = "Multi-view multi-modal graph attention with confidence-weighted fusion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration (`key = value` lines in [spec], [model], [train])
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for synthetic data, fold splits and initialisation
    #[arg(long)]
    seed: Option<u64>,
    /// Training epochs, overriding the configuration
    #[arg(long)]
    epochs: Option<usize>,
    /// Dataset directory; without it the configured synthetic set is generated
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted ground truth
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the T-RRI and per-modality R-RRI edge matrices of a dataset
    BuildRri {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        lambda_t: Option<f64>,
        #[arg(long)]
        lambda_r: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model, optionally holding out a stratified fold
    Train {
        #[command(flatten)]
        common: Common,
        /// Fold to hold out for evaluation
        #[arg(long)]
        holdout_fold: Option<usize>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified k-fold cross-validation report
    Cv {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "synthetic")]
        task: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "cv_report.csv")]
        out: PathBuf,
    },
    /// Compare graph-view and confidence variants against the full model
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Drop the transcriptomic view
        #[arg(long)]
        no_trri: bool,
        /// Drop the radiomic view
        #[arg(long)]
        no_rri: bool,
        /// Confidence estimator: tfcp, tcp or nn
        #[arg(long, value_parser = parse_confidence)]
        confidence: Option<ConfidenceMode>,
        #[arg(long, default_value = "synthetic")]
        task: String,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value = "ablation.csv")]
        out: PathBuf,
    },
    /// Rank (ROI, modality) features by the accuracy lost when ablated
    RankBiomarkers {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// File of sample ids to evaluate on (one per line); all samples otherwise
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value = "ranking.csv")]
        out: PathBuf,
    },
    /// Write viewer node and edge files for the top-ranked ROIs
    ExportConnectivity {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ranking: PathBuf,
        /// `transcriptomic` or a modality name
        #[arg(long, default_value = "transcriptomic")]
        source: String,
        #[arg(long, default_value_t = 15)]
        top_k: usize,
        /// Output prefix; `.node` and `.edge` are appended
        #[arg(long)]
        out: PathBuf,
    },
    /// Cross-validate every (λ_t, λ_r) pair of a threshold grid
    GridLambda {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "synthetic")]
        task: String,
        #[arg(long)]
        k: Option<usize>,
        /// Threshold values used for both axes
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6")]
        values: Vec<f64>,
        #[arg(long, default_value = "grid_lambda.csv")]
        out: PathBuf,
    },
}

fn parse_confidence(s: &str) -> std::result::Result<ConfidenceMode, String> {
    s.parse().map_err(|e: TmmError| e.to_string())
}

/// Failures split by exit code.
enum Failure {
    Usage(String),
    Run(TmmError),
}

impl From<TmmError> for Failure {
    fn from(e: TmmError) -> Self {
        Failure::Run(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

/// Runs the CLI on `args` (program name first) and returns the exit code:
/// 0 on success, 2 on usage errors, 1 on runtime errors.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let argv: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &argv) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            2
        }
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            1
        }
    }
}

/// Configuration and seed after applying the command-line overrides.
fn resolve(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(epochs) = common.epochs {
        cfg.train.epochs = epochs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dataset(common: &Common, cfg: &RunConfig) -> Result<Dataset> {
    match &common.data {
        Some(dir) => Dataset::load(dir),
        None => Ok(generate_synthetic(&cfg.spec, cfg.train.seed)?.0),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| TmmError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record of one run: arguments, configuration and input file hashes.
struct Manifest {
    text: String,
}

impl Manifest {
    fn new(command: &str, argv: &[String]) -> Self {
        let mut text = String::new();
        let _ = writeln!(text, "command = {command}");
        let _ = writeln!(text, "args = {}", argv.join(" "));
        let _ = writeln!(text, "tmm_version = {}", env!("CARGO_PKG_VERSION"));
        Self { text }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        if path.is_dir() {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| TmmError::io(path, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != "manifest.txt"))
                .collect();
            files.sort();
            for f in files {
                self.input(&f)?;
            }
        } else {
            let _ = writeln!(self.text, "input {} sha256 = {}", path.display(), sha256_file(path)?);
        }
        Ok(())
    }

    fn data(&mut self, common: &Common, cfg: &RunConfig) -> Result<()> {
        match &common.data {
            Some(dir) => self.input(dir),
            None => {
                let _ = writeln!(self.text, "input synthetic seed = {}", cfg.train.seed);
                Ok(())
            }
        }
    }

    fn config(&mut self, common: &Common, cfg: &RunConfig) -> Result<()> {
        if let Some(path) = &common.config {
            self.input(path)?;
        }
        let _ = writeln!(self.text, "seed = {}", cfg.train.seed);
        let _ = write!(self.text, "\n{}", cfg.to_text());
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.text).map_err(|e| TmmError::io(path, e))
    }
}

/// Manifest location next to a file output.
fn manifest_for(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest");
    PathBuf::from(name)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| TmmError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| TmmError::io(path, e))
}

fn folds(k: Option<usize>, cfg: &RunConfig) -> CliResult<usize> {
    match k.unwrap_or(cfg.folds) {
        k if k < 2 => Err(Failure::Usage(format!("--k must be at least 2, got {k}"))),
        k => Ok(k),
    }
}

fn dispatch(command: Command, argv: &[String]) -> CliResult<()> {
    match command {
        Command::GenData { common, out } => {
            if common.data.is_some() {
                return Err(Failure::Usage("gen-data takes no --data".into()));
            }
            let cfg = resolve(&common)?;
            let (ds, truth) = generate_synthetic(&cfg.spec, cfg.train.seed)?;
            create_dir(&out)?;
            ds.save(&out)?;
            truth.save_to_dir(&out, ds.roi_ids(), &ds.modality_names())?;
            let mut manifest = Manifest::new("gen-data", argv);
            manifest.config(&common, &cfg)?;
            manifest.write(&out.join("manifest.txt"))?;
            println!("wrote {} samples, {} ROIs, {} modalities to {}", ds.n_samples(), ds.n_rois(), ds.modalities.len(), out.display());
        }
        Command::BuildRri { common, lambda_t, lambda_r, out } => {
            let cfg = resolve(&common)?;
            let ds = dataset(&common, &cfg)?;
            let lt = lambda_t.unwrap_or(cfg.model.lambda_t);
            let lr = lambda_r.unwrap_or(cfg.model.lambda_r);
            create_dir(&out)?;
            let t = build_edge_matrix(&ds.expression.values, lt, EdgeSource::Transcriptomic)?;
            write_text(&out.join("t_rri.txt"), &t.to_text())?;
            println!("T-RRI: {} edges at λ_t = {lt}", t.edge_count());
            for m in &ds.modalities {
                let e = build_edge_matrix(&m.values, lr, EdgeSource::Modality(m.modality.clone()))?;
                write_text(&out.join(format!("r_rri_{}.txt", m.modality)), &e.to_text())?;
                println!("R-RRI {}: {} edges at λ_r = {lr}", m.modality, e.edge_count());
            }
            let mut manifest = Manifest::new("build-rri", argv);
            manifest.data(&common, &cfg)?;
            manifest.config(&common, &cfg)?;
            let _ = writeln!(manifest.text, "lambda_t = {lt}\nlambda_r = {lr}");
            manifest.write(&out.join("manifest.txt"))?;
        }
        Command::Train { common, holdout_fold, k, out } => {
            let cfg = resolve(&common)?;
            let ds = dataset(&common, &cfg)?;
            let all: Vec<usize> = (0..ds.n_samples()).collect();
            let (train_idx, eval_idx) = match holdout_fold {
                Some(f) => {
                    let k = folds(k, &cfg)?;
                    if f >= k {
                        return Err(Failure::Usage(format!("--holdout-fold {f} with only {k} folds")));
                    }
                    let split = stratified_split(&ds.labels, k, cfg.train.seed)?;
                    (split.train(f), split.test(f).to_vec())
                }
                None => (all.clone(), all),
            };
            let (model, history) = fit(&ds, &train_idx, &cfg.model, &cfg.train)?;
            create_dir(&out)?;
            save_model(&model, &out.join("model.txt"))?;
            let mut hist = String::from("epoch,loss\n");
            for (e, l) in history.iter().enumerate() {
                let _ = writeln!(hist, "{e},{l:?}");
            }
            write_text(&out.join("history.csv"), &hist)?;
            let eval_ids: Vec<&str> = eval_idx.iter().map(|&i| ds.sample_ids[i].as_str()).collect();
            write_text(&out.join("eval_samples.txt"), &(eval_ids.join("\n") + "\n"))?;
            let features = ds.features(&eval_idx);
            let metrics = evaluate(&model, &features, &ds.labels_of(&eval_idx))?;
            if model.config.confidence == ConfidenceMode::Tfcp {
                let pred = model.predict(&features)?;
                let mut records = Vec::new();
                for (m, name) in model.modalities.iter().enumerate() {
                    let (Some(tcp), Some(fcp)) = (&pred.tcp_hat[m], &pred.fcp_hat[m]) else { continue };
                    for (row, &i) in eval_idx.iter().enumerate() {
                        records.push(ConfidenceRecord {
                            sample: ds.sample_ids[i].clone(),
                            modality: name.clone(),
                            tcp: tcp[row],
                            fcp: fcp[row],
                            tfcp: pred.weights[m][row],
                        });
                    }
                }
                write_confidence_csv(&out.join("confidence.csv"), &records)?;
            }
            let mut manifest = Manifest::new("train", argv);
            manifest.data(&common, &cfg)?;
            manifest.config(&common, &cfg)?;
            manifest.write(&out.join("manifest.txt"))?;
            let which = if holdout_fold.is_some() { "held-out" } else { "training" };
            println!(
                "{} epochs, final loss {:.4}; {which} ACC {:.4} F1 {:.4} AUC {:.4}",
                history.len(),
                history.last().copied().unwrap_or(f64::NAN),
                metrics.acc,
                metrics.f1,
                metrics.auc
            );
        }
        Command::Cv { common, task, k, out } => {
            let cfg = resolve(&common)?;
            let k = folds(k, &cfg)?;
            let ds = dataset(&common, &cfg)?;
            let report = cross_validate(&ds, k, &cfg.model, &cfg.train, &task)?;
            report.write_csv(&out)?;
            let mut manifest = Manifest::new("cv", argv);
            manifest.data(&common, &cfg)?;
            manifest.config(&common, &cfg)?;
            manifest.write(&manifest_for(&out))?;
            println!("{}", report.summary_line());
        }
        Command::Ablate { common, no_trri, no_rri, confidence, task, k, out } => {
            let cfg = resolve(&common)?;
            let k = folds(k, &cfg)?;
            let ds = dataset(&common, &cfg)?;
            let reference = (ViewSet::Both, ConfidenceMode::Tfcp);
            let mut variants = vec![reference];
            if !no_trri && !no_rri && confidence.is_none() {
                variants.extend([
                    (ViewSet::RadiomicOnly, ConfidenceMode::Tfcp),
                    (ViewSet::TranscriptomicOnly, ConfidenceMode::Tfcp),
                    (ViewSet::Neither, ConfidenceMode::Tfcp),
                    (ViewSet::Both, ConfidenceMode::Tcp),
                    (ViewSet::Both, ConfidenceMode::Nn),
                ]);
            } else {
                let views = ViewSet::from_flags(!no_trri, !no_rri);
                let chosen = (views, confidence.unwrap_or(ConfidenceMode::Tfcp));
                if chosen != reference {
                    variants.push(chosen);
                }
            }
            let mut reports = Vec::with_capacity(variants.len());
            for &(views, conf) in &variants {
                let model_cfg = ModelConfig { views, confidence: conf, ..cfg.model.clone() };
                let report = cross_validate(&ds, k, &model_cfg, &cfg.train, &task)?;
                println!("{:<28} {}", variant_label(views, conf), report.summary_line());
                reports.push(report);
            }
            write_text(&out, &ablation_csv(&variants, &reports))?;
            let mut manifest = Manifest::new("ablate", argv);
            manifest.data(&common, &cfg)?;
            manifest.config(&common, &cfg)?;
            manifest.write(&manifest_for(&out))?;
        }
        Command::RankBiomarkers { model, data, samples, out } => {
            let m = load_model(&model)?;
            let ds = Dataset::load(&data)?;
            if m.roi_ids != ds.roi_ids() || m.modalities != ds.modality_names() {
                return Err(Failure::Run(TmmError::Data(
                    "dataset ROIs or modalities differ from the model's".into(),
                )));
            }
            let idx = match &samples {
                Some(path) => sample_indices(&ds, path)?,
                None => (0..ds.n_samples()).collect(),
            };
            let ranking = feature_ablation_rank(&m, &ds.features(&idx), &ds.labels_of(&idx))?;
            write_text(&out, &ranking.to_csv())?;
            let mut manifest = Manifest::new("rank-biomarkers", argv);
            manifest.input(&model)?;
            manifest.input(&data)?;
            if let Some(path) = &samples {
                manifest.input(path)?;
            }
            manifest.write(&manifest_for(&out))?;
            for (i, e) in ranking.entries.iter().take(10).enumerate() {
                println!("{:>3} {:<8} {:<8} acc drop {:.4}", i + 1, e.roi, e.modality, e.score);
            }
        }
        Command::ExportConnectivity { data, ranking, source, top_k, out } => {
            let ds = Dataset::load(&data)?;
            let ranked = load_ranking(&ranking)?;
            let (columns, color, rows): (_, usize, Vec<(String, f64)>) = if source == "transcriptomic" {
                let mut seen: Vec<(String, f64)> = Vec::new();
                for (roi, _, score) in &ranked {
                    if !seen.iter().any(|(r, _)| r == roi) {
                        seen.push((roi.clone(), *score));
                    }
                }
                (&ds.expression.values, 0, seen)
            } else {
                let m = ds
                    .modalities
                    .iter()
                    .position(|m| m.modality == source)
                    .ok_or_else(|| Failure::Usage(format!("unknown --source '{source}'")))?;
                let rows = ranked.iter().filter(|r| r.1 == source).map(|r| (r.0.clone(), r.2)).collect();
                (&ds.modalities[m].values, m + 1, rows)
            };
            if top_k == 0 || top_k > rows.len() {
                return Err(Failure::Usage(format!("--top-k must be between 1 and {}", rows.len())));
            }
            let selected = rows[..top_k]
                .iter()
                .map(|(roi, score)| {
                    ds.roi_ids()
                        .iter()
                        .position(|r| r == roi)
                        .map(|i| (i, *score))
                        .ok_or_else(|| TmmError::Data(format!("ranking names unknown ROI '{roi}'")))
                })
                .collect::<Result<Vec<_>>>()?;
            let export = ConnectivityExport::new(columns, ds.roi_ids(), &selected, color)?;
            let with_ext = |ext: &str| {
                let mut p = out.as_os_str().to_owned();
                p.push(ext);
                PathBuf::from(p)
            };
            let (node, edge) = (with_ext(".node"), with_ext(".edge"));
            export.write(&node, &edge)?;
            let mut manifest = Manifest::new("export-connectivity", argv);
            manifest.input(&data)?;
            manifest.input(&ranking)?;
            manifest.write(&with_ext(".manifest"))?;
            println!("wrote {} and {}", node.display(), edge.display());
        }
        Command::GridLambda { common, task, k, values, out } => {
            let cfg = resolve(&common)?;
            let k = folds(k, &cfg)?;
            if values.is_empty() || values.iter().any(|v| !(*v > -1.0 && *v <= 1.0)) {
                return Err(Failure::Usage("--values must lie in (-1, 1]".into()));
            }
            let ds = dataset(&common, &cfg)?;
            let mut csv = String::from("lambda_t,lambda_r,acc,f1,auc\n");
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for &lt in &values {
                for &lr in &values {
                    let model_cfg = ModelConfig { lambda_t: lt, lambda_r: lr, ..cfg.model.clone() };
                    let report = cross_validate(&ds, k, &model_cfg, &cfg.train, &task)?;
                    let [acc, f1, auc] = report.summary();
                    let _ = writeln!(csv, "{lt},{lr},{:.6},{:.6},{:.6}", acc.0, f1.0, auc.0);
                    println!("λ_t {lt:.2} λ_r {lr:.2}  ACC {:.4}  F1 {:.4}  AUC {:.4}", acc.0, f1.0, auc.0);
                    lo = lo.min(acc.0);
                    hi = hi.max(acc.0);
                }
            }
            write_text(&out, &csv)?;
            let mut manifest = Manifest::new("grid-lambda", argv);
            manifest.data(&common, &cfg)?;
            manifest.config(&common, &cfg)?;
            manifest.write(&manifest_for(&out))?;
            println!("ACC spread over {} cells: {:.4}", values.len() * values.len(), hi - lo);
        }
    }
    Ok(())
}

/// Row label of an ablation variant: the confidence estimator for the
/// full graph model, the view set otherwise.
pub fn variant_label(views: ViewSet, conf: ConfidenceMode) -> String {
    let base = match views {
        ViewSet::Both => return conf.to_string(),
        ViewSet::TranscriptomicOnly => "T-RRI only",
        ViewSet::RadiomicOnly => "R-RRI only",
        ViewSet::Neither => "no RRI",
    };
    if conf == ConfidenceMode::Tfcp {
        base.to_string()
    } else {
        format!("{base} {conf}")
    }
}

fn ablation_csv(variants: &[(ViewSet, ConfidenceMode)], reports: &[MetricsReport]) -> String {
    let mut s = String::from(
        "variant,t_rri,r_rri,confidence,acc_mean,acc_std,f1_mean,f1_std,auc_mean,auc_std,p_acc,p_f1,p_auc\n",
    );
    let reference = &reports[0];
    for (&(views, conf), report) in variants.iter().zip(reports) {
        let [acc, f1, auc] = report.summary();
        let p = report
            .t_test(reference)
            .map(|p| p.map(|v| format!("{v:.6}")))
            .unwrap_or_else(|_| ["NA".to_string(), "NA".to_string(), "NA".to_string()]);
        let _ = writeln!(
            s,
            "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            variant_label(views, conf),
            views.uses_transcriptomic(),
            views.uses_radiomic(),
            conf,
            acc.0,
            acc.1,
            f1.0,
            f1.1,
            auc.0,
            auc.1,
            p[0],
            p[1],
            p[2]
        );
    }
    s
}

fn sample_indices(ds: &Dataset, path: &Path) -> Result<Vec<usize>> {
    let text = std::fs::read_to_string(path).map_err(|e| TmmError::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|id| {
            ds.sample_ids
                .iter()
                .position(|s| s == id)
                .ok_or_else(|| TmmError::Data(format!("unknown sample id '{id}' in {}", path.display())))
        })
        .collect()
}

/// `(roi, modality, score)` rows of a ranking CSV, in file order.
fn load_ranking(path: &Path) -> Result<Vec<(String, String, f64)>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| TmmError::Data(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| TmmError::Data(format!("{}: {e}", path.display())))?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| TmmError::Data(format!("{} has no '{name}' column", path.display())))
    };
    let (roi, modality, score) = (col("roi")?, col("modality")?, col("acc_drop")?);
    let mut rows = Vec::new();
    for (no, record) in reader.records().enumerate() {
        let parse_err = |message: String| TmmError::Parse {
            path: path.display().to_string(),
            line: no as u64 + 2,
            message,
        };
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        let field = |i: usize| record.get(i).ok_or_else(|| parse_err("missing field".into()));
        let value: f64 = field(score)?
            .parse()
            .map_err(|_| parse_err(format!("bad score '{}'", record.get(score).unwrap_or(""))))?;
        rows.push((field(roi)?.to_string(), field(modality)?.to_string(), value));
    }
    Ok(rows)
}
