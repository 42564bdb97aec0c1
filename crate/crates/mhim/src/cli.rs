//! Command-line surface: data generation, pretraining, training, evaluation,
//! ablation sweeps, and attention export. Every command resolves one
//! RunConfig (preset -> config file -> --set overrides -> --seed), writes it
//! into the output directory, and produces byte-identical outputs when re-run
//! with the same config and seed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, RunConfig, Strategy};
use crate::data::{
    self, generate_bags, load_dataset, load_manifest, make_splits, resolve_ids, Bag, BagRecord,
    Manifest,
};
use crate::masking::{self, MaskFlags, MaskRatios};
use crate::metrics;
use crate::models::{self, MilModel};
use crate::rng;
use crate::trainer::{self, pretrain_init, score_bags, TeacherMode, TrainOutcome, TrainerConfig};

/// Static version stamp written into every run directory; deliberately not
/// derived from the build environment so reruns are byte-identical.
pub const VERSION: &str = "mhim-0.1.0";

#[derive(Debug)]
enum CliError {
    Config(ConfigError),
    Usage(String),
    Io(String),
    Run(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            // Config problems (including missing/unknown keys and flags): 1.
            CliError::Config(_) | CliError::Usage(_) => 1,
            // IO and runtime failures: 2.
            CliError::Io(_) | CliError::Run(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {}", e),
            CliError::Usage(m) => write!(f, "config error: {}", m),
            CliError::Io(m) => write!(f, "io error: {}", m),
            CliError::Run(m) => write!(f, "error: {}", m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<data::DataError> for CliError {
    fn from(e: data::DataError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<trainer::TrainError> for CliError {
    fn from(e: trainer::TrainError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<models::ModelError> for CliError {
    fn from(e: models::ModelError) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<metrics::MetricsError> for CliError {
    fn from(e: metrics::MetricsError) -> Self {
        CliError::Run(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "mhim", version = VERSION, about = "Masked hard instance mining for MIL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key-value config file applied on top of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override (applies after the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for this run.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base preset: easy or hard.
    #[arg(long, default_value = "easy")]
    preset: String,
    /// Individual key overrides, repeatable: --set key=value.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Directory holding a generated dataset (manifest.csv + bags/);
    /// omitted: the dataset is regenerated in memory from the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Parameter checkpoint file (eval, dump-attn).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset on disk.
    GenData(Common),
    /// Train a vanilla model and save its parameters as an f_p checkpoint.
    Pretrain(Common),
    /// Full teacher-student training run.
    Train(Common),
    /// Evaluate a checkpoint on the test split.
    Eval(Common),
    /// Cartesian strategy x teacher x seed sweep with one aggregated table.
    Ablate(Common),
    /// Export per-instance attention and mask flags as CSV.
    DumpAttn(Common),
}

/// Entry point; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            // Help/version output is not an error.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::GenData(c) => gen_data(c),
        Command::Pretrain(c) => pretrain(c),
        Command::Train(c) => train(c),
        Command::Eval(c) => eval(c),
        Command::Ablate(c) => ablate(c),
        Command::DumpAttn(c) => dump_attn(c),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e);
            e.exit_code()
        }
    }
}

fn resolve_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = RunConfig::preset(&common.preset)?;
    if let Some(path) = &common.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))?;
        cfg.apply_text(&text)?;
    }
    for pair in &common.set {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            CliError::Usage(format!("--set {:?} is not of the form key=value", pair))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(common: &Common) -> Result<&Path> {
    common
        .out
        .as_deref()
        .ok_or_else(|| CliError::Usage("missing required flag --out".to_string()))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::Io(format!("{}: {}", path.display(), e)))
}

/// Resolved config + version stamp, written before any work.
fn write_preamble(dir: &Path, cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("{}: {}", dir.display(), e)))?;
    write_file(&dir.join("run.cfg"), &cfg.render())?;
    write_file(&dir.join("VERSION"), &format!("{}\n", VERSION))?;
    Ok(())
}

/// Load the dataset from --data, or regenerate it in memory from the config.
fn load_or_generate(cfg: &RunConfig, data: &Option<PathBuf>) -> Result<(Manifest, Vec<Bag>)> {
    match data {
        Some(dir) => {
            let manifest = load_manifest(dir)?;
            let bags = load_dataset(dir)?;
            Ok((manifest, bags))
        }
        None => {
            let bags: Vec<Bag> = generate_bags(&cfg.data).into_iter().map(|(b, _)| b).collect();
            let manifest = Manifest {
                records: bags
                    .iter()
                    .map(|b| BagRecord {
                        bag_id: b.id.clone(),
                        label: b.label,
                        n_instances: b.features.rows,
                        feature_path: format!("bags/{}.txt", b.id),
                    })
                    .collect(),
            };
            Ok((manifest, bags))
        }
    }
}

fn splits_for(cfg: &RunConfig, manifest: &Manifest) -> Result<Vec<data::Split>> {
    Ok(make_splits(
        manifest,
        cfg.split,
        &mut rng::stream(cfg.trainer.seed, &["split"]),
    )?)
}

fn gen_data(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    write_preamble(dir, &cfg)?;
    data::generate_dataset(&cfg.data, dir)?;
    Ok(())
}

fn pretrain(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    write_preamble(dir, &cfg)?;
    let (manifest, bags) = load_or_generate(&cfg, &common.data)?;
    let split = splits_for(&cfg, &manifest)?.remove(0);
    let train_bags = resolve_ids(&bags, &split.train);
    let (f_p, student, _) = pretrain_init(&train_bags, &cfg.model, &cfg.trainer)?;
    models::save_params(&dir.join("f_p.ckpt"), &f_p)?;
    student.params().copy_values_from(&f_p).map_err(|e| CliError::Run(e.to_string()))?;
    let mut report = String::new();
    let _ = writeln!(report, "pretrain_epochs={}", cfg.trainer.pretrain_epochs);
    for (name, ids) in [("val", &split.val), ("test", &split.test)] {
        let (scores, labels) = score_bags(&student, &resolve_ids(&bags, ids))?;
        let e = metrics::evaluate(&scores, &labels)?;
        let _ = writeln!(
            report,
            "{}_auc={} {}_accuracy={} {}_f1={}",
            name, e.auc, name, e.accuracy, name, e.f1
        );
    }
    write_file(&dir.join("report.txt"), &report)
}

fn run_cell(
    cfg: &RunConfig,
    bags: &[Bag],
    split: &data::Split,
    trainer_cfg: &TrainerConfig,
) -> Result<TrainOutcome> {
    let mut outcome = trainer::train(bags, split, &cfg.model, trainer_cfg)?;
    outcome.report.config_echo = cfg.render();
    Ok(outcome)
}

fn write_outcome(dir: &Path, outcome: &TrainOutcome) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Io(format!("{}: {}", dir.display(), e)))?;
    write_file(&dir.join("report.txt"), &trainer::render_report(&outcome.report))?;
    models::save_params(&dir.join("best.ckpt"), &outcome.best_params)?;
    models::save_params(&dir.join("f_p.ckpt"), &outcome.f_p)?;
    if let Some(t) = &outcome.teacher_params {
        models::save_params(&dir.join("teacher.ckpt"), t)?;
    }
    Ok(())
}

fn train(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    write_preamble(dir, &cfg)?;
    let (manifest, bags) = load_or_generate(&cfg, &common.data)?;
    let splits = splits_for(&cfg, &manifest)?;
    let single = splits.len() == 1;
    let mut aucs = Vec::with_capacity(splits.len());
    for (i, split) in splits.iter().enumerate() {
        let mut trainer_cfg = cfg.cell_trainer(cfg.strategy, cfg.trainer.teacher);
        trainer_cfg.salt = format!("{}|{}|split{}", cfg.strategy, trainer_cfg.teacher, i);
        let outcome = run_cell(&cfg, &bags, split, &trainer_cfg)?;
        aucs.push(outcome.report.test.auc);
        let cell_dir = if single {
            dir.to_path_buf()
        } else {
            dir.join(format!("split{}", i))
        };
        write_outcome(&cell_dir, &outcome)?;
    }
    if !single {
        let (mean, std) = metrics::aggregate(&aucs)?;
        write_file(
            &dir.join("summary.txt"),
            &format!("n_splits={} test_auc_mean={} test_auc_std={}\n", aucs.len(), mean, std),
        )?;
    }
    Ok(())
}

/// Build the configured model and load a checkpoint into it.
fn model_from_checkpoint(cfg: &RunConfig, common: &Common) -> Result<MilModel> {
    let path = common.checkpoint.as_deref().ok_or_else(|| {
        CliError::Usage("missing required flag --checkpoint".to_string())
    })?;
    let loaded = models::load_params(path)?;
    let mut model = MilModel::new(&cfg.model, &mut rng::stream(0, &["checkpoint-shell"]))?;
    model.params().compatible_with(&loaded).map_err(|e| {
        CliError::Usage(format!(
            "checkpoint {} does not match model_kind {}: {}",
            path.display(),
            cfg.model.kind,
            e
        ))
    })?;
    model.set_params(loaded);
    Ok(model)
}

fn eval(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    write_preamble(dir, &cfg)?;
    let (manifest, bags) = load_or_generate(&cfg, &common.data)?;
    let split = splits_for(&cfg, &manifest)?.remove(0);
    let model = model_from_checkpoint(&cfg, common)?;
    let (scores, labels) = score_bags(&model, &resolve_ids(&bags, &split.test))?;
    let e = metrics::evaluate(&scores, &labels)?;
    write_file(
        &dir.join("eval.txt"),
        &format!(
            "auc={} accuracy={} f1={} threshold={} n_pos={} n_neg={}\n",
            e.auc, e.accuracy, e.f1, e.threshold, e.n_pos, e.n_neg
        ),
    )
}

fn cell_id(strategy: Strategy, teacher: TeacherMode) -> String {
    format!("{}__{}", strategy, teacher)
}

fn ablate(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    write_preamble(dir, &cfg)?;
    let (manifest, bags) = load_or_generate(&cfg, &common.data)?;

    // The vanilla strategy ignores the teacher axis: one cell, not one per
    // teacher mode.
    let mut cells: Vec<(Strategy, TeacherMode)> = Vec::new();
    for &s in &cfg.ablate_strategies {
        if s == Strategy::None {
            cells.push((s, TeacherMode::None));
        } else {
            for &t in &cfg.ablate_teachers {
                cells.push((s, t));
            }
        }
    }

    let mut csv = String::from(
        "cell_id,strategy,teacher,auc_mean,auc_std,acc_mean,f1_mean,n_seeds\n",
    );
    for (strategy, teacher) in cells {
        let id = cell_id(strategy, teacher);
        let (mut aucs, mut accs, mut f1s) = (Vec::new(), Vec::new(), Vec::new());
        for &seed in &cfg.ablate_seeds {
            let mut trainer_cfg = cfg.cell_trainer(strategy, teacher);
            trainer_cfg.seed = seed;
            trainer_cfg.salt = format!("{}|seed{}", id, seed);
            let split = make_splits(&manifest, cfg.split, &mut rng::stream(seed, &["split"]))?
                .remove(0);
            let outcome = run_cell(&cfg, &bags, &split, &trainer_cfg)?;
            write_outcome(&dir.join(&id).join(format!("seed{}", seed)), &outcome)?;
            aucs.push(outcome.report.test.auc);
            accs.push(outcome.report.test.accuracy);
            f1s.push(outcome.report.test.f1);
        }
        let (auc_mean, auc_std) = metrics::aggregate(&aucs)?;
        let (acc_mean, _) = metrics::aggregate(&accs)?;
        let (f1_mean, _) = metrics::aggregate(&f1s)?;
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            id, strategy, teacher, auc_mean, auc_std, acc_mean, f1_mean, aucs.len()
        );
    }
    write_file(&dir.join("ablation.csv"), &csv)
}

/// Mask flags for one bag under the configured strategy, using the
/// undecayed beta_h (the resolved configuration value).
fn dump_masks(
    attention: &models::AttentionScores,
    n: usize,
    mask: &MaskRatios,
    strategy: Strategy,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> Result<MaskFlags> {
    let mut combined = MaskFlags::none(n);
    if strategy == Strategy::None {
        return Ok(combined);
    }
    let mut merge = |m: MaskFlags| {
        for (c, f) in combined.flags.iter_mut().zip(&m.flags) {
            *c |= f;
        }
    };
    let err = |e: masking::MaskError| CliError::Run(e.to_string());
    if mask.beta_h > 0.0 {
        let m = if mask.randomized_ham {
            masking::randomized_ham(attention, mask.beta_h, rng).map_err(err)?
        } else {
            masking::topk_mask(attention, mask.beta_h, masking::Direction::Highest).map_err(err)?
        };
        merge(m);
    }
    if mask.beta_l > 0.0 {
        merge(masking::topk_mask(attention, mask.beta_l, masking::Direction::Lowest).map_err(err)?);
    }
    if mask.beta_r > 0.0 {
        merge(masking::random_mask(n, mask.beta_r, rng).map_err(err)?);
    }
    Ok(combined)
}

fn dump_attn(common: &Common) -> Result<()> {
    let cfg = resolve_config(common)?;
    let dir = out_dir(common)?;
    write_preamble(dir, &cfg)?;
    let (_manifest, bags) = load_or_generate(&cfg, &common.data)?;
    let model = model_from_checkpoint(&cfg, common)?;
    let mask = cfg.cell_trainer(cfg.strategy, cfg.trainer.teacher).mask;

    let heads = match cfg.model.kind {
        models::ModelKind::Gated => 1,
        models::ModelKind::Msa => cfg.model.heads,
    };
    let mut csv = String::from("bag_id,instance_index,attention,masked,strategy");
    for h in 0..heads {
        let _ = write!(csv, ",attn_h{}", h);
    }
    csv.push('\n');
    for bag in &bags {
        let tape = crate::tensor::Tape::new();
        let out = model.forward(&tape, &bag.features)?;
        let attn = &out.attention;
        let mean = attn.head_mean();
        let mut mask_rng = rng::stream(cfg.trainer.seed, &["dump-attn", &bag.id]);
        let flags = dump_masks(attn, bag.features.rows, &mask, cfg.strategy, &mut mask_rng)?;
        for i in 0..bag.features.rows {
            let _ = write!(
                csv,
                "{},{},{},{},{}",
                bag.id, i, mean[i], flags.flags[i], cfg.strategy
            );
            for h in 0..heads {
                let _ = write!(csv, ",{}", attn.values.get(h, i));
            }
            csv.push('\n');
        }
    }
    write_file(&dir.join("attention.csv"), &csv)
}
