//! Command-line front end.
//!
//! Exit codes: 0 success, 2 usage or validation errors (including I/O), 3
//! numerical failures (non-finite loss or gradients).

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_model};
use crate::config::RunConfig;
use crate::data::{balance_dataset, export_csv, generate_synthetic, import_csv, load_epochs, save_epochs};
use crate::data::{EpochDataset, Group, PretrainScheme};
use crate::explain::{contribution_map, masked_accuracy, optimize_masks, ContributionMap, ExplainError};
use crate::mapgeo::{distance_matrix_scaled, grouping_distances, grouping_tests, write_tests_csv};
use crate::model::GnnClassifier;
use crate::topomap::render_svg;
use crate::trainer::{cross_validate, evaluate, pretrain, CrossValReport, MetricsSummary, TrainError};

#[derive(Debug, Parser)]
#[command(name = "neurograph", version, about = "Graph neural network EEG classification, explanation and map comparison")]
pub struct Cli {
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic epoch file.
    GenSynthetic(GenArgs),
    /// Participant-stratified k-fold cross-validation, one run per group.
    Crossval(CrossvalArgs),
    /// Train on the two groups opposite to an excluded group and save a checkpoint.
    Pretrain(PretrainArgs),
    /// Optimize explanation masks for one or more checkpoints.
    Explain(ExplainArgs),
    /// Sliced distances between contribution maps, grouping distances and rank tests.
    CompareMaps(CompareArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// key=value configuration file.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Override the global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Epoch file (NGEP) or wide CSV.
    #[arg(long, value_name = "FILE")]
    pub data: PathBuf,
    /// Sampling rate of CSV input.
    #[arg(long, default_value_t = 256.0)]
    pub fs: f64,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Specification file (synthetic.* and seed keys); defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// Output epoch file
    #[arg(long, value_name = "FILE", required_unless_present = "dump_config")]
    pub out: Option<PathBuf>,
    /// Write wide CSV instead of the binary epoch format.
    #[arg(long)]
    pub csv: bool,
    /// Override one specification key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Override the global seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the effective specification and exit
    #[arg(long)]
    pub dump_config: bool,
}

#[derive(Debug, Args)]
pub struct CrossvalArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Initialize every fold from this checkpoint.
    #[arg(long, value_name = "FILE")]
    pub pretrain: Option<PathBuf>,
    /// Restrict to these groups (repeatable); default is every group in the data.
    #[arg(long = "group")]
    pub groups: Vec<Group>,
    /// Condition label written to metrics.csv.
    #[arg(long)]
    pub condition: Option<String>,
    /// Output directory: config.txt, metrics.csv, folds.csv, history/, checkpoints/
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Write into a non-empty output directory.
    #[arg(long)]
    pub force: bool,
    /// Folds trained in parallel.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Target group; the model is trained on the two groups opposite to it.
    #[arg(long)]
    pub exclude_group: Group,
    /// Source grouping: round (opposite experimental round) or pocket (opposite pocket side)
    #[arg(long, default_value = "round")]
    pub scheme: PretrainScheme,
    /// Checkpoint to write
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    /// Checkpoints to explain (repeatable); outputs are named after each file stem.
    #[arg(long = "model", value_name = "FILE", num_args = 1.., required = true)]
    pub models: Vec<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Explain only this group's epochs.
    #[arg(long)]
    pub group: Option<Group>,
    /// Output directory: one CSV, SVG and loss history per model, plus explain_summary.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Contribution map CSVs; labels are the file stems (`group.condition.stage` enables groupings).
    #[arg(long = "maps", value_name = "FILE", num_args = 1.., required = true)]
    pub maps: Vec<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Number of projections (overrides sgw.n_projections).
    #[arg(long)]
    pub projections: Option<usize>,
    /// Output directory: distances.csv, distance_std_errors.csv, groupings.csv, tests.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

/// A failed command and its exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Numerical(m) => f.write_str(m),
        }
    }
}

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn from_train(e: TrainError) -> CliError {
    if e.is_numerical() {
        CliError::Numerical(e.to_string())
    } else {
        CliError::Usage(e.to_string())
    }
}

fn from_explain(e: ExplainError) -> CliError {
    match e {
        ExplainError::Diverged { .. } => CliError::Numerical(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    }
}

/// Parses arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(a),
        Command::Crossval(a) => crossval(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::CompareMaps(a) => compare_maps(a),
    }
}

fn build_config(file: Option<&Path>, overrides: &[String], seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = match file {
        Some(p) => RunConfig::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg.apply_override(o).map_err(usage)?;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

impl ConfigArgs {
    /// The effective configuration, or `None` after printing it for `--dump-config`.
    fn resolve(&self) -> Result<Option<RunConfig>, CliError> {
        let cfg = build_config(self.config.as_deref(), &self.overrides, self.seed)?;
        if self.dump_config {
            print!("{}", cfg.dump());
            return Ok(None);
        }
        Ok(Some(cfg))
    }
}

fn load_data(a: &DataArgs) -> Result<EpochDataset, CliError> {
    let p = &a.data;
    let is_csv = p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let ds = if is_csv {
        let f = File::open(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        import_csv(BufReader::new(f), a.fs, None)
    } else {
        load_epochs(p, None)
    };
    ds.map_err(|e| usage(format!("{}: {e}", p.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn io(e: std::io::Error) -> CliError {
    usage(e)
}

fn prepare_dir(dir: &Path, force: bool) -> Result<(), CliError> {
    if dir.exists() {
        let nonempty = fs::read_dir(dir).map_err(io)?.next().is_some();
        if nonempty && !force {
            return Err(usage(format!("{} is not empty (use --force to write into it)", dir.display())));
        }
    }
    fs::create_dir_all(dir).map_err(io)
}

fn gen_synthetic(a: GenArgs) -> Result<(), CliError> {
    let cfg = build_config(a.spec.as_deref(), &a.overrides, a.seed)?;
    if a.dump_config {
        print!("{}", cfg.dump());
        return Ok(());
    }
    let layout = cfg.synthetic_layout().map_err(usage)?;
    let spec = cfg.synthetic_spec(layout).map_err(usage)?;
    let ds = generate_synthetic(&spec).map_err(usage)?;
    let out = a.out.expect("required unless dumping");
    if a.csv {
        export_csv(&ds, create(&out)?).map_err(usage)?;
    } else {
        save_epochs(&ds, &out).map_err(usage)?;
    }
    log::info!("wrote {} epochs to {}", ds.len(), out.display());
    Ok(())
}

fn prepared(ds: &EpochDataset, cfg: &RunConfig) -> Result<EpochDataset, CliError> {
    if cfg.balance_enabled {
        balance_dataset(ds, cfg.balance).map_err(usage)
    } else {
        Ok(ds.clone())
    }
}

fn groups_in(ds: &EpochDataset) -> Vec<Group> {
    Group::ALL.into_iter().filter(|g| ds.epochs().iter().any(|e| e.group == *g)).collect()
}

fn metrics_row(w: &mut impl Write, label: &str, condition: &str, s: &MetricsSummary) -> std::io::Result<()> {
    let m = s.mean;
    let d = s.std;
    writeln!(w, "{label},{condition},{},{},{},{},{},{},{},{}", m[0], m[1], m[2], m[3], d[0], d[1], d[2], d[3])
}

fn crossval(a: CrossvalArgs) -> Result<(), CliError> {
    let Some(cfg) = a.config.resolve()? else { return Ok(()) };
    let data = load_data(&a.data)?;
    let init = match &a.pretrain {
        Some(p) => {
            let ck = load_checkpoint(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            if ck.layout != *data.layout() || ck.arch.n_times != data.n_times() {
                return Err(usage(format!("{} does not match the data's layout or window", p.display())));
            }
            ck.into_model().map_err(usage)?
        }
        None => {
            let arch = cfg.arch_config(data.fs(), data.n_times());
            GnnClassifier::new(arch, data.layout(), cfg.seed).map_err(usage)?
        }
    };
    let groups = if a.groups.is_empty() { groups_in(&data) } else { a.groups.clone() };
    let condition = a.condition.clone().unwrap_or_else(|| if a.pretrain.is_some() { "pretrained" } else { "none" }.into());
    prepare_dir(&a.out, a.force)?;
    fs::write(a.out.join("config.txt"), cfg.dump()).map_err(io)?;
    let ckdir = a.out.join("checkpoints");
    let histdir = a.out.join("history");
    fs::create_dir_all(&ckdir).map_err(io)?;
    fs::create_dir_all(&histdir).map_err(io)?;

    let train = cfg.train_config();
    let mut reports: Vec<(Group, CrossValReport)> = Vec::new();
    for g in groups {
        let ds = prepared(&data.group(g), &cfg)?;
        if ds.is_empty() {
            return Err(usage(format!("group {g} has no epochs")));
        }
        log::info!("{g}: {} epochs, class counts {:?}", ds.len(), ds.class_counts());
        let dir = ckdir.clone();
        let hook = move |fold: usize, epoch: usize, m: &GnnClassifier| -> Result<(), String> {
            let meta = BTreeMap::from([
                ("group".to_string(), g.to_string()),
                ("fold".to_string(), fold.to_string()),
                ("epoch".to_string(), epoch.to_string()),
            ]);
            save_model(m, meta, dir.join(format!("{g}_fold{fold}_epoch{epoch}.ngrf"))).map_err(|e| e.to_string())
        };
        let report = cross_validate(&ds, cfg.folds, &train, &init, a.jobs.max(1), Some(&hook)).map_err(from_train)?;
        for f in &report.folds {
            f.history.write_csv(create(&histdir.join(format!("{g}_fold{}.csv", f.fold)))?).map_err(io)?;
        }
        reports.push((g, report));
    }

    let mut w = create(&a.out.join("metrics.csv"))?;
    writeln!(w, "group,condition,acc,prec,rec,f1,acc_std,prec_std,rec_std,f1_std").map_err(io)?;
    for (g, r) in &reports {
        metrics_row(&mut w, g.name(), &condition, &r.summary).map_err(io)?;
    }
    if reports.len() > 1 {
        let n = reports.len() as f64;
        let mut avg = MetricsSummary { mean: [0.0; 4], std: [0.0; 4] };
        for (_, r) in &reports {
            for j in 0..4 {
                avg.mean[j] += r.summary.mean[j] / n;
                avg.std[j] += r.summary.std[j] / n;
            }
        }
        metrics_row(&mut w, "Average", &condition, &avg).map_err(io)?;
    }
    w.flush().map_err(io)?;

    let mut w = create(&a.out.join("folds.csv"))?;
    writeln!(w, "group,fold,n_train,n_test,acc,prec,rec,f1,tn,fp,fn,tp,weight_failure,weight_success").map_err(io)?;
    for (g, r) in &reports {
        for f in &r.folds {
            let m = &f.metrics;
            let [[tn, fp], [fne, tp]] = m.confusion;
            writeln!(
                w,
                "{g},{},{},{},{},{},{},{},{tn},{fp},{fne},{tp},{},{}",
                f.fold,
                f.train_size,
                m.total(),
                m.accuracy,
                m.precision,
                m.recall,
                m.f1,
                f.class_weights[0],
                f.class_weights[1]
            )
            .map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    for (g, r) in &reports {
        println!("{g}: accuracy {:.3} ± {:.3}", r.summary.mean[0], r.summary.std[0]);
    }
    Ok(())
}

fn pretrain_cmd(a: PretrainArgs) -> Result<(), CliError> {
    let Some(cfg) = a.config.resolve()? else { return Ok(()) };
    let data = load_data(&a.data)?;
    let sources = a.exclude_group.pretrain_sources(a.scheme);
    let source = prepared(&data.groups(&sources), &cfg)?;
    let target = data.group(a.exclude_group);
    if source.is_empty() {
        return Err(usage(format!("source groups {} and {} have no epochs", sources[0], sources[1])));
    }
    if target.is_empty() {
        return Err(usage(format!("group {} has no epochs", a.exclude_group)));
    }
    let arch = cfg.arch_config(data.fs(), data.n_times());
    let mut model = GnnClassifier::new(arch, data.layout(), cfg.seed).map_err(usage)?;
    let history = pretrain(&mut model, &source, &target, &cfg.pretrain_config()).map_err(from_train)?;
    let meta = BTreeMap::from([
        ("scheme".to_string(), a.scheme.name().to_string()),
        ("target".to_string(), a.exclude_group.to_string()),
        ("sources".to_string(), format!("{},{}", sources[0], sources[1])),
        ("epochs".to_string(), cfg.pretrain_epochs.to_string()),
    ]);
    save_model(&model, meta, &a.out).map_err(usage)?;
    if let Some(last) = history.records.last() {
        println!("pretrained on {} and {}: loss {:.4}, train accuracy {:.3}", sources[0], sources[1], last.loss, last.train_acc);
    }
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "map".into())
}

fn explain_cmd(a: ExplainArgs) -> Result<(), CliError> {
    let Some(cfg) = a.config.resolve()? else { return Ok(()) };
    let data = load_data(&a.data)?;
    let ds = match a.group {
        Some(g) => data.group(g),
        None => data,
    };
    if ds.is_empty() {
        return Err(usage("no epochs to explain"));
    }
    fs::create_dir_all(&a.out).map_err(io)?;
    let xcfg = cfg.explain_config();
    let mut summary = create(&a.out.join("explain_summary.csv"))?;
    writeln!(summary, "map,accuracy,masked_accuracy,final_loss").map_err(io)?;
    for path in &a.models {
        let ck = load_checkpoint(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        if ck.layout != *ds.layout() {
            return Err(usage(format!("{} was trained on a different layout", path.display())));
        }
        let model = ck.into_model().map_err(usage)?;
        let label = stem(path);
        let ex = optimize_masks(&model, &ds, &xcfg).map_err(from_explain)?;
        let map = contribution_map(&ex.masks, ds.layout());
        map.write_csv(create(&a.out.join(format!("{label}.csv")))?).map_err(io)?;
        fs::write(a.out.join(format!("{label}.svg")), render_svg(&map, &label)).map_err(io)?;
        let mut h = create(&a.out.join(format!("{label}_history.csv")))?;
        writeln!(h, "epoch,ces,nms,ems,nme,eme,total").map_err(io)?;
        for (i, t) in ex.history.iter().enumerate() {
            writeln!(h, "{},{},{},{},{},{},{}", i + 1, t.ces, t.nms, t.ems, t.nme, t.eme, t.total()).map_err(io)?;
        }
        h.flush().map_err(io)?;
        let acc = evaluate(&model, &ds).map_err(from_train)?.accuracy;
        let macc = masked_accuracy(&model, &ex.masks, &ds).map_err(from_explain)?;
        let last = ex.history.last().map_or(f64::NAN, |t| t.total());
        writeln!(summary, "{label},{acc},{macc},{last}").map_err(io)?;
        println!("{label}: accuracy {acc:.3}, masked {macc:.3}, top channels {:?}", top_names(&map, 4));
    }
    summary.flush().map_err(io)
}

fn top_names(map: &ContributionMap, k: usize) -> Vec<String> {
    let names = map.layout.names();
    map.top_k(k).into_iter().map(|i| names[i].clone()).collect()
}

fn compare_maps(a: CompareArgs) -> Result<(), CliError> {
    let Some(cfg) = a.config.resolve()? else { return Ok(()) };
    let mut maps = Vec::new();
    for p in &a.maps {
        let f = File::open(p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        let m = ContributionMap::read_csv(BufReader::new(f)).map_err(|e| usage(format!("{}: {e}", p.display())))?;
        maps.push((stem(p), m));
    }
    let n = a.projections.unwrap_or(cfg.sgw_projections);
    let dm = distance_matrix_scaled(&maps, n, cfg.seed, cfg.sgw_scale).map_err(usage)?;
    fs::create_dir_all(&a.out).map_err(io)?;
    dm.write_csv(create(&a.out.join("distances.csv"))?).map_err(io)?;
    let se = crate::mapgeo::DistanceMatrix { values: dm.std_errors.clone(), ..dm.clone() };
    se.write_csv(create(&a.out.join("distance_std_errors.csv"))?).map_err(io)?;
    let groupings = grouping_distances(&dm);
    groupings.write_csv(create(&a.out.join("groupings.csv"))?).map_err(io)?;
    let tests = grouping_tests(&groupings);
    write_tests_csv(&tests, create(&a.out.join("tests.csv"))?).map_err(io)?;
    println!("compared {} maps with {n} projections", maps.len());
    Ok(())
}
