//! Command-line front end. [`run`] parses arguments, dispatches to a
//! subcommand and returns the process exit code: 0 on success, 1 on a
//! runtime error, 2 on a usage error.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::autodiff::{DEFAULT_STEP, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};
use crate::harness::{
    build_model, load_checkpoint, load_split, param_blocks, run_grad_check, train_on, CellKind,
    GradCheckCase, ModelSpec, ScheduleKind, TrainConfig,
};
use crate::linalg::Rng;
use crate::optim::{ClipPolicy, OptimizerKind};
use crate::param::ParamKind;
use crate::tasks::{
    addition_baseline_mse, copy_baseline_ce, CopySpec, CopyVariant, Inputs, StepTargets, TaskSpec,
};

/// Environment variable consulted when `--mnist-dir` is absent.
pub const MNIST_ENV: &str = "MNIST_DIR";

#[derive(Debug, Parser)]
#[command(name = "lrpn", version, about = "Low-rank passthrough networks: training, checks and baselines")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a config file and/or flags.
    Train(TrainArgs),
    /// Compare analytic and numeric gradients.
    Gradcheck(GradcheckArgs),
    /// Print per-block parameter counts.
    CountParams(CountArgs),
    /// Print generated task samples as text.
    GenTask(GenTaskArgs),
    /// Evaluate a checkpoint on a data split.
    Eval(EvalArgs),
    /// Print the analytic memoryless baselines.
    Baseline(BaselineArgs),
}

fn parse_param(s: &str) -> std::result::Result<ParamKind, String> {
    ParamKind::parse(s).ok_or_else(|| format!("unknown parameterization `{s}` (full, lr, lrd)"))
}

fn parse_cell(s: &str) -> std::result::Result<CellKind, String> {
    CellKind::parse(s).ok_or_else(|| format!("unknown cell `{s}` (gru, vanilla, highway)"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskName {
    Copy,
    Addition,
    #[value(alias = "seq_mnist")]
    SeqMnist,
    Mnist,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantName {
    Fixed,
    VariableLength,
    VariableLag,
}

impl From<VariantName> for CopyVariant {
    fn from(v: VariantName) -> Self {
        match v {
            VariantName::Fixed => CopyVariant::FixedFixed,
            VariantName::VariableLength => CopyVariant::VariableLength,
            VariantName::VariableLag => CopyVariant::VariableLag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ClipName {
    None,
    Component,
    Norm,
}

/// Task selection shared by several subcommands.
#[derive(Debug, Clone, Args)]
pub struct TaskArgs {
    #[arg(long)]
    pub task: Option<TaskName>,
    /// Copy-task lag.
    #[arg(long = "N")]
    pub lag: Option<usize>,
    /// Addition-task sequence length.
    #[arg(long = "T")]
    pub length: Option<usize>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantName>,
    /// Sequential MNIST in natural pixel order.
    #[arg(long)]
    pub no_permute: bool,
}

impl TaskArgs {
    fn resolve(&self, default: TaskName) -> Result<TaskSpec> {
        let name = self.task.unwrap_or(default);
        let spec = match name {
            TaskName::Copy => TaskSpec::Copy {
                lag: self.lag.unwrap_or(100),
                variant: self.variant.map(Into::into).unwrap_or_default(),
            },
            TaskName::Addition => TaskSpec::Addition { length: self.length.unwrap_or(100) },
            TaskName::SeqMnist => TaskSpec::SeqMnist { permute: !self.no_permute, permutation_seed: 0 },
            TaskName::Mnist => TaskSpec::Mnist,
        };
        if self.lag.is_some() && name != TaskName::Copy {
            return Err(Error::Usage("--N applies to the copy task only".into()));
        }
        if self.variant.is_some() && name != TaskName::Copy {
            return Err(Error::Usage("--variant applies to the copy task only".into()));
        }
        if self.length.is_some() && name != TaskName::Addition {
            return Err(Error::Usage("--T applies to the addition task only".into()));
        }
        Ok(spec)
    }

    fn any(&self) -> bool {
        self.task.is_some() || self.lag.is_some() || self.length.is_some() || self.variant.is_some() || self.no_permute
    }
}

/// Model selection shared by several subcommands.
#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Cell: gru, vanilla or highway.
    #[arg(long, value_parser = parse_cell)]
    pub model: Option<CellKind>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub d: Option<usize>,
    /// full, lr or lrd.
    #[arg(long, value_parser = parse_param)]
    pub param: Option<ParamKind>,
    #[arg(long)]
    pub carry_bias: Option<f64>,
    /// Number of Highway layers.
    #[arg(long)]
    pub layers: Option<usize>,
}

impl ModelArgs {
    fn apply(&self, spec: &mut ModelSpec) -> Result<()> {
        if let Some(c) = self.model {
            spec.cell = c;
        }
        if let Some(n) = self.n {
            spec.n = n;
        }
        if let Some(p) = self.param {
            spec.param = p;
            if p == ParamKind::Full && self.d.is_none() {
                spec.d = None;
            }
        }
        if let Some(d) = self.d {
            if spec.param == ParamKind::Full {
                return Err(Error::Usage("--d needs --param lr or lrd".into()));
            }
            spec.d = Some(d);
        }
        if let Some(b) = self.carry_bias {
            spec.carry_bias = b;
        }
        if let Some(l) = self.layers {
            spec.layers = l;
        }
        spec.validate().map_err(usage)
    }
}

fn usage(e: Error) -> Error {
    match e {
        Error::Config(m) => Error::Usage(m),
        other => other,
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run config; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_parser = ["rmsprop", "adam"])]
    pub optimizer: Option<String>,
    #[arg(long, value_enum)]
    pub clip: Option<ClipName>,
    #[arg(long)]
    pub clip_value: Option<f64>,
    #[arg(long)]
    pub updates: Option<u64>,
    #[arg(long)]
    pub epochs: Option<u64>,
    #[arg(long)]
    pub eval_interval: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub valid_size: Option<usize>,
    #[arg(long)]
    pub test_size: Option<usize>,
    #[arg(long)]
    pub metrics_out: Option<PathBuf>,
    /// Directory for best.ckpt and final.ckpt.
    #[arg(long)]
    pub checkpoint_out: Option<PathBuf>,
    /// MNIST IDX directory; falls back to $MNIST_DIR.
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
    /// Leave the wall-clock column empty (byte-identical metrics).
    #[arg(long)]
    pub no_wall_clock: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Restrict to one cell.
    #[arg(long, value_parser = parse_cell)]
    pub cell: Option<CellKind>,
    #[arg(long, value_parser = parse_param)]
    pub param: Option<ParamKind>,
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 3)]
    pub d: usize,
    /// Sequence length (recurrent) or depth (Highway).
    #[arg(long = "T", default_value_t = 5)]
    pub steps: usize,
    #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
    pub tol: f64,
    #[arg(long, default_value_t = DEFAULT_STEP)]
    pub h: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct CountArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub task: TaskArgs,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct GenTaskArgs {
    #[command(flatten)]
    pub task: TaskArgs,
    #[arg(long, default_value_t = 3)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitName {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitName::Test)]
    pub split: SplitName,
    #[arg(long)]
    pub mnist_dir: Option<PathBuf>,
    #[arg(long)]
    pub eval_batch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub task: TaskArgs,
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn run<I, T>(args: I) -> i32
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
    let result = match cli.command {
        Command::Train(a) => cmd_train(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
        Command::CountParams(a) => cmd_count_params(&a),
        Command::GenTask(a) => cmd_gen_task(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Baseline(a) => cmd_baseline(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}

fn mnist_dir(flag: &Option<PathBuf>) -> Option<PathBuf> {
    flag.clone()
        .or_else(|| std::env::var_os(MNIST_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
}

/// Settings used when a run is described by flags alone.
fn preset(task: TaskSpec, cell: CellKind) -> TrainConfig {
    let (n, param, d) = match cell {
        CellKind::Highway => (1024, ParamKind::LowRank, Some(256)),
        _ => (128, ParamKind::LowRankDiag, Some(24)),
    };
    let mut model = ModelSpec::new(cell, n, param, d);
    let mut c = TrainConfig::new(task.clone(), model.clone());
    match (&task, cell) {
        (TaskSpec::Mnist, _) => {
            c.optim.kind = OptimizerKind::Adam;
            c.optim.lr = 3e-3;
            c.optim.clip = None;
            c.optim.schedule = ScheduleKind::Plateau;
            c.run.batch = 100;
            c.run.max_epochs = Some(100);
            c.run.eval_interval = 0;
        }
        (TaskSpec::Copy { .. }, _) => {
            model.carry_bias = 4.0;
            c.optim.clip = Some(ClipPolicy::NormWithNanRecovery { c: 1.0 });
            c.run.max_updates = Some(20_000);
        }
        (TaskSpec::Addition { .. }, _) => {
            model.carry_bias = 4.0;
            c.run.max_updates = Some(15_000);
        }
        (TaskSpec::SeqMnist { .. }, _) => {
            model.carry_bias = 5.0;
            c.optim.lr = 5e-4;
            c.run.max_updates = Some(100_000);
        }
    }
    c.model = model;
    c
}

/// Combines `--config` and flags into a validated config. All failures are
/// usage errors.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
            let mut c = TrainConfig::from_toml(&text).map_err(usage)?;
            if a.task.any() {
                c.task = a.task.resolve(TaskName::Copy)?;
            }
            c
        }
        None => {
            let task = a.task.resolve(TaskName::Copy)?;
            let cell = a.model.model.unwrap_or(if task == TaskSpec::Mnist { CellKind::Highway } else { CellKind::Gru });
            preset(task, cell)
        }
    };
    a.model.apply(&mut c.model)?;
    if let Some(b) = a.batch {
        c.run.batch = b;
    }
    if let Some(lr) = a.lr {
        c.optim.lr = lr;
    }
    if let Some(o) = &a.optimizer {
        c.optim.kind = if o == "adam" { OptimizerKind::Adam } else { OptimizerKind::RmsProp };
    }
    let threshold = a.clip_value.or(c.optim.clip.map(|p| p.threshold())).unwrap_or(1.0);
    match a.clip {
        Some(ClipName::None) => c.optim.clip = None,
        Some(ClipName::Component) => c.optim.clip = Some(ClipPolicy::Component { c: threshold }),
        Some(ClipName::Norm) => c.optim.clip = Some(ClipPolicy::NormWithNanRecovery { c: threshold }),
        None => {
            if let Some(v) = a.clip_value {
                c.optim.clip = match c.optim.clip {
                    Some(ClipPolicy::NormWithNanRecovery { .. }) => Some(ClipPolicy::NormWithNanRecovery { c: v }),
                    _ => Some(ClipPolicy::Component { c: v }),
                };
            }
        }
    }
    if let Some(u) = a.updates {
        c.run.max_updates = Some(u);
    }
    if let Some(e) = a.epochs {
        c.run.max_epochs = Some(e);
    }
    if let Some(i) = a.eval_interval {
        c.run.eval_interval = i;
    }
    if let Some(s) = a.seed {
        c.run.seed = s;
    }
    if let Some(s) = a.data_seed {
        c.data.seed = s;
    }
    if let Some(v) = a.train_size {
        c.data.sizes.train = v;
    }
    if let Some(v) = a.valid_size {
        c.data.sizes.valid = v;
    }
    if let Some(v) = a.test_size {
        c.data.sizes.test = v;
    }
    if let Some(t) = a.threads {
        c.run.threads = t;
    }
    if a.metrics_out.is_some() {
        c.output.metrics = a.metrics_out.clone();
    }
    if a.checkpoint_out.is_some() {
        c.output.checkpoint_dir = a.checkpoint_out.clone();
    }
    if a.no_wall_clock {
        c.output.wall_clock = false;
    }
    if a.mnist_dir.is_some() {
        c.data.mnist_dir = a.mnist_dir.clone();
    }
    if c.task.needs_mnist() {
        if c.data.mnist_dir.is_none() {
            c.data.mnist_dir = mnist_dir(&None);
        }
        if c.data.mnist_dir.is_none() {
            return Err(Error::Usage(format!("MNIST tasks need --mnist-dir or ${MNIST_ENV}")));
        }
    }
    c.validate().map_err(usage)?;
    Ok(c)
}

fn cmd_train(a: &TrainArgs) -> Result<i32> {
    let config = resolve_train_config(a)?;
    let text = config.to_toml()?;
    println!("# resolved config\n{text}");
    let split = load_split(&config)?;
    let started = Instant::now();
    let out = train_on(&config, &split, &mut |row| {
        let acc = row.valid_accuracy.map(|a| format!(" valid_acc {a:.4}")).unwrap_or_default();
        eprintln!(
            "update {:>7} epoch {:>3} valid_loss {:.6}{acc} lr {:.3e} [{:.0}s]",
            row.update,
            row.epoch,
            row.valid_loss,
            row.lr,
            started.elapsed().as_secs_f64()
        );
        true
    })?;
    let test = out.best_model.evaluate(&split.test, config.run.eval_batch)?;
    println!("# updates = {}", out.updates);
    println!("# skipped = {}", out.skipped);
    println!("# best_valid_loss = {} (update {})", out.best_valid, out.best_update);
    println!("# test_loss = {}", test.loss);
    if let Some(acc) = test.accuracy {
        println!("# test_accuracy = {acc}");
    }
    Ok(0)
}

fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    if !(a.h > 0.0) || !(a.tol > 0.0) {
        return Err(Error::Usage("--h and --tol must be positive".into()));
    }
    if a.n == 0 || a.d == 0 || a.d > a.n || a.steps == 0 {
        return Err(Error::Usage("need 1 <= d <= n and T >= 1".into()));
    }
    let cases: Vec<GradCheckCase> = GradCheckCase::default_suite()
        .into_iter()
        .filter(|c| a.cell.is_none_or(|k| k == c.cell))
        .filter(|c| a.param.is_none_or(|p| p == c.param))
        .map(|c| GradCheckCase { n: a.n, d: a.d, steps: a.steps, seed: a.seed, ..c })
        .collect();
    let mut ok = true;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:<18} {:>8} {:>14}  status", "case", "entries", "max_rel_err")?;
    for case in &cases {
        let r = run_grad_check(case, a.h, a.tol)?;
        let pass = r.passed();
        ok &= pass;
        writeln!(
            stdout,
            "{:<18} {:>8} {:>14.3e}  {}",
            case.label(),
            r.checked,
            r.max_rel_err,
            if pass { "ok" } else { "FAIL" }
        )?;
    }
    writeln!(stdout, "tolerance {:e}, step {:e}", a.tol, a.h)?;
    Ok(if ok { 0 } else { 1 })
}

fn cmd_count_params(a: &CountArgs) -> Result<i32> {
    let (task, mut spec) = match &a.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Usage(format!("cannot read {}: {e}", path.display())))?;
            let c = TrainConfig::from_toml(&text).map_err(usage)?;
            let task = if a.task.any() { a.task.resolve(TaskName::Copy)? } else { c.task };
            (task, c.model)
        }
        None => {
            let task = a.task.resolve(TaskName::Copy)?;
            let cell = a.model.model.unwrap_or(if task == TaskSpec::Mnist { CellKind::Highway } else { CellKind::Gru });
            (task.clone(), preset(task, cell).model)
        }
    };
    a.model.apply(&mut spec)?;
    if (spec.cell == CellKind::Highway) != (task == TaskSpec::Mnist) {
        return Err(Error::Usage("the highway model pairs with --task mnist".into()));
    }
    let model = build_model(&spec, &task, &mut Rng::new(0)).map_err(usage)?;
    let d = spec.d.map(|d| format!(" d={d}")).unwrap_or_default();
    println!("{} {} n={}{d}", spec.cell.name(), spec.param.name(), spec.n);
    for (block, count) in param_blocks(&model) {
        println!("{block:<16} {count:>10}");
    }
    println!("{:<16} {:>10}", "total", model.param_count());
    Ok(0)
}

fn cmd_gen_task(a: &GenTaskArgs) -> Result<i32> {
    let task = a.task.resolve(TaskName::Copy)?;
    if task.needs_mnist() {
        return Err(Error::Usage("gen-task covers the generated tasks (copy, addition)".into()));
    }
    task.validate().map_err(usage)?;
    let mut rng = Rng::new(a.seed);
    let mut out = std::io::stdout().lock();
    for i in 0..a.count {
        let s = task.generate(&mut rng)?;
        writeln!(out, "# sample {i}")?;
        match (&s.inputs, &s.targets) {
            (Inputs::Symbols { symbols, .. }, StepTargets::Classes(t)) => {
                let show = |v: &[u8]| v.iter().map(|c| symbol_char(*c)).collect::<String>();
                writeln!(out, "input  {}", show(symbols))?;
                writeln!(out, "target {}", show(t))?;
            }
            (Inputs::Marked { values, markers }, StepTargets::Values(t)) => {
                let vals: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
                writeln!(out, "values  {}", vals.join(" "))?;
                writeln!(out, "markers {} {}", markers[0], markers[1])?;
                writeln!(out, "target  {}", t[t.len() - 1])?;
            }
            _ => writeln!(out, "{s:?}")?,
        }
    }
    Ok(0)
}

fn symbol_char(c: u8) -> char {
    match c {
        crate::tasks::BLANK => '_',
        crate::tasks::RUN => ':',
        d => char::from(b'0' + d),
    }
}

fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let ck = load_checkpoint(&a.checkpoint)?;
    let mut config = ck.meta.config.clone();
    if a.mnist_dir.is_some() {
        config.data.mnist_dir = a.mnist_dir.clone();
    }
    if config.task.needs_mnist() && config.data.mnist_dir.is_none() {
        config.data.mnist_dir = mnist_dir(&None);
        if config.data.mnist_dir.is_none() {
            return Err(Error::Usage(format!("MNIST tasks need --mnist-dir or ${MNIST_ENV}")));
        }
    }
    let model = ck.restore_model()?;
    let split = load_split(&config)?;
    let data = match a.split {
        SplitName::Train => &split.train,
        SplitName::Valid => &split.valid,
        SplitName::Test => &split.test,
    };
    let e = model.evaluate(data, a.eval_batch.unwrap_or(config.run.eval_batch))?;
    println!("checkpoint {} (update {})", a.checkpoint.display(), ck.meta.update);
    println!("split {:?}, {} loss positions", a.split, e.positions);
    println!("loss {}", e.loss);
    if let Some(acc) = e.accuracy {
        println!("accuracy {acc}");
    }
    Ok(0)
}

fn cmd_baseline(a: &BaselineArgs) -> Result<i32> {
    match a.task.resolve(TaskName::Copy)? {
        TaskSpec::Copy { lag, variant } => {
            let ce = copy_baseline_ce(&CopySpec { lag, variant }).map_err(usage)?;
            println!("copy N={lag}: memoryless cross-entropy {ce:.6} nats per symbol");
        }
        TaskSpec::Addition { length } => {
            println!("addition T={length}: constant-prediction MSE {:.6}", addition_baseline_mse());
        }
        _ => return Err(Error::Usage("baselines exist for copy and addition".into())),
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse_train(args: &[&str]) -> Result<TrainConfig> {
        let mut full = vec!["lrpn", "train"];
        full.extend_from_slice(args);
        let Command::Train(a) = Cli::try_parse_from(full).unwrap().command else { panic!() };
        resolve_train_config(&a)
    }

    #[test]
    fn copy_variant_command_line() {
        let c = parse_train(&[
            "--task", "copy", "--N", "100", "--param", "lrd", "--n", "128", "--d", "50", "--batch", "20", "--lr",
            "1e-3", "--carry-bias", "4",
        ])
        .unwrap();
        assert_eq!(c.task, TaskSpec::Copy { lag: 100, variant: CopyVariant::FixedFixed });
        assert_eq!((c.model.cell, c.model.n, c.model.d, c.model.param), (CellKind::Gru, 128, Some(50), ParamKind::LowRankDiag));
        assert_eq!(c.model.carry_bias, 4.0);
        assert_eq!(c.run.batch, 20);
        assert_eq!(c.optim.lr, 1e-3);
        assert_eq!(c.optim.kind, OptimizerKind::RmsProp);
        assert_eq!(c.optim.clip, Some(ClipPolicy::NormWithNanRecovery { c: 1.0 }));
    }

    #[test]
    fn usage_errors() {
        assert!(matches!(parse_train(&["--param", "full", "--d", "3"]), Err(Error::Usage(_))));
        assert!(matches!(parse_train(&["--task", "addition", "--N", "3"]), Err(Error::Usage(_))));
        assert!(matches!(parse_train(&["--batch", "0"]), Err(Error::Usage(_))));
        assert_eq!(run(["lrpn", "train", "--param", "bogus"]), 2);
        assert_eq!(run(["lrpn", "baseline", "--task", "mnist"]), 2);
    }

    #[test]
    fn resolved_config_reproduces_itself() {
        let c = parse_train(&["--task", "addition", "--T", "50", "--n", "16", "--d", "4", "--updates", "3"]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, c.to_toml().unwrap()).unwrap();
        let again = parse_train(&["--config", path.to_str().unwrap()]).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(run(["lrpn", "baseline", "--task", "copy", "--N", "500"]), 0);
        assert_eq!(run(["lrpn", "count-params", "--model", "gru", "--param", "full", "--n", "128"]), 0);
        assert_eq!(run(["lrpn", "eval", "--checkpoint", "/nonexistent/x.ckpt"]), 1);
    }
}
