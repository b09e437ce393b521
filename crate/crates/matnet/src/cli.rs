//! Command-line interface. `run` returns the process exit code: 0 on
//! success, 1 for runtime or configuration errors, 2 for usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use matnet_core::atsp::{generate_euclidean, generate_tmat, mtz_model};
use matnet_core::decoder::DecodeMode;
use matnet_core::ffsp::{default_big_m, ffsp_model, generate_ffsp};
use matnet_core::inference::SolveOptions;
use matnet_core::rng::stream;

use crate::bench::{problem_of, run_method, solve_one, BenchOptions, Method};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::{Problem, TrainConfig};
use crate::error::{AppError, Result};
use crate::formats::{parse_solution, read_instance, read_set, read_text, write_schedule, write_set, write_text, write_tour, AnyInstance, Solution};
use crate::gantt::render_svg;
use crate::report::{BenchReport, MethodRun};
use crate::trainer::{thread_pool, EpochMetrics, Trainer};

pub const SEED_ENV: &str = "MATNET_SEED";

static QUIET: AtomicBool = AtomicBool::new(false);

/// Progress output on stdout, silenced by `--quiet`.
macro_rules! say {
    ($($t:tt)*) => {
        if !QUIET.load(Ordering::Relaxed) {
            println!($($t)*);
        }
    };
}

#[derive(Parser, Debug)]
#[command(name = "matnet", version, about = "Matrix-encoding networks for ATSP and flexible flow shop scheduling")]
pub struct Cli {
    /// Master seed (falls back to $MATNET_SEED, then 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every core
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Only report errors
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a set of random instances
    Generate(GenerateArgs),
    /// Train a model from a config file or preset
    Train(TrainArgs),
    /// Evaluate a checkpoint on an instance set
    Eval(EvalArgs),
    /// Compare methods on an instance set
    Bench(BenchArgs),
    /// Solve one instance and write the solution
    Solve(SolveArgs),
    /// Write the MIP model of an instance in LP format
    ExportMip(ExportMipArgs),
    /// Render a schedule as an SVG Gantt chart
    Gantt(GanttArgs),
    /// Exact tour lengths for every instance of an ATSP set
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ProblemArg {
    Atsp,
    Ffsp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GeneratorArg {
    Tmat,
    Euclidean,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    pub problem: ProblemArg,
    /// Cities (ATSP)
    #[arg(long, default_value_t = 20)]
    pub n: usize,
    #[arg(long, value_enum, default_value_t = GeneratorArg::Tmat)]
    pub generator: GeneratorArg,
    #[arg(long, default_value_t = 3)]
    pub stages: usize,
    #[arg(long, default_value_t = 4)]
    pub machines: usize,
    /// Jobs (FFSP)
    #[arg(long, default_value_t = 20)]
    pub jobs: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    AtspToy,
    FfspToy,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Config file (key = value with [train] / [model] sections)
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Continue from a checkpoint instead of starting fresh
    #[arg(long, conflicts_with_all = ["config", "preset"])]
    pub resume: Option<PathBuf>,
    /// Override the number of epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics CSV
    #[arg(long)]
    pub metrics: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Greedy,
    Sample,
}

#[derive(Args, Debug, Clone)]
pub struct DecodeArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Sample)]
    pub mode: ModeArg,
    /// Instance augmentations (re-drawn initial embeddings)
    #[arg(long, default_value_t = 1)]
    pub aug: usize,
    /// Decode a single trajectory per augmentation
    #[arg(long)]
    pub no_pomo: bool,
}

impl DecodeArgs {
    fn options(&self) -> SolveOptions {
        SolveOptions {
            mode: match self.mode {
                ModeArg::Greedy => DecodeMode::Greedy,
                ModeArg::Sample => DecodeMode::Sample,
            },
            pomo: !self.no_pomo,
            augmentation: self.aug,
            sampling_count: 1,
            seed: 0,
        }
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub set: PathBuf,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Per-instance objectives CSV
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Comma-separated: nn, ni, fi, oracle, sjf, random, ga, pso, matnet
    #[arg(long, value_delimiter = ',', required = true)]
    pub methods: Vec<String>,
    #[arg(long)]
    pub set: PathBuf,
    /// Needed by `matnet`
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// GA / PSO iterations
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    /// Gap reference method (default: oracle for ATSP, else best mean)
    #[arg(long)]
    pub reference: Option<String>,
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Writes PREFIX.csv, PREFIX.raw.csv and PREFIX.txt
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SolvePreset {
    X1,
    X128,
    X1280,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long, default_value = "matnet")]
    pub method: String,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// One-instance augmentation preset; overrides --aug
    #[arg(long, value_enum)]
    pub preset: Option<SolvePreset>,
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExportMipArgs {
    #[arg(long)]
    pub instance: PathBuf,
    /// FFSP sequencing constant (default: a valid horizon bound)
    #[arg(long)]
    pub big_m: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GanttArgs {
    #[arg(long)]
    pub instance: PathBuf,
    #[arg(long)]
    pub schedule: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[arg(long)]
    pub set: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `argv` and runs the command; returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>> {
    if flag.is_some() {
        return Ok(flag);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map(Some).map_err(|_| AppError::config(SEED_ENV, format!("`{v}` is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    QUIET.store(cli.quiet, Ordering::Relaxed);
    let seed = resolve_seed(cli.seed)?;
    let pool = thread_pool(cli.threads)?;
    pool.install(|| match cli.command {
        Command::Generate(a) => generate(a, seed.unwrap_or(0)),
        Command::Train(a) => train(a, seed),
        Command::Eval(a) => eval(a, seed.unwrap_or(0)),
        Command::Bench(a) => bench(a, seed.unwrap_or(0)),
        Command::Solve(a) => solve(a, seed.unwrap_or(0)),
        Command::ExportMip(a) => export_mip(a),
        Command::Gantt(a) => gantt(a),
        Command::Oracle(a) => oracle(a),
    })
}

fn generate(a: GenerateArgs, seed: u64) -> Result<()> {
    let insts = (0..a.count)
        .map(|i| {
            let mut rng = stream(seed, &[i as u64]);
            Ok(match a.problem {
                ProblemArg::Atsp => AnyInstance::Atsp(match a.generator {
                    GeneratorArg::Tmat => generate_tmat(a.n, &mut rng)?,
                    GeneratorArg::Euclidean => generate_euclidean(a.n, &mut rng)?,
                }),
                ProblemArg::Ffsp => AnyInstance::Ffsp(generate_ffsp(a.stages, a.machines, a.jobs, &mut rng)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_set(&a.out_dir, &insts)?;
    say!("wrote {} instances to {}", insts.len(), a.out_dir.display());
    Ok(())
}

fn train(a: TrainArgs, seed: Option<u64>) -> Result<()> {
    let mut trainer = if let Some(path) = &a.resume {
        load_checkpoint(path)?
    } else {
        let mut config = match (&a.config, a.preset) {
            (Some(path), _) => TrainConfig::from_text(&read_text(path)?, &path.display().to_string())?,
            (None, Some(Preset::FfspToy)) => TrainConfig::ffsp_toy(),
            (None, Some(Preset::AtspToy)) => TrainConfig::atsp_toy(),
            (None, None) => return Err(AppError::config("config", "give --config, --preset or --resume")),
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        Trainer::new(config)?
    };
    if let Some(e) = a.epochs {
        trainer.config.epochs = e;
    }
    let mut log = format!("{}\n", EpochMetrics::CSV_HEADER);
    say!("{}", EpochMetrics::CSV_HEADER);
    trainer.run(|m| {
        say!("{}", m.csv_line());
        log.push_str(&m.csv_line());
        log.push('\n');
    })?;
    save_checkpoint(&a.out, &trainer)?;
    if let Some(p) = &a.metrics {
        write_text(p, &log)?;
    }
    say!("saved checkpoint after epoch {} to {}", trainer.epoch, a.out.display());
    Ok(())
}

fn load_set(dir: &Path) -> Result<(Problem, Vec<AnyInstance>)> {
    let set = read_set(dir)?;
    let p = problem_of(&set[0]);
    if set.iter().any(|i| problem_of(i) != p) {
        return Err(AppError::Other(format!("{}: mixes ATSP and FFSP instances", dir.display())));
    }
    Ok((p, set))
}

fn eval(a: EvalArgs, seed: u64) -> Result<()> {
    let (problem, set) = load_set(&a.set)?;
    let opts = BenchOptions {
        solve: a.decode.options(),
        model: Some(load_checkpoint(&a.checkpoint)?),
        ..BenchOptions::default()
    };
    let run = run_method(Method::Matnet, &set, seed, &opts)?;
    say!("{} instances, mean {} {:.6}, {:.2}s", set.len(), objective_name(problem), run.mean(), run.wall_seconds);
    if let Some(out) = &a.out {
        let r = BenchReport::new(problem, None, vec![run]);
        write_text(out, &r.raw_csv())?;
    }
    Ok(())
}

fn objective_name(p: Problem) -> &'static str {
    match p {
        Problem::Atsp => "length",
        Problem::Ffsp => "makespan",
    }
}

fn bench(a: BenchArgs, seed: u64) -> Result<()> {
    let methods = a.methods.iter().map(|m| m.parse()).collect::<Result<Vec<Method>>>()?;
    let (problem, set) = load_set(&a.set)?;
    let model = match (&a.checkpoint, methods.contains(&Method::Matnet)) {
        (Some(p), true) => Some(load_checkpoint(p)?),
        (None, true) => return Err(AppError::config("checkpoint", "method `matnet` needs --checkpoint")),
        _ => None,
    };
    let opts = BenchOptions {
        iters: a.iters,
        solve: a.decode.options(),
        model,
    };
    let runs = methods.iter().map(|&m| run_method(m, &set, seed, &opts)).collect::<Result<Vec<MethodRun>>>()?;
    let report = BenchReport::new(problem, a.reference.clone(), runs);
    let text = report.to_text();
    if !QUIET.load(Ordering::Relaxed) {
        print!("{text}");
    }
    if let Some(prefix) = &a.out {
        let with = |ext: &str| {
            let mut s = prefix.clone().into_os_string();
            s.push(ext);
            PathBuf::from(s)
        };
        write_text(&with(".csv"), &report.to_csv())?;
        write_text(&with(".raw.csv"), &report.raw_csv())?;
        write_text(&with(".txt"), &text)?;
    }
    Ok(())
}

fn solve(a: SolveArgs, seed: u64) -> Result<()> {
    let method: Method = a.method.parse()?;
    let inst = read_instance(&a.instance)?;
    let mut solve = a.decode.options();
    if let Some(p) = a.preset {
        solve.augmentation = match p {
            SolvePreset::X1 => 1,
            SolvePreset::X128 => 128,
            SolvePreset::X1280 => 1280,
        };
    }
    let model = match &a.checkpoint {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let opts = BenchOptions {
        iters: a.iters,
        solve,
        model,
    };
    let t0 = Instant::now();
    let (objective, sol) = solve_one(method, &inst, seed, 0, &opts)?;
    let wall = t0.elapsed().as_secs_f64();
    say!("{} {} {objective} in {wall:.2}s", method.name(), objective_name(problem_of(&inst)));
    if let Some(out) = &a.out {
        let text = match (&sol, &inst) {
            (Solution::Tour(perm), AnyInstance::Atsp(i)) => write_tour(&matnet_core::atsp::Tour::new(i, perm.clone())?),
            (Solution::Schedule(s), AnyInstance::Ffsp(i)) => write_schedule(i, s),
            _ => unreachable!(),
        };
        write_text(out, &text)?;
    }
    Ok(())
}

fn export_mip(a: ExportMipArgs) -> Result<()> {
    let model = match read_instance(&a.instance)? {
        AnyInstance::Atsp(i) => mtz_model(&i),
        AnyInstance::Ffsp(i) => {
            let m = a.big_m.unwrap_or_else(|| default_big_m(&i));
            ffsp_model(&i, m)
        }
    };
    write_text(&a.out, &model.to_lp())?;
    say!("wrote {} variables, {} constraints to {}", model.vars.len(), model.constraints.len(), a.out.display());
    Ok(())
}

fn gantt(a: GanttArgs) -> Result<()> {
    let AnyInstance::Ffsp(inst) = read_instance(&a.instance)? else {
        return Err(AppError::Other("gantt needs an FFSP instance".into()));
    };
    let origin = a.schedule.display().to_string();
    let Solution::Schedule(sched) = parse_solution(&read_text(&a.schedule)?, &origin, Some(&inst))? else {
        return Err(AppError::Other(format!("{origin}: not a schedule")));
    };
    matnet_core::ffsp::validate_schedule(&inst, &sched).map_err(|v| AppError::Other(format!("{origin}: {v}")))?;
    write_text(&a.out, &render_svg(&inst, &sched))?;
    say!("makespan {} chart written to {}", sched.makespan, a.out.display());
    Ok(())
}

fn oracle(a: OracleArgs) -> Result<()> {
    let (problem, set) = load_set(&a.set)?;
    if problem != Problem::Atsp {
        return Err(AppError::Other("oracle applies to ATSP sets".into()));
    }
    let run = run_method(Method::Oracle, &set, 0, &BenchOptions::default())?;
    say!("{} instances, mean optimal length {:.6}", set.len(), run.mean());
    if let Some(out) = &a.out {
        let mut s = String::from("instance,length\n");
        for (i, v) in run.objectives.iter().enumerate() {
            s.push_str(&format!("{i},{v:?}\n"));
        }
        write_text(out, &s)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["matnet", "generate", "atsp", "--bogus"]), 2);
        assert_eq!(run(["matnet"]), 2);
        assert_eq!(run(["matnet", "frobnicate"]), 2);
    }

    #[test]
    fn runtime_errors_exit_1() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("bad.cfg");
        std::fs::write(&cfg, "[train]\nproblem = atsp\nbatch_size = 0\n").unwrap();
        let out = dir.path().join("x.ckpt");
        let code = run(["matnet", "train", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code, 1);
        let missing = dir.path().join("none");
        assert_eq!(run(["matnet", "oracle", "--set", missing.to_str().unwrap()]), 1);
    }
}
