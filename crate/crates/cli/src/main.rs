//! `great`: generate routing instances, train and fine-tune GREAT policies,
//! and evaluate them against classical baselines and exact oracles.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use great_core::baselines::{
    exact_cvrp_small, exact_op_small, farthest_insertion, greedy_op, held_karp_tsp, nearest_insertion, nearest_neighbor, Solution,
};
use great_core::checkpoint::Checkpoint;
use great_core::encoder::dump_node_similarity;
use great_core::eval::{augmented_solve, evaluate_dataset};
use great_core::instance::{generate_instance, parse_instances, serialize_instances, Distribution, ProblemKind, RoutingInstance};
use great_core::rng::SplitMix64;
use great_core::training::{curriculum_finetune, train, CurriculumSchedule, TrainConfig};
use great_core::Error;

#[derive(Parser)]
#[command(name = "great", version, about = "Edge-attention policies for asymmetric routing problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file (or directory for `finetune`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a JSON-lines instance file.
    Generate(GenerateArgs),
    /// Train a policy from a JSON config and save the best checkpoint.
    Train(TrainArgs),
    /// Fine-tune a checkpoint over growing instance sizes.
    Finetune(FinetuneArgs),
    /// Solve instances with a trained policy.
    Solve(SolveArgs),
    /// Report optimality gaps of a policy or heuristic against a reference.
    Eval(EvalArgs),
    /// Run a heuristic or exact solver on an instance file.
    Oracle(OracleArgs),
    /// Write node-embedding similarities of one instance as CSV.
    DumpEmbeddings(DumpArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    kind: ProblemKind,
    #[arg(long)]
    dist: Distribution,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    #[arg(long)]
    model: PathBuf,
    /// Sizes at which snapshots are written, e.g. `20,50`.
    #[arg(long, value_delimiter = ',', required = true)]
    checkpoints: Vec<usize>,
    #[arg(long, default_value_t = 2000)]
    instances: usize,
    #[arg(long, default_value_t = 5)]
    checkpoint_epochs: usize,
    /// Distribution of the fine-tuning data; defaults to the base model's.
    #[arg(long)]
    dist: Option<Distribution>,
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    aug: usize,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Solver {
    HeldKarp,
    ExactCvrp,
    ExactOp,
    GreedyOp,
    NearestNeighbor,
    NearestInsertion,
    FarthestInsertion,
}

impl Solver {
    fn solve(self, inst: &RoutingInstance) -> Result<Solution, Error> {
        Ok(match self {
            Solver::HeldKarp => held_karp_tsp(inst)?,
            Solver::ExactCvrp => exact_cvrp_small(inst)?,
            Solver::ExactOp => exact_op_small(inst)?,
            Solver::GreedyOp => greedy_op(inst)?,
            Solver::NearestNeighbor => nearest_neighbor(inst)?,
            Solver::NearestInsertion => nearest_insertion(inst)?,
            Solver::FarthestInsertion => farthest_insertion(inst)?,
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Policy checkpoint to evaluate.
    #[arg(long, conflicts_with = "solver", required_unless_present = "solver")]
    model: Option<PathBuf>,
    /// Heuristic to evaluate instead of a policy.
    #[arg(long)]
    solver: Option<Solver>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 1)]
    aug: usize,
    /// Reference solver for the gap.
    #[arg(long)]
    oracle: Solver,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    solver: Solver,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Zero-based line of the instance file.
    #[arg(long, default_value_t = 0)]
    index: usize,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            eprintln!("{}", text.lines().next().unwrap_or("error: invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {}", msg.replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<(), String> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err("--threads must be positive".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(threads).build_global().map_err(|e| e.to_string())?;
    }
    let seed = cli.seed;
    let out = cli.out.as_deref();
    let result = match cli.command {
        Command::Generate(a) => generate(a, seed.unwrap_or(0), out),
        Command::Train(a) => train_cmd(a, seed, out),
        Command::Finetune(a) => finetune(a, seed.unwrap_or(0), out),
        Command::Solve(a) => solve(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Oracle(a) => oracle(a, out),
        Command::DumpEmbeddings(a) => dump(a, out),
    };
    result.map_err(|e| e.to_string())
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn read_instances(path: &Path) -> Result<Vec<RoutingInstance>, Error> {
    let bytes = fs::read(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    Ok(parse_instances(&bytes)?)
}

fn load_model(path: &Path) -> Result<Checkpoint, Error> {
    Checkpoint::load(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn generate(a: GenerateArgs, seed: u64, out: Option<&Path>) -> Result<(), Error> {
    if a.count == 0 {
        return Err(Error::Config("--count must be positive".into()));
    }
    let instances = (0..a.count as u64)
        .map(|i| generate_instance(a.kind, a.dist, a.n, SplitMix64::derive(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    emit(out, &serialize_instances(&instances))
}

/// Parses a training config, naming the offending field on failure.
fn parse_config(text: &str) -> Result<TrainConfig, Error> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            Error::Config(format!("config: {}", e.inner()))
        } else {
            Error::Config(format!("config field `{path}`: {}", e.inner()))
        }
    })
}

fn train_cmd(a: TrainArgs, seed: Option<u64>, out: Option<&Path>) -> Result<(), Error> {
    let text = fs::read_to_string(&a.config).map_err(|e| Error::Config(format!("{}: {e}", a.config.display())))?;
    let mut cfg = parse_config(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let path = out.unwrap_or(Path::new("model.ckpt"));
    let outcome = train(&cfg, |r| {
        println!(
            "epoch {:>4}  loss {:+.6}  train reward {:.5}  validation {:.5}  {:.1} inst/s",
            r.epoch,
            r.mean_loss,
            r.mean_reward,
            r.validation.unwrap_or(f64::NAN),
            r.instances_per_sec
        );
    })?;
    outcome.best.save(path)?;
    println!("best validation {:.6} at epoch {}; saved {}", outcome.best.best_score.unwrap_or(f64::NAN), outcome.best.epoch, path.display());
    Ok(())
}

fn finetune(a: FinetuneArgs, seed: u64, out: Option<&Path>) -> Result<(), Error> {
    let base = load_model(&a.model)?;
    let train_cfg = base.train.clone().ok_or_else(|| Error::Config("checkpoint has no training config; base size unknown".into()))?;
    let schedule = CurriculumSchedule { checkpoint_epochs: a.checkpoint_epochs, ..CurriculumSchedule::geometric(train_cfg.n, &a.checkpoints, a.instances)? };
    let dist = a.dist.unwrap_or(train_cfg.distribution);
    let dir = out.unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let snapshots = curriculum_finetune(&base, &schedule, dist, seed, &train_cfg.adam(), |n, r| {
        println!("size {n:>4}  epoch {:>3}  loss {:+.6}  train reward {:.5}", r.epoch, r.mean_loss, r.mean_reward);
    })?;
    for (n, ckpt) in snapshots {
        let path = dir.join(format!("ft{n}.ckpt"));
        ckpt.save(&path)?;
        println!("saved {}", path.display());
    }
    Ok(())
}

fn solve(a: SolveArgs, out: Option<&Path>) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let data = read_instances(&a.data)?;
    let mut text = String::new();
    for (i, inst) in data.iter().enumerate() {
        let s = augmented_solve(&model.params, &model.policy, inst, a.aug)?;
        text += &json!({"instance": i, "objective": s.objective, "feasible": s.feasible, "route": s.route}).to_string();
        text.push('\n');
    }
    emit(out, &text)
}

fn eval(a: EvalArgs, out: Option<&Path>) -> Result<(), Error> {
    let data = read_instances(&a.data)?;
    let reference = |inst: &RoutingInstance| a.oracle.solve(inst);
    let report = match (&a.model, a.solver) {
        (Some(path), _) => {
            let model = load_model(path)?;
            evaluate_dataset(&data, |inst| augmented_solve(&model.params, &model.policy, inst, a.aug), reference)?
        }
        (None, Some(solver)) => evaluate_dataset(&data, |inst| solver.solve(inst), reference)?,
        (None, None) => return Err(Error::Config("either --model or --solver is required".into())),
    };
    print!("{}", report.table());
    if let Some(path) = out {
        fs::write(path, report.to_csv())?;
    }
    Ok(())
}

fn oracle(a: OracleArgs, out: Option<&Path>) -> Result<(), Error> {
    let data = read_instances(&a.data)?;
    let mut text = String::new();
    for (i, inst) in data.iter().enumerate() {
        let s = a.solver.solve(inst)?;
        text += &json!({"instance": i, "objective": s.objective, "feasible": s.feasible, "route": s.route}).to_string();
        text.push('\n');
    }
    emit(out, &text)
}

fn dump(a: DumpArgs, out: Option<&Path>) -> Result<(), Error> {
    let model = load_model(&a.model)?;
    let data = read_instances(&a.data)?;
    let inst = data
        .get(a.index)
        .ok_or_else(|| Error::Config(format!("--index {} out of range ({} instances)", a.index, data.len())))?;
    emit(out, &dump_node_similarity(&model.params, &model.policy.encoder, inst)?)
}
