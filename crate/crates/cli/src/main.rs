use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use tmcflow::experiment::{geometries_or_builtin, run_experiment, ExperimentSpec, PolicyName};
use tmcflow::model::{write_keyed_tmc, IntersectionGeometry};
use tmcflow::rl::{train, DqnPolicy, Hyperparams};
use tmcflow::signals::Timing;
use tmcflow::sim::{run, Controller, SimConfig};
use tmcflow::sumo::{emit_routes, emit_tls};
use tmcflow::trafficgen::{generate, Demand, DemandSpec, MinuteTmc};
use tmcflow::trajectory::{
    count_movements, load_trajectories, load_typical_paths, schematic_paths, write_typical_paths,
    DEFAULT_EPS, DEFAULT_MIN_SIMILARITY,
};

#[derive(Parser)]
#[command(
    name = "tmcflow",
    version,
    about = "Turning-movement demand, signal plans and queue simulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate demand: route file and per-minute counts.
    Gen(GenArgs),
    /// Count turning movements in tracked trajectories.
    Tmc(TmcArgs),
    /// Emit a per-minute signal program.
    Plan(PlanArgs),
    /// Simulate one intersection under one policy.
    Simulate(SimulateArgs),
    /// Write SUMO routes, tlLogic programs and their switch schedule.
    ExportSumo(PlanArgs),
    /// Run the policy comparison grid.
    Experiment(ExperimentArgs),
    /// Train the green-split learner and save its weights.
    RlTrain(RlTrainArgs),
}

#[derive(Args, Clone)]
struct DemandArgs {
    /// Demand description (TOML); flags below override its fields.
    #[arg(long)]
    demand: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Zone pattern name, PA..PG.
    #[arg(long)]
    pattern: Option<String>,
}

impl DemandArgs {
    fn spec(&self) -> Result<DemandSpec> {
        let mut spec = match &self.demand {
            Some(p) => DemandSpec::load(p)?,
            None => DemandSpec::default(),
        };
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        if let Some(p) = &self.pattern {
            spec.pattern = p.clone();
            spec.weights = None;
        }
        Ok(spec)
    }

    fn generate(&self) -> Result<(DemandSpec, Demand)> {
        let spec = self.spec()?;
        let demand = generate(&spec)?;
        info!(
            "generated {} vehicles over {} minutes",
            demand.plans.len(),
            demand.minutes()
        );
        Ok((spec, demand))
    }
}

#[derive(Args)]
struct OutArgs {
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

impl OutArgs {
    fn file(&self, name: &str) -> Result<BufWriter<File>> {
        std::fs::create_dir_all(&self.out_dir)
            .with_context(|| format!("creating {}", self.out_dir.display()))?;
        let path = self.out_dir.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        std::fs::create_dir_all(&self.out_dir)?;
        let path = self.out_dir.join(name);
        std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
    }
}

#[derive(Args)]
struct GenArgs {
    #[command(flatten)]
    demand: DemandArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct TmcArgs {
    /// CSV of `id,class,frame,x,y` rows.
    #[arg(long)]
    trajectories: PathBuf,
    /// CSV of `movement,x,y` reference paths; defaults to a schematic junction.
    #[arg(long)]
    paths: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f64,
    #[arg(long, default_value_t = DEFAULT_MIN_SIMILARITY)]
    min_similarity: f64,
    #[arg(long, default_value = "observed")]
    id: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SignalArgs {
    #[arg(long, default_value = "static")]
    policy: PolicyName,
    #[arg(long, default_value_t = 90)]
    cycle: u32,
    #[arg(long, default_value_t = 3)]
    yellow: u32,
    /// Saved learner weights for `--policy rl`; trained on the demand if absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Training episodes when the rl policy has no saved weights.
    #[arg(long)]
    episodes: Option<usize>,
}

impl SignalArgs {
    fn timing(&self) -> Timing {
        Timing::new(self.cycle, self.yellow)
    }

    fn learner(&self, minute_tmc: &MinuteTmc, seed: u64) -> Result<Option<DqnPolicy>> {
        if self.policy != PolicyName::Rl {
            return Ok(None);
        }
        if let Some(p) = &self.weights {
            return Ok(Some(DqnPolicy::load(p)?));
        }
        let mut hp = Hyperparams::default();
        if let Some(e) = self.episodes {
            hp.episodes = e;
        }
        Ok(Some(train(minute_tmc, &self.timing(), seed, &hp)?.policy))
    }
}

fn controller<'a>(
    policy: PolicyName,
    peaks: &'a std::collections::BTreeSet<u32>,
    learned: Option<&'a DqnPolicy>,
) -> Controller<'a> {
    match policy {
        PolicyName::Static => Controller::Static,
        PolicyName::Dynamic => Controller::Dynamic,
        PolicyName::Hybrid => Controller::Hybrid(peaks),
        PolicyName::Rl => Controller::Rl(learned.expect("learner prepared for rl")),
    }
}

#[derive(Args)]
struct PlanArgs {
    #[command(flatten)]
    demand: DemandArgs,
    #[command(flatten)]
    signal: SignalArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    demand: DemandArgs,
    #[command(flatten)]
    signal: SignalArgs,
    /// Geometry CSV; defaults to the bundled intersections.
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[arg(long, default_value = "INT1")]
    intersection: String,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment description (TOML); defaults to the full grid.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Restrict to these cycle lengths.
    #[arg(long, value_delimiter = ',')]
    cycle: Vec<u32>,
    #[arg(long, value_delimiter = ',')]
    pattern: Vec<String>,
    #[arg(long, value_delimiter = ',')]
    policy: Vec<PolicyName>,
    #[arg(long)]
    geometry: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RlTrainArgs {
    #[command(flatten)]
    demand: DemandArgs,
    #[arg(long, default_value_t = 90)]
    cycle: u32,
    #[arg(long, default_value_t = 3)]
    yellow: u32,
    #[arg(long)]
    episodes: Option<usize>,
    #[command(flatten)]
    out: OutArgs,
}

fn find_geometry(path: Option<&Path>, id: &str) -> Result<IntersectionGeometry> {
    let geos = geometries_or_builtin(path)?;
    match geos.into_iter().find(|g| g.id() == id) {
        Some(g) => Ok(g),
        None => bail!("no intersection '{id}' in the geometry table"),
    }
}

fn gen(args: &GenArgs) -> Result<()> {
    let (_, demand) = args.demand.generate()?;
    args.out
        .write_text("routes.rou.xml", &emit_routes(&demand.plans)?)?;
    demand
        .minute_tmc
        .write_csv(args.out.file("minute_tmc.csv")?)?;
    println!(
        "{} vehicles, {} minutes, hourly totals {:?}",
        demand.plans.len(),
        demand.minutes(),
        demand.hourly_totals
    );
    Ok(())
}

fn tmc(args: &TmcArgs) -> Result<()> {
    let trajs = load_trajectories(&args.trajectories)?;
    let paths = match &args.paths {
        Some(p) => load_typical_paths(p)?,
        None => {
            let paths = schematic_paths(400.0, 20.0, 10);
            write_typical_paths(args.out.file("typical_paths.csv")?, &paths)?;
            paths
        }
    };
    let count = count_movements(&trajs, &paths, args.eps, args.min_similarity);
    write_keyed_tmc(
        args.out.file("tmc.csv")?,
        "id",
        &[(args.id.clone(), count.tmc)],
    )?;
    println!(
        "{} trajectories: {} counted, {} unmatched, {} skipped",
        trajs.len(),
        count.tmc.total(),
        count.unmatched,
        count.skipped
    );
    Ok(())
}

fn plan(args: &PlanArgs) -> Result<()> {
    let (spec, demand) = args.demand.generate()?;
    let learned = args.signal.learner(&demand.minute_tmc, spec.seed)?;
    let peaks = spec.profile.peak_minutes();
    let program = controller(args.signal.policy, &peaks, learned.as_ref())
        .program(&demand.minute_tmc, &args.signal.timing())?;
    program.write_csv(args.out.file("program.csv")?)?;
    println!(
        "{} minutes of {} plans at cycle {}",
        program.minutes(),
        args.signal.policy,
        args.signal.cycle
    );
    Ok(())
}

fn export_sumo(args: &PlanArgs) -> Result<()> {
    let (spec, demand) = args.demand.generate()?;
    let learned = args.signal.learner(&demand.minute_tmc, spec.seed)?;
    let peaks = spec.profile.peak_minutes();
    let program = controller(args.signal.policy, &peaks, learned.as_ref())
        .program(&demand.minute_tmc, &args.signal.timing())?;
    let bundle = emit_tls(&program, "J0");
    args.out
        .write_text("routes.rou.xml", &emit_routes(&demand.plans)?)?;
    args.out.write_text("tls.add.xml", &bundle.to_xml()?)?;
    bundle.write_schedule_csv(args.out.file("tls_schedule.csv")?)?;
    println!(
        "{} vehicles, {} distinct signal programs",
        demand.plans.len(),
        bundle.programs.len()
    );
    Ok(())
}

fn simulate(args: &SimulateArgs) -> Result<()> {
    let geo = find_geometry(args.geometry.as_deref(), &args.intersection)?;
    let (spec, demand) = args.demand.generate()?;
    let learned = args.signal.learner(&demand.minute_tmc, spec.seed)?;
    let peaks = spec.profile.peak_minutes();
    let program = controller(args.signal.policy, &peaks, learned.as_ref())
        .program(&demand.minute_tmc, &args.signal.timing())?;
    let result = run(
        &geo,
        &demand.plans,
        &program,
        &SimConfig::new(demand.minutes() * 60),
    )?;
    result.write_summary_csv(args.out.file("summary.csv")?)?;
    result.write_queue_csv(args.out.file("queues.csv")?)?;
    println!(
        "{} {} cycle {}: injected {}, served {}, residual {}, nwt {:.2} s",
        geo.id(),
        args.signal.policy,
        args.signal.cycle,
        result.injected,
        result.served,
        result.residual_queue,
        result.nwt
    );
    Ok(())
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let mut spec = match &args.spec {
        Some(p) => ExperimentSpec::load(p)?,
        None => ExperimentSpec::default(),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if !args.cycle.is_empty() {
        spec.cycles = args.cycle.clone();
    }
    if !args.pattern.is_empty() {
        spec.patterns = args.pattern.clone();
    }
    if !args.policy.is_empty() {
        spec.policies = args.policy.clone();
    }
    let geos = geometries_or_builtin(args.geometry.as_deref())?;
    let matrix = run_experiment(&spec, &geos)?;
    matrix.write_report(args.out.file("report.csv")?)?;
    let winners = matrix.winners();
    winners.write_csv(args.out.file("winners.csv")?)?;
    let mut table = Vec::new();
    winners.write_csv(&mut table)?;
    print!("{}", String::from_utf8_lossy(&table));
    Ok(())
}

fn rl_train(args: &RlTrainArgs) -> Result<()> {
    let (spec, demand) = args.demand.generate()?;
    let mut hp = Hyperparams::default();
    if let Some(e) = args.episodes {
        hp.episodes = e;
    }
    let trained = train(
        &demand.minute_tmc,
        &Timing::new(args.cycle, args.yellow),
        spec.seed,
        &hp,
    )?;
    trained
        .policy
        .write_snapshot(args.out.file("weights.txt")?)?;
    trained.write_log(args.out.file("training_log.csv")?)?;
    if let (Some(first), Some(last)) = (trained.log.first(), trained.log.last()) {
        println!(
            "{} episodes: mean reward {:.3} -> {:.3}",
            trained.log.len(),
            first.mean_reward,
            last.mean_reward
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Gen(a) => gen(a),
        Command::Tmc(a) => tmc(a),
        Command::Plan(a) => plan(a),
        Command::Simulate(a) => simulate(a),
        Command::ExportSumo(a) => export_sumo(a),
        Command::Experiment(a) => experiment(a),
        Command::RlTrain(a) => rl_train(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
