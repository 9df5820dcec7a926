use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use geocox::io::{self as gio, KmAtRow};
use geocox::sim::{self, ModelVariant, ScenarioKind, SimScenario, StudyConfig};
use geocox::survival::km_survival_at;
use geocox::tic::{parse_grid, tic_global, tic_of_outcomes};
use geocox::{
    fit_all_locations, fit_global, graph_distance_matrix, great_circle_matrix, kaplan_meier, normalize_to_max,
    select_bandwidth, Cohort, DistanceKind, DistanceMatrix, Error, FitOptions, Kernel, Likelihood, RiskSetScope,
    SpatialGraph, WeightScheme,
};

#[derive(Parser)]
#[command(name = "geocox", version, about = "Geographically weighted Cox regression on areal data")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one weighted Cox model per location.
    Fit(FitArgs),
    /// Compute the TIC over a bandwidth grid.
    SelectBandwidth(SelectArgs),
    /// Run the replicated simulation study.
    Simulate(SimulateArgs),
    /// Write a location-by-location distance matrix.
    Distances(DistanceArgs),
    /// Per-location Kaplan–Meier survival at a fixed time.
    Km(KmArgs),
    /// Generate one synthetic cohort on a graph.
    Cohort(CohortArgs),
}

#[derive(Args)]
struct GraphArgs {
    /// Nodes CSV: label[,latitude,longitude].
    #[arg(long)]
    nodes: PathBuf,
    /// Edges CSV: two label columns.
    #[arg(long)]
    edges: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Metric {
    Graph,
    Greatcircle,
}

impl From<Metric> for DistanceKind {
    fn from(m: Metric) -> Self {
        match m {
            Metric::Graph => DistanceKind::Graph,
            Metric::Greatcircle => DistanceKind::GreatCircle,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LikelihoodArg {
    /// Events weighted by their case weight.
    Weighted,
    /// Unweighted events plus a log-weight offset.
    Literal,
}

#[derive(Args)]
struct SchemeArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Subject CSV: id,time,status,location,<covariates…>.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "graph")]
    distance: Metric,
    /// indicator, exponential, gaussian, bisquare or stochastic-neighborhood.
    #[arg(long, default_value = "stochastic-neighborhood")]
    kernel: String,
    /// Distance below which weights are 1 (great-circle and indicator kernels).
    #[arg(long)]
    threshold: Option<f64>,
    /// Largest great-circle distance after normalisation.
    #[arg(long, default_value_t = 11.0)]
    normalize_max: f64,
    #[arg(long, value_enum, default_value = "weighted")]
    likelihood: LikelihoodArg,
    #[arg(long, default_value_t = 25)]
    max_iterations: usize,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    scheme: SchemeArgs,
    /// Kernel bandwidth h.
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Fit a single unweighted model and report it for every location.
    #[arg(long, conflicts_with = "bandwidth")]
    global: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Within,
    Global,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    scheme: SchemeArgs,
    /// start:end:step or a comma-separated list.
    #[arg(long, default_value = "0.5:50:0.5")]
    grid: String,
    /// Risk sets used in the likelihood term.
    #[arg(long, value_enum, default_value = "within")]
    risk_set: ScopeArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Null,
    Coordinate,
    Graphdist,
}

impl From<ScenarioArg> for ScenarioKind {
    fn from(s: ScenarioArg) -> Self {
        match s {
            ScenarioArg::Null => ScenarioKind::Null,
            ScenarioArg::Coordinate => ScenarioKind::Coordinate,
            ScenarioArg::Graphdist => ScenarioKind::GraphDistance,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 20_200_101)]
    seed: u64,
    #[arg(long, default_value = "0.5,1,5,10,25,50")]
    grid: String,
    /// Comma-separated: local, global, gd, gcd:<dl>, gcd-matched.
    #[arg(long, default_value = "local,global,gd,gcd:0.5,gcd:1,gcd:2,gcd-matched")]
    variants: String,
    /// Also write every per-location estimate to estimates.csv.
    #[arg(long)]
    archive: bool,
    #[arg(long, default_value_t = 11.0)]
    normalize_max: f64,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct DistanceArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum, default_value = "graph")]
    metric: Metric,
    /// Rescale so the largest entry equals this value.
    #[arg(long)]
    normalize_max: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KmArgs {
    #[arg(long)]
    data: PathBuf,
    /// Time at which survival is reported.
    #[arg(long)]
    at: f64,
    /// Defaults to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CohortArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[arg(long, value_enum)]
    scenario: ScenarioArg,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Total subjects spread unevenly over locations, some with fewer than
    /// three. Without it each location gets 30 to 40.
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

/// A failure with its process exit code.
enum Failure {
    Usage(String),
    Data(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data(_) => 3,
            Failure::Numerical(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidScheme(_) | Error::InvalidGrid(_) => Failure::Usage(e.to_string()),
            Error::NoValidBandwidth => Failure::Numerical(e.to_string()),
            other => Failure::Data(other.to_string()),
        }
    }
}

type Outcome<T> = Result<T, Failure>;

fn create(path: &Path) -> Outcome<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

fn load_graph(args: &GraphArgs) -> Outcome<SpatialGraph> {
    Ok(gio::read_graph(&args.nodes, &args.edges)?)
}

fn distance_matrix(graph: &SpatialGraph, metric: Metric, normalize_max: Option<f64>) -> Outcome<DistanceMatrix> {
    let raw = match metric {
        Metric::Graph => graph_distance_matrix(graph),
        Metric::Greatcircle => great_circle_matrix(graph)?,
    };
    Ok(match normalize_max {
        Some(m) => normalize_to_max(&raw, m)?,
        None => raw,
    })
}

/// Data, graph and distances for the per-location fitting commands.
struct Prepared {
    cohort: Cohort,
    dmat: DistanceMatrix,
    opts: FitOptions,
}

fn prepare(args: &SchemeArgs) -> Outcome<Prepared> {
    let graph = load_graph(&args.graph)?;
    let cohort = gio::read_cohort_file(&args.data)?.reindexed(&graph.labels())?;
    let normalize = matches!(args.distance, Metric::Greatcircle).then_some(args.normalize_max);
    let dmat = distance_matrix(&graph, args.distance, normalize)?;
    let opts = FitOptions {
        max_iterations: args.max_iterations,
        likelihood: match args.likelihood {
            LikelihoodArg::Weighted => Likelihood::WeightedContributions,
            LikelihoodArg::Literal => Likelihood::Literal,
        },
        ..FitOptions::default()
    };
    opts.validate()?;
    Ok(Prepared { cohort, dmat, opts })
}

fn kernel(args: &SchemeArgs) -> Outcome<Kernel> {
    args.kernel.parse().map_err(|e: Error| Failure::Usage(e.to_string()))
}

fn run_fit(args: FitArgs) -> Outcome<()> {
    let k = kernel(&args.scheme)?;
    if !args.global && k.uses_bandwidth() && args.bandwidth.is_none() {
        return Err(Failure::Usage(format!("--kernel {k} requires --bandwidth")));
    }
    let p = prepare(&args.scheme)?;
    let (fits, tic) = if args.global {
        let g = fit_global(&p.cohort, &p.opts);
        let tic = g.as_ref().ok().and_then(|g| tic_global(&p.cohort, g, RiskSetScope::WithinLocation).ok());
        (vec![g; p.cohort.n_locations()], tic)
    } else {
        let scheme = WeightScheme::new(k, args.bandwidth, args.scheme.threshold, args.scheme.distance.into())?;
        let fits = fit_all_locations(&p.cohort, &p.dmat, &scheme, &p.opts)?;
        let tic = tic_of_outcomes(&p.cohort, &fits, RiskSetScope::WithinLocation).ok();
        (fits, tic)
    };
    let mut out = create(&args.out)?;
    gio::write_fits(&mut out, p.cohort.locations(), p.cohort.covariate_names(), &fits)?;
    out.flush().map_err(|e| Failure::Data(e.to_string()))?;

    let converged = fits.iter().filter(|f| matches!(f, Ok(r) if r.converged)).count();
    eprintln!("{converged}/{} locations converged", fits.len());
    if let Some(t) = tic {
        eprintln!("TIC {}", gio::fmt_num(t.tic));
    }
    if converged == 0 {
        return Err(Failure::Numerical("no location fit converged".into()));
    }
    Ok(())
}

fn run_select(args: SelectArgs) -> Outcome<()> {
    let k = kernel(&args.scheme)?;
    if !k.uses_bandwidth() {
        return Err(Failure::Usage(format!("kernel {k} has no bandwidth to select")));
    }
    let grid = parse_grid(&args.grid)?;
    let p = prepare(&args.scheme)?;
    let family = WeightScheme::new(k, Some(grid[0]), args.scheme.threshold, args.scheme.distance.into())?;
    let scope = match args.risk_set {
        ScopeArg::Within => RiskSetScope::WithinLocation,
        ScopeArg::Global => RiskSetScope::Global,
    };
    let trace = select_bandwidth(&p.cohort, &p.dmat, &family, &grid, &p.opts, scope)?;
    let mut out = create(&args.out)?;
    gio::write_tic_trace(&mut out, &trace)?;
    out.flush().map_err(|e| Failure::Data(e.to_string()))?;
    eprintln!("selected h = {}", gio::fmt_num(trace.selected_bandwidth()));
    Ok(())
}

fn run_simulate(args: SimulateArgs) -> Outcome<()> {
    let graph = load_graph(&args.graph)?;
    let variants = args
        .variants
        .split(',')
        .map(|v| v.trim().parse::<ModelVariant>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(e.to_string()))?;
    if args.replicates < 2 {
        return Err(Failure::Usage("--replicates must be at least 2".into()));
    }
    let config = StudyConfig {
        replicates: args.replicates,
        base_seed: args.seed,
        grid: parse_grid(&args.grid)?,
        keep_archive: args.archive,
        normalize_max: args.normalize_max,
        ..StudyConfig::desk(SimScenario::new(args.scenario.into()), variants)
    };
    let result = sim::run_study(&config, &graph)?;

    fs::create_dir_all(&args.out_dir).map_err(|e| Failure::Data(format!("{}: {e}", args.out_dir.display())))?;
    let write = |name: &str, f: &dyn Fn(&mut BufWriter<File>) -> geocox::Result<()>| -> Outcome<()> {
        let mut out = create(&args.out_dir.join(name))?;
        f(&mut out)?;
        out.flush().map_err(|e| Failure::Data(e.to_string()))
    };
    write("metrics.csv", &|w| gio::write_metrics(w, &result.metrics))?;
    write("bandwidth_selection.csv", &|w| gio::write_selection(w, &result.selection))?;
    if let Some(rows) = &result.archive {
        write("estimates.csv", &|w| gio::write_archive(w, rows))?;
    }

    let cens = &result.censored_fraction;
    eprintln!(
        "{} replicates, mean censoring {}",
        cens.len(),
        gio::fmt_num(cens.iter().sum::<f64>() / cens.len() as f64)
    );
    for (variant, h) in &result.modal_bandwidth {
        eprintln!("{variant}: modal h = {}", gio::fmt_num(*h));
    }
    for (variant, n) in result.failures.iter().filter(|(_, n)| **n > 0) {
        eprintln!("{variant}: {n} failed location fits excluded");
    }
    Ok(())
}

fn run_distances(args: DistanceArgs) -> Outcome<()> {
    let graph = load_graph(&args.graph)?;
    let m = distance_matrix(&graph, args.metric, args.normalize_max)?;
    let mut out = create(&args.out)?;
    gio::write_matrix(&mut out, &graph.labels(), &m)?;
    out.flush().map_err(|e| Failure::Data(e.to_string()))
}

fn run_km(args: KmArgs) -> Outcome<()> {
    let cohort = gio::read_cohort_file(&args.data)?;
    let rows = (0..cohort.n_locations())
        .map(|j| {
            let members = cohort.location_members(j);
            let curve = kaplan_meier(&cohort, Some(members))?;
            Ok(KmAtRow {
                location: cohort.locations()[j].clone(),
                n: members.len(),
                events: members.iter().filter(|&&i| cohort.subject(i).event).count(),
                survival: km_survival_at(&curve, args.at),
            })
        })
        .collect::<geocox::Result<Vec<_>>>()?;
    match &args.out {
        Some(path) => {
            let mut out = create(path)?;
            gio::write_km_at(&mut out, args.at, &rows)?;
            out.flush().map_err(|e| Failure::Data(e.to_string()))
        }
        None => Ok(gio::write_km_at(io::stdout().lock(), args.at, &rows)?),
    }
}

fn run_cohort(args: CohortArgs) -> Outcome<()> {
    let graph = load_graph(&args.graph)?;
    let scenario = SimScenario::new(args.scenario.into());
    let truths = sim::scenario_betas(&scenario, &graph, &graph_distance_matrix(&graph))?;
    let labels = graph.labels();
    let cohort = match args.subjects {
        Some(total) => sim::simulate_sparse_cohort(&truths, &scenario, &labels, total, args.seed)?,
        None => sim::simulate_cohort(&truths, &scenario, &labels, args.seed)?,
    };
    let mut out = create(&args.out)?;
    gio::write_cohort(&mut out, &cohort)?;
    out.flush().map_err(|e| Failure::Data(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::SelectBandwidth(a) => run_select(a),
        Command::Simulate(a) => run_simulate(a),
        Command::Distances(a) => run_distances(a),
        Command::Km(a) => run_km(a),
        Command::Cohort(a) => run_cohort(a),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
