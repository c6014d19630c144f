use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use phdict::dictionary::{self, BuildSettings, ClusterOptions, DceMode, DictionaryBundle, GridSpec};
use phdict::estimate::{estimate, replay, write_replay_csv, EstimateOptions, Interpolation};
use phdict::measure::{make_noisy_datum, PhTrace};
use phdict::{Error, ForwardConfig, ParamVector, PhysicalParams, Simulator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const EXIT_CONFIG: u8 = 3;
const EXIT_INTEGRATION: u8 = 4;
const EXIT_BUNDLE: u8 = 5;
const EXIT_ESTIMATION: u8 = 6;
const EXIT_INPUT: u8 = 7;

/// Surface-pH forward model and dictionary-based parameter estimation.
#[derive(Parser, Debug)]
#[command(name = "phdict", version)]
struct Cli {
    /// Model configuration (TOML, layered over the built-in defaults).
    #[arg(long, global = true, env = "PHDICT_CONFIG")]
    config: Option<PathBuf>,
    /// Worker threads for dictionary generation and DCE sampling.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one experiment and write the datum and the full trace.
    Simulate(SimulateArgs),
    /// Build a dictionary bundle.
    BuildDict(BuildArgs),
    /// Report k-medoids cost against k for a generated dictionary.
    Elbow(ElbowArgs),
    /// Estimate parameters from a datum.
    Estimate(EstimateArgs),
    /// Load and check a bundle.
    ValidateBundle(ValidateArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Dimensionless parameters `xi_lambda,xi_A,xi_gamma`.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["lambda", "a0", "gamma"])]
    xi: Option<Vec<f64>>,
    /// Physical permeability (um/s); requires --a0 and --gamma.
    #[arg(long, requires_all = ["a0", "gamma"])]
    lambda: Option<f64>,
    #[arg(long)]
    a0: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    /// Seed for measurement noise (used when noise_std > 0).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = "PHDICT_OUT")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct GridArgs {
    /// Points per axis over the standard box.
    #[arg(long, default_value_t = 12)]
    grid: usize,
    /// Per-axis counts, overriding --grid.
    #[arg(long, value_delimiter = ',')]
    grid_counts: Option<Vec<usize>>,
}

impl GridArgs {
    fn spec(&self) -> anyhow::Result<GridSpec> {
        let mut g = GridSpec::standard(self.grid);
        if let Some(c) = &self.grid_counts {
            g.counts = triple(c, "--grid-counts")?;
        }
        Ok(g)
    }
}

fn triple<T: Copy>(v: &[T], flag: &str) -> anyhow::Result<[T; 3]> {
    match v {
        &[a, b, c] => Ok([a, b, c]),
        _ => Err(Error::Config(format!("{flag} takes three comma-separated values, got {}", v.len())).into()),
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DceModeArg {
    Full,
    Diagonal,
}

#[derive(Args, Debug)]
struct BuildArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 5)]
    k: usize,
    /// NMF rank, or `auto` for the singular-value rule.
    #[arg(long, default_value = "3")]
    rank: String,
    #[arg(long, default_value_t = 1e-3)]
    rank_threshold: f64,
    #[arg(long, default_value_t = 500)]
    dce_samples: usize,
    #[arg(long, value_enum, default_value = "diagonal")]
    dce_mode: DceModeArg,
    /// Base seed; clustering, NMF and DCE seeds derive from it.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    /// k values for the elbow report, e.g. `2,3,4,5,6,7,8`.
    #[arg(long, value_delimiter = ',')]
    elbow: Vec<usize>,
    #[arg(long, env = "PHDICT_BUNDLE")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ElbowArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 2)]
    k_min: usize,
    #[arg(long, default_value_t = 10)]
    k_max: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    restarts: usize,
    /// Directory for the atom cache and `elbow.csv`.
    #[arg(long, env = "PHDICT_OUT")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[arg(long, env = "PHDICT_BUNDLE")]
    bundle: PathBuf,
    /// Datum CSV (`pH0,p,dt` header) or raw binary with a `.bin` extension.
    #[arg(long, env = "PHDICT_DATUM")]
    datum: PathBuf,
    #[arg(long, env = "PHDICT_OUT")]
    out: PathBuf,
    /// Phase-2 sparsity parameter.
    #[arg(long, default_value_t = 0.03)]
    eta: f64,
    #[arg(long, default_value_t = 1e-3)]
    tol_theta: f64,
    #[arg(long, default_value_t = 250)]
    max_iter: usize,
    /// Scale of the per-atom hyperprior scales `ϑ_j = theta_scale / ‖a_j‖²`.
    #[arg(long, default_value_t = phdict::estimate::PHASE2_THETA_SCALE)]
    theta_scale: f64,
    /// Noise level scaling the unwhitened Phase-2 system.
    #[arg(long, default_value_t = 1e-5)]
    sigma: f64,
    /// Switch to the inverse-gamma hyperprior at this iteration.
    #[arg(long)]
    hybrid_switch: Option<usize>,
    /// Whiten Phase 2 with the winner's DCE statistics.
    #[arg(long)]
    whitened: bool,
    /// Report the raw (unnormalized) label average as the estimate.
    #[arg(long)]
    raw: bool,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, env = "PHDICT_BUNDLE")]
    bundle: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Domain(_)) => EXIT_CONFIG,
        Some(Error::Integration { .. }) => EXIT_INTEGRATION,
        Some(Error::Bundle(_)) => EXIT_BUNDLE,
        Some(Error::Estimation(_) | Error::Invariant(_)) => EXIT_ESTIMATION,
        Some(Error::Parse(_) | Error::Io(_)) => EXIT_INPUT,
        None => 1,
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.workers {
        phdict::init_workers(n)?;
    }
    match &cli.cmd {
        Command::Simulate(a) => simulate(cli, a),
        Command::BuildDict(a) => build_dict(cli, a),
        Command::Elbow(a) => elbow(cli, a),
        Command::Estimate(a) => run_estimate(cli, a),
        Command::ValidateBundle(a) => {
            let b = DictionaryBundle::load(&a.bundle, None)?;
            if let Some(path) = &cli.config {
                let cfg = ForwardConfig::load(path)?;
                if cfg.hash() != b.config.hash() {
                    return Err(Error::Bundle("bundle was built for a different configuration".into()).into());
                }
            }
            println!(
                "bundle OK: {} atoms x {} samples, k = {}, sizes {:?}, ranks {:?}, config {}",
                b.dictionary.n_atoms(),
                b.dictionary.n_samples(),
                b.subs.len(),
                b.clustering.sizes(),
                b.subs.iter().map(|s| s.rank()).collect::<Vec<_>>(),
                &b.config.hash()[..12]
            );
            Ok(())
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ForwardConfig> {
    Ok(match &cli.config {
        Some(p) => ForwardConfig::load(p)?,
        None => ForwardConfig::default(),
    })
}

fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(Error::from)?))
}

/// Writes `run.toml` with everything needed to repeat the run.
fn write_run_manifest(dir: &Path, cfg: &ForwardConfig, cli: &Cli, extra: &[(&str, String)]) -> anyhow::Result<()> {
    fs::write(dir.join("config.toml"), cfg.to_toml_string()).map_err(Error::from)?;
    let mut w = create(&dir.join("run.toml"))?;
    let args: Vec<String> = std::env::args().collect();
    writeln!(w, "tool_version = {:?}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "config_hash = {:?}", cfg.hash())?;
    writeln!(w, "command = {:?}", args)?;
    writeln!(w, "workers = {}", cli.workers.map_or("\"default\"".to_string(), |n| n.to_string()))?;
    for (k, v) in extra {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let sim = Simulator::new(&cfg)?;
    let (params, xi) = match (&a.xi, a.lambda) {
        (Some(x), _) => {
            let [l, a0, g] = triple(x, "--xi")?;
            let xi = ParamVector::new(l, a0, g);
            (phdict::map_params(&xi, &cfg.scaling)?, Some(xi))
        }
        (None, Some(lambda)) => {
            let p = PhysicalParams { lambda, a0: a.a0.unwrap(), gamma: a.gamma.unwrap() };
            p.validate()?;
            (p, None)
        }
        (None, None) => return Err(Error::Config("give --xi or --lambda/--a0/--gamma".into()).into()),
    };
    let traj = sim.simulate_physical(&params, false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let datum = make_noisy_datum(&traj.ph(), &cfg.measurement, &mut rng)?;

    fs::create_dir_all(&a.out).map_err(Error::from)?;
    datum.write_csv(create(&a.out.join("datum.csv"))?)?;
    traj.write_csv(create(&a.out.join("trace.csv"))?, true)?;
    let mut extra = vec![
        ("seed", a.seed.to_string()),
        ("lambda", params.lambda.to_string()),
        ("a0", params.a0.to_string()),
        ("gamma", format!("{:e}", params.gamma)),
    ];
    if let Some(xi) = xi {
        extra.push(("xi", format!("{:?}", xi.0)));
    }
    write_run_manifest(&a.out, &cfg, cli, &extra)?;
    let peak = datum.max();
    log::info!(
        "simulated {} frames in {} steps; peak datum {peak:.2}, final {:.2}",
        traj.len(),
        traj.stats.accepted,
        datum.values.last().copied().unwrap_or(0.0)
    );
    Ok(())
}

fn build_dict(cli: &Cli, a: &BuildArgs) -> anyhow::Result<()> {
    let cfg = load_config(cli)?;
    let rank = match a.rank.as_str() {
        "auto" => None,
        r => Some(r.parse::<usize>().map_err(|_| Error::Config(format!("--rank must be a number or 'auto', got '{r}'")))?),
    };
    let settings = BuildSettings {
        grid: a.grid.spec()?,
        k: a.k,
        rank,
        rank_threshold: a.rank_threshold,
        dce_samples: a.dce_samples,
        dce_mode: match a.dce_mode {
            DceModeArg::Full => DceMode::Full,
            DceModeArg::Diagonal => DceMode::Diagonal,
        },
        cluster_seed: a.seed,
        nmf_seed: a.seed.wrapping_add(1),
        dce_seed: a.seed.wrapping_add(2),
        restarts: a.restarts,
        elbow_ks: a.elbow.clone(),
    };
    let bundle = dictionary::build(&cfg, &settings, Some(&a.out))?;
    if !bundle.elbow.is_empty() {
        write_elbow(&a.out.join("elbow.csv"), &bundle.elbow)?;
    }
    write_run_manifest(&a.out, &cfg, cli, &[("seed", a.seed.to_string())])?;
    println!("bundle written to {}: k = {}, sizes {:?}", a.out.display(), bundle.subs.len(), bundle.clustering.sizes());
    Ok(())
}

fn write_elbow(path: &Path, rows: &[(usize, f64)]) -> anyhow::Result<()> {
    let mut w = create(path)?;
    writeln!(w, "k,cost")?;
    for (k, c) in rows {
        writeln!(w, "{k},{c:e}")?;
    }
    w.flush()?;
    Ok(())
}

fn elbow(cli: &Cli, a: &ElbowArgs) -> anyhow::Result<()> {
    if a.k_min == 0 || a.k_min > a.k_max {
        return Err(Error::Config("need 1 <= k-min <= k-max".into()).into());
    }
    let cfg = load_config(cli)?;
    let sim = Simulator::new(&cfg)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    let cache = dictionary::AtomCache::open(&a.out.join("cache"), &sim)?;
    let dict = dictionary::generate(&a.grid.spec()?, &sim, Some(&cache))?;
    let ks: Vec<usize> = (a.k_min..=a.k_max).collect();
    let rows = dictionary::elbow_scan(&dict.atoms, &ks, a.seed, &ClusterOptions { restarts: a.restarts, ..Default::default() })?;
    for (k, c) in &rows {
        println!("{k:>3}  {c:.6e}");
    }
    write_elbow(&a.out.join("elbow.csv"), &rows)?;
    write_run_manifest(&a.out, &cfg, cli, &[("seed", a.seed.to_string())])?;
    Ok(())
}

fn read_datum(path: &Path) -> anyhow::Result<PhTrace> {
    if path.extension().is_some_and(|e| e == "bin") {
        Ok(PhTrace::read_binary(File::open(path).map_err(Error::from)?)?)
    } else {
        Ok(PhTrace::load(path)?)
    }
}

fn run_estimate(cli: &Cli, a: &EstimateArgs) -> anyhow::Result<()> {
    let expected = match &cli.config {
        Some(p) => Some(ForwardConfig::load(p)?),
        None => None,
    };
    let bundle = DictionaryBundle::load(&a.bundle, expected.as_ref())?;
    let datum = read_datum(&a.datum)?;
    let m = &bundle.config.measurement;
    if (datum.dt - m.sample_interval).abs() > 1e-12 || (datum.precision - m.precision).abs() > 1e-12 || (datum.ph0 - m.ph0).abs() > 1e-12 {
        return Err(Error::Parse(format!(
            "datum metadata (pH0 {}, p {}, dt {}) does not match the bundle ({}, {}, {})",
            datum.ph0, datum.precision, datum.dt, m.ph0, m.precision, m.sample_interval
        ))
        .into());
    }
    let mut opts = EstimateOptions::default();
    opts.ias.eta = a.eta;
    opts.ias.tol_theta = a.tol_theta;
    opts.ias.max_iter = a.max_iter;
    opts.ias.theta_scale = a.theta_scale;
    opts.ias.hybrid_switch_iter = a.hybrid_switch;
    opts.sigma = a.sigma;
    opts.whitened_phase2 = a.whitened;
    opts.interpolation = if a.raw { Interpolation::Raw } else { Interpolation::Normalized };

    let result = estimate(&bundle, &datum, &opts)?;
    fs::create_dir_all(&a.out).map_err(Error::from)?;
    result.write_text(create(&a.out.join("report.txt"))?)?;
    result.write_csv(create(&a.out.join("report.csv"))?)?;
    let sim = Simulator::new(&bundle.config)?;
    let (ph, rd) = replay(&sim, &result.xi)?;
    write_replay_csv(create(&a.out.join("replay.csv"))?, &datum, &ph, &rd)?;
    write_run_manifest(
        &a.out,
        &bundle.config,
        cli,
        &[
            ("bundle", format!("{:?}", a.bundle.display().to_string())),
            ("datum", format!("{:?}", a.datum.display().to_string())),
            ("eta", a.eta.to_string()),
            ("tol_theta", a.tol_theta.to_string()),
            ("max_iter", a.max_iter.to_string()),
            ("theta_scale", a.theta_scale.to_string()),
            ("sigma", a.sigma.to_string()),
        ],
    )?;
    result.write_text(std::io::stdout().lock())?;
    Ok(())
}
