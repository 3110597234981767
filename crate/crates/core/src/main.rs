use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};

use oam_dephasing::analytic::{
    coherent_radial_avg_bessel, eta_total, gamma_radial_avg, gamma_single, tau_d_avg,
};
use oam_dephasing::ensemble::{decay_curve_with, McSettings};
use oam_dephasing::fitting::{fit, Dataset, FitModel, FitProblem, FitResult, InputKind, LmSettings, Role};
use oam_dephasing::io::{read_json, write_json, CurveFile, ScanFile, ScenarioFile, SimulateConfig};
use oam_dephasing::model::{DecayModel, Lifetime, Species, ThermalGas};
use oam_dephasing::scenarios::{compare_to_experiment, run_scenario, ScenarioConfig, ScenarioKind};

const EXIT_RUNTIME: u8 = 1;
const EXIT_NOT_CONVERGED: u8 = 3;

/// Azimuthal dephasing of OAM spin waves in warm atomic vapor.
#[derive(Parser)]
#[command(name = "oamdeph", version)]
struct Cli {
    /// Worker threads for Monte Carlo runs; results do not depend on it.
    #[arg(long, env = "OAMDEPH_WORKERS", global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form lifetime and efficiencies.
    Analytic(AnalyticArgs),
    /// Monte Carlo decay curve from a JSON configuration.
    Simulate(SimulateArgs),
    /// Least-squares fit of curve or scan files.
    Fit(FitArgs),
    /// Rerun an experiment (fig2, fig3, fig4) or a custom sweep.
    Scenario(ScenarioArgs),
}

#[derive(Args)]
#[command(allow_negative_numbers = true)]
struct AnalyticArgs {
    #[arg(long)]
    waist_mm: f64,
    /// Spin-wave topological charge.
    #[arg(long)]
    l: i32,
    #[arg(long, default_value_t = 55.0)]
    temperature_c: f64,
    #[arg(long, default_value = "rb85")]
    species: Species,
    /// Storage times at which to evaluate the efficiencies.
    #[arg(long, num_args = 1.., value_delimiter = ',')]
    t_us: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    c1: f64,
    #[arg(long, default_value_t = 1.0)]
    c2: f64,
    /// Longitudinal lifetime of the composite law (default: none).
    #[arg(long)]
    tau0_us: Option<f64>,
    /// Residual exponential lifetime of the composite law (default: none).
    #[arg(long)]
    tau1_us: Option<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FitArgs {
    /// Curve files (`t_us,efficiency[,stderr]`) or, for eta-oam, scan files (`m,efficiency[,stderr]`).
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    model: FitModel,
    /// `name=value` in every dataset, or `k:name=value` in dataset k. Lifetimes take
    /// a `_us` suffix and accept `inf`.
    #[arg(long)]
    fix: Vec<String>,
    /// Parameter common to all datasets.
    #[arg(long)]
    share: Vec<String>,
    /// Starting value, same syntax as `--fix`.
    #[arg(long)]
    init: Vec<String>,
    /// Cap on Levenberg-Marquardt trial steps.
    #[arg(long, default_value_t = 200)]
    max_iterations: usize,
    /// Result document (default: `<first data file>.fit.json`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ScenarioArgs {
    /// fig2, fig3, fig4 or custom-sweep.
    #[arg(required_unless_present = "config", conflicts_with = "config")]
    name: Option<ScenarioKind>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `scenario-<name>`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; replaces the one in a configuration file.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_atoms: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        pool = pool.num_threads(n.max(1));
    }
    let outcome = pool
        .build()
        .map_err(anyhow::Error::from)
        .and_then(|pool| pool.install(|| dispatch(cli.command)));
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}

fn dispatch(command: Command) -> anyhow::Result<ExitCode> {
    match command {
        Command::Analytic(a) => analytic(&a),
        Command::Simulate(a) => simulate(&a),
        Command::Fit(a) => fit_files(&a),
        Command::Scenario(a) => scenario(&a),
    }
}

fn lifetime_us(v: Option<f64>) -> anyhow::Result<Lifetime<f64>> {
    match v {
        None => Ok(Lifetime::Infinite),
        Some(t) => Ok(Lifetime::new(t * 1e-6)?),
    }
}

fn analytic(a: &AnalyticArgs) -> anyhow::Result<ExitCode> {
    let gas = ThermalGas::from_celsius(a.species, a.temperature_c)?;
    let waist = a.waist_mm * 1e-3;
    let nu = gas.thermal_speed();
    let tau = tau_d_avg(waist, a.l, nu)?;
    let model = DecayModel::new(a.c1, a.c2, tau, lifetime_us(a.tau0_us)?, lifetime_us(a.tau1_us)?)?;
    let mut rows = Vec::new();
    for &t_us in &a.t_us {
        let t = t_us * 1e-6;
        let radial = gamma_radial_avg(t, waist, a.l, nu)?;
        rows.push(format!(
            "{t_us:>10.4} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            gamma_single(t, tau),
            radial,
            coherent_radial_avg_bessel(t, waist, a.l, nu),
            eta_total(t, &model)
        ));
    }
    println!("species        {}", a.species);
    println!("temperature_K  {}", gas.temperature());
    println!("nu_s_m_per_s   {nu:.6}");
    match tau {
        Lifetime::Finite(t) => println!("tau_d_us       {:.6}", t * 1e6),
        Lifetime::Infinite => println!("tau_d_us       infinite"),
    }
    if !rows.is_empty() {
        println!("{:>10} {:>12} {:>12} {:>12} {:>12}", "t_us", "gamma", "radial_avg", "coherent", "eta");
        for r in rows {
            println!("{r}");
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(a: &SimulateArgs) -> anyhow::Result<ExitCode> {
    let mut cfg: SimulateConfig = read_json(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let started = Instant::now();
    let settings = McSettings {
        n_atoms: cfg.n_atoms,
        motion: cfg.motion,
        estimator: cfg.estimator,
        weighting: cfg.weighting(),
        cell_length: cfg.cell_length_mm * 1e-3,
        seed: cfg.seed,
    };
    let curve = decay_curve_with(&cfg.spin_wave()?, &cfg.gas()?, &cfg.times(), &settings)?;
    CurveFile::from_curve(&curve)
        .save(&a.out)
        .with_context(|| format!("writing {}", a.out.display()))?;
    let motion = serde_json::to_value(cfg.motion)?;
    let estimator = serde_json::to_value(cfg.estimator)?;
    println!(
        "n_atoms={} motion={} estimator={} points={} workers={} elapsed_s={:.3}",
        cfg.n_atoms,
        motion.as_str().unwrap_or("?"),
        estimator.as_str().unwrap_or("?"),
        curve.len(),
        rayon::current_num_threads(),
        started.elapsed().as_secs_f64()
    );
    Ok(ExitCode::SUCCESS)
}

/// Splits `[k:]name[_us]=value` into dataset index, model name and SI value.
fn parse_assignment(raw: &str) -> anyhow::Result<(Option<usize>, String, f64)> {
    let (lhs, value) = raw.split_once('=').ok_or_else(|| anyhow!("expected name=value, got `{raw}`"))?;
    let (index, name) = match lhs.split_once(':') {
        Some((k, n)) => (Some(k.parse().with_context(|| format!("bad dataset index in `{raw}`"))?), n),
        None => (None, lhs),
    };
    let (name, scale) = match name.strip_suffix("_us") {
        Some(n) => (n, 1e-6),
        None => (name, 1.0),
    };
    let v: f64 = match value.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinite" | "infinity" => f64::INFINITY,
        s => s.parse().with_context(|| format!("bad number in `{raw}`"))?,
    };
    Ok((index, name.to_string(), v * scale))
}

fn fit_files(a: &FitArgs) -> anyhow::Result<ExitCode> {
    let settings = LmSettings { max_iterations: a.max_iterations, ..LmSettings::default() };
    let mut problem = FitProblem::new(a.model).settings(settings);
    for path in &a.data {
        let label = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into());
        let context = || format!("reading {}", path.display());
        problem = match a.model.input_kind() {
            InputKind::Time => problem.curve(label, &CurveFile::load(path).with_context(context)?.to_curve()?),
            InputKind::Charge => {
                let s = ScanFile::load(path).with_context(context)?;
                problem.dataset(Dataset::scan(label, &s.m, s.efficiency, s.stderr)?)
            }
        };
    }
    for raw in &a.fix {
        problem = match parse_assignment(raw)? {
            (Some(k), name, v) => problem.fix_in(k, &name, v),
            (None, name, v) => problem.fix(&name, v),
        };
    }
    for raw in &a.init {
        problem = match parse_assignment(raw)? {
            (Some(k), name, v) => problem.init_in(k, &name, v),
            (None, name, v) => problem.init(&name, v),
        };
    }
    for name in &a.share {
        problem = problem.share(name.strip_suffix("_us").unwrap_or(name));
    }
    let result = fit(&problem)?;
    let out = a.out.clone().unwrap_or_else(|| a.data[0].with_extension("fit.json"));
    write_json(&out, &result).with_context(|| format!("writing {}", out.display()))?;
    print_fit(&result);
    Ok(if result.converged { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NOT_CONVERGED) })
}

fn print_fit(r: &FitResult) {
    println!(
        "model {}  converged={}  iterations={}  residual_norm={:e}",
        r.model, r.converged, r.n_iterations, r.residual_norm
    );
    for d in &r.datasets {
        println!("[{}] {} points", d.label, d.n_points);
        for p in &d.params {
            let lifetime = p.name.starts_with("tau");
            let (scale, unit) = if lifetime { (1e6, "_us") } else { (1.0, "") };
            let se = p.stderr.map_or("-".to_string(), |s| format!("{:.6}", s * scale));
            let role = match p.role {
                Role::Free => "",
                Role::Shared => " (shared)",
                Role::Fixed => " (fixed)",
            };
            println!("  {:<10} {:>14.6} +/- {se}{role}", format!("{}{unit}", p.name), p.value * scale);
        }
    }
    for d in &r.diagnostics {
        println!("note: {d}");
    }
}

fn scenario(a: &ScenarioArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = match (&a.config, a.name) {
        (Some(path), _) => read_json::<ScenarioFile>(path)?.into_config()?,
        (None, Some(kind)) => ScenarioConfig::defaults(kind, 0),
        (None, None) => bail!("give a scenario name or --config"),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(n) = a.n_atoms {
        cfg.n_atoms = n;
    }
    if let Some(out) = &a.out {
        cfg.output_dir = Some(out.clone());
    }
    if cfg.output_dir.is_none() {
        cfg.output_dir = Some(Path::new(&format!("scenario-{}", cfg.scenario.name())).to_path_buf());
    }
    let report = run_scenario(&cfg)?;
    let dir = cfg.output_dir.as_deref().unwrap_or(Path::new("."));
    for note in &report.notes {
        println!("note: {note}");
    }
    print!("{}", compare_to_experiment(&report).render());
    println!("wrote {}", dir.display());
    Ok(if report.all_converged() { ExitCode::SUCCESS } else { ExitCode::from(EXIT_NOT_CONVERGED) })
}
