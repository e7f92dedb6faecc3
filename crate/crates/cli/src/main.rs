use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use supg_dlr::config::{parse_levels, ConfigError, ExperimentConfig};
use supg_dlr::experiment::{self, DriverError, RunReport};
use supg_dlr::report;
use supg_dlr_core::oracle::InitialCondition;

#[derive(Parser)]
#[command(
    name = "supg-dlr",
    version,
    about = "SUPG dynamical low-rank solver for random advection-diffusion-reaction problems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Single configuration (finest level of --levels).
    Run(Common),
    /// Convergence study over --levels at --rank.
    Converge(Common),
    /// Rank study over --ranks and --levels.
    Ranks(Common),
    /// Assumption and validation report only.
    Diagnose(Common),
}

#[derive(Clone, Copy, ValueEnum)]
enum Ic {
    Svd,
    Interp,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    ranks: Option<Vec<usize>>,
    /// `i1..i2` or a list, with h = 2^-i.
    #[arg(long)]
    levels: Option<String>,
    #[arg(long)]
    tfinal: Option<f64>,
    #[arg(long)]
    dt_coeff: Option<f64>,
    #[arg(long)]
    dt_exp: Option<f64>,
    #[arg(long)]
    delta_safety: Option<f64>,
    #[arg(long)]
    nc: Option<usize>,
    #[arg(long, value_enum)]
    ic: Option<Ic>,
    #[arg(long)]
    strict_stability: bool,
    /// CSV destination; the CSV goes to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Evaluate the truncated exact solution instead of running the solver.
    #[arg(long)]
    inject_exact: bool,
    /// Also write `<out>.gp`.
    #[arg(long)]
    gnuplot: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, DriverError> {
        let mut c = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path)
                .map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
            c.apply_file_contents(&text)?;
        }
        if let Some(v) = self.degree {
            c.degree = v;
        }
        if let Some(v) = self.rank {
            c.rank = v;
        }
        if let Some(v) = &self.ranks {
            c.ranks = v.clone();
        }
        if let Some(v) = &self.levels {
            c.levels = parse_levels(v)?;
        }
        if let Some(v) = self.tfinal {
            c.t_final = v;
        }
        if let Some(v) = self.dt_coeff {
            c.dt_coeff = v;
        }
        if let Some(v) = self.dt_exp {
            c.dt_exponent = Some(v);
        }
        if let Some(v) = self.delta_safety {
            c.delta_safety = v;
        }
        if let Some(v) = self.nc {
            c.n_collocation = v;
        }
        if let Some(v) = self.ic {
            c.ic_mode = match v {
                Ic::Svd => InitialCondition::Projection,
                Ic::Interp => InitialCondition::Interpolation,
            };
        }
        c.strict_stability |= self.strict_stability;
        c.inject_exact |= self.inject_exact;
        c.gnuplot |= self.gnuplot;
        if let Some(v) = &self.out {
            c.output = Some(v.clone());
        }
        c.validate()?;
        Ok(c)
    }
}

fn emit(config: &ExperimentConfig, report: &RunReport) -> Result<(), DriverError> {
    let io_err = |e: std::io::Error| DriverError::Driver(e.to_string());
    match &config.output {
        Some(path) => {
            let file = fs::File::create(path).map_err(io_err)?;
            report::write_csv(&report.records, file)
                .map_err(|e| DriverError::Driver(e.to_string()))?;
            if config.gnuplot {
                let gp = Path::new(path).with_extension("gp");
                fs::write(
                    &gp,
                    report::gnuplot_script(&path.display().to_string(), report),
                )
                .map_err(io_err)?;
            }
            print!("{}", report::summary(report));
        }
        None => {
            print!("{}", report::to_csv_string(&report.records));
            eprint!("{}", report::summary(report));
        }
    }
    Ok(())
}

fn strict_check(config: &ExperimentConfig, report: &RunReport) -> Result<(), DriverError> {
    if let Some(f) = report.failures.first() {
        return Err(f.error.clone());
    }
    if config.strict_stability {
        if let Some(d) = report
            .diagnostics
            .iter()
            .find(|d| d.stability_violated_at.is_some())
        {
            return Err(DriverError::Driver(format!(
                "stability inequality violated on level {}",
                d.level
            )));
        }
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), DriverError> {
    match cli.command {
        Command::Run(args) => {
            let mut config = args.resolve()?;
            let finest = *config.levels.iter().max().expect("validated");
            config.levels = vec![finest];
            let rank = config.rank;
            let report = experiment::sweep(&config, &[rank])?;
            emit(&config, &report)?;
            strict_check(&config, &report)
        }
        Command::Converge(args) => {
            let config = args.resolve()?;
            let report = experiment::convergence_study(&config)?;
            emit(&config, &report)?;
            strict_check(&config, &report)
        }
        Command::Ranks(args) => {
            let config = args.resolve()?;
            let report = experiment::rank_study(&config)?;
            emit(&config, &report)?;
            strict_check(&config, &report)
        }
        Command::Diagnose(args) => {
            let config = args.resolve()?;
            for d in experiment::diagnose(&config)? {
                let s = &d.stabilization;
                println!(
                    "level {}: h = {:.6e}, dt = {:.6e} ({} steps), C_I = {:.6}, C_1 = {:.6}",
                    d.level, d.h, d.dt, d.n_steps, d.inverse_constant, d.continuity_constant
                );
                println!(
                    "  delta = {:.6e} = {} * min(1/(2c_sup) = {:.6e}, h^2/(2 eps C_I^2) = {:.6e}, h/(|b| C_I) = {:.6e}, dt/4 = {:.6e})",
                    s.delta, s.safety, s.bound_reaction, s.bound_diffusion, s.bound_advection, s.bound_time
                );
                println!(
                    "  c in [{:.6}, {:.6}], |b|h/(2 eps) = {:.3e}, div b = {}, closed-form check {:.3e}",
                    d.coefficients.reaction_min,
                    d.coefficients.reaction_max,
                    d.coefficients.advection_ratio,
                    d.coefficients.divergence,
                    d.fd_worst
                );
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
