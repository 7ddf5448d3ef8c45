//! Command line front end: convergence / admissibility / spectrum runs,
//! the random matrix oracle, and the form-bound certifier.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kreinlab_core::config::ExperimentConfig;
use kreinlab_core::error::KreinError;
use kreinlab_core::forms::ExtensionSpec;
use kreinlab_core::report::ConvergenceReport;
use kreinlab_core::{lab, oracle};

#[derive(Parser)]
#[command(name = "kreinlab", version, about = "Extension laboratory for singular 1D Schrodinger operators")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct RunArgs {
    /// configuration file (INI-style sections or JSON)
    #[arg(long)]
    config: Option<PathBuf>,
    /// output directory for the CSV and its JSON sidecar
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// trailing overrides, e.g. `experiment.alpha=0.4 mesh.k_per_side=500`
    #[arg(value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// strong and norm resolvent convergence against the form-sum reference
    Convergence(RunArgs),
    /// admissibility curves of the deficiency directions
    Admissibility(RunArgs),
    /// lowest eigenvalue tracks of the cut-off operators
    Spectrum {
        #[command(flatten)]
        args: RunArgs,
        /// number of eigenvalues per operator (at most 5)
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// random finite-dimensional cross-checks of the correspondence
    Oracle {
        /// number of random instances
        #[arg(long, default_value_t = 25)]
        seeds: u64,
        /// ambient dimension of each instance
        #[arg(long, default_value_t = 8)]
        dim: usize,
        /// number of deficiency directions
        #[arg(long, default_value_t = 2)]
        codim: usize,
        /// write the JSON-lines reports here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// certify the quadratic form bound (a, b) for the configured potential
    FormBound(RunArgs),
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig, KreinError> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            ExperimentConfig::from_str_any(&text)?
        }
        None => ExperimentConfig::default(),
    };
    for pair in &args.overrides {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            KreinError::Validation(format!("override `{pair}` is not of the form key=value"))
        })?;
        config.set(key.trim(), value.trim())?;
    }
    config.validate()?;
    Ok(config)
}

fn write_report(report: &ConvergenceReport, dir: &Path, stem: &str) -> Result<(), KreinError> {
    std::fs::create_dir_all(dir)?;
    let csv = dir.join(format!("{stem}.csv"));
    let sidecar = dir.join(format!("{stem}.json"));
    report.write_csv(&csv)?;
    report.write_sidecar(&sidecar)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for (key, value) in &report.notes {
        println!("{key} = {value}");
    }
    println!("wrote {} rows to {}", report.rows.len(), csv.display());
    Ok(())
}

fn run(cmd: &Cmd) -> Result<(), KreinError> {
    match cmd {
        Cmd::Convergence(args) => {
            let config = load_config(args)?;
            let report = lab::run_convergence(&config)?;
            write_report(&report, &args.out, "convergence")
        }
        Cmd::Admissibility(args) => {
            let config = load_config(args)?;
            let report = lab::run_admissibility(&config)?;
            write_report(&report, &args.out, "admissibility")
        }
        Cmd::Spectrum { args, k } => {
            let config = load_config(args)?;
            let report = lab::run_spectrum_tracking(&config, *k)?;
            write_report(&report, &args.out, "spectrum")
        }
        Cmd::Oracle {
            seeds,
            dim,
            codim,
            out,
        } => run_oracle(*seeds, *dim, *codim, out.as_deref()),
        Cmd::FormBound(args) => {
            let config = load_config(args)?;
            let setup = lab::resolve(&config)?;
            for w in &setup.warnings {
                eprintln!("warning: {w}");
            }
            let a = if setup.alpha_max.is_finite() {
                1.0 / setup.alpha_max
            } else {
                0.0
            };
            println!("a = {a:.6e}");
            println!("b = {:.6e}", setup.b);
            println!("alpha_max = {:.6e}", setup.alpha_max);
            Ok(())
        }
    }
}

fn run_oracle(seeds: u64, dim: usize, codim: usize, out: Option<&Path>) -> Result<(), KreinError> {
    use rand::SeedableRng;
    let mut lines = String::new();
    let mut failures = 0usize;
    for seed in 0..seeds {
        let instance = oracle::generate_instance(dim, codim, seed)?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0xc11);
        let specs = vec![
            ExtensionSpec::Friedrichs,
            ExtensionSpec::Krein { eta: instance.eta },
            instance.random_general_spec(&mut rng),
        ];
        for spec in &specs {
            let report = oracle::verify_correspondence(&instance, spec)?;
            failures += report.failures.len();
            if !report.failures.is_empty() {
                lines.push_str(&report.to_json_lines());
                lines.push('\n');
            }
        }
    }
    match out {
        Some(path) => {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)?;
                }
            }
            std::fs::write(path, &lines)?;
        }
        None => print!("{lines}"),
    }
    println!("checked {seeds} instances ({dim} dims, {codim} deficiency directions)");
    if failures > 0 {
        return Err(KreinError::Numerical(format!(
            "{failures} correspondence checks failed"
        )));
    }
    println!("all correspondence checks passed");
    Ok(())
}

fn exit_code_for(err: &KreinError) -> u8 {
    match err {
        KreinError::ShiftTooHigh { .. }
        | KreinError::IndefiniteInterior
        | KreinError::SingularDecomposition
        | KreinError::IndefinitePencil { .. }
        | KreinError::EigenConvergence { .. }
        | KreinError::Numerical(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
