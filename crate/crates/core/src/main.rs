use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use iga_estimates::harness::{list_cases, parse_config, resolve_settings, run_case, Overrides};

#[derive(Parser)]
#[command(name = "iga-est", about = "Adaptive THB-spline Poisson solver with functional error estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the built-in cases.
    List,
    /// Run a case.
    Run(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    case: String,
    /// Degree of the discrete solution.
    #[arg(long)]
    p: Option<usize>,
    /// Degree of the flux space.
    #[arg(long)]
    q: Option<usize>,
    /// Degree of the minorant space; enables the minorant.
    #[arg(long)]
    r: Option<usize>,
    /// Flux mesh coarsening factor (power of two).
    #[arg(long = "M")]
    flux_ratio: Option<usize>,
    /// Minorant mesh coarsening factor (power of two).
    #[arg(long = "L")]
    minorant_ratio: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// uniform, garu, puca or bulk.
    #[arg(long)]
    marking: Option<String>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long = "maj-iters")]
    maj_iters: Option<usize>,
    /// direct or cg.
    #[arg(long)]
    solver: Option<String>,
    /// majorant, residual or exact-error.
    #[arg(long)]
    indicator: Option<String>,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    k2: Option<f64>,
    /// File of `key = value` lines; command line options take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for report.csv, mesh dumps and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        let mut o = Overrides::new();
        let mut put = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                o.insert(k.to_string(), v);
            }
        };
        put("p", self.p.map(|v| v.to_string()));
        put("q", self.q.map(|v| v.to_string()));
        put("r", self.r.map(|v| v.to_string()));
        put("M", self.flux_ratio.map(|v| v.to_string()));
        put("L", self.minorant_ratio.map(|v| v.to_string()));
        put("steps", self.steps.map(|v| v.to_string()));
        put("warmup", self.warmup.map(|v| v.to_string()));
        put("marking", self.marking.clone());
        put("theta", self.theta.map(|v| v.to_string()));
        put("maj-iters", self.maj_iters.map(|v| v.to_string()));
        put("solver", self.solver.clone());
        put("indicator", self.indicator.clone());
        put("k1", self.k1.map(|v| v.to_string()));
        put("k2", self.k2.map(|v| v.to_string()));
        put("out", self.out.as_ref().map(|p| p.display().to_string()));
        o
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4e}"))
}

fn run(args: &RunArgs) -> iga_estimates::Result<bool> {
    let file = match &args.config {
        Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
        None => Overrides::new(),
    };
    let settings = resolve_settings(&args.case, &[&file, &args.overrides()])?;
    let result = run_case(&settings)?;
    println!(
        "{:>4} {:>8} {:>11} {:>11} {:>8} {:>11} {:>8} {:>6}",
        "ref", "dof_u", "err", "maj", "ieff", "eta", "eoc", "marked"
    );
    for r in &result.rows {
        println!(
            "{:>4} {:>8} {:>11} {:>11.4e} {:>8} {:>11.4e} {:>8} {:>6}",
            r.refinement,
            r.dof_u,
            fmt(r.error),
            r.majorant,
            r.ieff_majorant.map_or("-".into(), |x| format!("{x:.4}")),
            r.eta,
            r.eoc.map_or("-".into(), |x| format!("{x:.3}")),
            r.marked
        );
    }
    if result.converged {
        println!("indicator vanished; stopped early");
    }
    match &result.failure {
        Some(e) => {
            eprintln!("error: {e}");
            Ok(false)
        }
        None => Ok(true),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::List => {
            for (name, desc) in list_cases() {
                println!("{name:<5} {desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Run(args) => match run(&args) {
            Ok(true) => ExitCode::SUCCESS,
            Ok(false) => ExitCode::from(2),
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::FAILURE
            }
        },
    }
}
