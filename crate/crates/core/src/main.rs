use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use abpc::config::{list_presets, load_config, parse_kernel_flag, ExperimentConfig, Overrides};
use abpc::diagnostics::run_all;
use abpc::harness::{frequency_grid, frequency_sweep, metrics, run_closed_loop, Experiment};
use abpc::io::{write_outputs, write_sweep_csv};

/// `println!` that ignores a closed stdout.
macro_rules! say {
    ($($arg:tt)*) => {{
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "abpc", version, about = "Adaptive behavioral predictive control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop experiment and write log.csv and metrics.json.
    Run(RunArgs),
    /// Run the disturbance-frequency sweep and write sweep.csv.
    Sweep(RunArgs),
    /// List the built-in presets.
    ListPresets,
    /// Parse and validate a config without running it.
    Validate(RunArgs),
    /// Run the numerical oracles and print a JSON report.
    Audit {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file path or preset name.
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// unitary, linear, poly<δ>, poly<δ>x or rbf.
    #[arg(long)]
    kernel: Option<String>,
}

struct Loaded {
    cfg: ExperimentConfig,
    exp: Experiment,
    out_dir: PathBuf,
}

fn load(args: &RunArgs) -> Result<Loaded, String> {
    let cfg = load_config(&args.config).map_err(|e| e.to_string())?;
    let kernel = args.kernel.as_deref().map(|k| parse_kernel_flag(k, cfg.kernel.width)).transpose()?;
    let exp = cfg
        .resolve(&Overrides { seed: args.seed, kernel })
        .map_err(|e| e.to_string())?;
    let out_dir = args
        .out_dir
        .clone()
        .or_else(|| cfg.output_dir().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out").join(&exp.name).join(exp.kernel.label()));
    Ok(Loaded { cfg, exp, out_dir })
}

fn run(args: &RunArgs) -> ExitCode {
    let l = match load(args) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let log = match run_closed_loop(&l.exp) {
        Ok(log) => log,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_CONFIG });
        }
    };
    let (start, end) = l.exp.control_window();
    let last = log.records.last().map_or(0, |r| r.k);
    let window = (start.min(last.max(1)), end.min(last.max(1)));
    let m = match metrics(&log, window) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_NUMERICAL);
        }
    };
    match write_outputs(&log, &m, &l.out_dir) {
        Ok(art) => {
            say!(
                "{} [{}]: rmse={:.6e} iae={:.6e} tv_u={:.6e} peak_u={:.6e} window=[{}, {}]",
                l.exp.name,
                l.exp.kernel.label(),
                m.rmse,
                m.iae,
                m.tv_u,
                m.peak_u,
                m.window.0,
                m.window.1
            );
            say!("wrote {} and {}", art.log.display(), art.metrics.display());
        }
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    }
    match &log.failure {
        Some(f) => {
            eprintln!("run stopped at step {}: {}", f.step, f.message);
            ExitCode::from(EXIT_NUMERICAL)
        }
        None => ExitCode::SUCCESS,
    }
}

fn sweep(args: &RunArgs) -> ExitCode {
    let l = match load(args) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let (grid, amplitude) = match (&l.exp.sweep, &l.cfg.plant) {
        (Some(s), _) => (s.grid.clone(), s.amplitude),
        (None, Some(p)) => (frequency_grid(0.05), p.disturbance_amplitude),
        (None, None) => unreachable!("resolved configs have a plant"),
    };
    let points = frequency_sweep(&l.exp, &grid, amplitude);
    let path = l.out_dir.join("sweep.csv");
    if let Err(e) = write_sweep_csv(&points, &path) {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    let unbounded = points.iter().filter(|p| !p.bounded).count();
    say!(
        "{} [{}]: {} frequencies, {} unbounded; wrote {}",
        l.exp.name,
        l.exp.kernel.label(),
        points.len(),
        unbounded,
        path.display()
    );
    ExitCode::SUCCESS
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Sweep(args) => sweep(&args),
        Command::ListPresets => {
            for (name, desc) in list_presets() {
                say!("{name:<10} {desc}");
            }
            ExitCode::SUCCESS
        }
        Command::Validate(args) => match load(&args) {
            Ok(l) => {
                say!(
                    "{}: ok (p={}, m={}, lag={}, N={}, kernel={}, steps={}, warmup={})",
                    l.exp.name,
                    l.exp.outputs(),
                    l.exp.inputs(),
                    l.exp.lag,
                    l.exp.horizon,
                    l.exp.kernel.label(),
                    l.exp.steps,
                    l.exp.warmup
                );
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Audit { seed, out_dir } => {
            let reports = run_all(seed);
            let json = serde_json::to_string_pretty(&reports).expect("serializable");
            say!("{json}");
            if let Some(dir) = out_dir {
                if let Err(e) = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("audit.json"), &json)) {
                    eprintln!("error: {e}");
                    return ExitCode::FAILURE;
                }
            }
            if reports.iter().all(|r| r.pass) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_NUMERICAL)
            }
        }
    }
}
