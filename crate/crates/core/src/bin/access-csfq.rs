use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use access_csfq::experiment::{default_windows, parse_windows, run_experiment, ExperimentOptions};
use access_csfq::scenario::{parse_scenario, ScenarioSpec, Scheme};
use access_csfq::SimTime;

/// Shared-access traffic control simulator: token-bucket metered CSFQ and
/// DRR+PQ on a common feeder link.
#[derive(Parser, Debug)]
#[command(version)]
struct Args {
    /// Scenario file; the built-in 16-subscriber scenario when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// drr-tbm, csfq1-tbm or csfq2-tbm (overrides the scenario).
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Number of repetitions (overrides the scenario).
    #[arg(long)]
    reps: Option<u32>,
    /// Base seed; repetition r uses seed + r (overrides the scenario).
    #[arg(long)]
    seed: Option<u64>,
    /// Throughput bin width in seconds.
    #[arg(long, default_value_t = 1.0)]
    bin_width: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Averaging windows in seconds, `a:b,c:d`.
    #[arg(long)]
    windows: Option<String>,
    /// Print the effective scenario and exit.
    #[arg(long)]
    print_scenario: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();

    let mut spec = match &args.scenario {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return ExitCode::from(1);
                }
            };
            match parse_scenario(&text) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {}:\n{e}", path.display());
                    return ExitCode::from(2);
                }
            }
        }
        None => ScenarioSpec::reference(Scheme::Csfq1Tbm),
    };
    if let Some(s) = args.scheme {
        spec.scheme = s;
    }
    if let Some(r) = args.reps {
        spec.repetitions = r;
    }
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    if let Err(e) = spec.validate() {
        eprintln!("error: invalid scenario:\n{e}");
        return ExitCode::from(2);
    }
    if args.print_scenario {
        print!("{}", spec.to_text());
        return ExitCode::SUCCESS;
    }

    let bin_width = SimTime::from_secs_f64(args.bin_width);
    if !(args.bin_width > 0.0) || !bin_width.as_nanos().is_multiple_of(spec.resolution.as_nanos()) {
        eprintln!("error: --bin-width must be a positive multiple of the resolution ({})", spec.resolution);
        return ExitCode::from(2);
    }
    let windows = match &args.windows {
        Some(w) => match parse_windows(w) {
            Ok(w) => w,
            Err(e) => {
                eprintln!("error: --windows: {e}");
                return ExitCode::from(2);
            }
        },
        None => default_windows(spec.horizon),
    };

    let opts = ExperimentOptions {
        out_dir: args.out,
        bin_width,
        windows,
    };
    match run_experiment(&spec, &opts) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            for f in &out.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
