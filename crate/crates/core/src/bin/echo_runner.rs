//! Test double for the external runner protocol. Prints a few log lines,
//! then one result line `{"value": ...}`.

use std::process::ExitCode;
use std::time::Duration;

use clap::Parser;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use xpdesign::runner::{mix_seed, stable_hash};

#[derive(Parser, Debug)]
#[command(name = "echo-runner")]
struct Args {
    #[arg(long, default_value = "")]
    algorithm: String,
    #[arg(long, default_value = "")]
    instance: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fixed value to report.
    #[arg(long, allow_negative_numbers = true)]
    value: Option<f64>,
    /// Comma-separated values; the run reports entry `seed % len`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    script: Option<Vec<f64>>,
    /// Draw the value from Normal(mean, sd) seeded by (algorithm, instance, seed).
    #[arg(long, allow_negative_numbers = true)]
    mean: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    sd: f64,
    /// Add `shift` to the drawn value when the algorithm name matches.
    #[arg(long)]
    shift_algorithm: Option<String>,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    shift: f64,
    #[arg(long)]
    diagnostics: Option<String>,
    #[arg(long, default_value_t = 2)]
    log_lines: u32,
    /// Sleep before answering, in seconds.
    #[arg(long, default_value_t = 0.0)]
    sleep: f64,
    /// Exit with this code after printing the result.
    #[arg(long, default_value_t = 0)]
    exit_code: u8,
    /// Print a line that is not a valid result instead of the value.
    #[arg(long)]
    malformed: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    for k in 0..args.log_lines {
        println!(
            "log {k}: algorithm={} instance={} seed={}",
            args.algorithm, args.instance, args.seed
        );
    }
    eprintln!("echo-runner on stderr");
    if args.sleep > 0.0 {
        std::thread::sleep(Duration::from_secs_f64(args.sleep));
    }
    if args.malformed {
        println!("{{\"value\": \"not a number\"}}");
        return ExitCode::from(args.exit_code);
    }
    let value = if let Some(v) = args.value {
        v
    } else if let Some(s) = args.script.as_ref().filter(|s| !s.is_empty()) {
        s[(args.seed % s.len() as u64) as usize]
    } else if let Some(m) = args.mean {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
            args.seed,
            &[stable_hash(&args.algorithm), stable_hash(&args.instance)],
        ));
        let shift = if args.shift_algorithm.as_deref() == Some(args.algorithm.as_str()) {
            args.shift
        } else {
            0.0
        };
        Normal::new(m, args.sd).expect("sd must be nonnegative").sample(&mut rng) + shift
    } else {
        eprintln!("one of --value, --script or --mean is required");
        return ExitCode::from(64);
    };
    let mut line = json!({ "value": value });
    if let Some(d) = args.diagnostics {
        line["diagnostics"] = json!(d);
    }
    println!("{line}");
    ExitCode::from(args.exit_code)
}
