use std::collections::BTreeSet;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use fairaudit::audit::{run_audit, validate};
use fairaudit::config::AuditConfig;
use fairaudit::counterfactual::general::EstimationMode;
use fairaudit::error::{AuditError, Result};
use fairaudit::estimators::ThresholdPolicy;
use fairaudit::ingest::load_csv;
use fairaudit::report::{render_report, RenderOptions};
use fairaudit::resampling::with_workers;
use fairaudit::synth::{generate_synthetic, write_csv, SynthSpec};

/// Intersectional fairness audit for binary classifiers.
///
/// Exit codes: 0 success, 1 i/o failure, 2 configuration error, 3 data
/// validation error, 4 numerical failure.
#[derive(Parser)]
#[command(name = "fairaudit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sr,
    Dr,
}

#[derive(Subcommand)]
enum Command {
    /// Run the selected components and write the report.
    Audit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of 1,2,3.
        #[arg(long, value_delimiter = ',')]
        components: Option<Vec<u8>>,
        #[arg(long)]
        permutations: Option<usize>,
        #[arg(long)]
        bootstrap: Option<usize>,
        /// A number in (0, 1) or "youden".
        #[arg(long)]
        threshold: Option<String>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
        #[arg(long)]
        min_group: Option<usize>,
        #[arg(long)]
        emit_svg: bool,
        /// Worker threads for resampling; results do not depend on it.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Write a synthetic data set as CSV.
    Synth {
        /// JSON generator settings; flags below override it.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated logit shifts, one per group.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        bias: Option<Vec<f64>>,
        #[arg(long)]
        treatment_rate: Option<f64>,
        #[arg(long)]
        score_noise: Option<f64>,
    },
    /// Check the config against the data without running anything.
    Validate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
}

fn parse_threshold(s: &str) -> Result<ThresholdPolicy> {
    if s.eq_ignore_ascii_case("youden") {
        return Ok(ThresholdPolicy::Youden);
    }
    let value: f64 = s
        .parse()
        .map_err(|_| AuditError::config(format!("--threshold expects a number or 'youden', got '{s}'")))?;
    let policy = ThresholdPolicy::Fixed { value };
    policy.validate()?;
    Ok(policy)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Audit {
            config,
            data,
            out,
            seed,
            components,
            permutations,
            bootstrap,
            threshold,
            mode,
            min_group,
            emit_svg,
            workers,
        } => {
            let mut cfg = AuditConfig::load(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(c) = components {
                cfg.components = c.into_iter().collect::<BTreeSet<_>>();
            }
            if let Some(p) = permutations {
                cfg.n_permutations = p;
            }
            if let Some(b) = bootstrap {
                cfg.n_bootstrap = b;
            }
            if let Some(t) = threshold {
                cfg.threshold = parse_threshold(&t)?;
            }
            if let Some(m) = mode {
                cfg.mode = match m {
                    Mode::Sr => EstimationMode::Sr,
                    Mode::Dr => EstimationMode::Dr,
                };
            }
            if let Some(m) = min_group {
                cfg.min_group_n = m;
            }
            if workers == Some(0) {
                return Err(AuditError::config("--workers must be at least 1"));
            }
            cfg.validate()?;
            let dataset = load_csv(&data, &cfg.columns)?;
            let report = with_workers(workers, || run_audit(&cfg, &dataset))??;
            let written = render_report(&report, &out, RenderOptions { svg: emit_svg })?;
            eprintln!("wrote {} files under {}", written.len(), out.display());
            Ok(())
        }
        Command::Synth {
            spec,
            out,
            n,
            seed,
            bias,
            treatment_rate,
            score_noise,
        } => {
            let mut s = match spec {
                Some(path) => {
                    let text = std::fs::read_to_string(&path).map_err(|e| AuditError::io(&path, e))?;
                    serde_json::from_str(&text)
                        .map_err(|e| AuditError::config(format!("invalid synth spec: {e}")))?
                }
                None => SynthSpec::default(),
            };
            if let Some(n) = n {
                s.n = n;
            }
            if let Some(seed) = seed {
                s.seed = seed;
            }
            if let Some(b) = bias {
                s.group_bias = b;
            }
            if treatment_rate.is_some() {
                s.treatment_rate = treatment_rate;
            }
            if score_noise.is_some() {
                s.score_noise = score_noise;
            }
            let dataset = generate_synthetic(&s)?;
            let file = std::fs::File::create(&out).map_err(|e| AuditError::io(&out, e))?;
            write_csv(&dataset, std::io::BufWriter::new(file))
        }
        Command::Validate { config, data } => {
            let cfg = AuditConfig::load(&config)?;
            cfg.validate()?;
            let dataset = load_csv(&data, &cfg.columns)?;
            let summary = validate(&cfg, &dataset)?;
            let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
            println!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
