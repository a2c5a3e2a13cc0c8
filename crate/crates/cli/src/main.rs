use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;

use siqrng::bound::ConstantMode;
use siqrng::config::{parse_source, ProtocolConfig, DEFAULT_DELTA};
use siqrng::extractor::{read_bits, BitWriter};
use siqrng::harness::{self, BiasQuantity, BiasSimConfig, NineBinPmf};
use siqrng::nist;
use siqrng::protocol::Engine;

const EXIT_CONFIG: u8 = 1;
const EXIT_ABORT: u8 = 2;
const EXIT_SELFTEST: u8 = 3;

#[derive(Parser)]
#[command(name = "siqrng", version, about = "Source-independent homodyne QRNG simulator and estimator benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when omitted, where that makes sense).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a protocol session and write the secure bits.
    Run {
        #[command(flatten)]
        common: Common,
        /// Per-block CSV log.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write bits as ASCII '0'/'1' instead of packed bytes.
        #[arg(long)]
        ascii: bool,
        #[arg(long)]
        blocks: Option<usize>,
    },
    /// Estimator bias sweep over repeated Gaussian samples.
    BiasSim {
        #[command(flatten)]
        common: Common,
        /// Comma-separated: freq, bayes_up, bayes_pp, evb, h_min_freq.
        #[arg(long, default_value = "freq,bayes_up,bayes_pp,evb,h_min_freq")]
        estimators: String,
        /// Comma-separated sample sizes.
        #[arg(long, default_value = "16000")]
        n: String,
        #[arg(long, default_value_t = 1000)]
        repetitions: usize,
        /// vacuum, thermal:V, squeezed:DB:LOSS or custom:VC:VD.
        #[arg(long, default_value = "vacuum")]
        source: String,
        #[arg(long, default_value_t = DEFAULT_DELTA)]
        delta: f64,
        #[arg(long, default_value_t = 4096)]
        m: usize,
        #[arg(long, default_value_t = 100.0)]
        k: f64,
    },
    /// Small-sample study of the H_max estimators on nine-bin distributions.
    Ninebin {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "20,100,1000")]
        n: String,
        #[arg(long, default_value_t = 1000)]
        repetitions: usize,
        /// Peaked-prior concentration.
        #[arg(long, default_value_t = 100.0)]
        k: f64,
        /// File with nine weights; may be repeated.
        #[arg(long = "pmf-file")]
        pmf_files: Vec<PathBuf>,
        /// Skip the built-in distributions.
        #[arg(long)]
        no_builtin: bool,
    },
    /// Closed-form entropies for one or more sources over a range of bin widths.
    Theory {
        #[command(flatten)]
        common: Common,
        /// May be repeated.
        #[arg(long = "source", default_value = "vacuum")]
        sources: Vec<String>,
        /// Comma-separated bin widths.
        #[arg(long, conflicts_with = "delta_range")]
        delta: Option<String>,
        /// LOW:HIGH:COUNT, log-spaced.
        #[arg(long)]
        delta_range: Option<String>,
        #[arg(long, default_value_t = 4096)]
        m: usize,
        #[arg(long, default_value = "leading")]
        constant_mode: String,
    },
    /// Write bits as ASCII '0'/'1' for external statistical suites.
    NistExport {
        #[command(flatten)]
        common: Common,
        /// Existing bit file to convert; otherwise a session is run.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Input is ASCII rather than packed.
        #[arg(long)]
        input_ascii: bool,
    },
    /// Run the built-in randomness tests on a bit file.
    NistTest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        input_ascii: bool,
        /// Bits per sample.
        #[arg(long, default_value_t = 1_000_000)]
        sample_bits: usize,
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,
    },
    /// Quick end-to-end consistency checks.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_CONFIG)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<u8> {
    match cmd {
        Command::Run {
            common,
            log,
            ascii,
            blocks,
        } => cmd_run(&common, log.as_deref(), ascii, blocks),
        Command::BiasSim {
            common,
            estimators,
            n,
            repetitions,
            source,
            delta,
            m,
            k,
        } => {
            let quantities = split_list(&estimators)
                .map(|e| BiasQuantity::parse(e, k))
                .collect::<Result<Vec<_>, _>>()?;
            let cfg = BiasSimConfig {
                quantities,
                n_values: parse_list(&n)?,
                repetitions,
                source: parse_source(&source)?,
                m,
                delta,
                seed: common.seed.unwrap_or(1),
                ..BiasSimConfig::default()
            };
            let rows = harness::bias_sim(&cfg)?;
            harness::write_bias_csv(&rows, output(common.out.as_deref())?)?;
            Ok(0)
        }
        Command::Ninebin {
            common,
            n,
            repetitions,
            k,
            pmf_files,
            no_builtin,
        } => {
            let mut pmfs = if no_builtin {
                Vec::new()
            } else {
                harness::builtin_nine_bin()
            };
            for path in &pmf_files {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                let name = path.file_stem().map_or("custom".into(), |s| s.to_string_lossy());
                pmfs.push(NineBinPmf::parse(name, &text)?);
            }
            if pmfs.is_empty() {
                bail!("no distributions selected");
            }
            let rows = harness::nine_bin_study(
                &pmfs,
                &parse_list(&n)?,
                repetitions,
                k,
                common.seed.unwrap_or(1),
            )?;
            for r in rows.iter().filter(|r| r.negative_bias()) {
                info!("negative H_max bias: {} {} n={}", r.pmf, r.estimator, r.n);
            }
            harness::write_nine_bin_csv(&rows, output(common.out.as_deref())?)?;
            Ok(0)
        }
        Command::Theory {
            common,
            sources,
            delta,
            delta_range,
            m,
            constant_mode,
        } => {
            let sources = sources
                .iter()
                .map(|s| parse_source(s))
                .collect::<Result<Vec<_>, _>>()?;
            let deltas = match (delta, delta_range) {
                (_, Some(r)) => log_range(&r)?,
                (Some(d), None) => parse_list(&d)?,
                (None, None) => vec![DEFAULT_DELTA],
            };
            let mode = match constant_mode.as_str() {
                "leading" => ConstantMode::LeadingOrder,
                "precise" => ConstantMode::Precise,
                other => bail!("unknown constant mode '{other}'"),
            };
            let rows = harness::theory_sweep(&sources, &deltas, m, mode)?;
            harness::write_theory_csv(&rows, output(common.out.as_deref())?)?;
            Ok(0)
        }
        Command::NistExport {
            common,
            input,
            input_ascii,
        } => {
            let out = common
                .out
                .clone()
                .context("--out is required for nist-export")?;
            match input {
                Some(path) => {
                    let bits = read_bits(BufReader::new(File::open(&path)?), input_ascii)?;
                    let mut w = BitWriter::new(BufWriter::new(File::create(&out)?), true);
                    w.write_bits(&bits)?;
                    w.finish()?.flush()?;
                    eprintln!("{} bits written to {}", bits.len(), out.display());
                    Ok(0)
                }
                None => {
                    let common = Common {
                        out: Some(out),
                        ..common
                    };
                    cmd_run(&common, None, true, None)
                }
            }
        }
        Command::NistTest {
            common,
            input,
            input_ascii,
            sample_bits,
            alpha,
        } => {
            let bits = read_bits(BufReader::new(File::open(&input)?), input_ascii)?;
            let samples = nist::split_samples(&bits, sample_bits);
            let summary = nist::suite(&samples, alpha)?;
            for t in &summary.tests {
                eprintln!(
                    "{:<16} pass {:.4} in [{:.6}, {:.6}]  uniformity p {:.4}  {}",
                    t.test.to_string(),
                    t.pass_proportion,
                    summary.proportion_interval.0,
                    summary.proportion_interval.1,
                    t.uniformity_p,
                    if t.proportion_ok && t.uniformity_ok { "ok" } else { "FAIL" }
                );
            }
            summary.write_csv(output(common.out.as_deref())?)?;
            Ok(if summary.all_ok() { 0 } else { EXIT_SELFTEST })
        }
        Command::Selftest { common } => {
            let results = harness::self_test(common.seed.unwrap_or(1));
            let mut ok = true;
            for r in &results {
                println!("{} {:<18} {}", if r.pass { "PASS" } else { "FAIL" }, r.name, r.detail);
                ok &= r.pass;
            }
            Ok(if ok { 0 } else { EXIT_SELFTEST })
        }
    }
}

fn load_config(common: &Common) -> anyhow::Result<ProtocolConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            ProtocolConfig::from_text(&text)?
        }
        None => ProtocolConfig::default(),
    };
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got '{kv}'"))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(
    common: &Common,
    log_path: Option<&Path>,
    ascii: bool,
    blocks: Option<usize>,
) -> anyhow::Result<u8> {
    let mut cfg = load_config(common)?;
    if let Some(b) = blocks {
        cfg.blocks = b;
    }
    let blocks = cfg.blocks;
    let mut engine = Engine::new(cfg)?;
    if let Some(path) = &common.out {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        engine = engine.with_output(Box::new(BufWriter::new(f)), ascii);
    }
    let report = engine.run(blocks)?;
    if let Some(path) = log_path {
        report.write_csv(BufWriter::new(File::create(path)?))?;
    }
    let s = &report.stats;
    println!(
        "blocks {} (check {}, data {}, aborted {})",
        s.blocks, s.check_blocks, s.data_blocks, s.aborted_blocks
    );
    println!(
        "secure bits {} (decision bits used {}, banked {}, reservoir {})",
        s.bits_emitted, s.bits_consumed, s.bits_banked, report.reservoir_remaining
    );
    println!(
        "wall time {:.3} s, rate {:.1} bit/s",
        s.wall_time,
        report.bit_rate()
    );
    match report.session_aborted {
        Some(reason) => {
            eprintln!("session aborted: {reason}");
            Ok(EXIT_ABORT)
        }
        None => Ok(0),
    }
}

fn output(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(',').map(str::trim).filter(|t| !t.is_empty())
}

fn parse_list<T: std::str::FromStr>(s: &str) -> anyhow::Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    split_list(s)
        .map(|t| t.parse::<T>().map_err(|e| anyhow::anyhow!("'{t}': {e}")))
        .collect()
}

fn log_range(spec: &str) -> anyhow::Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let [lo, hi, count] = parts.as_slice() else {
        bail!("--delta-range expects LOW:HIGH:COUNT");
    };
    let (lo, hi): (f64, f64) = (lo.parse()?, hi.parse()?);
    let count: usize = count.parse()?;
    if !(lo > 0.0 && hi >= lo) || count == 0 {
        bail!("--delta-range needs 0 < LOW <= HIGH and COUNT >= 1");
    }
    if count == 1 {
        return Ok(vec![lo]);
    }
    let step = (hi / lo).ln() / (count - 1) as f64;
    Ok((0..count).map(|i| lo * (step * i as f64).exp()).collect())
}
