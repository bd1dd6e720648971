use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use glitchsim::cmos::{gate_glitch_delay, GlitchPulse, InputScenario};
use glitchsim::config::{parse_fault_profile, parse_model_params};
use glitchsim::search::{
    reproduce_rate, summarize_windows, sweep, write_summary, write_trial_log, Direction, SearchConfig, TrialOutcome,
};
use glitchsim::target::{boot, EmmcImage, FaultProfile, GlitchSetting};

#[derive(Parser)]
#[command(name = "glitchsim", version, about = "Crowbar glitch campaign simulator for eMMC secure boot")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate the glitched-gate delay for every input scenario over a width grid.
    Model {
        /// Gate physics and glitch-width grid.
        params: PathBuf,
    },
    /// Write a boot image whose MBR points at a bootloader.
    Mkimage {
        #[arg(long, value_parser = parse_int_u32)]
        offset: u32,
        #[arg(long, value_parser = parse_int_u32)]
        size: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Boot once and print the bus trace.
    Boot {
        #[command(flatten)]
        target: TargetArgs,
        /// Glitch offset in glitch cycles after the trigger.
        #[arg(long, requires = "m", value_parser = parse_int_u64)]
        n: Option<u64>,
        /// Glitch width in glitch cycles.
        #[arg(long, requires = "n", value_parser = parse_int_u64)]
        m: Option<u64>,
        #[command(flatten)]
        rng: RngArgs,
    },
    /// Sweep (N, M) and log every trial.
    Search {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long, value_parser = parse_int_u64)]
        n_min: u64,
        #[arg(long, value_parser = parse_int_u64)]
        n_max: u64,
        #[arg(long, value_parser = parse_int_u64)]
        m_min: u64,
        #[arg(long, value_parser = parse_int_u64)]
        m_max: u64,
        /// Visit N from the top of the range down.
        #[arg(long)]
        backward: bool,
        /// Stop at the first success.
        #[arg(long)]
        stop_on_success: bool,
        /// Glitch cycles without a host command before a trial counts as halted.
        #[arg(long, default_value_t = SearchConfig::DEFAULT_TIMEOUT, value_parser = parse_int_u64)]
        timeout: u64,
        #[command(flatten)]
        rng: RngArgs,
        /// Trial log CSV.
        #[arg(long)]
        out: PathBuf,
        /// Window summary CSV [default: OUT with extension .summary.csv].
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Estimate the success rate of one (N, M) point over repeated stochastic boots.
    Repro {
        #[command(flatten)]
        target: TargetArgs,
        #[arg(long, value_parser = parse_int_u64)]
        n: u64,
        #[arg(long, value_parser = parse_int_u64)]
        m: u64,
        #[arg(long)]
        trials: u32,
        #[arg(long, value_parser = parse_int_u64)]
        seed: u64,
    },
}

#[derive(Args)]
struct TargetArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    profile: PathBuf,
    /// Glitch clock frequency.
    #[arg(long, default_value_t = 12.0)]
    freq_mhz: f64,
}

#[derive(Args)]
struct RngArgs {
    /// Draw the bypass with the profile's success probability.
    #[arg(long, requires = "seed")]
    stochastic: bool,
    #[arg(long, value_parser = parse_int_u64)]
    seed: Option<u64>,
}

fn parse_int_u64(s: &str) -> Result<u64, String> {
    glitchsim::config::parse_u64(s).ok_or_else(|| format!("not an integer: {s:?}"))
}

fn parse_int_u32(s: &str) -> Result<u32, String> {
    parse_int_u64(s)?.try_into().map_err(|_| format!("out of range: {s:?}"))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_target(args: &TargetArgs) -> Result<(EmmcImage, FaultProfile)> {
    let bytes = fs::read(&args.image).with_context(|| format!("reading {}", args.image.display()))?;
    let image = EmmcImage::from_bytes(bytes).with_context(|| format!("loading {}", args.image.display()))?;
    let profile = parse_fault_profile(&read_text(&args.profile)?)
        .with_context(|| format!("parsing {}", args.profile.display()))?;
    Ok((image, profile))
}

fn cmd_model(params: &Path) -> Result<ExitCode> {
    let model = parse_model_params(&read_text(params)?).with_context(|| format!("parsing {}", params.display()))?;
    println!("scenario,t_g,delay");
    for scenario in InputScenario::ALL {
        for &t_g in &model.t_g_grid {
            let pulse = GlitchPulse::with_width(t_g)?;
            let delay = gate_glitch_delay(scenario, &model.physics, &pulse, model.t_glh)?;
            println!("{},{t_g:e},{delay:e}", scenario.name());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_mkimage(offset: u32, size: u32, out: &Path) -> Result<ExitCode> {
    let image = EmmcImage::with_bootloader(offset, size);
    fs::write(out, image.as_bytes()).with_context(|| format!("writing {}", out.display()))?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_boot(target: &TargetArgs, glitch: Option<(u64, u64)>, rng: &RngArgs) -> Result<ExitCode> {
    let (image, mut profile) = load_target(target)?;
    if let Some(seed) = rng.seed {
        profile.seed = seed;
    }
    let setting = match glitch {
        Some((n, m)) => Some(GlitchSetting::new(n, m, target.freq_mhz)?),
        None => None,
    };
    let trace = boot(&image, setting.as_ref(), &profile, rng.stochastic)?;
    for event in &trace.events {
        let kind = if event.frame.is_command() { "CMD" } else { "RSP" };
        println!("{} {kind}{:02} arg=0x{:08X}", event.cycle, event.frame.index(), event.frame.argument());
    }
    println!("blocks_read=0x{:X}", trace.blocks_read);
    println!("outcome={}", trace.outcome.name());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    target: &TargetArgs,
    n: (u64, u64),
    m: (u64, u64),
    backward: bool,
    stop_on_success: bool,
    timeout: u64,
    rng: &RngArgs,
    out: &Path,
    summary: Option<&Path>,
) -> Result<ExitCode> {
    let (image, profile) = load_target(target)?;
    let config = SearchConfig {
        n_direction: if backward { Direction::Backward } else { Direction::Forward },
        timeout_cycles: timeout,
        stochastic: rng.stochastic,
        seed: rng.seed.unwrap_or(0),
        stop_on_success,
        ..SearchConfig::new(target.freq_mhz, n.0..=n.1, m.0..=m.1)
    };
    let records = sweep(&config, &image, &profile)?;

    let file = fs::File::create(out).with_context(|| format!("writing {}", out.display()))?;
    write_trial_log(file, &records)?;
    let summary_path = summary.map_or_else(|| out.with_extension("summary.csv"), Path::to_path_buf);
    let file = fs::File::create(&summary_path).with_context(|| format!("writing {}", summary_path.display()))?;
    write_summary(file, &summarize_windows(&records))?;

    let hits = records.iter().filter(|r| r.outcome == TrialOutcome::Success).count();
    eprintln!("{} trials, {hits} successes", records.len());
    Ok(if hits > 0 { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn cmd_repro(target: &TargetArgs, n: u64, m: u64, trials: u32, seed: u64) -> Result<ExitCode> {
    let (image, profile) = load_target(target)?;
    let profile = FaultProfile { seed, ..profile };
    let rate = reproduce_rate(&image, &profile, target.freq_mhz, n, m, trials)?;
    println!("{rate:.3}");
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Model { params } => cmd_model(params),
        Command::Mkimage { offset, size, out } => cmd_mkimage(*offset, *size, out),
        Command::Boot { target, n, m, rng } => cmd_boot(target, n.zip(*m), rng),
        Command::Search {
            target,
            n_min,
            n_max,
            m_min,
            m_max,
            backward,
            stop_on_success,
            timeout,
            rng,
            out,
            summary,
        } => {
            if n_min > n_max || m_min > m_max {
                bail!("empty range: N [{n_min}, {n_max}], M [{m_min}, {m_max}]");
            }
            cmd_search(
                target,
                (*n_min, *n_max),
                (*m_min, *m_max),
                *backward,
                *stop_on_success,
                *timeout,
                rng,
                out,
                summary.as_deref(),
            )
        }
        Command::Repro { target, n, m, trials, seed } => cmd_repro(target, *n, *m, *trials, *seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return if err.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
