//! `ofi-lab`: command-line front end for the order book simulator, the
//! flow-imbalance processes, the convergence harness and the event-log
//! estimation pipeline. Run configurations are flat INI-style files; all
//! randomness derives from `--seed` through per-path streams, so outputs
//! are byte-identical across thread counts.

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ofi_core::book::{simulate_book, write_csv, BookState, EventKind, Side};
use ofi_core::config::Config;
use ofi_core::dist::gh::GhParams;
use ofi_core::dist::gig::GigParams;
use ofi_core::estimate::{
    bin_counts, check_common_driver, estimate_intensity, fit_gig, gig_ks_statistic,
    histogram_csv, imbalance_series, EventLog,
};
use ofi_core::flows::RateConfig;
use ofi_core::limits::{par_paths, run_gh_convergence, LimitError, LimitScalingSchedule};
use ofi_core::ofi::{simulate_ofi_compound, simulate_ofi_terminal, simulate_ofi_two_sided, OfiPath};
use ofi_core::rng::stream_rng;
use ofi_core::stats::{mean, variance};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Bundled run presets, resolvable by file name when no such file exists.
const PRESETS: &[(&str, &str)] = &[
    ("gh_limit_gamma.cfg", include_str!("../presets/gh_limit_gamma.cfg")),
    ("gh_limit_nig.cfg", include_str!("../presets/gh_limit_nig.cfg")),
    ("gh_limit_gig.cfg", include_str!("../presets/gh_limit_gig.cfg")),
    ("gh_limit_broken_k.cfg", include_str!("../presets/gh_limit_broken_k.cfg")),
];

#[derive(Parser)]
#[command(name = "ofi-lab", version, about = "Order book and order-flow-imbalance laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Master seed; every random quantity derives from it.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo worker threads (fallback: OFI_LAB_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Directory for output artifacts.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum OfiMode {
    TwoSided,
    Compound,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SideArg {
    Buy,
    Sell,
}

impl From<SideArg> for Side {
    fn from(s: SideArg) -> Side {
        match s {
            SideArg::Buy => Side::Buy,
            SideArg::Sell => Side::Sell,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the order book and write the event log plus a summary.
    SimulateBook {
        /// Run configuration with [book] and [rates] sections.
        config: PathBuf,
    },
    /// Simulate flow-imbalance paths and summarize their terminal values.
    SimulateOfi {
        /// Run configuration with [driver], [jumps] and [run] sections.
        config: PathBuf,
        /// Two independent side streams, or one merged signed-jump stream.
        #[arg(long, value_enum, default_value_t = OfiMode::TwoSided)]
        mode: OfiMode,
    },
    /// Run the scaling-limit convergence checks and report PASS/FAIL.
    CheckLimits {
        /// Configuration or bundled preset name (e.g. gh_limit_gamma.cfg).
        config: PathBuf,
        /// Override the schedule's row sizes, e.g. "10,100".
        #[arg(long)]
        n_list: Option<String>,
    },
    /// Fit the positive mixing law to binned arrival counts from a log.
    FitGig {
        /// Event log in the book CSV schema.
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = SideArg::Buy)]
        side: SideArg,
        /// Count bin width in seconds.
        #[arg(long, default_value_t = 15.0)]
        bin_width: f64,
        /// Keep the full session instead of trimming its first/last 5 minutes.
        #[arg(long)]
        no_trim: bool,
    },
    /// Piecewise-constant intensity estimate for one flow direction.
    EstimateIntensity {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = SideArg::Buy)]
        side: SideArg,
        /// Estimation window in seconds.
        #[arg(long, default_value_t = 15.0)]
        window: f64,
        #[arg(long)]
        no_trim: bool,
    },
    /// Windowed buy/sell intensity-imbalance ratio series.
    Imbalance {
        log: PathBuf,
        /// Averaging window in seconds.
        #[arg(long, default_value_t = 60.0)]
        window: f64,
        #[arg(long)]
        no_trim: bool,
        /// Also report the shared-driver rank-correlation diagnostic.
        #[arg(long)]
        driver_check: bool,
    },
    /// Export a density table of the variance-mean mixture family.
    GhTable {
        #[arg(long, default_value_t = 0.0)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, allow_hyphen_values = true)]
        nu: f64,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        lambda: f64,
        #[arg(long, default_value_t = -5.0)]
        x_min: f64,
        #[arg(long, default_value_t = 5.0)]
        x_max: f64,
        #[arg(long, default_value_t = 201)]
        points: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("OFI_LAB_THREADS").ok().and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Ok(true) = success, Ok(false) = a check criterion failed, Err = usage or
/// configuration error (exit 2).
fn run(cli: Cli) -> Result<bool> {
    std::fs::create_dir_all(&cli.out_dir)
        .with_context(|| format!("cannot create output directory {}", cli.out_dir.display()))?;
    match cli.command {
        Command::SimulateBook { config } => cmd_simulate_book(&config, cli.seed, &cli.out_dir),
        Command::SimulateOfi { config, mode } => {
            cmd_simulate_ofi(&config, mode, cli.seed, &cli.out_dir)
        }
        Command::CheckLimits { config, n_list } => {
            cmd_check_limits(&config, n_list.as_deref(), cli.seed, &cli.out_dir)
        }
        Command::FitGig { log, side, bin_width, no_trim } => {
            cmd_fit_gig(&log, side.into(), bin_width, no_trim, &cli.out_dir)
        }
        Command::EstimateIntensity { log, side, window, no_trim } => {
            cmd_estimate_intensity(&log, side.into(), window, no_trim, &cli.out_dir)
        }
        Command::Imbalance { log, window, no_trim, driver_check } => {
            cmd_imbalance(&log, window, no_trim, driver_check, &cli.out_dir)
        }
        Command::GhTable { alpha, sigma, nu, mu, lambda, x_min, x_max, points } => {
            cmd_gh_table(alpha, sigma, nu, mu, lambda, x_min, x_max, points, &cli.out_dir)
        }
    }
}

/// Loads a config file, falling back to a bundled preset of the same name.
fn load_config(path: &Path) -> Result<Config> {
    if path.exists() {
        return Config::from_file(path).with_context(|| format!("in {}", path.display()));
    }
    if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
        if let Some((_, text)) = PRESETS.iter().find(|(p, _)| *p == name) {
            return Ok(Config::parse(text).expect("bundled presets parse"));
        }
    }
    bail!(
        "config {} not found (bundled presets: {})",
        path.display(),
        PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", ")
    );
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

fn load_log(path: &Path, no_trim: bool) -> Result<EventLog> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let log = EventLog::read_csv(BufReader::new(file))
        .with_context(|| format!("in {}", path.display()))?;
    Ok(if no_trim { log.with_exclusions(Vec::new()) } else { log })
}

fn cmd_simulate_book(config: &Path, seed: u64, out_dir: &Path) -> Result<bool> {
    let cfg = load_config(config)?;
    let b = cfg.section("book")?;
    let m = b.get_usize("m")?;
    let horizon = b.get_f64("horizon")?;
    let r = cfg.section("rates")?;
    let rates = RateConfig {
        mu_plus: r.get_f64("mu_plus")?,
        mu_minus: r.get_f64("mu_minus")?,
        limit_rates_plus: r.get_f64_list("limit_plus")?,
        limit_rates_minus: r.get_f64_list("limit_minus")?,
        cancel_rates_plus: r.get_f64_list("cancel_plus")?,
        cancel_rates_minus: r.get_f64_list("cancel_minus")?,
    };
    let state = match (b.get_opt("init_asks"), b.get_opt("init_bids")) {
        (Some(_), Some(_)) => {
            BookState::with_volumes(m, &b.get_u64_list("init_asks")?, &b.get_u64_list("init_bids")?)?
        }
        (None, None) => BookState::new(m),
        _ => bail!("[book] needs both init_asks and init_bids, or neither"),
    };
    let (records, final_state) = simulate_book(&rates, state, horizon, seed)?;

    let csv_path = out_dir.join("book_events.csv");
    let mut out = BufWriter::new(File::create(&csv_path)?);
    write_csv(&records, &mut out)?;
    out.flush()?;

    let count = |side: Side, kind: EventKind| {
        records.iter().filter(|r| r.event.side == side && r.event.kind == kind).count()
    };
    let summary = serde_json::json!({
        "seed": seed,
        "horizon": horizon,
        "m": m,
        "n_events": records.len(),
        "n_applied": records.iter().filter(|r| r.applied).count(),
        "counts": {
            "limit_buy": count(Side::Buy, EventKind::Limit),
            "limit_sell": count(Side::Sell, EventKind::Limit),
            "market_buy": count(Side::Buy, EventKind::Market),
            "market_sell": count(Side::Sell, EventKind::Market),
            "cancel_buy": count(Side::Buy, EventKind::Cancel),
            "cancel_sell": count(Side::Sell, EventKind::Cancel),
        },
        "final_best_bid": final_state.best_bid(),
        "final_best_ask": final_state.best_ask(),
        "final_mid": final_state.mid_price(),
    });
    write_text(&out_dir.join("book_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!("wrote {} events to {}", records.len(), csv_path.display());
    Ok(true)
}

fn cmd_simulate_ofi(config: &Path, mode: OfiMode, seed: u64, out_dir: &Path) -> Result<bool> {
    let cfg = load_config(config)?;
    let spec = cfg.section("driver")?.subordinator_spec()?;
    let jumps = cfg.section("jumps")?.jump_law(&spec)?;
    let run = cfg.section("run")?;
    let horizon = run.get_f64("horizon")?;
    let paths = run.get_u64_or("paths", 1000)? as usize;

    // one full path for the CSV artifact
    let mut rng = stream_rng(seed, 0);
    let path: OfiPath = match mode {
        OfiMode::TwoSided => simulate_ofi_two_sided(&jumps, &spec, horizon, seed, &mut rng)?,
        OfiMode::Compound => simulate_ofi_compound(&jumps, &spec, horizon, seed, &mut rng)?,
    };
    let csv_path = out_dir.join("ofi_path.csv");
    let mut out = BufWriter::new(File::create(&csv_path)?);
    path.write_csv(&mut out)?;
    out.flush()?;

    // terminal-law summary over independent streams
    let terminals: Vec<f64> = par_paths(paths, seed, 1 << 32, |rng| {
        simulate_ofi_terminal(&jumps, &spec, horizon, rng)
    })
    .into_iter()
    .collect::<Result<_, _>>()?;
    let m = mean(&terminals);
    let sd = variance(&terminals).sqrt();
    let summary = serde_json::json!({
        "seed": seed,
        "mode": match mode { OfiMode::TwoSided => "two_sided", OfiMode::Compound => "compound" },
        "horizon": horizon,
        "paths": paths,
        "terminal_mean": m,
        "terminal_std": sd,
        "path_summary": path.summary(),
    });
    write_text(&out_dir.join("ofi_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "terminal mean {m:.6} (sd {sd:.6}) over {paths} paths; path written to {}",
        csv_path.display()
    );
    Ok(true)
}

fn cmd_check_limits(
    config: &Path,
    n_list: Option<&str>,
    seed: u64,
    out_dir: &Path,
) -> Result<bool> {
    let cfg = load_config(config)?;
    let s = cfg.section("schedule")?;
    let mut k_list = s.get_u64_list("k_list")?;
    if let Some(list) = n_list {
        k_list = list
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| anyhow::anyhow!("bad --n-list entry `{v}`")))
            .collect::<Result<_>>()?;
    }
    let spec = cfg.section("driver")?.subordinator_spec()?;
    let jumps = cfg.section("jumps")?.jump_law(&spec)?;
    let mut schedule = LimitScalingSchedule::new(
        k_list,
        spec,
        jumps,
        s.get_f64("drift")?,
        s.get_f64("delta")?,
        s.get_f64("delta1")?,
        s.get_f64("beta")?,
        s.get_f64("c_base")?,
    )?;
    if let Some(v) = s.get_opt("size_scaling") {
        schedule.size_scaling = v
            .parse()
            .map_err(|_| anyhow::anyhow!("[schedule] size_scaling must be true or false"))?;
    }
    let paths = cfg.section("run")?.get_usize("paths")?;
    let t = cfg.section("target")?;
    let gh = GhParams::new(
        t.get_f64("alpha")?,
        t.get_f64("sigma")?,
        GigParams::new(t.get_f64("nu")?, t.get_f64("mu")?, t.get_f64("lambda")?)?,
    )?;

    // the moment-bound check first: a schedule that violates it is a named
    // FAIL, not a usage error
    if let Err(LimitError::ScheduleInvalid(msg)) = schedule.k_condition() {
        println!("FAIL moment_bound_condition: {msg}");
        return Ok(false);
    }
    let report = run_gh_convergence(&schedule, &gh, paths, seed)?;
    write_text(&out_dir.join("limits_report.json"), &report.to_json())?;
    write_text(&out_dir.join("limits_plot.csv"), &report.plot_csv())?;
    for c in &report.criteria {
        println!(
            "{} {}: value {:.6} vs threshold {:.6} ({})",
            if c.pass { "PASS" } else { "FAIL" },
            c.name,
            c.value,
            c.threshold,
            c.details
        );
    }
    Ok(report.passed())
}

fn cmd_fit_gig(
    log_path: &Path,
    side: Side,
    bin_width: f64,
    no_trim: bool,
    out_dir: &Path,
) -> Result<bool> {
    let log = load_log(log_path, no_trim)?;
    let bins = bin_counts(&log, side, bin_width)?;
    // the mixing family is a positive continuous law: fit to nonzero counts
    let data: Vec<f64> = bins.counts.iter().filter(|&&c| c > 0).map(|&c| c as f64).collect();
    let fit = fit_gig(&data, None)?;
    let ks = gig_ks_statistic(&data, &fit.params)?;
    let report = serde_json::json!({
        "side": match side { Side::Buy => "buy", Side::Sell => "sell" },
        "bin_width": bin_width,
        "n_bins": bins.counts.len(),
        "fit": fit,
        "ks_distance": ks,
    });
    write_text(&out_dir.join("gig_fit.json"), &serde_json::to_string_pretty(&report)?)?;
    write_text(&out_dir.join("gig_fit_histogram.csv"), &histogram_csv(&data, 30, &fit.params)?)?;
    println!(
        "fitted nu {:.4}, mu {:.4}, lambda {:.4}; log-likelihood {:.3}; KS {:.4} over {} counts",
        fit.params.nu, fit.params.mu, fit.params.lambda, fit.log_likelihood, ks, data.len()
    );
    Ok(true)
}

fn cmd_estimate_intensity(
    log_path: &Path,
    side: Side,
    window: f64,
    no_trim: bool,
    out_dir: &Path,
) -> Result<bool> {
    let log = load_log(log_path, no_trim)?;
    let est = estimate_intensity(&log, side, window)?;
    write_text(&out_dir.join("intensity.csv"), &est.to_csv())?;
    let summary = serde_json::json!({
        "side": match side { Side::Buy => "buy", Side::Sell => "sell" },
        "window": window,
        "n_windows": est.values.len(),
        "mean_intensity": mean(&est.values),
        "dispersion_ratio": est.dispersion_ratio,
        "overdispersed": est.overdispersed,
    });
    write_text(&out_dir.join("intensity_summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "mean intensity {:.4}/s over {} windows (dispersion {:.3}{})",
        mean(&est.values),
        est.values.len(),
        est.dispersion_ratio,
        if est.overdispersed { ", overdispersed" } else { "" }
    );
    Ok(true)
}

fn cmd_imbalance(
    log_path: &Path,
    window: f64,
    no_trim: bool,
    driver_check: bool,
    out_dir: &Path,
) -> Result<bool> {
    let log = load_log(log_path, no_trim)?;
    let series = imbalance_series(&log, window)?;
    write_text(&out_dir.join("imbalance.csv"), &series.to_csv())?;
    println!("mean ratio {:.4} over {} windows", mean(&series.values), series.values.len());
    if driver_check {
        let diag = check_common_driver(&log, window)?;
        write_text(
            &out_dir.join("driver_diagnostic.json"),
            &serde_json::to_string_pretty(&diag)?,
        )?;
        println!(
            "rank correlation {:.4} across {} windows (p = {:.4})",
            diag.rho, diag.n_windows, diag.p_value
        );
    }
    Ok(true)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gh_table(
    alpha: f64,
    sigma: f64,
    nu: f64,
    mu: f64,
    lambda: f64,
    x_min: f64,
    x_max: f64,
    points: usize,
    out_dir: &Path,
) -> Result<bool> {
    if points < 2 || !(x_max > x_min) {
        bail!("gh-table needs points >= 2 and x_max > x_min");
    }
    let gh = GhParams::new(alpha, sigma, GigParams::new(nu, mu, lambda)?)?;
    let mut out = String::from("x,density\n");
    for i in 0..points {
        let x = x_min + (x_max - x_min) * i as f64 / (points - 1) as f64;
        out.push_str(&format!("{x},{}\n", gh.pdf(x)?));
    }
    let path = out_dir.join("gh_table.csv");
    write_text(&path, &out)?;
    println!("wrote {points} density values to {}", path.display());
    Ok(true)
}
