//! `floatbook` command line: configuration, commands and exit codes.

use std::ffi::OsString;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::audit::{validate_series, Check};
use crate::backtest::{default_agent_grid, run_backtest, summarize, AgentParams};
use crate::book::{run_series, run_series_until, BookConfig, TurnoverMode, DEFAULT_TICK};
use crate::market_data::{
    assemble_series, parse_bars, parse_events, AvgPriceMode, BarFormat, InstrumentSeries,
    DATE_FORMAT,
};
use crate::report;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ExitKind {
    Input = 1,
    Invariant = 2,
    Internal = 3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliError {
    pub kind: ExitKind,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Input,
            message: message.into(),
        }
    }

    fn internal(message: impl Into<String>) -> Self {
        CliError {
            kind: ExitKind::Internal,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.kind as i32
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

#[derive(Debug, Parser)]
#[command(
    name = "floatbook",
    version,
    about = "Volume book index, VWAP and threshold-agent backtests"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the daily index series (`<symbol>_index.csv`).
    Run(CommonArgs),
    /// Write the remaining-volume histogram (`<symbol>_hist_<date>.csv`).
    Histogram(CommonArgs),
    /// Run the agent grid (`<symbol>_agents.csv`, `<symbol>_trades.json`).
    Backtest(CommonArgs),
    /// Check ingestion and every book invariant without writing files.
    Validate(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    #[arg(long)]
    pub bars: Option<PathBuf>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub symbol: Option<String>,
    #[arg(long)]
    pub tick: Option<f64>,
    #[arg(long = "bin-width")]
    pub bin_width: Option<f64>,
    /// explicit | currency_over_shares | high_low_mid | auto
    #[arg(long = "avg-price-mode")]
    pub avg_price_mode: Option<AvgPriceMode>,
    /// error | clamp
    #[arg(long = "turnover-mode")]
    pub turnover_mode: Option<TurnoverMode>,
    /// Comma separated agent thetas.
    #[arg(long, value_delimiter = ',')]
    pub grid: Option<Vec<f64>>,
    #[arg(long = "as-of")]
    pub as_of: Option<NaiveDate>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Process the configured instruments concurrently.
    #[arg(long)]
    pub parallel: bool,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstrumentFile {
    symbol: String,
    bars: PathBuf,
    events: PathBuf,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    symbol: Option<String>,
    bars: Option<PathBuf>,
    events: Option<PathBuf>,
    tick: Option<f64>,
    bin_width: Option<f64>,
    avg_price_mode: Option<AvgPriceMode>,
    turnover_mode: Option<TurnoverMode>,
    grid: Option<Vec<f64>>,
    as_of: Option<NaiveDate>,
    out: Option<PathBuf>,
    parallel: Option<bool>,
    #[serde(default)]
    instruments: Vec<InstrumentFile>,
}

/// Fully resolved settings for one instrument.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub bars_path: PathBuf,
    pub events_path: PathBuf,
    pub symbol: String,
    pub tick: f64,
    pub bin_width: f64,
    pub avg_price_mode: AvgPriceMode,
    pub turnover_mode: TurnoverMode,
    pub grid: Vec<AgentParams>,
    pub output_dir: PathBuf,
}

impl RunConfig {
    pub fn new(
        bars: impl Into<PathBuf>,
        events: impl Into<PathBuf>,
        symbol: &str,
        out: impl Into<PathBuf>,
    ) -> Self {
        RunConfig {
            bars_path: bars.into(),
            events_path: events.into(),
            symbol: symbol.to_string(),
            tick: DEFAULT_TICK,
            bin_width: DEFAULT_TICK,
            avg_price_mode: AvgPriceMode::Auto,
            turnover_mode: TurnoverMode::Error,
            grid: default_agent_grid(),
            output_dir: out.into(),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.tick.is_finite() && self.tick > 0.0) {
            return Err(CliError::input(format!(
                "tick must be > 0, got {}",
                self.tick
            )));
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return Err(CliError::input(format!(
                "bin width must be > 0, got {}",
                self.bin_width
            )));
        }
        if self.grid.is_empty() {
            return Err(CliError::input("agent grid is empty"));
        }
        for p in &self.grid {
            AgentParams::new(p.theta).map_err(|e| CliError::input(e.to_string()))?;
        }
        if self.grid.windows(2).any(|w| w[0].theta >= w[1].theta) {
            return Err(CliError::input(
                "agent grid thetas must be strictly increasing",
            ));
        }
        if self.symbol.is_empty() {
            return Err(CliError::input("symbol is empty"));
        }
        Ok(())
    }

    pub fn book_config(&self) -> BookConfig {
        BookConfig {
            tick: self.tick,
            turnover: self.turnover_mode,
        }
    }
}

/// Settings shared by every instrument of one invocation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Invocation {
    pub instruments: Vec<RunConfig>,
    pub as_of: Option<NaiveDate>,
    pub parallel: bool,
}

fn load_config_file(path: &Path) -> Result<ConfigFile, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let mut cfg: ConfigFile =
        toml::from_str(&text).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    // paths in a config file are relative to the file itself
    let base = path.parent().unwrap_or(Path::new(""));
    let rebase = |p: &mut PathBuf| {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    };
    for p in [&mut cfg.bars, &mut cfg.events, &mut cfg.out]
        .into_iter()
        .flatten()
    {
        rebase(p);
    }
    for inst in &mut cfg.instruments {
        rebase(&mut inst.bars);
        rebase(&mut inst.events);
    }
    Ok(cfg)
}

/// Merge flags over the optional config file. Flags win.
pub fn resolve(args: &CommonArgs) -> Result<Invocation, CliError> {
    let file = match &args.config {
        Some(p) => load_config_file(p)?,
        None => ConfigFile::default(),
    };
    let tick = args.tick.or(file.tick).unwrap_or(DEFAULT_TICK);
    let bin_width = args.bin_width.or(file.bin_width).unwrap_or(tick);
    let grid = match args.grid.clone().or(file.grid.clone()) {
        Some(thetas) => thetas
            .into_iter()
            .map(|theta| AgentParams { theta })
            .collect(),
        None => default_agent_grid(),
    };
    let template = |symbol: String, bars: PathBuf, events: PathBuf| RunConfig {
        bars_path: bars,
        events_path: events,
        symbol,
        tick,
        bin_width,
        avg_price_mode: args
            .avg_price_mode
            .or(file.avg_price_mode)
            .unwrap_or_default(),
        turnover_mode: args
            .turnover_mode
            .or(file.turnover_mode)
            .unwrap_or_default(),
        grid: grid.clone(),
        output_dir: args
            .out
            .clone()
            .or(file.out.clone())
            .unwrap_or_else(|| PathBuf::from(".")),
    };

    let single = args.bars.is_some() || args.events.is_some() || args.symbol.is_some();
    let instruments = if single || file.instruments.is_empty() {
        fn need<T>(v: Option<T>, flag: &str) -> Result<T, CliError> {
            v.ok_or_else(|| CliError::input(format!("missing --{flag}")))
        }
        vec![template(
            need(args.symbol.clone().or(file.symbol.clone()), "symbol")?,
            need(args.bars.clone().or(file.bars.clone()), "bars")?,
            need(args.events.clone().or(file.events.clone()), "events")?,
        )]
    } else {
        file.instruments
            .iter()
            .map(|i| template(i.symbol.clone(), i.bars.clone(), i.events.clone()))
            .collect()
    };
    for cfg in &instruments {
        cfg.validate()?;
    }
    Ok(Invocation {
        instruments,
        as_of: args.as_of.or(file.as_of),
        parallel: args.parallel || file.parallel.unwrap_or(false),
    })
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

pub fn load_series(cfg: &RunConfig) -> Result<InstrumentSeries, CliError> {
    let format = BarFormat {
        avg_price_mode: cfg.avg_price_mode,
    };
    let bars_name = cfg.bars_path.display().to_string();
    let events_name = cfg.events_path.display().to_string();
    let bars = parse_bars(open(&cfg.bars_path)?, &bars_name, &format)
        .map_err(|e| CliError::input(e.to_string()))?;
    let events = parse_events(open(&cfg.events_path)?, &events_name)
        .map_err(|e| CliError::input(e.to_string()))?;
    assemble_series(bars, events, &cfg.symbol)
        .map_err(|e| CliError::input(format!("{events_name}: {e}")))
}

fn write_file(
    dir: &Path,
    name: &str,
    fill: impl FnOnce(&mut Vec<u8>) -> Result<(), report::ReportError>,
) -> Result<PathBuf, CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("{}: {e}", dir.display())))?;
    let mut buf = Vec::new();
    fill(&mut buf).map_err(|e| CliError::internal(format!("{name}: {e}")))?;
    let path = dir.join(name);
    fs::write(&path, buf).map_err(|e| CliError::internal(format!("{}: {e}", path.display())))?;
    Ok(path)
}

fn core_error(cfg: &RunConfig, e: impl fmt::Display) -> CliError {
    CliError::input(format!("{}: {e}", cfg.symbol))
}

pub fn cmd_run(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let series = load_series(cfg)?;
    let run = run_series(&series, cfg.book_config()).map_err(|e| core_error(cfg, e))?;
    let path = write_file(
        &cfg.output_dir,
        &format!("{}_index.csv", cfg.symbol),
        |buf| report::write_index_csv(buf, &run.points),
    )?;
    Ok(vec![path])
}

pub fn cmd_histogram(cfg: &RunConfig, as_of: Option<NaiveDate>) -> Result<Vec<PathBuf>, CliError> {
    let series = load_series(cfg)?;
    let as_of = as_of.unwrap_or_else(|| series.last_date());
    if as_of < series.first_date() || as_of > series.last_date() {
        return Err(CliError::input(format!(
            "{}: as-of {as_of} outside series range [{}, {}]",
            cfg.symbol,
            series.first_date(),
            series.last_date()
        )));
    }
    let run = run_series_until(&series, cfg.book_config(), Some(as_of), |_| {})
        .map_err(|e| core_error(cfg, e))?;
    let bins = run
        .book
        .histogram(cfg.bin_width)
        .map_err(|e| core_error(cfg, e))?;
    let name = format!("{}_hist_{}.csv", cfg.symbol, as_of.format(DATE_FORMAT));
    Ok(vec![write_file(&cfg.output_dir, &name, |buf| {
        report::write_histogram_csv(buf, &bins)
    })?])
}

pub fn cmd_backtest(cfg: &RunConfig) -> Result<Vec<PathBuf>, CliError> {
    let series = load_series(cfg)?;
    let run = run_series(&series, cfg.book_config()).map_err(|e| core_error(cfg, e))?;
    let results = run_backtest(&run.points, &cfg.grid).map_err(|e| core_error(cfg, e))?;
    let rows = summarize(&results);
    let agents = write_file(
        &cfg.output_dir,
        &format!("{}_agents.csv", cfg.symbol),
        |buf| report::write_agents_csv(buf, &rows),
    )?;
    let trades = write_file(
        &cfg.output_dir,
        &format!("{}_trades.json", cfg.symbol),
        |buf| report::write_trades_json(buf, &results),
    )?;
    Ok(vec![agents, trades])
}

/// Ingest and audit one instrument. Ingestion problems are `Err`; the
/// invariant results come back as checks.
pub fn cmd_validate(cfg: &RunConfig) -> Result<Vec<Check>, CliError> {
    let series = load_series(cfg)?;
    Ok(validate_series(&series, cfg.book_config()))
}

#[derive(Debug, Clone, Copy)]
enum Which {
    Run,
    Histogram,
    Backtest,
    Validate,
}

fn execute(which: Which, cfg: &RunConfig, as_of: Option<NaiveDate>) -> (String, Option<CliError>) {
    let files = |r: Result<Vec<PathBuf>, CliError>| match r {
        Ok(paths) => (
            paths
                .iter()
                .map(|p| format!("wrote {}\n", p.display()))
                .collect(),
            None,
        ),
        Err(e) => (String::new(), Some(e)),
    };
    match which {
        Which::Run => files(cmd_run(cfg)),
        Which::Histogram => files(cmd_histogram(cfg, as_of)),
        Which::Backtest => files(cmd_backtest(cfg)),
        Which::Validate => match cmd_validate(cfg) {
            Err(e) => (
                format!("FAIL {} ingest: {}\n", cfg.symbol, e.message),
                Some(e),
            ),
            Ok(checks) => {
                let mut text = format!("PASS {} ingest\n", cfg.symbol);
                for c in &checks {
                    let tag = if c.passed { "PASS" } else { "FAIL" };
                    text.push_str(&format!("{tag} {} {}: {}\n", cfg.symbol, c.name, c.detail));
                }
                let failed: Vec<_> = checks
                    .iter()
                    .filter(|c| !c.passed)
                    .map(|c| c.name)
                    .collect();
                let err = (!failed.is_empty()).then(|| CliError {
                    kind: ExitKind::Invariant,
                    message: format!("{}: failed checks: {}", cfg.symbol, failed.join(", ")),
                });
                (text, err)
            }
        },
    }
}

/// Parse `args` and run, writing progress to `out` and errors to `err`.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                ExitKind::Input as i32
            } else {
                0
            };
            let text = e.render().to_string();
            let _ = if code == 0 {
                out.write_all(text.as_bytes())
            } else {
                err.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let (which, common) = match &cli.command {
        Command::Run(a) => (Which::Run, a),
        Command::Histogram(a) => (Which::Histogram, a),
        Command::Backtest(a) => (Which::Backtest, a),
        Command::Validate(a) => (Which::Validate, a),
    };
    let inv = match resolve(common) {
        Ok(inv) => inv,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return e.exit_code();
        }
    };

    let outcomes: Vec<(String, Option<CliError>)> = if inv.parallel && inv.instruments.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = inv
                .instruments
                .iter()
                .map(|cfg| s.spawn(move || execute(which, cfg, inv.as_of)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join().unwrap_or_else(|_| {
                        (String::new(), Some(CliError::internal("worker panicked")))
                    })
                })
                .collect()
        })
    } else {
        inv.instruments
            .iter()
            .map(|cfg| execute(which, cfg, inv.as_of))
            .collect()
    };

    let mut code = 0;
    for (text, failure) in outcomes {
        let _ = out.write_all(text.as_bytes());
        if let Some(e) = failure {
            let _ = writeln!(err, "error: {e}");
            code = code.max(e.exit_code());
        }
    }
    code
}
