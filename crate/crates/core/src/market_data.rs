//! Daily bar and float-event ingestion.
//!
//! Both file kinds are header-bound CSV (column order is free). Dates are
//! ISO-8601 `YYYY-MM-DD`. Volumes are carried as `f64` even when the source
//! holds integers, since the book update produces fractional volumes at once.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DATE_FORMAT: &str = "%Y-%m-%d";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{file}:{line}: {reason}")]
    Malformed {
        file: String,
        line: u64,
        reason: String,
    },
    #[error("{file}:{line}: duplicate date {date}")]
    DuplicateDate {
        file: String,
        line: u64,
        date: NaiveDate,
    },
    #[error("{file}: missing mandatory column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}:{line}: unparsable date `{value}` (expected YYYY-MM-DD)")]
    BadDate {
        file: String,
        line: u64,
        value: String,
    },
    #[error("{file}:{line}: unknown event kind `{kind}`")]
    UnknownKind {
        file: String,
        line: u64,
        kind: String,
    },
    #[error("{file}: expected exactly one initial_ipo event, found {found}")]
    IpoCount { file: String, found: usize },
    #[error("bar {date}: no route to an average price ({reason})")]
    NoPriceRoute { date: NaiveDate, reason: String },
    #[error("series {symbol}: {rule}")]
    Ordering { symbol: String, rule: String },
    #[error("{file}: {source}")]
    Csv {
        file: String,
        #[source]
        source: csv::Error,
    },
}

/// One trading day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyBar {
    pub date: NaiveDate,
    pub avg_price: Option<f64>,
    pub volume_shares: f64,
    pub volume_currency: Option<f64>,
    pub high: Option<f64>,
    pub low: Option<f64>,
}

impl DailyBar {
    pub fn new(date: NaiveDate, avg_price: f64, volume_shares: f64) -> Self {
        DailyBar {
            date,
            avg_price: Some(avg_price),
            volume_shares,
            volume_currency: None,
            high: None,
            low: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    InitialIpo,
    SecondaryOffering,
    Cancellation,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::InitialIpo => "initial_ipo",
            EventKind::SecondaryOffering => "secondary_offering",
            EventKind::Cancellation => "cancellation",
        }
    }

    /// Ordering of same-day events relative to the day's bar: offerings
    /// before it, cancellations after it.
    pub fn applies_before_bar(self) -> bool {
        !matches!(self, EventKind::Cancellation)
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "initial_ipo" => Ok(EventKind::InitialIpo),
            "secondary_offering" => Ok(EventKind::SecondaryOffering),
            "cancellation" => Ok(EventKind::Cancellation),
            other => Err(other.to_string()),
        }
    }
}

/// A dated change of the free float.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatEvent {
    pub date: NaiveDate,
    pub kind: EventKind,
    pub shares: f64,
    /// Required for IPOs and offerings; cancellations execute at the market.
    pub price: Option<f64>,
}

impl FloatEvent {
    pub fn initial_ipo(date: NaiveDate, shares: f64, price: f64) -> Self {
        FloatEvent {
            date,
            kind: EventKind::InitialIpo,
            shares,
            price: Some(price),
        }
    }

    pub fn offering(date: NaiveDate, shares: f64, price: f64) -> Self {
        FloatEvent {
            date,
            kind: EventKind::SecondaryOffering,
            shares,
            price: Some(price),
        }
    }

    pub fn cancellation(date: NaiveDate, shares: f64) -> Self {
        FloatEvent {
            date,
            kind: EventKind::Cancellation,
            shares,
            price: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSeries {
    pub symbol: String,
    pub bars: Vec<DailyBar>,
    pub events: Vec<FloatEvent>,
}

impl InstrumentSeries {
    pub fn ipo(&self) -> &FloatEvent {
        self.events
            .iter()
            .find(|e| e.kind == EventKind::InitialIpo)
            .expect("assembled series always carries an initial_ipo")
    }

    pub fn first_date(&self) -> NaiveDate {
        self.ipo().date
    }

    pub fn last_date(&self) -> NaiveDate {
        self.bars.last().map(|b| b.date).unwrap_or(self.ipo().date)
    }
}

/// How the average price of a bar is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AvgPriceMode {
    /// Use the `avg_price` column only.
    Explicit,
    /// Currency volume divided by share volume.
    CurrencyOverShares,
    /// Midpoint of the day's high and low.
    HighLowMid,
    /// Explicit, else currency over shares, else high/low midpoint.
    #[default]
    Auto,
}

impl FromStr for AvgPriceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "explicit" => Ok(AvgPriceMode::Explicit),
            "currency_over_shares" => Ok(AvgPriceMode::CurrencyOverShares),
            "high_low_mid" => Ok(AvgPriceMode::HighLowMid),
            "auto" => Ok(AvgPriceMode::Auto),
            other => Err(format!(
                "unknown avg price mode `{other}` (explicit|currency_over_shares|high_low_mid|auto)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BarFormat {
    pub avg_price_mode: AvgPriceMode,
}

fn route_currency(bar: &DailyBar) -> Result<f64, String> {
    let currency = bar
        .volume_currency
        .ok_or_else(|| "no volume_currency".to_string())?;
    if bar.volume_shares <= 0.0 {
        return Err("volume_currency given but volume_shares is zero".into());
    }
    Ok(currency / bar.volume_shares)
}

fn route_midpoint(bar: &DailyBar) -> Result<f64, String> {
    match (bar.high, bar.low) {
        (Some(h), Some(l)) => Ok((h + l) / 2.0),
        _ => Err("high/low pair incomplete".into()),
    }
}

/// Fill `avg_price` using the first available route: explicit value,
/// currency over shares, then the high/low midpoint.
pub fn derive_avg_price(bar: &DailyBar) -> Result<DailyBar, DataError> {
    derive_avg_price_with(bar, AvgPriceMode::Auto)
}

pub fn derive_avg_price_with(bar: &DailyBar, mode: AvgPriceMode) -> Result<DailyBar, DataError> {
    let price = match mode {
        AvgPriceMode::Explicit => bar.avg_price.ok_or_else(|| "avg_price missing".to_string()),
        AvgPriceMode::CurrencyOverShares => route_currency(bar),
        AvgPriceMode::HighLowMid => route_midpoint(bar),
        AvgPriceMode::Auto => match bar.avg_price {
            Some(p) => Ok(p),
            None => route_currency(bar)
                .or_else(|e1| route_midpoint(bar).map_err(|e2| format!("{e1}; {e2}"))),
        },
    };
    let price = price.map_err(|reason| DataError::NoPriceRoute {
        date: bar.date,
        reason,
    })?;
    if !(price.is_finite() && price > 0.0) {
        return Err(DataError::NoPriceRoute {
            date: bar.date,
            reason: format!("derived price {price} is not positive"),
        });
    }
    Ok(DailyBar {
        avg_price: Some(price),
        ..bar.clone()
    })
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(source)
}

struct Columns {
    names: Vec<String>,
}

impl Columns {
    fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    fn require(&self, file: &str, name: &str) -> Result<usize, DataError> {
        self.index(name).ok_or_else(|| DataError::MissingColumn {
            file: file.to_string(),
            column: name.to_string(),
        })
    }
}

struct Row<'a> {
    file: &'a str,
    line: u64,
    record: &'a csv::StringRecord,
}

impl Row<'_> {
    fn cell(&self, idx: Option<usize>) -> Option<&str> {
        idx.and_then(|i| self.record.get(i))
            .filter(|s| !s.is_empty())
    }

    fn malformed(&self, reason: impl Into<String>) -> DataError {
        DataError::Malformed {
            file: self.file.to_string(),
            line: self.line,
            reason: reason.into(),
        }
    }

    fn date(&self, idx: usize) -> Result<NaiveDate, DataError> {
        let raw = self.cell(Some(idx)).unwrap_or("");
        NaiveDate::parse_from_str(raw, DATE_FORMAT).map_err(|_| DataError::BadDate {
            file: self.file.to_string(),
            line: self.line,
            value: raw.to_string(),
        })
    }

    fn number(&self, idx: Option<usize>, column: &str) -> Result<Option<f64>, DataError> {
        match self.cell(idx) {
            None => Ok(None),
            Some(raw) => {
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(Some(v)),
                    _ => Err(self
                        .malformed(format!("column `{column}`: `{raw}` is not a finite number"))),
                }
            }
        }
    }

    fn positive(&self, idx: Option<usize>, column: &str) -> Result<Option<f64>, DataError> {
        match self.number(idx, column)? {
            Some(v) if v <= 0.0 => {
                Err(self.malformed(format!("column `{column}` must be > 0, got {v}")))
            }
            other => Ok(other),
        }
    }
}

fn line_of(record: &csv::StringRecord, fallback: u64) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(fallback)
}

/// Parse a bars CSV. `file` names the source in error messages.
pub fn parse_bars<R: Read>(
    source: R,
    file: &str,
    format: &BarFormat,
) -> Result<Vec<DailyBar>, DataError> {
    let mut reader = csv_reader(source);
    let csv_err = |source| DataError::Csv {
        file: file.to_string(),
        source,
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let cols = Columns {
        names: headers.iter().map(|h| h.to_string()).collect(),
    };
    let date_idx = cols.require(file, "date")?;
    let vol_idx = cols.require(file, "volume_shares")?;
    let avg_idx = cols.index("avg_price");
    let cur_idx = cols.index("volume_currency");
    let high_idx = cols.index("high");
    let low_idx = cols.index("low");
    let has_route = match format.avg_price_mode {
        AvgPriceMode::Explicit => avg_idx.is_some(),
        AvgPriceMode::CurrencyOverShares => cur_idx.is_some(),
        AvgPriceMode::HighLowMid => high_idx.is_some() && low_idx.is_some(),
        AvgPriceMode::Auto => {
            avg_idx.is_some() || cur_idx.is_some() || (high_idx.is_some() && low_idx.is_some())
        }
    };
    if !has_route {
        let column = match format.avg_price_mode {
            AvgPriceMode::Explicit | AvgPriceMode::Auto => "avg_price",
            AvgPriceMode::CurrencyOverShares => "volume_currency",
            AvgPriceMode::HighLowMid => {
                if high_idx.is_none() {
                    "high"
                } else {
                    "low"
                }
            }
        };
        return Err(DataError::MissingColumn {
            file: file.to_string(),
            column: column.to_string(),
        });
    }

    let mut bars: Vec<(u64, DailyBar)> = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = Row {
            file,
            line: line_of(&record, n as u64 + 2),
            record: &record,
        };
        let date = row.date(date_idx)?;
        let volume_shares = row
            .number(Some(vol_idx), "volume_shares")?
            .ok_or_else(|| row.malformed("column `volume_shares` is empty"))?;
        if volume_shares < 0.0 {
            return Err(row.malformed(format!("volume_shares must be >= 0, got {volume_shares}")));
        }
        let bar = DailyBar {
            date,
            avg_price: row.positive(avg_idx, "avg_price")?,
            volume_shares,
            volume_currency: match row.number(cur_idx, "volume_currency")? {
                Some(v) if v < 0.0 => return Err(row.malformed("volume_currency must be >= 0")),
                other => other,
            },
            high: row.positive(high_idx, "high")?,
            low: row.positive(low_idx, "low")?,
        };
        if let (Some(h), Some(l)) = (bar.high, bar.low) {
            if l > h {
                return Err(row.malformed(format!("low {l} exceeds high {h}")));
            }
        }
        let bar = if volume_shares > 0.0 {
            derive_avg_price_with(&bar, format.avg_price_mode)
                .map_err(|e| row.malformed(e.to_string()))?
        } else {
            // Halt day: best effort, a missing price is tolerated.
            derive_avg_price(&bar).unwrap_or(bar)
        };
        bars.push((row.line, bar));
    }

    bars.sort_by_key(|(_, b)| b.date);
    for pair in bars.windows(2) {
        if pair[0].1.date == pair[1].1.date {
            return Err(DataError::DuplicateDate {
                file: file.to_string(),
                line: pair[0].0.max(pair[1].0),
                date: pair[1].1.date,
            });
        }
    }
    Ok(bars.into_iter().map(|(_, b)| b).collect())
}

/// Parse a float-events CSV (`date,kind,shares,price`).
pub fn parse_events<R: Read>(source: R, file: &str) -> Result<Vec<FloatEvent>, DataError> {
    let mut reader = csv_reader(source);
    let csv_err = |source| DataError::Csv {
        file: file.to_string(),
        source,
    };
    let headers = reader.headers().map_err(csv_err)?.clone();
    let cols = Columns {
        names: headers.iter().map(|h| h.to_string()).collect(),
    };
    let date_idx = cols.require(file, "date")?;
    let kind_idx = cols.require(file, "kind")?;
    let shares_idx = cols.require(file, "shares")?;
    let price_idx = cols.index("price");

    let mut seen = HashSet::new();
    let mut events = Vec::new();
    for (n, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        let row = Row {
            file,
            line: line_of(&record, n as u64 + 2),
            record: &record,
        };
        let date = row.date(date_idx)?;
        let raw_kind = row.cell(Some(kind_idx)).unwrap_or("");
        let kind: EventKind = raw_kind.parse().map_err(|kind| DataError::UnknownKind {
            file: file.to_string(),
            line: row.line,
            kind,
        })?;
        let shares = row
            .positive(Some(shares_idx), "shares")?
            .ok_or_else(|| row.malformed("column `shares` is empty"))?;
        let price = match kind {
            EventKind::Cancellation => None,
            _ => Some(
                row.positive(price_idx, "price")?
                    .ok_or_else(|| row.malformed(format!("{kind} requires a price")))?,
            ),
        };
        if !seen.insert((date, kind)) {
            return Err(row.malformed(format!("duplicate {kind} event on {date}")));
        }
        events.push(FloatEvent {
            date,
            kind,
            shares,
            price,
        });
    }

    let found = events
        .iter()
        .filter(|e| e.kind == EventKind::InitialIpo)
        .count();
    if found != 1 {
        return Err(DataError::IpoCount {
            file: file.to_string(),
            found,
        });
    }
    events.sort_by_key(|e| (e.date, e.kind));
    Ok(events)
}

/// Merge bars and events into one validated series.
pub fn assemble_series(
    bars: Vec<DailyBar>,
    events: Vec<FloatEvent>,
    symbol: &str,
) -> Result<InstrumentSeries, DataError> {
    let rule = |rule: String| DataError::Ordering {
        symbol: symbol.to_string(),
        rule,
    };
    let ipos: Vec<&FloatEvent> = events
        .iter()
        .filter(|e| e.kind == EventKind::InitialIpo)
        .collect();
    if ipos.len() != 1 {
        return Err(rule(format!(
            "exactly one initial_ipo event required, found {}",
            ipos.len()
        )));
    }
    let ipo = ipos[0].clone();
    if !(ipo.shares > 0.0 && ipo.price.is_some_and(|p| p > 0.0)) {
        return Err(rule("initial_ipo needs positive shares and price".into()));
    }

    let mut bars = bars;
    bars.sort_by_key(|b| b.date);
    for pair in bars.windows(2) {
        if pair[0].date >= pair[1].date {
            return Err(rule(format!(
                "bars must have unique dates, {} repeats",
                pair[1].date
            )));
        }
    }
    for bar in &bars {
        if bar.volume_shares < 0.0 || !bar.volume_shares.is_finite() {
            return Err(rule(format!(
                "bar {}: volume_shares must be >= 0",
                bar.date
            )));
        }
        match bar.avg_price {
            Some(p) if !(p.is_finite() && p > 0.0) => {
                return Err(rule(format!("bar {}: avg_price must be > 0", bar.date)))
            }
            None if bar.volume_shares > 0.0 => {
                return Err(rule(format!(
                    "bar {}: traded day without avg_price",
                    bar.date
                )))
            }
            _ => {}
        }
    }

    if let Some(first) = bars.first() {
        if ipo.date >= first.date {
            return Err(rule(format!(
                "initial_ipo ({}) must precede the first bar ({})",
                ipo.date, first.date
            )));
        }
    }
    let last = bars.last().map(|b| b.date).unwrap_or(ipo.date);

    let mut events = events;
    events.sort_by_key(|e| (e.date, e.kind));
    let mut seen = HashSet::new();
    for ev in &events {
        if !seen.insert((ev.date, ev.kind)) {
            return Err(rule(format!("duplicate {} event on {}", ev.kind, ev.date)));
        }
        if ev.kind == EventKind::InitialIpo {
            continue;
        }
        if ev.date < ipo.date || ev.date > last {
            return Err(rule(format!(
                "{} event on {} lies outside [{}, {}]",
                ev.kind, ev.date, ipo.date, last
            )));
        }
        if ev.shares.is_nan() || ev.shares <= 0.0 {
            return Err(rule(format!(
                "{} event on {} needs shares > 0",
                ev.kind, ev.date
            )));
        }
        if ev.kind == EventKind::SecondaryOffering && !ev.price.is_some_and(|p| p > 0.0) {
            return Err(rule(format!(
                "secondary_offering on {} needs a price > 0",
                ev.date
            )));
        }
    }

    Ok(InstrumentSeries {
        symbol: symbol.to_string(),
        bars,
        events,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Write bars in the canonical column order. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn write_bars<W: Write>(out: W, bars: &[DailyBar]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record([
        "date",
        "avg_price",
        "volume_shares",
        "volume_currency",
        "high",
        "low",
    ])?;
    for b in bars {
        w.write_record([
            b.date.format(DATE_FORMAT).to_string(),
            opt(b.avg_price),
            b.volume_shares.to_string(),
            opt(b.volume_currency),
            opt(b.high),
            opt(b.low),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events<W: Write>(out: W, events: &[FloatEvent]) -> Result<(), csv::Error> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(["date", "kind", "shares", "price"])?;
    for e in events {
        w.write_record([
            e.date.format(DATE_FORMAT).to_string(),
            e.kind.to_string(),
            e.shares.to_string(),
            opt(e.price),
        ])?;
    }
    w.flush()?;
    Ok(())
}
