//! Plot-ready output files and their readers.

use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backtest::{AgentResult, SummaryRow};
use crate::book::{HistogramBin, IndexPoint};
use crate::market_data::DATE_FORMAT;

pub const INDEX_HEADER: [&str; 6] = [
    "date",
    "price",
    "vwap",
    "rho",
    "vdi_fraction",
    "vds_fraction",
];
pub const HISTOGRAM_HEADER: [&str; 2] = ["bin_low", "fraction"];
pub const AGENTS_HEADER: [&str; 3] = ["theta", "n_operations", "total_return"];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {reason}")]
    Malformed { line: u64, reason: String },
}

/// Round to 12 significant digits.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// Shortest decimal text of `x` rounded to 12 significant digits.
pub fn fmt_num(x: f64) -> String {
    let r = round_sig(x);
    // normalise -0 so outputs do not depend on the sign of zero
    if r == 0.0 {
        "0".to_string()
    } else {
        r.to_string()
    }
}

fn writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

fn records<R: Read>(
    source: R,
    header: &[&str],
) -> Result<impl Iterator<Item = Result<(u64, csv::StringRecord), ReportError>>, ReportError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    let found: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if found != header {
        return Err(ReportError::Malformed {
            line: 1,
            reason: format!(
                "expected header {}, found {}",
                header.join(","),
                found.join(",")
            ),
        });
    }
    Ok(reader.into_records().enumerate().map(|(i, r)| {
        let r = r?;
        let line = r.position().map(|p| p.line()).unwrap_or(i as u64 + 2);
        Ok((line, r))
    }))
}

fn field<T: std::str::FromStr>(
    rec: &csv::StringRecord,
    line: u64,
    idx: usize,
) -> Result<T, ReportError> {
    let raw = rec.get(idx).unwrap_or("");
    raw.parse().map_err(|_| ReportError::Malformed {
        line,
        reason: format!("field {idx}: cannot parse `{raw}`"),
    })
}

fn date_field(rec: &csv::StringRecord, line: u64, idx: usize) -> Result<NaiveDate, ReportError> {
    let raw = rec.get(idx).unwrap_or("");
    NaiveDate::parse_from_str(raw, DATE_FORMAT).map_err(|_| ReportError::Malformed {
        line,
        reason: format!("bad date `{raw}`"),
    })
}

pub fn write_index_csv<W: Write>(out: W, points: &[IndexPoint]) -> Result<(), ReportError> {
    let mut w = writer(out);
    w.write_record(INDEX_HEADER)?;
    for p in points {
        w.write_record([
            p.date.format(DATE_FORMAT).to_string(),
            fmt_num(p.price),
            fmt_num(p.vwap),
            fmt_num(p.rho),
            fmt_num(p.vdi_fraction),
            fmt_num(p.vds_fraction),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_index_csv<R: Read>(source: R) -> Result<Vec<IndexPoint>, ReportError> {
    records(source, &INDEX_HEADER)?
        .map(|r| {
            let (line, rec) = r?;
            Ok(IndexPoint {
                date: date_field(&rec, line, 0)?,
                price: field(&rec, line, 1)?,
                vwap: field(&rec, line, 2)?,
                rho: field(&rec, line, 3)?,
                vdi_fraction: field(&rec, line, 4)?,
                vds_fraction: field(&rec, line, 5)?,
            })
        })
        .collect()
}

pub fn write_histogram_csv<W: Write>(out: W, bins: &[HistogramBin]) -> Result<(), ReportError> {
    let mut w = writer(out);
    w.write_record(HISTOGRAM_HEADER)?;
    for b in bins {
        w.write_record([fmt_num(b.bin_low), fmt_num(b.fraction)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_histogram_csv<R: Read>(source: R) -> Result<Vec<HistogramBin>, ReportError> {
    records(source, &HISTOGRAM_HEADER)?
        .map(|r| {
            let (line, rec) = r?;
            Ok(HistogramBin {
                bin_low: field(&rec, line, 0)?,
                fraction: field(&rec, line, 1)?,
            })
        })
        .collect()
}

pub fn write_agents_csv<W: Write>(out: W, rows: &[SummaryRow]) -> Result<(), ReportError> {
    let mut w = writer(out);
    w.write_record(AGENTS_HEADER)?;
    for r in rows {
        w.write_record([
            fmt_num(r.theta),
            r.n_operations.to_string(),
            fmt_num(r.total_return),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_agents_csv<R: Read>(source: R) -> Result<Vec<SummaryRow>, ReportError> {
    records(source, &AGENTS_HEADER)?
        .map(|r| {
            let (line, rec) = r?;
            Ok(SummaryRow {
                theta: field(&rec, line, 0)?,
                n_operations: field(&rec, line, 1)?,
                total_return: field(&rec, line, 2)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeJson {
    pub buy_date: NaiveDate,
    pub buy_price: f64,
    pub sell_date: NaiveDate,
    pub sell_price: f64,
    pub forced_close: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentJson {
    pub theta: f64,
    pub n_operations: usize,
    pub total_return: f64,
    pub trades: Vec<TradeJson>,
}

impl From<&AgentResult> for AgentJson {
    fn from(r: &AgentResult) -> Self {
        AgentJson {
            theta: round_sig(r.theta),
            n_operations: r.n_operations,
            total_return: round_sig(r.total_return),
            trades: r
                .trades
                .iter()
                .map(|t| TradeJson {
                    buy_date: t.buy_date,
                    buy_price: round_sig(t.buy_price),
                    sell_date: t.sell_date,
                    sell_price: round_sig(t.sell_price),
                    forced_close: t.forced_close,
                })
                .collect(),
        }
    }
}

/// Per-agent trade lists, ordered by theta.
pub fn write_trades_json<W: Write>(mut out: W, results: &[AgentResult]) -> Result<(), ReportError> {
    let mut agents: Vec<AgentJson> = results.iter().map(AgentJson::from).collect();
    agents.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    serde_json::to_writer_pretty(&mut out, &agents)?;
    out.write_all(b"\n")?;
    Ok(())
}

pub fn read_trades_json<R: Read>(source: R) -> Result<Vec<AgentJson>, ReportError> {
    Ok(serde_json::from_reader(source)?)
}
