//! The volume book: who still holds how much of the free float, and at
//! what acquisition price.
//!
//! Each trading day the day's volume is assumed to be sold by all current
//! holders in proportion to their holdings, so every entry is scaled by
//! `1 - v_new / free_float` and the day's volume is booked at the day's
//! average price. The sum of entries (plus the pruned residue) stays equal
//! to the free float.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::market_data::{DailyBar, EventKind, FloatEvent, InstrumentSeries};

/// Entries below this fraction of the free float are dropped.
pub const PRUNE_FRACTION: f64 = 1e-12;

pub const DEFAULT_TICK: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BookError {
    #[error("{date}: expected {expected} event, got {got}")]
    WrongKind {
        date: NaiveDate,
        expected: &'static str,
        got: EventKind,
    },
    #[error("{date}: {what} must be > 0, got {value}")]
    NonPositive {
        date: NaiveDate,
        what: &'static str,
        value: f64,
    },
    #[error("{date}: not after the last applied day {last}")]
    NonChronological { date: NaiveDate, last: NaiveDate },
    #[error("{date}: traded volume {volume} reaches the free float {free_float} (turnover cap)")]
    TurnoverExceeded {
        date: NaiveDate,
        volume: f64,
        free_float: f64,
    },
    #[error("{date}: cancellation of {shares} shares would empty the free float {free_float}")]
    CancellationTooLarge {
        date: NaiveDate,
        shares: f64,
        free_float: f64,
    },
    #[error("{date}: traded day without an average price")]
    MissingPrice { date: NaiveDate },
    #[error("book is empty")]
    EmptyBook,
    #[error("{what} must be > 0, got {value}")]
    BadParameter { what: &'static str, value: f64 },
}

/// What happens when a day's volume reaches the whole free float.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TurnoverMode {
    #[default]
    Error,
    /// Replace the book by a single entry at the day's price.
    Clamp,
}

impl std::str::FromStr for TurnoverMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "error" => Ok(TurnoverMode::Error),
            "clamp" => Ok(TurnoverMode::Clamp),
            other => Err(format!("unknown turnover mode `{other}` (error|clamp)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BookConfig {
    pub tick: f64,
    pub turnover: TurnoverMode,
}

impl Default for BookConfig {
    fn default() -> Self {
        BookConfig {
            tick: DEFAULT_TICK,
            turnover: TurnoverMode::Error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookEntry {
    pub price: f64,
    pub volume: f64,
    pub origin_date: NaiveDate,
}

/// A float event as it was applied, with the market price at that moment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatRecord {
    pub date: NaiveDate,
    pub kind: EventKind,
    pub shares: f64,
    pub price: f64,
    pub free_float_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexPoint {
    pub date: NaiveDate,
    pub price: f64,
    pub vwap: f64,
    pub rho: f64,
    pub vdi_fraction: f64,
    pub vds_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub bin_low: f64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RhoParts {
    pub rho: f64,
    pub vdi_fraction: f64,
    pub vds_fraction: f64,
}

#[derive(Debug, Clone)]
pub struct VolumeBook {
    // keyed by price in ticks
    entries: BTreeMap<i64, BookEntry>,
    free_float: f64,
    pruned_mass: f64,
    last_date: NaiveDate,
    config: BookConfig,
    log: Vec<FloatRecord>,
}

impl VolumeBook {
    /// Seed a book from the initial public offering: the whole float held
    /// at the offer price.
    pub fn init(ipo: &FloatEvent, config: BookConfig) -> Result<Self, BookError> {
        if ipo.kind != EventKind::InitialIpo {
            return Err(BookError::WrongKind {
                date: ipo.date,
                expected: "initial_ipo",
                got: ipo.kind,
            });
        }
        if !(config.tick.is_finite() && config.tick > 0.0) {
            return Err(BookError::BadParameter {
                what: "tick",
                value: config.tick,
            });
        }
        check_positive(ipo.date, "ipo shares", ipo.shares)?;
        let price = ipo.price.unwrap_or(f64::NAN);
        check_positive(ipo.date, "ipo price", price)?;

        let mut book = VolumeBook {
            entries: BTreeMap::new(),
            free_float: ipo.shares,
            pruned_mass: 0.0,
            last_date: ipo.date,
            config,
            log: Vec::new(),
        };
        book.insert(price, ipo.shares, ipo.date);
        book.log.push(FloatRecord {
            date: ipo.date,
            kind: ipo.kind,
            shares: ipo.shares,
            price,
            free_float_after: ipo.shares,
        });
        Ok(book)
    }

    pub fn free_float(&self) -> f64 {
        self.free_float
    }

    pub fn pruned_mass(&self) -> f64 {
        self.pruned_mass
    }

    pub fn last_date(&self) -> NaiveDate {
        self.last_date
    }

    pub fn config(&self) -> BookConfig {
        self.config
    }

    pub fn log(&self) -> &[FloatRecord] {
        &self.log
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in ascending price order.
    pub fn entries(&self) -> impl Iterator<Item = &BookEntry> {
        self.entries.values()
    }

    /// Entries keyed by their price tick.
    pub fn ticks(&self) -> impl Iterator<Item = (i64, &BookEntry)> {
        self.entries.iter().map(|(k, e)| (*k, e))
    }

    pub fn live_mass(&self) -> f64 {
        self.entries.values().map(|e| e.volume).sum()
    }

    pub fn tick_of(&self, price: f64) -> i64 {
        (price / self.config.tick).round() as i64
    }

    fn insert(&mut self, price: f64, volume: f64, date: NaiveDate) {
        if volume <= 0.0 {
            return;
        }
        let key = self.tick_of(price);
        let tick = self.config.tick;
        self.entries
            .entry(key)
            .and_modify(|e| e.volume += volume)
            .or_insert(BookEntry {
                price: key as f64 * tick,
                volume,
                origin_date: date,
            });
    }

    fn decay(&mut self, factor: f64) {
        for e in self.entries.values_mut() {
            e.volume *= factor;
        }
        // the pruned residue is a phantom holder and sells like the others
        self.pruned_mass *= factor;
    }

    fn prune(&mut self) {
        let floor = PRUNE_FRACTION * self.free_float;
        let mut removed = 0.0;
        self.entries.retain(|_, e| {
            let keep = e.volume >= floor;
            if !keep {
                removed += e.volume;
            }
            keep
        });
        self.pruned_mass += removed;
    }

    /// Book one trading day.
    pub fn apply_trading_day(&mut self, bar: &DailyBar) -> Result<(), BookError> {
        if bar.date <= self.last_date {
            return Err(BookError::NonChronological {
                date: bar.date,
                last: self.last_date,
            });
        }
        let volume = bar.volume_shares;
        if !(volume.is_finite() && volume >= 0.0) {
            return Err(BookError::NonPositive {
                date: bar.date,
                what: "volume_shares",
                value: volume,
            });
        }
        if volume == 0.0 {
            self.last_date = bar.date;
            return Ok(());
        }
        let price = bar
            .avg_price
            .ok_or(BookError::MissingPrice { date: bar.date })?;
        check_positive(bar.date, "avg_price", price)?;

        if volume >= self.free_float {
            match self.config.turnover {
                TurnoverMode::Error => {
                    return Err(BookError::TurnoverExceeded {
                        date: bar.date,
                        volume,
                        free_float: self.free_float,
                    })
                }
                TurnoverMode::Clamp => {
                    self.entries.clear();
                    self.pruned_mass = 0.0;
                    let float = self.free_float;
                    self.insert(price, float, bar.date);
                    self.last_date = bar.date;
                    return Ok(());
                }
            }
        }

        self.decay(1.0 - volume / self.free_float);
        self.insert(price, volume, bar.date);
        self.prune();
        self.last_date = bar.date;
        Ok(())
    }

    /// Apply an offering or a cancellation. `current_price` is the market
    /// price at the time; it is logged for cancellations but does not enter
    /// the arithmetic.
    pub fn apply_float_event(
        &mut self,
        event: &FloatEvent,
        current_price: f64,
    ) -> Result<(), BookError> {
        if event.date < self.last_date {
            return Err(BookError::NonChronological {
                date: event.date,
                last: self.last_date,
            });
        }
        check_positive(event.date, "event shares", event.shares)?;
        let logged_price = match event.kind {
            EventKind::InitialIpo => {
                return Err(BookError::WrongKind {
                    date: event.date,
                    expected: "secondary_offering or cancellation",
                    got: event.kind,
                })
            }
            EventKind::SecondaryOffering => {
                let price = event.price.unwrap_or(f64::NAN);
                check_positive(event.date, "offering price", price)?;
                self.free_float += event.shares;
                self.insert(price, event.shares, event.date);
                price
            }
            EventKind::Cancellation => {
                if event.shares >= self.free_float {
                    return Err(BookError::CancellationTooLarge {
                        date: event.date,
                        shares: event.shares,
                        free_float: self.free_float,
                    });
                }
                self.decay(1.0 - event.shares / self.free_float);
                self.free_float -= event.shares;
                self.prune();
                current_price
            }
        };
        self.log.push(FloatRecord {
            date: event.date,
            kind: event.kind,
            shares: event.shares,
            price: logged_price,
            free_float_after: self.free_float,
        });
        Ok(())
    }

    /// Volume-weighted mean acquisition price of the live entries.
    pub fn vwap(&self) -> Result<f64, BookError> {
        if self.entries.is_empty() {
            return Err(BookError::EmptyBook);
        }
        let (pv, v) = self.entries.values().fold((0.0, 0.0), |(pv, v), e| {
            (pv + e.price * e.volume, v + e.volume)
        });
        Ok(pv / v)
    }

    /// Price at which half of the live volume sits at or below.
    pub fn weighted_median(&self) -> Result<f64, BookError> {
        let half = self.live_mass() / 2.0;
        let mut acc = 0.0;
        for e in self.entries.values() {
            acc += e.volume;
            if acc >= half {
                return Ok(e.price);
            }
        }
        self.entries
            .values()
            .next_back()
            .map(|e| e.price)
            .ok_or(BookError::EmptyBook)
    }

    /// Fraction of the float bought strictly below `price` minus the
    /// fraction bought strictly above it. Volume on the price's own tick
    /// counts in neither.
    pub fn rho(&self, price: f64) -> RhoParts {
        let key = self.tick_of(price);
        let below: f64 = self.entries.range(..key).map(|(_, e)| e.volume).sum();
        let above: f64 = self
            .entries
            .range(key.saturating_add(1)..)
            .map(|(_, e)| e.volume)
            .sum();
        // summation rounding can push a one-sided sum an ulp past the float
        let vdi_fraction = (below / self.free_float).min(1.0);
        let vds_fraction = (above / self.free_float).min(1.0);
        RhoParts {
            rho: vdi_fraction - vds_fraction,
            vdi_fraction,
            vds_fraction,
        }
    }

    pub fn index_point(&self, date: NaiveDate, price: f64) -> Result<IndexPoint, BookError> {
        let parts = self.rho(price);
        Ok(IndexPoint {
            date,
            price,
            vwap: self.vwap()?,
            rho: parts.rho,
            vdi_fraction: parts.vdi_fraction,
            vds_fraction: parts.vds_fraction,
        })
    }

    /// Remaining volume per price bucket, as fractions of the free float.
    pub fn histogram(&self, bin_width: f64) -> Result<Vec<HistogramBin>, BookError> {
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(BookError::BadParameter {
                what: "bin_width",
                value: bin_width,
            });
        }
        let mut bins: BTreeMap<i64, f64> = BTreeMap::new();
        for e in self.entries.values() {
            *bins.entry(bucket_of(e.price, bin_width)).or_default() += e.volume;
        }
        Ok(bins
            .into_iter()
            .map(|(k, v)| HistogramBin {
                bin_low: k as f64 * bin_width,
                fraction: v / self.free_float,
            })
            .collect())
    }
}

// floor(price / width), tolerant of prices that sit on a bucket edge up to
// rounding noise (tick-rounded prices divided by a tick-sized width).
fn bucket_of(price: f64, width: f64) -> i64 {
    let q = price / width;
    let r = q.round();
    if (q - r).abs() <= 1e-9 * r.abs().max(1.0) {
        r as i64
    } else {
        q.floor() as i64
    }
}

fn check_positive(date: NaiveDate, what: &'static str, value: f64) -> Result<(), BookError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(BookError::NonPositive { date, what, value })
    }
}

/// One applied step of a series replay.
pub struct Step<'a> {
    pub date: NaiveDate,
    pub book: &'a VolumeBook,
    /// Present for trading days, absent after float events.
    pub point: Option<&'a IndexPoint>,
    pub event: Option<&'a FloatEvent>,
}

#[derive(Debug, Clone)]
pub struct SeriesRun {
    pub points: Vec<IndexPoint>,
    pub book: VolumeBook,
}

/// Replay a whole series: seed from the IPO, then per calendar day apply
/// offerings, the bar, and cancellations, emitting one point per bar.
pub fn run_series(series: &InstrumentSeries, config: BookConfig) -> Result<SeriesRun, BookError> {
    run_series_until(series, config, None, |_| {})
}

/// Like [`run_series`], calling `observe` after every applied step and
/// stopping after `until` when given.
pub fn run_series_until<F>(
    series: &InstrumentSeries,
    config: BookConfig,
    until: Option<NaiveDate>,
    mut observe: F,
) -> Result<SeriesRun, BookError>
where
    F: FnMut(Step<'_>),
{
    let ipo = series.ipo();
    let mut book = VolumeBook::init(ipo, config)?;
    observe(Step {
        date: ipo.date,
        book: &book,
        point: None,
        event: Some(ipo),
    });
    let mut last_price = ipo.price.unwrap_or(f64::NAN);
    let mut points = Vec::with_capacity(series.bars.len());

    let mut events = series
        .events
        .iter()
        .filter(|e| e.kind != EventKind::InitialIpo)
        .peekable();
    let mut bars = series.bars.iter().peekable();

    loop {
        let next_event = events.peek().map(|e| e.date);
        let next_bar = bars.peek().map(|b| b.date);
        let date = match (next_event, next_bar) {
            (None, None) => break,
            (Some(a), Some(b)) => a.min(b),
            (Some(a), None) => a,
            (None, Some(b)) => b,
        };
        if until.is_some_and(|u| date > u) {
            break;
        }
        let bar = bars.next_if(|b| b.date == date);
        let todays: Vec<&FloatEvent> =
            std::iter::from_fn(|| events.next_if(|e| e.date == date)).collect();
        let today_price = bar.and_then(|b| b.avg_price);

        for ev in todays.iter().filter(|e| e.kind.applies_before_bar()) {
            book.apply_float_event(ev, today_price.unwrap_or(last_price))?;
            observe(Step {
                date,
                book: &book,
                point: None,
                event: Some(ev),
            });
        }
        if let Some(bar) = bar {
            book.apply_trading_day(bar)?;
            let price = match bar.avg_price {
                Some(p) => p,
                None => last_price,
            };
            last_price = price;
            let point = book.index_point(bar.date, price)?;
            points.push(point);
            observe(Step {
                date,
                book: &book,
                point: points.last(),
                event: None,
            });
        }
        for ev in todays.iter().filter(|e| !e.kind.applies_before_bar()) {
            book.apply_float_event(ev, last_price)?;
            observe(Step {
                date,
                book: &book,
                point: None,
                event: Some(ev),
            });
        }
    }
    Ok(SeriesRun { points, book })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2007, 4, day).unwrap()
    }

    fn book(entries: &[(f64, f64)]) -> VolumeBook {
        let float: f64 = entries.iter().map(|e| e.1).sum();
        let mut b = VolumeBook::init(
            &FloatEvent::initial_ipo(d(1), float, entries[0].0),
            BookConfig::default(),
        )
        .unwrap();
        b.entries.clear();
        for &(p, v) in entries {
            b.insert(p, v, d(1));
        }
        b
    }

    fn pairs(b: &VolumeBook) -> Vec<(f64, f64)> {
        b.entries().map(|e| (e.price, e.volume)).collect()
    }

    fn assert_pairs(b: &VolumeBook, expected: &[(f64, f64)]) {
        let got = pairs(b);
        assert_eq!(got.len(), expected.len(), "{got:?}");
        for (g, e) in got.iter().zip(expected) {
            assert!(
                (g.0 - e.0).abs() < 1e-12 && (g.1 - e.1).abs() < 1e-9,
                "{got:?} vs {expected:?}"
            );
        }
    }

    #[test]
    fn init_from_ipo() {
        let b = VolumeBook::init(
            &FloatEvent::initial_ipo(d(1), 5000.0, 8.0),
            BookConfig::default(),
        )
        .unwrap();
        assert_pairs(&b, &[(8.0, 5000.0)]);
        assert_eq!(b.free_float(), 5000.0);
        assert_eq!(b.vwap().unwrap(), 8.0);
        assert_eq!(b.rho(8.0).rho, 0.0);
    }

    #[test]
    fn init_rejects_bad_input() {
        let zero = FloatEvent::initial_ipo(d(1), 0.0, 8.0);
        assert!(matches!(
            VolumeBook::init(&zero, BookConfig::default()),
            Err(BookError::NonPositive { .. })
        ));
        let wrong = FloatEvent::offering(d(1), 10.0, 8.0);
        assert!(matches!(
            VolumeBook::init(&wrong, BookConfig::default()),
            Err(BookError::WrongKind { .. })
        ));
    }

    #[test]
    fn first_day_moves_volume_from_ipo() {
        let mut b = book(&[(8.0, 1000.0)]);
        b.apply_trading_day(&DailyBar::new(d(2), 12.0, 200.0))
            .unwrap();
        assert_pairs(&b, &[(8.0, 800.0), (12.0, 200.0)]);
    }

    #[test]
    fn decay_scales_every_entry() {
        let mut b = book(&[(10.0, 800.0), (12.0, 200.0)]);
        b.apply_trading_day(&DailyBar::new(d(2), 11.0, 100.0))
            .unwrap();
        assert_pairs(&b, &[(10.0, 720.0), (11.0, 100.0), (12.0, 180.0)]);
        assert!((b.live_mass() - 1000.0).abs() < 1e-9);
        assert!((b.vwap().unwrap() - 10.46).abs() < 1e-12);
    }

    #[test]
    fn same_tick_merges() {
        let mut b = book(&[(10.0, 1000.0)]);
        b.apply_trading_day(&DailyBar::new(d(2), 10.004, 100.0))
            .unwrap();
        assert_pairs(&b, &[(10.0, 1000.0)]);
    }

    #[test]
    fn zero_volume_day_is_noop() {
        let mut b = book(&[(10.0, 800.0), (12.0, 200.0)]);
        let before = pairs(&b);
        let mut bar = DailyBar::new(d(2), 11.0, 0.0);
        bar.avg_price = None;
        b.apply_trading_day(&bar).unwrap();
        assert_eq!(pairs(&b), before);
        assert_eq!(b.last_date(), d(2));
    }

    #[test]
    fn non_chronological_and_turnover() {
        let mut b = book(&[(10.0, 1000.0)]);
        b.apply_trading_day(&DailyBar::new(d(3), 11.0, 10.0))
            .unwrap();
        let err = b
            .apply_trading_day(&DailyBar::new(d(3), 11.0, 10.0))
            .unwrap_err();
        assert!(matches!(err, BookError::NonChronological { .. }));
        let err = b
            .apply_trading_day(&DailyBar::new(d(4), 11.0, 1000.0))
            .unwrap_err();
        assert_eq!(
            err,
            BookError::TurnoverExceeded {
                date: d(4),
                volume: 1000.0,
                free_float: 1000.0
            }
        );
        assert_eq!(b.last_date(), d(3));
    }

    #[test]
    fn clamp_mode_replaces_book() {
        let mut b = book(&[(10.0, 800.0), (12.0, 200.0)]);
        b.config.turnover = TurnoverMode::Clamp;
        b.apply_trading_day(&DailyBar::new(d(2), 11.0, 1500.0))
            .unwrap();
        assert_pairs(&b, &[(11.0, 1000.0)]);
    }

    #[test]
    fn offering_adds_float_and_entry() {
        let mut b = book(&[(10.0, 900.0), (12.0, 100.0)]);
        b.apply_float_event(&FloatEvent::offering(d(2), 1000.0, 11.0), 11.5)
            .unwrap();
        assert_pairs(&b, &[(10.0, 900.0), (11.0, 1000.0), (12.0, 100.0)]);
        assert_eq!(b.free_float(), 2000.0);
    }

    #[test]
    fn cancellation_shrinks_proportionally() {
        let mut b = book(&[(10.0, 800.0), (12.0, 200.0)]);
        b.apply_float_event(&FloatEvent::cancellation(d(2), 100.0), 11.0)
            .unwrap();
        assert_pairs(&b, &[(10.0, 720.0), (12.0, 180.0)]);
        assert_eq!(b.free_float(), 900.0);
        assert!((b.live_mass() - 900.0).abs() < 1e-9);
        let rec = b.log().last().unwrap();
        assert_eq!(rec.price, 11.0);
        assert_eq!(rec.kind, EventKind::Cancellation);
    }

    #[test]
    fn cancellation_cannot_empty_book() {
        let mut b = book(&[(10.0, 1000.0)]);
        let err = b
            .apply_float_event(&FloatEvent::cancellation(d(2), 1000.0), 10.0)
            .unwrap_err();
        assert!(matches!(err, BookError::CancellationTooLarge { .. }));
        let err = b
            .apply_float_event(&FloatEvent::initial_ipo(d(2), 10.0, 10.0), 10.0)
            .unwrap_err();
        assert!(matches!(err, BookError::WrongKind { .. }));
    }

    #[test]
    fn vwap_examples() {
        assert_eq!(book(&[(10.0, 500.0), (20.0, 500.0)]).vwap().unwrap(), 15.0);
        assert_eq!(book(&[(8.0, 5000.0)]).vwap().unwrap(), 8.0);
        let b = book(&[(10.0, 720.0), (12.0, 180.0), (11.0, 100.0)]);
        assert!((b.vwap().unwrap() - 10.46).abs() < 1e-12);
    }

    #[test]
    fn weighted_median_differs_from_mean() {
        let b = book(&[(10.0, 600.0), (20.0, 400.0)]);
        assert_eq!(b.weighted_median().unwrap(), 10.0);
        assert!((b.vwap().unwrap() - 14.0).abs() < 1e-12);
    }

    #[test]
    fn rho_examples() {
        let b = book(&[(10.0, 600.0), (20.0, 400.0)]);
        assert!((b.rho(15.0).rho - 0.2).abs() < 1e-12);
        assert_eq!(b.rho(25.0).rho, 1.0);
        assert_eq!(b.rho(5.0).rho, -1.0);
        let single = book(&[(10.0, 1000.0)]);
        let parts = single.rho(10.0);
        assert_eq!(
            (parts.rho, parts.vdi_fraction, parts.vds_fraction),
            (0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn histogram_examples() {
        let b = book(&[(10.0, 500.0), (20.0, 500.0)]);
        let h = b.histogram(1.0).unwrap();
        assert_eq!(
            h,
            vec![
                HistogramBin {
                    bin_low: 10.0,
                    fraction: 0.5
                },
                HistogramBin {
                    bin_low: 20.0,
                    fraction: 0.5
                }
            ]
        );
        let b = book(&[(10.2, 300.0), (10.7, 700.0)]);
        assert_eq!(
            b.histogram(1.0).unwrap(),
            vec![HistogramBin {
                bin_low: 10.0,
                fraction: 1.0
            }]
        );
        assert!(b.histogram(0.0).is_err());
        assert!(b.histogram(-1.0).is_err());
    }

    #[test]
    fn histogram_tick_width_keeps_each_level() {
        let b = book(&[(5.73, 683.0), (6.14, 9317.0)]);
        let h = b.histogram(DEFAULT_TICK).unwrap();
        assert_eq!(h.len(), 2);
        assert!((h[0].bin_low - 5.73).abs() < 1e-9);
        assert!((h[0].fraction - 0.0683).abs() < 1e-12);
    }

    #[test]
    fn pruning_moves_dust_to_residue() {
        let mut b = book(&[(10.0, 1.0)]);
        // 99.99% turnover a few times: the IPO entry decays past the floor
        for day in 2..8 {
            b.apply_trading_day(&DailyBar::new(d(day), 10.0 + day as f64, 0.9999))
                .unwrap();
        }
        assert!(b.entries().all(|e| e.price != 10.0));
        assert!(b.pruned_mass() > 0.0);
        let total = b.live_mass() + b.pruned_mass();
        assert!((total - b.free_float()).abs() <= 1e-9 * b.free_float());
    }

    fn series(bars: Vec<DailyBar>, events: Vec<FloatEvent>) -> InstrumentSeries {
        crate::market_data::assemble_series(bars, events, "T").unwrap()
    }

    #[test]
    fn two_day_hand_computation() {
        let s = series(
            vec![DailyBar::new(d(2), 12.0, 200.0)],
            vec![FloatEvent::initial_ipo(d(1), 1000.0, 10.0)],
        );
        let run = run_series(&s, BookConfig::default()).unwrap();
        assert_eq!(run.points.len(), 1);
        assert!((run.points[0].rho - 0.8).abs() < 1e-12);
        assert!((run.points[0].vwap - 10.4).abs() < 1e-12);
    }

    #[test]
    fn constant_price_series_is_neutral() {
        let bars = (2..20).map(|i| DailyBar::new(d(i), 10.0, 37.0)).collect();
        let s = series(bars, vec![FloatEvent::initial_ipo(d(1), 1000.0, 10.0)]);
        for p in run_series(&s, BookConfig::default()).unwrap().points {
            assert_eq!(p.rho, 0.0);
            assert!((p.vwap - 10.0).abs() < 1e-12);
        }
    }

    #[test]
    fn same_day_event_ordering() {
        // offering before the bar: the day's decay is computed on the enlarged float
        let s = series(
            vec![DailyBar::new(d(2), 12.0, 200.0)],
            vec![
                FloatEvent::initial_ipo(d(1), 1000.0, 10.0),
                FloatEvent::offering(d(2), 1000.0, 11.0),
                FloatEvent::cancellation(d(2), 500.0),
            ],
        );
        let run = run_series(&s, BookConfig::default()).unwrap();
        // after offering: 10:1000, 11:1000 (F=2000); bar 200 -> x0.9, +200 @12
        // cancellation 500 of 2000 -> x0.75, F=1500
        assert_pairs(&run.book, &[(10.0, 675.0), (11.0, 675.0), (12.0, 150.0)]);
        assert_eq!(run.book.free_float(), 1500.0);
        // the point is taken right after the bar, before the cancellation
        assert!((run.points[0].rho - 0.9).abs() < 1e-12);
        let log = run.book.log();
        assert_eq!(log.len(), 3);
        assert_eq!(log[2].price, 12.0);
    }

    #[test]
    fn errors_carry_the_date() {
        let s = series(
            vec![
                DailyBar::new(d(2), 12.0, 200.0),
                DailyBar::new(d(3), 12.0, 5000.0),
            ],
            vec![FloatEvent::initial_ipo(d(1), 1000.0, 10.0)],
        );
        let err = run_series(&s, BookConfig::default()).unwrap_err();
        assert!(err.to_string().contains("2007-04-03"), "{err}");
    }

    #[test]
    fn until_stops_early() {
        let bars = (2..10)
            .map(|i| DailyBar::new(d(i), 10.0 + i as f64, 10.0))
            .collect();
        let s = series(bars, vec![FloatEvent::initial_ipo(d(1), 1000.0, 10.0)]);
        let run = run_series_until(&s, BookConfig::default(), Some(d(4)), |_| {}).unwrap();
        assert_eq!(run.points.len(), 3);
        assert_eq!(run.book.last_date(), d(4));
    }
}
