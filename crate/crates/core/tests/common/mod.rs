#![allow(dead_code)]

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use floatbook::market_data::{assemble_series, DailyBar, FloatEvent, InstrumentSeries};
use rand::Rng;

pub fn day(n: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2007, 4, 1).unwrap() + Duration::days(n)
}

#[derive(Debug, Clone, Copy)]
pub struct GenSpec {
    pub min_days: usize,
    pub max_days: usize,
    /// Per-day probability of an offering and of a cancellation.
    pub event_rate: f64,
    /// Prices snapped to whole cents.
    pub grid_prices: bool,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            min_days: 250,
            max_days: 2000,
            event_rate: 0.0,
            grid_prices: false,
        }
    }
}

/// Random walk prices, turnover between 0 and 6% of the float, occasional
/// halt days, and optional offerings/cancellations.
pub fn random_series<R: Rng>(rng: &mut R, spec: GenSpec) -> InstrumentSeries {
    let n = rng.gen_range(spec.min_days..=spec.max_days);
    let mut float: f64 = rng.gen_range(1e5..1e8);
    let mut price: f64 = rng.gen_range(2.0..60.0);
    let snap = |p: f64| {
        if spec.grid_prices {
            ((p * 100.0).round() / 100.0).max(0.01)
        } else {
            p
        }
    };
    let ipo_price = snap(price);
    let mut events = vec![FloatEvent::initial_ipo(day(0), float, ipo_price)];
    let mut bars = Vec::with_capacity(n);
    let vol_sigma = rng.gen_range(0.005..0.04);

    for i in 1..=n as i64 {
        if rng.gen_bool(spec.event_rate) {
            let shares = float * rng.gen_range(0.01..0.5);
            events.push(FloatEvent::offering(
                day(i),
                shares,
                snap(price * rng.gen_range(0.8..1.2)),
            ));
            float += shares;
        }
        price *= (rng.gen_range(-1.0_f64..1.0) * vol_sigma * 1.7).exp();
        price = price.clamp(0.05, 5000.0);
        let volume = if rng.gen_bool(0.02) {
            0.0
        } else {
            (float * rng.gen_range(0.0..0.06)).floor()
        };
        bars.push(DailyBar::new(day(i), snap(price), volume));
        if rng.gen_bool(spec.event_rate) {
            let shares = float * rng.gen_range(0.001..0.3);
            events.push(FloatEvent::cancellation(day(i), shares));
            float -= shares;
        }
    }
    assemble_series(bars, events, "SYN").expect("generator produces valid series")
}

/// Remaining volume per price tick after the first `upto` bars of an
/// event-free series, as `v_s * prod_{u > s} (1 - v_u / vt)` computed
/// directly for every booked day.
pub fn closed_form(series: &InstrumentSeries, tick: f64, upto: usize) -> BTreeMap<i64, f64> {
    let ipo = series.ipo();
    assert_eq!(
        series.events.len(),
        1,
        "closed form only covers event-free series"
    );
    let vt = ipo.shares;
    let key = |p: f64| (p / tick).round() as i64;
    let bars = &series.bars[..upto];
    let mut out = BTreeMap::new();
    let survive = |from: usize| -> f64 {
        bars[from..]
            .iter()
            .map(|b| 1.0 - b.volume_shares / vt)
            .product()
    };
    *out.entry(key(ipo.price.unwrap())).or_insert(0.0) += ipo.shares * survive(0);
    for (s, bar) in bars.iter().enumerate() {
        if bar.volume_shares > 0.0 {
            *out.entry(key(bar.avg_price.unwrap())).or_insert(0.0) +=
                bar.volume_shares * survive(s + 1);
        }
    }
    out
}

/// Three regimes: a flat start at 10, a run up to 20, a slide to 6 and a
/// recovery to 25. Turnover 1.5% a day.
pub fn boom_bust_boom() -> InstrumentSeries {
    let float = 1_000_000.0;
    let volume = 15_000.0;
    let mut prices = vec![10.0; 60];
    let legs: [(f64, f64, usize); 3] = [(10.0, 20.0, 80), (20.0, 6.0, 120), (6.0, 25.0, 150)];
    for (from, to, len) in legs {
        let g = (to / from).powf(1.0 / len as f64);
        prices.extend((1..=len).map(|i| from * g.powi(i as i32)));
    }
    let bars = prices
        .iter()
        .enumerate()
        .map(|(i, &p)| DailyBar::new(day(i as i64 + 1), (p * 100.0).round() / 100.0, volume))
        .collect();
    assemble_series(
        bars,
        vec![FloatEvent::initial_ipo(day(0), float, 10.0)],
        "BBB",
    )
    .unwrap()
}

pub fn scale_volumes(series: &InstrumentSeries, c: f64) -> InstrumentSeries {
    let mut s = series.clone();
    for b in &mut s.bars {
        b.volume_shares *= c;
    }
    for e in &mut s.events {
        e.shares *= c;
    }
    s
}

pub fn scale_prices(series: &InstrumentSeries, c: f64) -> InstrumentSeries {
    let mut s = series.clone();
    for b in &mut s.bars {
        b.avg_price = b.avg_price.map(|p| p * c);
    }
    for e in &mut s.events {
        e.price = e.price.map(|p| p * c);
    }
    s
}
