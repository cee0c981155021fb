//! Invariant checks over a full series replay.
//!
//! The replay oracle here does not touch [`VolumeBook`]: it keeps a flat
//! list of booked contributions and the sequence of decay factors, and
//! computes each contribution's remaining volume as a direct product.

use std::collections::BTreeMap;

use crate::book::{run_series_until, BookConfig, BookError, TurnoverMode, VolumeBook};
use crate::market_data::{EventKind, InstrumentSeries};

pub const CONSERVATION_TOL: f64 = 1e-9;
pub const PRUNED_BOUND: f64 = 1e-6;
pub const ORACLE_TOL: f64 = 1e-9;
pub const RHO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed,
            detail: detail.into(),
        }
    }
}

/// Remaining volume per price tick after replaying the whole series,
/// computed as `v_s * prod(factors after s)` for every contribution.
pub fn oracle_volumes(
    series: &InstrumentSeries,
    config: BookConfig,
) -> Result<BTreeMap<i64, f64>, String> {
    let tick = |p: f64| (p / config.tick).round() as i64;
    let ipo = series.ipo();
    let mut float = ipo.shares;
    // (tick, volume, index of the first factor that applies)
    let mut contributions: Vec<(i64, f64, usize)> =
        vec![(tick(ipo.price.unwrap_or(0.0)), ipo.shares, 0)];
    let mut factors: Vec<f64> = Vec::new();

    let mut dates: Vec<_> = series
        .bars
        .iter()
        .map(|b| b.date)
        .chain(
            series
                .events
                .iter()
                .filter(|e| e.kind != EventKind::InitialIpo)
                .map(|e| e.date),
        )
        .collect();
    dates.sort();
    dates.dedup();

    for date in dates {
        let events_today = series
            .events
            .iter()
            .filter(|e| e.date == date && e.kind != EventKind::InitialIpo);
        for ev in events_today
            .clone()
            .filter(|e| e.kind == EventKind::SecondaryOffering)
        {
            float += ev.shares;
            contributions.push((tick(ev.price.unwrap_or(0.0)), ev.shares, factors.len()));
        }
        if let Some(bar) = series.bars.iter().find(|b| b.date == date) {
            let v = bar.volume_shares;
            if v > 0.0 {
                let t = tick(bar.avg_price.unwrap_or(0.0));
                if v >= float {
                    if config.turnover == TurnoverMode::Error {
                        return Err(format!("{date}: volume {v} reaches free float {float}"));
                    }
                    factors.push(0.0);
                    contributions.push((t, float, factors.len()));
                } else {
                    factors.push(1.0 - v / float);
                    contributions.push((t, v, factors.len()));
                }
            }
        }
        for ev in events_today.filter(|e| e.kind == EventKind::Cancellation) {
            if ev.shares >= float {
                return Err(format!(
                    "{date}: cancellation {} empties free float {float}",
                    ev.shares
                ));
            }
            factors.push(1.0 - ev.shares / float);
            float -= ev.shares;
        }
    }

    let mut out: BTreeMap<i64, f64> = BTreeMap::new();
    for (t, v, start) in contributions {
        let remaining = factors[start..].iter().fold(v, |acc, f| acc * f);
        *out.entry(t).or_default() += remaining;
    }
    Ok(out)
}

/// Largest oracle mismatch, relative to the oracle value, after allowing
/// for mass removed by pruning. Returns `(max_excess, worst_tick)`.
pub fn compare_with_oracle(book: &VolumeBook, oracle: &BTreeMap<i64, f64>) -> (f64, Option<i64>) {
    let live: BTreeMap<i64, f64> = book.ticks().map(|(k, e)| (k, e.volume)).collect();
    let mut worst = (0.0_f64, None);
    for (&k, &expected) in oracle {
        let got = live.get(&k).copied().unwrap_or(0.0);
        let allowed = ORACLE_TOL * expected.max(got) + book.pruned_mass();
        let excess = ((got - expected).abs() - allowed).max(0.0) / expected.max(f64::MIN_POSITIVE);
        if excess > worst.0 {
            worst = (excess, Some(k));
        }
    }
    for &k in live.keys() {
        if !oracle.contains_key(&k) {
            return (f64::INFINITY, Some(k));
        }
    }
    worst
}

/// Replay `series` and run every invariant; one [`Check`] per invariant.
pub fn validate_series(series: &InstrumentSeries, config: BookConfig) -> Vec<Check> {
    let mut worst_conservation = 0.0_f64;
    let mut worst_pruned = 0.0_f64;
    let mut rho_out_of_bounds = None;
    let mut rho_identity = None;
    let mut partition = None;
    let mut vwap_range = None;
    let mut steps = 0usize;

    let run = run_series_until(series, config, None, |step| {
        steps += 1;
        let book = step.book;
        let float = book.free_float();
        let err = (book.live_mass() + book.pruned_mass() - float).abs() / float;
        worst_conservation = worst_conservation.max(err);
        worst_pruned = worst_pruned.max(book.pruned_mass() / float);

        if let Some(p) = step.point {
            if !(-1.0..=1.0).contains(&p.rho) && rho_out_of_bounds.is_none() {
                rho_out_of_bounds = Some(p.date);
            }
            if (p.rho - (p.vdi_fraction - p.vds_fraction)).abs() > RHO_TOL && rho_identity.is_none()
            {
                rho_identity = Some(p.date);
            }
            if p.vdi_fraction + p.vds_fraction > 1.0 + RHO_TOL && partition.is_none() {
                partition = Some(p.date);
            }
            let (lo, hi) = book
                .entries()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), e| {
                    (lo.min(e.price), hi.max(e.price))
                });
            let slack = 1e-12 * hi;
            if (p.vwap < lo - slack || p.vwap > hi + slack) && vwap_range.is_none() {
                vwap_range = Some(p.date);
            }
        }
    });

    let mut checks = Vec::new();
    let run = match run {
        Ok(run) => {
            checks.push(Check::new(
                "replay",
                true,
                format!("{} trading days, {} steps", run.points.len(), steps),
            ));
            run
        }
        Err(e) => {
            checks.push(Check::new("replay", false, describe(&e)));
            return checks;
        }
    };

    checks.push(Check::new(
        "conservation",
        worst_conservation <= CONSERVATION_TOL,
        format!("max |sum + pruned - float| / float = {worst_conservation:e}"),
    ));
    checks.push(Check::new(
        "pruned_mass",
        worst_pruned <= PRUNED_BOUND,
        format!("max pruned / float = {worst_pruned:e}"),
    ));
    let by_date = |name, found: Option<chrono::NaiveDate>, ok: &str| match found {
        None => Check::new(name, true, ok.to_string()),
        Some(d) => Check::new(name, false, format!("first violation on {d}")),
    };
    checks.push(by_date(
        "rho_bounds",
        rho_out_of_bounds,
        "rho within [-1, 1] on every day",
    ));
    checks.push(by_date(
        "rho_identity",
        rho_identity,
        "rho = vdi - vds on every day",
    ));
    checks.push(by_date(
        "rho_partition",
        partition,
        "vdi + vds <= 1 on every day",
    ));
    checks.push(by_date(
        "vwap_range",
        vwap_range,
        "vwap within entry price range on every day",
    ));

    match oracle_volumes(series, config) {
        Ok(oracle) => {
            let (excess, tick) = compare_with_oracle(&run.book, &oracle);
            let detail = match tick {
                Some(t) if excess > 0.0 => format!(
                    "mismatch at price {} (excess {excess:e})",
                    t as f64 * config.tick
                ),
                _ => format!("{} price levels match", oracle.len()),
            };
            checks.push(Check::new("oracle_replay", excess == 0.0, detail));
        }
        Err(e) => checks.push(Check::new("oracle_replay", false, e)),
    }
    checks
}

fn describe(e: &BookError) -> String {
    e.to_string()
}
