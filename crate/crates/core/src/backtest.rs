//! Threshold agents trading on the index.
//!
//! An agent with parameter `theta` buys when the index is at or below
//! `-theta` and sells when it is at or above `+theta`. It is either flat or
//! fully invested; returns compound across trades.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::book::IndexPoint;

pub const GRID_SIZE: usize = 39;
pub const GRID_STEP: f64 = 0.025;

#[derive(Debug, Error, PartialEq)]
pub enum BacktestError {
    #[error("no index points to trade on")]
    NoPoints,
    #[error("agent grid is empty")]
    EmptyGrid,
    #[error("theta must lie in (0, 1), got {0}")]
    BadTheta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub theta: f64,
}

impl AgentParams {
    pub fn new(theta: f64) -> Result<Self, BacktestError> {
        if theta > 0.0 && theta < 1.0 {
            Ok(AgentParams { theta })
        } else {
            Err(BacktestError::BadTheta(theta))
        }
    }
}

/// The 39 agents 0.025, 0.050, ..., 0.975.
pub fn default_agent_grid() -> Vec<AgentParams> {
    (1..=GRID_SIZE)
        .map(|i| AgentParams {
            theta: i as f64 * GRID_STEP,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub buy_date: NaiveDate,
    pub buy_price: f64,
    pub sell_date: NaiveDate,
    pub sell_price: f64,
    pub forced_close: bool,
}

impl TradeRecord {
    pub fn gross(&self) -> f64 {
        self.sell_price / self.buy_price
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResult {
    pub theta: f64,
    pub n_operations: usize,
    pub total_return: f64,
    pub trades: Vec<TradeRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position {
    Flat,
    Holding { date: NaiveDate, price: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Action {
    Buy { date: NaiveDate, price: f64 },
    Sell { date: NaiveDate, price: f64 },
}

/// One day of one agent. Executes at the day's average price.
pub fn step_agent(state: Position, theta: f64, point: &IndexPoint) -> (Position, Option<Action>) {
    match state {
        Position::Flat if point.rho <= -theta => (
            Position::Holding {
                date: point.date,
                price: point.price,
            },
            Some(Action::Buy {
                date: point.date,
                price: point.price,
            }),
        ),
        Position::Holding { .. } if point.rho >= theta => (
            Position::Flat,
            Some(Action::Sell {
                date: point.date,
                price: point.price,
            }),
        ),
        other => (other, None),
    }
}

/// Compounded return of a trade list: `prod(sell / buy) - 1`.
pub fn compound_return(trades: &[TradeRecord]) -> f64 {
    trades.iter().map(TradeRecord::gross).product::<f64>() - 1.0
}

fn run_agent(points: &[IndexPoint], params: AgentParams) -> AgentResult {
    let mut state = Position::Flat;
    let mut trades = Vec::new();
    let (last, body) = points.split_last().expect("checked non-empty");

    for point in body {
        let (next, action) = step_agent(state, params.theta, point);
        if let (Position::Holding { date, price }, Some(Action::Sell { .. })) = (state, action) {
            trades.push(TradeRecord {
                buy_date: date,
                buy_price: price,
                sell_date: point.date,
                sell_price: point.price,
                forced_close: false,
            });
        }
        state = next;
    }

    // Final day: a regular sell may still trigger; an open position is
    // liquidated at the final price. Opening a position here would be
    // closed at the same price, so it is not taken.
    if let Position::Holding { date, price } = state {
        let (_, action) = step_agent(state, params.theta, last);
        trades.push(TradeRecord {
            buy_date: date,
            buy_price: price,
            sell_date: last.date,
            sell_price: last.price,
            forced_close: action.is_none(),
        });
    }

    AgentResult {
        theta: params.theta,
        n_operations: trades.iter().filter(|t| !t.forced_close).count(),
        total_return: compound_return(&trades),
        trades,
    }
}

/// Step every agent of `grid` through `points`.
pub fn run_backtest(
    points: &[IndexPoint],
    grid: &[AgentParams],
) -> Result<Vec<AgentResult>, BacktestError> {
    if points.is_empty() {
        return Err(BacktestError::NoPoints);
    }
    if grid.is_empty() {
        return Err(BacktestError::EmptyGrid);
    }
    for p in grid {
        AgentParams::new(p.theta)?;
    }
    Ok(grid.iter().map(|&p| run_agent(points, p)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub theta: f64,
    pub n_operations: usize,
    pub total_return: f64,
}

/// Per-agent operation count and return, ordered by theta.
pub fn summarize(results: &[AgentResult]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = results
        .iter()
        .map(|r| SummaryRow {
            theta: r.theta,
            n_operations: r.n_operations,
            total_return: r.total_return,
        })
        .collect();
    rows.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    rows
}
