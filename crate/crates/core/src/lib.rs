//! Volume book model of a listed stock's free float.
//!
//! The book tracks, day by day, which fractions of the free float were
//! acquired at which prices. From it come the book VWAP and the profit
//! index `rho` (float fraction in profit minus fraction in loss), and a
//! grid of threshold agents is backtested on that index.

pub mod audit;
pub mod backtest;
pub mod book;
pub mod cli;
pub mod market_data;
pub mod report;

pub use backtest::{
    compound_return, default_agent_grid, run_backtest, step_agent, summarize, AgentParams,
    AgentResult, TradeRecord,
};
pub use book::{run_series, BookConfig, BookEntry, IndexPoint, TurnoverMode, VolumeBook};
pub use market_data::{
    assemble_series, derive_avg_price, parse_bars, parse_events, DailyBar, EventKind, FloatEvent,
    InstrumentSeries,
};
