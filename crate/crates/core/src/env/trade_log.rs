use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::Error;

/// One executed fill. `shares` is signed: positive for buys, negative for sells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub day: usize,
    pub stock: usize,
    pub shares: i64,
    pub price: f64,
    pub cost: f64,
}

impl TradeRecord {
    pub fn notional(&self) -> f64 {
        self.price * self.shares.unsigned_abs() as f64
    }

    pub fn action(&self) -> &'static str {
        if self.shares > 0 {
            "buy"
        } else {
            "sell"
        }
    }
}

/// Every fill of an episode with the calendar needed to export it.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TradeLog {
    pub tickers: Vec<String>,
    pub dates: Vec<NaiveDate>,
    pub records: Vec<TradeRecord>,
}

impl TradeLog {
    pub fn new(tickers: Vec<String>, dates: Vec<NaiveDate>) -> Self {
        Self { tickers, dates, records: Vec::new() }
    }

    pub fn extend(&mut self, fills: impl IntoIterator<Item = TradeRecord>) {
        self.records.extend(fills);
    }

    pub fn total_cost(&self) -> f64 {
        self.records.iter().map(|r| r.cost).sum()
    }

    /// Net signed shares per stock per day, `[stock][day]`.
    pub fn net_shares(&self) -> Vec<Vec<i64>> {
        let mut grid = vec![vec![0i64; self.dates.len()]; self.tickers.len()];
        for r in &self.records {
            grid[r.stock][r.day] += r.shares;
        }
        grid
    }

    /// Writes `day,ticker,action,shares_executed,price,cost`, with signed shares.
    pub fn write_csv<W: Write>(&self, out: W) -> crate::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["day", "ticker", "action", "shares_executed", "price", "cost"])?;
        for r in &self.records {
            let day = self
                .dates
                .get(r.day)
                .map(|d| d.to_string())
                .unwrap_or_else(|| r.day.to_string());
            w.write_record([
                day,
                self.tickers[r.stock].clone(),
                r.action().to_string(),
                r.shares.to_string(),
                r.price.to_string(),
                r.cost.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<trade log>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> crate::Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}
