use serde::{Deserialize, Serialize};

use super::{MarketDataError, MarketFrame};

/// Default momentum lookback, in trading days.
pub const DEFAULT_LOOKBACK: usize = 10;

/// Per-cell HLC signals: predicted forward return `fr` (fraction) and a
/// sentiment score `ss` in [-1, 1]. Both are indexed `[stock][day]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalPanel {
    pub fr: Vec<Vec<f64>>,
    pub ss: Vec<Vec<f64>>,
}

impl SignalPanel {
    pub fn new(
        fr: Vec<Vec<f64>>,
        ss: Vec<Vec<f64>>,
        frame: &MarketFrame,
    ) -> Result<Self, MarketDataError> {
        let panel = Self { fr, ss };
        panel.validate(frame)?;
        Ok(panel)
    }

    pub fn n_stocks(&self) -> usize {
        self.fr.len()
    }

    pub fn n_days(&self) -> usize {
        self.fr.first().map_or(0, Vec::len)
    }

    pub fn validate(&self, frame: &MarketFrame) -> Result<(), MarketDataError> {
        let bad = |m: String| Err(MarketDataError::InvalidSignals(m));
        let (n, t) = (frame.n_stocks(), frame.n_days());
        if self.fr.len() != n || self.ss.len() != n {
            return bad(format!("panel has {} / {} rows, frame has {n} stocks", self.fr.len(), self.ss.len()));
        }
        for i in 0..n {
            if self.fr[i].len() != t || self.ss[i].len() != t {
                return bad(format!("row {i} length differs from frame's {t} days"));
            }
            if let Some(v) = self.fr[i].iter().find(|v| !v.is_finite()) {
                return bad(format!("non-finite fr {v} for stock {i}"));
            }
            if let Some(v) = self.ss[i].iter().find(|v| !(-1.0..=1.0).contains(*v)) {
                return bad(format!("ss {v} outside [-1, 1] for stock {i}"));
            }
        }
        Ok(())
    }

    pub fn slice_days(&self, range: std::ops::Range<usize>) -> Self {
        Self {
            fr: self.fr.iter().map(|r| r[range.clone()].to_vec()).collect(),
            ss: self.ss.iter().map(|r| r[range.clone()].to_vec()).collect(),
        }
    }
}

/// Momentum baseline provider.
///
/// `fr[i][t]` is the mean of the `lookback` open-to-open returns ending at day
/// `t`; `ss[i][t] = tanh(fr·√lookback / σ)` with σ the sample standard
/// deviation of those returns (a damped sign of the window's t-statistic;
/// exact sign when σ = 0). Days with fewer than `lookback` trailing returns get 0.
pub fn baseline_signals(frame: &MarketFrame, lookback: usize) -> SignalPanel {
    let lookback = lookback.max(1);
    let (n, t_len) = (frame.n_stocks(), frame.n_days());
    let mut fr = vec![vec![0.0; t_len]; n];
    let mut ss = vec![vec![0.0; t_len]; n];
    for i in 0..n {
        // rets[s] is the return from day s to s+1; the window ending at day t
        // covers rets[t-lookback..t].
        let rets: Vec<f64> = frame
            .bars(i)
            .windows(2)
            .map(|w| w[1].open / w[0].open - 1.0)
            .collect();
        for t in lookback..t_len {
            let window = &rets[t - lookback..t];
            let mean = window.iter().sum::<f64>() / lookback as f64;
            fr[i][t] = mean;
            let sd = if lookback > 1 {
                (window.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (lookback - 1) as f64).sqrt()
            } else {
                0.0
            };
            ss[i][t] = if mean == 0.0 {
                0.0
            } else if sd > 0.0 {
                (mean * (lookback as f64).sqrt() / sd).tanh()
            } else {
                mean.signum()
            };
        }
    }
    SignalPanel { fr, ss }
}

#[cfg(test)]
mod tests {
    use super::super::testutil::frame_from_opens;
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rising_prices_positive_momentum() {
        let opens: Vec<f64> = (0..30).map(|t| 100.0 * 1.01f64.powi(t)).collect();
        let f = frame_from_opens(&[opens]);
        let s = baseline_signals(&f, 10);
        assert!((0..10).all(|t| s.fr[0][t] == 0.0 && s.ss[0][t] == 0.0));
        assert!((10..30).all(|t| s.fr[0][t] > 0.0 && s.ss[0][t] > 0.0));
        s.validate(&f).unwrap();
    }

    #[test]
    fn constant_prices_zero_signals() {
        let f = frame_from_opens(&[vec![50.0; 25], vec![3.0; 25]]);
        let s = baseline_signals(&f, 10);
        assert!(s.fr.iter().chain(&s.ss).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn rolling_mean_matches_independent_window() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let opens: Vec<Vec<f64>> = (0..3)
            .map(|_| {
                let mut p = 100.0;
                (0..40)
                    .map(|_| {
                        p *= 1.0 + rng.random_range(-0.03..0.03);
                        p
                    })
                    .collect()
            })
            .collect();
        let f = frame_from_opens(&opens);
        let s = baseline_signals(&f, 7);
        for i in 0..3 {
            for t in 0..40 {
                let want = if t < 7 {
                    0.0
                } else {
                    let mut acc = 0.0;
                    for k in 1..=7 {
                        acc += opens[i][t - k + 1] / opens[i][t - k] - 1.0;
                    }
                    acc / 7.0
                };
                assert!((s.fr[i][t] - want).abs() < 1e-15, "({i},{t})");
            }
        }
    }

    proptest! {
        #[test]
        fn signals_finite_and_bounded(
            rets in prop::collection::vec(-0.5f64..0.5, 2..60),
            lookback in 1usize..15,
        ) {
            let mut p = 10.0;
            let mut opens = vec![p];
            for r in rets {
                p *= 1.0 + r;
                opens.push(p);
            }
            let f = frame_from_opens(&[opens]);
            let s = baseline_signals(&f, lookback);
            prop_assert!(s.validate(&f).is_ok());
        }
    }
}
