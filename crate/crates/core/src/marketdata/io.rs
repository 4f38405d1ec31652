//! CSV ingestion and export.
//!
//! Two input layouts are accepted:
//! - a single long-format file with header `date,ticker,open,high,low,close,volume`;
//! - a directory holding one `<TICKER>.csv` per symbol with header
//!   `date,open,high,low,close,volume` (Yahoo-style exports; extra columns such
//!   as `Adj Close` are ignored, header matching is case-insensitive).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;

use super::{MarketDataError, MarketFrame, OhlcvBar, SignalPanel};
use crate::{Error, Result};

type Series = BTreeMap<NaiveDate, OhlcvBar>;

struct Columns {
    date: usize,
    ticker: Option<usize>,
    open: usize,
    high: usize,
    low: usize,
    close: usize,
    volume: usize,
}

fn malformed(file: &Path, line: u64, reason: impl Into<String>) -> MarketDataError {
    MarketDataError::MalformedRow {
        file: file.display().to_string(),
        line,
        reason: reason.into(),
    }
}

fn columns(file: &Path, headers: &csv::StringRecord, need_ticker: bool) -> Result<Columns> {
    let index: HashMap<String, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_ascii_lowercase(), i))
        .collect();
    let find = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| malformed(file, 1, format!("missing column {name:?}")))
    };
    Ok(Columns {
        date: find("date")?,
        ticker: if need_ticker { Some(find("ticker")?) } else { None },
        open: find("open")?,
        high: find("high")?,
        low: find("low")?,
        close: find("close")?,
        volume: find("volume")?,
    })
}

fn parse_row(
    file: &Path,
    line: u64,
    rec: &csv::StringRecord,
    cols: &Columns,
) -> Result<OhlcvBar, MarketDataError> {
    let field = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
    let num = |name: &str, i: usize| {
        field(i)
            .parse::<f64>()
            .map_err(|_| malformed(file, line, format!("{name}: cannot parse {:?}", field(i))))
    };
    let date = NaiveDate::parse_from_str(field(cols.date), "%Y-%m-%d")
        .map_err(|_| malformed(file, line, format!("date: cannot parse {:?}", field(cols.date))))?;
    let bar = OhlcvBar {
        date,
        open: num("open", cols.open)?,
        high: num("high", cols.high)?,
        low: num("low", cols.low)?,
        close: num("close", cols.close)?,
        volume: num("volume", cols.volume)?,
    };
    bar.validate().map_err(|r| malformed(file, line, r))?;
    Ok(bar)
}

fn insert(series: &mut Series, file: &Path, line: u64, bar: OhlcvBar) -> Result<()> {
    if series.insert(bar.date, bar).is_some() {
        return Err(malformed(file, line, format!("duplicate date {}", bar.date)).into());
    }
    Ok(())
}

fn reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(true).from_reader(file))
}

fn read_long(path: &Path, wanted: &BTreeSet<&str>) -> Result<HashMap<String, Series>> {
    let mut rdr = reader(path)?;
    let cols = columns(path, rdr.headers()?, true)?;
    let mut out: HashMap<String, Series> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let ticker = rec.get(cols.ticker.unwrap()).unwrap_or("").trim();
        if !wanted.contains(ticker) {
            continue;
        }
        let bar = parse_row(path, line, &rec, &cols)?;
        insert(out.entry(ticker.to_string()).or_default(), path, line, bar)?;
    }
    Ok(out)
}

fn read_single(path: &Path) -> Result<Series> {
    let mut rdr = reader(path)?;
    let cols = columns(path, rdr.headers()?, false)?;
    let mut series = Series::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bar = parse_row(path, line, &rec, &cols)?;
        insert(&mut series, path, line, bar)?;
    }
    Ok(series)
}

/// Loads and aligns daily bars for `tickers` (in the given order). The
/// resulting frame keeps only dates present for every ticker.
pub fn load_csv(path: impl AsRef<Path>, tickers: &[String]) -> Result<MarketFrame> {
    let path = path.as_ref();
    if tickers.is_empty() {
        return Err(MarketDataError::InvalidFrame("no tickers requested".into()).into());
    }
    let mut per_ticker: HashMap<String, Series> = if path.is_dir() {
        let mut m = HashMap::new();
        for t in tickers {
            let file = path.join(format!("{t}.csv"));
            if !file.is_file() {
                return Err(MarketDataError::MissingTicker(t.clone()).into());
            }
            m.insert(t.clone(), read_single(&file)?);
        }
        m
    } else {
        let wanted: BTreeSet<&str> = tickers.iter().map(String::as_str).collect();
        read_long(path, &wanted)?
    };

    let mut series = Vec::with_capacity(tickers.len());
    for t in tickers {
        match per_ticker.remove(t) {
            Some(s) if !s.is_empty() => series.push(s),
            _ => return Err(MarketDataError::MissingTicker(t.clone()).into()),
        }
    }
    let mut common: BTreeSet<NaiveDate> = series[0].keys().copied().collect();
    for s in &series[1..] {
        common.retain(|d| s.contains_key(d));
    }
    if common.is_empty() {
        return Err(MarketDataError::EmptyIntersection.into());
    }
    let days: Vec<NaiveDate> = common.into_iter().collect();
    let bars = series
        .iter()
        .map(|s| days.iter().map(|d| s[d]).collect())
        .collect();
    Ok(MarketFrame::new(tickers.to_vec(), days, bars)?)
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

/// Writes the frame in long format, day-major. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_csv(frame: &MarketFrame, path: impl AsRef<Path>) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["date", "ticker", "open", "high", "low", "close", "volume"])?;
    for t in 0..frame.n_days() {
        for (i, ticker) in frame.tickers().iter().enumerate() {
            let b = frame.bar(i, t);
            w.write_record([
                b.date.format("%Y-%m-%d").to_string(),
                ticker.clone(),
                b.open.to_string(),
                b.high.to_string(),
                b.low.to_string(),
                b.close.to_string(),
                b.volume.to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

/// Writes a signal panel as `date,ticker,fr,ss`.
pub fn write_signals_csv(
    frame: &MarketFrame,
    signals: &SignalPanel,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut w = writer(path.as_ref())?;
    w.write_record(["date", "ticker", "fr", "ss"])?;
    for (t, d) in frame.days().iter().enumerate() {
        for (i, ticker) in frame.tickers().iter().enumerate() {
            w.write_record([
                d.format("%Y-%m-%d").to_string(),
                ticker.clone(),
                signals.fr[i][t].to_string(),
                signals.ss[i][t].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
    Ok(())
}

/// Reads a `date,ticker,fr,ss` file aligned to `frame`. Every frame cell must
/// be present; rows for other dates or tickers are ignored.
pub fn load_signals_csv(path: impl AsRef<Path>, frame: &MarketFrame) -> Result<SignalPanel> {
    let path = path.as_ref();
    let mut rdr = reader(path)?;
    let headers: Vec<String> = rdr
        .headers()?
        .iter()
        .map(|h| h.trim().to_ascii_lowercase())
        .collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| malformed(path, 1, format!("missing column {name:?}")))
    };
    let (cd, ct, cf, cs) = (col("date")?, col("ticker")?, col("fr")?, col("ss")?);
    let day_ix: HashMap<NaiveDate, usize> =
        frame.days().iter().enumerate().map(|(t, d)| (*d, t)).collect();
    let tick_ix: HashMap<&str, usize> = frame
        .tickers()
        .iter()
        .enumerate()
        .map(|(i, s)| (s.as_str(), i))
        .collect();
    let (n, t_len) = (frame.n_stocks(), frame.n_days());
    let mut fr = vec![vec![f64::NAN; t_len]; n];
    let mut ss = vec![vec![f64::NAN; t_len]; n];
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let get = |i: usize| rec.get(i).map(str::trim).unwrap_or("");
        let Ok(date) = NaiveDate::parse_from_str(get(cd), "%Y-%m-%d") else {
            return Err(malformed(path, line, format!("date: cannot parse {:?}", get(cd))).into());
        };
        let (Some(&t), Some(&i)) = (day_ix.get(&date), tick_ix.get(get(ct))) else {
            continue;
        };
        let parse = |c: usize, name: &str| {
            get(c)
                .parse::<f64>()
                .map_err(|_| malformed(path, line, format!("{name}: cannot parse {:?}", get(c))))
        };
        fr[i][t] = parse(cf, "fr")?;
        ss[i][t] = parse(cs, "ss")?;
    }
    if fr.iter().chain(&ss).flatten().any(|v| v.is_nan()) {
        return Err(MarketDataError::InvalidSignals("signal file does not cover every frame cell".into()).into());
    }
    Ok(SignalPanel::new(fr, ss, frame)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    const HDR: &str = "date,ticker,open,high,low,close,volume\n";

    #[test]
    fn long_format_intersects_dates() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{HDR}2021-01-04,A,10,11,9,10,100\n2021-01-05,A,10,11,9,10,100\n2021-01-06,A,10,11,9,10,100\n\
             2021-01-05,B,20,21,19,20,100\n2021-01-06,B,20,21,19,20,100\n2021-01-07,B,20,21,19,20,100\n"
        );
        let p = write(dir.path(), "long.csv", &body);
        let f = load_csv(&p, &["A".into(), "B".into()]).unwrap();
        let want: Vec<NaiveDate> = ["2021-01-05", "2021-01-06"]
            .iter()
            .map(|s| s.parse().unwrap())
            .collect();
        assert_eq!(f.days(), want.as_slice());
        assert_eq!(f.n_stocks(), 2);
    }

    #[test]
    fn low_above_high_is_malformed_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "bad.csv",
            &format!("{HDR}2021-01-04,A,10,11,9,10,100\n2021-01-05,A,10,9,11,10,100\n"),
        );
        match load_csv(&p, &["A".into()]) {
            Err(Error::MarketData(MarketDataError::MalformedRow { line, .. })) => assert_eq!(line, 3),
            other => panic!("expected MalformedRow, got {other:?}"),
        }
    }

    #[test]
    fn missing_ticker_and_empty_intersection() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "x.csv",
            &format!("{HDR}2021-01-04,A,10,11,9,10,100\n2021-01-05,B,10,11,9,10,100\n"),
        );
        assert!(matches!(
            load_csv(&p, &["A".into(), "C".into()]),
            Err(Error::MarketData(MarketDataError::MissingTicker(t))) if t == "C"
        ));
        assert!(matches!(
            load_csv(&p, &["A".into(), "B".into()]),
            Err(Error::MarketData(MarketDataError::EmptyIntersection))
        ));
    }

    #[test]
    fn per_ticker_directory_yahoo_headers() {
        let dir = tempfile::tempdir().unwrap();
        write(
            dir.path(),
            "AAA.csv",
            "Date,Open,High,Low,Close,Adj Close,Volume\n2021-01-04,1.5,2,1,1.5,1.4,10\n2021-01-05,1.5,2,1,1.5,1.4,10\n",
        );
        let f = load_csv(dir.path(), &["AAA".into()]).unwrap();
        assert_eq!(f.n_days(), 2);
        assert_eq!(f.bar(0, 0).open, 1.5);
        assert!(matches!(
            load_csv(dir.path(), &["ZZZ".into()]),
            Err(Error::MarketData(MarketDataError::MissingTicker(_)))
        ));
    }

    #[test]
    fn unparsable_number_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "x.csv", &format!("{HDR}2021-01-04,A,ten,11,9,10,100\n"));
        let err = load_csv(&p, &["A".into()]).unwrap_err().to_string();
        assert!(err.contains(":2:") && err.contains("open"), "{err}");
    }
}
