//! Hourly demand and temperature series with strict validation.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const CSV_HEADER: [&str; 4] = ["timestamp", "demand_mwh", "drybulb_f", "wetbulb_f"];

const TIMESTAMP_WRITE: &str = "%Y-%m-%dT%H:%M:%S";
const TIMESTAMP_READ: [&str; 4] = [
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%d %H:%M",
];

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format(TIMESTAMP_WRITE).to_string()
}

pub fn parse_timestamp(s: &str) -> Result<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_READ
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
        .ok_or_else(|| Error::Data(format!("cannot parse timestamp {s:?}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourlyRow {
    pub timestamp: NaiveDateTime,
    pub demand_mwh: f64,
    pub drybulb_f: f64,
    pub wetbulb_f: f64,
}

/// Sorted, gap-free hourly rows with strictly positive demand.
#[derive(Debug, Clone, PartialEq)]
pub struct HourlySeries {
    rows: Vec<HourlyRow>,
}

impl HourlySeries {
    pub fn new(rows: Vec<HourlyRow>) -> Result<Self> {
        let first = rows.first().ok_or_else(|| Error::Data("no rows".into()))?;
        if first.timestamp.minute() != 0 || first.timestamp.second() != 0 {
            return Err(Error::Data(format!(
                "timestamp {} is not on the hour",
                format_timestamp(&first.timestamp)
            )));
        }
        for (i, row) in rows.iter().enumerate() {
            let ts = format_timestamp(&row.timestamp);
            if !(row.demand_mwh > 0.0) || !row.demand_mwh.is_finite() {
                return Err(Error::Data(format!(
                    "non-positive demand {} at {ts}",
                    row.demand_mwh
                )));
            }
            if !row.drybulb_f.is_finite() || !row.wetbulb_f.is_finite() {
                return Err(Error::Data(format!("non-finite temperature at {ts}")));
            }
            if i > 0 {
                let prev = rows[i - 1].timestamp;
                let step = row.timestamp - prev;
                if step == Duration::zero() {
                    return Err(Error::Data(format!("duplicate timestamp {ts}")));
                }
                if step < Duration::zero() {
                    return Err(Error::Data(format!("timestamp {ts} out of order")));
                }
                if step != Duration::hours(1) {
                    return Err(Error::Data(format!(
                        "gap: expected {} but found {ts}",
                        format_timestamp(&(prev + Duration::hours(1)))
                    )));
                }
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[HourlyRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn timestamps(&self) -> Vec<NaiveDateTime> {
        self.rows.iter().map(|r| r.timestamp).collect()
    }

    pub fn demand(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.demand_mwh).collect()
    }

    pub fn start(&self) -> NaiveDateTime {
        self.rows[0].timestamp
    }

    /// Row index of `t`, if inside the series.
    pub fn index_of(&self, t: NaiveDateTime) -> Option<usize> {
        let d = (t - self.start()).num_hours();
        (d >= 0 && (d as usize) < self.len() && self.rows[d as usize].timestamp == t)
            .then_some(d as usize)
    }

    /// Rows from Jan 1 00:00 of `first` through Dec 31 23:00 of `last`.
    pub fn year_range(&self, first: i32, last: i32) -> Result<Range<usize>> {
        let begin = NaiveDate::from_ymd_opt(first, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .ok_or_else(|| Error::InvalidArgument(format!("year {first}")))?;
        let end = NaiveDate::from_ymd_opt(last + 1, 1, 1)
            .and_then(|d| d.and_hms_opt(0, 0, 0))
            .ok_or_else(|| Error::InvalidArgument(format!("year {last}")))?;
        let i = self
            .index_of(begin)
            .ok_or_else(|| Error::Data(format!("series does not cover {first}-01-01")))?;
        let last_hour = end - Duration::hours(1);
        let j = self
            .index_of(last_hour)
            .ok_or_else(|| Error::Data(format!("series does not cover {last}-12-31 23:00")))?;
        Ok(i..j + 1)
    }

    /// Calendar years fully covered by the series.
    pub fn full_years(&self) -> Vec<i32> {
        let (a, b) = (
            self.rows[0].timestamp.year(),
            self.rows[self.len() - 1].timestamp.year(),
        );
        (a..=b).filter(|&y| self.year_range(y, y).is_ok()).collect()
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Data(format!(
                "expected header {}, found {}",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let field = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| {
                    Error::Data(format!("line {}: column {}: {e}", line + 2, CSV_HEADER[i]))
                })
            };
            rows.push(HourlyRow {
                timestamp: parse_timestamp(&rec[0])?,
                demand_mwh: field(1)?,
                drybulb_f: field(2)?,
                wetbulb_f: field(3)?,
            });
        }
        Self::new(rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(CSV_HEADER)?;
        for r in &self.rows {
            w.write_record([
                format_timestamp(&r.timestamp),
                r.demand_mwh.to_string(),
                r.drybulb_f.to_string(),
                r.wetbulb_f.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

pub fn ingest_csv(path: &Path) -> Result<HourlySeries> {
    HourlySeries::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}
