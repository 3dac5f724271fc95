//! Holiday calendars.

use std::collections::BTreeSet;
use std::path::Path;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HolidayCalendar {
    dates: BTreeSet<NaiveDate>,
}

fn nth_weekday(year: i32, month: u32, wd: Weekday, n: u8) -> Option<NaiveDate> {
    NaiveDate::from_weekday_of_month_opt(year, month, wd, n)
}

fn last_weekday(year: i32, month: u32, wd: Weekday) -> Option<NaiveDate> {
    nth_weekday(year, month, wd, 5).or_else(|| nth_weekday(year, month, wd, 4))
}

impl HolidayCalendar {
    pub fn new(dates: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            dates: dates.into_iter().collect(),
        }
    }

    /// US federal holidays on their actual dates (no weekend observance
    /// shifts) for the inclusive year range.
    pub fn us_federal(first_year: i32, last_year: i32) -> Self {
        let mut dates = BTreeSet::new();
        for y in first_year..=last_year {
            let fixed = [(1, 1), (7, 4), (11, 11), (12, 25)];
            dates.extend(
                fixed
                    .iter()
                    .filter_map(|&(m, d)| NaiveDate::from_ymd_opt(y, m, d)),
            );
            if y >= 2021 {
                dates.extend(NaiveDate::from_ymd_opt(y, 6, 19));
            }
            if y >= 1986 {
                dates.extend(nth_weekday(y, 1, Weekday::Mon, 3));
            }
            dates.extend(nth_weekday(y, 2, Weekday::Mon, 3));
            dates.extend(last_weekday(y, 5, Weekday::Mon));
            dates.extend(nth_weekday(y, 9, Weekday::Mon, 1));
            dates.extend(nth_weekday(y, 10, Weekday::Mon, 2));
            dates.extend(nth_weekday(y, 11, Weekday::Thu, 4));
        }
        Self { dates }
    }

    /// One ISO date per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut dates = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let d = NaiveDate::parse_from_str(line, "%Y-%m-%d")
                .map_err(|e| Error::Data(format!("holiday file line {}: {line:?}: {e}", i + 1)))?;
            dates.insert(d);
        }
        Ok(Self { dates })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.dates.iter().map(|d| format!("{d}\n")).collect()
    }

    pub fn is_holiday(&self, date: NaiveDate) -> bool {
        self.dates.contains(&date)
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn years(&self) -> Option<(i32, i32)> {
        Some((self.dates.first()?.year(), self.dates.last()?.year()))
    }
}
