//! Calendar and temperature encoding of one hour into the network input.
//!
//! Layout (`x = 13`):
//!
//! | index | feature |
//! |-------|---------|
//! | 0, 1  | sin, cos of hour-of-day (period 24) |
//! | 2, 3  | sin, cos of day-of-year (period = days in that year) |
//! | 4..10 | day-of-week dummies, Tuesday..Sunday (Monday is the baseline) |
//! | 10    | holiday dummy |
//! | 11, 12| dry-bulb and wet-bulb temperature, z-scored on the fit window |

use std::f64::consts::TAU;
use std::ops::Range;

use chrono::{Datelike, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::calendar::HolidayCalendar;
use super::series::{HourlyRow, HourlySeries};
use crate::{Error, Result};

pub const X_DIM: usize = 13;

pub fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

/// Fraction of the year elapsed at the start of `date`'s day, in `[0, 1)`.
pub fn year_fraction(date: NaiveDate) -> f64 {
    date.ordinal0() as f64 / days_in_year(date.year()) as f64
}

/// Six dummies for Tuesday..Sunday.
pub fn weekday_dummies(date: NaiveDate) -> [f64; 6] {
    let mut d = [0.0; 6];
    let k = date.weekday().num_days_from_monday() as usize;
    if k > 0 {
        d[k - 1] = 1.0;
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    /// Mean and population standard deviation; a constant channel gets unit
    /// scale so it encodes as zero.
    pub fn fit(values: impl Iterator<Item = f64> + Clone) -> Result<Self> {
        let n = values.clone().count();
        if n == 0 {
            return Err(Error::InvalidArgument("no values to normalize".into()));
        }
        let mean = values.clone().sum::<f64>() / n as f64;
        let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let std = if var > 0.0 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub holidays: HolidayCalendar,
    pub drybulb: ChannelStats,
    pub wetbulb: ChannelStats,
}

impl FeatureEncoder {
    /// Temperature statistics come from `fit` rows only.
    pub fn fit(
        series: &HourlySeries,
        fit: Range<usize>,
        holidays: HolidayCalendar,
    ) -> Result<Self> {
        let rows = series
            .rows()
            .get(fit.clone())
            .ok_or_else(|| Error::InvalidArgument(format!("fit range {fit:?} outside series")))?;
        Ok(Self {
            holidays,
            drybulb: ChannelStats::fit(rows.iter().map(|r| r.drybulb_f))?,
            wetbulb: ChannelStats::fit(rows.iter().map(|r| r.wetbulb_f))?,
        })
    }

    pub fn encode_calendar(&self, t: NaiveDateTime, out: &mut [f64]) {
        let hour = TAU * t.hour() as f64 / 24.0;
        let day = TAU * year_fraction(t.date());
        out[0] = hour.sin();
        out[1] = hour.cos();
        out[2] = day.sin();
        out[3] = day.cos();
        out[4..10].copy_from_slice(&weekday_dummies(t.date()));
        out[10] = if self.holidays.is_holiday(t.date()) {
            1.0
        } else {
            0.0
        };
    }

    pub fn encode(&self, row: &HourlyRow) -> Vec<f64> {
        let mut x = vec![0.0; X_DIM];
        self.encode_calendar(row.timestamp, &mut x);
        x[11] = self.drybulb.apply(row.drybulb_f);
        x[12] = self.wetbulb.apply(row.wetbulb_f);
        x
    }

    pub fn encode_all(&self, series: &HourlySeries) -> Vec<Vec<f64>> {
        series.rows().iter().map(|r| self.encode(r)).collect()
    }
}
