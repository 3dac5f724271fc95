//! Per-hour OLS deseasonalization of normalized log demand.
//!
//! Log demand is z-scored with fit-window statistics,
//! `z_t = (ln d_t − mean) / std`, and for each hour of the day an OLS fit on
//! calendar regressors gives the seasonal component `s_t`. The network then
//! models the residual `r_t = z_t − s_t`.

use std::ops::Range;

use chrono::{NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};

use super::calendar::HolidayCalendar;
use super::features::{weekday_dummies, year_fraction, ChannelStats};
use super::series::HourlySeries;
use crate::numerics::{least_squares, two_sum, Matrix};
use crate::{Error, Result};

/// Shortest fit window, one non-leap year of hours.
pub const MIN_FIT_HOURS: usize = 365 * 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeasonalConfig {
    /// Linear trend in years since the start of the fit window.
    pub trend: bool,
    /// Number of yearly sin/cos pairs.
    pub harmonics: usize,
    /// Day-of-week and holiday dummies.
    pub calendar_dummies: bool,
}

impl Default for SeasonalConfig {
    fn default() -> Self {
        Self {
            trend: true,
            harmonics: 2,
            calendar_dummies: true,
        }
    }
}

impl SeasonalConfig {
    /// Intercept only.
    pub fn intercept_only() -> Self {
        Self {
            trend: false,
            harmonics: 0,
            calendar_dummies: false,
        }
    }

    pub fn regressor_count(&self) -> usize {
        1 + if self.calendar_dummies { 7 } else { 0 } + 2 * self.harmonics + usize::from(self.trend)
    }

    pub fn regressors(
        &self,
        t: NaiveDateTime,
        holidays: &HolidayCalendar,
        origin: NaiveDateTime,
    ) -> Vec<f64> {
        let mut x = Vec::with_capacity(self.regressor_count());
        x.push(1.0);
        if self.calendar_dummies {
            x.extend_from_slice(&weekday_dummies(t.date()));
            x.push(if holidays.is_holiday(t.date()) {
                1.0
            } else {
                0.0
            });
        }
        let f = year_fraction(t.date());
        for k in 1..=self.harmonics {
            let a = std::f64::consts::TAU * k as f64 * f;
            x.push(a.sin());
            x.push(a.cos());
        }
        if self.trend {
            x.push((t - origin).num_hours() as f64 / (24.0 * 365.25));
        }
        x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeasonalModel {
    pub config: SeasonalConfig,
    pub holidays: HolidayCalendar,
    /// Trend origin (first hour of the fit window).
    pub origin: NaiveDateTime,
    /// Statistics of `ln d` on the fit window.
    pub log_demand: ChannelStats,
    /// One coefficient vector per hour of day.
    pub coefficients: Vec<Vec<f64>>,
    /// Regressors dropped as collinear, per hour of day.
    pub dropped: Vec<Vec<usize>>,
}

impl SeasonalModel {
    pub fn normalize(&self, demand: f64) -> f64 {
        self.log_demand.apply(demand.ln())
    }

    /// Normalized log scale back to log demand.
    pub fn denormalize(&self, z: f64) -> f64 {
        self.log_demand.mean + self.log_demand.std * z
    }

    /// Seasonal component `s_t` on the normalized log scale.
    pub fn predict(&self, t: NaiveDateTime) -> f64 {
        let x = self.config.regressors(t, &self.holidays, self.origin);
        let beta = &self.coefficients[t.hour() as usize];
        x.iter().zip(beta).map(|(a, b)| a * b).sum()
    }

    pub fn deseasonalize(&self, series: &HourlySeries) -> ResidualSeries {
        let mut out = ResidualSeries {
            seasonal: Vec::with_capacity(series.len()),
            hi: Vec::with_capacity(series.len()),
            lo: Vec::with_capacity(series.len()),
        };
        for row in series.rows() {
            let s = self.predict(row.timestamp);
            let z = self.normalize(row.demand_mwh);
            let (hi, lo) = two_sum(z, -s);
            out.seasonal.push(s);
            out.hi.push(hi);
            out.lo.push(lo);
        }
        out
    }
}

/// `r_t = z_t − s_t`, stored as an unevaluated sum `hi + lo` that equals the
/// difference exactly, so [`ResidualSeries::reseasonalize`] restores `z_t`
/// bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    pub seasonal: Vec<f64>,
    pub hi: Vec<f64>,
    pub lo: Vec<f64>,
}

impl ResidualSeries {
    /// Correctly rounded residuals.
    pub fn residuals(&self) -> &[f64] {
        &self.hi
    }

    /// `s_t + hi_t + lo_t`. Since the exact sum is a double, evaluating it
    /// as `t + (e + lo)` with `(t, e) = two_sum(s, hi)` is exact.
    pub fn reseasonalize(&self) -> Vec<f64> {
        self.seasonal
            .iter()
            .zip(&self.hi)
            .zip(&self.lo)
            .map(|((&s, &hi), &lo)| {
                let (t, e) = two_sum(s, hi);
                t + (e + lo)
            })
            .collect()
    }
}

/// Fits 24 independent OLS regressions of normalized log demand on calendar
/// regressors over `fit`.
pub fn fit_seasonal(
    series: &HourlySeries,
    fit: Range<usize>,
    holidays: &HolidayCalendar,
    config: SeasonalConfig,
) -> Result<SeasonalModel> {
    if fit.end > series.len() || fit.start >= fit.end {
        return Err(Error::InvalidArgument(format!(
            "fit range {fit:?} outside series"
        )));
    }
    if fit.len() < MIN_FIT_HOURS {
        return Err(Error::InvalidArgument(format!(
            "seasonal fit window of {} hours is shorter than one year",
            fit.len()
        )));
    }
    let rows = &series.rows()[fit.clone()];
    let log_demand = ChannelStats::fit(rows.iter().map(|r| r.demand_mwh.ln()))?;
    let origin = rows[0].timestamp;
    let k = config.regressor_count();
    let mut coefficients = Vec::with_capacity(24);
    let mut dropped = Vec::with_capacity(24);
    for hour in 0..24u32 {
        let sel: Vec<_> = rows.iter().filter(|r| r.timestamp.hour() == hour).collect();
        let mut data = Vec::with_capacity(sel.len() * k);
        let mut y = Vec::with_capacity(sel.len());
        for r in &sel {
            data.extend(config.regressors(r.timestamp, holidays, origin));
            y.push(log_demand.apply(r.demand_mwh.ln()));
        }
        let x = Matrix::from_vec(sel.len(), k, data)?;
        let first = least_squares(&x, &y)?;
        // one step of iterative refinement tightens the normal equations
        let mut beta = first.coefficients;
        let mut resid = y.clone();
        for (i, r) in resid.iter_mut().enumerate() {
            *r -= x.row(i).iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>();
        }
        let corr = least_squares(&x, &resid)?;
        for (b, c) in beta.iter_mut().zip(&corr.coefficients) {
            *b += c;
        }
        coefficients.push(beta);
        dropped.push(first.dropped);
    }
    Ok(SeasonalModel {
        config,
        holidays: holidays.clone(),
        origin,
        log_demand,
        coefficients,
        dropped,
    })
}
