//! Seeded synthetic hourly load with known structure.
//!
//! ```text
//! ln d_t = level + trend·years(t) + daily(h) + weekend(t) + yearly(t)
//!        − holiday(t) + z_t + ε_t
//! z_t    = a₁ z_{t−1} + a₂₄ z_{t−24} + β g(T_t)
//! ε_t    ~ N(0, σ²) i.i.d.
//! ```
//!
//! `g` is a quadratic comfort-band response to dry-bulb temperature, which
//! itself follows a yearly and daily cycle plus AR(1) weather noise. Given
//! the realized temperatures everything except `ε` is deterministic, so the
//! noiseless signal is the best possible ex-post forecast and gives an
//! oracle error floor.

use chrono::{Datelike, Duration, NaiveDate, Timelike, Weekday};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use super::calendar::HolidayCalendar;
use super::features::year_fraction;
use super::series::{HourlyRow, HourlySeries};
use crate::numerics::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub start_year: i32,
    pub years: usize,
    /// Mean log demand (ln MWh).
    pub level: f64,
    pub trend_per_year: f64,
    pub daily_amplitude: f64,
    pub weekend_drop: f64,
    pub yearly_amplitude: f64,
    pub holiday_drop: f64,
    pub ar_lag1: f64,
    pub ar_lag24: f64,
    pub temp_coef: f64,
    pub comfort_f: f64,
    pub noise_sigma: f64,
    pub temp_mean_f: f64,
    pub temp_yearly_amplitude_f: f64,
    pub temp_daily_amplitude_f: f64,
    pub temp_ar: f64,
    pub temp_noise_f: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            start_year: 2007,
            years: 5,
            level: 9.6,
            trend_per_year: 0.01,
            daily_amplitude: 0.12,
            weekend_drop: 0.06,
            yearly_amplitude: 0.05,
            holiday_drop: 0.07,
            ar_lag1: 0.5,
            ar_lag24: 0.3,
            temp_coef: 0.012,
            comfort_f: 60.0,
            noise_sigma: 0.02,
            temp_mean_f: 50.0,
            temp_yearly_amplitude_f: 22.0,
            temp_daily_amplitude_f: 8.0,
            temp_ar: 0.97,
            temp_noise_f: 1.2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.years == 0 {
            return bad("years must be >= 1");
        }
        if NaiveDate::from_ymd_opt(self.start_year, 1, 1).is_none() {
            return bad("start_year out of range");
        }
        if !(self.noise_sigma >= 0.0) || !(self.temp_noise_f >= 0.0) {
            return bad("noise levels must be >= 0");
        }
        if self.ar_lag1.abs() + self.ar_lag24.abs() >= 1.0 {
            return bad("|ar_lag1| + |ar_lag24| must be < 1 for a stable AR component");
        }
        if self.temp_ar.abs() >= 1.0 {
            return bad("|temp_ar| must be < 1");
        }
        let all = [
            self.level,
            self.trend_per_year,
            self.daily_amplitude,
            self.weekend_drop,
            self.yearly_amplitude,
            self.holiday_drop,
            self.temp_coef,
            self.comfort_f,
            self.temp_mean_f,
            self.temp_yearly_amplitude_f,
            self.temp_daily_amplitude_f,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return bad("non-finite parameter");
        }
        Ok(())
    }

    /// Comfort-band response `((T − comfort) / 15)²`.
    pub fn temperature_response(&self, drybulb_f: f64) -> f64 {
        ((drybulb_f - self.comfort_f) / 15.0).powi(2)
    }
}

/// Generated data plus the ground truth behind it.
#[derive(Debug, Clone)]
pub struct SynthSeries {
    pub series: HourlySeries,
    /// Noiseless log demand.
    pub log_signal: Vec<f64>,
    /// The AR component `z_t`.
    pub ar_component: Vec<f64>,
    pub holidays: HolidayCalendar,
    pub config: SynthConfig,
}

impl SynthSeries {
    /// `exp` of the noiseless signal: the median of the demand given the
    /// realized weather.
    pub fn oracle_median(&self) -> Vec<f64> {
        self.log_signal.iter().map(|s| s.exp()).collect()
    }
}

pub fn synth_generate(config: &SynthConfig) -> Result<SynthSeries> {
    config.validate()?;
    let c = config;
    let mut rng = Rng::new(c.seed);
    let mut weather = rng.fork();
    let mut noise = rng.fork();
    let last_year = c.start_year + c.years as i32 - 1;
    let holidays = HolidayCalendar::us_federal(c.start_year, last_year);
    let t0 = NaiveDate::from_ymd_opt(c.start_year, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .ok_or_else(|| Error::Config("synth: start_year out of range".into()))?;
    let t_end = NaiveDate::from_ymd_opt(last_year + 1, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .ok_or_else(|| Error::Config("synth: end year out of range".into()))?;
    let n = (t_end - t0).num_hours() as usize;

    let mut rows = Vec::with_capacity(n);
    let mut log_signal = Vec::with_capacity(n);
    let mut z = vec![0.0; n];
    let mut temp_noise = 0.0;
    for i in 0..n {
        let t = t0 + Duration::hours(i as i64);
        let date = t.date();
        let h = t.hour() as f64;
        let f = year_fraction(date);

        temp_noise = c.temp_ar * temp_noise + c.temp_noise_f * weather.standard_normal();
        let dry = c.temp_mean_f - c.temp_yearly_amplitude_f * (TAU * (f - 0.03)).cos()
            + c.temp_daily_amplitude_f * (TAU * (h - 9.0) / 24.0).sin()
            + temp_noise;
        let wet = dry - 4.0 - 0.05 * (dry - c.temp_mean_f).abs() + 0.5 * weather.standard_normal();

        let prev1 = if i >= 1 { z[i - 1] } else { 0.0 };
        let prev24 = if i >= 24 { z[i - 24] } else { 0.0 };
        z[i] = c.ar_lag1 * prev1 + c.ar_lag24 * prev24 + c.temp_coef * c.temperature_response(dry);

        let daily = c.daily_amplitude
            * ((TAU * (h - 8.0) / 24.0).sin() + 0.4 * (2.0 * TAU * h / 24.0).sin());
        let weekend = match date.weekday() {
            Weekday::Sat | Weekday::Sun => -c.weekend_drop,
            _ => 0.0,
        };
        let yearly = c.yearly_amplitude * (2.0 * TAU * f).cos();
        let holiday = if holidays.is_holiday(date) {
            -c.holiday_drop
        } else {
            0.0
        };
        let trend = c.trend_per_year * i as f64 / (24.0 * 365.25);
        let signal = c.level + trend + daily + weekend + yearly + holiday + z[i];
        let eps = c.noise_sigma * noise.standard_normal();
        log_signal.push(signal);
        rows.push(HourlyRow {
            timestamp: t,
            demand_mwh: (signal + eps).exp(),
            drybulb_f: dry,
            wetbulb_f: wet,
        });
    }
    Ok(SynthSeries {
        series: HourlySeries::new(rows)?,
        log_signal,
        ar_component: z,
        holidays,
        config: *config,
    })
}
