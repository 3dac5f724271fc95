//! Hourly load forecasting on top of the RNN(p) model.
//!
//! The flow is: validated [`HourlySeries`] → [`FeatureEncoder`] (13 inputs per
//! hour) and [`SeasonalModel`] (per-hour OLS on normalized log demand) →
//! residual windows for training → closed-loop [`forecast_year`] → lognormal
//! demand distributions scored by [`crate::metrics`].

mod calendar;
mod features;
mod forecast;
mod seasonal;
mod series;
mod synth;
mod walkforward;
mod windows;

use std::ops::Range;
use std::sync::Arc;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

pub use calendar::HolidayCalendar;
pub use features::{
    days_in_year, weekday_dummies, year_fraction, ChannelStats, FeatureEncoder, X_DIM,
};
pub use forecast::{
    forecast_year, load_forecast_csv, read_forecast_csv, save_forecast_csv, write_forecast_csv,
    ForecastPoint, ForecastRow, FORECAST_HEADER,
};
pub use seasonal::{fit_seasonal, ResidualSeries, SeasonalConfig, SeasonalModel, MIN_FIT_HOURS};
pub use series::{
    format_timestamp, ingest_csv, parse_timestamp, HourlyRow, HourlySeries, CSV_HEADER,
};
pub use synth::{synth_generate, SynthConfig, SynthSeries};
pub use walkforward::{
    run_walk_forward, WalkForwardConfig, WalkForwardPlan, WalkForwardReport, WalkForwardRow,
};
pub use windows::{make_windows, make_windows_ending_in, WindowSet};

use crate::metrics::{LogNormal, MetricReport};
use crate::model::ModelParams;
use crate::parallel::Execution;
use crate::training::LossHead;
use crate::Result;

/// Default window length: two days plus one hour.
pub const DEFAULT_TAU: usize = 49;

/// Everything a trained network needs besides its weights to forecast;
/// stored as the checkpoint state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub encoder: FeatureEncoder,
    pub seasonal: SeasonalModel,
    pub head: LossHead,
    pub tau: usize,
}

/// A series with encoder and seasonal model fitted on one window, and the
/// features and residual targets of every row.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub encoder: FeatureEncoder,
    pub seasonal: SeasonalModel,
    pub timestamps: Vec<NaiveDateTime>,
    pub demand: Vec<f64>,
    pub features: Arc<Vec<Vec<f64>>>,
    pub residuals: ResidualSeries,
    pub targets: Arc<Vec<f64>>,
}

/// Fits the encoder and seasonal model on `fit` and encodes the whole series.
pub fn prepare(
    series: &HourlySeries,
    fit: Range<usize>,
    holidays: &HolidayCalendar,
    seasonal: SeasonalConfig,
) -> Result<Prepared> {
    let encoder = FeatureEncoder::fit(series, fit.clone(), holidays.clone())?;
    let model = fit_seasonal(series, fit, holidays, seasonal)?;
    Ok(Prepared::with_models(series, encoder, model))
}

impl Prepared {
    pub fn with_models(
        series: &HourlySeries,
        encoder: FeatureEncoder,
        seasonal: SeasonalModel,
    ) -> Self {
        let residuals = seasonal.deseasonalize(series);
        Self {
            features: Arc::new(encoder.encode_all(series)),
            targets: Arc::new(residuals.residuals().to_vec()),
            timestamps: series.timestamps(),
            demand: series.demand(),
            encoder,
            seasonal,
            residuals,
        }
    }

    pub fn state(&self, head: LossHead, tau: usize) -> PipelineState {
        PipelineState {
            encoder: self.encoder.clone(),
            seasonal: self.seasonal.clone(),
            head,
            tau,
        }
    }

    /// Windows entirely inside `range`.
    pub fn windows(&self, range: Range<usize>, tau: usize, stride: usize) -> Result<WindowSet> {
        make_windows(
            self.features.clone(),
            self.targets.clone(),
            range,
            tau,
            stride,
        )
    }

    /// Windows ending in `ends`, using earlier rows as history.
    pub fn windows_ending_in(
        &self,
        ends: Range<usize>,
        tau: usize,
        stride: usize,
    ) -> Result<WindowSet> {
        make_windows_ending_in(
            self.features.clone(),
            self.targets.clone(),
            ends,
            tau,
            stride,
        )
    }

    pub fn forecast(
        &self,
        params: &ModelParams,
        head: &LossHead,
        horizon: Range<usize>,
        tau: usize,
        exec: Execution,
    ) -> Result<Vec<ForecastPoint>> {
        forecast_year(
            params,
            head,
            &self.seasonal,
            &self.features,
            &self.timestamps,
            horizon,
            tau,
            exec,
        )
    }

    /// `exp(s_t)` denormalized: the seasonal model alone.
    pub fn seasonal_forecast(&self, horizon: Range<usize>) -> Vec<f64> {
        self.residuals.seasonal[horizon]
            .iter()
            .map(|&s| self.seasonal.denormalize(s).exp())
            .collect()
    }
}

/// Metrics of a forecast against realized demand; density metrics are
/// included when the forecasts carry a spread.
pub fn evaluate_forecast(
    points: &[ForecastPoint],
    realized: &[f64],
    head: &LossHead,
) -> Result<MetricReport> {
    let point: Vec<f64> = points.iter().map(|p| p.point).collect();
    match head {
        LossHead::PointMse => MetricReport::compute(&point, realized, None),
        LossHead::GaussianNll { .. } => {
            let d: Vec<LogNormal> = points.iter().map(ForecastPoint::distribution).collect();
            MetricReport::compute(&point, realized, Some(&d))
        }
    }
}
