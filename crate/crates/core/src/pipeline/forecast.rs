//! Closed-loop forecasting of every hour in a horizon.

use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use super::seasonal::SeasonalModel;
use super::series::{format_timestamp, parse_timestamp};
use crate::metrics::{normal_quantile, LogNormal};
use crate::model::{predict, ModelParams};
use crate::parallel::{map_indexed, Execution};
use crate::training::LossHead;
use crate::{Error, Result};

pub const FORECAST_HEADER: [&str; 6] = ["timestamp", "point", "mu_log", "sigma_log", "q05", "q95"];

/// One forecast hour. `mu_log` and `sigma_log` are the parameters of the
/// lognormal demand distribution in MWh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub timestamp: NaiveDateTime,
    /// Seasonal fit on the normalized log scale.
    pub seasonal: f64,
    /// Network mean and standard deviation on the normalized log scale.
    pub mu: f64,
    pub sigma: f64,
    pub mu_log: f64,
    pub sigma_log: f64,
    /// Lognormal mean (probabilistic head) or `exp(mu_log)` (point head).
    pub point: f64,
    pub q05: f64,
    pub q95: f64,
}

impl ForecastPoint {
    pub fn distribution(&self) -> LogNormal {
        LogNormal {
            mu_log: self.mu_log,
            sigma_log: self.sigma_log,
        }
    }

    /// Builds the lognormal from normalized-scale network outputs.
    pub fn assemble(
        timestamp: NaiveDateTime,
        seasonal_model: &SeasonalModel,
        seasonal: f64,
        mu: f64,
        sigma: f64,
        head: &LossHead,
    ) -> Self {
        let mu_log = seasonal_model.denormalize(seasonal + mu);
        let sigma_log = seasonal_model.log_demand.std * sigma;
        let point = match head {
            LossHead::PointMse => mu_log.exp(),
            LossHead::GaussianNll { .. } => (mu_log + 0.5 * sigma_log * sigma_log).exp(),
        };
        let z = normal_quantile(0.95);
        Self {
            timestamp,
            seasonal,
            mu,
            sigma,
            mu_log,
            sigma_log,
            point,
            q05: (mu_log - z * sigma_log).exp(),
            q95: (mu_log + z * sigma_log).exp(),
        }
    }
}

/// Forecasts every hour in `horizon`. Hour `t` is predicted by a fresh
/// closed-loop run over the `τ` inputs ending at `t`, with zero feedbacks
/// before the window, so the network only ever sees its own outputs.
pub fn forecast_year(
    params: &ModelParams,
    head: &LossHead,
    seasonal: &SeasonalModel,
    features: &[Vec<f64>],
    timestamps: &[NaiveDateTime],
    horizon: Range<usize>,
    tau: usize,
    exec: Execution,
) -> Result<Vec<ForecastPoint>> {
    head.check(params.spec())?;
    if features.len() != timestamps.len() {
        return Err(Error::Dimension(format!(
            "{} feature rows for {} timestamps",
            features.len(),
            timestamps.len()
        )));
    }
    if tau == 0 {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    if horizon.end > features.len() {
        return Err(Error::Data(format!(
            "missing exogenous rows: horizon ends at row {} of {}",
            horizon.end,
            features.len()
        )));
    }
    if horizon.start + 1 < tau {
        return Err(Error::Data(format!(
            "missing exogenous rows: the first forecast needs {} hours of history",
            tau - 1
        )));
    }
    let start = horizon.start;
    let out = map_indexed(horizon.len(), exec, |k| {
        let t = start + k;
        let y = predict(params, &features[t + 1 - tau..=t])?;
        let (mu, sigma) = head.mean_sigma(&y);
        let s = seasonal.predict(timestamps[t]);
        Ok(ForecastPoint::assemble(
            timestamps[t],
            seasonal,
            s,
            mu,
            sigma,
            head,
        ))
    });
    out.into_iter().collect()
}

pub fn write_forecast_csv<W: Write>(points: &[ForecastPoint], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(FORECAST_HEADER)?;
    for p in points {
        w.write_record([
            format_timestamp(&p.timestamp),
            p.point.to_string(),
            p.mu_log.to_string(),
            p.sigma_log.to_string(),
            p.q05.to_string(),
            p.q95.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_forecast_csv(points: &[ForecastPoint], path: &Path) -> Result<()> {
    write_forecast_csv(
        points,
        std::io::BufWriter::new(std::fs::File::create(path)?),
    )
}

/// A row of the forecast file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastRow {
    pub timestamp: NaiveDateTime,
    pub point: f64,
    pub mu_log: f64,
    pub sigma_log: f64,
}

impl ForecastRow {
    pub fn distribution(&self) -> LogNormal {
        LogNormal {
            mu_log: self.mu_log,
            sigma_log: self.sigma_log,
        }
    }
}

pub fn read_forecast_csv<R: Read>(reader: R) -> Result<Vec<ForecastRow>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != FORECAST_HEADER {
        return Err(Error::Data(format!(
            "forecast header must be {}",
            FORECAST_HEADER.join(",")
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|e| {
                Error::Data(format!(
                    "forecast line {}: {}: {e}",
                    line + 2,
                    FORECAST_HEADER[i]
                ))
            })
        };
        out.push(ForecastRow {
            timestamp: parse_timestamp(&rec[0])?,
            point: num(1)?,
            mu_log: num(2)?,
            sigma_log: num(3)?,
        });
    }
    Ok(out)
}

pub fn load_forecast_csv(path: &Path) -> Result<Vec<ForecastRow>> {
    read_forecast_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}
