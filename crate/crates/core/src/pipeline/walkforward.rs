//! Walk-forward evaluation: grid search once, then retrain and test on a
//! rolling four-year training window.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::calendar::HolidayCalendar;
use super::seasonal::SeasonalConfig;
use super::series::HourlySeries;
use super::{evaluate_forecast, prepare, DEFAULT_TAU, X_DIM};
use crate::gradients::Engine;
use crate::metrics::{format_table, MetricReport};
use crate::model::{LagSet, ModelParams, RnnSpec};
use crate::numerics::Rng;
use crate::training::{grid_search, train, Grid, GridSearchReport, LossHead, TrainConfig, Windows};
use crate::{Error, Result};

/// Hyperparameters are chosen by training on the `train_years` before
/// `validation_year` and validating on it. Each test year `Y` is then
/// forecast by a model retrained on the `train_years` before `Y`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkForwardPlan {
    pub train_years: usize,
    pub validation_year: i32,
    pub test_years: Vec<i32>,
}

impl WalkForwardPlan {
    /// Four training years, then validation on year five and tests on every
    /// later year through `last_year`.
    pub fn rolling(first_year: i32, last_year: i32) -> Result<Self> {
        let plan = Self {
            train_years: 4,
            validation_year: first_year + 4,
            test_years: (first_year + 5..=last_year).collect(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.train_years == 0 {
            return Err(Error::Config("plan: train_years must be >= 1".into()));
        }
        if self.test_years.is_empty() {
            return Err(Error::Config("plan: needs at least one test year".into()));
        }
        if self.test_years.iter().any(|&y| y <= self.validation_year) {
            return Err(Error::Config(
                "plan: test years must follow the validation year".into(),
            ));
        }
        Ok(())
    }

    /// `(first, last)` training years for an evaluation year.
    pub fn train_span(&self, eval_year: i32) -> (i32, i32) {
        (eval_year - self.train_years as i32, eval_year - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkForwardConfig {
    pub lag_sets: Vec<LagSet>,
    pub head: LossHead,
    pub engine: Engine,
    pub tau: usize,
    /// Keep every `stride`-th training window.
    pub stride: usize,
    pub train: TrainConfig,
    pub grid: Grid,
    pub seasonal: SeasonalConfig,
}

impl Default for WalkForwardConfig {
    fn default() -> Self {
        Self {
            lag_sets: vec![
                LagSet::consecutive(1).expect("valid"),
                LagSet::consecutive(2).expect("valid"),
                LagSet::new(vec![1, 2, 24]).expect("valid"),
            ],
            head: LossHead::gaussian(),
            engine: Engine::Trrl,
            tau: DEFAULT_TAU,
            stride: 1,
            train: TrainConfig::default(),
            grid: Grid::default(),
            seasonal: SeasonalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardRow {
    /// `"glm"` or `"rnn{…}"`.
    pub model: String,
    pub year: i32,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkForwardReport {
    pub grids: Vec<(String, GridSearchReport)>,
    /// One row per (model, test year).
    pub rows: Vec<WalkForwardRow>,
}

impl WalkForwardReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let mut years: Vec<i32> = self.rows.iter().map(|r| r.year).collect();
        years.dedup();
        for y in years {
            let _ = writeln!(out, "test year {y}");
            let rows: Vec<(String, MetricReport)> = self
                .rows
                .iter()
                .filter(|r| r.year == y)
                .map(|r| (r.model.clone(), r.metrics.clone()))
                .collect();
            out.push_str(&format_table(&rows));
            out.push('\n');
        }
        out
    }
}

fn model_name(lags: &LagSet) -> String {
    format!("rnn{lags}")
}

pub fn run_walk_forward(
    series: &HourlySeries,
    holidays: &HolidayCalendar,
    plan: &WalkForwardPlan,
    config: &WalkForwardConfig,
) -> Result<WalkForwardReport> {
    plan.validate()?;
    if config.lag_sets.is_empty() {
        return Err(Error::Config(
            "walk-forward needs at least one lag set".into(),
        ));
    }
    let tau = config.tau;
    let stride = config.stride.max(1);
    let head = config.head;
    let y_dim = head.y_dim();

    // grid search on the validation year, one per lag set
    let (v0, v1) = plan.train_span(plan.validation_year);
    let fit = series.year_range(v0, v1)?;
    let val_range = series.year_range(plan.validation_year, plan.validation_year)?;
    let prep = prepare(series, fit.clone(), holidays, config.seasonal)?;
    let train_set = prep.windows(fit, tau, stride)?;
    let val_set = prep.windows_ending_in(val_range, tau, stride)?;
    let mut chosen = Vec::new();
    let mut grids = Vec::new();
    for lags in &config.lag_sets {
        let template = RnnSpec::new(lags.clone(), X_DIM, 1, y_dim)?;
        let report = grid_search(
            &template,
            &train_set,
            &val_set,
            config.engine,
            &head,
            &config.train,
            &config.grid,
        )?;
        let best = report
            .best()
            .ok_or_else(|| {
                Error::Config(format!("every grid cell failed for {}", model_name(lags)))
            })?
            .clone();
        chosen.push((lags.clone(), best));
        grids.push((model_name(lags), report));
    }

    // retrain with frozen hyperparameters and test
    let mut rows = Vec::new();
    for &year in &plan.test_years {
        let (a, b) = plan.train_span(year);
        let fit = series.year_range(a, b)?;
        let horizon = series.year_range(year, year)?;
        let prep = prepare(series, fit.clone(), holidays, config.seasonal)?;
        let realized = &prep.demand[horizon.clone()];
        let glm = prep.seasonal_forecast(horizon.clone());
        rows.push(WalkForwardRow {
            model: "glm".into(),
            year,
            metrics: MetricReport::compute(&glm, realized, None)?,
        });
        let train_set = prep.windows(fit, tau, stride)?;
        for (lags, best) in &chosen {
            let spec = RnnSpec::new(lags.clone(), X_DIM, best.hidden_dim, y_dim)?;
            let init = ModelParams::init(&spec, &mut Rng::new(config.train.seed));
            let cfg = TrainConfig {
                learning_rate: best.learning_rate,
                batch_size: best.batch_size,
                max_epochs: best.best_epoch.max(1),
                ..config.train
            };
            let (params, _) = train(
                &init,
                &train_set as &dyn Windows,
                config.engine,
                &head,
                &cfg,
                None,
            )?;
            let pts =
                prep.forecast(&params, &head, horizon.clone(), tau, config.train.execution)?;
            rows.push(WalkForwardRow {
                model: model_name(lags),
                year,
                metrics: evaluate_forecast(&pts, realized, &head)?,
            });
        }
    }
    Ok(WalkForwardReport { grids, rows })
}
