//! Point and density forecast accuracy.
//!
//! Densities are per-hour lognormals `exp(N(m, s²))`; pinball loss and
//! interval coverage are computed on the physical (MWh) scale.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// `exp(N(mu_log, sigma_log²))`; `sigma_log = 0` is a point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogNormal {
    pub mu_log: f64,
    pub sigma_log: f64,
}

fn std_normal() -> Normal {
    Normal::standard()
}

/// `Φ⁻¹(q)`.
pub fn normal_quantile(q: f64) -> f64 {
    std_normal().inverse_cdf(q)
}

impl LogNormal {
    pub fn new(mu_log: f64, sigma_log: f64) -> Result<Self> {
        if !mu_log.is_finite() || !(sigma_log >= 0.0) || !sigma_log.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "lognormal parameters ({mu_log}, {sigma_log})"
            )));
        }
        Ok(Self { mu_log, sigma_log })
    }

    pub fn mean(&self) -> f64 {
        (self.mu_log + 0.5 * self.sigma_log * self.sigma_log).exp()
    }

    pub fn median(&self) -> f64 {
        self.mu_log.exp()
    }

    pub fn quantile(&self, q: f64) -> f64 {
        if self.sigma_log == 0.0 {
            return self.median();
        }
        (self.mu_log + self.sigma_log * normal_quantile(q)).exp()
    }

    /// Equal-tail interval with probability `alpha`.
    pub fn central_interval(&self, alpha: f64) -> (f64, f64) {
        let tail = 0.5 * (1.0 - alpha);
        (self.quantile(tail), self.quantile(1.0 - tail))
    }
}

fn check_lengths(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!(
            "{a} forecasts for {b} realizations"
        )));
    }
    if a == 0 {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    Ok(())
}

pub fn rmse(forecast: &[f64], realized: &[f64]) -> Result<f64> {
    check_lengths(forecast.len(), realized.len())?;
    let sse: f64 = forecast
        .iter()
        .zip(realized)
        .map(|(f, r)| (f - r).powi(2))
        .sum();
    Ok((sse / forecast.len() as f64).sqrt())
}

/// Mean absolute percentage error, in percent.
pub fn mape(forecast: &[f64], realized: &[f64]) -> Result<f64> {
    check_lengths(forecast.len(), realized.len())?;
    let mut total = 0.0;
    for (i, (f, r)) in forecast.iter().zip(realized).enumerate() {
        if *r == 0.0 {
            return Err(Error::Data(format!("zero realized value at index {i}")));
        }
        total += ((f - r) / r).abs();
    }
    Ok(100.0 * total / forecast.len() as f64)
}

/// `q·(r − f)` if `r ≥ f`, else `(1 − q)·(f − r)`.
pub fn pinball(q: f64, f: f64, r: f64) -> f64 {
    if r >= f {
        q * (r - f)
    } else {
        (1.0 - q) * (f - r)
    }
}

/// `0.01, 0.02, …, 0.99`.
pub fn default_quantiles() -> Vec<f64> {
    (1..=99).map(|i| i as f64 / 100.0).collect()
}

/// `0.90, 0.91, …, 0.99`.
pub fn default_alphas() -> Vec<f64> {
    (90..=99).map(|i| i as f64 / 100.0).collect()
}

fn check_probabilities(ps: &[f64], what: &str) -> Result<()> {
    if ps.is_empty() {
        return Err(Error::InvalidArgument(format!("empty {what} set")));
    }
    if let Some(p) = ps.iter().find(|p| !(**p > 0.0 && **p < 1.0)) {
        return Err(Error::InvalidArgument(format!("{what} {p} outside (0, 1)")));
    }
    Ok(())
}

/// Pinball loss averaged over quantiles, then over hours.
pub fn average_pinball_loss(
    distributions: &[LogNormal],
    realized: &[f64],
    quantiles: &[f64],
) -> Result<f64> {
    check_lengths(distributions.len(), realized.len())?;
    check_probabilities(quantiles, "quantile")?;
    let z: Vec<f64> = quantiles.iter().map(|&q| normal_quantile(q)).collect();
    let mut total = 0.0;
    for (d, &r) in distributions.iter().zip(realized) {
        let mut hour = 0.0;
        for (&q, &zq) in quantiles.iter().zip(&z) {
            let f = if d.sigma_log == 0.0 {
                d.median()
            } else {
                (d.mu_log + d.sigma_log * zq).exp()
            };
            hour += pinball(q, f, r);
        }
        total += hour / quantiles.len() as f64;
    }
    Ok(total / distributions.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub alpha: f64,
    pub coverage: f64,
}

/// Empirical coverage of the central `alpha` intervals (bounds inclusive).
pub fn ci_backtest(
    distributions: &[LogNormal],
    realized: &[f64],
    alphas: &[f64],
) -> Result<Vec<Coverage>> {
    check_lengths(distributions.len(), realized.len())?;
    check_probabilities(alphas, "alpha")?;
    Ok(alphas
        .iter()
        .map(|&alpha| {
            let tail = 0.5 * (1.0 - alpha);
            let (zl, zu) = (normal_quantile(tail), normal_quantile(1.0 - tail));
            let hits = distributions
                .iter()
                .zip(realized)
                .filter(|(d, &r)| {
                    let (lo, hi) = if d.sigma_log == 0.0 {
                        (d.median(), d.median())
                    } else {
                        (
                            (d.mu_log + d.sigma_log * zl).exp(),
                            (d.mu_log + d.sigma_log * zu).exp(),
                        )
                    };
                    lo <= r && r <= hi
                })
                .count();
            Coverage {
                alpha,
                coverage: hits as f64 / realized.len() as f64,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rmse_mwh: f64,
    pub mape_pct: f64,
    pub apl_mwh: Option<f64>,
    pub coverage: Vec<Coverage>,
}

impl MetricReport {
    /// Point metrics on `point`; density metrics when `distributions` is given.
    pub fn compute(
        point: &[f64],
        realized: &[f64],
        distributions: Option<&[LogNormal]>,
    ) -> Result<Self> {
        let rmse_mwh = rmse(point, realized)?;
        let mape_pct = mape(point, realized)?;
        let (apl_mwh, coverage) = match distributions {
            Some(d) => (
                Some(average_pinball_loss(d, realized, &default_quantiles())?),
                ci_backtest(d, realized, &default_alphas())?,
            ),
            None => (None, Vec::new()),
        };
        Ok(Self {
            rmse_mwh,
            mape_pct,
            apl_mwh,
            coverage,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Aligned text table, one row per labelled report.
pub fn format_table(rows: &[(String, MetricReport)]) -> String {
    let label_w = rows.iter().map(|(l, _)| l.len()).max().unwrap_or(0).max(5);
    let alphas: Vec<f64> = rows
        .iter()
        .find(|(_, r)| !r.coverage.is_empty())
        .map(|(_, r)| r.coverage.iter().map(|c| c.alpha).collect())
        .unwrap_or_default();
    let mut out = format!(
        "{:<label_w$}  {:>10}  {:>8}  {:>10}",
        "model", "RMSE", "MAPE%", "APL"
    );
    for a in &alphas {
        let _ = write!(out, "  {:>6}", format!("{:.0}%", a * 100.0));
    }
    out.push('\n');
    for (label, r) in rows {
        let apl = r
            .apl_mwh
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "-".into());
        let _ = write!(
            out,
            "{label:<label_w$}  {:>10.2}  {:>8.3}  {apl:>10}",
            r.rmse_mwh, r.mape_pct
        );
        for c in &r.coverage {
            let _ = write!(out, "  {:>6.3}", c.coverage);
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::{prop_assert, proptest};

    #[test]
    fn perfect_and_proportional() {
        let r = [10.0, 20.0, 30.0];
        assert_eq!(rmse(&r, &r).unwrap(), 0.0);
        assert_eq!(mape(&r, &r).unwrap(), 0.0);
        let f: Vec<f64> = r.iter().map(|v| 1.1 * v).collect();
        assert!((mape(&f, &r).unwrap() - 10.0).abs() < 1e-12);
        assert!(rmse(&r[..2], &r).is_err());
        assert!(mape(&[1.0], &[0.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn against_reference_recomputation() {
        let mut rng = Rng::new(24);
        let r: Vec<f64> = (0..24).map(|_| rng.uniform(50.0, 150.0)).collect();
        let f: Vec<f64> = (0..24).map(|_| rng.uniform(50.0, 150.0)).collect();
        // column-wise spreadsheet recomputation
        let sq: Vec<f64> = f.iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).collect();
        let ape: Vec<f64> = f.iter().zip(&r).map(|(a, b)| ((a - b) / b).abs()).collect();
        let want_rmse = (sq.iter().sum::<f64>() / 24.0).sqrt();
        let want_mape = ape.iter().sum::<f64>() / 24.0 * 100.0;
        assert!((rmse(&f, &r).unwrap() - want_rmse).abs() < 1e-12);
        assert!((mape(&f, &r).unwrap() - want_mape).abs() < 1e-12);
    }

    #[test]
    fn median_pinball_identity() {
        let d: Vec<LogNormal> = (0..5)
            .map(|i| LogNormal::new(i as f64 * 0.1, 0.2).unwrap())
            .collect();
        let r = [0.5, 1.5, 1.2, 3.0, 0.1];
        let apl = average_pinball_loss(&d, &r, &[0.5]).unwrap();
        let want = 0.5
            * d.iter()
                .zip(&r)
                .map(|(d, r)| (r - d.median()).abs())
                .sum::<f64>()
            / 5.0;
        assert!((apl - want).abs() < 1e-12);
    }

    #[test]
    fn degenerate_density_scores_zero() {
        let d = [LogNormal::new(2.0, 0.0).unwrap()];
        let r = [2.0f64.exp()];
        assert_eq!(
            average_pinball_loss(&d, &r, &default_quantiles()).unwrap(),
            0.0
        );
        assert!(average_pinball_loss(&d, &r, &[]).is_err());
        assert!(average_pinball_loss(&d, &r, &[1.0]).is_err());
    }

    #[test]
    fn brute_force_pinball_fixture() {
        let mut rng = Rng::new(10);
        let d: Vec<LogNormal> = (0..10)
            .map(|_| LogNormal::new(rng.uniform(4.0, 5.0), rng.uniform(0.01, 0.2)).unwrap())
            .collect();
        let r: Vec<f64> = (0..10).map(|_| rng.uniform(60.0, 140.0)).collect();
        let qs = default_quantiles();
        let mut total = 0.0;
        for h in 0..10 {
            for &q in &qs {
                let f = d[h].quantile(q);
                total += if r[h] >= f {
                    q * (r[h] - f)
                } else {
                    (1.0 - q) * (f - r[h])
                };
            }
        }
        let want = total / (10.0 * qs.len() as f64);
        assert!((average_pinball_loss(&d, &r, &qs).unwrap() - want).abs() < 1e-10);
    }

    #[test]
    fn coverage_edge_cases() {
        let d: Vec<LogNormal> = (0..4).map(|_| LogNormal::new(1.0, 0.1).unwrap()).collect();
        let at_median = vec![1f64.exp(); 4];
        assert!(ci_backtest(&d, &at_median, &default_alphas())
            .unwrap()
            .iter()
            .all(|c| c.coverage == 1.0));
        let far = vec![1e6; 4];
        assert!(ci_backtest(&d, &far, &default_alphas())
            .unwrap()
            .iter()
            .all(|c| c.coverage == 0.0));
    }

    #[test]
    fn monte_carlo_calibration() {
        let mut rng = Rng::new(99);
        let n = 10_000;
        let d: Vec<LogNormal> = (0..n)
            .map(|_| LogNormal::new(rng.uniform(3.0, 6.0), rng.uniform(0.02, 0.3)).unwrap())
            .collect();
        let r: Vec<f64> = d
            .iter()
            .map(|d| (d.mu_log + d.sigma_log * rng.standard_normal()).exp())
            .collect();
        for c in ci_backtest(&d, &r, &default_alphas()).unwrap() {
            assert!((c.coverage - c.alpha).abs() <= 0.02, "{c:?}");
        }
    }

    #[test]
    fn lognormal_mean_vs_median() {
        let d = LogNormal::new(1.0, 0.5).unwrap();
        assert!((d.mean() - (1.125f64).exp()).abs() < 1e-12);
        assert!(d.mean() > d.median());
        assert!(LogNormal::new(0.0, -1.0).is_err());
    }

    #[test]
    fn report_json_and_table() {
        let r = [100.0, 110.0];
        let d = [
            LogNormal::new(100f64.ln(), 0.05).unwrap(),
            LogNormal::new(110f64.ln(), 0.05).unwrap(),
        ];
        let point: Vec<f64> = d.iter().map(LogNormal::mean).collect();
        let rep = MetricReport::compute(&point, &r, Some(&d)).unwrap();
        let json = rep.to_json().unwrap();
        let back: MetricReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, rep);
        assert_eq!(rep.coverage.len(), 10);
        let table = format_table(&[("rnn{1,2,24}".into(), rep)]);
        assert_eq!(table.lines().count(), 2);
        assert!(table.contains("95%"));
    }

    proptest! {
        #[test]
        fn properties(seed in 0u64..500, n in 1usize..40) {
            let mut rng = Rng::new(seed);
            let d: Vec<LogNormal> = (0..n)
                .map(|_| LogNormal::new(rng.uniform(-1.0, 1.0), rng.uniform(0.0, 0.5)).unwrap())
                .collect();
            let r: Vec<f64> = (0..n).map(|_| rng.uniform(0.2, 3.0)).collect();
            let cov = ci_backtest(&d, &r, &default_alphas()).unwrap();
            for w in cov.windows(2) {
                prop_assert!(w[0].coverage <= w[1].coverage);
            }
            let apl = average_pinball_loss(&d, &r, &default_quantiles()).unwrap();
            let mut idx: Vec<usize> = (0..n).collect();
            rng.shuffle(&mut idx);
            let d2: Vec<LogNormal> = idx.iter().map(|&i| d[i]).collect();
            let r2: Vec<f64> = idx.iter().map(|&i| r[i]).collect();
            let apl2 = average_pinball_loss(&d2, &r2, &default_quantiles()).unwrap();
            prop_assert!((apl - apl2).abs() <= 1e-12 * apl.max(1.0));
            let f: Vec<f64> = d.iter().map(LogNormal::mean).collect();
            let e = rmse(&f, &r).unwrap();
            prop_assert!(e >= 0.0);
            prop_assert!((e == 0.0) == (f == r));
        }
    }
}
