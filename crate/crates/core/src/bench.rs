//! Complexity sweeps driven by the deterministic operation counters.
//!
//! Counters are the asserted quantities; wall-clock seconds are recorded for
//! reference only.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::gradients::Engine;
use crate::model::{LagSet, ModelParams, RnnSpec};
use crate::numerics::{rand_uniform, Rng};
use crate::{Error, Result};

pub const CSV_COLUMNS: [&str; 10] = [
    "engine",
    "lag_set",
    "hidden_dim",
    "y_dim",
    "tau",
    "mac_count",
    "forward_mac_count",
    "peak_floats",
    "wall_seconds",
    "macronodes",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRecord {
    pub engine: Engine,
    pub lag_set: LagSet,
    pub hidden_dim: usize,
    pub y_dim: usize,
    pub tau: usize,
    /// Gradient propagation MACs (forward pass excluded).
    pub mac_count: u64,
    pub forward_mac_count: u64,
    pub peak_floats: u64,
    pub wall_seconds: f64,
    pub macronodes: Option<u128>,
}

fn half_squared(y: &[f64]) -> (f64, Vec<f64>) {
    (0.5 * y.iter().map(|v| v * v).sum::<f64>(), y.to_vec())
}

/// A seeded model and input sequence of length `tau`.
pub fn bench_case(spec: &RnnSpec, tau: usize, seed: u64) -> Result<(ModelParams, Vec<Vec<f64>>)> {
    let mut rng = Rng::new(seed);
    let params = ModelParams::init(spec, &mut rng);
    let xs = (0..tau)
        .map(|_| rand_uniform(&mut rng, -1.0, 1.0, spec.x_dim))
        .collect::<Result<_>>()?;
    Ok((params, xs))
}

/// One gradient evaluation.
pub fn measure(
    engine: Engine,
    params: &ModelParams,
    xs: &[Vec<f64>],
    bptt_guard: usize,
) -> Result<BenchRecord> {
    let spec = params.spec();
    let started = Instant::now();
    let out = engine.run(params, xs, &half_squared, bptt_guard)?;
    let wall = started.elapsed().as_secs_f64().max(1e-9);
    Ok(BenchRecord {
        engine,
        lag_set: spec.lag_set.clone(),
        hidden_dim: spec.hidden_dim,
        y_dim: spec.y_dim,
        tau: xs.len(),
        mac_count: out.counter.mac_count,
        forward_mac_count: out.counter.forward_mac_count,
        peak_floats: out.counter.peak_floats,
        wall_seconds: wall,
        macronodes: out.macronodes,
    })
}

/// One record per `τ`, all prefixes of one seeded sequence.
pub fn sweep_tau(
    engine: Engine,
    spec: &RnnSpec,
    taus: &[usize],
    seed: u64,
    bptt_guard: usize,
) -> Result<Vec<BenchRecord>> {
    let max = taus.iter().copied().max().unwrap_or(0);
    if taus.contains(&0) {
        return Err(Error::InvalidArgument("tau must be >= 1".into()));
    }
    let (params, xs) = bench_case(spec, max, seed)?;
    taus.iter()
        .map(|&t| measure(engine, &params, &xs[..t], bptt_guard))
        .collect()
}

/// The engine × lag set × hidden size grid at fixed `τ`, `x` and `y`.
/// BPTT rows are skipped when `τ` exceeds the guard.
pub fn sweep_neurons(
    engines: &[Engine],
    lag_sets: &[LagSet],
    hidden: &[usize],
    tau: usize,
    x_dim: usize,
    y_dim: usize,
    seed: u64,
    bptt_guard: usize,
) -> Result<Vec<BenchRecord>> {
    let mut out = Vec::new();
    for lags in lag_sets {
        for &h in hidden {
            let spec = RnnSpec::new(lags.clone(), x_dim, h, y_dim)?;
            let (params, xs) = bench_case(&spec, tau, seed)?;
            for &e in engines {
                if e == Engine::Bptt && tau > bptt_guard {
                    continue;
                }
                out.push(measure(e, &params, &xs, bptt_guard)?);
            }
        }
    }
    Ok(out)
}

/// RTRL over TRRL cost for one (lag set, hidden size) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainRow {
    pub lag_set: LagSet,
    pub hidden_dim: usize,
    pub rtrl_macs: u64,
    pub trrl_macs: u64,
    pub rtrl_seconds: f64,
    pub trrl_seconds: f64,
    pub gain: f64,
}

pub fn gain_table(records: &[BenchRecord]) -> Vec<GainRow> {
    let mut rows = Vec::new();
    for r in records.iter().filter(|r| r.engine == Engine::Rtrl) {
        let t = records.iter().find(|t| {
            t.engine == Engine::Trrl
                && t.lag_set == r.lag_set
                && t.hidden_dim == r.hidden_dim
                && t.tau == r.tau
        });
        if let Some(t) = t {
            rows.push(GainRow {
                lag_set: r.lag_set.clone(),
                hidden_dim: r.hidden_dim,
                rtrl_macs: r.mac_count,
                trrl_macs: t.mac_count,
                rtrl_seconds: r.wall_seconds,
                trrl_seconds: t.wall_seconds,
                gain: r.mac_count as f64 / t.mac_count as f64,
            });
        }
    }
    rows
}

pub fn format_gain_table(rows: &[GainRow]) -> String {
    let mut out = format!(
        "{:<10} {:>6} {:>12} {:>12} {:>8}\n",
        "lags", "hidden", "rtrl_macs", "trrl_macs", "gain"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>12} {:>12} {:>8.2}",
            r.lag_set.to_string(),
            r.hidden_dim,
            r.rtrl_macs,
            r.trrl_macs,
            r.gain
        );
    }
    out
}

/// Least-squares line `y = a + b·x` and its coefficient of determination.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<(f64, f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::InvalidArgument(
            "linear fit needs two or more paired points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidArgument("linear fit with constant x".into()));
    }
    let b = sxy / sxx;
    let a = my - b * mx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        sxy * sxy / (sxx * syy)
    };
    Ok((a, b, r2))
}

pub fn write_csv<W: Write>(records: &[BenchRecord], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(CSV_COLUMNS)?;
    for r in records {
        w.write_record([
            r.engine.name().to_string(),
            r.lag_set.to_string(),
            r.hidden_dim.to_string(),
            r.y_dim.to_string(),
            r.tau.to_string(),
            r.mac_count.to_string(),
            r.forward_mac_count.to_string(),
            r.peak_floats.to_string(),
            r.wall_seconds.to_string(),
            r.macronodes.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes (overwriting) `path`.
pub fn emit_csv(records: &[BenchRecord], path: &Path) -> Result<()> {
    write_csv(
        records,
        std::io::BufWriter::new(std::fs::File::create(path)?),
    )
}

pub fn read_csv<R: Read>(reader: R) -> Result<Vec<BenchRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    if rdr.headers()?.iter().collect::<Vec<_>>() != CSV_COLUMNS {
        return Err(Error::Data(format!(
            "bench header must be {}",
            CSV_COLUMNS.join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let bad = |i: usize| Error::Data(format!("bench column {}: {:?}", CSV_COLUMNS[i], &rec[i]));
        let int = |i: usize| rec[i].parse::<u64>().map_err(|_| bad(i));
        out.push(BenchRecord {
            engine: rec[0].parse()?,
            lag_set: rec[1].parse()?,
            hidden_dim: int(2)? as usize,
            y_dim: int(3)? as usize,
            tau: int(4)? as usize,
            mac_count: int(5)?,
            forward_mac_count: int(6)?,
            peak_floats: int(7)?,
            wall_seconds: rec[8].parse().map_err(|_| bad(8))?,
            macronodes: if rec[9].is_empty() {
                None
            } else {
                Some(rec[9].parse().map_err(|_| bad(9))?)
            },
        });
    }
    Ok(out)
}
