//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Reference values are computed here by
//! independent means (finite differences, tree enumeration, naive sums).

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rnnp::bench::{sweep_neurons, sweep_tau};
use rnnp::gradients::{
    macronode_count, rtrl_space_estimate, rtrl_space_floats, scaled_inf_distance, Engine,
    GradcheckCase, GradientPair, DEFAULT_BPTT_GUARD,
};
use rnnp::metrics::mape;
use rnnp::model::{predict, LagSet, ModelParams, RnnSpec};
use rnnp::numerics::Rng;
use rnnp::pbonacci::{build_table, check_bounds, monotone_doubling_check};
use rnnp::pipeline::{
    evaluate_forecast, fit_seasonal, ingest_csv, prepare, run_walk_forward, synth_generate,
    HolidayCalendar, SeasonalConfig, SynthConfig, WalkForwardConfig, WalkForwardPlan, DEFAULT_TAU,
    X_DIM,
};
use rnnp::training::{train, Grid, LossHead, TrainConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- oracles

/// Central differences through the public forward pass.
fn fd_gradient(
    params: &ModelParams,
    xs: &[Vec<f64>],
    loss: &dyn Fn(&[f64]) -> f64,
    h: f64,
) -> Vec<f64> {
    let base = params.pack().concat();
    let mut probe = params.clone();
    let mut v = base.clone();
    let mut out = Vec::with_capacity(base.len());
    for i in 0..base.len() {
        v[i] = base[i] + h;
        probe.set_from_concat(&v).unwrap();
        let plus = loss(&predict(&probe, xs).unwrap());
        v[i] = base[i] - h;
        probe.set_from_concat(&v).unwrap();
        let minus = loss(&predict(&probe, xs).unwrap());
        v[i] = base[i];
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Nodes of the unrolled tree rooted at `t`, by explicit enumeration.
fn tree_nodes(t: usize, lags: &[usize]) -> u128 {
    1 + lags
        .iter()
        .filter(|&&l| t > l)
        .map(|&l| tree_nodes(t - l, lags))
        .sum::<u128>()
}

fn naive_pbonacci_sums(p: usize, n: usize) -> Vec<u128> {
    let mut x: Vec<u128> = vec![1];
    for k in 2..=n {
        let lo = k.saturating_sub(p).max(1);
        x.push((lo..k).map(|j| x[j - 1]).sum());
    }
    x.iter()
        .scan(0u128, |s, v| {
            *s += v;
            Some(*s)
        })
        .collect()
}

fn fibonacci(n: usize) -> u128 {
    let (mut a, mut b) = (0u128, 1u128);
    for _ in 0..n {
        (a, b) = (b, a + b);
    }
    a
}

fn r_squared(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let cov: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    cov * cov / (vx * vy)
}

fn param_count(x: usize, p: usize, y: usize, h: usize) -> u64 {
    ((x + p * y + 1) * h + (h + 1) * y) as u64
}

// ---------------------------------------------------------------- criteria

fn engine_equivalence() -> Outcome {
    let n = 200u64;
    let (mut worst_pair, mut worst_fd, mut worst_abs) = (0.0f64, 0.0f64, 0.0f64);
    let mut heads = [0usize; 2];
    let mut lag_sets = std::collections::BTreeSet::new();
    let mut failures = Vec::new();
    for seed in 0..n {
        let case = GradcheckCase::random(1000 + seed, 12).map_err(|e| e.to_string())?;
        let spec = case.params.spec().clone();
        assert!(spec.hidden_dim <= 8 && spec.x_dim <= 5 && case.xs.len() <= 12);
        heads[usize::from(case.gaussian)] += 1;
        lag_sets.insert(spec.lag_set.to_string());
        let loss = |y: &[f64]| case.loss(y);
        let value = |y: &[f64]| case.loss(y).0;
        let fd = fd_gradient(&case.params, &case.xs, &value, 1e-5);
        let grads: Vec<GradientPair> = Engine::ALL
            .iter()
            .map(|e| {
                e.run(&case.params, &case.xs, &loss, DEFAULT_BPTT_GUARD)
                    .map(|o| o.grads)
            })
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let d = scaled_inf_distance(&grads[i], &grads[j]);
            worst_pair = worst_pair.max(d);
            if d > 1e-10 {
                failures.push(format!(
                    "seed {seed} {}~{} {d:e}",
                    Engine::ALL[i],
                    Engine::ALL[j]
                ));
            }
        }
        for (e, g) in Engine::ALL.iter().zip(&grads) {
            for (a, b) in g.concat().iter().zip(&fd) {
                let abs = (a - b).abs();
                let rel = abs / a.abs().max(b.abs()).max(1e-12);
                worst_abs = worst_abs.max(abs);
                if abs > 1e-7 {
                    worst_fd = worst_fd.max(rel);
                    if rel > 1e-5 {
                        failures.push(format!("seed {seed} {e} vs fd rel {rel:e} abs {abs:e}"));
                    }
                }
            }
        }
    }
    let detail = format!(
        "{n} instances ({} mse / {} nll, lag sets {:?}); worst pairwise {worst_pair:.1e}; vs fd worst abs {worst_abs:.1e}, worst rel beyond 1e-7 abs {worst_fd:.1e}",
        heads[0], heads[1], lag_sets
    );
    let detail = if failures.is_empty() {
        detail
    } else {
        format!("{detail}; failures {failures:?}")
    };
    check(
        failures.is_empty() && heads.iter().all(|&h| h > 0) && lag_sets.len() == 4,
        detail,
    )
}

fn macronode_law() -> Outcome {
    let mut checked = 0;
    for p in 1..=4 {
        let lags = LagSet::consecutive(p).unwrap();
        let sums = if p >= 2 {
            Some(build_table(p, 40).map_err(|e| e.to_string())?)
        } else {
            None
        };
        for tau in 1..=40 {
            let m = macronode_count(tau, &lags).map_err(|e| e.to_string())?;
            let want = sums.as_ref().map_or(tau as u128, |t| t.s(tau));
            if m != want {
                return Err(format!("p={p} tau={tau}: {m} != S={want}"));
            }
            if p == 2 && m != fibonacci(tau + 2) - 1 {
                return Err(format!("tau={tau}: {m} != F_(tau+2) - 1"));
            }
            checked += 1;
        }
    }
    let cases: [&[usize]; 6] = [
        &[1],
        &[1, 2],
        &[1, 2, 3],
        &[1, 2, 3, 4],
        &[1, 3],
        &[1, 2, 5],
    ];
    let spec_for = |l: &[usize]| RnnSpec::new(LagSet::new(l.to_vec()).unwrap(), 2, 2, 1).unwrap();
    let loss = |y: &[f64]| (0.5 * y[0] * y[0], vec![y[0]]);
    for l in cases {
        let spec = spec_for(l);
        let params = ModelParams::init(&spec, &mut Rng::new(3));
        let xs = vec![vec![0.1, -0.2]; 15];
        for tau in 1..=15 {
            let out = Engine::Bptt
                .run(&params, &xs[..tau], &loss, DEFAULT_BPTT_GUARD)
                .map_err(|e| e.to_string())?;
            let brute = tree_nodes(tau, l);
            let dp = macronode_count(tau, &spec.lag_set).map_err(|e| e.to_string())?;
            if out.macronodes != Some(brute) || dp != brute {
                return Err(format!(
                    "L={l:?} tau={tau}: visited {:?}, dp {dp}, tree {brute}",
                    out.macronodes
                ));
            }
        }
    }
    Ok(format!("{checked} (tau, p) pairs match S_tau and F_(tau+2)-1; BPTT visits match tree enumeration for 6 lag sets, tau <= 15"))
}

fn pbonacci_bounds() -> Outcome {
    for p in 2..=6 {
        let table = build_table(p, 60).map_err(|e| e.to_string())?;
        let sums = naive_pbonacci_sums(p, 60);
        if table.sums() != sums.as_slice() {
            return Err(format!("p={p}: table differs from naive sums"));
        }
        let lib_bounds = check_bounds(&table);
        let lib_doubling = monotone_doubling_check(&table).map_err(|e| e.to_string())?;
        for n in 1..=60usize {
            let s = sums[n - 1];
            let pow = 1u128 << (n - 1);
            // √2^(n−1) ≤ S_n  ⇔  S_n² ≥ 2^(n−1)
            let ok = s * s >= pow && s <= pow;
            if !ok || !lib_bounds[n - 1].passed() {
                return Err(format!("p={p} n={n}: S={s}"));
            }
            if n >= 2 {
                let prev = sums[n - 2];
                let eq = s == 2 * prev;
                if s > 2 * prev || eq != (n <= p + 1) {
                    return Err(format!("p={p} n={n}: S={s}, 2S_prev={}", 2 * prev));
                }
            }
        }
        if !lib_doubling.iter().all(|d| d.passed()) {
            return Err(format!("p={p}: library doubling check disagrees"));
        }
    }
    Ok("p = 2..6, n <= 60: bounds hold exactly; S_n = 2 S_(n-1) exactly when n <= p+1".into())
}

fn complexity_shapes() -> Outcome {
    let spec = RnnSpec::new(LagSet::consecutive(2).unwrap(), X_DIM, 10, 2).unwrap();
    let taus: Vec<usize> = (3..=48).collect();
    let xs: Vec<f64> = taus.iter().map(|&t| t as f64).collect();
    let mut parts = Vec::new();
    let mut ok = true;
    for e in [Engine::Trrl, Engine::Rtrl] {
        let recs = sweep_tau(e, &spec, &taus, 11, DEFAULT_BPTT_GUARD).map_err(|e| e.to_string())?;
        let ys: Vec<f64> = recs.iter().map(|r| r.mac_count as f64).collect();
        let r2 = r_squared(&xs, &ys);
        ok &= r2 >= 0.999;
        parts.push(format!("{e} R2={r2:.6}"));
    }
    let recs = sweep_tau(
        Engine::Bptt,
        &spec,
        &[10, 11, 12, 13],
        11,
        DEFAULT_BPTT_GUARD,
    )
    .map_err(|e| e.to_string())?;
    let ratios: Vec<f64> = recs
        .windows(2)
        .map(|w| w[1].mac_count as f64 / w[0].mac_count as f64)
        .collect();
    ok &= ratios.iter().all(|r| (1.4..=1.9).contains(r));
    parts.push(format!(
        "bptt ratios {:?}",
        ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
    ));

    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let taus: Vec<usize> = (15..=22).collect();
    let recs =
        sweep_tau(Engine::Bptt, &spec, &taus, 11, DEFAULT_BPTT_GUARD).map_err(|e| e.to_string())?;
    let far: Vec<f64> = recs
        .windows(2)
        .map(|w| w[1].mac_count as f64 / w[0].mac_count as f64)
        .collect();
    ok &= far.iter().all(|r| (r - golden).abs() <= 0.1 * golden);

    for p in 1..=3 {
        for (h, y) in [(5, 1), (15, 2)] {
            let s = RnnSpec::new(LagSet::consecutive(p).unwrap(), X_DIM, h, y).unwrap();
            let rec = &sweep_tau(Engine::Rtrl, &s, &[20], 1, DEFAULT_BPTT_GUARD)
                .map_err(|e| e.to_string())?[0];
            let want = p as u64 * y as u64 * param_count(X_DIM, p, y, h);
            ok &= rec.peak_floats == want
                && rtrl_space_floats(&s) == want
                && rtrl_space_estimate(&s) == want;
        }
    }
    parts.push("rtrl peak = p*y*w for p=1..3".into());
    check(ok, parts.join("; "))
}

fn gain_factor() -> Outcome {
    let lag_sets = vec![
        LagSet::consecutive(1).unwrap(),
        LagSet::consecutive(2).unwrap(),
        LagSet::new(vec![1, 2, 24]).unwrap(),
        LagSet::consecutive(3).unwrap(),
    ];
    let recs = sweep_neurons(
        &[Engine::Rtrl, Engine::Trrl],
        &lag_sets,
        &[15],
        49,
        X_DIM,
        2,
        5,
        DEFAULT_BPTT_GUARD,
    )
    .map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut parts = Vec::new();
    for pair in recs.chunks(2) {
        let (r, t) = (&pair[0], &pair[1]);
        let p = r.lag_set.len() as f64;
        let gain = r.mac_count as f64 / t.mac_count as f64;
        ok &= (gain - 4.0 * p).abs() <= 0.3 * 4.0 * p;
        parts.push(format!("{} gain {gain:.2} (4p={})", r.lag_set, 4.0 * p));
    }
    let trrl: Vec<u64> = recs
        .iter()
        .filter(|r| r.engine == Engine::Trrl)
        .take(3)
        .map(|r| r.mac_count)
        .collect();
    let spread = *trrl.iter().max().unwrap() as f64 / *trrl.iter().min().unwrap() as f64;
    ok &= spread < 2.0;
    parts.push(format!("trrl spread {spread:.3}"));
    check(ok, parts.join("; "))
}

struct ForecastRun {
    oracle_mape: f64,
    rich: rnnp::metrics::MetricReport,
    chain: rnnp::metrics::MetricReport,
    glm_mape: f64,
}

fn forecast_run() -> Result<ForecastRun, String> {
    let s = synth_generate(&SynthConfig::default()).map_err(|e| e.to_string())?;
    let err = |e: rnnp::Error| e.to_string();
    let fit = s.series.year_range(2007, 2010).map_err(err)?;
    let test = s.series.year_range(2011, 2011).map_err(err)?;
    let prep = prepare(
        &s.series,
        fit.clone(),
        &s.holidays,
        SeasonalConfig::default(),
    )
    .map_err(err)?;
    let realized = &prep.demand[test.clone()];
    let oracle_mape = mape(&s.oracle_median()[test.clone()], realized).map_err(err)?;
    let glm_mape = mape(&prep.seasonal_forecast(test.clone()), realized).map_err(err)?;
    let windows = prep.windows(fit, DEFAULT_TAU, 2).map_err(err)?;
    let head = LossHead::gaussian();
    let cfg = TrainConfig {
        learning_rate: 5e-3,
        batch_size: 64,
        max_epochs: 30,
        patience: 30,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut reports = Vec::new();
    for lags in [vec![1, 2, 24], vec![1]] {
        let spec = RnnSpec::new(LagSet::new(lags).unwrap(), X_DIM, 10, 2).map_err(err)?;
        let init = ModelParams::init(&spec, &mut Rng::new(7));
        let (params, _) = train(&init, &windows, Engine::Trrl, &head, &cfg, None).map_err(err)?;
        let pts = prep
            .forecast(&params, &head, test.clone(), DEFAULT_TAU, cfg.execution)
            .map_err(err)?;
        reports.push(evaluate_forecast(&pts, realized, &head).map_err(err)?);
    }
    let chain = reports.pop().unwrap();
    let rich = reports.pop().unwrap();
    Ok(ForecastRun {
        oracle_mape,
        rich,
        chain,
        glm_mape,
    })
}

fn end_to_end(run: &Result<ForecastRun, String>) -> Outcome {
    let r = run.as_ref().map_err(|e| e.clone())?;
    let ok = r.rich.mape_pct <= 2.0 * r.oracle_mape && r.rich.rmse_mwh < r.chain.rmse_mwh;
    check(
        ok,
        format!(
            "MAPE rnn{{1,2,24}} {:.3}% vs oracle {:.3}% (limit {:.3}%), glm {:.3}%; RMSE rnn{{1,2,24}} {:.1} < rnn{{1}} {:.1}",
            r.rich.mape_pct,
            r.oracle_mape,
            2.0 * r.oracle_mape,
            r.glm_mape,
            r.rich.rmse_mwh,
            r.chain.rmse_mwh
        ),
    )
}

fn calibration(run: &Result<ForecastRun, String>) -> Outcome {
    let r = run.as_ref().map_err(|e| e.clone())?;
    let cov = &r.rich.coverage;
    let c95 = cov
        .iter()
        .find(|c| (c.alpha - 0.95).abs() < 1e-9)
        .ok_or("no 95% interval")?
        .coverage;
    let monotone = cov
        .windows(2)
        .all(|w| w[0].alpha < w[1].alpha && w[0].coverage <= w[1].coverage);
    let ok = (0.92..=0.98).contains(&c95) && monotone && cov.len() == 10;
    check(
        ok,
        format!(
            "95% coverage {:.2}%; coverage over 90..99%: {:?}",
            100.0 * c95,
            cov.iter()
                .map(|c| format!("{:.3}", c.coverage))
                .collect::<Vec<_>>()
        ),
    )
}

fn deseasonalization() -> Outcome {
    let mut worst = 0.0f64;
    let configs = [
        SynthConfig {
            years: 2,
            ..SynthConfig::default()
        },
        SynthConfig {
            years: 3,
            seed: 99,
            noise_sigma: 0.1,
            ..SynthConfig::default()
        },
        SynthConfig {
            years: 1,
            seed: 5,
            level: 3.0,
            trend_per_year: 0.3,
            ..SynthConfig::default()
        },
    ];
    for (k, c) in configs.iter().enumerate() {
        let s = synth_generate(c).map_err(|e| e.to_string())?;
        for cfg in [SeasonalConfig::default(), SeasonalConfig::intercept_only()] {
            let fit = 0..s.series.len() - if k == 1 { 24 * 100 } else { 0 };
            let m = fit_seasonal(&s.series, fit.clone(), &s.holidays, cfg)
                .map_err(|e| e.to_string())?;
            let res = m.deseasonalize(&s.series);
            let mut sum = [0.0f64; 24];
            let mut n = [0usize; 24];
            for i in fit {
                let h = i % 24;
                sum[h] += res.residuals()[i];
                n[h] += 1;
            }
            for h in 0..24 {
                worst = worst.max((sum[h] / n[h] as f64).abs());
            }
        }
    }
    check(
        worst <= 1e-10,
        format!("worst per-hour in-sample residual mean {worst:.2e} over 6 fits"),
    )
}

fn walk_forward_layout() -> Outcome {
    let err = |e: rnnp::Error| e.to_string();
    let quick = |lag_sets: Vec<LagSet>| WalkForwardConfig {
        lag_sets,
        stride: 48,
        train: TrainConfig {
            max_epochs: 3,
            learning_rate: 1e-2,
            ..TrainConfig::default()
        },
        grid: Grid {
            hidden_dims: vec![4],
            learning_rates: vec![1e-2],
            batch_sizes: vec![32],
        },
        ..WalkForwardConfig::default()
    };
    let s = synth_generate(&SynthConfig {
        years: 6,
        ..SynthConfig::default()
    })
    .map_err(err)?;
    let plan = WalkForwardPlan::rolling(2007, 2012).map_err(err)?;
    let rep = run_walk_forward(
        &s.series,
        &s.holidays,
        &plan,
        &quick(WalkForwardConfig::default().lag_sets),
    )
    .map_err(err)?;
    let models: Vec<&str> = rep.rows.iter().map(|r| r.model.as_str()).collect();
    let layout = models == ["glm", "rnn{1}", "rnn{1,2}", "rnn{1,2,24}"]
        && rep.rows.iter().all(|r| r.year == 2012);
    let mut detail = format!("harness layout {models:?} on synthetic 2007-2012 (not asserted: MAPE < 2.5% needs the real dataset)");
    if let Ok(path) = std::env::var("RNNP_LOAD_CSV") {
        let series = ingest_csv(path.as_ref()).map_err(err)?;
        let years = series.full_years();
        let cal = HolidayCalendar::us_federal(years[0], *years.last().unwrap());
        let plan = WalkForwardPlan::rolling(years[0], *years.last().unwrap()).map_err(err)?;
        let rep =
            run_walk_forward(&series, &cal, &plan, &WalkForwardConfig::default()).map_err(err)?;
        for r in rep.rows {
            detail.push_str(&format!(
                "; {} {} MAPE {:.2}%",
                r.model, r.year, r.metrics.mape_pct
            ));
        }
    }
    check(layout, detail)
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, limit: Duration, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let out = f();
        let dt = t.elapsed();
        let out = match out {
            Ok(d) if dt > limit => Err(format!("{d}; runtime {dt:.1?} over {limit:?}")),
            o => o,
        };
        match out {
            Ok(d) => println!("PASS [{id}] {name} ({:.1}s): {d}", dt.as_secs_f64()),
            Err(d) => {
                failed += 1;
                println!("FAIL [{id}] {name} ({:.1}s): {d}", dt.as_secs_f64());
            }
        }
    };
    let min = |m: u64| Duration::from_secs(60 * m);
    report("1", "engine equivalence", min(1), &mut engine_equivalence);
    report(
        "2",
        "macronode law",
        Duration::from_secs(10),
        &mut macronode_law,
    );
    report(
        "3",
        "p-bonacci bounds",
        Duration::from_secs(1),
        &mut pbonacci_bounds,
    );
    report("4", "complexity shapes", min(2), &mut complexity_shapes);
    report("5", "gain factor", min(2), &mut gain_factor);
    let mut run = Err("not run".to_string());
    report("6", "synthetic end-to-end forecast", min(10), &mut || {
        run = forecast_run();
        end_to_end(&run)
    });
    report("7", "probabilistic calibration", min(1), &mut || {
        calibration(&run)
    });
    report(
        "8",
        "deseasonalization exactness",
        min(2),
        &mut deseasonalization,
    );
    report(
        "9",
        "walk-forward harness (reported only)",
        min(5),
        &mut walk_forward_layout,
    );
    if failed > 0 {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    }
}
