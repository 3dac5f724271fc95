use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use rnnp::bench::{emit_csv, format_gain_table, gain_table, sweep_neurons, sweep_tau};
use rnnp::config::CliConfig;
use rnnp::gradients::{gradcheck_suite, write_gradcheck_csv, Engine, DEFAULT_FD_STEP};
use rnnp::metrics::{format_table, LogNormal, MetricReport};
use rnnp::model::{Checkpoint, LagSet, ModelParams, RnnSpec};
use rnnp::numerics::Rng;
use rnnp::parallel::Execution;
use rnnp::pbonacci::{build_table, check_bounds, fibonacci_sum_identity, monotone_doubling_check};
use rnnp::pipeline::{
    ingest_csv, load_forecast_csv, prepare, run_walk_forward, save_forecast_csv, synth_generate,
    HolidayCalendar, HourlySeries, PipelineState, Prepared, WalkForwardPlan, X_DIM,
};
use rnnp::training::{train, LossHead};
use rnnp::{Error, Result};

/// Exit code for a failed check (gradcheck, p-bonacci bounds).
const CHECK_FAILED: u8 = 5;

#[derive(Parser)]
#[command(
    name = "rnnp",
    version,
    about = "RNN(p) gradients, benchmarks and load forecasting"
)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config file).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum HeadArg {
    Point,
    Gaussian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Tau,
    Neurons,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Print the default configuration as TOML.
    InitConfig,
    /// Generate a synthetic hourly load series and its holiday calendar.
    Synth {
        #[arg(long)]
        years: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        holidays_out: Option<PathBuf>,
    },
    /// Fit the seasonal model and train an RNN(p) on its residuals.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        holidays: Option<PathBuf>,
        /// Training years as FIRST-LAST (default: every full year but the last).
        #[arg(long)]
        fit_years: Option<String>,
        /// Early-stopping year, outside the fit span.
        #[arg(long)]
        validation_year: Option<i32>,
        #[arg(long)]
        engine: Option<Engine>,
        /// Lag set such as "1,2,24".
        #[arg(long)]
        lags: Option<String>,
        #[arg(long)]
        hidden: Option<usize>,
        #[arg(long, value_enum)]
        head: Option<HeadArg>,
        #[arg(long)]
        tau: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, value_enum)]
        execution: Option<Execution>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Forecast one year with a trained checkpoint.
    Forecast {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Forecast year (default: the last full year of the data).
        #[arg(long)]
        year: Option<i32>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a forecast file against realized demand.
    Evaluate {
        #[arg(long)]
        forecast: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Cross-check all gradient engines against each other and finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 12)]
        max_tau: usize,
        #[arg(long, default_value_t = DEFAULT_FD_STEP)]
        fd_step: f64,
        /// CSV report path (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Operation-count sweeps over τ and over the neuron grid.
    Bench {
        #[arg(long, value_enum, default_value = "all")]
        sweep: Sweep,
    },
    /// p-bonacci table, identity and bound checks.
    Pbonacci {
        #[arg(long, default_value_t = 2)]
        p: usize,
        #[arg(long, default_value_t = 20)]
        n: usize,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Grid search on a validation year, then retrain and test year by year.
    WalkForward {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        holidays: Option<PathBuf>,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<CliConfig> {
    let mut c = match &cli.config {
        Some(p) => CliConfig::load(p)?,
        None => CliConfig::default(),
    };
    if let Some(s) = cli.seed {
        c.seed = s;
        c.apply_seed();
    }
    if let Some(d) = &cli.output_dir {
        c.paths.output_dir = d.clone();
    }
    Ok(c)
}

fn out_path(c: &CliConfig, given: &Option<PathBuf>, default: &str) -> Result<PathBuf> {
    if let Some(p) = given {
        if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        return Ok(p.clone());
    }
    fs::create_dir_all(&c.paths.output_dir)?;
    Ok(c.paths.output_dir.join(default))
}

fn data_path(c: &CliConfig, given: &Option<PathBuf>) -> Result<PathBuf> {
    given
        .clone()
        .or_else(|| c.paths.data.clone())
        .ok_or_else(|| Error::Config("no data file: pass --data or set paths.data".into()))
}

fn load_holidays(
    c: &CliConfig,
    given: &Option<PathBuf>,
    series: &HourlySeries,
) -> Result<HolidayCalendar> {
    match given.as_ref().or(c.paths.holidays.as_ref()) {
        Some(p) => HolidayCalendar::load(p),
        None => {
            let first = series.rows()[0].timestamp;
            let last = series.rows()[series.len() - 1].timestamp;
            use chrono::Datelike;
            Ok(HolidayCalendar::us_federal(first.year(), last.year()))
        }
    }
}

fn parse_years(s: &str) -> Result<(i32, i32)> {
    let bad = || Error::Config(format!("years must look like 2007-2010, got {s:?}"));
    let (a, b) = s.split_once(['-', ':']).ok_or_else(bad)?;
    let a: i32 = a.trim().parse().map_err(|_| bad())?;
    let b: i32 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn last_full_year(series: &HourlySeries) -> Result<i32> {
    series
        .full_years()
        .last()
        .copied()
        .ok_or_else(|| Error::Data("the data holds no complete calendar year".into()))
}

fn run(cli: Cli) -> Result<u8> {
    let mut c = load_config(&cli)?;
    match cli.command {
        Command::InitConfig => {
            print!("{}", c.to_toml()?);
        }
        Command::Synth {
            years,
            out,
            holidays_out,
        } => {
            if let Some(y) = years {
                c.synth.years = y;
            }
            let s = synth_generate(&c.synth)?;
            let path = out_path(&c, &out, "synth.csv")?;
            s.series.save_csv(&path)?;
            let hpath = out_path(&c, &holidays_out, "holidays.txt")?;
            fs::write(&hpath, s.holidays.to_text())?;
            println!(
                "wrote {} rows to {} and {} holidays to {}",
                s.series.len(),
                path.display(),
                s.holidays.len(),
                hpath.display()
            );
        }
        Command::Train {
            data,
            holidays,
            fit_years,
            validation_year,
            engine,
            lags,
            hidden,
            head,
            tau,
            stride,
            epochs,
            patience,
            lr,
            batch,
            execution,
            checkpoint,
            history,
        } => {
            let spec = &mut c.spec;
            if let Some(e) = engine {
                spec.engine = e;
            }
            if let Some(l) = lags {
                spec.lag_set = l
                    .parse::<LagSet>()
                    .map_err(|e| Error::Config(e.to_string()))?;
            }
            if let Some(h) = hidden {
                spec.hidden_dim = h;
            }
            match head {
                Some(HeadArg::Point) => spec.head = LossHead::PointMse,
                Some(HeadArg::Gaussian) => spec.head = LossHead::gaussian(),
                None => {}
            }
            if let Some(t) = tau {
                spec.tau = t;
            }
            if let Some(s) = stride {
                spec.stride = s;
            }
            let t = &mut c.train;
            if let Some(v) = epochs {
                t.max_epochs = v;
            }
            if let Some(v) = patience {
                t.patience = v;
            }
            if let Some(v) = lr {
                t.learning_rate = v;
            }
            if let Some(v) = batch {
                t.batch_size = v;
            }
            if let Some(v) = execution {
                t.execution = v;
            }
            c.validate()?;

            let series = ingest_csv(&data_path(&c, &data)?)?;
            let cal = load_holidays(&c, &holidays, &series)?;
            let (a, b) = match fit_years {
                Some(s) => parse_years(&s)?,
                None => {
                    let years = series.full_years();
                    if years.len() < 2 {
                        return Err(Error::Data(
                            "need two full years to hold one out by default".into(),
                        ));
                    }
                    (years[0], years[years.len() - 2])
                }
            };
            if validation_year.is_some_and(|v| (a..=b).contains(&v)) {
                return Err(Error::Config(
                    "the validation year must lie outside the fit years".into(),
                ));
            }
            let fit = series.year_range(a, b)?;
            let prep = prepare(&series, fit.clone(), &cal, c.spec.seasonal)?;
            let train_set = prep.windows(fit, c.spec.tau, c.spec.stride)?;
            let val_set = match validation_year {
                Some(v) => Some(prep.windows_ending_in(
                    series.year_range(v, v)?,
                    c.spec.tau,
                    c.spec.stride,
                )?),
                None => None,
            };
            let rnn = RnnSpec::new(
                c.spec.lag_set.clone(),
                X_DIM,
                c.spec.hidden_dim,
                c.spec.head.y_dim(),
            )?;
            let init = ModelParams::init(&rnn, &mut Rng::new(c.train.seed));
            let (params, hist) = train(
                &init,
                &train_set,
                c.spec.engine,
                &c.spec.head,
                &c.train,
                val_set.as_ref().map(|v| v as &dyn rnnp::training::Windows),
            )?;
            let ck_path = out_path(&c, &checkpoint, "model.ckpt")?;
            Checkpoint::new(&params, prep.state(c.spec.head, c.spec.tau)).save(&ck_path)?;
            let h_path = out_path(&c, &history, "history.csv")?;
            hist.save_csv(&h_path)?;
            println!(
                "trained rnn{} h={} on {a}-{b}: {} epochs, best epoch {} (loss {:.6}); checkpoint {}",
                c.spec.lag_set,
                c.spec.hidden_dim,
                hist.epochs.len(),
                hist.best_epoch,
                hist.best_loss,
                ck_path.display()
            );
        }
        Command::Forecast {
            checkpoint,
            data,
            year,
            out,
        } => {
            let ck_path = checkpoint.unwrap_or_else(|| c.paths.output_dir.join("model.ckpt"));
            let ck: Checkpoint<PipelineState> = Checkpoint::load(&ck_path)?;
            let params = ck.params()?;
            let series = ingest_csv(&data_path(&c, &data)?)?;
            let year = match year {
                Some(y) => y,
                None => last_full_year(&series)?,
            };
            let horizon = series.year_range(year, year)?;
            let st = ck.state;
            let prep = Prepared::with_models(&series, st.encoder, st.seasonal);
            let pts = prep.forecast(&params, &st.head, horizon, st.tau, c.train.execution)?;
            let path = out_path(&c, &out, "forecast.csv")?;
            save_forecast_csv(&pts, &path)?;
            println!(
                "wrote {} hourly forecasts for {year} to {}",
                pts.len(),
                path.display()
            );
        }
        Command::Evaluate {
            forecast,
            data,
            json,
        } => {
            let f_path = forecast.unwrap_or_else(|| c.paths.output_dir.join("forecast.csv"));
            let rows = load_forecast_csv(&f_path)?;
            if rows.is_empty() {
                return Err(Error::Data(format!(
                    "{} has no forecasts",
                    f_path.display()
                )));
            }
            let series = ingest_csv(&data_path(&c, &data)?)?;
            let realized = rows
                .iter()
                .map(|r| {
                    series
                        .index_of(r.timestamp)
                        .map(|i| series.rows()[i].demand_mwh)
                        .ok_or_else(|| {
                            Error::Data(format!("no realized demand at {}", r.timestamp))
                        })
                })
                .collect::<Result<Vec<_>>>()?;
            let point: Vec<f64> = rows.iter().map(|r| r.point).collect();
            let dists: Option<Vec<LogNormal>> = rows
                .iter()
                .all(|r| r.sigma_log > 0.0)
                .then(|| rows.iter().map(|r| r.distribution()).collect());
            let report = MetricReport::compute(&point, &realized, dists.as_deref())?;
            print!(
                "{}",
                format_table(&[("forecast".to_string(), report.clone())])
            );
            if let Some(p) = json {
                fs::write(p, report.to_json()? + "\n")?;
            }
        }
        Command::Gradcheck {
            seeds,
            max_tau,
            fd_step,
            out,
        } => {
            let rows = gradcheck_suite(seeds, max_tau, fd_step)?;
            match &out {
                Some(p) => write_gradcheck_csv(&rows, fs::File::create(p)?)?,
                None => write_gradcheck_csv(&rows, std::io::stdout().lock())?,
            }
            let failed = rows.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                eprintln!("gradcheck: {failed} of {} comparisons failed", rows.len());
                return Ok(CHECK_FAILED);
            }
            eprintln!("gradcheck: all {} comparisons passed", rows.len());
        }
        Command::Bench { sweep } => {
            let b = &c.bench;
            fs::create_dir_all(&c.paths.output_dir)?;
            if matches!(sweep, Sweep::Tau | Sweep::All) {
                let mut recs = Vec::new();
                for &e in &b.engines {
                    let spec = RnnSpec::new(
                        b.sweep_lag_set.clone(),
                        b.x_dim,
                        b.sweep_hidden_dim,
                        b.y_dim,
                    )?;
                    let taus: Vec<usize> = match e {
                        Engine::Bptt => b
                            .taus
                            .iter()
                            .copied()
                            .filter(|&t| t <= b.bptt_guard)
                            .collect(),
                        _ => b.taus.clone(),
                    };
                    recs.extend(sweep_tau(e, &spec, &taus, c.seed, b.bptt_guard)?);
                }
                let p = c.paths.output_dir.join("bench_tau.csv");
                emit_csv(&recs, &p)?;
                println!("wrote {} τ-sweep records to {}", recs.len(), p.display());
            }
            if matches!(sweep, Sweep::Neurons | Sweep::All) {
                let recs = sweep_neurons(
                    &b.engines,
                    &b.lag_sets,
                    &b.hidden_dims,
                    b.tau,
                    b.x_dim,
                    b.y_dim,
                    c.seed,
                    b.bptt_guard,
                )?;
                let p = c.paths.output_dir.join("bench_neurons.csv");
                emit_csv(&recs, &p)?;
                println!(
                    "wrote {} neuron-sweep records to {}",
                    recs.len(),
                    p.display()
                );
                print!("{}", format_gain_table(&gain_table(&recs)));
            }
        }
        Command::Pbonacci { p, n, format } => {
            if p < 2 || n == 0 {
                return Err(Error::Config("pbonacci needs p >= 2 and n >= 1".into()));
            }
            let table = build_table(p, n)?;
            let bounds = check_bounds(&table);
            let doubling = monotone_doubling_check(&table)?;
            let mut out = std::io::stdout().lock();
            match format {
                Format::Text => {
                    write!(out, "{}", table.to_text())?;
                    writeln!(out, "S_{n} = {}", table.s(n))?;
                }
                Format::Csv => write!(out, "{}", table.to_csv())?,
            }
            let ok_bounds = bounds.iter().all(|b| b.passed());
            let ok_doubling = doubling.iter().all(|d| d.passed());
            writeln!(
                out,
                "# bounds sqrt(2)^(n-1) <= S_n <= 2^(n-1): {}",
                verdict(ok_bounds)
            )?;
            writeln!(
                out,
                "# S_n <= 2 S_(n-1), equality iff n <= p+1: {}",
                verdict(ok_doubling)
            )?;
            let mut ok = ok_bounds && ok_doubling;
            if p == 2 {
                let (s, f) = fibonacci_sum_identity(n)?;
                writeln!(out, "# S_{n} = F_{} - 1 = {f}: {}", n + 2, verdict(s == f))?;
                ok &= s == f;
            }
            out.flush()?;
            if !ok {
                return Ok(CHECK_FAILED);
            }
        }
        Command::WalkForward {
            data,
            holidays,
            out,
        } => {
            let series = ingest_csv(&data_path(&c, &data)?)?;
            let cal = load_holidays(&c, &holidays, &series)?;
            let plan = match c.plan.clone() {
                Some(p) => p,
                None => {
                    let years = series.full_years();
                    let (first, last) = match (years.first(), years.last()) {
                        (Some(&f), Some(&l)) => (f, l),
                        _ => {
                            return Err(Error::Data(
                                "the data holds no complete calendar year".into(),
                            ))
                        }
                    };
                    WalkForwardPlan::rolling(first, last).map_err(|_| {
                        Error::Data(format!(
                            "walk-forward needs six full years, data spans {first}-{last}"
                        ))
                    })?
                }
            };
            let report = run_walk_forward(&series, &cal, &plan, &c.walk_forward())?;
            print!("{}", report.to_table());
            let p = out_path(&c, &out, "walk_forward.json")?;
            fs::write(&p, serde_json::to_string_pretty(&report)? + "\n")?;
        }
    }
    Ok(0)
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}
