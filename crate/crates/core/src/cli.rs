//! Command-line front end.

use std::io::{self, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::clock::{ClockError, ClockState};
use crate::localization::localize;
use crate::montecarlo::{run_trials, TrialSettings};
use crate::report::{export_csv, read_retimed_csv, ExportError, RunReport};
use crate::retiming::{cluster_events, retime, RetimeError, RetimedEvent};
use crate::scenario::{load_scenario, ScenarioError};
use crate::sim::{run, SimError};
use crate::transport::live::{load_live_config, run_agent, run_supervisor, LiveError};
use crate::wave::SensorId;

#[derive(Debug, Parser)]
#[command(
    name = "cablesync",
    version,
    about = "Cable rupture sync and localization simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario and write its CSV tables.
    Simulate {
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cluster and locate the events of a retimed.csv.
    Localize {
        retimed: PathBuf,
        /// Scenario file supplying the sensor geometry.
        #[arg(long)]
        geometry: PathBuf,
    },
    /// Show counter latching and retiming for two drifting clocks.
    SyncDemo {
        #[arg(long, default_value_t = 3)]
        periods: u32,
        #[arg(long, default_value_t = 1_000_000)]
        period_us: u32,
        #[arg(long, value_delimiter = ',', default_values_t = vec![50.0, -50.0], allow_hyphen_values = true)]
        drift_ppm: Vec<f64>,
    },
    /// Run the live supervisor.
    Supervise { config: PathBuf },
    /// Run one live sensor agent.
    Agent {
        config: PathBuf,
        #[arg(long)]
        sensor_id: u16,
    },
    /// Localization error statistics over randomized trials.
    Montecarlo {
        scenario: PathBuf,
        #[arg(long, default_value_t = 1000)]
        trials: u32,
        #[arg(long, default_value_t = 3.0)]
        jitter_us: f64,
        #[arg(long, default_value_t = 50.0)]
        drift_ppm: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error(transparent)]
    Live(#[from] LiveError),
    #[error(transparent)]
    Clock(#[from] ClockError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn print_summary(report: &RunReport, out: &mut dyn Write) -> io::Result<()> {
    for (k, v) in report.summary.rows() {
        writeln!(out, "{k}: {v}")?;
    }
    Ok(())
}

fn print_estimates(report: &RunReport, out: &mut dyn Write) -> io::Result<()> {
    for e in &report.estimates {
        write!(
            out,
            "period {} cluster {}: ",
            e.period_index, e.cluster_index
        )?;
        match (e.x_est_m, e.v_est_m_s) {
            (Some(x), Some(v)) => write!(
                out,
                "x = {x:.4} m, v = {v:.1} m/s, triple ({}, {}, {})",
                opt(e.s1),
                opt(e.s2),
                opt(e.s3)
            )?,
            _ => write!(out, "no estimate")?,
        }
        if e.flags.is_empty() {
            writeln!(out)?;
        } else {
            writeln!(out, " [{}]", e.flags)?;
        }
    }
    Ok(())
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            scenario,
            out: dir,
            seed,
        } => {
            let mut s = load_scenario(&scenario)?;
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let report = run(&s)?;
            let files = export_csv(&report, &dir)?;
            print_estimates(&report, out)?;
            print_summary(&report, out)?;
            for f in files {
                writeln!(out, "wrote {}", f.display())?;
            }
        }
        Command::Localize { retimed, geometry } => {
            let s = load_scenario(&geometry)?;
            let geom = s.cable_geometry()?;
            let events: Vec<RetimedEvent> = read_retimed_csv(&retimed)?
                .into_iter()
                .filter_map(|r| {
                    Some(RetimedEvent {
                        sensor_id: SensorId(r.sensor_id),
                        period_index: r.period_index,
                        retimed_us: r.retimed_us?,
                        raw_local_ticks: r.raw_local_ticks,
                        saved_counter: r.saved_counter,
                        max_amplitude_g: r.max_amplitude_g,
                        flag: None,
                    })
                })
                .collect();
            let mut w = csv::Writer::from_writer(out);
            w.write_record([
                "period_index",
                "cluster_index",
                "x_est_m",
                "v_est_m_s",
                "s1",
                "s2",
                "s3",
                "flags",
            ])
            .map_err(io::Error::from)?;
            let mut cluster_index = 0;
            let mut period = None;
            for c in cluster_events(&events, s.sync_protocol.coincidence_window_us) {
                if period != Some(c.period_index) {
                    period = Some(c.period_index);
                    cluster_index = 0;
                }
                let e = localize(&c, &geom);
                w.write_record([
                    c.period_index.to_string(),
                    cluster_index.to_string(),
                    opt(e.x_est_m),
                    opt(e.v_est_m_s),
                    opt(e.triple.map(|t| t.s1)),
                    opt(e.triple.map(|t| t.s2)),
                    opt(e.triple.map(|t| t.s3)),
                    e.flags_label(),
                ])
                .map_err(io::Error::from)?;
                cluster_index += 1;
            }
            w.flush()?;
        }
        Command::SyncDemo {
            periods,
            period_us,
            drift_ppm,
        } => sync_demo(periods, period_us, &drift_ppm, out)?,
        Command::Supervise { config } => {
            let (config, scenario) = load_live_config(&config)?;
            let report = run_supervisor(&config, &scenario)?;
            print_estimates(&report, out)?;
            print_summary(&report, out)?;
        }
        Command::Agent { config, sensor_id } => {
            let (config, scenario) = load_live_config(&config)?;
            let stats = run_agent(&config, &scenario, sensor_id)?;
            writeln!(out, "{stats:?}")?;
        }
        Command::Montecarlo {
            scenario,
            trials,
            jitter_us,
            drift_ppm,
            seed,
        } => {
            let base = load_scenario(&scenario)?;
            let settings = TrialSettings {
                trials,
                jitter_us,
                drift_ppm,
                seed,
            };
            let started = Instant::now();
            let summary = run_trials(&base, &settings)?;
            writeln!(out, "trials: {trials}")?;
            writeln!(out, "failed: {}", summary.failed)?;
            writeln!(out, "p50_error_m: {}", summary.p50_m)?;
            writeln!(out, "p99_error_m: {}", summary.p99_m)?;
            writeln!(out, "max_error_m: {}", summary.max_m)?;
            writeln!(out, "elapsed_s: {:.3}", started.elapsed().as_secs_f64())?;
        }
    }
    Ok(())
}

/// Per period and clock: the event stamped mid-period, the latched
/// counter, and the stamp retimed onto the reference period.
fn sync_demo(
    periods: u32,
    period_us: u32,
    drifts: &[f64],
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let t = f64::from(period_us);
    let mut clocks = drifts
        .iter()
        .map(|&d| ClockState::new(d))
        .collect::<Result<Vec<_>, _>>()?;
    writeln!(
        out,
        "period,drift_ppm,event_ref_us,raw_ticks,saved_counter,retimed_us"
    )?;
    for k in 0..periods {
        let event_ref = f64::from(k) * t + t / 2.0;
        for c in &mut clocks {
            c.advance_to(event_ref)?;
            let raw = c.read_counter();
            c.advance_to(f64::from(k + 1) * t)?;
            let saved = c.save_and_reset();
            let retimed =
                retime(raw, saved, t).map_err(|e: RetimeError| io::Error::other(e.to_string()))?;
            writeln!(
                out,
                "{k},{},{},{raw},{saved},{retimed}",
                c.drift_ppm(),
                event_ref - f64::from(k) * t
            )?;
        }
    }
    Ok(())
}

/// Parses `args` and runs the command, writing to stdout. Returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let stdout = io::stdout();
    let mut lock = stdout.lock();
    match execute(cli, &mut lock) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sync_demo_recovers_mid_period() {
        let mut buf = Vec::new();
        sync_demo(2, 1_000_000, &[50.0, -50.0], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let rows: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(rows.len(), 4);
        for row in rows {
            let retimed: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
            assert!((retimed - 500_000.0).abs() < 1e-6, "{row}");
        }
    }

    #[test]
    fn bad_flag_is_rejected() {
        assert!(Cli::try_parse_from(["cablesync", "simulate", "x.toml", "--bogus"]).is_err());
        assert!(Cli::try_parse_from(["cablesync", "simulate", "x.toml"]).is_err());
        assert!(Cli::try_parse_from(["cablesync", "sync-demo", "--drift-ppm", "-10,20"]).is_ok());
    }
}
