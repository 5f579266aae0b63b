use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gridid::params::ThetaEstimate;
use gridid::pipeline::identify;
use gridid::sim::{simulate, SimulationTrace};
use gridid::spectral::PccMeasurements;
use gridid_harness::config::ExperimentConfig;
use gridid_harness::experiment::{monte_carlo, sample_run, sample_topology, settings, sim_config};
use gridid_harness::{report, HarnessError, Result};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "gridid", version, about = "Gray-box grid equivalent identification at converter terminals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one run and write the PCC trace as CSV.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Monte-Carlo run index whose converter draws are used.
        #[arg(long, default_value_t = 0)]
        run: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Identify the equivalent at each PCC of a recorded trace.
    Identify {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// 1-based PCC index; all PCCs when omitted.
        #[arg(long)]
        pcc: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Monte-Carlo experiment and write summary, tables and plot data.
    Montecarlo {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        runs: Option<usize>,
        /// Full-length records and 20 runs.
        #[arg(long = "paper-scale", visible_alias = "full-scale")]
        paper_scale: bool,
        /// Run sequentially.
        #[arg(long)]
        serial: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate tables and admittance plot data from a summary.
    Report {
        #[arg(long)]
        summary: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    let cfg = match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

#[derive(Serialize)]
struct PccEstimate {
    pcc: usize,
    theta: ThetaEstimate,
    retained_bins: usize,
    equivalent_voltage_dc: [f64; 2],
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, run, out } => {
            let cfg = load_config(config.as_deref())?;
            let topo = sample_topology(&cfg)?;
            let draw = sample_run(&cfg, run)?;
            let trace = simulate(&topo, &draw.vscs, &draw.prbs, &sim_config(&cfg))?;
            trace.write_csv(BufWriter::new(File::create(&out)?))?;
            log::info!("wrote {} samples of {} PCCs to {}", trace.len(), trace.n_pcc(), out.display());
        }
        Command::Identify {
            trace,
            config,
            pcc,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let trace = SimulationTrace::read_csv(BufReader::new(File::open(&trace)?), cfg.sim.t_discard)?;
            let pccs: Vec<usize> = match pcc {
                Some(0) => return Err(HarnessError::Config("PCC indices start at 1".into())),
                Some(i) if i > trace.n_pcc() => {
                    return Err(HarnessError::Config(format!(
                        "trace has {} PCCs, asked for {i}",
                        trace.n_pcc()
                    )))
                }
                Some(i) => vec![i - 1],
                None => (0..trace.n_pcc()).collect(),
            };
            fs::create_dir_all(&out)?;
            let s = settings(&cfg);
            let mut estimates = Vec::new();
            for i in pccs {
                let meas = PccMeasurements::from_trace(&trace, i)?;
                let id = identify(&meas, &s).map_err(|source| HarnessError::Pcc { pcc: i + 1, source })?;
                let tag = i + 1;
                id.weights
                    .write_csv(BufWriter::new(File::create(out.join(format!("weights_pcc{tag}.csv")))?))?;
                id.coupling
                    .write_csv(BufWriter::new(File::create(out.join(format!("coupling_pcc{tag}.csv")))?))?;
                id.voltage.write_time_csv(
                    trace.fs,
                    id.segment_start,
                    BufWriter::new(File::create(out.join(format!("voltage_time_pcc{tag}.csv")))?),
                )?;
                id.voltage.write_spectrum_csv(
                    &id.segment_omega,
                    BufWriter::new(File::create(out.join(format!("voltage_spectrum_pcc{tag}.csv")))?),
                )?;
                log::info!(
                    "PCC {tag}: rho {:.5} gamma {:.4} from {} bins",
                    id.theta.rho,
                    id.theta.gamma,
                    id.weights.retained()
                );
                estimates.push(PccEstimate {
                    pcc: tag,
                    theta: id.theta,
                    retained_bins: id.weights.retained(),
                    equivalent_voltage_dc: [id.voltage.dc.re, id.voltage.dc.im],
                });
            }
            let f = BufWriter::new(File::create(out.join("estimates.json"))?);
            serde_json::to_writer_pretty(f, &estimates)?;
        }
        Command::Montecarlo {
            config,
            runs,
            paper_scale,
            serial,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if paper_scale {
                cfg = cfg.full_scale();
            }
            if let Some(m) = runs {
                cfg.experiment.runs = m;
            }
            let output = monte_carlo(&cfg, !serial)?;
            report::write_all(&output, &out)?;
            print!("{}", report::render(&output.summary));
            if output.summary.successful().next().is_none() {
                return Err(HarnessError::Core(gridid::Error::EstimationImpossible(
                    "every run failed".into(),
                )));
            }
        }
        Command::Report { summary, out } => {
            let s = report::read_summary(&summary)?;
            report::write_summary_outputs(&s, &out)?;
            print!("{}", report::render(&s));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
