//! Writing and reading of experiment outputs.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::experiment::{MonteCarloOutput, MonteCarloSummary, Statistic, VoltageShowcase};

pub const SUMMARY_FILE: &str = "summary.json";

pub fn write_summary(summary: &MonteCarloSummary, path: &Path) -> Result<()> {
    let out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(out, summary)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<MonteCarloSummary> {
    let input = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(input)?)
}

fn io_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

/// One row per run and PCC.
pub fn write_runs_csv<W: Write>(summary: &MonteCarloSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "run",
        "pcc",
        "status",
        "rho",
        "gamma",
        "retained_bins",
        "mean_mag_db",
        "max_mag_db",
        "mean_phase_deg",
        "max_phase_deg",
        "etfe_mag_db",
        "voltage_rel_rms",
        "corr_d",
        "corr_q",
        "dc_rel_error",
        "elapsed_s",
    ])
    .map_err(io_err)?;
    for outcome in &summary.runs {
        match (&outcome.result, &outcome.error) {
            (Some(r), _) => {
                for p in &r.pcc {
                    let a = &p.admittance;
                    let v = &p.voltage;
                    let row: Vec<String> = [
                        r.run.to_string(),
                        (p.pcc + 1).to_string(),
                        "ok".to_string(),
                    ]
                    .into_iter()
                    .chain(
                        [
                            p.theta.rho,
                            p.theta.gamma,
                            p.retained_bins as f64,
                            a.mean_magnitude_db,
                            a.max_magnitude_db,
                            a.mean_phase_deg,
                            a.max_phase_deg,
                            p.etfe_magnitude_db,
                            v.relative_rms,
                            v.correlation_d,
                            v.correlation_q,
                            v.dc_relative_error,
                            r.elapsed_s,
                        ]
                        .iter()
                        .map(|x| format!("{x:.9e}")),
                    )
                    .collect();
                    w.write_record(&row).map_err(io_err)?;
                }
            }
            (None, err) => {
                let mut row = vec![
                    outcome.run.to_string(),
                    String::new(),
                    format!("failed: {}", err.as_deref().unwrap_or("unknown")),
                ];
                row.resize(16, String::new());
                w.write_record(&row).map_err(io_err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Magnitude/phase overlay data with a band of three standard deviations.
pub fn write_admittance_csv<W: Write>(summary: &MonteCarloSummary, pcc: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "omega",
        "true_mag",
        "true_phase_deg",
        "est_mag_mean",
        "est_mag_lower",
        "est_mag_upper",
        "est_phase_deg_mean",
    ])
    .map_err(io_err)?;
    for [o, mag, ph, m, s, eph] in summary.admittance_bands(pcc)? {
        let row = [o, mag, ph, m, m - 3.0 * s, m + 3.0 * s, eph].map(|x| format!("{x:.9e}"));
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_voltage_csv(showcase: &VoltageShowcase, dir: &Path, omega_a: f64, omega_b: f64) -> Result<()> {
    let i = showcase.pcc + 1;
    let mut spec = BufWriter::new(File::create(dir.join(format!("voltage_spectrum_pcc{i}.csv")))?);
    writeln!(spec, "omega,est_mag,true_mag")?;
    for (k, &o) in showcase.omega.iter().enumerate() {
        if (omega_a..=omega_b).contains(&o.abs()) {
            writeln!(
                spec,
                "{o:.9e},{:.9e},{:.9e}",
                showcase.estimated[k].norm(),
                showcase.truth[k].norm()
            )?;
        }
    }
    spec.flush()?;
    let mut time = BufWriter::new(File::create(dir.join(format!("voltage_time_pcc{i}.csv")))?);
    writeln!(time, "t,d_est,q_est,d_true,q_true")?;
    for (k, (e, t)) in showcase.estimated_time.iter().zip(&showcase.truth_time).enumerate() {
        writeln!(
            time,
            "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
            showcase.segment_start + k as f64 / showcase.fs,
            e.re,
            e.im,
            t.re,
            t.im
        )?;
    }
    time.flush()?;
    Ok(())
}

/// Summary, run table and admittance overlays; everything `report` can regenerate.
pub fn write_summary_outputs(summary: &MonteCarloSummary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_summary(summary, &dir.join(SUMMARY_FILE))?;
    write_runs_csv(summary, BufWriter::new(File::create(dir.join("runs.csv"))?))?;
    for pcc in 0..summary.topology.n() {
        let f = File::create(dir.join(format!("admittance_pcc{}.csv", pcc + 1)))?;
        write_admittance_csv(summary, pcc, BufWriter::new(f))?;
    }
    Ok(())
}

pub fn write_all(output: &MonteCarloOutput, dir: &Path) -> Result<()> {
    write_summary_outputs(&output.summary, dir)?;
    let fd = &output.summary.config.fd;
    for sc in &output.showcase {
        write_voltage_csv(sc, dir, fd.omega_a, fd.omega_b_cut)?;
    }
    Ok(())
}

fn stat_line(name: &str, s: &Statistic) -> String {
    format!("  {name:<24} mean {:>10.4}  max {:>10.4}  std {:>10.4}\n", s.mean, s.max, s.std)
}

/// Human-readable table of the pooled statistics.
pub fn render(summary: &MonteCarloSummary) -> String {
    let ok = summary.successful().count();
    let p = &summary.pooled;
    let mut s = format!(
        "runs: {ok}/{} succeeded{}\npooled over {} PCC estimates:\n",
        summary.runs.len(),
        if summary.partial { " (partial)" } else { "" },
        p.samples
    );
    s += &stat_line("mean |Y| error (dB)", &p.mean_magnitude_db);
    s += &stat_line("max |Y| error (dB)", &p.max_magnitude_db);
    s += &stat_line("mean phase error (deg)", &p.mean_phase_deg);
    s += &stat_line("max phase error (deg)", &p.max_phase_deg);
    s += &stat_line("ETFE |Y| error (dB)", &p.etfe_magnitude_db);
    s += &stat_line("voltage rel. RMS", &p.voltage_relative_rms);
    s += &stat_line("voltage corr d", &p.voltage_correlation_d);
    s += &stat_line("voltage corr q", &p.voltage_correlation_q);
    s += &stat_line("DC rel. error", &p.dc_relative_error);
    s
}
