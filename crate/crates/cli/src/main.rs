//! `cvqkd` — drive the pilot-tone CV-QKD simulator from the command line.
//!
//! Subcommands: `run` (single configuration), `sweep` (axis sweep to CSV),
//! `psd` (spectrum export at a probe point), `calibrate` (one-shot
//! shot/electronic calibration record), `selfcheck` (fast physics checks).
//!
//! Exit codes: 0 success, 2 configuration error, 3 physics/sync failure,
//! 4 i/o error.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cvqkd_core::error::Error;
use cvqkd_core::harness::{
    build_calibration, build_transmitter, load_sweep_spec, run_psd, run_single, run_sweep,
    PsdStage, RunConfig, CSV_HEADER,
};

#[derive(Parser)]
#[command(name = "cvqkd", version, about = "CV-QKD pilot-tone physical-layer simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repeatable key=value override (same keys as the config file).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread count override (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn build(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::config(format!("--set expects key=value, got '{kv}'")))?;
            cfg.set(k, v)?;
        }
        if let Some(seed) = self.seed {
            cfg.master_seed = seed;
        }
        if let Some(w) = self.workers {
            cfg.n_workers = w;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and print the estimation result.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Also append the result as a CSV row.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter sweep file (axis/values/out plus overrides).
    Sweep {
        /// Sweep specification file.
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
        /// Override the sweep file's output path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a power spectral density at a probe point.
    Psd {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Probe point: tx_output or rx_output.
        #[arg(long)]
        stage: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the optical-switch calibration and print the record.
    Calibrate {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Fast physics self-checks (transfer function, filters, rate formulas).
    Selfcheck,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { cfg, out } => cmd_run(&cfg.build()?, out.as_deref()),
        Command::Sweep {
            config,
            set,
            seed,
            workers,
            out,
        } => {
            let base = ConfigArgs {
                config: None,
                set,
                seed,
                workers,
            }
            .build()?;
            let mut spec = load_sweep_spec(&config, base)?;
            if let Some(path) = out {
                spec.output_path = path;
            }
            let rows = run_sweep(&spec)?;
            println!(
                "sweep complete: {} new point(s) -> {}",
                rows.len(),
                spec.output_path.display()
            );
            for row in &rows {
                println!("  axis {} -> {}", row.axis_value, row.status);
            }
            Ok(())
        }
        Command::Psd { cfg, stage, out } => {
            let stage = match stage.as_str() {
                "tx_output" => PsdStage::TxOutput,
                "rx_output" => PsdStage::RxOutput,
                other => {
                    return Err(Error::config(format!(
                        "stage must be tx_output|rx_output, got '{other}'"
                    )))
                }
            };
            let spectrum = run_psd(&cfg.build()?, stage)?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&out)?);
            writeln!(w, "freq_hz,psd")?;
            for (f, p) in spectrum.freqs.iter().zip(&spectrum.psd) {
                writeln!(w, "{f},{p:e}")?;
            }
            println!("wrote {} bins to {}", spectrum.freqs.len(), out.display());
            Ok(())
        }
        Command::Calibrate { cfg } => cmd_calibrate(&cfg.build()?),
        Command::Selfcheck => selfcheck(),
    }
}

fn cmd_run(cfg: &RunConfig, out: Option<&std::path::Path>) -> Result<(), Error> {
    let output = run_single(cfg)?;
    let r = &output.result;
    let d = &output.diagnostics;
    println!("pilot mode          : {:?}", cfg.pilot);
    println!("rho nominal         : {:.1} dB (measured {:.1} dB)", cfg.rho_db, d.rho_measured_db);
    println!("distance            : {:.1} km", cfg.distance_km);
    println!("DAC resolution      : {} bits", cfg.n_dac);
    println!("ensemble            : {} copies x {} symbols", r.n_copies, cfg.n_sym);
    println!("P_POM               : {:.3e} W", d.p_pom_w);
    println!("V_mod (calibrated)  : {:.4} SNU", r.v_mod);
    println!("T_ch                : {:.5e}", r.t_ch);
    println!("V_en                : {:.4} SNU", r.v_en);
    println!("xi_A                : {:+.3} mSNU (stat floor {:.3} mSNU)", r.xi_a * 1e3, r.xi_a_se * 1e3);
    println!("I_AB                : {:.5} bits/symbol", r.i_ab);
    println!("chi_BE              : {:.5} bits/symbol", r.chi_be);
    println!("SKR                 : {:.4e} bps (raw {:.4e})", r.skr_bps, r.skr_raw_bps);
    if let Some(snr) = d.mean_pilot_snr_db {
        println!("pilot SNR           : {snr:.1} dB");
    }
    if let Some(pv) = d.mean_phase_err_var {
        println!("phase error var     : {pv:.3e} rad^2");
    }
    println!("timing corr (min)   : {:.3}", d.min_timing_corr);
    if let Some(path) = out {
        let fresh = !path.exists();
        let mut w = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(w, "{CSV_HEADER}")?;
        }
        writeln!(
            w,
            ",{:.6},{:.6e},{:.6},{:.4},{:.6},{:.6},{:.4e},{:.4e},{},{},ok",
            r.v_mod,
            r.t_ch,
            r.v_en,
            r.xi_a * 1e3,
            r.i_ab,
            r.chi_be,
            r.skr_bps,
            r.skr_raw_bps,
            r.n_symbols_used,
            r.n_copies
        )?;
        println!("appended result row to {}", path.display());
    }
    Ok(())
}

fn cmd_calibrate(cfg: &RunConfig) -> Result<(), Error> {
    cfg.validate()?;
    let plan = cfg.band_plan();
    let tx = build_transmitter(cfg)?;
    let (det, record) = build_calibration(cfg, &plan, &tx)?;
    println!("ADC full scale      : {:.4e} V", det.adc_full_scale);
    println!("v_electronic        : {:.6e}", record.v_electronic);
    println!("v_shot+electronic   : {:.6e}", record.v_shot_plus_electronic);
    println!("v_shot              : {:.6e}", record.v_shot);
    println!("snu_scale           : {:.6e}", record.snu_scale);
    println!("V_en                : {:.4} SNU", record.v_en_snu());
    println!(
        "eta (total, est.)   : {:.4}",
        det.total_detection_efficiency(cfg.sys.wavelength_m)
    );
    Ok(())
}

fn selfcheck() -> Result<(), Error> {
    use cvqkd_core::channel::{fiber_transmittance, ChannelSpec};
    use cvqkd_core::estimation::{holevo_bound, mutual_information, secret_key_rate};
    use cvqkd_core::transmitter::{small_signal_check, IqModulatorSpec};
    use cvqkd_core::waveform::design_rrc;

    let mut failures = 0;
    let mut check = |name: &str, ok: bool| {
        println!("[{}] {name}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            failures += 1;
        }
    };

    let rrc = design_rrc(0.65, 20, 20)?;
    check("RRC: 401 taps at the default profile", rrc.len() == 401);
    let energy: f64 = rrc.taps().iter().map(|t| t * t).sum();
    check("RRC: unit energy", (energy - 1.0).abs() < 1e-12);

    let report = small_signal_check(&IqModulatorSpec {
        v_pi: 1.0,
        extinction_ratio_db: 60.0,
        bias_v: 0.0,
        iq_imbalance_db: 0.0,
    })?;
    check(
        "modulator: cos^2 bias law within 1%",
        report.max_abs_error < 0.01,
    );

    let spec = ChannelSpec {
        distance_km: 100.0,
        loss_db_per_km: 0.16,
        linewidth_total_hz: 0.0,
        freq_offset_hz: 0.0,
    };
    check(
        "fiber: 100 km at 0.16 dB/km -> T = 10^-1.6",
        (fiber_transmittance(&spec) - 0.025118864315).abs() < 1e-9,
    );

    let i = mutual_information(2.5, 1.0, 1.0, 0.0, 0.0);
    check(
        "mutual information: log2(1 + 1.25)",
        (i - 1.1699250014423124).abs() < 1e-12,
    );
    let chi = holevo_bound(2.5, 1.0, 1.0, 0.0, 0.0)?;
    check("Holevo: identity channel leaks nothing", chi.abs() < 1e-9);
    let skr = secret_key_rate(1.0, 0.0, 0.95, 1e8)?;
    check(
        "SKR: 0.5 * beta * I * R_s/2",
        (skr.bps - 2.375e7).abs() < 1e-3,
    );

    if failures > 0 {
        Err(Error::Physicality(format!("{failures} selfcheck(s) failed")))
    } else {
        println!("all selfchecks passed");
        Ok(())
    }
}
