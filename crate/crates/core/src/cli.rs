//! Command-line front end. Each subcommand writes one output file (CSV with
//! unit-bearing headers, or JSON) plus a `<out>.run.json` record holding the
//! config snapshot, tool version, seed and a SHA-256 digest of the output.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numerical failure.

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::{parse_config, Config, ConfigError};
use crate::curvature::{
    angle_grid, predict_polarization_splitting, read_height_map, roc_vs_angle, CavityGeometry,
    CurvatureError,
};
use crate::global_fit::{global_fit, FitParams, GlobalFitError, Observation};
use crate::model::ModelError;
use crate::spectra::{
    fit_lorentzian, kappa_from_tau, line_grid, ringdown_fit, synthesize_ringdown,
    synthesize_spectrum, tau_from_kappa, temperature_from_fit, NoiseSpectrum, SpectrumError,
    SpectrumMeta, SynthesisOptions,
};
use crate::thermometry::{analyze, ratio_asymptote, sideband_weights, ThermometryError, ThermometryInput};
use crate::two_mode::{
    cancellation_detuning, combined_response, design_feasibility, sweep, transmission_scan,
    DesignCandidate, TwoModeError, TwoModeSystem,
};
use crate::units::{hz_to_rad, rad_to_hz};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug)]
pub enum CliError {
    /// Bad input: config, data file, flag values.
    Validation(String),
    /// The computation itself failed (no convergence, degenerate data, ...).
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Numerical(m) => m,
        }
    }
}

fn invalid(msg: impl std::fmt::Display) -> CliError {
    CliError::Validation(msg.to_string())
}

fn numerical(msg: impl std::fmt::Display) -> CliError {
    CliError::Numerical(msg.to_string())
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        invalid(e)
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidParameter { .. } => invalid(e),
            ModelError::Instability { .. } => numerical(e),
        }
    }
}

impl From<TwoModeError> for CliError {
    fn from(e: TwoModeError) -> Self {
        match e {
            TwoModeError::Model(m) => m.into(),
            TwoModeError::InvalidGrid { .. } => invalid(e),
            TwoModeError::NoCancellation => numerical(e),
        }
    }
}

impl From<SpectrumError> for CliError {
    fn from(e: SpectrumError) -> Self {
        match e {
            SpectrumError::Model(m) => m.into(),
            SpectrumError::InvalidGrid => invalid(e),
            _ => numerical(e),
        }
    }
}

impl From<GlobalFitError> for CliError {
    fn from(e: GlobalFitError) -> Self {
        match e {
            GlobalFitError::TooFewObservations(_) | GlobalFitError::InvalidInit => invalid(e),
            _ => numerical(e),
        }
    }
}

impl From<ThermometryError> for CliError {
    fn from(e: ThermometryError) -> Self {
        match e {
            ThermometryError::DivisionDegenerate => numerical(e),
            _ => invalid(e),
        }
    }
}

impl From<CurvatureError> for CliError {
    fn from(e: CurvatureError) -> Self {
        match e {
            CurvatureError::FlatSurface => numerical(e),
            _ => invalid(e),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "polmech", version, about = "Optomechanics with a polarization-split cavity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; lab defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; the run record goes next to it as `<out>.run.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Frequency shift, damping and temperature versus laser detuning (CSV).
    Sweep(Common),
    /// Fit linewidth, splitting and both powers to a sweep CSV (JSON).
    GlobalFit {
        #[command(flatten)]
        common: Common,
        /// CSV with detuning_hz, delta_omega_hz, gamma_eff_hz columns.
        #[arg(long)]
        data: PathBuf,
        /// Initial linewidth, Hz (config value when omitted).
        #[arg(long)]
        kappa_init: Option<f64>,
        /// Initial splitting, Hz.
        #[arg(long)]
        splitting_init: Option<f64>,
        /// Initial H-mode power, W.
        #[arg(long)]
        power_h_init: Option<f64>,
        /// Initial V-mode power, W.
        #[arg(long)]
        power_v_init: Option<f64>,
    },
    /// Synthetic thermal-noise spectrum at one detuning (CSV).
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Laser detuning from the H mode, Hz.
        #[arg(long, allow_hyphen_values = true)]
        detuning: f64,
        /// Half-width of the frequency window in linewidths.
        #[arg(long, default_value_t = 20.0)]
        half_span: f64,
        #[arg(long, default_value_t = 20)]
        bins_per_fwhm: usize,
    },
    /// Lorentzian fit and temperature of a spectrum CSV (JSON).
    FitSpectrum {
        #[command(flatten)]
        common: Common,
        /// CSV with freq_hz, psd_m2_per_hz columns.
        #[arg(long)]
        data: PathBuf,
    },
    /// H/V sideband ratio, phonon number and detector tones (JSON).
    Thermometry(Common),
    /// Radius of curvature versus angle from a height map (CSV).
    Curvature {
        #[command(flatten)]
        common: Common,
        /// Height-map file; overrides the config's curvature.file.
        #[arg(long)]
        map: Option<PathBuf>,
        /// Refuse geometries where the cavity is longer than the smaller radius.
        #[arg(long)]
        require_stable: bool,
    },
    /// Fit a ringdown trace (JSON), or synthesize one from the config linewidth (CSV).
    Ringdown {
        #[command(flatten)]
        common: Common,
        /// CSV with time_s, intensity_au columns; synthesize when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Trace length in decay times when synthesizing.
        #[arg(long, default_value_t = 10.0)]
        span: f64,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Feasibility of a short-cavity design (JSON).
    Design {
        /// JSON design candidate; the 1 cm target design when omitted.
        #[arg(long)]
        candidate: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cavity transmission versus laser offset from the H mode (CSV).
    Transmission {
        #[command(flatten)]
        common: Common,
        /// Input polarization angle from the H axis, degrees.
        #[arg(long, default_value_t = 45.0)]
        angle: f64,
    },
}

#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    version: &'a str,
    config: &'a Config,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    output: String,
    output_sha256: String,
    summary: Value,
}

struct Output {
    bytes: Vec<u8>,
    seed: Option<u64>,
    summary: Value,
}

fn fmt(x: f64) -> String {
    format!("{x}")
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(invalid)?;
    for row in rows {
        w.write_record(row.iter().map(|x| fmt(*x))).map_err(invalid)?;
    }
    w.into_inner().map_err(invalid)
}

/// Read the named numeric columns from a CSV with a header row.
fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let headers = r.headers().map_err(invalid)?.clone();
    let idx: Vec<usize> = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h.trim() == *n)
                .ok_or_else(|| invalid(format!("{}: missing column `{n}`", path.display())))
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(invalid)?;
        let row = idx
            .iter()
            .map(|&j| {
                let cell = rec.get(j).unwrap_or("").trim();
                cell.parse::<f64>()
                    .map_err(|_| invalid(format!("{}: row {}: bad number `{cell}`", path.display(), i + 2)))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    Ok(rows)
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn load_config(path: Option<&Path>) -> Result<Config, CliError> {
    match path {
        None => Ok(Config::default()),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            Ok(parse_config(&text)?)
        }
    }
}

fn opt_hz(x: Option<f64>) -> Value {
    x.map_or(Value::Null, |v| json!(v))
}

fn run_sweep(cfg: &Config) -> Result<Output, CliError> {
    let sys = TwoModeSystem::new(cfg.two_mode_params(), 0.0)?;
    let res = sweep(&sys, &cfg.detuning_grid())?;
    let rows = res.points.iter().map(|p| {
        vec![
            rad_to_hz(p.detuning_ref),
            rad_to_hz(p.delta_omega_total),
            rad_to_hz(p.gamma_eff_total),
            p.t_eff.unwrap_or(f64::NAN),
            p.n_eff.unwrap_or(f64::NAN),
        ]
    });
    let bytes = csv_bytes(&["detuning_hz", "delta_omega_hz", "gamma_eff_hz", "t_eff_k", "n_eff"], rows)?;
    let coldest = res
        .points
        .iter()
        .filter_map(|p| p.t_eff.map(|t| (p.detuning_ref, t)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let cancel = cancellation_detuning(&sys).ok().map(rad_to_hz);
    Ok(Output {
        bytes,
        seed: None,
        summary: json!({
            "points": res.points.len(),
            "unstable_points": res.unstable_count(),
            "coldest_detuning_hz": opt_hz(coldest.map(|c| rad_to_hz(c.0))),
            "coldest_t_eff_k": opt_hz(coldest.map(|c| c.1)),
            "damping_cancellation_hz": opt_hz(cancel),
        }),
    })
}

fn run_global_fit(cfg: &Config, data: &Path, init: [Option<f64>; 4]) -> Result<Output, CliError> {
    let rows = read_columns(data, &["detuning_hz", "delta_omega_hz", "gamma_eff_hz"])?;
    let obs: Vec<Observation> = rows
        .iter()
        .filter(|r| r.iter().all(|x| x.is_finite()))
        .map(|r| Observation {
            detuning_ref: hz_to_rad(r[0]),
            delta_omega: hz_to_rad(r[1]),
            gamma_eff: hz_to_rad(r[2]),
        })
        .collect();
    let mut start = FitParams::from_system(&cfg.two_mode_params()).to_array();
    for (s, o) in start.iter_mut().zip(init) {
        if let Some(v) = o {
            *s = v;
        }
    }
    let res = global_fit(&obs, &cfg.fixed_params(), &FitParams::from_array(start))?;
    let bytes = json_bytes(&json!({
        "kappa_hz": res.params.kappa_hz,
        "splitting_hz": res.params.splitting_hz,
        "power_h_w": res.params.power_h,
        "power_v_w": res.params.power_v,
        "std_errors": {
            "kappa_hz": res.std_errors[0],
            "splitting_hz": res.std_errors[1],
            "power_h_w": res.std_errors[2],
            "power_v_w": res.std_errors[3],
        },
        "covariance": res.covariance,
        "residual_rms": res.residual_rms,
        "rcond": res.rcond,
        "iterations": res.iterations,
    }));
    Ok(Output {
        bytes,
        seed: None,
        summary: json!({ "observations": obs.len(), "initial": start }),
    })
}

fn run_spectrum(cfg: &Config, detuning_hz: f64, half_span: f64, bins: usize) -> Result<Output, CliError> {
    if !(half_span > 0.0 && half_span.is_finite()) || bins < 2 {
        return Err(invalid("half-span must be positive and bins-per-fwhm at least 2"));
    }
    let sys = TwoModeSystem::new(cfg.two_mode_params(), 0.0)?;
    let d = hz_to_rad(detuning_hz);
    let r = combined_response(&sys, d);
    let center = rad_to_hz(sys.mech().omega_m + r.delta_omega());
    let fwhm = rad_to_hz(r.gamma_eff());
    if !(fwhm > 0.0) {
        return Err(numerical(format!("mode is unstable at {detuning_hz} Hz")));
    }
    let grid = line_grid(center, fwhm, half_span, bins);
    let opts = SynthesisOptions {
        noise_fraction: cfg.synthesis.noise_fraction,
        seed: cfg.synthesis.seed,
        offset: 0.0,
    };
    let spec = synthesize_spectrum(&sys, d, &grid, &opts)?;
    let rows = spec.freq_hz.iter().zip(&spec.psd).map(|(f, p)| vec![*f, *p]);
    let bytes = csv_bytes(&["freq_hz", "psd_m2_per_hz"], rows)?;
    Ok(Output {
        bytes,
        seed: Some(cfg.synthesis.seed),
        summary: json!({
            "detuning_hz": detuning_hz,
            "truth": spec.meta.truth,
            "t_eff_k": spec.meta.t_eff_k,
            "rbw_hz": spec.meta.rbw_hz,
            "noise_fraction": spec.meta.noise_fraction,
        }),
    })
}

fn run_fit_spectrum(cfg: &Config, data: &Path) -> Result<Output, CliError> {
    let rows = read_columns(data, &["freq_hz", "psd_m2_per_hz"])?;
    let spec = NoiseSpectrum::new(
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| r[1]).collect(),
        SpectrumMeta {
            detuning_ref_hz: f64::NAN,
            seed: 0,
            rbw_hz: 0.0,
            noise_fraction: 0.0,
            truth: None,
            t_eff_k: None,
        },
    )?;
    let fit = fit_lorentzian(&spec)?;
    let t = temperature_from_fit(&fit, &cfg.mechanical_mode());
    let bytes = json_bytes(&json!({
        "center_hz": fit.center,
        "fwhm_hz": fit.fwhm,
        "area_m2": fit.area,
        "offset_m2_per_hz": fit.offset,
        "center_err_hz": fit.center_err,
        "fwhm_err_hz": fit.fwhm_err,
        "area_err_m2": fit.area_err,
        "offset_err_m2_per_hz": fit.offset_err,
        "temperature_k": t,
        "residual_rms_m2_per_hz": fit.residual_rms,
        "iterations": fit.iterations,
    }));
    Ok(Output {
        bytes,
        seed: None,
        summary: json!({ "bins": spec.freq_hz.len() }),
    })
}

fn run_thermometry(cfg: &Config) -> Result<Output, CliError> {
    let t = &cfg.thermometry;
    let d = t.detuning.unwrap_or(0.5 * cfg.system.splitting);
    let sys = TwoModeSystem::new(cfg.two_mode_params(), hz_to_rad(d))?;
    let w = sideband_weights(&sys);
    let input = match (t.n, t.ratio) {
        (Some(n), _) => ThermometryInput::Occupation(n),
        (None, Some(r)) => ThermometryInput::Ratio(r),
        (None, None) => return Err(invalid("thermometry needs `n` or `ratio`")),
    };
    let res = analyze(&w, input, t.carrier_amplitude)?;
    let bytes = json_bytes(&json!({
        "detuning_hz": d,
        "weights": w,
        "ratio_hv": res.ratio_hv,
        "n_est": res.n_est,
        "s_omega_au": res.s_omega,
        "s_2omega_au": res.s_2omega,
        "ratio_asymptote": ratio_asymptote(&w),
    }));
    Ok(Output {
        bytes,
        seed: None,
        summary: json!({ "invertible": w.is_invertible() }),
    })
}

fn run_curvature(cfg: &Config, map: Option<&Path>, require_stable: bool) -> Result<Output, CliError> {
    let path = map
        .or(cfg.curvature.file.as_deref())
        .ok_or_else(|| invalid("no height map: pass --map or set curvature.file"))?;
    let hm = read_height_map(path)?;
    let c = &cfg.curvature;
    let prof = roc_vs_angle(&hm, &angle_grid(c.angle_step), c.r_max);
    let ok: Vec<(f64, f64)> = prof.successful().collect();
    if ok.is_empty() {
        let first = prof.entries.first().and_then(|e| e.roc.clone().err());
        return Err(match first {
            Some(e) => e.into(),
            None => invalid("no angles to analyze"),
        });
    }
    // principal radii from the concave extremes
    let min = ok.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let max = ok.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    let geom = CavityGeometry {
        length: c.cavity_length,
        wavelength: cfg.system.wavelength,
        roc_major: max.1,
        roc_minor: min.1,
    };
    if require_stable {
        geom.check_stable()?;
    }
    let splitting = if min.1 > 0.0 {
        Some(predict_polarization_splitting(&geom)?)
    } else {
        None
    };
    Ok(Output {
        bytes: prof.to_csv().into_bytes(),
        seed: None,
        summary: json!({
            "angles": prof.entries.len(),
            "failed_angles": prof.failures(),
            "roc_min_m": min.1,
            "roc_min_angle_deg": min.0.to_degrees(),
            "roc_max_m": max.1,
            "roc_max_angle_deg": max.0.to_degrees(),
            "cavity_length_m": c.cavity_length,
            "predicted_splitting_hz": opt_hz(splitting),
        }),
    })
}

fn run_ringdown(cfg: &Config, data: Option<&Path>, span: f64, samples: usize) -> Result<Output, CliError> {
    match data {
        Some(p) => {
            let rows = read_columns(p, &["time_s", "intensity_au"])?;
            let series: Vec<(f64, f64)> = rows.iter().map(|r| (r[0], r[1])).collect();
            let fit = ringdown_fit(&series)?;
            let bytes = json_bytes(&json!({
                "kappa_hz": fit.kappa_hz,
                "tau_s": fit.tau,
                "tau_err_s": fit.tau_err,
                "kappa_err_hz": kappa_from_tau(fit.tau) * fit.tau_err / fit.tau,
                "amplitude_au": fit.amplitude,
                "offset_au": fit.offset,
                "residual_rms_au": fit.residual_rms,
            }));
            Ok(Output {
                bytes,
                seed: None,
                summary: json!({ "samples": series.len() }),
            })
        }
        None => {
            if !(span > 0.0 && span.is_finite()) || samples < 4 {
                return Err(invalid("span must be positive and samples at least 4"));
            }
            let tau = tau_from_kappa(cfg.system.kappa);
            let times: Vec<f64> = (0..samples)
                .map(|i| span * tau * i as f64 / (samples - 1) as f64)
                .collect();
            let trace = synthesize_ringdown(&times, tau, 1.0, 0.0, cfg.synthesis.noise_fraction, cfg.synthesis.seed);
            let bytes = csv_bytes(&["time_s", "intensity_au"], trace.iter().map(|(t, y)| vec![*t, *y]))?;
            Ok(Output {
                bytes,
                seed: Some(cfg.synthesis.seed),
                summary: json!({ "kappa_hz": cfg.system.kappa, "tau_s": tau }),
            })
        }
    }
}

fn run_design(candidate: Option<&Path>) -> Result<Output, CliError> {
    let cand = match candidate {
        None => DesignCandidate::short_cavity_target(),
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", p.display())))?
        }
    };
    let report = design_feasibility(&cand)?;
    let bytes = json_bytes(&json!({ "candidate": cand, "report": report }));
    Ok(Output {
        bytes,
        seed: None,
        summary: json!({ "feasible": report.sideband_resolved && report.ratio > 1.0 }),
    })
}

fn run_transmission(cfg: &Config, angle_deg: f64) -> Result<Output, CliError> {
    let sys = TwoModeSystem::new(cfg.two_mode_params(), 0.0)?;
    let grid = cfg.detuning_grid();
    let scan = transmission_scan(&sys, &grid, angle_deg.to_radians())?;
    let bytes = csv_bytes(
        &["offset_hz", "transmission_norm"],
        scan.iter().map(|(w, t)| vec![rad_to_hz(*w), *t]),
    )?;
    Ok(Output {
        bytes,
        seed: None,
        summary: json!({ "angle_deg": angle_deg }),
    })
}

fn record_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(OsString::from).unwrap_or_default();
    name.push(".run.json");
    out.with_file_name(name)
}

fn write_outputs(command: &str, cfg: &Config, out: &Path, o: Output) -> Result<(), CliError> {
    let digest = hex::encode(Sha256::digest(&o.bytes));
    fs::write(out, &o.bytes).map_err(|e| invalid(format!("{}: {e}", out.display())))?;
    let rec = RunRecord {
        command,
        version: VERSION,
        config: cfg,
        seed: o.seed,
        output: out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        output_sha256: digest,
        summary: o.summary,
    };
    let rp = record_path(out);
    fs::write(&rp, json_bytes(&rec)).map_err(|e| invalid(format!("{}: {e}", rp.display())))
}

fn dispatch(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Sweep(c) => {
            let cfg = load_config(c.config.as_deref())?;
            write_outputs("sweep", &cfg, &c.out, run_sweep(&cfg)?)
        }
        Command::GlobalFit { common, data, kappa_init, splitting_init, power_h_init, power_v_init } => {
            let cfg = load_config(common.config.as_deref())?;
            let o = run_global_fit(&cfg, &data, [kappa_init, splitting_init, power_h_init, power_v_init])?;
            write_outputs("global-fit", &cfg, &common.out, o)
        }
        Command::Spectrum { common, detuning, half_span, bins_per_fwhm } => {
            let cfg = load_config(common.config.as_deref())?;
            let o = run_spectrum(&cfg, detuning, half_span, bins_per_fwhm)?;
            write_outputs("spectrum", &cfg, &common.out, o)
        }
        Command::FitSpectrum { common, data } => {
            let cfg = load_config(common.config.as_deref())?;
            write_outputs("fit-spectrum", &cfg, &common.out, run_fit_spectrum(&cfg, &data)?)
        }
        Command::Thermometry(c) => {
            let cfg = load_config(c.config.as_deref())?;
            write_outputs("thermometry", &cfg, &c.out, run_thermometry(&cfg)?)
        }
        Command::Curvature { common, map, require_stable } => {
            let cfg = load_config(common.config.as_deref())?;
            let o = run_curvature(&cfg, map.as_deref(), require_stable)?;
            write_outputs("curvature", &cfg, &common.out, o)
        }
        Command::Ringdown { common, data, span, samples } => {
            let cfg = load_config(common.config.as_deref())?;
            let o = run_ringdown(&cfg, data.as_deref(), span, samples)?;
            write_outputs("ringdown", &cfg, &common.out, o)
        }
        Command::Design { candidate, out } => {
            let cfg = Config::default();
            write_outputs("design", &cfg, &out, run_design(candidate.as_deref())?)
        }
        Command::Transmission { common, angle } => {
            let cfg = load_config(common.config.as_deref())?;
            write_outputs("transmission", &cfg, &common.out, run_transmission(&cfg, angle)?)
        }
    }
}

/// Parse `argv` (program name first) and run; returns the process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::run_command;
    use crate::curvature::{write_height_map, HeightMap};
    use std::fs;
    use std::path::{Path, PathBuf};
    use tempfile::TempDir;

    fn run(args: &[&str]) -> i32 {
        let mut argv = vec!["polmech"];
        argv.extend_from_slice(args);
        run_command(argv)
    }

    fn path(dir: &TempDir, name: &str) -> PathBuf {
        dir.path().join(name)
    }

    fn s(p: &Path) -> &str {
        p.to_str().unwrap()
    }

    fn read_json(p: &Path) -> serde_json::Value {
        serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
    }

    fn record(out: &Path) -> serde_json::Value {
        let mut name = out.file_name().unwrap().to_os_string();
        name.push(".run.json");
        read_json(&out.with_file_name(name))
    }

    #[test]
    fn sweep_writes_schema_and_record() {
        let dir = TempDir::new().unwrap();
        let out = path(&dir, "fig3.csv");
        assert_eq!(run(&["sweep", "--out", s(&out)]), 0);
        let text = fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "detuning_hz,delta_omega_hz,gamma_eff_hz,t_eff_k,n_eff");
        assert_eq!(lines.count(), 501);

        let rec = record(&out);
        assert_eq!(rec["command"], "sweep");
        assert_eq!(rec["version"], env!("CARGO_PKG_VERSION"));
        assert_eq!(rec["config"]["system"]["kappa"], 52e3);
        assert_eq!(rec["output"], "fig3.csv");
        assert_eq!(rec["output_sha256"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn global_fit_recovers_config_truth_from_sweep_file() {
        let dir = TempDir::new().unwrap();
        let data = path(&dir, "fig3.csv");
        let out = path(&dir, "fit.json");
        assert_eq!(run(&["sweep", "--out", s(&data)]), 0);
        let code = run(&[
            "global-fit",
            "--data",
            s(&data),
            "--out",
            s(&out),
            "--kappa-init",
            "67600",
            "--splitting-init",
            "57680",
            "--power-h-init",
            "2.847e-6",
            "--power-v-init",
            "1.295e-6",
        ]);
        assert_eq!(code, 0);
        let fit = read_json(&out);
        for (key, truth) in [
            ("kappa_hz", 52e3),
            ("splitting_hz", 82.4e3),
            ("power_h_w", 2.19e-6),
            ("power_v_w", 1.85e-6),
        ] {
            let v = fit[key].as_f64().unwrap();
            assert!((v - truth).abs() / truth < 0.01, "{key}: {v}");
        }
    }

    #[test]
    fn curvature_writes_angle_profile() {
        let dir = TempDir::new().unwrap();
        let map = path(&dir, "surface.txt");
        let out = path(&dir, "roc.csv");
        let hm = HeightMap::from_fn(181, 181, 0.2e-6, |x, y| x * x / 2e-3 + y * y / 8e-3);
        fs::write(&map, write_height_map(&hm)).unwrap();
        assert_eq!(run(&["curvature", "--map", s(&map), "--out", s(&out)]), 0);
        let text = fs::read_to_string(&out).unwrap();
        assert!(text.starts_with("angle_deg,roc_m\n"));
        assert_eq!(text.lines().count(), 73);
        let rec = record(&out);
        let rmin = rec["summary"]["roc_min_m"].as_f64().unwrap();
        let rmax = rec["summary"]["roc_max_m"].as_f64().unwrap();
        assert!((rmin - 1e-3).abs() < 5e-6);
        assert!((rmax - 4e-3).abs() < 2e-5);
        let split = rec["summary"]["predicted_splitting_hz"].as_f64().unwrap();
        assert!((split - 60.6e3).abs() < 0.5e3, "{split}");

        // the 5 cm cavity is longer than the 1 mm radius
        assert_eq!(run(&["curvature", "--map", s(&map), "--out", s(&out), "--require-stable"]), 1);
    }

    #[test]
    fn spectrum_then_fit_round_trips_temperature() {
        let dir = TempDir::new().unwrap();
        let spec = path(&dir, "spec.csv");
        let fit = path(&dir, "fit.json");
        assert_eq!(run(&["spectrum", "--detuning", "-50000", "--out", s(&spec)]), 0);
        assert!(fs::read_to_string(&spec).unwrap().starts_with("freq_hz,psd_m2_per_hz\n"));
        assert_eq!(run(&["fit-spectrum", "--data", s(&spec), "--out", s(&fit)]), 0);
        let t_truth = record(&spec)["summary"]["t_eff_k"].as_f64().unwrap();
        let t_fit = read_json(&fit)["temperature_k"].as_f64().unwrap();
        assert!((t_fit - t_truth).abs() / t_truth < 1e-6);
    }

    #[test]
    fn ringdown_synthesize_then_fit() {
        let dir = TempDir::new().unwrap();
        let cfg = path(&dir, "cfg.json");
        fs::write(&cfg, r#"{"system": {"kappa": 51e3}, "synthesis": {"noise_fraction": 0.02, "seed": 3}}"#).unwrap();
        let trace = path(&dir, "trace.csv");
        let out = path(&dir, "rd.json");
        assert_eq!(run(&["ringdown", "--config", s(&cfg), "--out", s(&trace)]), 0);
        assert!(fs::read_to_string(&trace).unwrap().starts_with("time_s,intensity_au\n"));
        assert_eq!(run(&["ringdown", "--data", s(&trace), "--out", s(&out)]), 0);
        let k = read_json(&out)["kappa_hz"].as_f64().unwrap();
        assert!((k - 51e3).abs() / 51e3 < 0.02);
    }

    #[test]
    fn thermometry_design_and_transmission_run() {
        let dir = TempDir::new().unwrap();
        let t = path(&dir, "t.json");
        assert_eq!(run(&["thermometry", "--out", s(&t)]), 0);
        let j = read_json(&t);
        assert_eq!(j["n_est"], 1.0);
        assert!(j["ratio_hv"].as_f64().unwrap() > 1.0);

        let d = path(&dir, "d.json");
        assert_eq!(run(&["design", "--out", s(&d)]), 0);
        assert_eq!(read_json(&d)["report"]["sideband_resolved"], true);

        let tr = path(&dir, "tr.csv");
        assert_eq!(run(&["transmission", "--out", s(&tr), "--angle", "30"]), 0);
        assert!(fs::read_to_string(&tr).unwrap().starts_with("offset_hz,transmission_norm\n"));
    }

    #[test]
    fn thermometry_ratio_below_asymptote_is_invalid() {
        let dir = TempDir::new().unwrap();
        let cfg = path(&dir, "cfg.json");
        fs::write(&cfg, r#"{"thermometry": {"n": null, "ratio": 0.5}}"#).unwrap();
        assert_eq!(run(&["thermometry", "--config", s(&cfg), "--out", s(&path(&dir, "t.json"))]), 1);
    }

    #[test]
    fn seeded_outputs_are_byte_identical() {
        let dir = TempDir::new().unwrap();
        let cfg = path(&dir, "cfg.json");
        fs::write(&cfg, r#"{"synthesis": {"noise_fraction": 0.05, "seed": 11}}"#).unwrap();
        let cases: [&[&str]; 3] = [
            &["sweep"],
            &["spectrum", "--detuning", "30000"],
            &["ringdown"],
        ];
        for (i, args) in cases.iter().enumerate() {
            let a = path(&dir, &format!("a{i}.csv"));
            let b = path(&dir, &format!("b{i}.csv"));
            for out in [&a, &b] {
                let mut argv = args.to_vec();
                argv.extend(["--config", s(&cfg), "--out", s(out)]);
                assert_eq!(run(&argv), 0);
            }
            assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
            let (ra, rb) = (record(&a), record(&b));
            assert_eq!(ra["output_sha256"], rb["output_sha256"]);
            assert_eq!(ra["config"], rb["config"]);
        }
    }

    #[test]
    fn validation_errors_exit_one() {
        let dir = TempDir::new().unwrap();
        let out = path(&dir, "x.csv");
        let bad_key = path(&dir, "bad_key.json");
        fs::write(&bad_key, r#"{"system": {"kappa_khz": 52}}"#).unwrap();
        assert_eq!(run(&["sweep", "--config", s(&bad_key), "--out", s(&out)]), 1);
        let bad_value = path(&dir, "bad_value.json");
        fs::write(&bad_value, r#"{"system": {"gamma_m": -19}}"#).unwrap();
        assert_eq!(run(&["sweep", "--config", s(&bad_value), "--out", s(&out)]), 1);
        assert!(!out.exists());

        assert_eq!(run(&["sweep", "--config", s(&path(&dir, "missing.json")), "--out", s(&out)]), 1);
        assert_eq!(run(&["nonsense"]), 1);
        assert_eq!(run(&["--help"]), 0);
    }

    #[test]
    fn numerical_failures_exit_two() {
        let dir = TempDir::new().unwrap();
        let flat = path(&dir, "flat.csv");
        let rows: String = (0..200).map(|i| format!("{},1e-20\n", 1e5 + i as f64)).collect();
        fs::write(&flat, format!("freq_hz,psd_m2_per_hz\n{rows}")).unwrap();
        assert_eq!(run(&["fit-spectrum", "--data", s(&flat), "--out", s(&path(&dir, "f.json"))]), 2);

        // far off both modes the data cannot separate the four parameters
        let cfg = path(&dir, "far.json");
        fs::write(&cfg, r#"{"sweep": {"start": 10e6, "stop": 50e6, "step": 1e6}}"#).unwrap();
        let far = path(&dir, "far.csv");
        assert_eq!(run(&["sweep", "--config", s(&cfg), "--out", s(&far)]), 0);
        assert_eq!(run(&["global-fit", "--config", s(&cfg), "--data", s(&far), "--out", s(&path(&dir, "g.json"))]), 2);
    }
}
