//! The `zfmaser` command line.
//!
//! Every subcommand prints its main result on stdout. Subcommands that
//! produce data files write them, plus a JSON result carrying a
//! [`RunManifest`], into the output directory (`--out-dir`, else
//! `$ZFMASER_OUT_DIR`, else the working directory). The scalar calculators
//! only write JSON when an output directory is given.

use std::f64::consts::TAU;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::cavity::{
    baseline_correct, coupling_from_qcircle, fit_circle, loaded_q, power_to_photons, power_trace_to_photons,
    read_s11_csv, thermal_photons, unloaded_q, BaselineWindow, QCircleGeometry,
};
use crate::error::{Error, Result};
use crate::fit::exp::fit_biexponential;
use crate::fit::lm::LossSpace;
use crate::fit::maser_fit::{fit_maser_parameters, MaserFitOptions, MaserFixed};
use crate::maser::{cooperativity, simulate_maser, MaserState, MaserSystemParams, DEFAULT_OUTPUT_POINTS};
use crate::ode::Tolerances;
use crate::rabi::dominant_frequency;
use crate::spectro::{fit_tcspc, rates_from_lifetimes, svd_global_analysis, SpectrumMatrix, DEFAULT_SIGNIFICANCE};
use crate::synth::{gen_synthetic, SynthData, SynthKind, SynthParams};
use crate::triplet::{combined_rate_from_eigen, eigenrates, evolve_populations, BiexpFit, TripletRateModel};
use crate::units::{dbm_to_watts, fmt_full, linspace, s_to_us, us_to_s, watts_to_dbm, TimeTrace, Unit};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "ZFMASER_OUT_DIR";

/// JSON Schema that every result document satisfies.
pub const OUTPUT_SCHEMA: &str = include_str!("../schema/output.schema.json");

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance block embedded in every output JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub input_paths: Vec<String>,
    pub param_file: Option<String>,
    pub output_dir: Option<String>,
    pub seed: Option<u64>,
    pub tool_version: String,
}

#[derive(Parser, Debug)]
#[command(name = "zfmaser", version, about = "Zero-field maser analysis and simulation", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct OutArgs {
    /// Directory for output files
    #[arg(long, env = OUT_DIR_ENV)]
    out_dir: Option<PathBuf>,
    /// Base name for output files (defaults to the subcommand name)
    #[arg(long)]
    name: Option<String>,
    /// Also write a gnuplot script next to every CSV
    #[arg(long)]
    plot_script: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TraceUnit {
    Dbm,
    Watts,
    Photons,
    Dimensionless,
}

impl From<TraceUnit> for Unit {
    fn from(u: TraceUnit) -> Self {
        match u {
            TraceUnit::Dbm => Unit::Dbm,
            TraceUnit::Watts => Unit::Watts,
            TraceUnit::Photons => Unit::Photons,
            TraceUnit::Dimensionless => Unit::Dimensionless,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PowerUnit {
    Dbm,
    Watts,
    Photons,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Loss {
    Linear,
    Log10,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Evolve T_x and T_z populations from a JSON rate file
    SimulateTriplet {
        /// JSON with k_x, k_z, w_xz (s⁻¹) and optional populations [x, y, z]
        #[arg(long)]
        params: PathBuf,
        #[arg(long, default_value_t = 40.0)]
        t_end_us: f64,
        #[arg(long, default_value_t = 401)]
        samples: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit A e^{α₋t} + B e^{α₊t} to a trEPR trace
    FitTrepr {
        /// CSV with header t_us,value
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = TraceUnit::Dimensionless)]
        unit: TraceUnit,
        #[arg(long, allow_hyphen_values = true)]
        init_a: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        init_b: Option<f64>,
        /// s⁻¹, negative
        #[arg(long, allow_hyphen_values = true)]
        init_alpha_minus: Option<f64>,
        /// s⁻¹, negative
        #[arg(long, allow_hyphen_values = true)]
        init_alpha_plus: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Coupling coefficient and Q factors from Q-circle data
    Qcircle {
        /// Q-circle diameter
        #[arg(long, conflicts_with = "s11")]
        d: Option<f64>,
        /// Auxiliary-circle diameter of a lossy loop
        #[arg(long)]
        d2: Option<f64>,
        /// Reflection sweep CSV (f_Hz,re_S11,im_S11); its circle gives d
        #[arg(long)]
        s11: Option<PathBuf>,
        /// Resonance frequency, Hz
        #[arg(long, requires_all = ["f_low", "f_high"])]
        f0: Option<f64>,
        /// Lower half-power frequency, Hz
        #[arg(long)]
        f_low: Option<f64>,
        /// Upper half-power frequency, Hz
        #[arg(long)]
        f_high: Option<f64>,
        /// Coupling of a second port
        #[arg(long, default_value_t = 0.0)]
        k2: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Thermal photon number of a cavity mode
    ThermalPhotons {
        /// Mode frequency, Hz
        #[arg(long)]
        f: f64,
        /// The frequency is given as an angular frequency, rad/s
        #[arg(long)]
        f_angular: bool,
        /// Temperature, K
        #[arg(long)]
        temp: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Convert between dBm, watts and intracavity photons
    ConvertPower {
        /// Single value to convert
        #[arg(long, allow_hyphen_values = true, conflicts_with = "input", required_unless_present = "input")]
        value: Option<f64>,
        /// Trace CSV (t_us,value) to convert
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, value_enum)]
        from: PowerUnit,
        #[arg(long, value_enum)]
        to: PowerUnit,
        /// Port coupling K (photon conversion)
        #[arg(long)]
        coupling: Option<f64>,
        /// Cavity decay rate, s⁻¹ (photon conversion)
        #[arg(long, alias = "kappa-c-hz")]
        kappa_c: Option<f64>,
        #[arg(long)]
        kappa_c_angular: bool,
        /// Mode frequency, Hz (photon conversion)
        #[arg(long)]
        f: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Integrate the mean-field maser equations
    SimulateMaser {
        /// JSON with g_e, kappa_c, kappa_s, gamma, n_spins, n_bar (s⁻¹) and
        /// optional delta, inversion0, t_end_us, samples; reference values if absent
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        rtol: Option<f64>,
        #[arg(long)]
        atol: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Fit g_e, κ_s and N to a maser burst
    FitMaser {
        /// CSV with header t_us,value
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = TraceUnit::Photons)]
        unit: TraceUnit,
        /// JSON with kappa_c, gamma, n_bar, inversion0 (and optional delta); reference values if absent
        #[arg(long)]
        fixed: Option<PathBuf>,
        /// Port coupling, needed for power input
        #[arg(long)]
        coupling: Option<f64>,
        /// Mode frequency in Hz, needed for power input
        #[arg(long)]
        f: Option<f64>,
        /// Time of the excitation in the input, μs
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t0_us: f64,
        /// Pre-burst window for baseline correction: `auto` or an end time in μs
        #[arg(long)]
        baseline: Option<String>,
        #[arg(long, alias = "init-ge")]
        init_ge_hz: Option<f64>,
        #[arg(long)]
        init_ge_angular: bool,
        #[arg(long, alias = "init-kappa-s")]
        init_kappa_s_hz: Option<f64>,
        #[arg(long)]
        init_kappa_s_angular: bool,
        #[arg(long)]
        init_n: Option<f64>,
        #[arg(long, value_enum, default_value_t = Loss::Log10)]
        loss: Loss,
        /// Hold g_e at its initial value
        #[arg(long)]
        fix_coupling: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Cooperativity C = 4 g_e² / (κ_c κ_s)
    Cooperativity {
        #[arg(long, alias = "ge")]
        ge_hz: f64,
        #[arg(long)]
        ge_angular: bool,
        #[arg(long, alias = "kappa-c-hz")]
        kappa_c: f64,
        #[arg(long)]
        kappa_c_angular: bool,
        #[arg(long, alias = "kappa-s")]
        kappa_s_hz: f64,
        #[arg(long)]
        kappa_s_angular: bool,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Dominant Rabi-oscillation frequency of a burst
    Rabi {
        /// CSV with header t_us,value
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = TraceUnit::Photons)]
        unit: TraceUnit,
        /// Analysis window start, μs
        #[arg(long, allow_hyphen_values = true)]
        from_us: Option<f64>,
        /// Analysis window end, μs
        #[arg(long)]
        to_us: Option<f64>,
        #[command(flatten)]
        out: OutArgs,
    },
    /// SVD global analysis of a transient-absorption matrix
    SvdTas {
        /// CSV: first row wavelengths (nm), first column delays (ps)
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SIGNIFICANCE)]
        threshold: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Multi-exponential tail fit of a TCSPC decay
    FitTcspc {
        /// CSV with header t_us,value
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 2)]
        components: usize,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Triplet quantum yield from fluorescence and ISC lifetimes
    QuantumYield {
        /// Fluorescence lifetime, ns
        #[arg(long)]
        tau_f: f64,
        /// Intersystem-crossing lifetime, ns
        #[arg(long)]
        tau_isc: f64,
        #[command(flatten)]
        out: OutArgs,
    },
    /// Write a seeded synthetic dataset and its generating parameters
    GenSynthetic {
        /// biexp-trepr, maser-burst, rank2-tas or tcspc
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON overriding generator parameters
        #[arg(long)]
        params: Option<PathBuf>,
        #[command(flatten)]
        out: OutArgs,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SimulateTriplet { .. } => "simulate-triplet",
            Command::FitTrepr { .. } => "fit-trepr",
            Command::Qcircle { .. } => "qcircle",
            Command::ThermalPhotons { .. } => "thermal-photons",
            Command::ConvertPower { .. } => "convert-power",
            Command::SimulateMaser { .. } => "simulate-maser",
            Command::FitMaser { .. } => "fit-maser",
            Command::Cooperativity { .. } => "cooperativity",
            Command::Rabi { .. } => "rabi",
            Command::SvdTas { .. } => "svd-tas",
            Command::FitTcspc { .. } => "fit-tcspc",
            Command::QuantumYield { .. } => "quantum-yield",
            Command::GenSynthetic { .. } => "gen-synthetic",
        }
    }
}

/// Parses `argv` (including the program name), runs one subcommand and
/// returns the process exit code: 0 success, 1 user error, 2 numerical
/// failure.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(std::io::stdout().lock(), "{e}");
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    eprint!("{e}");
                    1
                }
                _ => {
                    let msg = e.to_string();
                    let line = msg.lines().next().unwrap_or("bad arguments");
                    eprintln!("zfmaser: {}", line.trim_start_matches("error: "));
                    1
                }
            };
        }
    };
    let name = cli.command.name();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("zfmaser {name}: {msg}");
            if e.is_numerical() {
                2
            } else {
                1
            }
        }
    }
}

/// Where and under which base name outputs go.
struct Sink {
    dir: Option<PathBuf>,
    stem: String,
    plot: bool,
    written: Vec<PathBuf>,
}

impl Sink {
    /// `always` selects the working directory when no directory is configured.
    fn new(out: &OutArgs, default_stem: &str, always: bool) -> Result<Self> {
        let dir = match (&out.out_dir, always) {
            (Some(d), _) => Some(d.clone()),
            (None, true) => Some(PathBuf::from(".")),
            (None, false) => None,
        };
        if let Some(d) = &dir {
            std::fs::create_dir_all(d)?;
        }
        Ok(Self {
            dir,
            stem: out.name.clone().unwrap_or_else(|| default_stem.to_string()),
            plot: out.plot_script,
            written: Vec::new(),
        })
    }

    fn path(&self, suffix: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{}{suffix}", self.stem)))
    }

    fn create(&mut self, suffix: &str) -> Result<Option<(BufWriter<File>, PathBuf)>> {
        let Some(p) = self.path(suffix) else { return Ok(None) };
        let f = File::create(&p)?;
        self.written.push(p.clone());
        Ok(Some((BufWriter::new(f), p)))
    }

    fn trace(&mut self, suffix: &str, trace: &TimeTrace) -> Result<()> {
        if let Some((mut w, p)) = self.create(suffix)? {
            trace.write_csv(&mut w)?;
            w.flush()?;
            self.plot_for(&p, &["t_us", "value"])?;
        }
        Ok(())
    }

    fn table(&mut self, suffix: &str, header: &[&str], columns: &[Vec<f64>]) -> Result<()> {
        if let Some((w, p)) = self.create(suffix)? {
            write_table(w, header, columns)?;
            self.plot_for(&p, header)?;
        }
        Ok(())
    }

    fn plot_for(&mut self, csv_path: &Path, header: &[&str]) -> Result<()> {
        if !self.plot {
            return Ok(());
        }
        let script = csv_path.with_extension("gp");
        let file = csv_path.file_name().and_then(|s| s.to_str()).unwrap_or("data.csv");
        let mut w = BufWriter::new(File::create(&script)?);
        writeln!(w, "# plots {file}; run with: gnuplot -p {}", script.file_name().and_then(|s| s.to_str()).unwrap_or(""))?;
        writeln!(w, "set datafile separator ','")?;
        writeln!(w, "set key autotitle columnhead")?;
        writeln!(w, "set xlabel '{}'", header.first().unwrap_or(&"x"))?;
        if header.len() <= 2 {
            writeln!(w, "plot '{file}' using 1:2 with lines")?;
        } else {
            writeln!(w, "plot for [i=2:{}] '{file}' using 1:i with lines", header.len())?;
        }
        w.flush()?;
        self.written.push(script);
        Ok(())
    }

    fn json(&mut self, manifest: &RunManifest, results: Value) -> Result<()> {
        if let Some((mut w, _)) = self.create(".json")? {
            let doc = json!({ "manifest": manifest, "results": results });
            serde_json::to_writer_pretty(&mut w, &doc)?;
            writeln!(w)?;
            w.flush()?;
        }
        Ok(())
    }
}

fn write_table<W: Write>(w: W, header: &[&str], columns: &[Vec<f64>]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header)?;
    let rows = columns.first().map_or(0, Vec::len);
    for i in 0..rows {
        wr.write_record(columns.iter().map(|c| fmt_full(c[i])))?;
    }
    wr.flush()?;
    Ok(())
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn manifest(name: &str, inputs: &[&Path], param_file: Option<&Path>, sink: &Sink, seed: Option<u64>) -> RunManifest {
    RunManifest {
        subcommand: name.to_string(),
        input_paths: inputs.iter().map(|p| path_string(p)).collect(),
        param_file: param_file.map(path_string),
        output_dir: sink.dir.as_deref().map(path_string),
        seed,
        tool_version: VERSION.to_string(),
    }
}

fn open(p: &Path) -> Result<BufReader<File>> {
    File::open(p)
        .map(BufReader::new)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", p.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(p: &Path) -> Result<T> {
    serde_json::from_reader(open(p)?).map_err(|e| Error::Parse(format!("{}: {e}", p.display())))
}

fn read_trace(p: &Path, unit: TraceUnit) -> Result<TimeTrace> {
    TimeTrace::read_csv(open(p)?, unit.into()).map_err(|e| match e {
        Error::Parse(m) => Error::Parse(format!("{}: {m}", p.display())),
        other => other,
    })
}

fn rate(value: f64, angular: bool) -> f64 {
    if angular {
        TAU * value
    } else {
        value
    }
}

fn need(v: Option<f64>, flag: &str) -> Result<f64> {
    v.ok_or_else(|| Error::InvalidInput(format!("--{flag} is required for this conversion")))
}

/// Writes a line to stdout; a closed pipe is not an error worth reporting.
fn emit(line: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn print_json(v: &Value) -> Result<()> {
    emit(serde_json::to_string_pretty(v)?);
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripletFile {
    populations: Option<[f64; 3]>,
    k_x: f64,
    k_z: f64,
    w_xz: f64,
}

fn default_inversion() -> f64 {
    0.52
}

fn default_t_end_us() -> f64 {
    10.0
}

fn default_samples() -> usize {
    DEFAULT_OUTPUT_POINTS
}

#[derive(Debug, Deserialize)]
struct MaserFile {
    #[serde(flatten)]
    system: MaserSystemParams,
    #[serde(default = "default_inversion")]
    inversion0: f64,
    #[serde(default = "default_t_end_us")]
    t_end_us: f64,
    #[serde(default = "default_samples")]
    samples: usize,
}

/// Starting point for a biexponential fit: the slow rate from the late
/// half of the trace, a fast rate five times larger.
fn default_biexp_init(trace: &TimeTrace) -> BiexpFit {
    let t = trace.t();
    let y = trace.y();
    let n = t.len();
    let half = n / 2;
    let pts: Vec<(f64, f64)> = t[half..]
        .iter()
        .zip(&y[half..])
        .filter(|(_, v)| v.abs() > 0.0)
        .map(|(t, v)| (*t, v.abs().ln()))
        .collect();
    let span = t[n - 1] - t[0];
    let mut slow = -3.0 / span;
    if pts.len() >= 2 {
        let m = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let k = sxy / sxx;
        if k.is_finite() && k < 0.0 {
            slow = k;
        }
    }
    let a = y.iter().cloned().fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
    BiexpFit::new(1.1 * a, -0.1 * a, 5.0 * slow, slow)
}

fn execute(cmd: Command) -> Result<()> {
    let name = cmd.name();
    match cmd {
        Command::SimulateTriplet {
            params,
            t_end_us,
            samples,
            out,
        } => {
            let file: TripletFile = read_json(&params)?;
            let pops = file.populations.map_or(TripletRateModel::DEFAULT_POPULATIONS, |p| (p[0], p[1], p[2]));
            let model = TripletRateModel::new(pops, file.k_x, file.k_z, file.w_xz)?;
            if !(t_end_us > 0.0) || samples < 2 {
                return Err(Error::InvalidInput("need t_end_us > 0 and at least 2 samples".into()));
            }
            let grid = linspace(0.0, us_to_s(t_end_us), samples);
            let traj = evolve_populations(&model, &grid)?;
            let (am, ap) = eigenrates(&model);
            let bi = model.difference_biexp();
            let mut results = json!({
                "model": model,
                "eigenrates": [am, ap],
                "difference": bi,
                "sign_change_time_us": bi.sign_change_time().map(s_to_us),
            });
            if am < 0.0 && ap < 0.0 {
                results["combined_decay"] = serde_json::to_value(combined_rate_from_eigen(am, ap)?)?;
            }
            let mut sink = Sink::new(&out, name, true)?;
            sink.table(
                ".csv",
                &["t_us", "n_x", "n_z", "difference"],
                &[
                    traj.iter().map(|s| s_to_us(s.t)).collect(),
                    traj.iter().map(|s| s.n_x).collect(),
                    traj.iter().map(|s| s.n_z).collect(),
                    traj.iter().map(|s| s.n_x - s.n_z).collect(),
                ],
            )?;
            let m = manifest(name, &[], Some(&params), &sink, None);
            sink.json(&m, results.clone())?;
            print_json(&results)
        }
        Command::FitTrepr {
            input,
            unit,
            init_a,
            init_b,
            init_alpha_minus,
            init_alpha_plus,
            out,
        } => {
            let trace = read_trace(&input, unit)?;
            if trace.len() < 6 {
                return Err(Error::InvalidInput("trace needs at least 6 samples".into()));
            }
            let guess = default_biexp_init(&trace);
            let init = BiexpFit::new(
                init_a.unwrap_or(guess.a),
                init_b.unwrap_or(guess.b),
                init_alpha_minus.unwrap_or(guess.alpha_minus),
                init_alpha_plus.unwrap_or(guess.alpha_plus),
            );
            let outcome = fit_biexponential(&trace, &init)?;
            let fit = outcome.fit;
            let combined = combined_rate_from_eigen(fit.alpha_minus, fit.alpha_plus).ok();
            let results = json!({
                "params": {"a": fit.a, "b": fit.b, "alpha_minus": fit.alpha_minus, "alpha_plus": fit.alpha_plus},
                "uncertainties": fit.uncertainties.map(|u| json!({"a": u[0], "b": u[1], "alpha_minus": u[2], "alpha_plus": u[3]})),
                "residual_norm": outcome.result.residual_norm,
                "converged": outcome.result.converged,
                "iterations": outcome.result.iterations,
                "jacobian_condition": outcome.result.jacobian_condition,
                "combined_decay": combined,
                "sign_change_time_us": fit.sign_change_time().map(s_to_us),
            });
            if !outcome.result.converged {
                eprintln!("zfmaser {name}: warning: fit did not converge");
            }
            let mut sink = Sink::new(&out, name, true)?;
            let model = TimeTrace::from_fn(trace.t(), trace.unit(), |t| fit.eval(t))?;
            sink.trace("-model.csv", &model)?;
            let m = manifest(name, &[&input], None, &sink, None);
            sink.json(&m, results.clone())?;
            print_json(&results)
        }
        Command::Qcircle {
            d,
            d2,
            s11,
            f0,
            f_low,
            f_high,
            k2,
            out,
        } => {
            let mut results = json!({});
            let diameter = match (&s11, d) {
                (Some(path), _) => {
                    let samples = read_s11_csv(open(path)?)?;
                    let pts: Vec<_> = samples.iter().map(|s| s.s11).collect();
                    let circle = fit_circle(&pts)?;
                    results["circle"] = serde_json::to_value(circle)?;
                    circle.diameter()
                }
                (None, Some(d)) => d,
                (None, None) => return Err(Error::InvalidInput("give --d or --s11".into())),
            };
            let geom = QCircleGeometry { d: diameter, d2 };
            let k = coupling_from_qcircle(&geom)?;
            results["d"] = json!(diameter);
            results["d2"] = json!(d2);
            results["coupling"] = json!(k);
            if let (Some(f0), Some(lo), Some(hi)) = (f0, f_low, f_high) {
                let ql = loaded_q(f0, lo, hi)?;
                results["loaded_q"] = json!(ql);
                results["unloaded_q"] = json!(unloaded_q(ql, k, k2)?);
            }
            let mut sink = Sink::new(&out, name, false)?;
            let inputs: Vec<&Path> = s11.as_deref().into_iter().collect();
            let m = manifest(name, &inputs, None, &sink, None);
            sink.json(&m, results.clone())?;
            print_json(&results)
        }
        Command::ThermalPhotons { f, f_angular, temp, out } => {
            let f_hz = if f_angular { f / TAU } else { f };
            let n = thermal_photons(f_hz, temp)?;
            let mut sink = Sink::new(&out, name, false)?;
            let m = manifest(name, &[], None, &sink, None);
            sink.json(&m, json!({"f_hz": f_hz, "temperature_k": temp, "thermal_photons": n}))?;
            emit(n);
            Ok(())
        }
        Command::ConvertPower {
            value,
            input,
            from,
            to,
            coupling,
            kappa_c,
            kappa_c_angular,
            f,
            out,
        } => {
            if from == PowerUnit::Photons {
                return Err(Error::InvalidInput("conversion from photons is not supported".into()));
            }
            let photon_args = || -> Result<(f64, f64, f64)> {
                Ok((
                    need(coupling, "coupling")?,
                    rate(need(kappa_c, "kappa-c")?, kappa_c_angular),
                    need(f, "f")?,
                ))
            };
            let scalar = |v: f64| -> Result<f64> {
                let watts = if from == PowerUnit::Dbm { dbm_to_watts(v)? } else { v };
                match to {
                    PowerUnit::Dbm => watts_to_dbm(watts),
                    PowerUnit::Watts => Ok(watts),
                    PowerUnit::Photons => {
                        let (k, kc, f) = photon_args()?;
                        power_to_photons(watts, k, kc, f)
                    }
                }
            };
            let mut sink = Sink::new(&out, name, input.is_some())?;
            match (value, &input) {
                (Some(v), _) => {
                    let r = scalar(v)?;
                    let m = manifest(name, &[], None, &sink, None);
                    sink.json(&m, json!({"input": v, "output": r}))?;
                    emit(r);
                }
                (None, Some(path)) => {
                    let unit = if from == PowerUnit::Dbm { TraceUnit::Dbm } else { TraceUnit::Watts };
                    let tr = read_trace(path, unit)?;
                    let watts = if from == PowerUnit::Dbm { tr.dbm_to_watts()? } else { tr };
                    let converted = match to {
                        PowerUnit::Watts => watts,
                        PowerUnit::Dbm => {
                            let y = watts.y().iter().map(|v| watts_to_dbm(*v)).collect::<Result<_>>()?;
                            watts.with_values(y, Unit::Dbm)?
                        }
                        PowerUnit::Photons => {
                            let (k, kc, f) = photon_args()?;
                            power_trace_to_photons(&watts, k, kc, f)?
                        }
                    };
                    sink.trace(".csv", &converted)?;
                    let m = manifest(name, &[path], None, &sink, None);
                    let results = json!({"samples": converted.len(), "unit": converted.unit()});
                    sink.json(&m, results.clone())?;
                    print_json(&results)?;
                }
                (None, None) => return Err(Error::InvalidInput("give --value or --input".into())),
            }
            Ok(())
        }
        Command::SimulateMaser { params, rtol, atol, out } => {
            let file = match &params {
                Some(p) => read_json::<MaserFile>(p)?,
                None => MaserFile {
                    system: MaserSystemParams::reference(),
                    inversion0: default_inversion(),
                    t_end_us: default_t_end_us(),
                    samples: default_samples(),
                },
            };
            if !(file.t_end_us > 0.0) || file.samples < 2 {
                return Err(Error::InvalidInput("need t_end_us > 0 and at least 2 samples".into()));
            }
            let d = Tolerances::default();
            let tol = Tolerances::new(rtol.unwrap_or(d.rtol), atol.unwrap_or(d.atol))?;
            let t_end = us_to_s(file.t_end_us);
            let grid = linspace(0.0, t_end, file.samples);
            let init = MaserState::initial(file.system.n_bar, file.inversion0);
            let traj = simulate_maser(&file.system, &init, (0.0, t_end), tol, Some(&grid))?;
            let n = file.system.n_spins;
            let mut sink = Sink::new(&out, name, true)?;
            sink.table(
                ".csv",
                &["t_us", "photon_number", "re_coherence", "im_coherence", "inversion", "spin_correlation_per_N"],
                &[
                    traj.t.iter().map(|t| s_to_us(*t)).collect(),
                    traj.states.iter().map(|s| s.photon_number).collect(),
                    traj.states.iter().map(|s| s.coherence.re).collect(),
                    traj.states.iter().map(|s| s.coherence.im).collect(),
                    traj.states.iter().map(|s| s.inversion).collect(),
                    traj.states.iter().map(|s| s.spin_correlation / n).collect(),
                ],
            )?;
            let peak = traj.peak();
            let results = json!({
                "params": file.system,
                "inversion0": file.inversion0,
                "cooperativity": file.system.cooperativity().ok(),
                "peak_photon_number": peak.map(|p| p.1),
                "peak_time_us": peak.map(|p| s_to_us(traj.t[p.0])),
                "steps": traj.stats.accepted,
                "rejected_steps": traj.stats.rejected,
                "rhs_evaluations": traj.stats.evaluations,
            });
            let m = manifest(name, &[], params.as_deref(), &sink, None);
            sink.json(&m, results.clone())?;
            print_json(&results)
        }
        Command::FitMaser {
            input,
            unit,
            fixed,
            coupling,
            f,
            t0_us,
            baseline,
            init_ge_hz,
            init_ge_angular,
            init_kappa_s_hz,
            init_kappa_s_angular,
            init_n,
            loss,
            fix_coupling,
            out,
        } => {
            let fixed_params = match &fixed {
                Some(p) => read_json::<MaserFixed>(p)?,
                None => MaserFixed::reference(),
            };
            let raw = read_trace(&input, unit)?;
            let photons = match unit {
                TraceUnit::Photons => raw,
                TraceUnit::Dbm | TraceUnit::Watts => {
                    let watts = if unit == TraceUnit::Dbm { raw.dbm_to_watts()? } else { raw };
                    power_trace_to_photons(&watts, need(coupling, "coupling")?, fixed_params.kappa_c, need(f, "f")?)?
                }
                TraceUnit::Dimensionless => {
                    return Err(Error::InvalidInput("fit-maser needs photons, watts or dBm".into()))
                }
            };
            let corrected = match baseline.as_deref() {
                None => photons,
                Some(spec) => {
                    let window = if spec == "auto" {
                        BaselineWindow::Auto
                    } else {
                        let end: f64 = spec
                            .parse()
                            .map_err(|_| Error::InvalidInput(format!("--baseline expects 'auto' or μs, got {spec:?}")))?;
                        BaselineWindow::Until(us_to_s(end))
                    };
                    baseline_correct(&photons, fixed_params.n_bar, window)?.trace
                }
            };
            let t0 = us_to_s(t0_us);
            let shifted: Vec<(f64, f64)> = corrected
                .t()
                .iter()
                .zip(corrected.y())
                .filter(|(t, _)| **t >= t0)
                .map(|(t, y)| (t - t0, *y))
                .collect();
            let trace = TimeTrace::new(
                shifted.iter().map(|p| p.0).collect(),
                shifted.iter().map(|p| p.1).collect(),
                Unit::Photons,
            )?;
            if trace.len() < 4 {
                return Err(Error::InvalidInput("fewer than 4 samples after t0".into()));
            }
            let r = MaserSystemParams::reference();
            let g0 = init_ge_hz.map_or(r.g_e, |v| rate(v, init_ge_angular));
            let ks0 = init_kappa_s_hz.map_or(r.kappa_s, |v| rate(v, init_kappa_s_angular));
            let n0 = init_n.unwrap_or(r.n_spins);
            let options = MaserFitOptions {
                loss_space: match loss {
                    Loss::Linear => LossSpace::Linear,
                    Loss::Log10 => LossSpace::Log10,
                },
                fix_coupling,
                ..Default::default()
            };
            let fit = fit_maser_parameters(&trace, &fixed_params, (g0, ks0, n0), &options)?;
            if !fit.result.converged {
                eprintln!("zfmaser {name}: warning: fit did not converge");
            }
            let results = json!({
                "params": {"g_e": fit.g_e, "kappa_s": fit.kappa_s, "n_spins": fit.n_spins},
                "uncertainties": {"g_e": fit.uncertainties[0], "kappa_s": fit.uncertainties[1], "n_spins": fit.uncertainties[2]},
                "fixed": fixed_params,
                "residual_norm": fit.result.residual_norm,
                "cooperativity": fit.cooperativity,
                "converged": fit.result.converged,
                "iterations": fit.result.iterations,
                "evaluations": fit.result.evaluations,
                "loss_space": options.loss_space,
            });
            let mut sink = Sink::new(&out, name, true)?;
            let params = fixed_params.params(fit.g_e, fit.kappa_s, fit.n_spins);
            let init = MaserState::initial(fixed_params.n_bar, fixed_params.inversion0);
            let t_end = *trace.t().last().expect("non-empty");
            let model = simulate_maser(&params, &init, (0.0, t_end), options.tolerances, Some(trace.t()))?;
            sink.trace("-model.csv", &trace.with_values(model.photon_numbers(), Unit::Photons)?)?;
            let m = manifest(name, &[&input], fixed.as_deref(), &sink, None);
            sink.json(&m, results.clone())?;
            print_json(&results)
        }
        Command::Cooperativity {
            ge_hz,
            ge_angular,
            kappa_c,
            kappa_c_angular,
            kappa_s_hz,
            kappa_s_angular,
            out,
        } => {
            let g = rate(ge_hz, ge_angular);
            let kc = rate(kappa_c, kappa_c_angular);
            let ks = rate(kappa_s_hz, kappa_s_angular);
            let c = cooperativity(g, kc, ks)?;
            let mut sink = Sink::new(&out, name, false)?;
            let m = manifest(name, &[], None, &sink, None);
            sink.json(&m, json!({"g_e": g, "kappa_c": kc, "kappa_s": ks, "cooperativity": c}))?;
            emit(c);
            Ok(())
        }
        Command::Rabi {
            input,
            unit,
            from_us,
            to_us,
            out,
        } => {
            let raw = read_trace(&input, unit)?;
            let trace = if unit == TraceUnit::Dbm { raw.dbm_to_watts()? } else { raw };
            let lo = from_us.map_or(f64::NEG_INFINITY, us_to_s);
            let hi = to_us.map_or(f64::INFINITY, us_to_s);
            let seg = trace.window(lo, hi)?;
            let freq = dominant_frequency(seg.t(), seg.y())?;
            let mut sink = Sink::new(&out, name, false)?;
            let m = manifest(name, &[&input], None, &sink, None);
            sink.json(
                &m,
                json!({"rabi_frequency_hz": freq, "window_us": [s_to_us(seg.t()[0]), s_to_us(*seg.t().last().expect("non-empty"))]}),
            )?;
            emit(freq);
            Ok(())
        }
        Command::SvdTas { input, threshold, out } => {
            let matrix = SpectrumMatrix::read_csv(open(&input)?)?;
            let res = svd_global_analysis(&matrix, threshold)?;
            let k = res.significant_count;
            let mut sink = Sink::new(&out, name, true)?;
            let labels: Vec<String> = (1..=k).map(|i| format!("component_{i}")).collect();
            let mut header = vec!["wavelength_nm"];
            header.extend(labels.iter().map(String::as_str));
            let mut cols = vec![matrix.wavelengths().to_vec()];
            cols.extend(res.spectral_components[..k].iter().cloned());
            sink.table("-spectra.csv", &header, &cols)?;
            header[0] = "delay_ps";
            let mut cols = vec![matrix.delays().to_vec()];
            cols.extend(res.time_profiles[..k].iter().cloned());
            sink.table("-profiles.csv", &header, &cols)?;
            let results = json!({
                "singular_values": res.singular_values,
                "significant_count": k,
                "threshold": threshold,
                "component_lifetimes_ps": res.component_lifetimes,
                "component_lifetime_uncertainties_ps": res.component_lifetime_uncertainties,
                "profile_lifetimes_ps": res.profile_lifetimes,
                "converged": res.converged,
            });
            let m = manifest(name, &[&input], None, &sink, None);
            sink.json(&m, results.clone())?;
            print_json(&results)
        }
        Command::FitTcspc { input, components, out } => {
            let trace = read_trace(&input, TraceUnit::Dimensionless)?;
            let fit = fit_tcspc(&trace, components)?;
            if !fit.converged {
                eprintln!("zfmaser {name}: warning: data do not support {components} components");
            }
            let results = json!({
                "lifetimes_ns": fit.lifetimes.iter().map(|t| t * 1e9).collect::<Vec<_>>(),
                "lifetime_uncertainties_ns": fit.lifetime_uncertainties.iter().map(|t| t * 1e9).collect::<Vec<_>>(),
                "amplitudes": fit.amplitudes,
                "peak_time_us": s_to_us(fit.peak_time),
                "residual_norm": fit.residual_norm,
                "converged": fit.converged,
            });
            let mut sink = Sink::new(&out, name, false)?;
            let m = manifest(name, &[&input], None, &sink, None);
            sink.json(&m, results.clone())?;
            print_json(&results)
        }
        Command::QuantumYield { tau_f, tau_isc, out } => {
            let r = rates_from_lifetimes(tau_f, tau_isc)?;
            let mut sink = Sink::new(&out, name, false)?;
            let m = manifest(name, &[], None, &sink, None);
            sink.json(&m, serde_json::to_value(r)?)?;
            emit(r.theta_t);
            Ok(())
        }
        Command::GenSynthetic { kind, seed, params, out } => {
            let kind: SynthKind = kind.parse()?;
            let p = match &params {
                Some(path) => SynthParams::from_json(kind, read_json::<Value>(path)?)?,
                None => SynthParams::default_for(kind),
            };
            let output = gen_synthetic(&p, seed)?;
            let mut sink = Sink::new(&out, kind.name(), true)?;
            match &output.data {
                SynthData::Trace(tr) => sink.trace(".csv", tr)?,
                SynthData::Matrix(m) => {
                    if let Some((mut w, _)) = sink.create(".csv")? {
                        m.write_csv(&mut w)?;
                        w.flush()?;
                    }
                }
            }
            let m = manifest(name, &[], params.as_deref(), &sink, Some(seed));
            let results = json!({"kind": kind.name(), "params": output.params});
            sink.json(&m, results)?;
            for p in &sink.written {
                emit(p.display());
            }
            Ok(())
        }
    }
}
