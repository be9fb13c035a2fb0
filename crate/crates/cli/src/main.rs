//! `fpgaloop`: batch front end for the fpgaloop-core toolkit.
//!
//! Every command that writes files puts its CSVs plus a
//! `<group>-<command>.manifest.json` into the output directory (`--out-dir`,
//! else `$FPGALOOP_OUT_DIR`, else the working directory). Exit codes: 0 ok,
//! 1 module error, 2 usage, 3 config error.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use fpgaloop_core::adaptive_phase::{circular_mean, monte_carlo, monte_carlo_csv, simulate_pulse, trajectory_csv};
use fpgaloop_core::cavity_lock::{
    bode_continuous, bode_csv, bode_iir, design_lock, phase_margin, reacquire_scenario, rejection_csv, simulate_lock,
    LockDesign, LockPlant,
};
use fpgaloop_core::config::{
    from_toml, BodeScenario, DiscretizeScenario, FirScenario, IirScenario, IirSource, LockScenario, LutScenario,
    PipelineScenario, PulseScenario,
};
use fpgaloop_core::csv::{int, num, Csv};
use fpgaloop_core::discretize::{c2d, DiscreteTF};
use fpgaloop_core::filters::{fir_design_ls, iir_build};
use fpgaloop_core::lut::{partition_options, RamBlock};
use fpgaloop_core::Error;

#[derive(Parser)]
#[command(name = "fpgaloop", version, about = "Fixed-point servo design and simulation")]
struct Cli {
    /// Directory for CSVs and manifests.
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    group: Group,
}

#[derive(Subcommand)]
enum Group {
    /// Continuous transfer functions.
    Lti {
        #[command(subcommand)]
        cmd: LtiCmd,
    },
    /// Continuous to discrete conversion.
    Discretize(ConfigArg),
    /// FIR design and fixed-point IIR synthesis.
    Filters {
        #[command(subcommand)]
        cmd: FiltersCmd,
    },
    /// RAM-block look-up tables.
    Lut {
        #[command(subcommand)]
        cmd: LutCmd,
    },
    /// Board latency model.
    Pipeline {
        #[command(subcommand)]
        cmd: PipelineCmd,
    },
    /// Adaptive homodyne phase measurement.
    Adphi {
        #[command(subcommand)]
        cmd: AdphiCmd,
    },
    /// Two-arm cavity lock.
    Lock {
        #[command(subcommand)]
        cmd: LockCmd,
    },
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long, value_name = "FILE")]
    config: PathBuf,
}

#[derive(Args)]
struct OptConfigArg {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct SeededConfig {
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum LtiCmd {
    Bode(ConfigArg),
}

#[derive(Subcommand)]
enum FiltersCmd {
    DesignFir(ConfigArg),
    BuildIir(ConfigArg),
}

#[derive(Subcommand)]
enum LutCmd {
    Tabulate(ConfigArg),
    Partitions {
        /// RAM block size in bits.
        #[arg(long, default_value_t = 4096)]
        bits: u64,
    },
}

#[derive(Subcommand)]
enum PipelineCmd {
    Report(OptConfigArg),
    Simulate(OptConfigArg),
}

#[derive(Subcommand)]
enum AdphiCmd {
    Run {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    Montecarlo {
        #[arg(long, value_name = "FILE")]
        config: PathBuf,
        /// Seed of the first trial; trial i uses seed + i.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trials: Option<usize>,
    },
}

#[derive(Subcommand)]
enum LockCmd {
    Design(OptConfigArg),
    Bode(OptConfigArg),
    Simulate(SeededConfig),
    Reacquire(SeededConfig),
}

enum Failure {
    Config(String),
    Module(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(m) => Failure::Config(m),
            other => Failure::Module(other.to_string()),
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: Option<String>,
    seed: Option<u64>,
    outputs: Vec<String>,
    version: String,
    timestamp: u64,
}

/// Files a command produced, written only once everything succeeded.
struct Run {
    command: &'static str,
    config: Option<PathBuf>,
    seed: Option<u64>,
    files: Vec<(String, String)>,
}

impl Run {
    fn new(command: &'static str, config: Option<&Path>, seed: Option<u64>) -> Self {
        Self {
            command,
            config: config.map(Path::to_path_buf),
            seed,
            files: Vec::new(),
        }
    }

    fn file(mut self, name: &str, contents: String) -> Self {
        self.files.push((name.to_string(), contents));
        self
    }

    fn write(self, dir: &Path) -> Outcome<()> {
        let io = |e: std::io::Error, p: &Path| Failure::Module(format!("{}: {e}", p.display()));
        fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
        let mut outputs = Vec::new();
        for (name, body) in &self.files {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| io(e, &p))?;
            println!("wrote {}", p.display());
            outputs.push(p.display().to_string());
        }
        let manifest = RunManifest {
            command: self.command.to_string(),
            config: self.config.map(|c| c.display().to_string()),
            seed: self.seed,
            outputs,
            version: env!("CARGO_PKG_VERSION").to_string(),
            timestamp: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        let p = dir.join(format!("{}.manifest.json", self.command.replace(' ', "-")));
        let body = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&p, body + "\n").map_err(|e| io(e, &p))?;
        Ok(())
    }
}

fn load<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Outcome<T> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    from_toml(&text).map_err(|e| match e {
        Error::Config(m) => Failure::Config(format!("{}: {m}", path.display())),
        other => other.into(),
    })
}

fn load_or_default<T: for<'de> serde::Deserialize<'de> + Default>(path: Option<&PathBuf>) -> Outcome<T> {
    match path {
        Some(p) => load(p),
        None => Ok(T::default()),
    }
}

fn out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("FPGALOOP_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn discrete_csv(g: &DiscreteTF) -> String {
    let mut c = Csv::new(&["k", "a", "b"]);
    for k in 0..g.a().len() {
        c.row([int(k as u64), num(g.a()[k]), num(g.b()[k])]);
    }
    c.finish()
}

fn lock_design(sc: &LockScenario) -> Outcome<(LockPlant, LockDesign)> {
    let plant = sc.plant()?;
    let design = design_lock(&plant, &sc.design)?;
    Ok((plant, design))
}

fn dispatch(group: Group, dir: &Path) -> Outcome<()> {
    match group {
        Group::Lti { cmd: LtiCmd::Bode(a) } => {
            let sc: BodeScenario = load(&a.config)?;
            let b = bode_continuous(&sc.tf.build()?, sc.f_lo, sc.f_hi, sc.points)?;
            Run::new("lti bode", Some(&a.config), None)
                .file("bode.csv", bode_csv(&b))
                .write(dir)
        }
        Group::Discretize(a) => {
            let sc: DiscretizeScenario = load(&a.config)?;
            let g = c2d(&sc.tf.build()?, sc.fs, sc.method)?;
            println!("{}", serde_json::to_string(&g).expect("serializable"));
            Run::new("discretize", Some(&a.config), None)
                .file("discrete.csv", discrete_csv(&g))
                .write(dir)
        }
        Group::Filters {
            cmd: FiltersCmd::DesignFir(a),
        } => {
            let sc: FirScenario = load(&a.config)?;
            let fir = fir_design_ls(&sc.band_edges, &sc.desired_gains, sc.n_taps, sc.input_bits)?;
            let mut c = Csv::new(&["k", "tap"]);
            for (k, t) in fir.taps().iter().enumerate() {
                c.row([int(k as u64), num(*t)]);
            }
            println!("{} taps, symmetric: {}", fir.len(), fir.is_symmetric());
            Run::new("filters design-fir", Some(&a.config), None)
                .file("fir_taps.csv", c.finish())
                .write(dir)
        }
        Group::Filters {
            cmd: FiltersCmd::BuildIir(a),
        } => {
            let sc: IirScenario = load(&a.config)?;
            let g = match &sc.source {
                IirSource::Discrete { discrete } => discrete.clone(),
                IirSource::Continuous { tf, fs, method } => c2d(&tf.build()?, *fs, *method)?,
            };
            let f = iir_build(&g, &sc.spec)?;
            let (a_raw, b_raw) = f.raw_coefficients().expect("built filters are fixed point");
            let q = f.tf();
            let one = 1i128 << f.coef_frac_bits().expect("built filters are fixed point");
            let mut c = Csv::new(&["k", "a", "b", "a_raw", "b_raw"]);
            for k in 0..q.a().len() {
                let b = if k == 0 { one } else { b_raw[k - 1] };
                c.row([int(k as u64), num(q.a()[k]), num(q.b()[k]), int(a_raw[k]), int(b)]);
            }
            if let (Some(t), Some(cf)) = (f.trims(), f.coef_frac_bits()) {
                println!(
                    "coefficient fraction bits {cf}, trims ff {} fb {} out {}, max pole {:.6}",
                    t.ff,
                    t.fb,
                    t.out,
                    q.max_pole_magnitude()
                );
            }
            Run::new("filters build-iir", Some(&a.config), None)
                .file("iir_coefficients.csv", c.finish())
                .write(dir)
        }
        Group::Lut {
            cmd: LutCmd::Tabulate(a),
        } => {
            let sc: LutScenario = load(&a.config)?;
            let t = RamBlock::tabulate(|x| sc.function.eval(x), sc.geometry.clone())?;
            println!("{} entries in {} block(s)", t.data().len(), t.blocks());
            Run::new("lut tabulate", Some(&a.config), None)
                .file("lut.csv", t.to_csv())
                .write(dir)
        }
        Group::Lut {
            cmd: LutCmd::Partitions { bits },
        } => {
            println!("B_i,depth");
            for (bi, depth) in partition_options(bits)? {
                println!("{bi},{depth}");
            }
            Ok(())
        }
        Group::Pipeline {
            cmd: PipelineCmd::Report(a),
        } => {
            let sc: PipelineScenario = load_or_default(a.config.as_ref())?;
            let b = &sc.board;
            b.validate()?;
            println!("total cycles: {}", b.total_cycles());
            println!("latency: {} ns", fmt_g(b.latency() * 1e9));
            println!("control bandwidth: {} MHz", fmt_g(b.control_bandwidth()? / 1e6));
            println!("nyquist: {} MHz", fmt_g(b.nyquist() / 1e6));
            Ok(())
        }
        Group::Pipeline {
            cmd: PipelineCmd::Simulate(a),
        } => {
            let sc: PipelineScenario = load_or_default(a.config.as_ref())?;
            sc.board.validate()?;
            let freqs = if sc.freqs_hz.is_empty() {
                let step = sc.board.nyquist() / 100.0;
                (1..90).map(|k| k as f64 * step).collect()
            } else {
                sc.freqs_hz.clone()
            };
            let resp = sc.board.measure_response(&freqs, sc.samples)?;
            let mut c = Csv::new(&["freq_hz", "gain_db", "phase_deg", "expected_phase_deg"]);
            let lat = sc.board.latency();
            for (f, z) in freqs.iter().zip(&resp) {
                let expected = fpgaloop_core::adaptive_phase::wrap_phase(-2.0 * PI * f * lat);
                c.row([
                    num(*f),
                    num(20.0 * z.norm().log10()),
                    num(z.arg().to_degrees()),
                    num(expected.to_degrees()),
                ]);
            }
            println!(
                "measured latency: {} ns",
                fmt_g(sc.board.measured_latency(&freqs, sc.samples)? * 1e9)
            );
            Run::new("pipeline simulate", a.config.as_deref(), None)
                .file("pipeline_response.csv", c.finish())
                .write(dir)
        }
        Group::Adphi {
            cmd: AdphiCmd::Run { config, seed },
        } => {
            let mut sc: PulseScenario = load(&config)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            let t = simulate_pulse(&sc.pulse_config()?)?;
            match t.final_estimate {
                Some(e) => println!("final estimate {e:.6} rad (true {:.6})", sc.true_phase),
                None => println!("final estimate undefined"),
            }
            Run::new("adphi run", Some(&config), Some(sc.seed))
                .file("adphi_trajectory.csv", trajectory_csv(&t))
                .write(dir)
        }
        Group::Adphi {
            cmd: AdphiCmd::Montecarlo { config, seed, trials },
        } => {
            let mut sc: PulseScenario = load(&config)?;
            if let Some(s) = seed {
                sc.seed = s;
            }
            if let Some(n) = trials {
                sc.trials = n;
            }
            let res = monte_carlo(&sc.pulse_config()?, sc.trials, sc.seed)?;
            let est: Vec<f64> = res.iter().map(|r| r.final_estimate).filter(|e| e.is_finite()).collect();
            if !est.is_empty() {
                let (mean, se) = circular_mean(&est);
                println!(
                    "{} trials, circular mean {mean:.6} rad, standard error {se:.2e}",
                    res.len()
                );
            }
            Run::new("adphi montecarlo", Some(&config), Some(sc.seed))
                .file("adphi_montecarlo.csv", monte_carlo_csv(&res))
                .write(dir)
        }
        Group::Lock {
            cmd: LockCmd::Design(a),
        } => {
            let sc: LockScenario = load_or_default(a.config.as_ref())?;
            let (plant, d) = lock_design(&sc)?;
            let (fc, pm) = phase_margin(&plant, &d, d.board.latency())?;
            println!("effective rate {} MHz", fmt_g(d.fs / 1e6));
            println!("lower arm dc gain {:.4}", d.t_l.dc_gain()?);
            println!("crossover {:.1} Hz, phase margin {pm:.2} deg", fc);
            let mut c = Csv::new(&["arm", "k", "a", "b"]);
            for (arm, f) in [("upper", &d.t_u_discrete), ("lower", &d.t_l_discrete)] {
                let g = f.tf();
                for k in 0..g.a().len() {
                    c.row([arm.to_string(), int(k as u64), num(g.a()[k]), num(g.b()[k])]);
                }
            }
            Run::new("lock design", a.config.as_deref(), None)
                .file("lock_design.csv", c.finish())
                .write(dir)
        }
        Group::Lock { cmd: LockCmd::Bode(a) } => {
            let sc: LockScenario = load_or_default(a.config.as_ref())?;
            let (plant, d) = lock_design(&sc)?;
            let s = &sc.bode;
            let hi_d = s.f_hi.min(0.999 * d.fs / 2.0);
            let open = plant
                .t_c
                .series(&plant.t_v.series(&d.t_u).add(&plant.pzt.series(&d.t_l)));
            Run::new("lock bode", a.config.as_deref(), None)
                .file(
                    "lock_bode_upper.csv",
                    bode_csv(&bode_continuous(&d.t_u, s.f_lo, s.f_hi, s.points)?),
                )
                .file(
                    "lock_bode_lower.csv",
                    bode_csv(&bode_continuous(&d.t_l, s.f_lo, s.f_hi, s.points)?),
                )
                .file(
                    "lock_bode_upper_discrete.csv",
                    bode_csv(&bode_iir(&d.t_u_discrete, s.f_lo, hi_d, s.points)?),
                )
                .file(
                    "lock_bode_lower_discrete.csv",
                    bode_csv(&bode_iir(&d.t_l_discrete, s.f_lo, hi_d, s.points)?),
                )
                .file(
                    "lock_bode_open_loop.csv",
                    bode_csv(&bode_continuous(&open, s.f_lo, s.f_hi, s.points)?),
                )
                .write(dir)
        }
        Group::Lock {
            cmd: LockCmd::Simulate(a),
        } => {
            let mut sc: LockScenario = load_or_default(a.config.as_ref())?;
            if let Some(s) = a.seed {
                sc.simulate.seed = s;
            }
            let (plant, d) = lock_design(&sc)?;
            let run = simulate_lock(&plant, &d, &sc.simulate)?;
            match run.lock_lost_at_s {
                Some(t) => println!("lock lost at {t:.6} s"),
                None => {
                    for r in &run.rejection {
                        println!(
                            "{} Hz: open {:.2} dB, closed {:.2} dB, predicted {:.2} dB",
                            r.line_hz, r.open_db, r.closed_db, r.predicted_db
                        );
                    }
                }
            }
            Run::new("lock simulate", a.config.as_deref(), Some(sc.simulate.seed))
                .file("lock_timeseries.csv", run.record.to_csv())
                .file("lock_rejection.csv", rejection_csv(&run.rejection))
                .write(dir)
        }
        Group::Lock {
            cmd: LockCmd::Reacquire(a),
        } => {
            let mut sc: LockScenario = load_or_default(a.config.as_ref())?;
            if let Some(s) = a.seed {
                sc.reacquire.seed = s;
            }
            let (plant, d) = lock_design(&sc)?;
            let run = reacquire_scenario(&plant, &d, &sc.reacquire)?;
            for (t, s) in &run.transitions {
                println!("{:.6} s: {s:?}", t);
            }
            println!("full cycle: {}", run.completed_cycle());
            Run::new("lock reacquire", a.config.as_deref(), Some(sc.reacquire.seed))
                .file("lock_reacquire.csv", run.record.to_csv())
                .file("lock_transitions.csv", run.transitions_csv())
                .write(dir)
        }
    }
}

/// Shortest decimal that reads back to within 1e-9 relative.
fn fmt_g(x: f64) -> String {
    for digits in 0..12 {
        let s = format!("{x:.digits$}");
        if let Ok(y) = s.parse::<f64>() {
            if (y - x).abs() <= 1e-9 * x.abs().max(1e-300) {
                return s;
            }
        }
    }
    format!("{x}")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = out_dir(cli.out_dir);
    match dispatch(cli.group, &dir) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("fpgaloop: config error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Module(m)) => {
            eprintln!("fpgaloop: {m}");
            ExitCode::from(1)
        }
    }
}
