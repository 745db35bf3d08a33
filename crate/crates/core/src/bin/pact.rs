use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use toml::Value;

use pact_core::aberration::{psf_from_transfer, transfer_stack, wavefront_fourier_modes, wavefront_profile};
use pact_core::beamform::{das, das_stack, dual_sos_das};
use pact_core::config::{parse_value, ConfigLayers, RunConfig};
use pact_core::evaluate::{benchmark, BenchmarkConfig, BenchmarkTruth, EvalReport};
use pact_core::geometry::CircularMask;
use pact_core::optimize::{joint_reconstruct_with, JointProblem};
use pact_core::phantom::{generate_phantom, simulate_signals, Phantom, PhantomSpec};
use pact_core::raster::RasterGrid;
use pact_core::signals::SignalSet;
use pact_core::{Error, Result};

#[derive(Parser)]
#[command(name = "pact", version, about = "Photoacoustic reconstruction with joint sound-speed estimation")]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration key, e.g. `--set epochs=20`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Cap on worker threads (1 gives bitwise-reproducible runs).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write pressure, SOS and mask rasters of a numerical phantom.
    Phantom {
        /// Named phantom (default, liver, twobody, empty) or a TOML spec file.
        #[arg(long)]
        spec: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate ring-array signals from a phantom directory.
    Simulate {
        /// Directory written by `phantom`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct an image from signals.
    Recon {
        #[arg(value_enum)]
        method: ReconMethod,
        #[command(flatten)]
        args: ReconArgs,
    },
    /// Joint image and SOS reconstruction (same as `recon nf`).
    Train {
        #[command(flatten)]
        args: ReconArgs,
    },
    /// Dump figure data.
    Psf {
        #[command(subcommand)]
        what: PsfCommand,
    },
    /// Benchmark reconstruction methods against a phantom.
    Eval {
        #[arg(long)]
        signals: PathBuf,
        /// Directory written by `phantom`.
        #[arg(long)]
        truth: PathBuf,
        /// Reference image; the aberration-free DAS image of the truth when absent.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Comma-separated methods.
        #[arg(long, default_value = "das,dual_sos,deconv_true_sos,nf_apact")]
        methods: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        tuning: Tuning,
    },
}

#[derive(Subcommand)]
enum PsfCommand {
    /// PSF and wavefront error of the patch centered at (x, y).
    Dump {
        #[arg(long)]
        sos: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        x: f64,
        #[arg(long, allow_hyphen_values = true)]
        y: f64,
        #[arg(long, allow_hyphen_values = true)]
        delay: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        /// Text file receiving `theta w` pairs.
        #[arg(long)]
        wavefront: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReconMethod {
    Das,
    DualSos,
    Stack,
    Deconv,
    Nf,
}

#[derive(Args)]
struct ReconArgs {
    #[arg(long)]
    signals: PathBuf,
    /// Output PGRID file, or directory for `stack` and `nf`.
    #[arg(long)]
    out: PathBuf,
    /// SOS raster for `deconv`.
    #[arg(long)]
    sos: Option<PathBuf>,
    #[command(flatten)]
    tuning: Tuning,
}

#[derive(Args, Default)]
struct Tuning {
    /// Assumed uniform SOS, m/s.
    #[arg(long)]
    v0: Option<f64>,
    /// Extra delay of a single DAS image, mm.
    #[arg(long, allow_hyphen_values = true)]
    delay: Option<f64>,
    /// Delay stack as `min:max:count`, mm.
    #[arg(long, allow_hyphen_values = true)]
    delays: Option<String>,
    /// Body center as `x,y`, mm.
    #[arg(long, allow_hyphen_values = true)]
    body_center: Option<String>,
    #[arg(long)]
    body_radius: Option<f64>,
    #[arg(long)]
    body_sos: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    lambda_tv: Option<f64>,
}

fn float(v: f64) -> Value {
    Value::Float(v)
}

fn int(v: usize) -> Value {
    Value::Integer(v as i64)
}

impl Tuning {
    fn apply(&self, layers: &mut ConfigLayers) -> Result<()> {
        if let Some(v) = self.v0 {
            layers.flag("v0", float(v))?;
        }
        if let Some(v) = self.delay {
            layers.flag("delay", float(v))?;
        }
        if let Some(text) = &self.delays {
            let parts: Vec<&str> = text.split(':').collect();
            let bad = || Error::Config(format!("--delays expects min:max:count, got `{text}`"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
            let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
            layers.flag("delay_min", float(lo))?;
            layers.flag("delay_max", float(hi))?;
            layers.flag("delay_count", int(n))?;
        }
        if let Some(text) = &self.body_center {
            let bad = || Error::Config(format!("--body-center expects x,y, got `{text}`"));
            let (x, y) = text.split_once(',').ok_or_else(bad)?;
            layers.flag("body_center_x", float(x.trim().parse().map_err(|_| bad())?))?;
            layers.flag("body_center_y", float(y.trim().parse().map_err(|_| bad())?))?;
        }
        if let Some(v) = self.body_radius {
            layers.flag("body_radius", float(v))?;
        }
        if let Some(v) = self.body_sos {
            layers.flag("body_sos", float(v))?;
        }
        if let Some(v) = self.epochs {
            layers.flag("epochs", int(v))?;
        }
        if let Some(v) = self.steps_per_epoch {
            layers.flag("steps_per_epoch", int(v))?;
        }
        if let Some(v) = self.lr {
            layers.flag("learning_rate", float(v))?;
        }
        if let Some(v) = self.lambda_tv {
            layers.flag("lambda_tv", float(v))?;
        }
        Ok(())
    }
}

fn resolve(cli: &Cli, tuning: Option<&Tuning>) -> Result<RunConfig> {
    let mut layers = ConfigLayers::new();
    if let Some(path) = &cli.config {
        layers.file(path)?;
    }
    layers.env()?;
    for item in &cli.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{item}`")))?;
        layers.flag(k.trim(), parse_value(v.trim()))?;
    }
    if let Some(w) = cli.workers {
        layers.flag("workers", int(w))?;
    }
    if let Some(s) = cli.seed {
        layers.flag("seed", Value::Integer(s as i64))?;
    }
    if let Some(t) = tuning {
        t.apply(&mut layers)?;
    }
    layers.resolve()
}

/// Print the resolved configuration and store it next to the outputs.
fn echo_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    let text = cfg.to_toml();
    println!("# resolved configuration\n{text}");
    fs::create_dir_all(dir)?;
    fs::write(dir.join("resolved_config.toml"), text)?;
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn load_spec(name: &str, cfg: &RunConfig) -> Result<PhantomSpec> {
    match PhantomSpec::named(name) {
        Some(mut spec) => {
            spec.background_sos = cfg.background()?;
            Ok(spec)
        }
        None => {
            let path = Path::new(name);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "unknown phantom `{name}` (expected default, liver, twobody, empty or a TOML file)"
                )));
            }
            PhantomSpec::from_toml(&fs::read_to_string(path)?)
        }
    }
}

fn load_phantom(dir: &Path) -> Result<(Phantom, PhantomSpec)> {
    let spec = PhantomSpec::from_toml(&fs::read_to_string(dir.join("phantom.toml"))?)?;
    let pressure = RasterGrid::load(dir.join("pressure.pgrid"))?;
    let sos = RasterGrid::load(dir.join("sos.pgrid"))?;
    if !pressure.spec.same_shape(&sos.spec) {
        return Err(Error::Config("pressure and SOS rasters differ in shape".into()));
    }
    let phantom = Phantom {
        pressure,
        sos,
        mask: spec.mask()?,
        background_sos: spec.background_sos,
    };
    Ok((phantom, spec))
}

fn check_signals(sig: &SignalSet, cfg: &RunConfig) -> Result<()> {
    let grid = cfg.grid()?;
    let [ex, ey] = grid.extent();
    let reach = [grid.origin[0], grid.origin[0] + ex]
        .iter()
        .flat_map(|x| [grid.origin[1], grid.origin[1] + ey].map(|y| x.hypot(y)))
        .fold(0.0, f64::max);
    if reach >= sig.geom.radius {
        return Err(Error::Config("image grid extends beyond the transducer ring".into()));
    }
    Ok(())
}

fn write_loss_log(path: &Path, lines: &[String]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    for l in lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

fn run_nf(cfg: &RunConfig, signals: &Path, out: &Path) -> Result<()> {
    let sig = SignalSet::load(signals)?;
    check_signals(&sig, cfg)?;
    echo_config(cfg, out)?;
    let mut lines = Vec::new();
    let result = joint_reconstruct_with(&sig, cfg.train_config()?, |r| {
        let line = r.log_line();
        eprintln!("{line}");
        lines.push(line);
    })?;
    result.image.save(out.join("image.pgrid"))?;
    result.sos.save(out.join("sos.pgrid"))?;
    result.params.save(out.join("params.sirn"))?;
    write_loss_log(&out.join("loss.log"), &lines)
}

fn run(cli: Cli) -> Result<()> {
    let tuning = match &cli.command {
        Command::Recon { args, .. } | Command::Train { args } => Some(&args.tuning),
        Command::Eval { tuning, .. } => Some(tuning),
        _ => None,
    };
    let cfg = resolve(&cli, tuning)?;
    if cfg.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Phantom { spec, out } => {
            let name = spec.clone().unwrap_or_else(|| cfg.phantom.clone());
            let spec = load_spec(&name, &cfg)?;
            let ph = generate_phantom(&spec, cfg.grid()?, cfg.seed)?;
            echo_config(&cfg, out)?;
            ph.pressure.save(out.join("pressure.pgrid"))?;
            ph.sos.save(out.join("sos.pgrid"))?;
            ph.mask.to_raster(cfg.grid()?).save(out.join("mask.pgrid"))?;
            fs::write(
                out.join("phantom.toml"),
                toml::to_string(&spec).map_err(|e| Error::Format(e.to_string()))?,
            )?;
            println!("wrote phantom `{name}` to {}", out.display());
        }
        Command::Simulate { input, out } => {
            let (ph, _) = load_phantom(input)?;
            echo_config(&cfg, &parent_dir(out))?;
            let sig = simulate_signals(&ph, &cfg.geometry()?, &cfg.sim_config())?;
            sig.save(out)?;
            println!(
                "wrote {} channels x {} samples to {}",
                sig.geom.n_transducers,
                sig.n_samples,
                out.display()
            );
        }
        Command::Recon { method, args } => {
            if *method == ReconMethod::Nf {
                return run_nf(&cfg, &args.signals, &args.out);
            }
            let sig = SignalSet::load(&args.signals)?;
            check_signals(&sig, &cfg)?;
            let grid = cfg.grid()?;
            match method {
                ReconMethod::Das => {
                    echo_config(&cfg, &parent_dir(&args.out))?;
                    das(&sig, grid, cfg.das_v0()?, cfg.delay)?.save(&args.out)?;
                }
                ReconMethod::DualSos => {
                    echo_config(&cfg, &parent_dir(&args.out))?;
                    dual_sos_das(&sig, grid, cfg.das_v0()?, &cfg.body()?)?.save(&args.out)?;
                }
                ReconMethod::Stack => {
                    echo_config(&cfg, &args.out)?;
                    let stack = das_stack(&sig, grid, cfg.das_v0()?, &cfg.delays()?)?;
                    let mut index = String::new();
                    for (j, (img, d)) in stack.images.iter().zip(&stack.delays).enumerate() {
                        let name = format!("stack_{j:03}.pgrid");
                        img.save(args.out.join(&name))?;
                        index.push_str(&format!("{name} {d}\n"));
                    }
                    fs::write(args.out.join("delays.txt"), index)?;
                }
                ReconMethod::Deconv => {
                    let path = args
                        .sos
                        .as_ref()
                        .ok_or_else(|| Error::Config("`recon deconv` needs --sos".into()))?;
                    let sos = RasterGrid::load(path)?;
                    if !sos.spec.same_shape(&grid) {
                        return Err(Error::Config("SOS raster does not match the configured grid".into()));
                    }
                    echo_config(&cfg, &parent_dir(&args.out))?;
                    let problem = JointProblem::new(&sig, cfg.train_config()?)?;
                    problem.deconvolve(&sos)?.save(&args.out)?;
                }
                ReconMethod::Nf => unreachable!("handled above"),
            }
            println!("wrote {}", args.out.display());
        }
        Command::Train { args } => return run_nf(&cfg, &args.signals, &args.out),
        Command::Psf {
            what:
                PsfCommand::Dump {
                    sos,
                    x,
                    y,
                    delay,
                    out,
                    wavefront,
                },
        } => {
            let sos = RasterGrid::load(sos)?;
            echo_config(&cfg, &parent_dir(out))?;
            let mask = cfg.mask()?;
            let profile = wavefront_profile(
                [*x, *y],
                &cfg.geometry()?,
                &sos,
                cfg.background()?,
                &mask,
                cfg.n_angles,
                cfg.ray_step,
                false,
            )?;
            let size = (cfg.patch_size / sos.spec.pitch).round() as usize;
            let d = delay.unwrap_or(cfg.delay);
            let h = transfer_stack(&profile, &[d], size, sos.spec.pitch);
            psf_from_transfer(&h.spectra[0], size, sos.spec.pitch)?.save(out)?;
            if let Some(path) = wavefront {
                let mut text = String::from("# theta_rad w_mm\n");
                for (t, w) in profile.angles.iter().zip(&profile.w) {
                    text.push_str(&format!("{t:.9} {w:.9e}\n"));
                }
                fs::write(path, text)?;
            }
            for (order, a, b) in wavefront_fourier_modes(&profile, 3)? {
                println!("mode {order}: cos {a:.6e} sin {b:.6e}");
            }
            println!("wrote {}", out.display());
        }
        Command::Eval {
            signals,
            truth,
            reference,
            methods,
            out,
            ..
        } => {
            let sig = SignalSet::load(signals)?;
            check_signals(&sig, &cfg)?;
            let (ph, _) = load_phantom(truth)?;
            let grid = cfg.grid()?;
            if !ph.sos.spec.same_shape(&grid) {
                return Err(Error::Config("truth rasters do not match the configured grid".into()));
            }
            echo_config(&cfg, out)?;
            let image = match reference {
                Some(p) => RasterGrid::load(p)?,
                None => aberration_free_reference(&ph, &cfg)?,
            };
            let truth = BenchmarkTruth {
                image,
                sos: ph.sos.clone(),
                mask: cfg.mask()?,
            };
            let bench = BenchmarkConfig {
                das_v0: cfg.das_v0()?,
                body: cfg.body()?,
                train: cfg.train_config()?,
            };
            let names: Vec<&str> = methods.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
            let outputs = benchmark(&sig, &truth, &names, &bench)?;
            let mut table = EvalReport::table_header();
            table.push('\n');
            for o in &outputs {
                table.push_str(&o.report.table_row());
                table.push('\n');
                o.image.save(out.join(format!("{}.pgrid", o.report.method)))?;
                if let Some(s) = &o.sos {
                    s.save(out.join(format!("{}_sos.pgrid", o.report.method)))?;
                }
            }
            print!("{table}");
            fs::write(out.join("report.txt"), table)?;
        }
    }
    Ok(())
}

/// DAS image of the truth pressure simulated through uniform background SOS.
fn aberration_free_reference(ph: &Phantom, cfg: &RunConfig) -> Result<RasterGrid> {
    let uniform = Phantom {
        pressure: ph.pressure.clone(),
        sos: RasterGrid::filled(ph.sos.spec, ph.background_sos),
        mask: CircularMask::new(ph.mask.center, ph.mask.radius)?,
        background_sos: ph.background_sos,
    };
    let sig = simulate_signals(&uniform, &cfg.geometry()?, &cfg.sim_config())?;
    das(&sig, cfg.grid()?, ph.background_sos, 0.0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Numerical { .. } => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}
