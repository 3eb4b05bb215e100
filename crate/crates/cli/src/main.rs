//! `crd`: train, evaluate and inspect causal-representation UAV agents, and
//! poke at the depth images they see.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crd_core::checkpoint::tensor_shape;
use crd_core::{
    run_suite, ActionMode, AgentController, Container, CoreError, EntryKind, RunConfig, SuiteConfig, Trainer,
};
use crd_vision::{
    amplitude_perturb_raw, apply_random, contrast_stretch, fft2, fft2_grid, load_pgm, max_phase_drift, motion_blur,
    random_noise, save_pgm, AugmentationKind, DepthImage, InterventionConfig,
};
use crd_world::{generate_scenario, render_depth, InitPattern, ScenarioSpec, SensorConfig, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "crd", version, about = "Causal-representation multi-UAV navigation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent from a TOML run config (defaults for missing keys).
    Train(TrainArgs),
    /// Evaluate a checkpoint over a scenario x init-pattern x swarm-size grid.
    Eval(EvalArgs),
    /// Apply one background intervention to a PGM depth image.
    Intervene(InterveneArgs),
    /// Render a depth image from a scenario at a given pose.
    Render(RenderArgs),
    /// Print the header, config echo and blocks of a checkpoint.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Run config; omitted means all defaults.
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    max_episodes: Option<usize>,
    #[arg(long)]
    num_uavs: Option<usize>,
    /// Continue from a checkpoint instead of starting fresh; the config
    /// argument is then ignored.
    #[arg(long, conflicts_with = "config")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    checkpoint: PathBuf,
    /// Suite config; without an `[episode]` table the checkpoint's episode
    /// settings are used.
    #[arg(long)]
    suite: Option<PathBuf>,
    /// Comma-separated swarm sizes, e.g. `6,8,10,12`.
    #[arg(long, value_delimiter = ',')]
    uavs: Option<Vec<usize>>,
    #[arg(long)]
    episodes_random: Option<usize>,
    #[arg(long)]
    episodes_circle: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sample actions instead of using the posterior mean.
    #[arg(long)]
    stochastic: bool,
    /// Directory for report.json, cells.csv and episodes.csv.
    #[arg(long, default_value = "eval")]
    out: PathBuf,
}

#[derive(Args)]
struct InterveneArgs {
    input: PathBuf,
    /// amplitude, noise, blur or contrast.
    #[arg(value_parser = parse_kind)]
    augmentation: AugmentationKind,
    output: PathBuf,
    /// Amplitude scale.
    #[arg(long)]
    lambda: Option<f64>,
    /// Noise standard deviation, meters.
    #[arg(long)]
    sigma: Option<f64>,
    /// Blur kernel length, pixels (odd).
    #[arg(long)]
    kernel: Option<usize>,
    /// Blur direction, radians.
    #[arg(long)]
    angle: Option<f64>,
    /// Contrast factor.
    #[arg(long)]
    factor: Option<f64>,
    /// Draws unspecified parameters and the noise.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Range used when the PGM carries none.
    #[arg(long, default_value_t = 20.0)]
    max_range: f64,
}

#[derive(Args)]
struct RenderArgs {
    /// Domain name (playground, grassland, snow_mountain, forest), `empty`,
    /// or a scenario JSON file.
    scenario: String,
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `x,y,z,yaw`
    #[arg(long, value_parser = parse_pose, default_value = "0,0,2,0")]
    pose: [f64; 4],
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 90.0)]
    hfov: f64,
    #[arg(long, default_value_t = 20.0)]
    max_range: f64,
    #[arg(long)]
    no_obstacles: bool,
}

#[derive(Args)]
struct InspectArgs {
    checkpoint: PathBuf,
}

fn parse_kind(s: &str) -> Result<AugmentationKind, String> {
    s.parse().map_err(|e: crd_vision::VisionError| e.to_string())
}

fn parse_pose(s: &str) -> Result<[f64; 4], String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| format!("`{t}`: {e}")))
        .collect::<Result<_, _>>()?;
    v.try_into().map_err(|v: Vec<f64>| format!("pose needs x,y,z,yaw, got {} values", v.len()))
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<CoreError> for Failure {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<crd_vision::VisionError> for Failure {
    fn from(e: crd_vision::VisionError) -> Self {
        match e {
            crd_vision::VisionError::Parameter(_) | crd_vision::VisionError::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

impl From<crd_world::WorldError> for Failure {
    fn from(e: crd_world::WorldError) -> Self {
        match e {
            crd_world::WorldError::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Intervene(a) => intervene(a),
        Command::Render(a) => render(a),
        Command::Inspect(a) => inspect(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

fn train(a: TrainArgs) -> Result<(), Failure> {
    let mut trainer = match &a.resume {
        Some(path) => {
            if a.seed.is_some() || a.num_uavs.is_some() {
                return Err(Failure::Usage("--seed and --num-uavs cannot change a resumed run".into()));
            }
            let mut t = Trainer::load(path)?;
            if let Some(d) = &a.output_dir {
                t.cfg.output_dir = d.clone();
            }
            if let Some(n) = a.max_episodes {
                t.cfg.train.max_episodes = n;
            }
            t
        }
        None => {
            let mut cfg = match &a.config {
                Some(path) => RunConfig::load(path)?,
                None => RunConfig::default(),
            };
            if let Some(s) = a.seed {
                cfg.seed = s;
            }
            if let Some(d) = &a.output_dir {
                cfg.output_dir = d.clone();
            }
            if let Some(n) = a.max_episodes {
                cfg.train.max_episodes = n;
            }
            if let Some(n) = a.num_uavs {
                cfg.train.num_uavs = n;
            }
            Trainer::new(cfg)?
        }
    };
    println!(
        "training seed {} for {} episodes into {}",
        trainer.cfg.seed,
        trainer.cfg.train.max_episodes,
        trainer.cfg.output_dir.display()
    );
    let log = trainer.train()?;
    if let Some(r) = log.records.last() {
        println!(
            "episode {}: return {:.2}, successes {}, collisions {}, updates {}",
            r.episode,
            r.return_mean,
            r.successes,
            r.collisions,
            log.total_updates()
        );
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), Failure> {
    let trainer = Trainer::load(&a.checkpoint)?;
    let mut suite = match &a.suite {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
            let table: toml::Table = text.parse().map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            let has_episode = table.contains_key("episode");
            let mut suite: SuiteConfig =
                table.try_into().map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            if !has_episode {
                suite.episode = trainer.cfg.episode_config();
            }
            suite
        }
        None => SuiteConfig {
            episode: trainer.cfg.episode_config(),
            ..SuiteConfig::default()
        },
    };
    if let Some(u) = a.uavs {
        suite.uav_counts = u;
    }
    if let Some(n) = a.episodes_random {
        suite.episodes_random = n;
    }
    if let Some(n) = a.episodes_circle {
        suite.episodes_circle = n;
    }
    let s = suite.episode.sensor;
    if (s.height, s.width) != (trainer.agent.spec.height, trainer.agent.spec.width) {
        return Err(Failure::Usage(format!(
            "suite sensor is {}x{} but the checkpoint encoder expects {}x{}",
            s.height, s.width, trainer.agent.spec.height, trainer.agent.spec.width
        )));
    }
    let mode = if a.stochastic {
        ActionMode::Stochastic
    } else {
        ActionMode::Deterministic
    };
    let mut controller = AgentController {
        agent: &trainer.agent,
        mode,
    };
    let report = run_suite(&mut controller, &suite, a.seed)?;

    fs::create_dir_all(&a.out).map_err(runtime)?;
    fs::write(a.out.join("report.json"), report.to_json()?).map_err(runtime)?;
    report.write_cells_csv(BufWriter::new(File::create(a.out.join("cells.csv")).map_err(runtime)?))?;
    report.write_episodes_csv(BufWriter::new(File::create(a.out.join("episodes.csv")).map_err(runtime)?))?;

    println!(
        "{:<16} {:<7} {:>5} {:>8} {:>8} {:>14} {:>14}",
        "scenario", "init", "uavs", "SR %", "SPL %", "extra dist m", "speed m/s"
    );
    for c in &report.cells {
        println!(
            "{:<16} {:<7} {:>5} {:>8.1} {:>8.1} {:>6.2} ± {:<5.2} {:>6.2} ± {:<5.2}",
            c.scenario,
            pattern_name(c.init_pattern),
            c.num_uavs,
            c.success_rate,
            c.spl,
            c.extra_distance.mean,
            c.extra_distance.std,
            c.average_speed.mean,
            c.average_speed.std
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn pattern_name(p: InitPattern) -> &'static str {
    match p {
        InitPattern::Random => "random",
        InitPattern::Circle => "circle",
    }
}

fn intervene(a: InterveneArgs) -> Result<(), Failure> {
    let image = load_pgm(&a.input, a.max_range)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let defaults = InterventionConfig::default();
    let out = match a.augmentation {
        AugmentationKind::Amplitude => match a.lambda {
            Some(l) => amplitude(&image, l)?,
            None => apply_random(a.augmentation, &image, &defaults, &mut rng)?,
        },
        AugmentationKind::Noise => random_noise(&image, a.sigma.unwrap_or(defaults.noise_sigma), &mut rng)?,
        AugmentationKind::Blur => {
            let len = a.kernel.unwrap_or(defaults.blur_kernel_length);
            match a.angle {
                Some(angle) => motion_blur(&image, len, angle)?,
                None => crd_vision::random_motion_blur(&image, len, &mut rng)?,
            }
        }
        AugmentationKind::Contrast => match a.factor {
            Some(f) => contrast_stretch(&image, f)?,
            None => apply_random(a.augmentation, &image, &defaults, &mut rng)?,
        },
    };
    save_pgm(&out, &a.output)?;
    println!("wrote {} ({}x{})", a.output.display(), out.height(), out.width());
    Ok(())
}

/// Amplitude scaling with the phase check printed.
fn amplitude(image: &DepthImage, lambda: f64) -> Result<DepthImage, Failure> {
    let (h, w) = (image.height(), image.width());
    let p = amplitude_perturb_raw(h, w, image.data(), lambda)?;
    let before = fft2(image)?;
    let after = fft2_grid(h, w, &p.raw)?;
    let floor = 1e-9 * before.amplitude.iter().cloned().fold(0.0, f64::max);
    println!("lambda {lambda}");
    println!("max phase drift {:.3e} rad", max_phase_drift(&before, &after, floor));
    println!("imaginary residue {:.3e}", p.imag_residue);
    Ok(DepthImage::from_clamped(h, w, image.max_range(), &p.raw)?)
}

fn load_scenario(name: &str, seed: u64) -> Result<ScenarioSpec, Failure> {
    if name == "empty" {
        return Ok(ScenarioSpec::empty());
    }
    if Path::new(name).extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(name).map_err(|e| Failure::Usage(format!("cannot read {name}: {e}")))?;
        return serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("{name}: {e}")));
    }
    Ok(generate_scenario(name, seed)?)
}

fn render(a: RenderArgs) -> Result<(), Failure> {
    let mut spec = load_scenario(&a.scenario, a.seed)?;
    if a.no_obstacles {
        spec.obstacles.clear();
    }
    let sensor = SensorConfig {
        height: a.height,
        width: a.width,
        hfov_deg: a.hfov,
        max_range: a.max_range,
    };
    let p = &a.pose;
    let img = render_depth(&spec, &sensor, Vec3::new(p[0], p[1], p[2]), p[3], &[], 0.0)?;
    save_pgm(&img, &a.output)?;
    let near = img.data().iter().filter(|&&d| d < a.max_range).count();
    println!(
        "wrote {} ({}x{}), {near} pixels closer than {} m",
        a.output.display(),
        img.height(),
        img.width(),
        a.max_range
    );
    Ok(())
}

fn inspect(a: InspectArgs) -> Result<(), Failure> {
    let bytes = fs::read(&a.checkpoint).map_err(|e| Failure::Runtime(format!("{}: {e}", a.checkpoint.display())))?;
    let info = Container::inspect(&bytes)?;
    println!("file      {}", a.checkpoint.display());
    println!("version   {}", info.version);
    println!("checksum  {}", if info.checksum_ok { "ok" } else { "MISMATCH" });
    if let Some(p) = &info.problem {
        println!("problem   {p}");
    }
    if let Some(c) = &info.container {
        match RunConfig::from_toml(&c.config) {
            Ok(cfg) => println!("layout    {}", cfg.latent.layout()),
            Err(e) => println!("layout    unreadable config echo: {e}"),
        }
        println!("entries   {}", c.entries.len());
        for e in &c.entries {
            let detail = match e.kind {
                EntryKind::Tensor => tensor_shape(&e.data)
                    .map(|s| format!("{s:?}"))
                    .unwrap_or_else(|err| format!("bad tensor: {err}")),
                _ => format!("{} bytes", e.data.len()),
            };
            println!("  {:<40} {:<6} {detail}", e.name, e.kind.name());
        }
        println!("--- config echo ---");
        print!("{}", c.config);
    }
    if info.checksum_ok && info.problem.is_none() {
        Ok(())
    } else {
        Err(Failure::Runtime("checkpoint is damaged".into()))
    }
}
