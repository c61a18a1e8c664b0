//! Command-line front end.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use kinetune_analysis::{analyze_session, AnalysisOptions};
use kinetune_core::dsp::{mel_spectrogram_image, read_wav, write_wav, CLIP_SECONDS, SAMPLE_RATE};
use kinetune_core::engine::{run_offline, EngineConfig, OutputMode, SessionLog};
use kinetune_core::library::ClipLibrary;
use kinetune_core::neural::{coupled_bundle, WeightBundle, LATENT_DIM};
use kinetune_core::pose::{read_replay, window_at};
use kinetune_core::raster::rasterize;

use crate::error::{exit, Result, ServerError};
use crate::live::LiveOptions;
use crate::service::{serve, AppState, ServeOptions};

#[derive(Debug, Parser)]
#[command(name = "kinetune", version, about = "Movement-driven clip sequencing engine")]
struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode every WAV in a directory into library.json + latents.bin.
    BuildDb {
        /// Directory holding the clips; the manifest is written next to them.
        #[arg(long)]
        library: PathBuf,
        #[arg(long, env = "ENGINE_WEIGHTS")]
        weights: PathBuf,
    },
    /// Run the engine offline over a pose replay.
    Simulate {
        #[arg(long)]
        pose: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for session.log and render.wav.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, env = "ENGINE_LIBRARY")]
        library: Option<PathBuf>,
        #[arg(long, env = "ENGINE_WEIGHTS")]
        weights: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Start the HTTP/WebSocket service.
    Serve(ServeArgs),
    /// Run the statistics battery over a recorded session.
    Analyze {
        /// Session log (JSON Lines).
        log: PathBuf,
        #[arg(long)]
        library: PathBuf,
        /// Rendered audio of the session.
        #[arg(long)]
        audio: PathBuf,
        /// Output directory for report.json and report.txt; defaults to the log's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Look inside weights, libraries, pose windows and audio.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "ENGINE_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: std::net::IpAddr,
    #[arg(long, env = "ENGINE_LIBRARY")]
    library: Option<PathBuf>,
    #[arg(long, env = "ENGINE_WEIGHTS")]
    weights: Option<PathBuf>,
    /// Speed up wall-clock pacing (testing aid).
    #[arg(long, default_value_t = 1.0)]
    time_scale: f64,
    /// Directory for live session logs.
    #[arg(long)]
    session_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 256)]
    telemetry_capacity: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BundleKind {
    /// Seeded random weights: shape and flow checks only.
    Random,
    /// Hand-built weights whose latents track movement energy and spectral change.
    Coupled,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("target").required(true).args(["gen_random_weights", "weights", "library", "pose", "audio"])))]
struct InspectArgs {
    /// Write a generated weight bundle here and dry-run it.
    #[arg(long, value_name = "OUT")]
    gen_random_weights: Option<PathBuf>,
    #[arg(long, default_value_t = 0, requires = "gen_random_weights")]
    seed: u64,
    #[arg(long, value_enum, default_value_t = BundleKind::Random, requires = "gen_random_weights")]
    kind: BundleKind,
    /// Validate and dry-run a weight bundle.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// List a library's clips.
    #[arg(long)]
    library: Option<PathBuf>,
    /// Rasterize one window of a pose replay (needs --png).
    #[arg(long, requires = "png")]
    pose: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0, requires = "pose")]
    window_start_ms: f64,
    /// Render a WAV's encoder spectrogram (needs --png).
    #[arg(long, requires = "png")]
    audio: Option<PathBuf>,
    #[arg(long)]
    png: Option<PathBuf>,
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match dispatch(cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::BuildDb { library, weights } => {
            let bundle = WeightBundle::load(&weights)?;
            let lib = ClipLibrary::build(&library, &bundle)?;
            println!("encoded {} clips into {}", lib.len(), library.display());
            Ok(())
        }
        Command::Simulate {
            pose,
            config,
            out,
            library,
            weights,
            seed,
        } => simulate(&pose, config.as_deref(), &out, library, weights, seed),
        Command::Serve(args) => serve_cmd(args),
        Command::Analyze {
            log,
            library,
            audio,
            out,
            seed,
        } => analyze(&log, &library, &audio, out, seed),
        Command::Inspect(args) => inspect(args),
    }
}

fn load_config(path: Option<&Path>) -> Result<EngineConfig> {
    let cfg = match path {
        None => EngineConfig::default(),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| ServerError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| ServerError::Usage(format!("{}: {e}", p.display())))?
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Resolve paths in a config file relative to the file itself.
fn relative_to(config: Option<&Path>, p: PathBuf) -> PathBuf {
    match config.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p,
    }
}

fn load_engine(cfg: &EngineConfig) -> Result<(Arc<WeightBundle>, ClipLibrary)> {
    let bundle = WeightBundle::load(&cfg.weights)?;
    let lib = ClipLibrary::load_for(&cfg.library, &bundle)?;
    Ok((Arc::new(bundle), lib))
}

fn simulate(
    pose: &Path,
    config: Option<&Path>,
    out: &Path,
    library: Option<PathBuf>,
    weights: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.library = library.unwrap_or_else(|| relative_to(config, cfg.library.clone()));
    cfg.weights = weights.unwrap_or_else(|| relative_to(config, cfg.weights.clone()));
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (bundle, lib) = load_engine(&cfg)?;
    let frames = read_replay(pose)?;
    let run = run_offline(&frames, &cfg, bundle, Arc::new(lib))?;
    std::fs::create_dir_all(out).map_err(|e| ServerError::io(out, e))?;
    run.log.save(&out.join("session.log"))?;
    write_wav(&out.join("render.wav"), &run.audio, SAMPLE_RATE)?;
    let schedule = serde_json::to_string_pretty(&run.schedule)? + "\n";
    std::fs::write(out.join("schedule.json"), schedule).map_err(|e| ServerError::io(out.join("schedule.json"), e))?;
    println!(
        "{} steps, {:.1} s rendered into {}",
        run.log.events.len(),
        run.audio.len() as f64 / SAMPLE_RATE as f64,
        out.display()
    );
    Ok(())
}

fn serve_cmd(args: ServeArgs) -> Result<()> {
    let mut cfg = load_config(args.config.as_deref())?;
    cfg.library = args.library.unwrap_or_else(|| relative_to(args.config.as_deref(), cfg.library.clone()));
    cfg.weights = args.weights.unwrap_or_else(|| relative_to(args.config.as_deref(), cfg.weights.clone()));
    if let OutputMode::Wav { path } = &cfg.output {
        cfg.output = OutputMode::Wav {
            path: relative_to(args.config.as_deref(), path.clone()),
        };
    }
    if !(args.time_scale > 0.0 && args.time_scale.is_finite()) {
        return Err(ServerError::Usage(format!("--time-scale must be positive, got {}", args.time_scale)));
    }
    let (bundle, lib) = load_engine(&cfg)?;
    let opts = ServeOptions {
        live: LiveOptions {
            time_scale: args.time_scale,
        },
        telemetry_capacity: args.telemetry_capacity,
        session_dir: args.session_dir,
    };
    let state = AppState::new(cfg, bundle, lib, opts)?;
    let addr = SocketAddr::new(args.host, args.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| ServerError::Internal(e.to_string()))?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|source| ServerError::Bind { addr, source })?;
        let bound = listener.local_addr().map_err(|e| ServerError::Internal(e.to_string()))?;
        eprintln!("listening on http://{bound}");
        serve(listener, state, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
    })
}

fn analyze(log: &Path, library: &Path, audio: &Path, out: Option<PathBuf>, seed: u64) -> Result<()> {
    let session = SessionLog::load(log)?;
    let lib = ClipLibrary::load(library)?;
    let clip = read_wav(audio)?;
    if clip.sample_rate() != session.header.sample_rate {
        return Err(ServerError::Usage(format!(
            "render is {} Hz, session log says {} Hz",
            clip.sample_rate(),
            session.header.sample_rate
        )));
    }
    let opts = AnalysisOptions {
        seed,
        ..AnalysisOptions::default()
    };
    let report = analyze_session(&session, &lib, clip.samples(), &opts)?;
    let out = out.unwrap_or_else(|| log.parent().map(Path::to_path_buf).unwrap_or_default());
    std::fs::create_dir_all(&out).map_err(|e| ServerError::io(&out, e))?;
    report.save(&out.join("report.json"))?;
    let text = report.render_text();
    std::fs::write(out.join("report.txt"), &text).map_err(|e| ServerError::io(out.join("report.txt"), e))?;
    print!("{text}");
    Ok(())
}

fn describe_bundle(bundle: &WeightBundle) -> Result<()> {
    bundle.dry_run()?;
    for (name, enc) in [("audio encoder", bundle.audio_encoder()), ("movement encoder", bundle.movement_encoder())] {
        let [h, w, c] = enc.input_dims();
        println!("{name}: {h}x{w}x{c} -> {LATENT_DIM}");
    }
    println!("generator: ({LATENT_DIM}, {LATENT_DIM}) -> {LATENT_DIM}");
    let params: usize = bundle.tensors().values().map(|t| t.len()).sum();
    println!("{} tensors, {params} parameters", bundle.tensors().len());
    println!("content hash {}", bundle.content_hash());
    Ok(())
}

fn inspect(args: InspectArgs) -> Result<()> {
    if let Some(out) = args.gen_random_weights {
        let bundle = match args.kind {
            BundleKind::Random => WeightBundle::random(args.seed),
            BundleKind::Coupled => coupled_bundle(),
        };
        bundle.save(&out)?;
        // read back what was written, so the dry run covers the file format
        let loaded = WeightBundle::load(&out)?;
        describe_bundle(&loaded)?;
        println!("wrote {}", out.display());
        return Ok(());
    }
    if let Some(path) = args.weights {
        return describe_bundle(&WeightBundle::load(&path)?);
    }
    if let Some(dir) = args.library {
        let lib = ClipLibrary::load(&dir)?;
        println!("{} clips, weights {}", lib.len(), lib.weights_hash());
        for c in lib.clips() {
            println!("{:<32} {:>6.2} s  {:+.1} dB  {}", c.id, c.duration_s, c.gain_db, c.tags.join(","));
        }
        return Ok(());
    }
    let png = args.png.ok_or_else(|| ServerError::Usage("--png is required".into()))?;
    let file = |p: &Path| File::create(p).map(BufWriter::new).map_err(|e| ServerError::io(p, e));
    if let Some(pose) = args.pose {
        let frames = read_replay(&pose)?;
        let start = frames.first().map_or(0.0, |f| f.timestamp_ms as f64) + args.window_start_ms;
        let window = window_at(&frames, start, &EngineConfig::default().window())?;
        rasterize(&window)?.write_png(file(&png)?)?;
    } else if let Some(audio) = args.audio {
        let mut clip = read_wav(&audio)?;
        if clip.duration_s() > CLIP_SECONDS {
            clip = clip.center_crop(CLIP_SECONDS)?;
        }
        mel_spectrogram_image(&clip)?.write_png(file(&png)?)?;
    }
    println!("wrote {}", png.display());
    Ok(())
}
