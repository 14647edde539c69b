use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use amlconv::config::{ExperimentConfig, Overrides, Radii};
use amlconv::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "amlconv", version, about = "Anisotropic mesh wavelets and dense shape correspondence")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Eigenpairs per operator.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    directions: Option<usize>,
    #[arg(long, global = true)]
    scales: Option<usize>,
    /// Enable the perturbation layer (`--perturb=false` disables it).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    perturb: Option<bool>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Evaluation radii as start:stop:step.
    #[arg(long, global = true)]
    radii: Option<Radii>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve and cache spectra (all dataset meshes if none are given).
    Spectrum { meshes: Vec<PathBuf> },
    /// Write principal curvature frames as CSV.
    Frames { mesh: PathBuf },
    /// Generate the synthetic dataset described by the config.
    GenData,
    /// Train on the dataset's training meshes.
    Train,
    /// Evaluate a checkpoint on the dataset's pairs.
    Eval,
    /// Write one wavelet as a vertex,value CSV.
    WaveletDump {
        mesh: PathBuf,
        #[arg(long)]
        vertex: usize,
        #[arg(long, default_value_t = 0)]
        direction: usize,
        #[arg(long, default_value_t = 0)]
        scale: usize,
    },
    /// Validate a mesh and print its measures.
    MeshInfo { mesh: PathBuf },
}

fn load_config(c: &Common) -> Result<ExperimentConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.apply(&Overrides {
        seed: c.seed,
        out: c.out.clone(),
        k: c.k,
        alpha: c.alpha,
        directions: c.directions,
        scales: c.scales,
        perturb: c.perturb,
        epochs: c.epochs,
        radii: c.radii,
    })?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Command::MeshInfo { mesh } = &cli.command {
        let info = pipeline::cmd_mesh_info(mesh)?;
        println!("{}", serde_json::to_string_pretty(&info).expect("mesh info serializes"));
        return Ok(());
    }
    let cfg = load_config(&cli.common)?;
    match cli.command {
        Command::Spectrum { meshes } => {
            for r in pipeline::cmd_spectrum(&cfg, &meshes)? {
                println!("{}\t{}\t{:?}\t{}", r.mesh.display(), r.direction, r.status, r.path.display());
            }
        }
        Command::Frames { mesh } => println!("{}", pipeline::cmd_frames(&cfg, &mesh)?.display()),
        Command::GenData => println!("{}", pipeline::cmd_gen_data(&cfg)?.display()),
        Command::Train => {
            let t = pipeline::cmd_train(&cfg)?;
            if let Some(r) = t.history.last() {
                println!("epoch {} loss {:.6} accuracy {:.4}", r.epoch, r.loss, r.accuracy);
            }
            println!("{}", t.checkpoint.display());
        }
        Command::Eval => {
            let e = pipeline::cmd_eval(&cfg)?;
            for p in &e.pairs {
                println!("{} -> {}\tAGE x100 {:.4}", p.source, p.target, p.age_x100);
            }
            println!("mean AGE x100 {:.4}", e.mean_age_x100);
        }
        Command::WaveletDump { mesh, vertex, direction, scale } => {
            println!("{}", pipeline::cmd_wavelet_dump(&cfg, &mesh, vertex, direction, scale)?.display())
        }
        Command::MeshInfo { .. } => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
