//! The file-based workflow behind the binary: gen-data, spectrum, train,
//! eval, wavelet-dump, all in one directory.
//!
//! cargo run --release --example cli_pipeline -- [work_dir]

use std::path::PathBuf;

use amlconv::config::ExperimentConfig;
use amlconv::pipeline;
use amlconv::synth::{BaseKind, DatasetConfig, DeformMode, Deformation};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let work = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "pipeline_run".into()));
    let d = |mode, magnitude| Deformation { mode, magnitude };
    let base = ExperimentConfig {
        cache: work.join("cache"),
        k: 60,
        span: 8.0,
        hidden: 16,
        width: 16,
        epochs: Some(5),
        ..ExperimentConfig::default()
    };

    let gen = ExperimentConfig {
        out: work.join("data"),
        generate: Some(DatasetConfig {
            base: BaseKind::Icosphere(2),
            deformations: vec![d(DeformMode::Twist, 0.2), d(DeformMode::Twist, 0.6), d(DeformMode::Twist, 0.4)],
            train_count: 2,
            seed: 0,
            held_out: vec![2],
            remeshed_pairs: true,
        }),
        ..base.clone()
    };
    let manifest = pipeline::cmd_gen_data(&gen)?;
    println!("dataset   {}", manifest.display());

    let cfg = ExperimentConfig { dataset: Some(manifest), out: work.join("run"), ..base };
    let reports = pipeline::cmd_spectrum(&cfg, &[])?;
    println!("spectra   {} files", reports.len());
    let again = pipeline::cmd_spectrum(&cfg, &[])?;
    println!("rerun     {} of {} cached", again.iter().filter(|r| r.status == pipeline::CacheStatus::Cached).count(), again.len());

    let t = pipeline::cmd_train(&cfg)?;
    let last = t.history.last().expect("at least one epoch");
    println!("trained   {} epochs, loss {:.4}, checkpoint {}", last.epoch, last.loss, t.checkpoint.display());

    let e = pipeline::cmd_eval(&cfg)?;
    for p in &e.pairs {
        println!("eval      {} -> {}: AGE x100 {:.3}", p.source, p.target, p.age_x100);
    }

    let template = cfg.dataset.as_ref().unwrap().with_file_name("template.off");
    let dump = pipeline::cmd_wavelet_dump(&cfg, &template, 0, 1, 2)?;
    println!("wavelet   {}", dump.display());
    println!("info      {:?}", pipeline::cmd_mesh_info(&template)?);
    Ok(())
}
