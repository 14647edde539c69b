//! Train on four deformations of a round bar and match the template to a
//! held-out twist, reporting the average geodesic error after each epoch.
//!
//! cargo run --release --example train_correspondence -- [epochs]

use std::time::Instant;

use amlconv::corresp::{default_radii, evaluate_with, match_nn, DistanceTable};
use amlconv::curvature::estimate_frames;
use amlconv::mesh::TriMesh;
use amlconv::network::{coordinate_features, descriptors, train_model, AdamConfig, Model, ModelConfig, TrainConfig, TrainItem};
use amlconv::operators::assemble_direction_set;
use amlconv::spectrum::solve_eigs;
use amlconv::synth::{make_dataset, BaseKind, DatasetConfig, DeformMode, Deformation};
use amlconv::wavelets::{build_filterbank, FilterBank, KernelSpec};

fn bank(mesh: &TriMesh) -> Result<FilterBank, Box<dyn std::error::Error>> {
    let frames = estimate_frames(mesh)?;
    // alpha = 10: at 16 segments around, alpha = 50 modes are under-resolved
    let spectra = assemble_direction_set(mesh, &frames, 10.0, 4)?
        .iter()
        .map(|op| solve_eigs(op, 100))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(build_filterbank(spectra, KernelSpec::default(), false)?)
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(30), |s| s.parse())?;
    let t0 = Instant::now();
    let d = |mode, magnitude| Deformation { mode, magnitude };
    let ds = make_dataset(&DatasetConfig {
        base: BaseKind::Rod(16),
        deformations: vec![
            d(DeformMode::Bend, 0.5),
            d(DeformMode::Bend, 1.5),
            d(DeformMode::Twist, 0.1),
            d(DeformMode::Twist, 0.5),
            d(DeformMode::Twist, 0.3),
        ],
        train_count: 4,
        seed: 0,
        held_out: vec![4],
        remeshed_pairs: false,
    })?;
    let n = ds.template.vertex_count();
    let banks = ds.train.iter().map(|t| bank(&t.mesh)).collect::<Result<Vec<_>, _>>()?;
    let coords: Vec<_> = ds.train.iter().map(|t| coordinate_features(t.mesh.vertices())).collect();
    let items: Vec<TrainItem> = ds
        .train
        .iter()
        .zip(&coords)
        .zip(&banks)
        .map(|((t, c), b)| TrainItem { coords: c, labels: &t.labels, bank: b })
        .collect();

    let pair = &ds.test_pairs[0];
    let (src_bank, tgt_bank) = (bank(&pair.pair.source)?, bank(&pair.pair.target)?);
    let (sx, tx) = (coordinate_features(pair.pair.source.vertices()), coordinate_features(pair.pair.target.vertices()));
    let mut table = DistanceTable::new(&pair.pair.target);
    println!("{n} vertices, spectra ready in {:.1?}; evaluating on {}", t0.elapsed(), pair.target_name);

    let mut model = Model::new(ModelConfig { hidden: 32, width: 32, ..ModelConfig::new(n, n, true) }, 1);
    let cfg = TrainConfig { epochs, adam: AdamConfig::default(), seed: 1 };
    train_model(&mut model, &items, &cfg, |r, model| {
        let map = descriptors(model, &sx, &src_bank).and_then(|a| Ok((a, descriptors(model, &tx, &tgt_bank)?)));
        let Ok((a, b)) = map else { return false };
        let res = match_nn(&a, &b).and_then(|m| evaluate_with(&m, &pair.pair.gt_map, &mut table, &default_radii()));
        if let Ok(res) = res {
            println!(
                "epoch {:>3}  loss {:.4}  train acc {:.3}  AGE x100 {:.3}  CGE(0.05) {:.3}",
                r.epoch, r.loss, r.accuracy, res.age_x100, res.cge[20].1
            );
        }
        true
    })?;
    println!("done in {:.1?}", t0.elapsed());
    Ok(())
}
