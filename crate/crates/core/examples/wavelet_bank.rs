//! Build a four-direction Mexican-hat filter bank, check the tight frame
//! and write one wavelet per scale as CSV.
//!
//! cargo run --release --example wavelet_bank -- [out_dir]

use std::fmt::Write as _;
use std::path::PathBuf;

use amlconv::curvature::estimate_frames;
use amlconv::operators::assemble_direction_set;
use amlconv::spectrum::solve_eigs;
use amlconv::synth::{gen_base, BaseKind};
use amlconv::wavelets::{build_filterbank, KernelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "wavelets".into()));
    std::fs::create_dir_all(&out)?;

    let mesh = gen_base(BaseKind::Rod(12))?;
    let frames = estimate_frames(&mesh)?;
    let spectra = assemble_direction_set(&mesh, &frames, 50.0, 4)?
        .iter()
        .map(|op| solve_eigs(op, 120))
        .collect::<Result<Vec<_>, _>>()?;
    let bank = build_filterbank(spectra, KernelSpec::default(), true)?;

    for m in 0..bank.directions() {
        let (raw, tight) = (bank.raw_frame_bounds()[m], bank.frame_bounds()[m]);
        println!(
            "direction {m}: scales {:?}  raw frame [{:.3}, {:.3}]  tightened [{:.12}, {:.12}]",
            bank.scales(m).iter().map(|t| format!("{t:.4}")).collect::<Vec<_>>(),
            raw.0,
            raw.1,
            tight.0,
            tight.1
        );
    }

    // a signal in the span survives analysis + synthesis
    let f: Vec<f64> = bank.spectrum(0).eigenvectors.column(7).iter().copied().collect();
    let back = bank.synthesize(&bank.analyze(&f)?, 0)?;
    let err = f.iter().zip(back.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    println!("reconstruction error {err:.2e}");

    let v = mesh.vertex_count() / 2;
    for j in 0..bank.scale_count() {
        let w = bank.wavelet_at(0, j, v)?;
        let mut s = String::from("vertex,value\n");
        for (i, x) in w.iter().enumerate() {
            writeln!(s, "{i},{x}")?;
        }
        std::fs::write(out.join(format!("wavelet_v{v}_j{j}.csv")), s)?;
    }
    println!("wrote {} wavelet CSVs to {}", bank.scale_count(), out.display());
    Ok(())
}
