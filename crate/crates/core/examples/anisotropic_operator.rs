//! Assemble the cotangent LBO and the anisotropic operators for four
//! directions; with alpha = 0 the anisotropic stiffness is the cotangent one.

use amlconv::curvature::estimate_frames;
use amlconv::operators::{assemble_albo, assemble_direction_set, assemble_lbo, AnisoConfig};
use amlconv::synth::{deform, icosphere, DeformMode};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = deform(&icosphere(3)?, DeformMode::Twist, 0.5)?;
    let frames = estimate_frames(&mesh)?;

    let lbo = assemble_lbo(&mesh)?;
    let iso = assemble_albo(&mesh, &frames, &AnisoConfig::ISOTROPIC)?;
    let diff = (lbo.stiffness.to_dense() - iso.stiffness.to_dense()).abs().max();
    println!("max |ALBO(alpha=0) - LBO| = {diff:.2e}");

    for op in assemble_direction_set(&mesh, &frames, 50.0, 4)? {
        println!(
            "alpha {:>4}  theta {:>6.3}  nnz {:>6}  max row sum {:.2e}  asymmetry {:.2e}",
            op.config.alpha,
            op.config.theta,
            op.stiffness.nnz(),
            op.max_row_sum(),
            op.stiffness.asymmetry()
        );
    }
    Ok(())
}
