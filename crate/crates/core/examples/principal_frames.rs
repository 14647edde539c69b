//! Principal curvatures on a cylinder: k_max should be 1/r around the
//! circumference and k_min about 0 along the axis.

use amlconv::curvature::estimate_frames;
use amlconv::synth::cylinder;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let r = 2.0;
    let mesh = cylinder(r, 6.0, 48, 24, false)?;
    let f = estimate_frames(&mesh)?;

    // interior ring, away from the open ends
    let interior: Vec<usize> = (0..mesh.vertex_count()).filter(|&v| (mesh.vertices()[v].z - 3.0).abs() < 1.0).collect();
    let mean = |xs: &[f64]| interior.iter().map(|&v| xs[v]).sum::<f64>() / interior.len() as f64;
    println!("interior vertices  {}", interior.len());
    println!("mean |k_max|       {:.4}  (1/r = {:.4})", mean(&f.k_max.iter().map(|k| k.abs()).collect::<Vec<_>>()), 1.0 / r);
    println!("mean |k_min|       {:.4}", mean(&f.k_min.iter().map(|k| k.abs()).collect::<Vec<_>>()));
    let axial = interior.iter().map(|&v| f.dir_max[v].z.abs()).fold(0.0, f64::max);
    println!("max |dir_max . z|  {axial:.2e}  (curvature direction is circumferential)");
    println!("umbilic vertices   {}", f.umbilic.iter().filter(|&&u| u).count());
    Ok(())
}
