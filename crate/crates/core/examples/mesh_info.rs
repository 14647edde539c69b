//! Load a mesh (or generate an icosphere) and print its basic measures.
//!
//! cargo run --example mesh_info -- path/to/shape.off

use amlconv::mesh::load_mesh_auto;
use amlconv::synth::icosphere;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = match std::env::args().nth(1) {
        Some(p) => load_mesh_auto(p.as_ref())?,
        None => icosphere(3)?,
    };
    println!("vertices        {}", mesh.vertex_count());
    println!("faces           {}", mesh.face_count());
    println!("edges           {}", mesh.edge_count());
    println!("boundary edges  {}", mesh.boundary_edge_count());
    println!("euler           {}", mesh.euler_characteristic());
    println!("area            {:.6}", mesh.total_area());
    println!("bbox diagonal   {:.6}", mesh.bbox_diagonal());
    println!("max edge        {:.6}", mesh.max_edge_length());
    let mass = mesh.mass();
    let (lo, hi) = mass.iter().fold((f64::MAX, 0.0f64), |(a, b), &m| (a.min(m), b.max(m)));
    println!("vertex mass     {lo:.3e} .. {hi:.3e}");
    Ok(())
}
