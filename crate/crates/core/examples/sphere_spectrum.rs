//! Smallest eigenvalues of the unit-sphere LBO against l(l+1).

use std::time::Instant;

use amlconv::operators::assemble_lbo;
use amlconv::spectrum::solve_eigs;
use amlconv::synth::icosphere;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = icosphere(4)?;
    let ops = assemble_lbo(&mesh)?;
    let t = Instant::now();
    let spec = solve_eigs(&ops, 25)?;
    println!("n = {}, k = {}, solved in {:.2?}", spec.n(), spec.k(), t.elapsed());

    let mut i = 0;
    for l in 0..5usize {
        let exact = (l * (l + 1)) as f64;
        let group = &spec.eigenvalues[i..i + 2 * l + 1];
        let worst = group.iter().map(|x| (x - exact).abs() / exact.max(1.0)).fold(0.0, f64::max);
        println!("l = {l}: {} values, exact {exact:>4}, worst relative error {worst:.2e}", group.len());
        i += 2 * l + 1;
    }
    let res = spec.residuals(&ops).into_iter().fold(0.0, f64::max);
    println!("max residual {res:.2e}, orthonormality error {:.2e}", spec.orthonormality_error());
    Ok(())
}
