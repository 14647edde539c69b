//! Forward pass of the multi-scale convolution network on one shape, and a
//! finite-difference check of a few gradient entries.

use amlconv::curvature::estimate_frames;
use amlconv::network::{coordinate_features, forward, loss_and_grads, loss_ce, Model, ModelConfig};
use amlconv::operators::assemble_direction_set;
use amlconv::spectrum::solve_eigs;
use amlconv::synth::{deform, icosphere, DeformMode};
use amlconv::wavelets::{build_filterbank, KernelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mesh = deform(&icosphere(2)?, DeformMode::Twist, 0.4)?;
    let n = mesh.vertex_count();
    let frames = estimate_frames(&mesh)?;
    let spectra = assemble_direction_set(&mesh, &frames, 50.0, 4)?
        .iter()
        .map(|op| solve_eigs(op, 60))
        .collect::<Result<Vec<_>, _>>()?;
    let bank = build_filterbank(spectra, KernelSpec { span: 8.0, ..KernelSpec::default() }, false)?;

    let cfg = ModelConfig { hidden: 16, width: 24, ..ModelConfig::new(n, n, true) };
    let mut model = Model::new(cfg, 11);
    println!("{} filters, {} parameters", bank.filter_count(), model.parameter_count());

    let x = coordinate_features(mesh.vertices());
    let labels: Vec<usize> = (0..n).collect();
    let pass = forward(&model, &x, &bank)?;
    println!("descriptors {}x{}, logits {}x{}", pass.descriptors.nrows(), pass.descriptors.ncols(), pass.logits.nrows(), pass.logits.ncols());

    let (loss, _, grads) = loss_and_grads(&model, &x, &labels, &bank)?;
    println!("loss {loss:.6} (uniform would be ln n = {:.6})", (n as f64).ln());

    let names: Vec<String> = model.tensors().into_iter().map(|(s, _)| s).collect();
    let h = 1e-6;
    for t in [0, names.len() / 2, names.len() - 2] {
        let (i, j) = (0, 0);
        let orig = model.tensors_mut()[t][(i, j)];
        let eval = |v: f64, model: &mut Model| {
            model.tensors_mut()[t][(i, j)] = v;
            let l = loss_ce(&forward(model, &x, &bank).unwrap().logits, &labels).unwrap().0;
            model.tensors_mut()[t][(i, j)] = orig;
            l
        };
        let fd = (eval(orig + h, &mut model) - eval(orig - h, &mut model)) / (2.0 * h);
        println!("{:<24} analytic {:+.8e}  central difference {:+.8e}", names[t], grads[t][(i, j)], fd);
    }
    Ok(())
}
