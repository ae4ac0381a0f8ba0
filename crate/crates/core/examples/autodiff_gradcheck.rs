//! Differentiates a small two-layer network with the tape and compares the
//! result against central finite differences.
//!
//! `cargo run --example autodiff_gradcheck`

use dgppo::diffmath::{check_gradients, grad, orthogonal_init, GradCheckConfig, ParamSet, Tensor};
use rand::SeedableRng;

fn main() -> dgppo::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let mut params: ParamSet<f64> = ParamSet::new();
    params.insert("w1", orthogonal_init(3, 8, 2f64.sqrt(), &mut rng));
    params.insert("b1", Tensor::vector(vec![0.05; 8]));
    params.insert("w2", orthogonal_init(8, 1, 1.0, &mut rng));
    let x = Tensor::new(vec![4, 3], vec![0.2, -0.4, 1.0, 0.7, 0.1, -0.3, -1.2, 0.5, 0.9, 0.0, 0.3, -0.6])?;
    let y = Tensor::new(vec![4, 1], vec![1.0, -0.5, 0.25, 0.0])?;

    let loss = |t: &mut dgppo::diffmath::Tape<f64>, p: &dgppo::diffmath::ParamVars| {
        let xv = t.constant(x.clone());
        let h = t.matmul(xv, p.get("w1"));
        let h = t.add_row(h, p.get("b1"));
        let h = t.tanh(h);
        let out = t.matmul(h, p.get("w2"));
        let target = t.constant(y.clone());
        let d = t.sub(out, target);
        let d = t.square(d);
        Ok(t.mean_all(d))
    };

    let (value, grads) = grad(&params, loss)?;
    println!("loss {value:.6}");
    for (name, g) in grads.iter() {
        println!("  d/d{name}: |g| = {:.6}", g.data().iter().map(|v| v * v).sum::<f64>().sqrt());
    }
    let report = check_gradients(&params, loss, &GradCheckConfig::default())?;
    println!(
        "finite differences: {} coordinates, max relative error {:.2e} ({})",
        report.checked,
        report.max_rel_err,
        if report.passes(1e-3) { "ok" } else { "FAILED" }
    );
    Ok(())
}
