//! Analytic adapter gradients against central finite differences.

use adapter_inversion::{Model, ModelConfig};

fn main() -> adapter_inversion::Result<()> {
    let model = Model::new(ModelConfig {
        vocab_size: 30,
        d_hidden: 16,
        ..ModelConfig::default()
    })?;
    let batch = vec![vec![3, 7, 11, 0], vec![9, 2, 0]];
    let labels = vec![1, 0];
    let grads = model.gradients(&batch, &labels)?;
    let analytic: Vec<Vec<f64>> = grads
        .embedding_adapter
        .tensors()
        .into_iter()
        .chain(grads.layer_adapter.tensors())
        .map(|(_, _, d)| d.to_vec())
        .collect();

    let h = 1e-5;
    let mut worst = 0.0f64;
    let tensor_count = analytic.len();
    for t in 0..tensor_count {
        for i in (0..analytic[t].len()).step_by(7) {
            let eval = |delta: f64| -> adapter_inversion::Result<f64> {
                let mut m = model.clone();
                let half = tensor_count / 2;
                let mut params = if t < half {
                    m.embedding_adapter_mut().params_mut()
                } else {
                    m.layer_adapter_mut().params_mut()
                };
                params[t % half][i] += delta;
                m.loss(&batch, &labels)
            };
            let numeric = (eval(h)? - eval(-h)?) / (2.0 * h);
            worst = worst.max((numeric - analytic[t][i]).abs());
        }
    }
    println!("max |analytic - numeric| = {worst:.3e}");
    Ok(())
}
