//! Serializing a gradient update for transport and reading it back.

use adapter_inversion::fedsim::{deserialize_update, serialize_update};
use adapter_inversion::{GradientUpdate, Model, ModelConfig};

fn main() -> adapter_inversion::Result<()> {
    let model = Model::new(ModelConfig::default())?;
    let g = model.adapter_gradients(&[vec![1, 2, 3, 0]], &[1])?;
    let update = GradientUpdate {
        embedding_adapter: g.embedding_adapter,
        layer_adapter: g.layer_adapter,
        batch_size: 1,
        round_id: 42,
    };
    let bytes = serialize_update(&update);
    println!("{} bytes on the wire", bytes.len());
    let back = deserialize_update(&bytes)?;
    assert_eq!(back, update);
    println!("round trip exact, round {}", back.round_id);
    match deserialize_update(&bytes[..bytes.len() - 3]) {
        Err(e) => println!("truncated input rejected: {e}"),
        Ok(_) => unreachable!("truncated update decoded"),
    }
    Ok(())
}
