use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use segqa::model::{gap, scgb_forward, Scgb};
use segqa::nn::Linear;
use segqa::types::{FeatureMap, FeatureVector};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let seg_map = FeatureMap::from_fn(4, 4, 4, |i, j, c| (i * 4 + j) as f64 * 0.1 + c as f64)?;
    let f_seg = gap(&seg_map);
    let f_sem = FeatureVector::new(vec![0.5, -1.0, 2.0, 0.0])?;
    println!("pooled segmentation features: {:?}", f_seg.values());

    let block: Scgb<f64> = Scgb::new(4, 0.5, &mut rng);
    println!("fused: {:?}", scgb_forward(&f_sem, &f_seg, &block)?.values());

    // with a zero semantic projection the gate closes and only the residual path remains
    let mut closed = block.clone();
    closed.w_sem = Linear::zeros(4, 4);
    let fused = scgb_forward(&f_sem, &f_seg, &closed)?;
    let residual = closed.w_seg.forward(f_seg.values());
    println!("gate closed: {:?}\nW_seg f_seg: {:?}", fused.values(), residual);
    Ok(())
}
