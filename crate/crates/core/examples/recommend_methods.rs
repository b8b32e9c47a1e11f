use segqa::recommend::{recommend, Tolerances};
use segqa::types::ScoreTable;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let images = vec!["tile_a".to_string(), "tile_b".into(), "tile_c".into()];
    let methods = vec!["unet".to_string(), "deeplab".into(), "segformer".into(), "hrnet".into()];
    let pred = ScoreTable::from_rows(
        images.clone(),
        methods.clone(),
        vec![
            vec![0.81, 0.86, 0.90, 0.84],
            vec![0.77, 0.80, 0.79, 0.82],
            vec![0.70, 0.74, 0.71, 0.69],
        ],
    )?;
    // tile_b has two methods tied for best
    let truth = ScoreTable::from_rows(
        images,
        methods,
        vec![
            vec![0.83, 0.88, 0.91, 0.85],
            vec![0.75, 0.84, 0.80, 0.84],
            vec![0.72, 0.71, 0.73, 0.70],
        ],
    )?;
    let r = recommend(&pred, &truth, Tolerances::default())?;
    for im in &r.per_image {
        println!(
            "{}: ranked {:?}, predicted best {:?}, true best {:?}, hit@1 {}, hit@3 {:?}",
            im.patch_id, im.ranked_methods, im.predicted_best, im.true_best_set, im.hit_at_1, im.hit_at_3
        );
    }
    println!("P@1 {:.3}  P@3 {:.3}", r.p_at_1, r.p_at_3.unwrap_or(f64::NAN));
    Ok(())
}
