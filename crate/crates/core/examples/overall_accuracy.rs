//! Per-method OA labels for a tiny two-patch dataset, from both a raw
//! confusion matrix and a pair of label maps.

use segqa::dataset::{compute_oa, confusion_from_labels};
use segqa::types::ConfusionMatrix;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cm = ConfusionMatrix::from_rows(vec![vec![50, 2, 3], vec![4, 40, 1], vec![0, 5, 45]])?;
    println!("confusion trace {} / total {} -> OA {:.4}", cm.trace(), cm.total(), compute_oa(&cm)?);

    let truth = [0, 0, 1, 1, 2, 2, 2, 3];
    let predicted = [0, 1, 1, 1, 2, 0, 2, 3];
    let cm = confusion_from_labels(&truth, &predicted, 4)?;
    println!("label maps: {} of {} pixels correct -> OA {:.4}", cm.trace(), cm.total(), compute_oa(&cm)?);
    Ok(())
}
