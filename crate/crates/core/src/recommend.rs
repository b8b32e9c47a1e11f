//! Per-image method ranking and tie-aware recommendation precision.
//!
//! P@1 counts an image as a hit when the predicted best set is a subset
//! (not necessarily proper) of the true best set. P@3 counts a hit when the
//! predicted best set lies inside the true top three, extended to every
//! method tied with the third-ranked one.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::ScoreTable;

/// Default tie window for predicted scores.
pub const PRED_TOL: f64 = 1e-12;
/// Default tie window for floating-point OA labels.
pub const TRUTH_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error("empty score row")]
    EmptyRow,
    #[error("table shape mismatch: {0}")]
    Shape(String),
    #[error("P@3 needs at least 3 methods, got {0}")]
    TooFewMethods(usize),
    #[error("non-finite score for image {image}, method {method}")]
    NonFinite { image: String, method: String },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub pred: f64,
    pub truth: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            pred: PRED_TOL,
            truth: TRUTH_TOL,
        }
    }
}

/// Column indices of all entries within `tol` of the row maximum.
pub fn best_set(row: &[f64], tol: f64) -> Result<Vec<usize>, RecommendError> {
    if row.is_empty() {
        return Err(RecommendError::EmptyRow);
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((0..row.len()).filter(|&i| row[i] >= max - tol).collect())
}

/// Methods whose score reaches the third-highest value (within `tol`).
pub fn top3_set(row: &[f64], tol: f64) -> Result<Vec<usize>, RecommendError> {
    if row.len() < 3 {
        return Err(RecommendError::TooFewMethods(row.len()));
    }
    let mut sorted = row.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let third = sorted[2];
    Ok((0..row.len()).filter(|&i| row[i] >= third - tol).collect())
}

/// Column indices by descending score; exact ties keep canonical column order.
pub fn rank_methods(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].total_cmp(&row[a]));
    idx
}

/// Argmax of the row; exact ties go to the earliest column.
pub fn recommend_method(table: &ScoreTable, image: usize) -> Result<&str, RecommendError> {
    let row = table.row(image);
    let best = *rank_methods(row).first().ok_or(RecommendError::EmptyRow)?;
    Ok(&table.method_ids()[best])
}

fn check_tables(pred: &ScoreTable, truth: &ScoreTable) -> Result<(), RecommendError> {
    if pred.method_ids() != truth.method_ids() {
        return Err(RecommendError::Shape(format!(
            "methods {:?} vs {:?}",
            pred.method_ids(),
            truth.method_ids()
        )));
    }
    if pred.image_ids() != truth.image_ids() {
        return Err(RecommendError::Shape(format!(
            "{} predicted images vs {} truth images, or different order",
            pred.n_images(),
            truth.n_images()
        )));
    }
    if pred.n_images() == 0 || pred.n_methods() == 0 {
        return Err(RecommendError::EmptyRow);
    }
    for t in [pred, truth] {
        for (id, row) in t.rows() {
            if let Some(m) = row.iter().position(|v| !v.is_finite()) {
                return Err(RecommendError::NonFinite {
                    image: id.to_string(),
                    method: t.method_ids()[m].clone(),
                });
            }
        }
    }
    Ok(())
}

fn subset(a: &[usize], b: &[usize]) -> bool {
    a.iter().all(|x| b.contains(x))
}

pub fn precision_at_1(pred: &ScoreTable, truth: &ScoreTable) -> Result<f64, RecommendError> {
    Ok(recommend(pred, truth, Tolerances::default())?.p_at_1)
}

pub fn precision_at_3(pred: &ScoreTable, truth: &ScoreTable) -> Result<f64, RecommendError> {
    if pred.n_methods() < 3 {
        return Err(RecommendError::TooFewMethods(pred.n_methods()));
    }
    Ok(recommend(pred, truth, Tolerances::default())?
        .p_at_3
        .expect("at least 3 methods"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecommendation {
    pub patch_id: String,
    pub ranked_methods: Vec<String>,
    pub predicted_best: Vec<String>,
    pub true_best_set: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub true_top3_set: Option<Vec<String>>,
    pub hit_at_1: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub hit_at_3: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecommendationResult {
    pub per_image: Vec<ImageRecommendation>,
    pub p_at_1: f64,
    /// Absent when fewer than three methods are compared.
    pub p_at_3: Option<f64>,
    pub definitions: Definitions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Definitions {
    pub p_at_1: String,
    pub p_at_3: String,
    pub pred_tol: f64,
    pub truth_tol: f64,
}

/// Full recommendation pass over aligned prediction and truth tables.
pub fn recommend(pred: &ScoreTable, truth: &ScoreTable, tol: Tolerances) -> Result<RecommendationResult, RecommendError> {
    check_tables(pred, truth)?;
    let names = |ix: &[usize]| -> Vec<String> { ix.iter().map(|&i| pred.method_ids()[i].clone()).collect() };
    let with_top3 = pred.n_methods() >= 3;
    let mut hits1 = 0usize;
    let mut hits3 = 0usize;
    let mut per_image = Vec::with_capacity(pred.n_images());
    for i in 0..pred.n_images() {
        let p = best_set(pred.row(i), tol.pred)?;
        let b = best_set(truth.row(i), tol.truth)?;
        let hit1 = subset(&p, &b);
        hits1 += hit1 as usize;
        let (top3, hit3) = if with_top3 {
            let t = top3_set(truth.row(i), tol.truth)?;
            let h = subset(&p, &t);
            hits3 += h as usize;
            (Some(names(&t)), Some(h))
        } else {
            (None, None)
        };
        per_image.push(ImageRecommendation {
            patch_id: pred.image_ids()[i].clone(),
            ranked_methods: names(&rank_methods(pred.row(i))),
            predicted_best: names(&p),
            true_best_set: names(&b),
            true_top3_set: top3,
            hit_at_1: hit1,
            hit_at_3: hit3,
        });
    }
    let n = pred.n_images() as f64;
    Ok(RecommendationResult {
        per_image,
        p_at_1: hits1 as f64 / n,
        p_at_3: with_top3.then(|| hits3 as f64 / n),
        definitions: Definitions {
            p_at_1: "predicted best set is a subset of the true best set".into(),
            p_at_3: "predicted best set is a subset of the true top 3, extended with ties at rank 3".into(),
            pred_tol: tol.pred,
            truth_tol: tol.truth,
        },
    })
}

/// CSV of ranked lists: `patch_id,rank,method_id,predicted`.
pub fn write_ranked_csv(pred: &ScoreTable, out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patch_id", "rank", "method_id", "predicted"])?;
    for i in 0..pred.n_images() {
        for (r, m) in rank_methods(pred.row(i)).into_iter().enumerate() {
            w.write_record([
                pred.image_ids()[i].clone(),
                (r + 1).to_string(),
                pred.method_ids()[m].clone(),
                pred.get(i, m).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn table(rows: Vec<Vec<f64>>) -> ScoreTable {
        let n_m = rows[0].len();
        ScoreTable::from_rows(
            (0..rows.len()).map(|i| format!("img{i}")).collect(),
            (0..n_m).map(|m| format!("m{}", m + 1)).collect(),
            rows,
        )
        .unwrap()
    }

    #[test]
    fn best_set_examples() {
        assert_eq!(best_set(&[0.9, 0.8], 0.0).unwrap(), vec![0]);
        assert_eq!(best_set(&[0.9, 0.9], 0.0).unwrap(), vec![0, 1]);
        assert_eq!(best_set(&[0.9, 0.9 - 1e-13], 1e-12).unwrap(), vec![0, 1]);
        assert_eq!(best_set(&[0.9, 0.9 - 1e-13], 0.0).unwrap(), vec![0]);
        assert_eq!(best_set(&[], 0.0), Err(RecommendError::EmptyRow));
    }

    #[test]
    fn p1_examples() {
        let t = table(vec![vec![0.5, 0.7, 0.6], vec![0.9, 0.1, 0.2]]);
        assert_eq!(precision_at_1(&t, &t).unwrap(), 1.0);
        let pred = table(vec![vec![0.9, 0.1]]);
        let truth = table(vec![vec![0.8, 0.8]]);
        assert_eq!(precision_at_1(&pred, &truth).unwrap(), 1.0);
        // prediction tie {m1,m2} but truth best only {m1} → miss
        assert_eq!(precision_at_1(&truth, &pred).unwrap(), 0.0);
    }

    #[test]
    fn p3_boundary_inclusion() {
        let truth = table(vec![vec![0.9, 0.8, 0.7, 0.6]]);
        let pred = table(vec![vec![0.0, 0.1, 0.5, 0.2]]);
        assert_eq!(precision_at_3(&pred, &truth).unwrap(), 1.0);
        assert_eq!(precision_at_1(&pred, &truth).unwrap(), 0.0);
        let pred4 = table(vec![vec![0.0, 0.1, 0.2, 0.5]]);
        assert_eq!(precision_at_3(&pred4, &truth).unwrap(), 0.0);
        // tie at rank 3 extends the set
        let tied = table(vec![vec![0.9, 0.8, 0.7, 0.7]]);
        assert_eq!(precision_at_3(&pred4, &tied).unwrap(), 1.0);
        let two = table(vec![vec![0.1, 0.2]]);
        assert_eq!(precision_at_3(&two, &two), Err(RecommendError::TooFewMethods(2)));
    }

    #[test]
    fn recommend_examples() {
        let t = table(vec![vec![0.3, 0.7], vec![0.5, 0.5]]);
        assert_eq!(recommend_method(&t, 0).unwrap(), "m2");
        assert_eq!(recommend_method(&t, 1).unwrap(), "m1");
    }

    #[test]
    fn shape_mismatch() {
        let a = table(vec![vec![0.1, 0.2, 0.3]]);
        let b = table(vec![vec![0.1, 0.2, 0.3], vec![0.1, 0.2, 0.3]]);
        assert!(matches!(precision_at_1(&a, &b), Err(RecommendError::Shape(_))));
    }

    #[test]
    fn random_baseline_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let (n, m) = (2000, 8);
        let truth_rows: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let mut r: Vec<f64> = (0..m).map(|k| 0.5 + 0.05 * k as f64).collect();
                r.shuffle(&mut rng);
                r
            })
            .collect();
        let pred_rows: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.gen()).collect()).collect();
        let (truth, pred) = (table(truth_rows), table(pred_rows));
        let p1 = precision_at_1(&pred, &truth).unwrap();
        let p3 = precision_at_3(&pred, &truth).unwrap();
        assert!((p1 - 0.125).abs() <= 0.02, "{p1}");
        assert!((p3 - 0.375).abs() <= 0.03, "{p3}");
    }

    #[test]
    fn report_and_csv() {
        let t = table(vec![vec![0.2, 0.9, 0.5]]);
        let r = recommend(&t, &t, Tolerances::default()).unwrap();
        assert_eq!(r.per_image[0].ranked_methods, ["m2", "m3", "m1"]);
        let js = serde_json::to_value(&r).unwrap();
        assert_eq!(js["p_at_1"], 1.0);
        assert_eq!(js["per_image"][0]["predicted_best"][0], "m2");
        let mut buf = Vec::new();
        write_ranked_csv(&t, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("patch_id,rank,method_id,predicted\nimg0,1,m2,0.9\n"), "{text}");
    }

    fn tables() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        (1usize..12, 3usize..7).prop_flat_map(|(n, m)| {
            let row = prop::collection::vec(prop::sample::select(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]), m);
            (prop::collection::vec(row.clone(), n), prop::collection::vec(row, n))
        })
    }

    proptest! {
        #[test]
        fn invariants((p, t) in tables(), perm_seed in 0u64..1000) {
            let (pred, truth) = (table(p.clone()), table(t.clone()));
            prop_assert_eq!(precision_at_1(&truth, &truth).unwrap(), 1.0);
            let p1 = precision_at_1(&pred, &truth).unwrap();
            let p3 = precision_at_3(&pred, &truth).unwrap();
            prop_assert!(p3 >= p1);
            prop_assert!((0.0..=1.0).contains(&p1) && (0.0..=1.0).contains(&p3));

            // strictly increasing transform on predictions
            let warped = table(p.iter().map(|r| r.iter().map(|v| (3.0 * v).exp()).collect()).collect());
            prop_assert_eq!(precision_at_1(&warped, &truth).unwrap(), p1);
            prop_assert_eq!(precision_at_3(&warped, &truth).unwrap(), p3);
            for i in 0..pred.n_images() {
                prop_assert_eq!(recommend_method(&warped, i).unwrap(), recommend_method(&pred, i).unwrap());
            }

            // consistent image and column permutations
            let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
            let mut rows: Vec<usize> = (0..p.len()).collect();
            rows.shuffle(&mut rng);
            let mut cols: Vec<usize> = (0..p[0].len()).collect();
            cols.shuffle(&mut rng);
            let permute = |src: &Vec<Vec<f64>>| -> ScoreTable {
                ScoreTable::from_rows(
                    rows.iter().map(|&i| format!("img{i}")).collect(),
                    cols.iter().map(|&c| format!("m{}", c + 1)).collect(),
                    rows.iter().map(|&i| cols.iter().map(|&c| src[i][c]).collect()).collect(),
                ).unwrap()
            };
            let (pp, tt) = (permute(&p), permute(&t));
            prop_assert!((precision_at_1(&pp, &tt).unwrap() - p1).abs() < 1e-12);
            prop_assert!((precision_at_3(&pp, &tt).unwrap() - p3).abs() < 1e-12);
        }
    }
}
