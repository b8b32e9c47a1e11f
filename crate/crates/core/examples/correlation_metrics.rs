//! PLCC / SROCC / KROCC / RMSE, raw and after the logistic mapping.

use segqa::metrics::{krocc, metric_bundle, plcc, rmse, srocc, MetricReport};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // predictions with a monotone but nonlinear relation to the labels
    let pred: Vec<f64> = (0..40).map(|i| i as f64 / 39.0).collect();
    let label: Vec<f64> = pred
        .iter()
        .enumerate()
        .map(|(i, p)| 0.6 + 0.35 / (1.0 + (-(p - 0.5) * 8.0).exp()) + 0.01 * ((i * 7 % 5) as f64 - 2.0))
        .collect();

    println!("raw:    plcc {:.4}  srocc {:.4}  krocc {:.4}  rmse {:.4}",
        plcc(&pred, &label)?, srocc(&pred, &label)?, krocc(&pred, &label)?, rmse(&pred, &label)?);
    let b = metric_bundle(&pred, &label)?;
    println!("mapped: plcc {:.4}  srocc {:.4}  krocc {:.4}  rmse {:.4}", b.plcc, b.srocc, b.krocc, b.rmse);
    println!("{}", serde_json::to_string_pretty(&MetricReport::new("demo", "test", &b))?);
    Ok(())
}
