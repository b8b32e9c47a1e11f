//! Trains one quality model on synthetic patches and scores the held-out split.

use std::sync::Arc;

use segqa::dataset::{attach_labels, build_label_table, crop_patches, split_manifest, ManifestRecord};
use segqa::model::{FileEncoder, ModelConfig, QualityModel};
use segqa::synth::{generate, SynthConfig};
use segqa::training::{evaluate_split, train, LossConfig, TrainConfig};
use segqa::types::{QualityRecord, RngSeed, Split};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = RngSeed(1);
    let cfg = ModelConfig {
        d_sem: 32,
        d_fused: 32,
        d_hidden: 16,
        seg_channels: 8,
        adapter_blocks: 1,
        ..Default::default()
    };
    let synth = SynthConfig { enabled: true, extent: 8192, methods: 1, ..Default::default() };
    let data = generate(&synth, 1024, cfg.d_sem, cfg.seg_channels, seed.derive("synthetic"))?;

    let mut records = Vec::new();
    for s in &data.sources {
        for crop in crop_patches(&s.id, (s.width, s.height), 1024)? {
            let record = QualityRecord {
                patch_id: crop.patch_id(),
                dataset_tag: s.tag.clone(),
                split: Split::Train,
                labels: Default::default(),
                feature_refs: Default::default(),
            };
            records.push(ManifestRecord { record, crop });
        }
    }
    let mut manifest = split_manifest(records, 1024, (0.8, 0.2), seed.derive("split"))?;
    let table = build_label_table(&manifest, &data.method_ids, &data.confusions)?;
    attach_labels(&mut manifest, &table);

    let encoder = Arc::new(FileEncoder::new(data.embeddings.clone()));
    let mut model = QualityModel::new(cfg, encoder, seed.derive("model"))?;
    let tc = TrainConfig { learning_rate: 1e-3, max_steps: 300, seed: seed.derive("train").0, ..Default::default() };
    let method = &data.method_ids[0];
    let curve = train(&mut model, &manifest, method, &data.segmentation, &tc, &LossConfig::default())?;
    for p in curve.iter().step_by(50) {
        println!("step {:>4}  lr {:.2e}  mse {:.5}  kl {:.5}", p.step, p.lr, p.mse, p.kl);
    }

    for split in [Split::Train, Split::Test] {
        let ev = evaluate_split(&model, &manifest, method, split, &data.segmentation)?;
        let b = &ev.bundle;
        println!("{split}: n {}  plcc {:.3}  srocc {:.3}  krocc {:.3}  rmse {:.4}", b.n, b.plcc, b.srocc, b.krocc, b.rmse);
    }
    Ok(())
}
