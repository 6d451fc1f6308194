use cusp_core::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use cusp_core::data::make_synthetic;
use cusp_core::model::{build_model, Arch};
use cusp_core::patterns::gen_glyph_digits;
use cusp_core::scoring::{cusp_score, Delta};
use cusp_core::train::{train, TrainConfig};

#[test]
fn mlp_learns_synthetic_classes_and_patterns() {
    let data = make_synthetic(4, 16, 50, 0.1, 11).unwrap();
    assert_eq!(data.len(), 200);
    let patterns = gen_glyph_digits(4, 8).unwrap();
    let mut model = build_model(Arch::Mlp, &[1, 16, 16], 64, 4, 3).unwrap();
    let cfg = TrainConfig {
        epochs: 30,
        batch_size: 16,
        seed: 3,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &data, &patterns, &cfg).unwrap();
    assert_eq!(report.epochs.len(), 30);
    let preds = model.predict_many(&data.images, 64).unwrap();
    let correct = preds.iter().zip(&data.labels).filter(|(p, &l)| p.predicted_class() == l).count();
    let accuracy = correct as f64 / data.len() as f64;
    let mse: f64 = preds
        .iter()
        .zip(&data.labels)
        .map(|(p, &l)| cusp_score(&p.surrogate, &patterns.patterns()[l], Delta::Mse).unwrap())
        .sum::<f64>()
        / data.len() as f64;
    assert!(accuracy >= 0.95, "accuracy {accuracy}");
    assert!(mse <= 0.05, "reconstruction mse {mse}");
}

#[test]
fn mlp_separates_low_noise_classes() {
    let data = make_synthetic(4, 16, 25, 0.05, 12).unwrap();
    let patterns = gen_glyph_digits(4, 8).unwrap();
    let mut model = build_model(Arch::Mlp, &[1, 16, 16], 64, 4, 4).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        batch_size: 16,
        seed: 4,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &data, &patterns, &cfg).unwrap();
    assert_eq!(report.final_stats().unwrap().accuracy, 1.0);
}

#[test]
fn checkpoint_file_round_trip_predicts_identically() {
    let data = make_synthetic(4, 16, 5, 0.1, 13).unwrap();
    let patterns = gen_glyph_digits(4, 8).unwrap();
    let mut model = build_model(Arch::SmallConv, &[1, 16, 16], 64, 4, 5).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &data, &patterns, &cfg).unwrap();
    let meta = CheckpointMeta {
        epochs_run: 2,
        final_loss: report.final_stats().map(|s| s.loss),
        seed: 5,
        alpha: cfg.alpha,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&model, &patterns, "glyph-digits", &meta, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded.meta, meta);
    assert_eq!(loaded.patterns, patterns);
    let inputs = &data.images[..10 * data.pixels()];
    let before = model.predict_many(inputs, 4).unwrap();
    let after = loaded.model.predict_many(inputs, 4).unwrap();
    for (a, b) in before.iter().zip(&after) {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.logits), bits(&b.logits));
        assert_eq!(bits(&a.surrogate), bits(&b.surrogate));
    }
}
