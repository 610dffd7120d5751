//! Checkpoints restore models that sample identically.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use spinneret::argen::ArGenConfig;
use spinneret::checkpoint::{Checkpoint, Model, ModelConfig, ModelKind};
use spinneret::dataset::NormalizationParams;
use spinneret::diffusion::{DiffusionConfig, Preset};
use spinneret::zspace::ZKind;
use spinneret::{Error, NUM_FEATURES};

fn configs() -> Vec<ModelConfig> {
    let mut sparse = DiffusionConfig::preset(ZKind::Sparse, Preset::Desk, 16);
    sparse.unet.channels = 4;
    sparse.unet.factors = vec![2, 2];
    sparse.unet.d_c = 8;
    sparse.unet.heads = 2;
    let mut full = sparse.clone();
    full.kind = ZKind::Full;
    full.unet.in_channels = 3 + 16;
    let mut ar = ArGenConfig::preset(Preset::Desk, 16);
    ar.d_model = 8;
    ar.heads = 2;
    ar.d_c = 4;
    vec![ModelConfig::Diffusion(sparse), ModelConfig::Diffusion(full), ModelConfig::Argen(ar)]
}

#[test]
fn save_load_generate_identically() {
    let params = NormalizationParams { coord_scale: 0.03, feature_ranges: [(0.0, 2.0); NUM_FEATURES] };
    let dir = tempfile::tempdir().unwrap();
    for (k, cfg) in configs().into_iter().enumerate() {
        let mut model = Model::new(cfg, &mut ChaCha8Rng::seed_from_u64(k as u64)).unwrap();
        model.store_mut().round_to_f32();
        let kind = model.kind();
        let path = dir.path().join(format!("{kind}.ckpt"));
        let ck = Checkpoint { model, normalization: params, meta: serde_json::json!({"k": k}) };
        ck.save(&path).unwrap();
        let back = Checkpoint::load_kind(&path, kind).unwrap();
        assert_eq!(back.meta, ck.meta);
        assert_eq!(back.model.config(), ck.model.config());
        let cond = [0.25; NUM_FEATURES];
        let a = ck.model.generate(&cond, &params, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = back.model.generate(&cond, &params, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a.sample.graph, b.sample.graph, "{kind}");
    }
}

#[test]
fn wrong_kind_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = Model::new(configs().remove(2), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let params = NormalizationParams { coord_scale: 1.0, feature_ranges: [(0.0, 1.0); NUM_FEATURES] };
    Checkpoint { model, normalization: params, meta: serde_json::Value::Null }.save(&path).unwrap();
    assert!(Checkpoint::load_kind(&path, ModelKind::Argen).is_ok());
    assert!(matches!(Checkpoint::load_kind(&path, ModelKind::FullDiffusion), Err(Error::KindMismatch { .. })));
}
