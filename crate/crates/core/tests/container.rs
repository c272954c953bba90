use mulm_core::model::{load_weights, save_weights, Model, ModelConfig, Weights};
use std::collections::BTreeMap;

#[test]
fn reference_geometry_survives_the_container() {
    let config = ModelConfig::with_geometry(256, 8, 8, 2, 512, 64).unwrap();
    let weights = Weights::random(&config, 5);
    let mut specials = BTreeMap::new();
    specials.insert("<|end|>".to_string(), 511);
    let mut bytes = Vec::new();
    save_weights(&mut bytes, &config, &weights, &specials).unwrap();

    let (header, loaded) = load_weights(&mut bytes.as_slice()).unwrap();
    assert_eq!(header.config, config);
    assert_eq!(header.special_tokens, specials);
    assert_eq!(loaded, weights);

    let a = Model::new(config.clone(), weights).unwrap();
    let b = Model::new(config, loaded).unwrap();
    let prompt = [1, 2, 3, 200, 7];
    assert_eq!(a.prefill(&prompt).unwrap().0, b.prefill(&prompt).unwrap().0);
}
