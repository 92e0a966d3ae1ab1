use memdec_web::{attention_weights, fuse_vectors, ToyModel};
use serde_json::Value;

#[test]
fn fusion_is_nonnegative_and_seeded() {
    let v: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
    let c: Vec<f64> = (0..8).map(|i| (i as f64 * 1.3).cos()).collect();
    let a = fuse_vectors(&v, &c, 3).unwrap();
    assert_eq!(a.len(), 8);
    assert!(a.iter().all(|&x| x >= 0.0));
    assert_eq!(a, fuse_vectors(&v, &c, 3).unwrap());
    assert_ne!(a, fuse_vectors(&v, &c, 4).unwrap());
    assert!(fuse_vectors(&v, &c[..4], 3).is_err());
}

#[test]
fn attention_weights_are_distributions() {
    let query = [0.5, -1.0, 0.25];
    let slots = [1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.5, -1.0, 0.25, 0.0, 0.0, 0.0];
    let out: Value = serde_json::from_str(&attention_weights(&query, &slots, 4, 5, 1).unwrap()).unwrap();
    for key in ["soft", "dot"] {
        let w: Vec<f64> = out[key]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect();
        assert_eq!(w.len(), 4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    // The slot equal to the query has the largest dot product.
    let dot: Vec<f64> = out["dot"]
        .as_array()
        .unwrap()
        .iter()
        .map(|x| x.as_f64().unwrap())
        .collect();
    assert!(dot[2] > dot[0] && dot[2] > dot[1] && dot[2] > dot[3]);
    assert!(attention_weights(&query, &slots[..5], 4, 5, 1).is_err());
}

#[test]
fn toy_model_trains_and_describes() {
    let mut model = ToyModel::create(42).unwrap();
    assert_eq!(model.videos(), 10);
    let first = model.advance(1).unwrap();
    let later = model.advance(20).unwrap();
    assert_eq!(model.epoch(), 21);
    assert!(later < first, "{later} vs {first}");
    let d: Value = serde_json::from_str(&model.describe(0).unwrap()).unwrap();
    assert_eq!(d["video"], "toy00");
    assert_eq!(d["reference"], "a man is playing a guitar");
    assert_eq!(d["attention"]["memory"].as_array().unwrap().len(), 5);
    assert!(model.describe(10).is_err());
}
