use memdec_core::attention::AttentionKind;
use memdec_core::data::{Batch, Dataset, Split, PAD};
use memdec_core::decoder::{Decoder, DecoderKind};
use memdec_core::error::Error;
use memdec_core::eval::greedy_decode;
use memdec_core::toy::{toy_corpus, toy_decoder_config, toy_train_config};
use memdec_core::train::{
    adam_step, batch_loss, evaluate_loss, fit, load_checkpoint, train_epoch, write_checkpoint, AdamState,
    CheckpointMeta, TrainConfig, TrainItem,
};

fn items(ds: &Dataset) -> Vec<TrainItem<'_>> {
    ds.pairs(Split::Train)
        .into_iter()
        .map(|(i, j)| TrainItem {
            video: &ds.examples[i].video,
            caption: &ds.examples[i].captions[j].tokens,
        })
        .collect()
}

fn toy(seed: u64, attention: AttentionKind, kind: DecoderKind) -> (Dataset, Decoder) {
    let corpus = toy_corpus(seed);
    let mut cfg = toy_decoder_config(seed);
    cfg.attention = attention;
    cfg.decoder = kind;
    let d = Decoder::new(&cfg, corpus.vocab.len(), 16).unwrap();
    (corpus.dataset(), d)
}

fn padded(items: &[TrainItem<'_>], rows: &[usize], fill: usize) -> Batch {
    let lengths: Vec<usize> = rows.iter().map(|&r| items[r].caption.len()).collect();
    let width = *lengths.iter().max().unwrap();
    Batch {
        items: rows.to_vec(),
        tokens: rows
            .iter()
            .map(|&r| {
                let mut t = items[r].caption.to_vec();
                t.resize(width, fill);
                t
            })
            .collect(),
        mask: lengths.iter().map(|&l| (0..width).map(|k| k < l).collect()).collect(),
        lengths,
    }
}

#[test]
fn padded_batch_loss_is_sum_of_item_losses() {
    let (ds, d) = toy(3, AttentionKind::Soft, DecoderKind::Memory);
    let items = items(&ds);
    let p = d.init_params();
    let rows = [2, 5, 9, 0];
    let batch = padded(&items, &rows, PAD);
    let r = batch_loss(&d, &p, &items, &batch, false).unwrap();
    let mut oracle = 0.0;
    for &row in &rows {
        let (l, _) = evaluate_loss(&d, &p, &items[row..=row]).unwrap();
        oracle += l;
    }
    assert!((r.loss_sum - oracle).abs() < 1e-12, "{} vs {oracle}", r.loss_sum);

    // Whatever sits under the mask is ignored.
    let garbage = padded(&items, &rows, 7);
    let g = batch_loss(&d, &p, &items, &garbage, true).unwrap();
    let clean = batch_loss(&d, &p, &items, &batch, true).unwrap();
    assert_eq!(g.loss_sum.to_bits(), clean.loss_sum.to_bits());
    assert_eq!(g.grads, clean.grads);
}

#[test]
fn epoch_statistics_follow_the_weights() {
    let (ds, d) = toy(4, AttentionKind::Soft, DecoderKind::Memory);
    let items = items(&ds);
    let mut p = d.init_params();
    let cfg = TrainConfig {
        batch_size: 3,
        ..Default::default()
    };
    let mut s = AdamState::new(cfg.adam, &p);
    let stats = train_epoch(&d, &mut p, &mut s, &items, &cfg, 4, 1).unwrap();
    let c = &stats.components;
    assert_eq!(c.len(), 3);
    assert!((stats.loss - (0.2 * c[0] + 0.2 * c[1] + 0.6 * c[2])).abs() < 1e-12);
    assert_eq!(s.step, 4);
    assert!(matches!(
        train_epoch(&d, &mut p, &mut s, &[], &cfg, 4, 2),
        Err(Error::EmptyInput { .. })
    ));
}

#[test]
fn one_step_lowers_the_batch_loss() {
    let mut improved = 0;
    for seed in 0..10 {
        let (ds, d) = toy(seed, AttentionKind::Soft, DecoderKind::Memory);
        let items = items(&ds);
        let mut p = d.init_params();
        let batch = padded(&items, &[0, 1, 2, 3], PAD);
        let before = batch_loss(&d, &p, &items, &batch, true).unwrap();
        let mut s = AdamState::new(Default::default(), &p);
        adam_step(&mut p, &before.grads, &mut s).unwrap();
        let after = batch_loss(&d, &p, &items, &batch, false).unwrap();
        if after.loss_sum < before.loss_sum {
            improved += 1;
        }
    }
    assert!(improved as f64 >= 0.95 * 10.0, "{improved}/10");
}

#[test]
fn training_is_reproducible() {
    let run = || {
        let (ds, d) = toy(5, AttentionKind::Soft, DecoderKind::Memory);
        let items = items(&ds);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..Default::default()
        };
        let out = fit(&d, d.init_params(), &items, &items[..2], &cfg, |_| {}).unwrap();
        (out.history, out.best_params)
    };
    let (h1, p1) = run();
    let (h2, p2) = run();
    assert_eq!(h1, h2);
    assert_eq!(p1, p2);
    assert!(h1.iter().all(|e| e.val_loss.is_some()));
}

#[test]
fn nan_gradient_aborts_with_parameter_name() {
    let (ds, d) = toy(6, AttentionKind::Soft, DecoderKind::Memory);
    let items = items(&ds);
    let mut p = d.init_params();
    let id = p.find("layer3.bg").unwrap();
    let mut t = p.get(id).clone();
    t.data_mut()[0] = f64::NAN;
    p.set(id, t).unwrap();
    let mut s = AdamState::new(Default::default(), &p);
    let err = train_epoch(&d, &mut p, &mut s, &items, &TrainConfig::default(), 0, 1).unwrap_err();
    assert!(matches!(err, Error::NonFiniteGradient(_)), "{err}");
}

#[test]
fn checkpoint_reload_reproduces_forward_bit_exactly() {
    let (ds, d) = toy(8, AttentionKind::Soft, DecoderKind::Memory);
    let items = items(&ds);
    let cfg = TrainConfig {
        epochs: 2,
        ..Default::default()
    };
    let out = fit(&d, d.init_params(), &items, &[], &cfg, |_| {}).unwrap();
    let meta = CheckpointMeta {
        decoder: d.config().clone(),
        train: cfg,
        epoch: 2,
        best_val_loss: None,
        seed: d.config().seed,
        vocab_size: d.vocab_size(),
        feature_width: d.feature_width(),
        adam_step: out.state.step,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mdck");
    write_checkpoint(&path, &meta, &out.best_params, &out.state).unwrap();
    let (d2, p2, s2, _) = load_checkpoint(&path).unwrap();
    assert_eq!(s2, out.state);
    let (a, _) = evaluate_loss(&d, &out.best_params, &items).unwrap();
    let (b, _) = evaluate_loss(&d2, &p2, &items).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    let g1 = greedy_decode(&d, &out.best_params, items[0].video, 10).unwrap();
    let g2 = greedy_decode(&d2, &p2, items[0].video, 10).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn toy_corpus_is_memorized() {
    for (attention, kind) in [(AttentionKind::Soft, DecoderKind::Memory)] {
        let (ds, d) = toy(7, attention, kind);
        let items = items(&ds);
        let out = fit(&d, d.init_params(), &items, &[], &toy_train_config(), |_| {}).unwrap();
        let last = out.history.last().unwrap();
        assert!(last.loss < 0.05, "{} after {} epochs", last.loss, last.epoch);
        assert!(last.epoch <= 500);
        for it in &items {
            let g = greedy_decode(&d, &out.best_params, it.video, 12).unwrap();
            assert_eq!(g.tokens, it.caption[1..it.caption.len() - 1]);
        }
    }
}
