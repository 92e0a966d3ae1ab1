use memdec_core::data::Split;
use memdec_core::decoder::Decoder;
use memdec_core::eval::{config_hash, evaluate_split, read_generations, score_captions, write_generations};
use memdec_core::toy::{toy_corpus, toy_decoder_config};

#[test]
fn report_is_reproducible_from_dump() {
    let corpus = toy_corpus(9);
    let ds = corpus.dataset();
    let d = Decoder::new(&toy_decoder_config(9), corpus.vocab.len(), 16).unwrap();
    let p = d.init_params();
    let split = ds.split(Split::Train);
    let (report, records) = evaluate_split(&d, &p, &split, &corpus.vocab, 8).unwrap();
    let (again, records2) = evaluate_split(&d, &p, &split, &corpus.vocab, 8).unwrap();
    assert_eq!(report, again);
    assert_eq!(records, records2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gen.jsonl");
    write_generations(&records, &path).unwrap();
    let loaded = read_generations(&path).unwrap();
    assert_eq!(loaded, records);

    let captions: Vec<String> = loaded.iter().map(|r| r.caption.clone()).collect();
    let refs: Vec<Vec<String>> = split
        .iter()
        .map(|e| e.captions.iter().map(|c| c.text.clone()).collect())
        .collect();
    let recomputed = score_captions(&captions, &refs, config_hash(&d)).unwrap();
    assert_eq!(recomputed, report);
    assert!(report.mean_len <= 8.0);
    for r in &loaded {
        assert!(r.tokens.len() <= 8);
        for w in r.attention.all_weights() {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn memorized_references_score_100() {
    let refs = vec![
        vec!["a man is playing a guitar".to_owned()],
        vec!["A dog is running, on grass.".to_owned()],
    ];
    let captions = vec![
        "a man is playing a guitar".to_owned(),
        "a dog is running on grass".to_owned(),
    ];
    let r = score_captions(&captions, &refs, String::new()).unwrap();
    assert_eq!(r.bleu4, 100.0);
    assert!((r.cider - 10.0).abs() < 1e-12);
    assert_eq!(r.mean_len, 6.0);
}

#[test]
fn empty_split_rejected() {
    let corpus = toy_corpus(1);
    let d = Decoder::new(&toy_decoder_config(1), corpus.vocab.len(), 16).unwrap();
    assert!(evaluate_split(&d, &d.init_params(), &[], &corpus.vocab, 5).is_err());
}
