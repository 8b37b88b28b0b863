mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stylecrawl_core::classifier::{
    evaluate, load_model, save_model, train, BoostedTreeModel, ClassifierError, EvalReport,
    TrainConfig,
};
use stylecrawl_core::model::EventType;
use stylecrawl_core::synth::rule_corpus;

use common::{classifier_rules, confusion_of, metrics_close, oracle_confusion, oracle_prf};

#[test]
fn small_rule_is_learned_exactly() {
    let (_, rule) = classifier_rules()[0];
    let train_set = rule_corpus(1500, 10, EventType::Click, 1, rule);
    let test_set = rule_corpus(1500, 10, EventType::Click, 2, rule);
    let model = train(&train_set, EventType::Click, &TrainConfig::default(), 0).unwrap();
    let report = evaluate(&model, &test_set, EventType::Click);
    assert_eq!(report.confusion.accuracy(), 1.0);
    let importance = model.predictor_importance();
    assert_eq!(importance[0].0, "cursor");
    assert_eq!(importance[0].1, 100.0);
    assert!(importance.windows(2).all(|w| w[0].1 >= w[1].1));
}

#[test]
fn saved_model_predicts_identically() {
    let (_, rule) = classifier_rules()[2];
    let train_set = rule_corpus(1500, 10, EventType::Mouseover, 3, rule);
    let model = train(&train_set, EventType::Mouseover, &TrainConfig::default(), 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mouseover.model.json");
    save_model(&model, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back, model);
    assert_eq!(back.to_json(), model.to_json());
    for row in rule_corpus(1000, 5, EventType::Mouseover, 4, rule).rows {
        assert_eq!(back.predict(&row.features), model.predict(&row.features));
    }
}

#[test]
fn training_is_deterministic() {
    let (_, rule) = classifier_rules()[1];
    let c = rule_corpus(800, 10, EventType::Click, 7, rule);
    let a = train(&c, EventType::Click, &TrainConfig::default(), 11).unwrap();
    let b = train(&c, EventType::Click, &TrainConfig::default(), 11).unwrap();
    assert_eq!(a.to_json(), b.to_json());
}

#[test]
fn single_class_and_bad_files_are_rejected() {
    let c = rule_corpus(50, 2, EventType::Click, 0, |_| false);
    assert!(matches!(
        train(&c, EventType::Click, &TrainConfig::default(), 0),
        Err(ClassifierError::EmptyClass(EventType::Click))
    ));
    let cfg = TrainConfig { boosting_rounds: 0, ..TrainConfig::default() };
    let c = rule_corpus(50, 2, EventType::Click, 0, |f| f.dom_depth > 3);
    assert!(matches!(train(&c, EventType::Click, &cfg, 0), Err(ClassifierError::Config(_))));
    let model = train(&c, EventType::Click, &TrainConfig::default(), 0).unwrap();
    let text = model.to_json();
    assert!(BoostedTreeModel::from_json(&text.replace("\"cursor\"", "\"kursor\"")).is_err());
    assert!(BoostedTreeModel::from_json(&text[..text.len() / 2]).is_err());
}

/// Predictions that ignore the input score about one half.
#[test]
fn coin_flip_predictions_score_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let pairs: Vec<(bool, bool)> = (0..2000).map(|_| (rng.gen_bool(0.5), rng.gen_bool(0.5))).collect();
        let r = EvalReport::from_predictions(pairs);
        assert!((r.confusion.accuracy() - 0.5).abs() < 0.1);
        assert!((r.actionable.precision - 0.5).abs() < 0.1);
        assert!((r.non_actionable.recall - 0.5).abs() < 0.1);
    }
}

proptest! {
    #[test]
    fn metrics_match_confusion_oracle(pairs in proptest::collection::vec(any::<(bool, bool)>(), 0..400)) {
        let r = EvalReport::from_predictions(pairs.iter().copied());
        let (tp, fp, fn_, tn) = oracle_confusion(&pairs);
        prop_assert_eq!((r.confusion.tp, r.confusion.fp, r.confusion.fn_, r.confusion.tn), (tp, fp, fn_, tn));
        prop_assert!(metrics_close(&r.actionable, oracle_prf(tp, fp, fn_), 1e-12));
        prop_assert!(metrics_close(&r.non_actionable, oracle_prf(tn, fn_, fp), 1e-12));
        prop_assert_eq!(r.confusion, confusion_of(&pairs));
    }
}
