use proptest::prelude::*;
use sblab::config::{DesignKind, ExperimentConfig, ExperimentKind, LambdaRule, LambdaSpec};

fn kind() -> impl Strategy<Value = ExperimentKind> {
    prop_oneof![
        Just(ExperimentKind::Dimension),
        Just(ExperimentKind::Recovery),
        Just(ExperimentKind::Selection),
        Just(ExperimentKind::Bvm),
        Just(ExperimentKind::Coverage),
        Just(ExperimentKind::Diagnose),
    ]
}

fn lambda() -> impl Strategy<Value = LambdaSpec> {
    prop_oneof![
        (0.01f64..10.0).prop_map(LambdaSpec::Value),
        Just(LambdaSpec::Rule(LambdaRule::Default)),
        Just(LambdaSpec::Rule(LambdaRule::XNormOverP)),
        Just(LambdaSpec::Rule(LambdaRule::InvSqrtN)),
        Just(LambdaSpec::Rule(LambdaRule::Sqrt2LogN)),
    ]
}

proptest! {
    #[test]
    fn json_round_trip_is_identity(experiment in kind(), seed in any::<u64>(), p in 5usize..200, s0 in 0usize..5,
                                   amplitude in 0.1f64..20.0, lambda in lambda(), reps in 1usize..50) {
        let cfg = ExperimentConfig { experiment, seed, p: Some(p), s0, amplitude, lambda, replications: reps, ..Default::default() };
        cfg.validate().unwrap();
        let text = cfg.to_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_json(), text);
    }
}

#[test]
fn empty_object_is_default() {
    assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
}

#[test]
fn square_design_rejects_mismatched_sizes() {
    assert!(ExperimentConfig::from_json(r#"{"design": "identity", "n": 10, "p": 12, "s0": 1}"#).is_err());
    assert!(ExperimentConfig::from_json(r#"{"design": "gaussian_iid", "n": 10, "p": 12, "s0": 1}"#).is_ok());
    let c = ExperimentConfig::from_json(r#"{"design": "ar_gram", "p": 9, "s0": 1}"#).unwrap();
    assert_eq!((c.rows(), c.p(), c.design), (9, 9, DesignKind::ArGram));
}

#[test]
fn lambda_rules_parse_by_name() {
    let c = ExperimentConfig::from_json(r#"{"lambda": "sqrt_2_log_n"}"#).unwrap();
    assert_eq!(c.lambda, LambdaSpec::Rule(LambdaRule::Sqrt2LogN));
    let c = ExperimentConfig::from_json(r#"{"lambda": 0.5}"#).unwrap();
    assert_eq!(c.lambda, LambdaSpec::Value(0.5));
}
