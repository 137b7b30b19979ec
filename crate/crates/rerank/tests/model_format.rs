//! Model file format checks through an independent parser.
//!
//! The serializer is serde_json; the oracle here is the hand-rolled wire
//! JSON parser, which shares no code with it. It preserves object key order,
//! so the canonical ordering contract is observable.

use rerank::model::{init_model, model_to_string, ModelConfig, UNK_TOKEN};
use rerank::service::wire::{parse_json, JsonValue};
use rerank::textproc::{builtin_stopwords, IdfTable};

fn tiny_bundle() -> rerank::model::ModelBundle {
    let config = ModelConfig {
        embed_dim: 2,
        filter_width: 2,
        num_filters: 1,
        hidden_size: 2,
        vocab: vec![UNK_TOKEN.into(), "a".into(), "b".into()],
        stopwords: builtin_stopwords().into_iter().collect(),
        idf: IdfTable::new(2, [("a".to_string(), 1)].into()).unwrap(),
    };
    init_model(&config, 4242).unwrap()
}

fn keys(value: &JsonValue) -> Vec<&str> {
    match value {
        JsonValue::Obj(pairs) => pairs.iter().map(|(k, _)| k.as_str()).collect(),
        _ => panic!("expected object"),
    }
}

#[test]
fn independent_parser_recovers_dims_and_key_order() {
    let bundle = tiny_bundle();
    let text = model_to_string(&bundle).unwrap();
    let value = parse_json(&text).expect("model file is well-formed JSON");

    assert_eq!(keys(&value), ["format_version", "config", "params"]);
    assert_eq!(
        keys(value.get("config").unwrap()),
        [
            "embed_dim",
            "filter_width",
            "num_filters",
            "hidden_size",
            "vocab",
            "stopwords",
            "idf"
        ]
    );

    let JsonValue::Num(version) = value.get("format_version").unwrap() else {
        panic!("format_version must be a number");
    };
    assert_eq!(version, "1");

    let JsonValue::Arr(params) = value.get("params").unwrap() else {
        panic!("params must be an array");
    };
    assert_eq!(params.len(), bundle.params.len());
    for (raw, record) in params.iter().zip(&bundle.params) {
        assert_eq!(keys(raw), ["name", "dims", "weights"]);
        assert_eq!(raw.get("name").unwrap().as_str().unwrap(), record.name);
        let JsonValue::Arr(dims) = raw.get("dims").unwrap() else {
            panic!("dims must be an array");
        };
        let parsed_dims: Vec<usize> = dims
            .iter()
            .map(|d| match d {
                JsonValue::Num(text) => text.parse().unwrap(),
                _ => panic!("dim must be a number"),
            })
            .collect();
        assert_eq!(parsed_dims, record.dims, "dims of {}", record.name);
        let JsonValue::Arr(weights) = raw.get("weights").unwrap() else {
            panic!("weights must be an array");
        };
        assert_eq!(weights.len(), record.weights.len());
        // Spot-check the flat weights survive decimal round-trip bit-exactly.
        for (raw_w, w) in weights.iter().zip(&record.weights) {
            let JsonValue::Num(text) = raw_w else {
                panic!("weight must be a number");
            };
            assert_eq!(text.parse::<f64>().unwrap().to_bits(), w.to_bits());
        }
    }
}
