//! End-to-end checks of the emitted evaluator binary: CLI surface, service
//! mode, and independence from the model file it was generated from.

use std::process::Command;
use std::time::Duration;

use rerank::codegen::{compile_generated, generate_evaluator, GenOptions};
use rerank::error::Error;
use rerank::inference::Scorer;
use rerank::model::{init_model, save_model, ModelBundle, ModelConfig, UNK_TOKEN};
use rerank::service::ScoreClient;
use rerank::textproc::{builtin_stopwords, IdfTable};

fn small_bundle() -> ModelBundle {
    let config = ModelConfig {
        embed_dim: 4,
        filter_width: 3,
        num_filters: 3,
        hidden_size: 10,
        vocab: vec![
            UNK_TOKEN.into(),
            "sky".into(),
            "blue".into(),
            "is".into(),
            "the".into(),
            "water".into(),
        ],
        stopwords: builtin_stopwords().into_iter().collect(),
        idf: IdfTable::new(
            6,
            [
                ("sky".to_string(), 2),
                ("blue".to_string(), 1),
                ("the".to_string(), 6),
            ]
            .into(),
        )
        .unwrap(),
    };
    init_model(&config, 2024).unwrap()
}

#[test]
fn compiled_evaluator_full_surface() {
    let bundle = small_bundle();
    let scorer = Scorer::new(&bundle).unwrap();
    let dir = tempfile::tempdir().unwrap();

    // Keep a model file around to prove the binary does not depend on it.
    let model_path = dir.path().join("model.json");
    save_model(&bundle, &model_path).unwrap();

    let source = generate_evaluator(&bundle, &GenOptions::default()).unwrap();
    let binary = compile_generated(&source, dir.path()).unwrap();

    // --score prints 17 significant digits and matches the interpreter.
    let out = Command::new(&binary)
        .args(["--score", "is the sky blue", "the sky is blue"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let printed = String::from_utf8(out.stdout).unwrap();
    let printed = printed.trim();
    let mantissa = printed
        .trim_start_matches('-')
        .split('e')
        .next()
        .unwrap()
        .replace('.', "");
    assert_eq!(
        mantissa.len(),
        17,
        "expected 17 significant digits: {printed}"
    );
    let got: f64 = printed.parse().unwrap();
    let want = scorer.score_pair("is the sky blue", "the sky is blue");
    let rel = (got - want).abs() / want.abs().max(1e-12);
    assert!(rel <= 1e-6, "got {got}, want {want}");

    // Deleting the model file must not affect the compiled program.
    std::fs::remove_file(&model_path).unwrap();
    let again = Command::new(&binary)
        .args(["--score", "is the sky blue", "the sky is blue"])
        .output()
        .unwrap();
    assert!(again.status.success());
    assert_eq!(String::from_utf8(again.stdout).unwrap().trim(), printed);

    // --batch scores one pair per line in order.
    let batch_path = dir.path().join("pairs.tsv");
    std::fs::write(&batch_path, "sky\tblue\nwater is\tthe sky\n\tsky\n").unwrap();
    let out = Command::new(&binary)
        .arg("--batch")
        .arg(&batch_path)
        .output()
        .unwrap();
    assert!(out.status.success());
    let scores: Vec<f64> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| l.parse().unwrap())
        .collect();
    let expected = [
        scorer.score_pair("sky", "blue"),
        scorer.score_pair("water is", "the sky"),
        scorer.score_pair("", "sky"),
    ];
    assert_eq!(scores.len(), 3);
    for (got, want) in scores.iter().zip(expected) {
        let rel = (got - want).abs() / want.abs().max(1e-12);
        assert!(rel <= 1e-6, "got {got}, want {want}");
    }

    // --serve speaks the wire protocol; scores match the interpreter.
    let port = {
        let probe = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        probe.local_addr().unwrap().port()
    };
    let mut child = Command::new(&binary)
        .args(["--serve", &port.to_string()])
        .stderr(std::process::Stdio::null())
        .spawn()
        .unwrap();
    let endpoint = format!("127.0.0.1:{port}");
    let mut client = None;
    for _ in 0..100 {
        match ScoreClient::connect(endpoint.as_str()) {
            Ok(c) => {
                client = Some(c);
                break;
            }
            Err(_) => std::thread::sleep(Duration::from_millis(50)),
        }
    }
    let mut client = client.expect("generated server never came up");
    for (q, a) in [
        ("sky", "the water is blue"),
        ("", ""),
        ("novel words", "sky sky"),
    ] {
        let got = client.get_score(q, a).unwrap();
        let want = scorer.score_pair(q, a);
        let rel = (got - want).abs() / want.abs().max(1e-12);
        assert!(
            rel <= 1e-6,
            "serve pair ({q:?}, {a:?}): got {got}, want {want}"
        );
    }
    // Unknown method handling matches the in-process server. The server
    // handles one connection at a time, so release the client first.
    drop(client);
    let err = {
        use std::io::{Read, Write};
        let mut stream = std::net::TcpStream::connect(endpoint.as_str()).unwrap();
        let payload = br#"{"id":5,"method":"nope"}"#;
        stream
            .write_all(&(payload.len() as u32).to_be_bytes())
            .unwrap();
        stream.write_all(payload).unwrap();
        let mut len_buf = [0u8; 4];
        stream.read_exact(&mut len_buf).unwrap();
        let mut body = vec![0u8; u32::from_be_bytes(len_buf) as usize];
        stream.read_exact(&mut body).unwrap();
        String::from_utf8(body).unwrap()
    };
    assert_eq!(err, r#"{"id":5,"error":"unknown method"}"#);

    let _ = child.kill();
    let _ = child.wait();
}

#[test]
fn zero_fc_model_compiles_to_constant_half() {
    let mut bundle = small_bundle();
    for name in ["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"] {
        bundle
            .params
            .iter_mut()
            .find(|p| p.name == name)
            .unwrap()
            .weights
            .iter_mut()
            .for_each(|w| *w = 0.0);
    }
    let dir = tempfile::tempdir().unwrap();
    let source = generate_evaluator(
        &bundle,
        &GenOptions {
            emit_service: false,
            emit_batch_cli: true,
        },
    )
    .unwrap();
    let binary = compile_generated(&source, dir.path()).unwrap();
    for (q, a) in [("anything", "at all"), ("", "x")] {
        let out = Command::new(&binary)
            .args(["--score", q, a])
            .output()
            .unwrap();
        let score: f64 = String::from_utf8(out.stdout)
            .unwrap()
            .trim()
            .parse()
            .unwrap();
        assert_eq!(score, 0.5);
    }
}

#[test]
fn corrupted_generated_source_fails_with_diagnostics() {
    let bundle = small_bundle();
    let mut source = generate_evaluator(&bundle, &GenOptions::default()).unwrap();
    let text = source.files.get_mut("evaluator.rs").unwrap();
    text.push_str("\nthis is not rust\n");
    let dir = tempfile::tempdir().unwrap();
    match compile_generated(&source, dir.path()) {
        Err(Error::Codegen(diagnostics)) => {
            assert!(diagnostics.contains("error"), "{diagnostics}");
        }
        other => panic!("expected codegen failure, got {other:?}"),
    }
}

#[test]
fn usage_error_exits_one() {
    let bundle = small_bundle();
    let dir = tempfile::tempdir().unwrap();
    let source = generate_evaluator(&bundle, &GenOptions::default()).unwrap();
    let binary = compile_generated(&source, dir.path()).unwrap();
    let out = Command::new(&binary).arg("--bogus").output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("usage"));
}
