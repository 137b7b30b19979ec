//! Network compiler: reads a model bundle and emits a standalone evaluator
//! program with every weight baked in as a compile-time constant.
//!
//! The emitted program depends only on the Rust standard library, so a bare
//! `rustc -O` turns it into a single binary. It reproduces the interpreter's
//! arithmetic operation for operation (same summation orders, same
//! activation expressions), exposes `--score` and `--batch` for direct
//! evaluation, and optionally `--serve` speaking the same wire protocol as
//! the in-process service.

use std::collections::BTreeMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::Command;

use crate::error::{Error, Result};
use crate::inference::Scorer;
use crate::model::ModelBundle;

/// Relative tolerance for interpreter/compiled score agreement.
pub const CONFORMANCE_TOLERANCE: f64 = 1e-6;

/// What the emitted program should expose. Floats are always serialized as
/// round-trip-exact shortest decimals; that is not configurable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GenOptions {
    pub emit_service: bool,
    pub emit_batch_cli: bool,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            emit_service: true,
            emit_batch_cli: true,
        }
    }
}

impl GenOptions {
    fn validate(&self) -> Result<()> {
        if !self.emit_service && !self.emit_batch_cli {
            return Err(Error::Validation(
                "GenOptions: at least one of emit_service/emit_batch_cli must be set".into(),
            ));
        }
        Ok(())
    }
}

/// Emitted source tree: a deterministic function of (bundle, options) with
/// no reference back to the model file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedSource {
    pub files: BTreeMap<String, String>,
    pub entry_point: String,
}

impl GeneratedSource {
    pub fn write_to_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        for (rel, text) in &self.files {
            std::fs::write(dir.join(rel), text)?;
        }
        Ok(())
    }
}

/// Render an f64 as a Rust float literal: shortest round-trip decimal, with
/// `.0` appended when the shortest form would read as an integer literal.
fn float_literal(v: f64) -> String {
    let s = format!("{v}");
    if s.contains('.') || s.contains('e') || s.contains('E') {
        s
    } else {
        format!("{s}.0")
    }
}

/// Escape into a Rust string literal; non-ASCII and control characters use
/// `\u{...}` so the emitted source is pure ASCII.
fn rust_str_literal(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if c.is_ascii_graphic() || c == ' ' => out.push(c),
            c => {
                let _ = write!(out, "\\u{{{:x}}}", c as u32);
            }
        }
    }
    out.push('"');
    out
}

fn emit_f64_array(out: &mut String, name: &str, values: &[f64]) {
    let _ = writeln!(out, "static {name}: [f64; {}] = [", values.len());
    for chunk in values.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|&v| float_literal(v)).collect();
        let _ = writeln!(out, "    {},", line.join(", "));
    }
    out.push_str("];\n");
}

fn emit_str_array(out: &mut String, name: &str, values: &[&str]) {
    let _ = writeln!(out, "static {name}: [&str; {}] = [", values.len());
    for chunk in values.chunks(8) {
        let line: Vec<String> = chunk.iter().map(|s| rust_str_literal(s)).collect();
        let _ = writeln!(out, "    {},", line.join(", "));
    }
    out.push_str("];\n");
}

fn emit_u64_array(out: &mut String, name: &str, values: &[u64]) {
    let _ = writeln!(out, "static {name}: [u64; {}] = [", values.len());
    for chunk in values.chunks(16) {
        let line: Vec<String> = chunk.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "    {},", line.join(", "));
    }
    out.push_str("];\n");
}

/// Emit the standalone evaluator for a validated bundle. Validation includes
/// weight finiteness, so every value below has a literal representation.
pub fn generate_evaluator(bundle: &ModelBundle, opts: &GenOptions) -> Result<GeneratedSource> {
    opts.validate()?;
    bundle.validate()?;

    let config = &bundle.config;
    let mut src = String::new();
    src.push_str("// Standalone question-answer scoring evaluator with baked-in model\n");
    src.push_str("// weights. Generated code: do not edit.\n");
    src.push_str("//\n");
    src.push_str("// Build:  rustc -O --edition=2021 evaluator.rs -o evaluator\n");
    src.push_str("// Usage:  evaluator --score <question> <answer>\n");
    if opts.emit_batch_cli {
        src.push_str("//         evaluator --batch <tsv-file>\n");
    }
    if opts.emit_service {
        src.push_str("//         evaluator --serve <port>\n");
    }
    src.push('\n');
    src.push_str("use std::collections::{HashMap, HashSet};\n\n");

    // Shapes as named constants: every loop bound below folds at compile time.
    let _ = writeln!(src, "const EMBED_DIM: usize = {};", config.embed_dim);
    let _ = writeln!(src, "const FILTER_WIDTH: usize = {};", config.filter_width);
    let _ = writeln!(src, "const NUM_FILTERS: usize = {};", config.num_filters);
    let _ = writeln!(src, "const HIDDEN_SIZE: usize = {};", config.hidden_size);
    let _ = writeln!(src, "const JOIN_LEN: usize = {};", config.join_len());
    let _ = writeln!(src, "const IDF_N_DOCS: u64 = {};", config.idf.n_docs());
    src.push('\n');

    let vocab: Vec<&str> = config.vocab.iter().map(String::as_str).collect();
    emit_str_array(&mut src, "VOCAB", &vocab);
    let stopwords: Vec<&str> = config.stopwords.iter().map(String::as_str).collect();
    emit_str_array(&mut src, "STOPWORDS", &stopwords);
    let idf_terms: Vec<&str> = config.idf.entries().map(|(t, _)| t).collect();
    let idf_dfs: Vec<u64> = config.idf.entries().map(|(_, df)| df).collect();
    emit_str_array(&mut src, "IDF_TERMS", &idf_terms);
    emit_u64_array(&mut src, "IDF_DFS", &idf_dfs);
    src.push('\n');

    for (name, static_name) in [
        ("embeddings", "EMBEDDINGS"),
        ("conv_q.filters", "CONV_Q_FILTERS"),
        ("conv_q.bias", "CONV_Q_BIAS"),
        ("conv_a.filters", "CONV_A_FILTERS"),
        ("conv_a.bias", "CONV_A_BIAS"),
        ("fc1.weight", "FC1_WEIGHT"),
        ("fc1.bias", "FC1_BIAS"),
        ("fc2.weight", "FC2_WEIGHT"),
        ("fc2.bias", "FC2_BIAS"),
    ] {
        let record = bundle.param(name).expect("validated bundle");
        emit_f64_array(&mut src, static_name, &record.weights);
    }
    src.push('\n');

    src.push_str(GEN_TEXT_AND_FORWARD);
    src.push_str(&gen_arm_fn("arm_q", "CONV_Q_FILTERS", "CONV_Q_BIAS"));
    src.push_str(&gen_arm_fn("arm_a", "CONV_A_FILTERS", "CONV_A_BIAS"));
    src.push_str(GEN_FORWARD_TAIL);

    if opts.emit_service {
        src.push_str(GEN_WIRE);
    }

    src.push_str(&gen_main(opts));

    let mut files = BTreeMap::new();
    files.insert("evaluator.rs".to_string(), src);
    Ok(GeneratedSource {
        files,
        entry_point: "evaluator.rs".to_string(),
    })
}

/// One convolution arm: wide conv with literal bounds, ReLU, column max.
/// The accumulation order matches the interpreter's im2col+GEMM path
/// (window-offset major, embedding-row minor), so results are bit-identical.
fn gen_arm_fn(fn_name: &str, filters: &str, bias: &str) -> String {
    format!(
        r#"
fn {fn_name}(sent: &[usize]) -> [f64; NUM_FILTERS] {{
    let len = sent.len();
    let n = len + FILTER_WIDTH - 1;
    let mut pooled = [0.0f64; NUM_FILTERS];
    for f in 0..NUM_FILTERS {{
        let mut best = f64::NEG_INFINITY;
        for j in 0..n {{
            let mut acc = 0.0f64;
            for o in 0..FILTER_WIDTH {{
                let t = j as isize + o as isize - (FILTER_WIDTH as isize - 1);
                if t < 0 || t >= len as isize {{
                    continue;
                }}
                let row = sent[t as usize] * EMBED_DIM;
                for r in 0..EMBED_DIM {{
                    acc += {filters}[(f * EMBED_DIM + r) * FILTER_WIDTH + o] * EMBEDDINGS[row + r];
                }}
            }}
            let v = acc + {bias}[f];
            let v = if v > 0.0 {{ v }} else {{ 0.0 }};
            if v > best {{
                best = v;
            }}
        }}
        pooled[f] = best;
    }}
    pooled
}}
"#
    )
}

/// Tokenizer, idf, overlap features, and environment setup for the emitted
/// program; mirrors the library semantics exactly.
const GEN_TEXT_AND_FORWARD: &str = r#"
struct Env {
    vocab: HashMap<&'static str, usize>,
    idf: HashMap<&'static str, u64>,
    stopwords: HashSet<&'static str>,
}

fn build_env() -> Env {
    Env {
        vocab: VOCAB.iter().enumerate().map(|(i, &t)| (t, i)).collect(),
        idf: IDF_TERMS.iter().copied().zip(IDF_DFS.iter().copied()).collect(),
        stopwords: STOPWORDS.iter().copied().collect(),
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| s.to_ascii_lowercase())
        .collect()
}

fn feature_idf(env: &Env, term: &str) -> f64 {
    let df = env.idf.get(term).copied().unwrap_or(0);
    ((IDF_N_DOCS + 1) as f64 / (df + 1) as f64).ln()
}

fn sorted_set(tokens: &[String]) -> Vec<&str> {
    let mut v: Vec<&str> = tokens.iter().map(String::as_str).collect();
    v.sort_unstable();
    v.dedup();
    v
}

// Inputs are sorted, deduplicated token sets; sums run in ascending term
// order to stay reproducible.
fn pair_features(env: &Env, q: &[&str], c: &[&str]) -> (f64, f64) {
    let mut inter = 0usize;
    let mut num = 0.0f64;
    for t in q {
        if c.binary_search(t).is_ok() {
            inter += 1;
            num += feature_idf(env, t);
        }
    }
    let denom = q.len() + c.len();
    let overlap = if denom == 0 { 0.0 } else { inter as f64 / denom as f64 };
    let mut den = 0.0f64;
    let (mut i, mut j) = (0usize, 0usize);
    while i < q.len() || j < c.len() {
        let t = if j >= c.len() || (i < q.len() && q[i] <= c[j]) {
            let t = q[i];
            if j < c.len() && c[j] == t {
                j += 1;
            }
            i += 1;
            t
        } else {
            let t = c[j];
            j += 1;
            t
        };
        den += feature_idf(env, t);
    }
    let idf_overlap = if den == 0.0 { 0.0 } else { num / den };
    (overlap, idf_overlap)
}

fn overlap_features(env: &Env, q: &[String], a: &[String]) -> [f64; 4] {
    let qs = sorted_set(q);
    let cs = sorted_set(a);
    let (o_all, i_all) = pair_features(env, &qs, &cs);
    let qn: Vec<&str> = qs.iter().copied().filter(|t| !env.stopwords.contains(t)).collect();
    let cn: Vec<&str> = cs.iter().copied().filter(|t| !env.stopwords.contains(t)).collect();
    let (o_ns, i_ns) = pair_features(env, &qn, &cn);
    [o_all, i_all, o_ns, i_ns]
}

fn embed_indices(env: &Env, tokens: &[String]) -> Vec<usize> {
    if tokens.is_empty() {
        return vec![0];
    }
    tokens
        .iter()
        .map(|t| env.vocab.get(t.as_str()).copied().unwrap_or(0))
        .collect()
}
"#;

const GEN_FORWARD_TAIL: &str = r#"
fn forward(env: &Env, question: &str, answer: &str) -> f64 {
    let q_tokens = tokenize(question);
    let a_tokens = tokenize(answer);
    let x_q = arm_q(&embed_indices(env, &q_tokens));
    let x_d = arm_a(&embed_indices(env, &a_tokens));
    let feat = overlap_features(env, &q_tokens, &a_tokens);
    let mut join = [0.0f64; JOIN_LEN];
    join[..NUM_FILTERS].copy_from_slice(&x_q);
    join[NUM_FILTERS..2 * NUM_FILTERS].copy_from_slice(&x_d);
    join[2 * NUM_FILTERS..].copy_from_slice(&feat);
    let mut hidden = [0.0f64; HIDDEN_SIZE];
    for i in 0..HIDDEN_SIZE {
        let mut acc = 0.0f64;
        for p in 0..JOIN_LEN {
            acc += FC1_WEIGHT[i * JOIN_LEN + p] * join[p];
        }
        let v = acc + FC1_BIAS[i];
        hidden[i] = if v > 0.0 { v } else { 0.0 };
    }
    let mut logits = [0.0f64; 2];
    for c in 0..2 {
        let mut acc = 0.0f64;
        for p in 0..HIDDEN_SIZE {
            acc += FC2_WEIGHT[c * HIDDEN_SIZE + p] * hidden[p];
        }
        logits[c] = acc + FC2_BIAS[c];
    }
    let m = if logits[0] > logits[1] { logits[0] } else { logits[1] };
    let e0 = (logits[0] - m).exp();
    let e1 = (logits[1] - m).exp();
    e1 / (e0 + e1)
}
"#;

/// Wire protocol for the emitted `--serve` mode: a standalone copy of the
/// length-prefixed JSON protocol the in-process service speaks.
const GEN_WIRE: &str = r#"
const MAX_FRAME_LEN: u32 = 1048576;
const MAX_JSON_DEPTH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
enum Json {
    Null,
    Bool(bool),
    Num(String),
    Str(String),
    Arr(Vec<Json>),
    Obj(Vec<(String, Json)>),
}

impl Json {
    fn get(&self, key: &str) -> Option<&Json> {
        match self {
            Json::Obj(pairs) => pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v),
            _ => None,
        }
    }

    fn as_str(&self) -> Option<&str> {
        match self {
            Json::Str(s) => Some(s),
            _ => None,
        }
    }
}

fn skip_ws(bytes: &[u8], pos: &mut usize) {
    while *pos < bytes.len() && matches!(bytes[*pos], b' ' | b'\t' | b'\n' | b'\r') {
        *pos += 1;
    }
}

fn parse_json(text: &str) -> Result<Json, String> {
    let bytes = text.as_bytes();
    let mut pos = 0;
    let v = parse_value(bytes, &mut pos, 0)?;
    skip_ws(bytes, &mut pos);
    if pos != bytes.len() {
        return Err("trailing bytes".into());
    }
    Ok(v)
}

fn parse_value(bytes: &[u8], pos: &mut usize, depth: usize) -> Result<Json, String> {
    if depth > MAX_JSON_DEPTH {
        return Err("nesting too deep".into());
    }
    skip_ws(bytes, pos);
    match bytes.get(*pos) {
        None => Err("unexpected end of input".into()),
        Some(b'{') => {
            *pos += 1;
            let mut pairs = Vec::new();
            skip_ws(bytes, pos);
            if bytes.get(*pos) == Some(&b'}') {
                *pos += 1;
                return Ok(Json::Obj(pairs));
            }
            loop {
                skip_ws(bytes, pos);
                if bytes.get(*pos) != Some(&b'"') {
                    return Err("expected object key".into());
                }
                let key = parse_string(bytes, pos)?;
                skip_ws(bytes, pos);
                if bytes.get(*pos) != Some(&b':') {
                    return Err("expected ':'".into());
                }
                *pos += 1;
                let value = parse_value(bytes, pos, depth + 1)?;
                pairs.push((key, value));
                skip_ws(bytes, pos);
                match bytes.get(*pos) {
                    Some(b',') => *pos += 1,
                    Some(b'}') => {
                        *pos += 1;
                        return Ok(Json::Obj(pairs));
                    }
                    _ => return Err("expected ',' or '}'".into()),
                }
            }
        }
        Some(b'[') => {
            *pos += 1;
            let mut items = Vec::new();
            skip_ws(bytes, pos);
            if bytes.get(*pos) == Some(&b']') {
                *pos += 1;
                return Ok(Json::Arr(items));
            }
            loop {
                items.push(parse_value(bytes, pos, depth + 1)?);
                skip_ws(bytes, pos);
                match bytes.get(*pos) {
                    Some(b',') => *pos += 1,
                    Some(b']') => {
                        *pos += 1;
                        return Ok(Json::Arr(items));
                    }
                    _ => return Err("expected ',' or ']'".into()),
                }
            }
        }
        Some(b'"') => Ok(Json::Str(parse_string(bytes, pos)?)),
        Some(b't') => parse_literal(bytes, pos, "true", Json::Bool(true)),
        Some(b'f') => parse_literal(bytes, pos, "false", Json::Bool(false)),
        Some(b'n') => parse_literal(bytes, pos, "null", Json::Null),
        Some(_) => parse_number(bytes, pos),
    }
}

fn parse_literal(bytes: &[u8], pos: &mut usize, lit: &str, value: Json) -> Result<Json, String> {
    if bytes[*pos..].starts_with(lit.as_bytes()) {
        *pos += lit.len();
        Ok(value)
    } else {
        Err("invalid literal".into())
    }
}

fn parse_number(bytes: &[u8], pos: &mut usize) -> Result<Json, String> {
    let start = *pos;
    if bytes.get(*pos) == Some(&b'-') {
        *pos += 1;
    }
    let digits = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    if *pos == digits {
        return Err("expected number".into());
    }
    if bytes.get(*pos) == Some(&b'.') {
        *pos += 1;
        let frac = *pos;
        while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
            *pos += 1;
        }
        if *pos == frac {
            return Err("missing fraction digits".into());
        }
    }
    if matches!(bytes.get(*pos), Some(b'e' | b'E')) {
        *pos += 1;
        if matches!(bytes.get(*pos), Some(b'+' | b'-')) {
            *pos += 1;
        }
        let exp = *pos;
        while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
            *pos += 1;
        }
        if *pos == exp {
            return Err("missing exponent digits".into());
        }
    }
    let text = std::str::from_utf8(&bytes[start..*pos]).map_err(|_| "bad number".to_string())?;
    text.parse::<f64>().map_err(|e| e.to_string())?;
    Ok(Json::Num(text.to_string()))
}

fn parse_string(bytes: &[u8], pos: &mut usize) -> Result<String, String> {
    *pos += 1; // opening quote
    let mut out = String::new();
    loop {
        match bytes.get(*pos) {
            None => return Err("unterminated string".into()),
            Some(b'"') => {
                *pos += 1;
                return Ok(out);
            }
            Some(b'\\') => {
                *pos += 1;
                match bytes.get(*pos) {
                    Some(b'"') => out.push('"'),
                    Some(b'\\') => out.push('\\'),
                    Some(b'/') => out.push('/'),
                    Some(b'b') => out.push('\u{0008}'),
                    Some(b'f') => out.push('\u{000C}'),
                    Some(b'n') => out.push('\n'),
                    Some(b'r') => out.push('\r'),
                    Some(b't') => out.push('\t'),
                    Some(b'u') => {
                        let hi = parse_hex4(bytes, *pos + 1)?;
                        *pos += 4;
                        let ch = if (0xD800..0xDC00).contains(&hi) {
                            if bytes.get(*pos + 1) != Some(&b'\\') || bytes.get(*pos + 2) != Some(&b'u') {
                                return Err("unpaired surrogate".into());
                            }
                            let lo = parse_hex4(bytes, *pos + 3)?;
                            *pos += 6;
                            if !(0xDC00..0xE000).contains(&lo) {
                                return Err("invalid low surrogate".into());
                            }
                            let c = 0x10000 + ((hi - 0xD800) << 10) + (lo - 0xDC00);
                            char::from_u32(c).ok_or("invalid surrogate pair")?
                        } else if (0xDC00..0xE000).contains(&hi) {
                            return Err("unpaired low surrogate".into());
                        } else {
                            char::from_u32(hi).ok_or("invalid \\u escape")?
                        };
                        out.push(ch);
                    }
                    _ => return Err("invalid escape".into()),
                }
                *pos += 1;
            }
            Some(&b) if b < 0x20 => return Err("raw control character".into()),
            Some(&b) => {
                let ch_len = match b {
                    0x00..=0x7F => 1,
                    0xC0..=0xDF => 2,
                    0xE0..=0xEF => 3,
                    _ => 4,
                };
                let end = (*pos + ch_len).min(bytes.len());
                let chunk = std::str::from_utf8(&bytes[*pos..end]).map_err(|_| "bad UTF-8".to_string())?;
                out.push_str(chunk);
                *pos += chunk.len();
            }
        }
    }
}

fn parse_hex4(bytes: &[u8], at: usize) -> Result<u32, String> {
    let chunk = bytes.get(at..at + 4).ok_or("truncated \\u escape")?;
    let s = std::str::from_utf8(chunk).map_err(|_| "invalid \\u escape".to_string())?;
    u32::from_str_radix(s, 16).map_err(|_| "invalid \\u escape".to_string())
}

fn escape_json(s: &str, out: &mut String) {
    out.push('"');
    for ch in s.chars() {
        match ch {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{0008}' => out.push_str("\\b"),
            '\u{000C}' => out.push_str("\\f"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

fn encode_result(id: u64, value: f64) -> String {
    format!("{{\"id\":{id},\"result\":{value}}}")
}

fn encode_error(id: u64, message: &str) -> String {
    let mut out = String::new();
    out.push_str("{\"id\":");
    out.push_str(&id.to_string());
    out.push_str(",\"error\":");
    escape_json(message, &mut out);
    out.push('}');
    out
}

enum FrameRead {
    Closed,
    TooLarge,
    Frame(Vec<u8>),
}

fn read_frame(stream: &mut std::net::TcpStream) -> std::io::Result<FrameRead> {
    use std::io::Read;
    let mut len_buf = [0u8; 4];
    let mut filled = 0;
    while filled < 4 {
        match stream.read(&mut len_buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(FrameRead::Closed),
            Ok(0) => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::UnexpectedEof,
                    "eof inside frame header",
                ))
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(e),
        }
    }
    let len = u32::from_be_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Ok(FrameRead::TooLarge);
    }
    let mut payload = vec![0u8; len as usize];
    stream.read_exact(&mut payload)?;
    Ok(FrameRead::Frame(payload))
}

fn write_frame(stream: &mut std::net::TcpStream, payload: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    stream.write_all(&(payload.len() as u32).to_be_bytes())?;
    stream.write_all(payload)?;
    stream.flush()
}

fn extract_id(value: &Json) -> Option<u64> {
    match value.get("id")? {
        Json::Num(text) => text.parse::<u64>().ok(),
        _ => None,
    }
}

fn serve_connection(env: &Env, mut stream: std::net::TcpStream) -> std::io::Result<()> {
    let _ = stream.set_nodelay(true);
    loop {
        match read_frame(&mut stream)? {
            FrameRead::Closed => return Ok(()),
            FrameRead::TooLarge => {
                let _ = write_frame(&mut stream, encode_error(0, "frame too large").as_bytes());
                return Ok(());
            }
            FrameRead::Frame(payload) => {
                let Ok(text) = std::str::from_utf8(&payload) else {
                    return Ok(());
                };
                let Ok(value) = parse_json(text) else {
                    return Ok(());
                };
                let Some(id) = extract_id(&value) else {
                    return Ok(());
                };
                let method = value.get("method").and_then(Json::as_str);
                if method != Some("getScore") {
                    write_frame(&mut stream, encode_error(id, "unknown method").as_bytes())?;
                    continue;
                }
                let params = value.get("params");
                let question = params.and_then(|p| p.get("question")).and_then(Json::as_str);
                let answer = params.and_then(|p| p.get("answer")).and_then(Json::as_str);
                match (question, answer) {
                    (Some(q), Some(a)) => {
                        let score = forward(env, q, a);
                        write_frame(&mut stream, encode_result(id, score).as_bytes())?;
                    }
                    _ => {
                        write_frame(&mut stream, encode_error(id, "invalid params").as_bytes())?;
                    }
                }
            }
        }
    }
}

fn run_serve(env: &Env, port: u16) -> Result<(), String> {
    let listener = std::net::TcpListener::bind(("127.0.0.1", port))
        .map_err(|e| format!("cannot bind port {port}: {e}"))?;
    if let Ok(addr) = listener.local_addr() {
        eprintln!("listening on {addr}");
    }
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = serve_connection(env, stream);
            }
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(format!("accept failed: {e}")),
        }
    }
}
"#;

fn gen_main(opts: &GenOptions) -> String {
    let mut src = String::new();
    src.push_str(
        r#"
fn run_score(env: &Env, question: &str, answer: &str) {
    println!("{:.16e}", forward(env, question, answer));
}
"#,
    );
    if opts.emit_batch_cli {
        src.push_str(
            r#"
fn run_batch(env: &Env, path: &str) -> Result<(), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read {path}: {e}"))?;
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let Some((q, a)) = line.split_once('\t') else {
            return Err(format!("line {}: expected question<TAB>answer", i + 1));
        };
        out.push_str(&format!("{:.16e}\n", forward(env, q, a)));
    }
    print!("{out}");
    Ok(())
}
"#,
        );
    }

    let mut usage = String::from("usage: evaluator --score <question> <answer>");
    if opts.emit_batch_cli {
        usage.push_str(" | --batch <file>");
    }
    if opts.emit_service {
        usage.push_str(" | --serve <port>");
    }

    src.push_str("\nfn main() {\n");
    src.push_str("    let args: Vec<String> = std::env::args().collect();\n");
    src.push_str("    let env = build_env();\n");
    src.push_str("    let outcome: Result<(), String> = match args.get(1).map(String::as_str) {\n");
    src.push_str("        Some(\"--score\") if args.len() == 4 => {\n");
    src.push_str("            run_score(&env, &args[2], &args[3]);\n");
    src.push_str("            Ok(())\n");
    src.push_str("        }\n");
    if opts.emit_batch_cli {
        src.push_str(
            "        Some(\"--batch\") if args.len() == 3 => run_batch(&env, &args[2]),\n",
        );
    }
    if opts.emit_service {
        src.push_str(
            "        Some(\"--serve\") if args.len() == 3 => match args[2].parse::<u16>() {\n",
        );
        src.push_str("            Ok(port) => run_serve(&env, port),\n");
        src.push_str("            Err(_) => Err(format!(\"invalid port {:?}\", args[2])),\n");
        src.push_str("        },\n");
    }
    src.push_str("        _ => {\n");
    let _ = writeln!(src, "            eprintln!({});", rust_str_literal(&usage));
    src.push_str("            std::process::exit(1);\n");
    src.push_str("        }\n");
    src.push_str("    };\n");
    src.push_str("    if let Err(message) = outcome {\n");
    src.push_str("        eprintln!(\"error: {message}\");\n");
    src.push_str("        std::process::exit(2);\n");
    src.push_str("    }\n");
    src.push_str("}\n");
    src
}

/// Locate a usable `rustc`: `$RUSTC` if set, else `rustc` on PATH.
pub fn find_rustc() -> Option<PathBuf> {
    let candidate = std::env::var_os("RUSTC")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("rustc"));
    let ok = Command::new(&candidate)
        .arg("--version")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false);
    ok.then_some(candidate)
}

/// Compile an emitted source tree with `rustc -O`; returns the binary path.
pub fn compile_generated(source: &GeneratedSource, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    source.write_to_dir(dir)?;
    let rustc = find_rustc()
        .ok_or_else(|| Error::Codegen("no rustc toolchain found on PATH or in $RUSTC".into()))?;
    let binary = dir.join("evaluator");
    let output = Command::new(rustc)
        .arg("-O")
        .arg("--edition=2021")
        .arg(dir.join(&source.entry_point))
        .arg("-o")
        .arg(&binary)
        .output()?;
    if !output.status.success() {
        return Err(Error::Codegen(format!(
            "generated code failed to compile:\n{}",
            String::from_utf8_lossy(&output.stderr)
        )));
    }
    Ok(binary)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ConformanceStatus {
    Pass,
    Fail {
        details: String,
    },
    /// The check could not run (typically: no toolchain). Not a failure.
    Skipped {
        reason: String,
    },
}

/// Outcome of one interpreter/compiled comparison run.
#[derive(Debug, Clone, PartialEq)]
pub struct ConformanceReport {
    pub status: ConformanceStatus,
    pub n_pairs: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        matches!(self.status, ConformanceStatus::Pass)
    }

    pub fn skipped(&self) -> bool {
        matches!(self.status, ConformanceStatus::Skipped { .. })
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.status {
            ConformanceStatus::Pass => write!(
                f,
                "conformance: PASS ({} pairs, max relative error {:.3e} <= {:.0e})",
                self.n_pairs, self.max_rel_error, self.tolerance
            ),
            ConformanceStatus::Fail { details } => write!(
                f,
                "conformance: FAIL ({} pairs, max relative error {:.3e}, tolerance {:.0e}): {details}",
                self.n_pairs, self.max_rel_error, self.tolerance
            ),
            ConformanceStatus::Skipped { reason } => {
                write!(f, "conformance: SKIPPED ({reason})")
            }
        }
    }
}

fn fail(details: String, n_pairs: usize) -> ConformanceReport {
    ConformanceReport {
        status: ConformanceStatus::Fail { details },
        n_pairs,
        max_rel_error: f64::NAN,
        tolerance: CONFORMANCE_TOLERANCE,
    }
}

/// Generate, compile, and batch-run the evaluator, comparing its scores to
/// the interpreter at relative tolerance 1e-6.
///
/// A missing toolchain yields `Skipped`, not a failure; a compile error of
/// the generated code is a failure carrying the compiler diagnostics.
pub fn compile_and_run_conformance(
    bundle: &ModelBundle,
    pairs: &[(String, String)],
) -> Result<ConformanceReport> {
    for (q, a) in pairs {
        if q.contains(['\t', '\n']) || a.contains(['\t', '\n']) {
            return Err(Error::InvalidArgument(
                "conformance pairs must not contain tabs or newlines".into(),
            ));
        }
    }
    let source = generate_evaluator(
        bundle,
        &GenOptions {
            emit_service: false,
            emit_batch_cli: true,
        },
    )?;
    if find_rustc().is_none() {
        return Ok(ConformanceReport {
            status: ConformanceStatus::Skipped {
                reason: "no rustc toolchain found on PATH or in $RUSTC".into(),
            },
            n_pairs: pairs.len(),
            max_rel_error: f64::NAN,
            tolerance: CONFORMANCE_TOLERANCE,
        });
    }

    let dir = tempfile::tempdir()?;
    let binary = match compile_generated(&source, dir.path()) {
        Ok(binary) => binary,
        Err(Error::Codegen(details)) => return Ok(fail(details, pairs.len())),
        Err(other) => return Err(other),
    };

    let batch_path = dir.path().join("pairs.tsv");
    let mut batch = String::new();
    for (q, a) in pairs {
        batch.push_str(q);
        batch.push('\t');
        batch.push_str(a);
        batch.push('\n');
    }
    std::fs::write(&batch_path, batch)?;

    let output = Command::new(&binary)
        .arg("--batch")
        .arg(&batch_path)
        .output()?;
    if !output.status.success() {
        return Ok(fail(
            format!(
                "compiled evaluator exited with {}:\n{}",
                output.status,
                String::from_utf8_lossy(&output.stderr)
            ),
            pairs.len(),
        ));
    }
    let stdout = String::from_utf8_lossy(&output.stdout);
    let compiled: Vec<f64> = match stdout
        .lines()
        .map(|l| l.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
    {
        Ok(scores) => scores,
        Err(e) => {
            return Ok(fail(
                format!("unparseable evaluator output: {e}"),
                pairs.len(),
            ))
        }
    };
    if compiled.len() != pairs.len() {
        return Ok(fail(
            format!("expected {} scores, got {}", pairs.len(), compiled.len()),
            pairs.len(),
        ));
    }

    let scorer = Scorer::new(bundle)?;
    let mut max_rel_error = 0.0f64;
    for ((q, a), &c) in pairs.iter().zip(&compiled) {
        let reference = scorer.score_pair(q, a);
        let rel = (c - reference).abs() / reference.abs().max(1e-12);
        if rel > max_rel_error {
            max_rel_error = rel;
        }
    }
    let status = if max_rel_error <= CONFORMANCE_TOLERANCE {
        ConformanceStatus::Pass
    } else {
        ConformanceStatus::Fail {
            details: "compiled scores diverge from the interpreter".into(),
        }
    };
    Ok(ConformanceReport {
        status,
        n_pairs: pairs.len(),
        max_rel_error,
        tolerance: CONFORMANCE_TOLERANCE,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_model, ModelConfig, UNK_TOKEN};
    use crate::textproc::{builtin_stopwords, IdfTable};

    fn tiny_bundle() -> ModelBundle {
        let config = ModelConfig {
            embed_dim: 2,
            filter_width: 2,
            num_filters: 1,
            hidden_size: 2,
            vocab: vec![UNK_TOKEN.into(), "a".into(), "b".into()],
            stopwords: builtin_stopwords().into_iter().collect(),
            idf: IdfTable::new(3, [("a".to_string(), 2)].into()).unwrap(),
        };
        init_model(&config, 99).unwrap()
    }

    #[test]
    fn generation_is_deterministic() {
        let bundle = tiny_bundle();
        let opts = GenOptions::default();
        let one = generate_evaluator(&bundle, &opts).unwrap();
        let two = generate_evaluator(&bundle, &opts).unwrap();
        assert_eq!(one, two);
    }

    #[test]
    fn options_require_at_least_one_surface() {
        let bundle = tiny_bundle();
        let err = generate_evaluator(
            &bundle,
            &GenOptions {
                emit_service: false,
                emit_batch_cli: false,
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn invalid_bundle_emits_nothing() {
        let mut bundle = tiny_bundle();
        bundle.params.retain(|p| p.name != "fc1.bias");
        assert!(generate_evaluator(&bundle, &GenOptions::default()).is_err());
    }

    #[test]
    fn non_finite_weights_rejected() {
        let mut bundle = tiny_bundle();
        bundle
            .params
            .iter_mut()
            .find(|p| p.name == "fc2.weight")
            .unwrap()
            .weights[0] = f64::NAN;
        let err = generate_evaluator(&bundle, &GenOptions::default()).unwrap_err();
        assert!(err.to_string().contains("non-finite"));
    }

    #[test]
    fn every_weight_appears_exactly_once() {
        let bundle = tiny_bundle();
        let source = generate_evaluator(&bundle, &GenOptions::default()).unwrap();
        let text = &source.files["evaluator.rs"];
        let total_weights: usize = bundle.params.iter().map(|p| p.weights.len()).sum();
        let mut emitted = 0usize;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("static ") {
                if let Some((_, dims)) = rest.split_once(": [f64; ") {
                    let n: usize = dims
                        .split(']')
                        .next()
                        .unwrap()
                        .parse()
                        .expect("array length literal");
                    emitted += n;
                }
            }
        }
        assert_eq!(emitted, total_weights);
    }

    #[test]
    fn float_literals_are_valid_rust() {
        assert_eq!(float_literal(1.0), "1.0");
        assert_eq!(float_literal(-0.0), "-0.0");
        assert_eq!(float_literal(0.25), "0.25");
        for v in [0.1234567890123456789, 1e300, -7.0, 1.0 / 3.0, 5e-324] {
            let lit = float_literal(v);
            assert!(lit.contains('.') || lit.contains('e'), "{lit}");
            assert_eq!(lit.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{lit}");
        }
    }

    #[test]
    fn string_literals_escape_everything() {
        assert_eq!(rust_str_literal("ab c"), "\"ab c\"");
        assert_eq!(rust_str_literal("a\"b"), "\"a\\\"b\"");
        assert_eq!(rust_str_literal("π"), "\"\\u{3c0}\"");
        assert_eq!(rust_str_literal("a\\b"), "\"a\\\\b\"");
    }

    #[test]
    fn service_emission_is_optional() {
        let bundle = tiny_bundle();
        let with = generate_evaluator(&bundle, &GenOptions::default()).unwrap();
        let without = generate_evaluator(
            &bundle,
            &GenOptions {
                emit_service: false,
                emit_batch_cli: true,
            },
        )
        .unwrap();
        assert!(with.files["evaluator.rs"].contains("--serve"));
        assert!(!without.files["evaluator.rs"].contains("--serve"));
    }
}
