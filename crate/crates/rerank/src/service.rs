//! Cross-process scoring service: `getScore(question, answer) -> double`
//! over a length-prefixed wire protocol.
//!
//! A frame is a 32-bit big-endian payload length (capped at 1 MiB) followed
//! by that many bytes of UTF-8 JSON. Requests look like
//! `{"id":1,"method":"getScore","params":{"question":"...","answer":"..."}}`
//! and responses like `{"id":1,"result":0.5}` or `{"id":1,"error":"..."}`.
//! Response bytes are canonical: fixed field order, no extra whitespace,
//! floats as the shortest decimal that parses back to the same 64-bit value.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use crate::error::{Error, Result};
use crate::inference::Scorer;

/// Hard cap on frame payload size.
pub const MAX_FRAME_LEN: u32 = 1_048_576;

/// Default service port, overridable per [`PORT_ENV_VAR`] or CLI flag.
pub const DEFAULT_PORT: u16 = 9090;

/// Environment variable consulted for the default port.
pub const PORT_ENV_VAR: &str = "RERANKD_PORT";

pub mod wire {
    //! Frame and message encoding. Kept dependency-free so the generated
    //! evaluator can carry an identical standalone copy.

    use super::*;

    /// Raw JSON value; numbers keep their source text so integer ids and
    /// floats can be re-parsed exactly.
    #[derive(Debug, Clone, PartialEq)]
    pub enum JsonValue {
        Null,
        Bool(bool),
        Num(String),
        Str(String),
        Arr(Vec<JsonValue>),
        Obj(Vec<(String, JsonValue)>),
    }

    impl JsonValue {
        pub fn get(&self, key: &str) -> Option<&JsonValue> {
            match self {
                JsonValue::Obj(pairs) => pairs.iter().find(|(k, _)| k == key).map(|(_, v)| v),
                _ => None,
            }
        }

        pub fn as_str(&self) -> Option<&str> {
            match self {
                JsonValue::Str(s) => Some(s),
                _ => None,
            }
        }
    }

    const MAX_DEPTH: usize = 32;

    /// Parse one JSON value covering the whole input. Never panics: any
    /// malformed byte sequence yields an error string.
    pub fn parse_json(text: &str) -> std::result::Result<JsonValue, String> {
        let bytes = text.as_bytes();
        let mut pos = 0;
        let value = parse_value(bytes, &mut pos, 0)?;
        skip_ws(bytes, &mut pos);
        if pos != bytes.len() {
            return Err(format!("trailing bytes at offset {pos}"));
        }
        Ok(value)
    }

    fn skip_ws(bytes: &[u8], pos: &mut usize) {
        while *pos < bytes.len() && matches!(bytes[*pos], b' ' | b'\t' | b'\n' | b'\r') {
            *pos += 1;
        }
    }

    fn parse_value(
        bytes: &[u8],
        pos: &mut usize,
        depth: usize,
    ) -> std::result::Result<JsonValue, String> {
        if depth > MAX_DEPTH {
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
                    return Ok(JsonValue::Obj(pairs));
                }
                loop {
                    skip_ws(bytes, pos);
                    if bytes.get(*pos) != Some(&b'"') {
                        return Err("expected object key".into());
                    }
                    let key = parse_string(bytes, pos)?;
                    skip_ws(bytes, pos);
                    if bytes.get(*pos) != Some(&b':') {
                        return Err("expected ':' after key".into());
                    }
                    *pos += 1;
                    let value = parse_value(bytes, pos, depth + 1)?;
                    pairs.push((key, value));
                    skip_ws(bytes, pos);
                    match bytes.get(*pos) {
                        Some(b',') => *pos += 1,
                        Some(b'}') => {
                            *pos += 1;
                            return Ok(JsonValue::Obj(pairs));
                        }
                        _ => return Err("expected ',' or '}' in object".into()),
                    }
                }
            }
            Some(b'[') => {
                *pos += 1;
                let mut items = Vec::new();
                skip_ws(bytes, pos);
                if bytes.get(*pos) == Some(&b']') {
                    *pos += 1;
                    return Ok(JsonValue::Arr(items));
                }
                loop {
                    items.push(parse_value(bytes, pos, depth + 1)?);
                    skip_ws(bytes, pos);
                    match bytes.get(*pos) {
                        Some(b',') => *pos += 1,
                        Some(b']') => {
                            *pos += 1;
                            return Ok(JsonValue::Arr(items));
                        }
                        _ => return Err("expected ',' or ']' in array".into()),
                    }
                }
            }
            Some(b'"') => Ok(JsonValue::Str(parse_string(bytes, pos)?)),
            Some(b't') => parse_literal(bytes, pos, "true", JsonValue::Bool(true)),
            Some(b'f') => parse_literal(bytes, pos, "false", JsonValue::Bool(false)),
            Some(b'n') => parse_literal(bytes, pos, "null", JsonValue::Null),
            Some(_) => parse_number(bytes, pos),
        }
    }

    fn parse_literal(
        bytes: &[u8],
        pos: &mut usize,
        lit: &str,
        value: JsonValue,
    ) -> std::result::Result<JsonValue, String> {
        if bytes[*pos..].starts_with(lit.as_bytes()) {
            *pos += lit.len();
            Ok(value)
        } else {
            Err(format!("invalid literal at offset {pos}"))
        }
    }

    fn parse_number(bytes: &[u8], pos: &mut usize) -> std::result::Result<JsonValue, String> {
        let start = *pos;
        if bytes.get(*pos) == Some(&b'-') {
            *pos += 1;
        }
        let digits_start = *pos;
        while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
            *pos += 1;
        }
        if *pos == digits_start {
            return Err(format!("expected number at offset {start}"));
        }
        if bytes.get(*pos) == Some(&b'.') {
            *pos += 1;
            let frac_start = *pos;
            while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
                *pos += 1;
            }
            if *pos == frac_start {
                return Err("missing fraction digits".into());
            }
        }
        if matches!(bytes.get(*pos), Some(b'e' | b'E')) {
            *pos += 1;
            if matches!(bytes.get(*pos), Some(b'+' | b'-')) {
                *pos += 1;
            }
            let exp_start = *pos;
            while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
                *pos += 1;
            }
            if *pos == exp_start {
                return Err("missing exponent digits".into());
            }
        }
        let text = std::str::from_utf8(&bytes[start..*pos])
            .map_err(|_| "invalid number bytes".to_string())?;
        // reject numbers f64 cannot represent at all (parse errors)
        text.parse::<f64>().map_err(|e| e.to_string())?;
        Ok(JsonValue::Num(text.to_string()))
    }

    fn parse_string(bytes: &[u8], pos: &mut usize) -> std::result::Result<String, String> {
        debug_assert_eq!(bytes.get(*pos), Some(&b'"'));
        *pos += 1;
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
                                // high surrogate; require a low surrogate next
                                if bytes.get(*pos + 1) != Some(&b'\\')
                                    || bytes.get(*pos + 2) != Some(&b'u')
                                {
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
                Some(&b) if b < 0x20 => return Err("raw control character in string".into()),
                Some(_) => {
                    // copy one UTF-8 scalar; input is already valid UTF-8
                    let s = &bytes[*pos..];
                    let ch_len = utf8_len(s[0]);
                    let chunk = std::str::from_utf8(&s[..ch_len.min(s.len())])
                        .map_err(|_| "invalid UTF-8 in string".to_string())?;
                    out.push_str(chunk);
                    *pos += chunk.len();
                }
            }
        }
    }

    fn utf8_len(b: u8) -> usize {
        match b {
            0x00..=0x7F => 1,
            0xC0..=0xDF => 2,
            0xE0..=0xEF => 3,
            _ => 4,
        }
    }

    fn parse_hex4(bytes: &[u8], at: usize) -> std::result::Result<u32, String> {
        let chunk = bytes
            .get(at..at + 4)
            .ok_or_else(|| "truncated \\u escape".to_string())?;
        let s = std::str::from_utf8(chunk).map_err(|_| "invalid \\u escape".to_string())?;
        u32::from_str_radix(s, 16).map_err(|_| "invalid \\u escape".to_string())
    }

    /// Escape a string into `out` using the canonical convention: `"`, `\`,
    /// and the short control escapes, with remaining control characters as
    /// `\u00XX`; everything else verbatim UTF-8.
    pub fn escape_json_string(s: &str, out: &mut String) {
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

    /// Shortest decimal representation that parses back to the identical
    /// 64-bit float.
    pub fn format_f64(v: f64) -> String {
        debug_assert!(v.is_finite(), "wire floats must be finite");
        format!("{v}")
    }

    /// A `getScore` call.
    #[derive(Debug, Clone, PartialEq)]
    pub struct Request {
        pub id: u64,
        pub method: String,
        pub question: String,
        pub answer: String,
    }

    #[derive(Debug, Clone, PartialEq)]
    pub enum ResponseBody {
        Result(f64),
        Error(String),
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct Response {
        pub id: u64,
        pub body: ResponseBody,
    }

    /// Why an incoming request could not be served.
    #[derive(Debug)]
    pub enum RequestError {
        /// No id is recoverable; the connection must be dropped.
        Unrecoverable(String),
        /// The request id is known; reply with an error response.
        WithId { id: u64, message: String },
    }

    pub fn encode_request(req: &Request) -> String {
        let mut out = String::new();
        out.push_str("{\"id\":");
        out.push_str(&req.id.to_string());
        out.push_str(",\"method\":");
        escape_json_string(&req.method, &mut out);
        out.push_str(",\"params\":{\"question\":");
        escape_json_string(&req.question, &mut out);
        out.push_str(",\"answer\":");
        escape_json_string(&req.answer, &mut out);
        out.push_str("}}");
        out
    }

    /// Canonical response bytes: id first, then result or error.
    pub fn encode_response(resp: &Response) -> String {
        let mut out = String::new();
        out.push_str("{\"id\":");
        out.push_str(&resp.id.to_string());
        match &resp.body {
            ResponseBody::Result(v) => {
                out.push_str(",\"result\":");
                out.push_str(&format_f64(*v));
            }
            ResponseBody::Error(msg) => {
                out.push_str(",\"error\":");
                escape_json_string(msg, &mut out);
            }
        }
        out.push('}');
        out
    }

    fn extract_id(value: &JsonValue) -> Option<u64> {
        match value.get("id")? {
            JsonValue::Num(text) => text.parse::<u64>().ok(),
            _ => None,
        }
    }

    pub fn decode_request(text: &str) -> std::result::Result<Request, RequestError> {
        let value = parse_json(text).map_err(RequestError::Unrecoverable)?;
        let id = extract_id(&value)
            .ok_or_else(|| RequestError::Unrecoverable("missing or invalid id".into()))?;
        let method =
            value
                .get("method")
                .and_then(JsonValue::as_str)
                .ok_or(RequestError::WithId {
                    id,
                    message: "missing method".into(),
                })?;
        if method != "getScore" {
            return Err(RequestError::WithId {
                id,
                message: "unknown method".into(),
            });
        }
        let params = value.get("params").ok_or(RequestError::WithId {
            id,
            message: "missing params".into(),
        })?;
        let question = params.get("question").and_then(JsonValue::as_str);
        let answer = params.get("answer").and_then(JsonValue::as_str);
        match (question, answer) {
            (Some(q), Some(a)) => Ok(Request {
                id,
                method: method.to_string(),
                question: q.to_string(),
                answer: a.to_string(),
            }),
            _ => Err(RequestError::WithId {
                id,
                message: "invalid params".into(),
            }),
        }
    }

    pub fn decode_response(text: &str) -> std::result::Result<Response, String> {
        let value = parse_json(text)?;
        let id = extract_id(&value).ok_or("missing or invalid id in response")?;
        match (value.get("result"), value.get("error")) {
            (Some(JsonValue::Num(num)), None) => {
                let v = num.parse::<f64>().map_err(|e| e.to_string())?;
                Ok(Response {
                    id,
                    body: ResponseBody::Result(v),
                })
            }
            (None, Some(JsonValue::Str(msg))) => Ok(Response {
                id,
                body: ResponseBody::Error(msg.clone()),
            }),
            _ => Err("response must carry exactly one of result or error".into()),
        }
    }

    /// What a frame read produced.
    #[derive(Debug)]
    pub enum FrameRead {
        /// Peer closed the connection at a frame boundary.
        Closed,
        /// Declared length exceeds [`MAX_FRAME_LEN`]; payload not read.
        TooLarge(u32),
        Frame(Vec<u8>),
    }

    pub fn read_frame(r: &mut impl Read) -> std::io::Result<FrameRead> {
        let mut len_buf = [0u8; 4];
        let mut filled = 0;
        while filled < 4 {
            match r.read(&mut len_buf[filled..]) {
                Ok(0) if filled == 0 => return Ok(FrameRead::Closed),
                Ok(0) => {
                    return Err(std::io::Error::new(
                        ErrorKind::UnexpectedEof,
                        "eof inside frame header",
                    ))
                }
                Ok(n) => filled += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            }
        }
        let len = u32::from_be_bytes(len_buf);
        if len > MAX_FRAME_LEN {
            return Ok(FrameRead::TooLarge(len));
        }
        let mut payload = vec![0u8; len as usize];
        r.read_exact(&mut payload)?;
        Ok(FrameRead::Frame(payload))
    }

    pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> std::io::Result<()> {
        debug_assert!(payload.len() as u64 <= MAX_FRAME_LEN as u64);
        w.write_all(&(payload.len() as u32).to_be_bytes())?;
        w.write_all(payload)?;
        w.flush()
    }
}

use wire::{FrameRead, Request, RequestError, Response, ResponseBody};

/// Anything that can answer `getScore`. Implemented by the model scorer and
/// by benchmark stubs.
pub trait ScoreHandler {
    fn get_score(&mut self, question: &str, answer: &str) -> std::result::Result<f64, String>;
}

impl ScoreHandler for Scorer<'_> {
    fn get_score(&mut self, question: &str, answer: &str) -> std::result::Result<f64, String> {
        Ok(self.score_pair(question, answer))
    }
}

/// Single-threaded score server: accepts one connection at a time and
/// processes its requests strictly sequentially.
pub struct ScoreServer {
    listener: TcpListener,
    read_timeout: Option<Duration>,
}

impl ScoreServer {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Self> {
        let listener = TcpListener::bind(addr).map_err(Error::Transport)?;
        Ok(Self {
            listener,
            read_timeout: None,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener.local_addr().map_err(Error::Transport)
    }

    /// Guard against connections that stall mid-frame.
    pub fn set_read_timeout(&mut self, timeout: Option<Duration>) {
        self.read_timeout = timeout;
    }

    /// Accept loop; runs until the process is torn down. Malformed traffic
    /// produces error responses or dropped connections, never a panic.
    pub fn run<H: ScoreHandler>(&self, handler: &mut H) -> Result<()> {
        loop {
            let (stream, _peer) = match self.listener.accept() {
                Ok(pair) => pair,
                Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                Err(e) => return Err(Error::Transport(e)),
            };
            // Connection-level failures just return us to the accept loop.
            let _ = self.serve_connection(stream, handler);
        }
    }

    fn serve_connection<H: ScoreHandler>(
        &self,
        mut stream: TcpStream,
        handler: &mut H,
    ) -> std::io::Result<()> {
        let _ = stream.set_nodelay(true);
        stream.set_read_timeout(self.read_timeout)?;
        loop {
            match wire::read_frame(&mut stream)? {
                FrameRead::Closed => return Ok(()),
                FrameRead::TooLarge(_len) => {
                    // No id is available before the payload is parsed; the
                    // cap violation is reported under id 0, then the
                    // connection is dropped.
                    let resp = Response {
                        id: 0,
                        body: ResponseBody::Error("frame too large".into()),
                    };
                    let _ = wire::write_frame(&mut stream, wire::encode_response(&resp).as_bytes());
                    return Ok(());
                }
                FrameRead::Frame(payload) => {
                    let Ok(text) = std::str::from_utf8(&payload) else {
                        return Ok(()); // not UTF-8: no id recoverable, drop
                    };
                    match wire::decode_request(text) {
                        Ok(req) => {
                            let body = match handler.get_score(&req.question, &req.answer) {
                                Ok(score) => ResponseBody::Result(score),
                                Err(msg) => ResponseBody::Error(msg),
                            };
                            let resp = Response { id: req.id, body };
                            wire::write_frame(
                                &mut stream,
                                wire::encode_response(&resp).as_bytes(),
                            )?;
                        }
                        Err(RequestError::WithId { id, message }) => {
                            let resp = Response {
                                id,
                                body: ResponseBody::Error(message),
                            };
                            wire::write_frame(
                                &mut stream,
                                wire::encode_response(&resp).as_bytes(),
                            )?;
                        }
                        Err(RequestError::Unrecoverable(_)) => return Ok(()),
                    }
                }
            }
        }
    }
}

/// Bind 127.0.0.1:`port` and serve forever (shutdown is process teardown,
/// mirroring a simple single-threaded RPC server).
pub fn serve<H: ScoreHandler>(handler: &mut H, port: u16) -> Result<()> {
    let server = ScoreServer::bind(("127.0.0.1", port))?;
    server.run(handler)
}

/// Client side: one persistent connection, one outstanding request at a
/// time, monotonically increasing ids.
pub struct ScoreClient {
    stream: TcpStream,
    next_id: u64,
}

impl ScoreClient {
    pub fn connect(endpoint: impl ToSocketAddrs) -> Result<Self> {
        let stream = TcpStream::connect(endpoint).map_err(Error::Transport)?;
        let _ = stream.set_nodelay(true);
        Ok(Self { stream, next_id: 1 })
    }

    pub fn get_score(&mut self, question: &str, answer: &str) -> Result<f64> {
        let id = self.next_id;
        self.next_id += 1;
        let req = Request {
            id,
            method: "getScore".into(),
            question: question.into(),
            answer: answer.into(),
        };
        wire::write_frame(&mut self.stream, wire::encode_request(&req).as_bytes())
            .map_err(Error::Transport)?;
        let payload = match wire::read_frame(&mut self.stream).map_err(Error::Transport)? {
            FrameRead::Closed => {
                return Err(Error::Transport(std::io::Error::new(
                    ErrorKind::ConnectionReset,
                    "server closed the connection",
                )))
            }
            FrameRead::TooLarge(len) => return Err(Error::FrameTooLarge(len as u64)),
            FrameRead::Frame(payload) => payload,
        };
        let text = std::str::from_utf8(&payload)
            .map_err(|_| Error::Protocol("response is not UTF-8".into()))?;
        let resp = wire::decode_response(text).map_err(Error::Protocol)?;
        if resp.id != id {
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {id}",
                resp.id
            )));
        }
        match resp.body {
            ResponseBody::Result(v) => Ok(v),
            ResponseBody::Error(msg) => Err(Error::Remote(msg)),
        }
    }
}

/// One-shot convenience: connect, issue a single `getScore`, disconnect.
pub fn client_get_score(endpoint: &str, question: &str, answer: &str) -> Result<f64> {
    ScoreClient::connect(endpoint)?.get_score(question, answer)
}

#[cfg(test)]
mod tests {
    use super::wire::*;
    use super::*;

    #[test]
    fn response_bytes_are_canonical() {
        let resp = Response {
            id: 7,
            body: ResponseBody::Result(0.5),
        };
        assert_eq!(encode_response(&resp), r#"{"id":7,"result":0.5}"#);
        let err = Response {
            id: 3,
            body: ResponseBody::Error("unknown method".into()),
        };
        assert_eq!(
            encode_response(&err),
            r#"{"id":3,"error":"unknown method"}"#
        );
    }

    #[test]
    fn request_encoding_and_decoding_round_trip() {
        let req = Request {
            id: 12,
            method: "getScore".into(),
            question: "what is\tthe \"sky\"?".into(),
            answer: "blue \\ thing\n".into(),
        };
        let text = encode_request(&req);
        let back = decode_request(&text).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn float_round_trip_through_text() {
        for v in [0.5, 1.0, 0.1 + 0.2, 1e-17, 0.9999999999999999] {
            let s = format_f64(v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }

    #[test]
    fn decode_rejects_unknown_method_with_id() {
        let err = decode_request(r#"{"id":4,"method":"foo","params":{}}"#).unwrap_err();
        match err {
            RequestError::WithId { id, message } => {
                assert_eq!(id, 4);
                assert_eq!(message, "unknown method");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn decode_without_id_is_unrecoverable() {
        assert!(matches!(
            decode_request(r#"{"method":"getScore"}"#),
            Err(RequestError::Unrecoverable(_))
        ));
        assert!(matches!(
            decode_request("not json"),
            Err(RequestError::Unrecoverable(_))
        ));
        // fractional and negative ids are invalid
        assert!(matches!(
            decode_request(r#"{"id":1.5,"method":"getScore"}"#),
            Err(RequestError::Unrecoverable(_))
        ));
        assert!(matches!(
            decode_request(r#"{"id":-2,"method":"getScore"}"#),
            Err(RequestError::Unrecoverable(_))
        ));
    }

    #[test]
    fn parser_handles_escapes_and_rejects_junk() {
        let v = parse_json(r#"{"s":"aA\né😀"}"#).unwrap();
        assert_eq!(v.get("s").unwrap().as_str().unwrap(), "aA\né😀");
        assert!(parse_json("{").is_err());
        assert!(parse_json("[1,]").is_err());
        assert!(parse_json(r#"{"a":}"#).is_err());
        assert!(parse_json("\"\\q\"").is_err());
    }

    #[test]
    fn parser_rejects_deep_nesting() {
        let mut s = String::new();
        for _ in 0..100 {
            s.push('[');
        }
        for _ in 0..100 {
            s.push(']');
        }
        assert!(parse_json(&s).is_err());
    }

    #[test]
    fn frame_round_trip() {
        let mut buf = Vec::new();
        write_frame(&mut buf, b"{\"id\":1}").unwrap();
        assert_eq!(&buf[..4], &8u32.to_be_bytes());
        let mut cursor = std::io::Cursor::new(buf);
        match read_frame(&mut cursor).unwrap() {
            FrameRead::Frame(p) => assert_eq!(p, b"{\"id\":1}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn oversized_frame_detected_without_reading_payload() {
        let mut buf = Vec::new();
        buf.extend_from_slice(&(MAX_FRAME_LEN + 1).to_be_bytes());
        let mut cursor = std::io::Cursor::new(buf);
        assert!(matches!(
            read_frame(&mut cursor).unwrap(),
            FrameRead::TooLarge(_)
        ));
    }

    #[test]
    fn clean_eof_reports_closed() {
        let mut cursor = std::io::Cursor::new(Vec::<u8>::new());
        assert!(matches!(
            read_frame(&mut cursor).unwrap(),
            FrameRead::Closed
        ));
    }
}
