//! Line-based trace log codec (`.pdt` files).
//!
//! ```text
//! PD1|SESSION|<session_id>|<config_label>|<clock_origin_ns>
//! PD1|EV|<seq>|<ts>|<kind>|<mechanism|_>|<key|_>|<tid>|<parent|_>|<0|1>|<frames|_>|<detail|_>
//! ```
//!
//! Fields never contain `|`; frames are joined with `;`. The bytes `%`, `|`,
//! `;`, LF and CR are written as `%XX`, and a value that is literally `_` is
//! written as `%5F` so it cannot be confused with an absent field.

use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::trace_model::{
    EventKind, ExecutionContext, Mechanism, TaskEvent, TaskKey, ThreadIdentity, TraceSession,
};

pub const MAGIC: &str = "PD1";
pub const FILE_EXTENSION: &str = "pdt";

const ABSENT: &str = "_";

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("missing PD1 session header")]
    MissingHeader,
    #[error("line {0}: malformed record")]
    MalformedLine(usize),
    #[error("line {0}: sequence number does not increase")]
    NonMonotonicSeq(usize),
    #[error("line {0}: unknown event kind")]
    UnknownKind(usize),
    #[error("line {0}: unknown mechanism")]
    UnknownMechanism(usize),
    #[error("read failed: {0}")]
    Io(#[from] io::Error),
}

impl ParseError {
    /// 1-based line the error refers to, if any.
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::MalformedLine(n)
            | ParseError::NonMonotonicSeq(n)
            | ParseError::UnknownKind(n)
            | ParseError::UnknownMechanism(n) => Some(*n),
            ParseError::MissingHeader | ParseError::Io(_) => None,
        }
    }
}

pub fn kind_tag(kind: EventKind) -> &'static str {
    match kind {
        EventKind::Spawn => "SPAWN",
        EventKind::Schedule => "SCHED",
        EventKind::Start => "START",
        EventKind::End => "END",
        EventKind::Cancel => "CANCEL",
    }
}

fn kind_from_tag(tag: &str) -> Option<EventKind> {
    Some(match tag {
        "SPAWN" => EventKind::Spawn,
        "SCHED" => EventKind::Schedule,
        "START" => EventKind::Start,
        "END" => EventKind::End,
        "CANCEL" => EventKind::Cancel,
        _ => return None,
    })
}

fn escape_into(out: &mut String, s: &str) {
    for c in s.chars() {
        match c {
            '%' => out.push_str("%25"),
            '|' => out.push_str("%7C"),
            ';' => out.push_str("%3B"),
            '\n' => out.push_str("%0A"),
            '\r' => out.push_str("%0D"),
            c => out.push(c),
        }
    }
}

fn push_field(out: &mut String, s: &str) {
    if s == ABSENT {
        out.push_str("%5F");
    } else {
        escape_into(out, s);
    }
}

fn push_opt(out: &mut String, s: Option<&str>) {
    match s {
        Some(s) => push_field(out, s),
        None => out.push_str(ABSENT),
    }
}

fn push_context(out: &mut String, ctx: Option<&ExecutionContext>) {
    let Some(ctx) = ctx else {
        out.push_str(ABSENT);
        return;
    };
    let frames = ctx.frames();
    if frames.len() == 1 && frames[0] == ABSENT {
        out.push_str("%5F");
        return;
    }
    for (i, f) in frames.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        escape_into(out, f);
    }
}

/// Session header line, without the trailing newline.
pub fn encode_header(session: &TraceSession) -> String {
    let mut out = String::from("PD1|SESSION|");
    push_field(&mut out, &session.session_id);
    out.push('|');
    push_field(&mut out, &session.config_label);
    write!(out, "|{}", session.clock_origin_ns).unwrap();
    out
}

/// One event line, without the trailing newline.
pub fn encode_event(event: &TaskEvent, seq: u64) -> String {
    let mut out = String::with_capacity(96);
    write!(
        out,
        "PD1|EV|{seq}|{}|{}|",
        event.timestamp_ns,
        kind_tag(event.kind)
    )
    .unwrap();
    out.push_str(event.mechanism.map_or(ABSENT, Mechanism::tag));
    out.push('|');
    push_opt(&mut out, event.task_key.as_ref().map(TaskKey::as_str));
    let t = &event.thread;
    write!(out, "|{}|", t.thread_id).unwrap();
    match t.parent_thread_id {
        Some(p) => write!(out, "{p}").unwrap(),
        None => out.push_str(ABSENT),
    }
    out.push_str(if t.is_main { "|1|" } else { "|0|" });
    push_context(&mut out, event.context.as_ref());
    out.push('|');
    push_opt(&mut out, event.detail.as_deref());
    out
}

/// Whole session as LF-terminated lines; events are numbered from 1.
pub fn encode_session(session: &TraceSession) -> String {
    let mut out = encode_header(session);
    out.push('\n');
    for (i, ev) in session.events.iter().enumerate() {
        out.push_str(&encode_event(ev, i as u64 + 1));
        out.push('\n');
    }
    out
}

pub fn write_session<W: Write>(mut w: W, session: &TraceSession) -> io::Result<()> {
    w.write_all(encode_header(session).as_bytes())?;
    w.write_all(b"\n")?;
    for (i, ev) in session.events.iter().enumerate() {
        w.write_all(encode_event(ev, i as u64 + 1).as_bytes())?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn write_session_file(path: impl AsRef<Path>, session: &TraceSession) -> io::Result<()> {
    let file = std::fs::File::create(path)?;
    write_session(io::BufWriter::new(file), session)
}

fn hex(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'A'..=b'F' => Some(b - b'A' + 10),
        b'a'..=b'f' => Some(b - b'a' + 10),
        _ => None,
    }
}

fn unescape(s: &str) -> Option<String> {
    if !s.contains('%') {
        return Some(s.to_owned());
    }
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hi = hex(*bytes.get(i + 1)?)?;
            let lo = hex(*bytes.get(i + 2)?)?;
            out.push(hi << 4 | lo);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

fn parse_u64(s: &str) -> Option<u64> {
    if s.is_empty() || !s.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    s.parse().ok()
}

fn opt_field(s: &str) -> Option<Option<String>> {
    if s == ABSENT {
        Some(None)
    } else {
        unescape(s).map(Some)
    }
}

fn parse_header(line: &str) -> Option<TraceSession> {
    let f: Vec<&str> = line.split('|').collect();
    if f.len() != 5 || f[0] != MAGIC || f[1] != "SESSION" {
        return None;
    }
    let mut session = TraceSession::new(unescape(f[2])?, unescape(f[3])?);
    session.clock_origin_ns = parse_u64(f[4])?;
    Some(session)
}

fn parse_event(line: &str, n: usize) -> Result<(u64, TaskEvent), ParseError> {
    let bad = || ParseError::MalformedLine(n);
    let f: Vec<&str> = line.split('|').collect();
    if f.len() != 12 || f[0] != MAGIC || f[1] != "EV" {
        return Err(bad());
    }
    let seq = parse_u64(f[2]).ok_or_else(bad)?;
    let timestamp_ns = parse_u64(f[3]).ok_or_else(bad)?;
    let kind = kind_from_tag(f[4]).ok_or(ParseError::UnknownKind(n))?;
    let mechanism = match f[5] {
        ABSENT => None,
        tag => Some(Mechanism::from_tag(tag).ok_or(ParseError::UnknownMechanism(n))?),
    };
    let task_key = opt_field(f[6]).ok_or_else(bad)?.map(TaskKey::from);
    let thread_id = parse_u64(f[7]).ok_or_else(bad)?;
    let parent_thread_id = match f[8] {
        ABSENT => None,
        p => Some(parse_u64(p).ok_or_else(bad)?),
    };
    let is_main = match f[9] {
        "0" => false,
        "1" => true,
        _ => return Err(bad()),
    };
    let context = match f[10] {
        ABSENT => None,
        "" => Some(ExecutionContext::new(Vec::new())),
        s => {
            let frames = s
                .split(';')
                .map(unescape)
                .collect::<Option<Vec<String>>>()
                .ok_or_else(bad)?;
            Some(ExecutionContext::new(frames))
        }
    };
    let detail = opt_field(f[11]).ok_or_else(bad)?;
    let event = TaskEvent {
        timestamp_ns,
        kind,
        mechanism,
        task_key,
        thread: ThreadIdentity {
            thread_id,
            parent_thread_id,
            is_main,
        },
        context,
        detail,
    };
    Ok((seq, event))
}

/// Parses a complete trace. Lines are LF-terminated; the final newline is
/// optional. Errors carry the 1-based line number.
pub fn parse_trace(bytes: &[u8]) -> Result<TraceSession, ParseError> {
    let body = bytes.strip_suffix(b"\n").unwrap_or(bytes);
    let mut lines = body.split(|&b| b == b'\n');
    let header = lines
        .next()
        .and_then(|l| std::str::from_utf8(l).ok())
        .filter(|l| !l.contains('\r'))
        .and_then(parse_header)
        .ok_or(ParseError::MissingHeader)?;
    let mut session = header;
    let mut last_seq: Option<u64> = None;
    for (i, raw) in lines.enumerate() {
        let n = i + 2;
        let line = std::str::from_utf8(raw)
            .ok()
            .filter(|l| !l.contains('\r'))
            .ok_or(ParseError::MalformedLine(n))?;
        let (seq, event) = parse_event(line, n)?;
        if last_seq.is_some_and(|prev| seq <= prev) {
            return Err(ParseError::NonMonotonicSeq(n));
        }
        last_seq = Some(seq);
        session.events.push(event);
    }
    Ok(session)
}

pub fn read_trace<R: Read>(mut r: R) -> Result<TraceSession, ParseError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf)?;
    parse_trace(&buf)
}

pub fn read_trace_file(path: impl AsRef<Path>) -> Result<TraceSession, ParseError> {
    read_trace(std::fs::File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace_model::test_support::{ev, main_thread, worker};

    fn sched_on_main() -> TaskEvent {
        let mut e = ev(EventKind::Schedule, "AFACADE#1", 100, main_thread());
        e.mechanism = Some(Mechanism::AsyncFacade);
        e.context = Some(ExecutionContext::new(vec!["a:b:1".into()]));
        e.detail = None;
        e
    }

    #[test]
    fn schedule_line_layout() {
        assert_eq!(
            encode_event(&sched_on_main(), 1),
            "PD1|EV|1|100|SCHED|AFACADE|AFACADE#1|1|_|1|a:b:1|_"
        );
    }

    #[test]
    fn pipes_in_detail_are_escaped() {
        let mut e = sched_on_main();
        e.detail = Some("a|b".into());
        assert!(encode_event(&e, 1).ends_with("|a%7Cb"));
    }

    #[test]
    fn spawn_has_no_mechanism() {
        let e = TaskEvent {
            timestamp_ns: 0,
            kind: EventKind::Spawn,
            mechanism: None,
            task_key: None,
            thread: ThreadIdentity::child(2, 1),
            context: None,
            detail: Some("worker".into()),
        };
        assert_eq!(encode_event(&e, 7), "PD1|EV|7|0|SPAWN|_|_|2|1|0|_|worker");
    }

    #[test]
    fn header_only_file_has_no_events() {
        let s = parse_trace(b"PD1|SESSION|s1|cfg|42\n").unwrap();
        assert_eq!(s.session_id, "s1");
        assert_eq!(s.config_label, "cfg");
        assert_eq!(s.clock_origin_ns, 42);
        assert!(s.events.is_empty());
    }

    #[test]
    fn seq_must_increase() {
        let mut session = TraceSession::new("s", "c");
        session.events = vec![sched_on_main(); 3];
        let text = encode_session(&session).replace("|EV|2|", "|EV|X|");
        let text = text.replace("|EV|3|", "|EV|2|").replace("|EV|X|", "|EV|3|");
        assert!(matches!(
            parse_trace(text.as_bytes()),
            Err(ParseError::NonMonotonicSeq(4))
        ));
    }

    #[test]
    fn positioned_errors() {
        let head = "PD1|SESSION|s|c|0\n";
        let good = encode_event(&sched_on_main(), 1);
        let cases: [(String, fn(&ParseError) -> bool); 6] = [
            (String::new(), |e| matches!(e, ParseError::MissingHeader)),
            (good.clone() + "\n", |e| {
                matches!(e, ParseError::MissingHeader)
            }),
            (format!("{head}{}\n", good.replace("SCHED", "QUEUE")), |e| {
                matches!(e, ParseError::UnknownKind(2))
            }),
            (
                format!(
                    "{head}{good}\n{}\n",
                    good.replace("|1|100|", "|2|100|")
                        .replace("AFACADE|", "FIBER|")
                ),
                |e| matches!(e, ParseError::UnknownMechanism(3)),
            ),
            (format!("{head}{good}\r\n"), |e| {
                matches!(e, ParseError::MalformedLine(2))
            }),
            (format!("{head}\n{good}\n"), |e| {
                matches!(e, ParseError::MalformedLine(2))
            }),
        ];
        for (text, check) in cases {
            let err = parse_trace(text.as_bytes()).unwrap_err();
            assert!(check(&err), "{text:?} gave {err:?}");
        }
    }

    #[test]
    fn sentinel_lookalikes_round_trip() {
        let mut session = TraceSession::new("_", "%|;\n\r");
        let mut e = ev(EventKind::Start, "_", 5, worker(3));
        e.mechanism = Some(Mechanism::PoolExecutor);
        e.context = Some(ExecutionContext::new(vec!["_".into()]));
        e.detail = Some("_".into());
        session.events.push(e);
        let mut e = ev(EventKind::End, "k;1", 6, worker(3));
        e.mechanism = Some(Mechanism::PoolExecutor);
        e.context = Some(ExecutionContext::new(vec!["_".into(), "x:y:1".into()]));
        e.detail = Some(String::new());
        session.events.push(e);
        let text = encode_session(&session);
        assert_eq!(parse_trace(text.as_bytes()).unwrap(), session);
    }

    #[test]
    fn bad_escapes_are_malformed() {
        let good = encode_event(&sched_on_main(), 1);
        for bad in ["%", "%4", "%G0", "%FF"] {
            let text = format!("PD1|SESSION|s|c|0\n{}\n", good.replace("a:b:1", bad));
            assert!(
                matches!(
                    parse_trace(text.as_bytes()),
                    Err(ParseError::MalformedLine(2))
                ),
                "{bad}"
            );
        }
    }
}
