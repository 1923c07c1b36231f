//! Reader for the tab-separated Zeek `http.log` dialect.

use super::TrafficEvent;

const REQUIRED: [&str; 9] = [
    "ts",
    "id.orig_h",
    "id.orig_p",
    "id.resp_h",
    "id.resp_p",
    "method",
    "host",
    "uri",
    "status_code",
];

struct Columns {
    ts: usize,
    orig_h: usize,
    orig_p: usize,
    resp_h: usize,
    resp_p: usize,
    method: usize,
    uri: usize,
    status: usize,
}

impl Columns {
    fn from_header(names: &[&str]) -> Option<Self> {
        let find = |n: &str| names.iter().position(|c| *c == n);
        if REQUIRED.iter().any(|r| find(r).is_none()) {
            return None;
        }
        Some(Self {
            ts: find("ts")?,
            orig_h: find("id.orig_h")?,
            orig_p: find("id.orig_p")?,
            resp_h: find("id.resp_h")?,
            resp_p: find("id.resp_p")?,
            method: find("method")?,
            uri: find("uri")?,
            status: find("status_code")?,
        })
    }
}

/// Returns the parsed events and the number of data records seen.
pub(super) fn parse(text: &str) -> (Vec<TrafficEvent>, usize) {
    let mut separator = String::from("\t");
    let mut unset = String::from("-");
    let mut columns: Option<Columns> = None;
    let mut records = 0;
    let mut events = Vec::new();

    for line in text.lines() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        if let Some(directive) = line.strip_prefix('#') {
            // directives after #separator use the declared separator
            let (key, value) = directive
                .split_once(separator.as_str())
                .filter(|(k, _)| !k.contains(' '))
                .or_else(|| directive.split_once([' ', '\t']))
                .unwrap_or((directive, ""));
            match key {
                "separator" => separator = unescape(value.trim()),
                "unset_field" => unset = value.trim().to_string(),
                "fields" => {
                    let names: Vec<&str> = value.split(separator.as_str()).collect();
                    columns = Columns::from_header(&names);
                }
                _ => {}
            }
            continue;
        }
        records += 1;
        let Some(cols) = &columns else {
            continue;
        };
        let fields: Vec<&str> = line.split(separator.as_str()).collect();
        if let Some(ev) = record(cols, &fields, &unset) {
            if ev.validate().is_ok() {
                events.push(ev);
            }
        }
    }
    (events, records)
}

fn record(cols: &Columns, fields: &[&str], unset: &str) -> Option<TrafficEvent> {
    let get = |i: usize| fields.get(i).copied().filter(|v| *v != unset && !v.is_empty());
    let ts = parse_ts(get(cols.ts)?)?;
    let status = match fields.get(cols.status)? {
        v if *v == unset => 0,
        v => v.parse().ok()?,
    };
    Some(TrafficEvent {
        ts,
        orig_host: get(cols.orig_h)?.to_string(),
        orig_port: get(cols.orig_p)?.parse().ok()?,
        resp_host: get(cols.resp_h)?.to_string(),
        resp_port: get(cols.resp_p)?.parse().ok()?,
        method: get(cols.method)?.to_string(),
        uri: get(cols.uri)?.to_string(),
        status,
        req_headers: None,
        resp_headers: None,
        req_body: None,
        resp_body: None,
        req_body_truncated: false,
        resp_body_truncated: false,
        proxy_generated: false,
    })
}

/// Epoch seconds with an optional fraction, to microseconds.
pub(crate) fn parse_ts(raw: &str) -> Option<i64> {
    let (secs, frac) = raw.split_once('.').unwrap_or((raw, ""));
    if secs.is_empty() || !secs.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    if !frac.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let secs: i64 = secs.parse().ok()?;
    let mut micros: i64 = 0;
    for (i, b) in frac.bytes().take(6).enumerate() {
        micros += i64::from(b - b'0') * 10_i64.pow(5 - i as u32);
    }
    secs.checked_mul(1_000_000)?.checked_add(micros)
}

fn unescape(raw: &str) -> String {
    let mut out = String::new();
    let mut rest = raw;
    while let Some(pos) = rest.find("\\x") {
        out.push_str(&rest[..pos]);
        let hex = rest.get(pos + 2..pos + 4);
        match hex.and_then(|h| u8::from_str_radix(h, 16).ok()) {
            Some(b) => {
                out.push(b as char);
                rest = &rest[pos + 4..];
            }
            None => {
                out.push_str("\\x");
                rest = &rest[pos + 2..];
            }
        }
    }
    out.push_str(rest);
    if out.is_empty() {
        "\t".to_string()
    } else {
        out
    }
}
