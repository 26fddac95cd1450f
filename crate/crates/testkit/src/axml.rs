//! Minimal aapt-style compiler from textual manifest XML to binary AXML.

use quick_xml::events::{BytesStart, Event};
use quick_xml::Reader;

const ANDROID_NS: &str = "http://schemas.android.com/apk/res/android";

#[derive(Debug, Clone, Copy, Default)]
pub struct AxmlOptions {
    /// Encode the string pool as UTF-8 instead of UTF-16.
    pub utf8: bool,
    /// Reverse the order of the non-attribute strings in the pool.
    pub shuffle_pool: bool,
    /// Append slack bytes to the string pool and element chunks.
    pub padding: bool,
    /// Insert an unknown vendor chunk between the pool and the resource map.
    pub vendor_chunk: bool,
    /// Blank out attribute-name strings so only the resource map identifies them.
    pub obfuscate_names: bool,
}

struct Attr {
    ns: Option<String>,
    name: String,
    value: String,
}

enum Node {
    Start {
        ns: Option<String>,
        name: String,
        attrs: Vec<Attr>,
    },
    End {
        ns: Option<String>,
        name: String,
    },
}

#[derive(Default)]
struct Pool {
    strings: Vec<String>,
}

impl Pool {
    fn index(&mut self, s: &str) -> u32 {
        if let Some(i) = self.strings.iter().position(|x| x == s) {
            return i as u32;
        }
        self.strings.push(s.to_string());
        (self.strings.len() - 1) as u32
    }
    fn get(&self, s: &str) -> u32 {
        self.strings.iter().position(|x| x == s).expect("interned") as u32
    }
}

fn resource_id(attr: &str) -> u32 {
    match attr {
        "label" => 0x0101_0001,
        "name" => 0x0101_0003,
        "permission" => 0x0101_0006,
        "exported" => 0x0101_0010,
        "priority" => 0x0101_001c,
        "scheme" => 0x0101_0027,
        "versionCode" => 0x0101_021b,
        "minSdkVersion" => 0x0101_020c,
        "protectionLevel" => 0x0101_0009,
        "targetSdkVersion" => 0x0101_0270,
        "allowBackup" => 0x0101_0280,
        _ => 0x0101_0fff,
    }
}

fn split_name(qname: &[u8], prefixes: &[(String, String)]) -> (Option<String>, String) {
    let q = String::from_utf8(qname.to_vec()).expect("utf-8 name");
    match q.split_once(':') {
        Some((prefix, local)) => {
            let uri = prefixes
                .iter()
                .rev()
                .find(|(p, _)| p == prefix)
                .map(|(_, u)| u.clone())
                .unwrap_or_else(|| panic!("undeclared prefix {prefix}"));
            (Some(uri), local.to_string())
        }
        None => (None, q),
    }
}

fn read_start(
    e: &BytesStart<'_>,
    prefixes: &mut Vec<(String, String)>,
) -> (Option<String>, String, Vec<Attr>) {
    let mut attrs = Vec::new();
    let mut raw = Vec::new();
    for a in e.attributes() {
        let a = a.expect("attribute");
        let key = a.key.as_ref().to_vec();
        let value = a.unescape_value().expect("value").into_owned();
        if key.starts_with(b"xmlns:") {
            let prefix = String::from_utf8(key[6..].to_vec()).unwrap();
            prefixes.push((prefix, value));
        } else {
            raw.push((key, value));
        }
    }
    for (key, value) in raw {
        let (ns, name) = split_name(&key, prefixes);
        attrs.push(Attr { ns, name, value });
    }
    let (ns, name) = split_name(e.name().as_ref(), prefixes);
    (ns, name, attrs)
}

fn parse_nodes(text: &str) -> (Vec<Node>, Vec<(String, String)>) {
    let mut reader = Reader::from_str(text);
    let mut prefixes: Vec<(String, String)> = Vec::new();
    let mut nodes = Vec::new();
    let mut stack: Vec<(Option<String>, String)> = Vec::new();
    loop {
        match reader.read_event().expect("well-formed fixture") {
            Event::Start(e) => {
                let (ns, name, attrs) = read_start(&e, &mut prefixes);
                stack.push((ns.clone(), name.clone()));
                nodes.push(Node::Start { ns, name, attrs });
            }
            Event::Empty(e) => {
                let (ns, name, attrs) = read_start(&e, &mut prefixes);
                nodes.push(Node::Start {
                    ns: ns.clone(),
                    name: name.clone(),
                    attrs,
                });
                nodes.push(Node::End { ns, name });
            }
            Event::End(_) => {
                let (ns, name) = stack.pop().expect("balanced");
                nodes.push(Node::End { ns, name });
            }
            Event::Eof => break,
            _ => {}
        }
    }
    (nodes, prefixes)
}

fn push_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn encode_len8(out: &mut Vec<u8>, len: usize) {
    if len > 0x7f {
        out.push(((len >> 8) as u8) | 0x80);
        out.push(len as u8);
    } else {
        out.push(len as u8);
    }
}

fn string_pool_chunk(strings: &[String], utf8: bool, padding: bool) -> Vec<u8> {
    let mut data = Vec::new();
    let mut offsets = Vec::new();
    for s in strings {
        offsets.push(data.len() as u32);
        if utf8 {
            encode_len8(&mut data, s.encode_utf16().count());
            encode_len8(&mut data, s.len());
            data.extend_from_slice(s.as_bytes());
            data.push(0);
        } else {
            let units: Vec<u16> = s.encode_utf16().collect();
            if units.len() > 0x7fff {
                push_u16(&mut data, ((units.len() >> 16) as u16) | 0x8000);
                push_u16(&mut data, units.len() as u16);
            } else {
                push_u16(&mut data, units.len() as u16);
            }
            for u in units {
                push_u16(&mut data, u);
            }
            push_u16(&mut data, 0);
        }
    }
    while data.len() % 4 != 0 {
        data.push(0);
    }
    if padding {
        data.extend_from_slice(&[0u8; 12]);
    }
    let header_size = 0x1c;
    let strings_start = header_size + 4 * strings.len();
    let size = strings_start + data.len();
    let mut out = Vec::with_capacity(size);
    push_u16(&mut out, 0x0001);
    push_u16(&mut out, header_size as u16);
    push_u32(&mut out, size as u32);
    push_u32(&mut out, strings.len() as u32);
    push_u32(&mut out, 0);
    push_u32(&mut out, if utf8 { 0x100 } else { 0 });
    push_u32(&mut out, strings_start as u32);
    push_u32(&mut out, 0);
    for o in offsets {
        push_u32(&mut out, o);
    }
    out.extend_from_slice(&data);
    out
}

/// Typed value encoding in the spirit of aapt: integers, booleans and
/// references lose their raw string.
fn typed_value(value: &str, pool: &Pool) -> (u32, u8, u32) {
    if let Ok(n) = value.parse::<i32>() {
        (u32::MAX, 0x10, n as u32)
    } else if value == "true" || value == "false" {
        (u32::MAX, 0x12, if value == "true" { u32::MAX } else { 0 })
    } else if value.starts_with('@') {
        (u32::MAX, 0x01, 0x7f01_0000)
    } else {
        let i = pool.get(value);
        (i, 0x03, i)
    }
}

/// Compiles a textual manifest into AXML bytes.
pub fn compile_manifest(text: &str, opts: AxmlOptions) -> Vec<u8> {
    let (nodes, prefixes) = parse_nodes(text);

    // Attribute names first, in first-seen order, so the resource map lines up.
    let mut attr_names: Vec<String> = Vec::new();
    for n in &nodes {
        if let Node::Start { attrs, .. } = n {
            for a in attrs {
                if a.ns.as_deref() == Some(ANDROID_NS) && !attr_names.contains(&a.name) {
                    attr_names.push(a.name.clone());
                }
            }
        }
    }
    let mut rest: Vec<String> = Vec::new();
    let mut add_rest = |s: &str| {
        if !attr_names.iter().any(|a| a == s) && !rest.iter().any(|r| r == s) {
            rest.push(s.to_string());
        }
    };
    for (p, u) in &prefixes {
        add_rest(p);
        add_rest(u);
    }
    for n in &nodes {
        if let Node::Start { name, attrs, .. } = n {
            add_rest(name);
            for a in attrs {
                if a.ns.as_deref() != Some(ANDROID_NS) {
                    add_rest(&a.name);
                }
                add_rest(&a.value);
            }
        }
    }
    if opts.shuffle_pool {
        rest.reverse();
    }

    let mut pool = Pool::default();
    let attr_count = attr_names.len();
    if opts.obfuscate_names {
        // Distinct placeholders keep indices unique while hiding the names.
        for i in 0..attr_count {
            pool.strings.push(format!("\u{0}{i}"));
        }
    } else {
        for a in &attr_names {
            pool.index(a);
        }
    }
    for r in &rest {
        pool.index(r);
    }
    let attr_index = |name: &str| -> u32 {
        attr_names.iter().position(|a| a == name).expect("attr") as u32
    };

    let mut pool_strings = pool.strings.clone();
    if opts.obfuscate_names {
        for s in pool_strings.iter_mut().take(attr_count) {
            s.clear();
        }
    }

    let mut body = Vec::new();
    body.extend(string_pool_chunk(&pool_strings, opts.utf8, opts.padding));
    if opts.vendor_chunk {
        push_u16(&mut body, 0x0777);
        push_u16(&mut body, 8);
        push_u32(&mut body, 16);
        body.extend_from_slice(&[0xde, 0xad, 0xbe, 0xef, 1, 2, 3, 4]);
    }
    push_u16(&mut body, 0x0180);
    push_u16(&mut body, 8);
    push_u32(&mut body, (8 + 4 * attr_count) as u32);
    for a in &attr_names {
        push_u32(&mut body, resource_id(a));
    }

    for (p, u) in &prefixes {
        push_u16(&mut body, 0x0100);
        push_u16(&mut body, 0x10);
        push_u32(&mut body, 0x18);
        push_u32(&mut body, 1);
        push_u32(&mut body, u32::MAX);
        push_u32(&mut body, pool.get(p));
        push_u32(&mut body, pool.get(u));
    }

    let ns_index = |ns: &Option<String>, pool: &Pool| -> u32 {
        ns.as_deref().map(|u| pool.get(u)).unwrap_or(u32::MAX)
    };
    for (line, n) in nodes.iter().enumerate() {
        match n {
            Node::Start { ns, name, attrs } => {
                let extra = if opts.padding { 4 } else { 0 };
                let size = 0x24 + 20 * attrs.len() + extra;
                push_u16(&mut body, 0x0102);
                push_u16(&mut body, 0x10);
                push_u32(&mut body, size as u32);
                push_u32(&mut body, line as u32 + 1);
                push_u32(&mut body, u32::MAX);
                push_u32(&mut body, ns_index(ns, &pool));
                push_u32(&mut body, pool.get(name));
                push_u16(&mut body, 0x14);
                push_u16(&mut body, 0x14);
                push_u16(&mut body, attrs.len() as u16);
                push_u16(&mut body, 0);
                push_u16(&mut body, 0);
                push_u16(&mut body, 0);
                for a in attrs {
                    let name_idx = if a.ns.as_deref() == Some(ANDROID_NS) {
                        attr_index(&a.name)
                    } else {
                        pool.get(&a.name)
                    };
                    let (raw, ty, data) = typed_value(&a.value, &pool);
                    push_u32(&mut body, ns_index(&a.ns, &pool));
                    push_u32(&mut body, name_idx);
                    push_u32(&mut body, raw);
                    push_u16(&mut body, 8);
                    body.push(0);
                    body.push(ty);
                    push_u32(&mut body, data);
                }
                body.extend(std::iter::repeat_n(0u8, extra));
            }
            Node::End { ns, name } => {
                push_u16(&mut body, 0x0103);
                push_u16(&mut body, 0x10);
                push_u32(&mut body, 0x18);
                push_u32(&mut body, line as u32 + 1);
                push_u32(&mut body, u32::MAX);
                push_u32(&mut body, ns_index(ns, &pool));
                push_u32(&mut body, pool.get(name));
            }
        }
    }
    for (p, u) in prefixes.iter().rev() {
        push_u16(&mut body, 0x0101);
        push_u16(&mut body, 0x10);
        push_u32(&mut body, 0x18);
        push_u32(&mut body, 1);
        push_u32(&mut body, u32::MAX);
        push_u32(&mut body, pool.get(p));
        push_u32(&mut body, pool.get(u));
    }

    let mut out = Vec::with_capacity(body.len() + 8);
    push_u16(&mut out, 0x0003);
    push_u16(&mut out, 8);
    push_u32(&mut out, (body.len() + 8) as u32);
    out.extend(body);
    out
}
