//! Hand-laid DEX containers holding only the id tables.

use std::collections::BTreeSet;

#[derive(Debug, Clone)]
struct MethodRef {
    class: String,
    name: String,
    return_type: String,
    params: Vec<String>,
}

/// Builds a DEX file whose `method_ids` table is exactly the added methods.
#[derive(Debug, Clone)]
pub struct DexBuilder {
    version: [u8; 3],
    methods: Vec<MethodRef>,
}

impl Default for DexBuilder {
    fn default() -> Self {
        Self::new()
    }
}

fn shorty_char(desc: &str) -> char {
    match desc.as_bytes()[0] {
        b'L' | b'[' => 'L',
        c => c as char,
    }
}

/// Modified UTF-8 encoding of a string, one UTF-16 unit at a time.
pub fn mutf8(s: &str) -> Vec<u8> {
    let mut out = Vec::new();
    for u in s.encode_utf16() {
        match u {
            0x0001..=0x007f => out.push(u as u8),
            0x0000 | 0x0080..=0x07ff => {
                out.push(0xc0 | ((u >> 6) as u8 & 0x1f));
                out.push(0x80 | (u as u8 & 0x3f));
            }
            _ => {
                out.push(0xe0 | ((u >> 12) as u8 & 0x0f));
                out.push(0x80 | ((u >> 6) as u8 & 0x3f));
                out.push(0x80 | (u as u8 & 0x3f));
            }
        }
    }
    out
}

fn uleb128(out: &mut Vec<u8>, mut v: u32) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            break;
        }
        out.push(byte | 0x80);
    }
}

fn put_u32(buf: &mut [u8], at: usize, v: u32) {
    buf[at..at + 4].copy_from_slice(&v.to_le_bytes());
}

impl DexBuilder {
    pub fn new() -> Self {
        Self {
            version: *b"035",
            methods: Vec::new(),
        }
    }

    pub fn version(mut self, v: &str) -> Self {
        self.version.copy_from_slice(v.as_bytes());
        self
    }

    /// Adds `class->name()V`.
    pub fn method(self, class: &str, name: &str) -> Self {
        self.method_sig(class, name, "V", &[])
    }

    pub fn method_sig(mut self, class: &str, name: &str, ret: &str, params: &[&str]) -> Self {
        self.methods.push(MethodRef {
            class: class.to_string(),
            name: name.to_string(),
            return_type: ret.to_string(),
            params: params.iter().map(|p| p.to_string()).collect(),
        });
        self
    }

    /// The (class descriptor, method name) pairs the method table will hold,
    /// deduplicated and sorted.
    pub fn expected_method_refs(&self) -> BTreeSet<(String, String)> {
        self.methods
            .iter()
            .map(|m| (m.class.clone(), m.name.clone()))
            .collect()
    }

    pub fn build(&self) -> Vec<u8> {
        let mut strings: BTreeSet<String> = BTreeSet::new();
        let mut types: BTreeSet<String> = BTreeSet::new();
        let mut protos: BTreeSet<(String, String, Vec<String>)> = BTreeSet::new();
        for m in &self.methods {
            strings.insert(m.class.clone());
            strings.insert(m.name.clone());
            strings.insert(m.return_type.clone());
            types.insert(m.class.clone());
            types.insert(m.return_type.clone());
            let mut shorty = String::new();
            shorty.push(shorty_char(&m.return_type));
            for p in &m.params {
                strings.insert(p.clone());
                types.insert(p.clone());
                shorty.push(shorty_char(p));
            }
            strings.insert(shorty.clone());
            protos.insert((shorty, m.return_type.clone(), m.params.clone()));
        }
        let strings: Vec<String> = strings.into_iter().collect();
        let types: Vec<String> = types.into_iter().collect();
        let protos: Vec<(String, String, Vec<String>)> = protos.into_iter().collect();
        let sidx = |s: &str| strings.iter().position(|x| x == s).unwrap() as u32;
        let tidx = |s: &str| types.iter().position(|x| x == s).unwrap() as u32;

        let mut methods: Vec<(u16, u16, u32)> = self
            .methods
            .iter()
            .map(|m| {
                let mut shorty = String::new();
                shorty.push(shorty_char(&m.return_type));
                for p in &m.params {
                    shorty.push(shorty_char(p));
                }
                let key = (shorty, m.return_type.clone(), m.params.clone());
                let pidx = protos.iter().position(|p| *p == key).unwrap();
                (tidx(&m.class) as u16, pidx as u16, sidx(&m.name))
            })
            .collect();
        methods.sort_unstable();
        methods.dedup();

        let header = 0x70usize;
        let string_ids_off = header;
        let type_ids_off = string_ids_off + 4 * strings.len();
        let proto_ids_off = type_ids_off + 4 * types.len();
        let method_ids_off = proto_ids_off + 12 * protos.len();
        let data_off = method_ids_off + 8 * methods.len();

        let mut data = Vec::new();
        let mut string_offsets = Vec::new();
        for s in &strings {
            string_offsets.push((data_off + data.len()) as u32);
            uleb128(&mut data, s.encode_utf16().count() as u32);
            data.extend(mutf8(s));
            data.push(0);
        }
        while data.len() % 4 != 0 {
            data.push(0);
        }
        let mut param_offsets = Vec::new();
        for (_, _, params) in &protos {
            if params.is_empty() {
                param_offsets.push(0u32);
                continue;
            }
            param_offsets.push((data_off + data.len()) as u32);
            data.extend((params.len() as u32).to_le_bytes());
            for p in params {
                data.extend((tidx(p) as u16).to_le_bytes());
            }
            while data.len() % 4 != 0 {
                data.push(0);
            }
        }

        let total = data_off + data.len();
        let mut out = vec![0u8; data_off];
        out[0..4].copy_from_slice(b"dex\n");
        out[4..7].copy_from_slice(&self.version);
        out[7] = 0;
        put_u32(&mut out, 0x20, total as u32);
        put_u32(&mut out, 0x24, header as u32);
        put_u32(&mut out, 0x28, 0x1234_5678);
        put_u32(&mut out, 0x38, strings.len() as u32);
        put_u32(&mut out, 0x3c, if strings.is_empty() { 0 } else { string_ids_off as u32 });
        put_u32(&mut out, 0x40, types.len() as u32);
        put_u32(&mut out, 0x44, if types.is_empty() { 0 } else { type_ids_off as u32 });
        put_u32(&mut out, 0x48, protos.len() as u32);
        put_u32(&mut out, 0x4c, if protos.is_empty() { 0 } else { proto_ids_off as u32 });
        put_u32(&mut out, 0x58, methods.len() as u32);
        put_u32(&mut out, 0x5c, if methods.is_empty() { 0 } else { method_ids_off as u32 });
        put_u32(&mut out, 0x68, data.len() as u32);
        put_u32(&mut out, 0x6c, data_off as u32);

        for (i, off) in string_offsets.iter().enumerate() {
            put_u32(&mut out, string_ids_off + 4 * i, *off);
        }
        for (i, t) in types.iter().enumerate() {
            put_u32(&mut out, type_ids_off + 4 * i, sidx(t));
        }
        for (i, (shorty, ret, _)) in protos.iter().enumerate() {
            let at = proto_ids_off + 12 * i;
            put_u32(&mut out, at, sidx(shorty));
            put_u32(&mut out, at + 4, tidx(ret));
            put_u32(&mut out, at + 8, param_offsets[i]);
        }
        for (i, (class, proto, name)) in methods.iter().enumerate() {
            let at = method_ids_off + 8 * i;
            out[at..at + 2].copy_from_slice(&class.to_le_bytes());
            out[at + 2..at + 4].copy_from_slice(&proto.to_le_bytes());
            put_u32(&mut out, at + 4, *name);
        }
        out.extend(data);

        let checksum = adler32(&out[12..]);
        put_u32(&mut out, 8, checksum);
        out
    }
}

fn adler32(data: &[u8]) -> u32 {
    let (mut a, mut b) = (1u32, 0u32);
    for &byte in data {
        a = (a + byte as u32) % 65521;
        b = (b + a) % 65521;
    }
    (b << 16) | a
}
