//! Versioned binary checkpoint container.
//!
//! ```text
//! magic "CRDCKPT\0" | version u32 | payload length u64 | payload | crc32(payload) u32
//! payload = config length u64 | config TOML | entry count u32 | entries
//! entry   = name length u32 | name | kind u8 | data length u64 | data
//! ```
//!
//! All integers are little-endian. Tensor entries hold a rank, the
//! dimensions as u64 and the values as f64.

use std::path::Path;

use crd_diffcore::Tensor;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};

pub const MAGIC: &[u8; 8] = b"CRDCKPT\0";
pub const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum EntryKind {
    Tensor = 0,
    Bytes = 1,
    Text = 2,
}

impl EntryKind {
    fn from_u8(v: u8) -> Result<Self> {
        match v {
            0 => Ok(EntryKind::Tensor),
            1 => Ok(EntryKind::Bytes),
            2 => Ok(EntryKind::Text),
            _ => Err(CoreError::Integrity(format!("unknown entry kind {v}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EntryKind::Tensor => "tensor",
            EntryKind::Bytes => "bytes",
            EntryKind::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub kind: EntryKind,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub config: String,
    pub entries: Vec<Entry>,
}

/// Result of a lenient read: whatever could be parsed plus the checksum verdict.
#[derive(Debug, Clone)]
pub struct Inspection {
    pub version: u32,
    pub checksum_ok: bool,
    pub container: Option<Container>,
    pub problem: Option<String>,
}

/// Little-endian writer.
#[derive(Debug, Default)]
pub struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u128(&mut self, v: u128) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, v: &[u8]) {
        self.u64(v.len() as u64);
        self.buf.extend_from_slice(v);
    }
}

/// Little-endian reader that reports truncation as an integrity error.
#[derive(Debug)]
pub struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(CoreError::Integrity("unexpected end of data".into()));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn is_done(&self) -> bool {
        self.pos == self.data.len()
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.take(16)?.try_into().expect("16 bytes")))
    }
    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    pub fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| CoreError::Integrity("length overflows".into()))
    }
    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len()?;
        self.take(n)
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(t.shape().len() as u32);
    for &d in t.shape() {
        w.u64(d as u64);
    }
    for &v in t.data() {
        w.f64(v);
    }
    w.buf
}

pub fn decode_tensor(data: &[u8]) -> Result<Tensor> {
    let mut r = Reader::new(data);
    let rank = r.u32()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.len()?);
    }
    let n: usize = shape.iter().product();
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(r.f64()?);
    }
    if !r.is_done() {
        return Err(CoreError::Integrity("trailing bytes after tensor".into()));
    }
    Ok(Tensor::new(shape, values)?)
}

/// Tensor header only: `(shape, byte length)`.
pub fn tensor_shape(data: &[u8]) -> Result<Vec<usize>> {
    let mut r = Reader::new(data);
    let rank = r.u32()? as usize;
    (0..rank).map(|_| r.len()).collect()
}

pub fn encode_rng(rng: &ChaCha8Rng) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(&rng.get_seed());
    w.u64(rng.get_stream());
    w.u128(rng.get_word_pos());
    w.buf
}

pub fn decode_rng(data: &[u8]) -> Result<ChaCha8Rng> {
    use rand::SeedableRng;
    let mut r = Reader::new(data);
    let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
    let stream = r.u64()?;
    let pos = r.u128()?;
    if !r.is_done() {
        return Err(CoreError::Integrity("trailing bytes after rng state".into()));
    }
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(pos);
    Ok(rng)
}

impl Container {
    pub fn new(config: String) -> Self {
        Container {
            config,
            entries: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, kind: EntryKind, data: Vec<u8>) {
        self.entries.push(Entry {
            name: name.into(),
            kind,
            data,
        });
    }

    pub fn push_tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.push(name, EntryKind::Tensor, encode_tensor(t));
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CoreError::Integrity(format!("checkpoint has no entry `{name}`")))
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        let e = self.get(name)?;
        if e.kind != EntryKind::Tensor {
            return Err(CoreError::Integrity(format!("entry `{name}` is not a tensor")));
        }
        decode_tensor(&e.data)
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let e = self.get(name)?;
        String::from_utf8(e.data.clone()).map_err(|_| CoreError::Integrity(format!("entry `{name}` is not UTF-8")))
    }

    fn payload(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(self.config.as_bytes());
        w.u32(self.entries.len() as u32);
        for e in &self.entries {
            w.u32(e.name.len() as u32);
            w.buf.extend_from_slice(e.name.as_bytes());
            w.u8(e.kind as u8);
            w.bytes(&e.data);
        }
        w.buf
    }

    fn parse_payload(payload: &[u8]) -> Result<Container> {
        let mut r = Reader::new(payload);
        let config = String::from_utf8(r.bytes()?.to_vec())
            .map_err(|_| CoreError::Integrity("config echo is not UTF-8".into()))?;
        let count = r.u32()?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| CoreError::Integrity("entry name is not UTF-8".into()))?;
            let kind = EntryKind::from_u8(r.u8()?)?;
            let data = r.bytes()?.to_vec();
            entries.push(Entry { name, kind, data });
        }
        if !r.is_done() {
            return Err(CoreError::Integrity("trailing bytes after entries".into()));
        }
        Ok(Container { config, entries })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.u64(payload.len() as u64);
        w.buf.extend_from_slice(&payload);
        w.u32(crc32fast::hash(&payload));
        w.buf
    }

    /// Strict read: magic, version, length and checksum must all hold.
    pub fn from_bytes(data: &[u8]) -> Result<Container> {
        let (version, payload, stored) = split(data)?;
        if version != VERSION {
            return Err(CoreError::Version {
                found: version,
                expected: VERSION,
            });
        }
        let actual = crc32fast::hash(payload);
        if actual != stored {
            return Err(CoreError::Integrity(format!(
                "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        Container::parse_payload(payload)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, self.to_bytes())?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Container> {
        Container::from_bytes(&std::fs::read(path)?)
    }

    /// Lenient read for diagnostics; never fails past the header.
    pub fn inspect(data: &[u8]) -> Result<Inspection> {
        let (version, payload, stored) = split(data)?;
        let checksum_ok = crc32fast::hash(payload) == stored;
        let (container, problem) = match Container::parse_payload(payload) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Inspection {
            version,
            checksum_ok,
            container,
            problem,
        })
    }
}

fn split(data: &[u8]) -> Result<(u32, &[u8], u32)> {
    if data.len() < HEADER || &data[..8] != MAGIC {
        return Err(CoreError::Integrity("not a checkpoint file (bad magic)".into()));
    }
    let mut r = Reader::new(&data[8..]);
    let version = r.u32()?;
    let len = r.len()?;
    if data.len() != HEADER + len + 4 {
        return Err(CoreError::Integrity(format!(
            "payload length {len} does not match file size {} (truncated?)",
            data.len()
        )));
    }
    let payload = &data[HEADER..HEADER + len];
    let stored = u32::from_le_bytes(data[HEADER + len..].try_into().expect("4 bytes"));
    Ok((version, payload, stored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    fn sample() -> Container {
        let mut c = Container::new("seed = 1\n".into());
        c.push_tensor("w", &Tensor::new(vec![2, 2], vec![1.0, -2.0, 3.5, 0.0]).unwrap());
        c.push("note", EntryKind::Text, b"hello".to_vec());
        c
    }

    #[test]
    fn round_trip() {
        let c = sample();
        let back = Container::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.tensor("w").unwrap().data(), &[1.0, -2.0, 3.5, 0.0]);
        assert_eq!(tensor_shape(&back.get("w").unwrap().data).unwrap(), vec![2, 2]);
    }

    #[test]
    fn flipped_payload_byte_fails_checksum() {
        let mut bytes = sample().to_bytes();
        bytes[HEADER + 3] ^= 0x40;
        let err = Container::from_bytes(&bytes).unwrap_err();
        assert!(matches!(err, CoreError::Integrity(ref m) if m.contains("checksum")), "{err}");
        assert!(!Container::inspect(&bytes).unwrap().checksum_ok);
    }

    #[test]
    fn truncation_and_version() {
        let bytes = sample().to_bytes();
        assert!(matches!(
            Container::from_bytes(&bytes[..bytes.len() - 1]),
            Err(CoreError::Integrity(_))
        ));
        let mut future = bytes.clone();
        future[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
        assert!(matches!(
            Container::from_bytes(&future),
            Err(CoreError::Version { found, .. }) if found == VERSION + 1
        ));
    }

    #[test]
    fn rng_state_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        rng.set_stream(3);
        rng.next_u64();
        rng.next_u32();
        let mut back = decode_rng(&encode_rng(&rng)).unwrap();
        for _ in 0..10 {
            assert_eq!(back.next_u64(), rng.next_u64());
        }
    }
}
