//! Flat binary model format ("TOPT"): little-endian, section-table indexed,
//! with constant payloads 8-byte aligned so they can be used in place from
//! flash. Also emits the C byte-array source used to embed models on MCUs
//! without a file system.
//!
//! Layout: 12-byte header (magic "TOPT", version u16, flags u16, section
//! count u32), a section table of (kind u32, offset u64, length u64)
//! entries, then the section bodies. Sections: tensor table, quant-param
//! table, payload index, payload blob, node table, graph metadata, and
//! length-prefixed recursive subgraph blocks. The checkpoint flag stores
//! every float32 constant as weights plus two optimizer-moment arrays
//! (12 bytes per parameter), modelling training-artifact size.

use half::f16;
use thiserror::Error;

use crate::graph::{AttrValue, DType, Graph, Node, OpKind, Payload, TensorSpec};
use crate::quant::{Granularity, QuantParams, Scheme};

pub const MAGIC: [u8; 4] = *b"TOPT";
pub const VERSION: u16 = 1;
pub const FLAG_CHECKPOINT: u16 = 1;
pub const EXTENSION: &str = "topt";

const SEC_TENSORS: u32 = 1;
const SEC_QUANT: u32 = 2;
const SEC_PAYLOAD_INDEX: u32 = 3;
const SEC_PAYLOAD_BLOB: u32 = 4;
const SEC_NODES: u32 = 5;
const SEC_META: u32 = 6;
const SEC_SUBGRAPHS: u32 = 7;
const SECTION_KINDS: [u32; 7] = [
    SEC_TENSORS,
    SEC_QUANT,
    SEC_PAYLOAD_INDEX,
    SEC_PAYLOAD_BLOB,
    SEC_NODES,
    SEC_META,
    SEC_SUBGRAPHS,
];

const OPCODES: [OpKind; 38] = [
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Div,
    OpKind::Neg,
    OpKind::AddN,
    OpKind::Exp,
    OpKind::Sin,
    OpKind::Concat,
    OpKind::Split,
    OpKind::Transpose,
    OpKind::Reshape,
    OpKind::Reverse,
    OpKind::Shuffle,
    OpKind::Squeeze,
    OpKind::Pad,
    OpKind::Tile,
    OpKind::Slice,
    OpKind::Conv2D,
    OpKind::DepthwiseConv2D,
    OpKind::FusedConvBnBias,
    OpKind::MatMul,
    OpKind::BiasAdd,
    OpKind::FusedBatchNorm,
    OpKind::Relu,
    OpKind::MaxPool,
    OpKind::AvgPool,
    OpKind::Softmax,
    OpKind::Identity,
    OpKind::NoOp,
    OpKind::StopGradient,
    OpKind::FakeQuant,
    OpKind::Greater,
    OpKind::LessEqual,
    OpKind::Not,
    OpKind::Loop,
    OpKind::Quantize,
    OpKind::Dequantize,
];

#[derive(Debug, Error, PartialEq)]
pub enum SerdesError {
    #[error("bad magic at byte {offset}")]
    BadMagic { offset: usize },
    #[error("unsupported format version {version} at byte {offset}")]
    UnsupportedVersion { version: u16, offset: usize },
    #[error("truncated section at byte {offset}")]
    TruncatedSection { offset: usize },
    #[error("section offset out of bounds at byte {offset}")]
    OffsetOutOfBounds { offset: usize },
    #[error("unknown section kind {kind} at byte {offset}")]
    UnknownSection { kind: u32, offset: usize },
    #[error("bad value at byte {offset}: {what}")]
    BadValue { offset: usize, what: String },
    #[error("'{0}' is not a valid C identifier")]
    InvalidIdentifier(String),
}

/// Serialized model plus byte accounting for reports.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelBinary {
    pub bytes: Vec<u8>,
    /// Logical constant-payload bytes (sum over constants, without tables).
    pub payload_bytes: u64,
    pub checkpoint: bool,
}

impl ModelBinary {
    pub fn total_bytes(&self) -> u64 {
        self.bytes.len() as u64
    }
}

// ---------------------------------------------------------------------------
// writer
// ---------------------------------------------------------------------------

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i32(&mut self, v: i32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32(&mut self, v: f32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn align8(&mut self) {
        while self.buf.len() % 8 != 0 {
            self.buf.push(0);
        }
    }
}

fn payload_tag(p: &Payload) -> u8 {
    match p {
        Payload::F32(_) => 0,
        Payload::F16(_) => 1,
        Payload::I8(_) => 2,
        Payload::I32(_) => 3,
        Payload::Bool(_) => 4,
    }
}

fn encode_tensors(g: &Graph) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(g.tensors.len() as u32);
    for spec in g.tensors.values() {
        w.u64(spec.id as u64);
        w.u8(spec.dtype as u8);
        match &spec.name {
            Some(n) => {
                w.u8(1);
                w.str(n);
            }
            None => w.u8(0),
        }
        w.u32(spec.shape.len() as u32);
        for &d in &spec.shape {
            w.u64(d as u64);
        }
    }
    w.buf
}

fn encode_quant(g: &Graph) -> Vec<u8> {
    let entries: Vec<(&TensorSpec, &QuantParams)> = g
        .tensors
        .values()
        .filter_map(|t| t.quant.as_ref().map(|q| (t, q)))
        .collect();
    let mut w = Writer::new();
    w.u32(entries.len() as u32);
    for (t, q) in entries {
        w.u64(t.id as u64);
        w.u8(q.bit_width);
        w.u8(match q.scheme {
            Scheme::Symmetric => 0,
            Scheme::Asymmetric => 1,
        });
        match q.granularity {
            Granularity::PerLayer => {
                w.u8(0);
                w.u64(0);
            }
            Granularity::PerChannel(axis) => {
                w.u8(1);
                w.u64(axis as u64);
            }
        }
        w.u32(q.scales.len() as u32);
        for &s in &q.scales {
            w.f64(s);
        }
        w.u32(q.zero_points.len() as u32);
        for &z in &q.zero_points {
            w.i32(z);
        }
    }
    w.buf
}

/// Payload index entries plus the aligned blob. Offsets are relative to the
/// blob section start, which itself is 8-aligned in the file.
fn encode_payloads(g: &Graph, checkpoint: bool) -> (Vec<u8>, Vec<u8>, u64) {
    let mut idx = Writer::new();
    let mut blob = Writer::new();
    let mut logical: u64 = 0;
    idx.u32(g.constants.len() as u32);
    for c in g.constants.values() {
        blob.align8();
        let offset = blob.buf.len() as u64;
        match &c.payload {
            Payload::F32(v) => {
                for &x in v {
                    blob.f32(x);
                }
                if checkpoint {
                    // two zeroed optimizer-moment arrays alongside the weights
                    for _ in 0..2 * v.len() {
                        blob.f32(0.0);
                    }
                }
            }
            Payload::F16(v) => {
                for &x in v {
                    blob.u16(x.to_bits());
                }
            }
            Payload::I8(v) => {
                for &x in v {
                    blob.u8(x as u8);
                }
            }
            Payload::I32(v) => {
                for &x in v {
                    blob.i32(x);
                }
            }
            Payload::Bool(v) => {
                for &x in v {
                    blob.u8(x as u8);
                }
            }
        }
        let byte_len = blob.buf.len() as u64 - offset;
        logical += byte_len;
        idx.u64(c.tensor_id as u64);
        idx.u8(payload_tag(&c.payload));
        idx.u64(c.payload.len() as u64);
        idx.u64(offset);
        idx.u64(byte_len);
    }
    (idx.buf, blob.buf, logical)
}

fn encode_attr(w: &mut Writer, v: &AttrValue) {
    match v {
        AttrValue::Int(x) => {
            w.u8(0);
            w.i64(*x);
        }
        AttrValue::Float(x) => {
            w.u8(1);
            w.f64(*x);
        }
        AttrValue::Ints(xs) => {
            w.u8(2);
            w.u32(xs.len() as u32);
            for &x in xs {
                w.i64(x);
            }
        }
        AttrValue::Bool(x) => {
            w.u8(3);
            w.u8(*x as u8);
        }
        AttrValue::Str(s) => {
            w.u8(4);
            w.str(s);
        }
    }
}

fn encode_nodes(g: &Graph) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(g.nodes.len() as u32);
    for n in &g.nodes {
        w.u64(n.id as u64);
        let opcode = OPCODES.iter().position(|&k| k == n.op).expect("known op") as u16;
        w.u16(opcode);
        w.u32(n.inputs.len() as u32);
        for &t in &n.inputs {
            w.u64(t as u64);
        }
        w.u32(n.outputs.len() as u32);
        for &t in &n.outputs {
            w.u64(t as u64);
        }
        w.u32(n.control_deps.len() as u32);
        for &d in &n.control_deps {
            w.u64(d as u64);
        }
        w.u32(n.attrs.len() as u32);
        for (k, v) in &n.attrs {
            w.str(k);
            encode_attr(&mut w, v);
        }
    }
    w.buf
}

fn encode_meta(g: &Graph) -> Vec<u8> {
    let mut w = Writer::new();
    w.u32(g.inputs.len() as u32);
    for &t in &g.inputs {
        w.u64(t as u64);
    }
    w.u32(g.outputs.len() as u32);
    for &t in &g.outputs {
        w.u64(t as u64);
    }
    let (nt, nn) = g.id_counters();
    w.u64(nt as u64);
    w.u64(nn as u64);
    w.buf
}

fn serialize_with(g: &Graph, checkpoint: bool) -> ModelBinary {
    let tensors = encode_tensors(g);
    let quant = encode_quant(g);
    let (payidx, blob, mut logical) = encode_payloads(g, checkpoint);
    let nodes = encode_nodes(g);
    let meta = encode_meta(g);
    let mut subs = Writer::new();
    subs.u32(g.subgraphs.len() as u32);
    for sub in &g.subgraphs {
        let inner = serialize_with(sub, checkpoint);
        logical += inner.payload_bytes;
        subs.u64(inner.bytes.len() as u64);
        subs.buf.extend_from_slice(&inner.bytes);
    }

    let header_len = 12 + SECTION_KINDS.len() * 20;
    let mut w = Writer::new();
    w.buf.extend_from_slice(&MAGIC);
    w.u16(VERSION);
    w.u16(if checkpoint { FLAG_CHECKPOINT } else { 0 });
    w.u32(SECTION_KINDS.len() as u32);
    // section table: bodies laid out in order, blob aligned to 8
    let bodies: [(u32, &[u8]); 7] = [
        (SEC_TENSORS, &tensors),
        (SEC_QUANT, &quant),
        (SEC_PAYLOAD_INDEX, &payidx),
        (SEC_PAYLOAD_BLOB, &blob),
        (SEC_NODES, &nodes),
        (SEC_META, &meta),
        (SEC_SUBGRAPHS, &subs.buf),
    ];
    let mut cursor = header_len as u64;
    let mut table = Vec::new();
    for (kind, body) in &bodies {
        if *kind == SEC_PAYLOAD_BLOB {
            cursor = (cursor + 7) / 8 * 8;
        }
        table.push((*kind, cursor, body.len() as u64));
        cursor += body.len() as u64;
    }
    for &(kind, offset, len) in &table {
        w.u32(kind);
        w.u64(offset);
        w.u64(len);
    }
    for ((_, body), &(_, offset, _)) in bodies.iter().zip(&table) {
        while (w.buf.len() as u64) < offset {
            w.u8(0);
        }
        w.buf.extend_from_slice(body);
    }
    ModelBinary {
        bytes: w.buf,
        payload_bytes: logical,
        checkpoint,
    }
}

/// Deterministic flat encoding of a validated graph.
pub fn serialize(g: &Graph) -> ModelBinary {
    serialize_with(g, false)
}

/// Checkpoint encoding: float32 constants carry two zeroed optimizer-moment
/// arrays (12 bytes per parameter instead of 4).
pub fn serialize_checkpoint(g: &Graph) -> ModelBinary {
    serialize_with(g, true)
}

// ---------------------------------------------------------------------------
// reader
// ---------------------------------------------------------------------------

struct Cursor<'a> {
    data: &'a [u8],
    /// Absolute file offset of `data[0]`, for error reporting.
    base: usize,
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(data: &'a [u8], base: usize) -> Self {
        Cursor { data, base, pos: 0 }
    }
    fn offset(&self) -> usize {
        self.base + self.pos
    }
    fn bytes(&mut self, len: usize) -> Result<&'a [u8], SerdesError> {
        if self.pos + len > self.data.len() {
            return Err(SerdesError::TruncatedSection { offset: self.offset() });
        }
        let out = &self.data[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8, SerdesError> {
        Ok(self.bytes(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, SerdesError> {
        Ok(u16::from_le_bytes(self.bytes(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, SerdesError> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, SerdesError> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn i32(&mut self) -> Result<i32, SerdesError> {
        Ok(i32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64, SerdesError> {
        Ok(i64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32, SerdesError> {
        Ok(f32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, SerdesError> {
        Ok(f64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String, SerdesError> {
        let at = self.offset();
        let len = self.u32()? as usize;
        let bytes = self.bytes(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| SerdesError::BadValue {
            offset: at,
            what: "invalid utf-8 string".into(),
        })
    }
}

fn dtype_from_u8(v: u8, offset: usize) -> Result<DType, SerdesError> {
    Ok(match v {
        0 => DType::F32,
        1 => DType::F16,
        2 => DType::I8,
        3 => DType::I32,
        4 => DType::Bool,
        _ => {
            return Err(SerdesError::BadValue {
                offset,
                what: format!("unknown dtype {v}"),
            })
        }
    })
}

fn section<'a>(
    bytes: &'a [u8],
    table: &[(u32, u64, u64)],
    kind: u32,
) -> Result<Cursor<'a>, SerdesError> {
    for &(k, off, len) in table {
        if k == kind {
            let (off, len) = (off as usize, len as usize);
            if off + len > bytes.len() {
                return Err(SerdesError::OffsetOutOfBounds { offset: off });
            }
            return Ok(Cursor::new(&bytes[off..off + len], off));
        }
    }
    Err(SerdesError::TruncatedSection { offset: bytes.len() })
}

/// Decodes a TOPT buffer back into a graph (checkpoint moments are dropped).
pub fn deserialize(bytes: &[u8]) -> Result<Graph, SerdesError> {
    if bytes.len() < 4 || bytes[..4] != MAGIC {
        return Err(SerdesError::BadMagic { offset: 0 });
    }
    let mut hdr = Cursor::new(bytes, 0);
    hdr.bytes(4)?;
    let version = hdr.u16()?;
    if version != VERSION {
        return Err(SerdesError::UnsupportedVersion { version, offset: 4 });
    }
    let flags = hdr.u16()?;
    let checkpoint = flags & FLAG_CHECKPOINT != 0;
    let n_sections = hdr.u32()? as usize;
    let mut table = Vec::with_capacity(n_sections);
    for _ in 0..n_sections {
        let at = hdr.offset();
        let kind = hdr.u32()?;
        if !SECTION_KINDS.contains(&kind) {
            return Err(SerdesError::UnknownSection { kind, offset: at });
        }
        let off = hdr.u64()?;
        let len = hdr.u64()?;
        table.push((kind, off, len));
    }

    let mut g = Graph::default();

    let mut c = section(bytes, &table, SEC_TENSORS)?;
    let n_tensors = c.u32()?;
    for _ in 0..n_tensors {
        let id = c.u64()? as u32;
        let at = c.offset();
        let dtype = dtype_from_u8(c.u8()?, at)?;
        let name = if c.u8()? != 0 { Some(c.str()?) } else { None };
        let rank = c.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(c.u64()? as usize);
        }
        g.tensors.insert(
            id,
            TensorSpec {
                id,
                name,
                shape,
                dtype,
                quant: None,
            },
        );
    }

    let mut c = section(bytes, &table, SEC_QUANT)?;
    let n_quant = c.u32()?;
    for _ in 0..n_quant {
        let id = c.u64()? as u32;
        let bit_width = c.u8()?;
        let at = c.offset();
        let scheme = match c.u8()? {
            0 => Scheme::Symmetric,
            1 => Scheme::Asymmetric,
            v => {
                return Err(SerdesError::BadValue {
                    offset: at,
                    what: format!("unknown scheme {v}"),
                })
            }
        };
        let at = c.offset();
        let gran_tag = c.u8()?;
        let axis = c.u64()? as usize;
        let granularity = match gran_tag {
            0 => Granularity::PerLayer,
            1 => Granularity::PerChannel(axis),
            v => {
                return Err(SerdesError::BadValue {
                    offset: at,
                    what: format!("unknown granularity {v}"),
                })
            }
        };
        let n = c.u32()? as usize;
        let mut scales = Vec::with_capacity(n);
        for _ in 0..n {
            scales.push(c.f64()?);
        }
        let n = c.u32()? as usize;
        let mut zero_points = Vec::with_capacity(n);
        for _ in 0..n {
            zero_points.push(c.i32()?);
        }
        let at = c.offset();
        let spec = g.tensors.get_mut(&id).ok_or(SerdesError::BadValue {
            offset: at,
            what: format!("quant params for unknown tensor {id}"),
        })?;
        spec.quant = Some(QuantParams {
            bit_width,
            scheme,
            granularity,
            scales,
            zero_points,
        });
    }

    let blob_entry = table
        .iter()
        .find(|(k, _, _)| *k == SEC_PAYLOAD_BLOB)
        .copied()
        .ok_or(SerdesError::TruncatedSection { offset: bytes.len() })?;
    let mut c = section(bytes, &table, SEC_PAYLOAD_INDEX)?;
    let n_payloads = c.u32()?;
    for _ in 0..n_payloads {
        let id = c.u64()? as u32;
        let tag = c.u8()?;
        let elems = c.u64()? as usize;
        let at = c.offset();
        let rel = c.u64()? as usize;
        let byte_len = c.u64()? as usize;
        if rel + byte_len > blob_entry.2 as usize {
            return Err(SerdesError::OffsetOutOfBounds { offset: at });
        }
        let abs = blob_entry.1 as usize + rel;
        if abs + byte_len > bytes.len() {
            return Err(SerdesError::OffsetOutOfBounds { offset: at });
        }
        let mut b = Cursor::new(&bytes[abs..abs + byte_len], abs);
        let payload = match tag {
            0 => {
                let mut v = Vec::with_capacity(elems);
                for _ in 0..elems {
                    v.push(b.f32()?);
                }
                if checkpoint {
                    // skip the two moment arrays
                    b.bytes(2 * 4 * elems)?;
                }
                Payload::F32(v)
            }
            1 => {
                let mut v = Vec::with_capacity(elems);
                for _ in 0..elems {
                    v.push(f16::from_bits(b.u16()?));
                }
                Payload::F16(v)
            }
            2 => Payload::I8(b.bytes(elems)?.iter().map(|&x| x as i8).collect()),
            3 => {
                let mut v = Vec::with_capacity(elems);
                for _ in 0..elems {
                    v.push(b.i32()?);
                }
                Payload::I32(v)
            }
            4 => {
                let mut v = Vec::with_capacity(elems);
                for _ in 0..elems {
                    let at = b.offset();
                    v.push(match b.u8()? {
                        0 => false,
                        1 => true,
                        x => {
                            return Err(SerdesError::BadValue {
                                offset: at,
                                what: format!("bad bool byte {x}"),
                            })
                        }
                    });
                }
                Payload::Bool(v)
            }
            v => {
                return Err(SerdesError::BadValue {
                    offset: at,
                    what: format!("unknown payload tag {v}"),
                })
            }
        };
        g.constants.insert(
            id,
            crate::graph::ConstData {
                tensor_id: id,
                payload,
            },
        );
    }

    let mut c = section(bytes, &table, SEC_NODES)?;
    let n_nodes = c.u32()?;
    for _ in 0..n_nodes {
        let id = c.u64()? as u32;
        let at = c.offset();
        let opcode = c.u16()? as usize;
        let op = *OPCODES.get(opcode).ok_or(SerdesError::BadValue {
            offset: at,
            what: format!("unknown opcode {opcode}"),
        })?;
        let n_in = c.u32()? as usize;
        let mut inputs = Vec::with_capacity(n_in);
        for _ in 0..n_in {
            inputs.push(c.u64()? as u32);
        }
        let n_out = c.u32()? as usize;
        let mut outputs = Vec::with_capacity(n_out);
        for _ in 0..n_out {
            outputs.push(c.u64()? as u32);
        }
        let n_ctrl = c.u32()? as usize;
        let mut control_deps = std::collections::BTreeSet::new();
        for _ in 0..n_ctrl {
            control_deps.insert(c.u64()? as u32);
        }
        let n_attrs = c.u32()? as usize;
        let mut attrs = std::collections::BTreeMap::new();
        for _ in 0..n_attrs {
            let key = c.str()?;
            let at = c.offset();
            let val = match c.u8()? {
                0 => AttrValue::Int(c.i64()?),
                1 => AttrValue::Float(c.f64()?),
                2 => {
                    let n = c.u32()? as usize;
                    let mut xs = Vec::with_capacity(n);
                    for _ in 0..n {
                        xs.push(c.i64()?);
                    }
                    AttrValue::Ints(xs)
                }
                3 => AttrValue::Bool(c.u8()? != 0),
                4 => AttrValue::Str(c.str()?),
                v => {
                    return Err(SerdesError::BadValue {
                        offset: at,
                        what: format!("unknown attr tag {v}"),
                    })
                }
            };
            attrs.insert(key, val);
        }
        g.nodes.push(Node {
            id,
            op,
            inputs,
            outputs,
            attrs,
            control_deps,
        });
    }

    let mut c = section(bytes, &table, SEC_META)?;
    let n_in = c.u32()? as usize;
    for _ in 0..n_in {
        g.inputs.push(c.u64()? as u32);
    }
    let n_out = c.u32()? as usize;
    for _ in 0..n_out {
        g.outputs.push(c.u64()? as u32);
    }
    let next_tensor = c.u64()? as u32;
    let next_node = c.u64()? as u32;
    g.set_id_counters(next_tensor, next_node);

    let mut c = section(bytes, &table, SEC_SUBGRAPHS)?;
    let n_subs = c.u32()? as usize;
    for _ in 0..n_subs {
        let at = c.offset();
        let len = c.u64()? as usize;
        let inner = c.bytes(len).map_err(|_| SerdesError::TruncatedSection { offset: at })?;
        g.subgraphs.push(deserialize(inner)?);
    }

    Ok(g)
}

// ---------------------------------------------------------------------------
// C array emission
// ---------------------------------------------------------------------------

fn is_c_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// `const unsigned char <symbol>[] = {...};` with 12 lowercase-hex bytes per
/// line, plus `const unsigned int <symbol>_len`.
pub fn emit_c_array(bytes: &[u8], symbol: &str) -> Result<String, SerdesError> {
    if !is_c_identifier(symbol) {
        return Err(SerdesError::InvalidIdentifier(symbol.to_string()));
    }
    let mut out = String::new();
    out.push_str(&format!("const unsigned char {symbol}[] = {{\n"));
    for chunk in bytes.chunks(12) {
        let line: Vec<String> = chunk.iter().map(|b| format!("0x{b:02x}")).collect();
        out.push_str("  ");
        out.push_str(&line.join(", "));
        out.push_str(",\n");
    }
    out.push_str("};\n");
    out.push_str(&format!("const unsigned int {symbol}_len = {};\n", bytes.len()));
    Ok(out)
}

/// Parses text produced by `emit_c_array` back into bytes (test oracle).
pub fn parse_c_array(text: &str) -> Option<Vec<u8>> {
    let start = text.find('{')?;
    let end = text.find('}')?;
    let mut out = Vec::new();
    for tok in text[start + 1..end].split(',') {
        let tok = tok.trim();
        if tok.is_empty() {
            continue;
        }
        let hex = tok.strip_prefix("0x")?;
        out.push(u8::from_str_radix(hex, 16).ok()?);
    }
    let len: u64 = text.rsplit('=').next()?.trim().trim_end_matches(';').trim().parse().ok()?;
    if len as usize != out.len() {
        return None;
    }
    Some(out)
}
