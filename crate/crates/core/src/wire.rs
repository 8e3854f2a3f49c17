//! Bit-exact uplink message format and byte accounting.
//!
//! Every layer update travels as one message, all fields little-endian:
//!
//! | field        | size        | notes                                      |
//! |--------------|-------------|--------------------------------------------|
//! | magic        | 4           | `b"FSU1"`                                  |
//! | scheme       | 1           | 0 raw, 1 low rank, 2 mask, 3 sketch        |
//! | d1, d2       | 4 + 4       | layer shape, `u32`                         |
//! | seeds        | 8 × n       | n = 0 raw, 1 low rank (A), 1 mask, 2 sketch (rotation, subsample) |
//! | flags        | 1           | sketch only; bit 0 = rotation applied      |
//! | bits         | 1           | quantization bits, 0 = none                |
//! | h_min, h_max | 4 + 4       | `f32`, present iff bits > 0                |
//! | fraction     | 4           | `f32` keep fraction (`k / d1` for low rank, 1 for raw) |
//! | payload_bits | 8           | `u64`, exact bit length of the payload     |
//! | payload      | ⌈bits / 8⌉  | packed LSB-first, zero-padded to a byte    |
//!
//! Float payloads are 32 bits per value (`f32::to_bits`); quantized payloads
//! are `bits` bits per level index.

use crate::codec::{payload_bits, CompressionConfig, EncodedUpdate};
use crate::error::{Error, Result};
use crate::sketch::{QuantParams, SketchConfig, SketchEncoded, SketchPayload};
use crate::structured::{low_rank_rank_from_payload, StructuredEncoded, StructuredVariant};
use crate::tensor::Matrix;

pub const MAGIC: [u8; 4] = *b"FSU1";

const TAG_RAW: u8 = 0;
const TAG_LOW_RANK: u8 = 1;
const TAG_MASK: u8 = 2;
const TAG_SKETCH: u8 = 3;

const FLAG_ROTATE: u8 = 1;

/// Packs the low `width` bits of each value, LSB-first.
pub fn pack_bits(values: impl IntoIterator<Item = u32>, width: u32) -> (Vec<u8>, u64) {
    assert!((1..=32).contains(&width));
    let mut out = Vec::new();
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut total = 0u64;
    let mask = if width == 32 { u64::from(u32::MAX) } else { (1u64 << width) - 1 };
    for v in values {
        acc |= (u64::from(v) & mask) << filled;
        filled += width;
        total += u64::from(width);
        while filled >= 8 {
            out.push(acc as u8);
            acc >>= 8;
            filled -= 8;
        }
    }
    if filled > 0 {
        out.push(acc as u8);
    }
    (out, total)
}

/// Inverse of [`pack_bits`] for `count` values.
pub fn unpack_bits(bytes: &[u8], width: u32, count: usize) -> Vec<u32> {
    assert!((1..=32).contains(&width));
    let mask = if width == 32 { u64::from(u32::MAX) } else { (1u64 << width) - 1 };
    let mut out = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut iter = bytes.iter();
    for _ in 0..count {
        while filled < width {
            let b = iter.next().copied().unwrap_or(0);
            acc |= u64::from(b) << filled;
            filled += 8;
        }
        out.push((acc & mask) as u32);
        acc >>= width;
        filled -= width;
    }
    out
}

fn pack_floats(values: &[f32]) -> (Vec<u8>, u64) {
    pack_bits(values.iter().map(|v| v.to_bits()), 32)
}

fn unpack_floats(bytes: &[u8], count: usize) -> Vec<f32> {
    unpack_bits(bytes, 32, count).into_iter().map(f32::from_bits).collect()
}

/// Header and payload byte counts of one serialized message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MessageSize {
    pub header: u64,
    pub payload: u64,
}

impl MessageSize {
    pub fn total(&self) -> u64 {
        self.header + self.payload
    }
}

struct Header {
    tag: u8,
    rows: u32,
    cols: u32,
    seeds: Vec<u64>,
    flags: Option<u8>,
    quant: Option<QuantParams>,
    fraction: f32,
}

fn dim_u32(v: usize) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::DimensionOverflow(format!("dimension {v} exceeds u32")))
}

/// Serializes one layer update. Returns the bytes and the header/payload split.
pub fn serialize_sized(enc: &EncodedUpdate) -> Result<(Vec<u8>, MessageSize)> {
    let (rows, cols) = enc.dims();
    let (header, (payload, bits)) = match enc {
        EncodedUpdate::Raw(m) => (
            Header {
                tag: TAG_RAW,
                rows: dim_u32(rows)?,
                cols: dim_u32(cols)?,
                seeds: vec![],
                flags: None,
                quant: None,
                fraction: 1.0,
            },
            pack_floats(m.data()),
        ),
        EncodedUpdate::Structured(s) => (
            Header {
                tag: match s.variant {
                    StructuredVariant::LowRank => TAG_LOW_RANK,
                    StructuredVariant::Mask => TAG_MASK,
                },
                rows: dim_u32(rows)?,
                cols: dim_u32(cols)?,
                seeds: vec![s.seed],
                flags: None,
                quant: None,
                fraction: s.fraction,
            },
            pack_floats(&s.payload),
        ),
        EncodedUpdate::Sketch(s) => {
            let (quant, packed) = match &s.payload {
                SketchPayload::Raw(v) => (None, pack_floats(v)),
                SketchPayload::Quantized { params, levels } => (
                    Some(*params),
                    if params.is_zero_range() {
                        (Vec::new(), 0)
                    } else {
                        pack_bits(levels.iter().map(|&l| u32::from(l)), u32::from(params.bits))
                    },
                ),
            };
            (
                Header {
                    tag: TAG_SKETCH,
                    rows: dim_u32(rows)?,
                    cols: dim_u32(cols)?,
                    seeds: vec![s.rotation_seed, s.subsample_seed],
                    flags: Some(if s.rotate { FLAG_ROTATE } else { 0 }),
                    quant,
                    fraction: s.fraction,
                },
                packed,
            )
        }
    };

    let mut out = Vec::with_capacity(64 + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(header.tag);
    out.extend_from_slice(&header.rows.to_le_bytes());
    out.extend_from_slice(&header.cols.to_le_bytes());
    for s in &header.seeds {
        out.extend_from_slice(&s.to_le_bytes());
    }
    if let Some(f) = header.flags {
        out.push(f);
    }
    match header.quant {
        Some(q) => {
            out.push(q.bits);
            out.extend_from_slice(&q.h_min.to_le_bytes());
            out.extend_from_slice(&q.h_max.to_le_bytes());
        }
        None => out.push(0),
    }
    out.extend_from_slice(&header.fraction.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    let header_len = out.len() as u64;
    out.extend_from_slice(&payload);
    Ok((
        out,
        MessageSize {
            header: header_len,
            payload: payload.len() as u64,
        },
    ))
}

pub fn serialize(enc: &EncodedUpdate) -> Result<Vec<u8>> {
    serialize_sized(enc).map(|(b, _)| b)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(
            Error::Truncated {
                needed: self.pos.saturating_add(n),
                got: self.buf.len(),
            },
        )?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::CorruptPayload(msg.into())
}

/// Parses one message; the whole buffer must be consumed.
pub fn deserialize(bytes: &[u8]) -> Result<EncodedUpdate> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let tag = r.u8()?;
    let n_seeds = match tag {
        TAG_RAW => 0,
        TAG_LOW_RANK | TAG_MASK => 1,
        TAG_SKETCH => 2,
        other => return Err(Error::UnknownScheme(other)),
    };
    let rows = r.u32()? as usize;
    let cols = r.u32()? as usize;
    if rows == 0 || cols == 0 {
        return Err(corrupt(format!("empty layer shape {rows}x{cols}")));
    }
    let d = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::DimensionOverflow(format!("{rows}x{cols}")))?;
    let seeds = (0..n_seeds).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
    let flags = if tag == TAG_SKETCH { r.u8()? } else { 0 };
    if flags & !FLAG_ROTATE != 0 {
        return Err(corrupt(format!("unknown flags {flags:#04x}")));
    }
    let bits = r.u8()?;
    let quant = if bits > 0 {
        if tag != TAG_SKETCH {
            return Err(corrupt("quantization bits on a non-sketch message"));
        }
        if bits > 8 {
            return Err(Error::InvalidBits(bits));
        }
        let h_min = r.f32()?;
        let h_max = r.f32()?;
        if !(h_min.is_finite() && h_max.is_finite()) || h_min > h_max {
            return Err(corrupt(format!("bad quantization range [{h_min}, {h_max}]")));
        }
        Some(QuantParams { bits, h_min, h_max })
    } else {
        None
    };
    let fraction = r.f32()?;
    let payload_bits = r.u64()?;
    let payload_len = usize::try_from(payload_bits.div_ceil(8))
        .map_err(|_| Error::DimensionOverflow(format!("{payload_bits} payload bits")))?;
    let payload = r.take(payload_len)?;
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }

    let float_count = |what: &str| -> Result<usize> {
        if payload_bits % 32 != 0 {
            return Err(corrupt(format!("{what} payload of {payload_bits} bits")));
        }
        Ok((payload_bits / 32) as usize)
    };

    let enc = match tag {
        TAG_RAW => {
            let n = float_count("raw")?;
            if n != d {
                return Err(corrupt(format!("raw payload of {n} values for {d}")));
            }
            EncodedUpdate::Raw(Matrix::new(rows, cols, unpack_floats(payload, n))?)
        }
        TAG_LOW_RANK | TAG_MASK => {
            let n = float_count("structured")?;
            let variant = if tag == TAG_LOW_RANK {
                low_rank_rank_from_payload(n, rows, cols)?;
                StructuredVariant::LowRank
            } else {
                if n == 0 || n > d {
                    return Err(corrupt(format!("mask payload of {n} values for {d}")));
                }
                StructuredVariant::Mask
            };
            EncodedUpdate::Structured(StructuredEncoded {
                variant,
                seed: seeds[0],
                rows,
                cols,
                fraction,
                payload: unpack_floats(payload, n),
            })
        }
        _ => {
            let cfg = SketchConfig {
                rotate: flags & FLAG_ROTATE != 0,
                subsample_fraction: fraction,
                bits: quant.map(|q| q.bits),
            };
            cfg.validate()?;
            let kept = cfg.kept(d);
            let payload = match quant {
                None => {
                    let n = float_count("sketch")?;
                    if n != kept {
                        return Err(corrupt(format!("sketch payload of {n} values, expected {kept}")));
                    }
                    SketchPayload::Raw(unpack_floats(payload, n))
                }
                Some(params) => {
                    let expected = if params.is_zero_range() {
                        0
                    } else {
                        kept as u64 * u64::from(params.bits)
                    };
                    if payload_bits != expected {
                        return Err(corrupt(format!(
                            "quantized payload of {payload_bits} bits, expected {expected}"
                        )));
                    }
                    let n = if params.is_zero_range() { 0 } else { kept };
                    let levels = unpack_bits(payload, u32::from(params.bits), n)
                        .into_iter()
                        .map(|v| v as u8)
                        .collect();
                    SketchPayload::Quantized { params, levels }
                }
            };
            EncodedUpdate::Sketch(SketchEncoded {
                rows,
                cols,
                rotate: cfg.rotate,
                rotation_seed: seeds[0],
                subsample_seed: seeds[1],
                fraction,
                payload,
            })
        }
    };
    Ok(enc)
}

/// `(32 · d1 · d2) / payload_bits` for one compressible layer, headers
/// excluded.
pub fn payload_compression_factor(cfg: &CompressionConfig, dims: (usize, usize)) -> f64 {
    let raw = 32.0 * (dims.0 * dims.1) as f64;
    raw / payload_bits(&cfg.scheme, dims) as f64
}

/// One uploaded layer message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LedgerEntry {
    pub round: u32,
    pub client: u32,
    pub layer: u32,
    pub size: MessageSize,
}

/// Exact uplink byte accounting.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ByteLedger {
    entries: Vec<LedgerEntry>,
    cumulative: MessageSize,
}

impl ByteLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, round: u32, client: u32, layer: u32, size: MessageSize) {
        self.entries.push(LedgerEntry {
            round,
            client,
            layer,
            size,
        });
        self.cumulative.header += size.header;
        self.cumulative.payload += size.payload;
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn cumulative(&self) -> MessageSize {
        self.cumulative
    }

    pub fn round_total(&self, round: u32) -> MessageSize {
        self.entries
            .iter()
            .filter(|e| e.round == round)
            .fold(MessageSize::default(), |acc, e| MessageSize {
                header: acc.header + e.size.header,
                payload: acc.payload + e.size.payload,
            })
    }
}
