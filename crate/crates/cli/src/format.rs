//! The FFW1 and NAT1 binary containers.
//!
//! # FFW1 (weights)
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0      | 4    | magic `"FFW1"` |
//! | 4      | 4    | version, u32 LE, = 1 |
//! | 8      | 1    | kind: 0 relu, 1 relu2, 2 silu, 3 gelu, 4 reglu, 5 swiglu, 255 predictor |
//! | 9      | 1    | flags: bit0 has_v_in, bit1 has_b_in, bit2 has_b_out |
//! | 10     | 4    | d_model, u32 LE |
//! | 14     | 4    | d_ff, u32 LE (predictor: the rank `r`) |
//! | 18     | …    | payload: f32 LE, row-major, in order `W_in`/`W1`, `[V_in]`, `W_out`/`W2`, `[b_in`/`b1]`, `[b_out`/`b2]` |
//!
//! For the predictor record the two header dims are `d_model` and `r`; its
//! output width is recovered from the payload length (`W1` is `r × d_model`,
//! `W2` is `d_ff × r`, plus the two bias vectors), and the division must be
//! exact or the file is rejected. Predictor records always carry both biases
//! and never a gate.
//!
//! # NAT1 (traces)
//!
//! | offset | size | field |
//! |--------|------|-------|
//! | 0      | 4    | magic `"NAT1"` |
//! | 4      | 4    | version, u32 LE, = 1 |
//! | 8      | 1    | record kind: 0 f32 magnitudes, 1 bitmask sets, 2 f32 inputs |
//! | 9      | 4    | n_layers, u32 LE |
//! | 13     | 4    | d, u32 LE (d_ff for kinds 0/1, d_model for kind 2) |
//! | 17     | 8    | n_tokens, u64 LE |
//! | 25     | …    | payload, token-major then layer-major |
//!
//! Bitmask rows are padded to whole bytes, little-endian bit order (neuron
//! `8b + j` is bit `j` of row byte `b`); pad bits must be zero. Payload
//! lengths must match the header exactly, so `read(write(x)) = x` and
//! `write(read(bytes)) = bytes`.

use std::path::Path;

use tailcut_core::affinity::ActivationSetTrace;
use tailcut_core::ffn::{ActivationKind, FfnWeights};
use tailcut_core::predictor::PredictorParams;
use tailcut_core::sparsity::{InputTrace, MagnitudeTrace};
use tailcut_core::tensor::{Matrix, Vector};
use tailcut_core::CoreError;

pub const FFW1_MAGIC: [u8; 4] = *b"FFW1";
pub const NAT1_MAGIC: [u8; 4] = *b"NAT1";
pub const FORMAT_VERSION: u32 = 1;
pub const PREDICTOR_KIND_CODE: u8 = 255;

const FLAG_HAS_V_IN: u8 = 1 << 0;
const FLAG_HAS_B_IN: u8 = 1 << 1;
const FLAG_HAS_B_OUT: u8 = 1 << 2;

/// Hard cap on element counts, so corrupt headers cannot trigger huge
/// allocations.
const MAX_ELEMENTS: u64 = 1 << 33;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated file: need {expected} bytes, have {actual}")]
    Truncated { expected: u64, actual: u64 },
    #[error("trailing bytes: expected exactly {expected} bytes, have {actual}")]
    TrailingBytes { expected: u64, actual: u64 },
    #[error("unknown kind byte {0}")]
    InvalidKind(u8),
    #[error("invalid flags {flags:#04x}: {reason}")]
    InvalidFlags { flags: u8, reason: &'static str },
    #[error("dimension overflow: {0}")]
    DimensionOverflow(String),
    #[error("non-finite value at element {0}")]
    NonFinite(usize),
    #[error("nonzero padding bits in bitmask row (token {token}, layer {layer})")]
    PadBitsSet { token: usize, layer: usize },
    #[error("inconsistent payload: {0}")]
    Inconsistent(String),
    #[error("{0}")]
    Invalid(#[from] CoreError),
}

type Result<T> = std::result::Result<T, FormatError>;

pub fn kind_code(kind: ActivationKind) -> u8 {
    match kind {
        ActivationKind::Relu => 0,
        ActivationKind::Relu2 => 1,
        ActivationKind::Silu => 2,
        ActivationKind::Gelu => 3,
        ActivationKind::Reglu => 4,
        ActivationKind::Swiglu => 5,
    }
}

pub fn kind_from_code(code: u8) -> Option<ActivationKind> {
    Some(match code {
        0 => ActivationKind::Relu,
        1 => ActivationKind::Relu2,
        2 => ActivationKind::Silu,
        3 => ActivationKind::Gelu,
        4 => ActivationKind::Reglu,
        5 => ActivationKind::Swiglu,
        _ => return None,
    })
}

/// Contents of one FFW1 file.
#[derive(Debug, Clone, PartialEq)]
pub enum WeightsPayload {
    Ffn(FfnWeights<f32>),
    Predictor(PredictorParams<f32>),
}

// ---------------------------------------------------------------------------
// primitive readers/writers
// ---------------------------------------------------------------------------

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn need(&self, n: u64) -> Result<()> {
        let expected = self.pos as u64 + n;
        if expected > self.bytes.len() as u64 {
            return Err(FormatError::Truncated {
                expected,
                actual: self.bytes.len() as u64,
            });
        }
        Ok(())
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        self.need(n as u64)?;
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
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

    fn f32_slice(&mut self, count: usize) -> Result<Vec<f32>> {
        let raw = self.take(count * 4)?;
        let mut out = Vec::with_capacity(count);
        for (i, chunk) in raw.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(FormatError::NonFinite(self.pos / 4 + i));
            }
            out.push(v);
        }
        Ok(out)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(FormatError::TrailingBytes {
                expected: self.pos as u64,
                actual: self.bytes.len() as u64,
            });
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn checked_elems(factors: &[u64]) -> Result<usize> {
    let mut acc: u64 = 1;
    for &f in factors {
        acc = acc
            .checked_mul(f)
            .ok_or_else(|| FormatError::DimensionOverflow(format!("{factors:?}")))?;
    }
    if acc > MAX_ELEMENTS {
        return Err(FormatError::DimensionOverflow(format!(
            "{acc} elements exceeds cap {MAX_ELEMENTS}"
        )));
    }
    Ok(acc as usize)
}

// ---------------------------------------------------------------------------
// FFW1
// ---------------------------------------------------------------------------

fn ffw1_header(kind: u8, flags: u8, d_model: u32, d_ff: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(18);
    out.extend_from_slice(&FFW1_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(kind);
    out.push(flags);
    out.extend_from_slice(&d_model.to_le_bytes());
    out.extend_from_slice(&d_ff.to_le_bytes());
    out
}

pub fn write_ffw1(payload: &WeightsPayload) -> Vec<u8> {
    match payload {
        WeightsPayload::Ffn(w) => {
            let mut flags = 0u8;
            if w.v_in().is_some() {
                flags |= FLAG_HAS_V_IN;
            }
            if w.b_in().is_some() {
                flags |= FLAG_HAS_B_IN;
            }
            if w.b_out().is_some() {
                flags |= FLAG_HAS_B_OUT;
            }
            let mut out = ffw1_header(
                kind_code(w.kind()),
                flags,
                w.d_model() as u32,
                w.d_ff() as u32,
            );
            push_f32s(&mut out, w.w_in().as_slice());
            if let Some(v) = w.v_in() {
                push_f32s(&mut out, v.as_slice());
            }
            push_f32s(&mut out, w.w_out().as_slice());
            if let Some(b) = w.b_in() {
                push_f32s(&mut out, b.as_slice());
            }
            if let Some(b) = w.b_out() {
                push_f32s(&mut out, b.as_slice());
            }
            out
        }
        WeightsPayload::Predictor(p) => {
            let mut out = ffw1_header(
                PREDICTOR_KIND_CODE,
                FLAG_HAS_B_IN | FLAG_HAS_B_OUT,
                p.d_model() as u32,
                p.rank() as u32,
            );
            push_f32s(&mut out, p.w1.as_slice());
            push_f32s(&mut out, p.w2.as_slice());
            push_f32s(&mut out, p.b1.as_slice());
            push_f32s(&mut out, p.b2.as_slice());
            out
        }
    }
}

pub fn read_ffw1(bytes: &[u8]) -> Result<WeightsPayload> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != FFW1_MAGIC {
        return Err(FormatError::BadMagic {
            expected: FFW1_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let kind_byte = r.u8()?;
    let flags = r.u8()?;
    if flags & !(FLAG_HAS_V_IN | FLAG_HAS_B_IN | FLAG_HAS_B_OUT) != 0 {
        return Err(FormatError::InvalidFlags {
            flags,
            reason: "unknown flag bits",
        });
    }
    let d_model = r.u32()? as u64;
    let d_ff = r.u32()? as u64;
    if d_model == 0 || d_ff == 0 {
        return Err(FormatError::DimensionOverflow("zero dimension".into()));
    }

    if kind_byte == PREDICTOR_KIND_CODE {
        return read_predictor_payload(r, flags, d_model, d_ff);
    }
    let kind = kind_from_code(kind_byte).ok_or(FormatError::InvalidKind(kind_byte))?;
    let has_v_in = flags & FLAG_HAS_V_IN != 0;
    let has_b_in = flags & FLAG_HAS_B_IN != 0;
    let has_b_out = flags & FLAG_HAS_B_OUT != 0;
    if kind.is_gated() && (!has_v_in || has_b_in || has_b_out) {
        return Err(FormatError::InvalidFlags {
            flags,
            reason: "gated kinds take a gate matrix and no biases",
        });
    }
    if !kind.is_gated() && has_v_in {
        return Err(FormatError::InvalidFlags {
            flags,
            reason: "two-layer kinds take no gate matrix",
        });
    }

    let matrix_elems = checked_elems(&[d_ff, d_model])?;
    let w_in = Matrix::new(d_ff as usize, d_model as usize, r.f32_slice(matrix_elems)?)?;
    let v_in = if has_v_in {
        Some(Matrix::new(
            d_ff as usize,
            d_model as usize,
            r.f32_slice(matrix_elems)?,
        )?)
    } else {
        None
    };
    let w_out = Matrix::new(d_model as usize, d_ff as usize, r.f32_slice(matrix_elems)?)?;
    let b_in = if has_b_in {
        Some(Vector::new(r.f32_slice(d_ff as usize)?)?)
    } else {
        None
    };
    let b_out = if has_b_out {
        Some(Vector::new(r.f32_slice(d_model as usize)?)?)
    } else {
        None
    };
    r.finish()?;
    Ok(WeightsPayload::Ffn(FfnWeights::new(
        kind, w_in, v_in, w_out, b_in, b_out,
    )?))
}

fn read_predictor_payload(
    mut r: Reader<'_>,
    flags: u8,
    d_model: u64,
    rank: u64,
) -> Result<WeightsPayload> {
    if flags != FLAG_HAS_B_IN | FLAG_HAS_B_OUT {
        return Err(FormatError::InvalidFlags {
            flags,
            reason: "predictor records carry both biases and no gate",
        });
    }
    let remaining = (r.bytes.len() - r.pos) as u64;
    if !remaining.is_multiple_of(4) {
        return Err(FormatError::Inconsistent(
            "predictor payload is not a whole number of f32s".into(),
        ));
    }
    let total = remaining / 4;
    // total = r*d_model + d_ff*r + r + d_ff  =>  d_ff = (total - r*d_model - r)/(r + 1)
    let head = rank
        .checked_mul(d_model)
        .and_then(|v| v.checked_add(rank))
        .ok_or_else(|| FormatError::DimensionOverflow("predictor dims".into()))?;
    if total < head {
        return Err(FormatError::Truncated {
            expected: 18 + head * 4,
            actual: r.bytes.len() as u64,
        });
    }
    let rest = total - head;
    if !rest.is_multiple_of(rank + 1) || rest == 0 {
        return Err(FormatError::Inconsistent(format!(
            "predictor payload length {total} does not factor as r*d_model + d_ff*(r+1) + r \
             with r={rank}, d_model={d_model}"
        )));
    }
    let d_ff = rest / (rank + 1);
    let w1_elems = checked_elems(&[rank, d_model])?;
    let w2_elems = checked_elems(&[d_ff, rank])?;
    let w1 = Matrix::new(rank as usize, d_model as usize, r.f32_slice(w1_elems)?)?;
    let w2 = Matrix::new(d_ff as usize, rank as usize, r.f32_slice(w2_elems)?)?;
    let b1 = Vector::new(r.f32_slice(rank as usize)?)?;
    let b2 = Vector::new(r.f32_slice(d_ff as usize)?)?;
    r.finish()?;
    Ok(WeightsPayload::Predictor(PredictorParams::new(
        w1, b1, w2, b2,
    )?))
}

// ---------------------------------------------------------------------------
// NAT1
// ---------------------------------------------------------------------------

/// Contents of one NAT1 file.
#[derive(Debug, Clone, PartialEq)]
pub enum TracePayload {
    /// Record kind 0: per-token per-layer f32 neuron output magnitudes.
    Magnitudes(MagnitudeTrace<f32>),
    /// Record kind 1: per-token per-layer activation bitmasks.
    Masks(ActivationSetTrace),
    /// Record kind 2: per-token per-layer f32 FFN inputs.
    Inputs(InputTrace<f32>),
}

fn nat1_header(record_kind: u8, n_layers: u32, d: u32, n_tokens: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(25);
    out.extend_from_slice(&NAT1_MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(record_kind);
    out.extend_from_slice(&n_layers.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    out.extend_from_slice(&n_tokens.to_le_bytes());
    out
}

pub fn write_nat1(payload: &TracePayload) -> Vec<u8> {
    match payload {
        TracePayload::Magnitudes(t) => {
            let mut out = nat1_header(0, t.n_layers() as u32, t.d_ff() as u32, t.n_tokens() as u64);
            push_f32s(&mut out, t.all_magnitudes());
            out
        }
        TracePayload::Masks(t) => {
            let row_bytes = t.d_ff().div_ceil(8);
            let mut out = nat1_header(1, t.n_layers() as u32, t.d_ff() as u32, t.n_tokens() as u64);
            for token in 0..t.n_tokens() {
                for layer in 0..t.n_layers() {
                    let mut row = vec![0u8; row_bytes];
                    for &i in t.set(token, layer) {
                        row[i as usize / 8] |= 1 << (i % 8);
                    }
                    out.extend_from_slice(&row);
                }
            }
            out
        }
        TracePayload::Inputs(t) => {
            let mut out = nat1_header(
                2,
                t.n_layers() as u32,
                t.d_model() as u32,
                t.n_tokens() as u64,
            );
            push_f32s(&mut out, t.as_slice());
            out
        }
    }
}

pub fn read_nat1(bytes: &[u8]) -> Result<TracePayload> {
    let mut r = Reader::new(bytes);
    let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
    if magic != NAT1_MAGIC {
        return Err(FormatError::BadMagic {
            expected: NAT1_MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let record_kind = r.u8()?;
    let n_layers = r.u32()? as u64;
    let d = r.u32()? as u64;
    let n_tokens = r.u64()?;
    if n_layers == 0 || d == 0 || n_tokens == 0 {
        return Err(FormatError::DimensionOverflow("zero dimension".into()));
    }
    match record_kind {
        0 => {
            let elems = checked_elems(&[n_tokens, n_layers, d])?;
            let mags = r.f32_slice(elems)?;
            r.finish()?;
            Ok(TracePayload::Magnitudes(MagnitudeTrace::new(
                n_tokens as usize,
                n_layers as usize,
                d as usize,
                mags,
                None,
            )?))
        }
        1 => {
            let row_bytes = d.div_ceil(8);
            let total = checked_elems(&[n_tokens, n_layers, row_bytes])?;
            let raw = r.take(total)?;
            r.finish()?;
            let mut sets = Vec::with_capacity((n_tokens * n_layers) as usize);
            for token in 0..n_tokens as usize {
                for layer in 0..n_layers as usize {
                    let base = (token * n_layers as usize + layer) * row_bytes as usize;
                    let row = &raw[base..base + row_bytes as usize];
                    let mut set = Vec::new();
                    for (b, &byte) in row.iter().enumerate() {
                        for j in 0..8 {
                            if byte >> j & 1 != 0 {
                                let neuron = b * 8 + j;
                                if neuron >= d as usize {
                                    return Err(FormatError::PadBitsSet { token, layer });
                                }
                                set.push(neuron as u32);
                            }
                        }
                    }
                    sets.push(set);
                }
            }
            Ok(TracePayload::Masks(ActivationSetTrace::new(
                n_tokens as usize,
                n_layers as usize,
                d as usize,
                sets,
            )?))
        }
        2 => {
            let elems = checked_elems(&[n_tokens, n_layers, d])?;
            let data = r.f32_slice(elems)?;
            r.finish()?;
            Ok(TracePayload::Inputs(InputTrace::new(
                n_tokens as usize,
                n_layers as usize,
                d as usize,
                data,
            )?))
        }
        k => Err(FormatError::InvalidKind(k)),
    }
}

// ---------------------------------------------------------------------------
// file helpers
// ---------------------------------------------------------------------------

pub fn load_ffw1(path: &Path) -> crate::error::Result<WeightsPayload> {
    let bytes = std::fs::read(path)?;
    Ok(read_ffw1(&bytes)?)
}

pub fn save_ffw1(path: &Path, payload: &WeightsPayload) -> crate::error::Result<()> {
    Ok(std::fs::write(path, write_ffw1(payload))?)
}

pub fn load_nat1(path: &Path) -> crate::error::Result<TracePayload> {
    let bytes = std::fs::read(path)?;
    Ok(read_nat1(&bytes)?)
}

pub fn save_nat1(path: &Path, payload: &TracePayload) -> crate::error::Result<()> {
    Ok(std::fs::write(path, write_nat1(payload))?)
}
