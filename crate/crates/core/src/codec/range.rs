//! Byte-oriented range coder with carry propagation: 16-bit frequency
//! tables, adaptive binary models and raw bypass bits.

use crate::error::{CoreError, Result};

pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
const TOP: u32 = 1 << 24;
const BIT_MODEL_BITS: u32 = 11;
const BIT_MODEL_ONE: u16 = 1 << BIT_MODEL_BITS;
const BIT_MODEL_SHIFT: u32 = 5;

/// Adaptive probability that the next bit is 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitModel(u16);

impl Default for BitModel {
    fn default() -> Self {
        Self(BIT_MODEL_ONE / 2)
    }
}

impl BitModel {
    /// Ideal cost in bits of coding `bit` with the current state.
    pub fn cost(&self, bit: bool) -> f64 {
        let p0 = self.0 as f64 / BIT_MODEL_ONE as f64;
        -(if bit { 1.0 - p0 } else { p0 }).log2()
    }

    fn update(&mut self, bit: bool) {
        if bit {
            self.0 -= self.0 >> BIT_MODEL_SHIFT;
        } else {
            self.0 += (BIT_MODEL_ONE - self.0) >> BIT_MODEL_SHIFT;
        }
    }
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
        }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Code the interval `[cum, cum + freq)` out of `PROB_TOTAL`.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= PROB_TOTAL);
        let r = self.range >> PROB_BITS;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        self.normalize();
    }

    pub fn encode_bit(&mut self, model: &mut BitModel, bit: bool) {
        let bound = (self.range >> BIT_MODEL_BITS) * model.0 as u32;
        if bit {
            self.low += bound as u64;
            self.range -= bound;
        } else {
            self.range = bound;
        }
        model.update(bit);
        self.normalize();
    }

    pub fn encode_bypass(&mut self, bit: bool) {
        self.range >>= 1;
        if bit {
            self.low += self.range as u64;
        }
        self.normalize();
    }

    /// Zigzag Exp-Golomb code of `v` in bypass bits.
    pub fn encode_signed_golomb(&mut self, v: i64) {
        let u = ((v << 1) ^ (v >> 63)) as u64 + 1;
        let n = 64 - u.leading_zeros();
        for _ in 1..n {
            self.encode_bypass(false);
        }
        for i in (0..n).rev() {
            self.encode_bypass((u >> i) & 1 == 1);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    range: u32,
    code: u32,
    data: &'a [u8],
    pos: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        if data.len() < 5 {
            return Err(CoreError::Decode("range-coded payload is truncated".into()));
        }
        let mut d = Self {
            range: u32::MAX,
            code: 0,
            data,
            pos: 0,
        };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        Ok(d)
    }

    /// Bytes past the end read as zero; the checksum layer catches truncation.
    fn next_byte(&mut self) -> u8 {
        let b = self.data.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    fn normalize(&mut self) {
        while self.range < TOP {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u32;
        }
    }

    /// Cumulative frequency the next symbol falls into.
    pub fn peek(&mut self) -> u32 {
        let r = self.range >> PROB_BITS;
        (self.code / r).min(PROB_TOTAL - 1)
    }

    /// Consume the symbol occupying `[cum, cum + freq)`.
    pub fn consume(&mut self, cum: u32, freq: u32) {
        let r = self.range >> PROB_BITS;
        self.code = self.code.wrapping_sub(r * cum);
        self.range = r * freq;
        self.normalize();
    }

    pub fn decode_bit(&mut self, model: &mut BitModel) -> bool {
        let bound = (self.range >> BIT_MODEL_BITS) * model.0 as u32;
        let bit = if self.code < bound {
            self.range = bound;
            false
        } else {
            self.code -= bound;
            self.range -= bound;
            true
        };
        model.update(bit);
        self.normalize();
        bit
    }

    pub fn decode_bypass(&mut self) -> bool {
        self.range >>= 1;
        let bit = self.code >= self.range;
        if bit {
            self.code -= self.range;
        }
        self.normalize();
        bit
    }

    pub fn decode_signed_golomb(&mut self) -> Result<i64> {
        let mut zeros = 0;
        while !self.decode_bypass() {
            zeros += 1;
            if zeros > 63 {
                return Err(CoreError::Decode("escape code is too long".into()));
            }
        }
        let mut u: u64 = 1;
        for _ in 0..zeros {
            u = (u << 1) | self.decode_bypass() as u64;
        }
        let z = u - 1;
        Ok(((z >> 1) as i64) ^ -((z & 1) as i64))
    }
}

fn check_cdf(cdf: &[u32]) -> Result<()> {
    if cdf.len() < 2 || cdf[0] != 0 || *cdf.last().unwrap() != PROB_TOTAL {
        return Err(CoreError::Contract("cdf must start at 0 and end at 2^16".into()));
    }
    if cdf.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CoreError::Contract("cdf must be strictly increasing".into()));
    }
    Ok(())
}

const HEADER: usize = 8;

/// Frame a coded body with its CRC32 and symbol count.
pub fn frame_payload(body: &[u8], count: u32) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + body.len());
    out.extend(crc32fast::hash(body).to_le_bytes());
    out.extend(count.to_le_bytes());
    out.extend_from_slice(body);
    out
}

/// Verify the frame and return `(body, count)`.
pub fn unframe_payload(bytes: &[u8]) -> Result<(&[u8], u32)> {
    if bytes.len() < HEADER {
        return Err(CoreError::Decode("payload shorter than its header".into()));
    }
    let crc = u32::from_le_bytes(bytes[0..4].try_into().unwrap());
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let body = &bytes[HEADER..];
    if crc32fast::hash(body) != crc {
        return Err(CoreError::Decode("payload checksum mismatch".into()));
    }
    Ok((body, count))
}

/// Code `symbols[i]` under frequency table `cdfs[i]` (`len = alphabet + 1`).
pub fn range_encode(symbols: &[usize], cdfs: &[Vec<u32>]) -> Result<Vec<u8>> {
    if symbols.len() != cdfs.len() {
        return Err(CoreError::Contract("one cdf per symbol is required".into()));
    }
    if symbols.is_empty() {
        return Ok(frame_payload(&[], 0));
    }
    let mut enc = RangeEncoder::new();
    for (&s, cdf) in symbols.iter().zip(cdfs) {
        check_cdf(cdf)?;
        if s + 1 >= cdf.len() {
            return Err(CoreError::Contract(format!("symbol {s} outside its alphabet")));
        }
        enc.encode(cdf[s], cdf[s + 1] - cdf[s]);
    }
    Ok(frame_payload(&enc.finish(), symbols.len() as u32))
}

pub fn range_decode(bytes: &[u8], cdfs: &[Vec<u32>]) -> Result<Vec<usize>> {
    let (body, count) = unframe_payload(bytes)?;
    if count as usize != cdfs.len() {
        return Err(CoreError::Decode(format!(
            "payload holds {count} symbols, {} cdfs supplied",
            cdfs.len()
        )));
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    let mut dec = RangeDecoder::new(body)?;
    let mut out = Vec::with_capacity(cdfs.len());
    for cdf in cdfs {
        check_cdf(cdf)?;
        let v = dec.peek();
        let s = cdf.partition_point(|&c| c <= v) - 1;
        dec.consume(cdf[s], cdf[s + 1] - cdf[s]);
        out.push(s);
    }
    Ok(out)
}
