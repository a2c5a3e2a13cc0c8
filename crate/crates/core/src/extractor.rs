//! Raw bit packing and Toeplitz hashing over GF(2).
//!
//! Row `i` of the `l x N` Toeplitz matrix is `T[i][j] = seed[i - j + N - 1]`,
//! so `y_i` is coefficient `i + N - 1` of the polynomial product
//! `seed(t) * x(t)`. The fast path computes that product with Karatsuba over
//! 64-bit carry-less multiplies.

use std::io::{Read, Write};

use log::warn;
use rand::Rng;

use crate::bound::secure_length;
use crate::error::{Error, Result};

/// Bit vector; bit `i` is bit `i % 64` of word `i / 64`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitVec {
    words: Vec<u64>,
    len: usize,
}

impl BitVec {
    pub fn new() -> Self {
        BitVec::default()
    }

    pub fn zeros(len: usize) -> Self {
        BitVec {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn random<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut v = BitVec {
            words: (0..len.div_ceil(64)).map(|_| rng.random()).collect(),
            len,
        };
        v.clear_tail();
        v
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = BitVec::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, b: bool) {
        assert!(i < self.len, "bit {i} out of {}", self.len);
        let mask = 1u64 << (i % 64);
        if b {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn push(&mut self, b: bool) {
        if self.len.is_multiple_of(64) {
            self.words.push(0);
        }
        self.len += 1;
        self.set(self.len - 1, b);
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.get(i))
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn xor(&self, other: &BitVec) -> Result<BitVec> {
        if self.len != other.len {
            return Err(Error::Dimension(format!(
                "xor of {} and {} bits",
                self.len, other.len
            )));
        }
        Ok(BitVec {
            words: self.words.iter().zip(&other.words).map(|(a, b)| a ^ b).collect(),
            len: self.len,
        })
    }

    /// Bits `start..start + len`.
    pub fn slice(&self, start: usize, len: usize) -> BitVec {
        assert!(start + len <= self.len);
        let mut out = BitVec::zeros(len);
        let (w, s) = (start / 64, start % 64);
        for (k, o) in out.words.iter_mut().enumerate() {
            let lo = self.words.get(w + k).copied().unwrap_or(0);
            *o = if s == 0 {
                lo
            } else {
                let hi = self.words.get(w + k + 1).copied().unwrap_or(0);
                lo >> s | hi << (64 - s)
            };
        }
        out.clear_tail();
        out
    }

    /// Appends all bits of `other`.
    pub fn extend(&mut self, other: &BitVec) {
        let s = self.len % 64;
        if s == 0 {
            self.words.truncate(self.len / 64);
            self.words.extend_from_slice(&other.words);
        } else {
            let mut last = self.words.pop().unwrap_or(0);
            for &w in &other.words {
                self.words.push(last | w << s);
                last = w >> (64 - s);
            }
            self.words.push(last);
        }
        self.len += other.len;
        self.words.truncate(self.len.div_ceil(64));
        self.clear_tail();
    }

    /// Removes and returns the first `n` bits.
    pub fn take_front(&mut self, n: usize) -> BitVec {
        let n = n.min(self.len);
        let head = self.slice(0, n);
        *self = self.slice(n, self.len - n);
        head
    }

    /// Packs most-significant-bit first within each byte; the last byte is
    /// zero-padded.
    pub fn to_bytes_msb(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.len.div_ceil(8)];
        for i in 0..self.len {
            if self.get(i) {
                out[i / 8] |= 0x80 >> (i % 8);
            }
        }
        out
    }

    pub fn from_bytes_msb(bytes: &[u8], len: usize) -> Result<BitVec> {
        if len > bytes.len() * 8 {
            return Err(Error::Dimension(format!(
                "{len} bits requested from {} bytes",
                bytes.len()
            )));
        }
        let mut v = BitVec::zeros(len);
        for i in 0..len {
            if bytes[i / 8] & (0x80 >> (i % 8)) != 0 {
                v.set(i, true);
            }
        }
        Ok(v)
    }

    fn clear_tail(&mut self) {
        let r = self.len % 64;
        if r != 0 {
            if let Some(last) = self.words.last_mut() {
                *last &= (1u64 << r) - 1;
            }
        }
    }
}

/// `n` samples of `b` bits each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawBitBlock {
    pub bits: BitVec,
    pub n: usize,
    pub b: u32,
}

/// Offsets each bin index by `2^(b-1)` and writes it as `b` bits,
/// most significant first.
pub fn samples_to_bits(indices: &[i64], b: u32) -> Result<RawBitBlock> {
    if b == 0 || b > 32 {
        return Err(Error::InvalidParameter(format!("bits per sample must be 1..=32, got {b}")));
    }
    let half = 1i64 << (b - 1);
    let mut bits = BitVec::zeros(indices.len() * b as usize);
    let mut pos = 0;
    for &k in indices {
        let u = k + half;
        if !(0..2 * half).contains(&u) {
            return Err(Error::Encoding { index: k, bits: b });
        }
        for s in (0..b).rev() {
            bits.set(pos, (u >> s) & 1 == 1);
            pos += 1;
        }
    }
    Ok(RawBitBlock {
        bits,
        n: indices.len(),
        b,
    })
}

/// Defining bits of an `l_max x n_raw` Toeplitz matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToeplitzSeed {
    bits: BitVec,
    l_max: usize,
    n_raw: usize,
}

impl ToeplitzSeed {
    pub fn new(bits: BitVec, l_max: usize, n_raw: usize) -> Result<Self> {
        if n_raw == 0 {
            return Err(Error::Dimension("input width must be positive".into()));
        }
        let need = l_max + n_raw - 1;
        if bits.len() != need {
            return Err(Error::Dimension(format!(
                "seed has {} bits, need {need} for {l_max} x {n_raw}",
                bits.len()
            )));
        }
        Ok(ToeplitzSeed { bits, l_max, n_raw })
    }

    pub fn random<R: Rng + ?Sized>(l_max: usize, n_raw: usize, rng: &mut R) -> Result<Self> {
        if n_raw == 0 {
            return Err(Error::Dimension("input width must be positive".into()));
        }
        ToeplitzSeed::new(BitVec::random(l_max + n_raw - 1, rng), l_max, n_raw)
    }

    /// Length of seed needed for the given dimensions.
    pub fn required_bits(l_max: usize, n_raw: usize) -> usize {
        l_max + n_raw - 1
    }

    pub fn bits(&self) -> &BitVec {
        &self.bits
    }

    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn n_raw(&self) -> usize {
        self.n_raw
    }

    /// 8-byte big-endian bit count followed by the packed bits.
    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        write_seed_bits(&self.bits, w)
    }

    /// Reads one seed record for the given dimensions.
    pub fn read_from<R: Read>(r: R, l_max: usize, n_raw: usize) -> Result<Self> {
        let bits = read_seed_bits(r)?;
        ToeplitzSeed::new(bits, l_max, n_raw)
    }
}

pub fn write_seed_bits<W: Write>(bits: &BitVec, mut w: W) -> Result<()> {
    w.write_all(&(bits.len() as u64).to_be_bytes())?;
    w.write_all(&bits.to_bytes_msb())?;
    Ok(())
}

pub fn read_seed_bits<R: Read>(mut r: R) -> Result<BitVec> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header)?;
    let len = u64::from_be_bytes(header) as usize;
    let mut bytes = vec![0u8; len.div_ceil(8)];
    r.read_exact(&mut bytes)?;
    BitVec::from_bytes_msb(&bytes, len)
}

fn check_dims(block: &BitVec, seed: &ToeplitzSeed, l: usize) -> Result<()> {
    if l > seed.l_max {
        return Err(Error::Dimension(format!(
            "output length {l} exceeds seed rows {}",
            seed.l_max
        )));
    }
    if block.len() != seed.n_raw {
        return Err(Error::Dimension(format!(
            "block has {} bits, seed expects {}",
            block.len(),
            seed.n_raw
        )));
    }
    Ok(())
}

/// Row-by-row matrix product, straight from the definition. Each row is a
/// window of the reversed seed ANDed with the input, then reduced by parity.
pub fn toeplitz_hash_reference(block: &BitVec, seed: &ToeplitzSeed, l: usize) -> Result<BitVec> {
    check_dims(block, seed, l)?;
    let n = seed.n_raw;
    let total = seed.bits.len();
    // r[t] = seed[total - 1 - t]; row i is r[(l_max - 1 - i) ..][..n]
    let mut rev = BitVec::zeros(total);
    for t in 0..total {
        rev.set(t, seed.bits.get(total - 1 - t));
    }
    let mut out = BitVec::zeros(l);
    for i in 0..l {
        let row = rev.slice(seed.l_max - 1 - i, n);
        let parity = row
            .words
            .iter()
            .zip(&block.words)
            .fold(0u32, |acc, (a, b)| acc ^ (a & b).count_ones())
            & 1;
        out.set(i, parity == 1);
    }
    Ok(out)
}

/// Fast Toeplitz hash; bit-identical to [`toeplitz_hash_reference`].
pub fn toeplitz_hash(block: &BitVec, seed: &ToeplitzSeed, l: usize) -> Result<BitVec> {
    check_dims(block, seed, l)?;
    if l == 0 {
        return Ok(BitVec::new());
    }
    let n = seed.n_raw;
    let s = seed.bits.slice(0, l + n - 1);
    let prod = gf2_mul(s.words(), block.words());
    let full = BitVec {
        len: prod.len() * 64,
        words: prod,
    };
    Ok(full.slice(n - 1, l))
}

/// Secure bits for one data block: hashes to `secure_length(n, h_low, eps)`
/// bits, clamped to the seed's row count.
pub fn extract_block(
    block: &RawBitBlock,
    h_low: f64,
    epsilon: f64,
    seed: &ToeplitzSeed,
) -> Result<BitVec> {
    let mut l = secure_length(block.n as u64, h_low, epsilon) as usize;
    if l > seed.l_max {
        warn!(
            "secure length {l} exceeds Toeplitz rows {}; truncating",
            seed.l_max
        );
        l = seed.l_max;
    }
    toeplitz_hash(&block.bits, seed, l)
}

/// Streams bits to a sink either packed MSB-first or as ASCII '0'/'1'.
pub struct BitWriter<W: Write> {
    inner: W,
    ascii: bool,
    pending: u8,
    pending_len: u8,
    written: u64,
}

impl<W: Write> BitWriter<W> {
    pub fn new(inner: W, ascii: bool) -> Self {
        BitWriter {
            inner,
            ascii,
            pending: 0,
            pending_len: 0,
            written: 0,
        }
    }

    pub fn write_bits(&mut self, bits: &BitVec) -> Result<()> {
        if self.ascii {
            let text: Vec<u8> = bits.iter().map(|b| if b { b'1' } else { b'0' }).collect();
            self.inner.write_all(&text)?;
        } else {
            let mut buf = Vec::with_capacity(bits.len() / 8 + 1);
            for b in bits.iter() {
                self.pending = self.pending << 1 | b as u8;
                self.pending_len += 1;
                if self.pending_len == 8 {
                    buf.push(self.pending);
                    self.pending = 0;
                    self.pending_len = 0;
                }
            }
            self.inner.write_all(&buf)?;
        }
        self.written += bits.len() as u64;
        Ok(())
    }

    pub fn bits_written(&self) -> u64 {
        self.written
    }

    /// Flushes a trailing partial byte (zero-padded) and returns the sink.
    pub fn finish(mut self) -> Result<W> {
        if self.pending_len > 0 {
            let byte = self.pending << (8 - self.pending_len);
            self.inner.write_all(&[byte])?;
        }
        self.inner.flush()?;
        Ok(self.inner)
    }
}

/// Reads a bit file written packed or as ASCII '0'/'1' (whitespace ignored).
pub fn read_bits<R: Read>(mut r: R, ascii: bool) -> Result<BitVec> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if ascii {
        let mut v = BitVec::new();
        for &c in &bytes {
            match c {
                b'0' => v.push(false),
                b'1' => v.push(true),
                c if c.is_ascii_whitespace() => {}
                c => {
                    return Err(Error::Io(format!("unexpected byte {c:#04x} in ASCII bit file")))
                }
            }
        }
        Ok(v)
    } else {
        BitVec::from_bytes_msb(&bytes, bytes.len() * 8)
    }
}

// ---- GF(2)[t] multiplication ----

fn clmul_soft(a: u64, b: u64) -> (u64, u64) {
    let (mut lo, mut hi) = (0u64, 0u64);
    let mut b = b;
    let mut i = 0;
    while b != 0 {
        if b & 1 == 1 {
            lo ^= a << i;
            if i > 0 {
                hi ^= a >> (64 - i);
            }
        }
        b >>= 1;
        i += 1;
    }
    (lo, hi)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "pclmulqdq,sse2")]
unsafe fn schoolbook_hw(a: &[u64], b: &[u64], out: &mut [u64]) {
    use std::arch::x86_64::*;
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        let xa = _mm_set_epi64x(0, x as i64);
        for (j, &y) in b.iter().enumerate() {
            let p = _mm_clmulepi64_si128(xa, _mm_set_epi64x(0, y as i64), 0x00);
            out[i + j] ^= _mm_cvtsi128_si64(p) as u64;
            out[i + j + 1] ^= _mm_cvtsi128_si64(_mm_unpackhi_epi64(p, p)) as u64;
        }
    }
}

fn schoolbook_soft(a: &[u64], b: &[u64], out: &mut [u64]) {
    for (i, &x) in a.iter().enumerate() {
        if x == 0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            let (lo, hi) = clmul_soft(x, y);
            out[i + j] ^= lo;
            out[i + j + 1] ^= hi;
        }
    }
}

#[derive(Clone, Copy)]
enum Kernel {
    Soft,
    #[cfg(target_arch = "x86_64")]
    Hw,
}

impl Kernel {
    fn detect() -> Self {
        #[cfg(target_arch = "x86_64")]
        if std::arch::is_x86_feature_detected!("pclmulqdq") {
            return Kernel::Hw;
        }
        Kernel::Soft
    }

    fn schoolbook(self, a: &[u64], b: &[u64], out: &mut [u64]) {
        match self {
            Kernel::Soft => schoolbook_soft(a, b, out),
            // SAFETY: only selected after runtime feature detection.
            #[cfg(target_arch = "x86_64")]
            Kernel::Hw => unsafe { schoolbook_hw(a, b, out) },
        }
    }
}

const KARATSUBA_CUTOFF: usize = 24;

/// `out ^= a * b` for equal-length operands; `out.len() >= 2 * a.len()`.
fn karatsuba(k: Kernel, a: &[u64], b: &[u64], out: &mut [u64]) {
    let n = a.len();
    debug_assert_eq!(n, b.len());
    if n <= KARATSUBA_CUTOFF {
        k.schoolbook(a, b, out);
        return;
    }
    let h = n / 2;
    let (a0, a1) = a.split_at(h);
    let (b0, b1) = b.split_at(h);
    let hi = n - h;

    let mut z0 = vec![0u64; 2 * h];
    karatsuba(k, a0, b0, &mut z0);
    let mut z2 = vec![0u64; 2 * hi];
    karatsuba(k, a1, b1, &mut z2);

    let mut sa = a1.to_vec();
    let mut sb = b1.to_vec();
    for i in 0..h {
        sa[i] ^= a0[i];
        sb[i] ^= b0[i];
    }
    let mut z1 = vec![0u64; 2 * hi];
    karatsuba(k, &sa, &sb, &mut z1);
    for (i, v) in z0.iter().enumerate() {
        z1[i] ^= v;
    }
    for (i, v) in z2.iter().enumerate() {
        z1[i] ^= v;
    }

    for (i, v) in z0.iter().enumerate() {
        out[i] ^= v;
    }
    for (i, v) in z2.iter().enumerate() {
        out[2 * h + i] ^= v;
    }
    for (i, v) in z1.iter().enumerate() {
        out[h + i] ^= v;
    }
}

/// Full product of two GF(2) polynomials given as word vectors.
fn gf2_mul(a: &[u64], b: &[u64]) -> Vec<u64> {
    let k = Kernel::detect();
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    let mut out = vec![0u64; long.len() + short.len() + 1];
    if short.is_empty() {
        return out;
    }
    let w = short.len();
    let mut chunk = vec![0u64; w];
    let mut part = vec![0u64; 2 * w];
    for start in (0..long.len()).step_by(w) {
        let end = (start + w).min(long.len());
        chunk.iter_mut().for_each(|c| *c = 0);
        chunk[..end - start].copy_from_slice(&long[start..end]);
        part.iter_mut().for_each(|p| *p = 0);
        karatsuba(k, &chunk, short, &mut part);
        for (i, p) in part.iter().enumerate() {
            if let Some(o) = out.get_mut(start + i) {
                *o ^= p;
            }
        }
    }
    out
}
