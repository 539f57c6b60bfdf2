//! Deterministic randomness for the protocol layer.
//!
//! Every random object in the system (base-OT seeds, garbling deltas, share
//! masks, weight initialization) is expanded from explicit 128-bit seeds with
//! AES-128 in counter mode, so both parties can regenerate identical streams
//! from a stored seed and counter. Seeds for independent purposes are derived
//! from a master seed through SHA-256 domain separation.

use aes::cipher::{generic_array::GenericArray, BlockEncrypt, KeyInit};
use aes::Aes128;
use rand_core::{CryptoRng, RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// AES-128 counter-mode pseudorandom generator.
pub struct AesPrg {
    cipher: Aes128,
    counter: u128,
    buf: [u8; 16],
    used: usize,
}

impl AesPrg {
    /// Creates a generator keyed by `seed` starting at block counter zero.
    pub fn new(seed: [u8; 16]) -> Self {
        Self::with_counter(seed, 0)
    }

    /// Creates a generator keyed by `seed` starting at the given block
    /// counter, used to resume a stream recorded in a checkpoint.
    pub fn with_counter(seed: [u8; 16], counter: u128) -> Self {
        AesPrg {
            cipher: Aes128::new(GenericArray::from_slice(&seed)),
            counter,
            buf: [0u8; 16],
            used: 16,
        }
    }

    /// Number of 16-byte blocks consumed so far, for checkpointing.
    pub fn block_counter(&self) -> u128 {
        self.counter
    }

    fn refill(&mut self) {
        let mut block = GenericArray::from(self.counter.to_le_bytes());
        self.cipher.encrypt_block(&mut block);
        self.buf.copy_from_slice(&block);
        self.counter = self.counter.wrapping_add(1);
        self.used = 0;
    }
}

impl RngCore for AesPrg {
    fn next_u32(&mut self) -> u32 {
        let mut out = [0u8; 4];
        self.fill_bytes(&mut out);
        u32::from_le_bytes(out)
    }

    fn next_u64(&mut self) -> u64 {
        let mut out = [0u8; 8];
        self.fill_bytes(&mut out);
        u64::from_le_bytes(out)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        let mut offset = 0;
        while offset < dest.len() {
            if self.used == 16 {
                self.refill();
            }
            let take = (dest.len() - offset).min(16 - self.used);
            dest[offset..offset + take].copy_from_slice(&self.buf[self.used..self.used + take]);
            self.used += take;
            offset += take;
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand_core::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}

impl CryptoRng for AesPrg {}

impl SeedableRng for AesPrg {
    type Seed = [u8; 16];

    fn from_seed(seed: Self::Seed) -> Self {
        AesPrg::new(seed)
    }
}

/// Derives an independent 128-bit seed from a master seed and a domain label.
pub fn derive_seed(master: &[u8], label: &[u8]) -> [u8; 16] {
    let mut h = Sha256::new();
    h.update((master.len() as u64).to_be_bytes());
    h.update(master);
    h.update(label);
    let digest = h.finalize();
    let mut out = [0u8; 16];
    out.copy_from_slice(&digest[..16]);
    out
}

/// Doubling in GF(2^128) with reduction polynomial x^128 + x^7 + x^2 + x + 1.
pub fn gf_double(x: u128) -> u128 {
    let reduction = (x >> 127) * 0x87;
    (x << 1) ^ reduction
}

/// Public key of the fixed permutation behind [`MmoHash`]. Both parties use
/// the same constant, which the session handshake pins.
pub const MMO_FIXED_KEY: [u8; 16] = [
    0x24, 0x1b, 0x5c, 0x8f, 0x6a, 0x03, 0xd7, 0x91, 0x4e, 0xb2, 0x70, 0xc5, 0x3d, 0xe8, 0x16, 0xa9,
];

/// Tweaked fixed-key block-cipher hash used to mask extension-transfer rows
/// and garbled-table entries: `hash(t, x) = E(2x ^ t) ^ 2x ^ t` where `E` is
/// AES-128 under [`MMO_FIXED_KEY`] and `2x` is GF(2^128) doubling.
pub struct MmoHash {
    cipher: Aes128,
}

impl MmoHash {
    pub fn new() -> Self {
        MmoHash {
            cipher: Aes128::new(GenericArray::from_slice(&MMO_FIXED_KEY)),
        }
    }

    pub fn hash(&self, tweak: u128, x: u128) -> u128 {
        let masked = gf_double(x) ^ tweak;
        let mut block = GenericArray::from(masked.to_le_bytes());
        self.cipher.encrypt_block(&mut block);
        let mut out = [0u8; 16];
        out.copy_from_slice(&block);
        u128::from_le_bytes(out) ^ masked
    }
}

impl Default for MmoHash {
    fn default() -> Self {
        MmoHash::new()
    }
}
