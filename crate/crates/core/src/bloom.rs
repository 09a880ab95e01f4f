//! Small Bloom filters and concatenated filter elements.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const DEFAULT_K_HASH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BloomParams {
    pub m: usize,
    #[serde(default = "default_k_hash")]
    pub k_hash: usize,
}

fn default_k_hash() -> usize {
    DEFAULT_K_HASH
}

impl BloomParams {
    /// `m = 6k` bits for fan-out `k`.
    pub fn for_fanout(k: usize) -> Self {
        BloomParams { m: 6 * k, k_hash: DEFAULT_K_HASH }
    }

    /// Exact false-positive probability after `n` insertions with independent positions.
    pub fn analytic_fpr(&self, n: usize) -> f64 {
        let m = self.m as f64;
        (1.0 - (1.0 - 1.0 / m).powf((self.k_hash * n) as f64)).powf(self.k_hash as f64)
    }
}

/// Bit positions for `nonce`: successive 8-byte words of `SHA-256(nonce || counter)`.
pub fn positions(nonce: u64, p: BloomParams) -> Vec<usize> {
    let mut out = Vec::with_capacity(p.k_hash);
    let mut counter = 0u8;
    while out.len() < p.k_hash {
        let mut h = Sha256::new();
        h.update(nonce.to_be_bytes());
        h.update([counter]);
        let d = h.finalize();
        for w in d.chunks_exact(8) {
            if out.len() == p.k_hash {
                break;
            }
            out.push((u64::from_be_bytes(w.try_into().unwrap()) % p.m as u64) as usize);
        }
        counter += 1;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BloomFilter {
    bits: Vec<bool>,
    k_hash: usize,
    #[serde(skip)]
    inserted: usize,
}

impl BloomFilter {
    pub fn new(p: BloomParams) -> Self {
        assert!(p.m > 0 && p.k_hash > 0);
        BloomFilter { bits: vec![false; p.m], k_hash: p.k_hash, inserted: 0 }
    }

    pub fn params(&self) -> BloomParams {
        BloomParams { m: self.bits.len(), k_hash: self.k_hash }
    }

    pub fn m(&self) -> usize {
        self.bits.len()
    }

    pub fn inserted(&self) -> usize {
        self.inserted
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn from_bits(bits: Vec<bool>, k_hash: usize) -> Self {
        BloomFilter { bits, k_hash, inserted: 0 }
    }

    pub fn insert(&mut self, nonce: u64) {
        for i in positions(nonce, self.params()) {
            self.bits[i] = true;
        }
        self.inserted += 1;
    }

    pub fn query(&self, nonce: u64) -> bool {
        positions(nonce, self.params()).into_iter().all(|i| self.bits[i])
    }

    pub fn is_subset_of(&self, other: &BloomFilter) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn clear(&mut self) {
        self.bits.iter_mut().for_each(|b| *b = false);
    }
}

pub fn bloom_insert(f: &mut BloomFilter, nonce: u64) {
    f.insert(nonce)
}

pub fn bloom_query(f: &BloomFilter, nonce: u64) -> bool {
    f.query(nonce)
}

/// One array element: equal-width filters laid end to end.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterElement {
    pub slices: Vec<BloomFilter>,
}

impl FilterElement {
    pub fn single(f: BloomFilter) -> Self {
        FilterElement { slices: vec![f] }
    }

    pub fn bit_len(&self) -> usize {
        self.slices.iter().map(|s| s.m()).sum()
    }

    pub fn concat(&mut self, other: &FilterElement) {
        self.slices.extend(other.slices.iter().cloned());
    }

    pub fn query(&self, nonce: u64) -> bool {
        self.slices.iter().any(|s| s.query(nonce))
    }

    /// Big-endian bit packing; the last byte is zero-padded.
    pub fn pack(&self) -> Vec<u8> {
        let bits: Vec<bool> = self.slices.iter().flat_map(|s| s.bits().iter().copied()).collect();
        pack_bits(&bits)
    }
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    bits.chunks(8)
        .map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b as u8) << (7 - i))))
        .collect()
}

/// Membership across a raw bit string cut into `m`-bit slices.
pub fn element_query(bits: &[bool], p: BloomParams, nonce: u64) -> Result<bool> {
    if p.m == 0 || bits.len() % p.m != 0 {
        return Err(Error::MalformedElement(bits.len(), p.m));
    }
    Ok(bits
        .chunks(p.m)
        .any(|c| positions(nonce, p).into_iter().all(|i| c[i])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const P12: BloomParams = BloomParams { m: 12, k_hash: 4 };

    #[test]
    fn insert_then_query() {
        let mut f = BloomFilter::new(P12);
        assert!(!f.query(77));
        f.insert(77);
        assert!(f.query(77));
        assert_eq!(f.inserted(), 1);
    }

    #[test]
    fn empty_filter_rejects_everything() {
        let f = BloomFilter::new(P12);
        assert!((0..1000).all(|x| !f.query(x)));
    }

    #[test]
    fn element_query_over_slices() {
        let mut a = BloomFilter::new(P12);
        a.insert(1);
        let mut b = BloomFilter::new(P12);
        b.insert(2);
        let mut c = BloomFilter::new(P12);
        c.insert(3);
        let e = FilterElement { slices: vec![a, b, c] };
        assert!(e.query(2));
        let bits: Vec<bool> = e.slices.iter().flat_map(|s| s.bits().to_vec()).collect();
        assert_eq!(element_query(&bits, P12, 2).unwrap(), true);
        assert!(matches!(element_query(&bits[..30], P12, 2), Err(Error::MalformedElement(30, 12))));
    }

    #[test]
    fn pack_is_big_endian() {
        let bits = [true, false, false, false, false, false, false, true, true, true, false, false];
        assert_eq!(pack_bits(&bits), vec![0x81, 0xC0]);
    }

    #[test]
    fn fpr_m12_two_inserts() {
        // Monte Carlo against the closed form; a fresh filter per probe.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let trials = 100_000;
        let mut fp = 0;
        for _ in 0..trials {
            let mut f = BloomFilter::new(P12);
            f.insert(rng.gen());
            f.insert(rng.gen());
            fp += f.query(rng.gen()) as u32;
        }
        let measured = fp as f64 / trials as f64;
        let exact = P12.analytic_fpr(2);
        assert!((exact - 0.063).abs() < 0.001);
        assert!((measured - exact).abs() <= 0.02, "measured {measured} exact {exact}");
    }

    proptest! {
        #[test]
        fn no_false_negatives(nonces in proptest::collection::vec(any::<u64>(), 1..20), m in 6usize..64) {
            let p = BloomParams { m, k_hash: 4 };
            let mut f = BloomFilter::new(p);
            for &n in &nonces {
                f.insert(n);
            }
            for &n in &nonces {
                prop_assert!(f.query(n));
            }
        }

        #[test]
        fn concat_preserves_membership(xs in proptest::collection::vec(any::<u64>(), 1..6), ys in proptest::collection::vec(any::<u64>(), 1..6)) {
            let mut a = BloomFilter::new(P12);
            xs.iter().for_each(|&x| a.insert(x));
            let mut b = BloomFilter::new(P12);
            ys.iter().for_each(|&y| b.insert(y));
            let mut e = FilterElement::single(a);
            e.concat(&FilterElement::single(b));
            prop_assert!(xs.iter().chain(&ys).all(|&n| e.query(n)));
        }

        #[test]
        fn superset_monotone(xs in proptest::collection::vec(any::<u64>(), 1..6), extra in proptest::collection::vec(any::<u64>(), 0..6), q in any::<u64>()) {
            let mut small = BloomFilter::new(P12);
            xs.iter().for_each(|&x| small.insert(x));
            let mut big = small.clone();
            extra.iter().for_each(|&x| big.insert(x));
            prop_assert!(small.is_subset_of(&big));
            prop_assert!(!small.query(q) || big.query(q));
        }
    }
}
