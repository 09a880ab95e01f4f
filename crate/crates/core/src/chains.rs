//! Hash chains, the nested encryption chain, and the primitive suites behind them.
//!
//! Every construction is parameterised by a [`Suite`]. The `Test` suite makes chain
//! values predictable by hand (`h(x) = x + 1`, XOR cipher) while `Production` uses
//! SHA-256, AES-128 and Ed25519. Both obey the same algebraic laws, so any test that
//! holds for one holds for the other.

use std::fmt;

use aes::cipher::{generic_array::GenericArray, BlockDecrypt, BlockEncrypt, KeyInit};
use aes::Aes128;
use ed25519_dalek::{Signer as _, SigningKey, Verifier as _, VerifyingKey};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

/// Widest element any suite produces.
pub const MAX_WIDTH: usize = 16;

/// Fixed-width opaque chain value (`V_i`, `R_{i,j}`, `c_i`, seeds).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChainElement {
    buf: [u8; MAX_WIDTH],
    width: u8,
}

impl ChainElement {
    pub fn from_bytes(bytes: &[u8]) -> Self {
        assert!(bytes.len() <= MAX_WIDTH, "chain element wider than {MAX_WIDTH} bytes");
        let mut buf = [0u8; MAX_WIDTH];
        buf[..bytes.len()].copy_from_slice(bytes);
        ChainElement { buf, width: bytes.len() as u8 }
    }

    pub fn zero(width: usize) -> Self {
        Self::from_bytes(&vec![0u8; width])
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.buf[..self.width as usize]
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    /// Low 64 bits, big-endian. For 8-byte elements this is the whole value.
    pub fn low_u64(&self) -> u64 {
        let b = self.as_bytes();
        let start = b.len().saturating_sub(8);
        b[start..].iter().fold(0u64, |acc, &x| (acc << 8) | x as u64)
    }

    pub fn xor(&self, other: &ChainElement) -> ChainElement {
        assert_eq!(self.width, other.width, "xor of elements with different widths");
        let mut out = *self;
        for (o, b) in out.buf.iter_mut().zip(other.buf.iter()) {
            *o ^= b;
        }
        out
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.as_bytes())
    }

    pub fn from_hex(s: &str) -> Result<Self, hex::FromHexError> {
        let bytes = hex::decode(s)?;
        if bytes.len() > MAX_WIDTH {
            return Err(hex::FromHexError::InvalidStringLength);
        }
        Ok(Self::from_bytes(&bytes))
    }
}

impl fmt::Debug for ChainElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ChainElement({})", self.to_hex())
    }
}

impl fmt::Display for ChainElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Serialize for ChainElement {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for ChainElement {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ChainElement::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// The four function families the protocols need, minus signatures (see [`RootSigner`]).
pub trait Primitives {
    /// Element width in bytes.
    fn width(&self) -> usize;
    fn hash(&self, e: &ChainElement) -> ChainElement;
    fn mac(&self, key: &ChainElement, msg: &ChainElement) -> ChainElement;
    /// Length-preserving encryption; the ciphertext is itself usable as a key.
    fn enc(&self, key: &ChainElement, msg: &ChainElement) -> ChainElement;
    fn dec(&self, key: &ChainElement, ct: &ChainElement) -> ChainElement;
}

/// `h(x) = x + 1` over a big-endian u64, XOR cipher, `MAC_k(m) = h(k ^ m)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TestPrimitives;

impl Primitives for TestPrimitives {
    fn width(&self) -> usize {
        8
    }

    fn hash(&self, e: &ChainElement) -> ChainElement {
        ChainElement::from_bytes(&e.low_u64().wrapping_add(1).to_be_bytes())
    }

    fn mac(&self, key: &ChainElement, msg: &ChainElement) -> ChainElement {
        self.hash(&key.xor(msg))
    }

    fn enc(&self, key: &ChainElement, msg: &ChainElement) -> ChainElement {
        msg.xor(key)
    }

    fn dec(&self, key: &ChainElement, ct: &ChainElement) -> ChainElement {
        ct.xor(key)
    }
}

/// SHA-256 truncated to 16 bytes, keyed SHA-256 MAC, single-block AES-128.
#[derive(Debug, Clone, Copy, Default)]
pub struct ProductionPrimitives;

impl ProductionPrimitives {
    fn cipher(key: &ChainElement) -> Aes128 {
        assert_eq!(key.width(), 16, "AES-128 needs a 16-byte key");
        Aes128::new(GenericArray::from_slice(key.as_bytes()))
    }
}

impl Primitives for ProductionPrimitives {
    fn width(&self) -> usize {
        16
    }

    fn hash(&self, e: &ChainElement) -> ChainElement {
        let digest = Sha256::digest(e.as_bytes());
        ChainElement::from_bytes(&digest[..16])
    }

    fn mac(&self, key: &ChainElement, msg: &ChainElement) -> ChainElement {
        let mut h = Sha256::new();
        h.update(key.as_bytes());
        h.update(msg.as_bytes());
        ChainElement::from_bytes(&h.finalize()[..16])
    }

    fn enc(&self, key: &ChainElement, msg: &ChainElement) -> ChainElement {
        let mut block = GenericArray::clone_from_slice(msg.as_bytes());
        Self::cipher(key).encrypt_block(&mut block);
        ChainElement::from_bytes(&block)
    }

    fn dec(&self, key: &ChainElement, ct: &ChainElement) -> ChainElement {
        let mut block = GenericArray::clone_from_slice(ct.as_bytes());
        Self::cipher(key).decrypt_block(&mut block);
        ChainElement::from_bytes(&block)
    }
}

/// Runtime choice between the two bundled providers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Test,
    #[default]
    Production,
}

impl Suite {
    pub fn element_from_u64(&self, v: u64) -> ChainElement {
        let mut bytes = vec![0u8; self.width()];
        let w = bytes.len();
        bytes[w - 8..].copy_from_slice(&v.to_be_bytes());
        ChainElement::from_bytes(&bytes)
    }

    pub fn random_element<R: RngCore + ?Sized>(&self, rng: &mut R) -> ChainElement {
        let mut bytes = vec![0u8; self.width()];
        rng.fill_bytes(&mut bytes);
        ChainElement::from_bytes(&bytes)
    }
}

impl Primitives for Suite {
    fn width(&self) -> usize {
        match self {
            Suite::Test => TestPrimitives.width(),
            Suite::Production => ProductionPrimitives.width(),
        }
    }

    fn hash(&self, e: &ChainElement) -> ChainElement {
        match self {
            Suite::Test => TestPrimitives.hash(e),
            Suite::Production => ProductionPrimitives.hash(e),
        }
    }

    fn mac(&self, key: &ChainElement, msg: &ChainElement) -> ChainElement {
        match self {
            Suite::Test => TestPrimitives.mac(key, msg),
            Suite::Production => ProductionPrimitives.mac(key, msg),
        }
    }

    fn enc(&self, key: &ChainElement, msg: &ChainElement) -> ChainElement {
        match self {
            Suite::Test => TestPrimitives.enc(key, msg),
            Suite::Production => ProductionPrimitives.enc(key, msg),
        }
    }

    fn dec(&self, key: &ChainElement, ct: &ChainElement) -> ChainElement {
        match self {
            Suite::Test => TestPrimitives.dec(key, ct),
            Suite::Production => ProductionPrimitives.dec(key, ct),
        }
    }
}

/// Opaque signature bytes, hex on the wire.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Signature(pub Vec<u8>);

impl Serialize for Signature {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Signature {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map(Signature).map_err(serde::de::Error::custom)
    }
}

/// Signing capability; only the root object owns one.
pub enum RootSigner {
    /// Keyed SHA-256 under a root-only secret.
    Mac([u8; 32]),
    Ed25519(SigningKey),
}

/// What every node holds to check root signatures.
#[derive(Clone)]
pub enum VerifyHandle {
    // The MAC scheme is symmetric; the handle exposes verification only.
    Mac([u8; 32]),
    Ed25519(VerifyingKey),
}

fn keyed_digest(secret: &[u8; 32], msg: &[u8]) -> Vec<u8> {
    let mut h = Sha256::new();
    h.update(secret);
    h.update(msg);
    h.finalize()[..16].to_vec()
}

impl RootSigner {
    pub fn generate<R: RngCore + ?Sized>(suite: Suite, rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        match suite {
            Suite::Test => RootSigner::Mac(seed),
            Suite::Production => RootSigner::Ed25519(SigningKey::from_bytes(&seed)),
        }
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        match self {
            RootSigner::Mac(secret) => Signature(keyed_digest(secret, msg)),
            RootSigner::Ed25519(key) => Signature(key.sign(msg).to_bytes().to_vec()),
        }
    }

    pub fn verifier(&self) -> VerifyHandle {
        match self {
            RootSigner::Mac(secret) => VerifyHandle::Mac(*secret),
            RootSigner::Ed25519(key) => VerifyHandle::Ed25519(key.verifying_key()),
        }
    }
}

impl VerifyHandle {
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        match self {
            VerifyHandle::Mac(secret) => keyed_digest(secret, msg) == sig.0,
            VerifyHandle::Ed25519(key) => {
                let Ok(bytes) = <[u8; 64]>::try_from(sig.0.as_slice()) else {
                    return false;
                };
                key.verify(msg, &ed25519_dalek::Signature::from_bytes(&bytes)).is_ok()
            }
        }
    }
}

/// `h^t(e)`.
pub fn hash_forward<P: Primitives + ?Sized>(p: &P, e: &ChainElement, t: u64) -> ChainElement {
    let mut out = *e;
    for _ in 0..t {
        out = p.hash(&out);
    }
    out
}

/// `V_0..V_n` with `V_i = h^{n+1-i}(r)`.
pub fn build_version_chain<P: Primitives + ?Sized>(p: &P, seed: &ChainElement, n: usize) -> Vec<ChainElement> {
    let mut chain = Vec::with_capacity(n + 1);
    let mut cur = p.hash(seed);
    chain.push(cur);
    for _ in 0..n {
        cur = p.hash(&cur);
        chain.push(cur);
    }
    chain.reverse();
    chain
}

/// `R_{i,0}..R_{i,l}` with `R_{i,j} = h^{j+1}(x_i)`.
pub fn build_rank_chain<P: Primitives + ?Sized>(p: &P, seed: &ChainElement, l: usize) -> Vec<ChainElement> {
    let mut chain = Vec::with_capacity(l + 1);
    let mut cur = p.hash(seed);
    chain.push(cur);
    for _ in 0..l {
        cur = p.hash(&cur);
        chain.push(cur);
    }
    chain
}

/// `c_1..c_n` from the rank tails `R_{1,l}..R_{n,l}`: `c_n = R_{n,l}`, `c_i = enc_{c_{i+1}}(R_{i,l})`.
pub fn build_encryption_chain<P: Primitives + ?Sized>(p: &P, tails: &[ChainElement]) -> Vec<ChainElement> {
    assert!(!tails.is_empty(), "encryption chain needs at least one version");
    let n = tails.len();
    let mut chain = vec![tails[n - 1]; n];
    for i in (0..n - 1).rev() {
        chain[i] = p.enc(&chain[i + 1], &tails[i]);
    }
    chain
}

/// Everything the root precomputes. Version indices are 1-based where the notation is.
#[derive(Clone, Debug)]
pub struct ChainSet {
    pub suite: Suite,
    pub n: usize,
    pub l: usize,
    pub version_seed: ChainElement,
    /// `V_0..V_n`.
    pub version_chain: Vec<ChainElement>,
    /// `x_1..x_n` stored at positions `0..n`.
    pub rank_seeds: Vec<ChainElement>,
    /// `R_{1,l}..R_{n,l}`.
    pub rank_tails: Vec<ChainElement>,
    /// `c_1..c_n`.
    pub enc_chain: Vec<ChainElement>,
}

impl ChainSet {
    pub fn generate<R: RngCore + ?Sized>(suite: Suite, n: usize, l: usize, rng: &mut R) -> Self {
        let r = suite.random_element(rng);
        let xs: Vec<_> = (0..n).map(|_| suite.random_element(rng)).collect();
        Self::from_seeds(suite, r, xs, l)
    }

    pub fn from_seeds(suite: Suite, version_seed: ChainElement, rank_seeds: Vec<ChainElement>, l: usize) -> Self {
        let n = rank_seeds.len();
        assert!(n >= 1, "need at least one version update");
        let version_chain = build_version_chain(&suite, &version_seed, n);
        let rank_tails: Vec<_> = rank_seeds
            .iter()
            .map(|x| hash_forward(&suite, x, l as u64 + 1))
            .collect();
        let enc_chain = build_encryption_chain(&suite, &rank_tails);
        ChainSet { suite, n, l, version_seed, version_chain, rank_seeds, rank_tails, enc_chain }
    }

    pub fn v(&self, i: usize) -> ChainElement {
        self.version_chain[i]
    }

    pub fn x(&self, i: usize) -> ChainElement {
        self.rank_seeds[i - 1]
    }

    pub fn tail(&self, i: usize) -> ChainElement {
        self.rank_tails[i - 1]
    }

    pub fn cipher(&self, i: usize) -> ChainElement {
        self.enc_chain[i - 1]
    }

    /// `R_{i,j}`.
    pub fn rank_element(&self, i: usize, j: usize) -> ChainElement {
        hash_forward(&self.suite, &self.x(i), j as u64 + 1)
    }

    /// Reconstructs each of the three defining relations and reports which hold.
    pub fn check_invariants(&self) -> InvariantReport {
        let s = &self.suite;
        let version = (0..=self.n)
            .all(|i| self.v(i) == hash_forward(s, &self.version_seed, (self.n + 1 - i) as u64));
        let rank = (1..=self.n).all(|i| self.tail(i) == hash_forward(s, &self.x(i), self.l as u64 + 1));
        let enc = self.cipher(self.n) == self.tail(self.n)
            && (1..self.n).all(|i| self.cipher(i) == s.enc(&self.cipher(i + 1), &self.tail(i)));
        InvariantReport { version_chain: version, rank_tails: rank, encryption_chain: enc }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InvariantReport {
    pub version_chain: bool,
    pub rank_tails: bool,
    pub encryption_chain: bool,
}

impl InvariantReport {
    pub fn all(&self) -> bool {
        self.version_chain && self.rank_tails && self.encryption_chain
    }
}
