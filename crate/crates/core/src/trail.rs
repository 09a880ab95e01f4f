//! TRAIL: rank-indexed filter arrays, root attestations and closed-form sizes.

use serde::{Deserialize, Serialize};

use crate::bloom::{BloomFilter, BloomParams, FilterElement};
use crate::chains::{RootSigner, Signature, VerifyHandle};
use crate::dodag::NodeId;
use crate::error::{Error, Result};

/// Element `t` (1-based) holds nonces of nodes `t` levels below the array's owner.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterArray {
    pub elements: Vec<FilterElement>,
}

impl FilterArray {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// 1-based access.
    pub fn get(&self, t: usize) -> Option<&FilterElement> {
        t.checked_sub(1).and_then(|i| self.elements.get(i))
    }

    pub fn slice_counts(&self) -> Vec<usize> {
        self.elements.iter().map(|e| e.slices.len()).collect()
    }

    pub fn slice_bits(&self) -> u64 {
        self.elements.iter().map(|e| e.bit_len() as u64).sum()
    }

    /// `version(4) || count(1) || per element: slices(2) || packed bits`.
    pub fn wire_bytes(&self, version: u32) -> Vec<u8> {
        let mut b = version.to_be_bytes().to_vec();
        b.push(self.elements.len() as u8);
        for e in &self.elements {
            b.extend_from_slice(&(e.slices.len() as u16).to_be_bytes());
            b.extend(e.pack());
        }
        b
    }
}

/// `B(1)` = one filter over the children's nonces, `B(t+1)` = children's `A(t)` concatenated.
/// `children` must be sorted by ascending id; absent data simply contributes nothing.
pub fn merge_arrays(p: BloomParams, children: &[(NodeId, Option<u64>, &FilterArray)]) -> FilterArray {
    debug_assert!(children.windows(2).all(|w| w[0].0 < w[1].0));
    if children.is_empty() {
        return FilterArray::default();
    }
    let mut first = BloomFilter::new(p);
    for (_, nonce, _) in children {
        if let Some(n) = nonce {
            first.insert(*n);
        }
    }
    let depth = children.iter().map(|(_, _, a)| a.len()).max().unwrap_or(0);
    let mut elements = vec![FilterElement::single(first)];
    for t in 1..=depth {
        let mut e = FilterElement::default();
        for (_, _, a) in children {
            if let Some(x) = a.get(t) {
                e.concat(x);
            }
        }
        elements.push(e);
    }
    FilterArray { elements }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignedAttestation {
    pub version: u32,
    pub array: FilterArray,
    pub signature: Signature,
}

impl SignedAttestation {
    pub fn sign(signer: &RootSigner, version: u32, array: FilterArray) -> Self {
        let signature = signer.sign(&array.wire_bytes(version));
        SignedAttestation { version, array, signature }
    }

    pub fn verify_signature(&self, vk: &VerifyHandle) -> bool {
        vk.verify(&self.array.wire_bytes(self.version), &self.signature)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrailFailure {
    BadSignature,
    WrongVersion,
    NonceMissing,
    NonceDuplicated,
    ArrayShrunk,
    RankViolation { at: NodeId },
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrailVerdict {
    Verified { rank: u32, version: u32 },
    Failed(TrailFailure),
}

/// What a node remembers from its upward step.
#[derive(Clone, Debug)]
pub struct TrailContext<'a> {
    pub rank: u32,
    pub version: u32,
    pub nonce: u64,
    /// The array this node forwarded upward (`A(t)` lands at root index `rank + t`).
    pub saved: &'a FilterArray,
}

pub fn verify_attestation(ctx: &TrailContext<'_>, signed: &SignedAttestation, vk: &VerifyHandle) -> TrailVerdict {
    match diagnose_attestation(ctx, signed, vk).first() {
        Some(f) => TrailVerdict::Failed(*f),
        None => TrailVerdict::Verified { rank: ctx.rank, version: ctx.version },
    }
}

/// Every check that fails, in verification order. The verdict is the first of them;
/// the full list lets a failure be compared against an attack-free run.
pub fn diagnose_attestation(ctx: &TrailContext<'_>, signed: &SignedAttestation, vk: &VerifyHandle) -> Vec<TrailFailure> {
    use TrailFailure::*;
    if !signed.verify_signature(vk) {
        return vec![BadSignature];
    }
    let mut out = Vec::new();
    if signed.version != ctx.version {
        out.push(WrongVersion);
    }
    let r = ctx.rank as usize;
    if !signed.array.get(r).is_some_and(|e| e.query(ctx.nonce)) {
        out.push(NonceMissing);
    }
    let dup = signed
        .array
        .elements
        .iter()
        .enumerate()
        .any(|(i, e)| i + 1 != r && e.query(ctx.nonce));
    if dup {
        out.push(NonceDuplicated);
    }
    let shrunk = ctx
        .saved
        .elements
        .iter()
        .enumerate()
        .any(|(t, mine)| !signed.array.get(r + t + 1).is_some_and(|theirs| contains_aligned(theirs, mine)));
    if shrunk {
        out.push(ArrayShrunk);
    }
    out
}

/// Some slice offset where every saved slice is a positional bit-subset.
fn contains_aligned(big: &FilterElement, small: &FilterElement) -> bool {
    let (n, k) = (big.slices.len(), small.slices.len());
    if k == 0 {
        return true;
    }
    k <= n
        && (0..=n - k).any(|o| small.slices.iter().zip(&big.slices[o..]).all(|(s, b)| s.is_subset_of(b)))
}

/// Single-path test message. `scribed` is set once by the initiator's parent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrailTestMsg {
    pub initiator: NodeId,
    pub nonce: u64,
    pub scribed: Option<u32>,
    pub sender_rank: u32,
    /// Hops travelled so far, initiator first; the reply retraces them.
    pub path: Vec<NodeId>,
}

/// Upward-hop checks: `(a) scribed > own` and `(b) own < sender <= scribed`.
pub fn hop_check(own_rank: u32, scribed: u32, sender_rank: u32) -> bool {
    scribed > own_rank && own_rank < sender_rank && sender_rank <= scribed
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrailReplyMsg {
    pub initiator: NodeId,
    pub nonce: u64,
    pub scribed: u32,
    pub version: u32,
    pub signature: Signature,
    /// Remaining hops back to the initiator.
    pub route: Vec<NodeId>,
}

impl TrailReplyMsg {
    pub fn signed_bytes(initiator: NodeId, nonce: u64, scribed: u32, version: u32) -> Vec<u8> {
        let mut b = initiator.0.to_be_bytes().to_vec();
        b.extend_from_slice(&nonce.to_be_bytes());
        b.extend_from_slice(&scribed.to_be_bytes());
        b.extend_from_slice(&version.to_be_bytes());
        b
    }

    pub fn verify(&self, vk: &VerifyHandle) -> bool {
        vk.verify(&Self::signed_bytes(self.initiator, self.nonce, self.scribed, self.version), &self.signature)
    }
}

/// Closed-form message sizes for a balanced `k`-ary tree of height `h`, m = 6k.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedSizes {
    pub k: u64,
    pub h: u32,
    pub nodes: u64,
    pub slice_bytes: f64,
    pub max_bytes: f64,
    /// Index `d` = upward array sent by a node at depth `d` (0 = root's signed array).
    pub per_depth_up_bytes: Vec<f64>,
    pub paper_avg_bytes: f64,
}

const LIMIT: u64 = 1 << 53;

fn geometric(k: u64, e: u32) -> Result<u64> {
    // (k^e - 1)/(k - 1)
    let pow = k.checked_pow(e).filter(|&p| p <= LIMIT).ok_or(Error::Overflow(k, e))?;
    Ok((pow - 1) / (k - 1))
}

pub fn predicted_sizes(k: u64, h: u32) -> Result<PredictedSizes> {
    if k < 2 || h < 1 {
        return Err(Error::ConfigInvalid(format!("predicted sizes need k >= 2, h >= 1 (got {k}, {h})")));
    }
    let nodes = geometric(k, h + 1)?;
    let slice_bytes = 6.0 * k as f64 / 8.0;
    let max_bytes = slice_bytes * geometric(k, h)? as f64;
    let per_depth_up_bytes = (0..=h)
        .map(|d| geometric(k, h - d).map(|s| slice_bytes * s as f64))
        .collect::<Result<Vec<_>>>()?;
    Ok(PredictedSizes {
        k,
        h,
        nodes,
        slice_bytes,
        max_bytes,
        per_depth_up_bytes,
        paper_avg_bytes: max_bytes / (k + 1) as f64,
    })
}
