//! VeRA: signed initialization, hash-chained version numbers and MAC-anchored rank chains.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::chains::{hash_forward, ChainElement, ChainSet, Primitives, RootSigner, Signature, Suite, VerifyHandle};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VeraReject {
    SignatureInvalid,
    StaleVersion,
    ChainMismatch,
    RankMacMismatch,
    /// No MAC stored for the current version (an update was missed).
    MissingMac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankRegression {
    pub parent: u32,
    pub tau: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VeraInitMsg {
    pub v0: ChainElement,
    pub vn0: u32,
    pub mac_next: ChainElement,
    pub signature: Signature,
}

impl VeraInitMsg {
    pub fn signed_bytes(v0: &ChainElement, vn0: u32, mac_next: &ChainElement) -> Vec<u8> {
        let mut b = v0.as_bytes().to_vec();
        b.extend_from_slice(&vn0.to_be_bytes());
        b.extend_from_slice(mac_next.as_bytes());
        b
    }

    pub fn create(chains: &ChainSet, signer: &RootSigner, vn0: u32) -> Self {
        let s = &chains.suite;
        let mac_next = s.mac(&chains.v(1), &chains.tail(1));
        let v0 = chains.v(0);
        let signature = signer.sign(&Self::signed_bytes(&v0, vn0, &mac_next));
        VeraInitMsg { v0, vn0, mac_next, signature }
    }

    pub fn verify(&self, vk: &VerifyHandle) -> bool {
        vk.verify(&Self::signed_bytes(&self.v0, self.vn0, &self.mac_next), &self.signature)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VeraUpdateMsg {
    pub vn: u32,
    pub v: ChainElement,
    pub mac_next: ChainElement,
    pub rank_elem: ChainElement,
    pub sender_rank: u32,
}

impl VeraUpdateMsg {
    /// The root's update for version `i` (1-based).
    pub fn root_update(chains: &ChainSet, vn0: u32, i: usize) -> Self {
        let s = &chains.suite;
        let mac_next = if i < chains.n {
            s.mac(&chains.v(i + 1), &chains.tail(i + 1))
        } else {
            ChainElement::zero(s.width())
        };
        VeraUpdateMsg { vn: vn0 + i as u32, v: chains.v(i), mac_next, rank_elem: chains.rank_element(i, 0), sender_rank: 0 }
    }
}

/// Per-node verification state.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VeraNodeStore {
    pub suite: Suite,
    pub l: u32,
    pub vn0: u32,
    pub v0: ChainElement,
    pub last_vn: u32,
    pub last_v: ChainElement,
    /// `MAC_{V_i}(R_{i,l})` indexed by version number, first writer wins.
    pub macs: BTreeMap<u32, ChainElement>,
    pub parent_rank: Option<u32>,
}

impl VeraNodeStore {
    pub fn from_init(init: &VeraInitMsg, vk: &VerifyHandle, suite: Suite, l: u32) -> Result<Self, VeraReject> {
        if !init.verify(vk) {
            return Err(VeraReject::SignatureInvalid);
        }
        Ok(VeraNodeStore {
            suite,
            l,
            vn0: init.vn0,
            v0: init.v0,
            last_vn: init.vn0,
            last_v: init.v0,
            macs: BTreeMap::from([(init.vn0 + 1, init.mac_next)]),
            parent_rank: None,
        })
    }

    /// MAC stored for the currently accepted version.
    pub fn current_mac(&self) -> Option<ChainElement> {
        self.macs.get(&self.last_vn).copied()
    }
}

/// Checks a version update and, on success, advances the store.
pub fn vera_verify_version(store: &mut VeraNodeStore, msg: &VeraUpdateMsg) -> Result<(), VeraReject> {
    check_version(&store.suite, store.vn0, &store.v0, store.last_vn, &store.last_v, msg.vn, &msg.v)?;
    store.last_vn = msg.vn;
    store.last_v = msg.v;
    store.macs.entry(msg.vn + 1).or_insert(msg.mac_next);
    store.parent_rank = None;
    Ok(())
}

/// Shared by VeRA and VeRA++: incremental check after an in-order update, full power otherwise.
pub(crate) fn check_version(
    suite: &Suite,
    vn0: u32,
    v0: &ChainElement,
    last_vn: u32,
    last_v: &ChainElement,
    vn: u32,
    v: &ChainElement,
) -> Result<(), VeraReject> {
    if vn <= last_vn {
        return Err(VeraReject::StaleVersion);
    }
    let ok = if vn == last_vn + 1 {
        suite.hash(v) == *last_v
    } else {
        hash_forward(suite, v, (vn - vn0) as u64) == *v0
    };
    if ok {
        Ok(())
    } else {
        Err(VeraReject::ChainMismatch)
    }
}

/// Accepts iff `MAC_{V_i}(h^{l-j}(elem))` equals the stored MAC for version `i`.
pub fn vera_verify_parent_rank(store: &VeraNodeStore, j: u32, elem: &ChainElement) -> Result<(), VeraReject> {
    let mac = store.current_mac().ok_or(VeraReject::MissingMac)?;
    if j > store.l {
        return Err(VeraReject::RankMacMismatch);
    }
    let s = &store.suite;
    let tail = hash_forward(s, elem, (store.l - j) as u64);
    if s.mac(&store.last_v, &tail) == mac {
        Ok(())
    } else {
        Err(VeraReject::RankMacMismatch)
    }
}

/// `h^{tau-j}(R_{i,j})`.
pub fn vera_derive_child_element(
    suite: &Suite,
    parent_elem: &ChainElement,
    j: u32,
    tau: u32,
) -> Result<ChainElement, RankRegression> {
    if tau < j {
        return Err(RankRegression { parent: j, tau });
    }
    Ok(hash_forward(suite, parent_elem, (tau - j) as u64))
}
