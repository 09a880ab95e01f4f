//! VeRA++: encryption-chain anchored rank chains, the challenge-response replay
//! defence, root adjudication and the legitimation message.

use std::collections::{BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::chains::{hash_forward, ChainElement, ChainSet, Primitives, RootSigner, Signature, Suite, VerifyHandle};
use crate::dodag::NodeId;
use crate::topology::Topology;
use crate::vera::{check_version, VeraReject};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VeraPlusReject {
    SignatureInvalid,
    StaleVersion,
    ChainMismatch,
    DecryptAnchor,
    /// The anchor cipher for this version is unknown (an update was missed).
    MissingAnchor,
}

impl From<VeraReject> for VeraPlusReject {
    fn from(r: VeraReject) -> Self {
        match r {
            VeraReject::StaleVersion => VeraPlusReject::StaleVersion,
            VeraReject::SignatureInvalid => VeraPlusReject::SignatureInvalid,
            _ => VeraPlusReject::ChainMismatch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VeraPlusInitMsg {
    pub v0: ChainElement,
    pub vn0: u32,
    pub c1: ChainElement,
    pub cn: ChainElement,
    pub signature: Signature,
}

impl VeraPlusInitMsg {
    pub fn signed_bytes(v0: &ChainElement, vn0: u32, c1: &ChainElement, cn: &ChainElement) -> Vec<u8> {
        let mut b = v0.as_bytes().to_vec();
        b.extend_from_slice(&vn0.to_be_bytes());
        b.extend_from_slice(c1.as_bytes());
        b.extend_from_slice(cn.as_bytes());
        b
    }

    pub fn create(chains: &ChainSet, signer: &RootSigner, vn0: u32) -> Self {
        let (v0, c1, cn) = (chains.v(0), chains.cipher(1), chains.cipher(chains.n));
        let signature = signer.sign(&Self::signed_bytes(&v0, vn0, &c1, &cn));
        VeraPlusInitMsg { v0, vn0, c1, cn, signature }
    }

    pub fn verify(&self, vk: &VerifyHandle) -> bool {
        vk.verify(&Self::signed_bytes(&self.v0, self.vn0, &self.c1, &self.cn), &self.signature)
    }
}

/// Update for version `i` carries `c_{i+1}`, the key that opens `c_i`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VeraPlusUpdateMsg {
    pub vn: u32,
    pub v: ChainElement,
    pub cipher: ChainElement,
    pub rank_elem: ChainElement,
    pub sender_rank: u32,
}

impl VeraPlusUpdateMsg {
    pub fn root_update(chains: &ChainSet, vn0: u32, i: usize) -> Self {
        let cipher = if i < chains.n { chains.cipher(i + 1) } else { chains.cipher(chains.n) };
        VeraPlusUpdateMsg {
            vn: vn0 + i as u32,
            v: chains.v(i),
            cipher,
            rank_elem: chains.rank_element(i, 0),
            sender_rank: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VeraPlusStore {
    pub suite: Suite,
    pub l: u32,
    pub vn0: u32,
    pub v0: ChainElement,
    pub cn: ChainElement,
    pub last_vn: u32,
    pub last_v: ChainElement,
    /// `c_i` for the current version.
    pub anchor: Option<ChainElement>,
    /// `c_{i+1}`, committed on the first accepted parent check of version `i`.
    pub key: Option<ChainElement>,
}

impl VeraPlusStore {
    pub fn from_init(init: &VeraPlusInitMsg, vk: &VerifyHandle, suite: Suite, l: u32) -> Result<Self, VeraPlusReject> {
        if !init.verify(vk) {
            return Err(VeraPlusReject::SignatureInvalid);
        }
        Ok(VeraPlusStore {
            suite,
            l,
            vn0: init.vn0,
            v0: init.v0,
            cn: init.cn,
            last_vn: init.vn0,
            last_v: init.v0,
            // the anchor of version 1 is c_1, signed in the init
            anchor: None,
            key: Some(init.c1),
        })
    }
}

pub fn verapp_verify_version(store: &mut VeraPlusStore, msg: &VeraPlusUpdateMsg) -> Result<(), VeraPlusReject> {
    check_version(&store.suite, store.vn0, &store.v0, store.last_vn, &store.last_v, msg.vn, &msg.v)?;
    let in_order = msg.vn == store.last_vn + 1;
    store.anchor = if in_order { store.key.take() } else { None };
    store.key = None;
    store.last_vn = msg.vn;
    store.last_v = msg.v;
    Ok(())
}

/// Tail check `h^{l-j}(elem) == dec_{c_{i+1}}(c_i)`; at the last version the anchor is
/// `c_n = R_{n,l}` itself. The carried cipher becomes the committed key only on Accept.
pub fn verapp_verify_parent_rank(
    store: &mut VeraPlusStore,
    j: u32,
    elem: &ChainElement,
    cipher: &ChainElement,
) -> Result<(), VeraPlusReject> {
    let anchor = store.anchor.ok_or(VeraPlusReject::MissingAnchor)?;
    if j > store.l {
        return Err(VeraPlusReject::DecryptAnchor);
    }
    let s = store.suite;
    let key = store.key.unwrap_or(*cipher);
    let tail = if anchor == store.cn { anchor } else { s.dec(&key, &anchor) };
    if hash_forward(&s, elem, (store.l - j) as u64) != tail {
        return Err(VeraPlusReject::DecryptAnchor);
    }
    if store.key.is_none() && anchor != store.cn {
        store.key = Some(*cipher);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Challenge {
    pub challenger: NodeId,
    pub target: NodeId,
    pub nonce: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChallengeResponse {
    pub challenger: NodeId,
    pub responder: NodeId,
    pub nonce: u64,
    pub ciphertext: ChainElement,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ChallengeOutcome {
    Pass,
    Fail,
}

/// `<ID, nonce>`: 16-byte cipher width holds `0^4 || ID(4) || nonce(8)`; the 8-byte test
/// width keeps `ID(4) || low 4 bytes of nonce`.
pub fn pack_challenge(suite: &Suite, target: NodeId, nonce: u64) -> ChainElement {
    let w = suite.width();
    let mut buf = vec![0u8; w];
    if w >= 12 {
        buf[w - 12..w - 8].copy_from_slice(&target.0.to_be_bytes());
        buf[w - 8..].copy_from_slice(&nonce.to_be_bytes());
    } else {
        buf[..4].copy_from_slice(&target.0.to_be_bytes());
        buf[4..8].copy_from_slice(&(nonce as u32).to_be_bytes());
    }
    ChainElement::from_bytes(&buf)
}

/// The answer only someone holding `R_{i,j-1}` can give.
pub fn answer_challenge(suite: &Suite, key: &ChainElement, c: &Challenge) -> ChainElement {
    suite.enc(key, &pack_challenge(suite, c.target, c.nonce))
}

pub fn check_response(suite: &Suite, key: &ChainElement, c: &Challenge, r: Option<&ChallengeResponse>) -> ChallengeOutcome {
    match r {
        Some(r) if r.nonce == c.nonce && r.ciphertext == answer_challenge(suite, key, c) => ChallengeOutcome::Pass,
        _ => ChallengeOutcome::Fail,
    }
}

/// What reaches the root during a dispute.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Notification {
    Failure { challenger: NodeId, suspect: NodeId, challenger_rank: u32, suspect_rank: u32 },
    Validation { validator: NodeId, suspect: NodeId, challenger: NodeId },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Malicious { node: NodeId, challenger_rank: u32, suspect_rank: u32, accused: NodeId },
    Inconclusive,
}

/// Burden of proof: an accusation stands unless a parent of the suspect vouches for it.
pub fn adjudicate(notes: &[Notification]) -> Verdict {
    let Some((h, m, rc, rs)) = notes.iter().find_map(|n| match *n {
        Notification::Failure { challenger, suspect, challenger_rank, suspect_rank } => {
            Some((challenger, suspect, challenger_rank, suspect_rank))
        }
        _ => None,
    }) else {
        return Verdict::Inconclusive;
    };
    let vouched = notes
        .iter()
        .any(|n| matches!(*n, Notification::Validation { suspect, challenger, .. } if suspect == m && challenger == h));
    let node = if vouched { h } else { m };
    Verdict::Malicious { node, challenger_rank: rc, suspect_rank: rs, accused: m }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LegitimationMsg {
    pub challenger_rank: u32,
    pub suspect_rank: u32,
    pub suspect: NodeId,
    pub signature: Signature,
    pub hop_limit: u8,
}

pub const DEFAULT_HOP_LIMIT: u8 = 2;

impl LegitimationMsg {
    pub fn signed_bytes(rc: u32, rs: u32, suspect: NodeId) -> Vec<u8> {
        let mut b = Vec::with_capacity(12);
        b.extend_from_slice(&rc.to_be_bytes());
        b.extend_from_slice(&rs.to_be_bytes());
        b.extend_from_slice(&suspect.0.to_be_bytes());
        b
    }

    pub fn create(signer: &RootSigner, rc: u32, rs: u32, suspect: NodeId) -> Self {
        LegitimationMsg {
            challenger_rank: rc,
            suspect_rank: rs,
            suspect,
            signature: signer.sign(&Self::signed_bytes(rc, rs, suspect)),
            hop_limit: DEFAULT_HOP_LIMIT,
        }
    }

    pub fn verify(&self, vk: &VerifyHandle) -> bool {
        vk.verify(&Self::signed_bytes(self.challenger_rank, self.suspect_rank, self.suspect), &self.signature)
    }
}

/// What one node does with a legitimation it receives for the first time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FloodStep {
    pub accept: bool,
    /// Hop limit to re-multicast with, if any.
    pub forward_hop_limit: Option<u8>,
}

/// Nodes next to the suspect relay without spending a hop; the suspect never relays.
pub fn flood_step(topo: &Topology, me: NodeId, msg: &LegitimationMsg, vk: &VerifyHandle) -> FloodStep {
    if !msg.verify(vk) {
        return FloodStep { accept: false, forward_hop_limit: None };
    }
    if me == msg.suspect {
        return FloodStep { accept: true, forward_hop_limit: None };
    }
    let spent = if topo.adjacent(me, msg.suspect) { 0 } else { 1 };
    let next = msg.hop_limit.saturating_sub(spent);
    FloodStep { accept: true, forward_hop_limit: (next > 0).then_some(next) }
}

/// Runs a whole flood from `initiator` in arrival order and returns the nodes that
/// accepted it, the suspect excluded.
pub fn scoped_flood(topo: &Topology, msg: &LegitimationMsg, initiator: NodeId, vk: &VerifyHandle) -> BTreeSet<NodeId> {
    let mut seen = BTreeSet::new();
    let mut accepted = BTreeSet::new();
    let mut queue = VecDeque::from([(initiator, msg.hop_limit)]);
    while let Some((me, hl)) = queue.pop_front() {
        if !seen.insert(me) {
            continue;
        }
        let m = LegitimationMsg { hop_limit: hl, ..msg.clone() };
        let step = flood_step(topo, me, &m, vk);
        if !step.accept || me == msg.suspect {
            continue;
        }
        accepted.insert(me);
        if let Some(next) = step.forward_hop_limit {
            queue.extend(topo.neighbors(me).map(|n| (n, next)));
        }
    }
    accepted
}
