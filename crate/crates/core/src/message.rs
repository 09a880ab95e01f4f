//! Everything nodes exchange, with the size model used for metrics.

use serde::{Deserialize, Serialize};

use crate::dodag::{Datagram, NodeId};
use crate::sim::Wire;
use crate::trail::{FilterArray, SignedAttestation, TrailReplyMsg, TrailTestMsg};
use crate::vera::{VeraInitMsg, VeraUpdateMsg};
use crate::verapp::{Challenge, ChallengeResponse, LegitimationMsg, Notification, VeraPlusInitMsg, VeraPlusUpdateMsg};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Dio { version: u32, rank: u32, repair: bool },
    VeraInit(VeraInitMsg),
    VeraDio { update: VeraUpdateMsg, repair: bool },
    VeraPlusInit(VeraPlusInitMsg),
    VeraPlusDio { update: VeraPlusUpdateMsg, repair: bool },
    Dao { version: u32, register: bool },
    Dis { target: NodeId },
    Announce { version: u32, rank: u32 },
    Data(Datagram),
    TrailTest(TrailTestMsg),
    TrailReply(TrailReplyMsg),
    TrailUp { nonce: Option<u64>, array: FilterArray },
    TrailDown(SignedAttestation),
    Challenge(Challenge),
    Response(ChallengeResponse),
    /// A challenged node asks the parent whose element it used to vouch for it.
    Vouch { challenge: Challenge, response: ChallengeResponse },
    Notice { note: Notification, path: Vec<NodeId> },
    Legitimation { msg: LegitimationMsg, route: Vec<NodeId> },
}

impl Wire for Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::Dio { .. } => "dio",
            Message::VeraInit(_) => "vera:init",
            Message::VeraDio { .. } => "vera:dio",
            Message::VeraPlusInit(_) => "vera++:init",
            Message::VeraPlusDio { .. } => "vera++:dio",
            Message::Dao { .. } => "dao",
            Message::Dis { .. } => "dis",
            Message::Announce { .. } => "announce",
            Message::Data(_) => "data",
            Message::TrailTest(_) => "trail:test",
            Message::TrailReply(_) => "trail:reply",
            Message::TrailUp { .. } => "trail:up",
            Message::TrailDown(_) => "trail:down",
            Message::Challenge(_) => "challenge",
            Message::Response(_) => "response",
            Message::Vouch { .. } => "vouch",
            Message::Notice { note: Notification::Failure { .. }, .. } => "notice:failure",
            Message::Notice { note: Notification::Validation { .. }, .. } => "notice:validation",
            Message::Legitimation { .. } => "legitimation",
        }
    }

    fn size_bits(&self) -> u64 {
        let b = |n: usize| 8 * n as u64;
        match self {
            Message::Dio { .. } => 48,
            Message::VeraInit(m) => 32 + b(m.v0.width() + m.mac_next.width() + m.signature.0.len()),
            Message::VeraDio { update: u, .. } => 48 + b(u.v.width() + u.mac_next.width() + u.rank_elem.width()),
            Message::VeraPlusInit(m) => 32 + b(m.v0.width() + m.c1.width() + m.cn.width() + m.signature.0.len()),
            Message::VeraPlusDio { update: u, .. } => 48 + b(u.v.width() + u.cipher.width() + u.rank_elem.width()),
            Message::Dao { .. } => 40,
            Message::Dis { .. } => 32,
            Message::Announce { .. } => 48,
            Message::Data(_) => 96,
            Message::TrailTest(t) => 128 + 32 * t.path.len() as u64,
            Message::TrailReply(r) => 128 + b(r.signature.0.len()) + 32 * r.route.len() as u64,
            // attestation metrics count packed filter bits only
            Message::TrailUp { array, .. } => array.slice_bits(),
            Message::TrailDown(a) => a.array.slice_bits(),
            Message::Challenge(_) => 128,
            Message::Response(r) => 128 + b(r.ciphertext.width()),
            Message::Vouch { response, .. } => 256 + b(response.ciphertext.width()),
            Message::Notice { path, .. } => 128 + 32 * path.len() as u64,
            Message::Legitimation { msg, route } => 104 + b(msg.signature.0.len()) + 32 * route.len() as u64,
        }
    }

    fn version(&self) -> Option<u32> {
        match self {
            Message::Dio { version, .. } | Message::Dao { version, .. } | Message::Announce { version, .. } => {
                Some(*version)
            }
            Message::VeraDio { update, .. } => Some(update.vn),
            Message::VeraPlusDio { update, .. } => Some(update.vn),
            _ => None,
        }
    }
}

impl Message {
    pub fn is_trail(&self) -> bool {
        matches!(self, Message::TrailTest(_) | Message::TrailReply(_) | Message::TrailUp { .. } | Message::TrailDown(_))
    }
}
