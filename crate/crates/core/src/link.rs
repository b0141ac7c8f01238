//! Token-passing data link over a bounded-capacity, lossy, duplicating,
//! reordering-free channel.
//!
//! The sender repeats its current packet until it has collected more than
//! `capacity` acknowledgments carrying the packet's tag; then the token is
//! back and the next payload may go out with the next tag. The receiver
//! delivers a packet the first time its tag differs from the last delivered
//! tag and acknowledges every packet, piggybacking its own payload.

use serde::{Deserialize, Serialize};

use crate::error::LinkError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Sender,
    Receiver,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkParams {
    pub capacity: u32,
    pub role: Role,
}

impl LinkParams {
    pub fn new(capacity: u32, role: Role) -> Self {
        LinkParams {
            capacity: capacity.max(1),
            role,
        }
    }

    /// The sender of a link is its higher-id endpoint.
    pub fn for_pair(capacity: u32, me: u32, peer: u32) -> Self {
        Self::new(capacity, if me > peer { Role::Sender } else { Role::Receiver })
    }

    /// Number of distinct tags, `2c + 2`.
    pub fn tag_space(&self) -> u8 {
        (2 * self.capacity + 2).min(u8::MAX as u32) as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PacketKind {
    Data,
    Ack,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    pub tag: u8,
    pub kind: PacketKind,
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LinkEvent {
    /// Receiver side: a new payload; the token is now at the receiver.
    Deliver(Vec<u8>),
    /// Receiver side: acknowledge `tag` (build it with [`LinkState::ack`]
    /// after reacting to any delivery, so the ack carries the reply).
    Ack(u8),
    /// Sender side: the token is back, carrying the receiver's payload.
    TokenArrived(Vec<u8>),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkState {
    pub params: LinkParams,
    /// Tag of the sender's current packet.
    pub alt_index: u8,
    pub ack_count: u32,
    pub outbound: Vec<u8>,
    /// Receiver side: tag of the last delivered packet.
    pub delivered_tag: Option<u8>,
    pub holding_token: bool,
}

impl LinkState {
    /// Initial state: the sender holds the token with nothing sent yet.
    pub fn new(params: LinkParams) -> Self {
        LinkState {
            params,
            alt_index: 0,
            ack_count: 0,
            outbound: Vec::new(),
            delivered_tag: None,
            holding_token: params.role == Role::Sender,
        }
    }

    pub fn role(&self) -> Role {
        self.params.role
    }

    pub fn holds_token(&self) -> bool {
        self.holding_token
    }

    /// Hands `payload` to the link. Only the token holder may send.
    pub fn link_send(&mut self, payload: Vec<u8>) -> Result<(), LinkError> {
        if !self.holding_token {
            return Err(LinkError::OffTurn);
        }
        if self.params.role == Role::Sender {
            self.alt_index = (self.alt_index.wrapping_add(1)) % self.params.tag_space();
            self.ack_count = 0;
        }
        self.outbound = payload;
        self.holding_token = false;
        Ok(())
    }

    /// The sender's periodic retransmission.
    pub fn on_timer(&self) -> Option<Packet> {
        (self.params.role == Role::Sender && !self.holding_token).then(|| Packet {
            tag: self.alt_index,
            kind: PacketKind::Data,
            payload: self.outbound.clone(),
        })
    }

    /// The acknowledgment the receiver sends for `tag`.
    pub fn ack(&self, tag: u8) -> Packet {
        Packet {
            tag,
            kind: PacketKind::Ack,
            payload: self.outbound.clone(),
        }
    }

    pub fn link_on_packet(&mut self, pkt: &Packet) -> Vec<LinkEvent> {
        let mut ev = Vec::new();
        match (self.params.role, pkt.kind) {
            (Role::Receiver, PacketKind::Data) => {
                if self.delivered_tag != Some(pkt.tag) {
                    self.delivered_tag = Some(pkt.tag);
                    self.holding_token = true;
                    ev.push(LinkEvent::Deliver(pkt.payload.clone()));
                }
                ev.push(LinkEvent::Ack(pkt.tag));
            }
            (Role::Sender, PacketKind::Ack) if !self.holding_token && pkt.tag == self.alt_index => {
                self.ack_count += 1;
                if self.ack_count > self.params.capacity {
                    self.holding_token = true;
                    ev.push(LinkEvent::TokenArrived(pkt.payload.clone()));
                }
            }
            _ => {}
        }
        ev
    }
}
