//! Transport abstraction the two-party protocols run over.
//!
//! A channel moves typed messages between the two parties and keeps traffic
//! counters so benchmarks can report bytes and communication rounds. The
//! library ships an in-memory loopback implementation behind the `std`
//! feature; TCP framing lives in the companion CLI crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Message type tags carried on every frame.
pub mod msg {
    pub const HANDSHAKE: u8 = 0x01;
    pub const BASE_OT_A: u8 = 0x10;
    pub const BASE_OT_B: u8 = 0x11;
    pub const EXT_MATRIX: u8 = 0x12;
    pub const EXT_CORRECTION: u8 = 0x13;
    pub const COT_JOB_HEADER: u8 = 0x20;
    pub const GC_TABLES: u8 = 0x30;
    pub const GC_INPUT_LABELS: u8 = 0x31;
    pub const GC_OUTPUT_DECODE: u8 = 0x32;
    pub const SHARE_BLOB: u8 = 0x40;
}

/// Errors reported by channel implementations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChannelError {
    /// The peer hung up or the transport failed.
    Closed,
    /// A frame arrived with a different type than the protocol expected.
    UnexpectedType { expected: u8, got: u8 },
    /// Transport-specific failure description.
    Transport(String),
}

impl fmt::Display for ChannelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChannelError::Closed => write!(f, "channel closed by peer"),
            ChannelError::UnexpectedType { expected, got } => {
                write!(f, "expected message type {expected:#04x}, got {got:#04x}")
            }
            ChannelError::Transport(err) => write!(f, "transport error: {err}"),
        }
    }
}

impl core::error::Error for ChannelError {}

/// Bidirectional typed-message transport with traffic accounting.
///
/// `round_trips` counts direction changes from sending to receiving, i.e.
/// the number of times this endpoint had to wait on the wire after speaking.
pub trait Channel {
    fn send(&mut self, msg_type: u8, payload: &[u8]) -> Result<(), ChannelError>;
    fn recv(&mut self, expect: u8) -> Result<Vec<u8>, ChannelError>;
    fn bytes_sent(&self) -> u64;
    fn bytes_received(&self) -> u64;
    fn round_trips(&self) -> u64;
}

/// Traffic counters shared by channel implementations.
#[derive(Debug, Default, Clone)]
pub struct Meter {
    pub sent: u64,
    pub received: u64,
    pub rounds: u64,
    last_was_send: bool,
}

impl Meter {
    pub fn on_send(&mut self, payload_len: usize) {
        self.sent += payload_len as u64;
        self.last_was_send = true;
    }

    pub fn on_recv(&mut self, payload_len: usize) {
        self.received += payload_len as u64;
        if self.last_was_send {
            self.rounds += 1;
            self.last_was_send = false;
        }
    }
}

#[cfg(feature = "std")]
pub use mem::MemChannel;

#[cfg(feature = "std")]
mod mem {
    use super::{Channel, ChannelError, Meter};
    use alloc::vec::Vec;
    use std::sync::mpsc::{channel, Receiver, Sender};

    /// In-process channel endpoint for loopback protocol runs where the two
    /// parties live on separate threads.
    pub struct MemChannel {
        tx: Sender<(u8, Vec<u8>)>,
        rx: Receiver<(u8, Vec<u8>)>,
        meter: Meter,
    }

    impl MemChannel {
        /// Creates a connected pair of endpoints.
        pub fn pair() -> (MemChannel, MemChannel) {
            let (tx_a, rx_b) = channel();
            let (tx_b, rx_a) = channel();
            (
                MemChannel { tx: tx_a, rx: rx_a, meter: Meter::default() },
                MemChannel { tx: tx_b, rx: rx_b, meter: Meter::default() },
            )
        }
    }

    impl Channel for MemChannel {
        fn send(&mut self, msg_type: u8, payload: &[u8]) -> Result<(), ChannelError> {
            self.meter.on_send(payload.len());
            self.tx
                .send((msg_type, payload.to_vec()))
                .map_err(|_| ChannelError::Closed)
        }

        fn recv(&mut self, expect: u8) -> Result<Vec<u8>, ChannelError> {
            let (msg_type, payload) = self.rx.recv().map_err(|_| ChannelError::Closed)?;
            if msg_type != expect {
                return Err(ChannelError::UnexpectedType { expected: expect, got: msg_type });
            }
            self.meter.on_recv(payload.len());
            Ok(payload)
        }

        fn bytes_sent(&self) -> u64 {
            self.meter.sent
        }

        fn bytes_received(&self) -> u64 {
            self.meter.received
        }

        fn round_trips(&self) -> u64 {
            self.meter.rounds
        }
    }
}
