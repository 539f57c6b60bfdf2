//! Framed TCP transport between the two parties.
//!
//! Every message is one frame: a 4-byte big-endian payload length, a 1-byte
//! message type, then the payload. A [`TcpChannel`] implements the core
//! [`Channel`] trait over one persistent connection, counting the full frame
//! bytes (header included) so metered traffic equals socket traffic. Link
//! emulation injects a per-frame delay of `latency + size / bandwidth` on
//! the sending side, in process, so benchmark runs are reproducible without
//! OS traffic shaping.
//!
//! The connection is plain TCP with no reconnection support: the semi-honest
//! model assumes an authenticated link, and a deployment that needs
//! confidentiality on the wire should tunnel the connection through an
//! encrypted transport such as SSH or WireGuard.

use crate::error::CliError;
use quotient_core::channel::{msg, Channel, ChannelError, Meter};
use quotient_core::fxp::PrecisionConfig;
use quotient_core::ot::SecurityParams;
use quotient_core::proto::Role;
use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::str::FromStr;
use std::time::{Duration, Instant};

/// Frame header size: 4-byte length plus 1-byte message type.
pub const FRAME_HEADER_BYTES: usize = 5;

/// Upper bound on a single frame payload, rejecting corrupt length fields
/// before they turn into huge allocations.
pub const MAX_FRAME_BYTES: usize = 1 << 30;

/// Wire protocol version announced during the handshake.
pub const NET_VERSION: u16 = 1;

/// How long [`connect`] keeps retrying while the peer's listener is not up.
const CONNECT_RETRY_WINDOW: Duration = Duration::from_secs(10);

/// Link emulation mode for a channel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetMode {
    /// No injected delay; the socket runs at native speed.
    Real,
    /// Local-network reference point: 0.3 ms latency, 1.82 GB/s bandwidth.
    LanSim,
    /// Wide-area reference point: 42 ms latency, 24.3 MB/s bandwidth.
    WanSim,
}

impl NetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            NetMode::Real => "real",
            NetMode::LanSim => "lan-sim",
            NetMode::WanSim => "wan-sim",
        }
    }
}

impl FromStr for NetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "real" => Ok(NetMode::Real),
            "lan-sim" => Ok(NetMode::LanSim),
            "wan-sim" => Ok(NetMode::WanSim),
            other => Err(format!(
                "unknown mode {other:?}, expected real, lan-sim, or wan-sim"
            )),
        }
    }
}

/// Channel configuration: the emulation mode with its latency and
/// bandwidth parameters.
#[derive(Debug, Clone, Copy)]
pub struct ChannelConfig {
    pub mode: NetMode,
}

impl ChannelConfig {
    pub fn new(mode: NetMode) -> Self {
        ChannelConfig { mode }
    }

    /// One-way injected latency for this mode.
    pub fn latency(&self) -> Duration {
        match self.mode {
            NetMode::Real => Duration::ZERO,
            NetMode::LanSim => Duration::from_micros(300),
            NetMode::WanSim => Duration::from_millis(42),
        }
    }

    /// Bandwidth cap in bytes per second; `None` means uncapped.
    pub fn bytes_per_sec(&self) -> Option<f64> {
        match self.mode {
            NetMode::Real => None,
            NetMode::LanSim => Some(1.82e9),
            NetMode::WanSim => Some(24.3e6),
        }
    }

    /// Injected delay for one outgoing frame of the given total size.
    pub fn frame_delay(&self, frame_bytes: usize) -> Duration {
        let serialize = match self.bytes_per_sec() {
            Some(cap) => Duration::from_secs_f64(frame_bytes as f64 / cap),
            None => Duration::ZERO,
        };
        self.latency() + serialize
    }
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig { mode: NetMode::Real }
    }
}

/// Snapshot of a channel's traffic counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ChannelReadings {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames: u64,
    pub round_trips: u64,
}

/// One endpoint of a framed TCP connection.
pub struct TcpChannel {
    stream: TcpStream,
    meter: Meter,
    frames_sent: u64,
    frames_received: u64,
    config: ChannelConfig,
}

impl TcpChannel {
    /// Wraps an established stream, disabling Nagle batching so small
    /// protocol frames do not stall round trips.
    pub fn from_stream(stream: TcpStream) -> Result<Self, CliError> {
        stream
            .set_nodelay(true)
            .map_err(|e| CliError::protocol(format!("set_nodelay failed: {e}")))?;
        Ok(TcpChannel {
            stream,
            meter: Meter::default(),
            frames_sent: 0,
            frames_received: 0,
            config: ChannelConfig::default(),
        })
    }

    /// Applies a link emulation mode to every subsequent outgoing frame.
    pub fn set_config(&mut self, config: ChannelConfig) {
        self.config = config;
    }

    pub fn config(&self) -> ChannelConfig {
        self.config
    }

    /// Counter snapshot for phase-scoped metering.
    pub fn readings(&self) -> ChannelReadings {
        ChannelReadings {
            bytes_sent: self.meter.sent,
            bytes_received: self.meter.received,
            frames: self.frames_sent + self.frames_received,
            round_trips: self.meter.rounds,
        }
    }

    /// Sends one frame of any message type.
    pub fn send_frame(&mut self, msg_type: u8, payload: &[u8]) -> Result<(), ChannelError> {
        if payload.len() > MAX_FRAME_BYTES {
            return Err(ChannelError::Transport(format!(
                "frame payload of {} bytes exceeds the {} byte limit",
                payload.len(),
                MAX_FRAME_BYTES
            )));
        }
        let total = FRAME_HEADER_BYTES + payload.len();
        let delay = self.config.frame_delay(total);
        if delay > Duration::ZERO {
            std::thread::sleep(delay);
        }
        let mut frame = Vec::with_capacity(total);
        frame.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        frame.push(msg_type);
        frame.extend_from_slice(payload);
        self.stream.write_all(&frame).map_err(io_to_channel)?;
        self.meter.on_send(total);
        self.frames_sent += 1;
        Ok(())
    }

    /// Receives one frame, returning its message type and payload.
    pub fn recv_frame(&mut self) -> Result<(u8, Vec<u8>), ChannelError> {
        let mut header = [0u8; FRAME_HEADER_BYTES];
        self.stream.read_exact(&mut header).map_err(io_to_channel)?;
        let len = u32::from_be_bytes(header[0..4].try_into().expect("4-byte slice")) as usize;
        if len > MAX_FRAME_BYTES {
            return Err(ChannelError::Transport(format!(
                "incoming frame declares {len} bytes, over the {MAX_FRAME_BYTES} byte limit"
            )));
        }
        let msg_type = header[4];
        let mut payload = vec![0u8; len];
        self.stream.read_exact(&mut payload).map_err(io_to_channel)?;
        self.meter.on_recv(FRAME_HEADER_BYTES + len);
        self.frames_received += 1;
        Ok((msg_type, payload))
    }
}

impl Channel for TcpChannel {
    fn send(&mut self, msg_type: u8, payload: &[u8]) -> Result<(), ChannelError> {
        self.send_frame(msg_type, payload)
    }

    fn recv(&mut self, expect: u8) -> Result<Vec<u8>, ChannelError> {
        let (msg_type, payload) = self.recv_frame()?;
        if msg_type != expect {
            return Err(ChannelError::UnexpectedType { expected: expect, got: msg_type });
        }
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

fn io_to_channel(err: std::io::Error) -> ChannelError {
    match err.kind() {
        ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::BrokenPipe => {
            ChannelError::Closed
        }
        _ => ChannelError::Transport(err.to_string()),
    }
}

/// Binds `addr` and accepts exactly one connection.
pub fn listen(addr: impl ToSocketAddrs) -> Result<TcpChannel, CliError> {
    let listener = TcpListener::bind(addr)
        .map_err(|e| CliError::protocol(format!("bind failed: {e}")))?;
    let (stream, _) = listener
        .accept()
        .map_err(|e| CliError::protocol(format!("accept failed: {e}")))?;
    TcpChannel::from_stream(stream)
}

/// Connects to a listening peer, retrying briefly while the peer's
/// listener is still coming up so either party may start first.
pub fn connect(addr: impl ToSocketAddrs + Clone) -> Result<TcpChannel, CliError> {
    let start = Instant::now();
    loop {
        match TcpStream::connect(addr.clone()) {
            Ok(stream) => return TcpChannel::from_stream(stream),
            Err(e) if start.elapsed() < CONNECT_RETRY_WINDOW => {
                let retryable = matches!(
                    e.kind(),
                    ErrorKind::ConnectionRefused | ErrorKind::AddrNotAvailable
                );
                if !retryable {
                    return Err(CliError::protocol(format!("connect failed: {e}")));
                }
                std::thread::sleep(Duration::from_millis(50));
            }
            Err(e) => return Err(CliError::protocol(format!("connect failed: {e}"))),
        }
    }
}

/// Session parameters announced by each party before any protocol bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionAnnounce {
    pub version: u16,
    pub party: u8,
    pub tau: u16,
    pub lane_bits: u8,
    pub config_hash: [u8; 8],
    pub batch_seed: u64,
}

impl SessionAnnounce {
    pub const WIRE_BYTES: usize = 22;

    pub fn encode(&self) -> [u8; Self::WIRE_BYTES] {
        let mut out = [0u8; Self::WIRE_BYTES];
        out[0..2].copy_from_slice(&self.version.to_be_bytes());
        out[2] = self.party;
        out[3..5].copy_from_slice(&self.tau.to_be_bytes());
        out[5] = self.lane_bits;
        out[6..14].copy_from_slice(&self.config_hash);
        out[14..22].copy_from_slice(&self.batch_seed.to_be_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CliError> {
        if bytes.len() != Self::WIRE_BYTES {
            return Err(CliError::protocol(format!(
                "session announcement of {} bytes, expected {}",
                bytes.len(),
                Self::WIRE_BYTES
            )));
        }
        Ok(SessionAnnounce {
            version: u16::from_be_bytes(bytes[0..2].try_into().expect("2-byte slice")),
            party: bytes[2],
            tau: u16::from_be_bytes(bytes[3..5].try_into().expect("2-byte slice")),
            lane_bits: bytes[5],
            config_hash: bytes[6..14].try_into().expect("8-byte slice"),
            batch_seed: u64::from_be_bytes(bytes[14..22].try_into().expect("8-byte slice")),
        })
    }
}

/// Exchanges announcements: party 1 speaks first, party 2 answers after
/// seeing the peer's message (so it can adopt the shared batch seed).
pub fn exchange_announce<C: Channel>(
    channel: &mut C,
    mine: &SessionAnnounce,
) -> Result<SessionAnnounce, CliError> {
    if mine.party == 1 {
        channel.send(msg::HANDSHAKE, &mine.encode())?;
        SessionAnnounce::decode(&channel.recv(msg::HANDSHAKE)?)
    } else {
        let peer = SessionAnnounce::decode(&channel.recv(msg::HANDSHAKE)?)?;
        channel.send(msg::HANDSHAKE, &mine.encode())?;
        Ok(peer)
    }
}

/// Validates the peer's announcement against ours. Run by both parties;
/// the batch seed is excluded here because party 2 adopts party 1's.
pub fn check_announce(mine: &SessionAnnounce, peer: &SessionAnnounce) -> Result<(), CliError> {
    if peer.version != mine.version {
        return Err(CliError::protocol(format!(
            "peer runs wire protocol version {}, this build speaks {}",
            peer.version, mine.version
        )));
    }
    if peer.party == mine.party {
        return Err(CliError::protocol(format!(
            "both endpoints claim party {}; start one with --role 1 and one with --role 2",
            mine.party
        )));
    }
    if peer.tau != mine.tau {
        return Err(CliError::protocol(format!(
            "security parameter mismatch: peer uses tau = {}, local tau = {}",
            peer.tau, mine.tau
        )));
    }
    if peer.lane_bits != mine.lane_bits {
        return Err(CliError::protocol(format!(
            "lane width mismatch: peer packs {}-bit lanes, local {}-bit",
            peer.lane_bits, mine.lane_bits
        )));
    }
    if peer.config_hash != mine.config_hash {
        return Err(CliError::protocol(
            "precision configuration differs between the parties".to_string(),
        ));
    }
    Ok(())
}

/// Full session handshake. Announces version, party, security parameter,
/// lane width, precision-configuration hash, and batch seed; verifies the
/// peer matches; returns the batch seed both parties will use (party 1's).
pub fn net_handshake<C: Channel>(
    channel: &mut C,
    role: Role,
    params: &SecurityParams,
    lane_bits: u8,
    config: &PrecisionConfig,
    batch_seed: u64,
) -> Result<u64, CliError> {
    let mut mine = SessionAnnounce {
        version: NET_VERSION,
        party: role.party_index(),
        tau: params.tau,
        lane_bits,
        config_hash: config.config_hash(),
        batch_seed,
    };
    match role {
        Role::Party1 => {
            channel.send(msg::HANDSHAKE, &mine.encode())?;
            let peer = SessionAnnounce::decode(&channel.recv(msg::HANDSHAKE)?)?;
            check_announce(&mine, &peer)?;
            if peer.batch_seed != batch_seed {
                return Err(CliError::protocol(
                    "peer failed to adopt the announced batch seed".to_string(),
                ));
            }
            Ok(batch_seed)
        }
        Role::Party2 => {
            let peer = SessionAnnounce::decode(&channel.recv(msg::HANDSHAKE)?)?;
            mine.batch_seed = peer.batch_seed;
            channel.send(msg::HANDSHAKE, &mine.encode())?;
            check_announce(&mine, &peer)?;
            Ok(peer.batch_seed)
        }
    }
}

/// Traffic accounting across labeled, properly nested phases.
#[derive(Debug, Default)]
pub struct TrafficMeter {
    stack: Vec<(String, ChannelReadings)>,
    finished: Vec<PhaseRecord>,
}

/// Traffic attributed to one completed phase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseRecord {
    pub label: String,
    pub depth: usize,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames: u64,
    pub round_trips: u64,
}

impl TrafficMeter {
    pub fn new() -> Self {
        TrafficMeter::default()
    }

    /// Opens a phase at the current nesting depth.
    pub fn enter(&mut self, label: impl Into<String>, at: ChannelReadings) {
        self.stack.push((label.into(), at));
    }

    /// Closes the innermost open phase and records its traffic delta.
    pub fn exit(&mut self, at: ChannelReadings) -> PhaseRecord {
        let (label, start) = self.stack.pop().expect("exit without a matching enter");
        let record = PhaseRecord {
            label,
            depth: self.stack.len(),
            bytes_sent: at.bytes_sent - start.bytes_sent,
            bytes_received: at.bytes_received - start.bytes_received,
            frames: at.frames - start.frames,
            round_trips: at.round_trips - start.round_trips,
        };
        self.finished.push(record.clone());
        record
    }

    /// Completed phases in the order they closed.
    pub fn records(&self) -> &[PhaseRecord] {
        &self.finished
    }

    pub fn open_phases(&self) -> usize {
        self.stack.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use quotient_core::channel::MemChannel;
    use quotient_core::rng::AesPrg;
    use rand::RngCore;
    use std::thread;

    fn tcp_pair() -> (TcpChannel, TcpChannel) {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind");
        let addr = listener.local_addr().expect("local_addr");
        let client = thread::spawn(move || connect(addr).expect("connect"));
        let (stream, _) = listener.accept().expect("accept");
        let server = TcpChannel::from_stream(stream).expect("server channel");
        (server, client.join().expect("client thread"))
    }

    fn announce(party: u8) -> SessionAnnounce {
        SessionAnnounce {
            version: NET_VERSION,
            party,
            tau: 128,
            lane_bits: 32,
            config_hash: [7; 8],
            batch_seed: 99,
        }
    }

    #[test]
    fn empty_frame_round_trip() {
        let (mut a, mut b) = tcp_pair();
        a.send_frame(msg::SHARE_BLOB, &[]).expect("send");
        let (ty, payload) = b.recv_frame().expect("recv");
        assert_eq!(ty, msg::SHARE_BLOB);
        assert!(payload.is_empty());
        b.send_frame(msg::SHARE_BLOB, &[]).expect("echo");
        let (ty, payload) = a.recv_frame().expect("echo recv");
        assert_eq!(ty, msg::SHARE_BLOB);
        assert!(payload.is_empty());
        assert_eq!(a.bytes_sent(), FRAME_HEADER_BYTES as u64);
        assert_eq!(a.bytes_received(), FRAME_HEADER_BYTES as u64);
        assert_eq!(a.round_trips(), 1);
    }

    #[test]
    fn random_frames_echo_in_order() {
        let (mut a, mut b) = tcp_pair();
        let echo = thread::spawn(move || {
            for _ in 0..10_000 {
                let (ty, payload) = b.recv_frame().expect("peer recv");
                b.send_frame(ty, &payload).expect("peer send");
            }
            b
        });
        let mut rng = AesPrg::new([3; 16]);
        let mut expected_wire = 0u64;
        for i in 0..10_000u32 {
            let len = (rng.next_u32() % 512) as usize;
            let mut payload = vec![0u8; len];
            rng.fill_bytes(&mut payload);
            payload.extend_from_slice(&i.to_be_bytes());
            let ty = (rng.next_u32() % 250) as u8;
            a.send_frame(ty, &payload).expect("send");
            expected_wire += (FRAME_HEADER_BYTES + payload.len()) as u64;
            let (rty, rpayload) = a.recv_frame().expect("recv");
            assert_eq!(rty, ty);
            assert_eq!(rpayload, payload);
        }
        let b = echo.join().expect("echo thread");
        assert_eq!(a.bytes_sent(), expected_wire);
        assert_eq!(a.bytes_received(), expected_wire);
        assert_eq!(b.bytes_received(), expected_wire);
        assert_eq!(b.bytes_sent(), expected_wire);
        assert_eq!(a.round_trips(), 10_000);
    }

    #[test]
    fn high_volume_frames_arrive_intact_and_in_order() {
        let (mut a, mut b) = tcp_pair();
        let n = 100_000u32;
        let producer = thread::spawn(move || {
            let mut rng = AesPrg::new([4; 16]);
            for i in 0..n {
                let len = (rng.next_u32() % 16) as usize;
                let mut payload = i.to_be_bytes().to_vec();
                payload.resize(4 + len, (i % 251) as u8);
                a.send_frame(msg::SHARE_BLOB, &payload).expect("send");
            }
            a
        });
        let mut check_rng = AesPrg::new([4; 16]);
        let mut received = 0u64;
        for i in 0..n {
            let (ty, payload) = b.recv_frame().expect("recv");
            assert_eq!(ty, msg::SHARE_BLOB);
            let len = (check_rng.next_u32() % 16) as usize;
            assert_eq!(payload.len(), 4 + len);
            assert_eq!(u32::from_be_bytes(payload[0..4].try_into().unwrap()), i);
            assert!(payload[4..].iter().all(|&v| v == (i % 251) as u8));
            received += (FRAME_HEADER_BYTES + payload.len()) as u64;
        }
        let a = producer.join().expect("producer");
        assert_eq!(a.bytes_sent(), received);
        assert_eq!(b.bytes_received(), received);
    }

    #[test]
    fn oversized_frame_is_rejected_by_sender() {
        let (mut a, _b) = tcp_pair();
        let err = a.send_frame(msg::SHARE_BLOB, &vec![0u8; MAX_FRAME_BYTES + 1]);
        assert!(matches!(err, Err(ChannelError::Transport(_))));
    }

    #[test]
    fn unexpected_type_is_a_typed_error() {
        let (mut a, mut b) = tcp_pair();
        a.send_frame(msg::GC_TABLES, &[1, 2, 3]).expect("send");
        match b.recv(msg::SHARE_BLOB) {
            Err(ChannelError::UnexpectedType { expected, got }) => {
                assert_eq!(expected, msg::SHARE_BLOB);
                assert_eq!(got, msg::GC_TABLES);
            }
            other => panic!("expected UnexpectedType, got {other:?}"),
        }
    }

    #[test]
    fn closed_peer_reports_closed() {
        let (mut a, b) = tcp_pair();
        drop(b);
        assert!(matches!(a.recv_frame(), Err(ChannelError::Closed)));
    }

    #[test]
    fn lan_delay_stays_small_and_wan_delay_covers_serialization() {
        let lan = ChannelConfig::new(NetMode::LanSim);
        assert!(lan.frame_delay(64) <= Duration::from_millis(1));

        let wan = ChannelConfig::new(NetMode::WanSim);
        let megabyte = 1_000_000;
        let floor = Duration::from_secs_f64(megabyte as f64 / 24.3e6);
        assert!(wan.frame_delay(megabyte) >= floor);
        assert!(wan.frame_delay(0) >= Duration::from_millis(42));

        assert_eq!(
            ChannelConfig::new(NetMode::Real).frame_delay(megabyte),
            Duration::ZERO
        );
    }

    #[test]
    fn emulated_round_trips_lower_bound_wall_time() {
        let (mut a, mut b) = tcp_pair();
        let config = ChannelConfig::new(NetMode::LanSim);
        a.set_config(config);
        b.set_config(config);
        let echo = thread::spawn(move || {
            for _ in 0..20 {
                let (ty, payload) = b.recv_frame().expect("peer recv");
                b.send_frame(ty, &payload).expect("peer send");
            }
        });
        let started = Instant::now();
        for _ in 0..20 {
            a.send_frame(msg::SHARE_BLOB, &[9; 8]).expect("send");
            a.recv_frame().expect("recv");
        }
        let wall = started.elapsed();
        echo.join().expect("echo thread");
        assert_eq!(a.round_trips(), 20);
        let floor = config.latency() * 2 * a.round_trips() as u32;
        assert!(
            wall >= floor,
            "wall {wall:?} fell under the emulated link floor {floor:?}"
        );
    }

    #[test]
    fn announce_encoding_round_trips() {
        let mine = SessionAnnounce {
            version: 513,
            party: 2,
            tau: 128,
            lane_bits: 32,
            config_hash: [1, 2, 3, 4, 5, 6, 7, 8],
            batch_seed: 0x0102_0304_0506_0708,
        };
        let bytes = mine.encode();
        assert_eq!(bytes.len(), SessionAnnounce::WIRE_BYTES);
        assert_eq!(bytes[0..2], [2, 1]);
        assert_eq!(bytes[14..22], [1, 2, 3, 4, 5, 6, 7, 8]);
        assert_eq!(SessionAnnounce::decode(&bytes).expect("decode"), mine);
        assert!(SessionAnnounce::decode(&bytes[..21]).is_err());
    }

    #[test]
    fn version_mismatch_aborts_with_typed_error() {
        let mine = announce(1);
        let mut peer = announce(2);
        peer.version = NET_VERSION + 1;
        let err = check_announce(&mine, &peer).expect_err("must reject");
        assert_eq!(err.exit_code(), crate::error::EXIT_PROTOCOL);
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn role_and_parameter_mismatches_abort() {
        let mine = announce(1);
        assert!(check_announce(&mine, &announce(1)).is_err());

        let mut peer = announce(2);
        peer.tau = 64;
        assert!(check_announce(&mine, &peer).is_err());

        let mut peer = announce(2);
        peer.lane_bits = 16;
        assert!(check_announce(&mine, &peer).is_err());

        let mut peer = announce(2);
        peer.config_hash = [0; 8];
        assert!(check_announce(&mine, &peer).is_err());

        assert!(check_announce(&mine, &announce(2)).is_ok());
    }

    #[test]
    fn handshake_agrees_on_party_one_seed() {
        let (mut c1, mut c2) = MemChannel::pair();
        let params = SecurityParams::default();
        let config = PrecisionConfig::default();
        let p2 = {
            let params = params.clone();
            let config = config.clone();
            thread::spawn(move || {
                net_handshake(&mut c2, Role::Party2, &params, 32, &config, 555).expect("p2")
            })
        };
        let seed1 = net_handshake(&mut c1, Role::Party1, &params, 32, &config, 777).expect("p1");
        let seed2 = p2.join().expect("p2 thread");
        assert_eq!(seed1, 777);
        assert_eq!(seed2, 777);
    }

    #[test]
    fn handshake_rejects_differing_precision() {
        let (mut c1, mut c2) = MemChannel::pair();
        let params = SecurityParams::default();
        let p2 = {
            let params = params.clone();
            thread::spawn(move || {
                let mut other = PrecisionConfig::default();
                other.p_a = other.p_a + 1;
                net_handshake(&mut c2, Role::Party2, &params, 32, &other, 1)
            })
        };
        let local = net_handshake(
            &mut c1,
            Role::Party1,
            &params,
            32,
            &PrecisionConfig::default(),
            1,
        );
        let remote = p2.join().expect("p2 thread");
        assert!(local.is_err());
        assert!(remote.is_err());
    }

    #[test]
    fn traffic_meter_nests_phases() {
        let mut meter = TrafficMeter::new();
        let at = |sent: u64, frames: u64| ChannelReadings {
            bytes_sent: sent,
            bytes_received: 0,
            frames,
            round_trips: 0,
        };
        meter.enter("setup", at(0, 0));
        meter.enter("base-transfers", at(100, 1));
        let inner = meter.exit(at(300, 4));
        assert_eq!(inner.label, "base-transfers");
        assert_eq!(inner.depth, 1);
        assert_eq!(inner.bytes_sent, 200);
        assert_eq!(inner.frames, 3);
        let outer = meter.exit(at(350, 5));
        assert_eq!(outer.label, "setup");
        assert_eq!(outer.depth, 0);
        assert_eq!(outer.bytes_sent, 350);
        assert_eq!(meter.open_phases(), 0);
        assert_eq!(meter.records().len(), 2);
    }
}
