//! Public-channel messages, their line framing, and transports.
//!
//! One message per line:
//! `seq=<n> pass=<p> block=<b> type=<SYN|PAR|BSP|MRK|ACK|NONCE|DONE> payload=<bits>`
//! where each payload bit is written as one hex digit (`0` or `1`), so the
//! bit length is recoverable exactly. The in-process transport carries the
//! same encoded lines.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Write};
use std::net::TcpStream;
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::time::Duration;

use thiserror::Error;

use super::{ReconcileError, Role};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MsgType {
    Syn,
    Par,
    Bsp,
    Mrk,
    Ack,
    Nonce,
    Done,
}

impl MsgType {
    pub fn as_str(self) -> &'static str {
        match self {
            MsgType::Syn => "SYN",
            MsgType::Par => "PAR",
            MsgType::Bsp => "BSP",
            MsgType::Mrk => "MRK",
            MsgType::Ack => "ACK",
            MsgType::Nonce => "NONCE",
            MsgType::Done => "DONE",
        }
    }
}

impl FromStr for MsgType {
    type Err = WireError;

    fn from_str(s: &str) -> Result<Self, WireError> {
        Ok(match s {
            "SYN" => MsgType::Syn,
            "PAR" => MsgType::Par,
            "BSP" => MsgType::Bsp,
            "MRK" => MsgType::Mrk,
            "ACK" => MsgType::Ack,
            "NONCE" => MsgType::Nonce,
            "DONE" => MsgType::Done,
            other => return Err(WireError::Malformed(format!("unknown type {other:?}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Message {
    pub seq: u64,
    pub pass: u32,
    pub block: u64,
    pub kind: MsgType,
    /// One entry per bit, each 0 or 1.
    pub payload: Vec<u8>,
}

impl Message {
    pub fn encode(&self) -> String {
        self.to_string()
    }

    pub fn decode(line: &str) -> Result<Message, WireError> {
        let bad = |m: &str| WireError::Malformed(format!("{m}: {line:?}"));
        let mut fields = line.trim_end_matches(['\r', '\n']).split(' ');
        let mut take = |key: &str| -> Result<&str, WireError> {
            let f = fields.next().ok_or_else(|| bad("missing field"))?;
            f.strip_prefix(key)
                .and_then(|rest| rest.strip_prefix('='))
                .ok_or_else(|| bad(&format!("expected {key}=")))
        };
        let seq = take("seq")?.parse().map_err(|_| bad("bad seq"))?;
        let pass = take("pass")?.parse().map_err(|_| bad("bad pass"))?;
        let block = take("block")?.parse().map_err(|_| bad("bad block"))?;
        let kind = take("type")?.parse()?;
        let payload = take("payload")?
            .bytes()
            .map(|c| match c {
                b'0' => Ok(0),
                b'1' => Ok(1),
                _ => Err(bad("payload digit not 0/1")),
            })
            .collect::<Result<Vec<u8>, _>>()?;
        if fields.next().is_some() {
            return Err(bad("trailing field"));
        }
        Ok(Message { seq, pass, block, kind, payload })
    }
}

impl fmt::Display for Message {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "seq={} pass={} block={} type={} payload=",
            self.seq,
            self.pass,
            self.block,
            self.kind.as_str()
        )?;
        for &b in &self.payload {
            f.write_str(if b != 0 { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// Payload bits of `msg` that reveal information about the sender's stream.
/// Requests from the follower carry no stream information, except the sampled
/// bits of a BDR probe (pass 0 parity message).
pub fn disclosed_bits(msg: &Message, sender: Role) -> u64 {
    match (msg.kind, sender) {
        (MsgType::Syn | MsgType::Par, _) => msg.payload.len() as u64,
        (MsgType::Bsp, Role::Leader) => msg.payload.len() as u64,
        _ => 0,
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed message {0}")]
    Malformed(String),
    #[error("peer disconnected")]
    Disconnected,
    #[error("timed out waiting for peer")]
    Timeout,
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
}

/// Reliable, ordered line delivery in each direction.
pub trait Transport: Send {
    fn send_line(&mut self, line: &str) -> Result<(), WireError>;
    fn recv_line(&mut self) -> Result<String, WireError>;
    fn flush(&mut self) -> Result<(), WireError> {
        Ok(())
    }
}

pub struct ChannelTransport {
    tx: Sender<String>,
    rx: Receiver<String>,
    timeout: Duration,
}

/// Two connected in-process endpoints.
pub fn channel_pair(timeout: Duration) -> (ChannelTransport, ChannelTransport) {
    let (a_tx, b_rx) = mpsc::channel();
    let (b_tx, a_rx) = mpsc::channel();
    (
        ChannelTransport { tx: a_tx, rx: a_rx, timeout },
        ChannelTransport { tx: b_tx, rx: b_rx, timeout },
    )
}

impl Transport for ChannelTransport {
    fn send_line(&mut self, line: &str) -> Result<(), WireError> {
        self.tx.send(line.to_string()).map_err(|_| WireError::Disconnected)
    }

    fn recv_line(&mut self) -> Result<String, WireError> {
        self.rx.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => WireError::Timeout,
            RecvTimeoutError::Disconnected => WireError::Disconnected,
        })
    }
}

/// Writes are buffered until the next flush or blocking read, so a whole
/// batch reaches the socket at once.
pub struct TcpTransport {
    reader: BufReader<TcpStream>,
    writer: BufWriter<TcpStream>,
}

impl TcpTransport {
    pub fn new(stream: TcpStream, timeout: Duration) -> Result<Self, WireError> {
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let writer = BufWriter::with_capacity(1 << 20, stream.try_clone()?);
        Ok(TcpTransport { reader: BufReader::new(stream), writer })
    }
}

impl Transport for TcpTransport {
    fn send_line(&mut self, line: &str) -> Result<(), WireError> {
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    fn recv_line(&mut self) -> Result<String, WireError> {
        // Anything buffered must reach the peer before we block on it.
        self.writer.flush()?;
        let mut line = String::new();
        match self.reader.read_line(&mut line) {
            Ok(0) => Err(WireError::Disconnected),
            Ok(_) => Ok(line.trim_end_matches(['\r', '\n']).to_string()),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Err(WireError::Timeout),
            Err(e) => Err(e.into()),
        }
    }

    fn flush(&mut self) -> Result<(), WireError> {
        self.writer.flush()?;
        Ok(())
    }
}

impl<T: Transport + ?Sized> Transport for Box<T> {
    fn send_line(&mut self, line: &str) -> Result<(), WireError> {
        (**self).send_line(line)
    }
    fn recv_line(&mut self) -> Result<String, WireError> {
        (**self).recv_line()
    }
    fn flush(&mut self) -> Result<(), WireError> {
        (**self).flush()
    }
}

/// Sequenced, audited message link for one party.
///
/// Each direction numbers its messages from 0; a gap or repeat is a
/// `ProtocolDesync`. The audit counter tallies disclosed payload bits in
/// both directions independently of the reconciliation ledger.
pub struct Link<T: Transport> {
    transport: T,
    role: Role,
    next_send: u64,
    next_recv: u64,
    audited_bits: u64,
    messages_sent: u64,
}

impl<T: Transport> Link<T> {
    pub fn new(transport: T, role: Role) -> Self {
        Link { transport, role, next_send: 0, next_recv: 0, audited_bits: 0, messages_sent: 0 }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn audited_bits(&self) -> u64 {
        self.audited_bits
    }

    pub fn messages_sent(&self) -> u64 {
        self.messages_sent
    }

    pub fn into_inner(self) -> T {
        self.transport
    }

    pub fn send(&mut self, kind: MsgType, pass: u32, block: u64, payload: Vec<u8>) -> Result<(), ReconcileError> {
        let msg = Message { seq: self.next_send, pass, block, kind, payload };
        self.next_send += 1;
        self.messages_sent += 1;
        self.audited_bits += disclosed_bits(&msg, self.role);
        self.transport.send_line(&msg.encode())?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), ReconcileError> {
        self.transport.flush()?;
        Ok(())
    }

    pub fn recv(&mut self) -> Result<Message, ReconcileError> {
        let line = self.transport.recv_line()?;
        let msg = Message::decode(&line)?;
        if msg.seq != self.next_recv {
            return Err(ReconcileError::ProtocolDesync(format!(
                "expected seq {} but received {}",
                self.next_recv, msg.seq
            )));
        }
        self.next_recv += 1;
        self.audited_bits += disclosed_bits(&msg, self.role.peer());
        Ok(msg)
    }

    /// Receives a message and checks its type and address.
    pub fn expect(&mut self, kind: MsgType, pass: u32, block: u64) -> Result<Message, ReconcileError> {
        let msg = self.recv()?;
        if msg.kind != kind || msg.pass != pass || msg.block != block {
            return Err(ReconcileError::ProtocolDesync(format!(
                "expected {} pass={pass} block={block}, received {}",
                kind.as_str(),
                msg
            )));
        }
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encode_decode_round_trip() {
        let m = Message { seq: 12, pass: 3, block: 40, kind: MsgType::Bsp, payload: vec![1, 0, 1, 1] };
        let line = m.encode();
        assert_eq!(line, "seq=12 pass=3 block=40 type=BSP payload=1011");
        assert_eq!(Message::decode(&line).unwrap(), m);
        let empty = Message { seq: 0, pass: 0, block: 0, kind: MsgType::Done, payload: vec![] };
        assert_eq!(Message::decode(&empty.encode()).unwrap(), empty);
    }

    #[test]
    fn decode_rejects_garbage() {
        for line in [
            "",
            "seq=1 pass=0 block=0 type=FOO payload=",
            "seq=x pass=0 block=0 type=ACK payload=",
            "seq=1 pass=0 block=0 type=ACK payload=2",
            "seq=1 pass=0 block=0 type=ACK payload=1 extra",
            "pass=0 seq=1 block=0 type=ACK payload=",
        ] {
            assert!(Message::decode(line).is_err(), "{line}");
        }
    }

    #[test]
    fn disclosure_classification() {
        let m = |kind, n| Message { seq: 0, pass: 1, block: 0, kind, payload: vec![0; n] };
        assert_eq!(disclosed_bits(&m(MsgType::Syn, 4), Role::Leader), 4);
        assert_eq!(disclosed_bits(&m(MsgType::Par, 1), Role::Leader), 1);
        assert_eq!(disclosed_bits(&m(MsgType::Par, 9), Role::Follower), 9);
        assert_eq!(disclosed_bits(&m(MsgType::Bsp, 5), Role::Follower), 0);
        assert_eq!(disclosed_bits(&m(MsgType::Bsp, 1), Role::Leader), 1);
        assert_eq!(disclosed_bits(&m(MsgType::Nonce, 128), Role::Leader), 0);
        assert_eq!(disclosed_bits(&m(MsgType::Ack, 32), Role::Leader), 0);
    }

    #[test]
    fn link_detects_sequence_gap() {
        let (a, mut b) = channel_pair(Duration::from_secs(1));
        b.send_line("seq=0 pass=0 block=0 type=ACK payload=").unwrap();
        b.send_line("seq=5 pass=0 block=0 type=ACK payload=").unwrap();
        let mut la = Link::new(a, Role::Leader);
        assert!(la.recv().is_ok());
        assert!(matches!(la.recv(), Err(ReconcileError::ProtocolDesync(_))));
    }

    #[test]
    fn closed_peer_is_transport_failure() {
        let (a, b) = channel_pair(Duration::from_secs(1));
        drop(b);
        let mut la = Link::new(a, Role::Leader);
        assert!(matches!(la.recv(), Err(ReconcileError::TransportFailure(_))));
    }

    #[test]
    fn silent_peer_times_out() {
        let (a, _b) = channel_pair(Duration::from_millis(20));
        let mut la = Link::new(a, Role::Leader);
        assert!(matches!(la.recv(), Err(ReconcileError::Timeout)));
    }
}
