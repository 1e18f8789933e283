//! UDP ASSOCIATE negotiation over the control channel.
//!
//! Only the NO-AUTH method is offered or accepted. The negotiators are
//! sequential state machines over a reliable byte stream: feed them the bytes
//! read from the stream, write out the bytes they return. One negotiator must
//! not be driven from two threads at once.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpStream};

use super::wire::{
    encode_greeting, encode_method_selection, encode_reply, encode_request, try_decode_greeting,
    try_decode_method_selection, try_decode_request_like, CMD_UDP_ASSOCIATE, METHOD_NO_ACCEPTABLE,
    METHOD_NO_AUTH, REPLY_COMMAND_NOT_SUPPORTED, REPLY_SUCCEEDED,
};
use super::{SocksAddress, SocksError};

/// Progress of a negotiation after feeding it input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum NegotiationStatus {
    /// More input is needed; send any returned bytes first.
    Pending,
    /// Negotiation finished. For the client this carries the relay address
    /// from the reply; for the server it carries the client's declared
    /// source address (accepted and ignored when all-zeros).
    Complete(SocksAddress),
}

enum ClientState {
    AwaitMethod,
    AwaitReply,
    Done,
}

/// Client side of the UDP ASSOCIATE exchange.
pub struct ClientNegotiator {
    state: ClientState,
    buf: Vec<u8>,
}

impl ClientNegotiator {
    /// Returns the negotiator and the greeting bytes to send first.
    pub fn new() -> (Self, Vec<u8>) {
        (
            ClientNegotiator {
                state: ClientState::AwaitMethod,
                buf: Vec::new(),
            },
            encode_greeting(&[METHOD_NO_AUTH]),
        )
    }

    /// Feed bytes read from the control stream. Returns bytes to write back
    /// plus the negotiation status.
    pub fn on_bytes(
        &mut self,
        data: &[u8],
    ) -> Result<(Vec<u8>, NegotiationStatus), SocksError> {
        self.buf.extend_from_slice(data);
        let mut out = Vec::new();
        loop {
            match self.state {
                ClientState::AwaitMethod => {
                    let Some((method, used)) = try_decode_method_selection(&self.buf)? else {
                        return Ok((out, NegotiationStatus::Pending));
                    };
                    self.buf.drain(..used);
                    if method != METHOD_NO_AUTH {
                        return Err(SocksError::MethodRejected);
                    }
                    // Declared client address: all-zeros, the NAT-friendly
                    // convention; the proxy authenticates by source IP.
                    let declared = SocksAddress::V4(std::net::Ipv4Addr::UNSPECIFIED, 0);
                    out.extend_from_slice(&encode_request(CMD_UDP_ASSOCIATE, &declared));
                    self.state = ClientState::AwaitReply;
                }
                ClientState::AwaitReply => {
                    let Some((code, bound, used)) = try_decode_request_like(&self.buf)? else {
                        return Ok((out, NegotiationStatus::Pending));
                    };
                    self.buf.drain(..used);
                    if code != REPLY_SUCCEEDED {
                        return Err(SocksError::RequestFailed(code));
                    }
                    self.state = ClientState::Done;
                    return Ok((out, NegotiationStatus::Complete(bound)));
                }
                ClientState::Done => return Ok((out, NegotiationStatus::Pending)),
            }
        }
    }
}

enum ServerState {
    AwaitGreeting,
    AwaitRequest,
    Done,
}

/// Server side of the UDP ASSOCIATE exchange. `bound` is the relay address
/// advertised in the success reply.
pub struct ServerNegotiator {
    state: ServerState,
    bound: SocksAddress,
    buf: Vec<u8>,
}

impl ServerNegotiator {
    pub fn new(bound: SocketAddr) -> Self {
        ServerNegotiator {
            state: ServerState::AwaitGreeting,
            bound: bound.into(),
            buf: Vec::new(),
        }
    }

    /// Feed bytes from the client. On error the returned bytes (if any) still
    /// need to be written before closing the stream.
    pub fn on_bytes(
        &mut self,
        data: &[u8],
    ) -> Result<(Vec<u8>, NegotiationStatus), (Vec<u8>, SocksError)> {
        self.buf.extend_from_slice(data);
        let mut out = Vec::new();
        loop {
            match self.state {
                ServerState::AwaitGreeting => {
                    let methods = match try_decode_greeting(&self.buf) {
                        Ok(Some((methods, used))) => {
                            self.buf.drain(..used);
                            methods
                        }
                        Ok(None) => return Ok((out, NegotiationStatus::Pending)),
                        Err(e) => return Err((out, e)),
                    };
                    if !methods.contains(&METHOD_NO_AUTH) {
                        out.extend_from_slice(&encode_method_selection(METHOD_NO_ACCEPTABLE));
                        return Err((out, SocksError::MethodRejected));
                    }
                    out.extend_from_slice(&encode_method_selection(METHOD_NO_AUTH));
                    self.state = ServerState::AwaitRequest;
                }
                ServerState::AwaitRequest => {
                    let (cmd, declared) = match try_decode_request_like(&self.buf) {
                        Ok(Some((cmd, declared, used))) => {
                            self.buf.drain(..used);
                            (cmd, declared)
                        }
                        Ok(None) => return Ok((out, NegotiationStatus::Pending)),
                        Err(e) => return Err((out, e)),
                    };
                    if cmd != CMD_UDP_ASSOCIATE {
                        out.extend_from_slice(&encode_reply(
                            REPLY_COMMAND_NOT_SUPPORTED,
                            &self.bound,
                        ));
                        return Err((out, SocksError::CommandNotSupported(cmd)));
                    }
                    out.extend_from_slice(&encode_reply(REPLY_SUCCEEDED, &self.bound));
                    self.state = ServerState::Done;
                    return Ok((out, NegotiationStatus::Complete(declared)));
                }
                ServerState::Done => return Ok((out, NegotiationStatus::Pending)),
            }
        }
    }
}

/// An established UDP association over a real TCP control stream.
///
/// The association is valid only while the control stream is open: dropping
/// this handle closes the stream and with it the association.
pub struct UdpAssociation {
    control: TcpStream,
    relay: SocketAddr,
}

impl UdpAssociation {
    /// Address to send encapsulated datagrams to.
    pub fn relay_addr(&self) -> SocketAddr {
        self.relay
    }

    pub fn control_stream(&self) -> &TcpStream {
        &self.control
    }

    /// Non-blocking read of any control-channel bytes the proxy pushed after
    /// negotiation (resolution-failure reports use the reply layout).
    pub fn drain_control(&mut self) -> Vec<u8> {
        let mut out = Vec::new();
        let mut chunk = [0u8; 256];
        if self.control.set_nonblocking(true).is_err() {
            return out;
        }
        while let Ok(n) = self.control.read(&mut chunk) {
            if n == 0 {
                break;
            }
            out.extend_from_slice(&chunk[..n]);
        }
        let _ = self.control.set_nonblocking(false);
        out
    }
}

/// Blocking client negotiation over a freshly connected control stream.
pub fn negotiate_client(mut stream: TcpStream) -> Result<UdpAssociation, SocksError> {
    let (mut neg, greeting) = ClientNegotiator::new();
    stream.write_all(&greeting)?;
    let mut chunk = [0u8; 512];
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Err(SocksError::StreamClosed);
        }
        let (to_send, status) = neg.on_bytes(&chunk[..n])?;
        if !to_send.is_empty() {
            stream.write_all(&to_send)?;
        }
        if let NegotiationStatus::Complete(bound) = status {
            let relay = match bound.socket_addr() {
                // An unspecified bound address means "same host as the
                // control connection", the common proxy convention.
                Some(addr) if !addr.ip().is_unspecified() => addr,
                Some(addr) => SocketAddr::new(stream.peer_addr()?.ip(), addr.port()),
                None => return Err(SocksError::RequestFailed(0xFF)),
            };
            return Ok(UdpAssociation {
                control: stream,
                relay,
            });
        }
    }
}

/// Blocking server-side negotiation; returns the client's declared address.
pub fn negotiate_server(
    stream: &mut TcpStream,
    bound: SocketAddr,
) -> Result<SocksAddress, SocksError> {
    let mut neg = ServerNegotiator::new(bound);
    let mut chunk = [0u8; 512];
    loop {
        let n = stream.read(&mut chunk)?;
        if n == 0 {
            return Err(SocksError::StreamClosed);
        }
        match neg.on_bytes(&chunk[..n]) {
            Ok((to_send, status)) => {
                if !to_send.is_empty() {
                    stream.write_all(&to_send)?;
                }
                if let NegotiationStatus::Complete(declared) = status {
                    return Ok(declared);
                }
            }
            Err((to_send, e)) => {
                if !to_send.is_empty() {
                    let _ = stream.write_all(&to_send);
                }
                return Err(e);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn drive_pair(client_first: bool) -> (SocksAddress, SocksAddress) {
        let bound: SocketAddr = "10.0.0.2:1081".parse().unwrap();
        let (mut client, greeting) = ClientNegotiator::new();
        let mut server = ServerNegotiator::new(bound);
        let mut c2s = greeting;
        let mut s2c = Vec::new();
        let mut relay = None;
        let mut declared = None;
        // Push bytes back and forth one chunk at a time, optionally split to
        // exercise partial reads.
        for _ in 0..8 {
            if !c2s.is_empty() {
                let data = std::mem::take(&mut c2s);
                let splits = if client_first { vec![data] } else {
                    data.chunks(1).map(|c| c.to_vec()).collect()
                };
                for part in splits {
                    let (out, status) = server.on_bytes(&part).unwrap();
                    s2c.extend_from_slice(&out);
                    if let NegotiationStatus::Complete(addr) = status {
                        declared = Some(addr);
                    }
                }
            }
            if !s2c.is_empty() {
                let data = std::mem::take(&mut s2c);
                let (out, status) = client.on_bytes(&data).unwrap();
                c2s.extend_from_slice(&out);
                if let NegotiationStatus::Complete(addr) = status {
                    relay = Some(addr);
                }
            }
            if relay.is_some() && declared.is_some() {
                break;
            }
        }
        (relay.unwrap(), declared.unwrap())
    }

    #[test]
    fn association_reports_relay_port() {
        let (relay, declared) = drive_pair(true);
        assert_eq!(relay, SocksAddress::V4("10.0.0.2".parse().unwrap(), 1081));
        assert_eq!(declared, SocksAddress::V4("0.0.0.0".parse().unwrap(), 0));
    }

    #[test]
    fn association_survives_byte_at_a_time_delivery() {
        let (relay, _) = drive_pair(false);
        assert_eq!(relay.port(), 1081);
    }

    #[test]
    fn method_list_without_no_auth_rejected() {
        let bound: SocketAddr = "10.0.0.2:1081".parse().unwrap();
        let mut server = ServerNegotiator::new(bound);
        let (out, err) = server.on_bytes(&[0x05, 0x01, 0x02]).unwrap_err();
        assert_eq!(out, vec![0x05, 0xFF]);
        assert_eq!(err, SocksError::MethodRejected);
    }

    #[test]
    fn connect_command_not_supported() {
        let bound: SocketAddr = "10.0.0.2:1081".parse().unwrap();
        let mut server = ServerNegotiator::new(bound);
        let (out, _) = server.on_bytes(&[0x05, 0x01, 0x00]).unwrap();
        assert_eq!(out, vec![0x05, 0x00]);
        // CONNECT to 1.2.3.4:80.
        let (out, err) = server
            .on_bytes(&[0x05, 0x01, 0x00, 0x01, 1, 2, 3, 4, 0, 80])
            .unwrap_err();
        assert_eq!(out[1], REPLY_COMMAND_NOT_SUPPORTED);
        assert_eq!(err, SocksError::CommandNotSupported(0x01));
    }

    #[test]
    fn client_rejects_failed_reply() {
        let (mut client, _) = ClientNegotiator::new();
        let (_, status) = client.on_bytes(&[0x05, 0x00]).unwrap();
        assert_eq!(status, NegotiationStatus::Pending);
        let err = client
            .on_bytes(&[0x05, 0x01, 0x00, 0x01, 0, 0, 0, 0, 0, 0])
            .unwrap_err();
        assert_eq!(err, SocksError::RequestFailed(0x01));
    }

    #[test]
    fn version_mismatch_detected() {
        let bound: SocketAddr = "10.0.0.2:1081".parse().unwrap();
        let mut server = ServerNegotiator::new(bound);
        let (_, err) = server.on_bytes(&[0x04, 0x01, 0x00]).unwrap_err();
        assert_eq!(err, SocksError::VersionMismatch(0x04));
    }
}
