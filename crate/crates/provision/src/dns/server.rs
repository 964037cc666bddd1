use std::net::SocketAddr;
use std::sync::Arc;
use std::time::Duration;

use tokio::net::UdpSocket;
use tokio::task::JoinHandle;

use super::wire::{self, DnsResponse};
use super::{DnsAuthority, DnsError};

/// A running UDP responder. Stops when dropped.
#[derive(Debug)]
pub struct DnsServer {
    local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl DnsServer {
    pub(super) async fn start(authority: DnsAuthority, addr: &str) -> Result<Self, DnsError> {
        let bind_err = |e: std::io::Error| DnsError::BindFailure { addr: addr.to_owned(), detail: e.to_string() };
        let socket = Arc::new(UdpSocket::bind(addr).await.map_err(bind_err)?);
        let local_addr = socket.local_addr().map_err(bind_err)?;
        let task = tokio::spawn(async move {
            let mut buf = vec![0u8; 4096];
            loop {
                let (n, peer) = match socket.recv_from(&mut buf).await {
                    Ok(x) => x,
                    Err(e) => {
                        // ICMP port-unreachable from an earlier reply surfaces here on some platforms.
                        log::debug!("dns recv: {e}");
                        continue;
                    }
                };
                if let Some(reply) = authority.answer(&buf[..n]) {
                    if let Err(e) = socket.send_to(&reply, peer).await {
                        log::debug!("dns send to {peer}: {e}");
                    }
                }
            }
        });
        log::info!("dns responder listening on {local_addr}");
        Ok(Self { local_addr, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn shutdown(self) {}
}

impl Drop for DnsServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Sends one query and waits for the matching reply, retrying once on timeout.
pub async fn query_udp(server: SocketAddr, name: &str, qtype: u16, timeout: Duration) -> Result<DnsResponse, DnsError> {
    let io = |e: std::io::Error| DnsError::IoFailure(e.to_string());
    let local = if server.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
    let socket = UdpSocket::bind(local).await.map_err(io)?;
    socket.connect(server).await.map_err(io)?;
    let id: u16 = rand::random();
    let query = wire::build_query(id, name, qtype);
    let mut buf = vec![0u8; 4096];
    for _ in 0..2 {
        socket.send(&query).await.map_err(io)?;
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            match tokio::time::timeout_at(deadline, socket.recv(&mut buf)).await {
                Err(_) => break,
                Ok(Err(e)) => return Err(io(e)),
                Ok(Ok(n)) => {
                    let resp = wire::parse_response(&buf[..n])?;
                    if resp.id == id {
                        return Ok(resp);
                    }
                }
            }
        }
    }
    Err(DnsError::Timeout(server))
}
