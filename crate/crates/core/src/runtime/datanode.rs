//! TCP data node server and the matching client transport.

use std::collections::HashMap;
use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use super::frame::{read_frame, write_frame, Frame, FrameError, FrameType};
use super::wire;
use super::RuntimeError;
use crate::datalayer::{DataNode, DataTransport, TransportError};
use crate::NodeId;

const ACCEPT_POLL: Duration = Duration::from_millis(5);

/// Serves GET and PUT frames for one in-memory [`DataNode`].
pub struct DataNodeServer {
    node: Arc<DataNode>,
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    conns: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl DataNodeServer {
    pub fn bind(node_id: NodeId, addr: impl ToSocketAddrs) -> Result<Self, RuntimeError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let node = Arc::new(DataNode::new(node_id));
        let stop = Arc::new(AtomicBool::new(false));
        let conns = Arc::new(Mutex::new(Vec::new()));
        let acceptor = {
            let (node, stop, conns) = (node.clone(), stop.clone(), conns.clone());
            thread::Builder::new()
                .name(format!("datanode-{node_id}"))
                .spawn(move || accept_loop(listener, node, stop, conns))?
        };
        log::info!("data node {node_id} listening on {addr}");
        Ok(Self {
            node,
            addr,
            stop,
            conns,
            acceptor: Some(acceptor),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn node(&self) -> &Arc<DataNode> {
        &self.node
    }

    /// Stops accepting and drops every open connection, as a crash would.
    pub fn shutdown(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        for c in self.conns.lock().unwrap().drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    /// Blocks until [`shutdown`](Self::shutdown) is called from elsewhere.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for DataNodeServer {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn accept_loop(listener: TcpListener, node: Arc<DataNode>, stop: Arc<AtomicBool>, conns: Arc<Mutex<Vec<TcpStream>>>) {
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let _ = stream.set_nodelay(true);
                if let Ok(c) = stream.try_clone() {
                    conns.lock().unwrap().push(c);
                }
                let node = node.clone();
                thread::spawn(move || {
                    if let Err(e) = serve(stream, &node) {
                        log::debug!("data node {}: connection closed: {e}", node.node_id);
                    }
                });
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(ACCEPT_POLL),
            Err(e) => {
                log::warn!("data node {}: accept failed: {e}", node.node_id);
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn serve(stream: TcpStream, node: &DataNode) -> Result<(), FrameError> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let frame = read_frame(&mut reader)?;
        let t = Instant::now();
        let reply = match frame.kind {
            FrameType::Get => {
                let id = wire::parse_get(&frame)?;
                let got = node.get(id);
                wire::put_frame(id, got.as_deref().map(|v| v.as_slice()))
            }
            FrameType::Put => {
                let (id, payload) = wire::parse_put(&frame)?;
                node.put(id, payload.unwrap_or_default());
                Frame::empty(FrameType::Done)
            }
            FrameType::Heartbeat => Frame::empty(FrameType::Heartbeat),
            other => wire::abort_frame(&format!("data node does not handle {other:?}")),
        };
        write_frame(&mut writer, &reply)?;
        node.record_response(t.elapsed().as_secs_f64() * 1000.0);
    }
}

/// Stages samples onto a data node over one connection.
pub fn put_samples<'a>(addr: &str, samples: impl IntoIterator<Item = (u64, &'a [u8])>) -> Result<usize, RuntimeError> {
    let stream = TcpStream::connect(addr).map_err(|e| RuntimeError::Connect(format!("{addr}: {e}")))?;
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut n = 0;
    for (id, bytes) in samples {
        write_frame(&mut writer, &wire::put_frame(id, Some(bytes)))?;
        let ack = read_frame(&mut reader)?;
        if ack.kind != FrameType::Done {
            return Err(RuntimeError::Protocol(format!("data node {addr} rejected PUT {id}")));
        }
        n += 1;
    }
    Ok(n)
}

/// [`DataTransport`] over TCP. Keeps one idle connection per data node;
/// concurrent callers open extra connections.
pub struct TcpTransport {
    addrs: HashMap<NodeId, String>,
    idle: Mutex<HashMap<NodeId, Vec<TcpStream>>>,
}

impl TcpTransport {
    pub fn new(data_nodes: &[(NodeId, String)]) -> Self {
        Self {
            addrs: data_nodes.iter().cloned().collect(),
            idle: Mutex::new(HashMap::new()),
        }
    }

    fn checkout(&self, node: NodeId, deadline: Duration) -> Result<TcpStream, TransportError> {
        if let Some(s) = self.idle.lock().unwrap().get_mut(&node).and_then(Vec::pop) {
            return Ok(s);
        }
        let addr = self.addrs.get(&node).ok_or(TransportError::Unreachable)?;
        let sock: SocketAddr = addr
            .to_socket_addrs()
            .ok()
            .and_then(|mut a| a.next())
            .ok_or(TransportError::Unreachable)?;
        let s = TcpStream::connect_timeout(&sock, deadline).map_err(|_| TransportError::Unreachable)?;
        let _ = s.set_nodelay(true);
        Ok(s)
    }

    fn roundtrip(stream: &mut TcpStream, sample_id: u64, deadline: Duration) -> Result<Option<Vec<u8>>, FrameError> {
        stream.set_read_timeout(Some(deadline))?;
        write_frame(stream, &wire::get_frame(sample_id))?;
        let reply = read_frame(stream)?;
        let (id, payload) = wire::parse_put(&reply)?;
        if id != sample_id {
            return Err(FrameError::Malformed(format!("asked for {sample_id}, got {id}")));
        }
        Ok(payload)
    }
}

impl DataTransport for TcpTransport {
    fn get(&self, node: NodeId, sample_id: u64, deadline_ms: f64) -> Result<(Arc<Vec<u8>>, f64), TransportError> {
        let deadline = Duration::from_secs_f64((deadline_ms / 1000.0).max(0.001));
        let t = Instant::now();
        let mut stream = self.checkout(node, deadline)?;
        match Self::roundtrip(&mut stream, sample_id, deadline) {
            Ok(Some(payload)) => {
                self.idle.lock().unwrap().entry(node).or_default().push(stream);
                Ok((Arc::new(payload), t.elapsed().as_secs_f64() * 1000.0))
            }
            Ok(None) => {
                self.idle.lock().unwrap().entry(node).or_default().push(stream);
                Err(TransportError::NotFound)
            }
            Err(FrameError::Io(e)) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                Err(TransportError::Timeout {
                    elapsed_ms: t.elapsed().as_secs_f64() * 1000.0,
                })
            }
            Err(_) => Err(TransportError::Unreachable),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn put_then_get_over_tcp() {
        let server = DataNodeServer::bind(3, "127.0.0.1:0").unwrap();
        let addr = server.addr().to_string();
        put_samples(&addr, [(5u64, &b"hello"[..])]).unwrap();
        assert!(server.node().contains(5));
        let t = TcpTransport::new(&[(3, addr)]);
        let (p, ms) = t.get(3, 5, 1000.0).unwrap();
        assert_eq!(p.as_slice(), b"hello");
        assert!(ms >= 0.0);
        assert_eq!(t.get(3, 6, 1000.0).unwrap_err(), TransportError::NotFound);
    }

    #[test]
    fn dead_node_is_unreachable() {
        let mut server = DataNodeServer::bind(1, "127.0.0.1:0").unwrap();
        let addr = server.addr().to_string();
        put_samples(&addr, [(1u64, &b"x"[..])]).unwrap();
        let t = TcpTransport::new(&[(1, addr)]);
        t.get(1, 1, 1000.0).unwrap();
        server.shutdown();
        assert_eq!(t.get(1, 1, 200.0).unwrap_err(), TransportError::Unreachable);
        assert_eq!(t.get(1, 1, 200.0).unwrap_err(), TransportError::Unreachable);
    }
}
