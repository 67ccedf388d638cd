//! TCP front end. Each connection gets a reader, a responder that answers
//! commands in the order they arrived, an optional event forwarder, and one
//! writer that serialises everything onto the socket.

use std::collections::HashSet;
use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use ronda_core::wire::{read_frame, write_frame};
use ronda_core::{CoreHandle, Reply};
use serde_json::Value;

use crate::protocol::{parse_request, Op, ServerMessage, PROTOCOL_VERSION};

/// Outgoing messages queued per connection before the forwarder blocks.
pub const WRITE_QUEUE: usize = 1024;
/// Live events buffered per subscriber before it is dropped.
pub const SUBSCRIBER_BUFFER: usize = 4096;

pub struct Server {
    listener: TcpListener,
    handle: CoreHandle,
    inflight: Inflight,
}

/// Commands submitted whose replies have not yet been written out.
#[derive(Clone, Debug, Default)]
pub struct Inflight(Arc<AtomicUsize>);

impl Inflight {
    pub fn count(&self) -> usize {
        self.0.load(Ordering::SeqCst)
    }

    /// Waits until every reply has reached its socket, or `limit` passes.
    pub fn drain(&self, limit: Duration) -> bool {
        let deadline = Instant::now() + limit;
        while self.count() > 0 {
            if Instant::now() >= deadline {
                return false;
            }
            thread::sleep(Duration::from_millis(5));
        }
        true
    }

    fn add(&self) {
        self.0.fetch_add(1, Ordering::SeqCst);
    }

    fn done(&self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

struct Out {
    msg: ServerMessage,
    /// Counted in the server's in-flight total.
    reply: bool,
}

impl From<ServerMessage> for Out {
    fn from(msg: ServerMessage) -> Self {
        Self { msg, reply: false }
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs, handle: CoreHandle) -> io::Result<Self> {
        Ok(Self {
            listener: TcpListener::bind(addr)?,
            handle,
            inflight: Inflight::default(),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn handle(&self) -> &CoreHandle {
        &self.handle
    }

    pub fn inflight(&self) -> Inflight {
        self.inflight.clone()
    }

    /// Accepts connections on a background thread.
    pub fn spawn(self) -> thread::JoinHandle<()> {
        thread::spawn(move || {
            for stream in self.listener.incoming() {
                match stream {
                    Ok(s) => {
                        let handle = self.handle.clone();
                        let inflight = self.inflight.clone();
                        thread::spawn(move || {
                            let _ = connection(s, handle, inflight);
                        });
                    }
                    Err(_) => continue,
                }
            }
        })
    }
}

struct Subscribed {
    stop: Arc<AtomicBool>,
}

fn connection(stream: TcpStream, handle: CoreHandle, inflight: Inflight) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let (out_tx, out_rx) = mpsc::sync_channel::<Out>(WRITE_QUEUE);
    let writer = {
        let stream = stream.try_clone()?;
        let inflight = inflight.clone();
        thread::spawn(move || write_loop(stream, out_rx, inflight))
    };
    let (pending_tx, pending_rx) = mpsc::channel::<(u64, Receiver<Reply>)>();
    let responder = {
        let out = out_tx.clone();
        thread::spawn(move || {
            for (id, rx) in pending_rx {
                let reply = rx.recv().unwrap_or_else(|_| {
                    Err(ronda_core::CommandError::new(ronda_core::ErrorCode::Unavailable, "core has stopped"))
                });
                let msg = ServerMessage::reply(Some(id), reply);
                if out.send(Out { msg, reply: true }).is_err() {
                    break;
                }
            }
        })
    };

    let mut reader = BufReader::new(stream.try_clone()?);
    let mut seen = HashSet::new();
    let mut subscription: Option<Subscribed> = None;
    loop {
        let raw: Value = match read_frame(&mut reader) {
            Ok(Some(v)) => v,
            Ok(None) => break,
            Err(e) if e.kind() == io::ErrorKind::InvalidData => {
                // body was read but is not JSON; the stream is still in sync
                if out_tx.send(ServerMessage::invalid(None, e.to_string()).into()).is_err() {
                    break;
                }
                continue;
            }
            Err(_) => break,
        };
        let request = match parse_request(raw) {
            Ok(r) => r,
            Err(msg) => {
                if out_tx.send(msg.into()).is_err() {
                    break;
                }
                continue;
            }
        };
        if !seen.insert(request.id) {
            let msg = ServerMessage::invalid(Some(request.id), format!("request id {} already used", request.id));
            if out_tx.send(msg.into()).is_err() {
                break;
            }
            continue;
        }
        match request.op {
            Op::Command { command } => {
                inflight.add();
                let rx = handle.submit(command);
                if pending_tx.send((request.id, rx)).is_err() {
                    inflight.done();
                    break;
                }
            }
            Op::Subscribe { after } => {
                if let Some(old) = subscription.take() {
                    old.stop.store(true, Ordering::SeqCst);
                }
                let sub = handle.events().subscribe_with_buffer(after, SUBSCRIBER_BUFFER);
                let last_seq = sub.backlog.last().map_or_else(|| handle.events().last_seq().min(after), |e| e.seq);
                let ack = ServerMessage::Subscribed {
                    v: PROTOCOL_VERSION,
                    id: request.id,
                    last_seq,
                    gap: sub.gap,
                };
                if out_tx.send(ack.into()).is_err() {
                    break;
                }
                let stop = Arc::new(AtomicBool::new(false));
                let out = out_tx.clone();
                let flag = stop.clone();
                let socket = stream.try_clone()?;
                thread::spawn(move || forward(sub, out, flag, socket));
                subscription = Some(Subscribed { stop });
            }
            Op::Unsubscribe => {
                if let Some(old) = subscription.take() {
                    old.stop.store(true, Ordering::SeqCst);
                }
                if out_tx.send(ServerMessage::reply(Some(request.id), Ok(Value::Bool(true))).into()).is_err() {
                    break;
                }
            }
        }
    }
    if let Some(old) = subscription.take() {
        old.stop.store(true, Ordering::SeqCst);
    }
    drop(pending_tx);
    let _ = responder.join();
    drop(out_tx);
    let _ = writer.join();
    let _ = stream.shutdown(Shutdown::Both);
    Ok(())
}

fn write_loop(stream: TcpStream, rx: Receiver<Out>, inflight: Inflight) {
    let mut w = BufWriter::new(stream);
    let mut broken = false;
    for out in rx {
        // keep draining after a write error so the count still settles
        if !broken && write_frame(&mut w, &out.msg).is_err() {
            broken = true;
        }
        if out.reply {
            inflight.done();
        }
    }
}

fn forward(sub: ronda_core::Subscription, out: SyncSender<Out>, stop: Arc<AtomicBool>, socket: TcpStream) {
    let mut last = 0;
    for e in sub.backlog.iter().cloned() {
        last = e.seq;
        if stop.load(Ordering::SeqCst) || out.send(ServerMessage::event(e).into()).is_err() {
            return;
        }
    }
    loop {
        if stop.load(Ordering::SeqCst) {
            return;
        }
        match sub.live.recv_timeout(Duration::from_millis(100)) {
            Ok(e) => {
                // the backlog snapshot and the live channel can overlap
                if e.seq <= last {
                    continue;
                }
                last = e.seq;
                if out.send(ServerMessage::event(e).into()).is_err() {
                    return;
                }
            }
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => {
                if sub.has_overflowed() && !stop.load(Ordering::SeqCst) {
                    let _ = out.send(
                        ServerMessage::Overflow {
                            v: PROTOCOL_VERSION,
                            message: format!("subscriber fell behind after event {last}; reconnect and resume from it"),
                        }
                        .into(),
                    );
                    // let the writer flush the notice, then hang up
                    thread::sleep(Duration::from_millis(200));
                    let _ = socket.shutdown(Shutdown::Both);
                }
                return;
            }
        }
    }
}
