//! Blocking client for the wire protocol.

use std::collections::VecDeque;
use std::io::{self, BufReader, BufWriter};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use ronda_core::wire::{read_frame, write_frame};
use ronda_core::{Command, Reply, StateEvent};
use serde::Serialize;

use crate::protocol::{Request, ServerMessage};

pub struct Client {
    writer: BufWriter<TcpStream>,
    stream: TcpStream,
    incoming: Receiver<io::Result<ServerMessage>>,
    /// Messages read while waiting for something else.
    stash: VecDeque<ServerMessage>,
    next_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SubscribeAck {
    pub last_seq: u64,
    pub gap: bool,
}

fn closed() -> io::Error {
    io::Error::new(io::ErrorKind::ConnectionAborted, "connection closed")
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let (tx, incoming) = mpsc::channel();
        let mut reader = BufReader::new(stream.try_clone()?);
        thread::spawn(move || loop {
            match read_frame::<_, ServerMessage>(&mut reader) {
                Ok(Some(m)) => {
                    if tx.send(Ok(m)).is_err() {
                        return;
                    }
                }
                Ok(None) => return,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    return;
                }
            }
        });
        Ok(Self {
            writer: BufWriter::new(stream.try_clone()?),
            stream,
            incoming,
            stash: VecDeque::new(),
            next_id: 1,
        })
    }

    /// Sends any serialisable frame as is. For exercising the server with
    /// malformed input.
    pub fn send_raw<T: Serialize>(&mut self, frame: &T) -> io::Result<()> {
        write_frame(&mut self.writer, frame)
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    /// Sends a command and returns its request id without waiting.
    pub fn send(&mut self, command: Command) -> io::Result<u64> {
        let id = self.fresh_id();
        self.send_raw(&Request::command(id, command))?;
        Ok(id)
    }

    /// Blocks for the response to request `id`.
    pub fn wait_reply(&mut self, id: u64, timeout: Duration) -> io::Result<Reply> {
        if let Some(pos) = self.stash.iter().position(|m| is_response_to(m, id)) {
            let m = self.stash.remove(pos).unwrap();
            return Ok(m.into_reply().unwrap().1);
        }
        let deadline = Instant::now() + timeout;
        loop {
            let m = self.recv_until(deadline)?;
            if is_response_to(&m, id) {
                return Ok(m.into_reply().unwrap().1);
            }
            self.stash.push_back(m);
        }
    }

    pub fn request(&mut self, command: Command) -> io::Result<Reply> {
        let id = self.send(command)?;
        self.wait_reply(id, Duration::from_secs(60))
    }

    pub fn subscribe(&mut self, after: u64) -> io::Result<SubscribeAck> {
        let id = self.fresh_id();
        self.send_raw(&Request::subscribe(id, after))?;
        let deadline = Instant::now() + Duration::from_secs(30);
        loop {
            match self.recv_until(deadline)? {
                ServerMessage::Subscribed { id: got, last_seq, gap, .. } if got == id => {
                    return Ok(SubscribeAck { last_seq, gap })
                }
                other => self.stash.push_back(other),
            }
        }
    }

    /// Next message of any kind, stashed ones first.
    pub fn next_message(&mut self, timeout: Duration) -> io::Result<ServerMessage> {
        if let Some(m) = self.stash.pop_front() {
            return Ok(m);
        }
        self.recv_until(Instant::now() + timeout)
    }

    /// Next state event, skipping anything that is not one. An overflow
    /// notice comes back as an error.
    pub fn next_event(&mut self, timeout: Duration) -> io::Result<StateEvent> {
        let deadline = Instant::now() + timeout;
        if let Some(pos) = self.stash.iter().position(|m| !matches!(m, ServerMessage::Response { .. })) {
            return event_or_error(self.stash.remove(pos).unwrap());
        }
        loop {
            let m = self.recv_until(deadline)?;
            if matches!(m, ServerMessage::Response { .. }) {
                self.stash.push_back(m);
                continue;
            }
            return event_or_error(m);
        }
    }

    fn recv_until(&mut self, deadline: Instant) -> io::Result<ServerMessage> {
        let left = deadline.saturating_duration_since(Instant::now());
        match self.incoming.recv_timeout(left) {
            Ok(r) => r,
            Err(RecvTimeoutError::Timeout) => Err(io::Error::new(io::ErrorKind::TimedOut, "no message in time")),
            Err(RecvTimeoutError::Disconnected) => Err(closed()),
        }
    }

    pub fn close(self) {
        let _ = self.stream.shutdown(Shutdown::Both);
    }
}

fn is_response_to(m: &ServerMessage, id: u64) -> bool {
    matches!(m, ServerMessage::Response { id: Some(got), .. } if *got == id)
}

fn event_or_error(m: ServerMessage) -> io::Result<StateEvent> {
    match m {
        ServerMessage::Event { event, .. } => Ok(event),
        ServerMessage::Overflow { message, .. } => Err(io::Error::new(io::ErrorKind::ConnectionReset, message)),
        other => Err(io::Error::new(io::ErrorKind::InvalidData, format!("unexpected message {other:?}"))),
    }
}
