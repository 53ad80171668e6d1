//! WebSocket transport. One engine thread owns the driver and ticks it at
//! a fixed period; one thread per client moves frames between its socket
//! and the engine. All state changes funnel through a single queue that
//! the engine thread drains between ticks.

use std::collections::{BTreeMap, VecDeque};
use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use handover_core::sim::Command;
use tungstenite::{Message, WebSocket};

use crate::protocol::{parse_client, ErrorCode, ServerMessage};
use crate::session::{ClientId, Decimator, Driver};

/// Snapshots a client may fall behind before its oldest unsent ones are
/// dropped. Other messages are never dropped.
const CLIENT_BACKLOG: usize = 256;
const POLL: Duration = Duration::from_millis(5);

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub bind: SocketAddr,
    /// Wall time per tick; the simulation's dt for real time.
    pub tick_period: Duration,
    pub decimation: u32,
    /// Hold the first tick until a client connects.
    pub wait_for_client: bool,
    /// Stop once the driver reports it is done.
    pub exit_when_done: bool,
    pub max_ticks: Option<u64>,
}

enum Inbound {
    Join { id: ClientId, outbox: Arc<Mutex<Outbox>> },
    Leave { id: ClientId },
    Command { id: ClientId, cmd: Command },
    Malformed { id: ClientId, message: String },
}

/// Messages waiting for one client's socket. The engine pushes, the client
/// thread pops; `closed` is set by whichever side goes away first.
#[derive(Default)]
struct Outbox {
    queue: VecDeque<(bool, Arc<str>)>,
    snapshots: usize,
    closed: bool,
}

impl Outbox {
    fn push(&mut self, text: Arc<str>, snapshot: bool) {
        if snapshot && self.snapshots >= CLIENT_BACKLOG {
            if let Some(i) = self.queue.iter().position(|(s, _)| *s) {
                self.queue.remove(i);
                self.snapshots -= 1;
            }
        }
        self.snapshots += usize::from(snapshot);
        self.queue.push_back((snapshot, text));
    }

    fn pop(&mut self) -> Option<Arc<str>> {
        let (snapshot, text) = self.queue.pop_front()?;
        self.snapshots -= usize::from(snapshot);
        Some(text)
    }
}

fn lock(outbox: &Mutex<Outbox>) -> std::sync::MutexGuard<'_, Outbox> {
    outbox.lock().unwrap_or_else(|e| e.into_inner())
}

pub struct ServerHandle<D> {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    engine: JoinHandle<D>,
    acceptor: JoinHandle<()>,
}

impl<D> ServerHandle<D> {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops ticking and returns the driver.
    pub fn stop(self) -> D {
        self.stop.store(true, Ordering::SeqCst);
        self.join()
    }

    /// Waits until the server stops by itself.
    pub fn join(self) -> D {
        let driver = self.engine.join().expect("engine thread panicked");
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.acceptor.join();
        driver
    }
}

/// Binds and starts serving. Returns once the socket is listening.
pub fn spawn<D: Driver + 'static>(driver: D, opts: ServerOptions) -> io::Result<ServerHandle<D>> {
    let listener = TcpListener::bind(opts.bind)?;
    listener.set_nonblocking(true)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let (tx, rx) = mpsc::channel();
    let acceptor = {
        let stop = stop.clone();
        thread::Builder::new().name("accept".into()).spawn(move || accept_loop(listener, tx, stop))?
    };
    let engine = {
        let stop = stop.clone();
        thread::Builder::new().name("engine".into()).spawn(move || engine_loop(driver, rx, opts, stop))?
    };
    log::info!("serving on ws://{addr}");
    Ok(ServerHandle { addr, stop, engine, acceptor })
}

fn accept_loop(listener: TcpListener, tx: Sender<Inbound>, stop: Arc<AtomicBool>) {
    let mut next_id: ClientId = 1;
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let id = next_id;
                next_id += 1;
                let tx = tx.clone();
                log::info!("client {id} connected from {peer}");
                let spawned = thread::Builder::new().name(format!("client-{id}")).spawn(move || {
                    if let Err(e) = client_loop(stream, id, &tx) {
                        log::info!("client {id}: {e}");
                    }
                    let _ = tx.send(Inbound::Leave { id });
                });
                if let Err(e) = spawned {
                    log::warn!("cannot start a client thread: {e}");
                }
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(POLL);
            }
        }
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut))
}

fn client_loop(stream: TcpStream, id: ClientId, tx: &Sender<Inbound>) -> Result<(), tungstenite::Error> {
    stream.set_nonblocking(false)?;
    stream.set_nodelay(true)?;
    let mut ws: WebSocket<TcpStream> = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    let outbox = Arc::new(Mutex::new(Outbox::default()));
    if tx.send(Inbound::Join { id, outbox: outbox.clone() }).is_err() {
        return Ok(());
    }
    let result = pump(&mut ws, id, tx, &outbox);
    lock(&outbox).closed = true;
    result
}

fn pump(ws: &mut WebSocket<TcpStream>, id: ClientId, tx: &Sender<Inbound>, outbox: &Mutex<Outbox>) -> Result<(), tungstenite::Error> {
    loop {
        loop {
            let (next, closed) = {
                let mut o = lock(outbox);
                (o.pop(), o.closed)
            };
            match next {
                Some(text) => ws.send(Message::text(&*text))?,
                None if closed => {
                    // the server stopped
                    let _ = ws.close(None);
                    let _ = ws.flush();
                    return Ok(());
                }
                None => break,
            }
        }
        let event = match ws.read() {
            Ok(Message::Text(text)) => match parse_client(text.as_str()) {
                Ok(cmd) => Inbound::Command { id, cmd },
                Err(e) => Inbound::Malformed { id, message: e.to_string() },
            },
            Ok(Message::Binary(_)) => Inbound::Malformed { id, message: "binary frames are not supported".into() },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => continue,
            Err(e) if is_timeout(&e) => continue,
            Err(tungstenite::Error::ConnectionClosed) => return Ok(()),
            Err(e) => return Err(e),
        };
        if tx.send(event).is_err() {
            return Ok(());
        }
    }
}

struct Clients(BTreeMap<ClientId, Arc<Mutex<Outbox>>>);

impl Clients {
    fn send(&mut self, id: ClientId, text: Arc<str>, snapshot: bool) {
        let Some(outbox) = self.0.get(&id) else { return };
        let mut o = lock(outbox);
        if o.closed {
            drop(o);
            self.0.remove(&id);
        } else {
            o.push(text, snapshot);
        }
    }

    fn broadcast(&mut self, text: Arc<str>, snapshot: bool) {
        let ids: Vec<ClientId> = self.0.keys().copied().collect();
        for id in ids {
            self.send(id, text.clone(), snapshot);
        }
    }

    fn close_all(&mut self) {
        for outbox in self.0.values() {
            lock(outbox).closed = true;
        }
    }
}

fn handle<D: Driver>(ev: Inbound, driver: &mut D, clients: &mut Clients) {
    match ev {
        Inbound::Join { id, outbox } => {
            clients.0.insert(id, outbox);
            clients.send(id, driver.hello().to_json().into(), false);
        }
        Inbound::Leave { id } => {
            if clients.0.remove(&id).is_some() {
                log::info!("client {id} left; the trial continues");
            }
        }
        Inbound::Command { id, cmd } => driver.submit(id, cmd),
        Inbound::Malformed { id, message } => {
            let reply = ServerMessage::error(driver.tick_number(), ErrorCode::ProtoError, message);
            clients.send(id, reply.to_json().into(), false);
        }
    }
}

fn engine_loop<D: Driver>(mut driver: D, rx: Receiver<Inbound>, opts: ServerOptions, stop: Arc<AtomicBool>) -> D {
    let mut clients = Clients(BTreeMap::new());
    let mut keep = Decimator::new(opts.decimation);
    let mut ticks = 0u64;
    let mut deadline = Instant::now();
    while !stop.load(Ordering::SeqCst) {
        if opts.wait_for_client && ticks == 0 && clients.0.is_empty() {
            match rx.recv_timeout(POLL) {
                Ok(ev) => handle(ev, &mut driver, &mut clients),
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            deadline = Instant::now();
            continue;
        }
        let out = driver.tick();
        for (id, m) in out.replies {
            clients.send(id, m.to_json().into(), false);
        }
        for m in out.notices {
            clients.broadcast(m.to_json().into(), false);
        }
        if let Some(s) = out.snapshot.filter(|s| keep.keep(s)) {
            clients.broadcast(ServerMessage::snapshot(s).to_json().into(), true);
        }
        ticks += 1;
        if (out.done && opts.exit_when_done) || opts.max_ticks.is_some_and(|m| ticks >= m) {
            break;
        }
        // take inbound events until the next tick is due
        deadline += opts.tick_period;
        let now = Instant::now();
        if deadline < now {
            deadline = now;
        }
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match rx.recv_timeout(left) {
                Ok(ev) => handle(ev, &mut driver, &mut clients),
                Err(_) => break,
            }
            if left.is_zero() {
                break;
            }
        }
    }
    clients.close_all();
    stop.store(true, Ordering::SeqCst);
    driver
}
