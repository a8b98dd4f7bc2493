//! Wall-clock server around [`BridgeEngine`].
//!
//! One thread owns the engine and ticks it on a fixed schedule. Client
//! threads decode lines into an unbounded command queue that the tick
//! thread drains once per tick, in arrival order. Each client has a bounded
//! outbound queue; when it is full the frame is dropped for that client
//! only, so a slow reader never delays a tick.
//!
//! A connection whose first bytes are `GET ` is upgraded to WebSocket (one
//! JSON message per text frame); anything else is newline-delimited JSON.

use std::io::{BufRead, BufReader, ErrorKind, Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, RecvTimeoutError, Sender, TrySendError};

use orthosis_core::participant::{scripted_angle, ScriptedTrajectory};
use orthosis_core::session::{SessionConfig, SessionDir};

use crate::codec::{decode_command, encode_message, Command, ErrorFrame, ServerMessage, StateFrame};
use crate::engine::{BridgeEngine, DEFAULT_FRAME_DIVISOR};

pub const DEFAULT_PORT: u16 = 7420;
/// Longest accepted message, bytes.
pub const MAX_LINE: usize = 64 * 1024;
const POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct ServerOptions {
    pub bind: IpAddr,
    pub port: u16,
    pub frame_divisor: u64,
    /// Outbound frames buffered per client before frames are dropped.
    pub client_queue: usize,
    /// Stop after this many ticks; run until shutdown when `None`.
    pub max_ticks: Option<u64>,
    /// Drive the wrist from a script instead of client angle commands.
    pub script: Option<ScriptedTrajectory>,
    /// Where finished live trials are written as session CSVs.
    pub record_dir: Option<PathBuf>,
    /// Keep every emitted state frame in the final report.
    pub record_frames: bool,
}

impl Default for ServerOptions {
    fn default() -> Self {
        Self {
            bind: IpAddr::V4(Ipv4Addr::LOCALHOST),
            port: DEFAULT_PORT,
            frame_divisor: DEFAULT_FRAME_DIVISOR,
            client_queue: 64,
            max_ticks: None,
            script: None,
            record_dir: None,
            record_frames: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BridgeError {
    #[error("cannot listen on {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] orthosis_core::Error),
    #[error("bridge thread panicked")]
    Panicked,
}

impl BridgeError {
    pub fn is_config(&self) -> bool {
        matches!(self, BridgeError::Core(e) if e.is_config())
    }
}

/// What the tick thread observed over the session.
#[derive(Debug, Clone, Default)]
pub struct BridgeReport {
    pub ticks: u64,
    /// Every tick index was exactly one more than the previous.
    pub ticks_contiguous: bool,
    pub commands_applied: u64,
    pub commands_rejected: u64,
    /// Longest delay from receipt of a command to the tick that applied it.
    pub max_command_latency: Duration,
    pub tick_period: Duration,
    pub frames_dropped: u64,
    pub frames: Vec<StateFrame>,
}

type ClientId = u64;

enum Inbound {
    Connect { id: ClientId, tx: Sender<String> },
    Command { id: ClientId, cmd: Command, received: Instant },
    Disconnect { id: ClientId },
}

pub struct BridgeHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    ticker: Option<JoinHandle<Result<BridgeReport, BridgeError>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl BridgeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the tick loop ends (tick limit or shutdown).
    pub fn wait(mut self) -> Result<BridgeReport, BridgeError> {
        let report = self.ticker.take().map(|h| h.join().map_err(|_| BridgeError::Panicked));
        self.shutdown.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        match report {
            Some(r) => r?,
            None => Err(BridgeError::Panicked),
        }
    }

    pub fn shutdown(self) -> Result<BridgeReport, BridgeError> {
        self.shutdown.store(true, Ordering::SeqCst);
        self.wait()
    }
}

impl Drop for BridgeHandle {
    fn drop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
    }
}

/// Binds the port and starts the tick and accept threads.
pub fn serve(config: &SessionConfig, opts: ServerOptions) -> Result<BridgeHandle, BridgeError> {
    config.validate()?;
    let engine = BridgeEngine::new(
        config.rig()?,
        config.control_mode()?,
        (config.pwa_map.min, config.pwa_map.max),
        opts.frame_divisor,
    )?;
    if let Some(s) = &opts.script {
        s.validate()?;
    }
    let addr = SocketAddr::new(opts.bind, opts.port);
    let listener = TcpListener::bind(addr).map_err(|source| BridgeError::Bind { addr, source })?;
    let addr = listener.local_addr().map_err(|source| BridgeError::Bind { addr, source })?;
    listener
        .set_nonblocking(true)
        .map_err(|source| BridgeError::Bind { addr, source })?;

    let shutdown = Arc::new(AtomicBool::new(false));
    let (in_tx, in_rx) = unbounded();
    let acceptor = {
        let shutdown = shutdown.clone();
        let queue = opts.client_queue.max(1);
        thread::Builder::new()
            .name("bridge-accept".into())
            .spawn(move || accept_loop(listener, in_tx, queue, shutdown))
            .expect("spawn accept thread")
    };
    let ticker = {
        let shutdown = shutdown.clone();
        thread::Builder::new()
            .name("bridge-tick".into())
            .spawn(move || tick_loop(engine, opts, in_rx, shutdown))
            .expect("spawn tick thread")
    };
    Ok(BridgeHandle {
        addr,
        shutdown,
        ticker: Some(ticker),
        acceptor: Some(acceptor),
    })
}

fn tick_loop(
    mut engine: BridgeEngine,
    opts: ServerOptions,
    inbound: Receiver<Inbound>,
    shutdown: Arc<AtomicBool>,
) -> Result<BridgeReport, BridgeError> {
    let period_s = engine.tick_period();
    let period = Duration::from_secs_f64(period_s);
    let record_dir = opts.record_dir.as_ref().map(SessionDir::create).transpose()?;
    let mut clients: Vec<(ClientId, Sender<String>)> = Vec::new();
    let mut report = BridgeReport {
        ticks_contiguous: true,
        tick_period: period,
        ..BridgeReport::default()
    };
    let mut last_tick: Option<u64> = None;
    let start = Instant::now();
    let mut k: u64 = 0;
    loop {
        if shutdown.load(Ordering::SeqCst) || opts.max_ticks.is_some_and(|m| k >= m) {
            break;
        }
        let deadline = start + Duration::from_secs_f64(period_s * k as f64);
        wait_until(deadline);
        let tick_time = Instant::now();
        for msg in inbound.try_iter() {
            match msg {
                Inbound::Connect { id, tx } => clients.push((id, tx)),
                Inbound::Disconnect { id } => clients.retain(|(c, _)| *c != id),
                Inbound::Command { id, cmd, received } => {
                    let result = if opts.script.is_some() && matches!(cmd, Command::SetWristAngle { .. }) {
                        Err(ServerMessage::Error(ErrorFrame {
                            message: "wrist angle is scripted in this session".into(),
                            field: Some("angle".into()),
                        }))
                    } else {
                        engine.apply(&cmd).map_err(|e| e.to_frame())
                    };
                    report.max_command_latency = report
                        .max_command_latency
                        .max(tick_time.saturating_duration_since(received));
                    match result {
                        Ok(()) => report.commands_applied += 1,
                        Err(frame) => {
                            report.commands_rejected += 1;
                            if let Some((_, tx)) = clients.iter().find(|(c, _)| *c == id) {
                                let _ = tx.try_send(encode_message(&frame));
                            }
                        }
                    }
                }
            }
        }
        if let Some(script) = &opts.script {
            let t = engine.next_tick() as f64 * period_s;
            let angle = scripted_angle(script, t)?;
            engine
                .apply(&Command::SetWristAngle { angle })
                .map_err(|e| orthosis_core::Error::InvalidInput(e.message))?;
        }
        let out = engine.tick();
        if last_tick.is_some_and(|p| out.tick != p + 1) || (last_tick.is_none() && out.tick != 0) {
            report.ticks_contiguous = false;
        }
        last_tick = Some(out.tick);
        report.ticks += 1;

        let mut outgoing: Vec<String> = out.events.iter().map(encode_message).collect();
        if let Some(frame) = out.frame {
            outgoing.push(encode_message(&ServerMessage::State(frame.clone())));
            if opts.record_frames {
                report.frames.push(frame);
            }
        }
        for text in &outgoing {
            clients.retain(|(_, tx)| match tx.try_send(text.clone()) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    report.frames_dropped += 1;
                    true
                }
                Err(TrySendError::Disconnected(_)) => false,
            });
        }
        if let Some(dir) = &record_dir {
            for rec in engine.take_finished() {
                dir.write_record(&rec)?;
            }
        }
        k += 1;
    }
    shutdown.store(true, Ordering::SeqCst);
    Ok(report)
}

/// Coarse sleep, then yield until the deadline; plain sleeps overshoot by
/// up to a scheduler quantum.
fn wait_until(deadline: Instant) {
    const SPIN: Duration = Duration::from_millis(1);
    loop {
        let now = Instant::now();
        if now >= deadline {
            return;
        }
        let left = deadline - now;
        if left > SPIN {
            thread::sleep(left - SPIN);
        } else {
            thread::yield_now();
        }
    }
}

fn accept_loop(listener: TcpListener, inbound: Sender<Inbound>, queue: usize, shutdown: Arc<AtomicBool>) {
    let next_id = AtomicU64::new(0);
    while !shutdown.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                let id = next_id.fetch_add(1, Ordering::Relaxed);
                let inbound = inbound.clone();
                let shutdown = shutdown.clone();
                let _ = thread::Builder::new()
                    .name(format!("bridge-client-{id}"))
                    .spawn(move || handle_client(id, stream, inbound, queue, shutdown));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(5)),
            Err(_) => thread::sleep(Duration::from_millis(5)),
        }
    }
}

fn handle_client(id: ClientId, stream: TcpStream, inbound: Sender<Inbound>, queue: usize, shutdown: Arc<AtomicBool>) {
    if stream.set_nonblocking(false).is_err() || stream.set_nodelay(true).is_err() {
        return;
    }
    let (tx, rx) = bounded::<String>(queue);
    if inbound.send(Inbound::Connect { id, tx: tx.clone() }).is_err() {
        return;
    }
    if is_websocket(&stream) {
        serve_websocket(id, stream, &inbound, &tx, rx, &shutdown);
    } else {
        serve_lines(id, stream, &inbound, &tx, rx, &shutdown);
    }
    let _ = inbound.send(Inbound::Disconnect { id });
}

/// Waits briefly for the client's first bytes; silent clients are treated as raw TCP.
fn is_websocket(stream: &TcpStream) -> bool {
    let _ = stream.set_read_timeout(Some(Duration::from_millis(200)));
    let mut head = [0u8; 4];
    let deadline = Instant::now() + Duration::from_millis(200);
    while Instant::now() < deadline {
        match stream.peek(&mut head) {
            Ok(n) if n >= 4 => return &head == b"GET ",
            Ok(0) => return false,
            Ok(_) => thread::sleep(Duration::from_millis(2)),
            Err(_) => return false,
        }
    }
    false
}

fn on_text(id: ClientId, text: &str, inbound: &Sender<Inbound>, own: &Sender<String>) -> bool {
    let text = text.trim();
    if text.is_empty() {
        return true;
    }
    match decode_command(text) {
        Ok(cmd) => inbound
            .send(Inbound::Command {
                id,
                cmd,
                received: Instant::now(),
            })
            .is_ok(),
        Err(e) => {
            let _ = own.try_send(encode_message(&e.to_frame()));
            true
        }
    }
}

fn serve_lines(
    id: ClientId,
    stream: TcpStream,
    inbound: &Sender<Inbound>,
    own: &Sender<String>,
    rx: Receiver<String>,
    shutdown: &Arc<AtomicBool>,
) {
    let Ok(mut write_half) = stream.try_clone() else {
        return;
    };
    let writer_stop = Arc::new(AtomicBool::new(false));
    let writer = {
        let stop = writer_stop.clone();
        let shutdown = shutdown.clone();
        thread::spawn(move || {
            while !stop.load(Ordering::SeqCst) && !shutdown.load(Ordering::SeqCst) {
                match rx.recv_timeout(POLL) {
                    Ok(mut line) => {
                        line.push('\n');
                        if write_half.write_all(line.as_bytes()).is_err() {
                            break;
                        }
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
            }
            let _ = write_half.shutdown(std::net::Shutdown::Both);
        })
    };
    let _ = stream.set_read_timeout(Some(POLL));
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    let mut skipping = false;
    while !shutdown.load(Ordering::SeqCst) && !writer.is_finished() {
        let limit = (MAX_LINE + 1 - buf.len().min(MAX_LINE)) as u64;
        match reader.by_ref().take(limit).read_until(b'\n', &mut buf) {
            Ok(0) if buf.is_empty() => break,
            Ok(_) => {
                let complete = buf.last() == Some(&b'\n');
                if !complete && buf.len() <= MAX_LINE {
                    // EOF mid-line or a take boundary; keep accumulating.
                    if reader.fill_buf().map(|b| b.is_empty()).unwrap_or(false) {
                        break;
                    }
                    continue;
                }
                if !complete {
                    if !skipping {
                        let _ = own.try_send(encode_message(&ServerMessage::Error(ErrorFrame {
                            message: format!("message longer than {MAX_LINE} bytes"),
                            field: None,
                        })));
                    }
                    skipping = true;
                    buf.clear();
                    continue;
                }
                if !skipping {
                    let text = String::from_utf8_lossy(&buf);
                    if !on_text(id, &text, inbound, own) {
                        break;
                    }
                }
                skipping = false;
                buf.clear();
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {}
            Err(_) => break,
        }
    }
    writer_stop.store(true, Ordering::SeqCst);
    let _ = writer.join();
}

fn serve_websocket(
    id: ClientId,
    stream: TcpStream,
    inbound: &Sender<Inbound>,
    own: &Sender<String>,
    rx: Receiver<String>,
    shutdown: &Arc<AtomicBool>,
) {
    use tungstenite::{Error as WsError, Message};

    let _ = stream.set_read_timeout(Some(Duration::from_secs(2)));
    let Ok(mut ws) = tungstenite::accept(stream) else {
        return;
    };
    let _ = ws.get_mut().set_read_timeout(Some(Duration::from_millis(2)));
    while !shutdown.load(Ordering::SeqCst) {
        for text in rx.try_iter() {
            if ws.send(Message::text(text)).is_err() {
                return;
            }
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                if text.len() > MAX_LINE {
                    let _ = own.try_send(encode_message(&ServerMessage::Error(ErrorFrame {
                        message: format!("message longer than {MAX_LINE} bytes"),
                        field: None,
                    })));
                } else if !on_text(id, text.as_str(), inbound, own) {
                    return;
                }
            }
            Ok(Message::Close(_)) => return,
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(_) => return,
        }
    }
    let _ = ws.close(None);
}
