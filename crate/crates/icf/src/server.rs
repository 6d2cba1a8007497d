use std::io::{self, Read};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::error::Result;
use crate::metrics::MetricsLog;
use crate::service::{error_response, Icf};
use crate::wire::{read_frame_after_len, write_frame, Request};

const IDLE_POLL: Duration = Duration::from_millis(100);

/// A running listener. Dropping it without `shutdown` leaves the threads running.
pub struct ServerHandle {
    addr: SocketAddr,
    icf: Arc<Icf>,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn icf(&self) -> &Arc<Icf> {
        &self.icf
    }

    /// Stops accepting, lets in-flight requests finish and joins every thread.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    pub fn wait(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Binds `listen` and serves `icf` with one thread per connection, plus the eviction
/// ticker and metrics writer when configured.
pub fn serve(icf: Arc<Icf>, listen: &str) -> Result<ServerHandle> {
    let listener = TcpListener::bind(listen)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let mut threads = Vec::new();
    {
        let (icf, stop) = (Arc::clone(&icf), Arc::clone(&stop));
        threads.push(thread::spawn(move || accept_loop(listener, icf, stop)));
    }
    let cfg = icf.config().clone();
    if cfg.tick_interval_ms > 0 {
        let (icf, stop) = (Arc::clone(&icf), Arc::clone(&stop));
        let every = Duration::from_millis(cfg.tick_interval_ms);
        threads.push(thread::spawn(move || {
            while sleep_unless_stopped(every, &stop) {
                match icf.tick(chrono::Utc::now()) {
                    Ok(0) => {}
                    Ok(n) => log::debug!("evicted {n} events"),
                    Err(e) => log::error!("eviction tick failed: {e}"),
                }
            }
        }));
    }
    if let Some(path) = cfg.metrics_csv.clone() {
        let mut out = MetricsLog::create(&path)?;
        let (icf, stop) = (Arc::clone(&icf), Arc::clone(&stop));
        let every = Duration::from_millis(cfg.metrics_interval_ms.max(1));
        threads.push(thread::spawn(move || loop {
            let running = sleep_unless_stopped(every, &stop);
            if let Err(e) = out.append(&icf.stats()) {
                log::error!("metrics write to {} failed: {e}", path.display());
            }
            if !running {
                break;
            }
        }));
    }
    log::info!("listening on {addr}");
    Ok(ServerHandle { addr, icf, stop, threads })
}

fn sleep_unless_stopped(total: Duration, stop: &AtomicBool) -> bool {
    let mut left = total;
    while !left.is_zero() {
        if stop.load(Ordering::SeqCst) {
            return false;
        }
        let step = left.min(IDLE_POLL);
        thread::sleep(step);
        left -= step;
    }
    !stop.load(Ordering::SeqCst)
}

fn accept_loop(listener: TcpListener, icf: Arc<Icf>, stop: Arc<AtomicBool>) {
    let mut conns: Vec<JoinHandle<()>> = Vec::new();
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        conns.retain(|c| !c.is_finished());
        let (icf, stop) = (Arc::clone(&icf), Arc::clone(&stop));
        conns.push(thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = connection(stream, &icf, &stop) {
                log::debug!("connection {peer:?} closed: {e}");
            }
        }));
    }
    for c in conns {
        let _ = c.join();
    }
}

fn connection(mut stream: TcpStream, icf: &Icf, stop: &AtomicBool) -> Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(IDLE_POLL))?;
    loop {
        let Some(len) = wait_for_frame(&mut stream, stop)? else {
            return Ok(());
        };
        stream.set_read_timeout(None)?;
        let (ty, body) = read_frame_after_len(&mut stream, len)?;
        stream.set_read_timeout(Some(IDLE_POLL))?;
        let resp = match Request::decode(ty, body) {
            Ok(req) => icf.handle(req),
            Err(e) => error_response(e),
        };
        let (ty, body) = resp.encode();
        write_frame(&mut stream, ty, &body)?;
    }
}

/// Reads the 4-byte length of the next frame, polling `stop` while the connection is idle.
fn wait_for_frame(stream: &mut TcpStream, stop: &AtomicBool) -> Result<Option<usize>> {
    let mut len = [0u8; 4];
    let mut filled = 0;
    while filled < len.len() {
        match stream.read(&mut len[filled..]) {
            Ok(0) => return Ok(None),
            Ok(n) => filled += n,
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if filled == 0 && stop.load(Ordering::SeqCst) {
                    return Ok(None);
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(Some(u32::from_be_bytes(len) as usize))
}
