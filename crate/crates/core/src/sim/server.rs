use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use tracing::{debug, warn};

use super::wire::handle_line;
use super::{AddressSpace, SimError};

/// Running simulator server. Dropping the handle shuts it down.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    clients: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Endpoint URL clients pass to `connect`.
    pub fn endpoint(&self) -> String {
        format!("sim-tcp://{}", self.addr)
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // wake the blocking accept
        let _ = TcpStream::connect(self.addr);
        for client in self.clients.lock().unwrap_or_else(|e| e.into_inner()).drain(..) {
            let _ = client.shutdown(Shutdown::Both);
        }
        if let Some(acceptor) = self.acceptor.take() {
            let _ = acceptor.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Serves `space` over the line protocol. Each client gets its own thread;
/// requests are applied atomically through the space's lock.
pub fn serve(space: AddressSpace, bind_address: impl ToSocketAddrs) -> Result<ServerHandle, SimError> {
    let shown = bind_address
        .to_socket_addrs()
        .ok()
        .and_then(|mut a| a.next())
        .map(|a| a.to_string())
        .unwrap_or_else(|| "<unresolved>".into());
    let listener = TcpListener::bind(bind_address).map_err(|source| SimError::BindFailure {
        address: shown.clone(),
        source,
    })?;
    let addr = listener.local_addr().map_err(|source| SimError::BindFailure {
        address: shown,
        source,
    })?;
    let stop = Arc::new(AtomicBool::new(false));
    let clients = Arc::new(Mutex::new(Vec::new()));

    let acceptor = {
        let stop = stop.clone();
        let clients = clients.clone();
        std::thread::Builder::new()
            .name("plc-sim-accept".into())
            .spawn(move || accept_loop(listener, space, stop, clients))
            .expect("spawn acceptor thread")
    };
    Ok(ServerHandle {
        addr,
        stop,
        clients,
        acceptor: Some(acceptor),
    })
}

fn accept_loop(
    listener: TcpListener,
    space: AddressSpace,
    stop: Arc<AtomicBool>,
    clients: Arc<Mutex<Vec<TcpStream>>>,
) {
    let mut workers = Vec::new();
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        if let Ok(clone) = stream.try_clone() {
            clients.lock().unwrap_or_else(|e| e.into_inner()).push(clone);
        }
        workers.retain(|w: &JoinHandle<()>| !w.is_finished());
        let space = space.clone();
        workers.push(std::thread::spawn(move || {
            if let Err(e) = serve_client(&space, stream) {
                debug!("client disconnected: {e}");
            }
        }));
    }
    for worker in workers {
        let _ = worker.join();
    }
}

fn serve_client(space: &AddressSpace, stream: TcpStream) -> std::io::Result<()> {
    let peer = stream.peer_addr().ok();
    stream.set_nodelay(true)?;
    debug!(?peer, "client connected");
    let mut writer = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            return Ok(());
        }
        // invalid UTF-8 is answered with BadRequest like any other garbage
        let line = String::from_utf8_lossy(&buf);
        if line.trim().is_empty() {
            continue;
        }
        let mut response = handle_line(space, &line).to_line();
        response.push('\n');
        writer.write_all(response.as_bytes())?;
    }
}
