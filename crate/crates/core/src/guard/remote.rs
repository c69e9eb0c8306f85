//! Line protocol for sharing one guard between service processes.
//!
//! ```text
//! CLAIMI <key> <start> <exp>   -> GRANTED [prev] | DENIED
//! REVI <key> <prev|->          -> GRANTED
//! CLAIMO <key>                 -> GRANTED | DENIED
//! REVO <key>                   -> GRANTED
//! ```
//!
//! Keys are `space:hex`. One request per line, answered in order. Malformed
//! requests and backend failures are answered with `ERR <message>`.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use super::{GuardError, GuardKey, IntervalClaim, OnceClaim, SybilGuard};

/// Answers one request line against `guard`.
pub fn handle_line(guard: &dyn SybilGuard, line: &str) -> String {
    match dispatch(guard, line) {
        Ok(reply) => reply,
        Err(msg) => format!("ERR {msg}"),
    }
}

fn dispatch(guard: &dyn SybilGuard, line: &str) -> Result<String, String> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    let key = |i: usize| -> Result<GuardKey, String> {
        parts
            .get(i)
            .and_then(|s| GuardKey::from_wire(s))
            .ok_or_else(|| "bad key".to_string())
    };
    let num = |i: usize| -> Result<u64, String> {
        parts
            .get(i)
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| "bad integer".to_string())
    };
    let fail = |e: GuardError| e.to_string();
    match parts.first().copied() {
        Some("CLAIMI") if parts.len() == 4 => {
            match guard
                .claim_ticket_interval(key(1)?, num(2)?, num(3)?)
                .map_err(fail)?
            {
                IntervalClaim::Granted { prev: Some(p) } => Ok(format!("GRANTED {p}")),
                IntervalClaim::Granted { prev: None } => Ok("GRANTED".into()),
                IntervalClaim::Denied => Ok("DENIED".into()),
            }
        }
        Some("REVI") if parts.len() == 3 => {
            let prev = if parts[2] == "-" { None } else { Some(num(2)?) };
            guard.revert_ticket_interval(key(1)?, prev).map_err(fail)?;
            Ok("GRANTED".into())
        }
        Some("CLAIMO") if parts.len() == 2 => {
            match guard.claim_ticket_once(key(1)?).map_err(fail)? {
                OnceClaim::Granted => Ok("GRANTED".into()),
                OnceClaim::Denied => Ok("DENIED".into()),
            }
        }
        Some("REVO") if parts.len() == 2 => {
            guard.revert_ticket_once(key(1)?).map_err(fail)?;
            Ok("GRANTED".into())
        }
        _ => Err(format!("unrecognized request {line:?}")),
    }
}

/// TCP front end for a guard; one thread per connection.
pub struct GuardServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    live: Arc<Mutex<Vec<TcpStream>>>,
}

impl GuardServer {
    pub fn bind(addr: impl ToSocketAddrs, guard: Arc<dyn SybilGuard>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let live: Arc<Mutex<Vec<TcpStream>>> = Arc::default();
        let tracked = live.clone();
        let accept = std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop_flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(conn) = conn else { continue };
                if let Ok(c) = conn.try_clone() {
                    tracked.lock().unwrap().push(c);
                }
                let guard = guard.clone();
                std::thread::spawn(move || serve_connection(conn, guard.as_ref()));
            }
        });
        Ok(GuardServer {
            addr,
            stop,
            accept: Some(accept),
            live,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting and drops every open connection.
    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for c in self.live.lock().unwrap().drain(..) {
            let _ = c.shutdown(std::net::Shutdown::Both);
        }
    }
}

impl Drop for GuardServer {
    fn drop(&mut self) {
        self.stop_accepting();
    }
}

fn serve_connection(conn: TcpStream, guard: &dyn SybilGuard) {
    let Ok(read_half) = conn.try_clone() else {
        return;
    };
    let mut writer = conn;
    for line in BufReader::new(read_half).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_line(guard, &line);
        if writeln!(writer, "{reply}").is_err() {
            break;
        }
    }
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Client speaking the line protocol. Keeps a small pool of connections so
/// concurrent callers do not serialize on one socket.
#[derive(Debug)]
pub struct RemoteGuard {
    addr: SocketAddr,
    pool: Mutex<Vec<Conn>>,
    timeout: Duration,
}

impl std::fmt::Debug for Conn {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Conn")
    }
}

impl RemoteGuard {
    pub fn new(addr: SocketAddr) -> Self {
        RemoteGuard {
            addr,
            pool: Mutex::new(Vec::new()),
            timeout: Duration::from_secs(5),
        }
    }

    fn connect(&self) -> Result<Conn, GuardError> {
        let unavailable = |e: std::io::Error| GuardError::Unavailable(e.to_string());
        let writer = TcpStream::connect_timeout(&self.addr, self.timeout).map_err(unavailable)?;
        writer
            .set_read_timeout(Some(self.timeout))
            .map_err(unavailable)?;
        writer.set_nodelay(true).map_err(unavailable)?;
        let reader = BufReader::new(writer.try_clone().map_err(unavailable)?);
        Ok(Conn { reader, writer })
    }

    fn request(&self, line: &str) -> Result<String, GuardError> {
        let pooled = self.pool.lock().unwrap().pop();
        let mut conn = match pooled {
            Some(c) => c,
            None => self.connect()?,
        };
        let io = |e: std::io::Error| GuardError::Unavailable(e.to_string());
        writeln!(conn.writer, "{line}").map_err(io)?;
        let mut reply = String::new();
        let n = conn.reader.read_line(&mut reply).map_err(io)?;
        if n == 0 {
            return Err(GuardError::Unavailable("connection closed".into()));
        }
        self.pool.lock().unwrap().push(conn);
        let reply = reply.trim_end().to_string();
        if let Some(msg) = reply.strip_prefix("ERR ") {
            return Err(GuardError::Unavailable(msg.to_string()));
        }
        Ok(reply)
    }
}

impl SybilGuard for RemoteGuard {
    fn claim_ticket_interval(
        &self,
        key: GuardKey,
        start: u64,
        exp: u64,
    ) -> Result<IntervalClaim, GuardError> {
        if start >= exp {
            return Err(GuardError::InvalidInterval { start, exp });
        }
        let reply = self.request(&format!("CLAIMI {} {start} {exp}", key.to_wire()))?;
        match reply.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["GRANTED"] => Ok(IntervalClaim::Granted { prev: None }),
            ["GRANTED", p] => p
                .parse()
                .map(|p| IntervalClaim::Granted { prev: Some(p) })
                .map_err(|_| GuardError::Unavailable(format!("bad reply {reply:?}"))),
            ["DENIED", ..] => Ok(IntervalClaim::Denied),
            _ => Err(GuardError::Unavailable(format!("bad reply {reply:?}"))),
        }
    }

    fn revert_ticket_interval(&self, key: GuardKey, prev: Option<u64>) -> Result<(), GuardError> {
        let prev = prev.map_or_else(|| "-".to_string(), |p| p.to_string());
        self.request(&format!("REVI {} {prev}", key.to_wire()))
            .map(drop)
    }

    fn claim_ticket_once(&self, key: GuardKey) -> Result<OnceClaim, GuardError> {
        match self.request(&format!("CLAIMO {}", key.to_wire()))?.as_str() {
            "GRANTED" => Ok(OnceClaim::Granted),
            "DENIED" => Ok(OnceClaim::Denied),
            other => Err(GuardError::Unavailable(format!("bad reply {other:?}"))),
        }
    }

    fn revert_ticket_once(&self, key: GuardKey) -> Result<(), GuardError> {
        self.request(&format!("REVO {}", key.to_wire())).map(drop)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::Serial;
    use crate::guard::MemoryGuard;

    #[test]
    fn line_protocol_replies() {
        let g = MemoryGuard::new();
        let k = GuardKey::live(Serial([1; 16])).to_wire();
        assert_eq!(handle_line(&g, &format!("CLAIMI {k} 0 100")), "GRANTED");
        assert_eq!(handle_line(&g, &format!("CLAIMI {k} 50 150")), "DENIED");
        assert_eq!(
            handle_line(&g, &format!("CLAIMI {k} 100 150")),
            "GRANTED 100"
        );
        assert_eq!(handle_line(&g, &format!("REVI {k} 100")), "GRANTED");
        assert_eq!(handle_line(&g, &format!("REVI {k} -")), "GRANTED");
        assert_eq!(handle_line(&g, &format!("CLAIMO {k}")), "GRANTED");
        assert_eq!(handle_line(&g, &format!("CLAIMO {k}")), "DENIED");
        assert_eq!(handle_line(&g, &format!("REVO {k}")), "GRANTED");
        assert!(handle_line(&g, "CLAIMO nope").starts_with("ERR"));
        assert!(handle_line(&g, "FLUSHALL").starts_with("ERR"));
    }

    #[test]
    fn remote_client_round_trip() {
        let backend = Arc::new(MemoryGuard::new());
        let server = GuardServer::bind("127.0.0.1:0", backend.clone()).unwrap();
        let client = RemoteGuard::new(server.local_addr());
        let k = GuardKey::live(Serial([2; 16]));
        assert_eq!(
            client.claim_ticket_interval(k, 0, 10),
            Ok(IntervalClaim::Granted { prev: None })
        );
        assert_eq!(
            client.claim_ticket_interval(k, 10, 20),
            Ok(IntervalClaim::Granted { prev: Some(10) })
        );
        client.revert_ticket_interval(k, Some(10)).unwrap();
        assert_eq!(backend.interval_value(k), Some(10));
        assert!(client.claim_ticket_once(k).unwrap().is_granted());
        assert!(!client.claim_ticket_once(k).unwrap().is_granted());

        backend.set_online(false);
        assert!(matches!(
            client.claim_ticket_once(k),
            Err(GuardError::Unavailable(_))
        ));
        server.shutdown();
    }

    #[test]
    fn unreachable_server_is_unavailable() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let client = RemoteGuard::new(addr);
        assert!(matches!(
            client.claim_ticket_once(GuardKey::live(Serial([0; 16]))),
            Err(GuardError::Unavailable(_))
        ));
    }
}
