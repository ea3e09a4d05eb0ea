//! Line-delimited JSON protocol for remote oracles.
//!
//! Each request is one UTF-8 line `{"features":[f1,...,fn]}` and each reply
//! one line `{"probs":[p1,...,pk]}` or `{"error":"<message>"}`, both
//! terminated by `\n`. Numbers are written in their shortest round-trip
//! form, so remote and in-process answers are bit-identical.
//!
//! The server never discloses anything but probability vectors.

use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::OracleError;
use crate::netcore::Mlp;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct Request {
    pub features: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum Response {
    Probs { probs: Vec<f64> },
    Error { error: String },
}

/// Answers one request line. Never panics on bad input.
pub fn answer(net: &Mlp, line: &str) -> Response {
    let req: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => {
            return Response::Error {
                error: format!("bad request: {e}"),
            }
        }
    };
    match net.forward(&req.features) {
        Ok(probs) => Response::Probs { probs },
        Err(e) => Response::Error {
            error: e.to_string(),
        },
    }
}

/// Running oracle server; dropping it (or calling
/// [`OracleServer::shutdown`]) stops accepting connections.
pub struct OracleServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
}

impl OracleServer {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    /// Blocks until the accept loop exits.
    pub fn wait(mut self) {
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the blocking accept
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_millis(200));
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
    }
}

impl Drop for OracleServer {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_now();
        }
    }
}

const POLL: Duration = Duration::from_millis(100);

fn handle_connection(net: Arc<Mlp>, stream: TcpStream, stop: Arc<AtomicBool>) {
    let _ = stream.set_read_timeout(Some(POLL));
    let _ = stream.set_nodelay(true);
    let Ok(mut writer) = stream.try_clone() else {
        return;
    };
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => return,
            Ok(_) if buf.last() == Some(&b'\n') => {
                let reply = match std::str::from_utf8(&buf) {
                    Ok(line) => answer(&net, line.trim_end()),
                    Err(_) => Response::Error {
                        error: "request is not valid UTF-8".into(),
                    },
                };
                buf.clear();
                let mut text = serde_json::to_string(&reply).unwrap_or_else(|_| {
                    r#"{"error":"reply could not be encoded"}"#.to_string()
                });
                text.push('\n');
                if writer.write_all(text.as_bytes()).is_err() {
                    return;
                }
            }
            // EOF in the middle of a line
            Ok(_) => return,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                if stop.load(Ordering::SeqCst) {
                    return;
                }
            }
            Err(_) => return,
        }
    }
}

/// Binds `addr` and serves `net` on a background thread, one thread per
/// connection.
pub fn serve(net: Arc<Mlp>, addr: &str) -> Result<OracleServer, OracleError> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let acceptor = std::thread::spawn(move || {
        let mut workers = Vec::new();
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let net = Arc::clone(&net);
            let stop = Arc::clone(&stop_flag);
            workers.push(std::thread::spawn(move || handle_connection(net, stream, stop)));
            workers.retain(|w: &JoinHandle<()>| !w.is_finished());
        }
        for w in workers {
            let _ = w.join();
        }
    });
    Ok(OracleServer {
        addr: local,
        stop,
        acceptor: Some(acceptor),
    })
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

/// Client side of the protocol. One persistent connection, serialised by a
/// mutex; reconnects after a transport failure.
pub struct RemoteOracle {
    addr: SocketAddr,
    timeout: Duration,
    conn: Mutex<Option<Conn>>,
}

impl RemoteOracle {
    pub fn connect(addr: &str, timeout: Duration) -> Result<Self, OracleError> {
        let sock = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| OracleError::Remote(format!("cannot resolve `{addr}`")))?;
        let r = RemoteOracle {
            addr: sock,
            timeout,
            conn: Mutex::new(None),
        };
        *r.conn.lock().unwrap() = Some(r.open()?);
        Ok(r)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    fn open(&self) -> Result<Conn, OracleError> {
        let stream = TcpStream::connect_timeout(&self.addr, self.timeout).map_err(|e| {
            if e.kind() == ErrorKind::TimedOut {
                OracleError::Timeout(self.timeout)
            } else {
                OracleError::Io(e)
            }
        })?;
        stream.set_read_timeout(Some(self.timeout))?;
        stream.set_write_timeout(Some(self.timeout))?;
        stream.set_nodelay(true)?;
        Ok(Conn {
            writer: stream.try_clone()?,
            reader: BufReader::new(stream),
        })
    }

    /// Sends one request and returns the raw probabilities.
    pub fn query(&self, features: &[f64]) -> Result<Vec<f64>, OracleError> {
        let mut line = serde_json::to_string(&Request {
            features: features.to_vec(),
        })
        .map_err(|e| OracleError::Remote(format!("cannot encode request: {e}")))?;
        line.push('\n');

        let mut guard = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        if guard.is_none() {
            *guard = Some(self.open()?);
        }
        let conn = guard.as_mut().expect("connection just opened");
        let result = exchange(conn, &line, self.timeout);
        if matches!(result, Err(OracleError::Io(_) | OracleError::Timeout(_))) {
            // the stream may be desynchronised; start fresh next time
            *guard = None;
        }
        let reply = result?;
        match serde_json::from_str::<Response>(reply.trim_end()) {
            Ok(Response::Probs { probs }) => Ok(probs),
            Ok(Response::Error { error }) => Err(OracleError::Remote(error)),
            Err(e) => Err(OracleError::MalformedReply(format!("{e}: `{}`", reply.trim_end()))),
        }
    }
}

fn exchange(conn: &mut Conn, line: &str, timeout: Duration) -> Result<String, OracleError> {
    let timed_out = |e: std::io::Error| {
        if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) {
            OracleError::Timeout(timeout)
        } else {
            OracleError::Io(e)
        }
    };
    conn.writer.write_all(line.as_bytes()).map_err(timed_out)?;
    let mut reply = String::new();
    let n = conn.reader.read_line(&mut reply).map_err(timed_out)?;
    if n == 0 || !reply.ends_with('\n') {
        return Err(OracleError::Io(std::io::Error::new(
            ErrorKind::UnexpectedEof,
            "oracle closed the connection",
        )));
    }
    Ok(reply)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::Activation;
    use crate::oracle::OracleHandle;
    use rand::SeedableRng;

    fn net() -> Arc<Mlp> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        Arc::new(Mlp::random(&[3, 6, 4], Activation::Relu, Activation::Softmax, &mut rng).unwrap())
    }

    #[test]
    fn answer_formats() {
        let n = net();
        match answer(&n, r#"{"features":[0.1,0.2,0.3]}"#) {
            Response::Probs { probs } => assert_eq!(probs, n.forward(&[0.1, 0.2, 0.3]).unwrap()),
            e => panic!("{e:?}"),
        }
        assert!(matches!(answer(&n, r#"{"features":[1]}"#), Response::Error { .. }));
        assert!(matches!(answer(&n, "not json"), Response::Error { .. }));
        let text = serde_json::to_string(&Response::Error { error: "x".into() }).unwrap();
        assert_eq!(text, r#"{"error":"x"}"#);
    }

    #[test]
    fn wrong_width_keeps_connection_open() {
        let n = net();
        let server = serve(Arc::clone(&n), "127.0.0.1:0").unwrap();
        let mut s = TcpStream::connect(server.local_addr()).unwrap();
        let mut r = BufReader::new(s.try_clone().unwrap());
        s.write_all(b"{\"features\":[1.0]}\n").unwrap();
        let mut line = String::new();
        r.read_line(&mut line).unwrap();
        assert!(line.starts_with("{\"error\":"), "{line}");
        s.write_all(b"{\"features\":[1.0,2.0,3.0]}\n").unwrap();
        line.clear();
        r.read_line(&mut line).unwrap();
        let reply: Response = serde_json::from_str(&line).unwrap();
        assert_eq!(
            reply,
            Response::Probs {
                probs: n.forward(&[1.0, 2.0, 3.0]).unwrap()
            }
        );
        server.shutdown();
    }

    #[test]
    fn remote_matches_in_process() {
        let n = net();
        let server = serve(Arc::clone(&n), "127.0.0.1:0").unwrap();
        let addr = server.local_addr().to_string();
        let remote = OracleHandle::remote(&addr, Duration::from_secs(5), 3, 4).unwrap();
        let local = OracleHandle::in_process(Arc::clone(&n)).unwrap();
        assert!(!remote.supports_gradients());
        for i in 0..50 {
            let x = [i as f64 * 0.37 - 5.0, (i as f64).sin() * 1e3, 1.0 / (i as f64 + 1.0)];
            assert_eq!(remote.classify(&x).unwrap(), local.classify(&x).unwrap());
        }
        assert_eq!(remote.query_count(), 50);
        assert!(matches!(remote.classify(&[1.0]), Err(OracleError::DimensionMismatch { .. })));
        server.shutdown();
    }

    #[test]
    fn concurrent_clients() {
        let n = net();
        let server = serve(Arc::clone(&n), "127.0.0.1:0").unwrap();
        let addr = server.local_addr().to_string();
        let threads: Vec<_> = (0..100)
            .map(|t| {
                let addr = addr.clone();
                let n = Arc::clone(&n);
                std::thread::spawn(move || {
                    let h = OracleHandle::remote(&addr, Duration::from_secs(10), 3, 4).unwrap();
                    for k in 0..5 {
                        let x = [t as f64, k as f64, -0.5];
                        let got = h.classify(&x).unwrap();
                        assert_eq!(got.as_slice(), &n.forward(&x).unwrap()[..]);
                    }
                })
            })
            .collect();
        for t in threads {
            t.join().unwrap();
        }
        server.shutdown();
    }

    #[test]
    fn silent_server_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let _hold = std::thread::spawn(move || {
            let (s, _) = listener.accept().unwrap();
            std::thread::sleep(Duration::from_millis(800));
            drop(s);
        });
        let h = OracleHandle::remote(&addr, Duration::from_millis(150), 1, 2).unwrap();
        assert!(matches!(h.classify(&[0.0]), Err(OracleError::Timeout(_))));
    }

    #[test]
    fn garbage_reply_is_malformed() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        std::thread::spawn(move || {
            let (mut s, _) = listener.accept().unwrap();
            let mut r = BufReader::new(s.try_clone().unwrap());
            let mut line = String::new();
            r.read_line(&mut line).unwrap();
            s.write_all(b"{\"probz\":1}\n").unwrap();
        });
        let h = OracleHandle::remote(&addr, Duration::from_secs(2), 1, 2).unwrap();
        assert!(matches!(h.classify(&[0.0]), Err(OracleError::MalformedReply(_))));
    }
}
