//! Line-delimited JSON over TCP.
//!
//! Each request is one line `{"endpoint", "session", "body"}`; each reply is
//! one line, either `{"ok": value}` or `{"error": {"kind", "message"}}`.
//! Connections are handled on their own threads and may carry any number
//! of requests.

mod services;

pub use services::{EnrollmentService, LedgerService, MediatorService, PortalService};

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{kind}: {message}")]
pub struct ServiceError {
    pub kind: String,
    pub message: String,
}

impl ServiceError {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        ServiceError { kind: kind.into(), message: message.into() }
    }

    pub fn bad_request(e: impl std::fmt::Display) -> Self {
        Self::new("bad_request", e.to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Request {
    pub endpoint: String,
    #[serde(default)]
    pub session: Option<String>,
    #[serde(default)]
    pub body: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    Ok(Value),
    Error(ServiceError),
}

pub trait Service: Send + Sync + 'static {
    fn handle(&self, endpoint: &str, session: Option<&str>, body: Value) -> Result<Value, ServiceError>;
}

/// Decode a request body.
pub fn body<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, ServiceError> {
    serde_json::from_value(v).map_err(ServiceError::bad_request)
}

pub fn reply<T: Serialize>(v: T) -> Result<Value, ServiceError> {
    Ok(serde_json::to_value(v).expect("reply serializes"))
}

pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn serve(service: Arc<dyn Service>, addr: impl ToSocketAddrs) -> io::Result<Server> {
    let listener = TcpListener::bind(addr)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let accept = std::thread::Builder::new().name(format!("ccn-serve-{addr}")).spawn(move || {
        for stream in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let service = service.clone();
            std::thread::spawn(move || {
                let _ = handle_connection(service.as_ref(), stream);
            });
        }
    })?;
    Ok(Server { addr, stop, accept: Some(accept) })
}

fn handle_connection(service: &dyn Service, stream: TcpStream) -> io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match service.handle(&req.endpoint, req.session.as_deref(), req.body) {
                Ok(v) => Response::Ok(v),
                Err(e) => Response::Error(e),
            },
            Err(e) => Response::Error(ServiceError::bad_request(e)),
        };
        let mut out = serde_json::to_vec(&response).expect("response serializes");
        out.push(b'\n');
        writer.write_all(&out)?;
    }
    Ok(())
}

/// Blocking client holding one connection.
pub struct Client {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        Ok(Client { writer: stream.try_clone()?, reader: BufReader::new(stream) })
    }

    pub fn call(&mut self, endpoint: &str, session: Option<&str>, body: Value) -> Result<Value, ServiceError> {
        let req = Request { endpoint: endpoint.to_owned(), session: session.map(str::to_owned), body };
        self.send_line(&serde_json::to_vec(&req).expect("request serializes"))
    }

    /// Send a raw line; used to probe schema handling.
    pub fn send_line(&mut self, line: &[u8]) -> Result<Value, ServiceError> {
        let io_err = |e: io::Error| ServiceError::new("io", e.to_string());
        let mut out = line.to_vec();
        out.push(b'\n');
        self.writer.write_all(&out).map_err(io_err)?;
        let mut buf = String::new();
        if self.reader.read_line(&mut buf).map_err(io_err)? == 0 {
            return Err(ServiceError::new("io", "connection closed"));
        }
        match serde_json::from_str::<Response>(&buf).map_err(ServiceError::bad_request)? {
            Response::Ok(v) => Ok(v),
            Response::Error(e) => Err(e),
        }
    }

    pub fn call_as<T: serde::de::DeserializeOwned>(&mut self, endpoint: &str, session: Option<&str>, body: Value) -> Result<T, ServiceError> {
        body_of(self.call(endpoint, session, body)?)
    }
}

fn body_of<T: serde::de::DeserializeOwned>(v: Value) -> Result<T, ServiceError> {
    serde_json::from_value(v).map_err(|e| ServiceError::new("bad_response", e.to_string()))
}
