//! Minimal HTTP/1.1 server for the mock timestamping service and test
//! gateways. One thread accepts, one short-lived thread per
//! connection, `Connection: close` always.
//!
//! The listener is bound with SO_REUSEADDR through libc so a service
//! can be killed and restarted on the same port mid-test without
//! tripping over TIME_WAIT sockets.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::os::unix::io::FromRawFd;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

pub struct Request {
    pub method: String,
    pub path: String,
    headers: Vec<(String, String)>,
    pub body: Vec<u8>,
}

impl Request {
    /// Case-insensitive header lookup.
    pub fn header(&self, name: &str) -> Option<&str> {
        let lower = name.to_ascii_lowercase();
        self.headers
            .iter()
            .find(|(n, _)| *n == lower)
            .map(|(_, v)| v.as_str())
    }
}

pub struct Response {
    pub status: u16,
    pub body: String,
}

impl Response {
    pub fn json(status: u16, body: impl Into<String>) -> Response {
        Response {
            status,
            body: body.into(),
        }
    }
}

/// A handler either replies or drops the connection cold (the
/// fault-injection path: the client sees a transport error).
pub enum Served {
    Reply(Response),
    Drop,
}

pub struct HttpServer {
    port: u16,
    stop: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
}

impl HttpServer {
    /// Bind 127.0.0.1:port (0 picks an ephemeral port) and serve until
    /// stopped. The handler runs on a per-connection thread.
    pub fn start<F>(port: u16, handler: F) -> std::io::Result<HttpServer>
    where
        F: Fn(Request) -> Served + Send + Sync + 'static,
    {
        let listener = bind_reusable(port)?;
        let port = listener.local_addr()?.port();
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_accept = Arc::clone(&stop);
        let handler = Arc::new(handler);

        let accept_thread = thread::spawn(move || {
            while !stop_accept.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let handler = Arc::clone(&handler);
                        thread::spawn(move || serve_connection(stream, &*handler));
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        thread::sleep(Duration::from_millis(5));
                    }
                    Err(_) => break,
                }
            }
        });

        Ok(HttpServer {
            port,
            stop,
            accept_thread: Some(accept_thread),
        })
    }

    pub fn port(&self) -> u16 {
        self.port
    }

    pub fn stop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn serve_connection<F>(mut stream: TcpStream, handler: &F)
where
    F: Fn(Request) -> Served,
{
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let _ = stream.set_write_timeout(Some(Duration::from_secs(5)));
    let request = match read_request(&mut stream) {
        Some(r) => r,
        None => return,
    };
    match handler(request) {
        Served::Reply(response) => {
            let reason = match response.status {
                200 => "OK",
                400 => "Bad Request",
                401 => "Unauthorized",
                404 => "Not Found",
                500 => "Internal Server Error",
                _ => "Response",
            };
            let head = format!(
                "HTTP/1.1 {} {}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
                response.status,
                reason,
                response.body.len()
            );
            let _ = stream.write_all(head.as_bytes());
            let _ = stream.write_all(response.body.as_bytes());
            let _ = stream.flush();
        }
        Served::Drop => {
            // connection closes without a byte written
        }
    }
}

fn read_request(stream: &mut TcpStream) -> Option<Request> {
    let mut reader = BufReader::new(stream);
    let mut request_line = String::new();
    reader.read_line(&mut request_line).ok()?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();

    let mut headers = Vec::new();
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).ok()?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((name, value)) = line.split_once(':') {
            let name = name.trim().to_ascii_lowercase();
            let value = value.trim().to_string();
            if name == "content-length" {
                content_length = value.parse().ok()?;
            }
            headers.push((name, value));
        }
    }
    if content_length > 1 << 20 {
        return None;
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body).ok()?;
    Some(Request {
        method,
        path,
        headers,
        body,
    })
}

/// TcpListener on 127.0.0.1 with SO_REUSEADDR, so a restarted service
/// can rebind its old port immediately.
fn bind_reusable(port: u16) -> std::io::Result<TcpListener> {
    unsafe {
        let fd = libc::socket(libc::AF_INET, libc::SOCK_STREAM, 0);
        if fd < 0 {
            return Err(std::io::Error::last_os_error());
        }
        let close_on_err = |fd: i32, e: std::io::Error| {
            libc::close(fd);
            Err(e)
        };
        let one: libc::c_int = 1;
        if libc::setsockopt(
            fd,
            libc::SOL_SOCKET,
            libc::SO_REUSEADDR,
            &one as *const _ as *const libc::c_void,
            std::mem::size_of::<libc::c_int>() as libc::socklen_t,
        ) < 0
        {
            return close_on_err(fd, std::io::Error::last_os_error());
        }
        let addr = libc::sockaddr_in {
            sin_family: libc::AF_INET as libc::sa_family_t,
            sin_port: port.to_be(),
            sin_addr: libc::in_addr {
                s_addr: u32::from(std::net::Ipv4Addr::LOCALHOST).to_be(),
            },
            sin_zero: [0; 8],
        };
        if libc::bind(
            fd,
            &addr as *const _ as *const libc::sockaddr,
            std::mem::size_of::<libc::sockaddr_in>() as libc::socklen_t,
        ) < 0
        {
            return close_on_err(fd, std::io::Error::last_os_error());
        }
        if libc::listen(fd, 64) < 0 {
            return close_on_err(fd, std::io::Error::last_os_error());
        }
        Ok(TcpListener::from_raw_fd(fd))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serves_and_restarts_on_the_same_port() {
        let make = |port: u16| {
            HttpServer::start(port, |req| {
                Served::Reply(Response::json(
                    200,
                    format!("{{\"path\":\"{}\"}}", req.path),
                ))
            })
            .unwrap()
        };
        let mut server = make(0);
        let port = server.port();
        let url = format!("http://127.0.0.1:{port}/hello");
        let body = ureq::get(&url).call().unwrap().into_string().unwrap();
        assert_eq!(body, "{\"path\":\"/hello\"}");

        server.stop();
        assert!(ureq::get(&url).call().is_err());

        // rebinding the same port right away must work
        let _server2 = make(port);
        let body = ureq::get(&url).call().unwrap().into_string().unwrap();
        assert_eq!(body, "{\"path\":\"/hello\"}");
    }

    #[test]
    fn post_bodies_arrive_whole() {
        let server = HttpServer::start(0, |req| {
            assert_eq!(req.method, "POST");
            assert_eq!(req.header("x-probe"), Some("1"));
            Served::Reply(Response::json(
                200,
                format!("{{\"len\":{}}}", req.body.len()),
            ))
        })
        .unwrap();
        let url = format!("http://127.0.0.1:{}/in", server.port());
        let payload = vec![b'z'; 10_000];
        let reply = ureq::post(&url)
            .set("x-probe", "1")
            .send_bytes(&payload)
            .unwrap()
            .into_string()
            .unwrap();
        assert_eq!(reply, "{\"len\":10000}");
    }

    #[test]
    fn dropped_connections_surface_as_transport_errors() {
        let server = HttpServer::start(0, |_| Served::Drop).unwrap();
        let url = format!("http://127.0.0.1:{}/x", server.port());
        match ureq::get(&url).call() {
            Err(ureq::Error::Transport(_)) => {}
            other => panic!("expected transport error, got {other:?}"),
        }
    }
}
