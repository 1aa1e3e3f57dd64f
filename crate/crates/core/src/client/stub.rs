//! Scripted in-process annotation server for tests.
//!
//! [`StubServer`] listens on a loopback port, answers each request
//! according to a script (one step per request, repeating the last step
//! once the script is exhausted), and records what it saw: request count,
//! methods and paths, arrival times, and the high-water mark of
//! concurrent in-flight requests.

use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

/// What a scripted response contains.
#[derive(Debug, Clone)]
pub enum StubBody {
    Empty,
    Fixed(String),
    /// A single-document annotation payload echoing the posted text, with
    /// one annotation covering its first whitespace-delimited word.
    AnnotateFirstWord { etype: String, id: String },
}

/// One scripted response.
#[derive(Debug, Clone)]
pub struct StubResponse {
    pub status: u16,
    pub body: StubBody,
    pub delay_ms: u64,
}

impl StubResponse {
    /// 200 with an echoed first-word annotation.
    pub fn ok_annotate(etype: &str, id: &str) -> StubResponse {
        StubResponse {
            status: 200,
            body: StubBody::AnnotateFirstWord {
                etype: etype.to_string(),
                id: id.to_string(),
            },
            delay_ms: 0,
        }
    }

    /// A bare status code with an empty body.
    pub fn status(status: u16) -> StubResponse {
        StubResponse {
            status,
            body: StubBody::Empty,
            delay_ms: 0,
        }
    }

    /// A status code with a fixed body.
    pub fn fixed(status: u16, body: &str) -> StubResponse {
        StubResponse {
            status,
            body: StubBody::Fixed(body.to_string()),
            delay_ms: 0,
        }
    }

    /// Delays the response by `delay_ms` while counting as in-flight.
    pub fn with_delay(mut self, delay_ms: u64) -> StubResponse {
        self.delay_ms = delay_ms;
        self
    }
}

struct StubState {
    script: Vec<StubResponse>,
    stop: AtomicBool,
    next_step: AtomicUsize,
    in_flight: AtomicUsize,
    high_water: AtomicUsize,
    requests: Mutex<Vec<(String, String)>>,
    times: Mutex<Vec<Instant>>,
}

/// A running stub server. Shuts down when dropped.
pub struct StubServer {
    addr: SocketAddr,
    state: Arc<StubState>,
    accept_thread: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Binds a loopback port and starts answering per `script`. An empty
    /// script answers every request with 200 and an empty body.
    pub fn start(script: Vec<StubResponse>) -> StubServer {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind loopback");
        let addr = listener.local_addr().expect("local addr");
        let state = Arc::new(StubState {
            script,
            stop: AtomicBool::new(false),
            next_step: AtomicUsize::new(0),
            in_flight: AtomicUsize::new(0),
            high_water: AtomicUsize::new(0),
            requests: Mutex::new(Vec::new()),
            times: Mutex::new(Vec::new()),
        });
        let accept_state = Arc::clone(&state);
        let accept_thread = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if accept_state.stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let conn_state = Arc::clone(&accept_state);
                std::thread::spawn(move || handle_connection(stream, &conn_state));
            }
        });
        StubServer {
            addr,
            state,
            accept_thread: Some(accept_thread),
        }
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Requests answered so far.
    pub fn request_count(&self) -> usize {
        self.state.times.lock().expect("times lock").len()
    }

    /// Method and path of every request, in arrival order.
    pub fn requests(&self) -> Vec<(String, String)> {
        self.state.requests.lock().expect("requests lock").clone()
    }

    /// Arrival instants of every request.
    pub fn request_times(&self) -> Vec<Instant> {
        self.state.times.lock().expect("times lock").clone()
    }

    /// Most requests that were in flight at once.
    pub fn max_concurrency(&self) -> usize {
        self.state.high_water.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.state.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, state: &StubState) {
    if state.stop.load(Ordering::SeqCst) {
        return;
    }
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let Some((method, path, body)) = read_request(&mut stream) else {
        return;
    };
    let current = state.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
    state.high_water.fetch_max(current, Ordering::SeqCst);
    state
        .requests
        .lock()
        .expect("requests lock")
        .push((method, path));
    state.times.lock().expect("times lock").push(Instant::now());
    let step_index = state.next_step.fetch_add(1, Ordering::SeqCst);
    let step = if state.script.is_empty() {
        StubResponse::status(200)
    } else {
        state.script[step_index.min(state.script.len() - 1)].clone()
    };
    if step.delay_ms > 0 {
        std::thread::sleep(Duration::from_millis(step.delay_ms));
    }
    let payload = match &step.body {
        StubBody::Empty => String::new(),
        StubBody::Fixed(body) => body.clone(),
        StubBody::AnnotateFirstWord { etype, id } => annotate_first_word(&body, etype, id),
    };
    let reason = match step.status {
        200 => "OK",
        404 => "Not Found",
        500 => "Internal Server Error",
        503 => "Service Unavailable",
        _ => "Status",
    };
    let response = format!(
        "HTTP/1.1 {} {}\r\nContent-Type: text/plain; charset=utf-8\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
        step.status,
        reason,
        payload.len(),
        payload
    );
    let _ = stream.write_all(response.as_bytes());
    let _ = stream.flush();
    state.in_flight.fetch_sub(1, Ordering::SeqCst);
}

/// Reads one HTTP/1.1 request; returns method, path, and body.
fn read_request(stream: &mut TcpStream) -> Option<(String, String, String)> {
    let mut buffer = Vec::new();
    let mut chunk = [0u8; 1024];
    let header_end = loop {
        if let Some(pos) = find_header_end(&buffer) {
            break pos;
        }
        match stream.read(&mut chunk) {
            Ok(0) => return None,
            Ok(n) => buffer.extend_from_slice(&chunk[..n]),
            Err(_) => return None,
        }
    };
    let head = String::from_utf8_lossy(&buffer[..header_end]).to_string();
    let mut lines = head.lines();
    let request_line = lines.next()?;
    let mut parts = request_line.split_whitespace();
    let method = parts.next()?.to_string();
    let path = parts.next()?.to_string();
    let content_length = lines
        .filter_map(|line| line.split_once(':'))
        .find(|(name, _)| name.eq_ignore_ascii_case("content-length"))
        .and_then(|(_, value)| value.trim().parse::<usize>().ok())
        .unwrap_or(0);
    let mut body = buffer[header_end + 4..].to_vec();
    while body.len() < content_length {
        match stream.read(&mut chunk) {
            Ok(0) => break,
            Ok(n) => body.extend_from_slice(&chunk[..n]),
            Err(_) => break,
        }
    }
    body.truncate(content_length);
    Some((method, path, String::from_utf8_lossy(&body).to_string()))
}

fn find_header_end(buffer: &[u8]) -> Option<usize> {
    buffer.windows(4).position(|window| window == b"\r\n\r\n")
}

/// Builds a one-block annotation payload over the posted text with one
/// annotation covering its first whitespace-delimited word.
fn annotate_first_word(text: &str, etype: &str, id: &str) -> String {
    let flattened: String = text
        .chars()
        .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
        .collect();
    let mut payload = format!("0|t|{flattened}\n");
    let chars: Vec<char> = flattened.chars().collect();
    if let Some(start) = chars.iter().position(|c| !c.is_whitespace()) {
        let mut end = start;
        while end < chars.len() && !chars[end].is_whitespace() {
            end += 1;
        }
        let word: String = chars[start..end].iter().collect();
        payload.push_str(&format!("0\t{start}\t{end}\t{word}\t{etype}\t{id}\n"));
    }
    payload
}
