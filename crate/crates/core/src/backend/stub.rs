//! Loopback chat-completions stub server for integration tests. Serves the
//! documented request/response fields over plain HTTP/1.1 on 127.0.0.1 and
//! answers every request from a fixed reply function.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

type ReplyFn = dyn Fn(&serde_json::Value) -> String + Send + Sync + 'static;

pub struct StubServer {
    addr: String,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    /// Starts the server on an ephemeral loopback port. `reply` receives the
    /// parsed request body and returns the assistant message content.
    pub fn start<F>(reply: F) -> std::io::Result<StubServer>
    where
        F: Fn(&serde_json::Value) -> String + Send + Sync + 'static,
    {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = format!("http://{}/v1/chat/completions", listener.local_addr()?);
        listener.set_nonblocking(true)?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let reply: Arc<ReplyFn> = Arc::new(reply);
        let handle = std::thread::spawn(move || {
            while !stop_flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, _)) => {
                        let reply = reply.clone();
                        std::thread::spawn(move || {
                            let _ = handle_connection(stream, &reply);
                        });
                    }
                    Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                        std::thread::sleep(std::time::Duration::from_millis(2));
                    }
                    Err(_) => break,
                }
            }
        });
        Ok(StubServer {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    /// Full endpoint URL, e.g. `http://127.0.0.1:PORT/v1/chat/completions`.
    pub fn endpoint_url(&self) -> &str {
        &self.addr
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn handle_connection(mut stream: TcpStream, reply: &Arc<ReplyFn>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut line = String::new();
    reader.read_line(&mut line)?;
    let mut content_length = 0usize;
    loop {
        let mut header = String::new();
        reader.read_line(&mut header)?;
        let header = header.trim_end();
        if header.is_empty() {
            break;
        }
        if let Some(v) = header.to_ascii_lowercase().strip_prefix("content-length:") {
            content_length = v.trim().parse().unwrap_or(0);
        }
    }
    let mut body = vec![0u8; content_length];
    reader.read_exact(&mut body)?;
    let request: serde_json::Value = serde_json::from_slice(&body).unwrap_or_default();
    let content = reply(&request);
    let prompt_tokens: u64 = request["messages"]
        .as_array()
        .map(|ms| {
            ms.iter()
                .map(|m| m["content"].as_str().map(|s| s.len() as u64 / 4).unwrap_or(0))
                .sum()
        })
        .unwrap_or(0);
    let response = serde_json::json!({
        "id": "stub",
        "object": "chat.completion",
        "model": request["model"].as_str().unwrap_or("stub"),
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop"
        }],
        "usage": {
            "prompt_tokens": prompt_tokens,
            "completion_tokens": content.len() as u64 / 4,
            "total_tokens": prompt_tokens + content.len() as u64 / 4
        }
    });
    let body = serde_json::to_vec(&response)?;
    write!(
        stream,
        "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n",
        body.len()
    )?;
    stream.write_all(&body)?;
    stream.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{complete, ChatMessage, ModelSpec, SamplingParams};

    fn spec(url: &str) -> ModelSpec {
        ModelSpec {
            name: "stub-model".into(),
            endpoint_url: url.into(),
            weights_path: String::new(),
            weights_sha256: String::new(),
            sampling: SamplingParams {
                temperature: 0.2,
                top_p: 0.95,
                max_tokens: 256,
            },
            chat_template_id: String::new(),
            context_length: 8192,
            quantization: String::new(),
            revision: String::new(),
        }
    }

    #[test]
    fn stub_round_trip_with_usage() {
        let server =
            StubServer::start(|_| r#"{"action":"list_files","args":{}}"#.to_string()).unwrap();
        let spec = spec(server.endpoint_url());
        let messages = vec![ChatMessage::new("user", "inspect the workspace please")];
        let (text, usage) = complete(&spec, &messages, 0).unwrap();
        assert_eq!(text, r#"{"action":"list_files","args":{}}"#);
        assert!(usage.prompt_tokens > 0);
        // identical inputs yield identical replies
        let (text2, _) = complete(&spec, &messages, 0).unwrap();
        assert_eq!(text, text2);
    }
}
