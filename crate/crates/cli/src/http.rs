//! Blocking HTTP transport for the summary endpoint.

use std::io;
use std::time::Duration;

use uxfeedback::summarize::{Transport, TransportError};

pub struct UreqTransport;

fn is_timeout(e: &ureq::Transport) -> bool {
    let mut src: Option<&(dyn std::error::Error + 'static)> = std::error::Error::source(e);
    while let Some(s) = src {
        if let Some(io) = s.downcast_ref::<io::Error>() {
            if matches!(
                io.kind(),
                io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock
            ) {
                return true;
            }
        }
        src = s.source();
    }
    e.to_string().contains("timed out")
}

impl Transport for UreqTransport {
    fn post_json(
        &self,
        url: &str,
        body: &str,
        timeout: Duration,
    ) -> Result<String, TransportError> {
        let agent = ureq::AgentBuilder::new().timeout(timeout).build();
        match agent
            .post(url)
            .set("Content-Type", "application/json")
            .send_string(body)
        {
            Ok(resp) => resp.into_string().map_err(|e| {
                if matches!(
                    e.kind(),
                    io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock
                ) {
                    TransportError::Timeout
                } else {
                    TransportError::Other(e.to_string())
                }
            }),
            Err(ureq::Error::Status(code, resp)) => Err(TransportError::Status(
                code,
                resp.into_string().unwrap_or_default(),
            )),
            Err(ureq::Error::Transport(t)) if is_timeout(&t) => Err(TransportError::Timeout),
            Err(ureq::Error::Transport(t)) => Err(TransportError::Other(t.to_string())),
        }
    }
}
