//! One-shot exchange of envelopes over TCP: each connection carries a single
//! `u32`-length-prefixed frame and is then closed.

use std::collections::HashSet;
use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::thread;
use std::time::Duration;

use crate::error::{Result, ShirError};
use crate::local::LocalSummary;
use crate::transport::envelope::{decode, read_envelope_file};

/// Refuse frames larger than this (a `p = 10⁴` envelope is about 400 MB).
pub const MAX_FRAME: usize = 1 << 30;

pub fn write_frame(w: &mut impl Write, payload: &[u8]) -> io::Result<()> {
    let len = u32::try_from(payload.len())
        .map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "frame too large"))?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

pub fn read_frame(r: &mut impl Read) -> io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame of {len} bytes exceeds limit"),
        ));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

/// Sends `envelope` to each incoming connection. Stops after `connections`
/// clients when given, otherwise serves until the listener fails.
pub fn serve_site(listener: &TcpListener, envelope: &[u8], connections: Option<usize>) -> Result<()> {
    let mut served = 0;
    for stream in listener.incoming() {
        let mut stream = stream?;
        if let Err(e) = write_frame(&mut stream, envelope) {
            log::warn!("failed to send envelope to {:?}: {e}", stream.peer_addr().ok());
        }
        drop(stream);
        served += 1;
        if connections.is_some_and(|c| served >= c) {
            break;
        }
    }
    Ok(())
}

/// Where a site's envelope comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SummarySource {
    File(PathBuf),
    Tcp(String),
}

impl SummarySource {
    /// `tcp://host:port` or a literal socket address means TCP; anything else is a path.
    pub fn parse(s: &str) -> Self {
        if let Some(rest) = s.strip_prefix("tcp://") {
            return SummarySource::Tcp(rest.to_string());
        }
        if s.parse::<SocketAddr>().is_ok() {
            return SummarySource::Tcp(s.to_string());
        }
        SummarySource::File(PathBuf::from(s))
    }

    pub fn describe(&self) -> String {
        match self {
            SummarySource::File(p) => p.display().to_string(),
            SummarySource::Tcp(a) => format!("tcp://{a}"),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CollectOptions {
    /// Extra attempts after a connection failure.
    pub retries: usize,
    pub retry_delay: Duration,
    pub timeout: Duration,
}

impl Default for CollectOptions {
    fn default() -> Self {
        Self {
            retries: 3,
            retry_delay: Duration::from_millis(200),
            timeout: Duration::from_secs(30),
        }
    }
}

fn fetch_once(addr: &str, timeout: Duration) -> Result<LocalSummary> {
    let unreachable = |message: String| ShirError::Unreachable {
        site: format!("tcp://{addr}"),
        message,
    };
    let resolved: Vec<SocketAddr> = addr
        .to_socket_addrs()
        .map_err(|e| unreachable(e.to_string()))?
        .collect();
    let target = resolved
        .first()
        .ok_or_else(|| unreachable("address resolved to nothing".into()))?;
    let mut stream =
        TcpStream::connect_timeout(target, timeout).map_err(|e| unreachable(e.to_string()))?;
    stream.set_read_timeout(Some(timeout))?;
    let frame = read_frame(&mut stream).map_err(|e| unreachable(e.to_string()))?;
    Ok(decode(&frame)?)
}

fn fetch(source: &SummarySource, opts: &CollectOptions) -> Result<LocalSummary> {
    match source {
        SummarySource::File(path) => read_envelope_file(path),
        SummarySource::Tcp(addr) => {
            let mut attempt = 0;
            loop {
                match fetch_once(addr, opts.timeout) {
                    Err(e) if e.is_retriable() && attempt < opts.retries => {
                        attempt += 1;
                        log::info!("retrying {addr} ({attempt}/{}): {e}", opts.retries);
                        thread::sleep(opts.retry_delay);
                    }
                    other => return other,
                }
            }
        }
    }
}

/// Fetches one summary per source, concurrently. Any failure aborts the whole
/// collection with an error naming the site; nothing partial is returned.
pub fn collect(sources: &[SummarySource], opts: &CollectOptions) -> Result<Vec<LocalSummary>> {
    if sources.is_empty() {
        return Err(ShirError::InvalidInput("no summary sources".into()));
    }
    let results: Vec<Result<LocalSummary>> = thread::scope(|scope| {
        let handles: Vec<_> = sources
            .iter()
            .map(|src| scope.spawn(move || fetch(src, opts)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("fetch thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(sources.len());
    for (src, res) in sources.iter().zip(results) {
        out.push(res.map_err(|e| e.at_site(src.describe()))?);
    }
    check_consistent(&out)?;
    Ok(out)
}

/// Site ids must be unique; dimension and family must agree with the first site.
pub fn check_consistent(summaries: &[LocalSummary]) -> Result<()> {
    let mut seen = HashSet::new();
    for s in summaries {
        if !seen.insert(s.site_id.as_str()) {
            return Err(ShirError::DuplicateSite(s.site_id.clone()));
        }
    }
    if let Some(first) = summaries.first() {
        for s in &summaries[1..] {
            if s.p != first.p {
                return Err(ShirError::SiteMismatch {
                    site: s.site_id.clone(),
                    reason: format!("dimension {} differs from {} at site {}", s.p, first.p, first.site_id),
                });
            }
            if s.family != first.family {
                return Err(ShirError::SiteMismatch {
                    site: s.site_id.clone(),
                    reason: format!(
                        "family {} differs from {} at site {}",
                        s.family.name(),
                        first.family.name(),
                        first.site_id
                    ),
                });
            }
        }
    }
    Ok(())
}
