//! Newline-delimited JSON over TCP.

use std::io::{self, BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream, ToSocketAddrs};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use vrvs_core::control::protocol::{decode_line, encode_line, Message};
use vrvs_core::Millis;

pub const CONNECT_TIMEOUT: Duration = Duration::from_secs(2);
pub const REPLY_TIMEOUT: Duration = Duration::from_secs(5);

pub fn now_ms() -> Millis {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as Millis)
        .unwrap_or(0)
}

pub fn resolve(addr: &str) -> io::Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, format!("{addr} resolves to nothing")))
}

pub struct LineConn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl LineConn {
    pub fn connect(addr: &str, timeout: Duration) -> io::Result<Self> {
        let stream = TcpStream::connect_timeout(&resolve(addr)?, timeout)?;
        stream.set_read_timeout(Some(REPLY_TIMEOUT))?;
        Self::new(stream)
    }

    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        Ok(Self {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    pub fn set_read_timeout(&self, t: Option<Duration>) -> io::Result<()> {
        self.writer.set_read_timeout(t)
    }

    pub fn send(&mut self, msg: &Message) -> io::Result<()> {
        self.writer.write_all(encode_line(msg).as_bytes())
    }

    /// Next raw line without the terminator; `None` at end of stream.
    pub fn recv_line(&mut self) -> io::Result<Option<String>> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Ok(None);
        }
        while line.ends_with(['\n', '\r']) {
            line.pop();
        }
        Ok(Some(line))
    }

    pub fn recv(&mut self) -> io::Result<Option<Message>> {
        loop {
            let Some(line) = self.recv_line()? else {
                return Ok(None);
            };
            if line.trim().is_empty() {
                continue;
            }
            return decode_line(&line)
                .map(Some)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e.to_string()));
        }
    }

    /// Sends one message and waits for the reply.
    pub fn request(&mut self, msg: &Message) -> io::Result<Message> {
        self.send(msg)?;
        self.recv()?
            .ok_or_else(|| io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed before reply"))
    }
}

/// One-shot request on a fresh connection.
pub fn request(addr: &str, msg: &Message) -> io::Result<Message> {
    LineConn::connect(addr, CONNECT_TIMEOUT)?.request(msg)
}
