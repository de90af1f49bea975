//! Predictor wire protocol: newline-delimited JSON over TCP or a child's stdio.
//!
//! Request:  `{"type":"predict","width":W,"height":H,"cells":"<base64>"}` where
//! the payload is `W*H` bytes, row-major, 0 = free, 1 = obstacle, 2 = unknown.
//!
//! Reply: `{"type":"probabilities","values":"<base64>"}` carrying `W*H`
//! little-endian `f32` values, row-major, or `{"type":"error","message":"..."}`.

use std::io::{self, BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Predictor, PredictorError, ProbabilityGrid};
use crate::grid::{CellClass, ObservationGrid};

const READ_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PredictorRequest {
    Predict { width: usize, height: usize, cells: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum PredictorReply {
    Probabilities { values: String },
    Error { message: String },
}

pub fn encode_cells(obs: &ObservationGrid) -> String {
    let bytes: Vec<u8> = obs.cells().iter().map(|c| c.wire_byte()).collect();
    B64.encode(bytes)
}

pub fn decode_cells(width: usize, height: usize, payload: &str) -> Result<ObservationGrid, PredictorError> {
    let bytes = B64
        .decode(payload)
        .map_err(|e| PredictorError::Protocol(format!("cells: {e}")))?;
    if bytes.len() != width * height {
        return Err(PredictorError::Protocol(format!(
            "cells: {} bytes for a {width}x{height} grid",
            bytes.len()
        )));
    }
    let cells = bytes
        .iter()
        .map(|b| {
            CellClass::from_wire_byte(*b).ok_or_else(|| PredictorError::Protocol(format!("cells: invalid byte {b}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ObservationGrid::from_cells(width, height, cells)?)
}

pub fn encode_probabilities(p: &ProbabilityGrid) -> String {
    let mut bytes = Vec::with_capacity(p.values().len() * 4);
    for v in p.values() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    B64.encode(bytes)
}

pub fn decode_probabilities(width: usize, height: usize, payload: &str) -> Result<ProbabilityGrid, PredictorError> {
    let bytes = B64
        .decode(payload)
        .map_err(|e| PredictorError::Protocol(format!("values: {e}")))?;
    if bytes.len() != width * height * 4 {
        return Err(PredictorError::Protocol(format!(
            "values: {} bytes for a {width}x{height} grid",
            bytes.len()
        )));
    }
    let p = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    ProbabilityGrid::new(width, height, p)
}

enum Connection {
    Tcp {
        reader: BufReader<TcpStream>,
        writer: TcpStream,
    },
    Child {
        child: Child,
        reader: BufReader<ChildStdout>,
        writer: ChildStdin,
    },
}

impl Connection {
    fn open(endpoint: &str) -> io::Result<Self> {
        if let Some(cmd) = endpoint.strip_prefix("exec:") {
            let mut parts = cmd.split_whitespace();
            let program = parts
                .next()
                .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "empty exec command"))?;
            let mut child = Command::new(program)
                .args(parts)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()?;
            let writer = child.stdin.take().expect("piped stdin");
            let reader = BufReader::new(child.stdout.take().expect("piped stdout"));
            Ok(Connection::Child { child, reader, writer })
        } else {
            let stream = TcpStream::connect(endpoint)?;
            stream.set_read_timeout(Some(READ_TIMEOUT))?;
            stream.set_nodelay(true)?;
            Ok(Connection::Tcp {
                reader: BufReader::new(stream.try_clone()?),
                writer: stream,
            })
        }
    }

    fn round_trip(&mut self, line: &str) -> io::Result<String> {
        let (reader, writer): (&mut dyn BufRead, &mut dyn Write) = match self {
            Connection::Tcp { reader, writer } => (reader, writer),
            Connection::Child { reader, writer, .. } => (reader, writer),
        };
        writer.write_all(line.as_bytes())?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        let mut reply = String::new();
        if reader.read_line(&mut reply)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "connection closed"));
        }
        Ok(reply)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Connection::Child { child, .. } = self {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Client for an out-of-process predictor. One request in flight at a time;
/// the connection is opened lazily and reopened after a failure.
pub struct RemotePredictor {
    endpoint: String,
    conn: Option<Connection>,
}

impl RemotePredictor {
    pub fn new(endpoint: String) -> Self {
        Self { endpoint, conn: None }
    }

    fn remote_err(&self, message: impl Into<String>) -> PredictorError {
        PredictorError::Remote {
            endpoint: self.endpoint.clone(),
            message: message.into(),
        }
    }

    fn exchange(&mut self, line: &str) -> Result<String, PredictorError> {
        if self.conn.is_none() {
            let conn = Connection::open(&self.endpoint).map_err(|e| self.remote_err(e.to_string()))?;
            self.conn = Some(conn);
        }
        let result = self.conn.as_mut().expect("connected").round_trip(line);
        result.map_err(|e| {
            self.conn = None;
            self.remote_err(e.to_string())
        })
    }
}

impl Predictor for RemotePredictor {
    fn predict(&mut self, obs: &ObservationGrid) -> Result<ProbabilityGrid, PredictorError> {
        let req = PredictorRequest::Predict {
            width: obs.width(),
            height: obs.height(),
            cells: encode_cells(obs),
        };
        let line = serde_json::to_string(&req).expect("request serializes");
        let reply = self.exchange(&line)?;
        let reply: PredictorReply =
            serde_json::from_str(reply.trim_end()).map_err(|e| self.remote_err(format!("malformed reply: {e}")))?;
        match reply {
            PredictorReply::Probabilities { values } => {
                decode_probabilities(obs.width(), obs.height(), &values).map_err(|e| self.remote_err(e.to_string()))
            }
            PredictorReply::Error { message } => Err(self.remote_err(message)),
        }
    }
}

/// Serves `predictor` over one newline-delimited JSON stream until EOF.
pub fn serve_predictor_stream<R: BufRead, W: Write>(
    reader: R,
    mut writer: W,
    predictor: &mut dyn Predictor,
) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match serde_json::from_str::<PredictorRequest>(&line) {
            Ok(PredictorRequest::Predict { width, height, cells }) => decode_cells(width, height, &cells)
                .and_then(|obs| predictor.predict(&obs))
                .map(|p| PredictorReply::Probabilities {
                    values: encode_probabilities(&p),
                })
                .unwrap_or_else(|e| PredictorReply::Error { message: e.to_string() }),
            Err(e) => PredictorReply::Error {
                message: format!("malformed request: {e}"),
            },
        };
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::HeuristicWallExtend;
    use std::net::TcpListener;
    use std::thread;

    #[test]
    fn request_wire_shape() {
        let mut obs = ObservationGrid::unknown(2, 1);
        obs.set(0, 0, CellClass::Free);
        let req = PredictorRequest::Predict {
            width: 2,
            height: 1,
            cells: encode_cells(&obs),
        };
        let json = serde_json::to_string(&req).unwrap();
        assert_eq!(json, r#"{"type":"predict","width":2,"height":1,"cells":"AAI="}"#);
        let back = decode_cells(2, 1, "AAI=").unwrap();
        assert_eq!(back, obs);
        assert!(decode_cells(2, 1, "AAM=").is_err());
        assert!(decode_cells(3, 1, "AAI=").is_err());
    }

    #[test]
    fn probabilities_round_trip_through_f32() {
        let p = ProbabilityGrid::new(3, 1, vec![0.0, 0.25, 1.0]).unwrap();
        let back = decode_probabilities(3, 1, &encode_probabilities(&p)).unwrap();
        assert_eq!(back, p);
        let bad = B64.encode(2.0f32.to_le_bytes());
        assert!(decode_probabilities(1, 1, &bad).is_err());
        let nan = B64.encode(f32::NAN.to_le_bytes());
        assert!(decode_probabilities(1, 1, &nan).is_err());
    }

    fn spawn_server() -> String {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let reader = BufReader::new(stream.try_clone().unwrap());
            serve_predictor_stream(reader, stream, &mut HeuristicWallExtend).unwrap();
        });
        addr
    }

    #[test]
    fn remote_matches_local_over_tcp() {
        let addr = spawn_server();
        let mut obs = ObservationGrid::unknown(12, 4);
        for x in 2..7 {
            obs.set(x, 2, CellClass::Obstacle);
        }
        obs.set(9, 1, CellClass::Free);
        let local = HeuristicWallExtend.predict(&obs).unwrap();
        let mut remote = RemotePredictor::new(addr);
        let got = remote.predict(&obs).unwrap();
        // the wire carries f32
        for (a, b) in got.values().iter().zip(local.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        // second request on the same connection
        assert_eq!(remote.predict(&obs).unwrap(), got);
    }

    #[test]
    fn unreachable_endpoint_is_an_error() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        drop(listener);
        let mut remote = RemotePredictor::new(addr);
        assert!(matches!(
            remote.predict(&ObservationGrid::unknown(2, 2)),
            Err(PredictorError::Remote { .. })
        ));
    }

    #[test]
    fn malformed_reply_is_an_error() {
        // `cat` echoes the request back, which is not a valid reply
        let mut remote = RemotePredictor::new("exec:cat".to_string());
        let err = remote.predict(&ObservationGrid::unknown(2, 2)).unwrap_err();
        assert!(err.to_string().contains("malformed reply"), "{err}");
    }

    #[test]
    fn server_reports_bad_requests() {
        let input = b"not json\n{\"type\":\"predict\",\"width\":1,\"height\":1,\"cells\":\"AAAA\"}\n";
        let mut out = Vec::new();
        serve_predictor_stream(&input[..], &mut out, &mut HeuristicWallExtend).unwrap();
        let text = String::from_utf8(out).unwrap();
        let replies: Vec<PredictorReply> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(replies.len(), 2);
        assert!(replies.iter().all(|r| matches!(r, PredictorReply::Error { .. })));
    }
}
