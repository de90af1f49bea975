//! Environment server: newline-delimited JSON, one session per connection.
//!
//! Requests carry a `"cmd"` tag (`reset`, `step`, `render`, `close`); replies
//! carry a `"type"` tag (`observation`, `error`, `closed`). Requests within a
//! session are answered strictly in order. See `docs/protocol.md`.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use serde::{Deserialize, Serialize};

use crate::environment::{Episode, EpisodeConfig, StartPose, StateImage};
use crate::floorplan::{DatasetManifest, FloorplanError};
use crate::grid::{Action, GroundTruthMap, Pose};
use crate::predictor::{PredictorKind, ThresholdConfig};

pub const DEFAULT_PORT: u16 = 7777;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase", deny_unknown_fields)]
pub enum Request {
    Reset {
        map_id: String,
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default)]
        coverage_target: Option<f64>,
        #[serde(default)]
        max_steps: Option<usize>,
        #[serde(default)]
        predictor: Option<PredictorKind>,
        #[serde(default)]
        delta_free: Option<f64>,
        #[serde(default)]
        delta_obstacle: Option<f64>,
        #[serde(default)]
        agent_centered: Option<bool>,
        /// `[x, y]`; a random free cell when absent.
        #[serde(default)]
        start: Option<[usize; 2]>,
    },
    Step {
        action: u8,
    },
    Render,
    Close,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Reply {
    Observation(ObservationReply),
    Error { message: String },
    Closed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationReply {
    /// Base64 of the row-major grayscale raster.
    pub observation: String,
    /// `[height, width]`.
    pub shape: [usize; 2],
    pub step: usize,
    /// Absent on reset and render.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collided: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub newly_exposed: Option<usize>,
    pub done: bool,
    pub success: bool,
    pub coverage: f64,
    /// Agent position `[x, y]`.
    pub pose: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedImage {
    pub data: String,
    pub shape: [usize; 2],
}

pub fn encode_observation(img: &StateImage) -> EncodedImage {
    EncodedImage {
        data: B64.encode(&img.pixels),
        shape: [img.height, img.width],
    }
}

pub fn decode_observation(data: &str, shape: [usize; 2]) -> Result<StateImage, String> {
    let pixels = B64.decode(data).map_err(|e| e.to_string())?;
    let [height, width] = shape;
    if pixels.len() != width * height {
        return Err(format!("{} bytes for shape [{height}, {width}]", pixels.len()));
    }
    Ok(StateImage { width, height, pixels })
}

/// Read-only state shared by all sessions.
#[derive(Debug, Clone)]
pub struct ServerContext {
    maps: Arc<HashMap<String, Arc<GroundTruthMap>>>,
    defaults: EpisodeConfig,
}

impl ServerContext {
    pub fn new(maps: HashMap<String, Arc<GroundTruthMap>>, defaults: EpisodeConfig) -> Self {
        Self {
            maps: Arc::new(maps),
            defaults,
        }
    }

    /// Loads every map of the dataset; any unreadable map is an error.
    pub fn from_manifest(manifest: &DatasetManifest, defaults: EpisodeConfig) -> Result<Self, FloorplanError> {
        let maps = manifest
            .load_all()?
            .into_iter()
            .map(|(id, m)| (id, Arc::new(m)))
            .collect();
        Ok(Self::new(maps, defaults))
    }

    pub fn map_count(&self) -> usize {
        self.maps.len()
    }
}

/// One client's episode.
pub struct Session {
    ctx: ServerContext,
    episode: Option<Episode>,
}

impl Session {
    pub fn new(ctx: ServerContext) -> Self {
        Self { ctx, episode: None }
    }

    /// Answers one request line.
    pub fn handle_line(&mut self, line: &str) -> Reply {
        match serde_json::from_str::<Request>(line) {
            Ok(req) => self.handle(req),
            Err(e) => error(format!("malformed request: {e}")),
        }
    }

    pub fn handle(&mut self, req: Request) -> Reply {
        match req {
            Request::Reset {
                map_id,
                seed,
                coverage_target,
                max_steps,
                predictor,
                delta_free,
                delta_obstacle,
                agent_centered,
                start,
            } => {
                self.episode = None;
                let Some(gt) = self.ctx.maps.get(&map_id).cloned() else {
                    return error(format!("unknown map id {map_id:?}"));
                };
                let d = &self.ctx.defaults;
                let thresholds = match ThresholdConfig::new(
                    delta_free.unwrap_or(d.thresholds.delta_free()),
                    delta_obstacle.unwrap_or(d.thresholds.delta_obstacle()),
                ) {
                    Ok(t) => t,
                    Err(e) => return error(e.to_string()),
                };
                let cfg = EpisodeConfig {
                    seed: seed.unwrap_or(d.seed),
                    coverage_target: coverage_target.unwrap_or(d.coverage_target),
                    max_steps: max_steps.unwrap_or(d.max_steps),
                    predictor: predictor.unwrap_or_else(|| d.predictor.clone()),
                    agent_centered_rendering: agent_centered.unwrap_or(d.agent_centered_rendering),
                    thresholds,
                    ..d.clone()
                };
                let start = start.map_or(StartPose::Random, |[x, y]| StartPose::At(Pose::new(x, y)));
                match Episode::reset(gt, cfg, start) {
                    Ok((ep, img)) => {
                        let reply = observation(&ep, &img, None);
                        self.episode = Some(ep);
                        reply
                    }
                    Err(e) => error(e.to_string()),
                }
            }
            Request::Step { action } => {
                let Some(ep) = self.episode.as_mut() else {
                    return error("no active episode");
                };
                let Some(a) = Action::from_index(action) else {
                    return error(format!("action must be 0-7 (got {action})"));
                };
                match ep.step(a) {
                    Ok(out) => {
                        let mut reply = observation(ep, &out.image, Some(out.reward));
                        if let Reply::Observation(o) = &mut reply {
                            o.collided = Some(out.info.collided);
                            o.newly_exposed = Some(out.info.newly_exposed);
                        }
                        reply
                    }
                    Err(e) => error(e.to_string()),
                }
            }
            Request::Render => match &self.episode {
                Some(ep) => observation(ep, &ep.render(), None),
                None => error("no active episode"),
            },
            Request::Close => {
                self.episode = None;
                Reply::Closed
            }
        }
    }
}

fn error(message: impl Into<String>) -> Reply {
    Reply::Error {
        message: message.into(),
    }
}

fn observation(ep: &Episode, img: &StateImage, reward: Option<f64>) -> Reply {
    let enc = encode_observation(img);
    let s = ep.state();
    Reply::Observation(ObservationReply {
        observation: enc.data,
        shape: enc.shape,
        step: s.step_count,
        reward,
        collided: None,
        newly_exposed: None,
        done: s.done,
        success: s.success,
        coverage: s.exposure,
        pose: [s.pose.x, s.pose.y],
    })
}

/// Serves one session over a line stream until EOF or `close`.
pub fn serve_stream<R: BufRead, W: Write>(ctx: ServerContext, reader: R, mut writer: W) -> io::Result<()> {
    let mut session = Session::new(ctx);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = session.handle_line(&line);
        serde_json::to_writer(&mut writer, &reply)?;
        writer.write_all(b"\n")?;
        writer.flush()?;
        if reply == Reply::Closed {
            break;
        }
    }
    Ok(())
}

/// Accepts connections forever, one thread per session.
pub fn serve_listener(listener: TcpListener, ctx: ServerContext) -> io::Result<()> {
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let ctx = ctx.clone();
        thread::spawn(move || {
            let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
            log::info!("session opened: {peer}");
            if let Err(e) = serve_connection(ctx, stream) {
                log::warn!("session {peer} ended with error: {e}");
            }
            log::info!("session closed: {peer}");
        });
    }
    Ok(())
}

fn serve_connection(ctx: ServerContext, stream: TcpStream) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let reader = BufReader::new(stream.try_clone()?);
    serve_stream(ctx, reader, stream)
}
