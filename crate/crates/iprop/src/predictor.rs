//! Subprocess predictor protocol and the built-in synthetic predictor.
//!
//! A predictor is any executable that, on startup, writes the handshake
//! line `{"protocol":"iprop-predict","version":1}` to stdout and then
//! answers newline-delimited JSON requests
//! `{"id":<u64>,"image":"<base64 png>","class_index":<u32>}` with
//! responses `{"id":<u64>,"prob":<float>,"argmax_class":<u32>}`, one
//! object per line, UTF-8, in strict request/response lockstep.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::metrics::AnnotationMask;

pub const PROTOCOL_NAME: &str = "iprop-predict";
pub const PROTOCOL_VERSION: u32 = 1;
pub const HANDSHAKE_TIMEOUT: Duration = Duration::from_secs(10);
pub const REQUEST_TIMEOUT: Duration = Duration::from_secs(30);

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub version: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictRequest {
    pub id: u64,
    /// Base64-encoded PNG bytes.
    pub image: String,
    pub class_index: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictResponse {
    pub id: u64,
    pub prob: f64,
    pub argmax_class: u32,
}

/// Anything that can score a perturbed image for a target class.
pub trait Predictor {
    fn predict_image(&mut self, image: &RgbImage, class_index: u32) -> Result<f64>;
}

/// A live child-process predictor session. One session = one child = one
/// strictly sequential request stream; any protocol violation kills the
/// session (partial resynchronization is unsafe).
pub struct PredictorSession {
    child: Child,
    stdin: ChildStdin,
    lines: mpsc::Receiver<std::io::Result<String>>,
    next_id: u64,
    dead: bool,
}

impl PredictorSession {
    /// Spawn `program args...` and wait for the handshake line.
    pub fn open(program: &str, args: &[String]) -> Result<Self> {
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| Error::Predictor(format!("cannot spawn {program:?}: {e}")))?;
        let stdin = child.stdin.take().expect("stdin was piped");
        let stdout = child.stdout.take().expect("stdout was piped");
        let (tx, lines) = mpsc::channel();
        std::thread::spawn(move || {
            let mut reader = BufReader::new(stdout);
            loop {
                let mut line = String::new();
                match reader.read_line(&mut line) {
                    Ok(0) => break,
                    Ok(_) => {
                        if tx.send(Ok(line)).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        break;
                    }
                }
            }
        });

        let mut session = Self {
            child,
            stdin,
            lines,
            next_id: 0,
            dead: false,
        };
        let line = session.read_line(HANDSHAKE_TIMEOUT).inspect_err(|_| {
            session.kill();
        })?;
        let hs: Handshake = serde_json::from_str(line.trim()).map_err(|_| {
            session.kill();
            Error::Protocol(format!("bad handshake line: {line:?}"))
        })?;
        if hs.protocol != PROTOCOL_NAME || hs.version != PROTOCOL_VERSION {
            session.kill();
            return Err(Error::Protocol(format!(
                "predictor speaks {}/{} but {PROTOCOL_NAME}/{PROTOCOL_VERSION} is required",
                hs.protocol, hs.version
            )));
        }
        Ok(session)
    }

    /// Split a command line on whitespace and open a session. No shell
    /// quoting is interpreted.
    pub fn open_command_line(command_line: &str) -> Result<Self> {
        let mut parts = command_line.split_whitespace();
        let program = parts
            .next()
            .ok_or_else(|| Error::Argument("empty predictor command line".into()))?;
        let args: Vec<String> = parts.map(str::to_owned).collect();
        Self::open(program, &args)
    }

    fn read_line(&mut self, timeout: Duration) -> Result<String> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(Error::Protocol(format!("predictor read failed: {e}"))),
            Err(mpsc::RecvTimeoutError::Timeout) => {
                Err(Error::Protocol(format!("predictor silent for {timeout:?}")))
            }
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(Error::Predictor(
                "predictor process closed its output".into(),
            )),
        }
    }

    fn kill(&mut self) {
        self.dead = true;
        let _ = self.child.kill();
        let _ = self.child.wait();
    }

    /// One lockstep request/response exchange over already-encoded PNG
    /// bytes.
    pub fn predict_png(&mut self, png_bytes: &[u8], class_index: u32) -> Result<PredictResponse> {
        if self.dead {
            return Err(Error::Predictor("predictor session is dead".into()));
        }
        self.next_id += 1;
        let request = PredictRequest {
            id: self.next_id,
            image: base64::engine::general_purpose::STANDARD.encode(png_bytes),
            class_index,
        };
        let mut line = serde_json::to_string(&request).expect("request serializes");
        line.push('\n');
        if let Err(e) = self.stdin.write_all(line.as_bytes()).and_then(|_| self.stdin.flush()) {
            self.kill();
            return Err(Error::Predictor(format!("predictor stdin closed: {e}")));
        }
        let raw = self.read_line(REQUEST_TIMEOUT).inspect_err(|_| {
            self.kill();
        })?;
        let response: PredictResponse = serde_json::from_str(raw.trim()).map_err(|_| {
            self.kill();
            Error::Protocol(format!("malformed response line: {raw:?}"))
        })?;
        if response.id != request.id {
            self.kill();
            return Err(Error::Protocol(format!(
                "response id {} does not match request id {}",
                response.id, request.id
            )));
        }
        if !(response.prob.is_finite() && (0.0..=1.0).contains(&response.prob)) {
            self.kill();
            return Err(Error::Protocol(format!(
                "prob {} outside [0, 1]",
                response.prob
            )));
        }
        Ok(response)
    }
}

impl Predictor for PredictorSession {
    fn predict_image(&mut self, image: &RgbImage, class_index: u32) -> Result<f64> {
        let png = image.encode_png()?;
        Ok(self.predict_png(&png, class_index)?.prob)
    }
}

impl Drop for PredictorSession {
    fn drop(&mut self) {
        self.kill();
    }
}

/// Behavior of the bundled synthetic predictor.
#[derive(Debug, Clone)]
pub enum SyntheticMode {
    /// prob = mean of (gray-level / 255) over the region, where gray-level
    /// of an RGB pixel is the channel mean.
    RegionMean(AnnotationMask),
    /// Fixed probability for every request.
    Constant(f64),
}

/// In-process synthetic predictor; the `iprop-predictor` binary wraps this
/// same logic behind the subprocess protocol.
#[derive(Debug, Clone)]
pub struct SyntheticPredictor {
    mode: SyntheticMode,
}

impl SyntheticPredictor {
    pub fn new(mode: SyntheticMode) -> Self {
        Self { mode }
    }

    pub fn score(&self, image: &RgbImage) -> Result<f64> {
        match &self.mode {
            SyntheticMode::Constant(p) => Ok(*p),
            SyntheticMode::RegionMean(region) => {
                if (region.height(), region.width()) != (image.height(), image.width()) {
                    return Err(Error::Argument(format!(
                        "region mask is {}x{} but image is {}x{}",
                        region.height(),
                        region.width(),
                        image.height(),
                        image.width()
                    )));
                }
                let mut sum = 0.0f64;
                let mut count = 0usize;
                for r in 0..image.height() {
                    for c in 0..image.width() {
                        if region.contains(r, c) {
                            let [red, green, blue] = image.pixel(r, c);
                            sum += (red as f64 + green as f64 + blue as f64) / 3.0;
                            count += 1;
                        }
                    }
                }
                if count == 0 {
                    return Err(Error::Argument("region mask is empty".into()));
                }
                Ok(sum / count as f64 / 255.0)
            }
        }
    }
}

impl Predictor for SyntheticPredictor {
    fn predict_image(&mut self, image: &RgbImage, _class_index: u32) -> Result<f64> {
        self.score(image)
    }
}
