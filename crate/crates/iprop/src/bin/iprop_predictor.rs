//! Synthetic predictor speaking the iprop-predict subprocess protocol.
//!
//! Stands in for a real classifier in tests and self-contained
//! evaluations: `region-mean` mode scores an image by the mean gray level
//! of a fixed region, `constant` mode always returns the same probability.

use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use base64::Engine;
use clap::{Parser, ValueEnum};

use iprop::metrics::AnnotationMask;
use iprop::predictor::{
    Handshake, PredictRequest, PredictResponse, SyntheticMode, SyntheticPredictor, PROTOCOL_NAME,
    PROTOCOL_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    RegionMean,
    Constant,
}

#[derive(Parser)]
#[command(name = "iprop-predictor")]
struct Args {
    #[arg(long, value_enum)]
    mode: Mode,
    /// Region mask image (nonzero = inside); required for region-mean.
    #[arg(long)]
    region: Option<PathBuf>,
    /// Fixed probability; required for constant.
    #[arg(long)]
    prob: Option<f64>,
}

fn build_predictor(args: &Args) -> Result<SyntheticPredictor, String> {
    match args.mode {
        Mode::RegionMean => {
            let path = args
                .region
                .as_ref()
                .ok_or("--region is required for region-mean mode")?;
            let bytes =
                std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
            let mask = AnnotationMask::from_image_bytes(&bytes).map_err(|e| e.to_string())?;
            Ok(SyntheticPredictor::new(SyntheticMode::RegionMean(mask)))
        }
        Mode::Constant => {
            let prob = args.prob.ok_or("--prob is required for constant mode")?;
            if !(0.0..=1.0).contains(&prob) {
                return Err(format!("--prob {prob} outside [0, 1]"));
            }
            Ok(SyntheticPredictor::new(SyntheticMode::Constant(prob)))
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    let predictor = match build_predictor(&args) {
        Ok(p) => p,
        Err(msg) => {
            eprintln!("iprop-predictor: {msg}");
            return ExitCode::FAILURE;
        }
    };

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let handshake = Handshake {
        protocol: PROTOCOL_NAME.to_owned(),
        version: PROTOCOL_VERSION,
    };
    if writeln!(out, "{}", serde_json::to_string(&handshake).unwrap()).is_err() {
        return ExitCode::FAILURE;
    }
    let _ = out.flush();

    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = match line {
            Ok(l) => l,
            Err(_) => break,
        };
        if line.trim().is_empty() {
            continue;
        }
        let response = match answer(&predictor, &line) {
            Ok(r) => r,
            Err(msg) => {
                eprintln!("iprop-predictor: {msg}");
                return ExitCode::FAILURE;
            }
        };
        if writeln!(out, "{}", serde_json::to_string(&response).unwrap()).is_err() {
            break;
        }
        let _ = out.flush();
    }
    ExitCode::SUCCESS
}

fn answer(predictor: &SyntheticPredictor, line: &str) -> Result<PredictResponse, String> {
    let request: PredictRequest =
        serde_json::from_str(line).map_err(|e| format!("bad request line: {e}"))?;
    let png = base64::engine::general_purpose::STANDARD
        .decode(&request.image)
        .map_err(|e| format!("request {}: bad base64: {e}", request.id))?;
    let image =
        iprop::imaging::decode_image(&png).map_err(|e| format!("request {}: {e}", request.id))?;
    let prob = predictor
        .score(&image)
        .map_err(|e| format!("request {}: {e}", request.id))?;
    Ok(PredictResponse {
        id: request.id,
        prob,
        argmax_class: request.class_index,
    })
}
