use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("microphone index {index} out of range for {count} microphones")]
    MicOutOfRange { index: usize, count: usize },
    #[error("microphone {0} is the reference; a pair needs two distinct microphones")]
    ReferencePair(usize),
    #[error("grid resolution {resolution} deg does not divide the {span} deg span")]
    GridResolution { resolution: f64, span: f64 },
    #[error("invalid signal: {0}")]
    Signal(String),
    #[error("invalid scene: {0}")]
    Scene(String),
    #[error("{active} simultaneously active sources exceed the track count {tracks} (frame {frame})")]
    TooManySources {
        frame: usize,
        active: usize,
        tracks: usize,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("frame {frame} beyond signal end ({frames} frames)")]
    FrameOutOfRange { frame: usize, frames: usize },
    #[error("weight container: {0}")]
    Container(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("wav: {0}")]
    Wav(#[from] hound::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
