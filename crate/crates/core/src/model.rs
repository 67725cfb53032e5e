//! The checkpointable model bundle: denoiser, schedule, and training
//! metadata, with the on-disk checkpoint format.
//!
//! Checkpoint layout (version 1):
//!
//! ```text
//! diffseries/checkpoint v1
//! key = value            # one per line, order fixed
//! ...
//! binary f32le <count>
//! <count * 4 bytes of little-endian f32 parameters>
//! ```
//!
//! Header floats are written with Rust's shortest round-trip formatting, so
//! loading re-parses the exact values. Parameters are stored as 32-bit
//! floats; save -> load -> save is byte-identical.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::denoiser::{Denoiser, DenoiserConfig, DenoiserParams};
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

const CHECKPOINT_TAG: &str = "diffseries/checkpoint v1";

/// Provenance of a training run, carried inside checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    /// Seed the training run was driven by.
    pub train_seed: u64,
    /// Epochs completed.
    pub epochs: usize,
    /// Mean loss of the final epoch.
    pub final_loss: f64,
    /// Empirical window scales observed during training; sampled from when
    /// synthesized windows are de-normalized.
    pub scales: Vec<f64>,
}

impl Default for TrainMeta {
    fn default() -> Self {
        Self {
            train_seed: 0,
            epochs: 0,
            final_loss: f64::NAN,
            scales: Vec::new(),
        }
    }
}

/// A trained (or initialized) diffusion model.
#[derive(Debug, Clone)]
pub struct DiffusionModel {
    /// The noise-prediction network.
    pub denoiser: Denoiser,
    /// The fixed forward-process schedule.
    pub schedule: NoiseSchedule,
    /// Linear-schedule parameters `(steps, beta_first, beta_last)` the
    /// schedule was built from; kept for exact checkpoint round trips.
    pub schedule_params: (usize, f64, f64),
    /// Training provenance.
    pub meta: TrainMeta,
}

impl DiffusionModel {
    /// Bundle a denoiser with a fresh linear schedule.
    pub fn new(
        denoiser: Denoiser,
        steps: usize,
        beta_first: f64,
        beta_last: f64,
        meta: TrainMeta,
    ) -> Result<Self> {
        Ok(Self {
            denoiser,
            schedule: NoiseSchedule::linear(steps, beta_first, beta_last)?,
            schedule_params: (steps, beta_first, beta_last),
            meta,
        })
    }

    /// Write the checkpoint file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let cfg = self.denoiser.config();
        let params = self.denoiser.params();
        let mut header = String::new();
        header.push_str(CHECKPOINT_TAG);
        header.push('\n');
        let mut kv = |k: &str, v: String| {
            header.push_str(k);
            header.push_str(" = ");
            header.push_str(&v);
            header.push('\n');
        };
        kv("window_len", cfg.window_len.to_string());
        kv("input_channels", cfg.input_channels.to_string());
        kv("residual_layers", cfg.residual_layers.to_string());
        kv("channels", cfg.channels.to_string());
        kv("time_emb_dim", cfg.time_emb_dim.to_string());
        kv(
            "skip_input_to_output",
            cfg.skip_input_to_output.to_string(),
        );
        kv("steps", self.schedule_params.0.to_string());
        kv("beta_first", format!("{}", self.schedule_params.1));
        kv("beta_last", format!("{}", self.schedule_params.2));
        kv("init_seed", params.init_seed.to_string());
        kv("train_seed", self.meta.train_seed.to_string());
        kv("epochs", self.meta.epochs.to_string());
        kv("final_loss", format!("{}", self.meta.final_loss));
        kv(
            "scales",
            self.meta
                .scales
                .iter()
                .map(|s| format!("{s}"))
                .collect::<Vec<_>>()
                .join(","),
        );
        header.push_str(&format!("binary f32le {}\n", params.values.len()));

        let mut bytes = Vec::with_capacity(header.len() + params.values.len() * 4);
        bytes.extend_from_slice(header.as_bytes());
        for v in &params.values {
            bytes.extend_from_slice(&(*v as f32).to_le_bytes());
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Read a checkpoint file back.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;

        let parse_err = |line: usize, reason: String| Error::Parse {
            path: path.display().to_string(),
            line,
            reason,
        };

        // Split the text header from the binary payload.
        let mut pos = 0;
        let mut line_no = 0;
        let mut fields = std::collections::BTreeMap::new();
        let param_count: usize;
        loop {
            let rest = &bytes[pos..];
            let nl = rest
                .iter()
                .position(|b| *b == b'\n')
                .ok_or_else(|| parse_err(line_no + 1, "truncated header".into()))?;
            let line = std::str::from_utf8(&rest[..nl])
                .map_err(|_| parse_err(line_no + 1, "header is not UTF-8".into()))?;
            pos += nl + 1;
            line_no += 1;
            if line_no == 1 {
                if line != CHECKPOINT_TAG {
                    return Err(parse_err(1, format!("unknown format tag {line:?}")));
                }
                continue;
            }
            if let Some(count) = line.strip_prefix("binary f32le ") {
                param_count = count
                    .trim()
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("bad count {count:?}")))?;
                break;
            }
            let (k, v) = line
                .split_once(" = ")
                .ok_or_else(|| parse_err(line_no, format!("expected `key = value`, got {line:?}")))?;
            fields.insert(k.to_string(), v.to_string());
        }

        let get = |k: &str| -> Result<&String> {
            fields
                .get(k)
                .ok_or_else(|| parse_err(line_no, format!("missing header field `{k}`")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad integer for `{k}`")))
        };
        let parse_u64 = |k: &str| -> Result<u64> {
            get(k)?
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad integer for `{k}`")))
        };
        let parse_f64 = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| parse_err(line_no, format!("bad float for `{k}`")))
        };

        let cfg = DenoiserConfig {
            window_len: parse_usize("window_len")?,
            input_channels: parse_usize("input_channels")?,
            residual_layers: parse_usize("residual_layers")?,
            channels: parse_usize("channels")?,
            time_emb_dim: parse_usize("time_emb_dim")?,
            skip_input_to_output: get("skip_input_to_output")?
                .parse()
                .map_err(|_| parse_err(line_no, "bad bool for `skip_input_to_output`".into()))?,
        };
        let steps = parse_usize("steps")?;
        let beta_first = parse_f64("beta_first")?;
        let beta_last = parse_f64("beta_last")?;
        let scales_raw = get("scales")?;
        let scales: Vec<f64> = if scales_raw.is_empty() {
            Vec::new()
        } else {
            scales_raw
                .split(',')
                .map(|s| {
                    s.parse()
                        .map_err(|_| parse_err(line_no, format!("bad scale value {s:?}")))
                })
                .collect::<Result<_>>()?
        };
        let meta = TrainMeta {
            train_seed: parse_u64("train_seed")?,
            epochs: parse_usize("epochs")?,
            final_loss: parse_f64("final_loss")?,
            scales,
        };

        let count = param_count;
        let payload = &bytes[pos..];
        if payload.len() != count * 4 {
            return Err(parse_err(
                line_no,
                format!(
                    "binary payload holds {} bytes, expected {}",
                    payload.len(),
                    count * 4
                ),
            ));
        }
        let mut values = Vec::with_capacity(count);
        for chunk in payload.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
        let denoiser = Denoiser::from_parts(
            cfg,
            DenoiserParams {
                values,
                init_seed: parse_u64("init_seed")?,
            },
        )?;
        DiffusionModel::new(denoiser, steps, beta_first, beta_last, meta)
    }
}

/// Write a loss-history file: the format tag, a provenance line, then one
/// `<epoch> <loss>` pair per line.
pub fn write_loss_history(
    path: impl AsRef<Path>,
    provenance: &serde_json::Value,
    losses: &[f64],
) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "diffseries/loss-history v1").unwrap();
    writeln!(out, "# config {provenance}").unwrap();
    for (i, l) in losses.iter().enumerate() {
        writeln!(out, "{} {}", i + 1, l).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
