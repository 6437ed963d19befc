//! Monte-Carlo block-error-rate estimation and threshold-SNR extraction.
//!
//! Any coding scheme that can carry k bits over an AWGN channel implements
//! [`LinkSystem`]; the estimator drives autoencoder and polar baselines
//! identically.

use std::collections::BTreeMap;

use crate::channel::snr_db_to_sigma;
use crate::error::{Error, Result};
use crate::fmt::format_sig;
use crate::matrix::Matrix;
use crate::rng::{derive_seed, SplitRng};

/// A bits-in/bits-out transmission system at a given noise level.
pub trait LinkSystem {
    /// Information bits per block.
    fn info_bits(&self) -> usize;

    /// Transmits a batch of messages (rows of 0/1) and returns the decoded
    /// bits, same shape. Deterministic given the rng state.
    fn transmit(&mut self, bits: &Matrix, sigma: f64, rng: &mut SplitRng) -> Result<Matrix>;

    /// Blocks simulated per batch inside the estimator.
    fn preferred_batch(&self) -> usize {
        256
    }
}

/// Hard decision: probability strictly above one half maps to bit 1.
pub fn hard_decision(probs: &Matrix) -> Matrix {
    probs.map(|p| if p > 0.5 { 1.0 } else { 0.0 })
}

/// Monte-Carlo stopping rule.
#[derive(Clone, Copy, Debug)]
pub struct StopRule {
    pub min_block_errors: u64,
    pub max_blocks: u64,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_block_errors: 100,
            max_blocks: 10_000_000,
        }
    }
}

/// One estimated BLER point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlerPoint {
    pub snr_db: f64,
    pub blocks: u64,
    pub block_errors: u64,
}

impl BlerPoint {
    pub fn bler(&self) -> f64 {
        if self.blocks == 0 {
            0.0
        } else {
            self.block_errors as f64 / self.blocks as f64
        }
    }
}

/// BLER points in ascending SNR plus run metadata.
#[derive(Clone, Debug, Default)]
pub struct BlerCurve {
    pub points: Vec<BlerPoint>,
    pub metadata: BTreeMap<String, String>,
}

impl BlerCurve {
    /// Points must ascend strictly in SNR, with no duplicates.
    pub fn validate(&self) -> Result<()> {
        for w in self.points.windows(2) {
            if w[1].snr_db <= w[0].snr_db {
                return Err(Error::InvalidArgument(format!(
                    "curve SNRs not strictly increasing: {} then {}",
                    w[0].snr_db, w[1].snr_db
                )));
            }
        }
        Ok(())
    }
}

/// Simulates blocks until the stop rule fires; a block errs iff any bit
/// differs after hard decision.
pub fn estimate_bler(
    system: &mut dyn LinkSystem,
    snr_db: f64,
    stop: &StopRule,
    rng: &mut SplitRng,
) -> Result<BlerPoint> {
    let k = system.info_bits();
    let sigma = snr_db_to_sigma(snr_db);
    let batch = system.preferred_batch().max(1);
    let mut blocks: u64 = 0;
    let mut block_errors: u64 = 0;
    while block_errors < stop.min_block_errors && blocks < stop.max_blocks {
        let this_batch = batch.min((stop.max_blocks - blocks) as usize);
        let mut bits = Matrix::zeros(this_batch, k);
        rng.fill_bits(bits.as_mut_slice());
        let decoded = system.transmit(&bits, sigma, rng)?;
        for r in 0..this_batch {
            let errored = bits
                .row(r)
                .iter()
                .zip(decoded.row(r))
                .any(|(&b, &d)| (b > 0.5) != (d > 0.5));
            if errored {
                block_errors += 1;
            }
        }
        blocks += this_batch as u64;
    }
    Ok(BlerPoint {
        snr_db,
        blocks,
        block_errors,
    })
}

/// One [`estimate_bler`] per grid point with per-point derived seeds, so
/// refining the grid does not perturb existing points.
pub fn bler_curve(
    system: &mut dyn LinkSystem,
    snr_grid_db: &[f64],
    stop: &StopRule,
    seed: u64,
    metadata: BTreeMap<String, String>,
) -> Result<BlerCurve> {
    let mut points = Vec::with_capacity(snr_grid_db.len());
    for (index, &snr_db) in snr_grid_db.iter().enumerate() {
        let mut rng = SplitRng::new(derive_seed(seed, index as u64));
        points.push(estimate_bler(system, snr_db, stop, &mut rng)?);
    }
    Ok(BlerCurve { points, metadata })
}

/// Threshold SNR for the target BLER by log-linear interpolation between the
/// bracketing grid points.
pub fn threshold_snr(curve: &BlerCurve, target: f64) -> Result<f64> {
    curve.validate()?;
    let unbracketed = |curve: &BlerCurve| -> Error {
        let last = curve.points.last().copied().unwrap_or(BlerPoint {
            snr_db: f64::NAN,
            blocks: 0,
            block_errors: 0,
        });
        let prev = if curve.points.len() >= 2 {
            curve.points[curve.points.len() - 2]
        } else {
            last
        };
        Error::Unbracketed {
            target,
            lo_snr_db: prev.snr_db,
            lo_bler: prev.bler(),
            hi_snr_db: last.snr_db,
            hi_bler: last.bler(),
        }
    };

    let first_at_or_below = curve.points.iter().position(|p| p.bler() <= target);
    match first_at_or_below {
        None => Err(unbracketed(curve)),
        Some(0) => {
            let p0 = &curve.points[0];
            if p0.bler() == target {
                Ok(p0.snr_db)
            } else {
                // Already below target at the lowest SNR: nothing above it.
                Err(Error::Unbracketed {
                    target,
                    lo_snr_db: p0.snr_db,
                    lo_bler: p0.bler(),
                    hi_snr_db: p0.snr_db,
                    hi_bler: p0.bler(),
                })
            }
        }
        Some(j) => {
            let hi = &curve.points[j];
            let lo = &curve.points[j - 1];
            let p1 = lo.bler();
            let p2 = hi.bler();
            // Interpolate snr against log10(BLER); p2 = 0 degenerates to lo.
            let t = (p1.log10() - target.log10()) / (p1.log10() - p2.log10());
            Ok(lo.snr_db + t * (hi.snr_db - lo.snr_db))
        }
    }
}

/// Serializes a curve: `# key=value` metadata lines, mandatory header, one
/// row per point with 12 significant digits.
pub fn curve_to_csv(curve: &BlerCurve) -> String {
    let mut out = String::new();
    for (key, value) in &curve.metadata {
        out.push_str(&format!("# {key}={value}\n"));
    }
    out.push_str("snr_db,blocks,block_errors,bler\n");
    for p in &curve.points {
        out.push_str(&format!(
            "{},{},{},{}\n",
            format_sig(p.snr_db, 12),
            p.blocks,
            p.block_errors,
            format_sig(p.bler(), 12)
        ));
    }
    out
}

pub fn curve_from_csv(text: &str) -> Result<BlerCurve> {
    let mut curve = BlerCurve::default();
    let mut saw_header = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            if let Some((k, v)) = meta.trim().split_once('=') {
                curve
                    .metadata
                    .insert(k.trim().to_string(), v.trim().to_string());
            }
            continue;
        }
        if !saw_header {
            if line != "snr_db,blocks,block_errors,bler" {
                return Err(Error::MalformedFile {
                    path: "<bler csv>".into(),
                    reason: format!("line {}: expected header, got {line:?}", lineno + 1),
                });
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::MalformedFile {
                path: "<bler csv>".into(),
                reason: format!("line {}: expected 4 fields", lineno + 1),
            });
        }
        let parse_f = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| Error::MalformedFile {
                path: "<bler csv>".into(),
                reason: format!("line {}: bad float {s:?}", lineno + 1),
            })
        };
        let parse_u = |s: &str| -> Result<u64> {
            s.parse().map_err(|_| Error::MalformedFile {
                path: "<bler csv>".into(),
                reason: format!("line {}: bad count {s:?}", lineno + 1),
            })
        };
        curve.points.push(BlerPoint {
            snr_db: parse_f(fields[0])?,
            blocks: parse_u(fields[1])?,
            block_errors: parse_u(fields[2])?,
        });
    }
    if !saw_header {
        return Err(Error::MalformedFile {
            path: "<bler csv>".into(),
            reason: "missing header row".into(),
        });
    }
    curve.validate()?;
    Ok(curve)
}
