//! Loss histograms split by the corruption oracle.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::noise::CorruptionManifest;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub clean: usize,
    pub noisy: usize,
}

/// `bins` uniform bins over `[min, max]` of `losses`; the last bin is right-closed.
pub fn loss_histogram(
    losses: &[f64],
    noisy: &BTreeSet<usize>,
    bins: usize,
) -> Result<Vec<HistogramBin>> {
    if losses.is_empty() {
        return Err(Error::arg("no losses to bin"));
    }
    if bins == 0 {
        return Err(Error::arg("histogram needs at least one bin"));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::arg("non-finite loss value"));
    }
    if let Some(&id) = noisy.iter().next_back().filter(|&&id| id >= losses.len()) {
        return Err(Error::arg(format!(
            "noisy id {id} out of range for {} losses",
            losses.len()
        )));
    }
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|k| HistogramBin {
            left: lo + k as f64 * width,
            right: if k + 1 == bins {
                hi
            } else {
                lo + (k + 1) as f64 * width
            },
            clean: 0,
            noisy: 0,
        })
        .collect();
    for (id, &l) in losses.iter().enumerate() {
        let k = if width > 0.0 {
            (((l - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        if noisy.contains(&id) {
            out[k].noisy += 1;
        } else {
            out[k].clean += 1;
        }
    }
    Ok(out)
}

pub fn write_histogram<W: Write>(bins: &[HistogramBin], mut out: W, echo: &[String]) -> Result<()> {
    for line in echo {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "bin_left,bin_right,clean_count,noisy_count")?;
    for b in bins {
        writeln!(out, "{},{},{},{}", b.left, b.right, b.clean, b.noisy)?;
    }
    Ok(())
}

/// Bin `losses`, splitting counts by the manifest's flipped ids, and write the CSV to `path`.
pub fn emit_loss_histogram(
    losses: &[f64],
    manifest: &CorruptionManifest,
    bins: usize,
    path: &Path,
    echo: &[String],
) -> Result<Vec<HistogramBin>> {
    let hist = loss_histogram(losses, &manifest.flipped_ids(), bins)?;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_histogram(&hist, &mut f, echo)?;
    f.flush()?;
    Ok(hist)
}
