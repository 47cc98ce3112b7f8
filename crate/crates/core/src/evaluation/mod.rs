//! Quality metrics for generated channels: peak base-station beam index,
//! peak-index difference CDFs, NMSE, and CSV export of metric rows.

use crate::augment::ChannelDataset;
use crate::channelsim::BeamspaceChannel;
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

/// Column index of the maximum-magnitude beamspace entry; the proxy for the
/// dominant transmit beam direction. Ties break toward the lowest index.
pub fn peak_bs_index(hv: &BeamspaceChannel) -> Result<usize> {
    if hv.0.max_abs() == 0.0 {
        return Err(Error::InvalidArgument("peak index of zero matrix".into()));
    }
    let (n_r, n_t) = (hv.n_r(), hv.n_t());
    let mut best = (0usize, f64::NEG_INFINITY);
    for j in 0..n_t {
        let mut col_max = 0.0f64;
        for i in 0..n_r {
            col_max = col_max.max(hv.0.get(i, j).norm_sqr());
        }
        if col_max > best.1 {
            best = (j, col_max);
        }
    }
    Ok(best.0)
}

/// Peak index difference `D = |i_a - i_b|`.
pub fn peak_diff(a: &BeamspaceChannel, b: &BeamspaceChannel) -> Result<usize> {
    if a.n_r() != b.n_r() || a.n_t() != b.n_t() {
        return Err(Error::Shape(format!(
            "peak_diff on {}x{} vs {}x{}",
            a.n_r(),
            a.n_t(),
            b.n_r(),
            b.n_t()
        )));
    }
    let ia = peak_bs_index(a)? as i64;
    let ib = peak_bs_index(b)? as i64;
    Ok((ia - ib).unsigned_abs() as usize)
}

/// Empirical CDF of the peak index difference over aligned datasets.
#[derive(Clone, Debug)]
pub struct PeakCdf {
    pub d_values: Vec<usize>,
    pub cdf: Vec<f64>,
}

impl PeakCdf {
    /// P(D <= d); saturates at the last tabulated value.
    pub fn at(&self, d: usize) -> f64 {
        match self.d_values.iter().position(|&v| v >= d) {
            Some(i) if self.d_values[i] == d => self.cdf[i],
            Some(i) if i > 0 => self.cdf[i - 1],
            Some(_) => 0.0,
            None => *self.cdf.last().unwrap_or(&0.0),
        }
    }
}

/// CDF of per-record D between datasets aligned by position.
pub fn peak_cdf(aug: &ChannelDataset, reference: &ChannelDataset, d_max: usize) -> Result<PeakCdf> {
    if aug.len() != reference.len() {
        return Err(Error::InvalidArgument(format!(
            "datasets misaligned: {} vs {} records",
            aug.len(),
            reference.len()
        )));
    }
    for (ra, rb) in aug.records.iter().zip(&reference.records) {
        if ra.position != rb.position {
            return Err(Error::InvalidArgument(
                "datasets misaligned: positions differ".into(),
            ));
        }
    }
    let mut counts = vec![0usize; d_max + 1];
    for (ra, rb) in aug.records.iter().zip(&reference.records) {
        let d = peak_diff(&ra.channel, &rb.channel)?;
        if d <= d_max {
            counts[d] += 1;
        }
    }
    let n = aug.len() as f64;
    let mut cum = 0usize;
    let mut cdf = Vec::with_capacity(d_max + 1);
    for c in &counts {
        cum += c;
        cdf.push(cum as f64 / n);
    }
    Ok(PeakCdf {
        d_values: (0..=d_max).collect(),
        cdf,
    })
}

/// Normalized mean squared error `||h_hat - h_ref||^2 / ||h_ref||^2`
/// (reference-normalized form).
pub fn nmse(h_hat: &BeamspaceChannel, h_ref: &BeamspaceChannel) -> Result<f64> {
    if h_hat.n_r() != h_ref.n_r() || h_hat.n_t() != h_ref.n_t() {
        return Err(Error::Shape(format!(
            "nmse on {}x{} vs {}x{}",
            h_hat.n_r(),
            h_hat.n_t(),
            h_ref.n_r(),
            h_ref.n_t()
        )));
    }
    let ref_pow: f64 = h_ref.0.data().iter().map(|v| v.norm_sqr()).sum();
    if ref_pow == 0.0 {
        return Err(Error::InvalidArgument("nmse with zero reference".into()));
    }
    let err_pow: f64 = h_hat
        .0
        .data()
        .iter()
        .zip(h_ref.0.data())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(err_pow / ref_pow)
}

pub fn nmse_db(h_hat: &BeamspaceChannel, h_ref: &BeamspaceChannel) -> Result<f64> {
    Ok(10.0 * nmse(h_hat, h_ref)?.log10())
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// One row of the exported metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub metric: String,
    pub x: f64,
    pub value: f64,
    pub n_samples: usize,
    pub seed: u64,
}

const CSV_HEADER: &str = "method,metric,x,value,n_samples,seed";

/// UTF-8 CSV with a header row; one row per (method, x) pair.
pub fn export_metrics(rows: &[MetricRow], path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method, r.metric, r.x, r.value, r.n_samples, r.seed
        )
        .expect("writing to string cannot fail");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parse a file written by [`export_metrics`].
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        other => {
            return Err(Error::Format(format!(
                "bad csv header: {:?}",
                other.unwrap_or("")
            )))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 6 {
            return Err(Error::Format(format!(
                "row {} has {} columns, expected 6",
                i + 2,
                parts.len()
            )));
        }
        let parse_f = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::Format(format!("row {}: {e}", i + 2)))
        };
        rows.push(MetricRow {
            method: parts[0].to_string(),
            metric: parts[1].to_string(),
            x: parse_f(parts[2])?,
            value: parse_f(parts[3])?,
            n_samples: parts[4]
                .parse()
                .map_err(|e| Error::Format(format!("row {}: {e}", i + 2)))?,
            seed: parts[5]
                .parse()
                .map_err(|e| Error::Format(format!("row {}: {e}", i + 2)))?,
        });
    }
    Ok(rows)
}
