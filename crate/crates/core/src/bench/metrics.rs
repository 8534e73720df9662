use crate::error::{Error, Result};

/// Baseline time over accelerated time.
pub fn measure_speedup(baseline_ns: u64, s4c_ns: u64) -> Result<f64> {
    if baseline_ns == 0 || s4c_ns == 0 {
        return Err(Error::Measurement(format!("zero duration (baseline {baseline_ns} ns, s4c {s4c_ns} ns)")));
    }
    Ok(baseline_ns as f64 / s4c_ns as f64)
}

/// Speedup per gigabyte of extra memory.
pub fn efficiency_ratio(accel: f64, extra_memory_gb: f64) -> Result<f64> {
    if !(extra_memory_gb > 0.0) || !extra_memory_gb.is_finite() {
        return Err(Error::arg(format!("extra memory {extra_memory_gb} GB must be positive")));
    }
    Ok(accel / extra_memory_gb)
}

/// Median of a non-empty sample; the mean of the middle pair when even.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Measurement("median of no samples".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}

pub fn median_u64(values: &[u64]) -> Result<u64> {
    if values.is_empty() {
        return Err(Error::Measurement("median of no samples".into()));
    }
    let mut v = values.to_vec();
    v.sort_unstable();
    let m = v.len() / 2;
    Ok(if v.len() % 2 == 1 { v[m] } else { (v[m - 1] + v[m]) / 2 })
}
