//! Central finite-difference oracle for hand-derived gradients.
//!
//! For each checked coordinate `i` the numerical derivative is
//! `(f(x + eps·e_i) - f(x - eps·e_i)) / 2eps` and the error is
//! `|a - n| / max(|a|, |n|, 1e-8)`.
//!
//! Piecewise-linear layers (relu, max-pool) are handled by the kink filter:
//! the function reports an activation `pattern` fingerprint alongside its
//! value, and a coordinate whose `±eps` probes land on a different pattern
//! than the base point straddles a non-differentiability and is skipped.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{FgcnnError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Probe {
    pub value: f64,
    /// Fingerprint of every discrete branch taken (relu signs, pool argmax).
    pub pattern: u64,
}

impl Probe {
    pub fn smooth(value: f64) -> Self {
        Probe { value, pattern: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Check at most this many coordinates, sampled without replacement.
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_coord: Option<usize>,
    pub checked: usize,
    pub skipped_kinks: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Explicit kink rule for elementwise piecewise-linear maps: skip inputs
/// within `10·eps` of the break point at zero.
pub fn near_kink(x: f64, eps: f64) -> bool {
    x.abs() < 10.0 * eps
}

pub fn grad_check<F>(
    f: F,
    point: &[f64],
    analytic: &[f64],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Probe,
{
    grad_check_filtered(f, point, analytic, opts, |_| false)
}

/// As [`grad_check`], additionally skipping every coordinate for which
/// `skip(i)` holds.
pub fn grad_check_filtered<F, S>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    opts: &GradCheckOptions,
    skip: S,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> Probe,
    S: Fn(usize) -> bool,
{
    if point.len() != analytic.len() {
        return Err(FgcnnError::shape(
            "grad_check",
            format!("point {} vs analytic {}", point.len(), analytic.len()),
        ));
    }
    let coords: Vec<usize> = match opts.max_coords {
        Some(n) if n < point.len() => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut picked = sample(&mut rng, point.len(), n).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..point.len()).collect(),
    };

    let base = f(point);
    if !base.value.is_finite() {
        return Err(FgcnnError::NonFinite {
            context: "grad_check base point".into(),
            index: 0,
        });
    }
    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_coord: None,
        checked: 0,
        skipped_kinks: 0,
    };
    for &i in &coords {
        if skip(i) {
            report.skipped_kinks += 1;
            continue;
        }
        let orig = x[i];
        x[i] = orig + opts.eps;
        let plus = f(&x);
        x[i] = orig - opts.eps;
        let minus = f(&x);
        x[i] = orig;
        if !plus.value.is_finite() || !minus.value.is_finite() || !analytic[i].is_finite() {
            return Err(FgcnnError::NonFinite {
                context: format!("grad_check coordinate {i}"),
                index: i,
            });
        }
        if plus.pattern != base.pattern || minus.pattern != base.pattern {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus.value - minus.value) / (2.0 * opts.eps);
        let err = relative_error(analytic[i], numeric);
        report.checked += 1;
        if report.worst_coord.is_none() || err > report.max_rel_error {
            report.max_rel_error = err;
            report.worst_coord = Some(i);
        }
    }
    Ok(report)
}

/// Order-sensitive fingerprint for the kink filter.
#[derive(Debug, Clone, Copy)]
pub struct PatternHasher(u64);

impl Default for PatternHasher {
    fn default() -> Self {
        PatternHasher(0xcbf2_9ce4_8422_2325)
    }
}

impl PatternHasher {
    pub fn push(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    pub fn push_bool(&mut self, b: bool) {
        self.push(u64::from(b));
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}
