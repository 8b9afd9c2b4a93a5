//! Dempster-Shafer fusion of one-class detector outputs.
//!
//! Detector `i` puts mass `p_i` on `{i}` and `1 - p_i` on its complement
//! `¬{i} = U \ {i}`, where `U = {1, ..., m, Λ}` and `Λ` collects all
//! anomalies. The only selection whose intersection is `{Λ}` picks every
//! complement, so the fused anomaly mass is `∏(1 - p_i) / K`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest `m` the power-set verifier will enumerate.
pub const BRUTEFORCE_MAX: usize = 12;

/// Smallest normalization accepted before declaring total conflict.
const MIN_NORMALIZER: f64 = 1e-300;

/// Mass one detector assigns to its own category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FocalMass {
    pub category: usize,
    pub p_in: f64,
}

impl FocalMass {
    pub fn new(category: usize, p_in: f64) -> Self {
        Self { category, p_in }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombinedVerdict {
    /// `P(Λ | x)`.
    pub p_anomaly: f64,
    /// Normalization `K = 1 - conflict`.
    pub k: f64,
}

fn validate(masses: &[FocalMass]) -> Result<()> {
    if masses.is_empty() {
        return Err(Error::Input("no masses to combine".into()));
    }
    for (i, a) in masses.iter().enumerate() {
        if !(0.0..=1.0).contains(&a.p_in) {
            return Err(Error::Input(format!("mass {} outside [0, 1]", a.p_in)));
        }
        if masses[..i].iter().any(|b| b.category == a.category) {
            return Err(Error::Input(format!("category {} appears twice", a.category)));
        }
    }
    Ok(())
}

/// Closed-form combination:
/// `K = ∏(1 - p_i) + Σ_i p_i ∏_{j≠i}(1 - p_j)` and `P(Λ|x) = ∏(1 - p_i) / K`.
pub fn ds_combine(masses: &[FocalMass]) -> Result<CombinedVerdict> {
    validate(masses)?;
    let m = masses.len();
    let q: Vec<f64> = masses.iter().map(|f| 1.0 - f.p_in).collect();
    // prefix[i] = ∏_{j<i} q_j, suffix[i] = ∏_{j>=i} q_j
    let mut prefix = vec![1.0; m + 1];
    let mut suffix = vec![1.0; m + 1];
    for i in 0..m {
        prefix[i + 1] = prefix[i] * q[i];
    }
    for i in (0..m).rev() {
        suffix[i] = suffix[i + 1] * q[i];
    }
    let all_out = prefix[m];
    let single_in: f64 = (0..m)
        .map(|i| masses[i].p_in * prefix[i] * suffix[i + 1])
        .sum();
    let k = all_out + single_in;
    if k.is_nan() || k <= MIN_NORMALIZER {
        return Err(Error::Conflict(k));
    }
    Ok(CombinedVerdict {
        p_anomaly: all_out / k,
        k,
    })
}

/// Literal evaluation over every selection `u_i ∈ {{i}, ¬{i}}`.
///
/// Subsets of `U` are bitmasks: bit `i` is category `i`, bit `m` is `Λ`.
/// Products whose intersection is `{Λ}` form the numerator, products whose
/// intersection is empty form the conflict, and `K = 1 - conflict`.
pub fn ds_combine_bruteforce(masses: &[FocalMass]) -> Result<CombinedVerdict> {
    validate(masses)?;
    let m = masses.len();
    if m > BRUTEFORCE_MAX {
        return Err(Error::Capacity(format!(
            "power-set enumeration supports at most {BRUTEFORCE_MAX} detectors, got {m}"
        )));
    }
    let universe: u32 = (1 << (m + 1)) - 1;
    let lambda: u32 = 1 << m;
    let mut numerator = 0.0;
    let mut conflict = 0.0;
    for selection in 0u32..(1 << m) {
        // bit i of `selection` set: detector i chose {i}; clear: ¬{i}
        let mut inter = universe;
        let mut product = 1.0;
        for (i, mass) in masses.iter().enumerate() {
            if selection >> i & 1 == 1 {
                inter &= 1 << i;
                product *= mass.p_in;
            } else {
                inter &= universe & !(1 << i);
                product *= 1.0 - mass.p_in;
            }
        }
        if inter == lambda {
            numerator += product;
        } else if inter == 0 {
            conflict += product;
        }
    }
    let k = 1.0 - conflict;
    if k.is_nan() || k <= MIN_NORMALIZER {
        return Err(Error::Conflict(k));
    }
    Ok(CombinedVerdict {
        p_anomaly: numerator / k,
        k,
    })
}

/// All-reject rule: anomalous only if no detector accepts the sample.
/// `says_normal[i]` is detector `i`'s verdict.
pub fn or_rule_decide(says_normal: &[bool]) -> bool {
    !says_normal.iter().any(|&n| n)
}

/// Smallest per-detector distance.
pub fn min_distance_score(distances: &[f64]) -> Result<f64> {
    if distances.is_empty() {
        return Err(Error::Input("no distances".into()));
    }
    if let Some(d) = distances.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(Error::Input(format!("distance {d} is not a finite non-negative value")));
    }
    Ok(distances.iter().copied().fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateMode {
    /// `∏(1 - p_i)`
    Product,
    /// `mean(1 - p_i)`
    Mean,
}

/// Aggregated rejection rate of `p_values`.
pub fn aggregate_rates(p_values: &[f64], mode: AggregateMode) -> f64 {
    match mode {
        AggregateMode::Product => p_values.iter().map(|p| 1.0 - p).product(),
        AggregateMode::Mean => {
            p_values.iter().map(|p| 1.0 - p).sum::<f64>() / p_values.len() as f64
        }
    }
}
