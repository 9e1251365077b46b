//! Label-stratified train/test assignment.

use rand::seq::SliceRandom;

use super::metadata::{CohortManifest, Split};
use crate::error::{Error, Result};
use crate::rng;

/// Number of items per class that go to the first part.
///
/// Each class gets `floor(frac·count)` or one more, with the extra units
/// handed out by largest fractional remainder (ties to the lower class) so
/// the total is `round(frac·n)`. Classes with a single member always land
/// in the first part.
pub fn stratified_allocation(counts: &[usize], frac: f64) -> Result<Vec<usize>> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::config(format!("split fraction {frac} must lie in (0, 1)")));
    }
    // snap products like 0.8·45 = 36.000000000000004 back onto the integer
    let ideal = |c: usize| {
        let v = frac * c as f64;
        if (v - v.round()).abs() < 1e-9 {
            v.round()
        } else {
            v
        }
    };
    let n: usize = counts.iter().sum();
    let total = ideal(n).round() as usize;
    let mut alloc: Vec<usize> = counts
        .iter()
        .map(|&c| if c == 1 { 1 } else { ideal(c).floor() as usize })
        .collect();
    let mut assigned: usize = alloc.iter().sum();
    let rem = |k: usize| ideal(counts[k]).fract();
    let mut order: Vec<usize> = (0..counts.len()).filter(|&k| counts[k] > 1 && rem(k) > 0.0).collect();
    order.sort_by(|&a, &b| rem(b).total_cmp(&rem(a)).then(a.cmp(&b)));
    for k in order {
        if assigned >= total {
            break;
        }
        alloc[k] += 1;
        assigned += 1;
    }
    if assigned == 0 || assigned == n {
        return Err(Error::config(format!(
            "cannot stratify class counts {counts:?} at fraction {frac}: one side would be empty"
        )));
    }
    Ok(alloc)
}

/// Stratified partition of `labels`: `true` marks the first part (train).
/// Deterministic in `seed`.
pub fn stratified_partition(labels: &[usize], num_classes: usize, frac: f64, seed: u64) -> Result<Vec<bool>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::param(format!(
                "label {y} at position {i} exceeds {num_classes} classes"
            )));
        }
        by_class[y].push(i);
    }
    let counts: Vec<usize> = by_class.iter().map(Vec::len).collect();
    let alloc = stratified_allocation(&counts, frac)?;
    let mut first = vec![false; labels.len()];
    for (k, members) in by_class.iter_mut().enumerate() {
        members.shuffle(&mut rng::stream(seed, &[0x5917, k as u64]));
        for &i in &members[..alloc[k]] {
            first[i] = true;
        }
    }
    Ok(first)
}

/// Tags every record train or test, stratified on mRS.
pub fn split_cohort(manifest: &mut CohortManifest, train_fraction: f64, seed: u64) -> Result<()> {
    let labels: Vec<usize> = manifest.records.iter().map(|r| r.mrs as usize).collect();
    let part = stratified_partition(&labels, super::metadata::NUM_MRS, train_fraction, seed)?;
    for (r, train) in manifest.records.iter_mut().zip(part) {
        r.split = if train { Split::Train } else { Split::Test };
    }
    Ok(())
}
