//! Class-balanced subsampling by dominant class.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::metrics::LabelMap;
use crate::rng;

/// The non-background class covering the most pixels (ties go to the lower
/// id), or 0 when only background and ignored pixels are present.
pub fn dominant_class(label: &LabelMap, classes: usize) -> u8 {
    let hist = label.histogram(classes);
    let mut best = (0usize, 0u8);
    for (k, &n) in hist.iter().enumerate().skip(1) {
        if n > best.0 {
            best = (n, k as u8);
        }
    }
    best.1
}

/// `ceil(fraction * count)`, treating products within rounding error of an
/// integer as that integer (0.1 * 30 is not quite 3 in binary).
pub fn stratum_quota(fraction: f64, count: usize) -> usize {
    let x = fraction * count as f64;
    let r = x.round();
    let q = if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r
    } else {
        x.ceil()
    };
    (q as usize).min(count)
}

/// Indices (sorted) of the chosen images. Each image is assigned to its
/// dominant class; per class, `ceil(fraction * n)` images are drawn uniformly
/// with an rng keyed by `(seed, class)`.
pub fn stratified_subsample(
    labels: &[&LabelMap],
    fraction: f64,
    seed: u64,
    classes: usize,
) -> Result<Vec<usize>> {
    if labels.is_empty() {
        return Err(Error::Dataset("cannot subsample an empty dataset".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::config(format!(
            "subsample fraction {fraction} outside (0, 1]"
        )));
    }
    let mut strata: Vec<Vec<usize>> = vec![Vec::new(); classes.max(1)];
    for (i, l) in labels.iter().enumerate() {
        strata[dominant_class(l, classes) as usize].push(i);
    }
    let mut chosen = Vec::new();
    for (k, mut members) in strata.into_iter().enumerate() {
        let take = stratum_quota(fraction, members.len());
        let mut rng = rng::keyed(&[rng::stream::SUBSAMPLE, seed, k as u64]);
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..take]);
    }
    chosen.sort_unstable();
    Ok(chosen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map_of(class: u8) -> LabelMap {
        let mut m = LabelMap::filled(4, 4, 0);
        m.set(0, 0, class);
        m
    }

    #[test]
    fn quota_is_exact_on_decimal_fractions() {
        assert_eq!(stratum_quota(0.1, 30), 3);
        assert_eq!(stratum_quota(0.1, 20), 2);
        assert_eq!(stratum_quota(0.1, 21), 3);
        assert_eq!(stratum_quota(0.1, 1), 1);
        assert_eq!(stratum_quota(0.1, 0), 0);
        assert_eq!(stratum_quota(0.7, 10), 7);
    }

    #[test]
    fn two_per_class() {
        let maps: Vec<LabelMap> = (0..60).map(|i| map_of(1 + (i % 3) as u8)).collect();
        let refs: Vec<&LabelMap> = maps.iter().collect();
        let pick = stratified_subsample(&refs, 0.1, 5, 4).unwrap();
        let mut per = [0; 4];
        for &i in &pick {
            per[dominant_class(&maps[i], 4) as usize] += 1;
        }
        assert_eq!(per, [0, 2, 2, 2]);
        assert_eq!(pick, stratified_subsample(&refs, 0.1, 5, 4).unwrap());
        assert_eq!(
            stratified_subsample(&refs, 1.0, 9, 4).unwrap(),
            (0..60).collect::<Vec<_>>()
        );
    }

    #[test]
    fn errors() {
        assert!(stratified_subsample(&[], 0.1, 0, 3).is_err());
        let m = map_of(1);
        assert!(stratified_subsample(&[&m], 0.0, 0, 3).is_err());
        assert!(stratified_subsample(&[&m], 1.5, 0, 3).is_err());
    }

    #[test]
    fn dominant_ignores_background() {
        let mut m = LabelMap::filled(3, 3, 0);
        m.set(0, 0, 2);
        assert_eq!(dominant_class(&m, 3), 2);
        assert_eq!(dominant_class(&LabelMap::filled(2, 2, 255), 3), 0);
    }
}
