use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{DeviceSequence, InteractionLog};
use crate::error::{Error, Result};
use crate::numerics::rng_from_seed;

/// Generator settings for a mixture of preference archetypes with
/// per-device archetype switches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub archetypes: usize,
    pub devices_per_archetype: usize,
    pub vocab_size: usize,
    pub item_clusters: usize,
    pub seq_len: usize,
    /// Mass each archetype puts on its home clusters.
    pub peakedness: f64,
    /// Home clusters per archetype. Homes are disjoint while they fit.
    pub home_clusters: usize,
    /// Probability the next event stays in the previous event's cluster.
    pub persistence: f64,
    /// Zipf exponent of item popularity inside a cluster.
    pub item_skew: f64,
    /// Fraction of devices that switch archetype once.
    pub shift_fraction: f64,
    /// Switch position range, as fractions of the sequence length.
    pub shift_window: (f64, f64),
    /// Explicit switch points per device; overrides `shift_fraction`.
    pub shift_points: Option<Vec<Vec<usize>>>,
    /// Explicit cluster preferences per archetype; overrides `peakedness`.
    pub preferences: Option<Vec<Vec<f64>>>,
    pub seed: u64,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            archetypes: 5,
            devices_per_archetype: 40,
            vocab_size: 500,
            item_clusters: 10,
            seq_len: 100,
            peakedness: 0.9,
            home_clusters: 4,
            persistence: 0.3,
            item_skew: 1.0,
            shift_fraction: 0.5,
            shift_window: (0.7, 0.9),
            shift_points: None,
            preferences: None,
            seed: 0,
        }
    }
}

/// True archetype of every event, indexed `[device][event]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchetypeLabels {
    pub per_event: Vec<Vec<u16>>,
}

impl ArchetypeLabels {
    /// Archetype at the first event of each device.
    pub fn initial(&self) -> Vec<u16> {
        self.per_event.iter().map(|l| l.first().copied().unwrap_or(0)).collect()
    }
}

impl MixtureSpec {
    pub fn device_count(&self) -> usize {
        self.archetypes * self.devices_per_archetype
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.archetypes == 0 {
            return bad("archetypes must be >= 1");
        }
        if self.archetypes > u16::MAX as usize {
            return bad("too many archetypes");
        }
        if self.devices_per_archetype == 0 || self.seq_len == 0 {
            return bad("devices_per_archetype and seq_len must be >= 1");
        }
        if self.item_clusters == 0 || self.vocab_size < self.item_clusters {
            return bad("need 1 <= item_clusters <= vocab_size");
        }
        if self.home_clusters == 0 || self.home_clusters > self.item_clusters {
            return bad("home_clusters must be in [1, item_clusters]");
        }
        if !(0.0..=1.0).contains(&self.peakedness) || !(0.0..1.0).contains(&self.persistence) {
            return bad("peakedness must be in [0,1] and persistence in [0,1)");
        }
        if !(0.0..=1.0).contains(&self.shift_fraction) {
            return bad("shift_fraction must be in [0,1]");
        }
        let (lo, hi) = self.shift_window;
        if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
            return bad("shift_window must satisfy 0 <= lo <= hi <= 1");
        }
        if !self.item_skew.is_finite() || self.item_skew < 0.0 {
            return bad("item_skew must be finite and >= 0");
        }
        if let Some(points) = &self.shift_points {
            if points.len() != self.device_count() {
                return bad("shift_points needs one entry per device");
            }
            if points.iter().flatten().any(|&p| p >= self.seq_len) {
                return bad("shift point outside sequence length");
            }
        }
        if let Some(prefs) = &self.preferences {
            if prefs.len() != self.archetypes {
                return bad("preferences needs one row per archetype");
            }
            for (a, row) in prefs.iter().enumerate() {
                if row.len() != self.item_clusters {
                    return Err(Error::Config(format!("preference row {a} has wrong length")));
                }
                if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::Config(format!("preference row {a} has a negative or non-finite entry")));
                }
                let sum: f64 = row.iter().sum();
                if sum <= 0.0 {
                    return Err(Error::Config(format!("preference row {a} sums to zero")));
                }
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(Error::Config(format!("preference row {a} sums to {sum}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// Cluster of each item: contiguous, near-equal blocks.
    pub fn item_cluster(&self, item: usize) -> usize {
        item * self.item_clusters / self.vocab_size
    }

    fn cluster_items(&self) -> Vec<Vec<u32>> {
        let mut out = vec![Vec::new(); self.item_clusters];
        for i in 0..self.vocab_size {
            out[self.item_cluster(i)].push(i as u32);
        }
        out
    }

    fn cluster_preferences(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        if let Some(p) = &self.preferences {
            return p.clone();
        }
        let c = self.item_clusters;
        let mut order: Vec<usize> = (0..c).collect();
        order.shuffle(rng);
        (0..self.archetypes)
            .map(|a| {
                let mut row = vec![(1.0 - self.peakedness) / c as f64; c];
                for h in 0..self.home_clusters {
                    row[order[(a * self.home_clusters + h) % c]] += self.peakedness / self.home_clusters as f64;
                }
                row
            })
            .collect()
    }
}

fn sample_categorical(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    // rounding fallback: last non-zero weight
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Samples a log from `spec` plus the true archetype of every event.
pub fn gen_synthetic(spec: &MixtureSpec) -> Result<(InteractionLog, ArchetypeLabels)> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let prefs = spec.cluster_preferences(&mut rng);
    let clusters = spec.cluster_items();

    // Per archetype and cluster: a private popularity order over the cluster's items.
    let item_weights: Vec<Vec<(Vec<u32>, Vec<f64>)>> = (0..spec.archetypes)
        .map(|_| {
            clusters
                .iter()
                .map(|items| {
                    let mut order = items.clone();
                    order.shuffle(&mut rng);
                    let w = (0..order.len()).map(|r| 1.0 / ((r + 1) as f64).powf(spec.item_skew)).collect();
                    (order, w)
                })
                .collect()
        })
        .collect();

    let n_dev = spec.device_count();
    let shift_points: Vec<Vec<usize>> = match &spec.shift_points {
        Some(p) => p.iter().map(|v| {
            let mut v = v.clone();
            v.sort_unstable();
            v
        }).collect(),
        None => {
            let mut shifted: Vec<usize> = (0..n_dev).collect();
            shifted.shuffle(&mut rng);
            let n_shift = (spec.shift_fraction * n_dev as f64).round() as usize;
            let mut points = vec![Vec::new(); n_dev];
            let lo = (spec.shift_window.0 * spec.seq_len as f64).floor() as usize;
            let hi = ((spec.shift_window.1 * spec.seq_len as f64).ceil() as usize).clamp(lo + 1, spec.seq_len.max(lo + 1));
            for &d in &shifted[..n_shift] {
                let p = rng.random_range(lo..hi).min(spec.seq_len - 1);
                if p > 0 {
                    points[d].push(p);
                }
            }
            points
        }
    };

    let mut devices = Vec::with_capacity(n_dev);
    let mut labels = Vec::with_capacity(n_dev);
    for (d, points) in shift_points.iter().enumerate() {
        let mut archetype = d / spec.devices_per_archetype;
        let mut items = Vec::with_capacity(spec.seq_len);
        let mut arch_seq = Vec::with_capacity(spec.seq_len);
        let mut cluster = None;
        let mut next_shift = points.iter().peekable();
        for t in 0..spec.seq_len {
            while next_shift.peek().is_some_and(|&&p| p == t) {
                next_shift.next();
                if spec.archetypes > 1 {
                    let step = rng.random_range(1..spec.archetypes);
                    archetype = (archetype + step) % spec.archetypes;
                }
            }
            let c = match cluster {
                Some(prev) if rng.random::<f64>() < spec.persistence => prev,
                _ => sample_categorical(&prefs[archetype], &mut rng),
            };
            cluster = Some(c);
            let (order, w) = &item_weights[archetype][c];
            items.push(order[sample_categorical(w, &mut rng)]);
            arch_seq.push(archetype as u16);
        }
        devices.push(DeviceSequence {
            device_id: d as u32,
            timestamps: (0..spec.seq_len as i64).collect(),
            items,
        });
        labels.push(arch_seq);
    }
    let log = InteractionLog { devices, vocab_size: spec.vocab_size, item_ids: None, device_ids: None };
    Ok((log, ArchetypeLabels { per_event: labels }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn small() -> MixtureSpec {
        MixtureSpec { devices_per_archetype: 10, seq_len: 60, vocab_size: 100, ..Default::default() }
    }

    #[test]
    fn same_seed_same_log() {
        let a = gen_synthetic(&small()).unwrap();
        let b = gen_synthetic(&small()).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic(&MixtureSpec { seed: 1, ..small() }).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn no_shifts_keeps_labels_constant() {
        let spec = MixtureSpec { shift_fraction: 0.0, ..small() };
        let (log, labels) = gen_synthetic(&spec).unwrap();
        log.validate().unwrap();
        for (d, l) in labels.per_event.iter().enumerate() {
            assert!(l.iter().all(|&a| a as usize == d / spec.devices_per_archetype));
        }
    }

    #[test]
    fn shift_fraction_half_switches_half() {
        let (_, labels) = gen_synthetic(&small()).unwrap();
        let switched = labels.per_event.iter().filter(|l| l.first() != l.last()).count();
        assert_eq!(switched, 25);
    }

    #[test]
    fn explicit_shift_points_are_honoured() {
        let mut spec = MixtureSpec { archetypes: 2, devices_per_archetype: 1, seq_len: 10, vocab_size: 20, ..Default::default() };
        spec.shift_points = Some(vec![vec![4], vec![]]);
        let (_, labels) = gen_synthetic(&spec).unwrap();
        assert_eq!(labels.per_event[0], vec![0, 0, 0, 0, 1, 1, 1, 1, 1, 1]);
        assert!(labels.per_event[1].iter().all(|&a| a == 1));
    }

    #[test]
    fn degenerate_preferences_rejected() {
        let spec = MixtureSpec {
            archetypes: 2,
            item_clusters: 2,
            preferences: Some(vec![vec![0.5, 0.5], vec![0.0, 0.0]]),
            ..small()
        };
        assert!(matches!(gen_synthetic(&spec), Err(Error::Config(_))));
        let bad_point = MixtureSpec { shift_points: Some(vec![vec![1000]; 50]), ..small() };
        assert!(gen_synthetic(&bad_point).is_err());
    }

    // Homogeneity test of cluster frequencies across device blocks. Events
    // are thinned so the Markov persistence has decayed between samples.
    #[test]
    fn single_archetype_devices_are_homogeneous() {
        let spec = MixtureSpec {
            archetypes: 1,
            devices_per_archetype: 200,
            seq_len: 100,
            shift_fraction: 0.0,
            seed: 11,
            ..Default::default()
        };
        let (log, _) = gen_synthetic(&spec).unwrap();
        let blocks = 10;
        let mut table = vec![vec![0.0f64; spec.item_clusters]; blocks];
        for (d, dev) in log.devices.iter().enumerate() {
            for item in dev.items.iter().step_by(10) {
                table[d % blocks][spec.item_cluster(*item as usize)] += 1.0;
            }
        }
        let total: f64 = table.iter().flatten().sum();
        let row: Vec<f64> = table.iter().map(|r| r.iter().sum()).collect();
        let col: Vec<f64> = (0..spec.item_clusters).map(|c| table.iter().map(|r| r[c]).sum()).collect();
        let mut stat = 0.0;
        let mut dof_cols = 0;
        for (c, &cs) in col.iter().enumerate() {
            if cs == 0.0 {
                continue;
            }
            dof_cols += 1;
            for (r, &rs) in row.iter().enumerate() {
                let e = rs * cs / total;
                stat += (table[r][c] - e).powi(2) / e;
            }
        }
        let dof = ((blocks - 1) * (dof_cols - 1)) as f64;
        let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
        assert!(p > 0.01, "chi2 {stat} dof {dof} p {p}");
    }

    #[test]
    fn peaked_archetypes_concentrate_on_homes() {
        let spec = MixtureSpec { peakedness: 1.0, persistence: 0.0, shift_fraction: 0.0, ..small() };
        let (log, _) = gen_synthetic(&spec).unwrap();
        // each device visits at most its home clusters
        for dev in &log.devices {
            let mut seen: Vec<usize> = dev.items.iter().map(|&i| spec.item_cluster(i as usize)).collect();
            seen.sort_unstable();
            seen.dedup();
            assert!(seen.len() <= spec.home_clusters);
        }
    }
}
