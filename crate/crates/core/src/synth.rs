//! Synthetic two-modality embeddings with known identities.
//!
//! Identities sit on the unit sphere; each has several sub-modes (think
//! viewpoints) and every sample is a noisy copy of one sub-mode shifted by a
//! per-modality offset plus a per-(identity, modality) gap, then normalized.
//! Sub-mode directions blend identity-specific and shared components. With
//! `sub_mode_skew > 0` each (identity, modality) pair draws its own sub-mode
//! proportions, so the two modalities see the same sub-modes in different
//! mixtures and single centroids of one identity drift apart.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Array3};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::io::parse_key_values;
use crate::model::{normalize_rows, EmbeddingSet, Modality};
use crate::rng::{stream, streams, StreamRng};

/// Candidate draws allowed per identity center before giving up.
pub const MAX_REJECTIONS: usize = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub identities: usize,
    pub samples_per_identity_per_modality: usize,
    pub sub_modes: usize,
    pub dim: usize,
    /// Minimum Euclidean distance between identity centers.
    pub identity_spread: f64,
    /// Distance of each sub-mode center from its identity center.
    pub sub_mode_spread: f64,
    /// Blend between identity-specific (0) and shared (1) sub-mode
    /// directions; shared directions act like viewpoints common to everyone.
    pub sub_mode_sharing: f64,
    /// Per-coordinate standard deviation of sample noise.
    pub noise_sigma: f64,
    /// Length of each modality's shared translation.
    pub modality_offset: f64,
    /// Length of a further translation drawn per (identity, modality), so each
    /// identity changes differently across modalities.
    pub identity_gap: f64,
    pub outlier_fraction: f64,
    /// Log-scale spread of per-modality sub-mode proportions; 0 is uniform.
    pub sub_mode_skew: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            identities: 20,
            samples_per_identity_per_modality: 12,
            sub_modes: 3,
            dim: 96,
            identity_spread: 1.0,
            sub_mode_spread: 0.7,
            sub_mode_sharing: 0.3,
            noise_sigma: 0.046,
            modality_offset: 0.3,
            identity_gap: 1.8,
            outlier_fraction: 0.0,
            sub_mode_skew: 2.0,
            seed: 0,
        }
    }
}

pub const SYNTH_KEYS: &[&str] = &[
    "identities",
    "samples_per_identity_per_modality",
    "sub_modes",
    "dim",
    "identity_spread",
    "sub_mode_spread",
    "sub_mode_sharing",
    "noise_sigma",
    "modality_offset",
    "identity_gap",
    "outlier_fraction",
    "sub_mode_skew",
    "seed",
];

fn parse<T: std::str::FromStr>(field: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::spec(field, format!("cannot parse `{value}`")))
}

impl SynthSpec {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "identities" => self.identities = parse(key, value)?,
            "samples_per_identity_per_modality" => {
                self.samples_per_identity_per_modality = parse(key, value)?
            }
            "sub_modes" => self.sub_modes = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "identity_spread" => self.identity_spread = parse(key, value)?,
            "sub_mode_spread" => self.sub_mode_spread = parse(key, value)?,
            "sub_mode_sharing" => self.sub_mode_sharing = parse(key, value)?,
            "noise_sigma" => self.noise_sigma = parse(key, value)?,
            "modality_offset" => self.modality_offset = parse(key, value)?,
            "identity_gap" => self.identity_gap = parse(key, value)?,
            "outlier_fraction" => self.outlier_fraction = parse(key, value)?,
            "sub_mode_skew" => self.sub_mode_skew = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => {
                return Err(Error::UnknownKey {
                    key: key.to_string(),
                    valid: SYNTH_KEYS.join(", "),
                })
            }
        }
        Ok(())
    }

    /// Reads `key=value` lines over the defaults and validates the result.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut spec = Self::default();
        for (_, k, v) in parse_key_values(text)? {
            spec.set(&k, &v)?;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "identities={}", self.identities);
        let _ = writeln!(
            out,
            "samples_per_identity_per_modality={}",
            self.samples_per_identity_per_modality
        );
        let _ = writeln!(out, "sub_modes={}", self.sub_modes);
        let _ = writeln!(out, "dim={}", self.dim);
        let _ = writeln!(out, "identity_spread={}", self.identity_spread);
        let _ = writeln!(out, "sub_mode_spread={}", self.sub_mode_spread);
        let _ = writeln!(out, "sub_mode_sharing={}", self.sub_mode_sharing);
        let _ = writeln!(out, "noise_sigma={}", self.noise_sigma);
        let _ = writeln!(out, "modality_offset={}", self.modality_offset);
        let _ = writeln!(out, "identity_gap={}", self.identity_gap);
        let _ = writeln!(out, "outlier_fraction={}", self.outlier_fraction);
        let _ = writeln!(out, "sub_mode_skew={}", self.sub_mode_skew);
        let _ = writeln!(out, "seed={}", self.seed);
        out
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("identities", self.identities),
            ("samples_per_identity_per_modality", self.samples_per_identity_per_modality),
            ("sub_modes", self.sub_modes),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(Error::spec(field, "must be at least 1"));
            }
        }
        if self.dim < 2 {
            return Err(Error::spec("dim", "must be at least 2"));
        }
        let positive = [
            ("identity_spread", self.identity_spread),
            ("sub_mode_spread", self.sub_mode_spread),
            ("noise_sigma", self.noise_sigma),
        ];
        for (field, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::spec(field, "must be a positive finite number"));
            }
        }
        let non_negative = [
            ("modality_offset", self.modality_offset),
            ("identity_gap", self.identity_gap),
            ("sub_mode_skew", self.sub_mode_skew),
        ];
        for (field, v) in non_negative {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::spec(field, "must be a non-negative finite number"));
            }
        }
        if !(0.0..=1.0).contains(&self.sub_mode_sharing) {
            return Err(Error::spec("sub_mode_sharing", "must lie in [0, 1]"));
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return Err(Error::spec("outlier_fraction", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Generated data together with the hidden structure behind it.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthetic {
    pub visible: EmbeddingSet,
    pub infrared: EmbeddingSet,
    /// Sub-mode index per sample, `None` for outliers.
    pub visible_sub_mode: Vec<Option<usize>>,
    pub infrared_sub_mode: Vec<Option<usize>>,
    /// Unit identity centers, `K x d`.
    pub centers: Array2<f64>,
    /// Unnormalized sub-mode centers, `K x S x d`.
    pub sub_centers: Array3<f64>,
    /// Translation per modality, visible row first.
    pub offsets: Array2<f64>,
}

fn gaussian(rng: &mut StreamRng, dim: usize) -> Array1<f64> {
    Array1::from_shape_fn(dim, |_| StandardNormal.sample(rng))
}

fn unit(rng: &mut StreamRng, dim: usize) -> Array1<f64> {
    loop {
        let v = gaussian(rng, dim);
        let n = v.dot(&v).sqrt();
        if n > 1e-12 {
            return v / n;
        }
    }
}

pub fn generate(spec: &SynthSpec) -> Result<(EmbeddingSet, EmbeddingSet)> {
    generate_detailed(spec).map(|s| (s.visible, s.infrared))
}

pub fn generate_detailed(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let mut rng = stream(spec.seed, streams::SYNTH, 0);
    let (k, s, d) = (spec.identities, spec.sub_modes, spec.dim);

    let mut centers = Array2::zeros((k, d));
    let mut placed = 0;
    let mut attempts = 0;
    while placed < k {
        attempts += 1;
        if attempts > MAX_REJECTIONS * k {
            return Err(Error::spec(
                "identity_spread",
                format!("could not place {k} centers {} apart in {d} dimensions", spec.identity_spread),
            ));
        }
        let c = unit(&mut rng, d);
        let far = (0..placed).all(|j| {
            let diff = &c - &centers.row(j);
            diff.dot(&diff).sqrt() >= spec.identity_spread
        });
        if far {
            centers.row_mut(placed).assign(&c);
            placed += 1;
        }
    }

    let shared: Vec<Array1<f64>> = (0..s).map(|_| unit(&mut rng, d)).collect();
    let mut sub_centers = Array3::zeros((k, s, d));
    for i in 0..k {
        for (j, common) in shared.iter().enumerate() {
            let own = unit(&mut rng, d);
            let mut dir = common * spec.sub_mode_sharing + &own * (1.0 - spec.sub_mode_sharing);
            let norm = dir.dot(&dir).sqrt();
            if norm > 1e-12 {
                dir /= norm;
            }
            let c = &centers.row(i) + &(dir * spec.sub_mode_spread);
            sub_centers.slice_mut(ndarray::s![i, j, ..]).assign(&c);
        }
    }

    let mut offsets = Array2::zeros((2, d));
    for m in 0..2 {
        offsets
            .row_mut(m)
            .assign(&(unit(&mut rng, d) * spec.modality_offset));
    }

    let n = spec.samples_per_identity_per_modality;
    let mut sides = Vec::with_capacity(2);
    for (m, modality) in [Modality::Visible, Modality::Infrared].into_iter().enumerate() {
        let mut raw = Array2::zeros((k * n, d));
        let mut modes = Vec::with_capacity(k * n);
        let mut ids = Vec::with_capacity(k * n);
        for i in 0..k {
            let shift = &offsets.row(m) + &(unit(&mut rng, d) * spec.identity_gap);
            let weights: Vec<f64> = (0..s)
                .map(|_| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    (spec.sub_mode_skew * g).exp()
                })
                .collect();
            let total: f64 = weights.iter().sum();
            for t in 0..n {
                let mut u = rng.random::<f64>() * total;
                let mut j = 0;
                while j + 1 < s && u >= weights[j] {
                    u -= weights[j];
                    j += 1;
                }
                let x = &sub_centers.slice(ndarray::s![i, j, ..])
                    + &shift
                    + &(gaussian(&mut rng, d) * spec.noise_sigma);
                raw.row_mut(i * n + t).assign(&x);
                modes.push(Some(j));
                ids.push(i as u32);
            }
        }
        let outliers = (spec.outlier_fraction * (k * n) as f64).round() as usize;
        for r in sample(&mut rng, k * n, outliers.min(k * n)) {
            raw.row_mut(r).assign(&unit(&mut rng, d));
            modes[r] = None;
        }
        let features = normalize_rows(raw.view())?;
        sides.push((EmbeddingSet::single(features, modality, Some(ids))?, modes));
    }
    let (infrared, infrared_sub_mode) = sides.pop().expect("two modalities");
    let (visible, visible_sub_mode) = sides.pop().expect("two modalities");
    Ok(Synthetic {
        visible,
        infrared,
        visible_sub_mode,
        infrared_sub_mode,
        centers,
        sub_centers,
        offsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate;

    #[test]
    fn default_spec_is_valid_and_round_trips() {
        let spec = SynthSpec::default();
        spec.validate().unwrap();
        assert_eq!(SynthSpec::from_text(&spec.to_text()).unwrap(), spec);
    }

    #[test]
    fn invalid_fields_are_named() {
        let err = SynthSpec::from_text("outlier_fraction=1.5\n").unwrap_err();
        assert!(matches!(err, Error::Spec { ref field, .. } if field == "outlier_fraction"));
        assert!(SynthSpec::from_text("sub_modes=0\n").is_err());
        assert!(SynthSpec::from_text("noise_sigma=0\n").is_err());
        assert!(matches!(
            SynthSpec::from_text("colour=3\n"),
            Err(Error::UnknownKey { .. })
        ));
    }

    #[test]
    fn impossible_spread_fails() {
        let spec = SynthSpec {
            identities: 10,
            dim: 2,
            identity_spread: 1.9,
            ..SynthSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Spec { .. })));
    }

    #[test]
    fn output_is_valid_and_deterministic() {
        let spec = SynthSpec {
            outlier_fraction: 0.1,
            ..SynthSpec::default()
        };
        let a = generate_detailed(&spec).unwrap();
        let b = generate_detailed(&spec).unwrap();
        assert_eq!(a, b);
        assert!(validate(&a.visible.to_raw()).is_empty());
        assert!(validate(&a.infrared.to_raw()).is_empty());
        assert_eq!(a.visible.len(), 240);
        let outliers = a.visible_sub_mode.iter().filter(|m| m.is_none()).count();
        assert_eq!(outliers, 24);
        for i in 0..a.centers.nrows() {
            for j in 0..i {
                let diff = &a.centers.row(i) - &a.centers.row(j);
                assert!(diff.dot(&diff).sqrt() >= spec.identity_spread);
            }
        }
    }

    #[test]
    fn degenerate_spec_makes_modalities_coincide() {
        let spec = SynthSpec {
            modality_offset: 0.0,
            identity_gap: 0.0,
            noise_sigma: 1e-9,
            sub_modes: 1,
            ..SynthSpec::default()
        };
        let s = generate_detailed(&spec).unwrap();
        let diff = &s.visible.features() - &s.infrared.features();
        assert!(diff.iter().all(|v| v.abs() < 1e-7));
    }

    fn cross_distance(offset: f64, seed: u64) -> f64 {
        let spec = SynthSpec {
            modality_offset: offset,
            identity_gap: 0.0,
            sub_mode_skew: 0.0,
            seed,
            ..SynthSpec::default()
        };
        let s = generate_detailed(&spec).unwrap();
        let (v, r) = (s.visible.features(), s.infrared.features());
        let n = v.nrows() as f64;
        (0..v.nrows())
            .map(|i| {
                let diff = &v.row(i) - &r.row(i);
                diff.dot(&diff).sqrt()
            })
            .sum::<f64>()
            / n
    }

    #[test]
    fn larger_offset_widens_modality_gap() {
        for seed in 0..5 {
            let mut last = cross_distance(0.0, seed);
            for offset in [0.1, 0.3, 0.6] {
                let next = cross_distance(offset, seed);
                assert!(next > last, "seed {seed} offset {offset}: {next} <= {last}");
                last = next;
            }
        }
    }
}
