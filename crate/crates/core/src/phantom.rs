//! Synthetic head phantoms: a bright ellipsoidal "brain" on a dark
//! background holding two dim, mirrored target ellipsoids with exact labels.

use crate::dataset::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::io::save_native;
use crate::volume::{Dims, LabelVolume, Volume};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

pub const BACKGROUND: f32 = 0.05;
pub const BRAIN: f32 = 0.6;
pub const TARGET: f32 = 0.35;

/// Brain semi-axes as a fraction of the volume extents.
const BRAIN_FRACTION: f64 = 0.42;
/// Distance of each target's nominal center from the mid-sagittal plane, as a
/// fraction of the width.
const TARGET_OFFSET: f64 = 0.22;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSpec {
    pub dims: Dims,
    pub seed: u64,
    pub noise_std: f64,
    pub pair_count: usize,
    /// Per-axis lower and upper bounds on the target semi-axes, in voxels.
    pub axes_min: [f64; 3],
    pub axes_max: [f64; 3],
    /// Maximum displacement of each target center along every axis.
    pub jitter: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [96, 96, 96],
            seed: 0,
            noise_std: 0.05,
            pair_count: 10,
            axes_min: [4.0, 6.0, 7.0],
            axes_max: [6.0, 8.0, 9.0],
            jitter: 3.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub semi_axes: [f64; 3],
}

impl Ellipsoid {
    pub fn level(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| ((p[a] - self.center[a]) / self.semi_axes[a]).powi(2)).sum()
    }

    /// Lattice points with `level ≤ 1` are inside.
    pub fn contains(&self, x: usize, y: usize, z: usize) -> bool {
        self.level([x as f64, y as f64, z as f64]) <= 1.0
    }
}

impl PhantomSpec {
    /// Default spec with target sizes and jitter scaled from the 96³
    /// reference to `dims`, axis by axis.
    pub fn for_dims(dims: Dims) -> Self {
        let base = Self::default();
        let ratio: [f64; 3] = std::array::from_fn(|a| dims[a] as f64 / base.dims[a] as f64);
        let smallest = ratio.iter().copied().fold(f64::INFINITY, f64::min);
        PhantomSpec {
            dims,
            axes_min: std::array::from_fn(|a| base.axes_min[a] * ratio[a]),
            axes_max: std::array::from_fn(|a| base.axes_max[a] * ratio[a]),
            jitter: base.jitter * smallest,
            ..base
        }
    }

    pub fn brain(&self) -> Ellipsoid {
        Ellipsoid {
            center: self.dims.map(|n| (n as f64 - 1.0) / 2.0),
            semi_axes: self.dims.map(|n| n as f64 * BRAIN_FRACTION),
        }
    }

    /// Unjittered centers of the left and right targets.
    pub fn nominal_centers(&self) -> [[f64; 3]; 2] {
        let c = self.brain().center;
        let dx = self.dims[0] as f64 * TARGET_OFFSET;
        [[c[0] - dx, c[1], c[2]], [c[0] + dx, c[1], c[2]]]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.dims.iter().any(|&n| n < 8) {
            return bad(format!("dims {:?} are too small", self.dims));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return bad(format!("noise_std must be finite and >= 0, got {}", self.noise_std));
        }
        if !(self.jitter.is_finite() && self.jitter >= 0.0) {
            return bad(format!("jitter must be finite and >= 0, got {}", self.jitter));
        }
        for a in 0..3 {
            let (lo, hi) = (self.axes_min[a], self.axes_max[a]);
            if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
                return bad(format!("semi-axis range [{lo}, {hi}] on axis {a} is invalid"));
            }
        }
        // The reach box (largest axes plus full jitter) of each target must sit
        // strictly inside the brain; the brain is convex, so its corners suffice.
        let brain = self.brain();
        let reach = self.axes_max.map(|s| s + self.jitter);
        for c in self.nominal_centers() {
            for corner in 0..8 {
                let p = std::array::from_fn(|a| {
                    let sign = if corner >> a & 1 == 0 { -1.0 } else { 1.0 };
                    c[a] + sign * reach[a]
                });
                if brain.level(p) >= 1.0 {
                    return bad(format!("target reach box around {c:?} leaves the brain"));
                }
            }
        }
        let [l, r] = self.nominal_centers();
        if l[0] + reach[0] >= r[0] - reach[0] {
            return bad("left and right targets can overlap".into());
        }
        Ok(())
    }

    /// Draws the two target ellipsoids of sample `index`.
    pub fn targets(&self, index: u64) -> [Ellipsoid; 2] {
        self.targets_with(&mut self.rng(index))
    }

    fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }

    fn targets_with(&self, rng: &mut ChaCha8Rng) -> [Ellipsoid; 2] {
        self.nominal_centers().map(|c| {
            let semi_axes = std::array::from_fn(|a| {
                let (lo, hi) = (self.axes_min[a], self.axes_max[a]);
                if lo == hi { lo } else { rng.random_range(lo..hi) }
            });
            let center = std::array::from_fn(|a| {
                let j = if self.jitter > 0.0 { rng.random_range(-self.jitter..self.jitter) } else { 0.0 };
                c[a] + j
            });
            Ellipsoid { center, semi_axes }
        })
    }
}

/// Volume plus left and right labels for sample `index`, fully determined by
/// `(spec.seed, index)`.
pub fn generate_phantom(spec: &PhantomSpec, index: u64) -> Result<(Volume, LabelVolume, LabelVolume)> {
    spec.validate()?;
    let mut rng = spec.rng(index);
    let [left, right] = spec.targets_with(&mut rng);
    let brain = spec.brain();
    let left_label = LabelVolume::from_fn(spec.dims, |x, y, z| left.contains(x, y, z))?;
    let right_label = LabelVolume::from_fn(spec.dims, |x, y, z| right.contains(x, y, z))?;
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut i = 0;
    let volume = Volume::from_fn(spec.dims, |x, y, z| {
        let base = if left_label.data()[i] == 1 || right_label.data()[i] == 1 {
            TARGET
        } else if brain.contains(x, y, z) {
            BRAIN
        } else {
            BACKGROUND
        };
        i += 1;
        let n = if spec.noise_std > 0.0 { noise.sample(&mut rng) as f32 } else { 0.0 };
        (base + n).clamp(0.0, 1.0)
    })?;
    Ok((volume, left_label, right_label))
}

/// Writes `pair_count` samples in the native format plus a `manifest.tsv`
/// assigning sample `i` to fold `i mod folds`.
pub fn export_dataset(spec: &PhantomSpec, folds: usize, dir: impl AsRef<Path>) -> Result<Manifest> {
    let dir = dir.as_ref();
    spec.validate()?;
    if folds == 0 || folds > spec.pair_count {
        return Err(Error::InvalidConfig(format!(
            "{folds} folds for {} samples",
            spec.pair_count
        )));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(spec.pair_count);
    for index in 0..spec.pair_count {
        let (volume, left, right) = generate_phantom(spec, index as u64)?;
        let id = format!("phantom_{index:03}");
        let entry = ManifestEntry {
            volume: format!("{id}.vol").into(),
            left: format!("{id}_left.vol").into(),
            right: format!("{id}_right.vol").into(),
            fold: index % folds,
            id,
        };
        save_native(&volume, dir.join(&entry.volume))?;
        save_native(&left.to_volume(), dir.join(&entry.left))?;
        save_native(&right.to_volume(), dir.join(&entry.right))?;
        entries.push(entry);
    }
    let [w, h, d] = spec.dims;
    let manifest = Manifest {
        root: dir.to_path_buf(),
        comments: vec![format!(
            "seed={} dims={w}x{h}x{d} noise_std={} folds={folds}",
            spec.seed, spec.noise_std
        )],
        entries,
    };
    manifest.write(dir.join(Manifest::FILE_NAME))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> PhantomSpec {
        PhantomSpec {
            dims: [48, 40, 44],
            axes_min: [3.0, 4.0, 4.0],
            axes_max: [4.0, 5.0, 5.0],
            jitter: 1.5,
            pair_count: 4,
            ..PhantomSpec::default()
        }
    }

    #[test]
    fn default_spec_is_valid() {
        PhantomSpec::default().validate().unwrap();
        small().validate().unwrap();
    }

    #[test]
    fn oversized_targets_are_rejected() {
        let spec = PhantomSpec { axes_max: [30.0, 8.0, 9.0], ..PhantomSpec::default() };
        assert!(matches!(spec.validate(), Err(Error::InvalidSpec(_))));
        let spec = PhantomSpec { jitter: 40.0, ..PhantomSpec::default() };
        assert!(matches!(generate_phantom(&spec, 0), Err(Error::InvalidSpec(_))));
        let spec = PhantomSpec { axes_min: [7.0, 6.0, 7.0], ..PhantomSpec::default() };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn deterministic_and_disjoint() {
        let spec = small();
        let a = generate_phantom(&spec, 3).unwrap();
        let b = generate_phantom(&spec, 3).unwrap();
        assert_eq!(a, b);
        let c = generate_phantom(&spec, 2).unwrap();
        assert_ne!(a.0, c.0);
        let (v, l, r) = a;
        assert!(l.count() > 0 && r.count() > 0);
        assert!(l.data().iter().zip(r.data()).all(|(&a, &b)| a & b == 0));
        assert!(v.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn noiseless_intensities_are_exact() {
        let spec = PhantomSpec { noise_std: 0.0, ..small() };
        let (v, l, r) = generate_phantom(&spec, 0).unwrap();
        let brain = spec.brain();
        for (i, &x) in v.data().iter().enumerate() {
            let [w, h, _] = spec.dims;
            let (px, py, pz) = (i % w, (i / w) % h, i / (w * h));
            let want = if l.data()[i] + r.data()[i] > 0 {
                TARGET
            } else if brain.contains(px, py, pz) {
                BRAIN
            } else {
                BACKGROUND
            };
            assert_eq!(x, want);
        }
    }
}
