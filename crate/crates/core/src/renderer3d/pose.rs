use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::transform::Interval;

/// One camera/object configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub camera_distance: f64,
    pub xy_translation: (f64, f64),
    /// Unit quaternion `[w, x, y, z]`.
    pub rotation: [f64; 4],
    pub background: [f64; 3],
}

impl Pose {
    /// Unrotated, centred object viewed from `camera_distance`.
    pub fn front(camera_distance: f64, background: [f64; 3]) -> Self {
        Self {
            camera_distance,
            xy_translation: (0.0, 0.0),
            rotation: [1.0, 0.0, 0.0, 0.0],
            background,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RotationRange {
    /// Uniform over all rotations.
    Any,
    /// Always this unit quaternion `[w, x, y, z]`.
    Fixed([f64; 4]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pose3DConfig {
    pub camera_distance: Interval,
    /// Applied to x and y independently.
    pub translation: Interval,
    pub rotation: RotationRange,
    /// Per-channel ranges, sampled independently.
    pub background: [Interval; 3],
}

impl Pose3DConfig {
    /// The pose ranges used for the simulated 3D examples.
    pub fn standard() -> Self {
        Self {
            camera_distance: Interval::new(2.5, 3.0),
            translation: Interval::new(-0.05, 0.05),
            rotation: RotationRange::Any,
            background: [Interval::new(0.1, 1.0); 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.camera_distance.validate("camera_distance")?;
        self.translation.validate("xy_translation")?;
        for b in &self.background {
            b.validate("background")?;
            if b.min < 0.0 || b.max > 1.0 {
                return Err(Error::Config("background must lie in [0, 1]".into()));
            }
        }
        if self.camera_distance.min <= 0.0 {
            return Err(Error::Config("camera_distance must be positive".into()));
        }
        if let RotationRange::Fixed(q) = self.rotation {
            let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (n - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("rotation quaternion has norm {n}")));
            }
        }
        Ok(())
    }
}

/// Uniformly distributed rotation: a normalised 4D standard Gaussian.
pub fn random_unit_quaternion(rng: &mut StreamRng) -> [f64; 4] {
    loop {
        let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
        let n = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-12 {
            return q.map(|v| v / n);
        }
    }
}

/// Draw order: distance, translation x, translation y, rotation, background
/// r, g, b.
pub fn sample_pose(cfg: &Pose3DConfig, rng: &mut StreamRng) -> Pose {
    let camera_distance = cfg.camera_distance.sample(rng);
    let xy_translation = (cfg.translation.sample(rng), cfg.translation.sample(rng));
    let rotation = match cfg.rotation {
        RotationRange::Any => random_unit_quaternion(rng),
        RotationRange::Fixed(q) => q,
    };
    let background = [
        cfg.background[0].sample(rng),
        cfg.background[1].sample(rng),
        cfg.background[2].sample(rng),
    ];
    Pose {
        camera_distance,
        xy_translation,
        rotation,
        background,
    }
}
