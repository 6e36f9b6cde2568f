//! Shoebox image-source reverberation.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::Position;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Room {
    /// Length, width, height in meters.
    pub dimensions: [f64; 3],
    pub rt60: f64,
    pub enabled: bool,
    /// Array centroid in room coordinates.
    pub array_center: Position,
    #[serde(default = "default_order")]
    pub max_order: usize,
}

fn default_order() -> usize {
    2
}

pub const RT60_RANGE: (f64, f64) = (0.2, 1.3);
pub const DIMENSION_MIN: [f64; 3] = [6.0, 6.0, 2.5];
pub const DIMENSION_MAX: [f64; 3] = [10.0, 8.0, 6.0];

impl Room {
    pub fn anechoic() -> Self {
        Room {
            dimensions: [8.0, 7.0, 3.0],
            rt60: RT60_RANGE.0,
            enabled: false,
            array_center: [4.0, 3.5, 1.5],
            max_order: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        if !(RT60_RANGE.0..=RT60_RANGE.1).contains(&self.rt60) {
            return Err(CoreError::Scene(format!(
                "rt60 {} s outside [{}, {}] s",
                self.rt60, RT60_RANGE.0, RT60_RANGE.1
            )));
        }
        if self.dimensions.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(CoreError::Scene(format!("room dimensions {:?} must be positive", self.dimensions)));
        }
        if !self.contains(&self.array_center, 0.0) {
            return Err(CoreError::Scene("array center lies outside the room".into()));
        }
        Ok(())
    }

    pub fn contains(&self, p: &Position, margin: f64) -> bool {
        (0..3).all(|k| p[k] >= margin && p[k] <= self.dimensions[k] - margin)
    }

    /// Uniform wall reflection coefficient from Sabine's formula.
    pub fn reflection(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        let volume = x * y * z;
        let surface = 2.0 * (x * y + x * z + y * z);
        let alpha = (0.161 * volume / (surface * self.rt60)).min(1.0);
        (1.0 - alpha).sqrt()
    }

    /// Image sources of order `1..=max_order`: `(position, reflection count)`.
    pub fn images(&self, source: &Position) -> Vec<(Position, u32)> {
        let order = self.max_order as i64;
        let mut per_axis: [Vec<(f64, i64)>; 3] = Default::default();
        for k in 0..3 {
            for n in -order..=order {
                for u in 0..2i64 {
                    let refl = (n - u).abs() + n.abs();
                    if refl <= order {
                        let x = (1 - 2 * u) as f64 * source[k] + 2.0 * n as f64 * self.dimensions[k];
                        per_axis[k].push((x, refl));
                    }
                }
            }
        }
        let mut out = Vec::new();
        for &(x, rx) in &per_axis[0] {
            for &(y, ry) in &per_axis[1] {
                for &(z, rz) in &per_axis[2] {
                    let r = rx + ry + rz;
                    if r >= 1 && r <= order {
                        out.push(([x, y, z], r as u32));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_counts() {
        let mut room = Room::anechoic();
        room.max_order = 1;
        assert_eq!(room.images(&[1.0, 1.0, 1.0]).len(), 6);
        room.max_order = 2;
        // 6 first-order plus 18 second-order images.
        assert_eq!(room.images(&[1.0, 1.0, 1.0]).len(), 24);
    }

    #[test]
    fn first_order_mirror() {
        let room = Room::anechoic();
        let imgs = room.images(&[1.0, 2.0, 1.0]);
        assert!(imgs.iter().any(|(p, r)| *r == 1 && p == &[-1.0, 2.0, 1.0]));
        assert!(imgs.iter().any(|(p, r)| *r == 1 && p == &[15.0, 2.0, 1.0]));
    }

    #[test]
    fn reflection_shrinks_with_shorter_rt60() {
        let mut room = Room::anechoic();
        room.rt60 = 1.0;
        let long = room.reflection();
        room.rt60 = 0.3;
        assert!(room.reflection() < long);
        assert!(long < 1.0);
    }
}
