//! Foot–terrain contact laws for rigid ground and yielding sand.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::limb::GroundForce;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Terrain {
    Solid,
    Sand,
}

impl Terrain {
    pub const ALL: [Terrain; 2] = [Terrain::Solid, Terrain::Sand];

    pub fn as_str(&self) -> &'static str {
        match self {
            Terrain::Solid => "solid",
            Terrain::Sand => "sand",
        }
    }

    /// Binary label used by the GRF network (sand = 1).
    pub fn label(&self) -> f64 {
        match self {
            Terrain::Solid => 0.0,
            Terrain::Sand => 1.0,
        }
    }

    pub fn from_label(label: f64) -> Self {
        if label >= 0.5 {
            Terrain::Sand
        } else {
            Terrain::Solid
        }
    }
}

impl fmt::Display for Terrain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Terrain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "solid" | "0" => Ok(Terrain::Solid),
            "sand" | "1" => Ok(Terrain::Sand),
            other => Err(Error::InvalidParam(format!("unknown terrain '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TerrainModel {
    pub kind: Terrain,
    /// N/m
    pub normal_stiffness: f64,
    /// N·s/m
    pub normal_damping: f64,
    pub friction_coefficient: f64,
    /// Viscous slip coefficient before friction saturation, N·s/m.
    pub tangential_damping: f64,
    /// Elastic compression the sand carries before it starts to yield, m.
    /// Zero for solid ground.
    pub yield_depth: f64,
    /// Post-yield loading stiffness as a fraction of `normal_stiffness`.
    /// Unloading and reloading below the previous peak use the full
    /// stiffness, so every yield excursion dissipates energy.
    pub residual_stiffness_ratio: f64,
}

impl TerrainModel {
    pub fn solid() -> Self {
        Self {
            kind: Terrain::Solid,
            normal_stiffness: 6.0e4,
            normal_damping: 600.0,
            friction_coefficient: 0.8,
            tangential_damping: 1500.0,
            yield_depth: 0.0,
            residual_stiffness_ratio: 1.0,
        }
    }

    pub fn sand() -> Self {
        Self {
            kind: Terrain::Sand,
            normal_stiffness: 4.0e4,
            normal_damping: 900.0,
            friction_coefficient: 0.45,
            tangential_damping: 900.0,
            yield_depth: 0.006,
            residual_stiffness_ratio: 0.35,
        }
    }

    pub fn preset(kind: Terrain) -> Self {
        match kind {
            Terrain::Solid => Self::solid(),
            Terrain::Sand => Self::sand(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.normal_stiffness > 0.0 && self.normal_damping > 0.0) {
            return Err(Error::InvalidParam("terrain stiffness and damping must be > 0".into()));
        }
        if !(self.friction_coefficient >= 0.0 && self.tangential_damping >= 0.0) {
            return Err(Error::InvalidParam("terrain friction terms must be >= 0".into()));
        }
        if !(self.yield_depth >= 0.0) {
            return Err(Error::InvalidParam("terrain.yield_depth must be >= 0".into()));
        }
        if self.kind == Terrain::Solid && self.yield_depth != 0.0 {
            return Err(Error::InvalidParam("solid terrain must have zero yield depth".into()));
        }
        if !(self.residual_stiffness_ratio > 0.0 && self.residual_stiffness_ratio <= 1.0) {
            return Err(Error::InvalidParam(
                "terrain.residual_stiffness_ratio must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    fn hardening_modulus(&self) -> f64 {
        let r = self.residual_stiffness_ratio;
        if r >= 1.0 {
            f64::INFINITY
        } else {
            self.normal_stiffness * r / (1.0 - r)
        }
    }

    /// Contact force for the given foot kinematics. The plastic state is the
    /// permanent depression left by the current footfall.
    pub fn contact_force(&self, kin: &ContactKinematics, plastic: PlasticState) -> (GroundForce, PlasticState) {
        let mut sinkage = plastic.sinkage;
        if kin.penetration <= 0.0 {
            // Foot is clear of the undisturbed surface: the next footfall
            // lands on fresh ground.
            return (GroundForce::ZERO, PlasticState::default());
        }
        let k = self.normal_stiffness;
        if self.kind == Terrain::Sand {
            let hardening = self.hardening_modulus();
            let trial = k * (kin.penetration - sinkage);
            let yield_force = k * self.yield_depth + hardening * sinkage;
            if trial > yield_force && hardening.is_finite() {
                sinkage += (trial - yield_force) / (k + hardening);
            }
        }
        let compression = kin.penetration - sinkage;
        if compression <= 0.0 {
            return (GroundForce::ZERO, PlasticState { sinkage });
        }
        let fz = (k * compression + self.normal_damping * kin.penetration_rate).max(0.0);
        let limit = self.friction_coefficient * fz;
        let fx = (kin.load_direction * fz - self.tangential_damping * kin.slip_velocity).clamp(-limit, limit);
        (GroundForce::new(fx, fz), PlasticState { sinkage })
    }
}

/// Foot motion relative to the undisturbed terrain surface.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactKinematics {
    /// Depth below the surface, m (negative when above it).
    pub penetration: f64,
    pub penetration_rate: f64,
    /// Foot velocity along the surface relative to the ground, m/s.
    pub slip_velocity: f64,
    /// Horizontal-to-vertical ratio of the reaction the loaded body asks of
    /// the ground before friction limits it (zero for a vertical reaction).
    pub load_direction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlasticState {
    pub sinkage: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Work done on the terrain over a slow press-and-release cycle, and the
    /// part of it attributable to viscous damping.
    fn cycle_work(model: &TerrainModel, depth: f64, period: f64) -> (f64, f64) {
        let steps = 200_000;
        let dt = period / steps as f64;
        let mut plastic = PlasticState::default();
        let (mut work, mut damping) = (0.0, 0.0);
        for i in 0..steps {
            let t = (i as f64 + 0.5) * dt;
            let w = std::f64::consts::PI / period;
            let pen = depth * (w * t).sin().powi(2) + 1e-12;
            let rate = depth * 2.0 * w * (w * t).sin() * (w * t).cos();
            let kin = ContactKinematics { penetration: pen, penetration_rate: rate, ..Default::default() };
            let (f, next) = model.contact_force(&kin, plastic);
            plastic = next;
            work += f.fz * rate * dt;
            if f.fz > 0.0 {
                damping += model.normal_damping * rate * rate * dt;
            }
        }
        (work, damping)
    }

    #[test]
    fn no_force_above_surface() {
        for model in [TerrainModel::solid(), TerrainModel::sand()] {
            let kin = ContactKinematics { penetration: -0.01, penetration_rate: -0.5, slip_velocity: 1.0, load_direction: 0.3 };
            let (f, p) = model.contact_force(&kin, PlasticState { sinkage: 0.01 });
            assert_eq!(f, GroundForce::ZERO);
            assert_eq!(p, PlasticState::default());
        }
    }

    #[test]
    fn solid_cycle_loses_only_damping_work() {
        let model = TerrainModel::solid();
        let (work, damping) = cycle_work(&model, 0.02, 2.0);
        assert!(work > 0.0);
        assert!((work - damping).abs() < 1e-3 * damping.max(1e-9) + 1e-6, "work {work} damping {damping}");
    }

    #[test]
    fn sand_cycle_dissipates_more_than_solid() {
        let solid = TerrainModel::solid();
        let sand = TerrainModel::sand();
        let (w_solid, _) = cycle_work(&solid, 0.02, 2.0);
        let (w_sand, d_sand) = cycle_work(&sand, 0.02, 2.0);
        assert!(w_sand > w_solid, "sand {w_sand} vs solid {w_solid}");
        // Plastic flow, not damping, accounts for most of the sand loss.
        assert!(w_sand - d_sand > 0.5 * w_sand);
    }

    #[test]
    fn sand_leaves_permanent_sinkage() {
        let sand = TerrainModel::sand();
        let load = ContactKinematics { penetration: 0.03, ..Default::default() };
        let (f, plastic) = sand.contact_force(&load, PlasticState::default());
        assert!(plastic.sinkage > 0.0);
        assert!(f.fz < sand.normal_stiffness * 0.03);
        let unload = ContactKinematics { penetration: plastic.sinkage * 0.99, ..load };
        let (f, after) = sand.contact_force(&unload, plastic);
        assert_eq!(f.fz, 0.0);
        assert_eq!(after, plastic);
    }

    #[test]
    fn friction_saturates() {
        let solid = TerrainModel::solid();
        let kin = ContactKinematics { penetration: 0.01, slip_velocity: -5.0, ..Default::default() };
        let (f, _) = solid.contact_force(&kin, PlasticState::default());
        assert!((f.fx - solid.friction_coefficient * f.fz).abs() < 1e-9);
        let slow = ContactKinematics { slip_velocity: 1e-3, ..kin };
        let (f, _) = solid.contact_force(&slow, PlasticState::default());
        assert!((f.fx + solid.tangential_damping * 1e-3).abs() < 1e-12);
        let leaning = ContactKinematics { slip_velocity: 0.0, load_direction: -0.2, ..kin };
        let (f, _) = solid.contact_force(&leaning, PlasticState::default());
        assert!((f.fx + 0.2 * f.fz).abs() < 1e-9);
        let steep = ContactKinematics { load_direction: -2.0, ..leaning };
        let (f, _) = TerrainModel::sand().contact_force(&steep, PlasticState::default());
        assert!((f.fx + TerrainModel::sand().friction_coefficient * f.fz).abs() < 1e-9);
    }

    #[test]
    fn solid_with_yield_depth_is_invalid() {
        let mut m = TerrainModel::solid();
        assert!(m.validate().is_ok());
        m.yield_depth = 0.01;
        assert!(m.validate().is_err());
        assert!(TerrainModel::sand().validate().is_ok());
    }

    #[test]
    fn terrain_parses() {
        assert_eq!("sand".parse::<Terrain>().unwrap(), Terrain::Sand);
        assert_eq!("Solid".parse::<Terrain>().unwrap(), Terrain::Solid);
        assert!("mud".parse::<Terrain>().is_err());
    }
}
