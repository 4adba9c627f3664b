//! JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{AnomalySpec, DipoleSource};
use crate::error::{Error, Result};
use crate::fem::{Discretization, Material, Vec3};
use crate::inverse::NlcgConfig;
use crate::mesh::{build_box_mesh, BoxSpec};

/// Square grid of source points `(x0 + i·spacing, y0 + j·spacing, z)` for
/// `i, j = 1..=n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceGrid {
    pub x0: f64,
    pub y0: f64,
    pub z: f64,
    pub spacing: f64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceConfig {
    #[serde(default)]
    pub grid: Option<SourceGrid>,
    #[serde(default)]
    pub points: Option<Vec<Vec3>>,
    #[serde(default = "default_direction")]
    pub direction: Vec3,
    /// Offset added to every point, for moving points off element faces.
    #[serde(default)]
    pub nudge: Vec3,
}

fn default_direction() -> Vec3 {
    [1.0, 0.0, 0.0]
}

impl SourceConfig {
    pub fn dipoles(&self) -> Result<DipoleSource> {
        let mut points = match (&self.grid, &self.points) {
            (Some(g), None) => {
                if g.n == 0 || !(g.spacing > 0.0) {
                    return Err(Error::Config("source grid needs n >= 1 and spacing > 0".into()));
                }
                let mut pts = Vec::with_capacity(g.n * g.n);
                for i in 1..=g.n {
                    for j in 1..=g.n {
                        pts.push([g.x0 + g.spacing * i as f64, g.y0 + g.spacing * j as f64, g.z]);
                    }
                }
                pts
            }
            (None, Some(p)) => p.clone(),
            _ => return Err(Error::Config("source needs exactly one of `grid` or `points`".into())),
        };
        if points.is_empty() {
            return Err(Error::Config("source has no points".into()));
        }
        for p in &mut points {
            for a in 0..3 {
                p[a] += self.nudge[a];
            }
        }
        let d = self.direction;
        let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if !(len > 0.0 && len.is_finite()) {
            return Err(Error::Config("source direction must be a nonzero vector".into()));
        }
        Ok(DipoleSource {
            points,
            direction: d.map(|x| x / len),
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseConfig {
    pub delta: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Simulate the data on the once-refined mesh.
    pub refine: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Vtk,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            formats: vec![OutputFormat::Vtk, OutputFormat::Csv],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mesh: BoxSpec,
    #[serde(default)]
    pub material: Material,
    pub source: SourceConfig,
    #[serde(default)]
    pub anomaly: AnomalySpec,
    #[serde(default)]
    pub inversion: NlcgConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.material.validate()?;
        self.inversion.validate()?;
        self.source.dipoles()?;
        if !(self.noise.delta >= 0.0 && self.noise.delta.is_finite()) {
            return Err(Error::Config("noise delta must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn discretization(&self) -> Result<Discretization> {
        Discretization::new(build_box_mesh(&self.mesh)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inverse::GradientKind;

    const MINIMAL: &str = r#"{
        "mesh": {"bounds": [[-2, 2], [-2, 2], [-2, 0.2]], "divisions": [20, 20, 11], "z_interface": 0, "z_top": 0.2},
        "source": {"grid": {"x0": -2, "y0": -2, "z": 0.1, "spacing": 0.4, "n": 9}}
    }"#;

    #[test]
    fn defaults() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.material, Material::default());
        assert_eq!(c.material.omega, 0.79);
        assert_eq!(c.inversion.alpha, 1e-6);
        assert_eq!(c.inversion.gradient_kind, GradientKind::Sobolev);
        assert_eq!(c.noise.delta, 0.0);
        let s = c.source.dipoles().unwrap();
        assert_eq!(s.points.len(), 81);
        assert_eq!(s.points[0], [-2.0 + 0.4, -2.0 + 0.4, 0.1]);
        assert_eq!(s.points[80], [-2.0 + 0.4 * 9.0, -2.0 + 0.4 * 9.0, 0.1]);
        assert_eq!(s.direction, [1.0, 0.0, 0.0]);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replacen("\"source\"", "\"colour\": 1, \"source\"", 1);
        let err = RunConfig::from_json(&bad).unwrap_err();
        assert_eq!(err.class().exit_code(), 1);
        let bad = MINIMAL.replace("\"n\": 9", "\"n\": 9, \"m\": 2");
        assert!(RunConfig::from_json(&bad).is_err());
    }

    #[test]
    fn round_trip() {
        let c = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn source_needs_one_kind() {
        let bad = MINIMAL.replace("\"source\": {", "\"source\": {\"points\": [[0, 0, 0.1]], ");
        assert!(RunConfig::from_json(&bad).is_err());
    }
}
