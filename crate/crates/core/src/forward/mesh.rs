use crate::config::{GeometryConfig, MeshConfig};
use crate::error::{Error, Result};

/// Cell and electrode geometry, μm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    pub r: f64,
    pub r_inf: f64,
    /// Electrode tip radius; also the radius `P` of the lumped compartment.
    pub w: f64,
    /// Tip–membrane distance.
    pub h: f64,
}

impl Geometry {
    pub fn from_config(c: &GeometryConfig) -> Result<Self> {
        let g = Geometry { r: c.cell_radius, r_inf: c.outer_radius, w: c.tip_radius, h: c.tip_distance };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r < self.r_inf) {
            return Err(Error::config("need 0 < R < R_inf"));
        }
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::config("electrode dimensions must be positive"));
        }
        Ok(())
    }

    /// Fraction of the membrane area under the electrode tip, `(w / 2R)²`.
    pub fn tip_area_fraction(&self) -> f64 {
        (self.w / (2.0 * self.r)).powi(2)
    }
}

/// Nodes of the interior `[0, R]` and exterior `[R, R_inf]` intervals. Both
/// grids are geometrically graded so that elements shrink towards `r = R`.
#[derive(Clone, Debug, PartialEq)]
pub struct RadialMesh {
    pub interior: Vec<f64>,
    pub exterior: Vec<f64>,
}

impl RadialMesh {
    pub fn graded(geom: &Geometry, cfg: &MeshConfig) -> Result<Self> {
        if cfg.interior_nodes < 3 || cfg.exterior_nodes < 3 {
            return Err(Error::config("each domain needs at least 3 nodes"));
        }
        // interior: largest element at the centre
        let mut interior: Vec<f64> = graded_nodes(geom.r, cfg.interior_nodes, cfg.interior_grading)
            .into_iter()
            .map(|s| geom.r - s)
            .collect();
        interior.reverse();
        interior[0] = 0.0;
        let exterior: Vec<f64> = graded_nodes(geom.r_inf - geom.r, cfg.exterior_nodes, cfg.exterior_grading)
            .into_iter()
            .map(|s| geom.r + s)
            .collect();
        let mut mesh = RadialMesh { interior, exterior };
        *mesh.interior.last_mut().unwrap() = geom.r;
        mesh.exterior[0] = geom.r;
        *mesh.exterior.last_mut().unwrap() = geom.r_inf;
        mesh.validate(geom)?;
        Ok(mesh)
    }

    pub fn validate(&self, geom: &Geometry) -> Result<()> {
        let inc = |v: &[f64]| v.windows(2).all(|w| w[1] > w[0]);
        if !inc(&self.interior) || !inc(&self.exterior) {
            return Err(Error::config("mesh nodes must be strictly increasing"));
        }
        if self.interior[0] != 0.0
            || *self.interior.last().unwrap() != geom.r
            || self.exterior[0] != geom.r
            || *self.exterior.last().unwrap() != geom.r_inf
        {
            return Err(Error::config("mesh must span [0, R] and [R, R_inf] exactly"));
        }
        Ok(())
    }

    /// Number of exterior nodes inside the CA layer `[R, R + delta]`.
    pub fn nodes_in_layer(&self, r: f64, delta: f64) -> usize {
        self.exterior.iter().filter(|&&x| x <= r + delta).count()
    }

    pub fn smallest_element(&self) -> f64 {
        self.interior
            .windows(2)
            .chain(self.exterior.windows(2))
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }
}

/// Offsets `0 = s_0 < … < s_{n-1} = len` with element sizes growing by `ratio`.
fn graded_nodes(len: f64, n: usize, ratio: f64) -> Vec<f64> {
    let m = n - 1;
    let first = if (ratio - 1.0).abs() < 1e-12 {
        len / m as f64
    } else {
        len * (ratio - 1.0) / (ratio.powi(m as i32) - 1.0)
    };
    let mut out = Vec::with_capacity(n);
    let mut s = 0.0;
    let mut h = first;
    out.push(0.0);
    for _ in 0..m {
        s += h;
        out.push(s);
        h *= ratio;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ForwardConfig;

    #[test]
    fn default_mesh_is_graded_towards_membrane() {
        let c = ForwardConfig::default();
        let g = Geometry::from_config(&c.geometry).unwrap();
        let m = RadialMesh::graded(&g, &c.mesh).unwrap();
        assert_eq!(m.interior.len(), 60);
        assert_eq!(m.exterior.len(), 80);
        let hi: Vec<f64> = m.interior.windows(2).map(|w| w[1] - w[0]).collect();
        let he: Vec<f64> = m.exterior.windows(2).map(|w| w[1] - w[0]).collect();
        assert!(hi.last().unwrap() < hi.first().unwrap());
        assert!(he.first().unwrap() < he.last().unwrap());
        assert!(m.nodes_in_layer(g.r, c.ca.layer_thickness) >= 2);
    }

    #[test]
    fn uniform_when_ratio_is_one() {
        let s = graded_nodes(10.0, 11, 1.0);
        for (k, v) in s.iter().enumerate() {
            assert!((v - k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn tip_fraction() {
        let g = Geometry { r: 650.0, r_inf: 800.0, w: 10.0, h: 10.0 };
        assert!((g.tip_area_fraction() - 5.9172e-5).abs() < 1e-8);
    }
}
