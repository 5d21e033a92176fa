//! Lattice discretization of the complex measure μ(dβ) = Π (1/π) dRe β_j dIm β_j.
//!
//! Every mode carries a square lattice {(k h) + i (l h) : |k h|, |l h| ≤ R} and
//! the grid is the Cartesian product over modes (mode 0 most significant). All
//! nodes share one weight Π_j h_j²/π.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::{c, C64};

/// Default upper bound on the number of grid nodes.
pub const DEFAULT_NODE_BUDGET: usize = 20_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ModeLattice {
    radius: f64,
    spacing: f64,
    points: Vec<C64>,
    weight: f64,
}

impl ModeLattice {
    fn square(radius: f64, spacing: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidGrid(format!("radius {radius} must be positive")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::InvalidGrid(format!("spacing {spacing} must be positive")));
        }
        if spacing > radius {
            return Err(Error::InvalidGrid(format!("spacing {spacing} exceeds radius {radius}")));
        }
        let half = (radius / spacing + 1e-9).floor() as i64;
        let axis: Vec<f64> = (-half..=half).map(|k| k as f64 * spacing).collect();
        let mut points = Vec::with_capacity(axis.len() * axis.len());
        for &x in &axis {
            for &y in &axis {
                points.push(c(x, y));
            }
        }
        Ok(Self {
            radius,
            spacing,
            points,
            weight: spacing * spacing / PI,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    /// Number of lattice points per real axis.
    pub fn axis_len(&self) -> usize {
        (self.points.len() as f64).sqrt().round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComplexGrid {
    modes: Vec<ModeLattice>,
    weight: f64,
    len: usize,
}

/// Uniform grid over `r` modes with the default node budget.
pub fn make_grid(r: usize, radius: f64, spacing: f64) -> Result<ComplexGrid> {
    make_grid_with_budget(r, radius, spacing, DEFAULT_NODE_BUDGET)
}

pub fn make_grid_with_budget(r: usize, radius: f64, spacing: f64, budget: usize) -> Result<ComplexGrid> {
    ComplexGrid::per_mode(&vec![radius; r], &vec![spacing; r], budget)
}

impl ComplexGrid {
    /// Product grid with an independent radius and spacing per mode.
    pub fn per_mode(radii: &[f64], spacings: &[f64], budget: usize) -> Result<Self> {
        if radii.is_empty() {
            return Err(Error::InvalidGrid("at least one mode is required".into()));
        }
        if radii.len() != spacings.len() {
            return Err(Error::DimensionMismatch {
                expected: radii.len(),
                found: spacings.len(),
            });
        }
        // count before allocating anything
        let mut nodes: usize = 1;
        for (&r, &h) in radii.iter().zip(spacings) {
            if !(r > 0.0 && h > 0.0 && h <= r) {
                return Err(Error::InvalidGrid(format!("radius {r}, spacing {h}")));
            }
            let axis = 2 * ((r / h + 1e-9).floor() as usize) + 1;
            nodes = nodes.saturating_mul(axis * axis);
        }
        if nodes > budget {
            return Err(Error::BudgetExceeded { nodes, budget });
        }
        let modes = radii
            .iter()
            .zip(spacings)
            .map(|(&r, &h)| ModeLattice::square(r, h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_modes(modes))
    }

    /// A one-node grid carrying unit weight (a point mass).
    pub fn point(node: &[C64]) -> Self {
        let modes = node
            .iter()
            .map(|&p| ModeLattice {
                radius: 0.0,
                spacing: 0.0,
                points: vec![p],
                weight: 1.0,
            })
            .collect();
        Self::from_modes(modes)
    }

    fn from_modes(modes: Vec<ModeLattice>) -> Self {
        let weight = modes.iter().map(|m| m.weight).product();
        let len = modes.iter().map(|m| m.points.len()).product();
        Self { modes, weight, len }
    }

    pub fn modes(&self) -> usize {
        self.modes.len()
    }

    pub fn mode(&self, j: usize) -> &ModeLattice {
        &self.modes[j]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Quadrature weight shared by every node.
    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn total_weight(&self) -> f64 {
        self.weight * self.len as f64
    }

    /// Index of node `k` within the lattice of mode `j`.
    #[inline]
    pub fn mode_index(&self, mut k: usize, j: usize) -> usize {
        for m in self.modes[j + 1..].iter().rev() {
            k /= m.points.len();
        }
        k % self.modes[j].points.len()
    }

    pub fn node_into(&self, mut k: usize, out: &mut [C64]) {
        for (j, m) in self.modes.iter().enumerate().rev() {
            let n = m.points.len();
            out[j] = m.points[k % n];
            k /= n;
        }
    }

    pub fn node(&self, k: usize) -> Vec<C64> {
        let mut out = vec![c(0.0, 0.0); self.modes()];
        self.node_into(k, &mut out);
        out
    }

    pub fn nodes(&self) -> impl Iterator<Item = Vec<C64>> + '_ {
        (0..self.len).map(move |k| self.node(k))
    }

    /// Whether `point` lies inside the square extent of every mode.
    pub fn contains(&self, point: &[C64]) -> bool {
        point.len() == self.modes()
            && point.iter().zip(&self.modes).all(|(p, m)| {
                let lim = m.radius + 1e-12;
                p.re.abs() <= lim && p.im.abs() <= lim
            })
    }

    /// Same lattice translated by `shift` (one complex offset per mode).
    pub fn translated(&self, shift: &[C64]) -> Self {
        let modes = self
            .modes
            .iter()
            .zip(shift)
            .map(|(m, &s)| ModeLattice {
                points: m.points.iter().map(|p| p + s).collect(),
                ..m.clone()
            })
            .collect();
        Self::from_modes(modes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_grid_has_nine_nodes() {
        let g = make_grid(1, 1.0, 1.0).unwrap();
        assert_eq!(g.len(), 9);
        assert!((g.weight() - 1.0 / PI).abs() < 1e-15);
        let mut re: Vec<f64> = g.nodes().map(|n| n[0].re).collect();
        re.dedup();
        assert_eq!(re, vec![-1.0, 0.0, 1.0]);
    }

    #[test]
    fn total_weight_tracks_area() {
        let g = make_grid(1, 6.0, 0.25).unwrap();
        let area = 144.0 / PI;
        // the lattice covers [-R - h/2, R + h/2]² in cell terms
        let cell_strip = 2.0 * 12.0 * 0.25 / PI + 0.25 * 0.25 / PI;
        assert!((g.total_weight() - area).abs() <= cell_strip + 1e-12);
    }

    #[test]
    fn two_mode_count_is_fourth_power() {
        let one = make_grid(1, 1.0, 0.5).unwrap();
        let two = make_grid(2, 1.0, 0.5).unwrap();
        let axis = 5usize;
        assert_eq!(two.len(), axis.pow(4));
        assert_eq!(two.len(), one.len() * one.len());
        for k in [0, 7, 300, two.len() - 1] {
            let n = two.node(k);
            assert_eq!(n[0], one.mode(0).points()[two.mode_index(k, 0)]);
            assert_eq!(n[1], one.mode(0).points()[two.mode_index(k, 1)]);
        }
    }

    #[test]
    fn invalid_and_budget() {
        assert!(make_grid(1, 0.0, 0.1).is_err());
        assert!(make_grid(1, 1.0, 2.0).is_err());
        assert!(matches!(
            make_grid_with_budget(2, 6.0, 0.1, 1000),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn nodes_unique() {
        let g = make_grid(2, 1.0, 0.5).unwrap();
        let mut seen: Vec<_> = g
            .nodes()
            .map(|n| {
                n.iter()
                    .map(|z| ((z.re * 4.0) as i64, (z.im * 4.0) as i64))
                    .collect::<Vec<_>>()
            })
            .collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), g.len());
    }
}
