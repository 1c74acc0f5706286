use serde::{Deserialize, Serialize};

use crate::error::{EitError, Result};

/// Box `[lower, upper]` applied componentwise to nodal conductivities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: f64,
    pub upper: f64,
}

impl Bounds {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if !(lower > 0.0 && lower < upper && upper.is_finite()) {
            return Err(EitError::InvalidInput(format!(
                "conductivity bounds need 0 < c0 < c1 (got c0 = {lower}, c1 = {upper})"
            )));
        }
        Ok(Bounds { lower, upper })
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.lower && v <= self.upper
    }

    pub fn contains_all(&self, values: &[f64]) -> bool {
        values.iter().all(|&v| self.contains(v))
    }
}

impl Default for Bounds {
    /// `[0.1, 3.0]`: contains the unit background and the inclusion range `[0.2, 2]`.
    fn default() -> Self {
        Bounds {
            lower: 0.1,
            upper: 3.0,
        }
    }
}

/// Nodal (piecewise-affine) conductivity with its admissible box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConductivityField {
    pub values: Vec<f64>,
    pub bounds: Bounds,
}

impl ConductivityField {
    pub fn new(values: Vec<f64>, bounds: Bounds) -> Result<Self> {
        if let Some((i, v)) = values.iter().enumerate().find(|(_, &v)| !bounds.contains(v)) {
            return Err(EitError::InvalidInput(format!(
                "conductivity {v} at vertex {i} lies outside [{}, {}]",
                bounds.lower, bounds.upper
            )));
        }
        Ok(ConductivityField { values, bounds })
    }

    pub fn constant(n: usize, value: f64, bounds: Bounds) -> Result<Self> {
        ConductivityField::new(vec![value; n], bounds)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_are_validated() {
        assert!(Bounds::new(0.0, 1.0).is_err());
        assert!(Bounds::new(2.0, 1.0).is_err());
        let b = Bounds::default();
        assert!(b.contains(0.2) && b.contains(2.0) && b.contains(1.0));
        assert!(ConductivityField::new(vec![1.0, 5.0], b).is_err());
        assert_eq!(ConductivityField::constant(3, 1.0, b).unwrap().len(), 3);
    }
}
