use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Uniform mesh of an interval.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    left: f64,
    right: f64,
    nodes: Vec<f64>,
    h: f64,
}

impl Mesh1D {
    pub fn uniform(left: f64, right: f64, n_elements: usize) -> Result<Self> {
        if n_elements == 0 {
            return Err(Error::InvalidMesh("at least one element is required"));
        }
        if !(right > left) || !left.is_finite() || !right.is_finite() {
            return Err(Error::InvalidMesh("interval must satisfy left < right"));
        }
        let h = (right - left) / n_elements as f64;
        let nodes = (0..=n_elements)
            .map(|i| {
                if i == n_elements {
                    right
                } else {
                    left + i as f64 * h
                }
            })
            .collect();
        Ok(Self {
            left,
            right,
            nodes,
            h,
        })
    }

    /// `[0, 1]` split into `n_elements` cells.
    pub fn unit(n_elements: usize) -> Result<Self> {
        Self::uniform(0.0, 1.0, n_elements)
    }

    pub fn left(&self) -> f64 {
        self.left
    }

    pub fn right(&self) -> f64 {
        self.right
    }

    pub fn n_elements(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Element containing `x` (right-closed on the last cell).
    pub fn locate(&self, x: f64) -> Option<usize> {
        if x < self.left || x > self.right {
            return None;
        }
        let e = libm::floor((x - self.left) / self.h) as usize;
        Some(e.min(self.n_elements() - 1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_spacing() {
        let m = Mesh1D::uniform(-1.0, 2.0, 7).unwrap();
        assert_eq!(m.nodes().len(), 8);
        assert!((m.h() - 3.0 / 7.0).abs() < 1e-15);
        for w in m.nodes().windows(2) {
            assert!(w[1] > w[0]);
            assert!(((w[1] - w[0]) - m.h()).abs() <= 1e-14 * m.h());
        }
        assert_eq!(m.locate(2.0), Some(6));
        assert_eq!(m.locate(-1.0), Some(0));
        assert_eq!(m.locate(3.0), None);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(Mesh1D::unit(0).is_err());
        assert!(Mesh1D::uniform(1.0, 1.0, 3).is_err());
    }
}
