use alloc::vec::Vec;

use nalgebra::DVector;

use super::mesh::Mesh1D;
use super::quadrature::{gauss_legendre, QuadratureRule};
use crate::error::{Error, Result};

/// Values and reference-coordinate derivatives of the local shape functions
/// at one point of `[0, 1]`. Only the first `degree + 1` entries are used.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShapeValues {
    pub value: [f64; 3],
    pub d1: [f64; 3],
    pub d2: [f64; 3],
}

/// Continuous Lagrange elements of degree 1 or 2 with homogeneous Dirichlet
/// conditions eliminated.
///
/// Global dof `g` sits at `left + g·h/k`; element `e` owns the dofs
/// `k·e ..= k·e + k`. Interior dof `i` is global dof `i + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagrangeSpace {
    mesh: Mesh1D,
    degree: usize,
    dof_coords: Vec<f64>,
}

impl LagrangeSpace {
    pub fn new(mesh: Mesh1D, degree: usize) -> Result<Self> {
        if !(1..=2).contains(&degree) {
            return Err(Error::UnsupportedDegree(degree));
        }
        let n = degree * mesh.n_elements() + 1;
        let step = mesh.h() / degree as f64;
        let dof_coords = (0..n)
            .map(|g| {
                if g == n - 1 {
                    mesh.right()
                } else {
                    mesh.left() + g as f64 * step
                }
            })
            .collect();
        Ok(Self {
            mesh,
            degree,
            dof_coords,
        })
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn h(&self) -> f64 {
        self.mesh.h()
    }

    pub fn n_dofs_total(&self) -> usize {
        self.dof_coords.len()
    }

    pub fn n_interior(&self) -> usize {
        self.n_dofs_total() - 2
    }

    pub fn dof_coords(&self) -> &[f64] {
        &self.dof_coords
    }

    pub fn interior_coords(&self) -> &[f64] {
        &self.dof_coords[1..self.dof_coords.len() - 1]
    }

    /// Interior index of local dof `j` on element `e`, or `None` on the
    /// boundary.
    #[inline]
    pub fn interior_index(&self, element: usize, local: usize) -> Option<usize> {
        let g = self.degree * element + local;
        if g == 0 || g + 1 == self.n_dofs_total() {
            None
        } else {
            Some(g - 1)
        }
    }

    pub fn n_local(&self) -> usize {
        self.degree + 1
    }

    /// Shape functions at reference coordinate `s ∈ [0, 1]`.
    pub fn shape(&self, s: f64) -> ShapeValues {
        let mut out = ShapeValues::default();
        match self.degree {
            1 => {
                out.value[0] = 1.0 - s;
                out.value[1] = s;
                out.d1[0] = -1.0;
                out.d1[1] = 1.0;
            }
            _ => {
                out.value[0] = (1.0 - s) * (1.0 - 2.0 * s);
                out.value[1] = 4.0 * s * (1.0 - s);
                out.value[2] = s * (2.0 * s - 1.0);
                out.d1[0] = 4.0 * s - 3.0;
                out.d1[1] = 4.0 - 8.0 * s;
                out.d1[2] = 4.0 * s - 1.0;
                out.d2[0] = 4.0;
                out.d2[1] = -8.0;
                out.d2[2] = 4.0;
            }
        }
        out
    }

    /// Default assembly rule: `k + 2` Gauss points per element.
    pub fn assembly_rule(&self) -> QuadratureRule {
        gauss_legendre(self.degree + 2)
    }

    /// Rule for error norms against non-polynomial data: exact to degree
    /// `2k + 4` or better.
    pub fn error_rule(&self) -> QuadratureRule {
        gauss_legendre(self.degree + 3)
    }

    /// Calls `visit(element, x, weight·h, shape)` at every quadrature point.
    pub fn for_each_point(
        &self,
        rule: &QuadratureRule,
        mut visit: impl FnMut(usize, f64, f64, &ShapeValues),
    ) {
        let h = self.h();
        let nodes = self.mesh.nodes();
        let shapes: Vec<ShapeValues> = rule.points.iter().map(|s| self.shape(*s)).collect();
        for e in 0..self.mesh.n_elements() {
            let x0 = nodes[e];
            for (q, (s, w)) in rule.points.iter().zip(&rule.weights).enumerate() {
                visit(e, x0 + s * h, w * h, &shapes[q]);
            }
        }
    }

    /// Value and first derivative of the interior-coefficient field on
    /// element `e` at reference coordinate `s`.
    #[inline]
    pub fn eval_on_element(
        &self,
        coeffs: &[f64],
        element: usize,
        shape: &ShapeValues,
    ) -> (f64, f64) {
        let inv_h = 1.0 / self.h();
        let mut v = 0.0;
        let mut d = 0.0;
        for j in 0..self.n_local() {
            if let Some(i) = self.interior_index(element, j) {
                v += coeffs[i] * shape.value[j];
                d += coeffs[i] * shape.d1[j] * inv_h;
            }
        }
        (v, d)
    }

    /// Point evaluation of value and derivative.
    pub fn evaluate(&self, coeffs: &[f64], x: f64) -> Result<(f64, f64)> {
        self.check(coeffs.len())?;
        let e = self
            .mesh
            .locate(x)
            .ok_or(Error::InvalidMesh("evaluation point outside the domain"))?;
        let s = (x - self.mesh.nodes()[e]) / self.h();
        let shape = self.shape(s);
        Ok(self.eval_on_element(coeffs, e, &shape))
    }

    /// Nodal interpolant on the interior dofs.
    pub fn interpolate(&self, f: impl Fn(f64) -> f64) -> DVector<f64> {
        DVector::from_iterator(
            self.n_interior(),
            self.interior_coords().iter().map(|x| f(*x)),
        )
    }

    pub(crate) fn check(&self, len: usize) -> Result<()> {
        if len != self.n_interior() {
            return Err(Error::Dimension {
                context: "interior coefficient vector",
                expected: self.n_interior(),
                found: len,
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimensions() {
        for k in 1..=2 {
            let space = LagrangeSpace::new(Mesh1D::unit(8).unwrap(), k).unwrap();
            assert_eq!(space.n_dofs_total(), 8 * k + 1);
            assert_eq!(space.n_interior(), 8 * k - 1);
        }
        assert!(matches!(
            LagrangeSpace::new(Mesh1D::unit(8).unwrap(), 3),
            Err(Error::UnsupportedDegree(3))
        ));
    }

    #[test]
    fn partition_of_unity_at_quadrature_points() {
        for k in 1..=2 {
            let space = LagrangeSpace::new(Mesh1D::unit(4).unwrap(), k).unwrap();
            for s in &space.error_rule().points {
                let sh = space.shape(*s);
                let sum: f64 = sh.value[..k + 1].iter().sum();
                let dsum: f64 = sh.d1[..k + 1].iter().sum();
                let ddsum: f64 = sh.d2[..k + 1].iter().sum();
                assert!((sum - 1.0).abs() < 1e-15);
                assert!(dsum.abs() < 1e-14);
                assert!(ddsum.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_polynomials() {
        let space = LagrangeSpace::new(Mesh1D::unit(5).unwrap(), 2).unwrap();
        let f = |x: f64| x * (1.0 - x) * (0.3 + x);
        // Quadratic with zero boundary values is reproduced; cubic is not.
        let g = |x: f64| x * (1.0 - x);
        let c = space.interpolate(g);
        for &x in &[0.05, 0.33, 0.71, 0.99] {
            let (v, d) = space.evaluate(c.as_slice(), x).unwrap();
            assert!((v - g(x)).abs() < 1e-14);
            assert!((d - (1.0 - 2.0 * x)).abs() < 1e-13);
        }
        let c = space.interpolate(f);
        let (v, _) = space.evaluate(c.as_slice(), 0.33).unwrap();
        assert!((v - f(0.33)).abs() > 1e-6);
    }
}
