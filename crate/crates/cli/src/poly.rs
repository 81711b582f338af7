//! Polynomial vector fields given as coefficient tables.

use nalgebra::DMatrix;

use normstab::VectorFieldSpec;

pub const MAX_DEGREE: u32 = 6;
const DOMAIN_RADIUS: f64 = 1e6;

/// `coef · Π x_i^{powers_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub powers: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolyField {
    dim: usize,
    components: Vec<Vec<Term>>,
}

fn monomial(u: &[f64], powers: &[u32]) -> f64 {
    u.iter().zip(powers).map(|(x, p)| x.powi(*p as i32)).product()
}

impl PolyField {
    pub fn new(dim: usize, components: Vec<Vec<Term>>) -> Self {
        Self { dim, components }
    }

    pub fn eval_into(&self, u: &[f64], out: &mut [f64]) {
        for (o, terms) in out.iter_mut().zip(&self.components) {
            *o = terms.iter().map(|t| t.coef * monomial(u, &t.powers)).sum();
        }
    }

    pub fn jacobian(&self, u: &[f64]) -> DMatrix<f64> {
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        let mut p = vec![0u32; n];
        for (i, terms) in self.components.iter().enumerate() {
            for t in terms {
                for j in 0..n {
                    if t.powers[j] == 0 {
                        continue;
                    }
                    p.copy_from_slice(&t.powers);
                    p[j] -= 1;
                    jac[(i, j)] += t.coef * t.powers[j] as f64 * monomial(u, &p);
                }
            }
        }
        jac
    }

    pub fn into_field(self, center: Vec<f64>) -> VectorFieldSpec {
        let n = self.dim;
        let rhs = self.clone();
        VectorFieldSpec::new("polynomial", n, move |u: &[f64], out: &mut [f64]| rhs.eval_into(u, out), center, DOMAIN_RADIUS)
            .with_jacobian(move |u: &[f64]| self.jacobian(u))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(coef: f64, powers: &[u32]) -> Term {
        Term { coef, powers: powers.to_vec() }
    }

    #[test]
    fn values_and_exact_jacobian() {
        // (x²y − 3, x − y³)
        let f = PolyField::new(2, vec![vec![t(1.0, &[2, 1]), t(-3.0, &[0, 0])], vec![t(1.0, &[1, 0]), t(-1.0, &[0, 3])]]);
        let mut out = [0.0; 2];
        f.eval_into(&[2.0, -1.0], &mut out);
        assert_eq!(out, [-7.0, 3.0]);
        let j = f.jacobian(&[2.0, -1.0]);
        assert_eq!(j.as_slice(), &[-4.0, 1.0, 4.0, -3.0]);
        let spec = f.into_field(vec![0.0, 0.0]);
        let fd = spec.fd_jacobian(&[0.7, 0.3]);
        assert!((spec.jacobian(&[0.7, 0.3]) - fd).amax() < 1e-7);
    }
}
