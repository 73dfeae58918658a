//! Cayley–Dickson numbers with `2^n` real coefficients.

use std::ops::{Add, Mul, Neg, Sub};

/// Element of the Cayley–Dickson algebra of dimension `coeffs.len()`, a
/// power of two: reals (1), complex (2), quaternions (4), octonions (8).
#[derive(Clone, Debug, PartialEq)]
pub struct Hypercomplex {
    coeffs: Vec<f64>,
}

impl Hypercomplex {
    /// Panics unless the length is a power of two.
    pub fn new(coeffs: Vec<f64>) -> Self {
        assert!(
            coeffs.len().is_power_of_two(),
            "hypercomplex dimension {} is not a power of two",
            coeffs.len()
        );
        Self { coeffs }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(vec![0.0; dim])
    }

    /// Copies `values` and zero-pads to the next power of two.
    pub fn padded(values: &[f64]) -> Self {
        let mut coeffs = values.to_vec();
        coeffs.resize(values.len().next_power_of_two(), 0.0);
        Self { coeffs }
    }

    /// Basis unit `e_i`.
    pub fn unit(dim: usize, i: usize) -> Self {
        let mut h = Self::zero(dim);
        h.coeffs[i] = 1.0;
        h
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn real(&self) -> f64 {
        self.coeffs[0]
    }

    pub fn conj(&self) -> Self {
        let mut c: Vec<f64> = self.coeffs.iter().map(|v| -v).collect();
        c[0] = self.coeffs[0];
        Self { coeffs: c }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|v| v * v).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&self, k: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|v| v * k).collect(),
        }
    }
}

fn conj_into(a: &[f64], out: &mut [f64]) {
    out[0] = a[0];
    for (o, v) in out[1..].iter_mut().zip(&a[1..]) {
        *o = -v;
    }
}

/// `(a, b)(c, d) = (ac - d*b, da + bc*)` on halves.
fn product(x: &[f64], y: &[f64], out: &mut [f64]) {
    let n = x.len();
    if n == 1 {
        out[0] = x[0] * y[0];
        return;
    }
    let h = n / 2;
    let (a, b) = x.split_at(h);
    let (c, d) = y.split_at(h);
    let mut t = vec![0.0; h];
    let mut conj = vec![0.0; h];

    product(a, c, &mut out[..h]);
    conj_into(d, &mut conj);
    product(&conj, b, &mut t);
    for (o, v) in out[..h].iter_mut().zip(&t) {
        *o -= v;
    }

    product(d, a, &mut out[h..]);
    conj_into(c, &mut conj);
    product(b, &conj, &mut t);
    for (o, v) in out[h..].iter_mut().zip(&t) {
        *o += v;
    }
}

impl Mul for &Hypercomplex {
    type Output = Hypercomplex;

    fn mul(self, rhs: &Hypercomplex) -> Hypercomplex {
        assert_eq!(self.dim(), rhs.dim(), "hypercomplex dimensions differ");
        let mut coeffs = vec![0.0; self.dim()];
        product(&self.coeffs, &rhs.coeffs, &mut coeffs);
        Hypercomplex { coeffs }
    }
}

impl Add for &Hypercomplex {
    type Output = Hypercomplex;

    fn add(self, rhs: &Hypercomplex) -> Hypercomplex {
        assert_eq!(self.dim(), rhs.dim(), "hypercomplex dimensions differ");
        Hypercomplex {
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }
}

impl Sub for &Hypercomplex {
    type Output = Hypercomplex;

    fn sub(self, rhs: &Hypercomplex) -> Hypercomplex {
        assert_eq!(self.dim(), rhs.dim(), "hypercomplex dimensions differ");
        Hypercomplex {
            coeffs: self
                .coeffs
                .iter()
                .zip(&rhs.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

impl Neg for &Hypercomplex {
    type Output = Hypercomplex;

    fn neg(self) -> Hypercomplex {
        self.scale(-1.0)
    }
}
