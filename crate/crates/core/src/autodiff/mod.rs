//! Forward-mode differentiation.

mod dual;
mod real;

use std::collections::BTreeMap;

use nalgebra::DMatrix;

pub use dual::Dual;
pub use real::Real;

use crate::error::{Error, Result};
use crate::expr::{Expression, VariableId};
use crate::scm::{Assignment, Scm};

/// A scalar function of named variables that can be evaluated over any [`Real`].
pub trait Differentiable {
    fn eval_at<T: Real>(&self, env: &BTreeMap<VariableId, T>) -> Result<T>;
}

impl Differentiable for Expression {
    fn eval_at<T: Real>(&self, env: &BTreeMap<VariableId, T>) -> Result<T> {
        let v = self
            .eval(&|name| env.get(name).copied())
            .map_err(|v| Error::UnknownVariable(v.0))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::DomainError(format!("{}", self.to_json())))
        }
    }
}

/// A scalar function of a coordinate vector.
pub trait VectorFn {
    fn call<T: Real>(&self, x: &[T]) -> Result<T>;
}

/// Exact first derivatives, one forward pass per coordinate.
pub fn gradient_vec<F: VectorFn + ?Sized>(f: &F, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut g = Vec::with_capacity(x.len());
    let mut value = f.call(x)?;
    let mut args: Vec<Dual<f64>> = x.iter().map(|&v| Dual::constant(v)).collect();
    for i in 0..x.len() {
        args[i].eps = 1.0;
        let r = f.call(&args)?;
        args[i].eps = 0.0;
        value = r.re;
        g.push(r.eps);
    }
    Ok((value, g))
}

/// Forward-over-forward second derivatives.
pub fn hessian_vec<F: VectorFn + ?Sized>(f: &F, x: &[f64]) -> Result<DMatrix<f64>> {
    let d = x.len();
    let mut h = DMatrix::zeros(d, d);
    let mut args: Vec<Dual<Dual<f64>>> = x
        .iter()
        .map(|&v| Dual::constant(Dual::constant(v)))
        .collect();
    for i in 0..d {
        for j in i..d {
            args[i].re.eps = 1.0;
            args[j].eps.re = 1.0;
            let r = f.call(&args)?;
            args[i].re.eps = 0.0;
            args[j].eps.re = 0.0;
            h[(i, j)] = r.eps.eps;
            if i != j {
                // second ordering of the mixed partial, for the symmetrisation
                args[j].re.eps = 1.0;
                args[i].eps.re = 1.0;
                let r2 = f.call(&args)?;
                args[j].re.eps = 0.0;
                args[i].eps.re = 0.0;
                h[(j, i)] = r2.eps.eps;
            }
        }
    }
    Ok(h)
}

struct Named<'a, F> {
    f: &'a F,
    point: &'a Assignment,
    wrt: &'a [VariableId],
}

impl<F: Differentiable> VectorFn for Named<'_, F> {
    fn call<T: Real>(&self, x: &[T]) -> Result<T> {
        let mut env: BTreeMap<VariableId, T> =
            self.point.iter().map(|(k, v)| (k.clone(), T::cst(*v))).collect();
        for (k, v) in self.wrt.iter().zip(x) {
            env.insert(k.clone(), *v);
        }
        self.f.eval_at(&env)
    }
}

fn coords(point: &Assignment, wrt: &[VariableId]) -> Result<Vec<f64>> {
    wrt.iter()
        .map(|v| {
            point
                .get(v)
                .copied()
                .ok_or_else(|| Error::UnknownVariable(v.0.clone()))
        })
        .collect()
}

/// Gradient of `f` at `point` with respect to the listed variables.
pub fn gradient<F: Differentiable>(f: &F, point: &Assignment, wrt: &[VariableId]) -> Result<Vec<f64>> {
    let x = coords(point, wrt)?;
    Ok(gradient_vec(&Named { f, point, wrt }, &x)?.1)
}

/// Symmetric matrix of second derivatives over named coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct HessianMatrix {
    pub variables: Vec<VariableId>,
    pub matrix: DMatrix<f64>,
}

impl HessianMatrix {
    /// Symmetrises `(H + Hᵀ)/2` and rejects non-finite entries.
    pub fn from_raw(variables: Vec<VariableId>, raw: DMatrix<f64>) -> Result<Self> {
        for i in 0..raw.nrows() {
            for j in 0..raw.ncols() {
                if !raw[(i, j)].is_finite() {
                    return Err(Error::NonFiniteEntry(i, j));
                }
            }
        }
        let matrix = (&raw + raw.transpose()) * 0.5;
        Ok(HessianMatrix { variables, matrix })
    }
}

pub fn hessian<F: Differentiable>(f: &F, point: &Assignment, wrt: &[VariableId]) -> Result<HessianMatrix> {
    let x = coords(point, wrt)?;
    let raw = hessian_vec(&Named { f, point, wrt }, &x)?;
    HessianMatrix::from_raw(wrt.to_vec(), raw)
}

/// See [`Scm::invert_in_noise`].
pub fn invert_in_noise(scm: &Scm, variable: &str, target: f64, parents: &Assignment) -> Result<f64> {
    scm.invert_in_noise(variable, target, parents)
}
