//! Numerical machinery for nonlocal integral operators
//! Au(x) = P.V.∫(u(x)−u(y))K(x,y)dy acting on functions with polynomial
//! growth: the cut-off decomposition "up to a polynomial", certified tail
//! bounds, the associated Dirichlet problem, and a viscosity-style checker.

pub mod error;
pub mod multiindex;

pub mod kernels;

pub mod exprfunc;

pub mod quadrature;

pub mod operator;

pub mod analysis;

pub mod dirichlet;

pub mod viscosity;

pub use error::{Error, Result};
