//! Row-norm penalties and their groupwise proximal operators.
//!
//! All three families act on the Euclidean norm of a coefficient row: the L1
//! (group lasso) penalty, the minimax concave penalty (MCP), and the smoothly
//! clipped absolute deviation (SCAD) penalty. MCP and SCAD are constant beyond
//! a plateau point, which is what removes shrinkage bias from large rows.

use ndarray::{Array1, ArrayView1};

use crate::error::{Result, RowFedError};
use crate::util::row_norm;

/// Penalty family applied to row norms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyFamily {
    L1,
    Mcp,
    Scad,
}

/// A penalty with its strength `lambda` and concavity parameter `gamma`
/// (MCP requires `gamma > 1`, SCAD reuses the field as `a > 2`; L1 ignores it).
#[derive(Debug, Clone, Copy)]
pub struct PenaltySpec {
    pub family: PenaltyFamily,
    pub lambda: f64,
    pub gamma: f64,
}

impl PenaltySpec {
    pub fn new(family: PenaltyFamily, lambda: f64, gamma: f64) -> Result<Self> {
        if !lambda.is_finite() || lambda < 0.0 {
            return Err(RowFedError::InvalidConfig(format!(
                "penalty lambda must be a nonnegative finite number, got {lambda}"
            )));
        }
        match family {
            PenaltyFamily::L1 => {}
            PenaltyFamily::Mcp => {
                if !gamma.is_finite() || gamma <= 1.0 {
                    return Err(RowFedError::InvalidConfig(format!(
                        "MCP requires gamma > 1, got {gamma}"
                    )));
                }
            }
            PenaltyFamily::Scad => {
                if !gamma.is_finite() || gamma <= 2.0 {
                    return Err(RowFedError::InvalidConfig(format!(
                        "SCAD requires a > 2, got {gamma}"
                    )));
                }
            }
        }
        Ok(Self { family, lambda, gamma })
    }

    pub fn l1(lambda: f64) -> Result<Self> {
        Self::new(PenaltyFamily::L1, lambda, 0.0)
    }

    pub fn mcp(lambda: f64, gamma: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Mcp, lambda, gamma)
    }

    pub fn scad(lambda: f64, a: f64) -> Result<Self> {
        Self::new(PenaltyFamily::Scad, lambda, a)
    }

    /// Point beyond which the penalty is constant (infinite for L1).
    pub fn plateau(&self) -> f64 {
        match self.family {
            PenaltyFamily::L1 => f64::INFINITY,
            PenaltyFamily::Mcp | PenaltyFamily::Scad => self.gamma * self.lambda,
        }
    }
}

/// Penalties for the two row ranges of the split variable: fusion rows carry
/// `lambda2`, identity rows carry `lambda1`.
#[derive(Debug, Clone, Copy)]
pub struct PenaltyPair {
    /// Penalty on pairwise row differences (`lambda2`).
    pub fusion: PenaltySpec,
    /// Penalty on coefficient rows themselves (`lambda1`).
    pub sparsity: PenaltySpec,
}

/// p_lambda(t) for t >= 0.
pub fn penalty_value(spec: &PenaltySpec, t: f64) -> Result<f64> {
    if !t.is_finite() || t < 0.0 {
        return Err(RowFedError::InvalidArgument(format!(
            "penalty_value requires t >= 0, got {t}"
        )));
    }
    let lam = spec.lambda;
    let g = spec.gamma;
    Ok(match spec.family {
        PenaltyFamily::L1 => lam * t,
        PenaltyFamily::Mcp => {
            if t <= g * lam {
                lam * t - t * t / (2.0 * g)
            } else {
                g * lam * lam / 2.0
            }
        }
        PenaltyFamily::Scad => {
            if t <= lam {
                lam * t
            } else if t <= g * lam {
                (2.0 * g * lam * t - t * t - lam * lam) / (2.0 * (g - 1.0))
            } else {
                lam * lam * (g + 1.0) / 2.0
            }
        }
    })
}

/// p'_lambda(t) for t > 0. Nonincreasing in t, equal to lambda at 0+, zero
/// beyond the plateau.
pub fn penalty_derivative(spec: &PenaltySpec, t: f64) -> Result<f64> {
    if !t.is_finite() || t <= 0.0 {
        return Err(RowFedError::InvalidArgument(format!(
            "penalty_derivative requires t > 0, got {t}"
        )));
    }
    let lam = spec.lambda;
    let g = spec.gamma;
    Ok(match spec.family {
        PenaltyFamily::L1 => lam,
        PenaltyFamily::Mcp => (lam - t / g).max(0.0),
        PenaltyFamily::Scad => {
            if t <= lam {
                lam
            } else {
                ((g * lam - t) / (g - 1.0)).max(0.0)
            }
        }
    })
}

/// Groupwise soft-thresholding S(z, t) = (1 - t/||z||)_+ z, with S(0, t) = 0.
pub fn group_soft_threshold(z: ArrayView1<f64>, t: f64) -> Array1<f64> {
    let norm = row_norm(z);
    if norm <= t || norm == 0.0 {
        Array1::zeros(z.len())
    } else {
        &z * (1.0 - t / norm)
    }
}

/// Minimizer of p_lambda(||v||) + (rho/2) ||psi - v||^2 over v.
pub fn prox_row(spec: &PenaltySpec, psi: ArrayView1<f64>, rho: f64) -> Result<Array1<f64>> {
    if !rho.is_finite() || rho <= 0.0 {
        return Err(RowFedError::InvalidArgument(format!(
            "prox_row requires rho > 0, got {rho}"
        )));
    }
    let lam = spec.lambda;
    let g = spec.gamma;
    match spec.family {
        PenaltyFamily::L1 => Ok(group_soft_threshold(psi, lam / rho)),
        PenaltyFamily::Mcp => {
            // with lambda = 0 the prox is the identity and needs no bound
            if lam > 0.0 && g * rho <= 1.0 {
                return Err(RowFedError::InvalidConfig(format!(
                    "MCP prox requires gamma > 1/rho (gamma={g}, rho={rho})"
                )));
            }
            let norm = row_norm(psi);
            if norm <= g * lam {
                Ok(group_soft_threshold(psi, lam / rho) / (1.0 - 1.0 / (g * rho)))
            } else {
                Ok(psi.to_owned())
            }
        }
        PenaltyFamily::Scad => {
            if lam > 0.0 && g <= 1.0 + 1.0 / rho {
                return Err(RowFedError::InvalidConfig(format!(
                    "SCAD prox requires a > 1 + 1/rho (a={g}, rho={rho})"
                )));
            }
            let norm = row_norm(psi);
            if norm <= lam * (1.0 + 1.0 / rho) {
                Ok(group_soft_threshold(psi, lam / rho))
            } else if norm <= g * lam {
                let t = g * lam / ((g - 1.0) * rho);
                Ok(group_soft_threshold(psi, t) / (1.0 - 1.0 / ((g - 1.0) * rho)))
            } else {
                Ok(psi.to_owned())
            }
        }
    }
}
