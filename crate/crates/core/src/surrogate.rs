//! Surrogate derivatives for the spike nonlinearity.
//!
//! The spike forward pass is a hard threshold; its true derivative is zero
//! almost everywhere, so the backward pass substitutes one of these smooth
//! (or piecewise) stand-ins evaluated at the distance to threshold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateKind {
    Triangle,
    SigmoidDerivative,
    Rectangle,
}

/// Surrogate-derivative choice used by the spike backward rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub kind: SurrogateKind,
    pub width: f64,
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec {
            kind: SurrogateKind::Triangle,
            width: 1.0,
        }
    }
}

impl SurrogateSpec {
    pub fn new(kind: SurrogateKind, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::contract(format!(
                "surrogate width must be positive, got {width}"
            )));
        }
        Ok(SurrogateSpec { kind, width })
    }

    /// Derivative stand-in at distance `u = v - v_th` from threshold.
    ///
    /// All kinds peak at 1 when `u = 0`; triangle and rectangle are exactly
    /// zero for `|u| >= width`.
    pub fn derivative(&self, u: f64) -> f64 {
        let w = self.width;
        match self.kind {
            SurrogateKind::Triangle => (1.0 - u.abs() / w).max(0.0),
            SurrogateKind::Rectangle => {
                if u.abs() < w {
                    1.0
                } else {
                    0.0
                }
            }
            SurrogateKind::SigmoidDerivative => {
                let s = 1.0 / (1.0 + (-u / w).exp());
                4.0 * s * (1.0 - s)
            }
        }
    }
}
