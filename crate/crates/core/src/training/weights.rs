use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;

const SIMPLEX_TOL: f64 = 1e-12;

/// Weights of the cross-entropy, teacher-A and teacher-B terms, and the
/// distillation temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillationWeights {
    pub gamma: f64,
    pub delta: f64,
    pub eta: f64,
    pub temperature: f64,
}

impl DistillationWeights {
    pub fn new(gamma: f64, delta: f64, eta: f64, temperature: f64) -> Result<Self, TrainError> {
        let w = Self {
            gamma,
            delta,
            eta,
            temperature,
        };
        w.validate()?;
        Ok(w)
    }

    /// `delta = (1 - gamma) * kappa`, `eta = 1 - (gamma + delta)`.
    pub fn from_gamma_kappa(gamma: f64, kappa: f64, temperature: f64) -> Result<Self, TrainError> {
        let delta = (1.0 - gamma) * kappa;
        Self::new(gamma, delta, 1.0 - (gamma + delta), temperature)
    }

    pub fn cross_entropy_only() -> Self {
        Self {
            gamma: 1.0,
            delta: 0.0,
            eta: 0.0,
            temperature: 1.0,
        }
    }

    pub fn sum(&self) -> f64 {
        self.gamma + self.delta + self.eta
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        for (name, v) in [("gamma", self.gamma), ("delta", self.delta), ("eta", self.eta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(TrainError::Weights(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if (self.sum() - 1.0).abs() > SIMPLEX_TOL {
            return Err(TrainError::Weights(format!("weights sum to {}, not 1", self.sum())));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(TrainError::Weights(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

impl Default for DistillationWeights {
    fn default() -> Self {
        Self {
            gamma: 0.5,
            delta: 0.25,
            eta: 0.25,
            temperature: 1.0,
        }
    }
}

pub const GRID_GAMMAS: [f64; 3] = [0.3, 0.5, 0.7];
pub const GRID_KAPPAS: [f64; 3] = [0.3, 0.5, 0.7];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub gamma: f64,
    pub kappa: f64,
    pub weights: DistillationWeights,
}

/// The 9 grid points, gamma-major, at temperature 1.
pub fn hyper_grid_points() -> Vec<GridPoint> {
    let mut out = Vec::with_capacity(9);
    for gamma in GRID_GAMMAS {
        for kappa in GRID_KAPPAS {
            let weights = DistillationWeights::from_gamma_kappa(gamma, kappa, 1.0).expect("grid point on simplex");
            out.push(GridPoint { gamma, kappa, weights });
        }
    }
    out
}

pub fn hyper_grid() -> Vec<DistillationWeights> {
    hyper_grid_points().into_iter().map(|p| p.weights).collect()
}

/// Which teachers take part in student training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Ablation {
    #[default]
    #[serde(rename = "wAB")]
    WithBoth,
    #[serde(rename = "w/oA")]
    WithoutA,
    #[serde(rename = "w/oB")]
    WithoutB,
    #[serde(rename = "w/oAB")]
    WithoutBoth,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Self::WithBoth, Self::WithoutA, Self::WithoutB, Self::WithoutBoth];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::WithBoth => "wAB",
            Self::WithoutA => "w/oA",
            Self::WithoutB => "w/oB",
            Self::WithoutBoth => "w/oAB",
        }
    }

    pub fn uses_a(self) -> bool {
        matches!(self, Self::WithBoth | Self::WithoutB)
    }

    pub fn uses_b(self) -> bool {
        matches!(self, Self::WithBoth | Self::WithoutA)
    }

    /// Drops the disabled terms and renormalises the rest onto the simplex.
    pub fn apply(self, w: DistillationWeights) -> Result<DistillationWeights, TrainError> {
        w.validate()?;
        let t = w.temperature;
        let renorm = |g: f64, other: f64| -> Result<(f64, f64), TrainError> {
            let s = g + other;
            if s <= 0.0 {
                return Err(TrainError::Weights(format!("ablation {} leaves no weight", self.as_str())));
            }
            Ok((g / s, 1.0 - g / s))
        };
        match self {
            Self::WithBoth => Ok(w),
            Self::WithoutB => {
                let (g, d) = renorm(w.gamma, w.delta)?;
                DistillationWeights::new(g, d, 0.0, t)
            }
            Self::WithoutA => {
                let (g, e) = renorm(w.gamma, w.eta)?;
                DistillationWeights::new(g, 0.0, e, t)
            }
            Self::WithoutBoth => DistillationWeights::new(1.0, 0.0, 0.0, t),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Ablation {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| TrainError::Config(format!("unknown ablation {s:?} (expected wAB, w/oA, w/oB or w/oAB)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_values() {
        let pts = hyper_grid_points();
        assert_eq!(pts.len(), 9);
        for p in &pts {
            assert!((p.weights.sum() - 1.0).abs() <= 1e-12);
            assert_eq!(p.weights.temperature, 1.0);
        }
        let at = |g: f64, k: f64| pts.iter().find(|p| p.gamma == g && p.kappa == k).unwrap().weights;
        let w = at(0.3, 0.7);
        assert!((w.delta - 0.49).abs() < 1e-12 && (w.eta - 0.21).abs() < 1e-12);
        let w = at(0.7, 0.3);
        assert!((w.delta - 0.09).abs() < 1e-12 && (w.eta - 0.21).abs() < 1e-12);
    }

    #[test]
    fn ablations_renormalise() {
        let w = DistillationWeights::default();
        let b = Ablation::WithoutB.apply(w).unwrap();
        assert!((b.gamma - 2.0 / 3.0).abs() < 1e-12 && (b.delta - 1.0 / 3.0).abs() < 1e-12 && b.eta == 0.0);
        let a = Ablation::WithoutA.apply(w).unwrap();
        assert!(a.delta == 0.0 && (a.eta - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(Ablation::WithoutBoth.apply(w).unwrap(), DistillationWeights::cross_entropy_only());
        assert_eq!(Ablation::WithBoth.apply(w).unwrap(), w);
        let only_b = DistillationWeights::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(Ablation::WithoutB.apply(only_b).is_err());
    }

    #[test]
    fn invalid_weights_rejected() {
        assert!(DistillationWeights::new(0.5, 0.5, 0.5, 1.0).is_err());
        assert!(DistillationWeights::new(1.2, -0.2, 0.0, 1.0).is_err());
        assert!(DistillationWeights::new(1.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn ablation_names() {
        for a in Ablation::ALL {
            assert_eq!(a.as_str().parse::<Ablation>().unwrap(), a);
            assert_eq!(serde_json::to_string(&a).unwrap(), format!("\"{}\"", a.as_str()));
        }
        assert!("wA".parse::<Ablation>().is_err());
    }
}
