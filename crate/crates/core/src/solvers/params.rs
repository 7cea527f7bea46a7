use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dictionary::{DictSpec, Dictionary};
use crate::error::{Error, Result};
use crate::util::write_atomic;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DictRefs {
    /// Absent in output mode, where `ĥ` is the measured output itself.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<DictSpec>,
    pub theta: DictSpec,
    pub gamma: DictSpec,
}

/// Measured output for input-output fits.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputMap {
    /// `y = x_coord`.
    Coord { coord: usize },
    /// `y = ½ x_coord²`.
    HalfSquare { coord: usize },
}

impl OutputMap {
    pub fn coord(&self) -> usize {
        match self {
            OutputMap::Coord { coord } | OutputMap::HalfSquare { coord } => *coord,
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            OutputMap::Coord { coord } => x[*coord],
            OutputMap::HalfSquare { coord } => 0.5 * x[*coord] * x[*coord],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    #[serde(default)]
    pub solver: String,
    /// `None` when not applicable (analytic transforms).
    #[serde(default)]
    pub final_cost: Option<f64>,
    #[serde(default)]
    pub sweeps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cost_trace_path: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

/// Coefficients of `ĥ = Kᵀφ`, `ζ̂ = Gᵀθ`, `η̂ = Jᵀγ` and the relative degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub r: usize,
    #[serde(rename = "K")]
    pub k: Vec<f64>,
    #[serde(rename = "G")]
    pub g: Vec<f64>,
    #[serde(rename = "J")]
    pub j: Vec<f64>,
    pub dict_refs: DictRefs,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputMap>,
    #[serde(default)]
    pub diagnostics: Diagnostics,
}

impl TransformParams {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let p: TransformParams = serde_json::from_str(&text)?;
        p.realize()?;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(self)?;
        bytes.push(b'\n');
        write_atomic(path, &bytes)
    }

    /// Builds the dictionaries and checks every length.
    pub fn realize(&self) -> Result<Transform> {
        if self.r == 0 {
            return Err(Error::input("relative degree must be at least 1"));
        }
        let theta = Dictionary::new(self.dict_refs.theta.clone())?;
        let gamma = Dictionary::new(self.dict_refs.gamma.clone())?;
        let phi = match (&self.dict_refs.phi, &self.output) {
            (Some(spec), None) => Some(Dictionary::new(spec.clone())?),
            (None, Some(_)) => None,
            _ => return Err(Error::input("exactly one of phi dictionary and output map must be set")),
        };
        let m = phi.as_ref().map_or(1, Dictionary::len);
        if self.k.len() != m || self.g.len() != theta.len() || self.j.len() != gamma.len() {
            return Err(Error::input(format!(
                "coefficient lengths (K {}, G {}, J {}) do not match dictionaries ({m}, {}, {})",
                self.k.len(),
                self.g.len(),
                self.j.len(),
                theta.len(),
                gamma.len()
            )));
        }
        if let Some(out) = &self.output {
            if out.coord() >= theta.dim() {
                return Err(Error::input("output coordinate out of range"));
            }
        }
        if [&self.k, &self.g, &self.j].iter().any(|v| v.iter().any(|c| !c.is_finite())) {
            return Err(Error::input("non-finite coefficients"));
        }
        if self.j.iter().all(|c| *c == 0.0) {
            return Err(Error::input("J is identically zero; the control map is not invertible"));
        }
        Ok(Transform {
            params: self.clone(),
            phi,
            theta,
            gamma,
        })
    }
}

/// A realized transform ready for evaluation.
#[derive(Clone, Debug)]
pub struct Transform {
    pub params: TransformParams,
    pub phi: Option<Dictionary>,
    pub theta: Dictionary,
    pub gamma: Dictionary,
}

fn dot(c: &[f64], v: &DVector<f64>) -> f64 {
    c.iter().zip(v.iter()).map(|(a, b)| a * b).sum()
}

impl Transform {
    pub fn r(&self) -> usize {
        self.params.r
    }

    pub fn dim(&self) -> usize {
        self.theta.dim()
    }

    /// `ĥ(x)`.
    pub fn h(&self, x: &DVector<f64>) -> Result<f64> {
        match (&self.phi, &self.params.output) {
            (Some(phi), _) => Ok(dot(&self.params.k, &phi.eval(x)?)),
            (None, Some(out)) => {
                if x.len() != self.dim() {
                    return Err(Error::input("state has the wrong dimension"));
                }
                Ok(self.params.k[0] * out.eval(x.as_slice()))
            }
            (None, None) => unreachable!("checked in realize"),
        }
    }

    pub fn zeta(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(dot(&self.params.g, &self.theta.eval(x)?))
    }

    pub fn eta(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(dot(&self.params.j, &self.gamma.eval(x)?))
    }

    /// `α̂ = −ζ̂/η̂`.
    pub fn alpha(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(-self.zeta(x)? / self.eta(x)?)
    }

    /// `β̂ = 1/η̂`.
    pub fn beta(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(1.0 / self.eta(x)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> TransformParams {
        TransformParams {
            r: 2,
            k: vec![0.0, 1.0, 0.0],
            g: vec![0.0; 4],
            j: vec![1.0, 0.0, 0.0, 0.0],
            dict_refs: DictRefs {
                phi: Some(DictSpec::tensor(2, 1).without_constant()),
                theta: DictSpec::tensor(2, 1),
                gamma: DictSpec::tensor(2, 1),
            },
            output: None,
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn json_round_trip_and_shape() {
        let p = sample();
        let v = serde_json::to_value(&p).unwrap();
        for key in ["r", "K", "G", "J", "dict_refs", "diagnostics"] {
            assert!(v.get(key).is_some(), "{key}");
        }
        let back: TransformParams = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("params.json");
        p.save(&path).unwrap();
        assert_eq!(TransformParams::load(&path).unwrap(), p);
    }

    #[test]
    fn evaluation_and_validation() {
        let t = sample().realize().unwrap();
        let x = DVector::from_vec(vec![2.0, 3.0]);
        assert_eq!(t.h(&x).unwrap(), 2.0);
        assert_eq!(t.eta(&x).unwrap(), 1.0);
        assert_eq!(t.alpha(&x).unwrap(), 0.0);
        let mut bad = sample();
        bad.j = vec![0.0; 4];
        assert!(bad.realize().is_err());
        let mut bad = sample();
        bad.k.push(1.0);
        assert!(bad.realize().is_err());
        let mut io = sample();
        io.dict_refs.phi = None;
        io.k = vec![1.0];
        io.output = Some(OutputMap::HalfSquare { coord: 0 });
        assert_eq!(io.realize().unwrap().h(&x).unwrap(), 2.0);
    }
}
