use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{BoxBounds, Input, State, SystemModel};
use crate::error::{Error, Result};

const MAX_DEGREE: u32 = 3;

/// How the polynomial right-hand side enters the step map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelForm {
    /// `x⁺ = x + τ (p(x) + G u)`
    Euler,
    /// `x⁺ = p(x) + G u`, independent of τ.
    Map,
}

/// `coeff · Π x_i^powers[i]`
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Term {
    fn eval(&self, x: &State) -> f64 {
        self.powers
            .iter()
            .zip(x.iter())
            .fold(self.coeff, |acc, (&p, &xi)| acc * xi.powi(p as i32))
    }

    fn partial(&self, x: &State, var: usize) -> f64 {
        let p = self.powers[var];
        if p == 0 {
            return 0.0;
        }
        self.powers
            .iter()
            .zip(x.iter())
            .enumerate()
            .fold(self.coeff * p as f64, |acc, (i, (&pi, &xi))| {
                let e = if i == var { pi - 1 } else { pi };
                acc * xi.powi(e as i32)
            })
    }
}

/// User model with polynomial drift (degree ≤ 3) and constant input gains.
#[derive(Debug, Clone)]
pub struct PolynomialModel {
    name: String,
    form: ModelForm,
    state_names: Vec<String>,
    input_names: Vec<String>,
    equations: Vec<Vec<Term>>,
    gains: DMatrix<f64>,
    state_box: BoxBounds,
    input_box: BoxBounds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default)]
    name: Option<String>,
    form: ModelForm,
    states: Vec<String>,
    inputs: Vec<String>,
    state_box: Vec<[f64; 2]>,
    input_box: Vec<[f64; 2]>,
    equations: Vec<EquationSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EquationSpec {
    state: String,
    #[serde(default)]
    terms: Vec<TermSpec>,
    #[serde(default)]
    inputs: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermSpec {
    coeff: f64,
    #[serde(default)]
    powers: BTreeMap<String, u32>,
}

impl PolynomialModel {
    /// Linear map `x⁺ = A x + B u` (τ-independent).
    pub fn linear(
        name: &str,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        state_box: BoxBounds,
        input_box: BoxBounds,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || b.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "linear model needs square A and B with {n} rows"
            )));
        }
        let equations = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| a[(i, j)] != 0.0)
                    .map(|j| {
                        let mut powers = vec![0; n];
                        powers[j] = 1;
                        Term {
                            coeff: a[(i, j)],
                            powers,
                        }
                    })
                    .collect()
            })
            .collect();
        Self::from_parts(
            name,
            ModelForm::Map,
            (1..=n).map(|i| format!("x{i}")).collect(),
            (1..=b.ncols()).map(|i| format!("u{i}")).collect(),
            equations,
            b,
            state_box,
            input_box,
        )
    }

    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        name: &str,
        form: ModelForm,
        state_names: Vec<String>,
        input_names: Vec<String>,
        equations: Vec<Vec<Term>>,
        gains: DMatrix<f64>,
        state_box: BoxBounds,
        input_box: BoxBounds,
    ) -> Result<Self> {
        let n = state_names.len();
        let m = input_names.len();
        if n == 0 || m == 0 {
            return Err(Error::ModelFormat("need at least one state and one input".into()));
        }
        if equations.len() != n || gains.shape() != (n, m) {
            return Err(Error::ModelFormat(format!(
                "expected {n} equations and a {n}x{m} gain matrix"
            )));
        }
        if state_box.dim() != n || input_box.dim() != m {
            return Err(Error::ModelFormat("box dimensions do not match variables".into()));
        }
        for term in equations.iter().flatten() {
            if term.powers.len() != n {
                return Err(Error::ModelFormat("term power vector has wrong length".into()));
            }
            let degree: u32 = term.powers.iter().sum();
            if degree > MAX_DEGREE {
                return Err(Error::ModelFormat(format!(
                    "term degree {degree} exceeds {MAX_DEGREE}"
                )));
            }
        }
        Ok(Self {
            name: name.to_string(),
            form,
            state_names,
            input_names,
            equations,
            gains,
            state_box,
            input_box,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: ModelFile =
            toml::from_str(text).map_err(|e| Error::ModelFormat(e.to_string()))?;
        let n = file.states.len();
        let m = file.inputs.len();
        let state_index = |name: &str| {
            file.states
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::ModelFormat(format!("unknown state variable `{name}`")))
        };
        let input_index = |name: &str| {
            file.inputs
                .iter()
                .position(|s| s == name)
                .ok_or_else(|| Error::ModelFormat(format!("unknown input variable `{name}`")))
        };

        let mut equations: Vec<Option<Vec<Term>>> = vec![None; n];
        let mut gains = DMatrix::zeros(n, m);
        for eq in &file.equations {
            let row = state_index(&eq.state)?;
            if equations[row].is_some() {
                return Err(Error::ModelFormat(format!(
                    "duplicate equation for `{}`",
                    eq.state
                )));
            }
            let mut terms = Vec::with_capacity(eq.terms.len());
            for t in &eq.terms {
                let mut powers = vec![0; n];
                for (var, &p) in &t.powers {
                    powers[state_index(var)?] = p;
                }
                terms.push(Term {
                    coeff: t.coeff,
                    powers,
                });
            }
            for (var, &g) in &eq.inputs {
                gains[(row, input_index(var)?)] = g;
            }
            equations[row] = Some(terms);
        }
        let equations = equations
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                e.ok_or_else(|| {
                    Error::ModelFormat(format!("missing equation for `{}`", file.states[i]))
                })
            })
            .collect::<Result<Vec<_>>>()?;

        Self::from_parts(
            file.name.as_deref().unwrap_or("polynomial"),
            file.form,
            file.states.clone(),
            file.inputs.clone(),
            equations,
            gains,
            BoxBounds::from_intervals(&file.state_box)?,
            BoxBounds::from_intervals(&file.input_box)?,
        )
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn state_names(&self) -> &[String] {
        &self.state_names
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    fn poly(&self, x: &State) -> State {
        DVector::from_iterator(
            self.equations.len(),
            self.equations
                .iter()
                .map(|terms| terms.iter().map(|t| t.eval(x)).sum::<f64>()),
        )
    }
}

impl SystemModel for PolynomialModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn state_dim(&self) -> usize {
        self.state_names.len()
    }

    fn input_dim(&self) -> usize {
        self.input_names.len()
    }

    fn drift(&self, x: &State, tau: f64) -> Result<State> {
        Ok(match self.form {
            ModelForm::Euler => x + self.poly(x) * tau,
            ModelForm::Map => self.poly(x),
        })
    }

    fn input_matrix(&self, tau: f64) -> DMatrix<f64> {
        match self.form {
            ModelForm::Euler => &self.gains * tau,
            ModelForm::Map => self.gains.clone(),
        }
    }

    fn state_jacobian(&self, x: &State, _u: &Input, tau: f64) -> Result<DMatrix<f64>> {
        let n = self.state_dim();
        let mut jac = DMatrix::from_fn(n, n, |i, j| {
            self.equations[i].iter().map(|t| t.partial(x, j)).sum::<f64>()
        });
        if self.form == ModelForm::Euler {
            jac *= tau;
            jac += DMatrix::identity(n, n);
        }
        Ok(jac)
    }

    fn state_box(&self) -> &BoxBounds {
        &self.state_box
    }

    fn input_box(&self) -> &BoxBounds {
        &self.input_box
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{finite_difference_jacobian, jacobians, step};

    const CUBIC: &str = r#"
name = "cubic"
form = "euler"
states = ["p", "q"]
inputs = ["u"]
state_box = [[-2.0, 2.0], [-2.0, 2.0]]
input_box = [[-5.0, 5.0]]

[[equations]]
state = "p"
terms = [{ coeff = 1.0, powers = { q = 1 } }]

[[equations]]
state = "q"
terms = [
  { coeff = -0.5, powers = { p = 1 } },
  { coeff = -0.3, powers = { p = 2, q = 1 } },
]
inputs = { u = 1.0 }
"#;

    #[test]
    fn linear_test_model_jacobians() {
        let m = PolynomialModel::linear(
            "lin",
            DMatrix::from_element(1, 1, 0.9),
            DMatrix::from_element(1, 1, 0.2),
            BoxBounds::uniform(1, -10.0, 10.0),
            BoxBounds::uniform(1, -10.0, 10.0),
        )
        .unwrap();
        for x in [-3.0, 0.0, 7.5] {
            let (a, b) =
                jacobians(&m, &DVector::from_element(1, x), &DVector::zeros(1), 1.0).unwrap();
            assert_eq!(a[(0, 0)], 0.9);
            assert_eq!(b[(0, 0)], 0.2);
        }
    }

    #[test]
    fn parses_model_file_and_differentiates() {
        let m = PolynomialModel::from_toml_str(CUBIC).unwrap();
        assert_eq!(m.state_dim(), 2);
        let x = DVector::from_vec(vec![0.7, -0.4]);
        let u = DVector::from_vec(vec![0.3]);
        let next = step(&m, &x, &u, 0.1).unwrap();
        let q_dot = -0.5 * 0.7 - 0.3 * 0.49 * -0.4 + 0.3;
        assert!((next[1] - (-0.4 + 0.1 * q_dot)).abs() < 1e-14);
        let a = m.state_jacobian(&x, &u, 0.1).unwrap();
        let fd = finite_difference_jacobian(&m, &x, &u, 0.1).unwrap();
        assert!((&a - &fd).amax() < 1e-8);
    }

    #[test]
    fn rejects_bad_files() {
        let degree4 = CUBIC.replace("{ p = 2, q = 1 }", "{ p = 2, q = 2 }");
        assert!(PolynomialModel::from_toml_str(&degree4).is_err());
        let unknown = CUBIC.replace("powers = { q = 1 }", "powers = { z = 1 }");
        assert!(PolynomialModel::from_toml_str(&unknown).is_err());
        let missing = CUBIC.replace("state = \"q\"", "state = \"p\"");
        assert!(PolynomialModel::from_toml_str(&missing).is_err());
    }
}
