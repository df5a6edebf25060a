//! Teacher and student models behind one prediction interface.

mod forest;
mod mlp;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

pub use forest::{fit_tree, train_rf, ForestConfig, ForestModel, TreeNode};
pub use mlp::{train_mlp, Dense, MlpGradients, MlpModel, MlpTrainConfig};

use crate::sr::Expression;
use crate::{Error, Result};

/// The four model families used as teachers and students.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "NN")]
    Nn,
    #[serde(rename = "RF")]
    Rf,
    #[serde(rename = "GPp")]
    Gpp,
    #[serde(rename = "GPe")]
    Gpe,
}

impl ModelKind {
    /// Canonical row/column order of the result matrices.
    pub const ALL: [ModelKind; 4] = [ModelKind::Nn, ModelKind::Rf, ModelKind::Gpp, ModelKind::Gpe];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Nn => "NN",
            ModelKind::Rf => "RF",
            ModelKind::Gpp => "GPp",
            ModelKind::Gpe => "GPe",
        }
    }

    pub fn is_gp(self) -> bool {
        matches!(self, ModelKind::Gpp | ModelKind::Gpe)
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "nn" | "mlp" => Ok(ModelKind::Nn),
            "rf" => Ok(ModelKind::Rf),
            "gpp" => Ok(ModelKind::Gpp),
            "gpe" => Ok(ModelKind::Gpe),
            other => Err(Error::Config(format!("unknown model `{other}` (expected NN, RF, GPp or GPe)"))),
        }
    }
}

/// A trained model. All variants expect inputs in the standardized frame they
/// were trained in.
#[derive(Debug, Clone, PartialEq)]
pub enum Predictor {
    Mlp(MlpModel),
    Forest(ForestModel),
    Expression {
        kind: ModelKind,
        expr: Expression,
        n_features: usize,
    },
}

impl Predictor {
    pub fn kind(&self) -> ModelKind {
        match self {
            Predictor::Mlp(_) => ModelKind::Nn,
            Predictor::Forest(_) => ModelKind::Rf,
            Predictor::Expression { kind, .. } => *kind,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Predictor::Mlp(m) => m.n_inputs(),
            Predictor::Forest(f) => f.n_features,
            Predictor::Expression { n_features, .. } => *n_features,
        }
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        if x.ncols() != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                found: x.ncols(),
            });
        }
        match self {
            Predictor::Mlp(m) => m.forward(x),
            Predictor::Forest(f) => f.predict(x).map(Array1::from_vec),
            Predictor::Expression { expr, .. } => expr.eval(x),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::export::write_json(path, &ModelFile::from(self))
    }

    pub fn load(path: &Path) -> Result<Self> {
        crate::export::read_json::<ModelFile>(path)?.into_predictor()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ModelFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(text)?.into_predictor()
    }
}

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    model: SavedModel,
}

#[derive(Serialize, Deserialize)]
struct SavedLayer {
    inputs: usize,
    outputs: usize,
    /// Row-major `inputs × outputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind")]
enum SavedModel {
    #[serde(rename = "NN")]
    Mlp { layers: Vec<SavedLayer> },
    #[serde(rename = "RF")]
    Forest { n_features: usize, trees: Vec<TreeNode> },
    #[serde(rename = "GP")]
    Expression {
        selection: ModelKind,
        n_features: usize,
        expr: String,
    },
}

impl From<&Predictor> for ModelFile {
    fn from(p: &Predictor) -> Self {
        let model = match p {
            Predictor::Mlp(m) => SavedModel::Mlp {
                layers: m
                    .layers
                    .iter()
                    .map(|l| SavedLayer {
                        inputs: l.weights.nrows(),
                        outputs: l.weights.ncols(),
                        weights: l.weights.iter().copied().collect(),
                        bias: l.bias.to_vec(),
                    })
                    .collect(),
            },
            Predictor::Forest(f) => SavedModel::Forest {
                n_features: f.n_features,
                trees: f.trees.clone(),
            },
            Predictor::Expression {
                kind,
                expr,
                n_features,
            } => SavedModel::Expression {
                selection: *kind,
                n_features: *n_features,
                expr: expr.to_string(),
            },
        };
        ModelFile {
            version: MODEL_FILE_VERSION,
            model,
        }
    }
}

impl ModelFile {
    fn into_predictor(self) -> Result<Predictor> {
        if self.version != MODEL_FILE_VERSION {
            return Err(Error::ModelVersion(self.version));
        }
        Ok(match self.model {
            SavedModel::Mlp { layers } => {
                if layers.is_empty() {
                    return Err(Error::Empty("network layers"));
                }
                let layers = layers
                    .into_iter()
                    .map(|l| {
                        let weights = ndarray::Array2::from_shape_vec((l.inputs, l.outputs), l.weights)
                            .map_err(|_| Error::DimensionMismatch {
                                expected: l.inputs * l.outputs,
                                found: 0,
                            })?;
                        if l.bias.len() != l.outputs {
                            return Err(Error::DimensionMismatch {
                                expected: l.outputs,
                                found: l.bias.len(),
                            });
                        }
                        Ok(Dense {
                            weights,
                            bias: Array1::from_vec(l.bias),
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Predictor::Mlp(MlpModel { layers })
            }
            SavedModel::Forest { n_features, trees } => {
                let forest = ForestModel { n_features, trees };
                forest.check()?;
                Predictor::Forest(forest)
            }
            SavedModel::Expression {
                selection,
                n_features,
                expr,
            } => {
                let expr: Expression = expr.parse()?;
                if let Some(v) = expr.max_var() {
                    if v >= n_features {
                        return Err(Error::VariableOutOfRange { index: v, dims: n_features });
                    }
                }
                Predictor::Expression {
                    kind: selection,
                    expr,
                    n_features,
                }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2, Axis};

    #[test]
    fn expression_predictor() {
        let p = Predictor::Expression {
            kind: ModelKind::Gpp,
            expr: "(x0 + x1)".parse().unwrap(),
            n_features: 2,
        };
        assert_eq!(p.predict(array![[1.0, 2.0], [3.0, 4.0]].view()).unwrap(), array![3.0, 7.0]);
        assert!(p.predict(array![[1.0]].view()).is_err());
    }

    #[test]
    fn mlp_predictor_matches_forward() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i as f64 - 5.0) * 0.2 + j as f64);
        let y = x.map_axis(Axis(1), |r| r[0] - r[1]);
        let cfg = MlpTrainConfig { hidden: vec![5], max_iters: 20, ..MlpTrainConfig::default() };
        let m = train_mlp(x.view(), y.view(), &cfg).unwrap();
        let p = Predictor::Mlp(m.clone());
        assert_eq!(p.predict(x.view()).unwrap(), m.forward(x.view()).unwrap());
    }

    #[test]
    fn forest_isolated_training_point_is_exact() {
        let x = Array2::from_shape_fn((12, 1), |(i, _)| i as f64);
        let y = x.column(0).mapv(|v| v * v);
        let cfg = ForestConfig { n_trees: 5, bootstrap: false, ..ForestConfig::default() };
        let p = Predictor::Forest(train_rf(x.view(), y.view(), &cfg).unwrap());
        assert_eq!(p.predict(x.view()).unwrap(), y);
    }

    #[test]
    fn model_files_round_trip() {
        let x = Array2::from_shape_fn((16, 2), |(i, j)| ((i * 5 + j * 3) % 11) as f64 * 0.3);
        let y = x.map_axis(Axis(1), |r| r[0].sin() + r[1]);
        let mlp = train_mlp(x.view(), y.view(), &MlpTrainConfig { hidden: vec![4, 3], max_iters: 5, ..Default::default() }).unwrap();
        let rf = train_rf(x.view(), y.view(), &ForestConfig { n_trees: 3, ..Default::default() }).unwrap();
        let models = [
            Predictor::Mlp(mlp),
            Predictor::Forest(rf),
            Predictor::Expression { kind: ModelKind::Gpe, expr: "(sin(x0) + x1)".parse().unwrap(), n_features: 2 },
        ];
        let dir = tempfile::tempdir().unwrap();
        for (i, m) in models.iter().enumerate() {
            let path = dir.path().join(format!("m{i}.json"));
            m.save(&path).unwrap();
            let back = Predictor::load(&path).unwrap();
            assert_eq!(&back, m);
            assert_eq!(back.predict(x.view()).unwrap(), m.predict(x.view()).unwrap());
        }
        let text = models[2].to_json().unwrap();
        assert!(text.contains("\"version\":1"));
        let bumped = text.replace("\"version\":1", "\"version\":9");
        assert!(matches!(Predictor::from_json(&bumped), Err(Error::ModelVersion(9))));
    }

    #[test]
    fn kind_names() {
        for k in ModelKind::ALL {
            assert_eq!(k.as_str().parse::<ModelKind>().unwrap(), k);
        }
        assert!("svm".parse::<ModelKind>().is_err());
    }
}
