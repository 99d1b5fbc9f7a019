use std::path::{Path, PathBuf};

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use super::mlp::{Head, MemberRepr, MlpParams, Prediction};
use super::train::design_matrix;
use crate::dist::ComponentDistribution;
use crate::error::{ModensError, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Trained members sharing one architecture and head.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleModel {
    pub members: Vec<MlpParams>,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    schema_version: u32,
    head: Head,
    layer_sizes: Vec<usize>,
    seed: u64,
    members: Vec<MemberRepr>,
}

impl EnsembleModel {
    pub fn new(members: Vec<MlpParams>, seed: u64) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| ModensError::Config("an ensemble needs at least one member".into()))?;
        let sizes = first.layer_sizes();
        if members
            .iter()
            .any(|m| m.head != first.head || m.layer_sizes() != sizes)
        {
            return Err(ModensError::Config(
                "ensemble members must share head and layer sizes".into(),
            ));
        }
        Ok(Self { members, seed })
    }

    pub fn head(&self) -> Head {
        self.members[0].head
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        self.members[0].layer_sizes()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Covariate count the model expects (excluding the treatment input).
    pub fn n_covariates(&self) -> usize {
        let input = self.members[0].input_dim();
        match self.head() {
            Head::Propensity => input,
            _ => input - 1,
        }
    }

    fn check_outcome(&self) -> Result<()> {
        if self.head() == Head::Propensity {
            return Err(ModensError::Config(
                "propensity model cannot predict outcomes".into(),
            ));
        }
        Ok(())
    }

    /// Member predictive laws at `(x, t)`, in member order.
    pub fn predict_components(&self, x: &[f64], t: u8) -> Result<Vec<ComponentDistribution>> {
        let row = ndarray::Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| ModensError::Internal(e.to_string()))?;
        Ok(self
            .predict_components_batch(row.view(), t)?
            .pop()
            .expect("one row"))
    }

    /// Components for each covariate row with treatment `t`; outer index is the row.
    pub fn predict_components_batch(
        &self,
        covariates: ArrayView2<'_, f64>,
        t: u8,
    ) -> Result<Vec<Vec<ComponentDistribution>>> {
        self.check_outcome()?;
        if t > 1 {
            return Err(ModensError::domain(format!("treatment must be 0 or 1, got {t}")));
        }
        let n = covariates.nrows();
        let inputs = design_matrix(covariates, Some(&vec![t; n]));
        let mut rows: Vec<Vec<ComponentDistribution>> =
            (0..n).map(|_| Vec::with_capacity(self.len())).collect();
        for member in &self.members {
            for (row, pred) in rows.iter_mut().zip(member.predict_batch(inputs.view())?) {
                match pred {
                    Prediction::Outcome(c) => row.push(c),
                    Prediction::Propensity(_) => unreachable!("outcome head checked"),
                }
            }
        }
        Ok(rows)
    }
}

pub fn save_model(model: &EnsembleModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = ModelFile {
        schema_version: SCHEMA_VERSION,
        head: model.head(),
        layer_sizes: model.layer_sizes(),
        seed: model.seed,
        members: model.members.iter().map(MemberRepr::from).collect(),
    };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| ModensError::Internal(format!("serializing model: {e}")))?;
    std::fs::write(path, text + "\n").map_err(|e| ModensError::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<EnsembleModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ModensError::io(path, e))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| {
        ModensError::parse(path, format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    if file.schema_version != SCHEMA_VERSION {
        return Err(ModensError::parse(
            path,
            format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                file.schema_version
            ),
        ));
    }
    let members = file
        .members
        .into_iter()
        .enumerate()
        .map(|(j, m)| {
            m.into_params(file.head, &file.layer_sizes)
                .map_err(|e| ModensError::parse(path, format!("member {j}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    EnsembleModel::new(members, file.seed).map_err(|e| ModensError::parse(path, e.to_string()))
}

/// `model.json` → `model.propensity.json`.
pub fn propensity_path(model_path: impl AsRef<Path>) -> PathBuf {
    let p = model_path.as_ref();
    let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    p.with_file_name(format!("{stem}.propensity.json"))
}
