//! JSON documents for fitted models.
//!
//! ```json
//! {"type":"gaussian","mu":[...],"precision":[[i,j,v],...],"network":{...}}
//! {"type":"student_t","mu":[...],"nu":2.2,"precision":[...],"network":{...},
//!  "em":{"iterations":12,"final_loglik":-340.1}}
//! ```
//!
//! Precision entries are listed with `i <= j`. A model read back from its
//! document has no local factors, so its log-determinant comes from a dense
//! Cholesky of the embedded precision.

use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::CliqueForest;
use crate::gaussian::{gaussian_log_likelihood, GaussianModel, SparsePrecision};
use crate::observation::ObservationMatrix;
use crate::student::{student_log_likelihood, EmSummary, StudentTModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum Document {
    Gaussian {
        mu: Vec<f64>,
        precision: Vec<(usize, usize, f64)>,
        network: CliqueForest,
    },
    StudentT {
        mu: Vec<f64>,
        nu: f64,
        precision: Vec<(usize, usize, f64)>,
        network: CliqueForest,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        em: Option<EmSummary>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Gaussian(GaussianModel),
    StudentT(StudentTModel),
}

impl From<GaussianModel> for Model {
    fn from(m: GaussianModel) -> Self {
        Model::Gaussian(m)
    }
}

impl From<StudentTModel> for Model {
    fn from(m: StudentTModel) -> Self {
        Model::StudentT(m)
    }
}

fn precision_from(network: CliqueForest, entries: Vec<(usize, usize, f64)>) -> Result<SparsePrecision> {
    let report = network.validate();
    if !report.is_valid() {
        return Err(Error::InvalidForest(report.to_string()));
    }
    SparsePrecision::from_entries(Arc::new(network), entries)
}

impl Model {
    pub fn p(&self) -> usize {
        match self {
            Model::Gaussian(m) => m.p(),
            Model::StudentT(m) => m.p(),
        }
    }

    pub fn precision(&self) -> &SparsePrecision {
        match self {
            Model::Gaussian(m) => &m.precision,
            Model::StudentT(m) => &m.precision,
        }
    }

    pub fn log_likelihood(&self, data: &ObservationMatrix) -> Result<f64> {
        match self {
            Model::Gaussian(m) => gaussian_log_likelihood(data, m),
            Model::StudentT(m) => student_log_likelihood(data, m),
        }
    }

    fn document(&self) -> Document {
        let precision = self.precision().entries().collect();
        let network = self.precision().forest().as_ref().clone();
        match self {
            Model::Gaussian(m) => Document::Gaussian {
                mu: m.mu.iter().copied().collect(),
                precision,
                network,
            },
            Model::StudentT(m) => Document::StudentT {
                mu: m.mu.iter().copied().collect(),
                nu: m.nu,
                precision,
                network,
                em: m.em,
            },
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.document()).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document =
            serde_json::from_str(text).map_err(|e| Error::Parse(format!("model document: {e}")))?;
        match doc {
            Document::Gaussian {
                mu,
                precision,
                network,
            } => {
                let j = precision_from(network, precision)?;
                Ok(GaussianModel::new(DVector::from_vec(mu), j)?.into())
            }
            Document::StudentT {
                mu,
                nu,
                precision,
                network,
                em,
            } => {
                let j = precision_from(network, precision)?;
                let mut m = StudentTModel::new(DVector::from_vec(mu), j, nu)?;
                m.em = em;
                Ok(m.into())
            }
        }
    }

    /// The same model without local factors, as it would be read back from
    /// its document.
    pub fn detached(&self) -> Result<Self> {
        Self::from_json(&self.to_json())
    }
}
