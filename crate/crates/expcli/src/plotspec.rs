//! Declarative chart descriptions for suite CSVs. Nothing is rendered here;
//! the JSON is meant for external plotting tools.

use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlotKind {
    Fig1,
    Recovery,
    RegComparison,
    TrainingDynamics,
    Scatter,
}

impl FromStr for PlotKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" | "figA_uniform" => Ok(PlotKind::Fig1),
            "recovery" => Ok(PlotKind::Recovery),
            "reg_comparison" => Ok(PlotKind::RegComparison),
            "training_dynamics" => Ok(PlotKind::TrainingDynamics),
            "scatter" => Ok(PlotKind::Scatter),
            _ => Err(CliError::config(format!("unknown plot kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub field: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scale: Option<String>,
}

fn ch(field: &str) -> Channel {
    Channel {
        field: field.into(),
        scale: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotSpec {
    pub title: String,
    pub data: String,
    /// `line`, `boxplot` or `point`.
    pub mark: String,
    pub x: Channel,
    /// One panel or series per entry.
    pub y: Vec<Channel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub color: Option<Channel>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub facet: Vec<String>,
    /// Aggregation across replicate rows, e.g. `median` over `seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub group_by: Option<String>,
    /// Small multiples as (x, y) column pairs.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub panels: Vec<(String, String)>,
}

impl PlotKind {
    pub fn required_columns(self) -> &'static [&'static str] {
        match self {
            PlotKind::Fig1 => &["L", "seed", "cima_true", "cima_darmois", "kld_darmois"],
            PlotKind::Recovery | PlotKind::RegComparison => {
                &["L", "reg_kind", "strength", "mixing_seed", "mcc", "kld", "cima"]
            }
            PlotKind::TrainingDynamics => &["n", "seed", "reg_kind", "strength", "iteration", "loss", "loglik", "cima"],
            PlotKind::Scatter => &["s1", "s2", "x1", "x2", "hue", "lightness"],
        }
    }

    fn spec(self, data: String, header: &[String]) -> PlotSpec {
        let base = |title: &str, mark: &str, x: &str, y: &[&str]| PlotSpec {
            title: title.into(),
            data: data.clone(),
            mark: mark.into(),
            x: ch(x),
            y: y.iter().map(|f| ch(f)).collect(),
            color: None,
            facet: Vec::new(),
            aggregate: None,
            group_by: None,
            panels: Vec::new(),
        };
        match self {
            PlotKind::Fig1 => PlotSpec {
                aggregate: Some("median over seed".into()),
                ..base("C_IMA of the true mixing and the Darmois learner", "line", "L", &["cima_true", "cima_darmois"])
            },
            PlotKind::Recovery => PlotSpec {
                facet: vec!["strength".into()],
                ..base("C_IMA, KLD and MCC per depth", "boxplot", "L", &["cima", "kld", "mcc"])
            },
            PlotKind::RegComparison => PlotSpec {
                facet: vec!["reg_kind".into()],
                ..base("Regularizer comparison", "boxplot", "strength", &["cima", "kld", "mcc"])
            },
            PlotKind::TrainingDynamics => PlotSpec {
                color: Some(ch("strength")),
                facet: vec!["n".into()],
                group_by: Some("seed".into()),
                ..base("Training trajectories", "line", "iteration", &["loss", "loglik", "cima"])
            },
            PlotKind::Scatter => {
                let panels: Vec<(String, String)> = header
                    .iter()
                    .filter_map(|h| {
                        let stem = h.strip_suffix('1')?;
                        let partner = format!("{stem}2");
                        header.contains(&partner).then(|| (h.clone(), partner))
                    })
                    .collect();
                PlotSpec {
                    color: Some(Channel {
                        field: "hue".into(),
                        scale: Some("hsl(hue, 0.8, lightness); hue is the source angle in degrees, lightness grows with source radius".into()),
                    }),
                    panels,
                    ..base("Sources, observations and reconstructions", "point", "s1", &["s2"])
                }
            }
        }
    }
}

/// Checks `csv`'s header against the schema of `kind` and describes the
/// chart. The error names the first missing column.
pub fn export_plot_spec(csv: &Path, kind: PlotKind) -> Result<PlotSpec> {
    let mut reader = csv::Reader::from_path(csv)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let missing: Vec<String> = kind
        .required_columns()
        .iter()
        .filter(|c| !header.iter().any(|h| h == *c))
        .map(|c| c.to_string())
        .collect();
    if let Some(first) = missing.first() {
        return Err(CliError::Schema {
            kind: format!("{kind:?}"),
            first: first.clone(),
            missing: missing.clone(),
        });
    }
    let data = csv.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(kind.spec(data, &header))
}
