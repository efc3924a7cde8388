//! Run configuration: prior, costs, search settings and output preferences.

use std::path::{Path, PathBuf};

use rasp_core::{CostModel, PriorSpec, SearchOptions};
use serde::{Deserialize, Serialize};

use crate::error::{input, read_file, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    /// Where to write the JSON report; `--out` takes precedence.
    pub report: Option<PathBuf>,
    /// What goes to stdout when no report path is set.
    pub format: Format,
    /// Decimals kept in the designed interval length (2 exact, 3 approximate by default).
    pub h_digits: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub prior: PriorSpec,
    pub costs: CostModel,
    #[serde(default)]
    pub search: SearchOptions,
    #[serde(default)]
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_file(path)?;
        Self::parse(&text).map_err(|e| input(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| input(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.costs
            .validate()
            .map_err(|e| input(format!("costs: {e}")))?;
        self.search
            .validate()
            .map_err(|e| input(format!("search: {e}")))?;
        if self.costs.causes() != self.prior.causes() {
            return Err(input(format!(
                "costs.c_lin has {} entries but prior.dir_alphas has {}",
                self.costs.causes(),
                self.prior.causes()
            )));
        }
        if self.outputs.h_digits.is_some_and(|d| d > 12) {
            return Err(input("outputs.h_digits: at most 12 decimals"));
        }
        Ok(())
    }
}
