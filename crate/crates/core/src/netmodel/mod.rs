//! Case ingestion, per-unit normalization, admittance assembly and the
//! standing-assumption checks.

mod admittance;
mod assumptions;
mod case;
pub mod matpower;
mod raw;

use std::path::Path;

pub use admittance::{assemble as admittance_parts, build_admittance, NetworkMatrices};
pub use assumptions::{check_assumptions, AssumptionReport, BranchCheck};
pub use case::{Branch, Bus, BusId, BusKind, BusOrdering, CaseData, Generator};
pub use raw::{RawBranch, RawBus, RawCase, RawGen};

use crate::bigraph::BidirGraph;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaseFormat {
    Matpower,
    Json,
}

impl CaseFormat {
    /// Guesses the format from the file extension; `.json` is JSON,
    /// anything else is treated as a MATPOWER script.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => CaseFormat::Json,
            _ => CaseFormat::Matpower,
        }
    }
}

pub fn parse_case_str(text: &str, format: CaseFormat) -> Result<CaseData> {
    let raw = match format {
        CaseFormat::Matpower => matpower::parse_matpower(text)?,
        CaseFormat::Json => serde_json::from_str::<RawCase>(text).map_err(|e| Error::Parse {
            line: e.line(),
            msg: e.to_string(),
        })?,
    };
    raw.into_case_data()
}

pub fn parse_case(path: impl AsRef<Path>, format: CaseFormat) -> Result<CaseData> {
    let text = std::fs::read_to_string(path.as_ref())?;
    parse_case_str(&text, format)
}

/// Reads a case, picking the format from the extension.
pub fn load_case(path: impl AsRef<Path>) -> Result<CaseData> {
    let path = path.as_ref();
    parse_case(path, CaseFormat::from_path(path))
}

pub fn case_to_json(case: &CaseData) -> Result<String> {
    Ok(serde_json::to_string_pretty(&RawCase::from_case_data(case))?)
}

pub fn case_to_matpower(case: &CaseData, name: &str) -> String {
    matpower::write_matpower(&RawCase::from_case_data(case), name)
}

/// A case together with everything derived from it that the solvers share.
#[derive(Debug, Clone)]
pub struct Network {
    pub case: CaseData,
    pub matrices: NetworkMatrices,
    pub graph: BidirGraph,
}

impl Network {
    pub fn new(case: CaseData) -> Result<Self> {
        case.validate()?;
        let matrices = build_admittance(&case)?;
        let graph = BidirGraph::build(&case, &matrices.ordering)?;
        Ok(Network {
            case,
            matrices,
            graph,
        })
    }

    pub fn ordering(&self) -> &BusOrdering {
        &self.matrices.ordering
    }

    pub fn n_load(&self) -> usize {
        self.matrices.ordering.n_load
    }

    pub fn n_bus(&self) -> usize {
        self.matrices.ordering.len()
    }

    /// Internal index of the slack bus.
    pub fn slack_index(&self) -> usize {
        let c = self.case.position(self.case.slack).expect("validated case");
        self.matrices.ordering.case_to_internal[c]
    }

    pub fn check_assumptions(&self) -> AssumptionReport {
        check_assumptions(&self.matrices, &self.graph, &self.case)
    }

    pub fn bus_id(&self, internal: usize) -> BusId {
        self.case.buses[self.matrices.ordering.internal_to_case[internal]].id
    }
}
