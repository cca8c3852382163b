//! The default desk-scale setup shared by the CLI and the test suites.

use crate::error::Result;
use crate::searchspace::{build_space, CellSpec, SpaceVariant};
use crate::trainer::{make_dataset, Dataset, DatasetKind};

#[derive(Clone, Debug, PartialEq)]
pub struct ToySetup {
    pub variant: SpaceVariant,
    pub num_inputs: usize,
    pub num_intermediate: usize,
    pub width: usize,
    pub kind: DatasetKind,
    pub n: usize,
    pub classes: usize,
    pub noise: f64,
    pub data_seed: u64,
}

impl Default for ToySetup {
    fn default() -> Self {
        Self {
            variant: SpaceVariant::S2p,
            num_inputs: 2,
            num_intermediate: 2,
            width: 12,
            kind: DatasetKind::Spirals,
            n: 600,
            classes: 3,
            noise: 0.1,
            data_seed: 7,
        }
    }
}

impl ToySetup {
    pub fn space(&self) -> Result<CellSpec> {
        build_space(self.variant, self.num_inputs, self.num_intermediate, self.width, None)
    }

    pub fn dataset(&self) -> Result<Dataset> {
        make_dataset(self.kind, self.n, self.classes, self.noise, self.data_seed)
    }
}
