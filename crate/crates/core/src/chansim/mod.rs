//! Synthetic downlink CSI and the invertible preprocessing chain
//! (angular-domain DFT, real/imaginary stacking, patch segmentation,
//! dataset standardization) plus the `CSID` dataset file format.

mod dft;
mod generate;
mod io;
mod normalize;
mod segment;

pub use dft::{dft_angular, idft_angular};
pub use generate::{channel_from_paths, generate_channels, ChannelGeometry, CsiSample, PathParams, SampleMeta};
pub use io::{read_dataset, read_dataset_from, write_dataset, write_dataset_to, DatasetHeader};
pub use normalize::{denormalize, normalize, DatasetStats};
pub use segment::{complex_from_real, real_from_complex, Segmenter};

/// Antenna/subcarrier extents of one channel realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct CsiDims {
    pub n_rx: usize,
    pub n_tx: usize,
    pub n_sc: usize,
}

impl CsiDims {
    pub const DESK: CsiDims = CsiDims {
        n_rx: 4,
        n_tx: 8,
        n_sc: 16,
    };

    pub fn complex_len(self) -> usize {
        self.n_rx * self.n_tx * self.n_sc
    }

    /// Real dimension `N = 2·N_r·N_t·N_c`.
    pub fn real_len(self) -> usize {
        2 * self.complex_len()
    }

    /// Width of the `(N_r, N_t·N_c)` matrix layout.
    pub fn width(self) -> usize {
        self.n_tx * self.n_sc
    }
}
