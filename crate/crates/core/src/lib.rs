//! Aggregation of feature-attribution maps with a restricted Boltzmann
//! machine ensemble (plus mean and variance baselines), and perturbation
//! metrics (insertion, deletion, IROF) for scoring any attribution map
//! against a black-box classifier.

pub mod attribution;
pub mod ensembles;
pub mod error;
pub mod io;
pub mod metrics;
pub mod npy;
pub mod oracle;
pub mod rbm;
pub mod superpixels;
pub mod synthetic;

pub use attribution::{
    make_noise_map, make_noise_maps, normalize_map, reduce_channels, AttributionMap,
    AttributionStack, ImageTensor, RngSeed,
};
pub use error::{Error, Result};
