//! Depth-image representation, 2-D Fourier spectra and the background
//! intervention family used to train the disentangled encoder.

mod augment;
mod error;
mod fourier;
mod image;
mod pgm;

pub use augment::{
    apply_random, contrast_stretch, intervene_set, motion_blur, random_motion_blur, random_noise,
    AugmentationKind, InterventionConfig,
};
pub use error::{Result, VisionError};
pub use fourier::{
    amplitude_perturb, amplitude_perturb_raw, fft2, fft2_grid, ifft2, max_phase_drift, wrap_phase,
    AmplitudePerturbation, Spectrum,
};
pub use image::DepthImage;
pub use pgm::{load_pgm, read_pgm, save_pgm, write_pgm};
