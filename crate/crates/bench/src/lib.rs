//! Shared fixtures for the benchmark targets.

use unmix_core::{generate, NoiseModel, SynthDataset, SynthSpec};

/// A mid-sized noisy dataset comparable to one desk-scale experiment.
pub fn benchmark_dataset(n_genes: usize, n_celltypes: usize, n_samples: usize) -> SynthDataset {
    let mut spec = SynthSpec::new(n_genes, n_celltypes, n_samples, n_genes / (5 * n_celltypes));
    spec.noise = NoiseModel::gaussian(8.0);
    generate(&spec, 4242).expect("valid benchmark spec")
}
