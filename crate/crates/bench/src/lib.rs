//! Fixtures shared by the criterion benchmarks.

use scatter_rl_core::dataset::{sample_rng, GeneratorTag};
use scatter_rl_core::{make_domain, DomainSpec, Geometry, ScattererField};

pub fn far_field(n: usize) -> DomainSpec {
    make_domain(Geometry::FarField, n).expect("valid grid size")
}

/// An uncalibrated tri-oval scatterer scaled to a weak intensity.
pub fn weak_scatterer(domain: &DomainSpec, seed: u64) -> ScattererField {
    GeneratorTag::TriOval
        .generate(domain, &mut sample_rng(seed, 0, 0))
        .scaled(0.02)
}
