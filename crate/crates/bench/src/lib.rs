//! Shared fixtures for the benchmarks.

use dfd_core::shapes::sphere_with_faces;
use dfd_core::{AffineTransform, Encoding, FeatureField, Handle, HandleSet, Mesh, SampleSet, VertexFeatures};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub mesh: Mesh,
    pub field: FeatureField,
    pub features: VertexFeatures,
}

/// A sphere of about `faces` faces with a randomly initialized field.
pub fn fixture(faces: usize, channels: usize) -> Fixture {
    let mesh = sphere_with_faces(faces);
    let field = FeatureField::new(Encoding::Fourier { bands: 6 }, 256, channels, &mesh.bounds(), 7);
    let features = VertexFeatures::from_field(&field, &mesh);
    Fixture { mesh, field, features }
}

pub fn random_vertices(n: usize, k: usize, seed: u64) -> Vec<u32> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..k).map(|_| r.random_range(0..n as u32)).collect()
}

pub fn translated_handles(vertices: &[u32], seed: u64) -> HandleSet {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    HandleSet::new(
        vertices
            .iter()
            .map(|&vertex| Handle {
                vertex,
                transform: AffineTransform::translation(std::array::from_fn(|_| r.random_range(-0.1..0.1))),
            })
            .collect(),
    )
}

/// `n` random points in the unit cube with random unit targets.
pub fn sample_set(n: usize, channels: usize, seed: u64) -> SampleSet {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SampleSet {
        points: Vec::with_capacity(n),
        features: Vec::with_capacity(n * channels),
        channels,
        dropped: 0,
    };
    for _ in 0..n {
        set.points.push(std::array::from_fn(|_| r.random_range(-1.0..1.0)));
        let z: Vec<f64> = (0..channels).map(|_| r.random_range(-1.0..1.0)).collect();
        let len = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        set.features.extend(z.iter().map(|v| (v / len) as f32));
    }
    set
}
