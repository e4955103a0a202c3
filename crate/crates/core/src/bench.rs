//! Encrypted inference timing across latent geometries.

use std::time::Instant;

use latent_ckks::{Backend, CkksParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::error::Result;
use crate::graph::{InputShape, ModelGraph};
use crate::latent::LatentTensor;
use crate::presets::bench_graph;
use crate::runtime::{ClientContext, LocalRefresh, ServerContext};

/// Latent shapes for downsampling factors 2, 4, 8 and 16 of a 256x256 image.
pub const GEOMETRIES: [InputShape; 4] = [
    InputShape {
        height: 128,
        width: 128,
        channels: 2,
    },
    InputShape {
        height: 64,
        width: 64,
        channels: 3,
    },
    InputShape {
        height: 32,
        width: 32,
        channels: 4,
    },
    InputShape {
        height: 16,
        width: 16,
        channels: 8,
    },
];

/// Reference ResNet-20 timings on other hardware, reported for context only.
pub const REFERENCE_PLAINTEXT_MS: f64 = 6.23;
pub const REFERENCE_ENCRYPTED_MS: f64 = 76913.72;

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub ring_degree: usize,
    pub refreshes: usize,
    pub runs_ms: Vec<f64>,
    pub median_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub backend: String,
    pub rows: Vec<BenchRow>,
    /// Whether median time strictly decreases along the listed geometries.
    pub strictly_decreasing: bool,
    pub reference_plaintext_ms: f64,
    pub reference_encrypted_ms: f64,
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn random_latent<R: Rng + ?Sized>(shape: InputShape, rng: &mut R) -> LatentTensor {
    let n = shape.height * shape.width * shape.channels;
    LatentTensor::new(
        shape.height,
        shape.width,
        shape.channels,
        (0..n).map(|_| rng.gen_range(-1.0f32..=1.0)).collect(),
    )
    .expect("sized to shape")
}

/// Times one geometry: keys are generated once, then `reps` inferences run.
pub fn bench_one(graph: &ModelGraph, params: &CkksParams, backend: Backend, reps: usize, seed: u64) -> Result<BenchRow> {
    let client = ClientContext::generate(params, graph, backend, seed)?;
    let server = ServerContext::new(graph, client.public_keys().clone())?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let latent = random_latent(graph.input, &mut rng);
    let mut runs_ms = Vec::with_capacity(reps);
    let mut refreshes = 0;
    for _ in 0..reps.max(1) {
        let req = client.encrypt(&latent, &mut rng)?;
        let mut oracle = LocalRefresh {
            client: &client,
            rng: ChaCha20Rng::seed_from_u64(rng.gen()),
        };
        let t = Instant::now();
        let (_, trace) = server.infer(&req, &mut oracle)?;
        runs_ms.push(t.elapsed().as_secs_f64() * 1e3);
        refreshes = trace.refresh_count;
    }
    Ok(BenchRow {
        height: graph.input.height,
        width: graph.input.width,
        channels: graph.input.channels,
        ring_degree: params.ring_degree,
        refreshes,
        median_ms: median(&runs_ms),
        runs_ms,
    })
}

/// Runs `graph_for(shape)` on each geometry with ring sized by [`CkksParams::for_geometry`].
pub fn bench_geometries(
    geometries: &[InputShape],
    backend: Backend,
    reps: usize,
    graph_for: impl Fn(InputShape) -> ModelGraph,
) -> Result<BenchReport> {
    let rows = geometries
        .iter()
        .map(|&g| bench_one(&graph_for(g), &CkksParams::for_geometry(g.height, g.width), backend, reps, 7))
        .collect::<Result<Vec<_>>>()?;
    Ok(BenchReport {
        backend: format!("{backend:?}").to_lowercase(),
        strictly_decreasing: rows.windows(2).all(|w| w[1].median_ms < w[0].median_ms),
        rows,
        reference_plaintext_ms: REFERENCE_PLAINTEXT_MS,
        reference_encrypted_ms: REFERENCE_ENCRYPTED_MS,
    })
}

/// The fixed small timing graph over the standard geometries.
pub fn bench_default(backend: Backend, reps: usize) -> Result<BenchReport> {
    bench_geometries(&GEOMETRIES, backend, reps, |g| bench_graph(g, 5))
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "backend {}", self.backend)?;
        for r in &self.rows {
            writeln!(
                f,
                "{:>4}x{:<4}x{:<2} N={:<6} refreshes {}  median {:>10.2} ms",
                r.height, r.width, r.channels, r.ring_degree, r.refreshes, r.median_ms
            )?;
        }
        writeln!(f, "strictly decreasing: {}", self.strictly_decreasing)?;
        write!(
            f,
            "reference ResNet-20 timings on other hardware: plaintext {} ms, encrypted {} ms",
            self.reference_plaintext_ms, self.reference_encrypted_ms
        )
    }
}
