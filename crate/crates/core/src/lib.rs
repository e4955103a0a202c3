//! Encrypted inference over compressed image latents.
//!
//! A client encrypts an `H x W x C` latent channel by channel
//! ([`runtime::ClientContext`]); the server runs a polynomial CNN on the
//! ciphertexts with public keys only ([`runtime::ServerContext`]) and returns
//! encrypted logits, which the client decrypts and passes through a sigmoid.
//!
//! ```
//! use latent_ckks::{Backend, CkksParams};
//! use latent_he::presets::bench_graph;
//! use latent_he::runtime::{ClientContext, NoRefresh, ServerContext};
//! use latent_he::graph::InputShape;
//! use latent_he::LatentTensor;
//! use rand::SeedableRng;
//!
//! let shape = InputShape { height: 4, width: 4, channels: 2 };
//! let mut graph = bench_graph(shape, 1);
//! graph.layers.remove(1); // drop the activation so no refresh is needed
//! let params = CkksParams::for_geometry(4, 4);
//! let client = ClientContext::generate(&params, &graph, Backend::Real, 9).unwrap();
//! let server = ServerContext::new(&graph, client.public_keys().clone()).unwrap();
//! assert!(server.graph.refresh_points.is_empty());
//!
//! let latent = LatentTensor::new(4, 4, 2, (0..32).map(|i| i as f32 / 32.0).collect()).unwrap();
//! let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
//! let request = client.encrypt(&latent, &mut rng).unwrap();
//! let (logits, _trace) = server.infer(&request, &mut NoRefresh).unwrap();
//! let got = client.decrypt_logits(&logits, graph.num_classes).unwrap();
//! let want = graph.plaintext_forward(&latent).unwrap();
//! assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-4));
//! ```

pub mod bench;
pub mod bundle;
pub mod error;
pub mod graph;
pub mod latent;
pub mod layout;
pub mod metrics;
pub mod packed;
pub mod plan;
pub mod presets;
pub mod protocol;
pub mod reference;
pub mod runtime;

pub use error::{Error, Result};
pub use graph::{InputShape, Layer, LayerKind, ModelGraph};
pub use latent::LatentTensor;
pub use layout::Layout;
pub use packed::{
    ActivationCoeffs, ConvWeights, LinearWeights, PackedTensor, PolyactCoeffs, SeWeights, SigmoidCoeffs,
};
pub use runtime::{ClientContext, InferenceTrace, ServerContext};
