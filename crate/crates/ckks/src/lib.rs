//! Leveled RNS-CKKS over `Z[X]/(X^N + 1)` with hybrid key switching, plus a
//! noise-free mock backend that carries slot values in the clear while
//! following identical level and scale rules.
//!
//! ```
//! use std::collections::BTreeSet;
//! use std::sync::Arc;
//! use latent_ckks::{keygen, CkksContext, CkksParams, Decryptor, Encryptor, Evaluator};
//! use rand::SeedableRng;
//!
//! let params = CkksParams::new(1024, vec![60, 40, 60], 2f64.powi(40)).unwrap();
//! let ctx = Arc::new(CkksContext::new(&params).unwrap());
//! let keys = keygen(&ctx, &BTreeSet::from([1]), 7).unwrap();
//! let enc = Encryptor::new(ctx.clone(), keys.public_keys()).unwrap();
//! let eval = Evaluator::new(ctx.clone(), Arc::new(keys.public_keys().clone())).unwrap();
//! let dec = Decryptor::new(ctx, &keys).unwrap();
//!
//! let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(1);
//! let x = enc.encrypt(&[1.0, 2.0, 3.0], &mut rng).unwrap();
//! let y = eval.rotate(&eval.multiply_const(&x, 0.5).unwrap(), 1).unwrap();
//! let out = dec.decrypt(&y).unwrap();
//! assert!((out[0] - 1.0).abs() < 1e-6 && (out[1] - 1.5).abs() < 1e-6);
//! ```

pub mod arith;
mod ciphertext;
mod context;
mod crypt;
mod encoding;
mod error;
mod evaluator;
mod keys;
pub mod ntt;
mod params;
pub mod serialize;

pub use ciphertext::{params_id, Ciphertext, PendingProduct, Plaintext};
pub use context::{CkksContext, RnsPoly};
pub use crypt::{Decryptor, Encryptor};
pub use encoding::Encoder;
pub use error::{CkksError, Result};
pub use evaluator::{
    decompose_rotation, level_of, scale_of, Evaluator, MASK_SCALE, SCALE_TOLERANCE,
};
pub use keys::{
    galois_element, keygen, keygen_mock, power_of_two_steps, Backend, KeySet, PublicKeySet,
};
pub use serialize::Wire;
pub use params::{CkksParams, MAX_PRIME_BITS, MIN_PRIME_BITS};
