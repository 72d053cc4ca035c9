//! Leveled RNS-CKKS sized for encrypted federated averaging.
//!
//! Supported operations are exactly those an averaging server needs:
//! batch encoding of real vectors, public-key encryption, ciphertext
//! addition, multiplication by a real constant, one rescale, decryption and
//! decoding. There is no relinearization, rotation or bootstrapping.
//!
//! ```
//! use hefl_ckks::{CkksContext, CkksParams};
//!
//! let ctx = CkksContext::new(CkksParams::test_small()).unwrap();
//! let (sk, pk) = ctx.keygen(42);
//! let a = ctx.encrypt_values(&[1.0, 2.0], &pk, 1).unwrap();
//! let b = ctx.encrypt_values(&[3.0, 4.0], &pk, 2).unwrap();
//! let sum = ctx.he_add(&a, &b).unwrap();
//! let mean = ctx.rescale(&ctx.he_mul_scalar(&sum, 0.5).unwrap()).unwrap();
//! let out = ctx.decrypt_values(&mean, &sk).unwrap();
//! assert!((out[0] - 2.0).abs() < 1e-6 && (out[1] - 3.0).abs() < 1e-6);
//! ```

pub mod arith;
mod ciphertext;
mod context;
pub mod encoding;
mod error;
mod keys;
pub mod ntt;
mod params;
pub mod poly;
pub mod sampling;
pub mod serial;

pub use ciphertext::Ciphertext;
pub use context::{CkksContext, Plaintext};
pub use error::{CkksError, Result};
pub use keys::{PublicKey, SecretKey};
pub use params::{CkksParams, SecurityProfile};
pub use poly::{negacyclic_schoolbook, Domain, RnsPoly};
