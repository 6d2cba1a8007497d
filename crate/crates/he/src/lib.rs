//! RLWE homomorphic encryption (BFV) for private information retrieval.
//!
//! All objects carry the identifier of the parameter set they were made under and are
//! rejected by an evaluator built for different parameters.

pub mod arith;
mod bfv;
mod encoding;
mod error;
mod keys;
pub mod ntt;
mod params;
mod rns;
pub mod serialize;

pub use bfv::{expansion_levels, Bfv, Ciphertext, LiftedCiphertext, NttCiphertext, TensorAccumulator};
pub use encoding::{PlainPoly, Plaintext, RecordCodec, SlotEncoder};
pub use error::{HeError, Result};
pub use keys::{expansion_galois_elements, EvalCircuit, EvalKeys, SecretKey};
pub use params::{max_modulus_bits_128, plain_modulus_for, HeParams, MIN_SLOT_BITS, TOY_SECURITY};
