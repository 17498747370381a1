//! Bowen's f-invariant for measure-preserving actions of free groups and
//! free semigroups, and its relation to entropy counted along uniformly
//! random permutation models.
//!
//! * [`freegrp`]: words, balls and subtrees of the Cayley tree.
//! * [`weights`]: weights on the colored symbol graph, `d_*`, `F(W)` and
//!   lattice rounding.
//! * [`systems`]: Bernoulli, Markov, finite and product actions with their
//!   pattern distributions and `F(T, phi^{B(e,m)})`.
//! * [`counting`]: exact expected microstate counts over uniformly random
//!   homomorphisms into `Sym(n)`.
//! * [`montecarlo`]: seeded sampling of random homomorphisms.

pub mod counting;
pub mod error;
pub mod exact;
pub mod freegrp;
pub mod montecarlo;
pub mod systems;
pub mod weights;

pub use error::{Error, Result};
pub use freegrp::{Automorphism, GroupKind, GroupSpec, Word};
pub use systems::System;
pub use weights::Weight;
