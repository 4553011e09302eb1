//! Finite dyadic trees with arbitrary positive leaf masses, and the objects
//! built on top of them: generalized Haar systems, Haar shifts, convex body
//! averages, sparse families, matrix weights, Carleson embeddings and Orlicz
//! norms. Every supremum over cubes is an exact finite maximum.

pub mod carleson;
pub mod convexbody;
pub mod dyadic;
pub mod error;
pub mod function;
pub mod haar;
pub mod linalg;
pub mod orlicz;
pub mod seed;
pub mod shifts;
pub mod sparse;
pub mod weights;

pub use error::{Error, Result};
