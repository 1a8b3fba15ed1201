//! Self-describing structured data files.
//!
//! A file carries its own type, written in a small data-definition language
//! ([`ddlparse`], [`typesys`]). Data is accessed through uniform handles
//! ([`datamodel::DataHandle`]) regardless of where it lives: in memory, in a
//! text file ([`textcodec`]), in a sequential binary file read lazily
//! ([`streamaccess`]) or written as a stream ([`bincodec`]), or in a
//! block-structured random-access store ([`blockstore`]).

pub mod bincodec;
pub mod blockstore;
pub mod datamodel;
pub mod ddlparse;
pub mod error;
pub mod streamaccess;
pub mod textcodec;
pub mod typedesc;
pub mod typesys;

pub use datamodel::{DataHandle, MatrixShape, MatrixValue};
pub use error::{Error, Result};
pub use typesys::{Dim, Field, NumKind, TypeEnv, TypeNode};
