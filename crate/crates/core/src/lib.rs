//! Any-order autoregressive synthesis of flat and sequential tabular data.

pub mod codec;
pub mod error;
pub mod kernel;
pub mod model;
pub mod pipeline;
pub mod qa;
pub mod schema;
pub mod store;
pub mod table;
pub mod trainer;

pub use codec::{decode, encode, DecodeRng, EncodedTable};
pub use error::{Error, Result};
pub use schema::{analyze, AnalysisOptions, ColumnKind, EncodingSpec, Strategy, TableSchema};
pub use table::RawTable;
