//! Dataset persistence, embedding file formats, snapshots and the synthetic
//! fixture generator.

pub mod dataset;
pub mod formats;
pub mod store;
pub mod synth;

pub use dataset::Dataset;
pub use formats::{export_embeddings, import_embeddings, read_jsonl, read_packed, write_jsonl, write_packed, Format};
pub use store::{DatasetStore, Snapshot};
pub use synth::{synthesize, FamilySpec, GroundTruth, OutlierSpec, SyntheticSpec, TruthRow};
