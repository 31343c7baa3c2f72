//! Complex records, dataset files, splits and synthetic data.

mod io;
mod record;
pub mod split;
pub mod synth;
pub mod toxbench;

pub use io::{load_dataset, load_dataset_with, save_dataset, LoadOptions};
pub use record::{cap_labels, compute_density, Atom, ComplexRecord, DEFAULT_PROTEIN_ID};
pub use split::{smiles_overlap, split_by_smiles, SplitSpec};
pub use synth::{synth_generate, SynthConfig};
