//! On-disk corpus: tensor files, trajectory sidecars, manifests, splits and
//! the synthetic generator.
//!
//! Layout: `manifest.txt` at the root; per speaker a directory holding
//! `<utterance>.wav`, `<utterance>.traj`, `<utterance>.traj.meta` and the
//! speaker's `norm.txt`.

mod files;
mod manifest;
mod synth;
mod tensor_file;

pub use files::{load_mel_frames, load_trajectory, meta_path, save_mel, save_trajectory};
pub use manifest::{split, Manifest, Split, UtteranceEntry, MANIFEST_FILE};
pub use synth::{make_synthetic_corpus, SynthConfig, SYNTH_RANGES_MM};
pub use tensor_file::{DType, TensorFile};
