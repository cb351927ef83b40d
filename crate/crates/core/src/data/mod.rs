//! Recording ingestion and the temporal-graph data model: normalization,
//! derivative channel, windows, folds, neuron subsets and label mapping.

mod labels;
mod recording;
mod windows;

pub use labels::{map_label, map_labels, LabelScheme, StateLabel};
pub use recording::{
    compute_derivative, load_recording, normalize_recording, normalize_row, render_recording,
    save_recording, select_neurons, shared_neurons, RecordingFormat, Selection, WormRecording,
    RECORDING_FORMAT, RECORDING_VERSION,
};
pub use windows::{
    assign_folds, n_choose_k, windowize, worm_permutations, FoldAssignment, FoldSplit, Window,
    DEFAULT_FOLDS, DEFAULT_WINDOW_LEN,
};

/// The fifteen neurons identified in every individual of the training corpus.
pub const TRAINING_SHARED_NEURONS: [&str; 15] = [
    "AIBL", "AIBR", "ALA", "AVAL", "AVAR", "AVBL", "AVER", "RID", "RIML", "RIMR", "RMED", "RMEL",
    "RMER", "VB01", "VB02",
];

/// The three neurons shared between the training and extended-evaluation corpora.
pub const CROSS_CORPUS_NEURONS: [&str; 3] = ["AIBR", "AVAL", "VB02"];

/// Loads, selects and normalizes a recording in one go.
pub fn prepare_recording(
    rec: &WormRecording,
    neurons: Option<&[String]>,
    selection: Selection,
) -> crate::Result<WormRecording> {
    let selected = match neurons {
        Some(names) => select_neurons(rec, names, selection)?,
        None => rec.clone(),
    };
    Ok(normalize_recording(&selected))
}
