//! Waveforms, log-Mel features, masking and the synthetic speaker corpus.

mod augment;
mod corpus;
mod mel;
mod synth;

pub use augment::{apply_masks, spec_augment, Span};
pub use corpus::{
    balanced_trials, file_hash, generate_corpus, read_manifest, read_trials, read_wav, resolve, speaker_specs,
    write_manifest, write_trials, write_wav, Corpus, CorpusConfig, Trial, UttRecord, HELDOUT_MANIFEST,
    SPEAKERS_FILE, SPEAKER_F0, TRAIN_MANIFEST, TRIALS_FILE,
};
pub use mel::{
    compute_log_mel, frame_count, hz_to_mel, log_mel_energies, mel_to_hz, FeatureMap, MelFilterbank, Waveform,
    DEFAULT_SAMPLE_RATE, LOG_FLOOR, MEL_HIGH_HZ, MEL_LOW_HZ,
};
pub use synth::{
    long_term_log_spectrum, spectral_similarity, synthesize_utterance, synthesize_with_style, SynthesisStyle,
    SyntheticSpeakerSpec, MAX_F0, MIN_F0,
};
