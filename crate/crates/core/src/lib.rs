pub mod analysis;
pub mod generation;
pub mod metrics;
pub mod midi_io;
pub mod synth;
pub mod theory;
pub mod tokenizer;
