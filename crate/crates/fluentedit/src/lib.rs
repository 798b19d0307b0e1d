pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod error;
pub mod io;
pub mod stoi;
pub mod vocoder;
pub mod synthdata;
pub mod training;
pub mod pipeline;
pub mod plot;
