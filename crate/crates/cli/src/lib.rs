//! Command-line front end: synthesize a dataset, train, run the
//! cross-validated evaluation, and replay epochs through a trained model.

pub mod config;
pub mod evaluate;
pub mod io;
pub mod stream;
pub mod synth;
pub mod train;

pub use config::{parse_config, parse_config_str, FoldMode, RunConfig};
pub use evaluate::{cmd_evaluate, EvalReport, FoldReport, Scores};
pub use stream::{cmd_stream, StreamEvent, StreamReport};
pub use synth::{cmd_synth, SynthReport};
pub use train::{cmd_train, LossRow, TrainReport};

use ecgstate::Error;

/// Process exit status for a failed command.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 2,
        Error::NonFinite(_) => 3,
        _ => 1,
    }
}
