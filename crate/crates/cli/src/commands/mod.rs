//! One module per subcommand.

use std::path::PathBuf;

pub mod lattice;
pub mod melnikov;
pub mod orbits;
pub mod persist;

/// Files written and non-fatal problems met along the way.
#[derive(Debug, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

impl Outcome {
    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }
}
