//! One function per subcommand. Each stages its outputs in an [`OutputDir`]
//! and writes `report.json`; the caller commits the directory.

pub mod adv;
pub mod corrupt;
pub mod detector;
pub mod dump;
pub mod flip;
pub mod ood;
pub mod train;

pub use adv::{cmd_eval_adv, AdvReport};
pub use corrupt::{cmd_eval_corrupt, CorruptionReport};
pub use detector::{cmd_eval_detector, DetectorCommandReport};
pub use dump::{cmd_dump_patterns, DumpReport};
pub use flip::{cmd_eval_flip, FlipReport};
pub use ood::{cmd_eval_ood, OodReport};
pub use train::{cmd_train, TrainCommandReport};
