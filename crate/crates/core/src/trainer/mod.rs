//! Joint training of the encoder and WTA layers with a ranking hinge loss
//! over in-batch negatives.

mod audit;
mod graph;
mod loss;
mod optim;
mod train;

pub use audit::{finite_difference_audit, AuditReport, AuditSize, FD_STEP, GRAD_FLOOR};
pub use loss::{batch_loss, hinge_loss, BatchLossReport, MARGIN};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use train::{
    init_model, read_triples, train, write_loss_log, LossLogEntry, TrainConfig, TrainOutcome,
    TrainingTriple,
};
