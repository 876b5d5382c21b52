//! Optimizer, learning-rate schedule, training configuration and the
//! teacher/student training loops.

mod config;
mod optim;
mod train;

pub use config::{Ablation, OneCycle, TrainingConfig, CONFIG_KEYS};
pub use optim::{AdamW, FLAG_OPT_M, FLAG_OPT_V};
pub use train::{
    evaluate, evaluate_teacher, predict_samples, pretrain_drn, reconstruct, score, split_indices, student_config,
    student_objective, teacher_config, teacher_objective, teacher_step, train, train_step, BestModel, EpochHook,
    EpochLog, EvalProtocol, InputRes, Outcome, RunKind, StepLosses, StudentObjective, TrainState,
};
