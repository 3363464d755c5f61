//! Keyframe-based in-context-learning prompts for tabletop manipulation.
//!
//! Demonstrations are reduced to keyframes, discretized into integer bins,
//! and rendered as `input > output` text examples for a text-only language
//! model. Predicted action lists are parsed back, executed in a kinematic
//! tabletop simulator, and scored by per-task success predicates.

pub mod discretize;
pub mod error;
pub mod harness;
pub mod keyframe;
pub mod llm;
pub mod model;
pub mod prompt;
pub mod sim;

pub use discretize::{DiscreteAction, DiscretePose};
pub use error::{Error, Result};
pub use harness::{EvalReport, RunConfig};
pub use keyframe::KeyframeIndices;
pub use llm::{Completer, CompletionRequest, CompletionResult, Provider};
pub use model::{
    Action, Episode, GripperState, JointVelocities, ObjectObservation, Pose6, WorkspaceBounds,
};
pub use prompt::{IclExample, ParseError, ParseErrorKind, PromptBundle};
pub use sim::{Simulator, TaskId, Variation, WorldState};
