//! Text grammar for in-context examples and the response parser.
//!
//! Grammar (version 1):
//!
//! ```text
//! observation := NAME ": [" tx ", " ty ", " tz ", " rr ", " rp ", " ry "]"
//! action      := "[" tx ", " ty ", " tz ", " rr ", " rp ", " ry ", " g "]"
//! input       := "{" observation (", " observation)* ", " INSTRUCTION "}"
//! output      := "{" action (", " action)* "}"
//! body        := input " > " output (", " input " > " output)* ", " input " > "
//! ```
//!
//! Closed-loop outputs additionally carry an observation block
//! `"{" observation (", " observation)* "}"` between consecutive actions.

use std::fmt;

use crate::discretize::{
    discretize_action, discretize_pose, DiscreteAction, DiscretePose, ROTATION_BINS,
    TRANSLATION_BINS,
};
use crate::error::{Error, Result};
use crate::keyframe::KeyframeIndices;
use crate::model::{Episode, GripperState, ObjectObservation, WorkspaceBounds};

pub const GRAMMAR_VERSION: u32 = 1;

/// Separator between input and output of one example.
pub const PAIR_ARROW: &str = " > ";
/// Separator between consecutive examples and between list items.
pub const LIST_SEP: &str = ", ";

const SYSTEM_PROMPTS: [&str; 3] = [
    "You are a Franka Panda robot with a parallel gripper. We provide you with some demos in the \
     format of observation>[action_1, action_2, ...]. Then you will receive a new observation and \
     you need to output a sequence of actions that match the trends in the demos. Do not output \
     anything else.",
    "You are an end-effector Franka Panda robot equipped with a parallel gripper. We will give you \
     a series of demonstrations in the format observation>[action_1, action_2, ...]. Afterward, \
     you will receive a new observation, and your task is to generate a sequence of actions that \
     align with the patterns shown in the demos. Make sure to only output the actions and nothing \
     else.",
    "You are a Franka Panda robot equipped with a parallel gripper. We will provide you with \
     demonstrations in the format: observation>[action_1, action_2, ...]. Afterward, you will \
     receive a new observation and must generate a sequence of actions that align with the \
     patterns shown in the demos. Ensure that nothing else is included in your output.",
];

/// The original system prompt followed by its two paraphrases.
pub fn default_system_prompts() -> [&'static str; 3] {
    SYSTEM_PROMPTS
}

/// One in-context example: an input string and the output string it maps to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IclExample {
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system: String,
    pub body: String,
}

fn join_ints(values: &[u16]) -> String {
    values
        .iter()
        .map(u16::to_string)
        .collect::<Vec<_>>()
        .join(LIST_SEP)
}

pub fn format_observation(name: &str, pose: &DiscretePose) -> Result<String> {
    if name.is_empty() {
        return Err(Error::Argument("observation name is empty".into()));
    }
    Ok(format!("{name}: [{}]", join_ints(&pose.bins())))
}

pub fn format_action(action: &DiscreteAction) -> String {
    format!("[{}]", join_ints(&action.values()))
}

/// `{a1, a2, ...}`
pub fn format_actions(actions: &[DiscreteAction]) -> String {
    let items: Vec<String> = actions.iter().map(format_action).collect();
    format!("{{{}}}", items.join(LIST_SEP))
}

fn format_observations(
    objects: &[ObjectObservation],
    bounds: &WorkspaceBounds,
) -> Result<Vec<String>> {
    objects
        .iter()
        .map(|o| format_observation(&o.name, &discretize_pose(&o.pose, bounds)?))
        .collect()
}

/// Concatenated pose bins of all objects, in roster order.
pub fn observation_bins(objects: &[ObjectObservation], bounds: &WorkspaceBounds) -> Result<Vec<u16>> {
    let mut out = Vec::with_capacity(objects.len() * 6);
    for o in objects {
        out.extend(discretize_pose(&o.pose, bounds)?.bins());
    }
    Ok(out)
}

/// Input string for a set of observations and an instruction:
/// `{obs_1, ..., obs_m, instruction}`.
pub fn format_input(
    objects: &[ObjectObservation],
    instruction: &str,
    bounds: &WorkspaceBounds,
) -> Result<String> {
    if instruction.is_empty() {
        return Err(Error::Argument("instruction is empty".into()));
    }
    let mut parts = format_observations(objects, bounds)?;
    parts.push(instruction.to_string());
    Ok(format!("{{{}}}", parts.join(LIST_SEP)))
}

/// Discretized actions at every keyframe after the first.
pub fn keyframe_actions(
    episode: &Episode,
    keyframes: &KeyframeIndices,
    bounds: &WorkspaceBounds,
) -> Result<Vec<DiscreteAction>> {
    let idx = keyframes.as_slice();
    if idx.len() < 2 {
        return Err(Error::Build(format!(
            "{} keyframe(s) leave no output actions once the first is dropped",
            idx.len()
        )));
    }
    idx[1..]
        .iter()
        .map(|&t| {
            let action = episode.actions().get(t).ok_or_else(|| {
                Error::Build(format!("keyframe {t} beyond episode length {}", episode.len()))
            })?;
            discretize_action(action, bounds)
        })
        .collect()
}

/// Open-loop example: initial observations plus instruction in, keyframe
/// actions (first keyframe dropped) out.
pub fn build_icl_example(
    episode: &Episode,
    keyframes: &KeyframeIndices,
    bounds: &WorkspaceBounds,
) -> Result<IclExample> {
    let actions = keyframe_actions(episode, keyframes, bounds)?;
    Ok(IclExample {
        input: format_input(episode.objects(), episode.instruction(), bounds)?,
        output: format_actions(&actions),
    })
}

/// Closed-loop example. The input holds the observations at the first
/// keyframe; the output alternates each action with the observation block
/// taken at the keyframe where that action was reached, ending on the last
/// action. `object_poses` yields the object observations at a timestep.
pub fn build_closed_loop_example<F>(
    episode: &Episode,
    keyframes: &KeyframeIndices,
    bounds: &WorkspaceBounds,
    object_poses: F,
) -> Result<IclExample>
where
    F: Fn(usize) -> Option<Vec<ObjectObservation>>,
{
    let actions = keyframe_actions(episode, keyframes, bounds)?;
    let idx = keyframes.as_slice();
    let observe = |t: usize| {
        object_poses(t).ok_or_else(|| Error::Build(format!("no object poses for timestep {t}")))
    };
    let input = format_input(&observe(idx[0])?, episode.instruction(), bounds)?;
    let mut items = Vec::with_capacity(actions.len() * 2);
    for (i, action) in actions.iter().enumerate() {
        items.push(format_action(action));
        let t = idx[i + 1];
        if i + 1 < actions.len() {
            let obs = format_observations(&observe(t)?, bounds)?;
            items.push(format!("{{{}}}", obs.join(LIST_SEP)));
        }
    }
    Ok(IclExample {
        input,
        output: format!("{{{}}}", items.join(LIST_SEP)),
    })
}

/// `x1 > y1, ..., xn > yn, x_test > `
pub fn assemble_prompt(examples: &[IclExample], test_input: &str, system: &str) -> Result<PromptBundle> {
    if examples.is_empty() {
        return Err(Error::Assembly("no examples".into()));
    }
    if test_input.is_empty() {
        return Err(Error::Assembly("test input is empty".into()));
    }
    let mut body = String::new();
    for ex in examples {
        body.push_str(&ex.input);
        body.push_str(PAIR_ARROW);
        body.push_str(&ex.output);
        body.push_str(LIST_SEP);
    }
    body.push_str(test_input);
    body.push_str(PAIR_ARROW);
    Ok(PromptBundle {
        system: system.to_string(),
        body,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// Nothing resembling an action was found.
    NoActions,
    /// A bin value falls outside its range.
    Range,
    /// An integer bracket does not hold exactly seven values.
    Arity,
    /// Strict mode only: the text is not exactly the canonical output form.
    Grammar,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Byte offset of the offending bracket, when there is one.
    pub position: Option<usize>,
    pub detail: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            ParseErrorKind::NoActions => "no_actions",
            ParseErrorKind::Range => "range",
            ParseErrorKind::Arity => "arity",
            ParseErrorKind::Grammar => "grammar",
        };
        write!(f, "response parse error ({kind}")?;
        if let Some(p) = self.position {
            write!(f, " at byte {p}")?;
        }
        write!(f, "): {}", self.detail)
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    /// Accepts stray text, markdown fences, missing braces, and closed-loop
    /// observation blocks around the actions.
    #[default]
    Lenient,
    /// Requires exactly `{[..], [..], ...}` with canonical spacing, modulo
    /// surrounding whitespace.
    Strict,
}

pub fn parse_response(text: &str) -> Result<Vec<DiscreteAction>, ParseError> {
    parse_response_with(text, ParseMode::Lenient)
}

/// Parses arbitrary bytes; invalid UTF-8 is replaced before scanning.
pub fn parse_response_bytes(bytes: &[u8]) -> Result<Vec<DiscreteAction>, ParseError> {
    parse_response(&String::from_utf8_lossy(bytes))
}

pub fn parse_response_with(text: &str, mode: ParseMode) -> Result<Vec<DiscreteAction>, ParseError> {
    let actions = scan_actions(text)?;
    if actions.is_empty() {
        return Err(ParseError {
            kind: ParseErrorKind::NoActions,
            position: None,
            detail: "no bracketed 7-integer action found".into(),
        });
    }
    if mode == ParseMode::Strict && text.trim() != format_actions(&actions) {
        return Err(ParseError {
            kind: ParseErrorKind::Grammar,
            position: None,
            detail: "text is not in canonical output form".into(),
        });
    }
    Ok(actions)
}

fn scan_actions(text: &str) -> Result<Vec<DiscreteAction>, ParseError> {
    let bytes = text.as_bytes();
    let mut actions = Vec::new();
    let mut cursor = 0;
    while let Some(rel) = bytes[cursor..].iter().position(|&b| b == b'[') {
        let open = cursor + rel;
        let Some(rel_end) = bytes[open + 1..].iter().position(|&b| b == b']' || b == b'[') else {
            break;
        };
        let close = open + 1 + rel_end;
        if bytes[close] == b'[' {
            cursor = close;
            continue;
        }
        cursor = close + 1;
        // '[' and ']' are ASCII, so both offsets are char boundaries.
        let Some(values) = parse_int_list(&text[open + 1..close]) else {
            continue;
        };
        if preceded_by_colon(bytes, open) {
            // `name: [..]` is an observation echoed by the model, not an action
            continue;
        }
        actions.push(action_from_values(&values, open)?);
    }
    Ok(actions)
}

fn preceded_by_colon(bytes: &[u8], open: usize) -> bool {
    bytes[..open]
        .iter()
        .rev()
        .find(|b| !b.is_ascii_whitespace())
        .is_some_and(|&b| b == b':')
}

/// Comma-separated signed integers; `None` if any item is not an integer.
/// Values too large for i64 saturate so they surface as range errors.
fn parse_int_list(inner: &str) -> Option<Vec<i64>> {
    if inner.trim().is_empty() {
        return None;
    }
    inner
        .split(',')
        .map(|item| {
            let item = item.trim();
            let (negative, digits) = match item.as_bytes().first()? {
                b'-' => (true, &item[1..]),
                b'+' => (false, &item[1..]),
                _ => (false, item),
            };
            if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            let magnitude = digits.parse::<i64>().unwrap_or(i64::MAX);
            Some(if negative { -magnitude } else { magnitude })
        })
        .collect()
}

fn action_from_values(values: &[i64], position: usize) -> Result<DiscreteAction, ParseError> {
    if values.len() != 7 {
        return Err(ParseError {
            kind: ParseErrorKind::Arity,
            position: Some(position),
            detail: format!("expected 7 integers, found {}", values.len()),
        });
    }
    let range_err = |i: usize, limit: u16| ParseError {
        kind: ParseErrorKind::Range,
        position: Some(position),
        detail: format!("value {} at index {i} outside [0, {limit})", values[i]),
    };
    let mut bins = [0u16; 6];
    for (i, bin) in bins.iter_mut().enumerate() {
        let limit = if i < 3 { TRANSLATION_BINS } else { ROTATION_BINS };
        if !(0..i64::from(limit)).contains(&values[i]) {
            return Err(range_err(i, limit));
        }
        *bin = values[i] as u16;
    }
    let gripper = match values[6] {
        1 => GripperState::Open,
        0 => GripperState::Closed,
        _ => return Err(range_err(6, 2)),
    };
    let pose = DiscretePose::from_bins(bins).expect("bins checked above");
    Ok(DiscreteAction::new(pose, gripper))
}
