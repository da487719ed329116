//! Prompt templates for the three experiments and decoding of completions.
//!
//! Rendering is a pure function of the history: every task seen so far is
//! printed as its own block, the current task last, and the prompt stops
//! right where the subject is expected to continue (`y=` or `A: Machine`).

use chrono::{DateTime, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tasks::{MACHINE_LETTERS, REGRESSION_FEATURES};

#[derive(Debug, Error, PartialEq)]
pub enum PromptError {
    #[error("expected a {expected}-dimensional input vector, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("letter {0:?} cannot name a machine")]
    InvalidLetter(char),
    #[error("no number found in completion {0:?}")]
    NoNumber(String),
    #[error("completion {text:?} names neither machine {a} nor machine {b}")]
    NoChoice { text: String, a: char, b: char },
}

/// Which template produced a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Function,
    Bandit,
    Regression,
    PriorProbe,
}

/// A rendered prompt together with what came back, kept for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTranscript {
    pub experiment: ExperimentKind,
    pub prompt_text: String,
    pub completion_text: String,
    pub parsed: Option<f64>,
    pub timestamp: DateTime<Utc>,
}

/// Observations of all tasks seen so far; the last entry is the current task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History<O> {
    /// Number of tasks announced in the prompt header.
    pub n_tasks: usize,
    pub tasks: Vec<Vec<O>>,
}

impl<O> History<O> {
    pub fn new(n_tasks: usize) -> Self {
        Self { n_tasks, tasks: Vec::new() }
    }

    /// Open the block of the next task.
    pub fn start_task(&mut self) {
        self.tasks.push(Vec::new());
    }

    /// Append an observation to the current task, opening task 1 if needed.
    pub fn push(&mut self, obs: O) {
        if self.tasks.is_empty() {
            self.start_task();
        }
        self.tasks.last_mut().expect("non-empty").push(obs);
    }

    /// 1-based index of the current task (1 when nothing has been shown yet).
    pub fn current_task(&self) -> usize {
        self.tasks.len().max(1)
    }

    /// 1-based index of the trial about to be asked.
    pub fn current_trial(&self) -> usize {
        self.tasks.last().map_or(0, Vec::len) + 1
    }

    pub fn n_observations(&self) -> usize {
        self.tasks.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionObservation {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditObservation {
    pub letter: char,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionObservation {
    pub x: Vec<f64>,
    pub y: f64,
}

pub type FunctionHistory = History<FunctionObservation>;
pub type BanditHistory = History<BanditObservation>;
pub type RegressionHistory = History<RegressionObservation>;

fn no_negative_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// Integer rendering used by the function-learning prompt.
pub fn format_integer(v: f64) -> String {
    format!("{}", no_negative_zero(v.round()) as i64)
}

/// Rounds to one decimal, always printing the decimal (`3.0`, `-7.4`).
pub fn format_one_decimal(v: f64) -> String {
    format!("{:.1}", no_negative_zero(round_to(v, 1)))
}

/// Rounds to two decimals and prints the shortest form with at least one
/// fractional digit (`-0.81`, `-0.8`, `1.0`).
pub fn format_two_decimals(v: f64) -> String {
    let s = format!("{}", no_negative_zero(round_to(v, 2)));
    if s.contains('.') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}

/// Round half away from zero to `digits` decimals.
pub fn round_to(v: f64, digits: i32) -> f64 {
    let scale = 10f64.powi(digits);
    (v * scale).round() / scale
}

const FUNCTION_HEADER_TAIL: &str = "machines that produce an output y for a given input x.\nEach machine implements a different function.";

/// Function-learning prompt ending in `x=<query>, y=`.
pub fn render_function_prompt(history: &FunctionHistory, query_x: f64) -> String {
    let mut out = format!("You observe {} {FUNCTION_HEADER_TAIL}", history.n_tasks);
    let n_blocks = history.tasks.len().max(1);
    for i in 0..n_blocks {
        out.push_str(&format!("\n\nMachine {}:", i + 1));
        for obs in history.tasks.get(i).into_iter().flatten() {
            out.push_str(&format!("\nx={}, y={};", format_integer(obs.x), format_integer(obs.y)));
        }
    }
    out.push_str(&format!("\nx={}, y=", format_integer(query_x)));
    out
}

fn bandit_instructions(trials_per_task: usize) -> String {
    format!(
        "You are going to different casinos that own two slot machines.\n\
         Choosing the same slot machine will not always give you the same points, but one slot machine is always better than the other. \
         Within a casino, your goal is to choose the slot machine that will give you the most points over the course of {trials_per_task} trials.\n\
         Each casino owns a different pair of machine."
    )
}

fn casino_block(index: usize, lines: &[BanditObservation]) -> String {
    let mut out = format!("You have received the following points when playing in casino {index}:");
    for obs in lines {
        out.push_str(&format!("\n- Machine {} delivered {} points.", obs.letter, format_one_decimal(obs.reward)));
    }
    out
}

fn bandit_context(history: &BanditHistory, trials_per_task: usize, include_current: bool) -> String {
    let mut out = bandit_instructions(trials_per_task);
    let n_blocks = if include_current { history.tasks.len().max(1) } else { history.tasks.len() };
    for i in 0..n_blocks {
        let lines = history.tasks.get(i).map(Vec::as_slice).unwrap_or(&[]);
        out.push_str("\n\n");
        out.push_str(&casino_block(i + 1, lines));
    }
    out
}

/// Bandit prompt with the question letters in the given order.
pub fn render_bandit_prompt_ordered(
    history: &BanditHistory,
    trials_per_task: usize,
    first: char,
    second: char,
) -> String {
    let mut out = bandit_context(history, trials_per_task, true);
    out.push_str(&format!(
        "\n\nQ: We are now performing trial {} in casino {}. Which machine do you choose between machine {first} and machine {second}?\nA: Machine",
        history.current_trial(),
        history.current_task(),
    ));
    out
}

/// Bandit prompt; the order of the two letters in the question is drawn
/// uniformly at random. Returns the prompt and the order used.
pub fn render_bandit_prompt<R: Rng + ?Sized>(
    history: &BanditHistory,
    trials_per_task: usize,
    letters: [char; 2],
    rng: &mut R,
) -> (String, [char; 2]) {
    let order = if rng.random::<bool>() { letters } else { [letters[1], letters[0]] };
    (render_bandit_prompt_ordered(history, trials_per_task, order[0], order[1]), order)
}

fn check_letter(letter: char) -> Result<(), PromptError> {
    if MACHINE_LETTERS.contains(&letter) {
        Ok(())
    } else {
        Err(PromptError::InvalidLetter(letter))
    }
}

fn prior_question(letter: char) -> String {
    format!("Q: How rewarding do you expect machine {letter} to be?\nA:")
}

/// Prior probe with no casino history: instructions plus the question.
pub fn render_prior_probe_bandit(letter: char, trials_per_task: usize) -> Result<String, PromptError> {
    render_prior_probe_bandit_with_history(&History::new(0), letter, trials_per_task)
}

/// Prior probe placed after the casinos played so far.
pub fn render_prior_probe_bandit_with_history(
    history: &BanditHistory,
    letter: char,
    trials_per_task: usize,
) -> Result<String, PromptError> {
    check_letter(letter)?;
    let mut out = bandit_context(history, trials_per_task, false);
    out.push_str("\n\n");
    out.push_str(&prior_question(letter));
    Ok(out)
}

fn format_vector(x: &[f64]) -> String {
    let parts: Vec<String> = x.iter().map(|v| format_two_decimals(*v)).collect();
    format!("[ {}]", parts.join(", "))
}

/// Real-world regression prompt ending in `x=[ ...], y=`.
pub fn render_regression_prompt(history: &RegressionHistory, query_x: &[f64]) -> Result<String, PromptError> {
    let check = |x: &[f64]| {
        if x.len() == REGRESSION_FEATURES {
            Ok(())
        } else {
            Err(PromptError::Dimension { expected: REGRESSION_FEATURES, found: x.len() })
        }
    };
    check(query_x)?;
    let mut out = format!(
        "You observe an input vector x and have to predict the corresponding output y as accurately as possible. You are given {} different tasks.",
        history.n_tasks
    );
    let n_blocks = history.tasks.len().max(1);
    for i in 0..n_blocks {
        out.push_str(&format!("\n\nTask {}:", i + 1));
        for obs in history.tasks.get(i).into_iter().flatten() {
            check(&obs.x)?;
            out.push_str(&format!("\nx={}, y= {};", format_vector(&obs.x), format_two_decimals(obs.y)));
        }
    }
    out.push_str(&format!("\nx={}, y=", format_vector(query_x)));
    Ok(out)
}

fn is_minus(c: char) -> bool {
    c == '-' || c == '\u{2212}'
}

/// First decimal number in a completion.
///
/// Accepts an optional sign (ASCII or Unicode minus), thousands separators
/// of the form `12,345`, a fractional part and an exponent.
pub fn parse_numeric_completion(text: &str) -> Result<f64, PromptError> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    let digit = |i: usize| i < n && chars[i].is_ascii_digit();
    let mut i = 0;
    while i < n {
        let starts = digit(i) || (chars[i] == '.' && digit(i + 1));
        if !starts {
            i += 1;
            continue;
        }
        let negative = i > 0 && is_minus(chars[i - 1]);
        let mut lit = String::new();
        if negative {
            lit.push('-');
        }
        let mut j = i;
        while digit(j) {
            lit.push(chars[j]);
            j += 1;
            // thousands separator: exactly three digits after the comma
            if j < n && chars[j] == ',' && digit(j + 1) && digit(j + 2) && digit(j + 3) && !digit(j + 4) {
                lit.extend(&chars[j + 1..j + 4]);
                j += 4;
                while j < n && chars[j] == ',' && digit(j + 1) && digit(j + 2) && digit(j + 3) && !digit(j + 4) {
                    lit.extend(&chars[j + 1..j + 4]);
                    j += 4;
                }
                break;
            }
        }
        if j < n && chars[j] == '.' && digit(j + 1) {
            lit.push('.');
            j += 1;
            while digit(j) {
                lit.push(chars[j]);
                j += 1;
            }
        }
        if j < n && (chars[j] == 'e' || chars[j] == 'E') {
            let mut k = j + 1;
            let mut exp = String::from("e");
            if k < n && (chars[k] == '+' || is_minus(chars[k])) {
                exp.push(if chars[k] == '+' { '+' } else { '-' });
                k += 1;
            }
            if digit(k) {
                while digit(k) {
                    exp.push(chars[k]);
                    k += 1;
                }
                lit.push_str(&exp);
            }
        }
        return lit
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| PromptError::NoNumber(text.to_owned()));
    }
    Err(PromptError::NoNumber(text.to_owned()))
}

/// Arm named first in the completion, as an index into `letters`.
///
/// A letter counts only as a standalone token (case-insensitive).
pub fn parse_choice_completion(text: &str, letters: [char; 2]) -> Result<usize, PromptError> {
    for token in text.split(|c: char| !c.is_alphanumeric()) {
        let mut chars = token.chars();
        if let (Some(c), None) = (chars.next(), chars.next()) {
            let up = c.to_ascii_uppercase();
            if let Some(pos) = letters.iter().position(|&l| l.to_ascii_uppercase() == up) {
                return Ok(pos);
            }
        }
    }
    Err(PromptError::NoChoice { text: text.to_owned(), a: letters[0], b: letters[1] })
}
