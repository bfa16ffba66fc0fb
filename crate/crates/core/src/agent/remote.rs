//! Decision model backed by a chat endpoint.
//!
//! Reply grammars, one per capability:
//! - plan: one `STEP: <text>` line per plan step
//! - action: a line `ACTION: <action text>`
//! - evaluation: `VERDICT: on_track|step_done|deviated|task_done` and an
//!   optional `RATIONALE: <text>` line

use std::sync::Arc;

use super::{DecisionContext, DecisionError, DecisionModel, EvalVerdict, Plan, VerdictStatus};
use crate::chat::{ChatBackend, ChatMessage};
use crate::kb::SubGoalUnit;
use crate::microworld::ActionResult;

const SYSTEM: &str = "You control an agent in a small text world. Follow the reply format exactly.";

pub struct RemoteChat {
    backend: Arc<dyn ChatBackend>,
}

impl RemoteChat {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self { backend }
    }

    fn ask(&self, body: String) -> Result<String, DecisionError> {
        Ok(self
            .backend
            .complete(&[ChatMessage::system(SYSTEM), ChatMessage::user(body)])?)
    }
}

fn render_units(units: &[SubGoalUnit]) -> String {
    units.iter().map(SubGoalUnit::render).collect::<Vec<_>>().join("\n---\n")
}

fn context_block(ctx: &DecisionContext) -> String {
    let facts: Vec<&str> = ctx.env_docs.iter().map(|d| d.text.as_str()).collect();
    let memory: Vec<String> = ctx.memory.iter().map(|e| e.render()).collect();
    format!(
        "Goal: {}\n\nKnown facts:\n{}\n\nPast experience:\n{}\n\nRecent history:\n{}",
        ctx.goal,
        facts.join("\n"),
        render_units(ctx.exp_units),
        memory.join("\n")
    )
}

fn field<'a>(reply: &'a str, label: &str) -> Vec<&'a str> {
    let prefix = format!("{label}:");
    reply
        .lines()
        .filter_map(|l| l.trim().strip_prefix(prefix.as_str()).map(str::trim))
        .filter(|v| !v.is_empty())
        .collect()
}

pub fn parse_plan(reply: &str) -> Result<Plan, DecisionError> {
    let steps: Vec<String> = field(reply, "STEP").into_iter().map(str::to_string).collect();
    if steps.is_empty() {
        return Err(DecisionError::Malformed {
            message: "no STEP lines".into(),
            response: reply.into(),
        });
    }
    Ok(Plan::new(steps))
}

pub fn parse_action(reply: &str) -> Result<String, DecisionError> {
    field(reply, "ACTION")
        .first()
        .map(|a| a.to_string())
        .ok_or_else(|| DecisionError::Malformed {
            message: "no ACTION line".into(),
            response: reply.into(),
        })
}

pub fn parse_verdict(reply: &str) -> Result<EvalVerdict, DecisionError> {
    let malformed = |message: &str| DecisionError::Malformed {
        message: message.into(),
        response: reply.into(),
    };
    let status = match field(reply, "VERDICT").first().copied().ok_or_else(|| malformed("no VERDICT line"))? {
        "on_track" => VerdictStatus::OnTrack,
        "step_done" => VerdictStatus::StepDone,
        "deviated" => VerdictStatus::Deviated,
        "task_done" => VerdictStatus::TaskDone,
        _ => return Err(malformed("unknown verdict")),
    };
    let rationale = field(reply, "RATIONALE").first().copied().unwrap_or("").to_string();
    Ok(EvalVerdict { status, rationale })
}

impl DecisionModel for RemoteChat {
    fn propose_plan(&mut self, ctx: &DecisionContext) -> Result<Plan, DecisionError> {
        let reply = self.ask(format!(
            "{}\n\nWrite a short plan for the goal. Reply with one `STEP: <text>` line per step.",
            context_block(ctx)
        ))?;
        parse_plan(&reply)
    }

    fn propose_action(&mut self, ctx: &DecisionContext) -> Result<String, DecisionError> {
        let step = ctx.plan.map_or("", Plan::current);
        let reply = self.ask(format!(
            "{}\n\nCurrent plan step: {step}\nValid verbs: go to, open, close, take, put X in/on Y, pour X into Y, activate, deactivate, examine, read, wait, focus on, look around.\nReply with a single line `ACTION: <action>`.",
            context_block(ctx)
        ))?;
        parse_action(&reply)
    }

    fn evaluate(&mut self, ctx: &DecisionContext, last: &ActionResult) -> Result<EvalVerdict, DecisionError> {
        let reply = self.ask(format!(
            "{}\n\nLast observation: {}\nJudge progress. Reply with `VERDICT: on_track|step_done|deviated|task_done` and `RATIONALE: <one sentence>`.",
            context_block(ctx),
            last.observation
        ))?;
        parse_verdict(&reply)
    }
}
