//! Prompt text for the inquirers. Every prompt is an instruction, the
//! requirement input and a few demonstrations.

use crate::dataset::DefectType;
use crate::gateway::Message;

use super::{ClarificationQuery, DiscrepancyReport, Requirement};

pub(crate) const NO_VAGUENESS: &str = "does not contain vagueness";
pub(crate) const NO_AMBIGUITY: &str = "does not contain ambiguity";
pub(crate) const UNUSABLE: &str = "UNUSABLE";

struct VaguenessDemo {
    requirement: &'static str,
    reason: &'static str,
    query: &'static str,
}

fn vagueness_demos(vtype: DefectType) -> &'static [VaguenessDemo] {
    match vtype {
        DefectType::Temporal => &[
            VaguenessDemo {
                requirement: "After the alarm is raised, the pump shall stop soon.",
                reason: "The time by which the pump stops is not bounded.",
                query: "Within how many seconds after the alarm must the pump stop?",
            },
            VaguenessDemo {
                requirement: "The temperature stays below 90 for a while after start-up.",
                reason: "The duration of the constraint is not given.",
                query: "For how many seconds after start-up must the temperature stay below 90?",
            },
        ],
        DefectType::Numerical => &[
            VaguenessDemo {
                requirement: "When the pressure is high, the relief valve opens within 2 seconds.",
                reason: "No threshold is given for a high pressure.",
                query: "Above what pressure value should the relief valve open?",
            },
            VaguenessDemo {
                requirement: "The motor current must drop after the brake engages.",
                reason: "The value the current must drop to is missing.",
                query: "Below what value must the motor current drop?",
            },
        ],
        _ => &[
            VaguenessDemo {
                requirement: "The speed exceeds 50, the brake activates within 1 second.",
                reason: "The logical relation between the two clauses is not stated.",
                query: "Should the brake activate whenever the speed exceeds 50?",
            },
            VaguenessDemo {
                requirement: "The heater turns on and possibly the fan runs.",
                reason: "It is unclear whether the fan is required, optional or conditional on the heater.",
                query: "Must the fan run whenever the heater turns on?",
            },
        ],
    }
}

fn type_description(vtype: DefectType) -> &'static str {
    match vtype {
        DefectType::Temporal => "temporal vagueness: a time bound or duration is missing or imprecise",
        DefectType::Numerical => "numerical vagueness: a threshold or value is missing or only qualitative",
        DefectType::ConditionalLogic => {
            "conditional-logic vagueness: the logical or conditional relation between parts is missing"
        }
        DefectType::Referential => "referential ambiguity: it is unclear which signal is meant",
        DefectType::Semantic => "semantic ambiguity: the scope or ordering of constraints is unclear",
    }
}

pub(crate) fn vagueness_query(requirement: &Requirement, vtype: DefectType) -> Vec<Message> {
    let mut system = format!(
        "Instruction: You help an engineer make a natural language requirement precise enough to translate into \
         Signal Temporal Logic. The requirement has {}. Reason step by step about what information is missing, then \
         ask the user one short question that would supply it. Focus only on this vagueness type and do not ask \
         about anything else. If the requirement in fact has no such vagueness, reply exactly: The requirement {}.\n\
         Answer in the form:\nIncompleteness Reason: <reason>\nQuery: <question>\n\nDemonstrations:\n",
        type_description(vtype),
        NO_VAGUENESS
    );
    for demo in vagueness_demos(vtype) {
        system.push_str(&format!(
            "Reference Requirement: {}\nIncompleteness Reason: {}\nReference Query: {}\n\n",
            demo.requirement, demo.reason, demo.query
        ));
    }
    vec![
        Message::system(system.trim_end()),
        Message::user(format!(
            "Requirement: {}\nVagueness type: {vtype}",
            requirement.text
        )),
    ]
}

pub(crate) fn candidates(requirement: &Requirement) -> Vec<Message> {
    vec![
        Message::system(format!(
            "Instruction: Translate the requirement into one Signal Temporal Logic formula. {}\n\n{}",
            FORMULA_SYNTAX,
            transform_demos()
        )),
        Message::user(format!("Requirement: {}\nSTL:", requirement.text)),
    ]
}

pub(crate) fn back_translation(formula: &str) -> Vec<Message> {
    vec![
        Message::system(
            "Instruction: Describe the Signal Temporal Logic formula in English using exactly this scheme and nothing \
             else. G[l,u] p: \"At every time in [l, u] seconds, <p>\". F[l,u] p: \"At some time in [l, u] seconds, \
             <p>\". p U[l,u] q: \"<p> holds from now until, at some time in [l, u] seconds, <q>\". x > c: \"signal x \
             is above c\"; < is below, >= is at least, <= is at most. & is and, | is or, p -> q is \"if <p>, then \
             <q>\", ! is \"it is not the case that\". Parenthesise compound operands.",
        ),
        Message::user(format!("Formula: {formula}\nDescription:")),
    ]
}

pub(crate) fn discrepancies(requirement: &Requirement, descriptions: &[String]) -> Vec<Message> {
    let listed: Vec<String> = descriptions
        .iter()
        .enumerate()
        .map(|(i, d)| format!("Interpretation {}: {d}", i + 1))
        .collect();
    vec![
        Message::system(
            "Instruction: Several candidate formalisations of one requirement are described below. Compare them and \
             list every point where they disagree. For each point give the aspect of the requirement that is read \
             differently and the competing interpretations. Reply with JSON only: {\"divergence_points\": \
             [{\"aspect\": \"..\", \"interpretations\": [\"..\", \"..\"]}]}. Reply with an empty list when they agree.",
        ),
        Message::user(format!("Requirement: {}\n{}", requirement.text, listed.join("\n"))),
    ]
}

pub(crate) fn ambiguity_query(
    requirement: &Requirement,
    report: &DiscrepancyReport,
) -> Vec<Message> {
    let points: Vec<String> = report
        .divergence_points
        .iter()
        .enumerate()
        .map(|(i, p)| format!("{}. {}: {}", i + 1, p.aspect, p.interpretations.join(" / ")))
        .collect();
    vec![
        Message::system(format!(
            "Instruction: The requirement can be read in more than one way. Ask the user one short question that \
             resolves the first divergence point below. Ask only about the divergence points identified in the \
             report and mention the aspect in the question. If the requirement in fact has no such ambiguity, reply \
             exactly: The requirement {NO_AMBIGUITY}.\n\nDemonstration:\nRequirement: When the door opens the light \
             turns on for 5 seconds.\nDivergence: start of the 5-second window: from the moment the door opens / \
             from the moment the light turns on\nQuery: Do the 5 seconds start when the door opens or when the light \
             turns on?"
        )),
        Message::user(format!("Requirement: {}\nDivergence points:\n{}\nQuery:", requirement.text, points.join("\n"))),
    ]
}

pub(crate) fn refine(
    requirement: &Requirement,
    query: &ClarificationQuery,
    answer: &str,
) -> Vec<Message> {
    vec![
        Message::system(format!(
            "Instruction: Rewrite the requirement so that it includes the information in the user's answer. \
             Conditions: (1) preserve all original content; (2) modify only the fragment the query asked about; \
             (3) introduce no constraint the user has not confirmed. If the answer does not address the query, \
             reply exactly: {UNUSABLE}. Otherwise reply with the rewritten requirement only.\n\nDemonstration:\n\
             Requirement: When the pressure is high, the relief valve opens within 2 seconds.\nQuery: Above what \
             pressure value should the relief valve open?\nAnswer: 300 kPa\nRefined Requirement: When the pressure \
             is above 300 kPa, the relief valve opens within 2 seconds."
        )),
        Message::user(format!(
            "Requirement: {}\nQuery: {}\nAnswer: {answer}\nRefined Requirement:",
            requirement.text, query.text
        )),
    ]
}

const FORMULA_SYNTAX: &str =
    "Syntax: atoms like (x > 0.5), operators ! & | -> and G[l,u], F[l,u], U[l,u] with \
                              numeric bounds in seconds. Reply with the formula only.";

const DEMOS: [(&str, &str); 3] = [
    (
        "Within the first 12 seconds, whenever the speed exceeds 45, the rpm must fall below 2700 within 1 to 4 \
         seconds.",
        "G[0,12]((speed > 45) -> F[1,4](rpm < 2700))",
    ),
    ("At some time in the first 5 seconds the temperature reaches at least 80.", "F[0,5](temp >= 80)"),
    (
        "The pressure stays below 3 until, within 10 seconds, the valve position exceeds 0.",
        "(pressure < 3) U[0,10] (valve > 0)",
    ),
];

fn transform_demos() -> String {
    DEMOS
        .iter()
        .map(|(nl, stl)| format!("Requirement: {nl}\nSTL: {stl}"))
        .collect::<Vec<_>>()
        .join("\n\n")
}

pub(crate) fn transform(requirement: &Requirement) -> Vec<Message> {
    vec![
        Message::system(format!(
            "Instruction: Translate the natural language requirement into a Signal Temporal Logic formula. {}\n\n\
             Examples:\n{}",
            FORMULA_SYNTAX,
            transform_demos()
        )),
        Message::user(format!("Requirement: {}\nSTL:", requirement.text)),
    ]
}
