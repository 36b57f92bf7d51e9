use crate::stl::{Atom, Comparator, Formula, Interval};
use crate::util::format_number;

fn interval_text(interval: &Interval) -> String {
    format!(
        "[{}, {}]",
        format_number(interval.lo()),
        format_number(interval.hi())
    )
}

fn atom_text(atom: &Atom) -> String {
    let relation = match atom.comparator() {
        Comparator::Gt => "above",
        Comparator::Lt => "below",
        Comparator::Ge => "at least",
        Comparator::Le => "at most",
    };
    let subject = match atom.terms() {
        [term] if term.coefficient == 1.0 => format!("signal {}", term.variable),
        terms => {
            let parts: Vec<String> = terms
                .iter()
                .map(|t| {
                    if t.coefficient == 1.0 {
                        t.variable.clone()
                    } else {
                        format!("{} {}", format_number(t.coefficient), t.variable)
                    }
                })
                .collect();
            format!("the quantity {}", parts.join(" + "))
        }
    };
    format!(
        "{subject} is {relation} {}",
        format_number(atom.threshold())
    )
}

fn nested(formula: &Formula) -> String {
    match formula {
        Formula::Atom(_) | Formula::True | Formula::False => back_translate(formula),
        _ => format!("({})", back_translate(formula)),
    }
}

/// Fixed-scheme English rendering. Every name and number appears verbatim
/// and compound operands are parenthesised, so distinct formulas never share
/// a description.
pub fn back_translate(formula: &Formula) -> String {
    match formula {
        Formula::Atom(atom) => atom_text(atom),
        Formula::True => "true".to_string(),
        Formula::False => "false".to_string(),
        Formula::Not(a) => format!("it is not the case that {}", nested(a)),
        Formula::And(a, b) => format!("{} and {}", nested(a), nested(b)),
        Formula::Or(a, b) => format!("{} or {}", nested(a), nested(b)),
        Formula::Implies(a, b) => format!("if {}, then {}", nested(a), nested(b)),
        Formula::Globally(i, a) => format!(
            "At every time in {} seconds, {}",
            interval_text(i),
            nested(a)
        ),
        Formula::Eventually(i, a) => format!(
            "At some time in {} seconds, {}",
            interval_text(i),
            nested(a)
        ),
        Formula::Until(i, a, b) => format!(
            "{} holds from now until, at some time in {} seconds, {}",
            nested(a),
            interval_text(i),
            nested(b)
        ),
    }
}
