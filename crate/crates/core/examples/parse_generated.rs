//! Parses raw generator outputs into event instances. Outputs without a
//! trigger in their context are discarded; `None` marks an empty role and
//! arguments that do not occur in the context are dropped.

use eventsynth::ontology::EventSchema;
use eventsynth::prompting::{build_generation_prompt, parse_output, ParseOutcome};

fn main() -> eventsynth::Result<()> {
    let schema = EventSchema::new(
        "conflict.attack",
        "conflict attack",
        ["attacker", "target", "instrument", "place"],
        "<arg1> attacked <arg2> using <arg3> at <arg4> place",
    )?;
    println!("prompt: {}\n", build_generation_prompt(&schema));
    let outputs = [
        "Context: rebels attacked the convoy with a rifle near Lima ., Trigger: attacked, \
         Role-Arguments: attacker: rebels; target: the convoy; instrument: rifle; place: Lima.",
        "Context: gunmen stormed the embassy ., Trigger: stormed, Role-Arguments: attacker: gunmen; \
         target: the embassy; instrument: None; place: None.",
        "Context: Ann and Bo fired at the depot ., Trigger: fired, Role-Arguments: attacker: Ann and Bo; \
         target: the bridge; weapon: drone; place: None.",
        "Context: troops entered Riga ., Trigger: bombed, Role-Arguments: attacker: troops.",
        "Context: the market burned ., Role-Arguments: place: None.",
    ];
    for text in outputs {
        match parse_output(text, &schema) {
            ParseOutcome::Accepted { instance, report } => {
                let args: Vec<String> = instance
                    .arguments
                    .iter()
                    .map(|(role, spans)| {
                        let texts: Vec<&str> = spans.iter().map(|s| s.text.as_str()).collect();
                        format!("{role}=[{}]", texts.join(" | "))
                    })
                    .collect();
                println!(
                    "accepted: trigger `{}` {}  (dropped {} unanchorable, {} unknown roles)",
                    instance.trigger.text,
                    args.join(" "),
                    report.unanchorable,
                    report.unknown_roles
                );
            }
            ParseOutcome::Rejected(reason) => println!("rejected: {reason:?}"),
        }
    }
    Ok(())
}
