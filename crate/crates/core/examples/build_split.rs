//! Partitions the micro ontology into seen and unseen event types and shows
//! which roles of the unseen types were already seen in training.

use eventsynth::micro::MicroWorld;
use eventsynth::ontology::{build_split, RoleClass};

fn main() -> eventsynth::Result<()> {
    let schemas = MicroWorld::default().schemas();
    let split = build_split(&schemas, 0.3, 7)?;
    println!("seen:   {:?}", split.seen_types);
    println!("unseen: {:?}", split.unseen_types);
    for schema in schemas.iter().filter(|s| split.is_unseen(&s.event_type_id)) {
        let roles: Vec<String> = schema
            .roles
            .iter()
            .map(|r| match split.classify_role(r) {
                RoleClass::Seen => r.clone(),
                RoleClass::Unseen => format!("{r}*"),
            })
            .collect();
        println!("{:<22} {}   template: {}", schema.event_type_id, roles.join(", "), schema.template);
    }
    println!("(* marks roles that never occur in a seen type)");
    Ok(())
}
