//! The shortcut check looks for short quoted phrases in the model's
//! rationale: a sign it latched onto surface words instead of meaning.

use ariiha::adaptive::{detect_shortcut, detect_shortcut_from_source, quoted_spans};

fn main() {
    let query = "white jews from the old quarter shared recipes at the fair";
    let rationales = [
        "The text relies on \"white jews\" to cast the group as conspirators.",
        "The phrase “remember when” signals nostalgia for excluding a group.",
        "Quoting \"the whole long list of grievances they keep repeating\" is not a shortcut.",
        "Nothing here attacks anyone.",
        "It says \"recipes\" but mentions \"the old quarter\" too.",
    ];
    for r in rationales {
        println!("{r}");
        println!(
            "  spans {:?}  shortcut={}  from-query={}",
            quoted_spans(r),
            detect_shortcut(r, 3),
            detect_shortcut_from_source(r, 3, query)
        );
    }
}
