//! Offline backend that answers each shipped prompt with a well-formed
//! reply. Replies are a pure function of the prompt.

use super::mock::FnBackend;
use crate::ontology::{camel_case, HEADER};

pub const PROTOCOL_MOCK_ID: &str = "protocol-mock-v1";

fn fnv(text: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in text.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn line_after<'a>(prompt: &'a str, marker: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|l| l.trim_start().strip_prefix(marker))
        .map(str::trim)
}

fn options(prompt: &str) -> Vec<(String, String)> {
    line_after(prompt, "- [RESPONSE OPTIONS]:")
        .map(|l| {
            l.split("; ")
                .filter_map(|o| o.split_once(": "))
                .map(|(v, t)| (v.trim().to_string(), t.trim().to_string()))
                .collect()
        })
        .unwrap_or_default()
}

fn pick(prompt: &str, seed_text: &str) -> String {
    let opts = options(prompt);
    if opts.is_empty() {
        return "0: unknown".to_string();
    }
    let (v, t) = &opts[(fnv(seed_text) % opts.len() as u64) as usize];
    format!("{v}: {t}")
}

fn list_block(prompt: &str, start: &str, stop: &str) -> Vec<String> {
    let Some(from) = prompt.find(start) else {
        return Vec::new();
    };
    let rest = &prompt[from + start.len()..];
    let rest = rest.find(stop).map_or(rest, |end| &rest[..end]);
    rest.lines()
        .filter_map(|l| l.trim_start().strip_prefix("- "))
        .filter_map(|l| l.split_once(": ").map(|(k, _)| k.trim().to_string()))
        .collect()
}

fn persona(prompt: &str) -> String {
    let id = line_after(prompt, "- You are Persona Agent")
        .map(|s| s.trim_end_matches('.').to_string())
        .unwrap_or_default();
    let demo = line_after(prompt, "- [DEMOGRAPHICS]:").unwrap_or("");
    let keys: Vec<&str> = demo.split("; ").filter_map(|p| p.split_once(": ").map(|(k, _)| k)).collect();
    let values = list_block(prompt, "- [VALUE PROFILES]:", "- [ONTOLOGY HYPER-NODES]");
    let nodes = line_after(prompt, "- [ONTOLOGY HYPER-NODES]:").unwrap_or("(none)");
    let edges: Vec<String> = if nodes == "(none)" {
        Vec::new()
    } else {
        vec![format!("relations among {nodes}")]
    };
    let question = line_after(prompt, "- [USER QUESTION]:").unwrap_or("");
    let choice = pick(prompt, &format!("{demo}\u{0}{question}"));
    let cited = if keys.is_empty() {
        "no demographic attributes given".to_string()
    } else {
        format!("Draws on {}", keys.iter().take(2).copied().collect::<Vec<_>>().join(" and "))
    };
    let reasoning = std::iter::repeat_n("grounded", 250)
        .collect::<Vec<_>>()
        .join(" ");
    serde_json::json!({
        "persona_id": id,
        "chosen_answer": choice,
        "reasoning": format!("Chooses {choice}. {reasoning}"),
        "alignment_factors": {
            "demographic": cited,
            "value_summaries_used": values,
            "hyper_edges_used": edges,
            "integration_rationale": "Combines the listed inputs."
        }
    })
    .to_string()
}

fn judge(prompt: &str) -> String {
    let votes = line_after(prompt, "- [VOTE SUMMARY]:").unwrap_or("");
    let mut best: Option<(usize, String)> = None;
    for entry in votes.split("; ") {
        let Some((head, tail)) = entry.rsplit_once(" (") else { continue };
        let Some(n) = tail.strip_suffix(" votes)").and_then(|n| n.parse::<usize>().ok()) else {
            continue;
        };
        if best.as_ref().is_none_or(|(b, _)| n > *b) {
            best = Some((n, head.to_string()));
        }
    }
    let answer = best.map_or_else(|| pick(prompt, prompt), |(_, a)| a);
    serde_json::json!({"final_answer": answer, "reasoning": "Follows the strongest persona evidence."}).to_string()
}

fn inference(prompt: &str) -> String {
    let cats = line_after(prompt, "- [VALUE CATEGORIES]:").unwrap_or("");
    let profile: serde_json::Map<String, serde_json::Value> = cats
        .split("; ")
        .filter(|c| !c.trim().is_empty())
        .map(|c| (c.trim().to_string(), format!("Leans toward views typical for {}", c.trim()).into()))
        .collect();
    serde_json::json!({ "inferred_profile": profile }).to_string()
}

fn value_profile(prompt: &str) -> String {
    let domain = prompt
        .split_once("Summarize the respondent's values for ")
        .and_then(|(_, rest)| rest.split_once(" based on"))
        .map_or("", |(d, _)| d.trim());
    let cats = list_block(prompt, "- [TAXONOMY]:", "- [RESPONDENT ANSWERS]");
    let mut out = format!("\"{domain}\": >\n  Holds a consistent orientation in {domain}.\n");
    for c in cats {
        out.push_str(&format!("\"{c}\": >\n  Expresses stated views on {c}.\n"));
    }
    out
}

fn snapshot_categories(prompt: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut sub = false;
    for line in prompt.lines() {
        let line = line.trim();
        if line.starts_with("rdfs:subClassOf") {
            sub = true;
        } else if let Some(rest) = line.strip_prefix("rdfs:label \"") {
            if sub {
                if let Some((name, _)) = rest.split_once("\"@en") {
                    out.push(name.to_string());
                }
            }
            sub = false;
        }
    }
    out
}

fn object_property(prompt: &str) -> String {
    const VERBS: [(&str, &str); 4] = [
        ("reinforce", "reinforces"),
        ("weaken", "weakens"),
        ("foster", "fosters"),
        ("erode", "erodes"),
    ];
    let cats = snapshot_categories(prompt);
    let h = fnv(prompt);
    if cats.len() < 2 || h.is_multiple_of(3) {
        return HEADER.to_string();
    }
    let n = cats.len() as u64;
    let s = ((h >> 8) % n) as usize;
    let mut o = ((h >> 24) % (n - 1)) as usize;
    if o >= s {
        o += 1;
    }
    let (rel, verb) = VERBS[((h >> 40) % VERBS.len() as u64) as usize];
    format!(
        "{HEADER}\nwvs:{rel} rdf:type owl:ObjectProperty ;\n    rdfs:domain wvs:{} ;\n    rdfs:range wvs:{} ;\n    rdfs:label \"{} {verb} {}\"@en .\n",
        camel_case(&cats[s]),
        camel_case(&cats[o]),
        cats[s],
        cats[o]
    )
}

/// Answers by recognizing which shipped template produced the prompt.
pub fn protocol_reply(prompt: &str) -> String {
    if prompt.contains("You are Persona Agent") {
        persona(prompt)
    } else if prompt.contains("[VOTE SUMMARY]") {
        judge(prompt)
    } else if prompt.contains("You are the Value Inference Agent") {
        inference(prompt)
    } else if prompt.contains("You are the Judgment Agent") {
        let answer = pick(prompt, prompt);
        serde_json::json!({"final_answer": answer, "reasoning": "Weighs the retrieved evidence."}).to_string()
    } else if prompt.contains("Summarize the respondent's values for") {
        value_profile(prompt)
    } else if prompt.contains("RESPONDENT_DATA_JSON") || prompt.contains("Current respondent data:") {
        object_property(prompt)
    } else {
        "{}".to_string()
    }
}

pub fn protocol_mock() -> FnBackend<fn(&str) -> String> {
    FnBackend::new(PROTOCOL_MOCK_ID, protocol_reply as fn(&str) -> String)
}
