use std::fmt::Write as _;

use super::recipe::RecipeReport;
use crate::params::Group;

/// Parameter counts in millions: one decimal from a million upward, three
/// below (2128 → "0.002M", 6,306,816 → "6.3M").
pub fn format_millions(n: usize) -> String {
    let m = n as f64 / 1e6;
    if n >= 1_000_000 {
        format!("{m:.1}M")
    } else {
        format!("{m:.3}M")
    }
}

pub fn components_label(groups: &[Group]) -> String {
    if groups.is_empty() {
        "none".to_string()
    } else {
        groups.iter().map(|g| g.as_str()).collect::<Vec<_>>().join("+")
    }
}

/// Human-readable summary of one recipe run.
pub fn render_report(r: &RecipeReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "run: {}", r.run);
    let _ = writeln!(s, "recipe: {}", r.recipe);
    match &r.pivot {
        Some(p) => {
            let _ = writeln!(s, "language: {} (pivot {p})", r.language);
        }
        None => {
            let _ = writeln!(s, "language: {}", r.language);
        }
    }
    let _ = writeln!(s, "components fine-tuned: {}", components_label(&r.components));
    let _ = writeln!(
        s,
        "learnable parameters: {} ({} of {})",
        format_millions(r.learnable_parameters),
        r.learnable_parameters,
        r.total_parameters
    );
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<8} {:>8} {:>8}", "", "WER", "CER");
    let _ = writeln!(s, "{:<8} {:>8.2} {:>8.2}", "before", r.before.wer, r.before.cer);
    let _ = writeln!(s, "{:<8} {:>8.2} {:>8.2}", "after", r.after.wer, r.after.cer);
    let _ = writeln!(s, "relative WER reduction: {:.1}%", 100.0 * r.relative_wer_reduction);
    for p in &r.phases {
        let _ = writeln!(s);
        let groups: Vec<Group> = p.groups.iter().copied().collect();
        let _ = writeln!(
            s,
            "phase {} [{}] {} trainable, {} steps",
            p.name,
            components_label(&groups),
            p.trainable_parameters,
            p.steps
        );
        if let (Some(first), Some(last)) = (p.epoch_losses.first(), p.epoch_losses.last()) {
            let _ = writeln!(s, "  loss {first:.4} -> {last:.4} over {} epochs", p.epoch_losses.len());
        }
        if let Some(e) = p.selected_epoch {
            let _ = writeln!(s, "  selected epoch {e} by validation WER");
        }
    }
    s
}
