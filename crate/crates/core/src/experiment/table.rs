use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::trainer::{components_label, format_millions, RecipeReport};

/// Aligned comparison of recipe reports: one column per report, one row
/// block per evaluated language. The lowest WER of each language is marked
/// with `*`.
pub fn comparison_table(reports: &[RecipeReport]) -> String {
    let mut languages: Vec<&str> = Vec::new();
    for r in reports {
        if !languages.contains(&r.language.as_str()) {
            languages.push(&r.language);
        }
    }
    let mut rows: Vec<Vec<String>> = vec![
        std::iter::once("run".to_string()).chain(reports.iter().map(|r| r.run.clone())).collect(),
        std::iter::once("components fine-tuned".to_string())
            .chain(reports.iter().map(|r| components_label(&r.components)))
            .collect(),
        std::iter::once("learnable parameters".to_string())
            .chain(reports.iter().map(|r| format_millions(r.learnable_parameters)))
            .collect(),
    ];
    for lang in &languages {
        let best = reports
            .iter()
            .filter(|r| r.language == *lang)
            .map(|r| r.after.wer)
            .fold(f64::INFINITY, f64::min);
        let cell = |r: &RecipeReport, f: &dyn Fn(&RecipeReport) -> String| {
            if r.language == *lang {
                f(r)
            } else {
                "-".to_string()
            }
        };
        rows.push(
            std::iter::once(format!("{lang} WER"))
                .chain(reports.iter().map(|r| {
                    cell(r, &|r| {
                        let mark = if r.after.wer == best { "*" } else { "" };
                        format!("{:.2}{mark}", r.after.wer)
                    })
                }))
                .collect(),
        );
        rows.push(
            std::iter::once(format!("{lang} CER"))
                .chain(reports.iter().map(|r| cell(r, &|r| format!("{:.2}", r.after.cer))))
                .collect(),
        );
        rows.push(
            std::iter::once(format!("{lang} rel. WER reduction"))
                .chain(reports.iter().map(|r| cell(r, &|r| format!("{:.1}%", 100.0 * r.relative_wer_reduction))))
                .collect(),
        );
    }
    let cols = rows[0].len();
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in rows.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                if c == 0 {
                    format!("{s:<w$}", w = widths[c])
                } else {
                    format!("{s:>w$}", w = widths[c])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join(" | ").trim_end());
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let _ = writeln!(out, "{}", rule.join("-+-"));
        }
    }
    let signatures: BTreeSet<&str> = reports.iter().map(|r| r.model_signature.as_str()).collect();
    if signatures.len() > 1 {
        let list: Vec<&str> = signatures.into_iter().collect();
        let _ = writeln!(out, "warning: reports come from different model configurations: {}", list.join(", "));
    }
    out
}
