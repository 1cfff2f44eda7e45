//! Decode trace rendering: five labeled rows per iteration, with predicted
//! edits column-aligned under the canvas rows they act on.

use super::{DecodeMode, DecodeTrace};
use crate::insdel::{Canvas, Vocab};

const LABELS: [&str; 5] = [
    "Inputs to insertion model",
    "Predicted insertions",
    "Inputs to deletion model",
    "Predicted deletions",
    "Outputs",
];

fn cells(canvas: &Canvas) -> Vec<String> {
    canvas.tokens().iter().map(|&t| Vocab::display(t).to_string()).collect()
}

/// Two rows sharing one column grid: the canvas tokens and a sparse marker
/// row aligned under them.
fn aligned_pair(label_top: &str, top: &[String], label_bottom: &str, bottom: &[String]) -> [String; 2] {
    let label_width = LABELS.iter().map(|l| l.len()).max().unwrap();
    let widths: Vec<usize> =
        top.iter().zip(bottom).map(|(a, b)| a.len().max(b.len())).collect();
    let fmt_row = |label: &str, cells: &[String]| {
        let mut line = format!("{label:<label_width$} |");
        for (cell, w) in cells.iter().zip(&widths) {
            line.push(' ');
            line.push_str(&format!("{cell:<w$}"));
        }
        line.trim_end().to_string()
    };
    [fmt_row(label_top, top), fmt_row(label_bottom, bottom)]
}

fn plain_row(label: &str, cells: &[String]) -> String {
    let label_width = LABELS.iter().map(|l| l.len()).max().unwrap();
    let mut line = format!("{label:<label_width$} |");
    for cell in cells {
        line.push(' ');
        line.push_str(cell);
    }
    line.trim_end().to_string()
}

/// Render a decode trace. Each iteration prints the canvas the insertion
/// model read, the insertions aligned under their anchor tokens, the canvas
/// the deletion model read, the deletion decisions aligned under the doomed
/// tokens, and the surviving canvas. Ins-only traces omit the two deletion
/// rows.
pub fn render_trace(trace: &DecodeTrace, mode: DecodeMode) -> String {
    let mut out = String::new();
    for (i, it) in trace.iterations.iter().enumerate() {
        out.push_str(&format!("Iteration {}\n", i + 1));

        let before_cells = cells(&it.before);
        let mut marks = vec![String::new(); before_cells.len()];
        for &(slot, token) in &it.insertions {
            let anchor = it.before.target_start() + slot;
            marks[anchor] = Vocab::display(token).to_string();
        }
        let [row1, row2] = aligned_pair(LABELS[0], &before_cells, LABELS[1], &marks);
        out.push_str(&row1);
        out.push('\n');
        out.push_str(&row2);
        out.push('\n');

        if mode == DecodeMode::InsDel {
            let after_cells = cells(&it.after_insert);
            let mut del_marks = vec![String::new(); after_cells.len()];
            for &p in &it.deletions {
                del_marks[p] = after_cells[p].clone();
            }
            let [row3, row4] = aligned_pair(LABELS[2], &after_cells, LABELS[3], &del_marks);
            out.push_str(&row3);
            out.push('\n');
            out.push_str(&row4);
            out.push('\n');
        }

        out.push_str(&plain_row(LABELS[4], &cells(&it.after_delete)));
        out.push_str("\n\n");
    }
    out
}
