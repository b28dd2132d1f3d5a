//! CSV tables and static SVG figures. Every emitter is a pure function of its
//! input, so identical runs produce identical bytes.

use std::fmt::Write as _;

use crate::corpus::{McqaExample, Vocab, PAD};
use crate::error::{Error, Result};
use crate::qacnn::AttentionRecord;
use crate::selflabel::SelfLabelTrace;
use crate::transfer::{AblationTable, RunRecord};

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// `56.1 (+3.2)` style cell; the first row has no delta.
pub fn with_delta(value: f64, delta: Option<f64>) -> String {
    match delta {
        Some(d) => format!("{} ({}{})", pct(value), if d < 0.0 { "-" } else { "+" }, pct(d.abs())),
        None => pct(value),
    }
}

/// One row per run: label, test and dev accuracy in percent, selected epoch.
pub fn runs_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("label,test_accuracy,dev_accuracy,selected_epoch,train_examples\n");
    for r in records {
        let test = r.test_accuracy.map(pct).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.label),
            test,
            pct(r.dev_accuracy),
            r.selected_epoch,
            r.train_examples
        );
    }
    out
}

/// Fraction sweep with the mean accuracy and its change from the row above,
/// then the spread and per-seed values.
pub fn ablation_csv(table: &AblationTable) -> String {
    let mut out = String::from("fraction,accuracy,mean,stdev");
    for s in &table.seeds {
        let _ = write!(out, ",seed_{s}");
    }
    out.push('\n');
    for row in &table.rows {
        let _ = write!(
            out,
            "{},\"{}\",{},{}",
            row.fraction,
            with_delta(row.mean, row.delta),
            pct(row.mean),
            pct(row.stdev)
        );
        for a in &row.accuracies {
            let _ = write!(out, ",{}", pct(*a));
        }
        out.push('\n');
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

/// Horizontal line drawn across an accuracy curve.
#[derive(Debug, Clone, PartialEq)]
pub struct Reference {
    pub label: String,
    pub accuracy: f64,
}

const W: f64 = 480.0;
const H: f64 = 300.0;
const PAD_L: f64 = 50.0;
const PAD_R: f64 = 20.0;
const PAD_T: f64 = 30.0;
const PAD_B: f64 = 40.0;

/// Accuracy against self-label epoch, with optional reference lines such as
/// supervised fine-tuning accuracy.
pub fn curve_svg(title: &str, trace: &SelfLabelTrace, references: &[Reference]) -> String {
    let n = trace.accuracy.len();
    let ys: Vec<f64> = trace.accuracy.iter().chain(references.iter().map(|r| &r.accuracy)).copied().collect();
    let lo = (ys.iter().cloned().fold(f64::INFINITY, f64::min) - 0.05).max(0.0);
    let hi = (ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 0.05).min(1.0);
    let (lo, hi) = if hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let px = |i: usize| PAD_L + (W - PAD_L - PAD_R) * i as f64 / (n.max(2) - 1) as f64;
    let py = |a: f64| PAD_T + (H - PAD_T - PAD_B) * (hi - a) / (hi - lo);

    let mut s = svg_open(W, H);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" font-size="13" text-anchor="middle">{}</text>"#,
        W / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        s,
        r#"<line x1="{PAD_L}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{PAD_L}" y1="{PAD_T}" x2="{PAD_L}" y2="{b}" stroke="black"/>"#,
        b = H - PAD_B,
        r = W - PAD_R
    );
    for k in 0..=4 {
        let a = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            PAD_L - 4.0,
            py(a) + 3.0,
            pct(a)
        );
    }
    for i in 0..n {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" font-size="10" text-anchor="middle">{i}</text>"#,
            px(i),
            H - PAD_B + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="middle">epoch</text>"#,
        W / 2.0,
        H - 6.0
    );
    for (k, r) in references.iter().enumerate() {
        let y = py(r.accuracy);
        let _ = writeln!(
            s,
            r#"<line class="reference" x1="{PAD_L}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
            W - PAD_R
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.2}" font-size="10" text-anchor="end" fill="gray">{} {}</text>"#,
            W - PAD_R,
            y - 3.0 - 11.0 * k as f64,
            xml_escape(&r.label),
            pct(r.accuracy)
        );
    }
    let points: Vec<String> = trace
        .accuracy
        .iter()
        .enumerate()
        .map(|(i, a)| format!("{:.2},{:.2}", px(i), py(*a)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline class="trace" points="{}" fill="none" stroke="firebrick" stroke-width="2"/>"#,
        points.join(" ")
    );
    for (i, a) in trace.accuracy.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="firebrick"><title>{i}: {}</title></circle>"#,
            px(i),
            py(*a),
            pct(*a)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Story tokens per sentence with PAD dropped, aligned with the attention
/// record of the same example.
pub fn story_tokens(ex: &McqaExample, vocab: &Vocab) -> Vec<Vec<String>> {
    ex.story
        .iter()
        .map(|s| {
            s.iter()
                .filter(|i| **i != PAD)
                .map(|i| vocab.token(*i).unwrap_or("<unk>").to_string())
                .collect()
        })
        .collect()
}

fn check_alignment(tokens: &[Vec<String>], att: &AttentionRecord) -> Result<()> {
    let shape = |t: &[Vec<String>]| t.iter().map(Vec::len).collect::<Vec<_>>();
    let att_shape: Vec<usize> = att.word_level.iter().map(Vec::len).collect();
    if shape(tokens) != att_shape || att.sentence_level.len() != tokens.len() {
        return Err(Error::Shape {
            op: "attention export",
            lhs: shape(tokens),
            rhs: att_shape,
        });
    }
    Ok(())
}

/// Fill for a weight in [0, 1]: white at 0, pure red at 1, with green and
/// blue falling linearly so redness increases monotonically with weight.
pub fn heat_color(weight: f64) -> String {
    let w = weight.clamp(0.0, 1.0);
    let gb = (255.0 * (1.0 - w)).round() as u8;
    format!("#ff{gb:02x}{gb:02x}")
}

/// One row per sentence: the sentence weight, then each word shaded by its
/// word-level weight. Intensity is the raw weight, so cells compare across
/// rows.
pub fn attention_svg(title: &str, tokens: &[Vec<String>], att: &AttentionRecord) -> Result<String> {
    check_alignment(tokens, att)?;
    let cell_w = 64.0;
    let cell_h = 22.0;
    let left = 70.0;
    let top = 30.0;
    let cols = tokens.iter().map(Vec::len).max().unwrap_or(0);
    let w = left + cell_w * cols as f64 + 10.0;
    let h = top + cell_h * tokens.len() as f64 + 10.0;
    let mut s = svg_open(w, h);
    let _ = writeln!(s, r#"<text x="6" y="18" font-size="13">{}</text>"#, xml_escape(title));
    for (r, (row, weights)) in tokens.iter().zip(&att.word_level).enumerate() {
        let y = top + cell_h * r as f64;
        let sw = att.sentence_level[r];
        let _ = writeln!(
            s,
            r##"<g class="sentence" data-index="{r}" data-weight="{sw}"><rect x="4" y="{y}" width="{}" height="{}" fill="{}" stroke="#cccccc"/><text x="8" y="{:.1}" font-size="10">s{r} {:.2}</text>"##,
            left - 8.0,
            cell_h - 2.0,
            heat_color(sw),
            y + 14.0,
            sw
        );
        for (c, (tok, wt)) in row.iter().zip(weights).enumerate() {
            let x = left + cell_w * c as f64;
            let _ = writeln!(
                s,
                r#"<rect class="word" x="{x}" y="{y}" width="{}" height="{}" fill="{}" data-weight="{wt}"/><text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
                cell_w - 2.0,
                cell_h - 2.0,
                heat_color(*wt),
                x + cell_w / 2.0 - 1.0,
                y + 14.0,
                xml_escape(tok)
            );
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Raw attention record: `sentence<TAB>position<TAB>token<TAB>weight`, with a
/// position of `-` for the sentence-level weight.
pub fn attention_tsv(tokens: &[Vec<String>], att: &AttentionRecord) -> Result<String> {
    check_alignment(tokens, att)?;
    let mut out = String::from("sentence\tposition\ttoken\tweight\n");
    for (r, (row, weights)) in tokens.iter().zip(&att.word_level).enumerate() {
        let _ = writeln!(out, "{r}\t-\t-\t{}", att.sentence_level[r]);
        for (c, (tok, wt)) in row.iter().zip(weights).enumerate() {
            let _ = writeln!(out, "{r}\t{c}\t{tok}\t{wt}");
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deltas_are_signed_in_parentheses() {
        assert_eq!(with_delta(0.561, None), "56.1");
        assert_eq!(with_delta(0.593, Some(0.032)), "59.3 (+3.2)");
        assert_eq!(with_delta(0.58, Some(-0.013)), "58.0 (-1.3)");
    }

    #[test]
    fn heat_is_monotone() {
        let reds: Vec<u8> = (0..=10)
            .map(|i| u8::from_str_radix(&heat_color(i as f64 / 10.0)[3..5], 16).unwrap())
            .collect();
        assert!(reds.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(heat_color(0.0), "#ffffff");
        assert_eq!(heat_color(1.0), "#ff0000");
    }

    #[test]
    fn escapes_markup() {
        assert_eq!(xml_escape("<a & 'b'>"), "&lt;a &amp; &apos;b&apos;&gt;");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
    }
}
