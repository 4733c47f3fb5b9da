use std::fmt::Write as _;

use smae_core::train::{BenchReport, BenchRow};

pub const CSV_HEADER: &str = "mode,images_per_minute,tokens_encoded_per_image,tokens_reconstructed_per_image,analytic_flop_ratio,peak_resident_bytes";

fn measured(row: &BenchRow, timestamps: bool) -> (String, String) {
    if timestamps {
        (format!("{:.1}", row.images_per_minute), row.peak_resident_bytes.to_string())
    } else {
        ("na".into(), "na".into())
    }
}

/// Human-readable table and CSV of a bench run. Without timestamps the
/// wall-clock and memory columns read `na`, leaving only reproducible values.
pub fn emit_report(report: &BenchReport, timestamps: bool) -> (String, String) {
    let mut table = String::new();
    let _ = writeln!(
        table,
        "{:<14}{:>14}{:>10}{:>10}{:>12}{:>18}",
        "mode", "images/min", "enc/img", "rec/img", "flop_ratio", "peak_rss_bytes"
    );
    let mut csv = format!("{CSV_HEADER}\n");
    for row in &report.rows {
        let (ipm, peak) = measured(row, timestamps);
        let _ = writeln!(
            table,
            "{:<14}{:>14}{:>10}{:>10}{:>12.4}{:>18}",
            row.mode.to_string(),
            ipm,
            row.tokens_encoded_per_image,
            row.tokens_reconstructed_per_image,
            row.analytic_flop_ratio,
            peak
        );
        let _ = writeln!(
            csv,
            "{},{ipm},{},{},{},{peak}",
            row.mode, row.tokens_encoded_per_image, row.tokens_reconstructed_per_image, row.analytic_flop_ratio
        );
    }
    let speedup = if timestamps { format!("{:.3}", report.speedup) } else { "na".into() };
    let _ = writeln!(
        table,
        "speedup={speedup} encoder_attention_ratio={:.6} decoder_token_ratio={:.6}",
        report.encoder_attention_ratio, report.decoder_token_ratio
    );
    (table, csv)
}
