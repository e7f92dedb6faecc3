//! CSV emission and parsing, text summaries and gnuplot scripts.

use std::fmt::Write as _;
use std::io;

use crate::experiment::{LevelRecord, RunReport};

pub const CSV_HEADER: [&str; 15] = [
    "h",
    "dt",
    "delta",
    "rank",
    "err_l2_final",
    "err_supg_accum",
    "err_combined",
    "trunc_err",
    "nu_hat_max",
    "c_lbi_max",
    "stab_lhs",
    "stab_rhs",
    "lemma3_max",
    "prop1_max",
    "wall_time_s",
];

/// 17 significant digits, enough to round-trip any `f64`.
fn float(x: f64) -> String {
    format!("{x:.16e}")
}

fn row(r: &LevelRecord) -> [String; 15] {
    [
        float(r.h),
        float(r.dt),
        float(r.delta),
        r.rank.to_string(),
        float(r.err_l2_final),
        float(r.err_supg_accum),
        float(r.err_combined),
        float(r.trunc_err),
        float(r.nu_hat_max),
        float(r.c_lbi_max),
        float(r.stab_lhs),
        float(r.stab_rhs),
        float(r.lemma3_max),
        float(r.prop1_max),
        float(r.wall_time_s),
    ]
}

pub fn write_csv<W: io::Write>(records: &[LevelRecord], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record(row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_csv_string(records: &[LevelRecord]) -> String {
    let mut buf = Vec::new();
    write_csv(records, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("csv output is ASCII")
}

/// Parses a CSV with exactly the emitted header.
pub fn read_csv<R: io::Read>(input: R) -> csv::Result<Vec<LevelRecord>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(csv::Error::from(io::Error::new(
            io::ErrorKind::InvalidData,
            format!(
                "unexpected CSV header {:?}",
                header.iter().collect::<Vec<_>>()
            ),
        )));
    }
    r.deserialize().collect()
}

/// Human-readable table with the fitted orders.
pub fn summary(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "degree k = {}, dt = {} h^{:.4}",
        report.degree, report.dt_coeff, report.dt_exponent
    );
    let _ =
        writeln!(
        s,
        "{:>4} {:>10} {:>10} {:>10} {:>5} {:>11} {:>11} {:>11} {:>11} {:>10} {:>10} {:>9} {:>9}",
        "lvl", "h", "dt", "delta", "R", "err_L2(T)", "err_SUPG", "combined", "trunc",
        "nu_hat", "C_lbi", "lemma3", "prop1"
    );
    for (r, d) in report.records.iter().zip(&report.diagnostics) {
        let stab = match d.stability_violated_at {
            Some(n) => format!("  stability violated at step {n}"),
            None => String::new(),
        };
        let _ = writeln!(
            s,
            "{:>4} {:>10.4e} {:>10.4e} {:>10.4e} {:>5} {:>11.4e} {:>11.4e} {:>11.4e} {:>11.4e} {:>10.3e} {:>10.3e} {:>9.2e} {:>9.2e}{stab}",
            d.level,
            r.h,
            r.dt,
            r.delta,
            r.rank,
            r.err_l2_final,
            r.err_supg_accum,
            r.err_combined,
            r.trunc_err,
            r.nu_hat_max,
            r.c_lbi_max,
            r.lemma3_max,
            r.prop1_max,
        );
    }
    for f in &report.fits {
        match &f.fit {
            Some(fit) => {
                let used: Vec<String> = fit
                    .levels
                    .iter()
                    .map(|&i| f.levels[i].to_string())
                    .collect();
                let _ = writeln!(
                    s,
                    "R = {}: fitted order {:.4} over levels {}",
                    f.rank,
                    fit.slope,
                    used.join(", ")
                );
            }
            None => {
                let _ = writeln!(
                    s,
                    "R = {}: no order fitted (too few levels or zero errors)",
                    f.rank
                );
            }
        }
    }
    for fail in &report.failures {
        let _ = writeln!(
            s,
            "level {} rank {} failed: {}",
            fail.level, fail.rank, fail.error
        );
    }
    s
}

/// Log-log plot of the combined error and the truncation error per rank.
pub fn gnuplot_script(csv_path: &str, report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set logscale xy");
    let _ = writeln!(s, "set xlabel 'h'");
    let _ = writeln!(s, "set ylabel 'error'");
    let _ = writeln!(s, "set key left top");
    let mut plots = Vec::new();
    for f in &report.fits {
        plots.push(format!(
            "'{csv_path}' skip 1 using 1:($4=={r} ? $7 : 1/0) with linespoints title 'R={r} combined'",
            r = f.rank
        ));
        plots.push(format!(
            "'{csv_path}' skip 1 using 1:($4=={r} ? $8 : 1/0) with lines dashtype 2 title 'R={r} truncation'",
            r = f.rank
        ));
    }
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}
