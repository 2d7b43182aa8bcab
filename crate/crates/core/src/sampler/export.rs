use std::io::Write;

use super::{ChainOutput, DensityStrip, PosteriorSummary};

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|r| r.to_string()).unwrap_or_else(|| "NA".to_string())
}

/// One column per monitored quantity, one row per retained draw.
pub fn write_samples_csv(chain: &ChainOutput, writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&chain.monitors)?;
    for row in &chain.samples {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary_csv(rows: &[PosteriorSummary], writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "quantity", "median", "mean", "sd", "q025", "q975", "rhat", "ess",
    ])?;
    for r in rows {
        w.write_record([
            r.quantity.clone(),
            r.median.to_string(),
            r.mean.to_string(),
            r.sd.to_string(),
            r.q025.to_string(),
            r.q975.to_string(),
            fmt_opt(r.rhat),
            r.ess.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// R̂ and ESS per quantity, flagged against `rhat_threshold`. R̂ is `NA`
/// when it cannot be computed.
pub fn write_diagnostics_csv(
    rows: &[PosteriorSummary],
    rhat_threshold: f64,
    writer: impl Write,
) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["quantity", "rhat", "ess", "converged"])?;
    for r in rows {
        let converged = match r.rhat {
            Some(v) => (v < rhat_threshold).to_string(),
            None => "NA".to_string(),
        };
        w.write_record([
            r.quantity.clone(),
            fmt_opt(r.rhat),
            r.ess.to_string(),
            converged,
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-chain, per-block acceptance rates and proposal scales.
pub fn write_adaptation_csv(chains: &[ChainOutput], writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "chain",
        "seed",
        "block",
        "burnin_acceptance",
        "acceptance",
        "scale",
    ])?;
    for c in chains {
        for (b, label) in c.block_labels.iter().enumerate() {
            w.write_record([
                c.chain.to_string(),
                c.seed.to_string(),
                label.clone(),
                c.burnin_acceptance[b].to_string(),
                c.acceptance[b].to_string(),
                c.final_scales[b].to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_strip_csv(strip: &DensityStrip, writer: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["midpoint", "height", "median"])?;
    for (m, h) in strip.midpoints.iter().zip(&strip.heights) {
        w.write_record([m.to_string(), h.to_string(), strip.median.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
