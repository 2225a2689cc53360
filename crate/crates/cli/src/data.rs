//! Observation CSV: header `t,stream_1,...,stream_N`, one row per time step,
//! `t` running 1, 2, 3, ...

use std::io::{Read, Write};

use anyhow::{bail, ensure, Context, Result};
use multidetect::TrialPath;

/// Reads a data file for `streams` streams. Row numbers in errors count the
/// header as row 1.
pub fn read_path<R: Read>(input: R, streams: usize) -> Result<TrialPath> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header = reader.headers().context("reading header")?.clone();
    let expected: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=streams).map(|i| format!("stream_{i}")))
        .collect();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        bail!("data file is empty");
    }
    ensure!(
        header.iter().eq(expected.iter().map(String::as_str)),
        "header must be `{}`, got `{}`",
        expected.join(","),
        header.iter().collect::<Vec<_>>().join(",")
    );

    let mut rows = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx + 2;
        let record = record.with_context(|| format!("row {line}: malformed record"))?;
        ensure!(
            record.len() == streams + 1,
            "row {line}: expected {} fields, got {}",
            streams + 1,
            record.len()
        );
        let t: usize = record[0]
            .parse()
            .with_context(|| format!("row {line}: time index `{}` is not an integer", &record[0]))?;
        ensure!(
            t == rows.len() + 1,
            "row {line}: expected t = {}, got {t}",
            rows.len() + 1
        );
        let values = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(i, cell)| {
                let v: f64 = cell
                    .parse()
                    .with_context(|| format!("row {line}: stream_{} value `{cell}` is not a number", i + 1))?;
                ensure!(
                    v.is_finite(),
                    "row {line}: stream_{} value `{cell}` is not finite",
                    i + 1
                );
                Ok(v)
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(values);
    }
    ensure!(!rows.is_empty(), "data file has a header but no observations");
    Ok(TrialPath::from_rows(&rows)?)
}

pub fn write_path<W: Write>(out: W, path: &TrialPath) -> Result<()> {
    let mut writer = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string()];
    header.extend((1..=path.streams).map(|i| format!("stream_{i}")));
    writer.write_record(&header)?;
    for t in 1..=path.horizon {
        let mut record = vec![t.to_string()];
        record.extend(path.at(t).iter().map(|v| v.to_string()));
        writer.write_record(&record)?;
    }
    writer.flush()?;
    Ok(())
}
