//! Textual series table: one row per (series, channel, time) observation.
//!
//! Header `series_id,channel,time_days,value,valid_flag`. Times must be
//! strictly increasing within each (series, channel); every time slot of a
//! series carries all channels with one consistent flag. Series shorter
//! than the longest one are padded to the common length with mask-0 slots
//! whose times continue past the last sample in one-day steps.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::{Array2, Array3};
use whitband::{Error, Result, TimeSeriesBatch};

pub const HEADER: [&str; 5] = ["series_id", "channel", "time_days", "value", "valid_flag"];

/// A loaded series table: the padded batch plus the labels needed to write
/// results back out in the same vocabulary.
#[derive(Debug, Clone)]
pub struct SeriesFile {
    pub batch: TimeSeriesBatch,
    pub series_ids: Vec<String>,
    pub channels: Vec<u32>,
}

struct RawRow {
    series: String,
    channel: u32,
    time: f64,
    value: f64,
    valid: f64,
    line: u64,
}

pub fn load_series(path: &Path) -> Result<SeriesFile> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;

    let headers = reader
        .headers()
        .map_err(|e| Error::data(format!("bad header: {e}")))?
        .clone();
    let cols: Vec<&str> = headers.iter().collect();
    if cols != HEADER {
        return Err(Error::data(format!(
            "expected header {:?}, got {:?}",
            HEADER.join(","),
            cols.join(",")
        )));
    }

    let mut rows: Vec<RawRow> = Vec::new();
    for (idx, rec) in reader.records().enumerate() {
        let line = idx as u64 + 2; // 1-based, after the header
        let rec = rec.map_err(|e| Error::data(format!("row {line}: {e}")))?;
        if rec.len() != 5 {
            return Err(Error::data(format!(
                "row {line}: expected 5 fields, got {}",
                rec.len()
            )));
        }
        let parse_f64 = |field: usize, name: &str| -> Result<f64> {
            rec[field]
                .parse::<f64>()
                .map_err(|_| Error::data(format!("row {line}: non-numeric {name} '{}'", &rec[field])))
        };
        let channel = rec[1]
            .parse::<u32>()
            .map_err(|_| Error::data(format!("row {line}: bad channel '{}'", &rec[1])))?;
        let valid = parse_f64(4, "valid_flag")?;
        if valid != 0.0 && valid != 1.0 {
            return Err(Error::data(format!(
                "row {line}: valid_flag must be 0 or 1, got {valid}"
            )));
        }
        rows.push(RawRow {
            series: rec[0].to_string(),
            channel,
            time: parse_f64(2, "time_days")?,
            value: parse_f64(3, "value")?,
            valid,
            line,
        });
    }
    if rows.is_empty() {
        return Err(Error::data("file contains no observations"));
    }

    // series in order of first appearance, channels sorted
    let mut series_ids: Vec<String> = Vec::new();
    let mut channels: BTreeSet<u32> = BTreeSet::new();
    for r in &rows {
        if !series_ids.contains(&r.series) {
            series_ids.push(r.series.clone());
        }
        channels.insert(r.channel);
    }
    let channels: Vec<u32> = channels.into_iter().collect();
    let chan_index = |c: u32| channels.iter().position(|x| *x == c).unwrap();

    // per series: ordered time slots with per-channel values and one flag
    struct Slot {
        time: f64,
        values: Vec<Option<f64>>,
        valid: f64,
        line: u64,
    }
    let mut per_series: Vec<Vec<Slot>> = (0..series_ids.len()).map(|_| Vec::new()).collect();
    for r in &rows {
        let s = series_ids.iter().position(|x| *x == r.series).unwrap();
        let slots = &mut per_series[s];
        let ci = chan_index(r.channel);
        match slots.iter_mut().find(|slot| slot.time == r.time) {
            Some(slot) => {
                if slot.valid != r.valid {
                    return Err(Error::data(format!(
                        "row {}: valid_flag disagrees with row {} for series '{}' at time {}",
                        r.line, slot.line, r.series, r.time
                    )));
                }
                if slot.values[ci].is_some() {
                    return Err(Error::data(format!(
                        "row {}: duplicate (series '{}', channel {}, time {})",
                        r.line, r.series, r.channel, r.time
                    )));
                }
                slot.values[ci] = Some(r.value);
            }
            None => {
                if let Some(last) = slots.last() {
                    if r.time < last.time {
                        return Err(Error::data(format!(
                            "row {}: decreasing time {} after {} in series '{}'",
                            r.line, r.time, last.time, r.series
                        )));
                    }
                }
                let mut values = vec![None; channels.len()];
                values[ci] = Some(r.value);
                slots.push(Slot {
                    time: r.time,
                    values,
                    valid: r.valid,
                    line: r.line,
                });
            }
        }
    }

    let t_max = per_series.iter().map(Vec::len).max().unwrap();
    let b = series_ids.len();
    let c = channels.len();
    let mut times = Array2::<f64>::zeros((b, t_max));
    let mut values = Array3::<f64>::zeros((b, c, t_max));
    let mut mask = Array2::<f64>::zeros((b, t_max));
    for (s, slots) in per_series.iter().enumerate() {
        for (i, slot) in slots.iter().enumerate() {
            times[(s, i)] = slot.time;
            mask[(s, i)] = slot.valid;
            for ch in 0..c {
                values[(s, ch, i)] = slot.values[ch].ok_or_else(|| {
                    Error::data(format!(
                        "series '{}' at time {} is missing channel {}",
                        series_ids[s], slot.time, channels[ch]
                    ))
                })?;
            }
        }
        // pad with mask-0 slots at one-day steps past the end
        let mut last = slots.last().map(|s| s.time).unwrap_or(0.0);
        for i in slots.len()..t_max {
            last += 1.0;
            times[(s, i)] = last;
        }
    }

    let batch = TimeSeriesBatch::new(times, values, mask)?;
    Ok(SeriesFile {
        batch,
        series_ids,
        channels,
    })
}

/// Write a batch in the same table format, one row per (series, channel,
/// slot), including mask-0 slots so a reload reproduces the batch exactly.
pub fn save_series(path: &Path, file: &SeriesFile) -> Result<()> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| Error::data(format!("cannot write {}: {e}", path.display())))?;
    w.write_record(HEADER)
        .map_err(|e| Error::data(e.to_string()))?;
    let (b, c, t) = file.batch.values.dim();
    for s in 0..b {
        for i in 0..t {
            for ch in 0..c {
                w.write_record(&[
                    file.series_ids[s].clone(),
                    file.channels[ch].to_string(),
                    format!("{}", file.batch.times[(s, i)]),
                    format!("{}", file.batch.values[(s, ch, i)]),
                    format!("{}", file.batch.mask[(s, i)]),
                ])
                .map_err(|e| Error::data(e.to_string()))?;
            }
        }
    }
    w.flush().map_err(|e| Error::data(e.to_string()))?;
    Ok(())
}
