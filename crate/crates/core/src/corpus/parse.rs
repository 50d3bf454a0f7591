use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use chrono::{DateTime, Duration, NaiveDateTime, Utc};
use log::warn;

use crate::config::TzMode;
use crate::error::{Error, Result};

/// One row of the Foursquare check-in dump.
#[derive(Clone, Debug, PartialEq)]
pub struct RawCheckin {
    pub user_id: String,
    pub venue_id: String,
    pub category_id: String,
    pub category_name: String,
    pub latitude: f64,
    pub longitude: f64,
    pub utc_time: DateTime<Utc>,
    /// Offset from UTC in minutes.
    pub tz_offset: i32,
    /// Wall-clock time used for slotting and segmentation.
    pub clock_time: NaiveDateTime,
}

#[derive(Debug, Default)]
pub struct ParseOutcome {
    pub checkins: Vec<RawCheckin>,
    pub skipped: usize,
}

const TIME_FORMAT: &str = "%a %b %d %H:%M:%S %z %Y";

/// Reads the tab-separated dump. Malformed rows are skipped and counted.
pub fn parse_dataset(path: &Path, tz_mode: TzMode) -> Result<ParseOutcome> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_reader(BufReader::new(file), tz_mode).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

pub fn parse_reader<R: BufRead>(mut reader: R, tz_mode: TzMode) -> Result<ParseOutcome> {
    let mut out = ParseOutcome::default();
    let mut buf = Vec::new();
    let mut line_no = 0usize;
    loop {
        buf.clear();
        let n = reader
            .read_until(b'\n', &mut buf)
            .map_err(|e| Error::io("<reader>", e))?;
        if n == 0 {
            break;
        }
        line_no += 1;
        // The public dumps are not guaranteed to be valid UTF-8 in the
        // category-name column.
        let line = String::from_utf8_lossy(&buf);
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line, tz_mode) {
            Some(c) => out.checkins.push(c),
            None => {
                if out.skipped < 5 {
                    warn!("skipping malformed row {line_no}");
                }
                out.skipped += 1;
            }
        }
    }
    if out.skipped > 0 {
        warn!(
            "skipped {} malformed rows, kept {}",
            out.skipped,
            out.checkins.len()
        );
    }
    Ok(out)
}

fn parse_row(line: &str, tz_mode: TzMode) -> Option<RawCheckin> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 8 {
        return None;
    }
    let latitude: f64 = fields[4].trim().parse().ok()?;
    let longitude: f64 = fields[5].trim().parse().ok()?;
    if !(-90.0..=90.0).contains(&latitude) || !(-180.0..=180.0).contains(&longitude) {
        return None;
    }
    let tz_offset: i32 = fields[6].trim().parse().ok()?;
    let utc_time = DateTime::parse_from_str(fields[7].trim(), TIME_FORMAT)
        .ok()?
        .with_timezone(&Utc);
    let clock_time = match tz_mode {
        TzMode::Local => utc_time.naive_utc() + Duration::minutes(tz_offset as i64),
        TzMode::Utc => utc_time.naive_utc(),
    };
    let user_id = fields[0].trim();
    let venue_id = fields[1].trim();
    if user_id.is_empty() || venue_id.is_empty() {
        return None;
    }
    Some(RawCheckin {
        user_id: user_id.to_string(),
        venue_id: venue_id.to_string(),
        category_id: fields[2].trim().to_string(),
        category_name: fields[3].trim().to_string(),
        latitude,
        longitude,
        utc_time,
        tz_offset,
        clock_time,
    })
}
