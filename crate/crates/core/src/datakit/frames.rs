//! Frame annotation CSV: `drive,frame,path,straight,left`.

use std::path::{Path, PathBuf};

use super::window::FrameRecord;
use crate::error::{Error, Result};

pub const FRAMES_HEADER: [&str; 5] = ["drive", "frame", "path", "straight", "left"];

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

fn csv_error(path: &Path, err: csv::Error) -> Error {
    let line = err.position().map_or(0, |p| p.line());
    match err.into_kind() {
        csv::ErrorKind::Io(e) => Error::file(path, e),
        kind => parse_error(path, line, format!("{kind:?}")),
    }
}

/// Reads every record; paths are returned exactly as written.
pub fn read_frames_csv(path: impl AsRef<Path>) -> Result<Vec<FrameRecord>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().ne(FRAMES_HEADER) {
        return Err(parse_error(path, 1, format!("header must be `{}`", FRAMES_HEADER.join(","))));
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        let line = row.position().map_or(0, |p| p.line());
        let field = |i: usize| row.get(i).unwrap_or_default();
        let frame = field(1)
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad frame index `{}`", field(1))))?;
        let state = |i: usize| field(i).parse().map_err(|e: Error| parse_error(path, line, e.to_string()));
        records.push(FrameRecord {
            drive: field(0).to_owned(),
            frame,
            path: PathBuf::from(field(2)),
            straight: state(3)?,
            left: state(4)?,
        });
    }
    Ok(records)
}

pub fn write_frames_csv(path: impl AsRef<Path>, records: &[FrameRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    writer.write_record(FRAMES_HEADER).map_err(|e| csv_error(path, e))?;
    for r in records {
        writer
            .write_record([
                r.drive.as_str(),
                &r.frame.to_string(),
                &r.path.to_string_lossy(),
                &r.straight.to_string(),
                &r.left.to_string(),
            ])
            .map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::file(path, e))
}
