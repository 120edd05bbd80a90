use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::CliResult;

/// Shortest string that parses back to exactly `x`.
pub fn num(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && x.is_finite() && !(1e-5..1e15).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// CSV table buffered in memory and written atomically.
pub struct Table {
    writer: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> CliResult<Self> {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(header)?;
        Ok(Self { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields)?;
        Ok(())
    }

    pub fn save(self, dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> CliResult<()> {
        let bytes = self.writer.into_inner().map_err(|e| e.into_error())?;
        let path = dir.join(name);
        write_atomic(&path, &bytes)?;
        written.push(path);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::num;

    #[test]
    fn numbers_round_trip() {
        for x in [
            0.0,
            1.0,
            -2.5,
            0.1 + 0.2,
            1e-300,
            6.02e23,
            f64::MIN_POSITIVE,
            123456.789012345,
            f64::INFINITY,
        ] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x, "{}", num(x));
        }
        assert_eq!(num(0.5), "0.5");
        assert_eq!(num(1e-7), "1e-7");
    }
}
