//! Plain-text key/value intrinsics files. One `key value` pair per line
//! (`key = value` also accepted), `#` comments allowed. Required keys:
//! fx, fy, cx, cy, width, height; `baseline` is optional.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::IoError;
use crate::geometry::Intrinsics;

pub fn read_intrinsics(path: &Path) -> Result<Intrinsics, IoError> {
    let text = std::fs::read_to_string(path)?;
    let mut values: HashMap<String, f64> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.splitn(2, |c: char| c == '=' || c.is_whitespace());
        let key = parts.next().unwrap_or("").trim();
        let value = parts.next().unwrap_or("").trim_start_matches('=').trim();
        let parsed: f64 = value.parse().map_err(|_| {
            IoError::format(
                path,
                format!("line {}: bad value '{value}' for '{key}'", lineno + 1),
            )
        })?;
        values.insert(key.to_string(), parsed);
    }
    let require = |key: &str| -> Result<f64, IoError> {
        values
            .get(key)
            .copied()
            .ok_or_else(|| IoError::format(path, format!("missing key '{key}'")))
    };
    Intrinsics::new(
        require("fx")?,
        require("fy")?,
        require("cx")?,
        require("cy")?,
        require("width")? as u32,
        require("height")? as u32,
        values.get("baseline").copied(),
    )
    .map_err(|e| IoError::format(path, e.to_string()))
}

pub fn write_intrinsics(k: &Intrinsics, path: &Path) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "fx {}", k.fx)?;
    writeln!(w, "fy {}", k.fy)?;
    writeln!(w, "cx {}", k.cx)?;
    writeln!(w, "cy {}", k.cy)?;
    writeln!(w, "width {}", k.width)?;
    writeln!(w, "height {}", k.height)?;
    if let Some(b) = k.baseline {
        writeln!(w, "baseline {b}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_comment_handling() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.txt");
        std::fs::write(
            &path,
            "# camera\nfx 420.5\nfy = 421.0\ncx 319.5\ncy 239.5\nwidth 640\nheight 480\nbaseline 5.2\n",
        )
        .unwrap();
        let k = read_intrinsics(&path).unwrap();
        assert_eq!(k.fx, 420.5);
        assert_eq!(k.fy, 421.0);
        assert_eq!(k.baseline, Some(5.2));

        let out = dir.path().join("k2.txt");
        write_intrinsics(&k, &out).unwrap();
        assert_eq!(read_intrinsics(&out).unwrap(), k);
    }

    #[test]
    fn missing_key_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.txt");
        std::fs::write(&path, "fx 1\nfy 1\ncx 0\ncy 0\nwidth 10\n").unwrap();
        assert!(read_intrinsics(&path).is_err());
    }
}
