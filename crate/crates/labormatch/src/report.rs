//! Output-file helpers. Every CSV the crate emits starts with one comment
//! line naming the library version, the config hash, and the root seed, so
//! results are traceable to the exact setup that produced them.

use crate::config::Config;
use crate::Result;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Opens a CSV writer at `path` with the provenance comment already written.
pub fn csv_with_provenance(
    path: &Path,
    cfg: &Config,
    seed: u64,
) -> Result<csv::Writer<BufWriter<File>>> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    let mut file = BufWriter::new(File::create(path)?);
    writeln!(
        file,
        "# labormatch {} config {:016x} seed {}",
        crate::VERSION,
        cfg.content_hash(),
        seed
    )?;
    Ok(csv::Writer::from_writer(file))
}

/// Formats an optional statistic, leaving missing values as an empty field.
pub fn opt_field(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::baseline_config;

    #[test]
    fn provenance_line_precedes_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        let cfg = baseline_config();
        let mut w = csv_with_provenance(&path, &cfg, 7).unwrap();
        w.write_record(["a", "b"]).unwrap();
        w.write_record(["1", "2"]).unwrap();
        w.flush().unwrap();
        drop(w);
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        let first = lines.next().unwrap();
        assert!(first.starts_with("# labormatch"));
        assert!(first.contains(&format!("{:016x}", cfg.content_hash())));
        assert_eq!(lines.next().unwrap(), "a,b");
    }

    #[test]
    fn optional_fields_render_empty() {
        assert_eq!(opt_field(None), "");
        assert_eq!(opt_field(Some(1.5)), "1.5");
    }
}
