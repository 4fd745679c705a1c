use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::Result;

pub(super) struct Output {
    pub dir: PathBuf,
    pub hash: String,
    pub files: Vec<PathBuf>,
}

impl Output {
    pub fn create(dir: &Path, hash: String) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Output {
            dir: dir.to_path_buf(),
            hash,
            files: Vec::new(),
        })
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let f = File::create(&path)?;
        self.files.push(path);
        Ok(BufWriter::new(f))
    }

    /// Pretty JSON with a top-level `config_hash`; non-object values go under `data`.
    pub fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut v = serde_json::to_value(value)?;
        let hash = serde_json::Value::String(self.hash.clone());
        let v = match v {
            serde_json::Value::Object(ref mut m) => {
                m.insert("config_hash".into(), hash);
                v
            }
            other => serde_json::json!({ "config_hash": hash, "data": other }),
        };
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        w.write_all(b"\n")?;
        w.flush()?;
        Ok(())
    }

    /// CSV writer whose first line is `# config_hash=<hash>`.
    pub fn csv(&mut self, name: &str, header: &[&str]) -> Result<csv::Writer<BufWriter<File>>> {
        let mut w = self.open(name)?;
        writeln!(w, "# config_hash={}", self.hash)?;
        let mut c = csv::Writer::from_writer(w);
        c.write_record(header)?;
        Ok(c)
    }

    pub fn binary(&mut self, name: &str) -> Result<BufWriter<File>> {
        self.open(name)
    }
}

/// CSV reader that skips `#` comment lines.
pub(super) fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?)
}

/// Reads the hash from a file's `# config_hash=` header line.
pub(super) fn csv_hash(path: &Path) -> Result<Option<String>> {
    let mut line = String::new();
    BufReader::new(File::open(path)?).read_line(&mut line)?;
    Ok(line.trim_end().strip_prefix("# config_hash=").map(str::to_string))
}
