//! Atomic file output: write to a sibling temp file, then rename.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

pub fn write_atomic<E>(
    path: &Path,
    body: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>,
) -> Result<(), E>
where
    E: From<std::io::Error>,
{
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let file_name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        body(&mut w)?;
        w.flush()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn write_string(path: &Path, contents: &str) -> std::io::Result<()> {
    write_atomic(path, |w| w.write_all(contents.as_bytes()))
}
