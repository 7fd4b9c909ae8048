use std::fs::{self, File, OpenOptions, TryLockError};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};

pub const LOCK_FILE: &str = ".privrisk.lock";
pub const RUN_LOG: &str = "run.log";

/// Output directory held under an exclusive advisory lock until dropped.
pub struct OutDir {
    path: PathBuf,
    _lock: File,
}

impl OutDir {
    pub fn open(path: &Path) -> Result<Self> {
        fs::create_dir_all(path).with_context(|| format!("cannot create output directory {}", path.display()))?;
        let lock = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(path.join(LOCK_FILE))
            .with_context(|| format!("cannot open lock file in {}", path.display()))?;
        match lock.try_lock() {
            Ok(()) => {}
            Err(TryLockError::WouldBlock) => bail!("output directory {} is locked by another run", path.display()),
            Err(TryLockError::Error(e)) => return Err(e).context("cannot lock output directory"),
        }
        Ok(Self {
            path: path.to_path_buf(),
            _lock: lock,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        let f = File::create(&p).with_context(|| format!("cannot write {}", p.display()))?;
        Ok(BufWriter::new(f))
    }

    pub fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let mut w = self.create(name)?;
        w.write_all(contents.as_ref())?;
        w.flush()?;
        Ok(())
    }

    pub fn write_json<T: serde::Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s)
    }

    /// Append one line of run metadata. This is the only place a clock is read.
    pub fn log_run(&self, summary: &str) -> Result<()> {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let args: Vec<String> = std::env::args().collect();
        let mut f = OpenOptions::new().create(true).append(true).open(self.path(RUN_LOG))?;
        writeln!(
            f,
            "unix_time={secs}\tversion={}\targs={}\tsummary={summary}",
            env!("CARGO_PKG_VERSION"),
            args.join(" ")
        )?;
        Ok(())
    }
}
