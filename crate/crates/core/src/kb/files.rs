//! On-disk layout.
//!
//! ```text
//! <root>/kb/users.tsv          user-details table
//! <root>/kb/services.tsv       bank-services table
//! <root>/kb/overlays.tsv       per-user upgrades layered over bank-services
//! <root>/kb/transactions.tsv   transactions table
//! <root>/kb/user_logs.tsv      user-logs table
//! <root>/kb/faces.tsv          cloud face store
//! <root>/devices/<device_id>/fingerprints.tsv   device-local fingerprint store
//! ```
//!
//! `kb/` is the cloud side, `devices/` the device side. Writers take an
//! exclusive advisory lock on `<root>/.lock` for the duration of a commit so
//! the gateway and the admin tool never interleave inside a record, and bump
//! `<root>/.generation` so the other process reloads before its next access.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::domain::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum Table {
    Users,
    Services,
    Overlays,
    Transactions,
    UserLogs,
    Faces,
}

impl Table {
    fn file_name(self) -> &'static str {
        match self {
            Table::Users => "users.tsv",
            Table::Services => "services.tsv",
            Table::Overlays => "overlays.tsv",
            Table::Transactions => "transactions.tsv",
            Table::UserLogs => "user_logs.tsv",
            Table::Faces => "faces.tsv",
        }
    }
}

/// Where a staged write goes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub(crate) enum Target {
    Cloud(Table),
    Device(DeviceId),
}

#[derive(Debug)]
pub(crate) struct FileStore {
    root: PathBuf,
}

pub(crate) struct CommitLock {
    file: File,
}

impl Drop for CommitLock {
    fn drop(&mut self) {
        let _ = self.file.unlock();
    }
}

impl FileStore {
    pub fn create(root: &Path) -> io::Result<Self> {
        fs::create_dir_all(root.join("kb"))?;
        fs::create_dir_all(root.join("devices"))?;
        Ok(Self {
            root: root.to_owned(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, target: &Target) -> PathBuf {
        match target {
            Target::Cloud(table) => self.root.join("kb").join(table.file_name()),
            Target::Device(device) => self
                .root
                .join("devices")
                .join(device.as_str())
                .join("fingerprints.tsv"),
        }
    }

    pub fn lock(&self) -> io::Result<CommitLock> {
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(self.root.join(".lock"))?;
        file.lock()?;
        Ok(CommitLock { file })
    }

    /// Counter bumped by every commit, so a process can tell that another
    /// one wrote since it last loaded. Missing means nothing was written yet.
    pub fn read_generation(&self) -> io::Result<u64> {
        match fs::read_to_string(self.root.join(".generation")) {
            Ok(text) => text
                .trim()
                .parse()
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e)),
            Err(err) if err.kind() == io::ErrorKind::NotFound => Ok(0),
            Err(err) => Err(err),
        }
    }

    pub fn write_generation(&self, generation: u64) -> io::Result<()> {
        let path = self.root.join(".generation");
        let tmp = self.root.join(".generation.tmp");
        fs::write(&tmp, format!("{generation}\n"))?;
        fs::rename(tmp, path)
    }

    pub fn read_lines(&self, target: &Target) -> io::Result<Vec<String>> {
        match fs::read_to_string(self.path(target)) {
            Ok(text) => Ok(text.lines().map(str::to_owned).collect()),
            Err(err) if err.kind() == io::ErrorKind::NotFound => Ok(Vec::new()),
            Err(err) => Err(err),
        }
    }

    pub fn device_ids(&self) -> io::Result<Vec<DeviceId>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(self.root.join("devices"))? {
            let entry = entry?;
            if entry.file_type()?.is_dir() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(DeviceId::from(name));
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn append(&self, target: &Target, lines: &[String]) -> io::Result<()> {
        if lines.is_empty() {
            return Ok(());
        }
        let path = self.path(target);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut buf = String::new();
        for line in lines {
            buf.push_str(line);
            buf.push('\n');
        }
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        file.write_all(buf.as_bytes())?;
        file.sync_data()
    }

    /// Replaces the whole file through a temporary sibling and a rename.
    pub fn rewrite(&self, target: &Target, lines: &[String]) -> io::Result<()> {
        let path = self.path(target);
        let tmp = path.with_extension("tsv.tmp");
        let mut buf = String::new();
        for line in lines {
            buf.push_str(line);
            buf.push('\n');
        }
        let mut file = File::create(&tmp)?;
        file.write_all(buf.as_bytes())?;
        file.sync_data()?;
        fs::rename(tmp, path)
    }
}
