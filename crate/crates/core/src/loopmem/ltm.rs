use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::Path;

pub const LTM_MAGIC: &[u8; 4] = b"LTM1";

/// Append-only record log `[u64 id][u32 len][payload]` with an in-memory
/// id-to-offset index. Rewriting an id appends a new record that shadows the old one.
#[derive(Debug)]
pub struct LtmStore {
    file: File,
    end: u64,
    index: HashMap<u64, (u64, u32)>,
}

impl LtmStore {
    /// Store in an anonymous temporary file.
    pub fn temporary() -> io::Result<Self> {
        Self::init(tempfile::tempfile()?)
    }

    /// Creates (truncating) a store at `path`.
    pub fn create(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new()
            .read(true)
            .write(true)
            .create(true)
            .truncate(true)
            .open(path)?;
        Self::init(file)
    }

    /// Opens an existing store and rebuilds its index. A torn final record is ignored.
    pub fn open(path: &Path) -> io::Result<Self> {
        let mut file = OpenOptions::new().read(true).write(true).open(path)?;
        let mut magic = [0u8; 4];
        file.read_exact(&mut magic)?;
        if &magic != LTM_MAGIC {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "not an LTM store"));
        }
        let len = file.metadata()?.len();
        let mut index = HashMap::new();
        let mut pos = 4u64;
        let mut header = [0u8; 12];
        while pos + 12 <= len {
            file.seek(SeekFrom::Start(pos))?;
            file.read_exact(&mut header)?;
            let id = u64::from_le_bytes(header[..8].try_into().expect("8 bytes"));
            let n = u32::from_le_bytes(header[8..].try_into().expect("4 bytes"));
            if pos + 12 + n as u64 > len {
                break;
            }
            index.insert(id, (pos + 12, n));
            pos += 12 + n as u64;
        }
        Ok(Self { file, end: pos, index })
    }

    fn init(mut file: File) -> io::Result<Self> {
        file.write_all(LTM_MAGIC)?;
        Ok(Self {
            file,
            end: 4,
            index: HashMap::new(),
        })
    }

    pub fn put(&mut self, id: u64, payload: &[u8]) -> io::Result<()> {
        let n = u32::try_from(payload.len()).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "payload too large"))?;
        self.file.seek(SeekFrom::Start(self.end))?;
        let mut rec = Vec::with_capacity(12 + payload.len());
        rec.extend_from_slice(&id.to_le_bytes());
        rec.extend_from_slice(&n.to_le_bytes());
        rec.extend_from_slice(payload);
        self.file.write_all(&rec)?;
        self.index.insert(id, (self.end + 12, n));
        self.end += rec.len() as u64;
        Ok(())
    }

    pub fn get(&mut self, id: u64) -> io::Result<Option<Vec<u8>>> {
        let Some(&(offset, n)) = self.index.get(&id) else {
            return Ok(None);
        };
        self.file.seek(SeekFrom::Start(offset))?;
        let mut buf = vec![0u8; n as usize];
        self.file.read_exact(&mut buf)?;
        Ok(Some(buf))
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Bytes in the log including shadowed records.
    pub fn file_len(&self) -> u64 {
        self.end
    }
}
