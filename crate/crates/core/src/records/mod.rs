//! Asynchronous issuance log.
//!
//! Services append records and return immediately; a single background
//! drainer writes them to a durable sink in FIFO order. Lookup indexes are
//! updated at enqueue time, so a pseudonym can be resolved before its batch
//! reaches disk.

mod format;

pub use format::{
    read_records, PseudonymBatchRecord, Record, RegistrationRecord, TicketRecord, MAGIC,
};

use std::collections::{HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{self, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender, TrySendError};
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::thread::JoinHandle;
use std::time::Duration;

use thiserror::Error;

use crate::credential::SignedTicket;
use crate::crypto::{Digest, PublicKey, Serial};

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("record queue is full; retry later")]
    QueueFull,
    #[error("record store is closed")]
    Closed,
    #[error("no record found")]
    NotFound,
    #[error("record file: {0}")]
    Io(#[from] io::Error),
    #[error("record file is not a VPKR1 file")]
    BadMagic,
}

impl RecordError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, RecordError::QueueFull)
    }
}

/// Where drained records end up.
pub trait DurableSink: Send {
    fn write(&mut self, record: &Record) -> io::Result<()>;
}

/// Appends framed records to a `VPKR1` file.
pub struct FileSink {
    file: File,
}

impl DurableSink for FileSink {
    fn write(&mut self, record: &Record) -> io::Result<()> {
        self.file.write_all(&record.frame())?;
        self.file.flush()
    }
}

/// Keeps drained records in memory, in drain order.
#[derive(Clone, Default)]
pub struct MemorySink {
    pub records: Arc<Mutex<Vec<Record>>>,
}

impl DurableSink for MemorySink {
    fn write(&mut self, record: &Record) -> io::Result<()> {
        self.records.lock().unwrap().push(record.clone());
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StoreOptions {
    pub queue_capacity: usize,
    /// Artificial latency added to every durable write.
    pub write_delay: Duration,
    /// How long the drainer waits after waking for more records to arrive
    /// before writing them as one group.
    pub group_window: Duration,
}

impl Default for StoreOptions {
    fn default() -> Self {
        StoreOptions {
            queue_capacity: 65_536,
            write_delay: Duration::ZERO,
            group_window: Duration::from_millis(50),
        }
    }
}

#[derive(Default)]
struct Index {
    registrations: HashMap<Serial, RegistrationRecord>,
    keys: HashSet<PublicKey>,
    tickets: HashMap<Serial, TicketRecord>,
    batches: HashMap<Serial, Arc<PseudonymBatchRecord>>,
    by_pseudonym: HashMap<Digest, (Serial, usize)>,
}

impl Index {
    fn insert(&mut self, rec: &Record) {
        match rec {
            Record::Registration(r) => {
                self.keys.insert(r.public_key.clone());
                self.registrations
                    .entry(r.sn_ltc)
                    .or_insert_with(|| r.clone());
            }
            Record::Ticket(r) => {
                self.tickets.entry(r.sn_tkt).or_insert_with(|| r.clone());
            }
            Record::Batch(r) => {
                if self.batches.contains_key(&r.sn_tkt) {
                    return;
                }
                for (i, sn) in r.serials.iter().enumerate() {
                    self.by_pseudonym.insert(*sn, (r.sn_tkt, i + 1));
                }
                self.batches.insert(r.sn_tkt, Arc::new(r.clone()));
            }
        }
    }
}

#[derive(Default)]
struct Progress {
    pending: usize,
    written: u64,
    rejected: u64,
}

struct Shared {
    index: RwLock<Index>,
    progress: Mutex<Progress>,
    idle: Condvar,
}

/// Counters describing the drainer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DrainStats {
    pub pending: usize,
    pub written: u64,
    pub rejected: u64,
}

/// A batch located by one of its pseudonym serials.
#[derive(Debug, Clone)]
pub struct BatchHit {
    pub batch: Arc<PseudonymBatchRecord>,
    /// 1-based position of the serial in the batch.
    pub index: usize,
}

pub struct RecordStore {
    shared: Arc<Shared>,
    tx: Option<SyncSender<Record>>,
    drainer: Option<JoinHandle<()>>,
    path: Option<PathBuf>,
}

impl std::fmt::Debug for RecordStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RecordStore")
            .field("path", &self.path)
            .field("stats", &self.stats())
            .finish()
    }
}

impl RecordStore {
    /// Volatile store draining into memory.
    pub fn in_memory() -> Self {
        Self::with_sink(
            Box::new(MemorySink::default()),
            StoreOptions::default(),
            Vec::new(),
            None,
        )
    }

    pub fn with_sink(
        sink: Box<dyn DurableSink>,
        opts: StoreOptions,
        existing: Vec<Record>,
        path: Option<PathBuf>,
    ) -> Self {
        let mut index = Index::default();
        let mut durable = HashSet::new();
        for rec in &existing {
            index.insert(rec);
            durable.insert(rec.unique_key());
        }
        let shared = Arc::new(Shared {
            index: RwLock::new(index),
            progress: Mutex::new(Progress::default()),
            idle: Condvar::new(),
        });
        let (tx, rx) = sync_channel(opts.queue_capacity.max(1));
        let drainer = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name("record-drainer".into())
                .spawn(move || drain(rx, sink, shared, durable, opts))
                .expect("spawn record drainer")
        };
        RecordStore {
            shared,
            tx: Some(tx),
            drainer: Some(drainer),
            path,
        }
    }

    /// Opens (or creates) a record file and rebuilds the index from it. A
    /// torn trailing record left by a crash is truncated away.
    pub fn open(path: impl AsRef<Path>, opts: StoreOptions) -> Result<Self, RecordError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new()
            .read(true)
            .append(true)
            .create(true)
            .open(&path)?;
        let mut contents = Vec::new();
        file.read_to_end(&mut contents)?;
        let existing = if contents.is_empty() {
            file.write_all(MAGIC)?;
            file.flush()?;
            Vec::new()
        } else {
            if !contents.starts_with(MAGIC) {
                return Err(RecordError::BadMagic);
            }
            let (records, consumed, err) = read_records(&contents[MAGIC.len()..]);
            if let Some(e) = err {
                log::warn!("truncating torn record tail in {}: {e}", path.display());
                file.set_len((MAGIC.len() + consumed) as u64)?;
                file.seek(SeekFrom::End(0))?;
            }
            records
        };
        Ok(Self::with_sink(
            Box::new(FileSink { file }),
            opts,
            existing,
            Some(path),
        ))
    }

    pub fn append(&self, record: Record) -> Result<(), RecordError> {
        let tx = self.tx.as_ref().ok_or(RecordError::Closed)?;
        self.shared.progress.lock().unwrap().pending += 1;
        let indexed = record.clone();
        match tx.try_send(record) {
            Ok(()) => {
                self.shared.index.write().unwrap().insert(&indexed);
                Ok(())
            }
            Err(e) => {
                let mut p = self.shared.progress.lock().unwrap();
                p.pending -= 1;
                self.shared.idle.notify_all();
                match e {
                    TrySendError::Full(_) => Err(RecordError::QueueFull),
                    TrySendError::Disconnected(_) => Err(RecordError::Closed),
                }
            }
        }
    }

    pub fn append_ticket_record(&self, rec: TicketRecord) -> Result<(), RecordError> {
        self.append(Record::Ticket(rec))
    }

    pub fn append_batch_record(&self, rec: PseudonymBatchRecord) -> Result<(), RecordError> {
        self.append(Record::Batch(rec))
    }

    pub fn append_registration(&self, rec: RegistrationRecord) -> Result<(), RecordError> {
        self.append(Record::Registration(rec))
    }

    /// Blocks until every record appended so far has been drained.
    pub fn flush(&self) {
        let mut p = self.shared.progress.lock().unwrap();
        while p.pending > 0 {
            p = self.shared.idle.wait(p).unwrap();
        }
    }

    /// Like [`flush`](Self::flush) but gives up after `timeout`.
    pub fn flush_timeout(&self, timeout: Duration) -> bool {
        let p = self.shared.progress.lock().unwrap();
        let (p, _) = self
            .shared
            .idle
            .wait_timeout_while(p, timeout, |p| p.pending > 0)
            .unwrap();
        p.pending == 0
    }

    pub fn stats(&self) -> DrainStats {
        let p = self.shared.progress.lock().unwrap();
        DrainStats {
            pending: p.pending,
            written: p.written,
            rejected: p.rejected,
        }
    }

    pub fn lookup_by_pseudonym_serial(&self, sn: &Digest) -> Result<BatchHit, RecordError> {
        let index = self.shared.index.read().unwrap();
        let (sn_tkt, i) = index.by_pseudonym.get(sn).ok_or(RecordError::NotFound)?;
        let batch = index
            .batches
            .get(sn_tkt)
            .ok_or(RecordError::NotFound)?
            .clone();
        Ok(BatchHit { batch, index: *i })
    }

    pub fn ticket(&self, sn_tkt: &Serial) -> Option<TicketRecord> {
        self.shared
            .index
            .read()
            .unwrap()
            .tickets
            .get(sn_tkt)
            .cloned()
    }

    pub fn batch(&self, sn_tkt: &Serial) -> Option<Arc<PseudonymBatchRecord>> {
        self.shared
            .index
            .read()
            .unwrap()
            .batches
            .get(sn_tkt)
            .cloned()
    }

    pub fn registration(&self, sn_ltc: &Serial) -> Option<RegistrationRecord> {
        self.shared
            .index
            .read()
            .unwrap()
            .registrations
            .get(sn_ltc)
            .cloned()
    }

    pub fn is_key_registered(&self, key: &PublicKey) -> bool {
        self.shared.index.read().unwrap().keys.contains(key)
    }

    pub fn ticket_count(&self) -> usize {
        self.shared.index.read().unwrap().tickets.len()
    }

    pub fn batch_count(&self) -> usize {
        self.shared.index.read().unwrap().batches.len()
    }

    /// Flushes and stops the drainer.
    pub fn close(mut self) {
        self.flush();
        self.shutdown();
    }

    fn shutdown(&mut self) {
        self.tx.take();
        if let Some(h) = self.drainer.take() {
            let _ = h.join();
        }
    }
}

impl Drop for RecordStore {
    fn drop(&mut self) {
        // Dropping the sender lets the drainer finish the queue on its own;
        // only wait for it when nothing is left to write.
        self.tx.take();
        if self.stats().pending == 0 {
            self.shutdown();
        }
    }
}

fn drain(
    rx: Receiver<Record>,
    mut sink: Box<dyn DurableSink>,
    shared: Arc<Shared>,
    mut durable: HashSet<(u8, [u8; 16])>,
    opts: StoreOptions,
) {
    while let Ok(first) = rx.recv() {
        if !opts.group_window.is_zero() {
            std::thread::sleep(opts.group_window);
        }
        let group: Vec<Record> = std::iter::once(first).chain(rx.try_iter()).collect();
        for rec in group {
            write_one(rec, sink.as_mut(), &shared, &mut durable, opts.write_delay);
        }
    }
}

fn write_one(
    rec: Record,
    sink: &mut dyn DurableSink,
    shared: &Shared,
    durable: &mut HashSet<(u8, [u8; 16])>,
    delay: Duration,
) {
    let written = if !durable.insert(rec.unique_key()) {
        log::warn!("rejecting duplicate record {:?}", rec.unique_key());
        false
    } else {
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
        match sink.write(&rec) {
            Ok(()) => true,
            Err(e) => {
                log::error!("durable write failed: {e}");
                durable.remove(&rec.unique_key());
                false
            }
        }
    };
    let mut p = shared.progress.lock().unwrap();
    p.pending -= 1;
    if written {
        p.written += 1;
    } else {
        p.rejected += 1;
    }
    shared.idle.notify_all();
}

/// Result of [`purge_file`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PurgeStats {
    pub kept: usize,
    pub removed: usize,
}

/// Rewrites a closed record file without ticket and batch records whose
/// ticket expired before `before`. Registrations are always kept.
pub fn purge_file(path: impl AsRef<Path>, before: u64) -> Result<PurgeStats, RecordError> {
    let path = path.as_ref();
    let contents = std::fs::read(path)?;
    if !contents.starts_with(MAGIC) {
        return Err(RecordError::BadMagic);
    }
    let (records, _, _) = read_records(&contents[MAGIC.len()..]);
    let mut out = MAGIC.to_vec();
    let mut stats = PurgeStats {
        kept: 0,
        removed: 0,
    };
    for rec in records {
        let expired = match &rec {
            Record::Registration(_) => false,
            Record::Ticket(t) => t.exp_tkt < before,
            Record::Batch(b) => SignedTicket::decode(&b.ticket)
                .map(|t| t.ticket.exp_tkt < before)
                .unwrap_or(false),
        };
        if expired {
            stats.removed += 1;
        } else {
            stats.kept += 1;
            out.extend_from_slice(&rec.frame());
        }
    }
    let tmp = path.with_extension("purge.tmp");
    std::fs::write(&tmp, &out)?;
    std::fs::rename(&tmp, path)?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    fn ticket(n: u32) -> TicketRecord {
        let mut sn = [0u8; 16];
        sn[..4].copy_from_slice(&n.to_be_bytes());
        TicketRecord {
            sn_tkt: Serial(sn),
            sn_ltc: Serial([9; 16]),
            ik_tkt: Digest([1; 32]),
            rnd_ik_tkt: [2; 32],
            t_s: 0,
            t_e: 100,
            exp_tkt: 100 + n as u64,
            issued_at: 0,
            foreign: false,
            fail_open: false,
        }
    }

    fn batch(sn: u8, n: usize) -> PseudonymBatchRecord {
        PseudonymBatchRecord {
            sn_tkt: Serial([sn; 16]),
            rnd_v: [sn; 32],
            serials: (0..n)
                .map(|i| Digest([sn.wrapping_add(i as u8 + 1); 32]))
                .collect(),
            ticket: vec![],
            issued_at: 0,
            fail_open: false,
        }
    }

    #[test]
    fn append_flush_lookup() {
        let store = RecordStore::in_memory();
        store.append_ticket_record(ticket(1)).unwrap();
        store.flush();
        assert!(store.ticket(&ticket(1).sn_tkt).is_some());
        assert_eq!(store.stats().written, 1);
    }

    #[test]
    fn duplicate_rejected_at_drain() {
        let store = RecordStore::in_memory();
        store.append_ticket_record(ticket(1)).unwrap();
        store.append_ticket_record(ticket(1)).unwrap();
        store.flush();
        let s = store.stats();
        assert_eq!((s.written, s.rejected), (1, 1));
    }

    #[test]
    fn fifo_order_and_count() {
        let sink = MemorySink::default();
        let store = RecordStore::with_sink(
            Box::new(sink.clone()),
            StoreOptions::default(),
            vec![],
            None,
        );
        for i in 0..10_000 {
            store.append_ticket_record(ticket(i)).unwrap();
        }
        store.flush();
        let recs = sink.records.lock().unwrap();
        assert_eq!(recs.len(), 10_000);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r, &Record::Ticket(ticket(i as u32)));
        }
    }

    #[test]
    fn lookup_finds_position_in_batch() {
        let store = RecordStore::in_memory();
        let b = batch(7, 5);
        store.append_batch_record(b.clone()).unwrap();
        let hit = store.lookup_by_pseudonym_serial(&b.serials[2]).unwrap();
        assert_eq!(hit.index, 3);
        for sn in &b.serials {
            assert_eq!(
                store.lookup_by_pseudonym_serial(sn).unwrap().batch.sn_tkt,
                b.sn_tkt
            );
        }
        assert!(matches!(
            store.lookup_by_pseudonym_serial(&Digest([0xee; 32])),
            Err(RecordError::NotFound)
        ));
    }

    #[test]
    fn slow_sink_does_not_block_append_and_index_is_eager() {
        let opts = StoreOptions {
            queue_capacity: 16,
            write_delay: Duration::from_millis(50),
            ..StoreOptions::default()
        };
        let store = RecordStore::with_sink(Box::new(MemorySink::default()), opts, vec![], None);
        let start = Instant::now();
        for i in 0..4 {
            store.append_batch_record(batch(i, 2)).unwrap();
        }
        assert!(start.elapsed() < Duration::from_millis(50));
        assert!(store
            .lookup_by_pseudonym_serial(&batch(3, 2).serials[1])
            .is_ok());
        store.flush();
        assert_eq!(store.stats().written, 4);
    }

    #[test]
    fn full_queue_is_retryable() {
        let opts = StoreOptions {
            queue_capacity: 1,
            write_delay: Duration::from_millis(200),
            ..StoreOptions::default()
        };
        let store = RecordStore::with_sink(Box::new(MemorySink::default()), opts, vec![], None);
        let mut saw_full = false;
        for i in 0..5 {
            if let Err(e) = store.append_ticket_record(ticket(i)) {
                assert!(e.is_retryable());
                saw_full = true;
            }
        }
        assert!(saw_full);
    }

    #[test]
    fn file_store_survives_restart() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.vpkr");
        let store = RecordStore::open(&path, StoreOptions::default()).unwrap();
        store.append_ticket_record(ticket(1)).unwrap();
        store.append_batch_record(batch(3, 4)).unwrap();
        store.close();

        let bytes = std::fs::read(&path).unwrap();
        assert!(bytes.starts_with(b"VPKR1"));

        let store = RecordStore::open(&path, StoreOptions::default()).unwrap();
        assert!(store.ticket(&ticket(1).sn_tkt).is_some());
        assert_eq!(
            store
                .lookup_by_pseudonym_serial(&batch(3, 4).serials[3])
                .unwrap()
                .index,
            4
        );
        // a replayed duplicate is rejected against the reloaded state
        store.append_ticket_record(ticket(1)).unwrap();
        store.flush();
        assert_eq!(store.stats().rejected, 1);
    }

    #[test]
    fn torn_tail_is_truncated_on_open() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.vpkr");
        let store = RecordStore::open(&path, StoreOptions::default()).unwrap();
        store.append_ticket_record(ticket(1)).unwrap();
        store.close();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&[0, 0, 0, 50, 1, 2]).unwrap();
        drop(f);

        let store = RecordStore::open(&path, StoreOptions::default()).unwrap();
        store.append_ticket_record(ticket(2)).unwrap();
        store.close();
        let store = RecordStore::open(&path, StoreOptions::default()).unwrap();
        assert_eq!(store.ticket_count(), 2);
    }

    #[test]
    fn purge_drops_expired_tickets() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.vpkr");
        let store = RecordStore::open(&path, StoreOptions::default()).unwrap();
        for i in 0..10 {
            store.append_ticket_record(ticket(i)).unwrap();
        }
        store.close();
        // exp_tkt = 100 + i
        let stats = purge_file(&path, 105).unwrap();
        assert_eq!(
            stats,
            PurgeStats {
                kept: 5,
                removed: 5
            }
        );
        let store = RecordStore::open(&path, StoreOptions::default()).unwrap();
        assert_eq!(store.ticket_count(), 5);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x");
        std::fs::write(&path, b"NOPE!").unwrap();
        assert!(matches!(
            RecordStore::open(&path, StoreOptions::default()),
            Err(RecordError::BadMagic)
        ));
    }
}
