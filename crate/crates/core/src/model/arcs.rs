//! Arc storage with two scan orders.
//!
//! Arcs are kept grouped by demand node (forward neighborhoods) and by
//! supply node (reverse neighborhoods). Degree offsets live in memory, which
//! is O(nodes); the grouped endpoint arrays either live in memory or in two
//! flat files read back in bounded batches.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use tempfile::TempDir;

use crate::error::Result;

/// Upper bound on endpoints held in memory per scan batch (disk backend).
pub const DEFAULT_BATCH_ARCS: usize = 1 << 16;

/// Where grouped arc arrays are kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum ArcStorage {
    #[default]
    Memory,
    /// Flat files in `dir`, or in a fresh temporary directory when `None`.
    Disk { dir: Option<PathBuf> },
}

impl ArcStorage {
    pub fn temp_disk() -> Self {
        ArcStorage::Disk { dir: None }
    }
}

/// Scan direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Neighborhoods of demand nodes (supply endpoints).
    Demand,
    /// Neighborhoods of supply nodes (demand endpoints).
    Supply,
}

/// A run of consecutive neighborhoods, as delivered by a scan.
#[derive(Debug, Clone, Copy)]
pub struct Neighborhoods<'a> {
    first: usize,
    /// Absolute offsets of nodes `first..first + len`, length `len + 1`.
    offsets: &'a [u64],
    targets: &'a [u32],
}

impl<'a> Neighborhoods<'a> {
    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn first_node(&self) -> usize {
        self.first
    }

    /// Neighborhood of the `k`-th node of the batch, with the absolute
    /// position of its first arc in this scan order.
    pub fn get(&self, k: usize) -> (usize, u64, &'a [u32]) {
        let base = self.offsets[0];
        let lo = self.offsets[k];
        let hi = self.offsets[k + 1];
        (
            self.first + k,
            lo,
            &self.targets[(lo - base) as usize..(hi - base) as usize],
        )
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, u64, &'a [u32])> + '_ {
        (0..self.len()).map(move |k| self.get(k))
    }
}

#[derive(Debug)]
enum Backend {
    Memory {
        original: Vec<(u32, u32)>,
        by_demand: Vec<u32>,
        by_supply: Vec<u32>,
    },
    Disk {
        // Held so the directory outlives the store when it is temporary.
        _temp: Option<TempDir>,
        original: PathBuf,
        by_demand: PathBuf,
        by_supply: PathBuf,
    },
}

/// Arcs between `n_supply` supply nodes and `n_demand` demand nodes.
#[derive(Debug)]
pub struct ArcStore {
    n_supply: usize,
    n_demand: usize,
    demand_offsets: Vec<u64>,
    supply_offsets: Vec<u64>,
    batch_arcs: usize,
    backend: Backend,
}

fn offsets_from_degrees(degrees: &[u64]) -> Vec<u64> {
    let mut offsets = Vec::with_capacity(degrees.len() + 1);
    let mut acc = 0u64;
    offsets.push(0);
    for &d in degrees {
        acc += d;
        offsets.push(acc);
    }
    offsets
}

/// Collects arcs in arrival order and builds an [`ArcStore`].
///
/// The disk builder spools arcs to a file as they arrive, so only degree
/// counters are held in memory.
pub struct ArcStoreBuilder {
    n_supply: usize,
    n_demand: usize,
    supply_degree: Vec<u64>,
    demand_degree: Vec<u64>,
    sink: Sink,
    batch_arcs: usize,
}

enum Sink {
    Memory(Vec<(u32, u32)>),
    Disk {
        temp: Option<TempDir>,
        dir: PathBuf,
        writer: BufWriter<File>,
    },
}

impl ArcStoreBuilder {
    pub fn new(n_supply: usize, n_demand: usize, storage: &ArcStorage) -> Result<Self> {
        let sink = match storage {
            ArcStorage::Memory => Sink::Memory(Vec::new()),
            ArcStorage::Disk { dir } => {
                let (temp, dir) = match dir {
                    Some(d) => {
                        std::fs::create_dir_all(d)?;
                        (None, d.clone())
                    }
                    None => {
                        let t = tempfile::Builder::new().prefix("shale-arcs").tempdir()?;
                        let p = t.path().to_path_buf();
                        (Some(t), p)
                    }
                };
                let writer = BufWriter::new(File::create(dir.join("arcs.orig"))?);
                Sink::Disk { temp, dir, writer }
            }
        };
        Ok(ArcStoreBuilder {
            n_supply,
            n_demand,
            supply_degree: vec![0; n_supply],
            demand_degree: vec![0; n_demand],
            sink,
            batch_arcs: DEFAULT_BATCH_ARCS,
        })
    }

    pub fn batch_arcs(mut self, batch_arcs: usize) -> Self {
        self.batch_arcs = batch_arcs.max(1);
        self
    }

    /// Appends the arc `(supply, demand)`; indices must be in range.
    pub fn push(&mut self, supply: u32, demand: u32) -> Result<()> {
        debug_assert!((supply as usize) < self.n_supply && (demand as usize) < self.n_demand);
        self.supply_degree[supply as usize] += 1;
        self.demand_degree[demand as usize] += 1;
        match &mut self.sink {
            Sink::Memory(v) => v.push((supply, demand)),
            Sink::Disk { writer, .. } => {
                writer.write_all(&supply.to_le_bytes())?;
                writer.write_all(&demand.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn demand_degrees(&self) -> &[u64] {
        &self.demand_degree
    }

    pub fn finish(self) -> Result<ArcStore> {
        let demand_offsets = offsets_from_degrees(&self.demand_degree);
        let supply_offsets = offsets_from_degrees(&self.supply_degree);
        let backend = match self.sink {
            Sink::Memory(original) => {
                let by_demand = group_in_memory(&original, &demand_offsets, |&(s, d)| (d, s));
                let by_supply = group_in_memory(&original, &supply_offsets, |&(s, d)| (s, d));
                Backend::Memory {
                    original,
                    by_demand,
                    by_supply,
                }
            }
            Sink::Disk { temp, dir, writer } => {
                writer.into_inner().map_err(|e| e.into_error())?.sync_all()?;
                let original = dir.join("arcs.orig");
                let by_demand = dir.join("arcs.by_demand");
                let by_supply = dir.join("arcs.by_supply");
                group_on_disk(
                    &original,
                    &by_demand,
                    &demand_offsets,
                    self.batch_arcs,
                    |(s, d)| (d, s),
                )?;
                group_on_disk(
                    &original,
                    &by_supply,
                    &supply_offsets,
                    self.batch_arcs,
                    |(s, d)| (s, d),
                )?;
                Backend::Disk {
                    _temp: temp,
                    original,
                    by_demand,
                    by_supply,
                }
            }
        };
        Ok(ArcStore {
            n_supply: self.n_supply,
            n_demand: self.n_demand,
            demand_offsets,
            supply_offsets,
            batch_arcs: self.batch_arcs,
            backend,
        })
    }
}

/// Stable counting sort of arcs by `key(arc).0`, keeping `key(arc).1`.
fn group_in_memory(
    arcs: &[(u32, u32)],
    offsets: &[u64],
    key: impl Fn(&(u32, u32)) -> (u32, u32),
) -> Vec<u32> {
    let mut cursor: Vec<u64> = offsets[..offsets.len() - 1].to_vec();
    let mut out = vec![0u32; arcs.len()];
    for a in arcs {
        let (node, target) = key(a);
        let c = &mut cursor[node as usize];
        out[*c as usize] = target;
        *c += 1;
    }
    out
}

struct PairReader {
    inner: BufReader<File>,
}

impl PairReader {
    fn open(path: &Path) -> io::Result<Self> {
        Ok(PairReader {
            inner: BufReader::with_capacity(1 << 16, File::open(path)?),
        })
    }

    fn next_pair(&mut self) -> io::Result<Option<(u32, u32)>> {
        let mut buf = [0u8; 8];
        match self.inner.read_exact(&mut buf) {
            Ok(()) => Ok(Some((
                u32::from_le_bytes(buf[0..4].try_into().unwrap()),
                u32::from_le_bytes(buf[4..8].try_into().unwrap()),
            ))),
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => Ok(None),
            Err(e) => Err(e),
        }
    }
}

/// Groups the spooled arcs by node in bounded memory: each pass over the
/// spool collects the arcs of a contiguous node range holding at most
/// `batch_arcs` endpoints (or a single node, if larger).
fn group_on_disk(
    spool: &Path,
    out: &Path,
    offsets: &[u64],
    batch_arcs: usize,
    key: impl Fn((u32, u32)) -> (u32, u32),
) -> Result<()> {
    let n = offsets.len() - 1;
    let mut writer = BufWriter::new(File::create(out)?);
    let mut lo = 0usize;
    let mut chunk: Vec<u32> = Vec::new();
    let mut cursor: Vec<u64> = Vec::new();
    while lo < n {
        let mut hi = lo + 1;
        while hi < n && offsets[hi + 1] - offsets[lo] <= batch_arcs as u64 {
            hi += 1;
        }
        let base = offsets[lo];
        chunk.clear();
        chunk.resize((offsets[hi] - base) as usize, 0);
        cursor.clear();
        cursor.extend(offsets[lo..hi].iter().map(|o| o - base));
        if !chunk.is_empty() {
            let mut reader = PairReader::open(spool)?;
            while let Some(pair) = reader.next_pair()? {
                let (node, target) = key(pair);
                let node = node as usize;
                if node >= lo && node < hi {
                    let c = &mut cursor[node - lo];
                    chunk[*c as usize] = target;
                    *c += 1;
                }
            }
            for t in &chunk {
                writer.write_all(&t.to_le_bytes())?;
            }
        }
        lo = hi;
    }
    writer.into_inner().map_err(|e| e.into_error())?.sync_all()?;
    Ok(())
}

fn read_u32s(reader: &mut impl Read, count: usize, buf: &mut Vec<u32>) -> io::Result<()> {
    let mut bytes = vec![0u8; count * 4];
    reader.read_exact(&mut bytes)?;
    buf.clear();
    buf.extend(
        bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap())),
    );
    Ok(())
}

impl ArcStore {
    pub fn n_supply(&self) -> usize {
        self.n_supply
    }

    pub fn n_demand(&self) -> usize {
        self.n_demand
    }

    pub fn n_arcs(&self) -> usize {
        *self.demand_offsets.last().unwrap() as usize
    }

    pub fn is_on_disk(&self) -> bool {
        matches!(self.backend, Backend::Disk { .. })
    }

    fn offsets(&self, side: Side) -> &[u64] {
        match side {
            Side::Demand => &self.demand_offsets,
            Side::Supply => &self.supply_offsets,
        }
    }

    pub fn degree(&self, side: Side, node: usize) -> usize {
        let o = self.offsets(side);
        (o[node + 1] - o[node]) as usize
    }

    /// Position of the first arc of demand node `j` in demand-grouped order.
    pub fn demand_arc_start(&self, j: usize) -> usize {
        self.demand_offsets[j] as usize
    }

    pub fn demand_arc_range(&self, j: usize) -> std::ops::Range<usize> {
        self.demand_offsets[j] as usize..self.demand_offsets[j + 1] as usize
    }

    /// Visits every neighborhood on `side` in node order, batch by batch.
    pub fn scan<F>(&self, side: Side, mut visit: F) -> Result<()>
    where
        F: FnMut(Neighborhoods<'_>) -> Result<()>,
    {
        let offsets = self.offsets(side);
        let n = offsets.len() - 1;
        match &self.backend {
            Backend::Memory {
                by_demand,
                by_supply,
                ..
            } => {
                let targets = match side {
                    Side::Demand => by_demand,
                    Side::Supply => by_supply,
                };
                visit(Neighborhoods {
                    first: 0,
                    offsets,
                    targets,
                })
            }
            Backend::Disk {
                by_demand,
                by_supply,
                ..
            } => {
                let path = match side {
                    Side::Demand => by_demand,
                    Side::Supply => by_supply,
                };
                let mut reader = BufReader::with_capacity(1 << 16, File::open(path)?);
                let mut buf = Vec::new();
                let mut lo = 0usize;
                while lo < n {
                    let mut hi = lo + 1;
                    while hi < n && offsets[hi + 1] - offsets[lo] <= self.batch_arcs as u64 {
                        hi += 1;
                    }
                    read_u32s(&mut reader, (offsets[hi] - offsets[lo]) as usize, &mut buf)?;
                    visit(Neighborhoods {
                        first: lo,
                        offsets: &offsets[lo..=hi],
                        targets: &buf,
                    })?;
                    lo = hi;
                }
                Ok(())
            }
        }
    }

    /// Supply endpoints of demand node `j`, written into `buf`.
    pub fn demand_neighbors<'b>(&self, j: usize, buf: &'b mut Vec<u32>) -> Result<&'b [u32]> {
        let range = self.demand_arc_range(j);
        match &self.backend {
            Backend::Memory { by_demand, .. } => {
                buf.clear();
                buf.extend_from_slice(&by_demand[range]);
            }
            Backend::Disk { by_demand, .. } => {
                let mut f = File::open(by_demand)?;
                f.seek(SeekFrom::Start(range.start as u64 * 4))?;
                read_u32s(&mut f, range.len(), buf)?;
            }
        }
        Ok(buf)
    }

    /// Visits arcs `(supply, demand)` in their original arrival order.
    pub fn for_each_original<F>(&self, mut visit: F) -> Result<()>
    where
        F: FnMut(u32, u32) -> Result<()>,
    {
        match &self.backend {
            Backend::Memory { original, .. } => {
                for &(s, d) in original {
                    visit(s, d)?;
                }
            }
            Backend::Disk { original, .. } => {
                let mut reader = PairReader::open(original)?;
                while let Some((s, d)) = reader.next_pair()? {
                    visit(s, d)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ARCS: [(u32, u32); 7] = [(0, 1), (2, 0), (1, 1), (0, 0), (2, 1), (1, 2), (3, 2)];

    fn build(storage: &ArcStorage, batch: usize) -> ArcStore {
        let mut b = ArcStoreBuilder::new(4, 3, storage).unwrap().batch_arcs(batch);
        for (s, d) in ARCS {
            b.push(s, d).unwrap();
        }
        b.finish().unwrap()
    }

    fn collect(store: &ArcStore, side: Side) -> Vec<(usize, Vec<u32>)> {
        let mut out = Vec::new();
        store
            .scan(side, |batch| {
                for (node, _, targets) in batch.iter() {
                    out.push((node, targets.to_vec()));
                }
                Ok(())
            })
            .unwrap();
        out
    }

    #[test]
    fn backends_agree() {
        let mem = build(&ArcStorage::Memory, 2);
        let disk = build(&ArcStorage::temp_disk(), 2);
        for side in [Side::Demand, Side::Supply] {
            assert_eq!(collect(&mem, side), collect(&disk, side));
        }
        assert_eq!(
            collect(&mem, Side::Demand),
            vec![(0, vec![2, 0]), (1, vec![0, 1, 2]), (2, vec![1, 3])]
        );
        assert_eq!(
            collect(&mem, Side::Supply),
            vec![(0, vec![1, 0]), (1, vec![1, 2]), (2, vec![0, 1]), (3, vec![2])]
        );
    }

    #[test]
    fn disk_batches_respect_limit() {
        let disk = build(&ArcStorage::temp_disk(), 2);
        let mut sizes = Vec::new();
        disk.scan(Side::Supply, |b| {
            sizes.push(b.targets.len());
            Ok(())
        })
        .unwrap();
        assert!(sizes.iter().all(|&s| s <= 2), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), ARCS.len());
    }

    #[test]
    fn random_access_and_original_order() {
        for storage in [ArcStorage::Memory, ArcStorage::temp_disk()] {
            let store = build(&storage, 3);
            let mut buf = Vec::new();
            assert_eq!(store.demand_neighbors(1, &mut buf).unwrap(), &[0, 1, 2]);
            assert_eq!(store.demand_neighbors(2, &mut buf).unwrap(), &[1, 3]);
            let mut seen = Vec::new();
            store
                .for_each_original(|s, d| {
                    seen.push((s, d));
                    Ok(())
                })
                .unwrap();
            assert_eq!(seen, ARCS.to_vec());
            assert_eq!(store.n_arcs(), 7);
            assert_eq!(store.degree(Side::Demand, 1), 3);
        }
    }

    #[test]
    fn nodes_without_arcs_are_scanned_empty() {
        let mut b = ArcStoreBuilder::new(3, 2, &ArcStorage::temp_disk()).unwrap();
        b.push(2, 1).unwrap();
        let store = b.finish().unwrap();
        assert_eq!(
            collect(&store, Side::Supply),
            vec![(0, vec![]), (1, vec![]), (2, vec![1])]
        );
    }
}
