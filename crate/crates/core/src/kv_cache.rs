//! Append-only paged key/value storage.
//!
//! Each layer owns a sequence of pages of `page_size` tokens. Inside a page
//! the rows of every KV group are stored contiguously (group-major, then
//! slot, then head dim), so a page gather for one group is a single slice.
//! Keys are stored after rotary encoding.

use crate::error::{usage, Result};
use crate::model::KvSegment;
use crate::Scalar;

/// Default page size in tokens.
pub const DEFAULT_PAGE_SIZE: usize = 16;

/// Page index holding token position `t` (0-based).
#[inline]
pub fn page_of(t: usize, page_size: usize) -> usize {
    t / page_size
}

/// Bytes needed to hold keys and values for the given shape.
pub fn kv_bytes(
    num_layers: u64,
    seq_len: u64,
    batch: u64,
    num_kv_groups: u64,
    head_dim: u64,
    bytes_per_scalar: u64,
) -> u128 {
    [num_layers, seq_len, batch, num_kv_groups, head_dim, bytes_per_scalar]
        .iter()
        .fold(2u128, |acc, &v| acc * v as u128)
}

#[derive(Debug, Clone)]
pub struct Page<T> {
    first_position: usize,
    fill: usize,
    keys: Vec<T>,
    values: Vec<T>,
}

impl<T: Scalar> Page<T> {
    fn new(first_position: usize, capacity: usize, groups: usize, head_dim: usize) -> Self {
        let n = capacity * groups * head_dim;
        Self {
            first_position,
            fill: 0,
            keys: vec![T::zero(); n],
            values: vec![T::zero(); n],
        }
    }

    pub fn first_position(&self) -> usize {
        self.first_position
    }

    pub fn fill(&self) -> usize {
        self.fill
    }
}

/// Rows of one group gathered from a set of pages.
#[derive(Debug, Clone, PartialEq)]
pub struct Gathered<T> {
    pub keys: Vec<T>,
    pub values: Vec<T>,
    pub positions: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct PagedKvCache<T> {
    page_size: usize,
    num_groups: usize,
    head_dim: usize,
    layers: Vec<Vec<Page<T>>>,
    lens: Vec<usize>,
}

impl<T: Scalar> PagedKvCache<T> {
    pub fn new(num_layers: usize, num_groups: usize, head_dim: usize, page_size: usize) -> Result<Self> {
        if page_size == 0 || num_groups == 0 || head_dim == 0 {
            return Err(usage!("page size, group count and head dim must be positive"));
        }
        Ok(Self {
            page_size,
            num_groups,
            head_dim,
            layers: vec![Vec::new(); num_layers],
            lens: vec![0; num_layers],
        })
    }

    pub fn page_size(&self) -> usize {
        self.page_size
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn seq_len(&self, layer: usize) -> usize {
        self.lens[layer]
    }

    pub fn page_count(&self, layer: usize) -> usize {
        self.layers[layer].len()
    }

    pub fn pages(&self, layer: usize) -> &[Page<T>] {
        &self.layers[layer]
    }

    fn check_layer(&self, layer: usize) -> Result<()> {
        if layer >= self.layers.len() {
            return Err(usage!("layer {layer} out of range ({} layers)", self.layers.len()));
        }
        Ok(())
    }

    /// Stores one token's keys and values for every group; returns its position.
    pub fn append<K, V>(&mut self, layer: usize, k_groups: &[K], v_groups: &[V]) -> Result<usize>
    where
        K: AsRef<[T]>,
        V: AsRef<[T]>,
    {
        self.check_layer(layer)?;
        let (g, d, p) = (self.num_groups, self.head_dim, self.page_size);
        if k_groups.len() != g || v_groups.len() != g {
            return Err(usage!("expected {g} key and value groups"));
        }
        if k_groups.iter().any(|k| k.as_ref().len() != d) || v_groups.iter().any(|v| v.as_ref().len() != d) {
            return Err(usage!("key/value vectors must have length {d}"));
        }
        let position = self.lens[layer];
        let pages = &mut self.layers[layer];
        if pages.last().is_none_or(|pg| pg.fill == p) {
            pages.push(Page::new(position, p, g, d));
        }
        let page = pages.last_mut().expect("page allocated above");
        let slot = page.fill;
        for grp in 0..g {
            let at = (grp * p + slot) * d;
            page.keys[at..at + d].copy_from_slice(k_groups[grp].as_ref());
            page.values[at..at + d].copy_from_slice(v_groups[grp].as_ref());
        }
        page.fill += 1;
        self.lens[layer] += 1;
        Ok(position)
    }

    fn check_pages(&self, layer: usize, page_ids: &[usize]) -> Result<()> {
        self.check_layer(layer)?;
        let count = self.layers[layer].len();
        for (i, &id) in page_ids.iter().enumerate() {
            if id >= count {
                return Err(usage!("page {id} out of range ({count} pages in layer {layer})"));
            }
            if i > 0 && page_ids[i - 1] >= id {
                return Err(usage!("page ids must be strictly ascending"));
            }
        }
        Ok(())
    }

    /// Borrowed key/value rows of `group` for each listed page, filled slots only.
    pub fn segments(&self, layer: usize, group: usize, page_ids: &[usize]) -> Result<Vec<KvSegment<'_, T>>> {
        self.check_pages(layer, page_ids)?;
        if group >= self.num_groups {
            return Err(usage!("group {group} out of range"));
        }
        let pages = &self.layers[layer];
        Ok(page_ids.iter().map(|&id| self.segment(&pages[id], group)).collect())
    }

    /// Borrowed rows of every page of a layer for one group.
    pub fn all_segments(&self, layer: usize, group: usize) -> Vec<KvSegment<'_, T>> {
        self.layers[layer].iter().map(|pg| self.segment(pg, group)).collect()
    }

    fn segment<'a>(&self, page: &'a Page<T>, group: usize) -> KvSegment<'a, T> {
        let d = self.head_dim;
        let start = group * self.page_size * d;
        let end = start + page.fill * d;
        KvSegment { keys: &page.keys[start..end], values: &page.values[start..end] }
    }

    /// Copies the rows of the listed pages into contiguous buffers in
    /// ascending position order.
    pub fn gather(&self, layer: usize, page_ids: &[usize], group: usize) -> Result<Gathered<T>> {
        let segments = self.segments(layer, group, page_ids)?;
        let mut out = Gathered { keys: Vec::new(), values: Vec::new(), positions: Vec::new() };
        for (seg, &id) in segments.iter().zip(page_ids) {
            out.keys.extend_from_slice(seg.keys);
            out.values.extend_from_slice(seg.values);
            let page = &self.layers[layer][id];
            out.positions.extend(page.first_position..page.first_position + page.fill);
        }
        Ok(out)
    }
}
