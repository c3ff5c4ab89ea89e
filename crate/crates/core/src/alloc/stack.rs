use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::AllocError;

pub(crate) fn align4(v: usize) -> usize {
    v.div_ceil(4) * 4
}

/// End of the stack an allocation grows from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corner {
    Low,
    High,
}

impl Corner {
    pub fn other(self) -> Corner {
        match self {
            Corner::Low => Corner::High,
            Corner::High => Corner::Low,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiveBuffer {
    pub offset: usize,
    pub size: usize,
    /// Steps left before an activation may be freed; `None` for weights.
    pub lifetime: Option<u32>,
    pub corner: Corner,
}

/// Two stacks sharing one region and growing toward each other.
///
/// Frees are lazy: a dead buffer below the top of its stack keeps its bytes
/// until everything above it is freed too.
#[derive(Clone, Debug)]
pub struct StackState {
    pub capacity: usize,
    pub low_ptr: usize,
    pub high_ptr: usize,
    /// Corner of the next allocation group.
    pub begin_end: Corner,
    pub live: BTreeMap<String, LiveBuffer>,
    low: Vec<(String, usize, usize)>,
    high: Vec<(String, usize, usize)>,
}

impl StackState {
    pub fn new(capacity: usize) -> Self {
        StackState {
            capacity,
            low_ptr: 0,
            high_ptr: capacity,
            begin_end: Corner::Low,
            live: BTreeMap::new(),
            low: Vec::new(),
            high: Vec::new(),
        }
    }

    /// Bytes claimed from both ends, holes included.
    pub fn used(&self) -> usize {
        self.low_ptr + (self.capacity - self.high_ptr)
    }

    /// Pushes `size` bytes (rounded up to 4) on `corner` and returns the offset.
    pub fn alloc(&mut self, id: &str, size: usize, corner: Corner, lifetime: Option<u32>, step: &str) -> Result<usize, AllocError> {
        if self.live.contains_key(id) {
            return Err(AllocError::Duplicate(id.to_string()));
        }
        let size = align4(size);
        let free = self.high_ptr - self.low_ptr;
        if size > free {
            return Err(AllocError::Overflow { layer: step.to_string(), buffer: id.to_string(), shortfall: size - free });
        }
        let offset = match corner {
            Corner::Low => {
                let o = self.low_ptr;
                self.low_ptr += size;
                self.low.push((id.to_string(), o, size));
                o
            }
            Corner::High => {
                self.high_ptr -= size;
                self.high.push((id.to_string(), self.high_ptr, size));
                self.high_ptr
            }
        };
        self.live.insert(id.to_string(), LiveBuffer { offset, size, lifetime, corner });
        Ok(offset)
    }

    pub fn free(&mut self, id: &str) -> Option<LiveBuffer> {
        let b = self.live.remove(id)?;
        self.pop_dead();
        Some(b)
    }

    fn pop_dead(&mut self) {
        while let Some((id, o, _)) = self.low.last() {
            if self.live.contains_key(id) {
                break;
            }
            self.low_ptr = *o;
            self.low.pop();
        }
        while let Some((id, o, s)) = self.high.last() {
            if self.live.contains_key(id) {
                break;
            }
            self.high_ptr = o + s;
            self.high.pop();
        }
    }

    pub fn set_lifetime(&mut self, id: &str, lifetime: u32) {
        if let Some(b) = self.live.get_mut(id) {
            b.lifetime = Some(lifetime);
        }
    }

    /// Decrements every activation counter that is still positive.
    pub fn tick(&mut self) {
        for b in self.live.values_mut() {
            if let Some(l) = b.lifetime.as_mut() {
                *l = l.saturating_sub(1);
            }
        }
    }

    /// Activations whose counter reached zero, in id order.
    pub fn expired(&self) -> Vec<String> {
        self.live.iter().filter(|(_, b)| b.lifetime == Some(0)).map(|(id, _)| id.clone()).collect()
    }
}
