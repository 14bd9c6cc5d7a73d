use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_queue::ArrayQueue;

/// Bounded multi-producer queue that never blocks the producer: when full,
/// the oldest item is discarded and counted.
pub struct BoundedQueue<T> {
    inner: Arc<Inner<T>>,
}

struct Inner<T> {
    items: ArrayQueue<T>,
    dropped: AtomicU64,
    pushed: AtomicU64,
}

impl<T> Clone for BoundedQueue<T> {
    fn clone(&self) -> Self {
        Self {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T> std::fmt::Debug for BoundedQueue<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundedQueue")
            .field("len", &self.len())
            .field("capacity", &self.capacity())
            .field("dropped", &self.dropped())
            .finish()
    }
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            inner: Arc::new(Inner {
                items: ArrayQueue::new(capacity.max(1)),
                dropped: AtomicU64::new(0),
                pushed: AtomicU64::new(0),
            }),
        }
    }

    pub fn push(&self, item: T) {
        self.inner.pushed.fetch_add(1, Ordering::Relaxed);
        if self.inner.items.force_push(item).is_some() {
            self.inner.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }

    pub fn pop(&self) -> Option<T> {
        self.inner.items.pop()
    }

    pub fn drain(&self) -> Vec<T> {
        std::iter::from_fn(|| self.inner.items.pop()).collect()
    }

    pub fn len(&self) -> usize {
        self.inner.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inner.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.inner.items.capacity()
    }

    pub fn dropped(&self) -> u64 {
        self.inner.dropped.load(Ordering::Relaxed)
    }

    pub fn pushed(&self) -> u64 {
        self.inner.pushed.load(Ordering::Relaxed)
    }

    /// True if both handles feed the same queue.
    pub fn same_queue(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner)
    }
}
