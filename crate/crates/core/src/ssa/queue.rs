/// Indexed binary min-heap over a fixed set of channels, keyed by putative
/// firing time. Keys can be changed in place in O(log n).
#[derive(Debug, Clone)]
pub struct IndexedMinQueue {
    keys: Vec<f64>,
    heap: Vec<usize>,
    pos: Vec<usize>,
}

impl IndexedMinQueue {
    pub fn new(keys: Vec<f64>) -> Self {
        let n = keys.len();
        let mut q = Self {
            keys,
            heap: (0..n).collect(),
            pos: (0..n).collect(),
        };
        for i in (0..n / 2).rev() {
            q.sift_down(i);
        }
        q
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// `(channel, key)` with the smallest key.
    #[inline]
    pub fn peek(&self) -> Option<(usize, f64)> {
        self.heap.first().map(|&c| (c, self.keys[c]))
    }

    #[inline]
    pub fn key(&self, channel: usize) -> f64 {
        self.keys[channel]
    }

    pub fn keys(&self) -> &[f64] {
        &self.keys
    }

    #[inline]
    pub fn update(&mut self, channel: usize, key: f64) {
        let old = self.keys[channel];
        self.keys[channel] = key;
        let i = self.pos[channel];
        if key < old {
            self.sift_up(i);
        } else if key > old {
            self.sift_down(i);
        }
    }

    /// Checks the heap property and the position index.
    pub fn is_consistent(&self) -> bool {
        let n = self.heap.len();
        (0..n).all(|i| {
            self.pos[self.heap[i]] == i && (i == 0 || self.keys[self.heap[(i - 1) / 2]] <= self.keys[self.heap[i]])
        })
    }

    fn less(&self, i: usize, j: usize) -> bool {
        self.keys[self.heap[i]] < self.keys[self.heap[j]]
    }

    fn swap(&mut self, i: usize, j: usize) {
        self.heap.swap(i, j);
        self.pos[self.heap[i]] = i;
        self.pos[self.heap[j]] = j;
    }

    fn sift_up(&mut self, mut i: usize) {
        while i > 0 {
            let parent = (i - 1) / 2;
            if !self.less(i, parent) {
                break;
            }
            self.swap(i, parent);
            i = parent;
        }
    }

    fn sift_down(&mut self, mut i: usize) {
        let n = self.heap.len();
        loop {
            let l = 2 * i + 1;
            if l >= n {
                break;
            }
            let r = l + 1;
            let child = if r < n && self.less(r, l) { r } else { l };
            if !self.less(child, i) {
                break;
            }
            self.swap(i, child);
            i = child;
        }
    }
}
