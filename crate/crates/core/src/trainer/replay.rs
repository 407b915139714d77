//! Fixed-capacity uniform replay over critic row indices.

use rand::Rng as _;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stored {
    pub row: u32,
    pub next_row: u32,
    pub action: u8,
    pub reward: f64,
    pub cost: f64,
    pub trapped: bool,
    pub timeout: bool,
    pub relabeled: bool,
}

#[derive(Debug, Clone)]
pub struct Replay {
    items: Vec<Stored>,
    capacity: usize,
    head: usize,
}

impl Replay {
    pub fn new(capacity: usize) -> Self {
        Self { items: Vec::with_capacity(capacity.min(1 << 20)), capacity: capacity.max(1), head: 0 }
    }

    pub fn push(&mut self, s: Stored) {
        if self.items.len() < self.capacity {
            self.items.push(s);
        } else {
            self.items[self.head] = s;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn sample_into(&self, n: usize, rng: &mut impl rand::RngCore, out: &mut Vec<Stored>) {
        out.clear();
        for _ in 0..n {
            out.push(self.items[rng.gen_range(0..self.items.len())]);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(i: u32) -> Stored {
        Stored { row: i, next_row: i, action: 0, reward: 0.0, cost: 0.0, trapped: false, timeout: false, relabeled: false }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut r = Replay::new(3);
        for i in 0..5 {
            r.push(item(i));
        }
        assert_eq!(r.len(), 3);
        let mut rows: Vec<u32> = r.items.iter().map(|s| s.row).collect();
        rows.sort();
        assert_eq!(rows, vec![2, 3, 4]);
    }
}
