use std::collections::VecDeque;

/// Bounded queue where accessed items move to the front and a full queue
/// evicts from the back.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundedQueue<T> {
    items: VecDeque<T>,
    cap: usize,
}

impl<T> BoundedQueue<T> {
    pub fn new(cap: usize) -> Self {
        BoundedQueue {
            items: VecDeque::new(),
            cap: cap.max(1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &T> {
        self.items.iter()
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    pub fn clear(&mut self) {
        self.items.clear();
    }

    /// Inserts at the front; returns the evicted back item if the queue was full.
    pub fn push_front(&mut self, item: T) -> Option<T> {
        let evicted = if self.items.len() >= self.cap {
            self.items.pop_back()
        } else {
            None
        };
        self.items.push_front(item);
        evicted
    }

    pub fn position(&self, pred: impl FnMut(&T) -> bool) -> Option<usize> {
        self.items.iter().position(pred)
    }

    /// Moves item `i` to the front.
    pub fn touch(&mut self, i: usize) {
        if i > 0 && i < self.items.len() {
            let it = self.items.remove(i).expect("index checked");
            self.items.push_front(it);
        }
    }

    /// Replaces item `i` and moves it to the front.
    pub fn replace(&mut self, i: usize, item: T) {
        self.items[i] = item;
        self.touch(i);
    }

    pub fn remove(&mut self, i: usize) -> Option<T> {
        self.items.remove(i)
    }

    pub fn retain(&mut self, f: impl FnMut(&T) -> bool) {
        self.items.retain(f)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.items.iter_mut()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evicts_back_and_touches_to_front() {
        let mut q = BoundedQueue::new(2);
        assert_eq!(q.push_front(1), None);
        assert_eq!(q.push_front(2), None);
        q.touch(1);
        assert_eq!(q.iter().copied().collect::<Vec<_>>(), vec![1, 2]);
        assert_eq!(q.push_front(3), Some(2));
        assert_eq!(q.iter().copied().collect::<Vec<_>>(), vec![3, 1]);
    }
}
