/// Disjoint-set forest with union by rank and path compression.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
    components: usize,
}

impl UnionFind {
    pub fn new(size: usize) -> Self {
        assert!(size <= u32::MAX as usize, "union-find limited to u32 indices");
        Self {
            parent: (0..size as u32).collect(),
            rank: vec![0; size],
            components: size,
        }
    }

    /// Reinitialize to `size` singletons, keeping the allocations.
    pub fn reset(&mut self, size: usize) {
        assert!(size <= u32::MAX as usize, "union-find limited to u32 indices");
        self.parent.clear();
        self.parent.extend(0..size as u32);
        self.rank.clear();
        self.rank.resize(size, 0);
        self.components = size;
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn find(&mut self, x: usize) -> usize {
        let mut root = x as u32;
        while self.parent[root as usize] != root {
            root = self.parent[root as usize];
        }
        // second pass: point every node on the path at the root
        let mut cur = x as u32;
        while self.parent[cur as usize] != root {
            let next = self.parent[cur as usize];
            self.parent[cur as usize] = root;
            cur = next;
        }
        root as usize
    }

    /// Returns true if two distinct sets were joined.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb as u32,
            std::cmp::Ordering::Greater => self.parent[rb] = ra as u32,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra as u32;
                self.rank[ra] += 1;
            }
        }
        self.components -= 1;
        true
    }

    pub fn component_count(&self) -> usize {
        self.components
    }

    /// Dense labels `0..k` numbered by first appearance in index order.
    pub fn canonical_labels(&mut self) -> Vec<usize> {
        let mut labels = Vec::new();
        self.canonical_labels_into(&mut labels);
        labels
    }

    /// [`UnionFind::canonical_labels`] written into `labels`; a root's slot
    /// holds its label as soon as the root is first seen.
    pub fn canonical_labels_into(&mut self, labels: &mut Vec<usize>) {
        let n = self.len();
        for i in 0..n {
            self.find(i);
        }
        labels.clear();
        labels.resize(n, usize::MAX);
        let mut next = 0;
        for i in 0..n {
            let r = self.parent[i] as usize;
            if labels[r] == usize::MAX {
                labels[r] = next;
                next += 1;
            }
            labels[i] = labels[r];
        }
    }
}
