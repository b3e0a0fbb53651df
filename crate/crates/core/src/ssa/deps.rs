use crate::model::Network;

/// For each channel, the channels whose propensity may change when it fires.
///
/// Channel `r'` depends on `r` when the rate law of `r'` reads a species that
/// `r` changes, or when `r` changes one of the species `r'` consumes (this
/// covers feasibility of rates that do not mention their reactants). Every
/// channel depends on itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DependencyGraph {
    deps: Vec<Vec<usize>>,
    /// `deps` without the channel itself when its own firing cannot change
    /// its propensity.
    affected: Vec<Vec<usize>>,
}

impl DependencyGraph {
    pub fn new(net: &Network) -> Self {
        let n_species = net.species.len();
        let watched: Vec<Vec<bool>> = net
            .channels
            .iter()
            .map(|ch| {
                let mut w = vec![false; n_species];
                for &s in &ch.reads {
                    w[s] = true;
                }
                for &(s, _) in &ch.consumed {
                    w[s] = true;
                }
                w
            })
            .collect();
        let n = net.channels.len();
        let affected: Vec<Vec<usize>> = (0..n)
            .map(|r| {
                (0..n)
                    .filter(|&other| net.changed_species(r).any(|s| watched[other][s]))
                    .collect()
            })
            .collect();
        let deps = affected
            .iter()
            .enumerate()
            .map(|(r, a)| {
                let mut d = a.clone();
                if let Err(pos) = d.binary_search(&r) {
                    d.insert(pos, r);
                }
                d
            })
            .collect();
        Self { deps, affected }
    }

    #[inline]
    pub fn dependents(&self, channel: usize) -> &[usize] {
        &self.deps[channel]
    }

    /// Channels whose propensity can change when `channel` fires.
    #[inline]
    pub fn affected(&self, channel: usize) -> &[usize] {
        &self.affected[channel]
    }

    pub fn len(&self) -> usize {
        self.deps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deps.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::load_model;

    #[test]
    fn single_decay_depends_on_itself() {
        let net = load_model("species X = 3\nparam mu = 1\nreaction decay: X -> @ mu*X\n")
            .unwrap()
            .network()
            .unwrap();
        assert_eq!(DependencyGraph::new(&net).dependents(0), &[0]);
    }

    #[test]
    fn isolated_channel() {
        let net = load_model(
            "species X = 1\nspecies Y = 1\nparam k = 1\n\
             reaction a: X -> 2 X @ k*X\nreaction b: -> Y @ k\n",
        )
        .unwrap()
        .network()
        .unwrap();
        let g = DependencyGraph::new(&net);
        assert_eq!(g.dependents(0), &[0]);
        assert_eq!(g.dependents(1), &[1]);
        assert_eq!(g.affected(0), &[0]);
        assert!(g.affected(1).is_empty());
    }

    #[test]
    fn consumed_species_without_rate_factor() {
        let net = load_model(
            "species X = 1\nparam k = 1\n\
             reaction feed: -> X @ k\nreaction drain: X -> @ k\n",
        )
        .unwrap()
        .network()
        .unwrap();
        assert_eq!(DependencyGraph::new(&net).dependents(0), &[0, 1]);
    }
}
