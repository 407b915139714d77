//! Hindsight relabeling of automaton-staged subgoals.

use rand::Rng as _;

use crate::grid::state_coords;
use crate::product::{Goal, StepOutcome};

use super::Transition;

impl Transition {
    pub fn from_outcome(aug: crate::product::AugmentedState, action: usize, o: StepOutcome) -> Self {
        Self {
            aug,
            action,
            reward: o.reward,
            cost: o.cost,
            next: o.next,
            trapped: o.trapped,
            timeout: o.timeout,
            relabeled: false,
        }
    }
}

/// For each transition with a real subgoal, up to `k` copies whose goal slot is
/// replaced by a state achieved later in the episode. The slot keeps its radius;
/// reward becomes 1 iff the next state lies in the relabeled disk. Cost, automaton
/// state and trap flags are copied unchanged.
pub fn her_relabel(episode: &[Transition], k: usize, rng: &mut impl rand::RngCore) -> Vec<Transition> {
    let n = episode.len();
    let mut out = Vec::new();
    if k == 0 {
        return out;
    }
    let achieved = |i: usize| if i < n { episode[i].aug.cell } else { episode[n - 1].next.cell };
    for (t, tr) in episode.iter().enumerate() {
        let slots: Vec<usize> = tr.aug.gplus.iter().enumerate().filter(|(_, g)| g.is_some()).map(|(i, _)| i).collect();
        if slots.is_empty() {
            continue;
        }
        for _ in 0..k {
            let tf = rng.gen_range(t + 1..=n);
            let slot = slots[rng.gen_range(0..slots.len())];
            let radius = tr.aug.gplus[slot].expect("non-sentinel slot").radius;
            let goal = Goal { center: state_coords(achieved(tf)), radius };
            let mut copy = tr.clone();
            copy.aug.gplus[slot] = Some(goal);
            if copy.next.q == copy.aug.q {
                copy.next.gplus[slot] = Some(goal);
            }
            copy.reward = if goal.contains(state_coords(tr.next.cell)) { 1.0 } else { 0.0 };
            copy.relabeled = true;
            out.push(copy);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_layout, NUM_ACTIONS};
    use crate::product::{Product, Task};
    use crate::seed;

    fn episode(template: u8, actions: &[usize]) -> (Task, Vec<Transition>) {
        let (l, f) = make_layout(template, 10).unwrap();
        let task = Task::new(l, f).unwrap();
        let p = Product::new(&task, 0.0, actions.len()).unwrap();
        let mut rng = seed::rng(0, "ep", 0);
        let mut s = p.reset(&mut rng);
        let mut eps = vec![];
        for (t, a) in actions.iter().enumerate() {
            let o = p.step(&s, *a, t, &mut rng).unwrap();
            let next = o.next.clone();
            eps.push(Transition::from_outcome(s, *a, o));
            s = next;
        }
        (task, eps)
    }

    #[test]
    fn final_transition_relabeled_with_its_own_endpoint_is_rewarded() {
        let (_, eps) = episode(1, &[3, 3, 0, 0, 3]);
        let mut rng = seed::rng(1, "her", 0);
        let extra = her_relabel(&eps, 4, &mut rng);
        let last = eps.len() - 1;
        let copies: Vec<&Transition> = extra.iter().filter(|t| t.aug.cell == eps[last].aug.cell && t.action == eps[last].action).collect();
        assert_eq!(copies.len(), 4);
        for c in copies {
            assert_eq!(c.reward, 1.0);
            assert_eq!(c.aug.gplus[0].unwrap().center, state_coords(eps[last].next.cell));
        }
    }

    #[test]
    fn preserves_cost_and_flags() {
        let mut rng = seed::rng(2, "walk", 0);
        let actions: Vec<usize> = (0..40).map(|_| rng.gen_range(0..NUM_ACTIONS)).collect();
        let (_, eps) = episode(4, &actions);
        let extra = her_relabel(&eps, 4, &mut rng);
        let eligible: Vec<&Transition> = eps.iter().filter(|t| t.aug.gplus.iter().any(Option::is_some)).collect();
        assert_eq!(extra.len(), 4 * eligible.len());
        for (c, orig) in extra.iter().zip(eligible.iter().flat_map(|t| std::iter::repeat_n(*t, 4))) {
            assert_eq!((c.aug.cell, c.action, c.aug.q), (orig.aug.cell, orig.action, orig.aug.q));
            assert_eq!(c.cost.to_bits(), orig.cost.to_bits());
            assert_eq!((c.trapped, c.timeout, c.next.q), (orig.trapped, orig.timeout, orig.next.q));
            assert!(c.relabeled);
        }
    }

    #[test]
    fn sentinel_only_states_are_skipped() {
        // the first state of template 4 has no subgoal in its liveness condition
        let (task, eps) = episode(4, &[0]);
        assert!(task.goals(task.dba.initial()).iter().all(Option::is_none));
        assert!(her_relabel(&eps, 4, &mut seed::rng(0, "h", 0)).is_empty());
        assert!(her_relabel(&eps, 0, &mut seed::rng(0, "h", 0)).is_empty());
    }
}
