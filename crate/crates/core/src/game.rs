//! Two-player symmetric dilemma games on a pairwise-interaction population.
//!
//! Payoffs follow the usual normalisation `R = 1`, `P = 0`, leaving the
//! temptation `T ∈ [0, 2]` and sucker's payoff `S ∈ [-1, 1]` as the free axes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 2×2 symmetric game, payoffs seen from the row player.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PayoffMatrix {
    pub reward: f64,
    pub sucker: f64,
    pub temptation: f64,
    pub punishment: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GameClass {
    PrisonersDilemma,
    Snowdrift,
    StagHunt,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Cooperate,
    Defect,
}

impl Action {
    /// One-hot encoding: `(1, 0)` for C and `(0, 1)` for D.
    pub fn one_hot(self) -> [f64; 2] {
        match self {
            Action::Cooperate => [1.0, 0.0],
            Action::Defect => [0.0, 1.0],
        }
    }

    /// Index into a two-way policy head (0 = C, 1 = D).
    pub fn index(self) -> usize {
        match self {
            Action::Cooperate => 0,
            Action::Defect => 1,
        }
    }

    pub fn from_index(index: usize) -> Self {
        if index == 0 {
            Action::Cooperate
        } else {
            Action::Defect
        }
    }

    /// Network input feature: 1 for C, 0 for D.
    pub fn as_feature(self) -> f64 {
        match self {
            Action::Cooperate => 1.0,
            Action::Defect => 0.0,
        }
    }

    pub fn is_cooperate(self) -> bool {
        self == Action::Cooperate
    }

    pub fn as_char(self) -> char {
        match self {
            Action::Cooperate => 'C',
            Action::Defect => 'D',
        }
    }
}

pub const T_RANGE: (f64, f64) = (0.0, 2.0);
pub const S_RANGE: (f64, f64) = (-1.0, 1.0);

/// Builds the normalised matrix `{R = 1, S, T, P = 0}`.
pub fn make_payoff_matrix(temptation: f64, sucker: f64) -> Result<PayoffMatrix> {
    check_range("T", temptation, T_RANGE)?;
    check_range("S", sucker, S_RANGE)?;
    Ok(PayoffMatrix {
        reward: 1.0,
        sucker,
        temptation,
        punishment: 0.0,
    })
}

fn check_range(name: &'static str, value: f64, (lo, hi): (f64, f64)) -> Result<()> {
    if value.is_finite() && (lo..=hi).contains(&value) {
        Ok(())
    } else {
        Err(Error::PayoffOutOfRange {
            name,
            value,
            lo,
            hi,
        })
    }
}

impl PayoffMatrix {
    /// Unnormalised matrix; only the ordering-based classification and the
    /// bilinear payoff are meaningful for arbitrary values.
    pub fn custom(reward: f64, sucker: f64, temptation: f64, punishment: f64) -> Self {
        PayoffMatrix {
            reward,
            sucker,
            temptation,
            punishment,
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        PayoffMatrix {
            reward: self.reward * c,
            sucker: self.sucker * c,
            temptation: self.temptation * c,
            punishment: self.punishment * c,
        }
    }

    /// Row-major `[[R, S], [T, P]]`.
    pub fn as_array(&self) -> [[f64; 2]; 2] {
        [
            [self.reward, self.sucker],
            [self.temptation, self.punishment],
        ]
    }
}

/// Strict-ordering classification; ties fall through to `Other`.
pub fn classify_game(m: &PayoffMatrix) -> GameClass {
    let (r, s, t, p) = (m.reward, m.sucker, m.temptation, m.punishment);
    if t > r && r > p && p > s {
        GameClass::PrisonersDilemma
    } else if t > r && r > s && s > p {
        GameClass::Snowdrift
    } else if r > t && t > p && p > s {
        GameClass::StagHunt
    } else {
        GameClass::Other
    }
}

/// `a_iᵀ M a_j` for one-hot actions.
pub fn pairwise_payoff(own: Action, other: Action, m: &PayoffMatrix) -> f64 {
    match (own, other) {
        (Action::Cooperate, Action::Cooperate) => m.reward,
        (Action::Cooperate, Action::Defect) => m.sucker,
        (Action::Defect, Action::Cooperate) => m.temptation,
        (Action::Defect, Action::Defect) => m.punishment,
    }
}

/// Aggregate environmental reward and its per-neighbour decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvReward {
    pub total: f64,
    pub per_neighbour: Vec<f64>,
}

pub fn env_reward(own: Action, neighbour_actions: &[Action], m: &PayoffMatrix) -> Result<EnvReward> {
    if neighbour_actions.is_empty() {
        return Err(Error::Empty("neighbour action list"));
    }
    let per_neighbour: Vec<f64> = neighbour_actions
        .iter()
        .map(|&other| pairwise_payoff(own, other, m))
        .collect();
    // left-to-right so the total is reproducible from the decomposition
    let total = per_neighbour.iter().fold(0.0, |acc, x| acc + x);
    Ok(EnvReward {
        total,
        per_neighbour,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use Action::{Cooperate as C, Defect as D};

    fn pd13() -> PayoffMatrix {
        make_payoff_matrix(1.3, -0.3).unwrap()
    }

    #[test]
    fn make_matrix_examples() {
        let m = pd13();
        assert_eq!(
            (m.reward, m.sucker, m.temptation, m.punishment),
            (1.0, -0.3, 1.3, 0.0)
        );
        let m = make_payoff_matrix(1.0, 0.0).unwrap();
        assert_eq!(m.as_array(), [[1.0, 0.0], [1.0, 0.0]]);
        match make_payoff_matrix(2.1, 0.0) {
            Err(Error::PayoffOutOfRange { name, .. }) => assert_eq!(name, "T"),
            other => panic!("expected range error, got {other:?}"),
        }
        match make_payoff_matrix(1.0, -1.5) {
            Err(Error::PayoffOutOfRange { name, .. }) => assert_eq!(name, "S"),
            other => panic!("expected range error, got {other:?}"),
        }
        assert!(make_payoff_matrix(f64::NAN, 0.0).is_err());
    }

    #[test]
    fn classification_examples() {
        assert_eq!(classify_game(&pd13()), GameClass::PrisonersDilemma);
        let sg = make_payoff_matrix(1.1, 0.1).unwrap();
        assert_eq!(classify_game(&sg), GameClass::Snowdrift);
        let sh = make_payoff_matrix(0.9, -0.1).unwrap();
        assert_eq!(classify_game(&sh), GameClass::StagHunt);
        // boundary: T = R is no strict ordering
        assert_eq!(
            classify_game(&make_payoff_matrix(1.0, 0.0).unwrap()),
            GameClass::Other
        );
        assert_eq!(
            classify_game(&make_payoff_matrix(1.0, -0.5).unwrap()),
            GameClass::Other
        );
    }

    #[test]
    fn pairwise_examples() {
        let m = pd13();
        assert_eq!(pairwise_payoff(C, C, &m), 1.0);
        assert_eq!(pairwise_payoff(D, D, &m), 0.0);
        assert_eq!(pairwise_payoff(C, D, &m), -0.3);
        assert_eq!(pairwise_payoff(D, C, &m), 1.3);
    }

    #[test]
    fn pairwise_matches_bilinear_form() {
        let m = pd13();
        let arr = m.as_array();
        for own in [C, D] {
            for other in [C, D] {
                let (a, b) = (own.one_hot(), other.one_hot());
                let mut quad = 0.0;
                for r in 0..2 {
                    for c in 0..2 {
                        quad += a[r] * arr[r][c] * b[c];
                    }
                }
                assert_eq!(pairwise_payoff(own, other, &m), quad);
            }
        }
    }

    #[test]
    fn env_reward_examples() {
        let m = pd13();
        let r = env_reward(C, &[C, C, C, C], &m).unwrap();
        assert_eq!(r.total, 4.0);
        assert_eq!(r.per_neighbour, vec![1.0; 4]);

        let r = env_reward(D, &[C, C, C, C], &m).unwrap();
        assert!((r.total - 5.2).abs() < 1e-12);
        assert_eq!(r.per_neighbour, vec![1.3; 4]);

        let r = env_reward(C, &[C, D, C, D], &m).unwrap();
        assert!((r.total - 1.4).abs() < 1e-12);
        assert_eq!(r.per_neighbour, vec![1.0, -0.3, 1.0, -0.3]);

        assert!(matches!(env_reward(C, &[], &m), Err(Error::Empty(_))));
    }

    fn brute_force_class(r: f64, s: f64, t: f64, p: f64) -> GameClass {
        // sort the four payoffs descending and read off the order string
        let mut v = [('R', r), ('S', s), ('T', t), ('P', p)];
        v.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        let strict = v.windows(2).all(|w| w[0].1 > w[1].1);
        let order: String = v.iter().map(|x| x.0).collect();
        match (strict, order.as_str()) {
            (true, "TRPS") => GameClass::PrisonersDilemma,
            (true, "TRSP") => GameClass::Snowdrift,
            (true, "RTPS") => GameClass::StagHunt,
            _ => GameClass::Other,
        }
    }

    #[test]
    fn classification_agrees_with_brute_force_ordering() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..10_000 {
            let t = rng.gen_range(0.0..=2.0);
            let s = rng.gen_range(-1.0..=1.0);
            let m = make_payoff_matrix(t, s).unwrap();
            assert_eq!(classify_game(&m), brute_force_class(1.0, s, t, 0.0), "T={t} S={s}");
        }
    }

    proptest! {
        #[test]
        fn total_is_sum_of_decomposition(
            own in prop::bool::ANY,
            others in prop::collection::vec(prop::bool::ANY, 1..9),
            t in 0.0f64..=2.0,
            s in -1.0f64..=1.0,
        ) {
            let m = make_payoff_matrix(t, s).unwrap();
            let to_action = |b: bool| if b { C } else { D };
            let acts: Vec<Action> = others.into_iter().map(to_action).collect();
            let r = env_reward(to_action(own), &acts, &m).unwrap();
            let mut sum = 0.0;
            for x in &r.per_neighbour {
                sum += x;
            }
            prop_assert_eq!(r.total, sum);
        }

        #[test]
        fn payoff_scales_with_matrix(
            own in prop::bool::ANY,
            other in prop::bool::ANY,
            t in 0.0f64..=2.0,
            s in -1.0f64..=1.0,
            c in -5.0f64..5.0,
        ) {
            let m = make_payoff_matrix(t, s).unwrap();
            let to_action = |b: bool| if b { C } else { D };
            let (a, b) = (to_action(own), to_action(other));
            prop_assert_eq!(pairwise_payoff(a, b, &m.scaled(c)), c * pairwise_payoff(a, b, &m));
        }
    }
}
