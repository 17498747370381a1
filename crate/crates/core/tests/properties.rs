use num_rational::BigRational;
use num_traits::{One, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use finvariant::counting::{weight_of_pair, MicroObservable};
use finvariant::exact::ratio;
use finvariant::freegrp::ball;
use finvariant::montecarlo::{d_k_exact, uniform_homomorphism};
use finvariant::systems::DEFAULT_LABELING_CAP;
use finvariant::weights::{default_alphabet, random_weight};
use finvariant::{GroupSpec, System, Weight, Word};

fn chain() -> System {
    let edges = [(3, 10), (1, 10), (1, 10), (5, 10), (1, 5), (1, 5), (1, 5), (2, 5)].iter().map(|&(p, q)| ratio(p, q)).collect();
    System::markov(GroupSpec::group(2), Weight::from_exact_edges(default_alphabet(2), 2, edges).unwrap()).unwrap()
}

fn systems() -> Vec<System> {
    let coin = System::bernoulli(GroupSpec::group(2), vec![ratio(1, 3), ratio(2, 3)]).unwrap();
    let finite = System::finite_action(GroupSpec::group(2), vec![vec![1, 2, 0, 3], vec![3, 2, 1, 0]], vec![0, 1, 1, 0], 2).unwrap();
    vec![coin.clone(), chain(), finite, System::product(coin, chain()).unwrap()]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn joints_are_exact_probability_laws(which in 0usize..4, picks in prop::collection::vec(0usize..17, 1..4)) {
        let sys = &systems()[which];
        let b2 = ball(sys.spec(), 2);
        let mut words: Vec<Word> = picks.iter().map(|&i| b2[i].clone()).collect();
        words.sort();
        words.dedup();
        let joint = sys.joint_distribution_exact(&words, DEFAULT_LABELING_CAP).unwrap();
        prop_assert_eq!(joint.total(), BigRational::one());
        prop_assert!(joint.masses().values().all(|m| *m > BigRational::zero()));
        // every single coordinate has the law of the observable
        let base = sys.joint_distribution_exact(&[Word::identity()], DEFAULT_LABELING_CAP).unwrap();
        for w in &words {
            let m = joint.marginal(std::slice::from_ref(w)).unwrap();
            prop_assert_eq!(m.masses(), base.masses());
        }
    }

    #[test]
    fn marginals_agree_with_smaller_joints(which in 0usize..4, keep in 1usize..5) {
        let sys = &systems()[which];
        let b1 = ball(sys.spec(), 1);
        let joint = sys.joint_distribution_exact(&b1, DEFAULT_LABELING_CAP).unwrap();
        let sub: Vec<Word> = b1[..keep].to_vec();
        let direct = sys.joint_distribution_exact(&sub, DEFAULT_LABELING_CAP).unwrap();
        prop_assert_eq!(joint.marginal(&sub).unwrap(), direct);
    }

    #[test]
    fn empirical_weights_are_weights(seed in any::<u64>(), n in 1usize..15, k in 1usize..4, r in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = uniform_homomorphism(n, r, &mut rng);
        let psi = MicroObservable::new((0..n).map(|_| rng.gen_range(0..k)).collect(), k).unwrap();
        let w = weight_of_pair(&sigma, &psi).unwrap();
        prop_assert!(w.validate(0.0).is_ok());
        prop_assert!(w.q_divides(n).unwrap());
    }

    #[test]
    fn rounding_a_lattice_weight_is_the_identity(seed in any::<u64>(), k in 1usize..4, r in 1usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = random_weight(&mut rng, k, r);
        let q: usize = w.q().unwrap().try_into().unwrap();
        let out = w.round(q).unwrap();
        prop_assert!(w.d_star_exact(&out).unwrap().is_zero());
    }

    #[test]
    fn d_k_is_a_bounded_distance(seed in any::<u64>(), n in 1usize..10) {
        let sys = chain();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sigma = uniform_homomorphism(n, 2, &mut rng);
        let psi = MicroObservable::new((0..n).map(|_| rng.gen_range(0..2)).collect(), 2).unwrap();
        let b1 = ball(sys.spec(), 1);
        let small = d_k_exact(&sys, &sigma, &psi, &b1[..1]).unwrap();
        let big = d_k_exact(&sys, &sigma, &psi, &b1).unwrap();
        // marginalizing cannot increase the l1 distance
        prop_assert!(small <= big);
        prop_assert!(big <= ratio(2, 1));
    }
}
