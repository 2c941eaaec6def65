use dnnmg::mesh::{build_patches, build_template_mesh, ChannelSpec, MeshHierarchy, Template};
use dnnmg::net::{Activation, Arch, Mlp};
use dnnmg::patch_ops::PatchSet;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn hierarchy(kind: usize, top: usize) -> MeshHierarchy<f64> {
    let t = match kind {
        0 => Template::UnitSquare { n: 2 },
        1 => Template::Channel(ChannelSpec::cylinder_2d()),
        _ => Template::UnitCube { n: 1 },
    };
    build_template_mesh::<f64>(&t).unwrap().refine_to(top)
}

fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn extension_inverts_restriction(kind in 0usize..3, j in 1usize..3, seed in any::<u64>()) {
        let coarse = if kind == 1 { 0 } else { 1 };
        let j = if kind == 2 { 1 } else { j };
        let h = hierarchy(kind, coarse + j);
        let ps = PatchSet::<f64>::new(&h, coarse, j).unwrap();
        let x = random_vec(ps.n_fine_dofs(), seed);
        let y = ps.global_extend(ps.local_restrict(&x).unwrap().view()).unwrap();
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn valence_counts_owning_patches(kind in 0usize..3, j in 1usize..3) {
        let coarse = if kind == 1 { 0 } else { 1 };
        let j = if kind == 2 { 1 } else { j };
        let h = hierarchy(kind, coarse + j);
        let ps = PatchSet::<f64>::new(&h, coarse, j).unwrap();
        let b = ps.dim + 1;
        let mut count = vec![0usize; ps.n_fine_dofs() / b];
        for p in &ps.patches {
            for &g in p.local_to_global.iter().step_by(b) {
                count[g / b] += 1;
            }
        }
        for (n, &c) in count.iter().enumerate() {
            prop_assert_eq!(ps.valence(n), c);
            prop_assert!(c >= 1);
        }
    }

    #[test]
    fn prediction_is_equivariant_under_patch_order(seed in any::<u64>()) {
        let h = hierarchy(1, 1);
        let ps = PatchSet::<f64>::new(&h, 0, 1).unwrap();
        let mut patches = build_patches(&h, 0, 1).unwrap();
        patches.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let shuffled = PatchSet::from_patches(2, 0, 1, patches, h.level(1).n_nodes());
        let mut model = Mlp::new(Arch::new(ps.n_in(), 16, 2, ps.n_out()), Activation::Tanh, seed);
        model.eval_mode();
        let xt = random_vec(ps.n_fine_dofs(), seed ^ 1);
        let r = random_vec(ps.n_fine_dofs(), seed ^ 2);
        let a = ps.predict_correction(&model, &xt, &r).unwrap();
        let b = shuffled.predict_correction(&model, &xt, &r).unwrap();
        let again = ps.predict_correction(&model, &xt, &r).unwrap();
        prop_assert_eq!(&a, &again);
        for (i, (u, v)) in a.iter().zip(&b).enumerate() {
            prop_assert!((u - v).abs() <= 1e-14 * u.abs().max(1.0));
            if i % 3 == 0 {
                prop_assert_eq!(*u, 0.0);
            }
        }
    }
}
