mod common;

use afcl_core::deep::{feature_deviations, gp_step, Activation, FeatureProjectors, Mlp};
use afcl_core::kalman::{kf_correct, GaussianBelief};
use afcl_core::linalg;
use afcl_core::metrics::{error_matrix, forgetting};
use afcl_core::projection::{dense_projector_update, run_learner, ApaState, IclState, LmsState, OgdState};
use afcl_core::rls::{woodbury, LayerStep, LayerwiseRls, RlsState};
use afcl_core::stream::{
    gaussian_matrix, gaussian_vector, generate_iid_sphere, seeded_rng, BlockTask, ScalarTask, TaskStream,
};
use afcl_core::{Matrix, Vector};
use proptest::prelude::*;

fn random_tasks(seed: u64, d: usize, t: usize) -> Vec<ScalarTask> {
    let mut rng = seeded_rng(seed);
    (0..t)
        .map(|_| ScalarTask::new(gaussian_vector(&mut rng, d), gaussian_vector(&mut rng, 1)[0]))
        .collect()
}

/// `(d, t)` with `1 ≤ t ≤ d ≤ 8`.
fn independent_shape() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=8).prop_flat_map(|d| (Just(d), 1..=d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn icl_projector_matches_pseudoinverse_oracle(seed in any::<u64>(), (d, t) in independent_shape()) {
        let tasks = random_tasks(seed, d, t);
        let mut icl = IclState::new(d);
        let mut dense = Matrix::identity(d, d);
        for task in &tasks {
            let stream = TaskStream::explicit(vec![task.clone()]).unwrap();
            run_learner(&mut icl, &stream).unwrap();
            dense = dense_projector_update(&dense, &task.x);
        }
        let p = icl.proj.matrix();
        let oracle = common::complement_projector(&tasks, d);
        prop_assert!((&p - &oracle).amax() < 1e-9);
        prop_assert!((&dense - &oracle).amax() < 1e-7);
        prop_assert!(linalg::max_asymmetry(&p) < 1e-12);
        prop_assert!((&p * &p - &p).amax() < 1e-9);
        for task in &tasks {
            prop_assert!(icl.proj.apply(&task.x).amax() < 1e-9 * (1.0 + task.x.amax()));
        }
    }

    #[test]
    fn exact_learners_return_the_min_norm_solution(seed in any::<u64>(), (d, t) in independent_shape()) {
        let tasks = random_tasks(seed, d, t);
        let stream = TaskStream::explicit(tasks.clone()).unwrap();
        let oracle = common::pinv_solution(&tasks, d);
        let scale = 1.0 + oracle.amax();
        let mut icl = IclState::new(d);
        let mut apa = ApaState::unbounded(d);
        let mut orfit = OgdState::orfit(d);
        for traj in [
            run_learner(&mut icl, &stream).unwrap(),
            run_learner(&mut apa, &stream).unwrap(),
            run_learner(&mut orfit, &stream).unwrap(),
        ] {
            prop_assert!((traj.last() - &oracle).amax() < 1e-8 * scale);
            // every past constraint stays satisfied, so nothing is forgotten
            let em = error_matrix(&traj, &stream).unwrap();
            for j in 1..=t {
                for i in 1..=j {
                    prop_assert!(em.get(i, j) < 1e-8 * scale);
                }
            }
            if t > 1 {
                prop_assert!(forgetting(&em, t).unwrap().abs() < 1e-8 * scale);
            }
        }
    }

    #[test]
    fn buffered_apa_satisfies_its_buffer(seed in any::<u64>(), d in 2usize..=8, b in 1usize..=3, extra in 0usize..6) {
        // the current task plus b buffered ones
        let b = b.min(d - 1);
        let tasks = random_tasks(seed, d, b + 1 + extra);
        let mut apa = ApaState::new(d, b);
        let traj = run_learner(&mut apa, &TaskStream::explicit(tasks.clone()).unwrap()).unwrap();
        for task in &tasks[tasks.len() - b - 1..] {
            prop_assert!((task.x.dot(traj.last()) - task.y).abs() < 1e-8 * (1.0 + traj.last().amax()));
        }
    }

    #[test]
    fn lms_never_moves_away_from_a_consistent_solution(seed in any::<u64>(), d in 1usize..=8, gamma in 0.01f64..1.99) {
        let theta_star = gaussian_vector(&mut seeded_rng(seed ^ 1), d);
        let stream = generate_iid_sphere(d, 30, &theta_star, seed).unwrap();
        let mut lms = LmsState::new(d, gamma).unwrap();
        let traj = run_learner(&mut lms, &stream).unwrap();
        for w in traj.thetas.windows(2) {
            prop_assert!((&w[1] - &theta_star).norm() <= (&w[0] - &theta_star).norm() * (1.0 + 1e-12) + 1e-14);
        }
    }

    #[test]
    fn rls_matches_the_normal_equations(
        seed in any::<u64>(),
        d in 1usize..=6,
        t in 1usize..=15,
        beta in 0.5f64..2.0,
        lambda in 0.1f64..10.0,
    ) {
        let tasks = random_tasks(seed, d, t);
        let mut rls = RlsState::new(d, beta, lambda).unwrap();
        for n in 1..=t {
            afcl_core::projection::Learner::step(&mut rls, &tasks[n - 1]).unwrap();
            let oracle = common::ridge_normal_equations(&tasks[..n], d, beta, lambda);
            prop_assert!((&rls.theta - &oracle).amax() < 1e-8 * (1.0 + oracle.amax()));
        }
        let phi = rls.phi();
        prop_assert!(linalg::min_eigenvalue(&phi) > 0.0);
        let mut hessian = Matrix::identity(d, d) * lambda;
        for (k, task) in tasks.iter().enumerate() {
            hessian += &task.x * task.x.transpose() * beta.powi(-(k as i32 + 1));
        }
        prop_assert!((&phi * hessian - Matrix::identity(d, d)).amax() < 1e-7);
    }

    #[test]
    fn woodbury_matches_direct_inversion(seed in any::<u64>(), d in 1usize..=6, m in 1usize..=4) {
        let mut rng = seeded_rng(seed);
        let g = gaussian_matrix(&mut rng, d, d);
        let phi = &g * g.transpose() + Matrix::identity(d, d);
        let x = gaussian_matrix(&mut rng, d, m);
        let h = gaussian_matrix(&mut rng, m, m);
        let b = &h * h.transpose() + Matrix::identity(m, m);
        let direct = (&phi + &x * b.clone().try_inverse().unwrap() * x.transpose()).try_inverse().unwrap();
        let w = woodbury(&phi, &x, &b).unwrap();
        prop_assert!((w - &direct).amax() < 1e-9 * (1.0 + direct.amax()));
    }

    #[test]
    fn correction_shrinks_the_covariance(seed in any::<u64>(), d in 1usize..=5, m in 1usize..=3) {
        let mut rng = seeded_rng(seed);
        let g = gaussian_matrix(&mut rng, d, d);
        let prior = GaussianBelief::new(gaussian_vector(&mut rng, d), &g * g.transpose() + Matrix::identity(d, d)).unwrap();
        let task = BlockTask::new(gaussian_matrix(&mut rng, d, m), gaussian_vector(&mut rng, m)).unwrap();
        let post = kf_correct(&prior, &task, &Matrix::identity(m, m)).unwrap();
        prop_assert!(linalg::min_eigenvalue(&post.cov) > -1e-12);
        prop_assert!(linalg::min_eigenvalue(&(&prior.cov - &post.cov)) > -1e-10);
        prop_assert!(linalg::max_asymmetry(&post.cov) < 1e-12);
    }

    #[test]
    fn gradient_projection_keeps_old_features(seed in any::<u64>(), width in 3usize..=8, tasks in 1usize..=3) {
        let mut rng = seeded_rng(seed);
        let mut net = Mlp::random(&[width, width, width, 2], Activation::Tanh, &mut rng).unwrap();
        let mut proj = FeatureProjectors::new(&net);
        let mut inputs = Vec::new();
        let mut recorded = Vec::new();
        for _ in 0..tasks {
            let x = gaussian_vector(&mut rng, width);
            let y = gaussian_vector(&mut rng, 2);
            gp_step(&mut net, &mut proj, &x, &y, 0.2).unwrap();
            recorded.push(net.forward_features(&x).unwrap());
            inputs.push(x);
        }
        let rows = feature_deviations(&net, &inputs, &recorded, tasks).unwrap();
        prop_assert!(rows.iter().all(|r| r.max_abs_dev <= 1e-8));
    }

    #[test]
    fn single_layer_layerwise_rls_is_rls(seed in any::<u64>(), d in 1usize..=6, t in 1usize..=10, beta in 0.5f64..2.0) {
        let tasks = random_tasks(seed, d, t);
        let mut net = Mlp::new(vec![Matrix::zeros(d, 1)], Activation::Identity).unwrap();
        let mut lw = LayerwiseRls::new(&net, beta, 1.0, LayerStep::Rls).unwrap();
        let mut rls = RlsState::new(d, beta, 1.0).unwrap();
        for task in &tasks {
            lw.train_step(&mut net, &task.x, &Vector::from_element(1, task.y)).unwrap();
            afcl_core::projection::Learner::step(&mut rls, task).unwrap();
        }
        let theta = Vector::from_column_slice(net.layers[0].as_slice());
        prop_assert!((theta - &rls.theta).amax() < 1e-9 * (1.0 + rls.theta.amax()));
    }

    #[test]
    fn streams_and_checkpoints_round_trip(seed in any::<u64>(), d in 1usize..=5, t in 0usize..=6) {
        let stream = TaskStream::explicit(random_tasks(seed, d, t)).unwrap();
        let text = stream.to_jsonl().unwrap();
        let back = TaskStream::read_jsonl(text.as_bytes()).unwrap();
        prop_assert_eq!(back.to_jsonl().unwrap(), text);
        prop_assert_eq!(back.scalar_tasks().unwrap(), stream.scalar_tasks().unwrap());

        let net = Mlp::random(&[d, d + 1, 2], Activation::Relu, &mut seeded_rng(seed)).unwrap();
        let json = serde_json::to_string(&net.to_checkpoint()).unwrap();
        let restored = Mlp::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        prop_assert_eq!(restored.layers, net.layers);
    }
}
