use lifelong_rep::datagen::{make_task_stream, InputLaw, NoiseSpec};
use lifelong_rep::erm::{OptimizerConfig, SolverKind};
use lifelong_rep::lifelong::{certify_outputs, run_lifelong, SampleSizePolicy};
use lifelong_rep::LossKind;

#[test]
fn lifelong_run_in_f32_tracks_f64() {
    let (d, k, tasks, eps) = (5, 2, 6, 0.2);
    let policy = SampleSizePolicy::practical(d, k, eps, tasks).unwrap();
    let mut totals = Vec::new();
    macro_rules! run {
        ($t:ty) => {{
            let mut stream = make_task_stream::<$t>(
                d,
                k,
                tasks,
                0.4,
                NoiseSpec::uniform(0.05),
                InputLaw::UnitBallUniform,
                LossKind::ScaledSquared,
                3,
            )
            .unwrap();
            let kappas: Vec<f64> = stream
                .tasks()
                .iter()
                .map(|t| t.exact_bayes_risk().unwrap())
                .collect();
            let cfg = OptimizerConfig::<$t> {
                solver: SolverKind::Newton,
                ..OptimizerConfig::default()
            };
            let record = run_lifelong(&mut stream, eps, &kappas, &policy, &cfg, None, 1).unwrap();
            assert_eq!(record.outputs.len(), tasks);
            assert!(record.final_representation.orthonormality_defect() < 1e-4);
            let certs = certify_outputs(&record.outputs, &stream, &kappas, eps, 4000, 9).unwrap();
            assert!(certs.iter().all(|c| c.within_epsilon), "{certs:?}");
            totals.push((record.updates(), record.total_samples));
        }};
    }
    run!(f64);
    run!(f32);
    assert_eq!(totals[0], totals[1]);
}
