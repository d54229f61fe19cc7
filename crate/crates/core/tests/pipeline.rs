use stylesearch_core::evolution::{self, EvolutionConfig};
use stylesearch_core::gmm::{argmax, GmmConfig};
use stylesearch_core::model_file::{ModelFile, PipelineSpec};
use stylesearch_core::phenotype::{LatentVector, Pipeline, StyleModel};
use stylesearch_core::rng::{stream, Stream};

fn spec(size: usize) -> PipelineSpec {
    PipelineSpec {
        generator_seed: 1,
        latent_dim: 16,
        hidden_width: 32,
        height: 16,
        width: 16,
        embedder_seed: 2,
        embedding_dim: 64,
        dataset_seed: 3,
        dataset_size: size,
    }
}

fn fit(size: usize, k: usize) -> (Pipeline, StyleModel, Vec<usize>) {
    let spec = spec(size);
    let pipeline = spec.build().unwrap();
    let (_, data) = pipeline.sample_dataset(size, spec.dataset_seed).unwrap();
    let cfg = GmmConfig {
        n_components: k,
        seed: 4,
        ..GmmConfig::default()
    };
    let (style, _) = StyleModel::fit(&data, 0.9, &cfg).unwrap();
    let mut sizes = vec![0; k];
    for row in data.iter_rows() {
        sizes[argmax(&style.posterior(row).unwrap())] += 1;
    }
    (pipeline, style, sizes)
}

#[test]
fn largest_style_is_reachable_by_random_sampling() {
    let (pipeline, style, sizes) = fit(600, 4);
    let largest = argmax(&sizes.iter().map(|&s| s as f64).collect::<Vec<_>>());
    let mut rng = stream(77, Stream::Baseline);
    let hit = (0..10_000).any(|_| {
        let z = LatentVector::sample(&mut rng, 16);
        pipeline.fitness(&style, &z, largest).unwrap() > 0.9
    });
    assert!(hit);
}

#[test]
fn full_pipeline_is_bitwise_deterministic() {
    let run = || {
        let (pipeline, style, _) = fit(400, 3);
        let model = ModelFile {
            pipeline: spec(400),
            style: style.clone(),
        };
        let cfg = EvolutionConfig {
            pop_size: 20,
            generations: 10,
            immigrants: 4,
            seed: 9,
            ..EvolutionConfig::default()
        };
        let res = evolution::evolve(&cfg, |z| pipeline.fitness(&style, z, 0).unwrap()).unwrap();
        let trace: Vec<u64> = res
            .stats
            .iter()
            .flat_map(|s| [s.max_fitness.to_bits(), s.mean_fitness.to_bits()])
            .chain(res.best_latent.iter().map(|v| v.to_bits()))
            .collect();
        (model.to_text(), trace)
    };
    assert_eq!(run(), run());
}

#[test]
fn parallel_and_sequential_fitness_agree() {
    use rayon::prelude::*;
    let (pipeline, style, _) = fit(300, 3);
    let mut rng = stream(5, Stream::Init);
    let zs: Vec<LatentVector> = (0..200).map(|_| LatentVector::sample(&mut rng, 16)).collect();
    let seq: Vec<f64> = zs.iter().map(|z| pipeline.fitness(&style, z, 1).unwrap()).collect();
    let par: Vec<f64> = zs.par_iter().map(|z| pipeline.fitness(&style, z, 1).unwrap()).collect();
    assert_eq!(
        seq.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        par.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}
