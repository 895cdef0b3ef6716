use nalgebra::DMatrix;
use proptest::prelude::*;
use robustgen_core::nn::*;

fn svd_top(layer: &Layer) -> f64 {
    let m = materialize_linear_map(layer, DEFAULT_MATERIALIZE_CAP).unwrap();
    let mat = DMatrix::from_row_slice(m.shape()[0], m.shape()[1], m.data());
    mat.singular_values().max()
}

fn layer_from(spec: LayerSpec, values: &[f64]) -> Layer {
    let shape = spec.weight_shape();
    let n: usize = shape.iter().product();
    Layer::new(spec, Tensor::new(shape, values[..n].to_vec()).unwrap(), None).unwrap()
}

/// Sum over all input-to-output paths of the product of squared weights,
/// enumerated explicitly.
fn enumerate_paths(weights: &[(usize, usize, Vec<f64>)]) -> f64 {
    fn walk(weights: &[(usize, usize, Vec<f64>)], layer: usize, unit: usize, acc: f64) -> f64 {
        if layer == weights.len() {
            return acc;
        }
        let (fan_in, fan_out, w) = &weights[layer];
        (0..*fan_out)
            .map(|o| {
                let v = w[o * fan_in + unit];
                walk(weights, layer + 1, o, acc * v * v)
            })
            .sum()
    }
    let fan_in = weights[0].0;
    (0..fan_in).map(|i| walk(weights, 0, i, 1.0)).sum()
}

#[test]
fn squared_ones_example() {
    let net = Network::new(vec![
        Layer::dense(2, 1, vec![1.0, 2.0]).unwrap(),
        Layer::dense(1, 1, vec![3.0]).unwrap(),
    ])
    .unwrap();
    assert_eq!(net.forward_squared_ones(), vec![45.0]);
    assert_eq!(
        enumerate_paths(&[(2, 1, vec![1.0, 2.0]), (1, 1, vec![3.0])]),
        45.0
    );
}

#[test]
fn conv_parameter_count() {
    let spec = LayerSpec::conv2d(3, 8, 3, (4, 4), true);
    assert_eq!(spec.num_params(), 224);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dense_spectral_norm_matches_svd(
        rows in 1usize..7,
        cols in 1usize..7,
        values in prop::collection::vec(-2.0f64..2.0, 49),
    ) {
        let layer = layer_from(LayerSpec::dense(cols, rows, false), &values);
        let exact = svd_top(&layer);
        let est = spectral_norm(&layer).unwrap();
        prop_assert!((est - exact).abs() <= 1e-5 * exact.max(1e-12), "{est} vs {exact}");
    }

    #[test]
    fn conv_spectral_norm_matches_svd(
        c_in in 1usize..3,
        c_out in 1usize..3,
        k in prop::sample::select(vec![1usize, 3]),
        h in 1usize..5,
        w in 1usize..5,
        values in prop::collection::vec(-1.0f64..1.0, 36),
    ) {
        let layer = layer_from(LayerSpec::conv2d(c_in, c_out, k, (h, w), false), &values);
        let exact = svd_top(&layer);
        let est = spectral_norm(&layer).unwrap();
        prop_assert!((est - exact).abs() <= 1e-5 * exact.max(1e-12), "{est} vs {exact}");
    }

    #[test]
    fn path_norm_matches_enumeration(
        dims in prop::collection::vec(1usize..4, 2..5),
        values in prop::collection::vec(-2.0f64..2.0, 64),
    ) {
        let mut layers = Vec::new();
        let mut raw = Vec::new();
        let mut offset = 0;
        for pair in dims.windows(2) {
            let n = pair[0] * pair[1];
            let w = values[offset..offset + n].to_vec();
            offset += n;
            layers.push(Layer::dense(pair[0], pair[1], w.clone()).unwrap());
            raw.push((pair[0], pair[1], w));
        }
        let net = Network::new(layers).unwrap();
        let got: f64 = net.forward_squared_ones().iter().sum();
        let want = enumerate_paths(&raw);
        prop_assert!((got - want).abs() <= 1e-10 * want.max(1.0));
    }

    #[test]
    fn frobenius_scales_quadratically(
        values in prop::collection::vec(-3.0f64..3.0, 1..20),
        alpha in -4.0f64..4.0,
    ) {
        let t = Tensor::vector(values);
        let scaled = frobenius_norm_sq(&t.scaled(alpha));
        prop_assert!((scaled - alpha * alpha * frobenius_norm_sq(&t)).abs() <= 1e-10 * scaled.max(1.0));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact(seed in any::<u64>(), width in 1usize..6) {
        let specs = [LayerSpec::dense(3, width, true), LayerSpec::dense(width, 2, false)];
        let net = Network::he_init(&specs, seed).unwrap().perturb(0.1, PerturbMode::Isotropic, 0.0, seed);
        let ck = Checkpoint { meta: CheckpointMeta { config_id: "c".into(), seed }, network: net };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        prop_assert_eq!(back, ck);
    }
}
